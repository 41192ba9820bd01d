#include "magma/checkpoint.hpp"

#include <algorithm>
#include <set>

#include <fmt/format.h>
#include <json.hpp>

namespace magma {

namespace {

constexpr std::string_view kFormat = "magma-checkpoint-1";

std::string tensor_file(const std::string& name) { return name + ".mgt"; }

}  // namespace

bool is_frozen_name(std::string_view name) { return name.substr(0, 3) == "lm."; }

const TensorEntry* CheckpointManifest::find(std::string_view name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

template <typename T>
void write_checkpoint(const ParameterStore<T>& store, const RunConfig& config, const fs::path& dir) {
  fs::path target = fs::absolute(dir);
  if (target.filename().empty()) target = target.parent_path();
  const fs::path tmp = target.string() + ".tmp";
  fs::remove_all(tmp);
  fs::create_directories(tmp);

  nlohmann::ordered_json manifest;
  manifest["format"] = kFormat;
  manifest["config"] = config.render();
  auto entries = nlohmann::ordered_json::array();
  for (const auto& [name, tensor] : store) {
    const auto file = tensor_file(name);
    write_file_atomic(tmp / file, encode_mgt(tensor));
    entries.push_back({{"name", name},
                       {"shape", tensor.shape()},
                       {"dtype", dtype_name(dtype_of<T>())},
                       {"crc32", tensor_crc(tensor)},
                       {"file", file}});
  }
  manifest["tensors"] = entries;
  write_file_atomic(tmp / "manifest.json", manifest.dump(2) + "\n");

  fs::remove_all(target);
  fs::rename(tmp, target);
}

CheckpointManifest read_checkpoint_manifest(const fs::path& dir) {
  const auto path = dir / "manifest.json";
  if (!fs::exists(path)) throw DataError(fmt::format("{} is not a checkpoint (no manifest.json)", dir.string()));
  CheckpointManifest out;
  try {
    const auto j = nlohmann::json::parse(read_file(path));
    if (j.at("format").get<std::string>() != kFormat)
      throw DataError(fmt::format("{}: unknown checkpoint format", path.string()));
    try {
      out.config = RunConfig::parse(j.at("config").get<std::string>());
    } catch (const UsageError& e) {
      throw DataError(fmt::format("{}: stored config is invalid: {}", path.string(), e.what()));
    }
    for (const auto& t : j.at("tensors")) {
      TensorEntry e;
      e.name = t.at("name").get<std::string>();
      e.shape = t.at("shape").get<Shape>();
      e.dtype = parse_dtype(t.at("dtype").get<std::string>());
      e.crc = t.at("crc32").get<std::uint32_t>();
      e.file = t.at("file").get<std::string>();
      if (e.file.find('/') != std::string::npos || e.file.find("..") != std::string::npos)
        throw DataError(fmt::format("tensor '{}': file name '{}' escapes the checkpoint", e.name, e.file));
      out.tensors.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(fmt::format("{}: malformed manifest ({})", path.string(), e.what()));
  }
  std::sort(out.tensors.begin(), out.tensors.end(), [](auto& a, auto& b) { return a.name < b.name; });
  return out;
}

template <typename T>
void load_checkpoint(ParameterStore<T>& store, const fs::path& dir, bool allow_missing,
                     const std::function<bool(std::string_view)>& select) {
  auto manifest = read_checkpoint_manifest(dir);
  if (select) std::erase_if(manifest.tensors, [&](const TensorEntry& e) { return !select(e.name); });
  for (const auto& e : manifest.tensors)
    if (!store.contains(e.name)) throw DataError(fmt::format("checkpoint tensor '{}' has no counterpart in the model", e.name));
  if (!allow_missing)
    for (const auto& name : store.names())
      if (!manifest.find(name)) throw DataError(fmt::format("tensor '{}' missing from checkpoint {}", name, dir.string()));

  for (const auto& e : manifest.tensors) {
    auto& target = store.get(e.name);
    const auto bytes = read_file(dir / e.file);
    const auto blob = decode_mgt(bytes, fmt::format("tensor '{}'", e.name));
    if (crc32_of(blob.payload) != e.crc) throw DataError(fmt::format("tensor '{}': CRC32 mismatch", e.name));
    if (blob.shape != e.shape) throw DataError(fmt::format("tensor '{}': blob shape disagrees with manifest", e.name));
    if (blob.shape != target.shape())
      throw DataError(fmt::format("tensor '{}': checkpoint shape {} but model expects {}", e.name, shape_str(blob.shape),
                                  shape_str(target.shape())));
    const auto loaded = blob_to_tensor<T>(blob);
    std::copy(loaded.data().begin(), loaded.data().end(), target.mutable_data().begin());
  }
}

template <typename T>
std::unique_ptr<MultimodalModel<T>> read_checkpoint(const fs::path& dir) {
  const auto manifest = read_checkpoint_manifest(dir);
  auto model = std::make_unique<MultimodalModel<T>>(manifest.config.model, manifest.config.train.seed);
  if (const auto* cls = manifest.find("cls.weight")) model->add_classifier(cls->shape.at(0));
  load_checkpoint(model->parameters(), dir, false);
  return model;
}

FrozenReport verify_frozen(const fs::path& base_dir, const fs::path& after_dir) {
  const auto base = read_checkpoint_manifest(base_dir);
  const auto after = read_checkpoint_manifest(after_dir);
  std::set<std::string> base_names, after_names;
  for (const auto& t : base.tensors)
    if (is_frozen_name(t.name)) base_names.insert(t.name);
  for (const auto& t : after.tensors)
    if (is_frozen_name(t.name)) after_names.insert(t.name);
  if (base_names != after_names) {
    std::vector<std::string> diff;
    std::set_symmetric_difference(base_names.begin(), base_names.end(), after_names.begin(), after_names.end(),
                                  std::back_inserter(diff));
    throw DataError(fmt::format("frozen tensor sets differ (first: '{}')", diff.front()));
  }
  FrozenReport report;
  for (const auto& name : base_names) {
    const auto* a = base.find(name);
    const auto* b = after.find(name);
    ++report.compared;
    if (a->crc != b->crc || a->shape != b->shape || a->dtype != b->dtype) report.changed.push_back(name);
  }
  report.pass = report.changed.empty();
  return report;
}

std::string frozen_crc_listing(const CheckpointManifest& manifest) {
  std::string out;
  for (const auto& t : manifest.tensors)
    if (is_frozen_name(t.name)) out += fmt::format("{} {:08x}\n", t.name, t.crc);
  return out;
}

#define MAGMA_INSTANTIATE_CHECKPOINT(T)                                                          \
  template void write_checkpoint(const ParameterStore<T>&, const RunConfig&, const fs::path&);  \
  template void load_checkpoint(ParameterStore<T>&, const fs::path&, bool,                        \
                               const std::function<bool(std::string_view)>&);                    \
  template std::unique_ptr<MultimodalModel<T>> read_checkpoint<T>(const fs::path&);

MAGMA_INSTANTIATE_CHECKPOINT(float)
MAGMA_INSTANTIATE_CHECKPOINT(double)

}  // namespace magma
