#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "magma/config.hpp"
#include "magma/io.hpp"
#include "magma/model.hpp"

namespace magma {

struct TensorEntry {
  std::string name;
  Shape shape;
  DType dtype = DType::f32;
  std::uint32_t crc = 0;
  std::string file;
  bool operator==(const TensorEntry&) const = default;
};

/// A checkpoint is a directory holding manifest.json (format tag, canonical
/// run config, per-tensor name/shape/dtype/CRC32/file) and one MGT1 file per
/// tensor.
struct CheckpointManifest {
  RunConfig config;
  std::vector<TensorEntry> tensors;  // sorted by name

  const TensorEntry* find(std::string_view name) const;
};

/// Writes into a temporary sibling directory and renames it over `dir`.
template <typename T>
void write_checkpoint(const ParameterStore<T>& store, const RunConfig& config, const fs::path& dir);

CheckpointManifest read_checkpoint_manifest(const fs::path& dir);

/// Copies every checkpoint tensor into the store after checking its CRC and
/// shape. With allow_missing, store tensors absent from the checkpoint keep
/// their values; otherwise the name sets must match exactly.
/// `select`, when given, restricts loading to the checkpoint tensors it accepts.
template <typename T>
void load_checkpoint(ParameterStore<T>& store, const fs::path& dir, bool allow_missing = false,
                     const std::function<bool(std::string_view)>& select = {});

/// Rebuilds a model from the stored config and loads every tensor (adding the
/// classifier head when the checkpoint has one).
template <typename T>
std::unique_ptr<MultimodalModel<T>> read_checkpoint(const fs::path& dir);

struct FrozenReport {
  bool pass = true;
  std::size_t compared = 0;
  std::vector<std::string> changed;
};

/// Compares the CRCs of every frozen ("lm.*") tensor. The frozen name sets of
/// both checkpoints must match.
FrozenReport verify_frozen(const fs::path& base_dir, const fs::path& after_dir);

/// "name crc32-hex" per frozen tensor, for the training output directory.
std::string frozen_crc_listing(const CheckpointManifest& manifest);

bool is_frozen_name(std::string_view name);

}  // namespace magma
