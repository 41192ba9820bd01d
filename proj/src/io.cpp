#include "magma/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>
#include <zlib.h>

namespace magma {

static_assert(std::endian::native == std::endian::little, "MGT1 payloads are written in host order");

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

std::uint32_t get_u32(std::string_view s, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(s[at + i])) << (8 * i);
  return v;
}

std::size_t dtype_size(DType d) { return d == DType::f32 ? 4 : 8; }

}  // namespace

std::string_view dtype_name(DType d) { return d == DType::f32 ? "f32" : "f64"; }

DType parse_dtype(std::string_view name) {
  if (name == "f32") return DType::f32;
  if (name == "f64") return DType::f64;
  throw DataError(fmt::format("unknown dtype '{}'", name));
}

std::uint32_t crc32_of(std::span<const char> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  const auto* p = reinterpret_cast<const Bytef*>(bytes.data());
  std::size_t left = bytes.size();
  while (left > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(left, 1u << 30));
    crc = crc32(crc, p, chunk);
    p += chunk;
    left -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

template <typename T>
std::string tensor_payload(const Tensor<T>& t) {
  auto d = t.data();
  return std::string(reinterpret_cast<const char*>(d.data()), d.size() * sizeof(T));
}

template <typename T>
std::string encode_mgt(const Tensor<T>& t) {
  std::string out = "MGT1";
  put_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (auto e : t.shape()) put_u32(out, static_cast<std::uint32_t>(e));
  out.push_back(static_cast<char>(dtype_of<T>()));
  out += tensor_payload(t);
  return out;
}

MgtBlob decode_mgt(std::string_view bytes, std::string_view what) {
  if (bytes.size() < 8 || bytes.substr(0, 4) != "MGT1") throw DataError(fmt::format("{}: not an MGT1 tensor", what));
  const std::uint32_t rank = get_u32(bytes, 4);
  if (rank == 0 || rank > 8) throw DataError(fmt::format("{}: implausible rank {}", what, rank));
  const std::size_t header = 8 + 4 * static_cast<std::size_t>(rank) + 1;
  if (bytes.size() < header) throw DataError(fmt::format("{}: truncated header", what));
  MgtBlob blob;
  std::size_t numel = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    const auto e = get_u32(bytes, 8 + 4 * i);
    if (e == 0) throw DataError(fmt::format("{}: zero extent in dimension {}", what, i));
    blob.shape.push_back(e);
    numel *= e;
  }
  const auto code = static_cast<unsigned char>(bytes[header - 1]);
  if (code > 1) throw DataError(fmt::format("{}: unknown dtype code {}", what, code));
  blob.dtype = static_cast<DType>(code);
  const std::size_t expected = numel * dtype_size(blob.dtype);
  if (bytes.size() - header != expected)
    throw DataError(fmt::format("{}: payload is {} bytes, expected {}", what, bytes.size() - header, expected));
  blob.payload = std::string(bytes.substr(header));
  return blob;
}

template <typename T>
Tensor<T> blob_to_tensor(const MgtBlob& blob) {
  const std::size_t n = shape_numel(blob.shape);
  std::vector<T> values(n);
  if (blob.dtype == DType::f32) {
    std::vector<float> raw(n);
    std::memcpy(raw.data(), blob.payload.data(), n * sizeof(float));
    for (std::size_t i = 0; i < n; ++i) values[i] = static_cast<T>(raw[i]);
  } else {
    std::vector<double> raw(n);
    std::memcpy(raw.data(), blob.payload.data(), n * sizeof(double));
    for (std::size_t i = 0; i < n; ++i) values[i] = static_cast<T>(raw[i]);
  }
  return Tensor<T>(blob.shape, std::move(values));
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(fmt::format("cannot open {}", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const fs::path& path, std::string_view bytes) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError(fmt::format("cannot write {}", tmp.string()));
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError(fmt::format("short write to {}", tmp.string()));
  }
  fs::rename(tmp, path);
}

template <typename T>
void write_mgt(const fs::path& path, const Tensor<T>& t) {
  write_file_atomic(path, encode_mgt(t));
}

template <typename T>
Tensor<T> read_mgt(const fs::path& path) {
  return blob_to_tensor<T>(decode_mgt(read_file(path), path.string()));
}

Image decode_ppm(std::string_view bytes, std::string_view what) {
  if (bytes.size() < 2 || bytes.substr(0, 2) != "P6") throw DataError(fmt::format("{}: unsupported format", what));
  std::size_t pos = 2;
  auto next_field = [&]() -> std::size_t {
    while (pos < bytes.size()) {
      const char c = bytes[pos];
      if (c == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos;
      } else {
        break;
      }
    }
    std::size_t value = 0, digits = 0;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
      value = value * 10 + static_cast<std::size_t>(bytes[pos] - '0');
      ++pos;
      if (++digits > 9) throw DataError(fmt::format("{}: header value too large", what));
    }
    if (digits == 0) throw DataError(fmt::format("{}: malformed header", what));
    return value;
  };
  const std::size_t width = next_field();
  const std::size_t height = next_field();
  const std::size_t maxval = next_field();
  if (maxval != 255) throw DataError(fmt::format("{}: unsupported maxval {}", what, maxval));
  if (width == 0 || height == 0) throw DataError(fmt::format("{}: empty image", what));
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos])))
    throw DataError(fmt::format("{}: malformed header", what));
  ++pos;
  const std::size_t need = width * height * 3;
  if (bytes.size() - pos < need)
    throw DataError(fmt::format("{}: truncated payload ({} of {} bytes)", what, bytes.size() - pos, need));
  Image img{height, width, std::vector<std::uint8_t>(need)};
  std::memcpy(img.rgb.data(), bytes.data() + pos, need);
  return img;
}

Image read_ppm(const fs::path& path) { return decode_ppm(read_file(path), path.string()); }

std::string encode_ppm(const Image& image) {
  if (image.rgb.size() != image.height * image.width * 3) throw DataError("image buffer does not match its dimensions");
  std::string out = fmt::format("P6\n{} {}\n255\n", image.width, image.height);
  out.append(reinterpret_cast<const char*>(image.rgb.data()), image.rgb.size());
  return out;
}

void write_ppm(const fs::path& path, const Image& image) { write_file_atomic(path, encode_ppm(image)); }

template <typename T>
Tensor<T> read_image(const fs::path& path) {
  return image_to_tensor<T>(read_ppm(path));
}

std::string_view manifest_kind_name(ManifestKind k) {
  switch (k) {
    case ManifestKind::caption: return "caption";
    case ManifestKind::qa: return "qa";
    case ManifestKind::entailment: return "entailment";
  }
  return "?";
}

namespace {

ManifestKind infer_kind(const nlohmann::json& j) {
  if (j.contains("caption")) return ManifestKind::caption;
  if (j.contains("question")) return ManifestKind::qa;
  if (j.contains("hypothesis")) return ManifestKind::entailment;
  throw DataError("record has none of caption/question/hypothesis");
}

std::string get_string(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || !j[key].is_string()) throw DataError(fmt::format("field '{}' must be a string", key));
  return j[key].get<std::string>();
}

}  // namespace

std::vector<ManifestRecord> load_manifest(const fs::path& path, ManifestKind kind) {
  std::ifstream in(path);
  if (!in) throw DataError(fmt::format("cannot open manifest {}", path.string()));
  const fs::path base = path.parent_path();
  std::vector<ManifestRecord> out;
  std::string text;
  for (std::size_t line = 1; std::getline(in, text); ++line) {
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(text);
      if (!j.is_object()) throw DataError("not a JSON object");
      const auto found = infer_kind(j);
      if (found != kind)
        throw DataError(fmt::format("{} record in a {} manifest", manifest_kind_name(found), manifest_kind_name(kind)));
      ManifestRecord r;
      r.line = line;
      r.id = j.contains("id") ? (j["id"].is_string() ? j["id"].get<std::string>() : j["id"].dump())
                              : fmt::format("{}", line);
      fs::path image = get_string(j, "image");
      r.image = image.is_absolute() ? image : base / image;
      if (!fs::exists(r.image)) throw DataError(fmt::format("image {} does not exist", r.image.string()));
      switch (kind) {
        case ManifestKind::caption:
          r.caption = get_string(j, "caption");
          break;
        case ManifestKind::qa:
          r.question = get_string(j, "question");
          if (!j.contains("answers") || !j["answers"].is_array() || j["answers"].empty())
            throw DataError("field 'answers' must be a non-empty array");
          for (const auto& a : j["answers"]) {
            if (!a.is_string()) throw DataError("answers must be strings");
            r.answers.push_back(a.get<std::string>());
          }
          break;
        case ManifestKind::entailment:
          r.hypothesis = get_string(j, "hypothesis");
          if (!j.contains("label") || !j["label"].is_number_integer()) throw DataError("field 'label' must be 0, 1 or 2");
          r.label = j["label"].get<int>();
          if (r.label < 0 || r.label > 2) throw DataError(fmt::format("label {} is not 0, 1 or 2", r.label));
          break;
      }
      out.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(fmt::format("{} line {}: malformed JSON ({})", path.string(), line, e.what()));
    } catch (const DataError& e) {
      throw DataError(fmt::format("{} line {}: {}", path.string(), line, e.what()));
    }
  }
  return out;
}

std::string manifest_line(const ManifestRecord& r, ManifestKind kind) {
  nlohmann::ordered_json j;
  j["id"] = r.id;
  j["image"] = r.image.generic_string();
  switch (kind) {
    case ManifestKind::caption: j["caption"] = r.caption; break;
    case ManifestKind::qa:
      j["question"] = r.question;
      j["answers"] = r.answers;
      break;
    case ManifestKind::entailment:
      j["hypothesis"] = r.hypothesis;
      j["label"] = r.label;
      break;
  }
  return j.dump();
}

#define MAGMA_INSTANTIATE_IO(T)                                \
  template std::string tensor_payload(const Tensor<T>&);      \
  template std::string encode_mgt(const Tensor<T>&);          \
  template Tensor<T> blob_to_tensor<T>(const MgtBlob&);       \
  template void write_mgt(const fs::path&, const Tensor<T>&); \
  template Tensor<T> read_mgt<T>(const fs::path&);            \
  template Tensor<T> read_image<T>(const fs::path&);

MAGMA_INSTANTIATE_IO(float)
MAGMA_INSTANTIATE_IO(double)

}  // namespace magma
