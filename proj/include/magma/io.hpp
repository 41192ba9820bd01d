#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "magma/tensor.hpp"
#include "magma/vision.hpp"

namespace magma {

namespace fs = std::filesystem;

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

template <typename T>
constexpr DType dtype_of();
template <>
constexpr DType dtype_of<float>() { return DType::f32; }
template <>
constexpr DType dtype_of<double>() { return DType::f64; }

std::string_view dtype_name(DType d);
DType parse_dtype(std::string_view name);

std::uint32_t crc32_of(std::span<const char> bytes);

/// Raw little-endian scalars of a tensor: the region every CRC covers.
template <typename T>
std::string tensor_payload(const Tensor<T>& t);

template <typename T>
std::uint32_t tensor_crc(const Tensor<T>& t) {
  const auto p = tensor_payload(t);
  return crc32_of(p);
}

/// MGT1 blob: "MGT1", u32 rank, rank × u32 extents, u8 dtype, raw scalars.
template <typename T>
std::string encode_mgt(const Tensor<T>& t);

struct MgtBlob {
  Shape shape;
  DType dtype = DType::f32;
  std::string payload;
};

/// `what` names the source in error messages.
MgtBlob decode_mgt(std::string_view bytes, std::string_view what);

/// Converts between f32 and f64 payloads as needed.
template <typename T>
Tensor<T> blob_to_tensor(const MgtBlob& blob);

template <typename T>
void write_mgt(const fs::path& path, const Tensor<T>& t);
template <typename T>
Tensor<T> read_mgt(const fs::path& path);

std::string read_file(const fs::path& path);
/// Writes to a sibling temporary file and renames it into place.
void write_file_atomic(const fs::path& path, std::string_view bytes);

/// Binary PPM (P6, maxval 255).
Image read_ppm(const fs::path& path);
Image decode_ppm(std::string_view bytes, std::string_view what);
std::string encode_ppm(const Image& image);
void write_ppm(const fs::path& path, const Image& image);

/// Decoded H×W×3 image scaled to [0,1].
template <typename T>
Tensor<T> read_image(const fs::path& path);

enum class ManifestKind { caption, qa, entailment };
std::string_view manifest_kind_name(ManifestKind k);

struct ManifestRecord {
  std::string id;
  fs::path image;  // resolved against the manifest's directory
  std::string caption;
  std::string question;
  std::vector<std::string> answers;
  std::string hypothesis;
  int label = 0;
  std::size_t line = 0;
};

/// JSON-lines dataset manifest. Blank lines are skipped; errors name the
/// offending line. Every referenced image must exist.
std::vector<ManifestRecord> load_manifest(const fs::path& path, ManifestKind kind);

/// One JSON line for a record of the given kind (image path written as given).
std::string manifest_line(const ManifestRecord& r, ManifestKind kind);

}  // namespace magma
