#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "magma/io.hpp"
#include "magma/vision.hpp"

namespace magma {

// Toy image-text data: one colored shape on a dark background.

inline constexpr std::array<std::string_view, 8> kColorNames{"red",   "green",  "blue",   "yellow",
                                                             "white", "purple", "orange", "cyan"};
inline constexpr std::array<std::string_view, 4> kShapeNames{"circle", "square", "triangle", "cross"};

struct ShapeScene {
  std::size_t color = 0;
  std::size_t shape = 0;
  double cx = 0.5, cy = 0.5;  // center, fraction of the side
  double radius = 0.3;        // fraction of the side
};

Image render_scene(const ShapeScene& scene, std::size_t size = 64);

/// "a red circle on a dark background"
std::string scene_caption(const ShapeScene& scene);

/// `count` scenes cycling through all color × shape pairs in a seeded order,
/// with jittered position and size.
std::vector<ShapeScene> make_scenes(std::size_t count, std::uint64_t seed);

/// Entailment label of a scene: determined by its color alone.
int scene_label(const ShapeScene& scene);

/// A hypothesis sentence unrelated to the image content.
std::string random_hypothesis(std::mt19937_64& rng);

/// Writes images/NNNN.ppm and a manifest of the given kind under `dir`;
/// returns the manifest path.
fs::path write_synthetic_dataset(const fs::path& dir, ManifestKind kind, std::size_t count, std::uint64_t seed,
                                 std::size_t image_size = 64);

}  // namespace magma
