#include "magma/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <fmt/format.h>

namespace magma {

namespace {

constexpr std::array<std::array<std::uint8_t, 3>, 8> kColors{{{220, 30, 30},
                                                              {30, 200, 40},
                                                              {40, 60, 230},
                                                              {235, 225, 40},
                                                              {245, 245, 245},
                                                              {150, 40, 190},
                                                              {250, 140, 20},
                                                              {30, 220, 220}}};
constexpr std::uint8_t kBackground = 40;

bool inside(const ShapeScene& s, double x, double y) {
  const double dx = x - s.cx, dy = y - s.cy, r = s.radius;
  switch (s.shape) {
    case 0: return dx * dx + dy * dy <= r * r;
    case 1: return std::abs(dx) <= r * 0.85 && std::abs(dy) <= r * 0.85;
    case 2: {
      // Upward triangle with apex at cy − r and base at cy + r.
      if (dy < -r || dy > r) return false;
      const double half = (dy + r) / 2.0;
      return std::abs(dx) <= half;
    }
    default: return (std::abs(dx) <= r * 0.3 && std::abs(dy) <= r) || (std::abs(dy) <= r * 0.3 && std::abs(dx) <= r);
  }
}

constexpr std::array<std::string_view, 12> kHypothesisWords{"someone", "is",    "near",   "the",    "object",  "there",
                                                            "might",   "be",    "a",      "thing",  "here",    "today"};

}  // namespace

Image render_scene(const ShapeScene& scene, std::size_t size) {
  if (scene.color >= kColors.size() || scene.shape >= kShapeNames.size()) throw UsageError("scene out of range");
  Image img{size, size, std::vector<std::uint8_t>(size * size * 3, kBackground)};
  const auto& rgb = kColors[scene.color];
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const double fx = (static_cast<double>(x) + 0.5) / static_cast<double>(size);
      const double fy = (static_cast<double>(y) + 0.5) / static_cast<double>(size);
      if (!inside(scene, fx, fy)) continue;
      for (std::size_t c = 0; c < 3; ++c) img.rgb[(y * size + x) * 3 + c] = rgb[c];
    }
  }
  return img;
}

std::string scene_caption(const ShapeScene& scene) {
  return fmt::format("a {} {} on a dark background", kColorNames.at(scene.color), kShapeNames.at(scene.shape));
}

std::vector<ShapeScene> make_scenes(std::size_t count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t c = 0; c < kColorNames.size(); ++c)
    for (std::size_t s = 0; s < kShapeNames.size(); ++s) pairs.emplace_back(c, s);
  std::uniform_real_distribution<double> jitter(-0.08, 0.08), radius(0.22, 0.3);
  std::vector<ShapeScene> out;
  while (out.size() < count) {
    std::shuffle(pairs.begin(), pairs.end(), rng);
    for (const auto& [c, s] : pairs) {
      if (out.size() == count) break;
      out.push_back({c, s, 0.5 + jitter(rng), 0.5 + jitter(rng), radius(rng)});
    }
  }
  return out;
}

int scene_label(const ShapeScene& scene) { return static_cast<int>(scene.color % 3); }

std::string random_hypothesis(std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> len(3, 6), word(0, kHypothesisWords.size() - 1);
  std::string out;
  const auto n = len(rng);
  for (std::size_t i = 0; i < n; ++i) out += fmt::format("{}{}", i ? " " : "", kHypothesisWords[word(rng)]);
  return out;
}

fs::path write_synthetic_dataset(const fs::path& dir, ManifestKind kind, std::size_t count, std::uint64_t seed,
                                 std::size_t image_size) {
  fs::create_directories(dir / "images");
  const auto scenes = make_scenes(count, seed);
  std::mt19937_64 rng(seed ^ 0x5eedULL);
  std::string manifest;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const auto& sc = scenes[i];
    const auto rel = fmt::format("images/{:04}.ppm", i);
    write_ppm(dir / rel, render_scene(sc, image_size));
    ManifestRecord r;
    r.id = fmt::format("{:04}", i);
    r.image = rel;
    switch (kind) {
      case ManifestKind::caption:
        r.caption = scene_caption(sc);
        break;
      case ManifestKind::qa: {
        const bool ask_color = i % 2 == 0;
        r.question = ask_color ? "what color is the shape?" : "what shape is shown?";
        const std::string truth(ask_color ? kColorNames[sc.color] : kShapeNames[sc.shape]);
        // Annotators mostly agree; a couple give a variant phrasing.
        for (int k = 0; k < 8; ++k) r.answers.push_back(truth);
        r.answers.push_back("the " + truth);
        r.answers.push_back(ask_color ? "bright " + truth : truth + " shape");
        break;
      }
      case ManifestKind::entailment:
        r.hypothesis = random_hypothesis(rng);
        r.label = scene_label(sc);
        break;
    }
    manifest += manifest_line(r, kind) + "\n";
  }
  const auto path = dir / fmt::format("{}.jsonl", manifest_kind_name(kind));
  write_file_atomic(path, manifest);
  return path;
}

}  // namespace magma
