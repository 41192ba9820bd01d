#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "magma/model.hpp"
#include "magma/training.hpp"

namespace magma {

/// Everything a CLI run needs. Text form: one "key = value" per line, '#'
/// starts a comment, unknown keys are rejected.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  std::string caption_prefix = "A picture of";
  std::size_t pretrain_steps = 2000;
  double pretrain_lr = 1e-3;
  std::string vocab_file;  // empty: byte-level tokenizer

  static RunConfig parse(std::string_view text);
  static RunConfig load(const std::filesystem::path& path);
  /// Canonical form: every key, fixed order, shortest round-trip numbers.
  std::string render() const;
  bool operator==(const RunConfig&) const = default;
};

/// Throws DataError naming the first model field whose value differs, e.g.
/// "d_model: checkpoint has 128, config has 64". With lm_only, only the
/// language-model fields are compared.
void check_model_compatible(const ModelConfig& stored, const ModelConfig& requested, bool lm_only = false);

}  // namespace magma
