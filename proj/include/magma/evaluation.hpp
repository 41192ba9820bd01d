#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "magma/model.hpp"
#include "magma/tokenizer.hpp"

namespace magma {

struct QAExample {
  std::string id;
  std::string image;
  std::string question;
  std::vector<std::string> answers;
};

struct CaptionExample {
  std::string id;
  std::string image;
  std::vector<std::string> references;
};

struct FewShotSpec {
  std::size_t n_shots = 0;
  std::uint64_t seed = 0;
};

/// "Q: {q}\nA: {a}\n"
std::string render_shot(std::string_view question, std::string_view answer);
/// "Q: {q}\nA:"
std::string render_query(std::string_view question);

/// A prompt before embedding: image references interleaved with text.
struct PromptPlan {
  struct Part {
    bool is_image = false;
    std::string content;  // image path or literal text
  };
  std::vector<Part> parts;
  std::size_t dropped_shots = 0;

  std::size_t image_count() const;
  /// Text-only view used for golden files: one "<image:path>" line per image,
  /// text verbatim.
  std::string render_layout() const;
};

/// [shot image][shot text]... [query image]["Q: {q}\nA:"], each shot answered
/// with its modal ground truth.
PromptPlan assemble_prompt(std::span<const QAExample> shots, const QAExample& query);

/// [image] followed by the prompt prefix text when it is non-empty.
PromptPlan caption_prompt(const CaptionExample& example, std::string_view prompt_prefix);

/// n distinct indices into a pool of `pool_size`, never `exclude`. Fewer are
/// returned when the pool is too small.
std::vector<std::size_t> draw_shots(std::size_t pool_size, std::size_t n, std::optional<std::size_t> exclude,
                                    std::mt19937_64& rng);

/// Prompt-to-text backend. `length` gives the number of transformer positions
/// a plan occupies; `generate` returns the decoded continuation.
struct Generator {
  std::function<std::size_t(const PromptPlan&)> length;
  std::function<std::string(const PromptPlan&, std::size_t max_new)> generate;
  std::size_t context = 0;
};

/// Drops the oldest shots (image plus its text) until the plan and `max_new`
/// generated tokens fit the context. Throws DataError if the query alone
/// does not fit.
PromptPlan fit_to_context(PromptPlan plan, const Generator& gen, std::size_t max_new);

struct VqaRecord {
  std::string id, question, raw_output, normalized, truncated;
  double score = 0.0;
  bool fallback = false;
};

struct VqaReport {
  double accuracy = 0.0;
  std::vector<VqaRecord> items;
  std::size_t failures = 0;
  std::size_t truncated_prompts = 0;
};

inline constexpr std::size_t kQaMaxNewTokens = 16;
inline constexpr std::size_t kCaptionMaxNewTokens = 64;

/// Few-shot open-ended VQA. Shots come from `pool`; an item sharing the
/// query's id is never its own shot. Items whose generation raises a
/// DataError are skipped and counted. Records go to `records` as JSON lines.
VqaReport evaluate_vqa(std::span<const QAExample> dataset, std::span<const QAExample> pool, const FewShotSpec& shots,
                       const Generator& gen, std::ostream* records = nullptr);

struct CaptionRecord {
  std::string id, output;
  std::vector<std::string> references;
};

struct CaptionReport {
  double bleu = 0.0;
  std::vector<CaptionRecord> items;
  std::size_t failures = 0;
};

CaptionReport evaluate_captions(std::span<const CaptionExample> dataset, std::string_view prompt_prefix,
                                const Generator& gen, std::ostream* records = nullptr);

/// Text up to the first newline, surrounding whitespace removed.
std::string first_line(std::string_view text);

template <typename T>
using ImageLoader = std::function<VisualInput<T>(const std::string&)>;

/// Greedy decoding with the model; generation stops at a newline. When the
/// LM uses BOS, a BOS token follows every image prefix.
template <typename T>
Generator model_generator(const MultimodalModel<T>& model, const Tokenizer& tokenizer, ImageLoader<T> loader);

}  // namespace magma
