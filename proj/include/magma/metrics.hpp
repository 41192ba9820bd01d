#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace magma {

/// VQA answer normalization. The rule list, applied in order:
///  1. ASCII lowercase.
///  2. A comma between two digits is removed ("1,000" → "1000").
///  3. A period between two digits is kept; any other period becomes a space.
///  4. An apostrophe between two letters is kept; any other becomes a space.
///  5. Every other ASCII punctuation character becomes a space.
///  6. Split on whitespace, drop the articles a/an/the, map zero..ten to
///     0..10, join with single spaces.
/// The function is idempotent.
std::string normalize_answer(std::string_view text);

/// Whitespace-separated words of `text`.
std::vector<std::string> split_words(std::string_view text);

/// Keeps at most K words of the output, K being the largest word count among
/// the (already normalized) ground truths.
std::string truncate_answer(std::string_view output, std::span<const std::string> ground_truths);

struct VqaScore {
  double score = 0.0;
  bool fallback = false;  // ground-truth count was not 10
};

/// Consensus accuracy: mean over the 10 leave-one-out annotator subsets of
/// min(matches / 3, 1). With a count other than 10 the score is
/// min(matches / 3, 1) and `fallback` is set.
VqaScore vqa_accuracy(std::string_view answer, std::span<const std::string> ground_truths);

/// Most frequent string; ties go to the lexicographically smallest.
std::string modal_answer(std::span<const std::string> answers);

/// Corpus BLEU-4: clipped n-gram precisions for n = 1..4, uniform weights,
/// closest reference length (shorter on ties) for the brevity penalty, no
/// smoothing. Text is lowercased and split on whitespace.
double bleu4(std::span<const std::string> candidates, std::span<const std::vector<std::string>> references);

}  // namespace magma
