#include "magma/metrics.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <map>
#include <sstream>

#include <fmt/format.h>

#include "magma/tensor.hpp"

namespace magma {

namespace {

bool is_digit(char c) { return c >= '0' && c <= '9'; }
bool is_alpha(char c) { return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z'); }

const std::map<std::string, std::string, std::less<>> kNumberWords = {
    {"zero", "0"}, {"one", "1"}, {"two", "2"},   {"three", "3"}, {"four", "4"}, {"five", "5"},
    {"six", "6"},  {"seven", "7"}, {"eight", "8"}, {"nine", "9"},  {"ten", "10"}};

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

using Ngram = std::vector<std::string>;

std::map<Ngram, int> ngram_counts(const std::vector<std::string>& words, std::size_t n) {
  std::map<Ngram, int> counts;
  for (std::size_t i = 0; i + n <= words.size(); ++i) ++counts[Ngram(words.begin() + i, words.begin() + i + n)];
  return counts;
}

}  // namespace

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::istringstream in{std::string(text)};
  for (std::string w; in >> w;) words.push_back(w);
  return words;
}

std::string normalize_answer(std::string_view text) {
  const std::string s = lower(text);
  std::string cleaned;
  cleaned.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    const char c = s[i];
    const char prev = i > 0 ? s[i - 1] : ' ';
    const char next = i + 1 < s.size() ? s[i + 1] : ' ';
    if (c == ',' && is_digit(prev) && is_digit(next)) continue;
    if (c == '.') {
      cleaned.push_back(is_digit(prev) && is_digit(next) ? '.' : ' ');
    } else if (c == '\'') {
      cleaned.push_back(is_alpha(prev) && is_alpha(next) ? '\'' : ' ');
    } else if (std::ispunct(static_cast<unsigned char>(c))) {
      cleaned.push_back(' ');
    } else {
      cleaned.push_back(c);
    }
  }
  std::string out;
  for (auto& w : split_words(cleaned)) {
    if (w == "a" || w == "an" || w == "the") continue;
    if (auto it = kNumberWords.find(w); it != kNumberWords.end()) w = it->second;
    if (!out.empty()) out.push_back(' ');
    out += w;
  }
  return out;
}

std::string truncate_answer(std::string_view output, std::span<const std::string> ground_truths) {
  std::size_t k = 0;
  for (const auto& gt : ground_truths) k = std::max(k, split_words(gt).size());
  auto words = split_words(output);
  if (words.size() <= k) {
    std::string out;
    for (const auto& w : words) out += (out.empty() ? "" : " ") + w;
    return out;
  }
  std::string out;
  for (std::size_t i = 0; i < k; ++i) out += (i ? " " : "") + words[i];
  return out;
}

VqaScore vqa_accuracy(std::string_view answer, std::span<const std::string> ground_truths) {
  const auto matches = static_cast<double>(std::count(ground_truths.begin(), ground_truths.end(), answer));
  if (ground_truths.size() != 10) return {std::min(matches / 3.0, 1.0), true};
  // Leaving out a matching annotator leaves matches−1, any other leaves matches.
  const double with_all = std::min(matches / 3.0, 1.0);
  const double without_one = std::min((matches - 1.0) / 3.0, 1.0);
  return {(matches * without_one + (10.0 - matches) * with_all) / 10.0, false};
}

std::string modal_answer(std::span<const std::string> answers) {
  if (answers.empty()) throw DataError("no answers to choose a modal answer from");
  std::map<std::string, int> counts;
  for (const auto& a : answers) ++counts[a];
  auto best = counts.begin();
  for (auto it = counts.begin(); it != counts.end(); ++it)
    if (it->second > best->second) best = it;
  return best->first;
}

double bleu4(std::span<const std::string> candidates, std::span<const std::vector<std::string>> references) {
  if (candidates.empty()) throw DataError("BLEU needs at least one candidate");
  if (candidates.size() != references.size())
    throw DataError(fmt::format("{} candidates but {} reference sets", candidates.size(), references.size()));
  std::array<double, 4> matched{}, total{};
  double cand_len = 0.0, ref_len = 0.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (references[i].empty()) throw DataError(fmt::format("candidate {} has no references", i));
    const auto cand = split_words(lower(candidates[i]));
    std::vector<std::vector<std::string>> refs;
    for (const auto& r : references[i]) refs.push_back(split_words(lower(r)));

    cand_len += static_cast<double>(cand.size());
    std::size_t best = refs[0].size();
    for (const auto& r : refs) {
      const auto d = [&](std::size_t len) { return len > cand.size() ? len - cand.size() : cand.size() - len; };
      if (d(r.size()) < d(best) || (d(r.size()) == d(best) && r.size() < best)) best = r.size();
    }
    ref_len += static_cast<double>(best);

    for (std::size_t n = 1; n <= 4; ++n) {
      std::map<Ngram, int> max_ref;
      for (const auto& r : refs)
        for (const auto& [g, c] : ngram_counts(r, n)) max_ref[g] = std::max(max_ref[g], c);
      for (const auto& [g, c] : ngram_counts(cand, n)) {
        auto it = max_ref.find(g);
        matched[n - 1] += std::min(c, it == max_ref.end() ? 0 : it->second);
        total[n - 1] += c;
      }
    }
  }
  double log_sum = 0.0;
  for (std::size_t n = 0; n < 4; ++n) {
    if (matched[n] == 0.0) return 0.0;
    log_sum += std::log(matched[n] / total[n]) / 4.0;
  }
  const double bp = cand_len > ref_len ? 1.0 : std::exp(1.0 - ref_len / cand_len);
  return bp * std::exp(log_sum);
}

}  // namespace magma
