#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace magma {

using TokenSequence = std::vector<int>;

/// Byte-level tokenizer: ids 0–255 are raw bytes, 256–259 are specials.
/// Optionally extended with whole-word ids (≥ 260) loaded from a vocabulary
/// file; words missing from the vocabulary fall back to bytes, so
/// decode(encode(s)) == s holds for every byte string either way.
class Tokenizer {
 public:
  static constexpr int kPad = 256;
  static constexpr int kBos = 257;
  static constexpr int kCls = 258;
  static constexpr int kEos = 259;
  static constexpr int kByteVocab = 260;

  Tokenizer() = default;
  static Tokenizer with_words(std::vector<std::string> words);
  /// One word per line; blank lines ignored.
  static Tokenizer from_vocab_file(const std::filesystem::path& path);

  TokenSequence encode(std::string_view text) const;
  /// Specials are dropped.
  std::string decode(std::span<const int> tokens) const;
  std::size_t vocab_size() const { return kByteVocab + words_.size(); }
  const std::vector<std::string>& words() const { return words_; }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> word_ids_;
};

}  // namespace magma
