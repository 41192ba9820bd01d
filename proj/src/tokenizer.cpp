#include "magma/tokenizer.hpp"

#include <fstream>

#include <fmt/format.h>

#include "magma/tensor.hpp"

namespace magma {

Tokenizer Tokenizer::with_words(std::vector<std::string> words) {
  Tokenizer tok;
  for (auto& w : words) {
    if (w.empty() || w.find_first_of(" \n\t") != std::string::npos)
      throw DataError(fmt::format("vocabulary entry '{}' must be a non-empty word without whitespace", w));
    if (tok.word_ids_.contains(w)) continue;
    tok.word_ids_.emplace(w, kByteVocab + static_cast<int>(tok.words_.size()));
    tok.words_.push_back(std::move(w));
  }
  return tok;
}

Tokenizer Tokenizer::from_vocab_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError(fmt::format("cannot open vocabulary file {}", path.string()));
  std::vector<std::string> words;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (!line.empty()) words.push_back(line);
  }
  return with_words(std::move(words));
}

TokenSequence Tokenizer::encode(std::string_view text) const {
  TokenSequence out;
  out.reserve(text.size());
  auto emit_bytes = [&out](std::string_view s) {
    for (unsigned char c : s) out.push_back(static_cast<int>(c));
  };
  if (words_.empty()) {
    emit_bytes(text);
    return out;
  }
  std::size_t i = 0;
  while (i < text.size()) {
    std::size_t j = text.find_first_of(" \n\t", i);
    if (j == i) {
      emit_bytes(text.substr(i, 1));
      ++i;
      continue;
    }
    if (j == std::string_view::npos) j = text.size();
    auto word = text.substr(i, j - i);
    if (auto it = word_ids_.find(std::string(word)); it != word_ids_.end()) {
      out.push_back(it->second);
    } else {
      emit_bytes(word);
    }
    i = j;
  }
  return out;
}

std::string Tokenizer::decode(std::span<const int> tokens) const {
  std::string out;
  for (int t : tokens) {
    if (t >= 0 && t < 256) {
      out.push_back(static_cast<char>(t));
    } else if (t >= kByteVocab && static_cast<std::size_t>(t - kByteVocab) < words_.size()) {
      out += words_[static_cast<std::size_t>(t - kByteVocab)];
    }
  }
  return out;
}

}  // namespace magma
