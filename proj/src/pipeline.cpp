#include "magma/pipeline.hpp"

#include <map>

#include <fmt/format.h>

namespace magma {

template <typename T>
VisualInput<T> load_visual(const fs::path& path, const EncoderConfig& encoder) {
  if (path.extension() == ".mgt") {
    auto grid = read_mgt<T>(path);
    if (encoder.kind != EncoderConfig::Kind::passthrough)
      throw DataError(fmt::format("{}: feature grid given but the encoder expects images", path.string()));
    return {grid, true};
  }
  if (encoder.kind == EncoderConfig::Kind::passthrough)
    throw DataError(fmt::format("{}: image given but the passthrough encoder expects .mgt grids", path.string()));
  return {image_to_tensor<T>(preprocess_image(read_ppm(path), encoder.image_size)), false};
}

Tokenizer make_tokenizer(const RunConfig& config) {
  Tokenizer tok = config.vocab_file.empty() ? Tokenizer() : Tokenizer::from_vocab_file(config.vocab_file);
  if (tok.vocab_size() > config.model.lm.vocab)
    throw UsageError(
        fmt::format("tokenizer needs {} ids but vocab is {}", tok.vocab_size(), config.model.lm.vocab));
  return tok;
}

template <typename T>
std::vector<CaptionSample<T>> caption_samples(const std::vector<ManifestRecord>& records, const RunConfig& config,
                                              const Tokenizer& tokenizer) {
  std::map<fs::path, VisualInput<T>> cache;
  std::vector<CaptionSample<T>> out;
  for (const auto& r : records) {
    auto it = cache.find(r.image);
    if (it == cache.end()) it = cache.emplace(r.image, load_visual<T>(r.image, config.model.encoder)).first;
    out.push_back({it->second, tokenizer.encode(format_caption(config.caption_prefix, r.caption))});
  }
  return out;
}

std::vector<CaptionExample> caption_examples(const std::vector<ManifestRecord>& records) {
  std::vector<CaptionExample> out;
  std::map<std::string, std::size_t> by_image;
  for (const auto& r : records) {
    const auto key = r.image.string();
    auto [it, fresh] = by_image.emplace(key, out.size());
    if (fresh) out.push_back({r.id, key, {}});
    out[it->second].references.push_back(r.caption);
  }
  return out;
}

std::vector<QAExample> qa_examples(const std::vector<ManifestRecord>& records) {
  std::vector<QAExample> out;
  for (const auto& r : records) out.push_back({r.id, r.image.string(), r.question, r.answers});
  return out;
}

template <typename T>
std::vector<EntailmentSample<T>> entailment_samples(const std::vector<ManifestRecord>& records,
                                                    const RunConfig& config, const Tokenizer& tokenizer) {
  std::vector<EntailmentSample<T>> out;
  for (const auto& r : records) {
    auto tokens = tokenizer.encode(r.hypothesis);
    if (tokens.empty()) throw DataError(fmt::format("line {}: empty hypothesis", r.line));
    out.push_back({load_visual<T>(r.image, config.model.encoder), std::move(tokens), r.label});
  }
  return out;
}

std::vector<TokenSequence> caption_corpus(const std::vector<ManifestRecord>& records, const RunConfig& config,
                                          const Tokenizer& tokenizer) {
  std::vector<TokenSequence> out;
  for (const auto& r : records) out.push_back(tokenizer.encode(format_caption(config.caption_prefix, r.caption)));
  return out;
}

#define MAGMA_INSTANTIATE_PIPELINE(T)                                                                         \
  template VisualInput<T> load_visual<T>(const fs::path&, const EncoderConfig&);                             \
  template std::vector<CaptionSample<T>> caption_samples<T>(const std::vector<ManifestRecord>&,              \
                                                            const RunConfig&, const Tokenizer&);             \
  template std::vector<EntailmentSample<T>> entailment_samples<T>(const std::vector<ManifestRecord>&,        \
                                                                  const RunConfig&, const Tokenizer&);

MAGMA_INSTANTIATE_PIPELINE(float)
MAGMA_INSTANTIATE_PIPELINE(double)

}  // namespace magma
