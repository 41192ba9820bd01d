#pragma once

#include <filesystem>
#include <vector>

#include "magma/config.hpp"
#include "magma/evaluation.hpp"
#include "magma/io.hpp"
#include "magma/training.hpp"

namespace magma {

// Glue between manifests on disk and the in-memory training/evaluation types.

/// A ".mgt" path is read as a precomputed feature grid; anything else as a
/// PPM image, center-cropped and resized to the encoder resolution.
template <typename T>
VisualInput<T> load_visual(const fs::path& path, const EncoderConfig& encoder);

/// Byte tokenizer, extended with the config's word list when one is set.
/// Throws UsageError when the tokenizer does not fit the LM vocabulary.
Tokenizer make_tokenizer(const RunConfig& config);

template <typename T>
std::vector<CaptionSample<T>> caption_samples(const std::vector<ManifestRecord>& records, const RunConfig& config,
                                              const Tokenizer& tokenizer);

/// Records sharing an image become one example with several references.
std::vector<CaptionExample> caption_examples(const std::vector<ManifestRecord>& records);

std::vector<QAExample> qa_examples(const std::vector<ManifestRecord>& records);

template <typename T>
std::vector<EntailmentSample<T>> entailment_samples(const std::vector<ManifestRecord>& records,
                                                    const RunConfig& config, const Tokenizer& tokenizer);

/// Caption text of each record in training format, tokenized.
std::vector<TokenSequence> caption_corpus(const std::vector<ManifestRecord>& records, const RunConfig& config,
                                          const Tokenizer& tokenizer);

}  // namespace magma
