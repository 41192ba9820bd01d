#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <ostream>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "magma/model.hpp"
#include "magma/optim.hpp"

namespace magma {

enum class TrainMode { multimodal, snli_finetune, lm_pretrain };

/// Learning-rate group of a parameter. The visual encoder trains at
/// lr_encoder; prefix, adapters and classifier head at lr_head. During LM
/// pretraining the LM tensors use lr_head.
enum class ParamGroup { encoder, head, lm, classifier };

/// Throws UsageError for names outside the known namespaces.
ParamGroup group_of(std::string_view name);

struct ParameterPartition {
  std::set<std::string> frozen;
  std::set<std::string> trainable;
  bool is_trainable(const std::string& name) const { return trainable.contains(name); }
};

/// Splits the store into frozen and trainable sets for `mode` and sets
/// requires_grad accordingly.
template <typename T>
ParameterPartition partition_parameters(ParameterStore<T>& store, TrainMode mode);

struct TrainConfig {
  std::size_t batch_size = 16;
  double lr_encoder = 2e-6;
  double lr_head = 8e-4;
  std::size_t total_steps = 15000;
  std::uint64_t seed = 0;
  double weight_decay = 0.0;
  bool operator==(const TrainConfig&) const = default;
};

/// Base rate of the group, cosine-annealed to 10% over total_steps.
double lr_for_group(ParamGroup group, std::size_t step, const TrainConfig& config);

/// Training text for a caption: "{prefix} {caption}\n", or "{caption}\n"
/// when the prefix is empty.
std::string format_caption(std::string_view prompt_prefix, std::string_view caption);

template <typename T>
struct CaptionSample {
  VisualInput<T> visual;
  TokenSequence caption;
};

template <typename T>
struct EntailmentSample {
  VisualInput<T> visual;
  TokenSequence hypothesis;
  int label = 0;  // 0 entailment, 1 neutral, 2 contradiction
};

template <typename T>
struct LossReport {
  Tensor<T> loss;         // batch mean of per-caption mean nats/token
  double sum_nats = 0.0;  // summed over every scored token
  std::size_t tokens = 0;
};

/// Next-token captioning loss with the image prefix prepended. Only caption
/// tokens are scored: the logit scoring t_1 is read at the last prefix
/// position (or BOS), and t_i at the position of t_{i−1}.
template <typename T>
LossReport<T> caption_loss(const MultimodalModel<T>& model, std::span<const CaptionSample<T>> batch, bool train,
                           std::mt19937_64* rng);

/// Plain next-token loss over token sequences (LM pretraining).
template <typename T>
LossReport<T> text_loss(const MultimodalModel<T>& model, std::span<const TokenSequence> batch);

/// Classifier logits [B × classes] from the final hidden state at the last
/// hypothesis token.
template <typename T>
Tensor<T> classifier_logits(const MultimodalModel<T>& model, std::span<const EntailmentSample<T>> batch, bool train,
                            std::mt19937_64* rng);

struct StepResult {
  std::size_t step = 0;
  double loss = 0.0;
  double sum_nats = 0.0;
  std::size_t tokens = 0;
  double lr_encoder = 0.0;
  double lr_head = 0.0;
};

/// Owns the optimizer state for one model and one partition.
template <typename T>
class Trainer {
 public:
  using LossFn = std::function<LossReport<T>(std::mt19937_64&)>;

  Trainer(MultimodalModel<T>& model, const TrainConfig& config, TrainMode mode);

  /// Forward, backward and one Adam update of every trainable tensor at the
  /// cosine-annealed rate of its group. Throws NumericError on a NaN loss.
  StepResult step(const LossFn& loss_fn);
  StepResult train_step(std::span<const CaptionSample<T>> batch);

  const ParameterPartition& partition() const { return partition_; }
  const TrainConfig& config() const { return config_; }
  std::size_t steps_done() const { return step_; }
  std::mt19937_64& rng() { return rng_; }
  MultimodalModel<T>& model() { return model_; }

 private:
  MultimodalModel<T>& model_;
  TrainConfig config_;
  ParameterPartition partition_;
  std::map<std::string, AdamState> states_;
  std::size_t step_ = 0;
  std::mt19937_64 rng_;
};

/// Deterministic epoch-wise shuffled index batches.
class BatchSampler {
 public:
  BatchSampler(std::size_t dataset_size, std::size_t batch_size, std::uint64_t seed);
  std::vector<std::size_t> next();

 private:
  std::size_t size_, batch_;
  std::vector<std::size_t> order_;
  std::size_t cursor_;
  std::mt19937_64 rng_;
};

/// Writes "step loss lr_encoder lr_head loss_sum" lines.
void write_metrics_header(std::ostream& out);
void write_metrics_line(std::ostream& out, const StepResult& r);

using StepCallback = std::function<bool(const StepResult&)>;  // return false to stop early

/// Multimodal captioning training for `steps` steps (or config.total_steps).
template <typename T>
std::vector<StepResult> train_captions(Trainer<T>& trainer, std::span<const CaptionSample<T>> data,
                                       std::size_t steps, std::ostream* metrics = nullptr,
                                       const StepCallback& callback = {});

/// Text-only next-token training of the LM tensors.
template <typename T>
std::vector<StepResult> pretrain_lm(MultimodalModel<T>& model, std::span<const TokenSequence> corpus,
                                    const TrainConfig& config, std::ostream* metrics = nullptr,
                                    const StepCallback& callback = {});

struct ClassifierReport {
  double train_accuracy = 0.0;
  double heldout_accuracy = 0.0;
  std::vector<StepResult> history;
};

template <typename T>
double classifier_accuracy(const MultimodalModel<T>& model, std::span<const EntailmentSample<T>> data);

/// Trains the classifier head together with the usual multimodal trainable
/// set; adds a 3-way head if the model has none.
template <typename T>
ClassifierReport finetune_classifier(MultimodalModel<T>& model, std::span<const EntailmentSample<T>> train,
                                     std::span<const EntailmentSample<T>> heldout, const TrainConfig& config,
                                     std::ostream* metrics = nullptr);

/// Mean nats/token of the captions in eval mode.
template <typename T>
double caption_nats_per_token(const MultimodalModel<T>& model, std::span<const CaptionSample<T>> data,
                              std::size_t batch_size = 16);

}  // namespace magma
