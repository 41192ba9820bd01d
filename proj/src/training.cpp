#include "magma/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>
#include <fmt/ostream.h>

#include "magma/ops.hpp"

namespace magma {

namespace {

bool starts_with(std::string_view s, std::string_view prefix) { return s.substr(0, prefix.size()) == prefix; }

// Concatenates per-sample rows into one [B·len × d] tensor, right-padding
// each sample with zero rows. Causal masking makes trailing padding inert.
template <typename T>
Tensor<T> pack_rows(std::vector<std::vector<Tensor<T>>> samples, const std::vector<std::size_t>& lengths,
                    std::size_t padded, std::size_t d) {
  std::vector<Tensor<T>> parts;
  for (std::size_t b = 0; b < samples.size(); ++b) {
    for (auto& p : samples[b]) parts.push_back(std::move(p));
    if (lengths[b] < padded) parts.push_back(Tensor<T>::zeros({padded - lengths[b], d}));
  }
  return ops::concat_rows(parts);
}

template <typename T>
std::vector<int> prefix_rows(std::size_t b, std::size_t n) {
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), static_cast<int>(b * n));
  return idx;
}

}  // namespace

ParamGroup group_of(std::string_view name) {
  if (starts_with(name, "encoder.")) return ParamGroup::encoder;
  if (starts_with(name, "prefix.") || starts_with(name, "adapter.")) return ParamGroup::head;
  if (starts_with(name, "lm.")) return ParamGroup::lm;
  if (starts_with(name, "cls.")) return ParamGroup::classifier;
  throw UsageError(fmt::format("parameter '{}' belongs to no known component", name));
}

template <typename T>
ParameterPartition partition_parameters(ParameterStore<T>& store, TrainMode mode) {
  ParameterPartition part;
  for (auto& [name, tensor] : store) {
    const auto group = group_of(name);
    bool trainable = false;
    switch (mode) {
      case TrainMode::multimodal:
        trainable = group == ParamGroup::encoder || group == ParamGroup::head;
        break;
      case TrainMode::snli_finetune:
        trainable = group == ParamGroup::encoder || group == ParamGroup::head || group == ParamGroup::classifier;
        break;
      case TrainMode::lm_pretrain:
        trainable = group == ParamGroup::lm;
        break;
    }
    tensor.set_requires_grad(trainable);
    (trainable ? part.trainable : part.frozen).insert(name);
  }
  return part;
}

std::string format_caption(std::string_view prompt_prefix, std::string_view caption) {
  if (prompt_prefix.empty()) return fmt::format("{}\n", caption);
  return fmt::format("{} {}\n", prompt_prefix, caption);
}

double lr_for_group(ParamGroup group, std::size_t step, const TrainConfig& config) {
  const double base = group == ParamGroup::encoder ? config.lr_encoder : config.lr_head;
  return cosine_lr(step, config.total_steps, base);
}

template <typename T>
LossReport<T> caption_loss(const MultimodalModel<T>& model, std::span<const CaptionSample<T>> batch, bool train,
                           std::mt19937_64* rng) {
  if (batch.empty()) throw ShapeError("caption_loss on an empty batch");
  const auto& lm = model.lm();
  const auto& cfg = lm.config();
  const std::size_t B = batch.size(), n = model.prefix_length(), d = cfg.d_model;
  const std::size_t text_offset = cfg.bos ? 1 : 0;

  std::vector<VisualInput<T>> visuals;
  for (const auto& s : batch) {
    if (s.caption.empty()) throw DataError("caption_loss: empty caption");
    visuals.push_back(s.visual);
  }
  auto prefix = model.image_prefix(std::span<const VisualInput<T>>(visuals), train, rng);

  std::vector<std::size_t> lengths(B);
  std::vector<std::vector<Tensor<T>>> rows(B);
  for (std::size_t b = 0; b < B; ++b) {
    const auto& cap = batch[b].caption;
    TokenSequence input;
    if (cfg.bos) input.push_back(Tokenizer::kBos);
    input.insert(input.end(), cap.begin(), cap.end() - 1);
    rows[b].push_back(ops::gather_rows(prefix, prefix_rows<T>(b, n)));
    if (!input.empty()) rows[b].push_back(lm.embed(input));
    lengths[b] = n + input.size();
  }
  const std::size_t padded = *std::max_element(lengths.begin(), lengths.end());
  if (padded > cfg.context)
    throw ShapeError(fmt::format("prefix + caption length {} exceeds context window {}", padded, cfg.context));

  std::vector<int> targets(B * padded, ops::kIgnoreTarget);
  std::vector<T> weights(B * padded, T(0));
  std::size_t tokens = 0;
  for (std::size_t b = 0; b < B; ++b) {
    const auto& cap = batch[b].caption;
    const std::size_t first = b * padded + n - 1 + text_offset;
    for (std::size_t i = 0; i < cap.size(); ++i) {
      targets[first + i] = cap[i];
      weights[first + i] = T(1) / static_cast<T>(cap.size() * B);
    }
    tokens += cap.size();
  }

  auto x = pack_rows<T>(std::move(rows), lengths, padded, d);
  auto logits = lm.head(lm.transform(x, B, model.adapters()));
  auto loss = ops::cross_entropy<T>(logits, targets, weights);
  auto nll = ops::token_nll<T>(logits, targets);
  return {loss, std::accumulate(nll.begin(), nll.end(), 0.0), tokens};
}

template <typename T>
LossReport<T> text_loss(const MultimodalModel<T>& model, std::span<const TokenSequence> batch) {
  if (batch.empty()) throw ShapeError("text_loss on an empty batch");
  const auto& lm = model.lm();
  const auto& cfg = lm.config();
  const std::size_t B = batch.size(), d = cfg.d_model;
  std::vector<std::size_t> lengths(B);
  std::vector<std::vector<Tensor<T>>> rows(B);
  std::vector<TokenSequence> targets_per(B);
  for (std::size_t b = 0; b < B; ++b) {
    const auto& seq = batch[b];
    TokenSequence input;
    if (cfg.bos) {
      if (seq.empty()) throw DataError("text_loss: empty sequence");
      input.push_back(Tokenizer::kBos);
      input.insert(input.end(), seq.begin(), seq.end() - 1);
      targets_per[b] = seq;
    } else {
      if (seq.size() < 2) throw DataError("text_loss: sequences need at least two tokens without BOS");
      input.assign(seq.begin(), seq.end() - 1);
      targets_per[b].assign(seq.begin() + 1, seq.end());
    }
    rows[b].push_back(lm.embed(input));
    lengths[b] = input.size();
  }
  const std::size_t padded = *std::max_element(lengths.begin(), lengths.end());
  if (padded > cfg.context) throw ShapeError(fmt::format("sequence length {} exceeds context {}", padded, cfg.context));
  std::vector<int> targets(B * padded, ops::kIgnoreTarget);
  std::vector<T> weights(B * padded, T(0));
  std::size_t tokens = 0;
  for (std::size_t b = 0; b < B; ++b) {
    const auto& tg = targets_per[b];
    for (std::size_t i = 0; i < tg.size(); ++i) {
      targets[b * padded + i] = tg[i];
      weights[b * padded + i] = T(1) / static_cast<T>(tg.size() * B);
    }
    tokens += tg.size();
  }
  auto x = pack_rows<T>(std::move(rows), lengths, padded, d);
  auto logits = lm.head(lm.transform(x, B, nullptr));
  auto loss = ops::cross_entropy<T>(logits, targets, weights);
  auto nll = ops::token_nll<T>(logits, targets);
  return {loss, std::accumulate(nll.begin(), nll.end(), 0.0), tokens};
}

template <typename T>
Tensor<T> classifier_logits(const MultimodalModel<T>& model, std::span<const EntailmentSample<T>> batch, bool train,
                            std::mt19937_64* rng) {
  if (batch.empty()) throw ShapeError("classifier_logits on an empty batch");
  const auto& lm = model.lm();
  const auto& cfg = lm.config();
  const std::size_t B = batch.size(), n = model.prefix_length(), d = cfg.d_model;
  std::vector<VisualInput<T>> visuals;
  for (const auto& s : batch) {
    if (s.hypothesis.empty()) throw DataError("entailment sample has an empty hypothesis");
    visuals.push_back(s.visual);
  }
  auto prefix = model.image_prefix(std::span<const VisualInput<T>>(visuals), train, rng);
  std::vector<std::size_t> lengths(B);
  std::vector<std::vector<Tensor<T>>> rows(B);
  for (std::size_t b = 0; b < B; ++b) {
    TokenSequence text;
    if (cfg.bos) text.push_back(Tokenizer::kBos);
    text.insert(text.end(), batch[b].hypothesis.begin(), batch[b].hypothesis.end());
    rows[b].push_back(ops::gather_rows(prefix, prefix_rows<T>(b, n)));
    rows[b].push_back(lm.embed(text));
    lengths[b] = n + text.size();
  }
  const std::size_t padded = *std::max_element(lengths.begin(), lengths.end());
  if (padded > cfg.context) throw ShapeError(fmt::format("input length {} exceeds context {}", padded, cfg.context));
  auto hidden = lm.transform(pack_rows<T>(std::move(rows), lengths, padded, d), B, model.adapters());
  std::vector<int> last(B);
  for (std::size_t b = 0; b < B; ++b) last[b] = static_cast<int>(b * padded + lengths[b] - 1);
  return model.classify(ops::gather_rows(hidden, last));
}

template <typename T>
Trainer<T>::Trainer(MultimodalModel<T>& model, const TrainConfig& config, TrainMode mode)
    : model_(model), config_(config), rng_(config.seed) {
  if (config_.batch_size == 0) throw UsageError("batch_size must be positive");
  partition_ = partition_parameters(model_.parameters(), mode);
  for (const auto& name : partition_.trainable) {
    AdamState st;
    st.hyper.weight_decay = config_.weight_decay;
    states_.emplace(name, std::move(st));
  }
}

template <typename T>
StepResult Trainer<T>::step(const LossFn& loss_fn) {
  auto& store = model_.parameters();
  store.zero_grad();
  auto report = loss_fn(rng_);
  const double loss = static_cast<double>(report.loss.item());
  if (!std::isfinite(loss)) throw NumericError(fmt::format("loss is {} at step {}", loss, step_));
  backward(report.loss);

  const std::size_t sched_step = std::min(step_, config_.total_steps);
  StepResult r;
  r.step = step_;
  r.loss = loss;
  r.sum_nats = report.sum_nats;
  r.tokens = report.tokens;
  r.lr_encoder = lr_for_group(ParamGroup::encoder, sched_step, config_);
  r.lr_head = lr_for_group(ParamGroup::head, sched_step, config_);
  for (const auto& name : partition_.trainable) {
    auto& p = store.get(name);
    const double lr = group_of(name) == ParamGroup::encoder ? r.lr_encoder : r.lr_head;
    adam_step(p, states_.at(name), lr);
  }
  ++step_;
  return r;
}

template <typename T>
StepResult Trainer<T>::train_step(std::span<const CaptionSample<T>> batch) {
  return step([this, batch](std::mt19937_64& rng) { return caption_loss(model_, batch, true, &rng); });
}

BatchSampler::BatchSampler(std::size_t dataset_size, std::size_t batch_size, std::uint64_t seed)
    : size_(dataset_size), batch_(std::min(batch_size, dataset_size)), cursor_(dataset_size), rng_(seed) {
  if (dataset_size == 0) throw DataError("cannot sample batches from an empty dataset");
  if (batch_size == 0) throw UsageError("batch_size must be positive");
  order_.resize(size_);
}

std::vector<std::size_t> BatchSampler::next() {
  std::vector<std::size_t> out;
  while (out.size() < batch_) {
    if (cursor_ == size_) {
      std::iota(order_.begin(), order_.end(), std::size_t{0});
      std::shuffle(order_.begin(), order_.end(), rng_);
      cursor_ = 0;
    }
    out.push_back(order_[cursor_++]);
  }
  return out;
}

void write_metrics_header(std::ostream& out) { out << "step loss lr_encoder lr_head loss_sum\n"; }

void write_metrics_line(std::ostream& out, const StepResult& r) {
  fmt::print(out, "{} {:.6f} {:.6e} {:.6e} {:.6f}\n", r.step, r.loss, r.lr_encoder, r.lr_head, r.sum_nats);
}

template <typename T>
std::vector<StepResult> train_captions(Trainer<T>& trainer, std::span<const CaptionSample<T>> data,
                                       std::size_t steps, std::ostream* metrics, const StepCallback& callback) {
  if (steps == 0) steps = trainer.config().total_steps;
  BatchSampler sampler(data.size(), trainer.config().batch_size, trainer.config().seed);
  std::vector<StepResult> history;
  if (metrics) write_metrics_header(*metrics);
  for (std::size_t s = 0; s < steps; ++s) {
    std::vector<CaptionSample<T>> batch;
    for (auto i : sampler.next()) batch.push_back(data[i]);
    auto r = trainer.train_step(batch);
    history.push_back(r);
    if (metrics) write_metrics_line(*metrics, r);
    if (callback && !callback(r)) break;
  }
  return history;
}

template <typename T>
std::vector<StepResult> pretrain_lm(MultimodalModel<T>& model, std::span<const TokenSequence> corpus,
                                    const TrainConfig& config, std::ostream* metrics, const StepCallback& callback) {
  if (corpus.empty()) throw DataError("pretraining corpus is empty");
  Trainer<T> trainer(model, config, TrainMode::lm_pretrain);
  BatchSampler sampler(corpus.size(), config.batch_size, config.seed);
  std::vector<StepResult> history;
  if (metrics) write_metrics_header(*metrics);
  for (std::size_t s = 0; s < config.total_steps; ++s) {
    std::vector<TokenSequence> batch;
    for (auto i : sampler.next()) batch.push_back(corpus[i]);
    auto r = trainer.step([&](std::mt19937_64&) { return text_loss(model, std::span<const TokenSequence>(batch)); });
    history.push_back(r);
    if (metrics) write_metrics_line(*metrics, r);
    if (callback && !callback(r)) break;
  }
  return history;
}

template <typename T>
double classifier_accuracy(const MultimodalModel<T>& model, std::span<const EntailmentSample<T>> data) {
  if (data.empty()) throw DataError("accuracy of an empty dataset");
  NoGradGuard no_grad;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); i += 16) {
    auto chunk = data.subspan(i, std::min<std::size_t>(16, data.size() - i));
    auto logits = classifier_logits(model, chunk, false, nullptr);
    const std::size_t C = logits.dim(1);
    for (std::size_t b = 0; b < chunk.size(); ++b) {
      auto row = logits.data().subspan(b * C, C);
      if (static_cast<int>(argmax<T>(row)) == chunk[b].label) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

template <typename T>
ClassifierReport finetune_classifier(MultimodalModel<T>& model, std::span<const EntailmentSample<T>> train,
                                     std::span<const EntailmentSample<T>> heldout, const TrainConfig& config,
                                     std::ostream* metrics) {
  if (train.empty()) throw DataError("classifier finetuning needs training samples");
  if (!model.has_classifier()) model.add_classifier(3);
  const int classes = static_cast<int>(model.classifier_classes());
  for (const auto& s : train)
    if (s.label < 0 || s.label >= classes) throw DataError(fmt::format("label {} outside [0, {})", s.label, classes));
  Trainer<T> trainer(model, config, TrainMode::snli_finetune);
  BatchSampler sampler(train.size(), config.batch_size, config.seed);
  ClassifierReport report;
  if (metrics) write_metrics_header(*metrics);
  for (std::size_t s = 0; s < config.total_steps; ++s) {
    std::vector<EntailmentSample<T>> batch;
    for (auto i : sampler.next()) batch.push_back(train[i]);
    auto r = trainer.step([&](std::mt19937_64& rng) {
      auto logits = classifier_logits(model, std::span<const EntailmentSample<T>>(batch), true, &rng);
      std::vector<int> labels;
      for (const auto& b : batch) labels.push_back(b.label);
      auto loss = ops::cross_entropy<T>(logits, labels);
      return LossReport<T>{loss, static_cast<double>(loss.item()) * static_cast<double>(batch.size()), batch.size()};
    });
    report.history.push_back(r);
    if (metrics) write_metrics_line(*metrics, r);
  }
  report.train_accuracy = classifier_accuracy<T>(model, train);
  report.heldout_accuracy = heldout.empty() ? 0.0 : classifier_accuracy<T>(model, heldout);
  return report;
}

template <typename T>
double caption_nats_per_token(const MultimodalModel<T>& model, std::span<const CaptionSample<T>> data,
                              std::size_t batch_size) {
  if (data.empty()) throw DataError("no captions to score");
  NoGradGuard no_grad;
  double nats = 0.0;
  std::size_t tokens = 0;
  for (std::size_t i = 0; i < data.size(); i += batch_size) {
    auto chunk = data.subspan(i, std::min(batch_size, data.size() - i));
    auto r = caption_loss(model, chunk, false, nullptr);
    nats += r.sum_nats;
    tokens += r.tokens;
  }
  return nats / static_cast<double>(tokens);
}

#define MAGMA_INSTANTIATE_TRAINING(T)                                                                              \
  template ParameterPartition partition_parameters(ParameterStore<T>&, TrainMode);                                  \
  template LossReport<T> caption_loss(const MultimodalModel<T>&, std::span<const CaptionSample<T>>, bool,            \
                                      std::mt19937_64*);                                                             \
  template LossReport<T> text_loss(const MultimodalModel<T>&, std::span<const TokenSequence>);                      \
  template Tensor<T> classifier_logits(const MultimodalModel<T>&, std::span<const EntailmentSample<T>>, bool,        \
                                       std::mt19937_64*);                                                            \
  template class Trainer<T>;                                                                                         \
  template std::vector<StepResult> train_captions(Trainer<T>&, std::span<const CaptionSample<T>>, std::size_t,       \
                                                  std::ostream*, const StepCallback&);                               \
  template std::vector<StepResult> pretrain_lm(MultimodalModel<T>&, std::span<const TokenSequence>,                  \
                                               const TrainConfig&, std::ostream*, const StepCallback&);              \
  template double classifier_accuracy(const MultimodalModel<T>&, std::span<const EntailmentSample<T>>);             \
  template ClassifierReport finetune_classifier(MultimodalModel<T>&, std::span<const EntailmentSample<T>>,           \
                                                std::span<const EntailmentSample<T>>, const TrainConfig&,            \
                                                std::ostream*);                                                      \
  template double caption_nats_per_token(const MultimodalModel<T>&, std::span<const CaptionSample<T>>, std::size_t);

MAGMA_INSTANTIATE_TRAINING(float)
MAGMA_INSTANTIATE_TRAINING(double)

}  // namespace magma
