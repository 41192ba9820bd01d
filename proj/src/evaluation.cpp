#include "magma/evaluation.hpp"

#include <algorithm>
#include <array>
#include <iostream>
#include <map>
#include <numeric>

#include <fmt/format.h>
#include <json.hpp>

#include "magma/metrics.hpp"

namespace magma {

namespace {

// Generated text can hold any byte; invalid UTF-8 is written as U+FFFD.
std::string json_line(const nlohmann::json& j) {
  return j.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
}

}  // namespace

std::string render_shot(std::string_view question, std::string_view answer) {
  return fmt::format("Q: {}\nA: {}\n", question, answer);
}

std::string render_query(std::string_view question) { return fmt::format("Q: {}\nA:", question); }

std::size_t PromptPlan::image_count() const {
  return static_cast<std::size_t>(std::count_if(parts.begin(), parts.end(), [](const Part& p) { return p.is_image; }));
}

std::string PromptPlan::render_layout() const {
  std::string out;
  for (const auto& p : parts) out += p.is_image ? fmt::format("<image:{}>\n", p.content) : p.content;
  return out;
}

PromptPlan assemble_prompt(std::span<const QAExample> shots, const QAExample& query) {
  PromptPlan plan;
  for (const auto& s : shots) {
    plan.parts.push_back({true, s.image});
    plan.parts.push_back({false, render_shot(s.question, modal_answer(s.answers))});
  }
  plan.parts.push_back({true, query.image});
  plan.parts.push_back({false, render_query(query.question)});
  return plan;
}

PromptPlan caption_prompt(const CaptionExample& example, std::string_view prompt_prefix) {
  PromptPlan plan;
  plan.parts.push_back({true, example.image});
  if (!prompt_prefix.empty()) plan.parts.push_back({false, std::string(prompt_prefix)});
  return plan;
}

std::vector<std::size_t> draw_shots(std::size_t pool_size, std::size_t n, std::optional<std::size_t> exclude,
                                    std::mt19937_64& rng) {
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < pool_size; ++i)
    if (!exclude || *exclude != i) candidates.push_back(i);
  std::shuffle(candidates.begin(), candidates.end(), rng);
  candidates.resize(std::min(n, candidates.size()));
  return candidates;
}

PromptPlan fit_to_context(PromptPlan plan, const Generator& gen, std::size_t max_new) {
  while (gen.length(plan) + max_new > gen.context) {
    if (plan.image_count() <= 1)
      throw DataError(fmt::format("query prompt of length {} does not fit context {}", gen.length(plan), gen.context));
    // Oldest shot: its image and the text that follows it.
    auto next_image = std::find_if(plan.parts.begin() + 1, plan.parts.end(), [](const auto& p) { return p.is_image; });
    plan.parts.erase(plan.parts.begin(), next_image);
    ++plan.dropped_shots;
  }
  return plan;
}

std::string first_line(std::string_view text) {
  text = text.substr(0, text.find('\n'));
  const auto b = text.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return "";
  const auto e = text.find_last_not_of(" \t\r");
  return std::string(text.substr(b, e - b + 1));
}

VqaReport evaluate_vqa(std::span<const QAExample> dataset, std::span<const QAExample> pool, const FewShotSpec& shots,
                       const Generator& gen, std::ostream* records) {
  if (dataset.empty()) throw DataError("VQA evaluation on an empty dataset");
  VqaReport report;
  double total = 0.0;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto& item = dataset[i];
    if (item.answers.empty()) throw DataError(fmt::format("item '{}' has no ground-truth answers", item.id));
    std::optional<std::size_t> self;
    for (std::size_t j = 0; j < pool.size(); ++j)
      if (pool[j].id == item.id) self = j;
    // Per-item stream keeps each item's shots independent of evaluation order.
    std::mt19937_64 rng(shots.seed + i);
    std::vector<QAExample> chosen;
    for (auto j : draw_shots(pool.size(), shots.n_shots, self, rng)) chosen.push_back(pool[j]);

    VqaRecord rec;
    rec.id = item.id;
    rec.question = item.question;
    try {
      auto plan = fit_to_context(assemble_prompt(chosen, item), gen, kQaMaxNewTokens);
      if (plan.dropped_shots > 0) {
        ++report.truncated_prompts;
        std::cerr << fmt::format("warning: dropped {} shot(s) for item '{}' to fit the context\n", plan.dropped_shots,
                                 item.id);
      }
      rec.raw_output = gen.generate(plan, kQaMaxNewTokens);
    } catch (const DataError& e) {
      std::cerr << fmt::format("item '{}' skipped: {}\n", item.id, e.what());
      ++report.failures;
      continue;
    }
    std::vector<std::string> gts;
    for (const auto& a : item.answers) gts.push_back(normalize_answer(a));
    rec.normalized = normalize_answer(first_line(rec.raw_output));
    rec.truncated = truncate_answer(rec.normalized, gts);
    const auto score = vqa_accuracy(rec.truncated, gts);
    rec.score = score.score;
    rec.fallback = score.fallback;
    total += rec.score;
    if (records) {
      nlohmann::json j = {{"id", rec.id},           {"question", rec.question}, {"raw_output", rec.raw_output},
                          {"normalized", rec.normalized}, {"truncated", rec.truncated}, {"score", rec.score}};
      *records << json_line(j) << '\n';
    }
    report.items.push_back(std::move(rec));
  }
  if (report.items.empty()) throw DataError("every VQA item failed");
  report.accuracy = total / static_cast<double>(report.items.size());
  if (records) {
    nlohmann::json summary = {{"accuracy", report.accuracy},
                              {"items", report.items.size()},
                              {"failures", report.failures},
                              {"shots", shots.n_shots},
                              {"truncated_prompts", report.truncated_prompts}};
    *records << json_line(summary) << '\n';
  }
  return report;
}

CaptionReport evaluate_captions(std::span<const CaptionExample> dataset, std::string_view prompt_prefix,
                                const Generator& gen, std::ostream* records) {
  if (dataset.empty()) throw DataError("caption evaluation on an empty dataset");
  CaptionReport report;
  std::vector<std::string> outputs;
  std::vector<std::vector<std::string>> refs;
  for (const auto& item : dataset) {
    if (item.references.empty()) throw DataError(fmt::format("item '{}' has no reference captions", item.id));
    CaptionRecord rec{item.id, {}, item.references};
    try {
      auto plan = fit_to_context(caption_prompt(item, prompt_prefix), gen, kCaptionMaxNewTokens);
      rec.output = first_line(gen.generate(plan, kCaptionMaxNewTokens));
    } catch (const DataError& e) {
      std::cerr << fmt::format("item '{}' skipped: {}\n", item.id, e.what());
      ++report.failures;
      continue;
    }
    outputs.push_back(rec.output);
    refs.push_back(rec.references);
    if (records) {
      nlohmann::json j = {{"id", rec.id}, {"prompt", prompt_prefix}, {"output", rec.output},
                          {"references", rec.references}};
      *records << json_line(j) << '\n';
    }
    report.items.push_back(std::move(rec));
  }
  if (report.items.empty()) throw DataError("every caption item failed");
  report.bleu = bleu4(outputs, refs);
  if (records) {
    nlohmann::json summary = {
        {"bleu4", report.bleu}, {"items", report.items.size()}, {"failures", report.failures}, {"prompt", prompt_prefix}};
    *records << json_line(summary) << '\n';
  }
  return report;
}

template <typename T>
Generator model_generator(const MultimodalModel<T>& model, const Tokenizer& tokenizer, ImageLoader<T> loader) {
  const std::size_t n = model.prefix_length();
  const bool bos = model.lm().config().bos;
  auto build = [&model, &tokenizer, loader, bos](const PromptPlan& plan) {
    PromptSequence<T> prompt;
    std::map<std::string, Tensor<T>> cache;
    for (const auto& part : plan.parts) {
      if (part.is_image) {
        auto it = cache.find(part.content);
        if (it == cache.end()) it = cache.emplace(part.content, model.image_prefix(loader(part.content))).first;
        prompt.add_prefix(it->second);
        if (bos) prompt.add_tokens({Tokenizer::kBos});
      } else {
        prompt.add_tokens(tokenizer.encode(part.content));
      }
    }
    return prompt;
  };
  Generator gen;
  gen.context = model.lm().config().context;
  gen.length = [&tokenizer, n, bos](const PromptPlan& plan) {
    std::size_t len = 0;
    for (const auto& part : plan.parts) len += part.is_image ? n + (bos ? 1 : 0) : tokenizer.encode(part.content).size();
    return len;
  };
  gen.generate = [&model, &tokenizer, build](const PromptPlan& plan, std::size_t max_new) {
    NoGradGuard no_grad;
    const std::array<int, 1> stop{'\n'};
    auto tokens = model.lm().generate_greedy(build(plan), model.adapters(), max_new, stop);
    return tokenizer.decode(tokens);
  };
  return gen;
}

template Generator model_generator<float>(const MultimodalModel<float>&, const Tokenizer&, ImageLoader<float>);
template Generator model_generator<double>(const MultimodalModel<double>&, const Tokenizer&, ImageLoader<double>);

}  // namespace magma
