// magma: command-line front end. One subcommand per pipeline stage.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>

#include "magma/checkpoint.hpp"
#include "magma/evaluation.hpp"
#include "magma/metrics.hpp"
#include "magma/pipeline.hpp"
#include "magma/synthetic.hpp"

using namespace magma;
using Scalar = float;

namespace {

struct Options {
  std::string config, checkpoint, manifest, out, heldout, image, prompt, kind = "caption";
  std::size_t shots = 0, count = 32, max_new = kCaptionMaxNewTokens;
  std::optional<std::size_t> steps;
  std::optional<std::uint64_t> seed;
  bool prompt_given = false;
  std::vector<std::string> positional;
};

// --seed, then MAGMA_SEED, then the config value.
std::uint64_t resolve_seed(const Options& o, std::uint64_t fallback) {
  if (o.seed) return *o.seed;
  if (const char* env = std::getenv("MAGMA_SEED")) {
    try {
      return std::stoull(env);
    } catch (const std::exception&) {
      throw UsageError(fmt::format("MAGMA_SEED='{}' is not an unsigned integer", env));
    }
  }
  return fallback;
}

RunConfig require_config(const Options& o) {
  if (o.config.empty()) throw UsageError("--config is required");
  return RunConfig::load(o.config);
}

void require(const std::string& value, std::string_view flag) {
  if (value.empty()) throw UsageError(fmt::format("{} is required", flag));
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError(fmt::format("cannot write {}", path.string()));
  return out;
}

StepCallback progress(std::size_t total) {
  return [total](const StepResult& r) {
    if (r.step % 50 == 0 || r.step + 1 == total)
      std::cerr << fmt::format("step {:>6}  loss {:.4f}\n", r.step, r.loss);
    return true;
  };
}

int cmd_synth(const Options& o) {
  require(o.out, "--out");
  ManifestKind kind;
  if (o.kind == "caption") kind = ManifestKind::caption;
  else if (o.kind == "qa") kind = ManifestKind::qa;
  else if (o.kind == "entailment") kind = ManifestKind::entailment;
  else throw UsageError(fmt::format("--kind must be caption, qa or entailment, not '{}'", o.kind));
  const auto path = write_synthetic_dataset(o.out, kind, o.count, resolve_seed(o, 0));
  std::cout << path.string() << "\n";
  return 0;
}

int cmd_pretrain(const Options& o) {
  auto cfg = require_config(o);
  require(o.manifest, "--manifest");
  require(o.out, "--out");
  const auto tok = make_tokenizer(cfg);
  const auto corpus = caption_corpus(load_manifest(o.manifest, ManifestKind::caption), cfg, tok);
  cfg.train.seed = resolve_seed(o, cfg.train.seed);
  MultimodalModel<Scalar> model(cfg.model, cfg.train.seed);
  TrainConfig tc = cfg.train;
  tc.lr_head = cfg.pretrain_lr;
  tc.total_steps = o.steps.value_or(cfg.pretrain_steps);
  fs::create_directories(o.out);
  auto metrics = open_out(fs::path(o.out) / "metrics.log");
  const auto history = pretrain_lm(model, corpus, tc, &metrics, progress(tc.total_steps));
  write_checkpoint(model.parameters(), cfg, fs::path(o.out) / "checkpoint");
  std::cout << fmt::format("pretrained {} steps, final loss {:.4f}\n", history.size(),
                           history.empty() ? 0.0 : history.back().loss);
  return 0;
}

int cmd_train(const Options& o) {
  auto cfg = require_config(o);
  require(o.manifest, "--manifest");
  require(o.out, "--out");
  cfg.train.seed = resolve_seed(o, cfg.train.seed);
  const auto tok = make_tokenizer(cfg);
  MultimodalModel<Scalar> model(cfg.model, cfg.train.seed);
  if (!o.checkpoint.empty()) {
    const auto base = read_checkpoint_manifest(o.checkpoint);
    check_model_compatible(base.config.model, cfg.model, true);
    load_checkpoint(model.parameters(), o.checkpoint, true, is_frozen_name);
  } else {
    std::cerr << "warning: no --checkpoint; the language model starts from random weights\n";
  }
  const auto data = caption_samples<Scalar>(load_manifest(o.manifest, ManifestKind::caption), cfg, tok);
  Trainer<Scalar> trainer(model, cfg.train, TrainMode::multimodal);
  const std::size_t steps = o.steps.value_or(cfg.train.total_steps);
  fs::create_directories(o.out);
  auto metrics = open_out(fs::path(o.out) / "metrics.log");
  train_captions(trainer, std::span<const CaptionSample<Scalar>>(data), steps, &metrics, progress(steps));
  const auto ckpt = fs::path(o.out) / "checkpoint";
  write_checkpoint(model.parameters(), cfg, ckpt);
  write_file_atomic(fs::path(o.out) / "frozen.crc", frozen_crc_listing(read_checkpoint_manifest(ckpt)));
  if (!o.checkpoint.empty()) {
    const auto report = verify_frozen(o.checkpoint, ckpt);
    std::cout << fmt::format("frozen check: {} ({} tensors)\n", report.pass ? "PASS" : "FAIL", report.compared);
    if (!report.pass) return 2;
  }
  std::cout << fmt::format("trained {} steps -> {}\n", steps, ckpt.string());
  return 0;
}

int cmd_finetune(const Options& o) {
  require(o.checkpoint, "--checkpoint");
  require(o.manifest, "--manifest");
  require(o.out, "--out");
  auto model = read_checkpoint<Scalar>(o.checkpoint);
  auto cfg = read_checkpoint_manifest(o.checkpoint).config;
  if (!o.config.empty()) {
    const auto override_cfg = RunConfig::load(o.config);
    check_model_compatible(cfg.model, override_cfg.model);
    cfg.train = override_cfg.train;
  }
  cfg.train.seed = resolve_seed(o, cfg.train.seed);
  if (o.steps) cfg.train.total_steps = *o.steps;
  const auto tok = make_tokenizer(cfg);
  const auto train = entailment_samples<Scalar>(load_manifest(o.manifest, ManifestKind::entailment), cfg, tok);
  std::vector<EntailmentSample<Scalar>> heldout;
  if (!o.heldout.empty()) heldout = entailment_samples<Scalar>(load_manifest(o.heldout, ManifestKind::entailment), cfg, tok);
  fs::create_directories(o.out);
  auto metrics = open_out(fs::path(o.out) / "metrics.log");
  const auto report = finetune_classifier<Scalar>(*model, train, heldout, cfg.train, &metrics);
  write_checkpoint(model->parameters(), cfg, fs::path(o.out) / "checkpoint");
  std::cout << fmt::format("train accuracy {:.4f}", report.train_accuracy);
  if (!heldout.empty()) std::cout << fmt::format(", held-out accuracy {:.4f}", report.heldout_accuracy);
  std::cout << "\n";
  return 0;
}

ImageLoader<Scalar> loader_for(const RunConfig& cfg) {
  return [enc = cfg.model.encoder](const std::string& path) { return load_visual<Scalar>(path, enc); };
}

int cmd_eval_vqa(const Options& o) {
  require(o.checkpoint, "--checkpoint");
  require(o.manifest, "--manifest");
  auto model = read_checkpoint<Scalar>(o.checkpoint);
  const auto cfg = read_checkpoint_manifest(o.checkpoint).config;
  const auto tok = make_tokenizer(cfg);
  const auto items = qa_examples(load_manifest(o.manifest, ManifestKind::qa));
  const auto gen = model_generator<Scalar>(*model, tok, loader_for(cfg));
  std::optional<std::ofstream> records;
  if (!o.out.empty()) records = open_out(o.out);
  const auto report = evaluate_vqa(items, items, {o.shots, resolve_seed(o, cfg.train.seed)}, gen,
                                   records ? &*records : nullptr);
  std::cout << fmt::format("vqa accuracy {:.4f} over {} items ({} failed, {} shots)\n", report.accuracy,
                           report.items.size(), report.failures, o.shots);
  return 0;
}

int cmd_eval_caption(const Options& o) {
  require(o.checkpoint, "--checkpoint");
  require(o.manifest, "--manifest");
  auto model = read_checkpoint<Scalar>(o.checkpoint);
  const auto cfg = read_checkpoint_manifest(o.checkpoint).config;
  const auto tok = make_tokenizer(cfg);
  const auto items = caption_examples(load_manifest(o.manifest, ManifestKind::caption));
  const auto gen = model_generator<Scalar>(*model, tok, loader_for(cfg));
  std::optional<std::ofstream> records;
  if (!o.out.empty()) records = open_out(o.out);
  const std::string prompt = o.prompt_given ? o.prompt : cfg.caption_prefix;
  const auto report = evaluate_captions(items, prompt, gen, records ? &*records : nullptr);
  std::cout << fmt::format("bleu4 {:.4f} over {} images (prompt \"{}\")\n", report.bleu, report.items.size(), prompt);
  return 0;
}

int cmd_eval_entailment(const Options& o) {
  require(o.checkpoint, "--checkpoint");
  require(o.manifest, "--manifest");
  auto model = read_checkpoint<Scalar>(o.checkpoint);
  if (!model->has_classifier()) throw UsageError("checkpoint has no classifier head; run finetune first");
  const auto cfg = read_checkpoint_manifest(o.checkpoint).config;
  const auto data = entailment_samples<Scalar>(load_manifest(o.manifest, ManifestKind::entailment), cfg,
                                               make_tokenizer(cfg));
  std::cout << fmt::format("accuracy {:.4f} over {} items\n", classifier_accuracy<Scalar>(*model, data), data.size());
  return 0;
}

int cmd_generate(const Options& o) {
  require(o.checkpoint, "--checkpoint");
  require(o.image, "--image");
  auto model = read_checkpoint<Scalar>(o.checkpoint);
  const auto cfg = read_checkpoint_manifest(o.checkpoint).config;
  const auto tok = make_tokenizer(cfg);
  const auto gen = model_generator<Scalar>(*model, tok, loader_for(cfg));
  const std::string prompt = o.prompt_given ? o.prompt : cfg.caption_prefix;
  const auto plan = fit_to_context(caption_prompt({"cli", o.image, {}}, prompt), gen, o.max_new);
  std::cout << prompt << gen.generate(plan, o.max_new) << (o.max_new ? "" : "\n");
  std::cout.flush();
  return 0;
}

int cmd_verify(const Options& o) {
  if (o.positional.size() != 2) throw UsageError("verify-frozen takes BASE and AFTER checkpoint directories");
  const auto report = verify_frozen(o.positional[0], o.positional[1]);
  if (report.pass) {
    std::cout << fmt::format("PASS: {} frozen tensors unchanged\n", report.compared);
    return 0;
  }
  std::cout << fmt::format("FAIL: {} of {} frozen tensors changed\n", report.changed.size(), report.compared);
  for (const auto& n : report.changed) std::cout << "  " << n << "\n";
  return 2;
}

int cmd_inspect(const Options& o) {
  if (!o.checkpoint.empty()) {
    const auto m = read_checkpoint_manifest(o.checkpoint);
    std::cout << m.config.render() << "\n";
    std::size_t total = 0;
    for (const auto& t : m.tensors) {
      std::cout << fmt::format("{:<32} {:<14} {} {:08x}\n", t.name, shape_str(t.shape), dtype_name(t.dtype), t.crc);
      total += shape_numel(t.shape);
    }
    std::cout << fmt::format("{} tensors, {} scalars\n", m.tensors.size(), total);
    return 0;
  }
  if (!o.config.empty()) {
    const auto cfg = RunConfig::load(o.config);
    std::cout << cfg.render();
    std::cout << fmt::format("# prefix length {}, adapter parameters {}\n", cfg.model.prefix_length(),
                             count_trainable_params(cfg.model.adapters, cfg.model.lm.d_model, cfg.model.lm.n_layers));
    return 0;
  }
  throw UsageError("inspect needs --checkpoint or --config");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Frozen-LM multimodal prefix training and evaluation"};
  app.require_subcommand(1);
  Options o;

  auto add_common = [&o](CLI::App* sub) {
    sub->add_option("--config", o.config, "run configuration file");
    sub->add_option("--checkpoint", o.checkpoint, "checkpoint directory");
    sub->add_option("--manifest", o.manifest, "JSON-lines dataset manifest");
    sub->add_option("--seed", o.seed, "seed (falls back to MAGMA_SEED, then the config)");
    sub->add_option("--out", o.out, "output path");
  };

  struct Verb {
    const char* name;
    const char* help;
    int (*fn)(const Options&);
  };
  const Verb verbs[] = {
      {"synth", "write a synthetic shape dataset", cmd_synth},
      {"pretrain-lm", "train the language model on caption text", cmd_pretrain},
      {"train", "multimodal training with the language model frozen", cmd_train},
      {"finetune", "train a 3-way entailment head", cmd_finetune},
      {"eval-vqa", "few-shot open-ended VQA evaluation", cmd_eval_vqa},
      {"eval-caption", "caption generation scored with BLEU-4", cmd_eval_caption},
      {"eval-entailment", "accuracy of the entailment head", cmd_eval_entailment},
      {"generate", "greedy caption for one image", cmd_generate},
      {"verify-frozen", "compare frozen tensor CRCs of two checkpoints", cmd_verify},
      {"inspect", "print a checkpoint or config", cmd_inspect},
  };
  std::map<CLI::App*, int (*)(const Options&)> dispatch;
  for (const auto& v : verbs) {
    auto* sub = app.add_subcommand(v.name, v.help);
    add_common(sub);
    dispatch[sub] = v.fn;
    const std::string name = v.name;
    if (name == "synth") {
      sub->add_option("--kind", o.kind, "caption, qa or entailment");
      sub->add_option("--count", o.count, "number of records");
    }
    if (name == "pretrain-lm" || name == "train" || name == "finetune")
      sub->add_option("--steps", o.steps, "number of optimizer steps");
    if (name == "finetune") sub->add_option("--heldout", o.heldout, "held-out entailment manifest");
    if (name == "eval-vqa") sub->add_option("--shots", o.shots, "number of in-context examples");
    if (name == "eval-caption" || name == "generate")
      sub->add_option("--prompt", o.prompt, "text prompt after the image (default: config caption_prefix)");
    if (name == "generate") {
      sub->add_option("--image", o.image, "PPM image or .mgt feature grid");
      sub->add_option("--max-new", o.max_new, "maximum generated tokens");
    }
    if (name == "verify-frozen") sub->add_option("checkpoints", o.positional, "BASE AFTER")->expected(2);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    for (auto* sub : app.get_subcommands()) {
      for (auto* opt : sub->get_options())
        if (opt->get_name() == "--prompt" && opt->count() > 0) o.prompt_given = true;
      return dispatch.at(sub)(o);
    }
    return 1;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const ShapeError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
