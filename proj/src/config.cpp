#include "magma/config.hpp"

#include <charconv>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "magma/io.hpp"

namespace magma {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::size_t parse_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    throw UsageError(fmt::format("{}: expected a non-negative integer, got '{}'", key, v));
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    throw UsageError(fmt::format("{}: expected a number, got '{}'", key, v));
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw UsageError(fmt::format("{}: expected true or false, got '{}'", key, v));
}

std::string parse_string(const std::string& v) {
  if (v.size() >= 2 && v.front() == '"' && v.back() == '"') return v.substr(1, v.size() - 2);
  return v;
}

std::vector<std::size_t> parse_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  std::istringstream in(v);
  for (std::string item; in >> item;) out.push_back(parse_size(key, item));
  if (out.empty()) throw UsageError(fmt::format("{}: empty list", key));
  return out;
}

using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"d_model", [](RunConfig& c, auto& k, auto& v) { c.model.lm.d_model = parse_size(k, v); }},
      {"n_layers", [](RunConfig& c, auto& k, auto& v) { c.model.lm.n_layers = parse_size(k, v); }},
      {"n_heads", [](RunConfig& c, auto& k, auto& v) { c.model.lm.n_heads = parse_size(k, v); }},
      {"vocab", [](RunConfig& c, auto& k, auto& v) { c.model.lm.vocab = parse_size(k, v); }},
      {"context", [](RunConfig& c, auto& k, auto& v) { c.model.lm.context = parse_size(k, v); }},
      {"bos", [](RunConfig& c, auto& k, auto& v) { c.model.lm.bos = parse_bool(k, v); }},
      {"encoder",
       [](RunConfig& c, auto& k, auto& v) {
         if (v == "conv") c.model.encoder.kind = EncoderConfig::Kind::conv;
         else if (v == "passthrough") c.model.encoder.kind = EncoderConfig::Kind::passthrough;
         else throw UsageError(fmt::format("{}: expected conv or passthrough, got '{}'", k, v));
       }},
      {"image_size", [](RunConfig& c, auto& k, auto& v) { c.model.encoder.image_size = parse_size(k, v); }},
      {"encoder_channels", [](RunConfig& c, auto& k, auto& v) { c.model.encoder.channels = parse_list(k, v); }},
      {"grid_size", [](RunConfig& c, auto& k, auto& v) { c.model.encoder.grid_size = parse_size(k, v); }},
      {"grid_channels", [](RunConfig& c, auto& k, auto& v) { c.model.encoder.grid_channels = parse_size(k, v); }},
      {"prefix_mode",
       [](RunConfig& c, auto& k, auto& v) {
         if (v == "grid") c.model.prefix.mode = PrefixConfig::Mode::grid;
         else if (v == "pooled") c.model.prefix.mode = PrefixConfig::Mode::pooled;
         else throw UsageError(fmt::format("{}: expected grid or pooled, got '{}'", k, v));
       }},
      {"prefix_length", [](RunConfig& c, auto& k, auto& v) { c.model.prefix.pooled_length = parse_size(k, v); }},
      {"dropout", [](RunConfig& c, auto& k, auto& v) { c.model.prefix.dropout = parse_double(k, v); }},
      {"adapters", [](RunConfig& c, auto&, auto& v) { c.model.adapters = AdapterConfig::parse(v); }},
      {"batch_size", [](RunConfig& c, auto& k, auto& v) { c.train.batch_size = parse_size(k, v); }},
      {"lr_encoder", [](RunConfig& c, auto& k, auto& v) { c.train.lr_encoder = parse_double(k, v); }},
      {"lr_head", [](RunConfig& c, auto& k, auto& v) { c.train.lr_head = parse_double(k, v); }},
      {"total_steps", [](RunConfig& c, auto& k, auto& v) { c.train.total_steps = parse_size(k, v); }},
      {"seed", [](RunConfig& c, auto& k, auto& v) { c.train.seed = parse_size(k, v); }},
      {"weight_decay", [](RunConfig& c, auto& k, auto& v) { c.train.weight_decay = parse_double(k, v); }},
      {"caption_prefix", [](RunConfig& c, auto&, auto& v) { c.caption_prefix = parse_string(v); }},
      {"pretrain_steps", [](RunConfig& c, auto& k, auto& v) { c.pretrain_steps = parse_size(k, v); }},
      {"pretrain_lr", [](RunConfig& c, auto& k, auto& v) { c.pretrain_lr = parse_double(k, v); }},
      {"vocab_file", [](RunConfig& c, auto&, auto& v) { c.vocab_file = parse_string(v); }},
  };
  return table;
}

}  // namespace

RunConfig RunConfig::parse(std::string_view text) {
  RunConfig cfg;
  std::set<std::string> seen;
  std::istringstream in{std::string(text)};
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    // '#' inside a quoted value is literal.
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') quoted = !quoted;
      if (line[i] == '#' && !quoted) {
        line.resize(i);
        break;
      }
    }
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw UsageError(fmt::format("config line {}: expected 'key = value'", n));
    const auto key = trim(std::string_view(line).substr(0, eq));
    const auto value = trim(std::string_view(line).substr(eq + 1));
    const auto it = setters().find(key);
    if (it == setters().end()) throw UsageError(fmt::format("config line {}: unknown key '{}'", n, key));
    if (!seen.insert(key).second) throw UsageError(fmt::format("config line {}: duplicate key '{}'", n, key));
    try {
      it->second(cfg, key, value);
    } catch (const UsageError& e) {
      throw UsageError(fmt::format("config line {}: {}", n, e.what()));
    }
  }
  cfg.model.validate();
  return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const DataError&) {
    throw UsageError(fmt::format("cannot read config {}", path.string()));
  }
  return parse(text);
}

std::string RunConfig::render() const {
  const auto& lm = model.lm;
  const auto& enc = model.encoder;
  std::string out;
  auto line = [&out](std::string_view key, const auto& value) { out += fmt::format("{} = {}\n", key, value); };
  line("d_model", lm.d_model);
  line("n_layers", lm.n_layers);
  line("n_heads", lm.n_heads);
  line("vocab", lm.vocab);
  line("context", lm.context);
  line("bos", lm.bos ? "true" : "false");
  line("encoder", enc.kind == EncoderConfig::Kind::conv ? "conv" : "passthrough");
  line("image_size", enc.image_size);
  line("encoder_channels", fmt::format("{}", fmt::join(enc.channels, " ")));
  line("grid_size", enc.grid_size);
  line("grid_channels", enc.grid_channels);
  line("prefix_mode", model.prefix.mode == PrefixConfig::Mode::grid ? "grid" : "pooled");
  line("prefix_length", model.prefix.pooled_length);
  line("dropout", model.prefix.dropout);
  line("adapters", model.adapters ? model.adapters->notation() : std::string("--"));
  line("batch_size", train.batch_size);
  line("lr_encoder", train.lr_encoder);
  line("lr_head", train.lr_head);
  line("total_steps", train.total_steps);
  line("seed", train.seed);
  line("weight_decay", train.weight_decay);
  line("caption_prefix", fmt::format("\"{}\"", caption_prefix));
  line("pretrain_steps", pretrain_steps);
  line("pretrain_lr", pretrain_lr);
  line("vocab_file", fmt::format("\"{}\"", vocab_file));
  return out;
}

void check_model_compatible(const ModelConfig& stored, const ModelConfig& requested, bool lm_only) {
  auto field = [](std::string_view name, const auto& have, const auto& want) {
    if (!(have == want))
      throw DataError(fmt::format("{}: checkpoint has {}, config has {}", name, have, want));
  };
  field("d_model", stored.lm.d_model, requested.lm.d_model);
  field("n_layers", stored.lm.n_layers, requested.lm.n_layers);
  field("n_heads", stored.lm.n_heads, requested.lm.n_heads);
  field("vocab", stored.lm.vocab, requested.lm.vocab);
  field("context", stored.lm.context, requested.lm.context);
  field("bos", stored.lm.bos, requested.lm.bos);
  if (lm_only) return;
  field("encoder", static_cast<int>(stored.encoder.kind), static_cast<int>(requested.encoder.kind));
  field("image_size", stored.encoder.image_size, requested.encoder.image_size);
  field("encoder_channels", fmt::format("{}", fmt::join(stored.encoder.channels, " ")),
        fmt::format("{}", fmt::join(requested.encoder.channels, " ")));
  field("grid_size", stored.encoder.grid_size, requested.encoder.grid_size);
  field("grid_channels", stored.encoder.grid_channels, requested.encoder.grid_channels);
  field("prefix_mode", static_cast<int>(stored.prefix.mode), static_cast<int>(requested.prefix.mode));
  field("prefix_length", stored.prefix.pooled_length, requested.prefix.pooled_length);
  field("adapters", stored.adapters ? stored.adapters->notation() : std::string("--"),
        requested.adapters ? requested.adapters->notation() : std::string("--"));
}

}  // namespace magma
