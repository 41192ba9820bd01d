#include "magma/adapters.hpp"

#include <cmath>
#include <sstream>

#include <fmt/format.h>

#include "magma/ops.hpp"

namespace magma {

namespace {

std::optional<std::size_t> parse_factor(const std::string& field, std::string_view what) {
  if (field == "--" || field == "-") return std::nullopt;
  std::size_t pos = 0;
  unsigned long value = 0;
  try {
    value = std::stoul(field, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != field.size() || value == 0)
    throw UsageError(fmt::format("adapter {} downsample '{}' must be a positive integer or --", what, field));
  return static_cast<std::size_t>(value);
}

AdapterType parse_type(const std::string& field) {
  if (field == "s" || field == "sequential") return AdapterType::sequential;
  if (field == "p" || field == "parallel") return AdapterType::parallel;
  throw UsageError(fmt::format("adapter type '{}' must be s or p", field));
}

LambdaMode parse_lambda(const std::string& field) {
  if (field == "1") return LambdaMode::fixed;
  if (field == "t" || field == "trained") return LambdaMode::trained;
  throw UsageError(fmt::format("adapter lambda '{}' must be 1 or t", field));
}

}  // namespace

void AdapterConfig::validate(std::size_t d_model) const {
  if (!attn_downsample && !ff_downsample) throw UsageError("adapter config must adapt attention, feed-forward or both");
  for (auto [factor, where] : {std::pair{attn_downsample, "attn"}, std::pair{ff_downsample, "ff"}}) {
    if (!factor) continue;
    if (*factor == 0 || d_model % *factor != 0)
      throw UsageError(fmt::format("{} downsample factor {} does not divide d_model {}", where, *factor, d_model));
  }
}

std::string AdapterConfig::notation() const {
  auto factor = [](const std::optional<std::size_t>& f) { return f ? std::to_string(*f) : std::string("--"); };
  return fmt::format("{} {} {} {}", type == AdapterType::sequential ? "s" : "p", lambda == LambdaMode::fixed ? "1" : "t",
                     factor(attn_downsample), factor(ff_downsample));
}

std::optional<AdapterConfig> AdapterConfig::parse(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::vector<std::string> fields;
  for (std::string f; in >> f;) fields.push_back(f);
  if (fields.empty()) throw UsageError("empty adapter specification");
  if (fields.size() == 1 && (fields[0] == "--" || fields[0] == "none")) return std::nullopt;

  AdapterConfig cfg;
  if (fields[0].find('=') != std::string::npos) {
    bool seen_type = false, seen_lambda = false;
    for (const auto& f : fields) {
      auto eq = f.find('=');
      if (eq == std::string::npos) throw UsageError(fmt::format("malformed adapter field '{}'", f));
      auto key = f.substr(0, eq), value = f.substr(eq + 1);
      if (key == "type") {
        cfg.type = parse_type(value);
        seen_type = true;
      } else if (key == "lambda") {
        cfg.lambda = parse_lambda(value);
        seen_lambda = true;
      } else if (key == "attn") {
        cfg.attn_downsample = parse_factor(value, "attn");
      } else if (key == "ff") {
        cfg.ff_downsample = parse_factor(value, "ff");
      } else {
        throw UsageError(fmt::format("unknown adapter field '{}'", key));
      }
    }
    if (!seen_type || !seen_lambda) throw UsageError("adapter specification needs type= and lambda=");
  } else {
    if (fields.size() != 4)
      throw UsageError(fmt::format("adapter notation '{}' needs 4 fields: type lambda attn ff", text));
    cfg.type = parse_type(fields[0]);
    cfg.lambda = parse_lambda(fields[1]);
    cfg.attn_downsample = parse_factor(fields[2], "attn");
    cfg.ff_downsample = parse_factor(fields[3], "ff");
  }
  if (!cfg.attn_downsample && !cfg.ff_downsample) return std::nullopt;
  return cfg;
}

template <typename T>
AdapterParams<T> make_adapter(std::size_t d_model, std::size_t downsample, LambdaMode lambda, std::mt19937_64& rng) {
  if (downsample == 0 || d_model % downsample != 0)
    throw UsageError(fmt::format("downsample factor {} does not divide d_model {}", downsample, d_model));
  const std::size_t bottleneck = d_model / downsample;
  AdapterParams<T> a;
  a.down = uniform_tensor<T>({bottleneck, d_model}, 1.0 / std::sqrt(static_cast<double>(d_model)), rng);
  a.up = Tensor<T>::zeros({d_model, bottleneck});
  if (lambda == LambdaMode::trained) a.lambda = Tensor<T>::scalar(T(1));
  return a;
}

template <typename T>
Tensor<T> adapter_branch(const Tensor<T>& h, const AdapterParams<T>& a) {
  if (h.dim(-1) != a.width())
    throw ShapeError(fmt::format("adapter expects width {}, input has {}", a.width(), h.dim(-1)));
  if (a.up.dim(0) != a.width() || a.up.dim(1) != a.bottleneck())
    throw ShapeError(fmt::format("adapter W_up {} does not match W_down {}", shape_str(a.up.shape()),
                                 shape_str(a.down.shape())));
  auto out = ops::linear(ops::relu(ops::linear(h, a.down)), a.up);
  if (a.lambda.defined()) out = ops::mul_scalar(out, a.lambda);
  return out;
}

template <typename T>
Tensor<T> adapter_forward(const Tensor<T>& h, const AdapterParams<T>& a) {
  return ops::add(h, adapter_branch(h, a));
}

template <typename T>
BlockFn<T> adapt_block(BlockFn<T> block, AdapterParams<T> a, AdapterType type) {
  if (type == AdapterType::sequential) {
    return [block = std::move(block), a = std::move(a)](const Tensor<T>& h) {
      auto b = block(h);
      return ops::add(b, adapter_forward(b, a));
    };
  }
  return [block = std::move(block), a = std::move(a)](const Tensor<T>& h) {
    return ops::add(block(h), adapter_forward(h, a));
  };
}

template <typename T>
Tensor<T> adapt_branch(const Tensor<T>& branch_out, const Tensor<T>& branch_in, const AdapterParams<T>& a,
                       AdapterType type) {
  const auto& source = type == AdapterType::sequential ? branch_out : branch_in;
  return ops::add(branch_out, adapter_branch(source, a));
}

std::size_t count_trainable_params(const std::optional<AdapterConfig>& config, std::size_t d_model,
                                   std::size_t layers) {
  if (!config) return 0;
  config->validate(d_model);
  std::size_t per_layer = 0;
  for (const auto& factor : {config->attn_downsample, config->ff_downsample}) {
    if (!factor) continue;
    const std::size_t bottleneck = d_model / *factor;
    per_layer += 2 * d_model * bottleneck;
    if (config->lambda == LambdaMode::trained) per_layer += 1;
  }
  return per_layer * layers;
}

template <typename T>
AdapterSet<T>::AdapterSet(const AdapterConfig& config, std::size_t d_model, std::size_t layers,
                          ParameterStore<T>& store, std::mt19937_64& rng)
    : config_(config), layers_(layers) {
  config_.validate(d_model);
  auto register_adapter = [&](std::size_t layer, const char* where, std::size_t factor) {
    auto a = make_adapter<T>(d_model, factor, config_.lambda, rng);
    const auto base = fmt::format("adapter.{}.{}", layer, where);
    a.down.set_requires_grad(true);
    a.up.set_requires_grad(true);
    store.add(base + ".down", a.down);
    store.add(base + ".up", a.up);
    if (a.lambda.defined()) {
      a.lambda.set_requires_grad(true);
      store.add(base + ".lambda", a.lambda);
    }
    return a;
  };
  for (std::size_t i = 0; i < layers; ++i) {
    if (config_.attn_downsample) layers_[i].attn = register_adapter(i, "attn", *config_.attn_downsample);
    if (config_.ff_downsample) layers_[i].ff = register_adapter(i, "ff", *config_.ff_downsample);
  }
}

#define MAGMA_INSTANTIATE_ADAPTERS(T)                                                                         \
  template AdapterParams<T> make_adapter<T>(std::size_t, std::size_t, LambdaMode, std::mt19937_64&);         \
  template Tensor<T> adapter_forward(const Tensor<T>&, const AdapterParams<T>&);                             \
  template Tensor<T> adapter_branch(const Tensor<T>&, const AdapterParams<T>&);                              \
  template BlockFn<T> adapt_block(BlockFn<T>, AdapterParams<T>, AdapterType);                                \
  template Tensor<T> adapt_branch(const Tensor<T>&, const Tensor<T>&, const AdapterParams<T>&, AdapterType); \
  template class AdapterSet<T>;

MAGMA_INSTANTIATE_ADAPTERS(float)
MAGMA_INSTANTIATE_ADAPTERS(double)

}  // namespace magma
