#pragma once

#include <map>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <fmt/format.h>

#include "magma/tensor.hpp"

namespace magma {

/// Named parameter tensors, iterated in name order. Modules keep handles to
/// the tensors they register, so in-place updates through the store are seen
/// by every module.
template <typename T>
class ParameterStore {
 public:
  using Map = std::map<std::string, Tensor<T>, std::less<>>;

  Tensor<T> add(const std::string& name, Tensor<T> tensor) {
    if (tensors_.contains(name)) throw Error(fmt::format("parameter '{}' registered twice", name));
    tensors_.emplace(name, tensor);
    return tensor;
  }

  bool contains(std::string_view name) const { return tensors_.find(name) != tensors_.end(); }

  const Tensor<T>& get(std::string_view name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw Error(fmt::format("unknown parameter '{}'", name));
    return it->second;
  }

  Tensor<T>& get(std::string_view name) {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw Error(fmt::format("unknown parameter '{}'", name));
    return it->second;
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& [name, _] : tensors_) out.push_back(name);
    return out;
  }

  std::size_t size() const { return tensors_.size(); }

  std::size_t numel() const {
    std::size_t n = 0;
    for (const auto& [_, t] : tensors_) n += t.numel();
    return n;
  }

  void zero_grad() {
    for (auto& [_, t] : tensors_) t.zero_grad();
  }

  typename Map::const_iterator begin() const { return tensors_.begin(); }
  typename Map::const_iterator end() const { return tensors_.end(); }
  typename Map::iterator begin() { return tensors_.begin(); }
  typename Map::iterator end() { return tensors_.end(); }

 private:
  Map tensors_;
};

template <typename T>
Tensor<T> uniform_tensor(Shape shape, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<T> values(shape_numel(shape));
  for (auto& v : values) v = static_cast<T>(dist(rng));
  return Tensor<T>(std::move(shape), std::move(values));
}

template <typename T>
Tensor<T> normal_tensor(Shape shape, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<T> values(shape_numel(shape));
  for (auto& v : values) v = static_cast<T>(dist(rng));
  return Tensor<T>(std::move(shape), std::move(values));
}

}  // namespace magma
