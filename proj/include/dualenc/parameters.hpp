#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <random>
#include <string>

#include "dualenc/tensor.hpp"

namespace dualenc::ad {

// Ordered name -> tensor map of trainable parameters. Iteration is
// lexicographic, so optimizer state and checkpoint blobs line up across runs.
template <class T>
class ParameterSetT {
 public:
  using Map = std::map<std::string, TensorT<T>>;

  TensorT<T>& create(const std::string& name, Shape shape,
                     const std::function<T(std::mt19937_64&)>& init, std::mt19937_64& rng) {
    if (items_.count(name))
      throw std::logic_error("parameter '" + name + "' already exists");
    TensorT<T> t = TensorT<T>::zeros(std::move(shape));
    for (auto& v : t.data) v = init(rng);
    t.set_requires_grad(true);
    return items_.emplace(name, std::move(t)).first->second;
  }

  TensorT<T>& at(const std::string& name) {
    auto it = items_.find(name);
    if (it == items_.end()) throw std::out_of_range("no parameter named '" + name + "'");
    return it->second;
  }
  const TensorT<T>& at(const std::string& name) const {
    auto it = items_.find(name);
    if (it == items_.end()) throw std::out_of_range("no parameter named '" + name + "'");
    return it->second;
  }

  bool contains(const std::string& name) const { return items_.count(name) != 0; }
  std::size_t count() const { return items_.size(); }

  std::int64_t total_size() const {
    std::int64_t n = 0;
    for (const auto& [_, t] : items_) n += t.size();
    return n;
  }

  void zero_grads() {
    for (auto& [_, t] : items_) t.zero_grad();
  }

  typename Map::iterator begin() { return items_.begin(); }
  typename Map::iterator end() { return items_.end(); }
  typename Map::const_iterator begin() const { return items_.begin(); }
  typename Map::const_iterator end() const { return items_.end(); }

 private:
  Map items_;
};

using ParameterSet = ParameterSetT<float>;

namespace init {

// uniform(-1/sqrt(fan_in), 1/sqrt(fan_in))
template <class T>
std::function<T(std::mt19937_64&)> fan_in_uniform(std::int64_t fan_in) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  return [bound](std::mt19937_64& rng) {
    return static_cast<T>(std::uniform_real_distribution<double>(-bound, bound)(rng));
  };
}

template <class T>
std::function<T(std::mt19937_64&)> normal(double mean, double stddev) {
  return [mean, stddev](std::mt19937_64& rng) {
    return static_cast<T>(std::normal_distribution<double>(mean, stddev)(rng));
  };
}

template <class T>
std::function<T(std::mt19937_64&)> constant(T v) {
  return [v](std::mt19937_64&) { return v; };
}

}  // namespace init

}  // namespace dualenc::ad
