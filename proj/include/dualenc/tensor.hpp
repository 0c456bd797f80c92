#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace dualenc::ad {

using Shape = std::vector<std::int64_t>;

inline std::int64_t numel(const Shape& s) {
  std::int64_t n = 1;
  for (auto e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ", ";
    os << s[i];
  }
  os << ']';
  return os.str();
}

// Screens op outputs for NaN/Inf when enabled (default: debug builds only).
inline bool& finite_checks() {
#ifdef NDEBUG
  static bool on = false;
#else
  static bool on = true;
#endif
  return on;
}

// Dense row-major tensor. Carries its own gradient accumulator iff
// requires_grad is set; grad always has the same extent as data.
template <class T>
struct TensorT {
  Shape shape;
  std::vector<T> data;
  bool requires_grad = false;
  std::vector<T> grad;

  TensorT() = default;
  TensorT(Shape s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    if (numel(shape) != static_cast<std::int64_t>(data.size()))
      throw std::invalid_argument("tensor: shape " + shape_str(shape) +
                                  " does not match data length " + std::to_string(data.size()));
  }

  static TensorT zeros(Shape s) {
    auto n = numel(s);
    return TensorT(std::move(s), std::vector<T>(static_cast<std::size_t>(n), T(0)));
  }

  static TensorT full(Shape s, T v) {
    auto n = numel(s);
    return TensorT(std::move(s), std::vector<T>(static_cast<std::size_t>(n), v));
  }

  static TensorT scalar(T v) { return TensorT({1}, {v}); }

  std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }
  std::int64_t rank() const { return static_cast<std::int64_t>(shape.size()); }
  std::int64_t dim(std::size_t i) const { return shape.at(i); }

  void set_requires_grad(bool on) {
    requires_grad = on;
    grad.assign(on ? data.size() : 0, T(0));
  }

  void zero_grad() { std::fill(grad.begin(), grad.end(), T(0)); }
};

using Tensor = TensorT<float>;

template <class T>
inline void check_finite(const TensorT<T>& t, const char* op) {
  if (!finite_checks()) return;
  for (T v : t.data)
    if (!std::isfinite(static_cast<double>(v)))
      throw std::runtime_error(std::string(op) + ": non-finite value in result");
}

}  // namespace dualenc::ad
