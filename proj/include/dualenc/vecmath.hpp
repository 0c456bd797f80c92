#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace dualenc {

// Eight independent accumulator lanes so the reduction vectorizes; a single
// running sum would serialize on the loop-carried dependency.
inline float dot(const float* a, const float* b, std::int64_t n) {
  float lane[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  std::int64_t i = 0;
  for (; i + 8 <= n; i += 8)
    for (int j = 0; j < 8; ++j) lane[j] += a[i + j] * b[i + j];
  float acc = ((lane[0] + lane[1]) + (lane[2] + lane[3])) + ((lane[4] + lane[5]) + (lane[6] + lane[7]));
  for (; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

inline void l2_normalize_inplace(float* v, std::int64_t n) {
  double acc = 0.0;
  for (std::int64_t i = 0; i < n; ++i) acc += static_cast<double>(v[i]) * v[i];
  const double norm = std::sqrt(acc);
  if (!(norm > 1e-12)) throw std::runtime_error("l2_normalize: zero vector");
  for (std::int64_t i = 0; i < n; ++i) v[i] = static_cast<float>(v[i] / norm);
}

inline void l2_normalize_inplace(std::vector<float>& v) {
  l2_normalize_inplace(v.data(), static_cast<std::int64_t>(v.size()));
}

}  // namespace dualenc
