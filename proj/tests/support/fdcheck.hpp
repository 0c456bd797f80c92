#pragma once

#include <random>

#include "dualenc/gradcheck.hpp"
#include "dualenc/ops.hpp"

namespace testsupport {

namespace ad = dualenc::ad;

// Checks d sum(R .* f(params)) / d params against central differences, where
// R is a fixed random projection so no gradient component can cancel out.
template <class BuildOut>
ad::GradCheckReport fd_check_op(ad::ParameterSetT<double>& params, BuildOut build_out,
                                std::uint64_t seed, double h = 1e-5, double tol = 1e-4) {
  ad::Shape out_shape;
  {
    ad::TapeT<double> probe;
    out_shape = build_out(probe).shape();
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  ad::TensorT<double> weights = ad::TensorT<double>::zeros(out_shape);
  for (auto& v : weights.data) v = u(rng);

  auto loss = [&](ad::TapeT<double>& tape) {
    return ad::sum_all(ad::mul(build_out(tape), tape.constant(weights)));
  };
  auto forward = [&]() {
    ad::TapeT<double> tape;
    return loss(tape).scalar();
  };
  auto compute_grads = [&]() {
    params.zero_grads();
    ad::TapeT<double> tape;
    auto l = loss(tape);
    tape.backward(l);
  };
  return ad::finite_difference_check<double>(forward, compute_grads, params, h, tol);
}

// Scalar-loss variant for graphs that already end in a scalar.
template <class BuildLoss>
ad::GradCheckReport fd_check_scalar(ad::ParameterSetT<double>& params, BuildLoss build_loss,
                                    double h = 1e-5, double tol = 1e-4) {
  auto forward = [&]() {
    ad::TapeT<double> tape;
    return build_loss(tape).scalar();
  };
  auto compute_grads = [&]() {
    params.zero_grads();
    ad::TapeT<double> tape;
    auto l = build_loss(tape);
    tape.backward(l);
  };
  return ad::finite_difference_check<double>(forward, compute_grads, params, h, tol);
}

inline ad::TensorT<double> random_tensor(ad::Shape shape, std::mt19937_64& rng, double lo = -1.0,
                                         double hi = 1.0) {
  auto t = ad::TensorT<double>::zeros(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : t.data) v = u(rng);
  return t;
}

}  // namespace testsupport
