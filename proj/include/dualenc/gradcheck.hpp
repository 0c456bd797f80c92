#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "dualenc/parameters.hpp"

namespace dualenc::ad {

struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0.0;
  bool pass = true;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_err = 0.0;
  bool pass = true;

  const GradCheckEntry& entry(const std::string& name) const {
    for (const auto& e : entries)
      if (e.name == name) return e;
    throw std::out_of_range("no gradcheck entry for '" + name + "'");
  }
};

// Central-difference verification of reverse-mode gradients: every parameter
// element is displaced by +-h and the analytic gradient compared against
// (f(p+h) - f(p-h)) / 2h. Meant to run with T = double.
//
// forward      : pure loss evaluation under the current parameter values
// compute_grads: zeroes grads, runs forward + backward once
template <class T>
GradCheckReport finite_difference_check(const std::function<T()>& forward,
                                        const std::function<void()>& compute_grads,
                                        ParameterSetT<T>& params, double h, double tol) {
  const T v1 = forward();
  const T v2 = forward();
  if (!(v1 == v2))
    throw std::runtime_error("finite_difference_check: forward pass is not deterministic (" +
                             std::to_string(static_cast<double>(v1)) + " vs " +
                             std::to_string(static_cast<double>(v2)) + ")");

  compute_grads();
  std::map<std::string, std::vector<T>> analytic;
  for (const auto& [name, t] : params) analytic[name] = t.grad;

  GradCheckReport report;
  for (auto& [name, t] : params) {
    GradCheckEntry entry{name, 0.0, true};
    for (std::size_t i = 0; i < t.data.size(); ++i) {
      const T saved = t.data[i];
      t.data[i] = saved + static_cast<T>(h);
      const double fp = static_cast<double>(forward());
      t.data[i] = saved - static_cast<T>(h);
      const double fm = static_cast<double>(forward());
      t.data[i] = saved;
      const double fd = (fp - fm) / (2.0 * h);
      const double an = static_cast<double>(analytic[name][i]);
      const double denom = std::max({std::abs(an), std::abs(fd), 1e-4});
      const double rel = std::abs(an - fd) / denom;
      entry.max_rel_err = std::max(entry.max_rel_err, rel);
    }
    entry.pass = entry.max_rel_err < tol;
    report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
    report.pass = report.pass && entry.pass;
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace dualenc::ad
