#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "eslab/tensor.hpp"

namespace testutil {

// Central-difference gradient of a scalar-valued forward pass with respect
// to every element of `leaf`. The forward closure must re-run the whole
// computation from current tensor contents; this keeps the oracle fully
// independent of the tape.
inline std::vector<double> fd_grad(eslab::Tensor leaf, const std::function<double()>& forward,
                                   double h = 1e-5) {
  std::vector<double> g(leaf.data().size());
  for (size_t i = 0; i < g.size(); ++i) {
    const double orig = leaf.data()[i];
    leaf.data()[i] = orig + h;
    const double fp = forward();
    leaf.data()[i] = orig - h;
    const double fm = forward();
    leaf.data()[i] = orig;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

// |a-b| <= tol * max(1, |a|, |b|), elementwise.
inline bool close_rel(const std::vector<double>& a, const std::vector<double>& b,
                      double tol = 1e-4) {
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i) {
    const double scale = std::max({1.0, std::fabs(a[i]), std::fabs(b[i])});
    if (std::fabs(a[i] - b[i]) > tol * scale) return false;
  }
  return true;
}

inline double max_rel_err(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double scale = std::max({1.0, std::fabs(a[i]), std::fabs(b[i])});
    worst = std::max(worst, std::fabs(a[i] - b[i]) / scale);
  }
  return worst;
}

}  // namespace testutil
