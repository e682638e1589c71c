#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "amba/ops.hpp"
#include "amba/tensor.hpp"

namespace amba::test {

template <typename T>
Tensor<T> random_tensor(const Shape& shape, std::mt19937_64& rng, double lo = -1.0,
                        double hi = 1.0, bool requires_grad = false) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Vec<T> v(numel(shape));
  for (Index i = 0; i < v.size(); ++i) v[i] = static_cast<T>(dist(rng));
  return Tensor<T>(shape, std::move(v), requires_grad);
}

inline double max_abs_diff(const Vec<double>& a, const Vec<double>& b) {
  return (a - b).abs().maxCoeff();
}

// Norm-wise relative error: ||a - b||_inf / max(||b||_inf, floor).
inline double rel_err(const Vec<double>& a, const Vec<double>& b, double floor = 1e-6) {
  return (a - b).abs().maxCoeff() / std::max(b.abs().maxCoeff(), floor);
}

// Central finite differences of a scalar function of `wrt`, perturbing the
// tensor's values in place and restoring them.
inline Vec<double> numeric_grad(const std::function<double()>& f, Tensor<double>& wrt,
                                double h = 1e-5) {
  Vec<double> g(wrt.size());
  for (Index i = 0; i < wrt.size(); ++i) {
    const double orig = wrt.mutable_values()[i];
    wrt.mutable_values()[i] = orig + h;
    const double up = f();
    wrt.mutable_values()[i] = orig - h;
    const double down = f();
    wrt.mutable_values()[i] = orig;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

// Runs `build` (returning a scalar loss) under the tape, returns analytic
// gradients for `wrt`, and compares each with finite differences.
inline double worst_grad_error(const std::function<Tensor<double>()>& build,
                               std::vector<Tensor<double>> wrt, double h = 1e-5) {
  auto& tape = Tape<double>::current();
  tape.reset();
  for (auto& w : wrt) {
    w.set_requires_grad(true);
    w.zero_grad();
  }
  Tensor<double> loss = build();
  backward(loss);
  tape.reset();
  std::vector<Vec<double>> analytic;
  for (auto& w : wrt) analytic.push_back(w.has_grad() ? w.grad() : Vec<double>::Zero(w.size()));
  double worst = 0;
  auto f = [&] {
    NoGradGuard guard;
    return build().item();
  };
  for (std::size_t i = 0; i < wrt.size(); ++i) {
    const Vec<double> num = numeric_grad(f, wrt[i], h);
    worst = std::max(worst, rel_err(analytic[i], num));
  }
  return worst;
}

// Fixed random weighting so the loss exercises every output element.
inline Tensor<double> weighted_sum(const Tensor<double>& y, std::uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  Tensor<double> w = random_tensor<double>(y.shape(), rng);
  return sum(mul(y, w));
}

}  // namespace amba::test
