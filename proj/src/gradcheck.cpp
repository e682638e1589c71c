/* Copyright 2026 The AudioMamba Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "amba/gradcheck.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <random>

#include "amba/errors.hpp"
#include "amba/model.hpp"
#include "amba/ops.hpp"
#include "amba/selective_scan.hpp"

namespace amba {
namespace {

constexpr double kStep = 1e-3;

Tensor<double> random_tensor(const Shape& shape, std::mt19937_64& rng, double lo = -1.0,
                             double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Vec<double> v(numel(shape));
  for (Index i = 0; i < v.size(); ++i) v[i] = dist(rng);
  return Tensor<double>(shape, std::move(v));
}

// Fixed random projection to a scalar so every output element matters.
Tensor<double> project(const Tensor<double>& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sum(mul(y, random_tensor(y.shape(), rng)));
}

// Moves parameters away from their structured initial values (identity
// norms, zero biases) so no branch sits at a degenerate point.
void jitter(std::vector<Tensor<double>>& params, std::mt19937_64& rng, double amp) {
  std::uniform_real_distribution<double> u(-amp, amp);
  for (auto& t : params) {
    for (Index i = 0; i < t.size(); ++i) t.mutable_values()[i] += u(rng);
  }
}

// The default step-size init keeps delta near 1e-3, where the decay barely
// moves and A_log gradients sit at roundoff level. Checks use delta = O(1).
void widen_steps(const std::string& name, Tensor<double>& t, std::mt19937_64& rng) {
  if (name.size() < 10 || name.compare(name.size() - 10, 10, "delta_bias") != 0) return;
  std::uniform_real_distribution<double> u(-1.0, 0.5);
  for (Index i = 0; i < t.size(); ++i) t.mutable_values()[i] = u(rng);
}

template <typename Module>
std::vector<Tensor<double>> collect(Module& m, std::mt19937_64& rng) {
  std::vector<Tensor<double>> out;
  m.visit("", [&](const std::string& name, Tensor<double>& t) {
    widen_steps(name, t, rng);
    out.push_back(t);
  });
  return out;
}

}  // namespace

GradcheckScope parse_gradcheck_scope(const std::string& name) {
  if (name == "scan") return GradcheckScope::kScan;
  if (name == "ss2d") return GradcheckScope::kSs2d;
  if (name == "block") return GradcheckScope::kBlock;
  if (name == "model") return GradcheckScope::kModel;
  if (name == "conv") return GradcheckScope::kConv;
  if (name == "layernorm") return GradcheckScope::kLayerNorm;
  throw ConfigError("unknown gradcheck scope '" + name +
                    "' (expected scan, ss2d, block, model, conv or layernorm)");
}

std::string scope_name(GradcheckScope scope) {
  switch (scope) {
    case GradcheckScope::kConv: return "conv";
    case GradcheckScope::kLayerNorm: return "layernorm";
    case GradcheckScope::kScan: return "scan";
    case GradcheckScope::kSs2d: return "ss2d";
    case GradcheckScope::kBlock: return "block";
    case GradcheckScope::kModel: return "model";
  }
  return "?";
}

double max_gradient_error(const std::function<Tensor<double>()>& loss,
                          std::vector<Tensor<double>> wrt, double step, Index* coordinates) {
  auto& tape = Tape<double>::current();
  tape.reset();
  std::vector<bool> had(wrt.size());
  for (std::size_t i = 0; i < wrt.size(); ++i) {
    had[i] = wrt[i].requires_grad();
    wrt[i].set_requires_grad(true);
    wrt[i].zero_grad();
  }
  backward(loss());
  tape.reset();
  std::vector<Vec<double>> analytic;
  for (auto& w : wrt) {
    analytic.push_back(w.has_grad() ? w.grad() : Vec<double>::Zero(w.size()));
    w.zero_grad();
  }

  auto value = [&] {
    NoGradGuard guard;
    return loss().item();
  };
  double worst = 0;
  Index count = 0;
  for (std::size_t k = 0; k < wrt.size(); ++k) {
    auto& w = wrt[k];
    Vec<double> numeric(w.size());
    for (Index i = 0; i < w.size(); ++i) {
      const double orig = w.mutable_values()[i];
      auto at = [&](double offset) {
        w.mutable_values()[i] = orig + offset;
        return value();
      };
      numeric[i] = (8 * (at(step) - at(-step)) - (at(2 * step) - at(-2 * step))) / (12 * step);
      w.mutable_values()[i] = orig;
    }
    count += w.size();
    const double scale = std::max(numeric.abs().maxCoeff(), 1e-6);
    worst = std::max(worst, (analytic[k] - numeric).abs().maxCoeff() / scale);
    w.set_requires_grad(had[k]);
  }
  if (coordinates != nullptr) *coordinates = count;
  return worst;
}

ModelConfig gradcheck_model_config() {
  ModelConfig c;
  c.variant = "toy";
  c.frames = 16;
  c.mel_bins = 8;
  c.n_windows = 2;
  c.stage_dims = {4, 8};
  c.stage_depths = {1, 1};
  c.stage_heads = {2, 2};
  c.state_size = 2;
  c.n_classes = 3;
  c.drop_path = 0.0;
  return c;
}

GradcheckResult run_gradcheck(GradcheckScope scope, std::uint64_t seed, double tolerance) {
  const auto start = std::chrono::steady_clock::now();
  std::mt19937_64 rng(seed);
  GradcheckResult r;
  r.name = scope_name(scope);
  switch (scope) {
    case GradcheckScope::kConv: {
      auto x = random_tensor({3, 5, 4}, rng);
      auto k = random_tensor({3, 3, 3}, rng);
      auto b = random_tensor({3}, rng);
      r.max_rel_err = max_gradient_error(
          [&] { return project(depthwise_conv2d(x, k, b), seed + 1); }, {x, k, b}, kStep,
          &r.coordinates);
      break;
    }
    case GradcheckScope::kLayerNorm: {
      auto x = random_tensor({6, 5}, rng, -2, 2);
      auto g = random_tensor({5}, rng);
      auto b = random_tensor({5}, rng);
      r.max_rel_err = max_gradient_error(
          [&] { return project(layer_norm(x, g, b, 1e-5), seed + 1); }, {x, g, b}, kStep,
          &r.coordinates);
      break;
    }
    case GradcheckScope::kScan: {
      auto params = ScanParams<double>::init(2, 2, 1, rng);
      auto wrt = collect(params, rng);
      jitter(wrt, rng, 0.2);
      auto x = random_tensor({8, 2}, rng);
      wrt.push_back(x);
      r.max_rel_err = max_gradient_error(
          [&] { return project(selective_scan_forward(params, x, 3), seed + 1); }, wrt, kStep,
          &r.coordinates);
      break;
    }
    case GradcheckScope::kSs2d: {
      std::array<ScanParams<double>, 4> params;
      std::vector<Tensor<double>> wrt;
      for (auto& p : params) {
        p = ScanParams<double>::init(3, 2, 1, rng);
        for (auto& t : collect(p, rng)) wrt.push_back(t);
      }
      jitter(wrt, rng, 0.2);
      auto f = random_tensor({3, 3, 4}, rng);
      wrt.push_back(f);
      r.max_rel_err = max_gradient_error(
          [&] { return project(ss2d_forward(params, f, 5), seed + 1); }, wrt, kStep,
          &r.coordinates);
      break;
    }
    case GradcheckScope::kBlock: {
      auto cfg = gradcheck_model_config();
      auto block = make_ss_block<double>(cfg, 4, 0.0, rng);
      auto wrt = collect(block, rng);
      jitter(wrt, rng, 0.3);
      auto f = random_tensor({4, 4, 4}, rng);
      wrt.push_back(f);
      r.max_rel_err = max_gradient_error(
          [&] { return project(ss_block_forward(block, f), seed + 1); }, wrt, kStep,
          &r.coordinates);
      break;
    }
    case GradcheckScope::kModel: {
      const auto cfg = gradcheck_model_config();
      AudioMamba<double> model(cfg, seed);
      std::vector<Tensor<double>> wrt;
      for (auto& p : model.parameters()) {
        widen_steps(p.name, p.tensor, rng);
        wrt.push_back(p.tensor);
      }
      jitter(wrt, rng, 0.2);
      auto grid = random_tensor({1, cfg.grid_height(), cfg.grid_width()}, rng);
      wrt.push_back(grid);
      r.max_rel_err = max_gradient_error(
          [&] { return project(model.forward(grid), seed + 1); }, wrt, kStep, &r.coordinates);
      break;
    }
  }
  r.passed = std::isfinite(r.max_rel_err) && r.max_rel_err < tolerance;
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

std::string format_result(const GradcheckResult& r) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%s %s max_rel_err=%.3e coordinates=%lld seconds=%.2f",
                r.passed ? "PASS" : "FAIL", r.name.c_str(), r.max_rel_err,
                static_cast<long long>(r.coordinates), r.seconds);
  return buf;
}

}  // namespace amba
