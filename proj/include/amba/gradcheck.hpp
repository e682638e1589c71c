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

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "amba/config.hpp"
#include "amba/tensor.hpp"

// Finite-difference verification of the hand-written adjoints at toy
// shapes, in double precision.

namespace amba {

enum class GradcheckScope { kConv, kLayerNorm, kScan, kSs2d, kBlock, kModel };

/// scan, ss2d, block, model, conv or layernorm.
GradcheckScope parse_gradcheck_scope(const std::string& name);
std::string scope_name(GradcheckScope scope);

struct GradcheckResult {
  std::string name;
  double max_rel_err = 0;
  Index coordinates = 0;
  double seconds = 0;
  bool passed = false;
};

inline constexpr double kGradcheckTolerance = 1e-4;

/// Compares reverse-mode gradients of loss() with fourth-order central
/// differences, (8[f(x+h) - f(x-h)] - [f(x+2h) - f(x-2h)]) / 12h, for every
/// coordinate of every tensor in `wrt`. The error is
/// max|analytic - numeric| / max(max|numeric|, 1e-6) per tensor, maximised
/// over tensors.
double max_gradient_error(const std::function<Tensor<double>()>& loss,
                          std::vector<Tensor<double>> wrt, double step = 1e-3,
                          Index* coordinates = nullptr);

/// The two-stage configuration used by the model scope.
ModelConfig gradcheck_model_config();

GradcheckResult run_gradcheck(GradcheckScope scope, std::uint64_t seed = 0,
                              double tolerance = kGradcheckTolerance);

std::string format_result(const GradcheckResult& r);

}  // namespace amba
