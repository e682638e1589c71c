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

#include <vector>

#include "amba/tensor.hpp"

// Differentiable kernels. Every function records its adjoint on the
// thread's Tape<T> when an input requires grad and grad mode is on.
// Matrices are row-major; "tokens" layout is [H*W x C] with row index h*W+w.

namespace amba {

enum class Activation { kSilu, kGelu, kSigmoid, kSoftplus };

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> transpose(const Tensor<T>& a);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);

/// Elementwise (Hadamard) product.
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor);

/// x[M x N] + bias[N] broadcast over rows.
template <typename T>
Tensor<T> add_row_bias(const Tensor<T>& x, const Tensor<T>& bias);

template <typename T>
Tensor<T> sum(const Tensor<T>& x);

template <typename T>
Tensor<T> mean(const Tensor<T>& x);

/// Column means of x[M x N] -> [N].
template <typename T>
Tensor<T> mean_rows(const Tensor<T>& x);

template <typename T>
Tensor<T> activation(const Tensor<T>& x, Activation kind);

template <typename T>
Tensor<T> silu(const Tensor<T>& x) { return activation(x, Activation::kSilu); }
template <typename T>
Tensor<T> gelu(const Tensor<T>& x) { return activation(x, Activation::kGelu); }
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) { return activation(x, Activation::kSigmoid); }
template <typename T>
Tensor<T> softplus(const Tensor<T>& x) { return activation(x, Activation::kSoftplus); }

/// Normalises over the last axis, then applies gamma/beta of length D.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(1e-5));

/// Per-channel 2D convolution with zero "same" padding.
/// x: [C x H x W], kernel: [C x kh x kw] (odd extents), bias: [C] or undefined.
template <typename T>
Tensor<T> depthwise_conv2d(const Tensor<T>& x, const Tensor<T>& kernel,
                           const Tensor<T>& bias = Tensor<T>());

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, const Shape& shape);

/// out[i, :] = x[rows[i], :].
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, const std::vector<Index>& rows);

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, Index begin, Index count);

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts);

/// Stacks equally shaped tensors along a new leading axis.
template <typename T>
Tensor<T> stack(const std::vector<Tensor<T>>& parts);

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x);

/// [C x H x W] -> tokens [H*W x C].
template <typename T>
Tensor<T> chw_to_tokens(const Tensor<T>& x);

/// tokens [H*W x C] -> [C x H x W].
template <typename T>
Tensor<T> tokens_to_chw(const Tensor<T>& x, Index height, Index width);

/// Groups non-overlapping patch x patch neighbourhoods of a token grid:
/// [H*W x C] -> [(H/p)*(W/p) x p*p*C]. Column (dx*p + dy)*C + c holds channel
/// c of the token at offset (dy, dx) inside the patch.
template <typename T>
Tensor<T> patchify(const Tensor<T>& tokens, Index height, Index width, Index patch);

/// Mean binary cross-entropy on logits; targets may be soft, in [0, 1].
template <typename T>
Tensor<T> bce_with_logits(const Tensor<T>& logits, const Tensor<T>& targets);

}  // namespace amba
