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

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "amba/config.hpp"
#include "amba/frontend.hpp"
#include "amba/ops.hpp"
#include "amba/selective_scan.hpp"
#include "amba/tensor.hpp"

namespace amba {

/// y = x W (+ b). weight is [in x out]; bias is left undefined for
/// bias-free projections.
template <typename T>
struct Linear {
  Tensor<T> weight;
  Tensor<T> bias;

  Index in_features() const { return weight.dim(0); }
  Index out_features() const { return weight.dim(1); }
  Tensor<T> operator()(const Tensor<T>& x) const;

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + "weight", weight);
    if (bias.defined()) f(prefix + "bias", bias);
  }
};

template <typename T>
struct Norm {
  Tensor<T> weight;  // gamma
  Tensor<T> bias;    // beta
  double eps = 1e-5;

  Tensor<T> operator()(const Tensor<T>& x) const;

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + "weight", weight);
    f(prefix + "bias", bias);
  }
};

/// Tokens of a spatial map, row index h * width + w: [(H*W) x C].
template <typename T>
struct FeatureMap {
  Tensor<T> tokens;
  Index height = 0;
  Index width = 0;

  Index channels() const { return tokens.dim(1); }
  Tensor<T> chw() const { return tokens_to_chw(tokens, height, width); }
  static FeatureMap from_chw(const Tensor<T>& f);
};

template <typename T>
struct Mlp {
  Linear<T> fc1;
  Linear<T> fc2;

  Tensor<T> operator()(const Tensor<T>& x) const { return fc2(gelu(fc1(x))); }

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    fc1.visit(prefix + "fc1.", f);
    fc2.visit(prefix + "fc2.", f);
  }
};

template <typename T>
struct PatchEmbed {
  Index patch = 4;
  Linear<T> proj;  // [P*P x d0] with bias
  Norm<T> norm;

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    proj.visit(prefix + "proj.", f);
    norm.visit(prefix + "norm.", f);
  }
};

template <typename T>
struct SSBlock {
  Norm<T> norm1;
  Linear<T> in_x;  // C -> E, no bias
  Linear<T> in_z;  // C -> E, no bias (gate branch)
  Tensor<T> conv_weight;  // [E x k x k]
  Tensor<T> conv_bias;    // [E]
  std::array<ScanParams<T>, 4> scans;
  Norm<T> out_norm;
  Linear<T> out_proj;  // E -> C, no bias
  Norm<T> norm2;
  Mlp<T> mlp;
  double drop_path = 0.0;

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    norm1.visit(prefix + "norm1.", f);
    in_x.visit(prefix + "in_proj_x.", f);
    in_z.visit(prefix + "in_proj_z.", f);
    f(prefix + "conv.weight", conv_weight);
    f(prefix + "conv.bias", conv_bias);
    for (std::size_t k = 0; k < scans.size(); ++k) {
      scans[k].visit(prefix + "ss2d." + std::to_string(k) + ".", f);
    }
    out_norm.visit(prefix + "out_norm.", f);
    out_proj.visit(prefix + "out_proj.", f);
    norm2.visit(prefix + "norm2.", f);
    mlp.visit(prefix + "mlp.", f);
  }
};

template <typename T>
struct TransformerBlock {
  Index heads = 1;
  Norm<T> norm1;
  Linear<T> q, k, v, proj;  // all with bias
  Norm<T> norm2;
  Mlp<T> mlp;
  double drop_path = 0.0;

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    norm1.visit(prefix + "norm1.", f);
    q.visit(prefix + "q.", f);
    k.visit(prefix + "k.", f);
    v.visit(prefix + "v.", f);
    proj.visit(prefix + "proj.", f);
    norm2.visit(prefix + "norm2.", f);
    mlp.visit(prefix + "mlp.", f);
  }
};

/// 2x2 neighbourhood concat (4C) -> norm -> bias-free projection to 2C.
template <typename T>
struct PatchMerge {
  Norm<T> norm;
  Linear<T> reduction;

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    norm.visit(prefix + "norm.", f);
    reduction.visit(prefix + "reduction.", f);
  }
};

template <typename T>
struct Stage {
  bool has_merge = false;
  PatchMerge<T> merge;  // applied before the blocks of every stage but the first
  std::vector<SSBlock<T>> blocks;
  std::vector<TransformerBlock<T>> attention;  // one after each SS block when interleaved

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    if (has_merge) merge.visit(prefix + "downsample.", f);
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      blocks[b].visit(prefix + "blocks." + std::to_string(b) + ".", f);
      if (b < attention.size()) {
        attention[b].visit(prefix + "attn." + std::to_string(b) + ".", f);
      }
    }
  }
};

template <typename T>
struct Head {
  Norm<T> norm;
  Linear<T> fc;

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    norm.visit(prefix + "norm.", f);
    fc.visit(prefix + "fc.", f);
  }
};

struct StageExtent {
  Index channels;
  Index height;
  Index width;
};

struct ForwardOptions {
  // Drop-path is active only when an rng is supplied.
  std::mt19937_64* rng = nullptr;
  std::vector<StageExtent>* trace = nullptr;  // receives one entry per stage
  Index scan_chunk = kDefaultScanChunk;
};

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

// Building blocks. Token forms are what the model runs; the [C x H x W]
// forms wrap them.

template <typename T>
FeatureMap<T> patch_embed(const PatchEmbed<T>& embed, const Tensor<T>& grid);

template <typename T>
FeatureMap<T> ss_block_forward(const SSBlock<T>& block, const FeatureMap<T>& x,
                               const ForwardOptions& options = {});
template <typename T>
Tensor<T> ss_block_forward(const SSBlock<T>& block, const Tensor<T>& f,
                           const ForwardOptions& options = {});

template <typename T>
FeatureMap<T> patch_merge(const PatchMerge<T>& merge, const FeatureMap<T>& x);
template <typename T>
Tensor<T> patch_merge(const PatchMerge<T>& merge, const Tensor<T>& f);

/// Multi-head self-attention over all tokens, without residual. When
/// `weights` is given it receives each head's [L x L] attention matrix.
template <typename T>
Tensor<T> self_attention(const TransformerBlock<T>& block, const Tensor<T>& normed,
                         std::vector<Tensor<T>>* weights = nullptr);

template <typename T>
FeatureMap<T> transformer_block_forward(const TransformerBlock<T>& block, const FeatureMap<T>& x,
                                        const ForwardOptions& options = {});
template <typename T>
Tensor<T> transformer_block_forward(const TransformerBlock<T>& block, const Tensor<T>& f,
                                    const ForwardOptions& options = {});

// Factories drawing from `rng`. Linear weights are truncated normal
// (std 0.02), biases zero, norms identity.
template <typename T>
Linear<T> make_linear(Index in, Index out, bool with_bias, std::mt19937_64& rng);
template <typename T>
Norm<T> make_norm(Index dim, double eps);
template <typename T>
SSBlock<T> make_ss_block(const ModelConfig& config, Index dim, double drop_path,
                         std::mt19937_64& rng);
template <typename T>
TransformerBlock<T> make_transformer_block(const ModelConfig& config, Index dim, Index heads,
                                           double drop_path, std::mt19937_64& rng);
template <typename T>
PatchMerge<T> make_patch_merge(Index dim, double eps, std::mt19937_64& rng);

/// Checks that `mel` is padded to (frames, mel_bins) and lays it out as the
/// window-reshaped map, [1 x H x W].
template <typename T>
Tensor<T> mel_to_grid(const MelSpectrogram& mel, const ModelConfig& config);

template <typename T>
class AudioMamba {
 public:
  explicit AudioMamba(const ModelConfig& config, std::uint64_t seed = 0);

  const ModelConfig& config() const { return config_; }

  /// grid: [1 x H x W] (or [H x W]) -> logits [n_classes].
  Tensor<T> forward(const Tensor<T>& grid, const ForwardOptions& options = {}) const;
  /// Padded log-mel -> logits [n_classes]; sigmoid is left to the caller.
  Tensor<T> classify(const MelSpectrogram& mel, const ForwardOptions& options = {}) const;

  /// Final pooled feature before the classifier, [C_last].
  Tensor<T> embed(const Tensor<T>& grid, const ForwardOptions& options = {}) const;

  template <typename F>
  void visit(F&& f) {
    patch.visit("patch_embed.", f);
    for (std::size_t s = 0; s < stages.size(); ++s) {
      stages[s].visit("stages." + std::to_string(s) + ".", f);
    }
    head.visit("head.", f);
  }

  /// Every trainable tensor in a fixed order; handles share storage with
  /// the model.
  std::vector<NamedTensor<T>> parameters();
  Index parameter_count();
  void zero_grad();

  PatchEmbed<T> patch;
  std::vector<Stage<T>> stages;
  Head<T> head;

 private:
  ModelConfig config_;
};

/// Analytic parameter count; parts are patch_embed, stage1..stageS, head.
struct ParamCount {
  std::vector<std::pair<std::string, Index>> parts;
  Index total = 0;
};

ParamCount count_params(const ModelConfig& config);

/// Parameters added by one interleaved transformer block of width `dim`.
Index transformer_block_params(Index dim, Index mlp_ratio);

extern template class AudioMamba<float>;
extern template class AudioMamba<double>;

}  // namespace amba
