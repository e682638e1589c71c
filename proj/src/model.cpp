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

#include "amba/model.hpp"

#include <cmath>

#include "amba/errors.hpp"

namespace amba {
namespace {

template <typename T>
Tensor<T> truncated_normal(const Shape& shape, double std, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vec<T> v(numel(shape));
  for (Index i = 0; i < v.size(); ++i) {
    double z = normal(rng);
    while (std::abs(z) > 2.0) z = normal(rng);
    v[i] = static_cast<T>(z * std);
  }
  return Tensor<T>(shape, std::move(v), true);
}

template <typename T>
Tensor<T> uniform(const Shape& shape, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-bound, bound);
  Vec<T> v(numel(shape));
  for (Index i = 0; i < v.size(); ++i) v[i] = static_cast<T>(u(rng));
  return Tensor<T>(shape, std::move(v), true);
}

// Residual add with stochastic depth. The whole branch of this sample is
// dropped with probability `rate`; survivors are rescaled by 1 / (1 - rate).
template <typename T>
Tensor<T> residual(const Tensor<T>& x, const Tensor<T>& branch, double rate,
                   const ForwardOptions& options) {
  if (options.rng == nullptr || rate <= 0.0) return add(x, branch);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  if (u(*options.rng) < rate) return x;
  return add(x, scale(branch, static_cast<T>(1.0 / (1.0 - rate))));
}

Index ss_block_params(const ModelConfig& c, Index dim) {
  const Index e = c.ssm_expand * dim;
  const Index n = c.state_size;
  const Index r = c.delta_rank(dim);
  const Index h = c.mlp_ratio * dim;
  const Index scan = 3 * e * n + 2 * e + 2 * e * r;
  return 2 * dim                                   // norm1
         + 2 * dim * e                             // in_proj_x, in_proj_z
         + e * c.conv_kernel * c.conv_kernel + e   // depthwise conv
         + 4 * scan                                // one scan per direction
         + 2 * e                                   // out_norm
         + e * dim                                 // out_proj
         + 2 * dim                                 // norm2
         + dim * h + h + h * dim + dim;            // mlp
}

}  // namespace

template <typename T>
Tensor<T> Linear<T>::operator()(const Tensor<T>& x) const {
  auto y = matmul(x, weight);
  return bias.defined() ? add_row_bias(y, bias) : y;
}

template <typename T>
Tensor<T> Norm<T>::operator()(const Tensor<T>& x) const {
  return layer_norm(x, weight, bias, static_cast<T>(eps));
}

template <typename T>
FeatureMap<T> FeatureMap<T>::from_chw(const Tensor<T>& f) {
  if (f.rank() != 3) throw ShapeError("expected a [C x H x W] map, got " + shape_string(f.shape()));
  return {chw_to_tokens(f), f.dim(1), f.dim(2)};
}

template <typename T>
FeatureMap<T> patch_embed(const PatchEmbed<T>& embed, const Tensor<T>& grid) {
  Tensor<T> g = grid;
  if (g.rank() == 2) g = reshape(g, {1, g.dim(0), g.dim(1)});
  if (g.rank() != 3 || g.dim(0) != 1) {
    throw ShapeError("patch_embed: expected a [1 x H x W] grid, got " + shape_string(g.shape()));
  }
  const Index h = g.dim(1), w = g.dim(2), p = embed.patch;
  if (h % p != 0 || w % p != 0) {
    throw ShapeError("patch_embed: grid " + std::to_string(h) + "x" + std::to_string(w) +
                     " is not divisible by patch size " + std::to_string(p));
  }
  auto patches = patchify(chw_to_tokens(g), h, w, p);
  return {embed.norm(embed.proj(patches)), h / p, w / p};
}

template <typename T>
FeatureMap<T> ss_block_forward(const SSBlock<T>& block, const FeatureMap<T>& x,
                               const ForwardOptions& options) {
  const Index h = x.height, w = x.width;
  auto z = block.norm1(x.tokens);
  auto a = block.in_x(z);
  auto gate = silu(block.in_z(z));
  a = chw_to_tokens(depthwise_conv2d(tokens_to_chw(a, h, w), block.conv_weight, block.conv_bias));
  a = ss2d_tokens(block.scans, silu(a), h, w, options.scan_chunk);
  a = block.out_norm(a);
  auto t = residual(x.tokens, block.out_proj(mul(a, gate)), block.drop_path, options);
  t = residual(t, block.mlp(block.norm2(t)), block.drop_path, options);
  return {t, h, w};
}

template <typename T>
Tensor<T> ss_block_forward(const SSBlock<T>& block, const Tensor<T>& f,
                           const ForwardOptions& options) {
  return ss_block_forward(block, FeatureMap<T>::from_chw(f), options).chw();
}

template <typename T>
FeatureMap<T> patch_merge(const PatchMerge<T>& merge, const FeatureMap<T>& x) {
  if (x.height % 2 != 0 || x.width % 2 != 0) {
    throw ShapeError("patch_merge: extents " + std::to_string(x.height) + "x" +
                     std::to_string(x.width) + " must be even");
  }
  auto cat = patchify(x.tokens, x.height, x.width, 2);
  return {merge.reduction(merge.norm(cat)), x.height / 2, x.width / 2};
}

template <typename T>
Tensor<T> patch_merge(const PatchMerge<T>& merge, const Tensor<T>& f) {
  return patch_merge(merge, FeatureMap<T>::from_chw(f)).chw();
}

template <typename T>
Tensor<T> self_attention(const TransformerBlock<T>& block, const Tensor<T>& normed,
                         std::vector<Tensor<T>>* weights) {
  const Index dim = normed.dim(1);
  if (block.heads < 1 || dim % block.heads != 0) {
    throw ConfigError("attention: dim " + std::to_string(dim) + " is not divisible by " +
                      std::to_string(block.heads) + " heads");
  }
  const Index hd = dim / block.heads;
  const T inv_sqrt = static_cast<T>(1.0 / std::sqrt(static_cast<double>(hd)));
  auto q = block.q(normed);
  auto k = block.k(normed);
  auto v = block.v(normed);
  std::vector<Tensor<T>> outs;
  outs.reserve(block.heads);
  for (Index head = 0; head < block.heads; ++head) {
    auto qh = slice_cols(q, head * hd, hd);
    auto kh = slice_cols(k, head * hd, hd);
    auto vh = slice_cols(v, head * hd, hd);
    auto att = softmax_rows(scale(matmul(qh, transpose(kh)), inv_sqrt));
    if (weights != nullptr) weights->push_back(att);
    outs.push_back(matmul(att, vh));
  }
  return block.proj(outs.size() == 1 ? outs.front() : concat_cols(outs));
}

template <typename T>
FeatureMap<T> transformer_block_forward(const TransformerBlock<T>& block, const FeatureMap<T>& x,
                                        const ForwardOptions& options) {
  auto t = residual(x.tokens, self_attention(block, block.norm1(x.tokens)), block.drop_path,
                    options);
  t = residual(t, block.mlp(block.norm2(t)), block.drop_path, options);
  return {t, x.height, x.width};
}

template <typename T>
Tensor<T> transformer_block_forward(const TransformerBlock<T>& block, const Tensor<T>& f,
                                    const ForwardOptions& options) {
  return transformer_block_forward(block, FeatureMap<T>::from_chw(f), options).chw();
}

template <typename T>
Linear<T> make_linear(Index in, Index out, bool with_bias, std::mt19937_64& rng) {
  Linear<T> l;
  l.weight = truncated_normal<T>({in, out}, 0.02, rng);
  if (with_bias) l.bias = Tensor<T>::zeros({out}, true);
  return l;
}

template <typename T>
Norm<T> make_norm(Index dim, double eps) {
  Norm<T> n;
  n.weight = Tensor<T>(Shape{dim}, Vec<T>::Ones(dim), true);
  n.bias = Tensor<T>::zeros({dim}, true);
  n.eps = eps;
  return n;
}

template <typename T>
Mlp<T> make_mlp(Index dim, Index ratio, std::mt19937_64& rng) {
  return {make_linear<T>(dim, ratio * dim, true, rng), make_linear<T>(ratio * dim, dim, true, rng)};
}

template <typename T>
SSBlock<T> make_ss_block(const ModelConfig& config, Index dim, double drop_path,
                         std::mt19937_64& rng) {
  const Index e = config.ssm_expand * dim;
  const Index k = config.conv_kernel;
  SSBlock<T> b;
  b.norm1 = make_norm<T>(dim, config.ln_eps);
  b.in_x = make_linear<T>(dim, e, false, rng);
  b.in_z = make_linear<T>(dim, e, false, rng);
  // Depthwise fan-in is k*k.
  const double bound = 1.0 / static_cast<double>(k);
  b.conv_weight = uniform<T>({e, k, k}, bound, rng);
  b.conv_bias = uniform<T>({e}, bound, rng);
  for (auto& s : b.scans) {
    s = ScanParams<T>::init(e, config.state_size, config.delta_rank(dim), rng);
  }
  b.out_norm = make_norm<T>(e, config.ln_eps);
  b.out_proj = make_linear<T>(e, dim, false, rng);
  b.norm2 = make_norm<T>(dim, config.ln_eps);
  b.mlp = make_mlp<T>(dim, config.mlp_ratio, rng);
  b.drop_path = drop_path;
  return b;
}

template <typename T>
TransformerBlock<T> make_transformer_block(const ModelConfig& config, Index dim, Index heads,
                                           double drop_path, std::mt19937_64& rng) {
  if (heads < 1 || dim % heads != 0) {
    throw ConfigError("transformer block: dim " + std::to_string(dim) +
                      " is not divisible by " + std::to_string(heads) + " heads");
  }
  TransformerBlock<T> b;
  b.heads = heads;
  b.norm1 = make_norm<T>(dim, config.ln_eps);
  b.q = make_linear<T>(dim, dim, true, rng);
  b.k = make_linear<T>(dim, dim, true, rng);
  b.v = make_linear<T>(dim, dim, true, rng);
  b.proj = make_linear<T>(dim, dim, true, rng);
  b.norm2 = make_norm<T>(dim, config.ln_eps);
  b.mlp = make_mlp<T>(dim, config.mlp_ratio, rng);
  b.drop_path = drop_path;
  return b;
}

template <typename T>
PatchMerge<T> make_patch_merge(Index dim, double eps, std::mt19937_64& rng) {
  return {make_norm<T>(4 * dim, eps), make_linear<T>(4 * dim, 2 * dim, false, rng)};
}

template <typename T>
Tensor<T> mel_to_grid(const MelSpectrogram& mel, const ModelConfig& config) {
  if (mel.frames() != config.frames || mel.bins() != config.mel_bins) {
    throw ShapeError("classify: expected a padded log-mel of shape (" +
                     std::to_string(config.frames) + ", " + std::to_string(config.mel_bins) +
                     "), got (" + std::to_string(mel.frames()) + ", " +
                     std::to_string(mel.bins()) + ")");
  }
  const RowMat<float> map = window_reshape(mel, config.n_windows);
  Vec<T> v = Eigen::Map<const Vec<float>>(map.data(), map.size()).template cast<T>();
  return Tensor<T>({1, map.rows(), map.cols()}, std::move(v));
}

template <typename T>
AudioMamba<T>::AudioMamba(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  std::mt19937_64 rng(seed);
  const auto& dims = config_.stage_dims;
  const Index p = config_.patch_size;
  patch.patch = p;
  patch.proj = make_linear<T>(p * p, dims[0], true, rng);
  patch.norm = make_norm<T>(dims[0], config_.ln_eps);

  Index total_blocks = 0;
  for (Index d : config_.stage_depths) total_blocks += d;
  Index block_index = 0;
  for (std::size_t s = 0; s < dims.size(); ++s) {
    Stage<T> stage;
    if (s > 0) {
      stage.has_merge = true;
      stage.merge = make_patch_merge<T>(dims[s - 1], config_.ln_eps, rng);
    }
    for (Index b = 0; b < config_.stage_depths[s]; ++b, ++block_index) {
      const double rate =
          total_blocks > 1 ? config_.drop_path * static_cast<double>(block_index) /
                                 static_cast<double>(total_blocks - 1)
                           : 0.0;
      stage.blocks.push_back(make_ss_block<T>(config_, dims[s], rate, rng));
      if (config_.transformer_interleave) {
        stage.attention.push_back(
            make_transformer_block<T>(config_, dims[s], config_.stage_heads[s], rate, rng));
      }
    }
    stages.push_back(std::move(stage));
  }
  head.norm = make_norm<T>(dims.back(), config_.ln_eps);
  head.fc = make_linear<T>(dims.back(), config_.n_classes, true, rng);
}

template <typename T>
Tensor<T> AudioMamba<T>::embed(const Tensor<T>& grid, const ForwardOptions& options) const {
  auto x = patch_embed(patch, grid);
  for (const auto& stage : stages) {
    if (stage.has_merge) x = patch_merge(stage.merge, x);
    for (std::size_t b = 0; b < stage.blocks.size(); ++b) {
      x = ss_block_forward(stage.blocks[b], x, options);
      if (b < stage.attention.size()) x = transformer_block_forward(stage.attention[b], x, options);
    }
    if (options.trace != nullptr) options.trace->push_back({x.channels(), x.height, x.width});
  }
  return mean_rows(head.norm(x.tokens));
}

template <typename T>
Tensor<T> AudioMamba<T>::forward(const Tensor<T>& grid, const ForwardOptions& options) const {
  auto pooled = embed(grid, options);
  return reshape(head.fc(reshape(pooled, {1, pooled.size()})), {config_.n_classes});
}

template <typename T>
Tensor<T> AudioMamba<T>::classify(const MelSpectrogram& mel, const ForwardOptions& options) const {
  return forward(mel_to_grid<T>(mel, config_), options);
}

template <typename T>
std::vector<NamedTensor<T>> AudioMamba<T>::parameters() {
  std::vector<NamedTensor<T>> out;
  visit([&](const std::string& name, Tensor<T>& t) { out.push_back({name, t}); });
  return out;
}

template <typename T>
Index AudioMamba<T>::parameter_count() {
  Index n = 0;
  visit([&](const std::string&, Tensor<T>& t) { n += t.size(); });
  return n;
}

template <typename T>
void AudioMamba<T>::zero_grad() {
  visit([](const std::string&, Tensor<T>& t) { t.zero_grad(); });
}

Index transformer_block_params(Index dim, Index mlp_ratio) {
  const Index h = mlp_ratio * dim;
  return 2 * dim + 4 * (dim * dim + dim) + 2 * dim + dim * h + h + h * dim + dim;
}

ParamCount count_params(const ModelConfig& config) {
  config.validate();
  ParamCount out;
  const auto& dims = config.stage_dims;
  const Index p = config.patch_size;
  out.parts.emplace_back("patch_embed", p * p * dims[0] + dims[0] + 2 * dims[0]);
  for (std::size_t s = 0; s < dims.size(); ++s) {
    const Index c = dims[s];
    Index n = 0;
    if (s > 0) n += 8 * dims[s - 1] + 8 * dims[s - 1] * dims[s - 1];
    Index per_block = ss_block_params(config, c);
    if (config.transformer_interleave) per_block += transformer_block_params(c, config.mlp_ratio);
    n += config.stage_depths[s] * per_block;
    out.parts.emplace_back("stage" + std::to_string(s + 1), n);
  }
  const Index c = dims.back();
  out.parts.emplace_back("head", 2 * c + c * config.n_classes + config.n_classes);
  for (const auto& [name, n] : out.parts) out.total += n;
  return out;
}

#define AMBA_INSTANTIATE(T)                                                                      \
  template struct Linear<T>;                                                                     \
  template struct Norm<T>;                                                                       \
  template struct FeatureMap<T>;                                                                 \
  template FeatureMap<T> patch_embed(const PatchEmbed<T>&, const Tensor<T>&);                   \
  template FeatureMap<T> ss_block_forward(const SSBlock<T>&, const FeatureMap<T>&,              \
                                          const ForwardOptions&);                                \
  template Tensor<T> ss_block_forward(const SSBlock<T>&, const Tensor<T>&, const ForwardOptions&); \
  template FeatureMap<T> patch_merge(const PatchMerge<T>&, const FeatureMap<T>&);               \
  template Tensor<T> patch_merge(const PatchMerge<T>&, const Tensor<T>&);                       \
  template Tensor<T> self_attention(const TransformerBlock<T>&, const Tensor<T>&,               \
                                    std::vector<Tensor<T>>*);                                    \
  template FeatureMap<T> transformer_block_forward(const TransformerBlock<T>&,                  \
                                                   const FeatureMap<T>&, const ForwardOptions&); \
  template Tensor<T> transformer_block_forward(const TransformerBlock<T>&, const Tensor<T>&,    \
                                               const ForwardOptions&);                           \
  template Linear<T> make_linear(Index, Index, bool, std::mt19937_64&);                         \
  template Norm<T> make_norm(Index, double);                                                     \
  template SSBlock<T> make_ss_block(const ModelConfig&, Index, double, std::mt19937_64&);       \
  template TransformerBlock<T> make_transformer_block(const ModelConfig&, Index, Index, double, \
                                                      std::mt19937_64&);                         \
  template PatchMerge<T> make_patch_merge(Index, double, std::mt19937_64&);                     \
  template Tensor<T> mel_to_grid(const MelSpectrogram&, const ModelConfig&);                    \
  template class AudioMamba<T>;

AMBA_INSTANTIATE(float)
AMBA_INSTANTIATE(double)

#undef AMBA_INSTANTIATE

}  // namespace amba
