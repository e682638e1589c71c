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

#include "amba/ops.hpp"

#include <cmath>
#include <numbers>

namespace amba {
namespace {

template <typename T>
using NodePtr = std::shared_ptr<detail::Node<T>>;

// Marks `out` as differentiable and records `adjoint(out_grad)` on the tape
// when any input needs a gradient.
template <typename T, typename F>
void link(Tensor<T>& out, std::initializer_list<const Tensor<T>*> inputs, F adjoint) {
  if (!detail::any_requires_grad<T>(inputs)) return;
  out.set_requires_grad(true);
  NodePtr<T> on = out.handle();
  Tape<T>::current().record([on, adjoint = std::move(adjoint)]() {
    if (on->grad.size() == 0) return;
    adjoint(on->grad);
  });
}

template <typename T>
bool wants(const NodePtr<T>& n) {
  return n && n->requires_grad;
}

template <typename T>
void require_rank(const Tensor<T>& t, Index rank, const char* what) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_string(t.shape()));
  }
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

template <typename T>
Eigen::Map<RowMat<T>> as_matrix(Vec<T>& v, Index rows, Index cols) {
  return {v.data(), rows, cols};
}

template <typename T>
Eigen::Map<const RowMat<T>> as_matrix(const Vec<T>& v, Index rows, Index cols) {
  return {v.data(), rows, cols};
}

// out_flat[i] = in_flat[index[i]]; adjoint scatters back.
template <typename T>
Tensor<T> gather_flat(const Tensor<T>& x, std::vector<Index> index, const Shape& shape) {
  Vec<T> v(static_cast<Index>(index.size()));
  const Vec<T>& xv = x.values();
  for (std::size_t i = 0; i < index.size(); ++i) v[static_cast<Index>(i)] = xv[index[i]];
  Tensor<T> out(shape, std::move(v));
  NodePtr<T> xn = x.handle();
  link(out, {&x}, [xn, index = std::move(index)](const Vec<T>& g) {
    Vec<T> gx = Vec<T>::Zero(xn->value.size());
    for (std::size_t i = 0; i < index.size(); ++i) gx[index[i]] += g[static_cast<Index>(i)];
    xn->accumulate(gx);
  });
  return out;
}

template <typename T>
T stable_sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <typename T>
T stable_softplus(T x) {
  return x > T(0) ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  if (a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: inner extents differ, " + shape_string(a.shape()) + " x " +
                     shape_string(b.shape()));
  }
  const Index m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Vec<T> v(m * n);
  as_matrix(v, m, n).noalias() = a.matrix() * b.matrix();
  Tensor<T> out({m, n}, std::move(v));
  NodePtr<T> an = a.handle(), bn = b.handle();
  link(out, {&a, &b}, [an, bn, m, k, n](const Vec<T>& g) {
    auto gm = as_matrix(g, m, n);
    if (wants(an)) {
      Vec<T> ga(m * k);
      as_matrix(ga, m, k).noalias() = gm * as_matrix(bn->value, k, n).transpose();
      an->accumulate(ga);
    }
    if (wants(bn)) {
      Vec<T> gb(k * n);
      as_matrix(gb, k, n).noalias() = as_matrix(an->value, m, k).transpose() * gm;
      bn->accumulate(gb);
    }
  });
  return out;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  require_rank(a, 2, "transpose");
  const Index m = a.dim(0), n = a.dim(1);
  Vec<T> v(m * n);
  as_matrix(v, n, m) = a.matrix().transpose();
  Tensor<T> out({n, m}, std::move(v));
  NodePtr<T> an = a.handle();
  link(out, {&a}, [an, m, n](const Vec<T>& g) {
    Vec<T> ga(m * n);
    as_matrix(ga, m, n) = as_matrix(g, n, m).transpose();
    an->accumulate(ga);
  });
  return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  Tensor<T> out(a.shape(), a.values() + b.values());
  NodePtr<T> an = a.handle(), bn = b.handle();
  link(out, {&a, &b}, [an, bn](const Vec<T>& g) {
    if (wants(an)) an->accumulate(g);
    if (wants(bn)) bn->accumulate(g);
  });
  return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "sub");
  Tensor<T> out(a.shape(), a.values() - b.values());
  NodePtr<T> an = a.handle(), bn = b.handle();
  link(out, {&a, &b}, [an, bn](const Vec<T>& g) {
    if (wants(an)) an->accumulate(g);
    if (wants(bn)) bn->accumulate(-g);
  });
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  Tensor<T> out(a.shape(), a.values() * b.values());
  NodePtr<T> an = a.handle(), bn = b.handle();
  link(out, {&a, &b}, [an, bn](const Vec<T>& g) {
    if (wants(an)) an->accumulate(g * bn->value);
    if (wants(bn)) bn->accumulate(g * an->value);
  });
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  Tensor<T> out(a.shape(), a.values() * factor);
  NodePtr<T> an = a.handle();
  link(out, {&a}, [an, factor](const Vec<T>& g) { an->accumulate(g * factor); });
  return out;
}

template <typename T>
Tensor<T> add_row_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  require_rank(x, 2, "add_row_bias");
  const Index m = x.dim(0), n = x.dim(1);
  if (bias.size() != n) {
    throw ShapeError("add_row_bias: bias " + shape_string(bias.shape()) + " vs rows of " +
                     shape_string(x.shape()));
  }
  Vec<T> v = x.values();
  as_matrix(v, m, n).rowwise() += bias.values().matrix().transpose();
  Tensor<T> out(x.shape(), std::move(v));
  NodePtr<T> xn = x.handle(), bn = bias.handle();
  link(out, {&x, &bias}, [xn, bn, m, n](const Vec<T>& g) {
    if (wants(xn)) xn->accumulate(g);
    if (wants(bn)) bn->accumulate(as_matrix(g, m, n).colwise().sum().transpose().array());
  });
  return out;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  Tensor<T> out = Tensor<T>::scalar(x.values().sum());
  NodePtr<T> xn = x.handle();
  link(out, {&x}, [xn](const Vec<T>& g) {
    xn->accumulate(Vec<T>::Constant(xn->value.size(), g[0]));
  });
  return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.size()));
}

template <typename T>
Tensor<T> mean_rows(const Tensor<T>& x) {
  require_rank(x, 2, "mean_rows");
  const Index m = x.dim(0), n = x.dim(1);
  Vec<T> v = x.matrix().colwise().mean().transpose().array();
  Tensor<T> out({n}, std::move(v));
  NodePtr<T> xn = x.handle();
  link(out, {&x}, [xn, m, n](const Vec<T>& g) {
    Vec<T> gx(m * n);
    as_matrix(gx, m, n).rowwise() = (g / static_cast<T>(m)).matrix().transpose();
    xn->accumulate(gx);
  });
  return out;
}

template <typename T>
Tensor<T> activation(const Tensor<T>& x, Activation kind) {
  const Vec<T>& xv = x.values();
  Vec<T> y(xv.size());
  Vec<T> dy(xv.size());
  constexpr T kInvSqrt2 = T(1) / std::numbers::sqrt2_v<T>;
  constexpr T kInvSqrt2Pi = std::numbers::inv_sqrtpi_v<T> * kInvSqrt2;
  for (Index i = 0; i < xv.size(); ++i) {
    const T v = xv[i];
    switch (kind) {
      case Activation::kSilu: {
        const T s = stable_sigmoid(v);
        y[i] = v * s;
        dy[i] = s * (T(1) + v * (T(1) - s));
        break;
      }
      case Activation::kGelu: {
        const T cdf = T(0.5) * (T(1) + std::erf(v * kInvSqrt2));
        y[i] = v * cdf;
        dy[i] = cdf + v * kInvSqrt2Pi * std::exp(T(-0.5) * v * v);
        break;
      }
      case Activation::kSigmoid: {
        const T s = stable_sigmoid(v);
        y[i] = s;
        dy[i] = s * (T(1) - s);
        break;
      }
      case Activation::kSoftplus:
        y[i] = stable_softplus(v);
        dy[i] = stable_sigmoid(v);
        break;
    }
  }
  Tensor<T> out(x.shape(), std::move(y));
  NodePtr<T> xn = x.handle();
  link(out, {&x}, [xn, dy = std::move(dy)](const Vec<T>& g) { xn->accumulate(g * dy); });
  return out;
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  const Index d = x.shape().back();
  if (gamma.size() != d || beta.size() != d) {
    throw ShapeError("layer_norm: affine params " + shape_string(gamma.shape()) + "/" +
                     shape_string(beta.shape()) + " vs last axis of " + shape_string(x.shape()));
  }
  const Index rows = x.size() / d;
  auto xm = as_matrix(x.values(), rows, d);
  Vec<T> xhat(rows * d);
  Vec<T> rstd(rows);
  auto xh = as_matrix(xhat, rows, d);
  for (Index r = 0; r < rows; ++r) {
    const T mu = xm.row(r).mean();
    const T var = (xm.row(r).array() - mu).square().mean();
    rstd[r] = T(1) / std::sqrt(var + eps);
    xh.row(r) = (xm.row(r).array() - mu) * rstd[r];
  }
  Vec<T> y(rows * d);
  as_matrix(y, rows, d) =
      (xh.array().rowwise() * gamma.values().transpose()).rowwise() + beta.values().transpose();
  Tensor<T> out(x.shape(), std::move(y));
  NodePtr<T> xn = x.handle(), gn = gamma.handle(), bn = beta.handle();
  link(out, {&x, &gamma, &beta},
       [xn, gn, bn, xhat = std::move(xhat), rstd = std::move(rstd), rows, d](const Vec<T>& g) {
         auto gm = as_matrix(g, rows, d);
         auto xh = as_matrix(xhat, rows, d);
         if (wants(gn)) gn->accumulate((gm.array() * xh.array()).colwise().sum().transpose());
         if (wants(bn)) bn->accumulate(gm.colwise().sum().transpose().array());
         if (wants(xn)) {
           Vec<T> gx(rows * d);
           auto gxm = as_matrix(gx, rows, d);
           for (Index r = 0; r < rows; ++r) {
             const auto gxhat = (gm.row(r).array() * gn->value.transpose()).eval();
             const T mean_g = gxhat.mean();
             const T mean_gx = (gxhat * xh.row(r).array()).mean();
             gxm.row(r) = rstd[r] * (gxhat - mean_g - xh.row(r).array() * mean_gx);
           }
           xn->accumulate(gx);
         }
       });
  return out;
}

template <typename T>
Tensor<T> depthwise_conv2d(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias) {
  require_rank(x, 3, "depthwise_conv2d input");
  require_rank(kernel, 3, "depthwise_conv2d kernel");
  const Index c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const Index kh = kernel.dim(1), kw = kernel.dim(2);
  if (kh % 2 == 0 || kw % 2 == 0) {
    throw ConfigError("depthwise_conv2d: kernel extents must be odd, got " +
                      shape_string(kernel.shape()));
  }
  if (kernel.dim(0) != c) {
    throw ShapeError("depthwise_conv2d: kernel " + shape_string(kernel.shape()) +
                     " does not match channels of " + shape_string(x.shape()));
  }
  const bool has_bias = bias.defined();
  if (has_bias && bias.size() != c) {
    throw ShapeError("depthwise_conv2d: bias " + shape_string(bias.shape()) + " vs " +
                     std::to_string(c) + " channels");
  }
  const Index ph = kh / 2, pw = kw / 2;
  const T* xv = x.values().data();
  const T* kv = kernel.values().data();
  Vec<T> y(c * h * w);
  for (Index ch = 0; ch < c; ++ch) {
    const T b = has_bias ? bias.values()[ch] : T(0);
    for (Index i = 0; i < h; ++i) {
      for (Index j = 0; j < w; ++j) {
        T acc = b;
        for (Index a = 0; a < kh; ++a) {
          const Index ii = i + a - ph;
          if (ii < 0 || ii >= h) continue;
          for (Index bb = 0; bb < kw; ++bb) {
            const Index jj = j + bb - pw;
            if (jj < 0 || jj >= w) continue;
            acc += kv[(ch * kh + a) * kw + bb] * xv[(ch * h + ii) * w + jj];
          }
        }
        y[(ch * h + i) * w + j] = acc;
      }
    }
  }
  Tensor<T> out(x.shape(), std::move(y));
  NodePtr<T> xn = x.handle(), kn = kernel.handle();
  NodePtr<T> bn = has_bias ? bias.handle() : nullptr;
  std::initializer_list<const Tensor<T>*> inputs = {&x, &kernel, has_bias ? &bias : nullptr};
  link(out, inputs, [xn, kn, bn, c, h, w, kh, kw, ph, pw](const Vec<T>& g) {
    const bool need_x = wants(xn), need_k = wants(kn);
    Vec<T> gx = need_x ? Vec<T>(Vec<T>::Zero(c * h * w)) : Vec<T>();
    Vec<T> gk = need_k ? Vec<T>(Vec<T>::Zero(c * kh * kw)) : Vec<T>();
    const T* xv = xn->value.data();
    const T* kv = kn->value.data();
    for (Index ch = 0; ch < c; ++ch) {
      for (Index i = 0; i < h; ++i) {
        for (Index j = 0; j < w; ++j) {
          const T go = g[(ch * h + i) * w + j];
          for (Index a = 0; a < kh; ++a) {
            const Index ii = i + a - ph;
            if (ii < 0 || ii >= h) continue;
            for (Index bb = 0; bb < kw; ++bb) {
              const Index jj = j + bb - pw;
              if (jj < 0 || jj >= w) continue;
              const Index xi = (ch * h + ii) * w + jj;
              const Index ki = (ch * kh + a) * kw + bb;
              if (need_x) gx[xi] += kv[ki] * go;
              if (need_k) gk[ki] += xv[xi] * go;
            }
          }
        }
      }
    }
    if (need_x) xn->accumulate(gx);
    if (need_k) kn->accumulate(gk);
    if (wants(bn)) bn->accumulate(as_matrix(g, c, h * w).rowwise().sum().array());
  });
  return out;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, const Shape& shape) {
  if (numel(shape) != x.size()) {
    throw ShapeError("reshape: cannot view " + shape_string(x.shape()) + " as " +
                     shape_string(shape));
  }
  Tensor<T> out(shape, x.values());
  NodePtr<T> xn = x.handle();
  link(out, {&x}, [xn](const Vec<T>& g) { xn->accumulate(g); });
  return out;
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, const std::vector<Index>& rows) {
  require_rank(x, 2, "gather_rows");
  const Index m = x.dim(0), n = x.dim(1);
  std::vector<Index> index;
  index.reserve(rows.size() * static_cast<std::size_t>(n));
  for (Index r : rows) {
    if (r < 0 || r >= m) throw ShapeError("gather_rows: row " + std::to_string(r) + " out of range");
    for (Index j = 0; j < n; ++j) index.push_back(r * n + j);
  }
  return gather_flat(x, std::move(index), {static_cast<Index>(rows.size()), n});
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, Index begin, Index count) {
  require_rank(x, 2, "slice_cols");
  const Index m = x.dim(0), n = x.dim(1);
  if (begin < 0 || count < 1 || begin + count > n) {
    throw ShapeError("slice_cols: [" + std::to_string(begin) + ", +" + std::to_string(count) +
                     ") outside " + shape_string(x.shape()));
  }
  Vec<T> v(m * count);
  as_matrix(v, m, count) = x.matrix().middleCols(begin, count);
  Tensor<T> out({m, count}, std::move(v));
  NodePtr<T> xn = x.handle();
  link(out, {&x}, [xn, m, n, begin, count](const Vec<T>& g) {
    Vec<T> gx = Vec<T>::Zero(m * n);
    as_matrix(gx, m, n).middleCols(begin, count) = as_matrix(g, m, count);
    xn->accumulate(gx);
  });
  return out;
}

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const Index m = parts.front().dim(0);
  Index n = 0;
  for (const auto& p : parts) {
    require_rank(p, 2, "concat_cols");
    if (p.dim(0) != m) throw ShapeError("concat_cols: row count mismatch " + shape_string(p.shape()));
    n += p.dim(1);
  }
  Vec<T> v(m * n);
  auto vm = as_matrix(v, m, n);
  bool any = false;
  std::vector<NodePtr<T>> nodes;
  std::vector<Index> widths;
  Index off = 0;
  for (const auto& p : parts) {
    vm.middleCols(off, p.dim(1)) = p.matrix();
    off += p.dim(1);
    any = any || detail::any_requires_grad<T>({&p});
    nodes.push_back(p.handle());
    widths.push_back(p.dim(1));
  }
  Tensor<T> out({m, n}, std::move(v));
  if (any) {
    const Tensor<T>* flag = nullptr;
    for (const auto& p : parts) {
      if (p.requires_grad()) flag = &p;
    }
    link(out, {flag}, [nodes, widths, m, n](const Vec<T>& g) {
      auto gm = as_matrix(g, m, n);
      Index off = 0;
      for (std::size_t i = 0; i < nodes.size(); ++i) {
        if (wants(nodes[i])) {
          Vec<T> gp(m * widths[i]);
          as_matrix(gp, m, widths[i]) = gm.middleCols(off, widths[i]);
          nodes[i]->accumulate(gp);
        }
        off += widths[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> stack(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("stack: no inputs");
  const Shape inner = parts.front().shape();
  const Index each = numel(inner);
  Vec<T> v(each * static_cast<Index>(parts.size()));
  std::vector<NodePtr<T>> nodes;
  const Tensor<T>* flag = nullptr;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    require_same_shape(parts[i], parts.front(), "stack");
    v.segment(static_cast<Index>(i) * each, each) = parts[i].values();
    nodes.push_back(parts[i].handle());
    if (parts[i].requires_grad()) flag = &parts[i];
  }
  Shape shape{static_cast<Index>(parts.size())};
  shape.insert(shape.end(), inner.begin(), inner.end());
  Tensor<T> out(shape, std::move(v));
  link(out, {flag}, [nodes, each](const Vec<T>& g) {
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      if (wants(nodes[i])) nodes[i]->accumulate(g.segment(static_cast<Index>(i) * each, each));
    }
  });
  return out;
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
  require_rank(x, 2, "softmax_rows");
  const Index m = x.dim(0), n = x.dim(1);
  Vec<T> y(m * n);
  auto ym = as_matrix(y, m, n);
  auto xm = x.matrix();
  for (Index r = 0; r < m; ++r) {
    const T mx = xm.row(r).maxCoeff();
    ym.row(r) = (xm.row(r).array() - mx).exp().matrix();
    ym.row(r) /= ym.row(r).sum();
  }
  Tensor<T> out(x.shape(), y);
  NodePtr<T> xn = x.handle();
  link(out, {&x}, [xn, y = std::move(y), m, n](const Vec<T>& g) {
    auto gm = as_matrix(g, m, n);
    auto ym = as_matrix(y, m, n);
    Vec<T> gx(m * n);
    auto gxm = as_matrix(gx, m, n);
    for (Index r = 0; r < m; ++r) {
      const T dot = gm.row(r).dot(ym.row(r));
      gxm.row(r) = (ym.row(r).array() * (gm.row(r).array() - dot)).matrix();
    }
    xn->accumulate(gx);
  });
  return out;
}

template <typename T>
Tensor<T> chw_to_tokens(const Tensor<T>& x) {
  require_rank(x, 3, "chw_to_tokens");
  const Index c = x.dim(0), hw = x.dim(1) * x.dim(2);
  return transpose(reshape(x, {c, hw}));
}

template <typename T>
Tensor<T> tokens_to_chw(const Tensor<T>& x, Index height, Index width) {
  require_rank(x, 2, "tokens_to_chw");
  if (x.dim(0) != height * width) {
    throw ShapeError("tokens_to_chw: " + shape_string(x.shape()) + " is not a " +
                     std::to_string(height) + "x" + std::to_string(width) + " grid");
  }
  return reshape(transpose(x), {x.dim(1), height, width});
}

template <typename T>
Tensor<T> patchify(const Tensor<T>& tokens, Index height, Index width, Index patch) {
  require_rank(tokens, 2, "patchify");
  if (tokens.dim(0) != height * width) {
    throw ShapeError("patchify: " + shape_string(tokens.shape()) + " is not a " +
                     std::to_string(height) + "x" + std::to_string(width) + " grid");
  }
  if (patch < 1 || height % patch != 0 || width % patch != 0) {
    throw ShapeError("patchify: grid " + std::to_string(height) + "x" + std::to_string(width) +
                     " not divisible by patch " + std::to_string(patch));
  }
  const Index c = tokens.dim(1);
  const Index oh = height / patch, ow = width / patch;
  const Index cols = patch * patch * c;
  std::vector<Index> index(static_cast<std::size_t>(oh * ow * cols));
  for (Index pi = 0; pi < oh; ++pi) {
    for (Index pj = 0; pj < ow; ++pj) {
      const Index row = pi * ow + pj;
      for (Index dx = 0; dx < patch; ++dx) {
        for (Index dy = 0; dy < patch; ++dy) {
          const Index src_token = (pi * patch + dy) * width + (pj * patch + dx);
          for (Index ch = 0; ch < c; ++ch) {
            index[static_cast<std::size_t>(row * cols + (dx * patch + dy) * c + ch)] =
                src_token * c + ch;
          }
        }
      }
    }
  }
  return gather_flat(tokens, std::move(index), {oh * ow, cols});
}

template <typename T>
Tensor<T> bce_with_logits(const Tensor<T>& logits, const Tensor<T>& targets) {
  require_same_shape(logits, targets, "bce_with_logits");
  const Vec<T>& z = logits.values();
  const Vec<T>& t = targets.values();
  if ((t < T(0)).any() || (t > T(1)).any()) {
    throw DataError("bce_with_logits: targets must lie in [0, 1]");
  }
  const Index n = z.size();
  T total = 0;
  for (Index i = 0; i < n; ++i) {
    total += std::max(z[i], T(0)) - z[i] * t[i] + std::log1p(std::exp(-std::abs(z[i])));
  }
  Tensor<T> out = Tensor<T>::scalar(total / static_cast<T>(n));
  NodePtr<T> zn = logits.handle(), tn = targets.handle();
  link(out, {&logits}, [zn, tn, n](const Vec<T>& g) {
    Vec<T> gz(n);
    for (Index i = 0; i < n; ++i) gz[i] = (stable_sigmoid(zn->value[i]) - tn->value[i]);
    zn->accumulate(gz * (g[0] / static_cast<T>(n)));
  });
  return out;
}

#define AMBA_INSTANTIATE_OPS(T)                                                              \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> transpose(const Tensor<T>&);                                            \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> scale(const Tensor<T>&, T);                                             \
  template Tensor<T> add_row_bias(const Tensor<T>&, const Tensor<T>&);                       \
  template Tensor<T> sum(const Tensor<T>&);                                                  \
  template Tensor<T> mean(const Tensor<T>&);                                                 \
  template Tensor<T> mean_rows(const Tensor<T>&);                                            \
  template Tensor<T> activation(const Tensor<T>&, Activation);                               \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);    \
  template Tensor<T> depthwise_conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&); \
  template Tensor<T> reshape(const Tensor<T>&, const Shape&);                                \
  template Tensor<T> gather_rows(const Tensor<T>&, const std::vector<Index>&);               \
  template Tensor<T> slice_cols(const Tensor<T>&, Index, Index);                             \
  template Tensor<T> concat_cols(const std::vector<Tensor<T>>&);                             \
  template Tensor<T> stack(const std::vector<Tensor<T>>&);                                   \
  template Tensor<T> softmax_rows(const Tensor<T>&);                                         \
  template Tensor<T> chw_to_tokens(const Tensor<T>&);                                        \
  template Tensor<T> tokens_to_chw(const Tensor<T>&, Index, Index);                          \
  template Tensor<T> patchify(const Tensor<T>&, Index, Index, Index);                        \
  template Tensor<T> bce_with_logits(const Tensor<T>&, const Tensor<T>&);

AMBA_INSTANTIATE_OPS(float)
AMBA_INSTANTIATE_OPS(double)

#undef AMBA_INSTANTIATE_OPS

}  // namespace amba
