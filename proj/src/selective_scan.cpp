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

#include "amba/selective_scan.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>

namespace amba {

namespace testing_hooks {
namespace {
std::atomic<bool> g_corrupt{false};
}
void set_corrupt_scan_adjoint(bool on) { g_corrupt = on; }
bool corrupt_scan_adjoint() { return g_corrupt; }
}  // namespace testing_hooks

template <typename T>
RowMat<T> ScanParams<T>::decay() const {
  return -a_log.matrix().array().exp().matrix();
}

template <typename T>
ScanParams<T> ScanParams<T>::init(Index channels, Index state_size, Index delta_rank,
                                  std::mt19937_64& rng, double dt_min, double dt_max) {
  if (channels < 1 || state_size < 1 || delta_rank < 1) {
    throw ConfigError("ScanParams: channels, state size and delta rank must be >= 1");
  }
  auto uniform = [&rng](Index n, double bound) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    Vec<T> v(n);
    for (Index i = 0; i < n; ++i) v[i] = static_cast<T>(dist(rng));
    return v;
  };
  ScanParams p;
  Vec<T> a(channels * state_size);
  for (Index d = 0; d < channels; ++d) {
    for (Index n = 0; n < state_size; ++n) a[d * state_size + n] = std::log(static_cast<T>(n + 1));
  }
  p.a_log = Tensor<T>({channels, state_size}, std::move(a), true);
  p.d_skip = Tensor<T>({channels}, Vec<T>::Ones(channels), true);
  const double in_bound = 1.0 / std::sqrt(static_cast<double>(channels));
  p.delta_down = Tensor<T>({channels, delta_rank}, uniform(channels * delta_rank, in_bound), true);
  p.delta_up = Tensor<T>({delta_rank, channels},
                         uniform(delta_rank * channels, 1.0 / std::sqrt(double(delta_rank))), true);
  std::uniform_real_distribution<double> log_dt(std::log(dt_min), std::log(dt_max));
  Vec<T> bias(channels);
  for (Index d = 0; d < channels; ++d) {
    const double dt = std::exp(log_dt(rng));
    bias[d] = static_cast<T>(dt + std::log(-std::expm1(-dt)));  // softplus^-1(dt)
  }
  p.delta_bias = Tensor<T>({channels}, std::move(bias), true);
  p.w_b = Tensor<T>({channels, state_size}, uniform(channels * state_size, in_bound), true);
  p.w_c = Tensor<T>({channels, state_size}, uniform(channels * state_size, in_bound), true);
  return p;
}

template <typename T>
ScanStep<T> compose(const ScanStep<T>& second, const ScanStep<T>& first) {
  return {first.abar.cwiseProduct(second.abar),
          second.abar.cwiseProduct(first.bx) + second.bx};
}

template <typename T>
ScanStep<T> discretize(const RowMat<T>& decay, const Eigen::Ref<const Vec<T>>& x_t,
                       const Eigen::Ref<const Vec<T>>& delta_t,
                       const Eigen::Ref<const Vec<T>>& b_t) {
  if ((delta_t <= T(0)).any()) throw UsageError("discretize: delta must be strictly positive");
  ScanStep<T> s;
  s.abar = (decay.array().colwise() * delta_t).exp().matrix();
  s.bx = (delta_t * x_t).matrix() * b_t.matrix().transpose();
  return s;
}

namespace {

template <typename T>
void check_input(const RowMat<T>& decay, const Vec<T>& d_skip, const ScanInput<T>& in) {
  const Index l = in.x.rows(), d = in.x.cols(), n = decay.cols();
  if (l < 1 || d < 1 || n < 1) throw ShapeError("scan: empty input");
  if (decay.rows() != d || d_skip.size() != d || in.delta.rows() != l || in.delta.cols() != d ||
      in.b.rows() != l || in.b.cols() != n || in.c.rows() != l || in.c.cols() != n) {
    throw ShapeError("scan: inconsistent shapes (L=" + std::to_string(l) + ", D=" +
                     std::to_string(d) + ", N=" + std::to_string(n) + ")");
  }
}

template <typename T>
bool wants_grad(const std::shared_ptr<detail::Node<T>>& n) {
  return n && n->requires_grad;
}

// Raw chunked kernel shared by scan_chunked and the differentiable op.
// `states`, when non-null, receives h_t for every t as L blocks of D*N.
template <typename T>
void scan_kernel(const T* decay, const T* d_skip, const T* x, const T* delta, const T* b,
                 const T* c, Index l, Index d, Index n, Index chunk, T* y, T* states) {
  const Index dn = d * n;
  const Index nchunks = (l + chunk - 1) / chunk;
  std::vector<T> carry(static_cast<std::size_t>((nchunks + 1) * dn), T(0));
  std::vector<T> sum_a(static_cast<std::size_t>(dn));
  std::vector<T> sum_b(static_cast<std::size_t>(dn));

  // Summaries of each chunk as a single composed step, then the carry pass.
  for (Index k = 0; k < nchunks; ++k) {
    std::fill(sum_a.begin(), sum_a.end(), T(1));
    std::fill(sum_b.begin(), sum_b.end(), T(0));
    const Index end = std::min(l, (k + 1) * chunk);
    for (Index t = k * chunk; t < end; ++t) {
      for (Index i = 0; i < d; ++i) {
        const T dt = delta[t * d + i];
        const T u = dt * x[t * d + i];
        for (Index j = 0; j < n; ++j) {
          const T abar = std::exp(dt * decay[i * n + j]);
          T& sa = sum_a[static_cast<std::size_t>(i * n + j)];
          T& sb = sum_b[static_cast<std::size_t>(i * n + j)];
          sb = abar * sb + u * b[t * n + j];
          sa = abar * sa;
        }
      }
    }
    const T* in = &carry[static_cast<std::size_t>(k * dn)];
    T* out = &carry[static_cast<std::size_t>((k + 1) * dn)];
    for (Index e = 0; e < dn; ++e) out[e] = sum_a[static_cast<std::size_t>(e)] * in[e] + sum_b[static_cast<std::size_t>(e)];
  }

  // Replay each chunk from its carried-in state.
  std::vector<T> h(static_cast<std::size_t>(dn));
  for (Index k = 0; k < nchunks; ++k) {
    std::copy_n(&carry[static_cast<std::size_t>(k * dn)], dn, h.begin());
    const Index end = std::min(l, (k + 1) * chunk);
    for (Index t = k * chunk; t < end; ++t) {
      for (Index i = 0; i < d; ++i) {
        const T dt = delta[t * d + i];
        const T u = dt * x[t * d + i];
        T acc = 0;
        for (Index j = 0; j < n; ++j) {
          T& hv = h[static_cast<std::size_t>(i * n + j)];
          hv = std::exp(dt * decay[i * n + j]) * hv + u * b[t * n + j];
          acc += c[t * n + j] * hv;
        }
        y[t * d + i] = acc + d_skip[i] * x[t * d + i];
      }
      if (states != nullptr) std::copy(h.begin(), h.end(), states + t * dn);
    }
  }
}

}  // namespace

template <typename T>
RowMat<T> scan_sequential(const RowMat<T>& decay, const Vec<T>& d_skip, const ScanInput<T>& in,
                          std::vector<RowMat<T>>* states) {
  check_input(decay, d_skip, in);
  const Index l = in.length(), d = in.channels(), n = decay.cols();
  RowMat<T> y(l, d);
  RowMat<T> h = RowMat<T>::Zero(d, n);
  if (states != nullptr) states->clear();
  for (Index t = 0; t < l; ++t) {
    const Vec<T> x_t = in.x.row(t).transpose().array();
    const ScanStep<T> step =
        discretize<T>(decay, x_t, in.delta.row(t).transpose().array(), in.b.row(t).transpose().array());
    h = step.abar.cwiseProduct(h) + step.bx;
    y.row(t) = (h * in.c.row(t).transpose()).transpose() +
               (d_skip * x_t).matrix().transpose();
    if (states != nullptr) states->push_back(h);
  }
  return y;
}

template <typename T>
RowMat<T> scan_chunked(const RowMat<T>& decay, const Vec<T>& d_skip, const ScanInput<T>& in,
                       Index chunk, std::vector<RowMat<T>>* states) {
  check_input(decay, d_skip, in);
  if (chunk < 1) throw ConfigError("scan_chunked: chunk must be >= 1");
  const Index l = in.length(), d = in.channels(), n = decay.cols();
  RowMat<T> y(l, d);
  std::vector<T> flat;
  if (states != nullptr) flat.resize(static_cast<std::size_t>(l * d * n));
  scan_kernel(decay.data(), d_skip.data(), in.x.data(), in.delta.data(), in.b.data(),
              in.c.data(), l, d, n, chunk, y.data(), states ? flat.data() : nullptr);
  if (states != nullptr) {
    states->clear();
    for (Index t = 0; t < l; ++t) {
      states->push_back(Eigen::Map<const RowMat<T>>(flat.data() + t * d * n, d, n));
    }
  }
  return y;
}

template <typename T>
Tensor<T> selective_scan(const Tensor<T>& x, const Tensor<T>& delta, const Tensor<T>& a_log,
                         const Tensor<T>& b, const Tensor<T>& c, const Tensor<T>& d_skip,
                         Index chunk) {
  if (x.rank() != 2 || a_log.rank() != 2) throw ShapeError("selective_scan: x and A_log must be rank 2");
  const Index l = x.dim(0), d = x.dim(1), n = a_log.dim(1);
  const Shape ld{l, d}, ln{l, n};
  if (delta.shape() != ld || b.shape() != ln || c.shape() != ln || a_log.dim(0) != d ||
      d_skip.size() != d) {
    throw ShapeError("selective_scan: x " + shape_string(x.shape()) + ", delta " +
                     shape_string(delta.shape()) + ", A_log " + shape_string(a_log.shape()) +
                     ", B " + shape_string(b.shape()) + ", C " + shape_string(c.shape()));
  }
  if (chunk < 1) throw ConfigError("selective_scan: chunk must be >= 1");
  const RowMat<T> decay = -a_log.matrix().array().exp().matrix();
  const bool grad = detail::any_requires_grad<T>({&x, &delta, &a_log, &b, &c, &d_skip});
  Vec<T> y(l * d);
  Vec<T> states;
  if (grad) states.resize(l * d * n);
  scan_kernel(decay.data(), d_skip.values().data(), x.values().data(), delta.values().data(),
              b.values().data(), c.values().data(), l, d, n, chunk, y.data(),
              grad ? states.data() : nullptr);
  Tensor<T> out(ld, std::move(y));
  if (!grad) return out;

  out.set_requires_grad(true);
  auto on = out.handle();
  auto xn = x.handle(), dn_ = delta.handle(), an = a_log.handle(), bn = b.handle(),
       cn = c.handle(), sn = d_skip.handle();
  Tape<T>::current().record([on, xn, dn_, an, bn, cn, sn, decay, states = std::move(states), l,
                             d, n]() {
    if (on->grad.size() == 0) return;
    const T* g = on->grad.data();
    const T* xv = xn->value.data();
    const T* dv = dn_->value.data();
    const T* bv = bn->value.data();
    const T* cv = cn->value.data();
    const T* skip = sn->value.data();
    const T* a = decay.data();
    const Index dnn = d * n;
    Vec<T> gx = Vec<T>::Zero(l * d), gdelta = Vec<T>::Zero(l * d);
    Vec<T> gb = Vec<T>::Zero(l * n), gc = Vec<T>::Zero(l * n);
    Vec<T> gdecay = Vec<T>::Zero(dnn), gskip = Vec<T>::Zero(d);
    Vec<T> gh = Vec<T>::Zero(dnn);
    for (Index t = l - 1; t >= 0; --t) {
      const T* h_t = states.data() + t * dnn;
      const T* h_prev = t > 0 ? states.data() + (t - 1) * dnn : nullptr;
      for (Index i = 0; i < d; ++i) {
        const T gy = g[t * d + i];
        const T xt = xv[t * d + i];
        const T dt = dv[t * d + i];
        gskip[i] += gy * xt;
        gx[t * d + i] += gy * skip[i];
        T gdt = 0;
        T gxin = 0;
        for (Index j = 0; j < n; ++j) {
          const Index e = i * n + j;
          gh[e] += gy * cv[t * n + j];
          gc[t * n + j] += gy * h_t[e];
          const T abar = std::exp(dt * a[e]);
          const T hp = h_prev ? h_prev[e] : T(0);
          const T gabar_abar = gh[e] * hp * abar;
          gdt += gh[e] * bv[t * n + j] * xt + gabar_abar * a[e];
          gb[t * n + j] += gh[e] * dt * xt;
          gxin += gh[e] * bv[t * n + j];
          gdecay[e] += gabar_abar * dt;
          gh[e] *= abar;
        }
        gdelta[t * d + i] += gdt;
        gx[t * d + i] += dt * gxin;
      }
    }
    if (testing_hooks::corrupt_scan_adjoint()) gx *= T(1.5);
    if (wants_grad(xn)) xn->accumulate(gx);
    if (wants_grad(dn_)) dn_->accumulate(gdelta);
    if (wants_grad(bn)) bn->accumulate(gb);
    if (wants_grad(cn)) cn->accumulate(gc);
    if (wants_grad(sn)) sn->accumulate(gskip);
    if (wants_grad(an)) {
      Eigen::Map<const Vec<T>> av(a, dnn);
      an->accumulate(gdecay * av);  // dA/dA_log = A
    }
  });
  return out;
}

template <typename T>
Tensor<T> selective_scan_forward(const ScanParams<T>& p, const Tensor<T>& x, Index chunk) {
  if (x.rank() != 2 || x.dim(1) != p.channels()) {
    throw ShapeError("selective_scan_forward: input " + shape_string(x.shape()) + " vs " +
                     std::to_string(p.channels()) + " channels");
  }
  const Tensor<T> low = matmul(x, p.delta_down);
  const Tensor<T> delta = softplus(add_row_bias(matmul(low, p.delta_up), p.delta_bias));
  const Tensor<T> b = matmul(x, p.w_b);
  const Tensor<T> c = matmul(x, p.w_c);
  return selective_scan(x, delta, p.a_log, b, c, p.d_skip, chunk);
}

std::vector<Index> scan_permutation(ScanOrder order, Index height, Index width) {
  if (height < 1 || width < 1) throw ShapeError("scan_permutation: empty grid");
  const Index total = height * width;
  std::vector<Index> perm(static_cast<std::size_t>(total));
  for (Index i = 0; i < total; ++i) {
    const Index fwd = (order == ScanOrder::kRowReverse || order == ScanOrder::kColReverse)
                          ? total - 1 - i
                          : i;
    if (order == ScanOrder::kRowForward || order == ScanOrder::kRowReverse) {
      perm[static_cast<std::size_t>(i)] = fwd;
    } else {
      perm[static_cast<std::size_t>(i)] = (fwd % height) * width + fwd / height;
    }
  }
  return perm;
}

std::vector<Index> inverse_permutation(const std::vector<Index>& perm) {
  std::vector<Index> inv(perm.size(), -1);
  for (std::size_t i = 0; i < perm.size(); ++i) {
    const auto p = static_cast<std::size_t>(perm[i]);
    if (p >= perm.size() || inv[p] != -1) throw UsageError("inverse_permutation: not a bijection");
    inv[p] = static_cast<Index>(i);
  }
  return inv;
}

template <typename T>
std::array<Tensor<T>, 4> cross_scan_tokens(const Tensor<T>& tokens, Index height, Index width) {
  std::array<Tensor<T>, 4> out;
  for (std::size_t k = 0; k < 4; ++k) {
    out[k] = gather_rows(tokens, scan_permutation(kScanOrders[k], height, width));
  }
  return out;
}

template <typename T>
Tensor<T> cross_merge_tokens(const std::array<Tensor<T>, 4>& seqs, Index height, Index width) {
  for (const auto& s : seqs) {
    if (s.rank() != 2 || s.dim(0) != height * width || s.shape() != seqs[0].shape()) {
      throw ShapeError("cross_merge: sequence " + shape_string(s.shape()) + " does not fit a " +
                       std::to_string(height) + "x" + std::to_string(width) + " grid");
    }
  }
  Tensor<T> acc;
  for (std::size_t k = 0; k < 4; ++k) {
    const auto inv = inverse_permutation(scan_permutation(kScanOrders[k], height, width));
    Tensor<T> back = gather_rows(seqs[k], inv);
    acc = k == 0 ? back : add(acc, back);
  }
  return acc;
}

template <typename T>
std::array<Tensor<T>, 4> cross_scan(const Tensor<T>& f) {
  if (f.rank() != 3) throw ShapeError("cross_scan: expected [C x H x W], got " + shape_string(f.shape()));
  return cross_scan_tokens(chw_to_tokens(f), f.dim(1), f.dim(2));
}

template <typename T>
Tensor<T> cross_merge(const std::array<Tensor<T>, 4>& seqs, Index height, Index width) {
  return tokens_to_chw(cross_merge_tokens(seqs, height, width), height, width);
}

template <typename T>
Tensor<T> ss2d_tokens(const std::array<ScanParams<T>, 4>& params, const Tensor<T>& tokens,
                      Index height, Index width, Index chunk) {
  auto seqs = cross_scan_tokens(tokens, height, width);
  std::array<Tensor<T>, 4> ys;
  for (std::size_t k = 0; k < 4; ++k) ys[k] = selective_scan_forward(params[k], seqs[k], chunk);
  return cross_merge_tokens(ys, height, width);
}

template <typename T>
Tensor<T> ss2d_forward(const std::array<ScanParams<T>, 4>& params, const Tensor<T>& f,
                       Index chunk) {
  if (f.rank() != 3) throw ShapeError("ss2d_forward: expected [C x H x W], got " + shape_string(f.shape()));
  const Index h = f.dim(1), w = f.dim(2);
  return tokens_to_chw(ss2d_tokens(params, chw_to_tokens(f), h, w, chunk), h, w);
}

template <typename T>
Tensor<T> ss2d_forward(const ScanParams<T>& shared, const Tensor<T>& f, Index chunk) {
  return ss2d_forward(std::array<ScanParams<T>, 4>{shared, shared, shared, shared}, f, chunk);
}

#define AMBA_INSTANTIATE_SCAN(T)                                                                 \
  template struct ScanParams<T>;                                                                 \
  template ScanStep<T> compose(const ScanStep<T>&, const ScanStep<T>&);                          \
  template ScanStep<T> discretize(const RowMat<T>&, const Eigen::Ref<const Vec<T>>&,             \
                                  const Eigen::Ref<const Vec<T>>&,                               \
                                  const Eigen::Ref<const Vec<T>>&);                              \
  template RowMat<T> scan_sequential(const RowMat<T>&, const Vec<T>&, const ScanInput<T>&,       \
                                     std::vector<RowMat<T>>*);                                   \
  template RowMat<T> scan_chunked(const RowMat<T>&, const Vec<T>&, const ScanInput<T>&, Index,   \
                                  std::vector<RowMat<T>>*);                                      \
  template Tensor<T> selective_scan(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,        \
                                    const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Index); \
  template Tensor<T> selective_scan_forward(const ScanParams<T>&, const Tensor<T>&, Index);      \
  template std::array<Tensor<T>, 4> cross_scan_tokens(const Tensor<T>&, Index, Index);           \
  template Tensor<T> cross_merge_tokens(const std::array<Tensor<T>, 4>&, Index, Index);          \
  template std::array<Tensor<T>, 4> cross_scan(const Tensor<T>&);                                \
  template Tensor<T> cross_merge(const std::array<Tensor<T>, 4>&, Index, Index);                 \
  template Tensor<T> ss2d_tokens(const std::array<ScanParams<T>, 4>&, const Tensor<T>&, Index,   \
                                 Index, Index);                                                  \
  template Tensor<T> ss2d_forward(const std::array<ScanParams<T>, 4>&, const Tensor<T>&, Index); \
  template Tensor<T> ss2d_forward(const ScanParams<T>&, const Tensor<T>&, Index);

AMBA_INSTANTIATE_SCAN(float)
AMBA_INSTANTIATE_SCAN(double)

#undef AMBA_INSTANTIATE_SCAN

}  // namespace amba
