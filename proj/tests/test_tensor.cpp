#include "doctest.h"

#include <cmath>
#include <random>

#include "amba/ops.hpp"
#include "test_util.hpp"

using namespace amba;
using amba::test::random_tensor;
using amba::test::weighted_sum;
using amba::test::worst_grad_error;

namespace {

Tensor<float> mat(Index r, Index c, std::initializer_list<float> v) {
  Vec<float> a(static_cast<Index>(v.size()));
  Index i = 0;
  for (float x : v) a[i++] = x;
  return Tensor<float>({r, c}, a);
}

}  // namespace

TEST_CASE("matmul basics") {
  auto eye = mat(2, 2, {1, 0, 0, 1});
  auto m = mat(2, 2, {1, 2, 3, 4});
  CHECK((matmul(eye, m).values() == m.values()).all());

  auto proj = mat(2, 2, {1, 0, 0, 0});
  auto rhs = mat(2, 2, {5, 6, 7, 8});
  Vec<float> expect(4);
  expect << 5, 6, 0, 0;
  CHECK((matmul(proj, rhs).values() == expect).all());
}

TEST_CASE("matmul matches triple loop") {
  std::mt19937_64 rng(1);
  auto a = random_tensor<float>({3, 4}, rng);
  auto b = random_tensor<float>({4, 2}, rng);
  auto c = matmul(a, b);
  double worst = 0;
  for (Index i = 0; i < 3; ++i) {
    for (Index j = 0; j < 2; ++j) {
      double acc = 0;
      for (Index k = 0; k < 4; ++k) acc += double(a.values()[i * 4 + k]) * b.values()[k * 2 + j];
      worst = std::max(worst, std::abs(acc - c.values()[i * 2 + j]));
    }
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("matmul shape mismatch names both shapes") {
  auto a = Tensor<float>::zeros({2, 3});
  auto b = Tensor<float>::zeros({2, 3});
  try {
    matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3] x [2x3]") != std::string::npos);
  }
}

TEST_CASE("depthwise conv identity and box sum") {
  std::mt19937_64 rng(2);
  auto x = random_tensor<float>({1, 4, 5}, rng);
  auto k = Tensor<float>::filled({1, 1, 1}, 1.0f);
  CHECK((depthwise_conv2d(x, k).values() == x.values()).all());

  auto ones = Tensor<float>::filled({1, 5, 5}, 1.0f);
  auto box = Tensor<float>::filled({1, 3, 3}, 1.0f);
  auto y = depthwise_conv2d(ones, box);
  CHECK(y.values()[2 * 5 + 2] == 9.0f);
  CHECK(y.values()[0] == 4.0f);  // corner sees a 2x2 window under zero padding

  CHECK_THROWS_AS(depthwise_conv2d(ones, Tensor<float>::filled({1, 2, 3}, 1.0f)), ConfigError);
}

TEST_CASE("depthwise conv matches sliding-window oracle") {
  std::mt19937_64 rng(3);
  const Index c = 2, h = 5, w = 5, kh = 3, kw = 3;
  auto x = random_tensor<float>({c, h, w}, rng);
  auto k = random_tensor<float>({c, kh, kw}, rng);
  auto bias = random_tensor<float>({c}, rng);
  auto y = depthwise_conv2d(x, k, bias);
  double worst = 0;
  for (Index ch = 0; ch < c; ++ch) {
    // Zero-padded copy, then a plain window sum.
    std::vector<double> pad((h + 2) * (w + 2), 0.0);
    for (Index i = 0; i < h; ++i)
      for (Index j = 0; j < w; ++j) pad[(i + 1) * (w + 2) + j + 1] = x.values()[(ch * h + i) * w + j];
    for (Index i = 0; i < h; ++i) {
      for (Index j = 0; j < w; ++j) {
        double acc = bias.values()[ch];
        for (Index a = 0; a < kh; ++a)
          for (Index b = 0; b < kw; ++b)
            acc += k.values()[(ch * kh + a) * kw + b] * pad[(i + a) * (w + 2) + j + b];
        worst = std::max(worst, std::abs(acc - y.values()[(ch * h + i) * w + j]));
      }
    }
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("layer_norm examples and moments") {
  auto ones = Tensor<float>::filled({3}, 1.0f);
  auto g3 = Tensor<float>::filled({3}, 1.0f), b3 = Tensor<float>::zeros({3});
  auto y = layer_norm(ones, g3, b3);
  CHECK((y.values() == 0.0f).all());

  Vec<double> v(2);
  v << -1, 1;
  auto g2 = Tensor<double>::filled({2}, 1.0), b2 = Tensor<double>::zeros({2});
  auto y2 = layer_norm(Tensor<double>({2}, v), g2, b2, 1e-5);
  CHECK(y2.values()[0] == doctest::Approx(-1.0 / std::sqrt(1.0 + 1e-5)).epsilon(1e-12));
  CHECK(y2.values()[1] == doctest::Approx(1.0 / std::sqrt(1.0 + 1e-5)).epsilon(1e-12));

  std::mt19937_64 rng(4);
  auto row = random_tensor<double>({1, 64}, rng, -3, 5);
  auto gd = Tensor<double>::filled({64}, 1.0), bd = Tensor<double>::zeros({64});
  auto out = layer_norm(row, gd, bd, 1e-5).values();
  const double mu = out.mean();
  const double var = (out - mu).square().mean();
  CHECK(std::abs(mu) < 1e-6);
  CHECK(std::abs(var - 1.0) < 1e-4);
}

TEST_CASE("activations") {
  auto z = Tensor<double>::scalar(0.0);
  CHECK(silu(z).item() == 0.0);
  CHECK(sigmoid(z).item() == 0.5);
  // log(1 + e^20) evaluated to 17 digits: 20 + 2.0611536203...e-9.
  CHECK(std::abs(softplus(Tensor<double>::scalar(20.0)).item() - 20.000000002061154) < 1e-12);
  CHECK(std::isfinite(softplus(Tensor<double>::scalar(1000.0)).item()));
  CHECK(softplus(Tensor<double>::scalar(1000.0)).item() == 1000.0);
  CHECK(softplus(Tensor<double>::scalar(-1000.0)).item() == 0.0);
  CHECK(gelu(z).item() == 0.0);
  CHECK(gelu(Tensor<double>::scalar(1.0)).item() == doctest::Approx(0.8413447460685429));
}

TEST_CASE("backward on simple losses") {
  auto& tape = Tape<double>::current();
  tape.reset();
  Vec<double> v(3);
  v << 1, 2, 3;
  Tensor<double> x({3}, v, true);
  backward(sum(x));
  CHECK((x.grad() == 1.0).all());
  CHECK(tape.size() == 0);
  tape.reset();

  Vec<double> w(2);
  w << 1, 2;
  Tensor<double> y({2}, w, true);
  backward(sum(mul(y, y)));
  CHECK(y.grad()[0] == 2.0);
  CHECK(y.grad()[1] == 4.0);
  tape.reset();
}

TEST_CASE("backward rejects misuse") {
  auto& tape = Tape<double>::current();
  tape.reset();
  Tensor<double> x({2}, Vec<double>::Ones(2), true);
  auto y = scale(x, 2.0);
  CHECK_THROWS_AS(backward(y), UsageError);
  auto loss = sum(y);
  backward(loss);
  CHECK_THROWS_AS(backward(loss), UsageError);
  tape.reset();
}

TEST_CASE("no-grad guard records nothing") {
  auto& tape = Tape<float>::current();
  tape.reset();
  Tensor<float> x({2}, Vec<float>::Ones(2), true);
  {
    NoGradGuard guard;
    auto y = sum(x);
    CHECK_FALSE(y.requires_grad());
  }
  CHECK(tape.size() == 0);
}

TEST_CASE("analytic gradients match finite differences") {
  std::mt19937_64 rng(5);
  auto a = random_tensor<double>({3, 4}, rng);
  auto b = random_tensor<double>({4, 2}, rng);
  CHECK(worst_grad_error([&] { return weighted_sum(matmul(a, b)); }, {a, b}) < 1e-4);

  auto x = random_tensor<double>({2, 4, 5}, rng);
  auto k = random_tensor<double>({2, 3, 3}, rng);
  auto kb = random_tensor<double>({2}, rng);
  CHECK(worst_grad_error([&] { return weighted_sum(depthwise_conv2d(x, k, kb)); }, {x, k, kb}) <
        1e-4);

  auto r = random_tensor<double>({3, 6}, rng, -2, 2);
  auto g = random_tensor<double>({6}, rng);
  auto be = random_tensor<double>({6}, rng);
  CHECK(worst_grad_error([&] { return weighted_sum(layer_norm(r, g, be, 1e-5)); }, {r, g, be}) <
        1e-4);

  auto s = random_tensor<double>({2, 5}, rng, -4, 4);
  for (Activation kind :
       {Activation::kSilu, Activation::kGelu, Activation::kSigmoid, Activation::kSoftplus}) {
    CHECK(worst_grad_error([&] { return weighted_sum(activation(s, kind)); }, {s}) < 1e-4);
  }
  CHECK(worst_grad_error([&] { return weighted_sum(softmax_rows(s)); }, {s}) < 1e-4);
  CHECK(worst_grad_error([&] { return weighted_sum(mean_rows(s)); }, {s}) < 1e-4);
  CHECK(worst_grad_error([&] { return weighted_sum(transpose(s)); }, {s}) < 1e-4);

  auto bias = random_tensor<double>({5}, rng);
  CHECK(worst_grad_error([&] { return weighted_sum(add_row_bias(s, bias)); }, {s, bias}) < 1e-4);

  auto tok = random_tensor<double>({16, 3}, rng);
  CHECK(worst_grad_error([&] { return weighted_sum(patchify(tok, 4, 4, 2)); }, {tok}) < 1e-4);
  CHECK(worst_grad_error(
            [&] {
              return weighted_sum(concat_cols<double>({slice_cols(tok, 0, 2), slice_cols(tok, 1, 2)}));
            },
            {tok}) < 1e-4);
  CHECK(worst_grad_error([&] { return weighted_sum(stack<double>({s, mul(s, s)})); }, {s}) < 1e-4);

  auto logits = random_tensor<double>({2, 3}, rng, -3, 3);
  auto targets = random_tensor<double>({2, 3}, rng, 0, 1);
  CHECK(worst_grad_error([&] { return bce_with_logits(logits, targets); }, {logits}) < 1e-4);
}

TEST_CASE("patchify layout") {
  // 4x4 grid of scalar tokens valued by index; 2x2 patches.
  Vec<float> v(16);
  for (Index i = 0; i < 16; ++i) v[i] = float(i);
  auto p = patchify(Tensor<float>({16, 1}, v), 4, 4, 2);
  REQUIRE(p.shape() == Shape{4, 4});
  // First patch: offsets (0,0), (1,0), (0,1), (1,1) as (dy, dx).
  CHECK(p.values()[0] == 0.0f);
  CHECK(p.values()[1] == 4.0f);
  CHECK(p.values()[2] == 1.0f);
  CHECK(p.values()[3] == 5.0f);
  CHECK_THROWS_AS(patchify(Tensor<float>({16, 1}, v), 4, 4, 3), ShapeError);
}

TEST_CASE("bce_with_logits values and validation") {
  auto z = Tensor<double>::zeros({1, 1});
  auto half = Tensor<double>::filled({1, 1}, 0.5);
  CHECK(bce_with_logits(z, half).item() == doctest::Approx(std::log(2.0)));
  auto big = Tensor<double>::filled({1, 1}, 20.0);
  auto one = Tensor<double>::filled({1, 1}, 1.0);
  CHECK(bce_with_logits(big, one).item() < 3e-9);
  CHECK_THROWS_AS(bce_with_logits(z, Tensor<double>::filled({1, 1}, 1.5)), DataError);

  std::mt19937_64 rng(6);
  auto logits = random_tensor<double>({2, 3}, rng, -4, 4);
  auto t = random_tensor<double>({2, 3}, rng, 0, 1);
  double direct = 0;
  for (Index i = 0; i < 6; ++i) {
    const double s = 1.0 / (1.0 + std::exp(-logits.values()[i]));
    direct -= t.values()[i] * std::log(s) + (1 - t.values()[i]) * std::log(1 - s);
  }
  direct /= 6;
  CHECK(std::abs(bce_with_logits(logits, t).item() - direct) / direct < 1e-6);
}

TEST_CASE("gradients are bit-identical across repeated passes") {
  std::mt19937_64 rng(7);
  auto a = random_tensor<float>({8, 16}, rng, -1, 1, true);
  auto b = random_tensor<float>({16, 4}, rng, -1, 1, true);
  auto run = [&] {
    a.zero_grad();
    b.zero_grad();
    Tape<float>::current().reset();
    backward(sum(gelu(matmul(a, b))));
    Tape<float>::current().reset();
    return std::make_pair(a.grad(), b.grad());
  };
  auto first = run();
  auto second = run();
  CHECK((first.first == second.first).all());
  CHECK((first.second == second.second).all());
}
