#include "doctest.h"

#include <cmath>
#include <random>

#include "amba/errors.hpp"
#include "amba/metrics.hpp"

using namespace amba;

namespace {

// O(n^2) pair counting: wins + ties / 2 over all (positive, negative) pairs.
double pair_counting_auc(const std::vector<double>& s, const std::vector<int>& l) {
  double wins = 0, pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!l[i]) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (l[j]) continue;
      pairs += 1;
      if (s[i] > s[j]) wins += 1;
      else if (s[i] == s[j]) wins += 0.5;
    }
  }
  return wins / pairs;
}

}  // namespace

TEST_CASE("average precision hand cases") {
  std::vector<double> s{0.9, 0.8, 0.7};
  std::vector<int> l{1, 0, 1};
  CHECK(average_precision(s, l) == doctest::Approx((1.0 + 2.0 / 3.0) / 2.0).epsilon(1e-15));
  CHECK(average_precision(s, std::vector<int>{1, 1, 0}) == 1.0);
  CHECK(average_precision(s, std::vector<int>{1, 1, 1}) == 1.0);
  CHECK_THROWS_AS(average_precision(s, std::vector<int>{0, 0, 0}), UndefinedMetric);
  // Ties keep input order: the later positive ranks second.
  CHECK(average_precision(std::vector<double>{0.5, 0.5}, std::vector<int>{0, 1}) == 0.5);
  CHECK_THROWS_AS(average_precision(s, std::vector<int>{1, 0}), ShapeError);
}

TEST_CASE("average precision is invariant to monotone transforms") {
  std::mt19937_64 rng(40);
  std::uniform_real_distribution<double> u(0, 1);
  std::bernoulli_distribution coin(0.3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> s(30), t(30);
    std::vector<int> l(30);
    for (int i = 0; i < 30; ++i) {
      s[i] = u(rng);
      t[i] = std::exp(3 * s[i]) - 7;
      l[i] = coin(rng);
    }
    l[0] = 1;
    CHECK(average_precision(s, l) == average_precision(t, l));
  }
}

TEST_CASE("roc auc edge cases") {
  CHECK(roc_auc(std::vector<double>{0.1, 0.2, 0.8, 0.9}, std::vector<int>{0, 0, 1, 1}) == 1.0);
  CHECK(roc_auc(std::vector<double>{0.3, 0.3, 0.3, 0.3}, std::vector<int>{0, 1, 0, 1}) == 0.5);
  CHECK_THROWS_AS(roc_auc(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1}), UndefinedMetric);
}

TEST_CASE("roc auc equals pair counting exactly") {
  std::mt19937_64 rng(41);
  for (int trial = 0; trial < 300; ++trial) {
    std::uniform_int_distribution<int> len(2, 200);
    const int n = len(rng);
    std::uniform_int_distribution<int> level(0, 9);  // coarse scores force ties
    std::vector<double> s(n);
    std::vector<int> l(n);
    for (int i = 0; i < n; ++i) {
      s[i] = level(rng) / 10.0;
      l[i] = i % 2 == 0 ? 1 : static_cast<int>(rng() % 2);
    }
    l[1] = 0;
    CHECK(roc_auc(s, l) == pair_counting_auc(s, l));
  }
}

TEST_CASE("d prime") {
  CHECK(d_prime_gaussian(1, 0, 1, 1) == 1.0);
  CHECK(d_prime(0.5) == 0.0);
  // sqrt(2) * Phi^-1(0.95), reference value from 30-digit arithmetic.
  CHECK(std::abs(d_prime(0.95) - 2.3261743073533482) < 1e-9);
  CHECK(std::abs(inverse_normal_cdf(0.975) - 1.959963984540054) < 1e-12);
  CHECK(std::abs(inverse_normal_cdf(1e-6) + 4.753424308822899) < 1e-9);
  double last = -100;
  for (double a = 0.01; a < 1.0; a += 0.01) {
    const double d = d_prime(a);
    CHECK(d > last);
    last = d;
  }
  bool clamped = false;
  CHECK(d_prime(1.0, &clamped) == kDPrimeClamp);
  CHECK(clamped);
  CHECK(d_prime(0.0) == -kDPrimeClamp);
}

TEST_CASE("f1 and accuracy") {
  std::vector<int> p{0, 0, 1, 1}, t{0, 1, 1, 1};
  auto r = f1_and_accuracy(p, t, 2);
  CHECK(r.f1_micro == 0.75);
  CHECK(r.f1_macro == doctest::Approx((2.0 / 3.0 + 0.8) / 2.0).epsilon(1e-15));
  CHECK(r.accuracy == 0.75);

  auto all = f1_and_accuracy(t, t, 2);
  CHECK(all.f1_micro == 1.0);
  CHECK(all.f1_macro == 1.0);
  CHECK(all.accuracy == 1.0);

  auto missing = f1_and_accuracy(std::vector<int>{0, 1}, std::vector<int>{0, 1}, 3);
  REQUIRE(missing.classes_without_support.size() == 1);
  CHECK(missing.classes_without_support[0] == 2);
  CHECK(missing.f1_macro == doctest::Approx(2.0 / 3.0));

  CHECK_THROWS_AS(f1_and_accuracy(std::vector<int>{0}, std::vector<int>{0, 1}, 2), ShapeError);
}

TEST_CASE("micro f1 equals accuracy for single-label predictions") {
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 300), k = 2 + static_cast<int>(rng() % 50);
    std::vector<int> p(n), t(n);
    for (int i = 0; i < n; ++i) {
      p[i] = static_cast<int>(rng() % k);
      t[i] = static_cast<int>(rng() % k);
    }
    auto r = f1_and_accuracy(p, t, k);
    CHECK(r.f1_micro == r.accuracy);
  }
}

TEST_CASE("mAUC of random scores sits at chance") {
  std::mt19937_64 rng(43);
  std::uniform_real_distribution<double> u(0, 1);
  const int n = 200, c = 20;
  for (int trial = 0; trial < 1000; ++trial) {
    ScoreMatrix s(n, c);
    LabelMatrix l(n, c);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < c; ++j) {
        s(i, j) = u(rng);
        l(i, j) = (i + j) % 2;
      }
    }
    const auto report = multilabel_report(s, l);
    CHECK(std::abs(report.mAUC - 0.5) <= 0.05);
  }
}

TEST_CASE("eval report excludes undefined classes and formats fixed text") {
  ScoreMatrix s(3, 2);
  s << 0.9, 0.1, 0.2, 0.3, 0.8, 0.4;
  LabelMatrix l(3, 2);
  l << 1, 0, 0, 0, 1, 0;
  auto r = multilabel_report(s, l);
  CHECK(r.ap_excluded == 1);
  CHECK(r.auc_excluded == 1);
  CHECK(r.mAP == 1.0);
  CHECK(r.mAUC == 1.0);
  const std::string text = r.to_text();
  CHECK(text.find("mAP=1.000000\n") != std::string::npos);
  CHECK(text.find("ap[1]=excluded\n") != std::string::npos);
  CHECK(text == multilabel_report(s, l).to_text());

  auto single = singlelabel_report(s, std::vector<int>{0, 0, 0});
  REQUIRE(single.classification.has_value());
  CHECK(single.classification->accuracy == doctest::Approx(2.0 / 3.0));
  CHECK(single.to_text().find("f1_micro=0.666667\n") != std::string::npos);
}

TEST_CASE("oracle scores give perfect ranking metrics") {
  LabelMatrix l(6, 3);
  l << 1, 0, 0, 0, 1, 0, 0, 0, 1, 1, 1, 0, 0, 1, 1, 1, 0, 1;
  ScoreMatrix s = l.cast<double>();
  auto r = multilabel_report(s, l);
  CHECK(r.mAP == 1.0);
  CHECK(r.mAUC == 1.0);
}
