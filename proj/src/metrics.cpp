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

#include "amba/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <numbers>
#include <numeric>

#include "amba/errors.hpp"

namespace amba {
namespace {

using Eigen::Index;

void check_lengths(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw ShapeError(std::string(what) + ": " + std::to_string(a) + " scores vs " +
                     std::to_string(b) + " labels");
  }
}

}  // namespace

double average_precision(std::span<const double> scores, std::span<const int> labels) {
  check_lengths(scores.size(), labels.size(), "average_precision");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double hits = 0, total = 0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    if (labels[order[k]] != 0) {
      hits += 1;
      total += hits / static_cast<double>(k + 1);
    }
  }
  if (hits == 0) throw UndefinedMetric("average_precision: no positive labels");
  return total / hits;
}

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  check_lengths(scores.size(), labels.size(), "roc_auc");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Sum of 1-based mid-ranks of the positives; all terms are exact halves.
  double pos_rank_sum = 0, n_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double mid = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (std::size_t k = i; k <= j; ++k) {
      if (labels[order[k]] != 0) {
        pos_rank_sum += mid;
        n_pos += 1;
      }
    }
    i = j + 1;
  }
  const double n_neg = static_cast<double>(n) - n_pos;
  if (n_pos == 0 || n_neg == 0) throw UndefinedMetric("roc_auc: labels contain a single class");
  return (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg);
}

double inverse_normal_cdf(double p) {
  if (!(p > 0.0 && p < 1.0)) throw std::domain_error("inverse_normal_cdf: p must lie in (0, 1)");
  // Acklam's rational approximation (rel. error 1.15e-9) ...
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                 -2.759285104469687e+02, 1.383577518672690e+02,
                                 -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                 -1.556989798598866e+02, 6.680131188771972e+01,
                                 -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                 -2.400758277161838e+00, -2.549732539343734e+00,
                                 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                 2.445134137142996e+00, 3.754408661907416e+00};
  constexpr double p_low = 0.02425;
  double x;
  if (p < p_low) {
    const double q = std::sqrt(-2 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
  } else if (p <= 1 - p_low) {
    const double q = p - 0.5, r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1);
  } else {
    const double q = std::sqrt(-2 * std::log1p(-p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
  }
  // ... polished by one Halley step against erfc.
  const double e = 0.5 * std::erfc(-x / std::numbers::sqrt2) - p;
  const double u = e * std::sqrt(2 * std::numbers::pi) * std::exp(x * x / 2);
  return x - u / (1 + x * u / 2);
}

double d_prime(double auc, bool* clamped) {
  if (clamped != nullptr) *clamped = false;
  if (std::isnan(auc) || auc < 0.0 || auc > 1.0) throw std::domain_error("d_prime: auc outside [0, 1]");
  if (auc == 0.0 || auc == 1.0) {
    if (clamped != nullptr) *clamped = true;
    std::cerr << "warning: d_prime of auc=" << auc << " is infinite, clamped to +/-"
              << kDPrimeClamp << "\n";
    return auc == 1.0 ? kDPrimeClamp : -kDPrimeClamp;
  }
  return std::clamp(std::numbers::sqrt2 * inverse_normal_cdf(auc), -kDPrimeClamp, kDPrimeClamp);
}

double d_prime_gaussian(double mu_signal, double mu_noise, double sigma_signal,
                        double sigma_noise) {
  const double pooled = (sigma_signal * sigma_signal + sigma_noise * sigma_noise) / 2.0;
  if (!(pooled > 0)) throw std::domain_error("d_prime_gaussian: zero pooled variance");
  return (mu_signal - mu_noise) / std::sqrt(pooled);
}

ClassificationScores f1_and_accuracy(std::span<const int> predicted, std::span<const int> truth,
                                     int n_classes) {
  if (predicted.size() != truth.size()) {
    throw ShapeError("f1_and_accuracy: " + std::to_string(predicted.size()) + " predictions vs " +
                     std::to_string(truth.size()) + " labels");
  }
  if (n_classes < 1) throw ConfigError("f1_and_accuracy: n_classes must be >= 1");
  std::vector<long> tp(static_cast<std::size_t>(n_classes)), fp(tp.size()), fn(tp.size());
  long correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const int p = predicted[i], t = truth[i];
    if (p < 0 || p >= n_classes || t < 0 || t >= n_classes) {
      throw DataError("f1_and_accuracy: class id out of range at row " + std::to_string(i));
    }
    if (p == t) {
      ++tp[static_cast<std::size_t>(t)];
      ++correct;
    } else {
      ++fp[static_cast<std::size_t>(p)];
      ++fn[static_cast<std::size_t>(t)];
    }
  }
  ClassificationScores out;
  long tp_all = 0, fp_all = 0, fn_all = 0;
  double macro = 0;
  for (int c = 0; c < n_classes; ++c) {
    const auto k = static_cast<std::size_t>(c);
    tp_all += tp[k];
    fp_all += fp[k];
    fn_all += fn[k];
    if (tp[k] + fn[k] == 0) out.classes_without_support.push_back(c);
    const long denom = 2 * tp[k] + fp[k] + fn[k];
    macro += denom > 0 ? 2.0 * static_cast<double>(tp[k]) / static_cast<double>(denom) : 0.0;
  }
  const long denom = 2 * tp_all + fp_all + fn_all;
  out.f1_micro = denom > 0 ? 2.0 * static_cast<double>(tp_all) / static_cast<double>(denom) : 0.0;
  out.f1_macro = macro / n_classes;
  out.accuracy = truth.empty() ? 0.0
                               : static_cast<double>(correct) / static_cast<double>(truth.size());
  return out;
}

namespace {

EvalReport ranking_report(const ScoreMatrix& scores, const LabelMatrix& labels) {
  if (scores.rows() != labels.rows() || scores.cols() != labels.cols()) {
    throw ShapeError("eval report: scores and labels differ in shape");
  }
  EvalReport r;
  r.n_examples = static_cast<int>(scores.rows());
  r.n_classes = static_cast<int>(scores.cols());
  double ap_sum = 0, auc_sum = 0;
  int ap_n = 0, auc_n = 0;
  std::vector<double> s(static_cast<std::size_t>(scores.rows()));
  std::vector<int> l(s.size());
  for (Index c = 0; c < scores.cols(); ++c) {
    for (Index i = 0; i < scores.rows(); ++i) {
      s[static_cast<std::size_t>(i)] = scores(i, c);
      l[static_cast<std::size_t>(i)] = labels(i, c);
    }
    try {
      const double ap = average_precision(s, l);
      r.per_class_ap.emplace_back(ap);
      ap_sum += ap;
      ++ap_n;
    } catch (const UndefinedMetric&) {
      r.per_class_ap.emplace_back(std::nullopt);
      ++r.ap_excluded;
    }
    try {
      const double auc = roc_auc(s, l);
      r.per_class_auc.emplace_back(auc);
      auc_sum += auc;
      ++auc_n;
    } catch (const UndefinedMetric&) {
      r.per_class_auc.emplace_back(std::nullopt);
      ++r.auc_excluded;
    }
  }
  r.mAP = ap_n > 0 ? ap_sum / ap_n : 0.0;
  r.mAUC = auc_n > 0 ? auc_sum / auc_n : 0.0;
  r.d_prime = auc_n > 0 ? d_prime(r.mAUC) : 0.0;
  return r;
}

}  // namespace

EvalReport multilabel_report(const ScoreMatrix& scores, const LabelMatrix& labels) {
  return ranking_report(scores, labels);
}

EvalReport singlelabel_report(const ScoreMatrix& scores, std::span<const int> truth) {
  if (static_cast<std::size_t>(scores.rows()) != truth.size()) {
    throw ShapeError("singlelabel_report: row count differs from label count");
  }
  const int n_classes = static_cast<int>(scores.cols());
  LabelMatrix onehot = LabelMatrix::Zero(scores.rows(), scores.cols());
  std::vector<int> predicted(truth.size());
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || truth[i] >= n_classes) {
      throw DataError("singlelabel_report: class id out of range at row " + std::to_string(i));
    }
    onehot(static_cast<Eigen::Index>(i), truth[i]) = 1;
    Eigen::Index best;
    scores.row(static_cast<Eigen::Index>(i)).maxCoeff(&best);
    predicted[i] = static_cast<int>(best);
  }
  EvalReport r = ranking_report(scores, onehot);
  r.classification = f1_and_accuracy(predicted, truth, n_classes);
  return r;
}

std::string EvalReport::to_text() const {
  std::string out;
  char buf[96];
  auto line = [&](const char* key, double v) {
    std::snprintf(buf, sizeof buf, "%s=%.6f\n", key, v);
    out += buf;
  };
  auto count = [&](const char* key, long v) {
    std::snprintf(buf, sizeof buf, "%s=%ld\n", key, v);
    out += buf;
  };
  count("n_examples", n_examples);
  count("n_classes", n_classes);
  count("ap_excluded_classes", ap_excluded);
  count("auc_excluded_classes", auc_excluded);
  line("mAP", mAP);
  line("mAUC", mAUC);
  line("d_prime", d_prime);
  if (classification) {
    line("f1_micro", classification->f1_micro);
    line("f1_macro", classification->f1_macro);
    line("accuracy", classification->accuracy);
    count("classes_without_support", static_cast<long>(classification->classes_without_support.size()));
  }
  auto per_class = [&](const char* key, const std::vector<std::optional<double>>& values) {
    for (std::size_t c = 0; c < values.size(); ++c) {
      if (values[c]) {
        std::snprintf(buf, sizeof buf, "%s[%zu]=%.6f\n", key, c, *values[c]);
      } else {
        std::snprintf(buf, sizeof buf, "%s[%zu]=excluded\n", key, c);
      }
      out += buf;
    }
  };
  per_class("ap", per_class_ap);
  per_class("auc", per_class_auc);
  return out;
}

}  // namespace amba
