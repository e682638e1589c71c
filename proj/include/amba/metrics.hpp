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

#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace amba {

/// Raised when a per-class metric is undefined for the given labels (no
/// positives, or a single class present). Callers exclude the class and
/// count it; it is never folded in as zero.
class UndefinedMetric : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Normalised AP: mean of precision@k over the ranks k of the positives,
/// ranking by descending score with ties kept in input order.
double average_precision(std::span<const double> scores, std::span<const int> labels);

/// P(score_pos > score_neg) + P(tie) / 2 via mid-ranks.
double roc_auc(std::span<const double> scores, std::span<const int> labels);

/// Standard normal quantile, accurate to ~1e-15 on (0, 1).
double inverse_normal_cdf(double p);

inline constexpr double kDPrimeClamp = 10.0;

/// d' = sqrt(2) * Phi^-1(auc). AUC of exactly 0 or 1 maps to -/+10 and sets
/// `*clamped` when provided.
double d_prime(double auc, bool* clamped = nullptr);

/// (mu_signal - mu_noise) / sqrt((var_signal + var_noise) / 2).
double d_prime_gaussian(double mu_signal, double mu_noise, double sigma_signal,
                        double sigma_noise);

struct ClassificationScores {
  double f1_micro = 0;
  double f1_macro = 0;
  double accuracy = 0;
  std::vector<int> classes_without_support;  // counted as F1 = 0 in the macro mean
};

/// Single-label multiclass scores from predicted and true class ids.
ClassificationScores f1_and_accuracy(std::span<const int> predicted, std::span<const int> truth,
                                     int n_classes);

using ScoreMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using LabelMatrix = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct EvalReport {
  int n_examples = 0;
  int n_classes = 0;
  std::vector<std::optional<double>> per_class_ap;   // nullopt: excluded
  std::vector<std::optional<double>> per_class_auc;  // nullopt: excluded
  double mAP = 0;
  double mAUC = 0;
  double d_prime = 0;
  int ap_excluded = 0;
  int auc_excluded = 0;
  std::optional<ClassificationScores> classification;

  /// One `key=value` per line, fixed six-decimal floats.
  std::string to_text() const;
};

/// Multi-label report from scores [N x C] and 0/1 labels [N x C].
EvalReport multilabel_report(const ScoreMatrix& scores, const LabelMatrix& labels);

/// Single-label report: ranking metrics over one-hot targets plus
/// F1/accuracy of the per-row argmax.
EvalReport singlelabel_report(const ScoreMatrix& scores, std::span<const int> truth);

}  // namespace amba
