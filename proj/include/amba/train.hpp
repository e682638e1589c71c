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
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "amba/checkpoint.hpp"
#include "amba/config.hpp"
#include "amba/frontend.hpp"
#include "amba/metrics.hpp"
#include "amba/model.hpp"

namespace amba {

// ---- data ---------------------------------------------------------------

struct ManifestRow {
  std::string path;  // resolved against the manifest's directory
  std::vector<int> labels;
  int line = 0;  // 1-based line in the manifest file
};

struct Manifest {
  std::string source;
  std::string split = "train";
  Index n_classes = 0;
  std::vector<ManifestRow> rows;
};

/// CSV with header `path,labels`; labels are ';'-separated class ids.
/// Throws DataError naming the offending line for bad ids or duplicate
/// paths. Relative paths are resolved against `base_dir`.
Manifest parse_manifest(const std::string& text, Index n_classes, const std::string& source,
                        const std::filesystem::path& base_dir = {},
                        const std::string& split = "train");
Manifest read_manifest(const std::filesystem::path& path, Index n_classes,
                       const std::string& split = "train");

struct Example {
  RowMat<float> mel;   // [frames x mel_bins], padded
  Vec<float> target;   // [n_classes] in {0, 1}
  std::vector<int> labels;
};

/// Decode -> resample -> log-mel -> pad/truncate to the model's frame count.
MelSpectrogram clip_features(const std::filesystem::path& path, const RunConfig& config);

/// Worker cap from AUDIOMAMBA_THREADS (default: hardware concurrency).
unsigned worker_count();

/// Loads every row, decoding on up to worker_count() threads. Results keep
/// manifest order. Unreadable rows abort with DataError unless `skipped` is
/// given, in which case they are dropped and described there.
std::vector<Example> load_examples(const Manifest& manifest, const RunConfig& config,
                                   std::vector<std::string>* skipped = nullptr);

// ---- augmentation ---------------------------------------------------------

struct Batch {
  std::vector<RowMat<float>> mels;  // B x [T x F]
  RowMat<float> targets;            // [B x C]
  std::vector<Index> indices;       // dataset rows, for error reports
};

/// Cut rectangle on the [T x F] plane; empty when dt or df is zero.
struct CutBox {
  Index t0 = 0, f0 = 0, dt = 0, df = 0;
  Index area() const { return dt * df; }
};

struct CutMixResult {
  Batch batch;
  std::vector<Index> partner;  // sample i received its patch from partner[i]
  CutBox box;
  double lambda = 1.0;      // 1 - box area / (T * F)
  double lambda_raw = 1.0;  // the Beta draw before integer rounding
};

/// lambda ~ Beta(alpha, alpha) from two gamma variates.
double sample_beta(double alpha, std::mt19937_64& rng);

/// Box of side round-down(sqrt(1 - lambda) * extent) centred at a uniform
/// cell and clipped to the plane.
CutBox sample_cut_box(double lambda, Index frames, Index bins, std::mt19937_64& rng);

/// Pastes `box` from partner[i] into every sample i and mixes targets by
/// the exact pasted-area fraction.
CutMixResult apply_cutmix(const Batch& batch, const std::vector<Index>& partner, const CutBox& box);

/// Draws lambda, a partner permutation and a box, then applies them.
CutMixResult cutmix(const Batch& batch, double alpha, std::mt19937_64& rng);

// ---- optimisation ---------------------------------------------------------

/// lr for 0-based `step`: linear warmup to the peak, then cosine to zero.
double learning_rate(const TrainConfig& config, Index step);

/// Adam with decoupled weight decay. Decay skips rank-1 tensors (norms,
/// biases) and the scan's A_log.
template <typename T>
class AdamW {
 public:
  AdamW(std::vector<NamedTensor<T>> params, const TrainConfig& config);

  void step(double lr);
  Index steps_taken() const { return t_; }

  void save_state(TensorArchive& archive) const;
  void load_state(const TensorArchive& archive);

 private:
  std::vector<NamedTensor<T>> params_;
  std::vector<Vec<T>> m_, v_;
  std::vector<bool> decay_;
  TrainConfig config_;
  Index t_ = 0;
};

/// sqrt of the summed squared gradients; parameters without a gradient
/// count as zero.
template <typename T>
double global_grad_norm(const std::vector<NamedTensor<T>>& params);

/// Rescales gradients so their global norm is at most `max_norm`. Returns
/// the norm before clipping.
template <typename T>
double clip_grad_norm(std::vector<NamedTensor<T>>& params, double max_norm);

struct StepResult {
  Index step = 0;
  double loss = 0;
  double grad_norm = 0;  // before clipping
  double lr = 0;
};

/// Raised when a step's loss is NaN or infinite; parameters are untouched.
class NonFiniteLoss : public DataError {
 public:
  using DataError::DataError;
};

/// forward -> BCE -> backward -> clip -> AdamW -> tape reset. Drop-path
/// draws come from `rng` when given.
template <typename T>
StepResult train_step(AudioMamba<T>& model, const Batch& batch, AdamW<T>& optimizer,
                      const TrainConfig& config, double lr, std::mt19937_64* rng = nullptr);

/// "step,loss,grad_norm,lr" with fixed formatting.
std::string format_log_line(const StepResult& r);

/// Owns a model and optimizer and derives every random draw from
/// (seed, step), so a run resumed from a checkpoint replays exactly.
template <typename T>
class Trainer {
 public:
  explicit Trainer(const RunConfig& config);

  AudioMamba<T>& model() { return model_; }
  AdamW<T>& optimizer() { return optimizer_; }
  const RunConfig& config() const { return config_; }
  Index next_step() const { return step_; }

  /// Rows of the batch used at `step` (last partial batch dropped).
  std::vector<Index> batch_indices(Index step, Index dataset_size) const;
  Batch make_batch(const std::vector<Example>& data, Index step) const;

  StepResult step(const std::vector<Example>& data);

  /// Model, optimizer moments and step counter.
  TensorArchive state_archive();
  void save(const std::filesystem::path& path);
  void resume(const std::filesystem::path& path);

 private:
  std::mt19937_64 stream(Index step, std::uint64_t purpose) const;

  RunConfig config_;
  AudioMamba<T> model_;
  AdamW<T> optimizer_;
  Index step_ = 0;
};

// ---- evaluation ------------------------------------------------------------

enum class EvalMode { kMultilabel, kSinglelabel };

EvalMode parse_eval_mode(const std::string& s);

/// Logits [N x C] for every example, evaluated in parallel without the tape.
template <typename T>
ScoreMatrix predict(const AudioMamba<T>& model, const std::vector<Example>& data);

/// Multilabel scores are sigmoid(logits); singlelabel uses argmax and needs
/// exactly one label per example.
EvalReport evaluate_logits(const ScoreMatrix& logits, const std::vector<Example>& data, EvalMode mode);

template <typename T>
EvalReport evaluate(const AudioMamba<T>& model, const std::vector<Example>& data, EvalMode mode);

}  // namespace amba
