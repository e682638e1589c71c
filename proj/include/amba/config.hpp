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
#include <map>
#include <string>
#include <vector>

#include "amba/frontend.hpp"
#include "amba/tensor.hpp"

namespace amba {

/// Architecture hyperparameters. Named variants (tiny/micro/nano) use four
/// stages whose widths double at every patch merge.
struct ModelConfig {
  std::string variant = "nano";
  Index patch_size = 4;
  Index n_windows = 4;
  Index frames = kPaddedFrames;  // T
  Index mel_bins = 64;           // F
  std::vector<Index> stage_dims{40, 80, 160, 320};
  std::vector<Index> stage_depths{2, 2, 3, 2};
  // Attention heads per stage, used only with transformer_interleave.
  std::vector<Index> stage_heads{1, 2, 4, 8};
  Index state_size = 16;
  Index ssm_expand = 2;
  Index mlp_ratio = 4;
  Index dt_rank = 0;  // 0 selects ceil(dim / 16)
  Index conv_kernel = 3;
  Index n_classes = 527;
  bool transformer_interleave = false;
  double drop_path = 0.1;
  double ln_eps = 1e-5;

  Index num_stages() const { return static_cast<Index>(stage_dims.size()); }
  /// Side lengths of the window-reshaped map: (n * F) x (T / n).
  Index grid_height() const { return n_windows * mel_bins; }
  Index grid_width() const { return frames / n_windows; }
  Index delta_rank(Index dim) const { return dt_rank > 0 ? dt_rank : (dim + 15) / 16; }

  /// Throws ConfigError describing the first violated constraint.
  void validate() const;

  /// tiny, micro, nano or toy.
  static ModelConfig preset(const std::string& name);
};

/// Optimisation and augmentation settings for the training loop.
struct TrainConfig {
  Index batch_size = 8;
  double lr = 1e-4;
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  Index warmup_steps = 100;
  Index total_steps = 1000;
  double grad_clip = 1.0;
  double cutmix_prob = 0.5;
  double cutmix_alpha = 1.0;
  std::uint64_t seed = 0;
  Index eval_every = 100;
  Index checkpoint_every = 500;
  Index log_every = 1;

  void validate() const;
};

/// Everything a CLI run needs; serialises to and from key=value text.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  MelConfig mel;  // n_mels is kept equal to model.mel_bins

  /// Applies one key=value setting; unknown keys throw ConfigError.
  void set(const std::string& key, const std::string& value);

  /// Parses config text. A `variant` line loads that preset before any
  /// other key is applied, whatever its position.
  static RunConfig parse(const std::string& text, const std::string& source = "<config>");
  static RunConfig load(const std::filesystem::path& path);

  void validate() const;

  /// Every key, one per line, in a fixed order.
  std::string to_text() const;
  std::string model_text() const;
};

/// Splits "key=value", trimming whitespace.
std::pair<std::string, std::string> split_setting(const std::string& setting);

}  // namespace amba
