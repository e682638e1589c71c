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

#include <filesystem>
#include <vector>

#include "amba/tensor.hpp"

// WAV decoding, resampling, log-mel features and the patch-window layout
// that turns a (T x F) spectrogram into the square map fed to the backbone.

namespace amba {

struct AudioClip {
  std::vector<float> samples;  // mono, nominally in [-1, 1]
  int sample_rate = 0;

  double duration_seconds() const {
    return sample_rate > 0 ? static_cast<double>(samples.size()) / sample_rate : 0.0;
  }
};

/// Reads RIFF/WAVE PCM (8/16/24/32-bit int, 32-bit float, including
/// WAVE_FORMAT_EXTENSIBLE). Multichannel audio is averaged to mono.
/// Throws FormatError naming the byte offset of the first problem.
AudioClip load_wav(const std::filesystem::path& path);
AudioClip decode_wav(const std::vector<unsigned char>& bytes);

enum class WavEncoding { kPcm16, kFloat32 };

void write_wav(const std::filesystem::path& path, const AudioClip& clip,
               WavEncoding encoding = WavEncoding::kPcm16);

enum class ResampleMethod { kLinear, kWindowedSinc };

inline constexpr int kSampleRate = 32000;

/// Output length is round(n * target / source); a clip already at the
/// target rate is returned unchanged.
AudioClip resample(const AudioClip& clip, int target_rate = kSampleRate,
                   ResampleMethod method = ResampleMethod::kLinear);

struct MelConfig {
  int sample_rate = kSampleRate;
  int win_length = 1024;  // also the FFT size
  int hop_length = 320;
  int n_mels = 64;
  double f_min = 0.0;
  double f_max = 0.0;  // <= 0 selects Nyquist
  double eps = 1e-10;
  // Clips shorter than one window yield a single zero-padded frame instead
  // of an error.
  bool allow_short = false;
};

/// Log-mel energies, one row per frame: [T x F].
struct MelSpectrogram {
  RowMat<float> values;

  Index frames() const { return values.rows(); }
  Index bins() const { return values.cols(); }
};

double hz_to_mel(double hz);
double mel_to_hz(double mel);

/// HTK-scale triangular filters, [n_mels x (win_length / 2 + 1)], peak 1.
RowMat<double> mel_filterbank(const MelConfig& config);

/// Centre frequency of each mel filter in Hz.
std::vector<double> mel_center_frequencies(const MelConfig& config);

/// Frames produced for `samples` input samples: one frame centred on every
/// hop boundary strictly inside the clip, i.e. samples / hop.
Index frame_count(Index samples, int hop_length);

/// The value a silent cell takes: log(eps) rounded to float.
float silence_value(double eps = 1e-10);

/// Hann-windowed, zero-centre-padded STFT magnitude -> mel -> log(x + eps).
MelSpectrogram log_mel(const AudioClip& clip, const MelConfig& config = {});

inline constexpr Index kPaddedFrames = 1024;

/// Appends silent frames up to `target_frames`. Longer inputs are an error
/// unless `allow_truncate` is set.
MelSpectrogram pad_frames(const MelSpectrogram& mel, Index target_frames = kPaddedFrames,
                          bool allow_truncate = false, double eps = 1e-10);

/// Cuts the time axis into `n_windows` equal patch windows and stacks them
/// along frequency: [T x F] -> [(n * F) x (T / n)]. Row w*F + f, column t
/// holds frame w*(T/n) + t, bin f.
RowMat<float> window_reshape(const MelSpectrogram& mel, Index n_windows);

MelSpectrogram inverse_window_reshape(const RowMat<float>& map, Index n_windows, Index n_mels);

/// Where a patch token came from in the original spectrogram.
struct TokenOrigin {
  Index window;
  Index freq_patch;  // patch index along frequency inside the window
  Index time_patch;  // patch index along absolute time
};

/// Source of every patch token in raster order over the window-reshaped map:
/// time varies fastest, then frequency, then window.
std::vector<TokenOrigin> token_order(Index frames, Index n_mels, Index n_windows, Index patch);

}  // namespace amba
