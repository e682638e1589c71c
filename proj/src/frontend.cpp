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

#include "amba/frontend.hpp"

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numbers>

#include "amba/errors.hpp"

namespace amba {
namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

class ByteReader {
 public:
  explicit ByteReader(const std::vector<unsigned char>& bytes) : bytes_(bytes) {}

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

  void need(std::size_t n, const char* what) const {
    if (remaining() < n) fail(std::string("truncated ") + what);
  }

  [[noreturn]] void fail(const std::string& msg) const {
    throw FormatError("wav decode error at byte offset " + std::to_string(pos_) + ": " + msg);
  }

  std::string tag() {
    need(4, "chunk tag");
    std::string s(reinterpret_cast<const char*>(&bytes_[pos_]), 4);
    pos_ += 4;
    return s;
  }

  std::uint32_t u32() {
    need(4, "u32");
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | bytes_[pos_ + static_cast<std::size_t>(i)];
    pos_ += 4;
    return v;
  }

  std::uint16_t u16() {
    need(2, "u16");
    const std::uint16_t v = static_cast<std::uint16_t>(bytes_[pos_] | (bytes_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }

  void skip(std::size_t n) {
    need(n, "chunk body");
    pos_ += n;
  }

  const unsigned char* here() const { return bytes_.data() + pos_; }

 private:
  const std::vector<unsigned char>& bytes_;
  std::size_t pos_ = 0;
};

float decode_sample(const unsigned char* p, int bits, bool is_float) {
  if (is_float) {
    std::uint32_t u = static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
                      (static_cast<std::uint32_t>(p[2]) << 16) |
                      (static_cast<std::uint32_t>(p[3]) << 24);
    float f;
    std::memcpy(&f, &u, sizeof f);
    return f;
  }
  switch (bits) {
    case 8:
      return (static_cast<float>(p[0]) - 128.0f) / 128.0f;
    case 16: {
      const auto v = static_cast<std::int16_t>(p[0] | (p[1] << 8));
      return static_cast<float>(v) / 32768.0f;
    }
    case 24: {
      std::int32_t v = p[0] | (p[1] << 8) | (p[2] << 16);
      if (v & 0x800000) v -= 0x1000000;
      return static_cast<float>(v) / 8388608.0f;
    }
    default: {
      const auto v = static_cast<std::int32_t>(
          static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
          (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24));
      return static_cast<float>(static_cast<double>(v) / 2147483648.0);
    }
  }
}

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xFF));
}

void put_u16(std::vector<unsigned char>& out, std::uint16_t v) {
  out.push_back(static_cast<unsigned char>(v & 0xFF));
  out.push_back(static_cast<unsigned char>(v >> 8));
}

double hann(int i, int n) {
  // Periodic Hann, as used for spectral analysis.
  return 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / n);
}

double sinc(double x) {
  if (std::abs(x) < 1e-12) return 1.0;
  return std::sin(std::numbers::pi * x) / (std::numbers::pi * x);
}

}  // namespace

AudioClip decode_wav(const std::vector<unsigned char>& bytes) {
  ByteReader r(bytes);
  if (r.tag() != "RIFF") r.fail("missing RIFF magic");
  r.u32();
  if (r.tag() != "WAVE") r.fail("missing WAVE form type");

  std::uint16_t format = 0, channels = 0, bits = 0, block_align = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  while (r.remaining() >= 8) {
    const std::string id = r.tag();
    const std::uint32_t size = r.u32();
    if (id == "fmt ") {
      if (size < 16) r.fail("fmt chunk too small");
      r.need(size, "fmt chunk");
      const std::size_t start = r.offset();
      format = r.u16();
      channels = r.u16();
      rate = r.u32();
      r.u32();  // byte rate
      block_align = r.u16();
      bits = r.u16();
      if (format == kFormatExtensible) {
        if (size < 40) r.fail("extensible fmt chunk too small");
        r.u16();  // cbSize
        r.u16();  // valid bits
        r.u32();  // channel mask
        format = r.u16();  // first two bytes of the subformat GUID
      }
      r.skip(size - (r.offset() - start) + (size & 1));
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) r.fail("data chunk before fmt chunk");
      if (format != kFormatPcm && format != kFormatFloat) {
        r.fail("unsupported codec " + std::to_string(format));
      }
      const bool is_float = format == kFormatFloat;
      if (is_float ? bits != 32 : (bits != 8 && bits != 16 && bits != 24 && bits != 32)) {
        r.fail("unsupported bit depth " + std::to_string(bits));
      }
      if (channels == 0 || rate == 0) r.fail("zero channels or sample rate");
      const std::size_t width = bits / 8;
      if (block_align != width * channels) r.fail("block align does not match channels x width");
      r.need(size, "data chunk");
      const std::size_t frames = size / block_align;
      AudioClip clip;
      clip.sample_rate = static_cast<int>(rate);
      clip.samples.resize(frames);
      const unsigned char* p = r.here();
      for (std::size_t i = 0; i < frames; ++i) {
        double acc = 0;
        for (std::size_t ch = 0; ch < channels; ++ch) {
          acc += decode_sample(p + (i * channels + ch) * width, bits, is_float);
        }
        clip.samples[i] = static_cast<float>(acc / channels);
      }
      return clip;
    } else {
      r.skip(std::min<std::size_t>(size + (size & 1), r.remaining()));
    }
  }
  r.fail("no data chunk");
}

AudioClip load_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  try {
    return decode_wav(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_wav(const std::filesystem::path& path, const AudioClip& clip, WavEncoding encoding) {
  const bool pcm = encoding == WavEncoding::kPcm16;
  const std::uint16_t bits = pcm ? 16 : 32;
  const std::uint32_t data_size = static_cast<std::uint32_t>(clip.samples.size() * (bits / 8));
  std::vector<unsigned char> out;
  out.reserve(44 + data_size);
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  put_u32(out, 36 + data_size);
  out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  put_u32(out, 16);
  put_u16(out, pcm ? kFormatPcm : kFormatFloat);
  put_u16(out, 1);
  put_u32(out, static_cast<std::uint32_t>(clip.sample_rate));
  put_u32(out, static_cast<std::uint32_t>(clip.sample_rate) * (bits / 8));
  put_u16(out, bits / 8);
  put_u16(out, bits);
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  put_u32(out, data_size);
  for (float s : clip.samples) {
    if (pcm) {
      const long q = std::lround(static_cast<double>(s) * 32768.0);
      put_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(std::clamp(q, -32768L, 32767L))));
    } else {
      std::uint32_t u;
      std::memcpy(&u, &s, sizeof u);
      put_u32(out, u);
    }
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path.string());
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
}

AudioClip resample(const AudioClip& clip, int target_rate, ResampleMethod method) {
  if (clip.sample_rate <= 0 || target_rate <= 0) throw ConfigError("resample: rates must be positive");
  if (clip.sample_rate == target_rate || clip.samples.empty()) {
    AudioClip same = clip;
    same.sample_rate = target_rate;
    return same;
  }
  const double ratio = static_cast<double>(clip.sample_rate) / target_rate;
  const auto n_in = static_cast<Index>(clip.samples.size());
  const auto n_out = static_cast<Index>(std::llround(static_cast<double>(n_in) / ratio));
  AudioClip out;
  out.sample_rate = target_rate;
  out.samples.resize(static_cast<std::size_t>(n_out));
  const auto& s = clip.samples;
  if (method == ResampleMethod::kLinear) {
    for (Index i = 0; i < n_out; ++i) {
      const double pos = i * ratio;
      const auto i0 = std::min<Index>(static_cast<Index>(pos), n_in - 1);
      const Index i1 = std::min<Index>(i0 + 1, n_in - 1);
      const double frac = pos - static_cast<double>(i0);
      out.samples[static_cast<std::size_t>(i)] =
          static_cast<float>((1.0 - frac) * s[static_cast<std::size_t>(i0)] +
                             frac * s[static_cast<std::size_t>(i1)]);
    }
    return out;
  }
  // Hann-windowed sinc low-pass at the lower Nyquist, 16 zero crossings per side.
  constexpr int kZeros = 16;
  const double cutoff = std::min(1.0, 1.0 / ratio);
  const double half_width = kZeros / cutoff;
  for (Index i = 0; i < n_out; ++i) {
    const double pos = i * ratio;
    const auto lo = std::max<Index>(0, static_cast<Index>(std::ceil(pos - half_width)));
    const auto hi = std::min<Index>(n_in - 1, static_cast<Index>(std::floor(pos + half_width)));
    double acc = 0, norm = 0;
    for (Index j = lo; j <= hi; ++j) {
      const double t = static_cast<double>(j) - pos;
      const double win = 0.5 + 0.5 * std::cos(std::numbers::pi * t / half_width);
      const double w = cutoff * sinc(cutoff * t) * win;
      acc += w * s[static_cast<std::size_t>(j)];
      norm += w;
    }
    out.samples[static_cast<std::size_t>(i)] = static_cast<float>(norm != 0 ? acc / norm : 0.0);
  }
  return out;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

namespace {

std::vector<double> mel_edges(const MelConfig& c) {
  const double f_max = c.f_max > 0 ? c.f_max : c.sample_rate / 2.0;
  const double lo = hz_to_mel(c.f_min), hi = hz_to_mel(f_max);
  std::vector<double> edges(static_cast<std::size_t>(c.n_mels + 2));
  for (std::size_t i = 0; i < edges.size(); ++i) {
    edges[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i) / (c.n_mels + 1));
  }
  return edges;
}

void validate(const MelConfig& c) {
  if (c.sample_rate <= 0 || c.win_length < 2 || c.hop_length < 1 || c.n_mels < 1 || c.eps <= 0) {
    throw ConfigError("invalid mel configuration");
  }
}

}  // namespace

std::vector<double> mel_center_frequencies(const MelConfig& config) {
  auto edges = mel_edges(config);
  return {edges.begin() + 1, edges.end() - 1};
}

RowMat<double> mel_filterbank(const MelConfig& config) {
  validate(config);
  const int bins = config.win_length / 2 + 1;
  const auto edges = mel_edges(config);
  RowMat<double> fb = RowMat<double>::Zero(config.n_mels, bins);
  for (int m = 0; m < config.n_mels; ++m) {
    const double left = edges[static_cast<std::size_t>(m)];
    const double center = edges[static_cast<std::size_t>(m + 1)];
    const double right = edges[static_cast<std::size_t>(m + 2)];
    for (int k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * config.sample_rate / config.win_length;
      const double up = (f - left) / (center - left);
      const double down = (right - f) / (right - center);
      fb(m, k) = std::max(0.0, std::min(up, down));
    }
  }
  return fb;
}

Index frame_count(Index samples, int hop_length) { return samples / hop_length; }

float silence_value(double eps) { return static_cast<float>(std::log(eps)); }

MelSpectrogram log_mel(const AudioClip& clip, const MelConfig& config) {
  validate(config);
  if (clip.sample_rate != config.sample_rate) {
    throw ConfigError("log_mel: clip is at " + std::to_string(clip.sample_rate) + " Hz, expected " +
                      std::to_string(config.sample_rate));
  }
  const int n_fft = config.win_length;
  const auto n = static_cast<Index>(clip.samples.size());
  Index frames = frame_count(n, config.hop_length);
  if (n < n_fft || frames == 0) {
    if (!config.allow_short) {
      throw DataError("log_mel: clip of " + std::to_string(n) + " samples is shorter than one " +
                      std::to_string(n_fft) + "-sample window");
    }
    frames = std::max<Index>(frames, 1);
  }
  const RowMat<double> fb = mel_filterbank(config);
  const int bins = n_fft / 2 + 1;
  std::vector<double> window(static_cast<std::size_t>(n_fft));
  for (int i = 0; i < n_fft; ++i) window[static_cast<std::size_t>(i)] = hann(i, n_fft);

  Eigen::FFT<double> fft;
  std::vector<double> frame(static_cast<std::size_t>(n_fft));
  std::vector<std::complex<double>> spec;
  Eigen::VectorXd mag(bins);
  MelSpectrogram mel;
  mel.values.resize(frames, config.n_mels);
  for (Index t = 0; t < frames; ++t) {
    const Index start = t * config.hop_length - n_fft / 2;
    for (int i = 0; i < n_fft; ++i) {
      const Index src = start + i;
      const double v = (src >= 0 && src < n) ? clip.samples[static_cast<std::size_t>(src)] : 0.0;
      frame[static_cast<std::size_t>(i)] = v * window[static_cast<std::size_t>(i)];
    }
    fft.fwd(spec, frame);
    for (int k = 0; k < bins; ++k) mag[k] = std::abs(spec[static_cast<std::size_t>(k)]);
    const Eigen::VectorXd energies = fb * mag;
    for (int m = 0; m < config.n_mels; ++m) {
      mel.values(t, m) = static_cast<float>(std::log(energies[m] + config.eps));
    }
  }
  return mel;
}

MelSpectrogram pad_frames(const MelSpectrogram& mel, Index target_frames, bool allow_truncate,
                          double eps) {
  if (mel.frames() > target_frames) {
    if (!allow_truncate) {
      throw ShapeError("pad_frames: " + std::to_string(mel.frames()) + " frames exceed target " +
                       std::to_string(target_frames));
    }
    return {mel.values.topRows(target_frames)};
  }
  MelSpectrogram out;
  out.values = RowMat<float>::Constant(target_frames, mel.bins(), silence_value(eps));
  out.values.topRows(mel.frames()) = mel.values;
  return out;
}

RowMat<float> window_reshape(const MelSpectrogram& mel, Index n_windows) {
  const Index t = mel.frames(), f = mel.bins();
  if (n_windows < 1 || t % n_windows != 0) {
    throw ShapeError("window_reshape: " + std::to_string(t) + " frames not divisible into " +
                     std::to_string(n_windows) + " windows");
  }
  const Index span = t / n_windows;
  RowMat<float> map(n_windows * f, span);
  for (Index w = 0; w < n_windows; ++w) {
    map.middleRows(w * f, f) = mel.values.middleRows(w * span, span).transpose();
  }
  return map;
}

MelSpectrogram inverse_window_reshape(const RowMat<float>& map, Index n_windows, Index n_mels) {
  if (n_windows < 1 || n_mels < 1 || map.rows() != n_windows * n_mels) {
    throw ShapeError("inverse_window_reshape: map has " + std::to_string(map.rows()) +
                     " rows, expected " + std::to_string(n_windows) + " x " + std::to_string(n_mels));
  }
  const Index span = map.cols();
  MelSpectrogram mel;
  mel.values.resize(n_windows * span, n_mels);
  for (Index w = 0; w < n_windows; ++w) {
    mel.values.middleRows(w * span, span) = map.middleRows(w * n_mels, n_mels).transpose();
  }
  return mel;
}

std::vector<TokenOrigin> token_order(Index frames, Index n_mels, Index n_windows, Index patch) {
  if (n_windows < 1 || patch < 1 || frames % n_windows != 0 || n_mels % patch != 0 ||
      (frames / n_windows) % patch != 0) {
    throw ShapeError("token_order: incompatible frames/mels/windows/patch");
  }
  const Index span = frames / n_windows;
  const Index rows = n_windows * n_mels / patch, cols = span / patch;
  std::vector<TokenOrigin> order;
  order.reserve(static_cast<std::size_t>(rows * cols));
  for (Index pr = 0; pr < rows; ++pr) {
    const Index row = pr * patch;
    const Index window = row / n_mels;
    for (Index pc = 0; pc < cols; ++pc) {
      order.push_back({window, (row % n_mels) / patch, (window * span + pc * patch) / patch});
    }
  }
  return order;
}

}  // namespace amba
