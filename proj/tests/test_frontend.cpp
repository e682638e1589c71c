#include "doctest.h"

#include <cmath>
#include <complex>
#include <cstring>
#include <filesystem>
#include <numbers>
#include <random>

#include "amba/errors.hpp"
#include "amba/frontend.hpp"

using namespace amba;

namespace {

std::vector<unsigned char> wav_bytes(std::uint16_t format, std::uint16_t channels,
                                     std::uint32_t rate, std::uint16_t bits,
                                     const std::vector<unsigned char>& data) {
  std::vector<unsigned char> out;
  auto u32 = [&](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
  };
  auto u16 = [&](std::uint16_t v) {
    out.push_back(static_cast<unsigned char>(v));
    out.push_back(static_cast<unsigned char>(v >> 8));
  };
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  u32(36 + static_cast<std::uint32_t>(data.size()));
  out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  u32(16);
  u16(format);
  u16(channels);
  u32(rate);
  u32(rate * channels * bits / 8);
  u16(static_cast<std::uint16_t>(channels * bits / 8));
  u16(bits);
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  u32(static_cast<std::uint32_t>(data.size()));
  out.insert(out.end(), data.begin(), data.end());
  return out;
}

std::vector<unsigned char> float_bytes(std::initializer_list<float> values) {
  std::vector<unsigned char> out;
  for (float f : values) {
    std::uint32_t u;
    std::memcpy(&u, &f, 4);
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(u >> (8 * i)));
  }
  return out;
}

AudioClip tone(double hz, double seconds, int rate, double amp = 0.5) {
  AudioClip c;
  c.sample_rate = rate;
  c.samples.resize(static_cast<std::size_t>(std::llround(seconds * rate)));
  for (std::size_t i = 0; i < c.samples.size(); ++i) {
    c.samples[i] = static_cast<float>(amp * std::sin(2 * std::numbers::pi * hz * double(i) / rate));
  }
  return c;
}

// Brute-force DFT magnitude peak over a 1024-sample Hann frame.
int dominant_bin(const std::vector<float>& s, std::size_t start) {
  const int n = 1024;
  int best = 0;
  double best_mag = -1;
  for (int k = 0; k <= n / 2; ++k) {
    std::complex<double> acc = 0;
    for (int i = 0; i < n; ++i) {
      const double w = 0.5 - 0.5 * std::cos(2 * std::numbers::pi * i / n);
      acc += w * s[start + i] * std::polar(1.0, -2 * std::numbers::pi * k * i / n);
    }
    if (std::abs(acc) > best_mag) {
      best_mag = std::abs(acc);
      best = k;
    }
  }
  return best;
}

}  // namespace

TEST_CASE("wav decoding of integer and float PCM") {
  // 16384 as 16-bit little endian.
  auto clip = decode_wav(wav_bytes(1, 1, 16000, 16, {0x00, 0x40}));
  REQUIRE(clip.samples.size() == 1);
  CHECK(clip.samples[0] == 0.5f);
  CHECK(clip.sample_rate == 16000);

  auto stereo = decode_wav(wav_bytes(3, 2, 44100, 32, float_bytes({0.2f, 0.4f})));
  REQUIRE(stereo.samples.size() == 1);
  CHECK(stereo.samples[0] == doctest::Approx(0.3f).epsilon(1e-7));

  auto s24 = decode_wav(wav_bytes(1, 1, 8000, 24, {0x00, 0x00, 0xC0}));  // -0.5
  CHECK(s24.samples[0] == -0.5f);
  auto s8 = decode_wav(wav_bytes(1, 1, 8000, 8, {192}));
  CHECK(s8.samples[0] == 0.5f);
}

TEST_CASE("wav decoding errors carry offsets") {
  auto bad = wav_bytes(1, 1, 16000, 16, {0, 0});
  bad[0] = 'X';
  try {
    decode_wav(bad);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("offset") != std::string::npos);
  }
  CHECK_THROWS_AS(decode_wav(wav_bytes(2, 1, 16000, 16, {0, 0})), FormatError);  // ADPCM
  auto truncated = wav_bytes(1, 1, 16000, 16, {0, 0, 0, 0});
  truncated.resize(truncated.size() - 2);
  CHECK_THROWS_AS(decode_wav(truncated), FormatError);
  CHECK_THROWS_AS(decode_wav({}), FormatError);
}

TEST_CASE("wav write/read round trip stays within quantisation") {
  std::mt19937_64 rng(30);
  std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
  AudioClip clip;
  clip.sample_rate = 32000;
  for (int i = 0; i < 5000; ++i) clip.samples.push_back(dist(rng));
  clip.samples.push_back(1.0f);
  clip.samples.push_back(-1.0f);
  const auto path = std::filesystem::temp_directory_path() / "amba_roundtrip.wav";
  write_wav(path, clip);
  auto back = load_wav(path);
  REQUIRE(back.samples.size() == clip.samples.size());
  double worst = 0;
  for (std::size_t i = 0; i < clip.samples.size(); ++i) {
    worst = std::max(worst, double(std::abs(back.samples[i] - clip.samples[i])));
  }
  CHECK(worst <= 1.0 / 32768.0);

  write_wav(path, clip, WavEncoding::kFloat32);
  CHECK(load_wav(path).samples == clip.samples);
  std::filesystem::remove(path);
}

TEST_CASE("resampling") {
  auto clip = tone(440, 0.1, 32000);
  auto same = resample(clip, 32000);
  CHECK(same.samples == clip.samples);

  AudioClip flat;
  flat.sample_rate = 22050;
  flat.samples.assign(2205, 0.25f);
  for (auto method : {ResampleMethod::kLinear, ResampleMethod::kWindowedSinc}) {
    auto up = resample(flat, 32000, method);
    CHECK(std::abs(double(up.samples.size()) - 3200.0) <= 1.0);
    for (float v : up.samples) CHECK(v == doctest::Approx(0.25f).epsilon(1e-5));
  }

  auto low = tone(440, 0.5, 16000);
  for (auto method : {ResampleMethod::kLinear, ResampleMethod::kWindowedSinc}) {
    auto up = resample(low, 32000, method);
    CHECK(std::abs(up.duration_seconds() - low.duration_seconds()) <= 1.0 / 16000);
    const int bin = dominant_bin(up.samples, 4000);
    const double expect = 440.0 / (32000.0 / 1024);  // ~14.08
    CHECK(std::abs(bin - expect) <= 1.0);
  }
}

TEST_CASE("log-mel frame arithmetic and silence") {
  CHECK(frame_count(320000, 320) == 1000);
  AudioClip silence;
  silence.sample_rate = 32000;
  silence.samples.assign(320000, 0.0f);
  auto mel = log_mel(silence);
  CHECK(mel.frames() == 1000);
  CHECK(mel.bins() == 64);
  CHECK((mel.values.array() == silence_value()).all());
  CHECK(silence_value() == static_cast<float>(std::log(1e-10)));

  auto padded = pad_frames(mel);
  CHECK(padded.frames() == 1024);
  CHECK(padded.bins() == 64);

  AudioClip short_clip;
  short_clip.sample_rate = 32000;
  short_clip.samples.assign(500, 0.1f);
  CHECK_THROWS_AS(log_mel(short_clip), DataError);
  MelConfig lenient;
  lenient.allow_short = true;
  CHECK(log_mel(short_clip, lenient).frames() == 1);

  AudioClip wrong_rate = silence;
  wrong_rate.sample_rate = 16000;
  CHECK_THROWS_AS(log_mel(wrong_rate), ConfigError);
}

TEST_CASE("1 kHz tone peaks in the nearest mel filter") {
  auto mel = log_mel(tone(1000, 1.0, 32000));
  const auto centers = mel_center_frequencies({});
  Index nearest = 0;
  for (Index m = 0; m < 64; ++m) {
    if (std::abs(centers[m] - 1000) < std::abs(centers[nearest] - 1000)) nearest = m;
  }
  Index argmax;
  mel.values.row(50).maxCoeff(&argmax);
  CHECK(argmax == nearest);
}

TEST_CASE("mel filterbank shape") {
  auto fb = mel_filterbank({});
  CHECK(fb.rows() == 64);
  CHECK(fb.cols() == 513);
  CHECK(fb.maxCoeff() <= 1.0);
  CHECK((fb.rowwise().sum().array() > 0).all());
  CHECK(hz_to_mel(mel_to_hz(1234.5)) == doctest::Approx(1234.5));
  const auto c = mel_center_frequencies({});
  CHECK(c.back() < 16000.0);
}

TEST_CASE("silence prefix only changes the silent frames") {
  const int hop = 320;
  auto t = tone(700, 0.5, 32000);
  AudioClip joined;
  joined.sample_rate = 32000;
  joined.samples.assign(10 * hop, 0.0f);
  joined.samples.insert(joined.samples.end(), t.samples.begin(), t.samples.end());
  auto a = log_mel(t);
  auto b = log_mel(joined);
  REQUIRE(b.frames() == a.frames() + 10);
  CHECK(b.values.bottomRows(a.frames()) == a.values);
  // Frames whose whole window lies in the silence are exactly silent.
  for (Index f = 0; f * hop + 512 <= 10 * hop; ++f) {
    CHECK((b.values.row(f).array() == silence_value()).all());
  }
}

TEST_CASE("pad_frames") {
  MelSpectrogram m{RowMat<float>::Random(1000, 64)};
  auto p = pad_frames(m);
  CHECK(p.frames() == 1024);
  CHECK(p.values.topRows(1000) == m.values);
  CHECK((p.values.bottomRows(24).array() == silence_value()).all());

  MelSpectrogram full{RowMat<float>::Random(1024, 64)};
  CHECK(pad_frames(full).values == full.values);

  MelSpectrogram half{RowMat<float>::Random(512, 64)};
  CHECK(pad_frames(half).values.topRows(512) == half.values);

  MelSpectrogram big{RowMat<float>::Random(1100, 64)};
  CHECK_THROWS_AS(pad_frames(big), ShapeError);
  CHECK(pad_frames(big, 1024, true).values == big.values.topRows(1024));
}

TEST_CASE("window reshape layout") {
  MelSpectrogram m{RowMat<float>::Random(1024, 64)};
  auto map = window_reshape(m, 4);
  CHECK(map.rows() == 256);
  CHECK(map.cols() == 256);
  // Window 2, bin 5, frame offset 7 -> absolute frame 2 * 256 + 7.
  CHECK(map(2 * 64 + 5, 7) == m.values(2 * 256 + 7, 5));
  CHECK(inverse_window_reshape(map, 4, 64).values == m.values);

  auto single = window_reshape(m, 1);
  CHECK(single == m.values.transpose());

  MelSpectrogram odd{RowMat<float>::Random(1000, 64)};
  CHECK_THROWS_AS(window_reshape(odd, 3), ShapeError);
}

TEST_CASE("toy token order: time, then frequency, then window") {
  // T = 4, F = 2, two windows, unit patches.
  const auto order = token_order(4, 2, 2, 1);
  REQUIRE(order.size() == 8);
  const Index expect[8][3] = {{0, 0, 0}, {0, 0, 1}, {0, 1, 0}, {0, 1, 1},
                              {1, 0, 2}, {1, 0, 3}, {1, 1, 2}, {1, 1, 3}};
  for (std::size_t i = 0; i < 8; ++i) {
    CHECK(order[i].window == expect[i][0]);
    CHECK(order[i].freq_patch == expect[i][1]);
    CHECK(order[i].time_patch == expect[i][2]);
  }
  // Same-frame tokens of different bins are vertical neighbours on the map:
  // grid width is T / n = 2, so token i and i + 2 share a frame.
  for (std::size_t i = 0; i + 2 < 8; ++i) {
    if (order[i].window == order[i + 2].window) {
      CHECK(order[i].time_patch == order[i + 2].time_patch);
      CHECK(order[i + 2].freq_patch == order[i].freq_patch + 1);
    }
  }
}
