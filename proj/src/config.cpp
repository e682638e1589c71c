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

#include "amba/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "amba/errors.hpp"

namespace amba {
namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* what) {
  throw ConfigError("invalid value '" + value + "' for " + key + ": expected " + what);
}

Index parse_index(const std::string& key, const std::string& value) {
  long long out = 0;
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end || value.empty()) bad_value(key, value, "an integer");
  return static_cast<Index>(out);
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
  std::uint64_t out = 0;
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end || value.empty()) {
    bad_value(key, value, "an unsigned 64-bit integer");
  }
  return out;
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double out = std::stod(value, &used);
    if (used != value.size()) bad_value(key, value, "a number");
    return out;
  } catch (const std::logic_error&) {
    bad_value(key, value, "a number");
  }
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  bad_value(key, value, "true or false");
}

std::vector<Index> parse_list(const std::string& key, const std::string& value) {
  std::vector<Index> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_index(key, trim(item)));
  if (out.empty()) bad_value(key, value, "a comma-separated list of integers");
  return out;
}

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  // Prefer the shortest spelling that still round-trips.
  for (int prec = 1; prec < 17; ++prec) {
    char shorter[32];
    std::snprintf(shorter, sizeof(shorter), "%.*g", prec, v);
    if (std::stod(shorter) == v) return shorter;
  }
  return buf;
}

std::string fmt_list(const std::vector<Index>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(v[i]);
  }
  return out;
}

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

}  // namespace

std::pair<std::string, std::string> split_setting(const std::string& setting) {
  const auto eq = setting.find('=');
  if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + setting + "'");
  auto key = trim(setting.substr(0, eq));
  auto value = trim(setting.substr(eq + 1));
  if (key.empty()) throw ConfigError("empty key in '" + setting + "'");
  return {key, value};
}

ModelConfig ModelConfig::preset(const std::string& name) {
  ModelConfig c;
  c.variant = name;
  if (name == "tiny") {
    c.stage_dims = {96, 192, 384, 768};
    c.stage_depths = {2, 2, 9, 2};
    c.stage_heads = {3, 6, 12, 24};
  } else if (name == "micro") {
    c.stage_dims = {56, 112, 224, 448};
    c.stage_depths = {2, 2, 6, 2};
    c.stage_heads = {2, 4, 8, 16};
  } else if (name == "nano") {
    c.stage_dims = {40, 80, 160, 320};
    c.stage_depths = {2, 2, 3, 2};
    c.stage_heads = {1, 2, 4, 8};
  } else if (name == "toy") {
    // 64 frames x 16 bins in two windows: a 32 x 32 map.
    c.frames = 64;
    c.mel_bins = 16;
    c.n_windows = 2;
    c.stage_dims = {16, 32, 64, 128};
    c.stage_depths = {2, 2, 3, 2};
    c.stage_heads = {2, 2, 4, 4};
    c.state_size = 4;
    c.n_classes = 8;
    c.drop_path = 0.0;
  } else {
    throw ConfigError("unknown variant '" + name + "' (expected tiny, micro, nano or toy)");
  }
  return c;
}

void ModelConfig::validate() const {
  require(patch_size >= 1, "patch_size must be positive");
  require(n_windows >= 1, "n_windows must be positive");
  require(frames >= 1 && mel_bins >= 1, "frames and mel_bins must be positive");
  require(frames % n_windows == 0, "frames (" + std::to_string(frames) +
                                       ") must be divisible by n_windows (" +
                                       std::to_string(n_windows) + ")");
  const auto stages = stage_dims.size();
  require(stages >= 1 && stages <= 4, "between one and four stages are supported");
  require(stage_depths.size() == stages, "stage_depths must have one entry per stage");
  require(stage_heads.size() == stages, "stage_heads must have one entry per stage");
  for (std::size_t s = 0; s < stages; ++s) {
    const auto tag = "stage " + std::to_string(s + 1);
    require(stage_dims[s] >= 1, tag + ": dim must be positive");
    require(stage_depths[s] >= 1, tag + ": depth must be at least 1");
    if (s > 0) {
      require(stage_dims[s] == 2 * stage_dims[s - 1], tag + ": dim must double at each merge");
    }
    if (transformer_interleave) {
      require(stage_heads[s] >= 1 && stage_dims[s] % stage_heads[s] == 0,
              tag + ": dim " + std::to_string(stage_dims[s]) +
                  " is not divisible by head count " + std::to_string(stage_heads[s]));
    }
  }
  const Index stride = patch_size << (stages - 1);
  require(grid_height() % stride == 0 && grid_width() % stride == 0,
          "grid " + std::to_string(grid_height()) + "x" + std::to_string(grid_width()) +
              " is not divisible by the total stride " + std::to_string(stride));
  require(state_size >= 1, "state_size must be positive");
  require(ssm_expand >= 1, "ssm_expand must be positive");
  require(mlp_ratio >= 1, "mlp_ratio must be positive");
  require(dt_rank >= 0, "dt_rank must be non-negative");
  require(conv_kernel >= 1 && conv_kernel % 2 == 1, "conv_kernel must be odd");
  require(n_classes >= 1, "n_classes must be positive");
  require(drop_path >= 0.0 && drop_path < 1.0, "drop_path must lie in [0, 1)");
  require(ln_eps > 0.0, "ln_eps must be positive");
}

void TrainConfig::validate() const {
  require(batch_size >= 1, "batch_size must be positive");
  require(lr >= 0.0, "lr must be non-negative");
  require(weight_decay >= 0.0, "weight_decay must be non-negative");
  require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, "betas must lie in [0, 1)");
  require(adam_eps > 0.0, "adam_eps must be positive");
  require(warmup_steps >= 0, "warmup_steps must be non-negative");
  require(total_steps >= 1, "total_steps must be positive");
  require(grad_clip > 0.0, "grad_clip must be positive");
  require(cutmix_prob >= 0.0 && cutmix_prob <= 1.0, "cutmix_prob must lie in [0, 1]");
  require(cutmix_alpha > 0.0, "cutmix_alpha must be positive");
  require(eval_every >= 1 && checkpoint_every >= 1 && log_every >= 1,
          "eval_every, checkpoint_every and log_every must be positive");
}

void RunConfig::set(const std::string& key, const std::string& value) {
  // clang-format off
  static const std::map<std::string, std::function<void(RunConfig&, const std::string&, const std::string&)>> setters = {
    {"variant", [](RunConfig& c, const std::string&, const std::string& v) { c.model = ModelConfig::preset(v); c.mel.n_mels = static_cast<int>(c.model.mel_bins); }},
    {"patch_size", [](RunConfig& c, const std::string& k, const std::string& v) { c.model.patch_size = parse_index(k, v); }},
    {"n_windows", [](RunConfig& c, const std::string& k, const std::string& v) { c.model.n_windows = parse_index(k, v); }},
    {"frames", [](RunConfig& c, const std::string& k, const std::string& v) { c.model.frames = parse_index(k, v); }},
    {"mel_bins", [](RunConfig& c, const std::string& k, const std::string& v) { c.model.mel_bins = parse_index(k, v); c.mel.n_mels = static_cast<int>(c.model.mel_bins); }},
    {"stage_dims", [](RunConfig& c, const std::string& k, const std::string& v) { c.model.stage_dims = parse_list(k, v); }},
    {"stage_depths", [](RunConfig& c, const std::string& k, const std::string& v) { c.model.stage_depths = parse_list(k, v); }},
    {"stage_heads", [](RunConfig& c, const std::string& k, const std::string& v) { c.model.stage_heads = parse_list(k, v); }},
    {"state_size", [](RunConfig& c, const std::string& k, const std::string& v) { c.model.state_size = parse_index(k, v); }},
    {"ssm_expand", [](RunConfig& c, const std::string& k, const std::string& v) { c.model.ssm_expand = parse_index(k, v); }},
    {"mlp_ratio", [](RunConfig& c, const std::string& k, const std::string& v) { c.model.mlp_ratio = parse_index(k, v); }},
    {"dt_rank", [](RunConfig& c, const std::string& k, const std::string& v) { c.model.dt_rank = parse_index(k, v); }},
    {"conv_kernel", [](RunConfig& c, const std::string& k, const std::string& v) { c.model.conv_kernel = parse_index(k, v); }},
    {"n_classes", [](RunConfig& c, const std::string& k, const std::string& v) { c.model.n_classes = parse_index(k, v); }},
    {"transformer_interleave", [](RunConfig& c, const std::string& k, const std::string& v) { c.model.transformer_interleave = parse_bool(k, v); }},
    {"drop_path", [](RunConfig& c, const std::string& k, const std::string& v) { c.model.drop_path = parse_double(k, v); }},
    {"ln_eps", [](RunConfig& c, const std::string& k, const std::string& v) { c.model.ln_eps = parse_double(k, v); }},
    {"sample_rate", [](RunConfig& c, const std::string& k, const std::string& v) { c.mel.sample_rate = static_cast<int>(parse_index(k, v)); }},
    {"win_length", [](RunConfig& c, const std::string& k, const std::string& v) { c.mel.win_length = static_cast<int>(parse_index(k, v)); }},
    {"hop_length", [](RunConfig& c, const std::string& k, const std::string& v) { c.mel.hop_length = static_cast<int>(parse_index(k, v)); }},
    {"f_min", [](RunConfig& c, const std::string& k, const std::string& v) { c.mel.f_min = parse_double(k, v); }},
    {"f_max", [](RunConfig& c, const std::string& k, const std::string& v) { c.mel.f_max = parse_double(k, v); }},
    {"batch_size", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.batch_size = parse_index(k, v); }},
    {"lr", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.lr = parse_double(k, v); }},
    {"weight_decay", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.weight_decay = parse_double(k, v); }},
    {"beta1", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.beta1 = parse_double(k, v); }},
    {"beta2", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.beta2 = parse_double(k, v); }},
    {"adam_eps", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.adam_eps = parse_double(k, v); }},
    {"warmup_steps", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.warmup_steps = parse_index(k, v); }},
    {"total_steps", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.total_steps = parse_index(k, v); }},
    {"grad_clip", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.grad_clip = parse_double(k, v); }},
    {"cutmix_prob", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.cutmix_prob = parse_double(k, v); }},
    {"cutmix_alpha", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.cutmix_alpha = parse_double(k, v); }},
    {"seed", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.seed = parse_u64(k, v); }},
    {"eval_every", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.eval_every = parse_index(k, v); }},
    {"checkpoint_every", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.checkpoint_every = parse_index(k, v); }},
    {"log_every", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.log_every = parse_index(k, v); }},
  };
  // clang-format on
  const auto it = setters.find(key);
  if (it == setters.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second(*this, key, value);
}

RunConfig RunConfig::parse(const std::string& text, const std::string& source) {
  struct Line {
    int number;
    std::string key, value;
  };
  std::vector<Line> lines;
  std::istringstream in(text);
  std::string raw;
  int number = 0;
  while (std::getline(in, raw)) {
    ++number;
    const auto hash = raw.find('#');
    const auto body = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (body.empty()) continue;
    try {
      auto [key, value] = split_setting(body);
      lines.push_back({number, key, value});
    } catch (const ConfigError& e) {
      throw ConfigError(source + ":" + std::to_string(number) + ": " + e.what());
    }
  }

  RunConfig config;
  auto apply = [&](const Line& line) {
    try {
      config.set(line.key, line.value);
    } catch (const ConfigError& e) {
      throw ConfigError(source + ":" + std::to_string(line.number) + ": " + e.what());
    }
  };
  for (const auto& line : lines) {
    if (line.key == "variant") apply(line);
  }
  for (const auto& line : lines) {
    if (line.key != "variant") apply(line);
  }
  return config;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.string());
}

void RunConfig::validate() const {
  model.validate();
  train.validate();
  require(mel.n_mels == model.mel_bins, "mel n_mels must equal mel_bins");
  require(mel.sample_rate > 0 && mel.hop_length > 0 && mel.win_length > 0,
          "sample_rate, hop_length and win_length must be positive");
}

std::string RunConfig::model_text() const {
  const auto& m = model;
  std::ostringstream o;
  o << "variant=" << m.variant << '\n'
    << "patch_size=" << m.patch_size << '\n'
    << "n_windows=" << m.n_windows << '\n'
    << "frames=" << m.frames << '\n'
    << "mel_bins=" << m.mel_bins << '\n'
    << "stage_dims=" << fmt_list(m.stage_dims) << '\n'
    << "stage_depths=" << fmt_list(m.stage_depths) << '\n'
    << "stage_heads=" << fmt_list(m.stage_heads) << '\n'
    << "state_size=" << m.state_size << '\n'
    << "ssm_expand=" << m.ssm_expand << '\n'
    << "mlp_ratio=" << m.mlp_ratio << '\n'
    << "dt_rank=" << m.dt_rank << '\n'
    << "conv_kernel=" << m.conv_kernel << '\n'
    << "n_classes=" << m.n_classes << '\n'
    << "transformer_interleave=" << (m.transformer_interleave ? "true" : "false") << '\n'
    << "drop_path=" << fmt_double(m.drop_path) << '\n'
    << "ln_eps=" << fmt_double(m.ln_eps) << '\n'
    << "sample_rate=" << mel.sample_rate << '\n'
    << "win_length=" << mel.win_length << '\n'
    << "hop_length=" << mel.hop_length << '\n'
    << "f_min=" << fmt_double(mel.f_min) << '\n'
    << "f_max=" << fmt_double(mel.f_max) << '\n';
  return o.str();
}

std::string RunConfig::to_text() const {
  const auto& t = train;
  std::ostringstream o;
  o << model_text()
    << "batch_size=" << t.batch_size << '\n'
    << "lr=" << fmt_double(t.lr) << '\n'
    << "weight_decay=" << fmt_double(t.weight_decay) << '\n'
    << "beta1=" << fmt_double(t.beta1) << '\n'
    << "beta2=" << fmt_double(t.beta2) << '\n'
    << "adam_eps=" << fmt_double(t.adam_eps) << '\n'
    << "warmup_steps=" << t.warmup_steps << '\n'
    << "total_steps=" << t.total_steps << '\n'
    << "grad_clip=" << fmt_double(t.grad_clip) << '\n'
    << "cutmix_prob=" << fmt_double(t.cutmix_prob) << '\n'
    << "cutmix_alpha=" << fmt_double(t.cutmix_alpha) << '\n'
    << "seed=" << t.seed << '\n'
    << "eval_every=" << t.eval_every << '\n'
    << "checkpoint_every=" << t.checkpoint_every << '\n'
    << "log_every=" << t.log_every << '\n';
  return o.str();
}

}  // namespace amba
