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

// audiomamba: train / eval / infer / params / bench / gradcheck.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 data error
// (audio, manifest, checkpoint), 3 verification failure.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "amba/bench.hpp"
#include "amba/checkpoint.hpp"
#include "amba/config.hpp"
#include "amba/errors.hpp"
#include "amba/gradcheck.hpp"
#include "amba/model.hpp"
#include "amba/selective_scan.hpp"
#include "amba/train.hpp"

namespace fs = std::filesystem;
using namespace amba;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitVerify = 3;

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> sets;
  std::uint64_t seed = 0;
  bool seed_given = false;
};

struct Args {
  CommonArgs common;
  std::string manifest;
  std::string eval_manifest;
  std::string checkpoint;
  std::string mode = "multilabel";
  std::string out;
  bool skip_bad = false;
  std::vector<std::string> files;
  int top = 5;
  std::string lengths = "1024,2048,4096";
  Index bench_channels = 64;
  Index bench_state = 16;
  int bench_repeats = 7;
  std::string scope = "all";
  bool corrupt_adjoint = false;
};

void add_common(CLI::App* cmd, CommonArgs& c) {
  cmd->add_option("--config", c.config_path, "key=value config file");
  cmd->add_option("--set", c.sets, "override one config key (repeatable)")
      ->type_name("KEY=VALUE")
      ->allow_extra_args(false);
  cmd->add_option("--seed", c.seed, "random seed (overrides the config)")
      ->each([&c](const std::string&) { c.seed_given = true; });
}

void apply_overrides(RunConfig& cfg, const CommonArgs& c) {
  for (const auto& s : c.sets) {
    const auto [k, v] = split_setting(s);
    try {
      cfg.set(k, v);
    } catch (const ConfigError& e) {
      throw ConfigError("--set " + s + ": " + e.what());
    }
  }
  if (c.seed_given) cfg.train.seed = c.seed;
}

RunConfig assemble_config(const CommonArgs& c) {
  RunConfig cfg = c.config_path.empty() ? RunConfig{} : RunConfig::load(c.config_path);
  apply_overrides(cfg, c);
  cfg.validate();
  return cfg;
}

std::vector<Index> parse_lengths(const std::string& s) {
  std::vector<Index> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const long long v = std::stoll(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
      out.push_back(static_cast<Index>(v));
    } catch (const std::logic_error&) {
      throw ConfigError("bench: bad length '" + item + "'");
    }
  }
  if (out.empty()) throw ConfigError("bench: no lengths given");
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

// Prints a "# key=value" line for every config value.
std::string config_echo(const RunConfig& cfg) {
  std::string out;
  std::istringstream in(cfg.to_text());
  std::string line;
  while (std::getline(in, line)) out += "# " + line + "\n";
  return out;
}

std::vector<Example> load_set(const std::string& path, const RunConfig& cfg, const std::string& split,
                              bool skip_bad) {
  const auto manifest = read_manifest(path, cfg.model.n_classes, split);
  std::vector<std::string> skipped;
  auto examples = load_examples(manifest, cfg, skip_bad ? &skipped : nullptr);
  for (const auto& s : skipped) std::cerr << "skipped: " << s << "\n";
  if (examples.empty()) throw DataError(path + ": no usable rows");
  return examples;
}

int cmd_train(const Args& a) {
  const auto cfg = assemble_config(a.common);
  if (a.manifest.empty()) throw ConfigError("train: --manifest is required");
  const auto mode = parse_eval_mode(a.mode);
  const fs::path out = a.out.empty() ? fs::path("run") : fs::path(a.out);
  fs::create_directories(out);

  const auto train_set = load_set(a.manifest, cfg, "train", a.skip_bad);
  const auto eval_set =
      a.eval_manifest.empty() ? train_set : load_set(a.eval_manifest, cfg, "eval", a.skip_bad);

  Trainer<float> trainer(cfg);
  if (!a.checkpoint.empty()) trainer.resume(a.checkpoint);

  std::ofstream log(out / "train.log", std::ios::trunc);
  std::ofstream eval_log(out / "eval.log", std::ios::trunc);
  if (!log || !eval_log) throw DataError("cannot write logs in " + out.string());
  log << config_echo(cfg) << "# manifest=" << a.manifest << "\n";
  if (!a.checkpoint.empty()) log << "# resumed_from=" << a.checkpoint << "\n";
  log << "step,loss,grad_norm,lr\n";
  std::cout << "step,loss,grad_norm,lr\n";

  const Index total = cfg.train.total_steps;
  double best = -1.0;
  while (trainer.next_step() < total) {
    const auto r = trainer.step(train_set);
    const bool last = r.step + 1 == total;
    if (r.step % cfg.train.log_every == 0 || last) {
      const auto line = format_log_line(r);
      log << line << "\n";
      std::cout << line << "\n";
    }
    if ((r.step + 1) % cfg.train.eval_every == 0 || last) {
      const auto report = evaluate(trainer.model(), eval_set, mode);
      char buf[96];
      std::snprintf(buf, sizeof(buf), "step=%lld mAP=%.6f mAUC=%.6f d_prime=%.6f",
                    static_cast<long long>(r.step), report.mAP, report.mAUC, report.d_prime);
      eval_log << buf << "\n";
      std::cout << buf << "\n";
      if (report.mAP > best) {
        best = report.mAP;
        trainer.save(out / "best.amba");
      }
    }
    if ((r.step + 1) % cfg.train.checkpoint_every == 0) {
      trainer.save(out / ("step_" + std::to_string(r.step + 1) + ".amba"));
    }
  }
  trainer.save(out / "last.amba");
  log.flush();
  eval_log.flush();
  return kExitOk;
}

RunConfig checkpoint_config(const TensorArchive& archive, const CommonArgs& c) {
  auto cfg = archive_config(archive);
  apply_overrides(cfg, c);
  cfg.validate();
  return cfg;
}

int cmd_eval(const Args& a) {
  if (a.checkpoint.empty()) throw ConfigError("eval: --checkpoint is required");
  if (a.manifest.empty()) throw ConfigError("eval: --manifest is required");
  const auto mode = parse_eval_mode(a.mode);
  const auto archive = TensorArchive::load(a.checkpoint);
  const auto cfg = checkpoint_config(archive, a.common);
  AudioMamba<float> model(cfg.model);
  load_parameters(model, archive, LoadMode::kStrict);
  const auto data = load_set(a.manifest, cfg, "eval", a.skip_bad);
  const auto text = evaluate(model, data, mode).to_text();
  std::cout << text;
  if (!a.out.empty()) {
    fs::create_directories(a.out);
    write_text(fs::path(a.out) / "report.txt", text);
  }
  return kExitOk;
}

int cmd_infer(const Args& a) {
  if (a.checkpoint.empty()) throw ConfigError("infer: --checkpoint is required");
  std::vector<std::string> files = a.files;
  if (!a.manifest.empty()) {
    for (const auto& row : read_manifest(a.manifest, 1 << 30, "eval").rows) files.push_back(row.path);
  }
  if (files.empty()) throw ConfigError("infer: give audio files or --manifest");
  const auto archive = TensorArchive::load(a.checkpoint);
  const auto cfg = checkpoint_config(archive, a.common);
  AudioMamba<float> model(cfg.model);
  load_parameters(model, archive, LoadMode::kStrict);
  NoGradGuard guard;
  std::ostringstream out;
  for (const auto& f : files) {
    const auto logits = model.classify(clip_features(f, cfg)).values();
    std::vector<Index> order(static_cast<std::size_t>(logits.size()));
    for (Index i = 0; i < logits.size(); ++i) order[i] = i;
    const auto k = std::min<std::size_t>(static_cast<std::size_t>(std::max(1, a.top)), order.size());
    std::partial_sort(order.begin(), order.begin() + k, order.end(),
                      [&](Index x, Index y) { return logits[x] > logits[y] || (logits[x] == logits[y] && x < y); });
    out << f;
    for (std::size_t i = 0; i < k; ++i) {
      char buf[48];
      std::snprintf(buf, sizeof(buf), ",%lld:%.6f", static_cast<long long>(order[i]),
                    1.0 / (1.0 + std::exp(-static_cast<double>(logits[order[i]]))));
      out << buf;
    }
    out << "\n";
  }
  std::cout << out.str();
  if (!a.out.empty()) {
    fs::create_directories(a.out);
    write_text(fs::path(a.out) / "predictions.csv", out.str());
  }
  return kExitOk;
}

int cmd_params(const Args& a) {
  const auto cfg = assemble_config(a.common);
  const auto count = count_params(cfg.model);
  std::cout << "variant=" << cfg.model.variant << "\n";
  for (const auto& [name, n] : count.parts) std::cout << name << "=" << n << "\n";
  std::cout << "total=" << count.total << "\n";
  return kExitOk;
}

int cmd_bench(const Args& a) {
  BenchOptions o;
  o.channels = a.bench_channels;
  o.state_size = a.bench_state;
  o.repeats = a.bench_repeats;
  if (a.common.seed_given) o.seed = a.common.seed;
  if (o.channels < 1 || o.state_size < 1 || o.repeats < 1) {
    throw ConfigError("bench: channels, state and repeats must be positive");
  }
  const auto csv = bench_csv(run_bench(parse_lengths(a.lengths), o));
  std::cout << csv;
  if (!a.out.empty()) {
    fs::create_directories(a.out);
    write_text(fs::path(a.out) / "bench.csv", csv);
  }
  return kExitOk;
}

int cmd_gradcheck(const Args& a) {
  std::vector<GradcheckScope> scopes;
  if (a.scope == "all") {
    scopes = {GradcheckScope::kConv, GradcheckScope::kLayerNorm, GradcheckScope::kScan,
              GradcheckScope::kSs2d, GradcheckScope::kBlock, GradcheckScope::kModel};
  } else {
    scopes = {parse_gradcheck_scope(a.scope)};
  }
  testing_hooks::set_corrupt_scan_adjoint(a.corrupt_adjoint);
  bool ok = true;
  for (auto s : scopes) {
    const auto r = run_gradcheck(s, a.common.seed);
    std::cout << format_result(r) << "\n";
    ok = ok && r.passed;
  }
  testing_hooks::set_corrupt_scan_adjoint(false);
  return ok ? kExitOk : kExitVerify;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"AudioMamba audio tagging: training, evaluation and verification"};
  app.require_subcommand(1);
  Args a;

  auto* train = app.add_subcommand("train", "train a model from a manifest");
  add_common(train, a.common);
  train->add_option("--manifest", a.manifest, "training manifest (path,labels CSV)")->required();
  train->add_option("--eval-manifest", a.eval_manifest, "manifest for periodic evaluation");
  train->add_option("--checkpoint", a.checkpoint, "resume from this training checkpoint");
  train->add_option("--mode", a.mode, "multilabel or singlelabel");
  train->add_option("--out", a.out, "output directory (default: run)");
  train->add_flag("--skip-bad", a.skip_bad, "skip unreadable audio rows instead of aborting");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a manifest");
  add_common(eval, a.common);
  eval->add_option("--checkpoint", a.checkpoint, "model checkpoint")->required();
  eval->add_option("--manifest", a.manifest, "evaluation manifest")->required();
  eval->add_option("--mode", a.mode, "multilabel or singlelabel");
  eval->add_option("--out", a.out, "write report.txt here");
  eval->add_flag("--skip-bad", a.skip_bad, "skip unreadable audio rows instead of aborting");

  auto* infer = app.add_subcommand("infer", "print top classes for audio files");
  add_common(infer, a.common);
  infer->add_option("--checkpoint", a.checkpoint, "model checkpoint")->required();
  infer->add_option("--manifest", a.manifest, "take files from a manifest");
  infer->add_option("--top", a.top, "classes per file");
  infer->add_option("--out", a.out, "write predictions.csv here");
  infer->add_option("files", a.files, "WAV files");

  auto* params = app.add_subcommand("params", "count parameters per stage");
  add_common(params, a.common);

  auto* bench = app.add_subcommand("bench", "time the scan against self-attention");
  add_common(bench, a.common);
  bench->add_option("--lengths", a.lengths, "ascending sequence lengths, comma-separated");
  bench->add_option("--channels", a.bench_channels, "channel width");
  bench->add_option("--state", a.bench_state, "scan state size");
  bench->add_option("--repeats", a.bench_repeats, "timed runs per length (best is kept)");
  bench->add_option("--out", a.out, "write bench.csv here");

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  add_common(gradcheck, a.common);
  gradcheck->add_option("--scope", a.scope, "scan, ss2d, block, model, conv, layernorm or all");
  gradcheck->add_flag("--corrupt-adjoint", a.corrupt_adjoint,
                      "scale the scan's input adjoint by 1.5 (negative control)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (train->parsed()) return cmd_train(a);
    if (eval->parsed()) return cmd_eval(a);
    if (infer->parsed()) return cmd_infer(a);
    if (params->parsed()) return cmd_params(a);
    if (bench->parsed()) return cmd_bench(a);
    if (gradcheck->parsed()) return cmd_gradcheck(a);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const ShapeError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
