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

#include "amba/train.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include "amba/errors.hpp"
#include "amba/ops.hpp"

namespace amba {
namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

// Splits one CSV record into (path, labels), honouring a quoted path field.
bool split_row(const std::string& line, std::string& path, std::string& labels) {
  if (!line.empty() && line.front() == '"') {
    std::string out;
    std::size_t i = 1;
    for (; i < line.size(); ++i) {
      if (line[i] == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          out += '"';
          ++i;
        } else {
          break;
        }
      } else {
        out += line[i];
      }
    }
    if (i >= line.size() || i + 1 >= line.size() || line[i + 1] != ',') return false;
    path = out;
    labels = line.substr(i + 2);
    return true;
  }
  const auto comma = line.rfind(',');
  if (comma == std::string::npos) return false;
  path = line.substr(0, comma);
  labels = line.substr(comma + 1);
  return true;
}

// Runs fn(i) for i in [0, n) on up to worker_count() threads. The first
// exception is rethrown after all workers stop.
void parallel_for(Index n, const std::function<void(Index)>& fn) {
  const unsigned workers = std::min<unsigned>(worker_count(), static_cast<unsigned>(std::max<Index>(n, 1)));
  if (workers <= 1) {
    for (Index i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<Index> next{0};
  std::exception_ptr error;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (Index i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(mu);
          if (!error) error = std::current_exception();
          next = n;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

bool decays(const std::string& name, const Shape& shape) {
  if (shape.size() < 2) return false;
  return name.size() < 5 || name.compare(name.size() - 5, 5, "A_log") != 0;
}

std::uint32_t lo32(std::uint64_t v) { return static_cast<std::uint32_t>(v); }
std::uint32_t hi32(std::uint64_t v) { return static_cast<std::uint32_t>(v >> 32); }

constexpr const char* kTrainStateEntry = "__train_state__";

}  // namespace

// ---- data -------------------------------------------------------------------

Manifest parse_manifest(const std::string& text, Index n_classes, const std::string& source,
                        const std::filesystem::path& base_dir, const std::string& split) {
  Manifest m;
  m.source = source;
  m.split = split;
  m.n_classes = n_classes;
  std::istringstream in(text);
  std::string raw;
  int line = 0;
  bool header = false;
  std::set<std::string> seen;
  auto fail = [&](const std::string& what) {
    throw DataError(source + ": row at line " + std::to_string(line) + ": " + what);
  };
  while (std::getline(in, raw)) {
    ++line;
    if (line == 1 && raw.rfind("\xEF\xBB\xBF", 0) == 0) raw = raw.substr(3);
    const auto body = trim(raw);
    if (body.empty()) continue;
    if (!header) {
      if (body != "path,labels") fail("expected header 'path,labels', got '" + body + "'");
      header = true;
      continue;
    }
    std::string path, labels;
    if (!split_row(body, path, labels)) fail("expected two fields 'path,labels'");
    path = trim(path);
    if (path.empty()) fail("empty path");
    ManifestRow row;
    row.line = line;
    const std::filesystem::path p(path);
    row.path = (p.is_absolute() || base_dir.empty() ? p : base_dir / p).lexically_normal().string();
    std::stringstream ls(labels);
    std::string item;
    while (std::getline(ls, item, ';')) {
      item = trim(item);
      if (item.empty()) continue;
      long long id = 0;
      const auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), id);
      if (ec != std::errc() || ptr != item.data() + item.size()) {
        fail("label '" + item + "' is not an integer");
      }
      if (id < 0 || id >= n_classes) {
        fail("label " + item + " outside [0, " + std::to_string(n_classes) + ")");
      }
      if (std::find(row.labels.begin(), row.labels.end(), id) == row.labels.end()) {
        row.labels.push_back(static_cast<int>(id));
      }
    }
    if (!seen.insert(row.path).second) fail("duplicate path '" + path + "'");
    m.rows.push_back(std::move(row));
  }
  if (!header) throw DataError(source + ": missing header 'path,labels'");
  return m;
}

Manifest read_manifest(const std::filesystem::path& path, Index n_classes, const std::string& split) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_manifest(ss.str(), n_classes, path.string(), path.parent_path(), split);
}

MelSpectrogram clip_features(const std::filesystem::path& path, const RunConfig& config) {
  auto clip = load_wav(path);
  if (clip.sample_rate != config.mel.sample_rate) {
    clip = resample(clip, config.mel.sample_rate, ResampleMethod::kWindowedSinc);
  }
  MelConfig mc = config.mel;
  mc.n_mels = static_cast<int>(config.model.mel_bins);
  mc.allow_short = true;
  return pad_frames(log_mel(clip, mc), config.model.frames, true, mc.eps);
}

unsigned worker_count() {
  unsigned n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("AUDIOMAMBA_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v >= 1) n = static_cast<unsigned>(v);
  }
  return n;
}

std::vector<Example> load_examples(const Manifest& manifest, const RunConfig& config,
                                   std::vector<std::string>* skipped) {
  const Index n = static_cast<Index>(manifest.rows.size());
  std::vector<Example> slots(n);
  std::vector<std::string> errors(n);
  parallel_for(n, [&](Index i) {
    const auto& row = manifest.rows[i];
    try {
      Example ex;
      ex.mel = clip_features(row.path, config).values;
      ex.target = Vec<float>::Zero(manifest.n_classes);
      for (int l : row.labels) ex.target[l] = 1.0f;
      ex.labels = row.labels;
      slots[i] = std::move(ex);
    } catch (const std::exception& e) {
      const auto msg = manifest.source + ": row at line " + std::to_string(row.line) + " (" +
                       row.path + "): " + e.what();
      if (skipped == nullptr) throw DataError(msg);
      errors[i] = msg;
    }
  });
  std::vector<Example> out;
  for (Index i = 0; i < n; ++i) {
    if (!errors[i].empty()) {
      skipped->push_back(errors[i]);
    } else {
      out.push_back(std::move(slots[i]));
    }
  }
  return out;
}

// ---- augmentation -------------------------------------------------------------

double sample_beta(double alpha, std::mt19937_64& rng) {
  std::gamma_distribution<double> gamma(alpha, 1.0);
  const double x = gamma(rng);
  const double y = gamma(rng);
  return x + y > 0 ? x / (x + y) : 0.5;
}

CutBox sample_cut_box(double lambda, Index frames, Index bins, std::mt19937_64& rng) {
  const double r = std::sqrt(std::clamp(1.0 - lambda, 0.0, 1.0));
  const Index ct_len = static_cast<Index>(std::floor(frames * r));
  const Index cf_len = static_cast<Index>(std::floor(bins * r));
  std::uniform_int_distribution<Index> ut(0, frames - 1), uf(0, bins - 1);
  const Index ct = ut(rng), cf = uf(rng);
  const Index t0 = std::clamp<Index>(ct - ct_len / 2, 0, frames);
  const Index t1 = std::clamp<Index>(ct + ct_len / 2, 0, frames);
  const Index f0 = std::clamp<Index>(cf - cf_len / 2, 0, bins);
  const Index f1 = std::clamp<Index>(cf + cf_len / 2, 0, bins);
  return {t0, f0, t1 - t0, f1 - f0};
}

CutMixResult apply_cutmix(const Batch& batch, const std::vector<Index>& partner, const CutBox& box) {
  const Index b = static_cast<Index>(batch.mels.size());
  if (b == 0) throw ShapeError("cutmix: empty batch");
  if (static_cast<Index>(partner.size()) != b) throw ShapeError("cutmix: partner list size");
  const Index frames = batch.mels.front().rows(), bins = batch.mels.front().cols();
  if (box.t0 < 0 || box.f0 < 0 || box.dt < 0 || box.df < 0 || box.t0 + box.dt > frames ||
      box.f0 + box.df > bins) {
    throw ShapeError("cutmix: box outside the spectrogram");
  }
  CutMixResult out;
  out.batch = batch;
  out.partner = partner;
  out.box = box;
  out.lambda = 1.0 - static_cast<double>(box.area()) / static_cast<double>(frames * bins);
  out.lambda_raw = out.lambda;
  if (box.area() == 0) return out;
  const float lam = static_cast<float>(out.lambda);
  for (Index i = 0; i < b; ++i) {
    const Index j = partner[i];
    out.batch.mels[i].block(box.t0, box.f0, box.dt, box.df) =
        batch.mels[j].block(box.t0, box.f0, box.dt, box.df);
    out.batch.targets.row(i) = lam * batch.targets.row(i) + (1.0f - lam) * batch.targets.row(j);
  }
  return out;
}

CutMixResult cutmix(const Batch& batch, double alpha, std::mt19937_64& rng) {
  const Index b = static_cast<Index>(batch.mels.size());
  if (b < 2) throw ShapeError("cutmix: needs at least two samples");
  const double lambda = sample_beta(alpha, rng);
  std::vector<Index> partner(b);
  std::iota(partner.begin(), partner.end(), Index{0});
  std::shuffle(partner.begin(), partner.end(), rng);
  const auto box = sample_cut_box(lambda, batch.mels.front().rows(), batch.mels.front().cols(), rng);
  auto out = apply_cutmix(batch, partner, box);
  out.lambda_raw = lambda;
  return out;
}

// ---- optimisation ---------------------------------------------------------------

double learning_rate(const TrainConfig& c, Index step) {
  if (step < c.warmup_steps) {
    return c.lr * static_cast<double>(step + 1) / static_cast<double>(c.warmup_steps);
  }
  const double span = static_cast<double>(std::max<Index>(1, c.total_steps - c.warmup_steps));
  const double progress = std::min(1.0, static_cast<double>(step - c.warmup_steps) / span);
  return 0.5 * c.lr * (1.0 + std::cos(M_PI * progress));
}

template <typename T>
AdamW<T>::AdamW(std::vector<NamedTensor<T>> params, const TrainConfig& config)
    : params_(std::move(params)), config_(config) {
  for (const auto& p : params_) {
    m_.push_back(Vec<T>::Zero(p.tensor.size()));
    v_.push_back(Vec<T>::Zero(p.tensor.size()));
    decay_.push_back(decays(p.name, p.tensor.shape()));
  }
}

template <typename T>
void AdamW<T>::step(double lr) {
  ++t_;
  const T b1 = static_cast<T>(config_.beta1), b2 = static_cast<T>(config_.beta2);
  const T bc1 = static_cast<T>(1.0 - std::pow(config_.beta1, static_cast<double>(t_)));
  const T bc2 = static_cast<T>(1.0 - std::pow(config_.beta2, static_cast<double>(t_)));
  const T step_size = static_cast<T>(lr);
  const T shrink = static_cast<T>(1.0 - lr * config_.weight_decay);
  const T eps = static_cast<T>(config_.adam_eps);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i].tensor;
    if (!p.has_grad()) continue;
    const Vec<T>& g = p.grad();
    m_[i] = b1 * m_[i] + (T(1) - b1) * g;
    v_[i] = b2 * v_[i] + (T(1) - b2) * g.square();
    auto& w = p.mutable_values();
    if (decay_[i]) w *= shrink;
    w -= step_size * ((m_[i] / bc1) / ((v_[i] / bc2).sqrt() + eps));
  }
}

template <typename T>
void AdamW<T>::save_state(TensorArchive& archive) const {
  archive.add_text("optim.step", std::to_string(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& shape = params_[i].tensor.shape();
    archive.add_f32("optim.m." + params_[i].name, shape, m_[i].template cast<float>());
    archive.add_f32("optim.v." + params_[i].name, shape, v_[i].template cast<float>());
  }
}

template <typename T>
void AdamW<T>::load_state(const TensorArchive& archive) {
  const auto step = archive.text("optim.step");
  long long t = 0;
  const auto [ptr, ec] = std::from_chars(step.data(), step.data() + step.size(), t);
  if (ec != std::errc() || ptr != step.data() + step.size() || t < 0) {
    throw FormatError("checkpoint: bad optim.step '" + step + "'");
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto m = archive.f32("optim.m." + params_[i].name);
    const auto v = archive.f32("optim.v." + params_[i].name);
    if (m.size() != m_[i].size() || v.size() != v_[i].size()) {
      throw FormatError("checkpoint: optimizer state size mismatch for " + params_[i].name);
    }
    m_[i] = m.template cast<T>();
    v_[i] = v.template cast<T>();
  }
  t_ = static_cast<Index>(t);
}

template <typename T>
double global_grad_norm(const std::vector<NamedTensor<T>>& params) {
  double sq = 0;
  for (const auto& p : params) {
    if (p.tensor.has_grad()) sq += p.tensor.grad().template cast<double>().square().sum();
  }
  return std::sqrt(sq);
}

template <typename T>
double clip_grad_norm(std::vector<NamedTensor<T>>& params, double max_norm) {
  const double norm = global_grad_norm(params);
  if (std::isfinite(norm) && norm > max_norm) {
    const T factor = static_cast<T>(max_norm / (norm + 1e-6));
    for (auto& p : params) {
      if (p.tensor.has_grad()) p.tensor.handle()->grad *= factor;
    }
  }
  return norm;
}

template <typename T>
StepResult train_step(AudioMamba<T>& model, const Batch& batch, AdamW<T>& optimizer,
                      const TrainConfig& config, double lr, std::mt19937_64* rng) {
  auto& tape = Tape<T>::current();
  tape.reset();
  model.zero_grad();
  const Index b = static_cast<Index>(batch.mels.size());
  if (b == 0) throw ShapeError("train_step: empty batch");
  if (batch.targets.rows() != b || batch.targets.cols() != model.config().n_classes) {
    throw ShapeError("train_step: targets must be [" + std::to_string(b) + " x " +
                     std::to_string(model.config().n_classes) + "]");
  }
  auto describe_rows = [&] {
    std::string rows;
    for (std::size_t i = 0; i < batch.indices.size(); ++i) {
      rows += (i ? "," : "") + std::to_string(batch.indices[i]);
    }
    return rows;
  };

  ForwardOptions options;
  options.rng = rng;
  std::vector<Tensor<T>> logits;
  logits.reserve(b);
  for (Index i = 0; i < b; ++i) {
    MelSpectrogram mel{batch.mels[i]};
    logits.push_back(model.forward(mel_to_grid<T>(mel, model.config()), options));
  }
  const RowMat<T> target_values = batch.targets.template cast<T>();
  Tensor<T> targets = Tensor<T>::from_matrix(target_values);
  auto loss = bce_with_logits(stack(logits), targets);

  StepResult r;
  r.lr = lr;
  r.loss = static_cast<double>(loss.item());
  if (!std::isfinite(r.loss)) {
    tape.reset();
    model.zero_grad();
    throw NonFiniteLoss("non-finite loss in batch of dataset rows [" + describe_rows() + "]");
  }
  backward(loss);
  auto params = model.parameters();
  r.grad_norm = clip_grad_norm(params, config.grad_clip);
  if (!std::isfinite(r.grad_norm)) {
    tape.reset();
    model.zero_grad();
    throw NonFiniteLoss("non-finite gradient in batch of dataset rows [" + describe_rows() + "]");
  }
  optimizer.step(lr);
  model.zero_grad();
  tape.reset();
  return r;
}

std::string format_log_line(const StepResult& r) {
  char buf[128];
  std::snprintf(buf, sizeof(buf), "%lld,%.6f,%.6f,%.6e", static_cast<long long>(r.step), r.loss,
                r.grad_norm, r.lr);
  return buf;
}

template <typename T>
Trainer<T>::Trainer(const RunConfig& config)
    : config_(config),
      model_(config.model, config.train.seed),
      optimizer_(model_.parameters(), config.train) {
  config_.validate();
}

template <typename T>
std::mt19937_64 Trainer<T>::stream(Index step, std::uint64_t purpose) const {
  const auto seed = config_.train.seed;
  const auto s = static_cast<std::uint64_t>(step);
  std::seed_seq seq{lo32(seed), hi32(seed), lo32(s), hi32(s), lo32(purpose)};
  return std::mt19937_64(seq);
}

template <typename T>
std::vector<Index> Trainer<T>::batch_indices(Index step, Index dataset_size) const {
  const Index bsz = config_.train.batch_size;
  const Index per_epoch = dataset_size / bsz;
  if (per_epoch == 0) {
    throw DataError("dataset has " + std::to_string(dataset_size) +
                    " usable rows, fewer than batch_size " + std::to_string(bsz));
  }
  const Index epoch = step / per_epoch;
  std::vector<Index> order(dataset_size);
  std::iota(order.begin(), order.end(), Index{0});
  auto rng = stream(epoch, 0);
  std::shuffle(order.begin(), order.end(), rng);
  const Index offset = (step % per_epoch) * bsz;
  return {order.begin() + offset, order.begin() + offset + bsz};
}

template <typename T>
Batch Trainer<T>::make_batch(const std::vector<Example>& data, Index step) const {
  Batch batch;
  batch.indices = batch_indices(step, static_cast<Index>(data.size()));
  const Index n_classes = config_.model.n_classes;
  batch.targets.resize(static_cast<Index>(batch.indices.size()), n_classes);
  for (std::size_t i = 0; i < batch.indices.size(); ++i) {
    const auto& ex = data[batch.indices[i]];
    if (ex.target.size() != n_classes) throw ShapeError("example target width != n_classes");
    batch.mels.push_back(ex.mel);
    batch.targets.row(static_cast<Index>(i)) = ex.target.matrix().transpose();
  }
  auto rng = stream(step, 1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  if (batch.mels.size() >= 2 && u(rng) < config_.train.cutmix_prob) {
    batch = cutmix(batch, config_.train.cutmix_alpha, rng).batch;
  }
  return batch;
}

template <typename T>
StepResult Trainer<T>::step(const std::vector<Example>& data) {
  const auto batch = make_batch(data, step_);
  auto rng = stream(step_, 2);
  auto r = train_step(model_, batch, optimizer_, config_.train, learning_rate(config_.train, step_),
                      &rng);
  r.step = step_++;
  return r;
}

template <typename T>
TensorArchive Trainer<T>::state_archive() {
  auto archive = model_archive(model_, config_);
  optimizer_.save_state(archive);
  archive.add_text(kTrainStateEntry, "step=" + std::to_string(step_) + "\n");
  return archive;
}

template <typename T>
void Trainer<T>::save(const std::filesystem::path& path) {
  state_archive().save(path);
}

template <typename T>
void Trainer<T>::resume(const std::filesystem::path& path) {
  const auto archive = TensorArchive::load(path);
  load_parameters(model_, archive, LoadMode::kStrict);
  optimizer_.load_state(archive);
  const auto state = archive.text(kTrainStateEntry);
  const auto [key, value] = split_setting(trim(state));
  long long step = -1;
  std::from_chars(value.data(), value.data() + value.size(), step);
  if (key != "step" || step < 0) throw FormatError("checkpoint: bad training state '" + state + "'");
  step_ = static_cast<Index>(step);
}

// ---- evaluation -------------------------------------------------------------

EvalMode parse_eval_mode(const std::string& s) {
  if (s == "multilabel") return EvalMode::kMultilabel;
  if (s == "singlelabel") return EvalMode::kSinglelabel;
  throw ConfigError("unknown eval mode '" + s + "' (expected multilabel or singlelabel)");
}

template <typename T>
ScoreMatrix predict(const AudioMamba<T>& model, const std::vector<Example>& data) {
  const Index n = static_cast<Index>(data.size());
  ScoreMatrix out(n, model.config().n_classes);
  parallel_for(n, [&](Index i) {
    NoGradGuard guard;
    MelSpectrogram mel{data[i].mel};
    const auto logits = model.classify(mel);
    out.row(i) = logits.values().template cast<double>().matrix().transpose();
  });
  return out;
}

EvalReport evaluate_logits(const ScoreMatrix& logits, const std::vector<Example>& data, EvalMode mode) {
  const Index n = logits.rows(), c = logits.cols();
  if (static_cast<Index>(data.size()) != n) throw ShapeError("evaluate: row count mismatch");
  if (mode == EvalMode::kMultilabel) {
    LabelMatrix labels = LabelMatrix::Zero(n, c);
    for (Index i = 0; i < n; ++i) {
      for (int l : data[i].labels) labels(i, l) = 1;
    }
    ScoreMatrix scores = (1.0 / (1.0 + (-logits.array()).exp())).matrix();
    return multilabel_report(scores, labels);
  }
  std::vector<int> truth(n);
  for (Index i = 0; i < n; ++i) {
    if (data[i].labels.size() != 1) {
      throw DataError("singlelabel evaluation: example " + std::to_string(i) + " has " +
                      std::to_string(data[i].labels.size()) + " labels");
    }
    truth[i] = data[i].labels.front();
  }
  // Softmax probabilities: argmax is unchanged and per-class rankings are
  // comparable across examples.
  ScoreMatrix probs(n, c);
  for (Index i = 0; i < n; ++i) {
    const auto row = logits.row(i).array();
    const auto e = (row - row.maxCoeff()).exp();
    probs.row(i) = (e / e.sum()).matrix();
  }
  return singlelabel_report(probs, truth);
}

template <typename T>
EvalReport evaluate(const AudioMamba<T>& model, const std::vector<Example>& data, EvalMode mode) {
  return evaluate_logits(predict(model, data), data, mode);
}

#define AMBA_INSTANTIATE(T)                                                                       \
  template class AdamW<T>;                                                                        \
  template class Trainer<T>;                                                                      \
  template double global_grad_norm(const std::vector<NamedTensor<T>>&);                           \
  template double clip_grad_norm(std::vector<NamedTensor<T>>&, double);                           \
  template StepResult train_step(AudioMamba<T>&, const Batch&, AdamW<T>&, const TrainConfig&,     \
                                 double, std::mt19937_64*);                                       \
  template ScoreMatrix predict(const AudioMamba<T>&, const std::vector<Example>&);                \
  template EvalReport evaluate(const AudioMamba<T>&, const std::vector<Example>&, EvalMode);

AMBA_INSTANTIATE(float)
AMBA_INSTANTIATE(double)

#undef AMBA_INSTANTIATE

}  // namespace amba
