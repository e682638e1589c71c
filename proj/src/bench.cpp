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

#include "amba/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <memory>
#include <random>

#include "amba/errors.hpp"

namespace amba {
namespace {

RowMat<float> random_mat(Index r, Index c, std::mt19937_64& rng, float lo, float hi) {
  std::uniform_real_distribution<float> u(lo, hi);
  RowMat<float> m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

double seconds(const std::function<void()>& run) {
  const auto t0 = std::chrono::steady_clock::now();
  run();
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Keeps results observable so the optimiser cannot drop the work.
volatile float g_sink = 0;

std::function<void()> scan_workload(Index length, const BenchOptions& o) {
  std::mt19937_64 rng(o.seed);
  const Index d = o.channels, n = o.state_size;
  auto in = std::make_shared<ScanInput<float>>(ScanInput<float>{
      random_mat(length, d, rng, -1, 1), random_mat(length, d, rng, 0.001f, 0.1f),
      random_mat(length, n, rng, -1, 1), random_mat(length, n, rng, -1, 1)});
  auto decay = std::make_shared<RowMat<float>>(-random_mat(d, n, rng, 0.5f, 2.0f));
  auto skip = std::make_shared<Vec<float>>(Vec<float>::Ones(d));
  const Index chunk = o.chunk;
  return [=] { g_sink = g_sink + scan_chunked(*decay, *skip, *in, chunk)(0, 0); };
}

std::function<void()> attention_workload(Index length, const BenchOptions& o) {
  std::mt19937_64 rng(o.seed);
  const Index d = o.channels;
  const float w = 1.0f / std::sqrt(static_cast<float>(d));
  auto x = std::make_shared<RowMat<float>>(random_mat(length, d, rng, -1, 1));
  auto wq = std::make_shared<RowMat<float>>(random_mat(d, d, rng, -w, w));
  auto wk = std::make_shared<RowMat<float>>(random_mat(d, d, rng, -w, w));
  auto wv = std::make_shared<RowMat<float>>(random_mat(d, d, rng, -w, w));
  // Query rows go through one preallocated score tile; the arithmetic is
  // still the full L x L product.
  const Index tile = std::min<Index>(256, length);
  return [=] {
    const RowMat<float> q = *x * *wq, kt = (*x * *wk).transpose(), v = *x * *wv;
    RowMat<float> scores(tile, length);
    RowMat<float> out(length, d);
    for (Index r0 = 0; r0 < length; r0 += tile) {
      const Index rows = std::min(tile, length - r0);
      auto s = scores.topRows(rows);
      s.noalias() = q.middleRows(r0, rows) * kt;
      s *= w;
      for (Index r = 0; r < rows; ++r) {
        auto row = s.row(r).array();
        row = (row - row.maxCoeff()).exp();
        row /= row.sum();
      }
      out.middleRows(r0, rows).noalias() = s * v;
    }
    g_sink = g_sink + out(0, 0);
  };
}

double best_of(const std::function<void()>& run, int repeats) {
  run();
  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i < std::max(1, repeats); ++i) best = std::min(best, seconds(run));
  return best;
}

}  // namespace

double time_scan(Index length, const BenchOptions& o) {
  return best_of(scan_workload(length, o), o.repeats);
}

double time_attention(Index length, const BenchOptions& o) {
  return best_of(attention_workload(length, o), o.repeats);
}

std::vector<BenchRow> run_bench(const std::vector<Index>& lengths, const BenchOptions& options) {
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    if (lengths[i] < 1) throw ConfigError("bench: lengths must be positive");
    if (i > 0 && lengths[i] <= lengths[i - 1]) {
      throw ConfigError("bench: lengths must be strictly ascending");
    }
  }
  std::vector<BenchRow> rows;
  std::vector<std::function<void()>> scans, attns;
  for (Index l : lengths) {
    rows.push_back({l, std::numeric_limits<double>::infinity(),
                    std::numeric_limits<double>::infinity()});
    scans.push_back(scan_workload(l, options));
    attns.push_back(attention_workload(l, options));
    scans.back()();
    attns.back()();
  }
  // Round-robin over lengths so slow drift in machine load hits every
  // length alike; keep the best time of each.
  for (int rep = 0; rep < std::max(1, options.repeats); ++rep) {
    for (std::size_t i = 0; i < rows.size(); ++i) {
      rows[i].scan_seconds = std::min(rows[i].scan_seconds, seconds(scans[i]));
      rows[i].attention_seconds = std::min(rows[i].attention_seconds, seconds(attns[i]));
    }
  }
  return rows;
}

std::string bench_csv(const std::vector<BenchRow>& rows) {
  std::string out = "L,scan_seconds,attention_seconds\n";
  char buf[96];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%lld,%.6e,%.6e\n", static_cast<long long>(r.length),
                  r.scan_seconds, r.attention_seconds);
    out += buf;
  }
  return out;
}

}  // namespace amba
