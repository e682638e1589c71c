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
#include <string>
#include <vector>

#include "amba/selective_scan.hpp"

// Forward-only timing of the chunked scan against naive self-attention at
// the same channel width.

namespace amba {

struct BenchOptions {
  Index channels = 64;
  Index state_size = 16;
  Index chunk = kDefaultScanChunk;
  int repeats = 7;  // best-of, after one warmup run
  std::uint64_t seed = 0;
};

struct BenchRow {
  Index length = 0;
  double scan_seconds = 0;
  double attention_seconds = 0;
};

double time_scan(Index length, const BenchOptions& options = {});
/// softmax(Q K^T / sqrt(D)) V with Q, K, V = X W_q, X W_k, X W_v.
double time_attention(Index length, const BenchOptions& options = {});

/// Lengths must be strictly ascending.
std::vector<BenchRow> run_bench(const std::vector<Index>& lengths, const BenchOptions& options = {});

/// Header `L,scan_seconds,attention_seconds` and one row per length.
std::string bench_csv(const std::vector<BenchRow>& rows);

}  // namespace amba
