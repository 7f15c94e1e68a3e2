// Copyright 2026 The K2S Toolkit Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Serial reference vs OpenMP kernels: full evaluation and rater-box fusion.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "k2s/dataset.hpp"
#include "k2s/metrics.hpp"

namespace {

using k2s::BoundingBox;

BoundingBox jittered(std::mt19937_64& rng, const BoundingBox& b, double amount) {
  std::uniform_real_distribution<double> j(-amount, amount);
  BoundingBox out{b.x1 + j(rng), b.y1 + j(rng), b.x2 + j(rng), b.y2 + j(rng)};
  if (out.x1 > out.x2) std::swap(out.x1, out.x2);
  if (out.y1 > out.y2) std::swap(out.y1, out.y2);
  out.x1 = std::max(0.0, out.x1);
  out.y1 = std::max(0.0, out.y1);
  out.x2 = std::min(1000.0, std::max(out.x1 + 1.0, out.x2));
  out.y2 = std::min(1000.0, std::max(out.y1 + 1.0, out.y2));
  return out;
}

BoundingBox random_box(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> pos(0, 800), len(20, 200);
  const double x = pos(rng), y = pos(rng);
  return {x, y, x + len(rng), y + len(rng)};
}

std::vector<k2s::metrics::GroundingCase> make_cases(std::size_t n) {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> boxes(1, 6), cls(0, 21);
  std::vector<k2s::metrics::GroundingCase> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& c = out[i];
    c.image_id = "img_" + std::to_string(i);
    c.class_name = "class_" + std::to_string(cls(rng));
    c.dims = {1000, 1000};
    for (int k = boxes(rng); k > 0; --k) c.gt.push_back(random_box(rng));
    int rank = 0;
    for (const auto& g : c.gt) c.preds.push_back({c.class_name, jittered(rng, g, 30), 1.0, rank++});
    for (int k = boxes(rng) / 2; k > 0; --k) {
      c.preds.push_back({c.class_name, random_box(rng), 1.0, rank++});
    }
  }
  return out;
}

std::vector<k2s::dataset::AnnotationRecord> make_records(std::size_t images) {
  std::mt19937_64 rng(12);
  std::uniform_int_distribution<int> findings(1, 4), raters(1, 3), cls(0, 21);
  std::vector<k2s::dataset::AnnotationRecord> out;
  for (std::size_t i = 0; i < images; ++i) {
    const std::string id = "img_" + std::to_string(i);
    for (int f = findings(rng); f > 0; --f) {
      const std::string c = "class_" + std::to_string(cls(rng));
      const BoundingBox base = random_box(rng);
      for (int r = raters(rng); r > 0; --r) {
        out.push_back({id, c, jittered(rng, base, 8), "R" + std::to_string(r), {1000, 1000}});
      }
    }
  }
  return out;
}

void BM_EvaluateSerial(benchmark::State& state) {
  const auto cases = make_cases(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) {
    benchmark::DoNotOptimize(k2s::metrics::reference::evaluate(cases));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_EvaluateParallel(benchmark::State& state) {
  const auto cases = make_cases(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) {
    benchmark::DoNotOptimize(k2s::metrics::evaluate(cases));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_FuseSerial(benchmark::State& state) {
  const auto records = make_records(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) {
    benchmark::DoNotOptimize(k2s::dataset::reference::fuse_records(records, 0.4));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long>(records.size()));
}

void BM_FuseParallel(benchmark::State& state) {
  const auto records = make_records(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) {
    benchmark::DoNotOptimize(k2s::dataset::fuse_records(records, 0.4));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long>(records.size()));
}

BENCHMARK(BM_EvaluateSerial)->Arg(500)->Arg(2108)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_EvaluateParallel)->Arg(500)->Arg(2108)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_FuseSerial)->Arg(2000)->Arg(16000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_FuseParallel)->Arg(2000)->Arg(16000)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
