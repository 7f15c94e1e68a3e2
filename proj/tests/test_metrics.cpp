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
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "k2s/error.hpp"
#include "k2s/metrics.hpp"

namespace k2s::metrics {
namespace {

BoundingBox random_box(std::mt19937_64& rng, double extent = 200.0) {
  std::uniform_real_distribution<double> pos(0.0, extent), side(5.0, extent / 2);
  const double x = pos(rng), y = pos(rng);
  return {x, y, x + side(rng), y + side(rng)};
}

// Brute-force AP. Predictions are sorted by descending score, each one takes
// the highest-IoU unclaimed gt of its own case at or above the threshold,
// then the interpolated PR curve is sampled or integrated.
double oracle_ap(const std::vector<GroundingCase>& cases, double thr, bool coco) {
  struct Item {
    double score;
    std::size_t c, p;
  };
  std::vector<Item> items;
  std::size_t n_gt = 0;
  for (std::size_t c = 0; c < cases.size(); ++c) {
    n_gt += cases[c].gt.size();
    for (std::size_t p = 0; p < cases[c].preds.size(); ++p) {
      items.push_back({cases[c].preds[p].score, c, p});
    }
  }
  std::stable_sort(items.begin(), items.end(),
                   [](const Item& a, const Item& b) { return a.score > b.score; });
  std::vector<std::vector<bool>> taken(cases.size());
  for (std::size_t c = 0; c < cases.size(); ++c) taken[c].resize(cases[c].gt.size());
  std::vector<double> rec, prec;
  int tp = 0;
  for (std::size_t k = 0; k < items.size(); ++k) {
    const auto& it = items[k];
    int pick = -1;
    double best = 0.0;
    for (std::size_t g = 0; g < cases[it.c].gt.size(); ++g) {
      const double v = iou(cases[it.c].preds[it.p].box, cases[it.c].gt[g]);
      if (!taken[it.c][g] && v >= thr && v > best) {
        best = v;
        pick = static_cast<int>(g);
      }
    }
    if (pick >= 0) {
      taken[it.c][pick] = true;
      ++tp;
    }
    rec.push_back(static_cast<double>(tp) / n_gt);
    prec.push_back(static_cast<double>(tp) / (k + 1));
  }
  auto envelope = [&](double r) {
    double m = 0.0;
    for (std::size_t k = 0; k < rec.size(); ++k) {
      if (rec[k] >= r - 1e-12) m = std::max(m, prec[k]);
    }
    return m;
  };
  double sum = 0.0;
  if (coco) {
    for (int i = 0; i <= 100; ++i) sum += envelope(i / 100.0);
    return 100.0 * sum / 101.0;
  }
  double prev = 0.0;
  for (double r : rec) {
    if (r > prev) {
      sum += (r - prev) * envelope(r);
      prev = r;
    }
  }
  return 100.0 * sum;
}

// Maximum total IoU over partial injections, by DP over gt subsets.
double oracle_best_total(const std::vector<BoundingBox>& preds,
                         const std::vector<BoundingBox>& gts) {
  const std::size_t full = std::size_t{1} << gts.size();
  std::vector<double> best(full, -1.0);
  best[0] = 0.0;
  for (const auto& p : preds) {
    std::vector<double> next = best;
    for (std::size_t mask = 0; mask < full; ++mask) {
      if (best[mask] < 0) continue;
      for (std::size_t g = 0; g < gts.size(); ++g) {
        if (mask & (std::size_t{1} << g)) continue;
        const double v = iou(p, gts[g]);
        if (v <= 0.0) continue;
        const std::size_t m2 = mask | (std::size_t{1} << g);
        next[m2] = std::max(next[m2], best[mask] + v);
      }
    }
    best = std::move(next);
  }
  return *std::max_element(best.begin(), best.end());
}

GroundingCase make_case(std::string image, std::string cls, std::vector<BoundingBox> gt,
                        std::vector<BoundingBox> preds) {
  GroundingCase c;
  c.image_id = std::move(image);
  c.class_name = cls;
  c.gt = std::move(gt);
  c.dims = {1000, 1000};
  int rank = 0;
  for (const auto& b : preds) c.preds.push_back({cls, b, 1.0, rank++});
  return c;
}

std::vector<GroundingCase> random_cases(std::mt19937_64& rng, int n_cases,
                                        const std::vector<std::string>& classes,
                                        bool distinct_scores) {
  std::uniform_int_distribution<int> count(0, 4);
  std::uniform_real_distribution<double> score(0.0, 1.0), jitter(-15.0, 15.0);
  std::vector<GroundingCase> cases;
  for (int i = 0; i < n_cases; ++i) {
    GroundingCase c;
    c.image_id = "img" + std::to_string(i);
    c.class_name = classes[i % classes.size()];
    c.dims = {1000, 1000};
    const int ng = count(rng), np = count(rng);
    for (int g = 0; g < ng; ++g) c.gt.push_back(random_box(rng));
    for (int p = 0; p < np; ++p) {
      BoundingBox b = random_box(rng);
      if (!c.gt.empty() && p < ng) {
        const auto& g = c.gt[p];
        b = {g.x1 + jitter(rng), g.y1 + jitter(rng), g.x2 + jitter(rng),
             g.y2 + jitter(rng)};
        if (b.x2 <= b.x1) std::swap(b.x1, b.x2);
        if (b.y2 <= b.y1) std::swap(b.y1, b.y2);
      }
      c.preds.push_back({c.class_name, b, distinct_scores ? score(rng) : 1.0, p});
    }
    cases.push_back(std::move(c));
  }
  return cases;
}

TEST(AveragePrecision, MatchesBruteForceOracle) {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 200; ++trial) {
    const auto cases = random_cases(rng, 1 + trial % 12, {"A"}, true);
    std::size_t n_gt = 0;
    for (const auto& c : cases) n_gt += c.gt.size();
    for (double thr : {0.3, 0.5, 0.75}) {
      const auto ap = average_precision(cases, thr, ApInterp::k101Point);
      const auto all = average_precision(cases, thr, ApInterp::kAllPoints);
      if (n_gt == 0) {
        ASSERT_FALSE(ap.has_value());
        continue;
      }
      ASSERT_TRUE(ap.has_value());
      ASSERT_NEAR(*ap, oracle_ap(cases, thr, true), 1e-9) << "trial " << trial;
      ASSERT_NEAR(*all, oracle_ap(cases, thr, false), 1e-9) << "trial " << trial;
    }
  }
}

TEST(AveragePrecision, HandComputedCurves) {
  // Ranked TP, FP, TP against two gts.
  auto c = make_case("i", "A", {{0, 0, 10, 10}, {100, 100, 110, 110}},
                     {{0, 0, 10, 10}, {500, 500, 510, 510}, {100, 100, 110, 110}});
  std::vector<GroundingCase> v{c};
  EXPECT_NEAR(*average_precision(v, 0.5, ApInterp::kAllPoints),
              100.0 * (0.5 + 0.5 * 2.0 / 3.0), 1e-9);
  EXPECT_NEAR(*average_precision(v, 0.5, ApInterp::k101Point),
              100.0 * (51.0 + 50.0 * 2.0 / 3.0) / 101.0, 1e-9);
}

TEST(AveragePrecision, SingleBoxAtIouSixTenths) {
  // 10x10 gt, prediction shifted to give IoU 0.6 exactly: overlap 75, union 125.
  const BoundingBox gt{0, 0, 10, 10};
  const BoundingBox pred{2.5, 0, 12.5, 10};
  ASSERT_NEAR(iou(pred, gt), 0.6, 1e-12);
  const std::vector<GroundingCase> v{make_case("i", "A", {gt}, {pred})};
  const MapFamily m = map_family(v);
  EXPECT_DOUBLE_EQ(m.map30, 100.0);
  EXPECT_DOUBLE_EQ(m.map50, 100.0);
  EXPECT_DOUBLE_EQ(m.map75, 0.0);
  // AP at 0.50, 0.55, 0.60 hits; 0.65..0.95 misses.
  EXPECT_NEAR(m.map50_95, 30.0, 1e-9);
}

TEST(AveragePrecision, TwoClassesAverageToFifty) {
  const std::vector<GroundingCase> v{
      make_case("i", "A", {{0, 0, 10, 10}}, {{0, 0, 10, 10}}),
      make_case("i", "B", {{0, 0, 10, 10}}, {{50, 50, 60, 60}})};
  const MapFamily m = map_family(v);
  EXPECT_DOUBLE_EQ(m.map50, 50.0);
  EXPECT_DOUBLE_EQ(m.map30, 50.0);
}

TEST(AveragePrecision, NoPredictionsScoreZero) {
  const std::vector<GroundingCase> v{make_case("i", "A", {{0, 0, 10, 10}}, {})};
  EXPECT_DOUBLE_EQ(*average_precision(v, 0.5), 0.0);
}

TEST(AveragePrecision, TrailingFalsePositiveNeverRaisesAp) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    auto cases = random_cases(rng, 6, {"A"}, true);
    std::size_t n_gt = 0;
    for (const auto& c : cases) n_gt += c.gt.size();
    if (n_gt == 0) continue;
    const double before = *average_precision(cases, 0.5);
    cases[0].preds.push_back({"A", {900, 900, 950, 950}, -1.0, 99});
    ASSERT_LE(*average_precision(cases, 0.5), before + 1e-12);
  }
}

TEST(Matching, ExhaustiveAndHungarianAgreeWithSubsetDp) {
  std::mt19937_64 rng(21);
  std::uniform_int_distribution<int> size(0, 10);
  for (int trial = 0; trial < 600; ++trial) {
    const int np = trial < 300 ? size(rng) % 6 : size(rng);
    const int ng = trial < 300 ? size(rng) % 6 : size(rng);
    std::vector<BoundingBox> preds, gts;
    for (int i = 0; i < np; ++i) preds.push_back(random_box(rng, 120.0));
    for (int i = 0; i < ng; ++i) gts.push_back(random_box(rng, 120.0));
    const MatchResult m = match_boxes(preds, gts);
    double total = 0.0;
    std::vector<int> seen_gt;
    for (const auto& p : m.pairs) {
      ASSERT_GT(p.iou, 0.0);
      ASSERT_DOUBLE_EQ(p.iou, iou(preds[p.pred], gts[p.gt]));
      total += p.iou;
      seen_gt.push_back(p.gt);
    }
    std::sort(seen_gt.begin(), seen_gt.end());
    ASSERT_EQ(std::adjacent_find(seen_gt.begin(), seen_gt.end()), seen_gt.end());
    ASSERT_EQ(m.pairs.size() + m.unmatched_preds.size(), preds.size());
    ASSERT_EQ(m.pairs.size() + m.unmatched_gts.size(), gts.size());
    ASSERT_NEAR(total, oracle_best_total(preds, gts), 1e-9)
        << np << "x" << ng << " trial " << trial;
  }
}

TEST(Matching, ZeroOverlapStaysUnmatched) {
  const std::vector<BoundingBox> preds{{0, 0, 1, 1}}, gts{{5, 5, 6, 6}};
  const MatchResult m = match_boxes(preds, gts);
  EXPECT_TRUE(m.pairs.empty());
  EXPECT_EQ(m.unmatched_preds, std::vector<int>{0});
  EXPECT_EQ(m.unmatched_gts, std::vector<int>{0});
}

TEST(Matching, PrefersGlobalOptimumOverGreedy) {
  // Greedy on pred 0 would take gt 0 and leave pred 1 with nothing.
  const std::vector<BoundingBox> gts{{0, 0, 10, 10}, {8, 0, 18, 10}};
  const std::vector<BoundingBox> preds{{4, 0, 14, 10}, {0, 0, 9, 10}};
  const MatchResult m = match_boxes(preds, gts);
  ASSERT_EQ(m.pairs.size(), 2u);
  EXPECT_EQ(m.pairs[0].gt, 1);
  EXPECT_EQ(m.pairs[1].gt, 0);
}

TEST(Rodeo, PerfectPredictionsScoreHundred) {
  const std::vector<GroundingCase> v{
      make_case("i", "Edema", {{0, 0, 10, 10}, {20, 20, 40, 50}},
                {{20, 20, 40, 50}, {0, 0, 10, 10}})};
  const RodeoScores r = rodeo(v);
  EXPECT_DOUBLE_EQ(r.loc, 100.0);
  EXPECT_DOUBLE_EQ(r.shape, 100.0);
  EXPECT_DOUBLE_EQ(r.cls, 100.0);
  EXPECT_DOUBLE_EQ(r.total, 100.0);
}

TEST(Rodeo, EmptyInputScoresZero) {
  const RodeoScores r = rodeo(std::vector<GroundingCase>{});
  EXPECT_EQ(r.loc, 0.0);
  EXPECT_EQ(r.total, 0.0);
  const std::vector<GroundingCase> v{make_case("i", "A", {}, {})};
  EXPECT_EQ(rodeo(v).total, 0.0);
}

TEST(Rodeo, HalfDiagonalShiftGivesMixedScores) {
  // gt diagonal 50; center moved by 25 keeps the shape exact.
  const std::vector<GroundingCase> v{
      make_case("i", "A", {{0, 0, 30, 40}}, {{25, 0, 55, 40}})};
  const RodeoScores r = rodeo(v);
  EXPECT_NEAR(r.loc, 50.0, 1e-9);
  EXPECT_NEAR(r.shape, 100.0, 1e-9);
  EXPECT_NEAR(r.cls, 100.0, 1e-9);
  EXPECT_NEAR(r.total, 75.0, 1e-9);
}

TEST(Rodeo, WrongLabelZeroesClassification) {
  auto c = make_case("i", "Edema", {{0, 0, 10, 10}}, {{0, 0, 10, 10}});
  c.preds[0].label = "Nodule";
  const RodeoScores r = rodeo(std::vector<GroundingCase>{c});
  EXPECT_EQ(r.cls, 0.0);
  EXPECT_EQ(r.total, 0.0);
  c.preds[0].label = " edema ";
  EXPECT_DOUBLE_EQ(rodeo(std::vector<GroundingCase>{c}).cls, 100.0);
}

TEST(Rodeo, UnmatchedBoxesDiluteScores) {
  const std::vector<GroundingCase> v{
      make_case("i", "A", {{0, 0, 10, 10}}, {{0, 0, 10, 10}, {50, 50, 60, 60}})};
  const RodeoScores r = rodeo(v);
  EXPECT_NEAR(r.loc, 100.0 * 2.0 / 3.0, 1e-9);
}

TEST(Rodeo, HarmonicMeanBounds) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.0, 100.0);
  for (int i = 0; i < 1000; ++i) {
    const double a = u(rng), b = u(rng), c = u(rng);
    const double h = harmonic_mean3(a, b, c);
    ASSERT_LE(h, (a + b + c) / 3.0 + 1e-9);
    ASSERT_LE(h, std::cbrt(a * b * c) + 1e-9);
    ASSERT_GE(h, std::min({a, b, c}) - 1e-9);
    ASSERT_NEAR(h, 3.0 / (1.0 / a + 1.0 / b + 1.0 / c), 1e-9);
  }
  EXPECT_EQ(harmonic_mean3(0.0, 50.0, 50.0), 0.0);
  EXPECT_DOUBLE_EQ(harmonic_mean3(40.0, 40.0, 40.0), 40.0);
}

TEST(Rodeo, ScorePairComponents) {
  const PairScore s = score_pair({"a", {10, 0, 20, 10}, 1.0, 0}, {0, 0, 10, 10}, "A");
  EXPECT_DOUBLE_EQ(s.iou, 0.0);
  EXPECT_NEAR(s.loc, 1.0 - 10.0 / std::sqrt(200.0), 1e-12);
  EXPECT_DOUBLE_EQ(s.shape, 1.0);
  EXPECT_DOUBLE_EQ(s.cls, 1.0);
}

TEST(Evaluate, ParallelEqualsReference) {
  std::mt19937_64 rng(55);
  for (int trial = 0; trial < 20; ++trial) {
    const auto cases = random_cases(rng, 120, {"A", "B", "C", "D"}, trial % 2 == 0);
    const auto a = report_to_json(evaluate(cases));
    const auto b = report_to_json(reference::evaluate(cases));
    ASSERT_EQ(a, b) << "trial " << trial;
  }
}

TEST(Evaluate, ScaleInvariant) {
  std::mt19937_64 rng(56);
  auto cases = random_cases(rng, 80, {"A", "B"}, true);
  const EvalReport before = evaluate(cases);
  for (auto& c : cases) {
    for (auto& g : c.gt) g = scale(g, 2.5);
    for (auto& p : c.preds) p.box = scale(p.box, 2.5);
  }
  const EvalReport after = evaluate(cases);
  for (std::size_t t = 0; t < before.overall.map.size(); ++t) {
    EXPECT_NEAR(before.overall.map[t], after.overall.map[t], 1e-9);
  }
  EXPECT_NEAR(before.overall.rodeo.total, after.overall.rodeo.total, 1e-9);
  EXPECT_NEAR(before.overall.rodeo.loc, after.overall.rodeo.loc, 1e-9);
}

TEST(Evaluate, TotalsEqualRecomputationFromDiagnostics) {
  std::mt19937_64 rng(57);
  const auto cases = random_cases(rng, 150, {"A", "B", "C"}, false);
  const EvalReport r = evaluate(cases);
  double loc = 0, shape = 0, cls = 0;
  std::size_t n = 0;
  for (const auto& d : r.diagnostics) {
    double l = 0, s = 0, c = 0;
    for (const auto& p : d.pairs) {
      l += p.loc;
      s += p.shape;
      c += p.cls;
    }
    EXPECT_NEAR(l, d.sum_loc, 1e-12);
    loc += l;
    shape += s;
    cls += c;
    n += d.n_gt + d.n_pred;
  }
  ASSERT_GT(n, 0u);
  EXPECT_NEAR(r.overall.rodeo.loc, 200.0 * loc / n, 1e-9);
  EXPECT_NEAR(r.overall.rodeo.shape, 200.0 * shape / n, 1e-9);
  EXPECT_NEAR(r.overall.rodeo.cls, 200.0 * cls / n, 1e-9);
  double map50 = 0.0;
  for (const auto& row : r.overall.per_class) map50 += row.ap[1];
  EXPECT_NEAR(r.overall.map[1], map50 / r.overall.per_class.size(), 1e-9);
}

TEST(Evaluate, ClassWithoutGtExcludedFromMap) {
  const std::vector<GroundingCase> v{
      make_case("i", "A", {{0, 0, 10, 10}}, {{0, 0, 10, 10}}),
      make_case("j", "B", {}, {{0, 0, 10, 10}})};
  const EvalReport r = evaluate(v);
  ASSERT_EQ(r.overall.per_class.size(), 1u);
  EXPECT_EQ(r.overall.classes_without_gt, std::vector<std::string>{"B"});
  EXPECT_DOUBLE_EQ(r.overall.map[1], 100.0);
  EXPECT_LT(r.overall.rodeo.loc, 100.0);  // the gt-free prediction still counts
}

TEST(Evaluate, GroupedByClassMap) {
  const std::vector<GroundingCase> v{
      make_case("i", "Edema", {{0, 0, 10, 10}}, {{0, 0, 10, 10}}),
      make_case("j", "Hernia", {{0, 0, 10, 10}}, {{50, 50, 60, 60}})};
  const auto map = dataset::ClassMap::from_json(
      json{{"known", {{"Edema", "Edema"}}}, {"unknown", {"Hernia"}}});
  const EvalReport r = evaluate_grouped(v, {}, map);
  ASSERT_EQ(r.groups.size(), 2u);
  EXPECT_DOUBLE_EQ(r.groups.at("known").map[1], 100.0);
  EXPECT_DOUBLE_EQ(r.groups.at("unknown").map[1], 0.0);
  EXPECT_DOUBLE_EQ(r.overall.map[1], 50.0);
  EXPECT_EQ(r.groups.at("known").n_cases, 1u);
}

TEST(Evaluate, OptionValidation) {
  EXPECT_THROW(parse_thresholds("0.5,abc"), Error);
  EXPECT_THROW(parse_thresholds("1.5"), Error);
  EXPECT_THROW(parse_thresholds(""), Error);
  EXPECT_EQ(parse_thresholds("0.3, 0.5,0.75"), (std::vector<double>{0.3, 0.5, 0.75}));
  EXPECT_EQ(parse_ap_interp("all"), ApInterp::kAllPoints);
  EXPECT_THROW(parse_ap_interp("11"), Error);
  EXPECT_EQ(ap_key(0.5), "AP50");
  EXPECT_EQ(ap_key(0.3), "AP30");
}

TEST(Evaluate, TextAndJsonRenderings) {
  const std::vector<GroundingCase> v{
      make_case("i", "A", {{0, 0, 10, 10}}, {{0, 0, 10, 10}})};
  const EvalReport r = evaluate(v);
  const json j = report_to_json(r);
  EXPECT_DOUBLE_EQ(j["aggregate"]["mAP50"].get<double>(), 100.0);
  EXPECT_NE(render_text(r).find("R_total 100.00"), std::string::npos);
}

}  // namespace
}  // namespace k2s::metrics
