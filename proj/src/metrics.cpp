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
#include "k2s/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "k2s/error.hpp"

namespace k2s::metrics {

namespace {

// Row-major |preds| x |gts| IoU table.
struct IouTable {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  double at(std::size_t p, std::size_t g) const { return values[p * cols + g]; }
};

IouTable iou_table(std::span<const BoundingBox> preds,
                   std::span<const BoundingBox> gts) {
  IouTable t{preds.size(), gts.size(), {}};
  t.values.resize(t.rows * t.cols);
  for (std::size_t p = 0; p < t.rows; ++p) {
    for (std::size_t g = 0; g < t.cols; ++g) {
      t.values[p * t.cols + g] = iou(preds[p], gts[g]);
    }
  }
  return t;
}

std::vector<BoundingBox> pred_boxes(const GroundingCase& c) {
  std::vector<BoundingBox> out;
  out.reserve(c.preds.size());
  for (const auto& p : c.preds) out.push_back(p.box);
  return out;
}

// Depth-first search over partial injections preds -> gts. Visits
// assignments in lexicographic order (gt 0..G-1, then "none") and keeps the
// first one with strictly greater total, so exact ties resolve to the
// lexicographically smallest assignment.
class ExhaustiveMatcher {
 public:
  explicit ExhaustiveMatcher(const IouTable& t)
      : t_(t),
        current_(t.rows, -1),
        best_(t.rows, -1),
        used_(t.cols, 0),
        suffix_bound_(t.rows + 1, 0.0) {
    for (std::size_t p = t.rows; p-- > 0;) {
      double row_max = 0.0;
      for (std::size_t g = 0; g < t.cols; ++g) row_max = std::max(row_max, t.at(p, g));
      suffix_bound_[p] = suffix_bound_[p + 1] + row_max;
    }
  }

  std::vector<int> solve() {
    search(0, 0.0);
    return best_;
  }

 private:
  void search(std::size_t p, double total) {
    if (p == t_.rows) {
      if (total > best_total_) {
        best_total_ = total;
        best_ = current_;
      }
      return;
    }
    if (total + suffix_bound_[p] + 1e-9 <= best_total_) return;
    for (std::size_t g = 0; g < t_.cols; ++g) {
      const double v = t_.at(p, g);
      if (used_[g] || !(v > 0.0)) continue;
      used_[g] = 1;
      current_[p] = static_cast<int>(g);
      search(p + 1, total + v);
      used_[g] = 0;
    }
    current_[p] = -1;
    search(p + 1, total);
  }

  const IouTable& t_;
  std::vector<int> current_;
  std::vector<int> best_;
  std::vector<char> used_;
  std::vector<double> suffix_bound_;
  double best_total_ = -1.0;
};

// Min-cost assignment (potentials method) on an n x m cost matrix, n <= m.
// Returns the column chosen for each row.
std::vector<int> hungarian(const std::vector<std::vector<double>>& cost) {
  const std::size_t n = cost.size();
  const std::size_t m = n ? cost[0].size() : 0;
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> row_to_col(n, -1);
  for (std::size_t j = 1; j <= m; ++j) {
    if (p[j] != 0) row_to_col[p[j] - 1] = static_cast<int>(j - 1);
  }
  return row_to_col;
}

std::vector<int> hungarian_assignment(const IouTable& t) {
  const bool transpose = t.rows > t.cols;
  const std::size_t n = transpose ? t.cols : t.rows;
  const std::size_t m = transpose ? t.rows : t.cols;
  std::vector<std::vector<double>> cost(n, std::vector<double>(m));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      cost[i][j] = -(transpose ? t.at(j, i) : t.at(i, j));
    }
  }
  const auto rc = hungarian(cost);
  std::vector<int> assign(t.rows, -1);
  for (std::size_t i = 0; i < n; ++i) {
    if (rc[i] < 0) continue;
    const std::size_t p = transpose ? static_cast<std::size_t>(rc[i]) : i;
    const std::size_t g = transpose ? i : static_cast<std::size_t>(rc[i]);
    if (t.at(p, g) > 0.0) assign[p] = static_cast<int>(g);
  }
  return assign;
}

MatchResult match_from_table(const IouTable& t) {
  std::vector<int> assign;
  if (t.rows == 0 || t.cols == 0) {
    assign.assign(t.rows, -1);
  } else if (t.rows <= kExhaustiveLimit && t.cols <= kExhaustiveLimit) {
    assign = ExhaustiveMatcher(t).solve();
  } else {
    assign = hungarian_assignment(t);
  }
  MatchResult r;
  std::vector<char> gt_used(t.cols, 0);
  for (std::size_t p = 0; p < t.rows; ++p) {
    if (assign[p] >= 0) {
      r.pairs.push_back({static_cast<int>(p), assign[p], t.at(p, assign[p])});
      gt_used[assign[p]] = 1;
    } else {
      r.unmatched_preds.push_back(static_cast<int>(p));
    }
  }
  for (std::size_t g = 0; g < t.cols; ++g) {
    if (!gt_used[g]) r.unmatched_gts.push_back(static_cast<int>(g));
  }
  return r;
}

struct PooledPred {
  std::size_t slot = 0;  // position within the class's case list
  std::size_t pred = 0;
  double score = 1.0;
  int rank = 0;
  const std::string* image_id = nullptr;
};

bool pooled_before(const PooledPred& a, const PooledPred& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.rank != b.rank) return a.rank < b.rank;
  if (*a.image_id != *b.image_id) return *a.image_id < *b.image_id;
  if (a.slot != b.slot) return a.slot < b.slot;
  return a.pred < b.pred;
}

double ap_from_flags(const std::vector<char>& tp, std::size_t n_gt,
                     ApInterp interp) {
  const std::size_t n = tp.size();
  if (n == 0 || n_gt == 0) return 0.0;
  std::vector<std::size_t> tp_cum(n);
  std::vector<double> precision(n);
  std::size_t acc = 0;
  for (std::size_t k = 0; k < n; ++k) {
    acc += tp[k] ? 1 : 0;
    tp_cum[k] = acc;
    precision[k] = static_cast<double>(acc) / static_cast<double>(k + 1);
  }
  for (std::size_t k = n - 1; k-- > 0;) {
    precision[k] = std::max(precision[k], precision[k + 1]);
  }
  double sum = 0.0;
  if (interp == ApInterp::k101Point) {
    std::size_t k = 0;
    for (std::size_t i = 0; i <= 100; ++i) {
      while (k < n && tp_cum[k] * 100 < i * n_gt) ++k;
      if (k == n) break;
      sum += precision[k];
    }
    return 100.0 * sum / 101.0;
  }
  std::size_t prev = 0;
  for (std::size_t k = 0; k < n; ++k) {
    if (tp_cum[k] > prev) {
      sum += static_cast<double>(tp_cum[k] - prev) / static_cast<double>(n_gt) *
             precision[k];
      prev = tp_cum[k];
    }
  }
  return 100.0 * sum;
}

// Greedy TP assignment over pooled predictions of one class. `iou_of(slot,
// pred, gt)` supplies overlaps.
template <typename IouFn>
std::optional<double> class_ap(const std::vector<const GroundingCase*>& cases,
                               double threshold, ApInterp interp,
                               IouFn&& iou_of) {
  std::size_t n_gt = 0;
  std::vector<PooledPred> pooled;
  for (std::size_t s = 0; s < cases.size(); ++s) {
    n_gt += cases[s]->gt.size();
    for (std::size_t p = 0; p < cases[s]->preds.size(); ++p) {
      const auto& pb = cases[s]->preds[p];
      pooled.push_back({s, p, pb.score, pb.rank, &cases[s]->image_id});
    }
  }
  if (n_gt == 0) return std::nullopt;
  std::sort(pooled.begin(), pooled.end(), pooled_before);
  std::vector<std::vector<char>> consumed(cases.size());
  for (std::size_t s = 0; s < cases.size(); ++s) {
    consumed[s].assign(cases[s]->gt.size(), 0);
  }
  std::vector<char> tp(pooled.size(), 0);
  for (std::size_t k = 0; k < pooled.size(); ++k) {
    const auto& pp = pooled[k];
    double best = -1.0;
    std::ptrdiff_t best_g = -1;
    for (std::size_t g = 0; g < consumed[pp.slot].size(); ++g) {
      if (consumed[pp.slot][g]) continue;
      const double v = iou_of(pp.slot, pp.pred, g);
      if (v >= threshold && v > best) {
        best = v;
        best_g = static_cast<std::ptrdiff_t>(g);
      }
    }
    if (best_g >= 0) {
      consumed[pp.slot][static_cast<std::size_t>(best_g)] = 1;
      tp[k] = 1;
    }
  }
  return ap_from_flags(tp, n_gt, interp);
}

bool same_class(std::string_view a, std::string_view b) {
  return to_lower(trim(a)) == to_lower(trim(b));
}

std::vector<double> merged_thresholds(const EvalOptions& options) {
  std::vector<double> all = options.iou_thresholds;
  for (double t : coco_thresholds()) all.push_back(t);
  std::sort(all.begin(), all.end());
  all.erase(std::unique(all.begin(), all.end(),
                        [](double a, double b) { return std::abs(a - b) < 1e-12; }),
            all.end());
  return all;
}

std::size_t threshold_index(const std::vector<double>& all, double t) {
  for (std::size_t i = 0; i < all.size(); ++i) {
    if (std::abs(all[i] - t) < 1e-12) return i;
  }
  return all.size();
}

void check_options(const EvalOptions& options) {
  if (options.iou_thresholds.empty()) {
    fail(ErrorKind::kUsage, "at least one IoU threshold is required");
  }
  for (double t : options.iou_thresholds) {
    if (!(t > 0.0 && t <= 1.0)) {
      fail(ErrorKind::kUsage, "IoU thresholds must lie in (0, 1]");
    }
  }
}

// Assembles a GroupReport from per-class AP values (indexed [class][thr]).
GroupReport summarize(
    const std::vector<std::string>& class_names,
    const std::vector<std::vector<const GroundingCase*>>& class_cases,
    const std::vector<std::vector<std::optional<double>>>& ap,
    const std::vector<double>& all_thresholds, const EvalOptions& options,
    std::span<const CaseDiagnostic> diagnostics) {
  GroupReport g;
  g.n_cases = diagnostics.size();
  g.map.assign(options.iou_thresholds.size(), 0.0);
  const auto coco = coco_thresholds();
  for (std::size_t c = 0; c < class_names.size(); ++c) {
    ClassRow row;
    row.class_name = class_names[c];
    row.n_cases = class_cases[c].size();
    for (const auto* gc : class_cases[c]) {
      row.n_gt += gc->gt.size();
      row.n_pred += gc->preds.size();
    }
    if (row.n_gt == 0) {
      g.classes_without_gt.push_back(row.class_name);
      continue;
    }
    for (double t : options.iou_thresholds) {
      row.ap.push_back(*ap[c][threshold_index(all_thresholds, t)]);
    }
    double sum = 0.0;
    for (double t : coco) sum += *ap[c][threshold_index(all_thresholds, t)];
    row.ap50_95 = sum / static_cast<double>(coco.size());
    g.per_class.push_back(std::move(row));
  }
  if (!g.per_class.empty()) {
    const auto n = static_cast<double>(g.per_class.size());
    for (std::size_t t = 0; t < g.map.size(); ++t) {
      double sum = 0.0;
      for (const auto& row : g.per_class) sum += row.ap[t];
      g.map[t] = sum / n;
    }
    double sum = 0.0;
    for (const auto& row : g.per_class) sum += row.ap50_95;
    g.map50_95 = sum / n;
  }
  double sl = 0.0, ss = 0.0, sc = 0.0;
  std::size_t np = 0, ng = 0;
  for (const auto& d : diagnostics) {
    sl += d.sum_loc;
    ss += d.sum_shape;
    sc += d.sum_cls;
    np += d.n_pred;
    ng += d.n_gt;
  }
  g.rodeo = rodeo_from_sums(sl, ss, sc, np, ng);
  return g;
}

void group_by_class(std::span<const GroundingCase> cases,
                    std::vector<std::string>& names,
                    std::vector<std::vector<const GroundingCase*>>& members) {
  std::map<std::string, std::vector<const GroundingCase*>> by_class;
  for (const auto& c : cases) by_class[c.class_name].push_back(&c);
  for (auto& [name, list] : by_class) {
    names.push_back(name);
    members.push_back(std::move(list));
  }
}

GroupReport evaluate_group_parallel(std::span<const GroundingCase> cases,
                                    std::span<const CaseDiagnostic> diagnostics,
                                    const std::vector<IouTable>& tables,
                                    const EvalOptions& options) {
  std::vector<std::string> names;
  std::vector<std::vector<const GroundingCase*>> members;
  group_by_class(cases, names, members);
  const auto all = merged_thresholds(options);
  std::vector<std::vector<std::optional<double>>> ap(
      names.size(), std::vector<std::optional<double>>(all.size()));
  // Map case pointers back to their IoU tables.
  const GroundingCase* base = cases.data();
  const auto items = static_cast<std::ptrdiff_t>(names.size() * all.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t item = 0; item < items; ++item) {
    const auto c = static_cast<std::size_t>(item) / all.size();
    const auto t = static_cast<std::size_t>(item) % all.size();
    const auto& list = members[c];
    ap[c][t] = class_ap(list, all[t], options.interp,
                        [&](std::size_t slot, std::size_t p, std::size_t g) {
                          return tables[static_cast<std::size_t>(list[slot] - base)]
                              .at(p, g);
                        });
  }
  return summarize(names, members, ap, all, options, diagnostics);
}

json group_to_json(const GroupReport& g, const EvalOptions& options) {
  json per_class = json::object();
  for (const auto& row : g.per_class) {
    json r = json::object();
    for (std::size_t t = 0; t < options.iou_thresholds.size(); ++t) {
      r[ap_key(options.iou_thresholds[t])] = row.ap[t];
    }
    r["AP50_95"] = row.ap50_95;
    r["n_cases"] = row.n_cases;
    r["n_gt"] = row.n_gt;
    r["n_pred"] = row.n_pred;
    per_class[row.class_name] = std::move(r);
  }
  json aggregate = json::object();
  for (std::size_t t = 0; t < options.iou_thresholds.size(); ++t) {
    aggregate["m" + ap_key(options.iou_thresholds[t])] = g.map[t];
  }
  aggregate["mAP50_95"] = g.map50_95;
  return {{"per_class", per_class},
          {"aggregate", aggregate},
          {"rodeo",
           {{"R_loc", g.rodeo.loc},
            {"R_shape", g.rodeo.shape},
            {"R_cls", g.rodeo.cls},
            {"R_total", g.rodeo.total}}},
          {"classes_without_gt", g.classes_without_gt},
          {"n_cases", g.n_cases}};
}

std::string fixed2(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << v;
  return os.str();
}

void render_group(std::ostringstream& os, const GroupReport& g,
                  const EvalOptions& options) {
  std::size_t name_w = 5;
  for (const auto& row : g.per_class) name_w = std::max(name_w, row.class_name.size());
  auto col = [&](const std::string& s, std::size_t w) {
    os << std::setw(static_cast<int>(w)) << s;
  };
  os << std::left << std::setw(static_cast<int>(name_w)) << "class" << std::right;
  col("cases", 7);
  col("gt", 6);
  col("pred", 6);
  for (double t : options.iou_thresholds) col(ap_key(t), 9);
  col("AP50:95", 9);
  os << "\n";
  for (const auto& row : g.per_class) {
    os << std::left << std::setw(static_cast<int>(name_w)) << row.class_name
       << std::right;
    col(std::to_string(row.n_cases), 7);
    col(std::to_string(row.n_gt), 6);
    col(std::to_string(row.n_pred), 6);
    for (double v : row.ap) col(fixed2(v), 9);
    col(fixed2(row.ap50_95), 9);
    os << "\n";
  }
  os << std::left << std::setw(static_cast<int>(name_w + 19)) << "mAP" << std::right;
  for (double v : g.map) col(fixed2(v), 9);
  col(fixed2(g.map50_95), 9);
  os << "\n";
  os << "RoDeO  R_loc " << fixed2(g.rodeo.loc) << "  R_shape "
     << fixed2(g.rodeo.shape) << "  R_cls " << fixed2(g.rodeo.cls)
     << "  R_total " << fixed2(g.rodeo.total) << "\n";
  if (!g.classes_without_gt.empty()) {
    os << "classes without ground truth (excluded from mAP):";
    for (const auto& c : g.classes_without_gt) os << " " << c;
    os << "\n";
  }
}

}  // namespace

MatchResult match_boxes(std::span<const BoundingBox> preds,
                        std::span<const BoundingBox> gts) {
  return match_from_table(iou_table(preds, gts));
}

MatchResult match_boxes(const GroundingCase& c) {
  const auto preds = pred_boxes(c);
  return match_boxes(preds, c.gt);
}

ApInterp parse_ap_interp(std::string_view name) {
  const std::string n = to_lower(name);
  if (n == "101" || n == "101-point" || n == "coco") return ApInterp::k101Point;
  if (n == "all" || n == "all-points" || n == "voc") return ApInterp::kAllPoints;
  fail(ErrorKind::kUsage, "unknown --ap-interp '" + std::string(name) +
                              "' (expected 101 or all)");
}

std::string_view ap_interp_name(ApInterp interp) {
  return interp == ApInterp::k101Point ? "101-point" : "all-points";
}

std::optional<double> average_precision(std::span<const GroundingCase> cases,
                                         double iou_threshold,
                                         ApInterp interp) {
  std::vector<const GroundingCase*> list;
  for (const auto& c : cases) list.push_back(&c);
  return class_ap(list, iou_threshold, interp,
                  [&](std::size_t slot, std::size_t p, std::size_t g) {
                    return iou(list[slot]->preds[p].box, list[slot]->gt[g]);
                  });
}

std::vector<double> coco_thresholds() {
  std::vector<double> t;
  for (int k = 50; k <= 95; k += 5) t.push_back(k / 100.0);
  return t;
}

MapFamily map_family(std::span<const GroundingCase> cases, ApInterp interp) {
  EvalOptions options;
  options.iou_thresholds = {0.30, 0.50, 0.75};
  options.interp = interp;
  const EvalReport r = evaluate(cases, options);
  if (r.overall.per_class.empty()) {
    fail(ErrorKind::kValidation, "no class has ground-truth boxes");
  }
  return {r.overall.map[0], r.overall.map[1], r.overall.map[2],
          r.overall.map50_95};
}

PairScore score_pair(const PredBox& pred, const BoundingBox& gt,
                     const std::string& queried_class) {
  PairScore s;
  s.iou = iou(pred.box, gt);
  const double diag = gt.diagonal();
  s.loc = diag > 0.0 ? std::max(0.0, 1.0 - center_distance(pred.box, gt) / diag)
                     : 0.0;
  const BoundingBox centered =
      translate(pred.box, gt.center_x() - pred.box.center_x(),
                gt.center_y() - pred.box.center_y());
  s.shape = iou(centered, gt);
  s.cls = same_class(pred.label, queried_class) ? 1.0 : 0.0;
  return s;
}

double harmonic_mean3(double a, double b, double c) {
  if (!(a > 0.0) || !(b > 0.0) || !(c > 0.0)) return 0.0;
  return 3.0 * a * b * c / (b * c + a * c + a * b);
}

RodeoScores rodeo_from_sums(double sum_loc, double sum_shape, double sum_cls,
                            std::size_t n_pred, std::size_t n_gt) {
  RodeoScores r;
  const auto denom = static_cast<double>(n_pred + n_gt);
  if (denom == 0.0) return r;
  r.loc = 100.0 * 2.0 * sum_loc / denom;
  r.shape = 100.0 * 2.0 * sum_shape / denom;
  r.cls = 100.0 * 2.0 * sum_cls / denom;
  r.total = harmonic_mean3(r.loc, r.shape, r.cls);
  return r;
}

CaseDiagnostic diagnose_case(const GroundingCase& c) {
  CaseDiagnostic d;
  d.image_id = c.image_id;
  d.class_name = c.class_name;
  d.dims = c.dims;
  d.n_gt = c.gt.size();
  d.n_pred = c.preds.size();
  d.parse_failed = c.parse_failed;
  const MatchResult m = match_boxes(c);
  for (const auto& pair : m.pairs) {
    PairScore s = score_pair(c.preds[pair.pred], c.gt[pair.gt], c.class_name);
    s.pred = pair.pred;
    s.gt = pair.gt;
    d.sum_loc += s.loc;
    d.sum_shape += s.shape;
    d.sum_cls += s.cls;
    d.pairs.push_back(s);
  }
  d.unmatched_preds = m.unmatched_preds;
  d.unmatched_gts = m.unmatched_gts;
  return d;
}

RodeoScores rodeo(std::span<const GroundingCase> cases) {
  double sl = 0.0, ss = 0.0, sc = 0.0;
  std::size_t np = 0, ng = 0;
  for (const auto& c : cases) {
    const auto d = diagnose_case(c);
    sl += d.sum_loc;
    ss += d.sum_shape;
    sc += d.sum_cls;
    np += d.n_pred;
    ng += d.n_gt;
  }
  return rodeo_from_sums(sl, ss, sc, np, ng);
}

std::vector<double> parse_thresholds(std::string_view csv) {
  std::vector<double> out;
  std::string item;
  std::istringstream is{std::string(csv)};
  while (std::getline(is, item, ',')) {
    const std::string t = trim(item);
    if (t.empty()) continue;
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(t, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != t.size()) {
      fail(ErrorKind::kUsage, "bad IoU threshold '" + t + "'");
    }
    out.push_back(v);
  }
  EvalOptions probe;
  probe.iou_thresholds = out;
  check_options(probe);
  return out;
}

EvalReport evaluate(std::span<const GroundingCase> cases,
                    const EvalOptions& options) {
  check_options(options);
  EvalReport r;
  r.options = options;
  r.diagnostics.resize(cases.size());
  std::vector<IouTable> tables(cases.size());
  const auto n = static_cast<std::ptrdiff_t>(cases.size());
#pragma omp parallel for schedule(dynamic, 8)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto preds = pred_boxes(cases[i]);
    tables[i] = iou_table(preds, cases[i].gt);
    r.diagnostics[i] = diagnose_case(cases[i]);
  }
  r.overall = evaluate_group_parallel(cases, r.diagnostics, tables, options);
  return r;
}

EvalReport evaluate_grouped(std::span<const GroundingCase> cases,
                            const EvalOptions& options,
                            const dataset::ClassMap& map) {
  EvalReport r = evaluate(cases, options);
  std::vector<GroundingCase> known;
  std::vector<GroundingCase> unknown;
  for (const auto& c : cases) {
    (map.is_known(c.class_name) ? known : unknown).push_back(c);
  }
  r.groups["known"] = evaluate(known, options).overall;
  r.groups["unknown"] = evaluate(unknown, options).overall;
  return r;
}

namespace reference {

EvalReport evaluate(std::span<const GroundingCase> cases,
                    const EvalOptions& options) {
  check_options(options);
  EvalReport r;
  r.options = options;
  for (const auto& c : cases) r.diagnostics.push_back(diagnose_case(c));
  std::vector<std::string> names;
  std::vector<std::vector<const GroundingCase*>> members;
  group_by_class(cases, names, members);
  const auto all = merged_thresholds(options);
  std::vector<std::vector<std::optional<double>>> ap(names.size());
  for (std::size_t c = 0; c < names.size(); ++c) {
    std::vector<GroundingCase> own;
    for (const auto* gc : members[c]) own.push_back(*gc);
    for (double t : all) ap[c].push_back(average_precision(own, t, options.interp));
  }
  r.overall = summarize(names, members, ap, all, options, r.diagnostics);
  return r;
}

}  // namespace reference

std::string ap_key(double threshold) {
  return "AP" + std::to_string(static_cast<int>(std::lround(threshold * 100.0)));
}

json case_diagnostic_to_json(const CaseDiagnostic& d) {
  json pairs = json::array();
  for (const auto& p : d.pairs) {
    pairs.push_back({{"pred", p.pred},
                     {"gt", p.gt},
                     {"iou", p.iou},
                     {"loc", p.loc},
                     {"shape", p.shape},
                     {"cls", p.cls}});
  }
  return {{"image_id", d.image_id},
          {"class_name", d.class_name},
          {"width", d.dims.width},
          {"height", d.dims.height},
          {"n_gt", d.n_gt},
          {"n_pred", d.n_pred},
          {"pairs", pairs},
          {"unmatched_preds", d.unmatched_preds},
          {"unmatched_gts", d.unmatched_gts},
          {"sum_loc", d.sum_loc},
          {"sum_shape", d.sum_shape},
          {"sum_cls", d.sum_cls},
          {"parse_failed", d.parse_failed}};
}

json report_to_json(const EvalReport& report) {
  json j = group_to_json(report.overall, report.options);
  json diags = json::array();
  for (const auto& d : report.diagnostics) diags.push_back(case_diagnostic_to_json(d));
  j["diagnostics"] = std::move(diags);
  if (!report.groups.empty()) {
    json groups = json::object();
    for (const auto& [name, g] : report.groups) {
      groups[name] = group_to_json(g, report.options);
    }
    j["groups"] = std::move(groups);
  }
  std::size_t parse_failed = 0;
  for (const auto& d : report.diagnostics) parse_failed += d.parse_failed ? 1 : 0;
  j["metadata"] = {
      {"ap_interp", std::string(ap_interp_name(report.options.interp))},
      {"iou_thresholds", report.options.iou_thresholds},
      {"score_convention",
       "score-free outputs: score 1.0, ranked by emission order"},
      {"rodeo_convention",
       "optimal IoU matching per case; unmatched predictions and ground "
       "truths enter every component's denominator"},
      {"unparsable_outputs", parse_failed},
      {"unparsable_policy", "unparsable outputs contribute zero predictions"}};
  return j;
}

std::string render_text(const EvalReport& report) {
  std::ostringstream os;
  os << "AP interpolation: " << ap_interp_name(report.options.interp)
     << "   cases: " << report.overall.n_cases << "\n";
  render_group(os, report.overall, report.options);
  for (const auto& [name, g] : report.groups) {
    os << "\n[" << name << "]  cases: " << g.n_cases << "\n";
    render_group(os, g, report.options);
  }
  return os.str();
}

}  // namespace k2s::metrics
