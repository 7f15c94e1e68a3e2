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
#pragma once

// Grounding evaluation: one-to-one box matching, per-class average precision
// over IoU thresholds, the mAP family, and the RoDeO localization / shape /
// classification scores.
//
// Conventions:
//  * Grounding outputs carry no confidence. Every prediction scores 1.0 and
//    is ranked by emission order, so the PR curve follows emission order.
//    Pooled predictions are ordered by (score desc, rank asc, image_id asc).
//  * AP uses 101-point interpolation by default; recall thresholds are
//    compared in exact integer arithmetic (tp * 100 >= i * n_gt).
//  * Predicted labels do not gate AP: every box in a case answers the
//    queried class. Labels feed only the RoDeO classification component.
//  * All reported values are percentages in [0, 100].

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "k2s/dataset.hpp"
#include "k2s/geometry.hpp"
#include "k2s/io.hpp"

namespace k2s::metrics {

struct PredBox {
  std::string label;
  BoundingBox box;
  double score = 1.0;
  int rank = 0;
};

/// Ground truth and predictions of one image for one queried class.
struct GroundingCase {
  std::string image_id;
  std::string class_name;
  std::vector<BoundingBox> gt;
  std::vector<PredBox> preds;
  ImageDims dims;
  bool parse_failed = false;
};

struct MatchPair {
  int pred = 0;
  int gt = 0;
  double iou = 0.0;
};

struct MatchResult {
  std::vector<MatchPair> pairs;  // sorted by pred index
  std::vector<int> unmatched_preds;
  std::vector<int> unmatched_gts;
};

/// Largest side count handled by exhaustive search; above it the Hungarian
/// method is used.
inline constexpr std::size_t kExhaustiveLimit = 8;

/// One-to-one assignment maximizing total IoU over pairs with IoU > 0.
/// Exhaustive search breaks ties toward the lexicographically smallest
/// assignment in (pred rank, gt index) order, with "unmatched" ordered last.
MatchResult match_boxes(const GroundingCase& c);
MatchResult match_boxes(std::span<const BoundingBox> preds,
                        std::span<const BoundingBox> gts);

enum class ApInterp { k101Point, kAllPoints };

ApInterp parse_ap_interp(std::string_view name);
std::string_view ap_interp_name(ApInterp interp);

/// AP (percent) of one class at one IoU threshold. Predictions pooled over
/// `cases`; a prediction is a true positive when the unconsumed gt of its
/// case with the highest IoU reaches the threshold. nullopt when the cases
/// carry no gt box.
std::optional<double> average_precision(std::span<const GroundingCase> cases,
                                         double iou_threshold,
                                         ApInterp interp = ApInterp::k101Point);

/// Thresholds 0.50, 0.55, ..., 0.95.
std::vector<double> coco_thresholds();

struct MapFamily {
  double map30 = 0.0;
  double map50 = 0.0;
  double map75 = 0.0;
  double map50_95 = 0.0;
};

/// Per-class AP averaged over classes with at least one gt box. Throws
/// Error(kValidation) when no class has gt.
MapFamily map_family(std::span<const GroundingCase> cases,
                     ApInterp interp = ApInterp::k101Point);

struct RodeoScores {
  double loc = 0.0;
  double shape = 0.0;
  double cls = 0.0;
  double total = 0.0;
};

struct PairScore {
  int pred = 0;
  int gt = 0;
  double iou = 0.0;
  double loc = 0.0;    // max(0, 1 - center distance / gt diagonal)
  double shape = 0.0;  // IoU after moving the prediction onto the gt center
  double cls = 0.0;    // 1 when the label names the queried class
};

PairScore score_pair(const PredBox& pred, const BoundingBox& gt,
                     const std::string& queried_class);

/// 3 / (1/a + 1/b + 1/c); zero when any component is zero.
double harmonic_mean3(double a, double b, double c);

/// Each component: 100 * 2 * sum(pair scores) / (n_pred + n_gt).
RodeoScores rodeo_from_sums(double sum_loc, double sum_shape, double sum_cls,
                            std::size_t n_pred, std::size_t n_gt);

RodeoScores rodeo(std::span<const GroundingCase> cases);

/// Per-case record; enough to recompute every report total.
struct CaseDiagnostic {
  std::string image_id;
  std::string class_name;
  ImageDims dims;
  std::size_t n_gt = 0;
  std::size_t n_pred = 0;
  std::vector<PairScore> pairs;
  std::vector<int> unmatched_preds;
  std::vector<int> unmatched_gts;
  double sum_loc = 0.0;
  double sum_shape = 0.0;
  double sum_cls = 0.0;
  bool parse_failed = false;
};

CaseDiagnostic diagnose_case(const GroundingCase& c);

struct EvalOptions {
  std::vector<double> iou_thresholds = {0.30, 0.50, 0.75};
  ApInterp interp = ApInterp::k101Point;
};

std::vector<double> parse_thresholds(std::string_view csv);

struct ClassRow {
  std::string class_name;
  std::size_t n_cases = 0;
  std::size_t n_gt = 0;
  std::size_t n_pred = 0;
  std::vector<double> ap;  // aligned with EvalOptions::iou_thresholds
  double ap50_95 = 0.0;
};

struct GroupReport {
  std::vector<ClassRow> per_class;         // classes with gt, sorted by name
  std::vector<double> map;                 // aligned with thresholds
  double map50_95 = 0.0;
  RodeoScores rodeo;
  std::vector<std::string> classes_without_gt;
  std::size_t n_cases = 0;
};

struct EvalReport {
  EvalOptions options;
  GroupReport overall;
  std::map<std::string, GroupReport> groups;  // e.g. known / unknown
  std::vector<CaseDiagnostic> diagnostics;
};

/// Full evaluation, parallel across cases and across (class, threshold).
EvalReport evaluate(std::span<const GroundingCase> cases,
                    const EvalOptions& options = {});

/// Same, with cases partitioned into known / unknown groups by `map`.
EvalReport evaluate_grouped(std::span<const GroundingCase> cases,
                            const EvalOptions& options,
                            const dataset::ClassMap& map);

namespace reference {
/// Serial evaluation with no IoU caching. Baseline for the parallel path.
EvalReport evaluate(std::span<const GroundingCase> cases,
                    const EvalOptions& options = {});
}  // namespace reference

/// "AP30", "AP50", ... from a threshold.
std::string ap_key(double threshold);

json report_to_json(const EvalReport& report);
/// Aligned-text tables.
std::string render_text(const EvalReport& report);

json case_diagnostic_to_json(const CaseDiagnostic& d);

}  // namespace k2s::metrics
