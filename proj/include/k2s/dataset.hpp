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

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "k2s/geometry.hpp"
#include "k2s/io.hpp"

namespace k2s::dataset {

inline constexpr double kDefaultWbfIou = 0.4;

/// One rater's box for one finding on one image.
struct AnnotationRecord {
  std::string image_id;
  std::string class_name;
  BoundingBox box;
  std::string rater_id;
  ImageDims dims;
};

struct RowDiagnostic {
  std::size_t line = 0;  // 1-based line (CSV) or element index + 1 (JSON)
  std::string message;
};

struct LoadResult {
  std::vector<AnnotationRecord> records;
  std::vector<RowDiagnostic> errors;
  std::size_t no_finding_rows = 0;  // "No finding" rows carry no box
};

enum class AnnotationFormat { kCsv, kJson };

AnnotationFormat parse_annotation_format(std::string_view name);

/// Columns: image_id, class_name, x_min, y_min, x_max, y_max, width, height,
/// rater_id or rad_id (optional). Bad rows land in `errors`, the rest still load.
/// Unreadable file, missing header columns or malformed JSON throw.
LoadResult load_annotations(const fs::path& path, AnnotationFormat format);
LoadResult parse_annotations_csv(std::string_view text);
LoadResult parse_annotations_json(const json& doc);

struct WeightedBox {
  BoundingBox box;
  double weight = 1.0;
};

/// Weighted box fusion over boxes of one image and one class.
///
/// Inputs are put in canonical order (weight descending, then coordinates
/// lexicographically ascending). Each box joins the running fused box with
/// the highest IoU >= iou_threshold, or opens a new cluster. A fused box is
/// the weight-averaged corner set of its members and carries the summed
/// weight. Passes repeat over the fused set until no cluster merges, which
/// makes the operation idempotent. Output is in canonical order.
std::vector<WeightedBox> weighted_box_fusion(std::vector<WeightedBox> boxes,
                                             double iou_threshold);

/// One image-abnormality pair after fusion.
struct GroundingInstance {
  std::string image_id;
  std::string class_name;
  std::vector<BoundingBox> fused_boxes;
  ImageDims dims;
};

/// Groups records by (image_id, class_name), fuses each group with unit rater
/// weights. Output sorted by (image_id, class_name). Groups are fused in
/// parallel.
std::vector<GroundingInstance> fuse_records(
    const std::vector<AnnotationRecord>& records, double iou_threshold);

namespace reference {
/// Serial twin of dataset::fuse_records, kept as the test baseline.
std::vector<GroundingInstance> fuse_records(
    const std::vector<AnnotationRecord>& records, double iou_threshold);
}  // namespace reference

struct DatasetSplit {
  std::string name;  // train | test | zeroshot | ood
  std::vector<GroundingInstance> instances;
};

bool is_split_name(std::string_view name);

/// Source class -> target class name (known) or nullopt (unknown).
struct ClassMap {
  std::map<std::string, std::optional<std::string>> entries;

  std::size_t known_count() const;
  std::size_t unknown_count() const;
  bool is_known(const std::string& target_or_source) const;

  /// {"known": {"Src": "Target", ...}, "unknown": ["Src", ...]}
  static ClassMap from_json(const json& doc);
  json to_json() const;
};

struct ClassSplit {
  DatasetSplit known;    // name "zeroshot", classes renamed to targets
  DatasetSplit unknown;  // name "ood"
};

/// Throws Error(kValidation) listing every class absent from the map.
ClassSplit apply_class_map(const std::vector<GroundingInstance>& instances,
                           const ClassMap& map);

std::map<std::string, std::size_t> class_distribution(
    const std::vector<GroundingInstance>& instances);

/// {split_name: [instance, ...]}
using Manifest = std::map<std::string, std::vector<GroundingInstance>>;

json instance_to_json(const GroundingInstance& inst);
GroundingInstance instance_from_json(const json& j);
json manifest_to_json(const Manifest& manifest);
Manifest manifest_from_json(const json& doc);
Manifest load_manifest(const fs::path& path);

/// No image_id may appear in both "train" and "test".
void validate_manifest(const Manifest& manifest);

}  // namespace k2s::dataset
