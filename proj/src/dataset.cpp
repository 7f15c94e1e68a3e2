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
#include "k2s/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <set>
#include <utility>

#include "k2s/error.hpp"

namespace k2s::dataset {

namespace {

constexpr const char* kRequiredColumns[] = {
    "image_id", "class_name", "x_min", "y_min",
    "x_max",    "y_max",      "width", "height"};

struct CsvRow {
  std::size_t line = 0;
  std::vector<std::string> fields;
};

// RFC 4180 style: quoted fields may hold commas, doubled quotes and newlines.
std::vector<CsvRow> split_csv(std::string_view text) {
  std::vector<CsvRow> rows;
  CsvRow row;
  std::string field;
  bool in_quotes = false;
  bool row_has_content = false;
  std::size_t line = 1;
  row.line = line;
  auto end_field = [&] {
    row.fields.push_back(std::move(field));
    field.clear();
  };
  auto end_row = [&] {
    end_field();
    if (row_has_content) rows.push_back(std::move(row));
    row = CsvRow{};
    row_has_content = false;
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        if (c == '\n') ++line;
        field.push_back(c);
      }
      continue;
    }
    switch (c) {
      case '"':
        in_quotes = true;
        row_has_content = true;
        break;
      case ',':
        end_field();
        row_has_content = true;
        break;
      case '\r':
        break;
      case '\n':
        end_row();
        ++line;
        row.line = line;
        break;
      default:
        field.push_back(c);
        if (!std::isspace(static_cast<unsigned char>(c))) row_has_content = true;
    }
  }
  if (in_quotes) {
    fail(ErrorKind::kValidation,
         "unterminated quoted field starting before line " +
             std::to_string(line));
  }
  end_row();
  return rows;
}

std::optional<double> parse_number(std::string_view s) {
  const std::string t = trim(s);
  if (t.empty()) return std::nullopt;
  double v = 0.0;
  const char* b = t.data();
  const char* e = t.data() + t.size();
  if (*b == '+') ++b;
  auto [ptr, ec] = std::from_chars(b, e, v);
  if (ec != std::errc() || ptr != e || !std::isfinite(v)) return std::nullopt;
  return v;
}

std::optional<double> number_field(const json& j) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) return parse_number(j.get<std::string>());
  return std::nullopt;
}

bool is_no_finding(std::string_view class_name) {
  return to_lower(trim(class_name)) == "no finding";
}

// Raw field access shared by the CSV and JSON readers.
struct RawRow {
  std::string image_id;
  std::string class_name;
  std::string rater_id;
  std::optional<double> x_min, y_min, x_max, y_max, width, height;
  bool coords_blank = false;
};

void accept_row(const RawRow& raw, std::size_t line, LoadResult& out) {
  auto reject = [&](const std::string& msg) {
    out.errors.push_back({line, msg});
  };
  if (is_no_finding(raw.class_name) && raw.coords_blank) {
    ++out.no_finding_rows;
    return;
  }
  if (trim(raw.image_id).empty()) return reject("empty image_id");
  if (trim(raw.class_name).empty()) return reject("empty class_name");
  const std::pair<const char*, const std::optional<double>*> numeric[] = {
      {"x_min", &raw.x_min}, {"y_min", &raw.y_min}, {"x_max", &raw.x_max},
      {"y_max", &raw.y_max}, {"width", &raw.width}, {"height", &raw.height}};
  for (const auto& [name, val] : numeric) {
    if (!val->has_value()) {
      return reject(std::string("non-numeric or missing ") + name);
    }
  }
  AnnotationRecord rec;
  rec.image_id = trim(raw.image_id);
  rec.class_name = trim(raw.class_name);
  rec.rater_id = trim(raw.rater_id);
  rec.box = {*raw.x_min, *raw.y_min, *raw.x_max, *raw.y_max};
  const double w = *raw.width;
  const double h = *raw.height;
  if (w != std::floor(w) || h != std::floor(h) || w < 1 || h < 1 ||
      w > 1e7 || h > 1e7) {
    return reject("width/height must be positive integers");
  }
  rec.dims = {static_cast<int>(w), static_cast<int>(h)};
  try {
    validate_within(rec.box, rec.dims);
  } catch (const Error& e) {
    return reject(e.what());
  }
  if (rec.box.degenerate()) return reject("zero-area box " + to_string(rec.box));
  out.records.push_back(std::move(rec));
}

std::pair<std::string, std::string> group_key(const AnnotationRecord& r) {
  return {r.image_id, r.class_name};
}

struct Group {
  std::string image_id;
  std::string class_name;
  ImageDims dims;
  std::vector<WeightedBox> boxes;
};

std::vector<Group> make_groups(const std::vector<AnnotationRecord>& records,
                               double iou_threshold) {
  if (!(iou_threshold > 0.0 && iou_threshold <= 1.0)) {
    fail(ErrorKind::kUsage, "WBF IoU threshold must be in (0, 1]");
  }
  std::map<std::pair<std::string, std::string>, std::size_t> index;
  std::map<std::string, ImageDims> image_dims;
  std::vector<Group> groups;
  for (const auto& r : records) {
    auto [dit, fresh] = image_dims.emplace(r.image_id, r.dims);
    if (!fresh && dit->second != r.dims) {
      fail(ErrorKind::kValidation,
           "image " + r.image_id + " recorded with inconsistent dims");
    }
    auto [it, inserted] = index.emplace(group_key(r), groups.size());
    if (inserted) groups.push_back({r.image_id, r.class_name, r.dims, {}});
    groups[it->second].boxes.push_back({r.box, 1.0});
  }
  std::sort(groups.begin(), groups.end(), [](const Group& a, const Group& b) {
    return std::tie(a.image_id, a.class_name) <
           std::tie(b.image_id, b.class_name);
  });
  return groups;
}

GroundingInstance fuse_group(const Group& g, double iou_threshold) {
  GroundingInstance inst{g.image_id, g.class_name, {}, g.dims};
  for (const auto& wb : weighted_box_fusion(g.boxes, iou_threshold)) {
    inst.fused_boxes.push_back(wb.box);
  }
  return inst;
}

bool canonical_less(const WeightedBox& a, const WeightedBox& b) {
  if (a.weight != b.weight) return a.weight > b.weight;
  return a.box.coords() < b.box.coords();
}

struct Cluster {
  double weight = 0.0;
  std::array<double, 4> weighted_sum{};
  std::size_t members = 0;
  BoundingBox fused;

  void add(const WeightedBox& wb) {
    const auto c = wb.box.coords();
    for (int i = 0; i < 4; ++i) weighted_sum[i] += wb.weight * c[i];
    weight += wb.weight;
    ++members;
    if (members == 1) {
      fused = wb.box;
    } else {
      fused = {weighted_sum[0] / weight, weighted_sum[1] / weight,
               weighted_sum[2] / weight, weighted_sum[3] / weight};
    }
  }
};

std::vector<WeightedBox> fusion_pass(const std::vector<WeightedBox>& sorted,
                                     double iou_threshold, bool& merged) {
  std::vector<Cluster> clusters;
  for (const auto& wb : sorted) {
    std::ptrdiff_t best = -1;
    double best_iou = -1.0;
    for (std::size_t c = 0; c < clusters.size(); ++c) {
      const double v = iou(clusters[c].fused, wb.box);
      if (v >= iou_threshold && v > best_iou) {
        best = static_cast<std::ptrdiff_t>(c);
        best_iou = v;
      }
    }
    if (best < 0) {
      clusters.emplace_back().add(wb);
    } else {
      clusters[static_cast<std::size_t>(best)].add(wb);
      merged = true;
    }
  }
  std::vector<WeightedBox> out;
  out.reserve(clusters.size());
  for (const auto& c : clusters) out.push_back({c.fused, c.weight});
  return out;
}

}  // namespace

AnnotationFormat parse_annotation_format(std::string_view name) {
  const std::string n = to_lower(name);
  if (n == "csv") return AnnotationFormat::kCsv;
  if (n == "json") return AnnotationFormat::kJson;
  fail(ErrorKind::kUsage, "unknown annotation format '" + std::string(name) +
                              "' (expected csv or json)");
}

LoadResult parse_annotations_csv(std::string_view text) {
  const auto rows = split_csv(text);
  if (rows.empty()) fail(ErrorKind::kValidation, "annotation CSV is empty");
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < rows[0].fields.size(); ++i) {
    col[to_lower(trim(rows[0].fields[i]))] = i;
  }
  std::vector<std::string> missing;
  for (const char* name : kRequiredColumns) {
    if (!col.count(name)) missing.emplace_back(name);
  }
  if (!missing.empty()) {
    std::string msg = "annotation CSV header lacks column(s):";
    for (const auto& m : missing) msg += " " + m;
    fail(ErrorKind::kValidation, msg);
  }
  std::optional<std::size_t> rater_col;
  if (col.count("rater_id")) {
    rater_col = col["rater_id"];
  } else if (col.count("rad_id")) {
    rater_col = col["rad_id"];  // public VinDr export spelling
  }
  LoadResult out;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.fields.size() != rows[0].fields.size()) {
      out.errors.push_back(
          {row.line, "expected " + std::to_string(rows[0].fields.size()) +
                         " fields, found " + std::to_string(row.fields.size())});
      continue;
    }
    auto field = [&](const char* name) -> const std::string& {
      return row.fields[col.at(name)];
    };
    RawRow raw;
    raw.image_id = field("image_id");
    raw.class_name = field("class_name");
    if (rater_col) raw.rater_id = row.fields[*rater_col];
    raw.x_min = parse_number(field("x_min"));
    raw.y_min = parse_number(field("y_min"));
    raw.x_max = parse_number(field("x_max"));
    raw.y_max = parse_number(field("y_max"));
    raw.width = parse_number(field("width"));
    raw.height = parse_number(field("height"));
    raw.coords_blank = trim(field("x_min")).empty() &&
                       trim(field("y_min")).empty() &&
                       trim(field("x_max")).empty() &&
                       trim(field("y_max")).empty();
    accept_row(raw, row.line, out);
  }
  return out;
}

LoadResult parse_annotations_json(const json& doc) {
  if (!doc.is_array()) {
    fail(ErrorKind::kValidation, "annotation JSON must be an array of objects");
  }
  LoadResult out;
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const json& o = doc[i];
    if (!o.is_object()) {
      out.errors.push_back({i + 1, "element is not an object"});
      continue;
    }
    auto str = [&](const char* key) {
      auto it = o.find(key);
      return (it != o.end() && it->is_string()) ? it->get<std::string>()
                                                 : std::string();
    };
    auto num = [&](const char* key) -> std::optional<double> {
      auto it = o.find(key);
      return it == o.end() ? std::nullopt : number_field(*it);
    };
    auto blank = [&](const char* key) {
      auto it = o.find(key);
      return it == o.end() || it->is_null() ||
             (it->is_string() && trim(it->get<std::string>()).empty());
    };
    RawRow raw;
    raw.image_id = str("image_id");
    raw.class_name = str("class_name");
    raw.rater_id = str("rater_id");
    raw.x_min = num("x_min");
    raw.y_min = num("y_min");
    raw.x_max = num("x_max");
    raw.y_max = num("y_max");
    raw.width = num("width");
    raw.height = num("height");
    raw.coords_blank =
        blank("x_min") && blank("y_min") && blank("x_max") && blank("y_max");
    accept_row(raw, i + 1, out);
  }
  return out;
}

LoadResult load_annotations(const fs::path& path, AnnotationFormat format) {
  if (format == AnnotationFormat::kCsv) {
    return parse_annotations_csv(read_text(path));
  }
  return parse_annotations_json(read_json(path));
}

std::vector<WeightedBox> weighted_box_fusion(std::vector<WeightedBox> boxes,
                                             double iou_threshold) {
  if (!(iou_threshold > 0.0 && iou_threshold <= 1.0)) {
    fail(ErrorKind::kUsage, "WBF IoU threshold must be in (0, 1]");
  }
  for (const auto& wb : boxes) {
    if (!(wb.weight > 0.0) || !std::isfinite(wb.weight)) {
      fail(ErrorKind::kValidation, "WBF weights must be positive");
    }
  }
  bool merged = true;
  while (merged) {
    merged = false;
    std::sort(boxes.begin(), boxes.end(), canonical_less);
    boxes = fusion_pass(boxes, iou_threshold, merged);
  }
  std::sort(boxes.begin(), boxes.end(), canonical_less);
  return boxes;
}

std::vector<GroundingInstance> fuse_records(
    const std::vector<AnnotationRecord>& records, double iou_threshold) {
  const auto groups = make_groups(records, iou_threshold);
  std::vector<GroundingInstance> out(groups.size());
  const auto n = static_cast<std::ptrdiff_t>(groups.size());
#pragma omp parallel for schedule(dynamic, 16)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    out[i] = fuse_group(groups[i], iou_threshold);
  }
  return out;
}

namespace reference {

std::vector<GroundingInstance> fuse_records(
    const std::vector<AnnotationRecord>& records, double iou_threshold) {
  std::vector<GroundingInstance> out;
  for (const auto& g : make_groups(records, iou_threshold)) {
    out.push_back(fuse_group(g, iou_threshold));
  }
  return out;
}

}  // namespace reference

bool is_split_name(std::string_view name) {
  return name == "train" || name == "test" || name == "zeroshot" ||
         name == "ood";
}

std::size_t ClassMap::known_count() const {
  return static_cast<std::size_t>(std::count_if(
      entries.begin(), entries.end(),
      [](const auto& kv) { return kv.second.has_value(); }));
}

std::size_t ClassMap::unknown_count() const {
  return entries.size() - known_count();
}

bool ClassMap::is_known(const std::string& name) const {
  for (const auto& [src, target] : entries) {
    if (!target) continue;
    if (src == name || *target == name) return true;
  }
  return false;
}

ClassMap ClassMap::from_json(const json& doc) {
  if (!doc.is_object() || !doc.contains("known") || !doc.contains("unknown") ||
      !doc["known"].is_object() || !doc["unknown"].is_array()) {
    fail(ErrorKind::kValidation,
         "class map must be {\"known\": {...}, \"unknown\": [...]}");
  }
  ClassMap map;
  for (const auto& [src, target] : doc["known"].items()) {
    if (!target.is_string()) {
      fail(ErrorKind::kValidation, "class map target for " + src +
                                       " must be a string");
    }
    map.entries[src] = target.get<std::string>();
  }
  for (const auto& src : doc["unknown"]) {
    if (!src.is_string()) {
      fail(ErrorKind::kValidation, "class map unknown entries must be strings");
    }
    if (map.entries.count(src.get<std::string>())) {
      fail(ErrorKind::kValidation,
           "class " + src.get<std::string>() + " is both known and unknown");
    }
    map.entries[src.get<std::string>()] = std::nullopt;
  }
  return map;
}

json ClassMap::to_json() const {
  json known = json::object();
  json unknown = json::array();
  for (const auto& [src, target] : entries) {
    if (target) {
      known[src] = *target;
    } else {
      unknown.push_back(src);
    }
  }
  return {{"known", known}, {"unknown", unknown}};
}

ClassSplit apply_class_map(const std::vector<GroundingInstance>& instances,
                           const ClassMap& map) {
  std::set<std::string> unmapped;
  for (const auto& inst : instances) {
    if (!map.entries.count(inst.class_name)) unmapped.insert(inst.class_name);
  }
  if (!unmapped.empty()) {
    std::string msg = "classes missing from class map:";
    for (const auto& c : unmapped) msg += " '" + c + "'";
    fail(ErrorKind::kValidation, msg);
  }
  ClassSplit out{{"zeroshot", {}}, {"ood", {}}};
  for (const auto& inst : instances) {
    const auto& target = map.entries.at(inst.class_name);
    if (target) {
      GroundingInstance renamed = inst;
      renamed.class_name = *target;
      out.known.instances.push_back(std::move(renamed));
    } else {
      out.unknown.instances.push_back(inst);
    }
  }
  return out;
}

std::map<std::string, std::size_t> class_distribution(
    const std::vector<GroundingInstance>& instances) {
  std::map<std::string, std::size_t> hist;
  for (const auto& inst : instances) ++hist[inst.class_name];
  return hist;
}

json instance_to_json(const GroundingInstance& inst) {
  json boxes = json::array();
  for (const auto& b : inst.fused_boxes) boxes.push_back(b.coords());
  return {{"image_id", inst.image_id},
          {"class_name", inst.class_name},
          {"width", inst.dims.width},
          {"height", inst.dims.height},
          {"boxes", boxes}};
}

GroundingInstance instance_from_json(const json& j) {
  try {
    GroundingInstance inst;
    inst.image_id = j.at("image_id").get<std::string>();
    inst.class_name = j.at("class_name").get<std::string>();
    inst.dims = {j.at("width").get<int>(), j.at("height").get<int>()};
    for (const auto& b : j.at("boxes")) {
      const auto c = b.get<std::array<double, 4>>();
      BoundingBox box{c[0], c[1], c[2], c[3]};
      validate_within(box, inst.dims);
      inst.fused_boxes.push_back(box);
    }
    if (inst.fused_boxes.empty()) {
      fail(ErrorKind::kValidation, "instance " + inst.image_id + "/" +
                                       inst.class_name + " has no boxes");
    }
    return inst;
  } catch (const json::exception& e) {
    fail(ErrorKind::kValidation,
         std::string("malformed grounding instance: ") + e.what());
  }
}

json manifest_to_json(const Manifest& manifest) {
  json doc = json::object();
  for (const auto& [name, instances] : manifest) {
    json arr = json::array();
    for (const auto& inst : instances) arr.push_back(instance_to_json(inst));
    doc[name] = std::move(arr);
  }
  return doc;
}

Manifest manifest_from_json(const json& doc) {
  if (!doc.is_object()) {
    fail(ErrorKind::kValidation, "split manifest must be a JSON object");
  }
  Manifest m;
  for (const auto& [name, arr] : doc.items()) {
    if (!is_split_name(name)) {
      fail(ErrorKind::kValidation, "unknown split name '" + name + "'");
    }
    if (!arr.is_array()) {
      fail(ErrorKind::kValidation, "split '" + name + "' must be an array");
    }
    auto& dst = m[name];
    for (const auto& j : arr) dst.push_back(instance_from_json(j));
  }
  validate_manifest(m);
  return m;
}

Manifest load_manifest(const fs::path& path) {
  return manifest_from_json(read_json(path));
}

void validate_manifest(const Manifest& manifest) {
  auto train = manifest.find("train");
  auto test = manifest.find("test");
  if (train == manifest.end() || test == manifest.end()) return;
  std::set<std::string> train_ids;
  for (const auto& inst : train->second) train_ids.insert(inst.image_id);
  for (const auto& inst : test->second) {
    if (train_ids.count(inst.image_id)) {
      fail(ErrorKind::kValidation,
           "image " + inst.image_id + " appears in both train and test");
    }
  }
}

}  // namespace k2s::dataset
