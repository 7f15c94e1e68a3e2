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
#include "k2s/outparse.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <optional>

#include "k2s/error.hpp"

namespace k2s::outparse {

namespace {

constexpr std::string_view kLocPrefix = "<loc_";

struct LocToken {
  std::size_t begin = 0;
  std::size_t end = 0;
  int value = 0;
  bool out_of_vocab = false;
};

// Recognizes "<loc_DIGITS>" at `pos`.
std::optional<LocToken> loc_token_at(std::string_view raw, std::size_t pos) {
  if (raw.compare(pos, kLocPrefix.size(), kLocPrefix) != 0) return std::nullopt;
  std::size_t i = pos + kLocPrefix.size();
  const std::size_t digits_begin = i;
  long long value = 0;
  bool overflow = false;
  while (i < raw.size() && std::isdigit(static_cast<unsigned char>(raw[i]))) {
    if (!overflow) {
      value = value * 10 + (raw[i] - '0');
      if (value > kLocMax) overflow = true;
    }
    ++i;
  }
  if (i == digits_begin || i >= raw.size() || raw[i] != '>') {
    return std::nullopt;
  }
  LocToken tok;
  tok.begin = pos;
  tok.end = i + 1;
  tok.out_of_vocab = overflow;
  tok.value = overflow ? 0 : static_cast<int>(value);
  return tok;
}

// Tokenizer special tokens that leak into decoded Florence output.
std::string strip_special_tokens(std::string s) {
  for (std::string_view tok : {"</s>", "<s>", "<pad>"}) {
    std::size_t p;
    while ((p = s.find(tok)) != std::string::npos) s.erase(p, tok.size());
  }
  return trim(s);
}

bool all_space(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](char c) {
    return std::isspace(static_cast<unsigned char>(c)) != 0;
  });
}

// Index one past the bracket matching raw[open], skipping JSON strings.
std::optional<std::size_t> matching_close(std::string_view raw,
                                          std::size_t open) {
  const char open_c = raw[open];
  const char close_c = open_c == '[' ? ']' : '}';
  int depth = 0;
  bool in_string = false;
  for (std::size_t i = open; i < raw.size(); ++i) {
    const char c = raw[i];
    if (in_string) {
      if (c == '\\') {
        ++i;
      } else if (c == '"') {
        in_string = false;
      }
      continue;
    }
    if (c == '"') {
      in_string = true;
    } else if (c == open_c) {
      ++depth;
    } else if (c == close_c) {
      if (--depth == 0) return i + 1;
    }
  }
  return std::nullopt;
}

bool looks_like_box_object(const json& j) {
  return j.is_object() && j.contains("bbox_2d");
}

void take_object(const json& obj, std::size_t begin, std::size_t end,
                 ParseReport& report) {
  if (!obj.is_object()) {
    report.discarded.push_back({begin, end, DiscardReason::kBadObject});
    return;
  }
  auto bbox = obj.find("bbox_2d");
  if (bbox == obj.end() || !bbox->is_array() || bbox->size() != 4) {
    report.discarded.push_back({begin, end, DiscardReason::kBadBbox});
    return;
  }
  Prediction p;
  for (std::size_t k = 0; k < 4; ++k) {
    const json& v = (*bbox)[k];
    if (!v.is_number() || !std::isfinite(v.get<double>())) {
      report.discarded.push_back({begin, end, DiscardReason::kBadBbox});
      return;
    }
    p.coords[k] = v.get<double>();
  }
  auto label = obj.find("label");
  if (label == obj.end() || !label->is_string()) {
    report.discarded.push_back({begin, end, DiscardReason::kBadLabel});
    return;
  }
  p.label = label->get<std::string>();
  p.rank = static_cast<int>(report.predictions.size());
  report.predictions.push_back(std::move(p));
}

std::string excerpt(std::string_view raw) {
  constexpr std::size_t kMax = 80;
  std::string out;
  for (char c : raw.substr(0, kMax)) {
    const auto u = static_cast<unsigned char>(c);
    out.push_back(u >= 0x20 && u < 0x7f ? c : '?');
  }
  if (raw.size() > kMax) out += "...";
  return out;
}

}  // namespace

std::string_view reason_name(DiscardReason reason) {
  switch (reason) {
    case DiscardReason::kIncompleteGroup:
      return "incomplete_group";
    case DiscardReason::kOutOfVocab:
      return "out_of_vocab";
    case DiscardReason::kTrailingText:
      return "trailing_text";
    case DiscardReason::kBadObject:
      return "bad_object";
    case DiscardReason::kBadBbox:
      return "bad_bbox";
    case DiscardReason::kBadLabel:
      return "bad_label";
    case DiscardReason::kTruncatedArray:
      return "truncated_array";
  }
  return "unknown";
}

ParseReport parse_loc_tokens(std::string_view raw) {
  ParseReport report;
  std::vector<LocToken> group;
  std::size_t group_begin = 0;
  std::size_t text_begin = 0;  // start of pending label text
  std::string label;

  auto close_incomplete = [&](std::size_t end) {
    report.discarded.push_back(
        {group_begin, end, DiscardReason::kIncompleteGroup});
    group.clear();
  };

  std::size_t i = 0;
  while (i < raw.size()) {
    const auto tok = raw[i] == '<' ? loc_token_at(raw, i) : std::nullopt;
    if (!tok) {
      // Plain text up to the next candidate token.
      std::size_t j = raw.find(kLocPrefix, i + 1);
      if (j == std::string_view::npos) j = raw.size();
      const std::string_view text = raw.substr(i, j - i);
      if (!group.empty()) {
        if (all_space(text)) {
          i = j;
          continue;
        }
        close_incomplete(i);
        label.clear();
        group_begin = i;
        text_begin = i;
      }
      if (label.empty()) text_begin = i;
      label.append(text);
      i = j;
      continue;
    }
    if (group.empty()) group_begin = label.empty() ? tok->begin : text_begin;
    group.push_back(*tok);
    i = tok->end;
    if (group.size() < 4) continue;
    const bool oov = std::any_of(group.begin(), group.end(),
                                 [](const LocToken& t) { return t.out_of_vocab; });
    if (oov) {
      report.discarded.push_back({group_begin, i, DiscardReason::kOutOfVocab});
    } else {
      Prediction p;
      p.label = strip_special_tokens(label);
      for (int k = 0; k < 4; ++k) p.coords[k] = group[k].value;
      p.rank = static_cast<int>(report.predictions.size());
      report.predictions.push_back(std::move(p));
    }
    group.clear();
    label.clear();
    group_begin = i;
  }
  if (!group.empty()) {
    close_incomplete(raw.size());
  } else if (!strip_special_tokens(label).empty()) {
    report.discarded.push_back(
        {text_begin, raw.size(), DiscardReason::kTrailingText});
  }
  return report;
}

ParseReport parse_json_boxes(std::string_view raw) {
  ParseReport report;
  for (std::size_t p = raw.find('['); p != std::string_view::npos;
       p = raw.find('[', p + 1)) {
    const auto end = matching_close(raw, p);
    if (!end) continue;
    const json arr = json::parse(raw.substr(p, *end - p), nullptr, false);
    if (arr.is_discarded() || !arr.is_array()) continue;
    const bool usable =
        arr.empty() || std::any_of(arr.begin(), arr.end(), looks_like_box_object);
    if (!usable) continue;
    for (const auto& el : arr) take_object(el, p, *end, report);
    return report;
  }

  // No complete array: salvage whole objects, e.g. from output cut off at
  // the token limit.
  std::size_t salvaged = 0;
  std::size_t p = raw.find('{');
  while (p != std::string_view::npos) {
    const auto end = matching_close(raw, p);
    if (!end) break;
    const json obj = json::parse(raw.substr(p, *end - p), nullptr, false);
    if (!obj.is_discarded() && looks_like_box_object(obj)) {
      take_object(obj, p, *end, report);
      ++salvaged;
      p = raw.find('{', *end);
    } else {
      p = raw.find('{', p + 1);
    }
  }
  if (salvaged > 0) {
    const std::size_t open = raw.find('[');
    report.discarded.push_back({open == std::string_view::npos ? 0 : open,
                                raw.size(), DiscardReason::kTruncatedArray});
    return report;
  }
  report.fatal = true;
  report.diagnostic = "no bbox_2d array found in output: \"" + excerpt(raw) + "\"";
  return report;
}

ParseReport parse(std::string_view raw, WireFormat format) {
  return format == WireFormat::kLocToken ? parse_loc_tokens(raw)
                                         : parse_json_boxes(raw);
}

JsonCoords parse_json_coords(std::string_view name) {
  const std::string n = to_lower(name);
  if (n == "normalized" || n == "norm1000" || n == "1000") {
    return JsonCoords::kNormalized1000;
  }
  if (n == "pixels" || n == "pixel") return JsonCoords::kPixels;
  fail(ErrorKind::kUsage, "unknown --json-coords value '" + std::string(name) +
                              "' (expected normalized or pixels)");
}

Normalized normalize_predictions(const ParseReport& report,
                                 const ImageDims& dims, WireFormat format,
                                 JsonCoords json_coords) {
  validate(dims);
  const bool scaled = format == WireFormat::kLocToken ||
                      json_coords == JsonCoords::kNormalized1000;
  const double w = dims.width;
  const double h = dims.height;
  auto sx = [&](double v) { return scaled ? v * w / kLocMax : v; };
  auto sy = [&](double v) { return scaled ? v * h / kLocMax : v; };
  Normalized out;
  for (const auto& p : report.predictions) {
    const auto& c = p.coords;
    BoundingBox box{sx(std::min(c[0], c[2])), sy(std::min(c[1], c[3])),
                    sx(std::max(c[0], c[2])), sy(std::max(c[1], c[3]))};
    const BoundingBox clamped = clamp_to(box, dims);
    if (clamped != box) {
      out.warnings.push_back("prediction " + std::to_string(p.rank) +
                             ": clamped " + to_string(box) + " to image bounds");
    }
    if (clamped.degenerate()) {
      out.warnings.push_back("prediction " + std::to_string(p.rank) +
                             ": zero-area box dropped");
      continue;
    }
    out.predictions.push_back({p.label, clamped, p.score, p.rank});
  }
  return out;
}

json report_to_json(const ParseReport& report) {
  json preds = json::array();
  for (const auto& p : report.predictions) {
    preds.push_back({{"label", p.label},
                     {"coords", p.coords},
                     {"rank", p.rank},
                     {"score", p.score}});
  }
  json discards = json::array();
  for (const auto& d : report.discarded) {
    discards.push_back({{"begin", d.begin},
                        {"end", d.end},
                        {"reason", std::string(reason_name(d.reason))}});
  }
  json j = {{"predictions", preds}, {"discarded", discards},
            {"fatal", report.fatal}};
  if (report.fatal) j["diagnostic"] = report.diagnostic;
  return j;
}

}  // namespace k2s::outparse
