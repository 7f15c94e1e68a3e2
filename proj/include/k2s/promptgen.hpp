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

#include <array>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "k2s/dataset.hpp"
#include "k2s/geometry.hpp"
#include "k2s/io.hpp"

namespace k2s::promptgen {

/// The two answer encodings: `<loc_K>` token groups (Florence-2 style) and a
/// JSON array of {"bbox_2d", "label"} objects (Qwen2-VL style).
enum class WireFormat { kLocToken, kJsonBox };

std::string_view format_name(WireFormat format);  // "loc" | "json"
WireFormat parse_wire_format(std::string_view name);

enum class Attribute { kShape, kIntensity, kDensity, kLocation };

inline constexpr std::array<Attribute, 4> kAllAttributes = {
    Attribute::kShape, Attribute::kIntensity, Attribute::kDensity,
    Attribute::kLocation};

std::string_view attribute_name(Attribute attribute);
/// Unknown names -> Error(kUsage).
Attribute parse_attribute(std::string_view name);

struct AttributeLexicon {
  Attribute attribute = Attribute::kShape;
  std::vector<std::string> terms;  // lowercase; may be multiword/hyphenated
};

class Lexicons {
 public:
  /// The term sets used for attribute-masked ablation, as published.
  static Lexicons shipped();
  static Lexicons from_json(const json& doc);
  static Lexicons load(const fs::path& path);
  json to_json() const;

  const AttributeLexicon& of(Attribute attribute) const;

 private:
  std::array<AttributeLexicon, 4> lexicons_;
};

inline constexpr int kLexiconVersion = 1;

/// One term occurrence in a text, as a byte span.
struct TermMatch {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::string term;
};

/// Leftmost-longest, case-insensitive, word-boundary matches of `terms` in
/// `text`. Letters, digits, hyphens and non-ASCII bytes count as word
/// characters. A hyphen inside a term matches a hyphen or whitespace in the
/// text; a space matches any whitespace run.
std::vector<TermMatch> find_terms(std::string_view text,
                                  const std::vector<std::string>& terms);

/// Removes every term of `attribute` from `description`, then normalizes
/// whitespace and dangling punctuation. Repeats until no term remains, so
/// the result is a fixed point. Text without matches is returned untouched.
std::string mask_attribute(std::string_view description, Attribute attribute,
                           const Lexicons& lexicons);

struct TrainingPair {
  std::string prompt;
  std::string answer;
  WireFormat format = WireFormat::kLocToken;
  std::string class_name;
  std::string image_id;
  std::vector<QuantizedBox> boxes;
  ImageDims dims;
};

std::string base_prompt(std::string_view class_name, WireFormat format);
/// Base prompt extended with the attribute description in the format's
/// knowledge-augmented template.
std::string knowledge_prompt(std::string_view class_name,
                             std::string_view description, WireFormat format);
std::string render_answer(std::string_view label,
                          const std::vector<QuantizedBox>& boxes,
                          WireFormat format);

/// Pair for one image-abnormality instance. An empty or absent description
/// yields the base template. Boxes are emitted in the instance's order.
TrainingPair build_pair(const dataset::GroundingInstance& instance,
                        std::optional<std::string_view> description,
                        WireFormat format);

using PromptDictionary = std::map<std::string, std::string>;

struct EvalSetOptions {
  WireFormat format = WireFormat::kLocToken;
  bool with_knowledge = true;
  std::optional<Attribute> mask;
};

/// One pair per instance. With knowledge enabled every class must be in the
/// dictionary, otherwise Error(kValidation) lists the uncovered classes.
std::vector<TrainingPair> build_eval_set(
    const std::vector<dataset::GroundingInstance>& instances,
    const PromptDictionary& dictionary, const EvalSetOptions& options,
    const Lexicons& lexicons = Lexicons::shipped());

/// {prompt, answer, format, image_id, class_name, width, height}
json pair_to_json(const TrainingPair& pair);

}  // namespace k2s::promptgen
