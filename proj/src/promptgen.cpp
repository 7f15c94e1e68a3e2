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
#include "k2s/promptgen.hpp"

#include <algorithm>
#include <cctype>
#include <set>

#include "k2s/error.hpp"

namespace k2s::promptgen {

namespace {

const std::vector<std::string> kShapeTerms = {
    "round",       "oval",       "circular",  "spherical",    "elliptical",
    "triangular",  "rectangular", "linear",   "curved",       "straight",
    "irregular",   "lobulated",  "spiculated", "nodular",     "stellate",
    "mass-like",   "lump-like",  "reticular", "honeycomb",    "septal",
    "branching",   "wedge-shaped", "crescentic", "patchy",    "diffuse",
    "borders",     "contour",    "outline",   "edge",         "pattern",
    "irregularity"};

const std::vector<std::string> kDensityTerms = {
    "dense",      "solid",       "soft-tissue",  "fluid",      "liquid",
    "gas",        "air-filled",  "air-containing", "fat-density", "calcified",
    "calcific",   "ossified",    "consolidated", "radiopaque", "radiolucent",
    "sclerotic",  "fibrotic",    "thick",        "thin",       "firm",
    "density"};

const std::vector<std::string> kIntensityTerms = {
    "bright",     "white",       "hyperdense", "hyperintense", "high-signal",
    "dark",       "black",       "hypodense",  "hypointense",  "low-signal",
    "gray",       "greyish",     "hazy",       "faint",        "subtle",
    "opaque",     "lucent",      "transparent", "prominent",   "clear",
    "ground-glass", "increased", "decreased",  "reduced",      "diminished"};

const std::vector<std::string> kLocationTerms = {
    "within the lung", "pleural cavity",  "pleural space",  "pulmonary artery",
    "lung tissue",     "lung fields",     "in the lung",    "supradiaphragmatic",
    "intrathoracic",   "extrathoracic",   "paramediastinal", "paravertebral",
    "mediastinum",     "mediastinal",     "costophrenic",   "retrocardiac",
    "peripheral",      "perihilar",       "subpleural",     "unilateral",
    "bilateral",       "central",         "aorta",          "heart",
    "basal",           "posterior",       "anterior",       "ventral",
    "dorsal",          "apical",          "middle",         "lower",
    "upper",           "medial",          "lateral",        "right",
    "left"};

constexpr std::string_view kJsonSchemaLine =
    "[{\"bbox_2d\": [x1, y1, x2, y2], \"label\": \"label\"}, ...]";

bool is_word_char(unsigned char c) {
  return std::isalnum(c) || c == '-' || c >= 0x80;
}

bool is_space(unsigned char c) { return std::isspace(c) != 0; }

unsigned char lower(unsigned char c) {
  return static_cast<unsigned char>(std::tolower(c));
}

// Length of a match of `term` at text[pos], or 0.
std::size_t match_at(std::string_view text, std::size_t pos,
                     std::string_view term) {
  std::size_t i = pos;
  for (std::size_t t = 0; t < term.size(); ++t) {
    const auto tc = static_cast<unsigned char>(term[t]);
    if (tc == ' ' || tc == '-') {
      if (i >= text.size()) return 0;
      const auto c = static_cast<unsigned char>(text[i]);
      if (tc == '-' && c == '-') {
        ++i;
        continue;
      }
      if (!is_space(c)) return 0;
      while (i < text.size() && is_space(static_cast<unsigned char>(text[i]))) {
        ++i;
      }
      continue;
    }
    if (i >= text.size() || lower(static_cast<unsigned char>(text[i])) != tc) {
      return 0;
    }
    ++i;
  }
  if (i < text.size() && is_word_char(static_cast<unsigned char>(text[i]))) {
    return 0;
  }
  return i - pos;
}

std::vector<std::string> longest_first(std::vector<std::string> terms) {
  std::stable_sort(terms.begin(), terms.end(),
                   [](const std::string& a, const std::string& b) {
                     return a.size() > b.size();
                   });
  return terms;
}

bool is_clause_punct(char c) {
  return c == ',' || c == ';' || c == ':';
}

bool is_closing_punct(char c) {
  return is_clause_punct(c) || c == '.' || c == '!' || c == '?' || c == ')';
}

// Whitespace and punctuation cleanup after term removal. Never touches
// word characters.
std::string normalize_after_removal(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  auto pop_spaces = [&] {
    while (!out.empty() && out.back() == ' ') out.pop_back();
  };
  for (char c : s) {
    if (is_space(static_cast<unsigned char>(c))) {
      if (!out.empty() && out.back() != ' ' && out.back() != '(') {
        out.push_back(' ');
      }
      continue;
    }
    if (c == ')') {
      pop_spaces();
      if (!out.empty() && out.back() == '(') {
        out.pop_back();
        pop_spaces();
        continue;
      }
    } else if (is_closing_punct(c)) {
      pop_spaces();
      // "a , , b" -> "a, b" and "a ,." -> "a."
      while (!out.empty() && is_clause_punct(out.back())) out.pop_back();
      if (out.empty()) continue;
    }
    out.push_back(c);
  }
  while (!out.empty() && (out.back() == ' ' || out.back() == '(' ||
                          is_clause_punct(out.back()))) {
    out.pop_back();
  }
  return out;
}

bool ends_sentence(std::string_view s) {
  return !s.empty() && (s.back() == '.' || s.back() == '!' || s.back() == '?');
}

void check_class_name(std::string_view class_name) {
  if (class_name.empty() || trim(class_name) != class_name) {
    fail(ErrorKind::kValidation,
         "class name must be non-empty without surrounding whitespace");
  }
  if (class_name.find('\n') != std::string_view::npos ||
      class_name.find("<loc_") != std::string_view::npos) {
    fail(ErrorKind::kValidation,
         "class name '" + std::string(class_name) +
             "' would not survive the answer encoding");
  }
}

}  // namespace

std::string_view format_name(WireFormat format) {
  return format == WireFormat::kLocToken ? "loc" : "json";
}

WireFormat parse_wire_format(std::string_view name) {
  const std::string n = to_lower(name);
  if (n == "loc" || n == "loctoken" || n == "loc_token" || n == "florence") {
    return WireFormat::kLocToken;
  }
  if (n == "json" || n == "jsonbox" || n == "json_box" || n == "qwen") {
    return WireFormat::kJsonBox;
  }
  fail(ErrorKind::kUsage,
       "unknown wire format '" + std::string(name) + "' (expected loc or json)");
}

std::string_view attribute_name(Attribute attribute) {
  switch (attribute) {
    case Attribute::kShape:
      return "shape";
    case Attribute::kIntensity:
      return "intensity";
    case Attribute::kDensity:
      return "density";
    case Attribute::kLocation:
      return "location";
  }
  return "shape";
}

Attribute parse_attribute(std::string_view name) {
  const std::string n = to_lower(name);
  for (Attribute a : kAllAttributes) {
    if (attribute_name(a) == n) return a;
  }
  fail(ErrorKind::kUsage, "unknown attribute '" + std::string(name) +
                              "' (expected shape, intensity, density or "
                              "location)");
}

Lexicons Lexicons::shipped() {
  Lexicons lx;
  lx.lexicons_[0] = {Attribute::kShape, kShapeTerms};
  lx.lexicons_[1] = {Attribute::kIntensity, kIntensityTerms};
  lx.lexicons_[2] = {Attribute::kDensity, kDensityTerms};
  lx.lexicons_[3] = {Attribute::kLocation, kLocationTerms};
  return lx;
}

Lexicons Lexicons::from_json(const json& doc) {
  if (!doc.is_object() || !doc.contains("attributes") ||
      !doc["attributes"].is_object()) {
    fail(ErrorKind::kValidation, "lexicon asset lacks an 'attributes' object");
  }
  if (doc.value("version", 0) != kLexiconVersion) {
    fail(ErrorKind::kValidation, "unsupported lexicon asset version");
  }
  Lexicons lx;
  for (std::size_t i = 0; i < kAllAttributes.size(); ++i) {
    const Attribute a = kAllAttributes[i];
    const std::string key(attribute_name(a));
    const auto& attrs = doc["attributes"];
    if (!attrs.contains(key) || !attrs[key].is_array() || attrs[key].empty()) {
      fail(ErrorKind::kValidation, "lexicon asset lacks terms for " + key);
    }
    lx.lexicons_[i].attribute = a;
    for (const auto& t : attrs[key]) {
      if (!t.is_string() || trim(t.get<std::string>()).empty()) {
        fail(ErrorKind::kValidation, "lexicon terms must be non-empty strings");
      }
      lx.lexicons_[i].terms.push_back(to_lower(trim(t.get<std::string>())));
    }
  }
  return lx;
}

Lexicons Lexicons::load(const fs::path& path) {
  return from_json(read_json(path));
}

json Lexicons::to_json() const {
  json attrs = json::object();
  for (const auto& lx : lexicons_) {
    attrs[std::string(attribute_name(lx.attribute))] = lx.terms;
  }
  return {{"version", kLexiconVersion}, {"attributes", attrs}};
}

const AttributeLexicon& Lexicons::of(Attribute attribute) const {
  for (const auto& lx : lexicons_) {
    if (lx.attribute == attribute) return lx;
  }
  fail(ErrorKind::kUsage, "unknown attribute");
}

std::vector<TermMatch> find_terms(std::string_view text,
                                  const std::vector<std::string>& terms) {
  const auto ordered = longest_first(terms);
  std::vector<TermMatch> matches;
  std::size_t i = 0;
  while (i < text.size()) {
    const bool boundary =
        i == 0 || !is_word_char(static_cast<unsigned char>(text[i - 1]));
    if (boundary && is_word_char(static_cast<unsigned char>(text[i]))) {
      std::size_t best = 0;
      const std::string* best_term = nullptr;
      for (const auto& term : ordered) {
        const std::size_t len = match_at(text, i, term);
        if (len > best) {
          best = len;
          best_term = &term;
        }
      }
      if (best > 0) {
        matches.push_back({i, i + best, *best_term});
        i += best;
        continue;
      }
    }
    ++i;
  }
  return matches;
}

std::string mask_attribute(std::string_view description, Attribute attribute,
                           const Lexicons& lexicons) {
  if (trim(description).empty()) {
    fail(ErrorKind::kValidation, "cannot mask an empty description");
  }
  const auto& terms = lexicons.of(attribute).terms;
  std::string current(description);
  for (;;) {
    const auto matches = find_terms(current, terms);
    if (matches.empty()) return current;
    std::string stripped;
    std::size_t pos = 0;
    for (const auto& m : matches) {
      stripped.append(current, pos, m.begin - pos);
      stripped.push_back(' ');
      pos = m.end;
    }
    stripped.append(current, pos, std::string::npos);
    current = normalize_after_removal(stripped);
  }
}

std::string base_prompt(std::string_view class_name, WireFormat format) {
  if (format == WireFormat::kLocToken) {
    return "Locate disease " + std::string(class_name) + ".";
  }
  return "Return bounding boxes of '" + std::string(class_name) +
         "' areas as JSON format:\n" + std::string(kJsonSchemaLine);
}

std::string knowledge_prompt(std::string_view class_name,
                             std::string_view description, WireFormat format) {
  if (format == WireFormat::kLocToken) {
    std::string out = "Locate disease " + std::string(class_name) +
                      ", which means " + std::string(description);
    if (!ends_sentence(description)) out += ".";
    return out;
  }
  return base_prompt(class_name, format) + "\nNote: " +
         std::string(description);
}

std::string render_answer(std::string_view label,
                          const std::vector<QuantizedBox>& boxes,
                          WireFormat format) {
  std::string out;
  if (format == WireFormat::kLocToken) {
    for (std::size_t i = 0; i < boxes.size(); ++i) {
      if (i) out += "\n";
      out += label;
      out += " ";
      for (int q : boxes[i].coords()) out += "<loc_" + std::to_string(q) + ">";
    }
    return out;
  }
  const std::string quoted = dump(json(std::string(label)));
  out = "[";
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    if (i) out += ", ";
    const auto c = boxes[i].coords();
    out += "{\"bbox_2d\": [" + std::to_string(c[0]) + ", " +
           std::to_string(c[1]) + ", " + std::to_string(c[2]) + ", " +
           std::to_string(c[3]) + "], \"label\": " + quoted + "}";
  }
  out += "]";
  return out;
}

TrainingPair build_pair(const dataset::GroundingInstance& instance,
                        std::optional<std::string_view> description,
                        WireFormat format) {
  check_class_name(instance.class_name);
  if (instance.dims.width <= 0 || instance.dims.height <= 0) {
    fail(ErrorKind::kValidation, "instance " + instance.image_id +
                                     " lacks image dims");
  }
  TrainingPair pair;
  pair.format = format;
  pair.class_name = instance.class_name;
  pair.image_id = instance.image_id;
  pair.dims = instance.dims;
  for (const auto& b : instance.fused_boxes) {
    pair.boxes.push_back(quantize(b, instance.dims));
  }
  if (description && !trim(*description).empty()) {
    pair.prompt =
        knowledge_prompt(instance.class_name, trim(*description), format);
  } else {
    pair.prompt = base_prompt(instance.class_name, format);
  }
  pair.answer = render_answer(instance.class_name, pair.boxes, format);
  return pair;
}

std::vector<TrainingPair> build_eval_set(
    const std::vector<dataset::GroundingInstance>& instances,
    const PromptDictionary& dictionary, const EvalSetOptions& options,
    const Lexicons& lexicons) {
  if (options.with_knowledge) {
    std::set<std::string> missing;
    for (const auto& inst : instances) {
      if (!dictionary.count(inst.class_name)) missing.insert(inst.class_name);
    }
    if (!missing.empty()) {
      std::string msg = "prompt dictionary does not cover:";
      for (const auto& c : missing) msg += " '" + c + "'";
      fail(ErrorKind::kValidation, msg);
    }
  }
  // Mask each distinct description once.
  std::map<std::string, std::string> descriptions;
  if (options.with_knowledge) {
    for (const auto& inst : instances) {
      if (descriptions.count(inst.class_name)) continue;
      const std::string& d = dictionary.at(inst.class_name);
      descriptions[inst.class_name] =
          options.mask ? mask_attribute(d, *options.mask, lexicons) : d;
    }
  }
  std::vector<TrainingPair> pairs(instances.size());
  std::vector<std::string> errors(instances.size());
  const auto n = static_cast<std::ptrdiff_t>(instances.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto& inst = instances[i];
    std::optional<std::string_view> desc;
    if (options.with_knowledge) desc = descriptions.at(inst.class_name);
    try {
      pairs[i] = build_pair(inst, desc, options.format);
    } catch (const Error& e) {
      errors[i] = e.what();
    }
  }
  for (const auto& e : errors) {
    if (!e.empty()) fail(ErrorKind::kValidation, e);
  }
  return pairs;
}

json pair_to_json(const TrainingPair& pair) {
  return {{"prompt", pair.prompt},
          {"answer", pair.answer},
          {"format", std::string(format_name(pair.format))},
          {"image_id", pair.image_id},
          {"class_name", pair.class_name},
          {"width", pair.dims.width},
          {"height", pair.dims.height}};
}

}  // namespace k2s::promptgen
