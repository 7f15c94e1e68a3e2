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
#include <string>
#include <string_view>
#include <vector>

#include "k2s/geometry.hpp"
#include "k2s/io.hpp"
#include "k2s/promptgen.hpp"

namespace k2s::outparse {

using promptgen::WireFormat;

/// One box recovered from raw model text. `coords` holds the values as
/// emitted: location bins for LocToken, JSON numbers for JsonBox.
struct Prediction {
  std::string label;
  std::array<double, 4> coords{};
  int rank = 0;
  double score = 1.0;
};

enum class DiscardReason {
  kIncompleteGroup,  // fewer than four <loc_K> tokens before the next label
  kOutOfVocab,       // K > 1000
  kTrailingText,     // text after the last complete group
  kBadObject,        // array element that is not an object
  kBadBbox,          // bbox_2d missing or not four finite numbers
  kBadLabel,         // label missing or not a string
  kTruncatedArray,   // array never closed; objects salvaged individually
};

std::string_view reason_name(DiscardReason reason);

struct Discard {
  std::size_t begin = 0;  // byte span in the raw output
  std::size_t end = 0;
  DiscardReason reason = DiscardReason::kIncompleteGroup;
};

struct ParseReport {
  std::vector<Prediction> predictions;
  std::vector<Discard> discarded;
  bool fatal = false;
  std::string diagnostic;  // set when fatal
};

/// Grammar: ([label text] <loc_K><loc_K><loc_K><loc_K>)*, whitespace allowed
/// between tokens. Never throws.
ParseReport parse_loc_tokens(std::string_view raw);

/// Finds the first well-formed JSON array of {"bbox_2d", "label"} objects,
/// ignoring surrounding prose and code fences. An unterminated array falls
/// back to salvaging complete objects. No recoverable array -> fatal.
/// Never throws.
ParseReport parse_json_boxes(std::string_view raw);

ParseReport parse(std::string_view raw, WireFormat format);

/// How JsonBox numbers map to pixels.
enum class JsonCoords { kNormalized1000, kPixels };

JsonCoords parse_json_coords(std::string_view name);

struct NormalizedPrediction {
  std::string label;
  BoundingBox box;
  double score = 1.0;
  int rank = 0;
};

struct Normalized {
  std::vector<NormalizedPrediction> predictions;
  std::vector<std::string> warnings;
};

/// Scales predictions into pixel space, orders corners, clamps to the image
/// and drops zero-area boxes with a warning.
Normalized normalize_predictions(const ParseReport& report,
                                 const ImageDims& dims, WireFormat format,
                                 JsonCoords json_coords =
                                     JsonCoords::kNormalized1000);

json report_to_json(const ParseReport& report);

}  // namespace k2s::outparse
