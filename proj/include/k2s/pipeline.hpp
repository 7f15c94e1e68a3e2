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

// Pipeline commands behind the `k2s` subcommands. Each command validates
// its inputs up front, writes its outputs atomically and reports through the
// given streams. Failures surface as k2s::Error.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "k2s/dataset.hpp"
#include "k2s/io.hpp"
#include "k2s/knowledge.hpp"
#include "k2s/metrics.hpp"
#include "k2s/outparse.hpp"
#include "k2s/promptgen.hpp"

namespace k2s::pipeline {

struct Streams {
  std::ostream& out;
  std::ostream& err;
};

// ---- ingest / fuse -------------------------------------------------------

struct IngestOptions {
  std::vector<std::pair<std::string, fs::path>> inputs;  // split -> file
  std::optional<dataset::AnnotationFormat> format;       // default: by extension
  double wbf_iou = dataset::kDefaultWbfIou;
  std::optional<fs::path> class_map;
  fs::path out;
  bool strict = false;  // row diagnostics become a validation error
};

/// "train=path" -> {"train", path}.
std::pair<std::string, fs::path> parse_split_input(std::string_view spec);

/// Loads, validates and fuses each split, then writes the split manifest.
/// With a class map, "zeroshot" and "ood" splits are added from the
/// union of the inputs.
dataset::Manifest cmd_ingest(const IngestOptions& o, Streams io);

struct FuseOptions {
  fs::path annotations;
  std::optional<dataset::AnnotationFormat> format;
  double wbf_iou = dataset::kDefaultWbfIou;
  fs::path out;  // instances as JSON-lines
};

std::vector<dataset::GroundingInstance> cmd_fuse(const FuseOptions& o,
                                                 Streams io);

// ---- knowledge -----------------------------------------------------------

enum class ClientMode { kHttp, kStub, kReplay, kRecord };

struct DecomposeOptions {
  fs::path definitions;
  fs::path pools_dir;
  std::vector<std::string> classes;  // empty: every class in the store
  knowledge::GenerationParams params;
  ClientMode client = ClientMode::kHttp;
  std::optional<fs::path> transcript;  // replay / record
  std::uint64_t seed = 0;
  int max_in_flight = 4;
  knowledge::RetryPolicy retry;
};

/// Writes one pool per class. Any class failing -> Error(kEndpoint) after
/// the summary is printed; completed pools stay on disk.
std::vector<knowledge::DecomposeOutcome> cmd_decompose(
    const DecomposeOptions& o, Streams io,
    std::shared_ptr<knowledge::LLMClient> client = nullptr);

struct SelectOptions {
  fs::path pools_dir;
  fs::path ledger;
  std::optional<std::string> class_name;
  std::optional<int> index;
  bool auto_select = false;
  std::optional<fs::path> definitions;  // class order for --auto-select
};

/// Human selection (class + index) or auto selection. Auto mode without a
/// class covers every pool that has no selection yet.
std::vector<knowledge::AttributePrompt> cmd_select(const SelectOptions& o,
                                                   Streams io);

struct ExportOptions {
  fs::path ledger;
  std::optional<fs::path> definitions;
  std::vector<std::string> classes;
  fs::path out;
};

promptgen::PromptDictionary cmd_export_dict(const ExportOptions& o,
                                            Streams io);

// ---- pairs / predictions -------------------------------------------------

enum class FormatChoice { kLoc, kJson, kBoth };

FormatChoice parse_format_choice(std::string_view name);

struct BuildPairsOptions {
  fs::path manifest;
  std::string split = "train";
  FormatChoice format = FormatChoice::kLoc;
  bool with_knowledge = false;
  std::optional<fs::path> dictionary;
  std::optional<promptgen::Attribute> mask;
  std::optional<fs::path> lexicons;
  fs::path out;
};

/// Output paths written: `out` for a single format; `<stem>.loc<ext>` and
/// `<stem>.json<ext>` for both.
std::vector<fs::path> cmd_build_pairs(const BuildPairsOptions& o, Streams io);

struct StubPredictOptions {
  fs::path pairs;
  double jitter = 0.0;  // shift as a fraction of each box's diagonal
  std::uint64_t seed = 0;
  fs::path out;
};

/// One raw prediction line {image_id, class_name, format, raw_output} per
/// pair: gt boxes shifted by jitter * diagonal in a seeded direction.
std::size_t cmd_stub_predict(const StubPredictOptions& o, Streams io);

/// Raw model output as ingested in bulk.
struct RawPrediction {
  std::string image_id;
  std::string class_name;
  promptgen::WireFormat format = promptgen::WireFormat::kLocToken;
  std::string raw_output;
};

std::vector<RawPrediction> load_raw_predictions(const fs::path& path);

/// Parsed predictions of one case, in pixel space.
struct ParsedCase {
  std::string image_id;
  std::string class_name;
  ImageDims dims;
  std::vector<outparse::NormalizedPrediction> predictions;
  std::vector<outparse::Discard> discarded;
  std::vector<std::string> warnings;
  bool fatal = false;
  std::string diagnostic;
};

json parsed_case_to_json(const ParsedCase& c);
ParsedCase parsed_case_from_json(const json& j);

/// Image dimensions by image id over every split of a manifest.
std::map<std::string, ImageDims> manifest_dims(const dataset::Manifest& m);

std::vector<ParsedCase> parse_predictions(
    const std::vector<RawPrediction>& raw,
    const std::map<std::string, ImageDims>& dims,
    outparse::JsonCoords json_coords);

struct ParseOptions {
  fs::path predictions;
  fs::path manifest;
  outparse::JsonCoords json_coords = outparse::JsonCoords::kNormalized1000;
  fs::path out;
};

std::vector<ParsedCase> cmd_parse(const ParseOptions& o, Streams io);

// ---- evaluation and runs -------------------------------------------------

enum class GroupBy { kNone, kKnownVsUnknown };

GroupBy parse_group_by(std::string_view name);

struct EvaluateOptions {
  fs::path manifest;
  std::string split = "test";
  fs::path predictions;  // parsed dump or raw bulk file
  metrics::EvalOptions eval;
  GroupBy group_by = GroupBy::kNone;
  std::optional<fs::path> class_map;
  outparse::JsonCoords json_coords = outparse::JsonCoords::kNormalized1000;
  fs::path runs_dir = "runs";
};

/// Cases of the split joined with predictions. Every gt instance yields a
/// case; predictions for absent (image, class) pairs yield gt-free cases.
std::vector<metrics::GroundingCase> assemble_cases(
    const std::vector<dataset::GroundingInstance>& instances,
    const std::vector<ParsedCase>& parsed);

struct EvaluateResult {
  std::string run_id;
  fs::path run_dir;
  metrics::EvalReport report;
  bool reused = false;
};

/// Writes runs/<run_id>/{report.json, report.txt, cases.jsonl, run.json}
/// and prints the text report. The run id digests inputs and options; an
/// existing run directory is left untouched.
EvaluateResult cmd_evaluate(const EvaluateOptions& o, Streams io);

json case_to_json(std::size_t case_id, const metrics::GroundingCase& c,
                  const metrics::CaseDiagnostic& d);

/// Read access to run directories.
class RunStore {
 public:
  explicit RunStore(fs::path dir) : dir_(std::move(dir)) {}

  std::vector<json> list() const;  // run.json documents, sorted by run_id
  std::optional<json> run(std::string_view run_id) const;
  std::optional<json> report(std::string_view run_id) const;
  std::optional<std::string> report_text(std::string_view run_id) const;
  std::optional<json> case_record(std::string_view run_id,
                                  std::size_t case_id) const;
  const fs::path& dir() const { return dir_; }

 private:
  std::optional<fs::path> run_dir(std::string_view run_id) const;
  fs::path dir_;
};

struct ReportOptions {
  fs::path runs_dir = "runs";
  std::optional<std::string> run_id;  // empty: list runs
  bool json = false;
};

void cmd_report(const ReportOptions& o, Streams io);

}  // namespace k2s::pipeline
