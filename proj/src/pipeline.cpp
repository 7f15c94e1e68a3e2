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
#include "k2s/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numbers>
#include <ostream>
#include <random>
#include <set>
#include <sstream>

#include "k2s/error.hpp"

namespace k2s::pipeline {

namespace {

dataset::AnnotationFormat format_for(
    const fs::path& path, const std::optional<dataset::AnnotationFormat>& f) {
  if (f) return *f;
  return to_lower(path.extension().string()) == ".json"
             ? dataset::AnnotationFormat::kJson
             : dataset::AnnotationFormat::kCsv;
}

void require_file(const fs::path& path, const std::string& what) {
  if (!fs::is_regular_file(path)) {
    fail(ErrorKind::kNotFound, what + " not found: " + path.string());
  }
}

void ensure_parent(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
}

void write_jsonl(const fs::path& path, const std::vector<json>& rows) {
  std::string text;
  for (const auto& r : rows) {
    text += dump(r);
    text += '\n';
  }
  ensure_parent(path);
  write_text_atomic(path, text);
}

dataset::LoadResult load_checked(const fs::path& path,
                                 const std::optional<dataset::AnnotationFormat>& f,
                                 bool strict, Streams io) {
  require_file(path, "annotation file");
  auto result = dataset::load_annotations(path, format_for(path, f));
  for (const auto& e : result.errors) {
    io.err << path.string() << ":" << e.line << ": " << e.message << "\n";
  }
  if (strict && !result.errors.empty()) {
    fail(ErrorKind::kValidation, std::to_string(result.errors.size()) +
                                     " invalid row(s) in " + path.string());
  }
  return result;
}

const std::vector<dataset::GroundingInstance>& split_of(
    const dataset::Manifest& m, const std::string& split) {
  auto it = m.find(split);
  if (it == m.end()) {
    std::string have;
    for (const auto& [name, _] : m) have += " " + name;
    fail(ErrorKind::kValidation,
         "split '" + split + "' not in manifest (has:" + have + ")");
  }
  return it->second;
}

std::string read_first_line(const fs::path& path) {
  const std::string text = read_text(path);
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (!trim(line).empty()) return line;
  }
  return {};
}

std::optional<outparse::DiscardReason> reason_from_name(std::string_view name) {
  using R = outparse::DiscardReason;
  for (R r : {R::kIncompleteGroup, R::kOutOfVocab, R::kTrailingText,
              R::kBadObject, R::kBadBbox, R::kBadLabel, R::kTruncatedArray}) {
    if (outparse::reason_name(r) == name) return r;
  }
  return std::nullopt;
}

std::string key_of(std::string_view image_id, std::string_view class_name) {
  std::string k(image_id);
  k += '\x1f';
  k += class_name;
  return k;
}

// Shifts `box` by `distance` pixels along `angle`, trying the opposite and
// perpendicular directions when the shift leaves the image.
BoundingBox jitter_box(const BoundingBox& box, double distance, double angle,
                       const ImageDims& dims) {
  constexpr double kPi = std::numbers::pi;
  for (double turn : {0.0, kPi, 0.5 * kPi, 1.5 * kPi}) {
    const BoundingBox moved = translate(box, distance * std::cos(angle + turn),
                                        distance * std::sin(angle + turn));
    if (moved.x1 >= 0.0 && moved.y1 >= 0.0 && moved.x2 <= dims.width &&
        moved.y2 <= dims.height) {
      return moved;
    }
  }
  return clamp_to(translate(box, distance * std::cos(angle),
                            distance * std::sin(angle)),
                  dims);
}

json options_digest_material(const EvaluateOptions& o,
                             const std::optional<dataset::ClassMap>& map) {
  return {{"split", o.split},
          {"iou_thresholds", o.eval.iou_thresholds},
          {"ap_interp", std::string(metrics::ap_interp_name(o.eval.interp))},
          {"group_by", o.group_by == GroupBy::kNone ? "none" : "known_vs_unknown"},
          {"class_map", map ? map->to_json() : json()},
          {"json_coords", o.json_coords == outparse::JsonCoords::kPixels
                              ? "pixels"
                              : "normalized"}};
}

}  // namespace

std::pair<std::string, fs::path> parse_split_input(std::string_view spec) {
  const auto eq = spec.find('=');
  if (eq == std::string_view::npos || eq == 0 || eq + 1 == spec.size()) {
    fail(ErrorKind::kUsage,
         "expected SPLIT=PATH, got '" + std::string(spec) + "'");
  }
  std::string split(spec.substr(0, eq));
  if (!dataset::is_split_name(split)) {
    fail(ErrorKind::kUsage, "unknown split '" + split +
                                "' (expected train, test, zeroshot or ood)");
  }
  return {split, fs::path(std::string(spec.substr(eq + 1)))};
}

dataset::Manifest cmd_ingest(const IngestOptions& o, Streams io) {
  if (o.inputs.empty()) fail(ErrorKind::kUsage, "no annotation inputs given");
  if (!(o.wbf_iou > 0.0 && o.wbf_iou <= 1.0)) {
    fail(ErrorKind::kUsage, "--wbf-iou must lie in (0, 1]");
  }
  std::optional<dataset::ClassMap> map;
  if (o.class_map) {
    require_file(*o.class_map, "class map");
    map = dataset::ClassMap::from_json(read_json(*o.class_map));
  }
  dataset::Manifest manifest;
  io.out << std::left << std::setw(10) << "split" << std::right << std::setw(10)
         << "records" << std::setw(10) << "invalid" << std::setw(12)
         << "no-finding" << std::setw(10) << "pairs" << std::setw(10)
         << "classes" << "\n";
  for (const auto& [split, path] : o.inputs) {
    if (manifest.count(split)) {
      fail(ErrorKind::kUsage, "split '" + split + "' given more than once");
    }
    const auto loaded = load_checked(path, o.format, o.strict, io);
    auto instances = dataset::fuse_records(loaded.records, o.wbf_iou);
    io.out << std::left << std::setw(10) << split << std::right << std::setw(10)
           << loaded.records.size() << std::setw(10) << loaded.errors.size()
           << std::setw(12) << loaded.no_finding_rows << std::setw(10)
           << instances.size() << std::setw(10)
           << dataset::class_distribution(instances).size() << "\n";
    manifest[split] = std::move(instances);
  }
  if (map) {
    std::vector<dataset::GroundingInstance> all;
    for (const auto& [split, instances] : manifest) {
      all.insert(all.end(), instances.begin(), instances.end());
    }
    auto split = dataset::apply_class_map(all, *map);
    io.out << "class map: " << split.known.instances.size() << " known ("
           << dataset::class_distribution(split.known.instances).size()
           << " classes), " << split.unknown.instances.size() << " unknown ("
           << dataset::class_distribution(split.unknown.instances).size()
           << " classes)\n";
    manifest[split.known.name] = std::move(split.known.instances);
    manifest[split.unknown.name] = std::move(split.unknown.instances);
  }
  dataset::validate_manifest(manifest);
  std::size_t total = 0;
  for (const auto& [split, instances] : manifest) {
    if (split == "train" || split == "test") total += instances.size();
  }
  io.out << "total image-abnormality pairs (train + test): " << total << "\n";
  ensure_parent(o.out);
  write_text_atomic(o.out, dump(dataset::manifest_to_json(manifest), 1) + "\n");
  io.out << "manifest: " << o.out.string() << "\n";
  return manifest;
}

std::vector<dataset::GroundingInstance> cmd_fuse(const FuseOptions& o,
                                                 Streams io) {
  if (!(o.wbf_iou > 0.0 && o.wbf_iou <= 1.0)) {
    fail(ErrorKind::kUsage, "--wbf-iou must lie in (0, 1]");
  }
  const auto loaded = load_checked(o.annotations, o.format, false, io);
  auto instances = dataset::fuse_records(loaded.records, o.wbf_iou);
  std::size_t boxes = 0;
  std::vector<json> rows;
  for (const auto& inst : instances) {
    boxes += inst.fused_boxes.size();
    rows.push_back(dataset::instance_to_json(inst));
  }
  write_jsonl(o.out, rows);
  io.out << loaded.records.size() << " rater boxes -> " << boxes
         << " fused boxes in " << instances.size()
         << " image-abnormality pairs (wbf-iou " << o.wbf_iou << ")\n";
  return instances;
}

std::vector<knowledge::DecomposeOutcome> cmd_decompose(
    const DecomposeOptions& o, Streams io,
    std::shared_ptr<knowledge::LLMClient> client) {
  require_file(o.definitions, "definitions file");
  o.params.validate();
  const auto store = knowledge::DefinitionStore::load(o.definitions);
  const auto classes = o.classes.empty() ? store.class_names() : o.classes;
  if (!client) {
    switch (o.client) {
      case ClientMode::kStub:
        client = std::make_shared<knowledge::StubClient>();
        break;
      case ClientMode::kReplay:
        if (!o.transcript) fail(ErrorKind::kUsage, "--replay needs a transcript path");
        require_file(*o.transcript, "transcript");
        client = std::make_shared<knowledge::ReplayClient>(*o.transcript);
        break;
      case ClientMode::kHttp:
      case ClientMode::kRecord: {
        auto cfg = knowledge::HttpClientConfig::from_env();
        if (cfg.url.empty()) {
          fail(ErrorKind::kUsage,
               "no LLM endpoint configured: set K2S_LLM_URL or pass --stub");
        }
        auto http = std::make_shared<knowledge::HttpClient>(cfg);
        if (o.client == ClientMode::kRecord) {
          if (!o.transcript) fail(ErrorKind::kUsage, "--record needs a transcript path");
          client = std::make_shared<knowledge::RecordingClient>(http, *o.transcript);
        } else {
          client = http;
        }
        break;
      }
    }
  }
  fs::create_directories(o.pools_dir);
  DirLock lock(o.pools_dir);
  io.out << "client: " << client->name() << "\n";
  io.out << "generation params (temperature, top_p, repetition_penalty, "
            "max_tokens, n) = "
         << o.params.to_string() << "\n";
  const knowledge::PoolStore pools(o.pools_dir);
  auto outcomes = knowledge::decompose(store, classes, *client, o.params,
                                       o.retry, pools, o.seed, o.max_in_flight);
  std::size_t name_w = 5;
  for (const auto& c : classes) name_w = std::max(name_w, c.size());
  std::size_t failed = 0;
  for (const auto& r : outcomes) {
    for (const auto& w : r.warnings) io.err << "warning: " << w << "\n";
    io.out << std::left << std::setw(static_cast<int>(name_w)) << r.class_name
           << std::right << "  ";
    if (r.ok) {
      io.out << "ok      " << r.n_candidates << " candidate(s)\n";
    } else {
      ++failed;
      io.out << "FAILED  " << r.error << "\n";
    }
  }
  io.out << (outcomes.size() - failed) << "/" << outcomes.size()
         << " pools written to " << o.pools_dir.string() << "\n";
  if (failed > 0) {
    fail(ErrorKind::kEndpoint,
         std::to_string(failed) + " class(es) failed; completed pools kept");
  }
  return outcomes;
}

std::vector<knowledge::AttributePrompt> cmd_select(const SelectOptions& o,
                                                   Streams io) {
  const knowledge::PoolStore pools(o.pools_dir);
  auto load_pool = [&](const std::string& name) {
    auto pool = pools.load(name);
    if (!pool) {
      fail(ErrorKind::kNotFound, "no candidate pool for class '" + name +
                                     "' in " + o.pools_dir.string());
    }
    return *pool;
  };
  const fs::path ledger_dir =
      o.ledger.has_parent_path() ? o.ledger.parent_path() : fs::path(".");
  fs::create_directories(ledger_dir);
  DirLock lock(ledger_dir);
  knowledge::SelectionLedger ledger(o.ledger);
  std::vector<knowledge::AttributePrompt> out;
  auto report = [&](const knowledge::AttributePrompt& p) {
    io.out << p.class_name << " <- [" << p.selected_index << "] ("
           << knowledge::selector_name(p.selected_by) << ") " << p.description
           << "\n";
    out.push_back(p);
  };
  if (!o.auto_select) {
    if (!o.class_name || !o.index) {
      fail(ErrorKind::kUsage, "select needs --class and --index, or --auto-select");
    }
    report(knowledge::select_candidate(load_pool(*o.class_name), *o.index,
                                       knowledge::Selector::kHuman, ledger));
    return out;
  }
  if (o.index) fail(ErrorKind::kUsage, "--index conflicts with --auto-select");
  const auto lexicons = promptgen::Lexicons::shipped();
  std::vector<std::string> classes;
  if (o.class_name) {
    classes.push_back(*o.class_name);
  } else if (o.definitions) {
    require_file(*o.definitions, "definitions file");
    classes = knowledge::DefinitionStore::load(*o.definitions).class_names();
  } else {
    if (!fs::is_directory(o.pools_dir)) {
      fail(ErrorKind::kNotFound, "pool directory not found: " + o.pools_dir.string());
    }
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(o.pools_dir)) {
      if (e.path().extension() == ".json") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      classes.push_back(knowledge::CandidatePool::from_json(read_json(f)).class_name);
    }
  }
  const auto latest = ledger.latest();
  for (const auto& name : classes) {
    if (!o.class_name && latest.count(name)) continue;
    const auto pool = load_pool(name);
    report(knowledge::select_candidate(pool, knowledge::auto_select_index(pool, lexicons),
                                       knowledge::Selector::kAuto, ledger));
  }
  return out;
}

promptgen::PromptDictionary cmd_export_dict(const ExportOptions& o,
                                            Streams io) {
  std::vector<std::string> classes = o.classes;
  if (classes.empty()) {
    if (!o.definitions) {
      fail(ErrorKind::kUsage, "export-dict needs --definitions or --classes");
    }
    require_file(*o.definitions, "definitions file");
    classes = knowledge::DefinitionStore::load(*o.definitions).class_names();
  }
  const knowledge::SelectionLedger ledger(o.ledger);
  auto dict = knowledge::build_prompt_dictionary(ledger, classes);
  ensure_parent(o.out);
  write_text_atomic(o.out, dump(knowledge::dictionary_to_json(dict), 2) + "\n");
  io.out << dict.size() << " entries written to " << o.out.string() << "\n";
  return dict;
}

FormatChoice parse_format_choice(std::string_view name) {
  const std::string n = to_lower(name);
  if (n == "both") return FormatChoice::kBoth;
  return promptgen::parse_wire_format(n) == promptgen::WireFormat::kLocToken
             ? FormatChoice::kLoc
             : FormatChoice::kJson;
}

std::vector<fs::path> cmd_build_pairs(const BuildPairsOptions& o, Streams io) {
  require_file(o.manifest, "manifest");
  if (o.mask && !o.with_knowledge) {
    fail(ErrorKind::kUsage, "--mask applies to knowledge prompts; add --with-knowledge");
  }
  const auto manifest = dataset::load_manifest(o.manifest);
  const auto& instances = split_of(manifest, o.split);
  promptgen::PromptDictionary dict;
  if (o.with_knowledge) {
    if (!o.dictionary) fail(ErrorKind::kUsage, "--with-knowledge needs --dictionary");
    require_file(*o.dictionary, "prompt dictionary");
    dict = knowledge::load_prompt_dictionary(*o.dictionary);
  }
  const auto lexicons =
      o.lexicons ? promptgen::Lexicons::load(*o.lexicons) : promptgen::Lexicons::shipped();
  std::vector<std::pair<promptgen::WireFormat, fs::path>> targets;
  if (o.format == FormatChoice::kBoth) {
    const fs::path stem = o.out.parent_path() / o.out.stem();
    const std::string ext = o.out.extension().string();
    targets.push_back({promptgen::WireFormat::kLocToken, stem.string() + ".loc" + ext});
    targets.push_back({promptgen::WireFormat::kJsonBox, stem.string() + ".json" + ext});
  } else {
    targets.push_back({o.format == FormatChoice::kLoc ? promptgen::WireFormat::kLocToken
                                                      : promptgen::WireFormat::kJsonBox,
                       o.out});
  }
  std::vector<fs::path> written;
  for (const auto& [format, path] : targets) {
    promptgen::EvalSetOptions opts;
    opts.format = format;
    opts.with_knowledge = o.with_knowledge;
    opts.mask = o.mask;
    const auto pairs = promptgen::build_eval_set(instances, dict, opts, lexicons);
    std::vector<json> rows;
    rows.reserve(pairs.size());
    for (const auto& p : pairs) rows.push_back(promptgen::pair_to_json(p));
    write_jsonl(path, rows);
    io.out << pairs.size() << " " << promptgen::format_name(format)
           << " pairs from split '" << o.split << "' -> " << path.string() << "\n";
    written.push_back(path);
  }
  return written;
}

std::size_t cmd_stub_predict(const StubPredictOptions& o, Streams io) {
  require_file(o.pairs, "pairs file");
  if (!(o.jitter >= 0.0) || !std::isfinite(o.jitter)) {
    fail(ErrorKind::kUsage, "--jitter must be a non-negative number");
  }
  std::vector<json> rows;
  std::size_t line = 0;
  for (const json& j : read_jsonl(o.pairs)) {
    ++line;
    std::string image_id, class_name, answer, format_s;
    ImageDims dims;
    try {
      image_id = j.at("image_id").get<std::string>();
      class_name = j.at("class_name").get<std::string>();
      answer = j.at("answer").get<std::string>();
      format_s = j.at("format").get<std::string>();
      dims = {j.at("width").get<int>(), j.at("height").get<int>()};
    } catch (const json::exception& e) {
      fail(ErrorKind::kValidation, o.pairs.string() + ":" + std::to_string(line) +
                                       ": malformed pair: " + e.what());
    }
    validate(dims);
    const auto format = promptgen::parse_wire_format(format_s);
    const auto parsed = outparse::parse(answer, format);
    if (parsed.fatal || !parsed.discarded.empty()) {
      fail(ErrorKind::kValidation, o.pairs.string() + ":" + std::to_string(line) +
                                       ": answer does not parse cleanly");
    }
    std::mt19937_64 rng(o.seed ^ fnv1a64(key_of(image_id, class_name)));
    std::vector<QuantizedBox> boxes;
    for (const auto& p : parsed.predictions) {
      const QuantizedBox q{static_cast<int>(p.coords[0]), static_cast<int>(p.coords[1]),
                           static_cast<int>(p.coords[2]), static_cast<int>(p.coords[3])};
      const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
      if (o.jitter == 0.0) {
        boxes.push_back(q);
        continue;
      }
      const BoundingBox gt = dequantize(q, dims);
      const BoundingBox moved = jitter_box(gt, o.jitter * gt.diagonal(),
                                           2.0 * std::numbers::pi * u, dims);
      boxes.push_back(quantize(moved, dims));
    }
    rows.push_back({{"image_id", image_id},
                    {"class_name", class_name},
                    {"format", std::string(promptgen::format_name(format))},
                    {"raw_output", promptgen::render_answer(class_name, boxes, format)}});
  }
  write_jsonl(o.out, rows);
  io.out << rows.size() << " stub predictions (jitter " << o.jitter << ", seed "
         << o.seed << ") -> " << o.out.string() << "\n";
  return rows.size();
}

std::vector<RawPrediction> load_raw_predictions(const fs::path& path) {
  require_file(path, "predictions file");
  std::vector<RawPrediction> out;
  std::size_t line = 0;
  for (const json& j : read_jsonl(path)) {
    ++line;
    RawPrediction r;
    try {
      r.image_id = j.at("image_id").get<std::string>();
      r.class_name = j.at("class_name").get<std::string>();
      r.format = promptgen::parse_wire_format(j.at("format").get<std::string>());
      r.raw_output = j.at("raw_output").get<std::string>();
    } catch (const json::exception& e) {
      fail(ErrorKind::kValidation, path.string() + ":" + std::to_string(line) +
                                       ": expected {image_id, class_name, format, "
                                       "raw_output}: " + e.what());
    }
    out.push_back(std::move(r));
  }
  return out;
}

json parsed_case_to_json(const ParsedCase& c) {
  json preds = json::array();
  for (const auto& p : c.predictions) {
    preds.push_back({{"label", p.label},
                     {"box", p.box.coords()},
                     {"score", p.score},
                     {"rank", p.rank}});
  }
  json discards = json::array();
  for (const auto& d : c.discarded) {
    discards.push_back({{"begin", d.begin},
                        {"end", d.end},
                        {"reason", std::string(outparse::reason_name(d.reason))}});
  }
  json j = {{"image_id", c.image_id},
            {"class_name", c.class_name},
            {"width", c.dims.width},
            {"height", c.dims.height},
            {"predictions", preds},
            {"discarded", discards},
            {"warnings", c.warnings},
            {"fatal", c.fatal}};
  if (c.fatal) j["diagnostic"] = c.diagnostic;
  return j;
}

ParsedCase parsed_case_from_json(const json& j) {
  ParsedCase c;
  try {
    c.image_id = j.at("image_id").get<std::string>();
    c.class_name = j.at("class_name").get<std::string>();
    c.dims = {j.value("width", 0), j.value("height", 0)};
    for (const auto& p : j.at("predictions")) {
      const auto b = p.at("box").get<std::array<double, 4>>();
      outparse::NormalizedPrediction np;
      np.label = p.value("label", std::string());
      np.box = {b[0], b[1], b[2], b[3]};
      validate(np.box);
      np.score = p.value("score", 1.0);
      np.rank = p.value("rank", static_cast<int>(c.predictions.size()));
      c.predictions.push_back(std::move(np));
    }
    if (j.contains("discarded")) {
      for (const auto& d : j["discarded"]) {
        auto reason = reason_from_name(d.at("reason").get<std::string>());
        if (!reason) continue;
        c.discarded.push_back({d.at("begin").get<std::size_t>(),
                               d.at("end").get<std::size_t>(), *reason});
      }
    }
    if (j.contains("warnings")) {
      c.warnings = j["warnings"].get<std::vector<std::string>>();
    }
    c.fatal = j.value("fatal", false);
    c.diagnostic = j.value("diagnostic", std::string());
  } catch (const json::exception& e) {
    fail(ErrorKind::kValidation, std::string("malformed parsed prediction: ") + e.what());
  }
  return c;
}

std::map<std::string, ImageDims> manifest_dims(const dataset::Manifest& m) {
  std::map<std::string, ImageDims> dims;
  for (const auto& [split, instances] : m) {
    for (const auto& inst : instances) {
      auto [it, inserted] = dims.emplace(inst.image_id, inst.dims);
      if (!inserted && it->second != inst.dims) {
        fail(ErrorKind::kValidation,
             "image " + inst.image_id + " has inconsistent dimensions");
      }
    }
  }
  return dims;
}

std::vector<ParsedCase> parse_predictions(
    const std::vector<RawPrediction>& raw,
    const std::map<std::string, ImageDims>& dims,
    outparse::JsonCoords json_coords) {
  std::vector<std::string> unknown;
  for (const auto& r : raw) {
    if (!dims.count(r.image_id)) unknown.push_back(r.image_id);
  }
  if (!unknown.empty()) {
    fail(ErrorKind::kValidation, "predictions reference image(s) absent from the "
                                 "manifest, first: " + unknown.front());
  }
  std::vector<ParsedCase> out(raw.size());
  const auto n = static_cast<std::ptrdiff_t>(raw.size());
#pragma omp parallel for schedule(dynamic, 16)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto& r = raw[i];
    auto& c = out[i];
    c.image_id = r.image_id;
    c.class_name = r.class_name;
    c.dims = dims.at(r.image_id);
    const auto report = outparse::parse(r.raw_output, r.format);
    c.discarded = report.discarded;
    c.fatal = report.fatal;
    c.diagnostic = report.diagnostic;
    auto norm = outparse::normalize_predictions(report, c.dims, r.format, json_coords);
    c.predictions = std::move(norm.predictions);
    c.warnings = std::move(norm.warnings);
  }
  return out;
}

std::vector<ParsedCase> cmd_parse(const ParseOptions& o, Streams io) {
  require_file(o.manifest, "manifest");
  const auto dims = manifest_dims(dataset::load_manifest(o.manifest));
  const auto parsed =
      parse_predictions(load_raw_predictions(o.predictions), dims, o.json_coords);
  std::vector<json> rows;
  std::size_t n_pred = 0, n_discard = 0, n_fatal = 0;
  for (const auto& c : parsed) {
    n_pred += c.predictions.size();
    n_discard += c.discarded.size();
    n_fatal += c.fatal ? 1 : 0;
    for (const auto& w : c.warnings) {
      io.err << "warning: " << c.image_id << "/" << c.class_name << ": " << w << "\n";
    }
    if (c.fatal) {
      io.err << "warning: " << c.image_id << "/" << c.class_name << ": "
             << c.diagnostic << "\n";
    }
    rows.push_back(parsed_case_to_json(c));
  }
  write_jsonl(o.out, rows);
  io.out << parsed.size() << " outputs: " << n_pred << " boxes, " << n_discard
         << " discarded span(s), " << n_fatal << " unparsable -> "
         << o.out.string() << "\n";
  return parsed;
}

GroupBy parse_group_by(std::string_view name) {
  const std::string n = to_lower(name);
  if (n == "none" || n.empty()) return GroupBy::kNone;
  if (n == "known_vs_unknown" || n == "known-vs-unknown") return GroupBy::kKnownVsUnknown;
  fail(ErrorKind::kUsage, "unknown --group-by '" + std::string(name) +
                              "' (expected none or known_vs_unknown)");
}

std::vector<metrics::GroundingCase> assemble_cases(
    const std::vector<dataset::GroundingInstance>& instances,
    const std::vector<ParsedCase>& parsed) {
  std::map<std::string, std::size_t> by_key;
  for (std::size_t i = 0; i < parsed.size(); ++i) {
    if (!by_key.emplace(key_of(parsed[i].image_id, parsed[i].class_name), i).second) {
      fail(ErrorKind::kValidation, "duplicate predictions for " + parsed[i].image_id +
                                       " / " + parsed[i].class_name);
    }
  }
  auto fill = [](metrics::GroundingCase& gc, const ParsedCase& pc) {
    for (const auto& p : pc.predictions) {
      gc.preds.push_back({p.label, p.box, p.score, p.rank});
    }
    gc.parse_failed = pc.fatal;
  };
  std::vector<metrics::GroundingCase> cases;
  std::set<std::size_t> used;
  for (const auto& inst : instances) {
    metrics::GroundingCase gc;
    gc.image_id = inst.image_id;
    gc.class_name = inst.class_name;
    gc.gt = inst.fused_boxes;
    gc.dims = inst.dims;
    auto it = by_key.find(key_of(inst.image_id, inst.class_name));
    if (it != by_key.end()) {
      fill(gc, parsed[it->second]);
      used.insert(it->second);
    }
    cases.push_back(std::move(gc));
  }
  for (std::size_t i = 0; i < parsed.size(); ++i) {
    if (used.count(i)) continue;
    metrics::GroundingCase gc;
    gc.image_id = parsed[i].image_id;
    gc.class_name = parsed[i].class_name;
    gc.dims = parsed[i].dims;
    fill(gc, parsed[i]);
    cases.push_back(std::move(gc));
  }
  return cases;
}

json case_to_json(std::size_t case_id, const metrics::GroundingCase& c,
                  const metrics::CaseDiagnostic& d) {
  json gt = json::array();
  for (const auto& b : c.gt) gt.push_back(b.coords());
  json preds = json::array();
  for (const auto& p : c.preds) {
    preds.push_back({{"label", p.label},
                     {"box", p.box.coords()},
                     {"score", p.score},
                     {"rank", p.rank}});
  }
  json diag = metrics::case_diagnostic_to_json(d);
  return {{"case_id", case_id},
          {"image_id", c.image_id},
          {"class_name", c.class_name},
          {"width", c.dims.width},
          {"height", c.dims.height},
          {"gt", gt},
          {"predictions", preds},
          {"pairs", diag["pairs"]},
          {"unmatched_preds", diag["unmatched_preds"]},
          {"unmatched_gts", diag["unmatched_gts"]},
          {"parse_failed", c.parse_failed}};
}

EvaluateResult cmd_evaluate(const EvaluateOptions& o, Streams io) {
  require_file(o.manifest, "manifest");
  require_file(o.predictions, "predictions file");
  const auto manifest = dataset::load_manifest(o.manifest);
  const auto& instances = split_of(manifest, o.split);
  std::optional<dataset::ClassMap> map;
  if (o.group_by == GroupBy::kKnownVsUnknown) {
    if (!o.class_map) fail(ErrorKind::kUsage, "--group-by known_vs_unknown needs --class-map");
    require_file(*o.class_map, "class map");
    map = dataset::ClassMap::from_json(read_json(*o.class_map));
  }

  std::vector<ParsedCase> parsed;
  const bool raw = read_first_line(o.predictions).find("\"raw_output\"") != std::string::npos;
  if (raw) {
    parsed = parse_predictions(load_raw_predictions(o.predictions),
                               manifest_dims(manifest), o.json_coords);
  } else {
    for (const json& j : read_jsonl(o.predictions)) parsed.push_back(parsed_case_from_json(j));
  }
  const auto cases = assemble_cases(instances, parsed);

  EvaluateResult result;
  result.report = map ? metrics::evaluate_grouped(cases, o.eval, *map)
                      : metrics::evaluate(cases, o.eval);

  std::size_t n_pred = 0;
  for (const auto& c : cases) n_pred += c.preds.size();
  json report_json = metrics::report_to_json(result.report);
  std::vector<std::string> warnings;
  if (n_pred == 0) {
    warnings.push_back("zero parseable predictions: every metric is zero");
  }
  report_json["metadata"]["warnings"] = warnings;
  report_json["metadata"]["split"] = o.split;

  std::string material = dump(options_digest_material(o, map));
  material += '\x1e';
  material += dump(dataset::manifest_to_json({{o.split, instances}}));
  material += '\x1e';
  material += read_text(o.predictions);
  result.run_id = hex64(fnv1a64(material));
  result.run_dir = o.runs_dir / result.run_id;

  std::string text = metrics::render_text(result.report);
  for (const auto& w : warnings) text = "WARNING: " + w + "\n" + text;
  for (const auto& w : warnings) io.err << "WARNING: " << w << "\n";

  fs::create_directories(o.runs_dir);
  DirLock lock(o.runs_dir);
  if (fs::exists(result.run_dir / "run.json")) {
    result.reused = true;
  } else {
    fs::create_directories(result.run_dir);
    std::vector<json> rows;
    for (std::size_t i = 0; i < cases.size(); ++i) {
      rows.push_back(case_to_json(i, cases[i], result.report.diagnostics[i]));
    }
    write_jsonl(result.run_dir / "cases.jsonl", rows);
    write_text_atomic(result.run_dir / "report.json", dump(report_json, 2) + "\n");
    write_text_atomic(result.run_dir / "report.txt", text);
    json run = {{"run_id", result.run_id},
                {"created_at", knowledge::utc_timestamp()},
                {"config_digest", hex64(fnv1a64(dump(options_digest_material(o, map))))},
                {"config", options_digest_material(o, map)},
                {"inputs",
                 {{"manifest", o.manifest.string()},
                  {"predictions", o.predictions.string()}}},
                {"report", "report.json"},
                {"cases", "cases.jsonl"},
                {"n_cases", cases.size()}};
    write_text_atomic(result.run_dir / "run.json", dump(run, 2) + "\n");
  }
  io.out << text;
  io.out << "run: " << result.run_id << (result.reused ? " (existing)" : "") << " -> "
         << result.run_dir.string() << "\n";
  return result;
}

std::optional<fs::path> RunStore::run_dir(std::string_view run_id) const {
  if (run_id.empty() ||
      !std::all_of(run_id.begin(), run_id.end(),
                   [](char c) { return std::isalnum(static_cast<unsigned char>(c)); })) {
    return std::nullopt;
  }
  const fs::path p = dir_ / std::string(run_id);
  if (!fs::is_regular_file(p / "run.json")) return std::nullopt;
  return p;
}

std::vector<json> RunStore::list() const {
  std::vector<json> out;
  if (!fs::is_directory(dir_)) return out;
  std::vector<std::string> ids;
  for (const auto& e : fs::directory_iterator(dir_)) {
    if (e.is_directory()) ids.push_back(e.path().filename().string());
  }
  std::sort(ids.begin(), ids.end());
  for (const auto& id : ids) {
    if (auto r = run(id)) out.push_back(std::move(*r));
  }
  return out;
}

std::optional<json> RunStore::run(std::string_view run_id) const {
  auto d = run_dir(run_id);
  if (!d) return std::nullopt;
  return read_json(*d / "run.json");
}

std::optional<json> RunStore::report(std::string_view run_id) const {
  auto d = run_dir(run_id);
  if (!d) return std::nullopt;
  return read_json(*d / "report.json");
}

std::optional<std::string> RunStore::report_text(std::string_view run_id) const {
  auto d = run_dir(run_id);
  if (!d) return std::nullopt;
  return read_text(*d / "report.txt");
}

std::optional<json> RunStore::case_record(std::string_view run_id,
                                          std::size_t case_id) const {
  auto d = run_dir(run_id);
  if (!d) return std::nullopt;
  const auto rows = read_jsonl(*d / "cases.jsonl");
  if (case_id >= rows.size()) return std::nullopt;
  return rows[case_id];
}

void cmd_report(const ReportOptions& o, Streams io) {
  const RunStore store(o.runs_dir);
  if (!o.run_id) {
    const auto runs = store.list();
    if (o.json) {
      io.out << dump(json(runs), 2) << "\n";
      return;
    }
    for (const auto& r : runs) {
      io.out << r.value("run_id", std::string()) << "  "
             << r.value("created_at", std::string()) << "  "
             << r.value("n_cases", 0) << " cases\n";
    }
    if (runs.empty()) io.out << "no runs in " << o.runs_dir.string() << "\n";
    return;
  }
  if (o.json) {
    auto r = store.report(*o.run_id);
    if (!r) fail(ErrorKind::kNotFound, "no run '" + *o.run_id + "'");
    io.out << dump(*r, 2) << "\n";
  } else {
    auto t = store.report_text(*o.run_id);
    if (!t) fail(ErrorKind::kNotFound, "no run '" + *o.run_id + "'");
    io.out << *t;
  }
}

}  // namespace k2s::pipeline
