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

// k2s command-line entry point.
//
// Option values resolve as: command-line flag, then environment variable
// K2S_<OPTION> (upper case, '-' -> '_'), then the JSON file given by
// --config. The config file may hold top-level keys shared by every command
// and one object per subcommand, e.g. {"seed": 7, "evaluate": {"split": "test"}}.

#include <pthread.h>

#include <csignal>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <thread>

#include "CLI11.hpp"
#include "k2s/error.hpp"
#include "k2s/pipeline.hpp"
#include "k2s/service.hpp"

namespace {

using namespace k2s;

constexpr const char* kVersion = "0.1.0";

// One configurable option of a subcommand.
struct Binding {
  CLI::App* sub;
  std::string name;  // long name without dashes
  std::function<void(const std::string&)> apply;
};

class Registry {
 public:
  template <typename T>
  CLI::Option* option(CLI::App* sub, const std::string& name, T& var,
                      const std::string& help) {
    CLI::Option* opt = sub->add_option("--" + name, var, help);
    bindings_.push_back({sub, name, [opt](const std::string& v) { opt->default_val(v); }});
    return opt;
  }

  CLI::Option* flag(CLI::App* sub, const std::string& name, bool& var,
                    const std::string& help) {
    CLI::Option* opt = sub->add_flag("--" + name, var, help);
    bindings_.push_back({sub, name, [&var, name](const std::string& v) {
                           const std::string s = to_lower(v);
                           if (s == "1" || s == "true" || s == "yes" || s == "on") {
                             var = true;
                           } else if (s == "0" || s == "false" || s == "no" || s == "off" ||
                                      s.empty()) {
                             var = false;
                           } else {
                             fail(ErrorKind::kUsage, "--" + name + " expects a boolean, got '" +
                                                         v + "'");
                           }
                         }});
    return opt;
  }

  // Applies config-file values, then environment values, as defaults of the
  // selected subcommand. Command-line flags parsed afterwards win.
  void apply_defaults(CLI::App* sub, const json& config) const {
    for (const auto& b : bindings_) {
      if (b.sub != sub) continue;
      std::optional<std::string> value;
      auto take = [&](const json& scope) {
        if (!scope.is_object() || !scope.contains(b.name)) return;
        const json& v = scope[b.name];
        if (v.is_string()) {
          value = v.get<std::string>();
        } else if (v.is_array()) {
          std::string joined;
          for (const auto& e : v) {
            if (!joined.empty()) joined += ',';
            joined += e.is_string() ? e.get<std::string>() : e.dump();
          }
          value = joined;
        } else {
          value = v.dump();
        }
      };
      take(config);
      if (config.is_object() && config.contains(sub->get_name())) {
        take(config[sub->get_name()]);
      }
      std::string env = "K2S_";
      for (char c : b.name) env += c == '-' ? '_' : static_cast<char>(std::toupper(c));
      if (const char* e = std::getenv(env.c_str())) value = e;
      if (value) b.apply(*value);
    }
  }

 private:
  std::vector<Binding> bindings_;
};

std::optional<std::string> prescan_config(int argc, char** argv) {
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--config" && i + 1 < argc) return std::string(argv[i + 1]);
    if (a.rfind("--config=", 0) == 0) return a.substr(9);
  }
  return std::nullopt;
}

void need(const std::string& value, const std::string& flag) {
  if (value.empty()) fail(ErrorKind::kUsage, flag + " is required");
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream is(s);
  while (std::getline(is, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

int serve_blocking(service::ServiceConfig cfg, std::ostream& out) {
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);
  service::Service svc(cfg);
  const int port = svc.bind();
  if (port < 0) {
    fail(ErrorKind::kUsage, "cannot bind " + cfg.host + ":" + std::to_string(cfg.port));
  }
  out << "serving on http://" << cfg.host << ":" << port << "\n" << std::flush;
  std::thread waiter([&] {
    int sig = 0;
    sigwait(&set, &sig);
    svc.stop();
  });
  svc.listen();
  pthread_kill(waiter.native_handle(), SIGTERM);
  waiter.join();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"k2s: knowledge-guided abnormality grounding toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version",
                       std::string("{\"name\": \"k2s\", \"version\": \"") + kVersion + "\"}");
  std::string config_path;
  app.add_option("--config", config_path, "JSON config file (flags > env > config)");
  Registry reg;
  pipeline::Streams io{std::cout, std::cerr};

  // ingest
  auto* ingest = app.add_subcommand("ingest", "Load annotations, fuse rater boxes, write split manifest");
  std::vector<std::string> ingest_inputs;
  std::string ingest_format, ingest_class_map, ingest_out;
  double ingest_wbf = dataset::kDefaultWbfIou;
  bool ingest_strict = false;
  reg.option(ingest, "input", ingest_inputs, "SPLIT=PATH annotation file (repeatable)")->delimiter(',');
  reg.option(ingest, "format", ingest_format, "Annotation format: csv or json (default: by extension)");
  reg.option(ingest, "wbf-iou", ingest_wbf, "IoU threshold for weighted box fusion");
  reg.option(ingest, "class-map", ingest_class_map, "Class map JSON; adds zeroshot/ood splits");
  reg.option(ingest, "out", ingest_out, "Output manifest JSON");
  reg.flag(ingest, "strict", ingest_strict, "Fail on any invalid row");

  // fuse
  auto* fuse = app.add_subcommand("fuse", "Fuse rater boxes of one annotation file");
  std::string fuse_in, fuse_format, fuse_out;
  double fuse_wbf = dataset::kDefaultWbfIou;
  reg.option(fuse, "annotations", fuse_in, "Annotation file");
  reg.option(fuse, "format", fuse_format, "csv or json (default: by extension)");
  reg.option(fuse, "wbf-iou", fuse_wbf, "IoU threshold for weighted box fusion");
  reg.option(fuse, "out", fuse_out, "Output instances (JSON-lines)");

  // decompose
  auto* decompose = app.add_subcommand("decompose", "Generate candidate descriptions per class");
  std::string dec_defs, dec_pools, dec_classes, dec_replay, dec_record;
  knowledge::GenerationParams params;
  bool dec_stub = false;
  std::uint64_t dec_seed = 0;
  int dec_in_flight = 4;
  reg.option(decompose, "definitions", dec_defs, "Definition store JSON");
  reg.option(decompose, "pools", dec_pools, "Candidate pool directory");
  reg.option(decompose, "classes", dec_classes, "Comma-separated subset of classes");
  reg.option(decompose, "n-candidates", params.n, "Candidates per class");
  reg.option(decompose, "temperature", params.temperature, "Sampling temperature");
  reg.option(decompose, "top-p", params.top_p, "Nucleus sampling mass");
  reg.option(decompose, "repetition-penalty", params.repetition_penalty, "Repetition penalty");
  reg.option(decompose, "max-tokens", params.max_tokens, "Completion token limit");
  reg.flag(decompose, "stub", dec_stub, "Use the deterministic offline client");
  reg.option(decompose, "replay", dec_replay, "Serve completions from a transcript");
  reg.option(decompose, "record", dec_record, "Record live completions to a transcript");
  reg.option(decompose, "seed", dec_seed, "Seed for sampling requests");
  reg.option(decompose, "max-in-flight", dec_in_flight, "Concurrent requests");

  // select
  auto* select = app.add_subcommand("select", "Record a candidate selection (non-UI path)");
  std::string sel_pools, sel_ledger, sel_class, sel_defs;
  int sel_index = -1;
  bool sel_auto = false;
  reg.option(select, "pools", sel_pools, "Candidate pool directory");
  reg.option(select, "ledger", sel_ledger, "Selection ledger (JSON-lines)");
  reg.option(select, "class", sel_class, "Class name");
  auto* sel_index_opt = reg.option(select, "index", sel_index, "Candidate index");
  reg.flag(select, "auto-select", sel_auto, "Pick by attribute lexicon overlap");
  reg.option(select, "definitions", sel_defs, "Definition store (class order for --auto-select)");

  // export-dict
  auto* exportd = app.add_subcommand("export-dict", "Export the prompt dictionary");
  std::string exp_ledger, exp_defs, exp_classes, exp_out;
  reg.option(exportd, "ledger", exp_ledger, "Selection ledger");
  reg.option(exportd, "definitions", exp_defs, "Definition store (class set)");
  reg.option(exportd, "classes", exp_classes, "Comma-separated class set");
  reg.option(exportd, "out", exp_out, "Output dictionary JSON");

  // build-pairs
  auto* build = app.add_subcommand("build-pairs", "Build prompt/answer pairs for a split");
  std::string bp_manifest, bp_split = "train", bp_format = "loc", bp_dict, bp_mask,
                           bp_lex, bp_out;
  bool bp_knowledge = false;
  reg.option(build, "manifest", bp_manifest, "Split manifest");
  reg.option(build, "split", bp_split, "Split name");
  reg.option(build, "format", bp_format, "loc, json or both");
  reg.flag(build, "with-knowledge", bp_knowledge, "Use attribute descriptions");
  reg.option(build, "dictionary", bp_dict, "Prompt dictionary JSON");
  reg.option(build, "mask", bp_mask, "Mask one attribute: shape, intensity, density, location");
  reg.option(build, "lexicons", bp_lex, "Attribute lexicon JSON (default: shipped)");
  reg.option(build, "out", bp_out, "Output pairs (JSON-lines)");

  // stub-predict
  auto* stub = app.add_subcommand("stub-predict", "Seeded predictions from pair answers");
  std::string sp_pairs, sp_out;
  double sp_jitter = 0.0;
  std::uint64_t sp_seed = 0;
  reg.option(stub, "pairs", sp_pairs, "Pairs file");
  reg.option(stub, "jitter", sp_jitter, "Shift as a fraction of each box diagonal");
  reg.option(stub, "seed", sp_seed, "Random seed");
  reg.option(stub, "out", sp_out, "Output raw predictions (JSON-lines)");

  // parse
  auto* parse = app.add_subcommand("parse", "Parse raw model outputs into pixel boxes");
  std::string pa_preds, pa_manifest, pa_coords = "normalized", pa_out;
  reg.option(parse, "predictions", pa_preds, "Raw predictions (JSON-lines)");
  reg.option(parse, "manifest", pa_manifest, "Split manifest (image dimensions)");
  reg.option(parse, "json-coords", pa_coords, "JSON box units: normalized or pixels");
  reg.option(parse, "out", pa_out, "Output parsed predictions (JSON-lines)");

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "Score predictions: mAP family and RoDeO");
  std::string ev_manifest, ev_split = "test", ev_preds, ev_thr = "0.3,0.5,0.75",
                           ev_interp = "101", ev_group = "none", ev_map,
                           ev_coords = "normalized", ev_runs = "runs";
  reg.option(evaluate, "manifest", ev_manifest, "Split manifest");
  reg.option(evaluate, "split", ev_split, "Split to evaluate");
  reg.option(evaluate, "predictions", ev_preds, "Parsed or raw predictions");
  reg.option(evaluate, "iou-thresholds", ev_thr, "Comma-separated IoU thresholds");
  reg.option(evaluate, "ap-interp", ev_interp, "101 (101-point) or all (all-points)");
  reg.option(evaluate, "group-by", ev_group, "none or known_vs_unknown");
  reg.option(evaluate, "class-map", ev_map, "Class map for --group-by");
  reg.option(evaluate, "json-coords", ev_coords, "JSON box units for raw input");
  reg.option(evaluate, "runs-dir", ev_runs, "Run directory root");

  // report
  auto* report = app.add_subcommand("report", "Show a stored evaluation run");
  std::string rp_runs = "runs", rp_run;
  bool rp_json = false;
  reg.option(report, "runs-dir", rp_runs, "Run directory root");
  reg.option(report, "run", rp_run, "Run id (omit to list runs)");
  reg.flag(report, "json", rp_json, "Print report JSON");

  // serve
  auto* serve = app.add_subcommand("serve", "Serve the review API on loopback");
  service::ServiceConfig svc;
  std::string sv_defs, sv_pools, sv_ledger, sv_runs = "runs", sv_images, sv_ui;
  reg.option(serve, "definitions", sv_defs, "Definition store");
  reg.option(serve, "pools", sv_pools, "Candidate pool directory");
  reg.option(serve, "ledger", sv_ledger, "Selection ledger");
  reg.option(serve, "runs-dir", sv_runs, "Run directory root");
  reg.option(serve, "images-dir", sv_images, "Directory of <image_id>.png|jpg files");
  reg.option(serve, "ui-dir", sv_ui, "Static UI bundle served at /");
  reg.option(serve, "host", svc.host, "Bind address");
  reg.option(serve, "port", svc.port, "Port");

  try {
    json config = json::object();
    if (auto path = prescan_config(argc, argv)) {
      if (!fs::is_regular_file(*path)) fail(ErrorKind::kUsage, "config file not found: " + *path);
      const json doc = json::parse(read_text(*path), nullptr, false);
      if (doc.is_discarded() || !doc.is_object()) {
        fail(ErrorKind::kUsage, "config file is not a JSON object: " + *path);
      }
      config = doc;
    }
    for (int i = 1; i < argc; ++i) {
      for (CLI::App* sub : app.get_subcommands([](CLI::App*) { return true; })) {
        if (sub->get_name() == argv[i]) reg.apply_defaults(sub, config);
      }
    }
    try {
      app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
      return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
      return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
      return app.exit(e);
    } catch (const CLI::ParseError& e) {
      app.exit(e);
      return 1;
    }

    if (*ingest) {
      pipeline::IngestOptions o;
      for (const auto& s : ingest_inputs) o.inputs.push_back(pipeline::parse_split_input(s));
      if (!ingest_format.empty()) o.format = dataset::parse_annotation_format(ingest_format);
      o.wbf_iou = ingest_wbf;
      if (!ingest_class_map.empty()) o.class_map = ingest_class_map;
      need(ingest_out, "--out");
      o.out = ingest_out;
      o.strict = ingest_strict;
      pipeline::cmd_ingest(o, io);
    } else if (*fuse) {
      pipeline::FuseOptions o;
      need(fuse_in, "--annotations");
      need(fuse_out, "--out");
      o.annotations = fuse_in;
      if (!fuse_format.empty()) o.format = dataset::parse_annotation_format(fuse_format);
      o.wbf_iou = fuse_wbf;
      o.out = fuse_out;
      pipeline::cmd_fuse(o, io);
    } else if (*decompose) {
      pipeline::DecomposeOptions o;
      need(dec_defs, "--definitions");
      need(dec_pools, "--pools");
      o.definitions = dec_defs;
      o.pools_dir = dec_pools;
      o.classes = split_csv(dec_classes);
      o.params = params;
      const int modes = (dec_stub ? 1 : 0) + (dec_replay.empty() ? 0 : 1) +
                        (dec_record.empty() ? 0 : 1);
      if (modes > 1) fail(ErrorKind::kUsage, "--stub, --replay and --record are exclusive");
      if (dec_stub) {
        o.client = pipeline::ClientMode::kStub;
      } else if (!dec_replay.empty()) {
        o.client = pipeline::ClientMode::kReplay;
        o.transcript = dec_replay;
      } else if (!dec_record.empty()) {
        o.client = pipeline::ClientMode::kRecord;
        o.transcript = dec_record;
      }
      o.seed = dec_seed;
      o.max_in_flight = dec_in_flight;
      pipeline::cmd_decompose(o, io);
    } else if (*select) {
      pipeline::SelectOptions o;
      need(sel_pools, "--pools");
      need(sel_ledger, "--ledger");
      o.pools_dir = sel_pools;
      o.ledger = sel_ledger;
      if (!sel_class.empty()) o.class_name = sel_class;
      if (sel_index_opt->count() > 0 || sel_index >= 0) o.index = sel_index;
      o.auto_select = sel_auto;
      if (!sel_defs.empty()) o.definitions = sel_defs;
      pipeline::cmd_select(o, io);
    } else if (*exportd) {
      pipeline::ExportOptions o;
      need(exp_ledger, "--ledger");
      need(exp_out, "--out");
      o.ledger = exp_ledger;
      if (!exp_defs.empty()) o.definitions = exp_defs;
      o.classes = split_csv(exp_classes);
      o.out = exp_out;
      pipeline::cmd_export_dict(o, io);
    } else if (*build) {
      pipeline::BuildPairsOptions o;
      need(bp_manifest, "--manifest");
      need(bp_out, "--out");
      o.manifest = bp_manifest;
      o.split = bp_split;
      o.format = pipeline::parse_format_choice(bp_format);
      o.with_knowledge = bp_knowledge;
      if (!bp_dict.empty()) o.dictionary = bp_dict;
      if (!bp_mask.empty()) o.mask = promptgen::parse_attribute(bp_mask);
      if (!bp_lex.empty()) o.lexicons = bp_lex;
      o.out = bp_out;
      pipeline::cmd_build_pairs(o, io);
    } else if (*stub) {
      pipeline::StubPredictOptions o;
      need(sp_pairs, "--pairs");
      need(sp_out, "--out");
      o.pairs = sp_pairs;
      o.jitter = sp_jitter;
      o.seed = sp_seed;
      o.out = sp_out;
      pipeline::cmd_stub_predict(o, io);
    } else if (*parse) {
      pipeline::ParseOptions o;
      need(pa_preds, "--predictions");
      need(pa_manifest, "--manifest");
      need(pa_out, "--out");
      o.predictions = pa_preds;
      o.manifest = pa_manifest;
      o.json_coords = outparse::parse_json_coords(pa_coords);
      o.out = pa_out;
      pipeline::cmd_parse(o, io);
    } else if (*evaluate) {
      pipeline::EvaluateOptions o;
      need(ev_manifest, "--manifest");
      need(ev_preds, "--predictions");
      o.manifest = ev_manifest;
      o.split = ev_split;
      o.predictions = ev_preds;
      o.eval.iou_thresholds = metrics::parse_thresholds(ev_thr);
      o.eval.interp = metrics::parse_ap_interp(ev_interp);
      o.group_by = pipeline::parse_group_by(ev_group);
      if (!ev_map.empty()) o.class_map = ev_map;
      o.json_coords = outparse::parse_json_coords(ev_coords);
      o.runs_dir = ev_runs;
      pipeline::cmd_evaluate(o, io);
    } else if (*report) {
      pipeline::ReportOptions o;
      o.runs_dir = rp_runs;
      if (!rp_run.empty()) o.run_id = rp_run;
      o.json = rp_json;
      pipeline::cmd_report(o, io);
    } else if (*serve) {
      need(sv_defs, "--definitions");
      need(sv_pools, "--pools");
      need(sv_ledger, "--ledger");
      svc.definitions = sv_defs;
      svc.pools_dir = sv_pools;
      svc.ledger = sv_ledger;
      svc.runs_dir = sv_runs;
      if (!sv_images.empty()) svc.images_dir = sv_images;
      if (!sv_ui.empty()) svc.ui_dir = sv_ui;
      return serve_blocking(svc, std::cout);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
