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
#include "k2s/service.hpp"

#include <cctype>
#include <vector>

#include "httplib.h"
#include "k2s/error.hpp"
#include "k2s/pipeline.hpp"

namespace k2s::service {

extern const char* const kApiSchemaText;

namespace {

HttpResponse json_response(int status, const json& body) {
  return {status, "application/json", dump(body)};
}

HttpResponse error_response(int status, const std::string& message) {
  return json_response(status, {{"error", message}});
}

std::vector<std::string> split_path(std::string_view path) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < path.size()) {
    while (i < path.size() && path[i] == '/') ++i;
    if (i >= path.size()) break;
    const std::size_t j = path.find('/', i);
    out.emplace_back(path.substr(i, j == std::string_view::npos ? path.size() - i : j - i));
    i = j == std::string_view::npos ? path.size() : j;
  }
  return out;
}

int hex_value(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}

std::optional<std::size_t> parse_index(std::string_view s) {
  if (s.empty() || s.size() > 9) return std::nullopt;
  std::size_t v = 0;
  for (char c : s) {
    if (!std::isdigit(static_cast<unsigned char>(c))) return std::nullopt;
    v = v * 10 + static_cast<std::size_t>(c - '0');
  }
  return v;
}

std::optional<std::string> find_image(const fs::path& dir, const std::string& image_id) {
  if (image_id.find('/') != std::string::npos || image_id.find("..") != std::string::npos) {
    return std::nullopt;
  }
  for (const char* ext : {".png", ".jpg", ".jpeg"}) {
    const std::string file = image_id + ext;
    if (fs::is_regular_file(dir / file)) return file;
  }
  return std::nullopt;
}

}  // namespace

const json& api_schema() {
  static const json schema = json::parse(kApiSchemaText);
  return schema;
}

std::optional<std::string> decode_segment(std::string_view s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] != '%') {
      out.push_back(s[i]);
      continue;
    }
    if (i + 2 >= s.size()) return std::nullopt;
    const int hi = hex_value(s[i + 1]);
    const int lo = hex_value(s[i + 2]);
    if (hi < 0 || lo < 0) return std::nullopt;
    out.push_back(static_cast<char>(hi * 16 + lo));
    i += 2;
  }
  return out;
}

Service::Service(ServiceConfig config)
    : config_(std::move(config)), ledger_(config_.ledger) {}

Service::~Service() { stop(); }

std::optional<knowledge::DefinitionStore> Service::load_store() const {
  if (!fs::is_regular_file(config_.definitions)) return std::nullopt;
  return knowledge::DefinitionStore::load(config_.definitions);
}

HttpResponse Service::handle(std::string_view method, std::string_view target,
                             std::string_view body) {
  const std::string_view path = target.substr(0, target.find('?'));
  std::vector<std::string> seg;
  for (const auto& raw : split_path(path)) {
    auto d = decode_segment(raw);
    if (!d) return error_response(400, "malformed percent-encoding in path");
    seg.push_back(std::move(*d));
  }
  if (seg.empty() || seg[0] != "api") return error_response(404, "not found");
  const bool get = method == "GET";
  const bool post = method == "POST";
  try {
    if (seg.size() == 2 && seg[1] == "schema" && get) {
      return json_response(200, api_schema());
    }
    if (seg.size() == 2 && seg[1] == "classes" && get) return classes();
    if (seg.size() == 2 && seg[1] == "dictionary" && get) return dictionary();
    if (seg.size() == 4 && seg[1] == "classes" && seg[3] == "candidates" && get) {
      return candidates(seg[2]);
    }
    if (seg.size() == 4 && seg[1] == "classes" && seg[3] == "selection") {
      if (get) return get_selection(seg[2]);
      if (post) return post_selection(seg[2], body);
      return error_response(405, "method not allowed");
    }
    if (seg.size() == 2 && seg[1] == "runs" && get) return runs();
    if (seg.size() == 3 && seg[1] == "runs" && get) return run(seg[2]);
    if (seg.size() == 5 && seg[1] == "runs" && seg[3] == "cases" && get) {
      return case_overlay(seg[2], seg[4]);
    }
  } catch (const Error& e) {
    return error_response(e.kind() == ErrorKind::kNotFound ? 404 : 500, e.what());
  } catch (const std::exception& e) {
    return error_response(500, e.what());
  }
  return error_response(404, "no route for " + std::string(method) + " " +
                                 std::string(path));
}

HttpResponse Service::classes() {
  const auto store = load_store();
  if (!store) return error_response(503, "definition store not available");
  const auto latest = ledger_.latest();
  const knowledge::PoolStore pools(config_.pools_dir);
  json out = json::array();
  for (const auto& d : store->definitions()) {
    out.push_back({{"class_name", d.class_name},
                   {"definition", d.definition},
                   {"source", d.source},
                   {"has_pool", pools.load(d.class_name).has_value()},
                   {"has_selection", latest.count(d.class_name) > 0}});
  }
  return json_response(200, out);
}

HttpResponse Service::candidates(const std::string& name) {
  const auto store = load_store();
  if (!store) return error_response(503, "definition store not available");
  if (!store->find(name)) return error_response(404, "unknown class '" + name + "'");
  const auto pool = knowledge::PoolStore(config_.pools_dir).load(name);
  if (!pool) return error_response(404, "no candidate pool for '" + name + "'");
  return json_response(200, pool->to_json());
}

HttpResponse Service::get_selection(const std::string& name) {
  const auto sel = ledger_.latest(name);
  if (!sel) return error_response(404, "no selection for '" + name + "'");
  return json_response(200, sel->to_json());
}

HttpResponse Service::post_selection(const std::string& name, std::string_view body) {
  const auto store = load_store();
  if (!store) return error_response(503, "definition store not available");
  if (!store->find(name)) return error_response(404, "unknown class '" + name + "'");
  const auto pool = knowledge::PoolStore(config_.pools_dir).load(name);
  if (!pool) return error_response(404, "no candidate pool for '" + name + "'");
  const json req = json::parse(body, nullptr, false);
  if (req.is_discarded() || !req.is_object() || !req.contains("index") ||
      !req["index"].is_number_integer()) {
    return error_response(400, "body must be {\"index\": <integer>}");
  }
  const auto index = req["index"].get<long long>();
  const auto size = static_cast<long long>(pool->candidates.size());
  if (index < 0 || index >= size) {
    return json_response(422, {{"error", "index " + std::to_string(index) +
                                             " out of range"},
                               {"bounds", {0, size - 1}}});
  }
  const auto stored = knowledge::select_candidate(
      *pool, static_cast<int>(index), knowledge::Selector::kHuman, ledger_);
  return json_response(200, stored.to_json());
}

HttpResponse Service::dictionary() {
  const auto store = load_store();
  if (!store) return error_response(503, "definition store not available");
  const auto latest = ledger_.latest();
  promptgen::PromptDictionary dict;
  json missing = json::array();
  for (const auto& name : store->class_names()) {
    auto it = latest.find(name);
    if (it == latest.end()) {
      missing.push_back(name);
    } else {
      dict[name] = it->second.description;
    }
  }
  json out = knowledge::dictionary_to_json(dict);
  out["complete"] = missing.empty();
  out["missing"] = missing;
  return json_response(200, out);
}

HttpResponse Service::runs() {
  return json_response(200, json(pipeline::RunStore(config_.runs_dir).list()));
}

HttpResponse Service::run(const std::string& id) {
  const pipeline::RunStore store(config_.runs_dir);
  auto r = store.run(id);
  auto report = store.report(id);
  if (!r || !report) return error_response(404, "unknown run '" + id + "'");
  return json_response(200, {{"run", *r}, {"report", *report}});
}

HttpResponse Service::case_overlay(const std::string& id, const std::string& case_id) {
  const pipeline::RunStore store(config_.runs_dir);
  if (!store.run(id)) return error_response(404, "unknown run '" + id + "'");
  const auto index = parse_index(case_id);
  if (!index) return error_response(404, "unknown case '" + case_id + "'");
  auto rec = store.case_record(id, *index);
  if (!rec) return error_response(404, "unknown case '" + case_id + "'");
  const std::string image_id = rec->value("image_id", std::string());
  json image = {{"url", nullptr}, {"placeholder", true}};
  if (config_.images_dir) {
    if (auto file = find_image(*config_.images_dir, image_id)) {
      image = {{"url", "/images/" + *file}, {"placeholder", false}};
    }
  }
  json out = {{"run_id", id},
              {"case_id", *index},
              {"image_id", image_id},
              {"class_name", rec->value("class_name", std::string())},
              {"dims", {{"width", rec->value("width", 0)}, {"height", rec->value("height", 0)}}},
              {"image", image},
              {"gt", (*rec)["gt"]},
              {"predictions", (*rec)["predictions"]},
              {"pairs", (*rec)["pairs"]},
              {"unmatched_preds", (*rec)["unmatched_preds"]},
              {"unmatched_gts", (*rec)["unmatched_gts"]},
              {"parse_failed", rec->value("parse_failed", false)}};
  return json_response(200, out);
}

int Service::bind() {
  server_ = std::make_unique<httplib::Server>();
  // Method handlers, not the pre-routing hook: the body is read only for these.
  const auto api = [this](const httplib::Request& req, httplib::Response& res) {
    const std::string& target = req.target.empty() ? req.path : req.target;
    const HttpResponse r = handle(req.method, target, req.body);
    res.status = r.status;
    res.set_content(r.body, r.content_type);
  };
  const std::string pattern = R"(/api(/.*)?)";
  server_->Get(pattern, api);
  server_->Post(pattern, api);
  server_->Put(pattern, api);
  server_->Delete(pattern, api);
  if (config_.images_dir && fs::is_directory(*config_.images_dir)) {
    server_->set_mount_point("/images", config_.images_dir->string());
  }
  if (config_.ui_dir && fs::is_directory(*config_.ui_dir)) {
    server_->set_mount_point("/", config_.ui_dir->string());
  }
  if (config_.port == 0) return server_->bind_to_any_port(config_.host);
  return server_->bind_to_port(config_.host, config_.port) ? config_.port : -1;
}

void Service::listen() {
  if (server_) server_->listen_after_bind();
}

void Service::stop() {
  if (server_) server_->stop();
}

}  // namespace k2s::service
