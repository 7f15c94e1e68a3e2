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
#include <gtest/gtest.h>

#include <thread>

#include "httplib.h"
#include "k2s/pipeline.hpp"
#include "k2s/service.hpp"
#include "test_util.hpp"

namespace k2s::service {
namespace {

using test::Capture;
using test::data_dir;
using test::TempDir;

// Small JSON-schema checker covering the keywords the API document uses.
class SchemaChecker {
 public:
  explicit SchemaChecker(const json& root) : root_(root) {}

  std::vector<std::string> check(const json& value, const json& schema) const {
    std::vector<std::string> errs;
    walk(value, schema, "$", errs);
    return errs;
  }

 private:
  const json& resolve(const json& schema) const {
    if (!schema.contains("$ref")) return schema;
    const std::string ref = schema["$ref"].get<std::string>();
    return resolve(root_.at(json::json_pointer(ref.substr(1))));
  }

  static bool type_ok(const json& v, const std::string& t) {
    if (t == "object") return v.is_object();
    if (t == "array") return v.is_array();
    if (t == "string") return v.is_string();
    if (t == "boolean") return v.is_boolean();
    if (t == "integer") return v.is_number_integer();
    if (t == "number") return v.is_number();
    if (t == "null") return v.is_null();
    return false;
  }

  void walk(const json& v, const json& raw, const std::string& at,
            std::vector<std::string>& errs) const {
    const json& s = resolve(raw);
    if (s.contains("type")) {
      bool ok = false;
      if (s["type"].is_array()) {
        for (const auto& t : s["type"]) ok |= type_ok(v, t.get<std::string>());
      } else {
        ok = type_ok(v, s["type"].get<std::string>());
      }
      if (!ok) {
        errs.push_back(at + ": expected " + s["type"].dump() + ", got " + v.dump());
        return;
      }
    }
    if (s.contains("enum") &&
        std::find(s["enum"].begin(), s["enum"].end(), v) == s["enum"].end()) {
      errs.push_back(at + ": not in enum");
    }
    if (v.is_number()) {
      const double x = v.get<double>();
      if (s.contains("minimum") && x < s["minimum"].get<double>()) {
        errs.push_back(at + ": below minimum");
      }
      if (s.contains("maximum") && x > s["maximum"].get<double>()) {
        errs.push_back(at + ": above maximum");
      }
    }
    if (v.is_object()) {
      for (const auto& r : s.value("required", json::array())) {
        if (!v.contains(r.get<std::string>())) {
          errs.push_back(at + ": missing " + r.get<std::string>());
        }
      }
      if (s.contains("properties")) {
        for (const auto& [k, sub] : s["properties"].items()) {
          if (v.contains(k)) walk(v[k], sub, at + "." + k, errs);
        }
      }
    }
    if (v.is_array()) {
      if (s.contains("minItems") && v.size() < s["minItems"].get<std::size_t>()) {
        errs.push_back(at + ": too few items");
      }
      if (s.contains("maxItems") && v.size() > s["maxItems"].get<std::size_t>()) {
        errs.push_back(at + ": too many items");
      }
      if (s.contains("items")) {
        for (std::size_t i = 0; i < v.size(); ++i) {
          walk(v[i], s["items"], at + "[" + std::to_string(i) + "]", errs);
        }
      }
    }
  }

  const json& root_;
};

const json& schema_doc() {
  static const json doc = json::parse(read_text(K2S_SCHEMA_PATH));
  return doc;
}

// Validates a response body against the documented schema for the route.
void expect_conforms(const HttpResponse& r, const std::string& route,
                     const std::string& method) {
  const json& responses = schema_doc()["paths"][route][method]["responses"];
  const std::string status = std::to_string(r.status);
  ASSERT_TRUE(responses.contains(status)) << route << " undocumented status " << status;
  const json body = json::parse(r.body);
  const auto errs = SchemaChecker(schema_doc()).check(body, responses[status]["schema"]);
  for (const auto& e : errs) ADD_FAILURE() << route << " " << status << ": " << e;
}

knowledge::CandidatePool pool_for(const std::string& name) {
  knowledge::CandidatePool p;
  p.class_name = name;
  p.candidates = {name + " appears as a round opacity.",
                  name + " is seen in the lower zone.",
                  name + " has a well defined margin."};
  return p;
}

struct Fixture {
  TempDir tmp;
  ServiceConfig cfg;

  Fixture() {
    cfg.definitions = data_dir() / "vindr_definitions.json";
    cfg.pools_dir = tmp / "pools";
    cfg.ledger = tmp / "selections.jsonl";
    cfg.runs_dir = tmp / "runs";
    fs::create_directories(cfg.pools_dir);
    const knowledge::PoolStore pools(cfg.pools_dir);
    pools.save(pool_for("Cardiomegaly"));
    pools.save(pool_for("Nodule / Mass"));
  }
};

TEST(Schema, FileMatchesServedDocument) {
  EXPECT_EQ(schema_doc(), api_schema());
  Fixture f;
  Service svc(f.cfg);
  const auto r = svc.handle("GET", "/api/schema", "");
  EXPECT_EQ(r.status, 200);
  EXPECT_EQ(json::parse(r.body), api_schema());
}

TEST(Schema, CheckerRejectsBadDocuments) {
  const SchemaChecker c(schema_doc());
  const json ref = {{"$ref", "#/components/schemas/AttributePrompt"}};
  EXPECT_FALSE(c.check(json::object(), ref).empty());
  EXPECT_FALSE(c.check({{"class_name", "A"}, {"description", "d"}, {"selected_index", -1},
                        {"selected_by", "robot"}, {"timestamp", "t"}},
                       ref)
                   .empty());
  EXPECT_TRUE(c.check({{"class_name", "A"}, {"description", "d"}, {"selected_index", 0},
                       {"selected_by", "auto"}, {"timestamp", "t"}},
                      ref)
                  .empty());
}

TEST(Decode, PercentEscapes) {
  EXPECT_EQ(decode_segment("Nodule%20%2F%20Mass"), "Nodule / Mass");
  EXPECT_EQ(decode_segment("plain"), "plain");
  EXPECT_FALSE(decode_segment("bad%2").has_value());
  EXPECT_FALSE(decode_segment("bad%zz").has_value());
}

TEST(Routes, ClassesListsEveryDefinition) {
  Fixture f;
  Service svc(f.cfg);
  const auto r = svc.handle("GET", "/api/classes", "");
  ASSERT_EQ(r.status, 200);
  expect_conforms(r, "/api/classes", "get");
  const json body = json::parse(r.body);
  ASSERT_EQ(body.size(), 22u);
  int pools = 0;
  for (const auto& c : body) pools += c["has_pool"].get<bool>();
  EXPECT_EQ(pools, 2);
}

TEST(Routes, MissingDefinitionsGive503) {
  Fixture f;
  f.cfg.definitions = f.tmp / "absent.json";
  Service svc(f.cfg);
  for (const char* route : {"/api/classes", "/api/dictionary"}) {
    const auto r = svc.handle("GET", route, "");
    EXPECT_EQ(r.status, 503) << route;
    expect_conforms(r, route, "get");
  }
}

TEST(Routes, CandidatesAndNotFound) {
  Fixture f;
  Service svc(f.cfg);
  auto r = svc.handle("GET", "/api/classes/Cardiomegaly/candidates", "");
  ASSERT_EQ(r.status, 200);
  expect_conforms(r, "/api/classes/{name}/candidates", "get");
  EXPECT_EQ(json::parse(r.body)["candidates"].size(), 3u);

  r = svc.handle("GET", "/api/classes/Atelectasis/candidates", "");  // no pool
  EXPECT_EQ(r.status, 404);
  expect_conforms(r, "/api/classes/{name}/candidates", "get");
  EXPECT_EQ(svc.handle("GET", "/api/classes/Nope/candidates", "").status, 404);
  EXPECT_EQ(svc.handle("GET", "/api/classes/Cardiomegaly/selection", "").status, 404);
  EXPECT_EQ(svc.handle("GET", "/api/elsewhere", "").status, 404);
  EXPECT_EQ(svc.handle("GET", "/other", "").status, 404);
  EXPECT_EQ(svc.handle("GET", "/api/runs/deadbeef", "").status, 404);
  EXPECT_EQ(svc.handle("GET", "/api/classes/bad%zz/candidates", "").status, 400);
}

TEST(Routes, EncodedSlashInClassName) {
  Fixture f;
  Service svc(f.cfg);
  const auto r = svc.handle("GET", "/api/classes/Nodule%20%2F%20Mass/candidates", "");
  ASSERT_EQ(r.status, 200);
  EXPECT_EQ(json::parse(r.body)["class_name"], "Nodule / Mass");
  const auto s = svc.handle("POST", "/api/classes/Nodule%20%2F%20Mass/selection",
                            R"({"index": 2})");
  ASSERT_EQ(s.status, 200);
  EXPECT_EQ(json::parse(s.body)["description"], "Nodule / Mass has a well defined margin.");
}

TEST(Routes, SelectionValidatesBody) {
  Fixture f;
  Service svc(f.cfg);
  const std::string route = "/api/classes/Cardiomegaly/selection";
  for (const char* body : {"", "not json", "[]", R"({"idx": 1})", R"({"index": "1"})",
                           R"({"index": 1.5})"}) {
    const auto r = svc.handle("POST", route, body);
    EXPECT_EQ(r.status, 400) << body;
    expect_conforms(r, "/api/classes/{name}/selection", "post");
  }
  for (const char* body : {R"({"index": 3})", R"({"index": -1})"}) {
    const auto r = svc.handle("POST", route, body);
    ASSERT_EQ(r.status, 422) << body;
    expect_conforms(r, "/api/classes/{name}/selection", "post");
    EXPECT_EQ(json::parse(r.body)["bounds"], json({0, 2}));
  }
  EXPECT_EQ(svc.handle("POST", "/api/classes/Atelectasis/selection", R"({"index": 0})").status,
            404);
  EXPECT_EQ(svc.handle("DELETE", route, "").status, 405);
  EXPECT_FALSE(fs::exists(f.cfg.ledger) && !read_text(f.cfg.ledger).empty());
}

TEST(Routes, SelectionIsIdempotentAndLatestWins) {
  Fixture f;
  Service svc(f.cfg);
  const std::string route = "/api/classes/Cardiomegaly/selection";
  auto r = svc.handle("POST", route, R"({"index": 1})");
  ASSERT_EQ(r.status, 200);
  expect_conforms(r, "/api/classes/{name}/selection", "post");
  EXPECT_EQ(json::parse(r.body)["selected_by"], "human");
  svc.handle("POST", route, R"({"index": 1})");
  EXPECT_EQ(knowledge::SelectionLedger(f.cfg.ledger).entries().size(), 1u);

  svc.handle("POST", route, R"({"index": 0})");
  EXPECT_EQ(knowledge::SelectionLedger(f.cfg.ledger).entries().size(), 2u);
  r = svc.handle("GET", route, "");
  ASSERT_EQ(r.status, 200);
  expect_conforms(r, "/api/classes/{name}/selection", "get");
  EXPECT_EQ(json::parse(r.body)["selected_index"], 0);

  const json classes = json::parse(svc.handle("GET", "/api/classes", "").body);
  for (const auto& c : classes) {
    EXPECT_EQ(c["has_selection"].get<bool>(), c["class_name"] == "Cardiomegaly");
  }
}

TEST(Routes, DictionaryCoverage) {
  Fixture f;
  Service svc(f.cfg);
  svc.handle("POST", "/api/classes/Cardiomegaly/selection", R"({"index": 0})");
  const auto r = svc.handle("GET", "/api/dictionary", "");
  ASSERT_EQ(r.status, 200);
  expect_conforms(r, "/api/dictionary", "get");
  const json body = json::parse(r.body);
  EXPECT_FALSE(body["complete"].get<bool>());
  EXPECT_EQ(body["missing"].size(), 21u);
  EXPECT_EQ(body["entries"].size(), 1u);
}

// One image holding two boxes of one class, predicted exactly.
std::string make_run(const ServiceConfig& cfg, const TempDir& tmp) {
  write_text_atomic(tmp / "gt.csv",
                    "image_id,class_name,x_min,y_min,x_max,y_max,width,height,rater_id\n"
                    "two_box,Cardiomegaly,100,100,300,300,1000,1000,R1\n"
                    "two_box,Cardiomegaly,600,600,800,800,1000,1000,R1\n");
  Capture cap;
  pipeline::IngestOptions in;
  in.inputs = {{"test", tmp / "gt.csv"}};
  in.out = tmp / "manifest.json";
  pipeline::cmd_ingest(in, {cap.out, cap.err});
  const json pred = {{"image_id", "two_box"},
                     {"class_name", "Cardiomegaly"},
                     {"format", "loc"},
                     {"raw_output",
                      "Cardiomegaly <loc_100><loc_100><loc_300><loc_300>"
                      "Cardiomegaly <loc_600><loc_600><loc_800><loc_800>"}};
  write_text_atomic(tmp / "preds.jsonl", pred.dump() + "\n");
  pipeline::EvaluateOptions ev;
  ev.manifest = tmp / "manifest.json";
  ev.predictions = tmp / "preds.jsonl";
  ev.runs_dir = cfg.runs_dir;
  return pipeline::cmd_evaluate(ev, {cap.out, cap.err}).run_id;
}

TEST(Routes, RunsAndCaseOverlay) {
  Fixture f;
  const std::string id = make_run(f.cfg, f.tmp);
  Service svc(f.cfg);

  auto r = svc.handle("GET", "/api/runs", "");
  ASSERT_EQ(r.status, 200);
  expect_conforms(r, "/api/runs", "get");
  ASSERT_EQ(json::parse(r.body).size(), 1u);

  r = svc.handle("GET", "/api/runs/" + id, "");
  ASSERT_EQ(r.status, 200);
  expect_conforms(r, "/api/runs/{id}", "get");
  EXPECT_DOUBLE_EQ(json::parse(r.body)["report"]["rodeo"]["R_total"].get<double>(), 100.0);

  r = svc.handle("GET", "/api/runs/" + id + "/cases/0", "");
  ASSERT_EQ(r.status, 200);
  expect_conforms(r, "/api/runs/{id}/cases/{case_id}", "get");
  const json c = json::parse(r.body);
  EXPECT_EQ(c["gt"].size() + c["predictions"].size(), 4u);
  EXPECT_EQ(c["pairs"].size(), 2u);
  EXPECT_TRUE(c["unmatched_preds"].empty());
  EXPECT_TRUE(c["image"]["placeholder"].get<bool>());
  EXPECT_EQ(c["dims"]["width"], 1000);
  EXPECT_EQ(c["gt"][0], json({100.0, 100.0, 300.0, 300.0}));

  for (const char* bad : {"/cases/1", "/cases/x", "/cases/-1"}) {
    r = svc.handle("GET", "/api/runs/" + id + bad, "");
    EXPECT_EQ(r.status, 404) << bad;
    expect_conforms(r, "/api/runs/{id}/cases/{case_id}", "get");
  }
}

TEST(Routes, OverlayLinksImageWhenPresent) {
  Fixture f;
  const std::string id = make_run(f.cfg, f.tmp);
  fs::create_directories(f.tmp / "images");
  write_text_atomic(f.tmp / "images" / "two_box.png", "png");
  f.cfg.images_dir = f.tmp / "images";
  Service svc(f.cfg);
  const json c = json::parse(svc.handle("GET", "/api/runs/" + id + "/cases/0", "").body);
  EXPECT_EQ(c["image"]["url"], "/images/two_box.png");
  EXPECT_FALSE(c["image"]["placeholder"].get<bool>());
}

TEST(Socket, ServesOverLoopback) {
  Fixture f;
  f.cfg.port = 0;
  Service svc(f.cfg);
  const int port = svc.bind();
  ASSERT_GT(port, 0);
  std::thread t([&svc] { svc.listen(); });
  httplib::Client cli("127.0.0.1", port);
  cli.set_connection_timeout(5);
  auto res = cli.Get("/api/classes/Nodule%20%2F%20Mass/candidates");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  EXPECT_EQ(json::parse(res->body)["class_name"], "Nodule / Mass");
  res = cli.Post("/api/classes/Cardiomegaly/selection", R"({"index": 9})",
                 "application/json");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 422);
  res = cli.Get("/api/classes");
  ASSERT_TRUE(res);
  EXPECT_EQ(json::parse(res->body).size(), 22u);
  svc.stop();
  t.join();
}

}  // namespace
}  // namespace k2s::service
