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
#include <httplib.h>

#include <atomic>
#include <set>
#include <thread>

#include "k2s/knowledge.hpp"
#include "test_util.hpp"

namespace k2s::knowledge {
namespace {

using test::data_dir;
using test::TempDir;

RetryPolicy no_sleep(int attempts = 3, std::vector<long>* slept = nullptr) {
  RetryPolicy p;
  p.attempts = attempts;
  p.sleep = [slept](std::chrono::milliseconds d) {
    if (slept) slept->push_back(static_cast<long>(d.count()));
  };
  return p;
}

DefinitionStore vindr_store() {
  return DefinitionStore::load(data_dir() / "vindr_definitions.json");
}

// Fails with a scripted sequence of errors, then answers.
class ScriptedClient : public LLMClient {
 public:
  explicit ScriptedClient(std::vector<std::optional<bool>> script)
      : script_(std::move(script)) {}
  std::string complete(const CompletionRequest&) override {
    const std::size_t i = calls_++;
    if (i < script_.size() && script_[i]) {
      throw TransportError("scripted failure " + std::to_string(i), *script_[i], 503);
    }
    return "A rounded opacity with smooth margins in the lung.";
  }
  std::string name() const override { return "scripted"; }
  std::size_t calls() const { return calls_; }

 private:
  std::vector<std::optional<bool>> script_;
  std::atomic<std::size_t> calls_{0};
};

// Refuses one class, stubs the rest.
class OneClassDown : public LLMClient {
 public:
  explicit OneClassDown(std::string bad) : bad_(std::move(bad)) {}
  std::string complete(const CompletionRequest& r) override {
    if (r.class_name == bad_) throw TransportError("down", false);
    return stub_.complete(r);
  }
  std::string name() const override { return "flaky"; }

 private:
  std::string bad_;
  StubClient stub_;
};

// OpenAI-style server on an ephemeral port.
class FakeEndpoint {
 public:
  explicit FakeEndpoint(std::function<void(const httplib::Request&, httplib::Response&)> h) {
    svr_.Post(R"(/.*)", [this, h](const httplib::Request& req, httplib::Response& res) {
      paths_.push_back(req.path);
      bodies_.push_back(req.body);
      h(req, res);
    });
    port_ = svr_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { svr_.listen_after_bind(); });
    svr_.wait_until_ready();
  }
  ~FakeEndpoint() {
    svr_.stop();
    thread_.join();
  }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }
  const std::vector<std::string>& paths() const { return paths_; }
  const std::vector<std::string>& bodies() const { return bodies_; }

 private:
  httplib::Server svr_;
  int port_ = 0;
  std::thread thread_;
  std::vector<std::string> paths_, bodies_;
};

void reply_with(httplib::Response& res, const std::string& content) {
  res.set_content(dump(json{{"choices", {{{"message", {{"role", "assistant"},
                                                       {"content", content}}}}}}}),
                  "application/json");
}

CompletionRequest sample_request() {
  CompletionRequest r;
  r.class_name = "Edema";
  r.prompt = "p";
  r.sample_index = 2;
  r.seed = 42;
  return r;
}

TEST(Definitions, ShippedVindrFileHasAllClasses) {
  const auto store = vindr_store();
  EXPECT_EQ(store.size(), 22u);
  ASSERT_NE(store.find("Lung Opacity"), nullptr);
  EXPECT_EQ(store.find("Unicorn"), nullptr);
  EXPECT_EQ(DefinitionStore::from_json(store.to_json()).class_names(), store.class_names());
}

TEST(Definitions, RejectsDuplicatesAndEmptyText) {
  EXPECT_THROW(DefinitionStore::from_json(json::parse(
                   R"([{"class_name":"A","definition":"x"},{"class_name":"A","definition":"y"}])")),
               Error);
  EXPECT_THROW(DefinitionStore::from_json(json::parse(R"([{"class_name":"A","definition":" "}])")),
               Error);
  EXPECT_THROW(DefinitionStore::from_json(json::parse(R"([{"definition":"x"}])")), Error);
}

TEST(RenderPrompt, GoldenText) {
  const auto p = render_prompt({"Lung Opacity", "An area of increased attenuation in the lung.", ""});
  EXPECT_EQ(p.class_name, "Lung Opacity");
  EXPECT_EQ(p.rendered_text,
            "Here is the medical definition of Lung Opacity: \"An area of increased "
            "attenuation in the lung.\" Based on this definition, and focusing on shape, "
            "intensity, density, and location, provide a concise visual description that "
            "could guide image recognition.");
}

TEST(RenderPrompt, RejectsBadInput) {
  EXPECT_THROW(render_prompt({"", "def", ""}), Error);
  EXPECT_THROW(render_prompt({"  ", "def", ""}), Error);
  EXPECT_THROW(render_prompt({"A \"quoted\" name", "def", ""}), Error);
  EXPECT_THROW(render_prompt({"Edema", "", ""}), Error);
}

TEST(RenderPrompt, DistinctDefinitionsGiveDistinctPrompts) {
  const auto store = vindr_store();
  std::set<std::string> seen;
  for (const auto& d : store.definitions()) seen.insert(render_prompt(d).rendered_text);
  EXPECT_EQ(seen.size(), store.size());
}

TEST(GenerationParams, DefaultsAndSerialization) {
  const GenerationParams p;
  EXPECT_EQ(p.to_string(), "(0.7, 0.7, 1.1, 1024, 5)");
  EXPECT_EQ(dump(p.to_json()),
            R"({"max_tokens":1024,"n":5,"repetition_penalty":1.1,"temperature":0.7,"top_p":0.7})");
  EXPECT_EQ(GenerationParams::from_json(p.to_json()).to_json(), p.to_json());
  GenerationParams bad;
  bad.top_p = 0.0;
  EXPECT_THROW(bad.validate(), Error);
  bad = {};
  bad.n = 0;
  EXPECT_THROW(bad.validate(), Error);
}

TEST(CleanCandidate, StripsDecoration) {
  EXPECT_EQ(clean_candidate("**Visual description:** A rounded dense opacity in the hilum."),
            "A rounded dense opacity in the hilum.");
  EXPECT_EQ(clean_candidate("```\nHazy opacity obscuring the costophrenic angle.\n```"),
            "Hazy opacity obscuring the costophrenic angle.");
  EXPECT_EQ(clean_candidate("Candidate 2: Linear band of scarring at the apex."),
            "Linear band of scarring at the apex.");
  EXPECT_EQ(clean_candidate("- Wedge shaped density at the base. Additional findings may include"),
            "Wedge shaped density at the base.");
  EXPECT_EQ(clean_candidate("\"Blunted angle with a meniscus of fluid.\""),
            "Blunted angle with a meniscus of fluid.");
}

TEST(CleanCandidate, DropsRefusalsAndShortText) {
  EXPECT_FALSE(clean_candidate(""));
  EXPECT_FALSE(clean_candidate("Too short here."));
  EXPECT_FALSE(clean_candidate("I'm sorry, but I cannot describe medical images for you."));
  EXPECT_FALSE(clean_candidate("As an AI model I will not provide a description here."));
}

TEST(StubClient, FixedResponsesCycle) {
  StubClient stub({"one", "two"});
  auto r = sample_request();
  r.sample_index = 0;
  EXPECT_EQ(stub.complete(r), "one");
  r.sample_index = 3;
  EXPECT_EQ(stub.complete(r), "two");
}

TEST(StubClient, SynthesisIsDeterministic) {
  StubClient a, b;
  const auto r = sample_request();
  EXPECT_EQ(a.complete(r), b.complete(r));
  const auto cleaned = clean_candidate(a.complete(r));
  ASSERT_TRUE(cleaned.has_value());
}

TEST(Retry, RetryableFailuresBackOffAndRecover) {
  ScriptedClient c({true, true});
  std::vector<long> slept;
  const std::string out = complete_with_retry(c, sample_request(), no_sleep(3, &slept));
  EXPECT_FALSE(out.empty());
  EXPECT_EQ(c.calls(), 3u);
  EXPECT_EQ(slept, (std::vector<long>{1000, 2000}));
}

TEST(Retry, NonRetryableFailsImmediately) {
  ScriptedClient c({false});
  EXPECT_THROW(complete_with_retry(c, sample_request(), no_sleep()), TransportError);
  EXPECT_EQ(c.calls(), 1u);
}

TEST(Retry, ExhaustionReportsEveryAttempt) {
  ScriptedClient c({true, true, true, true});
  try {
    complete_with_retry(c, sample_request(), no_sleep(3));
    FAIL() << "expected failure";
  } catch (const TransportError& e) {
    const std::string msg = e.what();
    EXPECT_EQ(e.kind(), ErrorKind::kEndpoint);
    EXPECT_NE(msg.find("after 3 attempt(s)"), std::string::npos);
    EXPECT_NE(msg.find("attempt 1"), std::string::npos);
    EXPECT_NE(msg.find("attempt 3"), std::string::npos);
  }
  EXPECT_EQ(c.calls(), 3u);
}

TEST(HttpClient, PostsChatCompletionAndReadsContent) {
  FakeEndpoint ep([](const httplib::Request&, httplib::Response& res) {
    reply_with(res, "A rounded opacity.");
  });
  HttpClient client({ep.url(), "secret", "model-x", 5});
  EXPECT_EQ(client.complete(sample_request()), "A rounded opacity.");
  ASSERT_EQ(ep.paths().size(), 1u);
  EXPECT_EQ(ep.paths()[0], "/v1/chat/completions");
  const json body = json::parse(ep.bodies()[0]);
  EXPECT_EQ(body["model"], "model-x");
  EXPECT_DOUBLE_EQ(body["temperature"].get<double>(), 0.7);
  EXPECT_DOUBLE_EQ(body["top_p"].get<double>(), 0.7);
  EXPECT_DOUBLE_EQ(body["repetition_penalty"].get<double>(), 1.1);
  EXPECT_EQ(body["max_tokens"], 1024);
  EXPECT_EQ(body["messages"][0]["content"], "p");
  EXPECT_EQ(body["seed"], 42u);
}

TEST(HttpClient, FullPathUsedVerbatim) {
  FakeEndpoint ep([](const httplib::Request&, httplib::Response& res) { reply_with(res, "x"); });
  HttpClient client({ep.url() + "/api/chat/completions/", "", "", 5});
  client.complete(sample_request());
  EXPECT_EQ(ep.paths().at(0), "/api/chat/completions");
}

TEST(HttpClient, ServerErrorsRetriedThenSucceed) {
  std::atomic<int> hits{0};
  FakeEndpoint ep([&](const httplib::Request&, httplib::Response& res) {
    if (hits++ < 2) {
      res.status = 503;
      return;
    }
    reply_with(res, "Recovered answer after retries.");
  });
  HttpClient client({ep.url(), "", "", 5});
  std::vector<long> slept;
  EXPECT_EQ(complete_with_retry(client, sample_request(), no_sleep(3, &slept)),
            "Recovered answer after retries.");
  EXPECT_EQ(hits.load(), 3);
  EXPECT_EQ(slept.size(), 2u);
}

TEST(HttpClient, ClientErrorsAndMalformedRepliesAreFinal) {
  FakeEndpoint ep([](const httplib::Request& req, httplib::Response& res) {
    if (req.path.find("bad") != std::string::npos) {
      res.set_content("not json", "text/plain");
    } else {
      res.status = 401;
    }
  });
  HttpClient denied({ep.url(), "", "", 5});
  try {
    denied.complete(sample_request());
    FAIL();
  } catch (const TransportError& e) {
    EXPECT_FALSE(e.retryable());
    EXPECT_EQ(e.status(), 401);
  }
  HttpClient garbled({ep.url() + "/bad", "", "", 5});
  try {
    garbled.complete(sample_request());
    FAIL();
  } catch (const TransportError& e) {
    EXPECT_FALSE(e.retryable());
  }
}

TEST(HttpClient, UnreachableEndpointIsRetryable) {
  int port = 0;
  {
    httplib::Server probe;
    port = probe.bind_to_any_port("127.0.0.1");
  }
  HttpClient client({"http://127.0.0.1:" + std::to_string(port), "", "", 2});
  try {
    client.complete(sample_request());
    FAIL();
  } catch (const TransportError& e) {
    EXPECT_TRUE(e.retryable());
  }
}

TEST(HttpClient, RejectsNonHttpUrl) {
  EXPECT_THROW(HttpClient({"ftp://example.org", "", "", 5}), Error);
  EXPECT_THROW(HttpClient({"localhost:8000", "", "", 5}), Error);
}

TEST(Transcript, RecordThenReplayReproducesResponses) {
  TempDir tmp;
  const fs::path log = tmp / "t.jsonl";
  auto inner = std::make_shared<StubClient>();
  RecordingClient rec(inner, log);
  const auto prompt = render_prompt(*vindr_store().find("Edema"));
  const auto recorded = generate_candidates(prompt, rec, {}, no_sleep(), 9);
  EXPECT_EQ(read_jsonl(log).size(), 5u);
  ReplayClient replay(log);
  const auto replayed = generate_candidates(prompt, replay, {}, no_sleep(), 9);
  EXPECT_EQ(recorded.candidates, replayed.candidates);
  // A different seed is a different request.
  EXPECT_THROW(generate_candidates(prompt, replay, {}, no_sleep(), 10), TransportError);
}

TEST(Transcript, KeyCoversEveryRequestField) {
  const auto base = sample_request();
  const std::string k = transcript_key(base);
  EXPECT_EQ(k.size(), 16u);
  auto r = base;
  r.seed = 43;
  EXPECT_NE(transcript_key(r), k);
  r = base;
  r.sample_index = 3;
  EXPECT_NE(transcript_key(r), k);
  r = base;
  r.params.temperature = 0.2;
  EXPECT_NE(transcript_key(r), k);
  r = base;
  r.prompt = "q";
  EXPECT_NE(transcript_key(r), k);
  EXPECT_EQ(transcript_key(base), k);
}

TEST(Transcript, ShippedFixtureCoversEveryClass) {
  ReplayClient replay(data_dir() / "fixtures/vindr_transcript.jsonl");
  const auto store = vindr_store();
  for (const auto& d : store.definitions()) {
    std::vector<std::string> warnings;
    const auto pool =
        generate_candidates(render_prompt(d), replay, {}, no_sleep(), 0, &warnings);
    EXPECT_EQ(pool.candidates.size(), 5u) << d.class_name;
    EXPECT_TRUE(warnings.empty()) << d.class_name;
    for (const auto& c : pool.candidates) {
      EXPECT_EQ(c.find("**"), std::string::npos);
      EXPECT_EQ(c.find("```"), std::string::npos);
      EXPECT_EQ(c.find("may include"), std::string::npos);
    }
  }
}

TEST(Candidates, DroppedCompletionsWarnAndAllDroppedFails) {
  StubClient mixed({"A clear wedge shaped opacity at the right base.", "I cannot help."});
  std::vector<std::string> warnings;
  const auto pool = generate_candidates(render_prompt({"Edema", "fluid", ""}), mixed, {},
                                        no_sleep(), 0, &warnings);
  EXPECT_EQ(pool.candidates.size(), 3u);
  EXPECT_EQ(warnings.size(), 2u);
  StubClient refusing({"I'm sorry, I can't do that."});
  EXPECT_THROW(generate_candidates(render_prompt({"Edema", "fluid", ""}), refusing, {},
                                   no_sleep(), 0),
               Error);
}

TEST(PoolStore, RoundTripAndValidation) {
  TempDir tmp;
  PoolStore store(tmp / "pools");
  CandidatePool pool{"Pleural Effusion", {"one two three four five"}, {}};
  store.save(pool);
  EXPECT_TRUE(fs::exists(store.path_for("Pleural Effusion")));
  const auto back = store.load("Pleural Effusion");
  ASSERT_TRUE(back.has_value());
  EXPECT_EQ(back->candidates, pool.candidates);
  EXPECT_FALSE(store.load("Edema").has_value());
  json six = pool.to_json();
  six["candidates"] = json::array({"a", "b", "c", "d", "e", "f"});
  EXPECT_THROW(CandidatePool::from_json(six), Error);
}

TEST(Ledger, ReselectionIsIdempotent) {
  TempDir tmp;
  SelectionLedger ledger(tmp / "ledger.jsonl");
  CandidatePool pool{"Edema", {"first candidate text here", "second candidate text here"}, {}};
  select_candidate(pool, 1, Selector::kHuman, ledger, "2024-01-01T00:00:00Z");
  select_candidate(pool, 1, Selector::kHuman, ledger, "2024-01-02T00:00:00Z");
  const auto entries = ledger.entries();
  ASSERT_EQ(entries.size(), 1u);
  EXPECT_EQ(entries[0].timestamp, "2024-01-01T00:00:00Z");
}

TEST(Ledger, LatestWinsAndHistoryIsKept) {
  TempDir tmp;
  SelectionLedger ledger(tmp / "ledger.jsonl");
  CandidatePool pool{"Edema", {"first candidate text here", "second candidate text here"}, {}};
  select_candidate(pool, 0, Selector::kHuman, ledger, "t1");
  const std::string before = read_text(ledger.path());
  select_candidate(pool, 1, Selector::kHuman, ledger, "t2");
  select_candidate(pool, 0, Selector::kAuto, ledger, "t3");
  const std::string after = read_text(ledger.path());
  EXPECT_EQ(after.substr(0, before.size()), before);  // append-only
  EXPECT_EQ(ledger.entries().size(), 3u);
  const auto cur = ledger.latest("Edema");
  ASSERT_TRUE(cur.has_value());
  EXPECT_EQ(cur->selected_index, 0);
  EXPECT_EQ(cur->selected_by, Selector::kAuto);
  EXPECT_FALSE(ledger.latest("Nodule / Mass").has_value());
}

TEST(Ledger, ConcurrentSelectionsAllLand) {
  TempDir tmp;
  SelectionLedger ledger(tmp / "ledger.jsonl");
  std::vector<std::thread> threads;
  for (int t = 0; t < 8; ++t) {
    threads.emplace_back([&, t] {
      CandidatePool pool{"C" + std::to_string(t), {"one two three four five"}, {}};
      select_candidate(pool, 0, Selector::kHuman, ledger, "t");
    });
  }
  for (auto& th : threads) th.join();
  EXPECT_EQ(ledger.latest().size(), 8u);
}

TEST(Ledger, OutOfRangeIndexNamesBounds) {
  TempDir tmp;
  SelectionLedger ledger(tmp / "ledger.jsonl");
  CandidatePool pool{"Edema", {"a b c d e", "f g h i j"}, {}};
  try {
    select_candidate(pool, 2, Selector::kHuman, ledger);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kValidation);
    EXPECT_NE(std::string(e.what()).find("[0, 1]"), std::string::npos);
  }
  EXPECT_THROW(select_candidate(pool, -1, Selector::kHuman, ledger), Error);
  EXPECT_FALSE(fs::exists(ledger.path()));
}

TEST(Ledger, TimestampHonoursSourceDateEpoch) {
  ::setenv("SOURCE_DATE_EPOCH", "1700000000", 1);
  EXPECT_EQ(utc_timestamp(), "2023-11-14T22:13:20Z");
  ::unsetenv("SOURCE_DATE_EPOCH");
}

TEST(AutoSelect, PrefersMostLexiconHitsLowestOnTie) {
  const auto lx = promptgen::Lexicons::shipped();
  CandidatePool pool{"X",
                     {"plain words without any terms",
                      "a rounded hazy opacity in the upper lobe",
                      "a rounded hazy opacity in the upper lobe"},
                     {}};
  EXPECT_EQ(auto_select_index(pool, lx), 1);
  CandidatePool none{"X", {"plain words only here", "more plain words here"}, {}};
  EXPECT_EQ(auto_select_index(none, lx), 0);
}

TEST(Dictionary, BuiltFromLedgerForAllClasses) {
  TempDir tmp;
  SelectionLedger ledger(tmp / "ledger.jsonl");
  ReplayClient replay(data_dir() / "fixtures/vindr_transcript.jsonl");
  const auto store = vindr_store();
  for (const auto& d : store.definitions()) {
    const auto pool = generate_candidates(render_prompt(d), replay, {}, no_sleep(), 0);
    select_candidate(pool, 0, Selector::kHuman, ledger, "t");
  }
  const auto dict = build_prompt_dictionary(ledger, store.class_names());
  EXPECT_EQ(dict.size(), 22u);
  const auto back = dictionary_from_json(dictionary_to_json(dict));
  EXPECT_EQ(back, dict);
  EXPECT_TRUE(build_prompt_dictionary(ledger, {}).empty());
  try {
    build_prompt_dictionary(ledger, {"Edema", "Hernia"});
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("'Hernia'"), std::string::npos);
  }
}

TEST(Dictionary, FormatChecks) {
  EXPECT_EQ(dictionary_from_json(json{{"A", "b"}}).at("A"), "b");
  EXPECT_THROW(dictionary_from_json(json{{"version", 9}, {"entries", {{"A", "b"}}}}), Error);
  EXPECT_THROW(dictionary_from_json(json{{"A", 3}}), Error);
  EXPECT_THROW(dictionary_from_json(json::array()), Error);
}

TEST(Decompose, FailedClassLeavesNoPool) {
  TempDir tmp;
  PoolStore pools(tmp / "pools");
  OneClassDown client("Edema");
  const auto out = decompose(vindr_store(), {"Atelectasis", "Edema", "Nodule / Mass"}, client,
                             {}, no_sleep(), pools, 0, 2);
  ASSERT_EQ(out.size(), 3u);
  EXPECT_TRUE(out[0].ok);
  EXPECT_FALSE(out[1].ok);
  EXPECT_FALSE(out[1].error.empty());
  EXPECT_TRUE(out[2].ok);
  EXPECT_TRUE(fs::exists(pools.path_for("Atelectasis")));
  EXPECT_FALSE(fs::exists(pools.path_for("Edema")));
  EXPECT_TRUE(fs::exists(pools.path_for("Nodule / Mass")));
}

TEST(Decompose, UnknownClassRejectedUpFront) {
  TempDir tmp;
  StubClient stub;
  EXPECT_THROW(decompose(vindr_store(), {"Unicorn"}, stub, {}, no_sleep(),
                         PoolStore(tmp / "p"), 0),
               Error);
}

TEST(Decompose, StubRunsAreByteReproducible) {
  TempDir a, b;
  StubClient stub;
  const auto store = vindr_store();
  decompose(store, store.class_names(), stub, {}, no_sleep(), PoolStore(a / "p"), 7, 4);
  decompose(store, store.class_names(), stub, {}, no_sleep(), PoolStore(b / "p"), 7, 1);
  for (const auto& c : store.class_names()) {
    EXPECT_EQ(read_text(PoolStore(a / "p").path_for(c)),
              read_text(PoolStore(b / "p").path_for(c)))
        << c;
  }
}

}  // namespace
}  // namespace k2s::knowledge
