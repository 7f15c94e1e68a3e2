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
#include "k2s/knowledge.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cstdlib>
#include <ctime>
#include <regex>
#include <set>
#include <sstream>
#include <thread>

#include "httplib.h"

namespace k2s::knowledge {

namespace {

constexpr std::string_view kPromptHead = "Here is the medical definition of ";
constexpr std::string_view kPromptTail =
    " Based on this definition, and focusing on shape, intensity, density, "
    "and location, provide a concise visual description that could guide "
    "image recognition.";

std::string require_string(const json& j, const char* key, std::size_t index) {
  auto it = j.find(key);
  if (it == j.end() || !it->is_string()) {
    fail(ErrorKind::kValidation, "definition " + std::to_string(index + 1) +
                                     ": missing string field '" + key + "'");
  }
  return it->get<std::string>();
}

std::string env_or_empty(const char* name) {
  const char* v = std::getenv(name);
  return v ? std::string(v) : std::string();
}

std::size_t count_words(std::string_view s) {
  std::size_t n = 0;
  bool in_word = false;
  for (char c : s) {
    const bool space = std::isspace(static_cast<unsigned char>(c)) != 0;
    if (!space && !in_word) ++n;
    in_word = !space;
  }
  return n;
}

std::string collapse_whitespace(std::string_view s) {
  std::string out;
  bool pending = false;
  for (char c : s) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      pending = !out.empty();
      continue;
    }
    if (pending) out.push_back(' ');
    pending = false;
    out.push_back(c);
  }
  return out;
}

bool is_terminator(char c) { return c == '.' || c == '!' || c == '?'; }

bool is_closer(char c) { return c == '"' || c == '\'' || c == ')'; }

// Drops text after the last sentence terminator when the candidate does not
// itself end a sentence.
std::string cut_trailing_fragment(std::string s) {
  std::size_t end = s.size();
  while (end > 0 && is_closer(s[end - 1])) --end;
  if (end > 0 && is_terminator(s[end - 1])) return s;
  for (std::size_t i = s.size(); i-- > 0;) {
    if (!is_terminator(s[i])) continue;
    std::size_t j = i + 1;
    while (j < s.size() && is_closer(s[j])) ++j;
    if (j == s.size() || s[j] == ' ') return s.substr(0, j);
  }
  return s;
}

const std::vector<std::string>& refusal_phrases() {
  static const std::vector<std::string> phrases = {
      "i'm sorry", "i am sorry", "i cannot", "i can't", "i can not",
      "as an ai", "i am unable", "i'm unable", "i won't"};
  return phrases;
}

std::uint64_t request_seed(std::uint64_t seed, std::string_view class_name,
                           int sample_index) {
  return fnv1a64(class_name, fnv1a64(std::to_string(sample_index), seed ^ 0x9e3779b97f4a7c15ULL));
}

std::string synthesize(const CompletionRequest& r) {
  static const std::vector<std::string> shapes = {
      "rounded", "irregular", "oval", "linear", "wedge-shaped"};
  static const std::vector<std::string> densities = {
      "increased density", "soft tissue density", "reduced density",
      "hazy density", "dense consolidation"};
  static const std::vector<std::string> intensities = {
      "white", "grayish", "bright", "faint", "dark"};
  static const std::vector<std::string> locations = {
      "lung fields", "lower lobes", "upper zones", "pleural space",
      "hilar region"};
  const std::uint64_t h = fnv1a64(r.class_name, r.seed);
  auto pick = [&](const std::vector<std::string>& v, int shift) {
    return v[((h >> shift) + static_cast<std::uint64_t>(r.sample_index)) % v.size()];
  };
  std::ostringstream os;
  os << "**Visual description:** A " << pick(shapes, 0) << " area of "
     << pick(densities, 8) << " in the " << pick(locations, 16)
     << ", typically appearing as a " << pick(intensities, 24)
     << " patch consistent with " << to_lower(r.class_name) << ".";
  return os.str();
}

}  // namespace

DefinitionStore::DefinitionStore(std::vector<AbnormalityDefinition> defs)
    : defs_(std::move(defs)) {
  std::set<std::string> seen;
  for (const auto& d : defs_) {
    if (trim(d.class_name).empty()) {
      fail(ErrorKind::kValidation, "definition with empty class_name");
    }
    if (trim(d.definition).empty()) {
      fail(ErrorKind::kValidation,
           "empty definition for class '" + d.class_name + "'");
    }
    if (!seen.insert(d.class_name).second) {
      fail(ErrorKind::kValidation,
           "duplicate class_name '" + d.class_name + "' in definition store");
    }
  }
}

DefinitionStore DefinitionStore::from_json(const json& doc) {
  if (!doc.is_array()) {
    fail(ErrorKind::kValidation, "definition store must be a JSON array");
  }
  std::vector<AbnormalityDefinition> defs;
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const json& j = doc[i];
    if (!j.is_object()) {
      fail(ErrorKind::kValidation,
           "definition " + std::to_string(i + 1) + " is not an object");
    }
    AbnormalityDefinition d;
    d.class_name = require_string(j, "class_name", i);
    d.definition = require_string(j, "definition", i);
    d.source = j.value("source", std::string());
    defs.push_back(std::move(d));
  }
  return DefinitionStore(std::move(defs));
}

DefinitionStore DefinitionStore::load(const fs::path& path) {
  return from_json(read_json(path));
}

json DefinitionStore::to_json() const {
  json out = json::array();
  for (const auto& d : defs_) {
    out.push_back({{"class_name", d.class_name},
                   {"definition", d.definition},
                   {"source", d.source}});
  }
  return out;
}

const AbnormalityDefinition* DefinitionStore::find(
    std::string_view class_name) const {
  for (const auto& d : defs_) {
    if (d.class_name == class_name) return &d;
  }
  return nullptr;
}

std::vector<std::string> DefinitionStore::class_names() const {
  std::vector<std::string> out;
  for (const auto& d : defs_) out.push_back(d.class_name);
  return out;
}

DistillationPrompt render_prompt(const AbnormalityDefinition& def) {
  if (trim(def.class_name).empty()) {
    fail(ErrorKind::kValidation, "class name must not be empty");
  }
  if (def.class_name.find('"') != std::string::npos) {
    fail(ErrorKind::kValidation,
         "class name must not contain '\"': " + def.class_name);
  }
  if (trim(def.definition).empty()) {
    fail(ErrorKind::kValidation,
         "empty definition for class '" + def.class_name + "'");
  }
  std::string text;
  text.append(kPromptHead);
  text.append(def.class_name);
  text.append(": \"");
  text.append(def.definition);
  text.append("\"");
  text.append(kPromptTail);
  return {def.class_name, std::move(text)};
}

void GenerationParams::validate() const {
  if (!(temperature >= 0.0 && temperature <= 2.0)) {
    fail(ErrorKind::kUsage, "temperature must lie in [0, 2]");
  }
  if (!(top_p > 0.0 && top_p <= 1.0)) {
    fail(ErrorKind::kUsage, "top_p must lie in (0, 1]");
  }
  if (!(repetition_penalty > 0.0)) {
    fail(ErrorKind::kUsage, "repetition_penalty must be positive");
  }
  if (max_tokens < 1) fail(ErrorKind::kUsage, "max_tokens must be positive");
  if (n < 1) fail(ErrorKind::kUsage, "n_candidates must be at least 1");
}

json GenerationParams::to_json() const {
  return {{"temperature", temperature},
          {"top_p", top_p},
          {"repetition_penalty", repetition_penalty},
          {"max_tokens", max_tokens},
          {"n", n}};
}

GenerationParams GenerationParams::from_json(const json& j) {
  GenerationParams p;
  if (!j.is_object()) {
    fail(ErrorKind::kValidation, "generation_params must be an object");
  }
  try {
    p.temperature = j.value("temperature", p.temperature);
    p.top_p = j.value("top_p", p.top_p);
    p.repetition_penalty = j.value("repetition_penalty", p.repetition_penalty);
    p.max_tokens = j.value("max_tokens", p.max_tokens);
    p.n = j.value("n", p.n);
  } catch (const json::exception& e) {
    fail(ErrorKind::kValidation, std::string("bad generation_params: ") + e.what());
  }
  return p;
}

std::string GenerationParams::to_string() const {
  std::ostringstream os;
  os << "(" << temperature << ", " << top_p << ", " << repetition_penalty
     << ", " << max_tokens << ", " << n << ")";
  return os.str();
}

HttpClientConfig HttpClientConfig::from_env() {
  HttpClientConfig c;
  c.url = env_or_empty("K2S_LLM_URL");
  c.api_key = env_or_empty("K2S_LLM_API_KEY");
  c.model = env_or_empty("K2S_LLM_MODEL");
  return c;
}

HttpClient::HttpClient(HttpClientConfig config) : config_(std::move(config)) {
  static const std::regex url_re(R"(^(https?://[^/]+)(/.*)?$)",
                                 std::regex::icase);
  std::smatch m;
  if (!std::regex_match(config_.url, m, url_re)) {
    fail(ErrorKind::kUsage,
         "LLM endpoint URL must start with http:// or https:// (got '" +
             config_.url + "')");
  }
  origin_ = m[1].str();
#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
  if (to_lower(origin_).rfind("https", 0) == 0) {
    fail(ErrorKind::kUsage, "this build has no TLS support; use an http:// endpoint");
  }
#endif
  std::string path = m[2].matched ? m[2].str() : std::string();
  while (!path.empty() && path.back() == '/') path.pop_back();
  const std::string suffix = "/chat/completions";
  if (path.empty()) {
    path_ = "/v1" + suffix;
  } else if (path.size() >= suffix.size() &&
             path.compare(path.size() - suffix.size(), suffix.size(), suffix) == 0) {
    path_ = path;
  } else {
    path_ = path + suffix;
  }
}

std::string HttpClient::complete(const CompletionRequest& request) {
  httplib::Client cli(origin_);
  cli.set_connection_timeout(10, 0);
  cli.set_read_timeout(config_.timeout_seconds, 0);
  httplib::Headers headers;
  if (!config_.api_key.empty()) {
    headers.emplace("Authorization", "Bearer " + config_.api_key);
  }
  json body = {{"messages", json::array({{{"role", "user"}, {"content", request.prompt}}})},
               {"temperature", request.params.temperature},
               {"top_p", request.params.top_p},
               {"repetition_penalty", request.params.repetition_penalty},
               {"max_tokens", request.params.max_tokens},
               {"n", 1},
               {"seed", request.seed}};
  if (!config_.model.empty()) body["model"] = config_.model;
  auto res = cli.Post(path_, headers, dump(body), "application/json");
  if (!res) {
    throw TransportError(origin_ + path_ + ": " + httplib::to_string(res.error()),
                         true);
  }
  if (res->status >= 500) {
    throw TransportError(origin_ + path_ + ": HTTP " + std::to_string(res->status),
                         true, res->status);
  }
  if (res->status >= 400 || res->status < 200) {
    throw TransportError(origin_ + path_ + ": HTTP " + std::to_string(res->status),
                         false, res->status);
  }
  const json reply = json::parse(res->body, nullptr, false);
  try {
    if (!reply.is_discarded()) {
      const json& content = reply.at("choices").at(0).at("message").at("content");
      if (content.is_string()) return content.get<std::string>();
      if (content.is_null()) return std::string();
    }
  } catch (const json::exception&) {
  }
  throw TransportError(origin_ + path_ + ": malformed completion response", false,
                       res->status);
}

StubClient::StubClient(std::vector<std::string> responses)
    : responses_(std::move(responses)) {}

std::string StubClient::complete(const CompletionRequest& request) {
  if (!responses_.empty()) {
    return responses_[static_cast<std::size_t>(request.sample_index) %
                      responses_.size()];
  }
  return synthesize(request);
}

std::string transcript_key(const CompletionRequest& request) {
  std::string material = request.class_name;
  material += '\x1f';
  material += request.prompt;
  material += '\x1f';
  material += std::to_string(request.sample_index);
  material += '\x1f';
  material += dump(request.params.to_json());
  material += '\x1f';
  material += std::to_string(request.seed);
  return hex64(fnv1a64(material));
}

ReplayClient::ReplayClient(const fs::path& transcript) {
  for (const json& j : read_jsonl(transcript)) {
    if (!j.is_object() || !j.contains("key") || !j.contains("response") ||
        !j["key"].is_string() || !j["response"].is_string()) {
      fail(ErrorKind::kValidation,
           "transcript " + transcript.string() + ": entry lacks key/response");
    }
    responses_[j["key"].get<std::string>()] = j["response"].get<std::string>();
  }
}

std::string ReplayClient::complete(const CompletionRequest& request) {
  auto it = responses_.find(transcript_key(request));
  if (it == responses_.end()) {
    throw TransportError("no recorded response for class '" + request.class_name +
                             "' sample " + std::to_string(request.sample_index),
                         false);
  }
  return it->second;
}

RecordingClient::RecordingClient(std::shared_ptr<LLMClient> inner,
                                 fs::path transcript)
    : inner_(std::move(inner)), transcript_(std::move(transcript)) {}

std::string RecordingClient::complete(const CompletionRequest& request) {
  std::string response = inner_->complete(request);
  json entry = {{"key", transcript_key(request)},
                {"class_name", request.class_name},
                {"sample_index", request.sample_index},
                {"response", response}};
  std::lock_guard<std::mutex> lock(mu_);
  append_line(transcript_, dump(entry));
  return response;
}

std::string complete_with_retry(LLMClient& client,
                                const CompletionRequest& request,
                                const RetryPolicy& policy) {
  const int attempts = std::max(1, policy.attempts);
  auto backoff = policy.initial_backoff;
  std::string log;
  for (int attempt = 1;; ++attempt) {
    try {
      return client.complete(request);
    } catch (const TransportError& e) {
      log += "\n  attempt " + std::to_string(attempt) + ": " + e.what();
      if (!e.retryable() || attempt >= attempts) {
        throw TransportError("completion failed for class '" +
                                 request.class_name + "' after " +
                                 std::to_string(attempt) + " attempt(s):" + log,
                             false, e.status());
      }
    }
    if (policy.sleep) {
      policy.sleep(backoff);
    } else {
      std::this_thread::sleep_for(backoff);
    }
    backoff *= 2;
  }
}

std::optional<std::string> clean_candidate(std::string_view raw) {
  std::string text;
  std::istringstream lines{std::string(raw)};
  std::string line;
  while (std::getline(lines, line)) {
    std::string t = trim(line);
    if (t.rfind("```", 0) == 0) continue;
    while (!t.empty() && t[0] == '#') t.erase(0, 1);
    if (t.rfind("- ", 0) == 0) t.erase(0, 2);
    text += t;
    text += ' ';
  }
  std::string stripped;
  for (char c : text) {
    if (c == '*' || c == '`') continue;
    stripped.push_back(c);
  }
  static const std::regex underscores(R"((^|\s)_{1,2}|_{1,2}(\s|$))");
  stripped = std::regex_replace(stripped, underscores, "$1$2");
  std::string s = collapse_whitespace(stripped);

  static const std::regex label(
      R"(^(visual description|description|candidate(\s*\d+)?|answer|response|output|prompt)\s*\d*\s*[:\-]\s*)",
      std::regex::icase);
  for (std::string prev; prev != s;) {
    prev = s;
    s = std::regex_replace(s, label, "", std::regex_constants::format_first_only);
  }
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"' &&
      s.find('"', 1) == s.size() - 1) {
    s = trim(s.substr(1, s.size() - 2));
  }
  s = trim(cut_trailing_fragment(s));

  const std::string lower = to_lower(s);
  for (const auto& p : refusal_phrases()) {
    if (lower.find(p) != std::string::npos) return std::nullopt;
  }
  if (count_words(s) < 5) return std::nullopt;
  return s;
}

json CandidatePool::to_json() const {
  return {{"class_name", class_name},
          {"candidates", candidates},
          {"generation_params", params.to_json()}};
}

CandidatePool CandidatePool::from_json(const json& j) {
  CandidatePool p;
  if (!j.is_object() || !j.contains("class_name") || !j["class_name"].is_string() ||
      !j.contains("candidates") || !j["candidates"].is_array()) {
    fail(ErrorKind::kValidation, "candidate pool needs class_name and candidates");
  }
  p.class_name = j["class_name"].get<std::string>();
  for (const auto& c : j["candidates"]) {
    if (!c.is_string()) fail(ErrorKind::kValidation, "candidate is not a string");
    p.candidates.push_back(c.get<std::string>());
  }
  if (j.contains("generation_params")) {
    p.params = GenerationParams::from_json(j["generation_params"]);
  }
  if (p.candidates.empty() ||
      p.candidates.size() > static_cast<std::size_t>(std::max(p.params.n, 1))) {
    fail(ErrorKind::kValidation, "candidate pool for '" + p.class_name +
                                     "' must hold 1..N candidates");
  }
  return p;
}

CandidatePool generate_candidates(const DistillationPrompt& prompt,
                                  LLMClient& client,
                                  const GenerationParams& params,
                                  const RetryPolicy& retry, std::uint64_t seed,
                                  std::vector<std::string>* warnings) {
  params.validate();
  CandidatePool pool;
  pool.class_name = prompt.class_name;
  pool.params = params;
  for (int i = 0; i < params.n; ++i) {
    CompletionRequest req;
    req.class_name = prompt.class_name;
    req.prompt = prompt.rendered_text;
    req.params = params;
    req.sample_index = i;
    req.seed = request_seed(seed, prompt.class_name, i);
    const std::string raw = complete_with_retry(client, req, retry);
    auto cleaned = clean_candidate(raw);
    if (!cleaned) {
      if (warnings) {
        warnings->push_back(prompt.class_name + ": candidate " +
                            std::to_string(i) +
                            " dropped (empty, too short or a refusal)");
      }
      continue;
    }
    pool.candidates.push_back(std::move(*cleaned));
  }
  if (pool.candidates.empty()) {
    fail(ErrorKind::kEndpoint,
         "no usable candidate for class '" + prompt.class_name + "'");
  }
  return pool;
}

fs::path PoolStore::path_for(std::string_view class_name) const {
  return dir_ / (slugify(class_name) + ".json");
}

void PoolStore::save(const CandidatePool& pool) const {
  fs::create_directories(dir_);
  write_text_atomic(path_for(pool.class_name), dump(pool.to_json(), 2) + "\n");
}

std::optional<CandidatePool> PoolStore::load(std::string_view class_name) const {
  const fs::path p = path_for(class_name);
  if (!fs::exists(p)) return std::nullopt;
  CandidatePool pool = CandidatePool::from_json(read_json(p));
  if (pool.class_name != class_name) return std::nullopt;
  return pool;
}

std::string_view selector_name(Selector who) {
  return who == Selector::kHuman ? "human" : "auto";
}

Selector parse_selector(std::string_view name) {
  if (name == "human") return Selector::kHuman;
  if (name == "auto") return Selector::kAuto;
  fail(ErrorKind::kValidation, "selected_by must be human or auto");
}

json AttributePrompt::to_json() const {
  return {{"class_name", class_name},
          {"description", description},
          {"selected_index", selected_index},
          {"selected_by", std::string(selector_name(selected_by))},
          {"timestamp", timestamp}};
}

AttributePrompt AttributePrompt::from_json(const json& j) {
  AttributePrompt a;
  try {
    a.class_name = j.at("class_name").get<std::string>();
    a.description = j.at("description").get<std::string>();
    a.selected_index = j.at("selected_index").get<int>();
    a.selected_by = parse_selector(j.at("selected_by").get<std::string>());
    a.timestamp = j.value("timestamp", std::string());
  } catch (const json::exception& e) {
    fail(ErrorKind::kValidation, std::string("bad ledger entry: ") + e.what());
  }
  return a;
}

AttributePrompt SelectionLedger::record(const AttributePrompt& entry) {
  std::lock_guard<std::mutex> lock(mu_);
  if (auto current = latest(entry.class_name)) {
    if (current->selected_index == entry.selected_index &&
        current->description == entry.description &&
        current->selected_by == entry.selected_by) {
      return *current;
    }
  }
  if (path_.has_parent_path()) fs::create_directories(path_.parent_path());
  append_line(path_, dump(entry.to_json()));
  return entry;
}

std::vector<AttributePrompt> SelectionLedger::entries() const {
  std::vector<AttributePrompt> out;
  if (!fs::exists(path_)) return out;
  for (const json& j : read_jsonl(path_)) out.push_back(AttributePrompt::from_json(j));
  return out;
}

std::map<std::string, AttributePrompt> SelectionLedger::latest() const {
  std::map<std::string, AttributePrompt> out;
  for (auto& e : entries()) out.insert_or_assign(e.class_name, e);
  return out;
}

std::optional<AttributePrompt> SelectionLedger::latest(
    std::string_view class_name) const {
  std::optional<AttributePrompt> out;
  for (auto& e : entries()) {
    if (e.class_name == class_name) out = std::move(e);
  }
  return out;
}

std::string utc_timestamp() {
  std::time_t now = std::time(nullptr);
  if (const char* epoch = std::getenv("SOURCE_DATE_EPOCH")) {
    char* end = nullptr;
    const long long v = std::strtoll(epoch, &end, 10);
    if (end != epoch && *end == '\0') now = static_cast<std::time_t>(v);
  }
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

AttributePrompt select_candidate(const CandidatePool& pool, int index,
                                 Selector who, SelectionLedger& ledger,
                                 std::optional<std::string> timestamp) {
  const int size = static_cast<int>(pool.candidates.size());
  if (index < 0 || index >= size) {
    fail(ErrorKind::kValidation,
         "index " + std::to_string(index) + " out of range [0, " +
             std::to_string(size - 1) + "] for class '" + pool.class_name + "'");
  }
  AttributePrompt entry;
  entry.class_name = pool.class_name;
  entry.description = pool.candidates[static_cast<std::size_t>(index)];
  entry.selected_index = index;
  entry.selected_by = who;
  entry.timestamp = timestamp ? *timestamp : utc_timestamp();
  return ledger.record(entry);
}

int auto_select_index(const CandidatePool& pool,
                      const promptgen::Lexicons& lexicons) {
  int best = 0;
  std::size_t best_hits = 0;
  for (std::size_t i = 0; i < pool.candidates.size(); ++i) {
    std::size_t hits = 0;
    for (auto a : promptgen::kAllAttributes) {
      hits += promptgen::find_terms(pool.candidates[i], lexicons.of(a).terms).size();
    }
    if (i == 0 || hits > best_hits) {
      best = static_cast<int>(i);
      best_hits = hits;
    }
  }
  return best;
}

promptgen::PromptDictionary build_prompt_dictionary(
    const SelectionLedger& ledger, const std::vector<std::string>& classes) {
  const auto latest = ledger.latest();
  promptgen::PromptDictionary dict;
  std::vector<std::string> missing;
  for (const auto& c : classes) {
    auto it = latest.find(c);
    if (it == latest.end()) {
      missing.push_back(c);
    } else {
      dict[c] = it->second.description;
    }
  }
  if (!missing.empty()) {
    std::string msg = "no selection recorded for " +
                      std::to_string(missing.size()) + " class(es):";
    for (const auto& m : missing) msg += " '" + m + "'";
    fail(ErrorKind::kValidation, msg);
  }
  return dict;
}

json dictionary_to_json(const promptgen::PromptDictionary& dict) {
  json entries = json::object();
  for (const auto& [k, v] : dict) entries[k] = v;
  return {{"version", kDictionaryVersion},
          {"kind", "prompt-dictionary"},
          {"entries", entries}};
}

promptgen::PromptDictionary dictionary_from_json(const json& doc) {
  if (!doc.is_object()) {
    fail(ErrorKind::kValidation, "prompt dictionary must be a JSON object");
  }
  const json* entries = &doc;
  if (doc.contains("entries") && doc["entries"].is_object()) {
    if (doc.value("version", 0) != kDictionaryVersion) {
      fail(ErrorKind::kValidation, "unsupported prompt dictionary version");
    }
    entries = &doc["entries"];
  }
  promptgen::PromptDictionary dict;
  for (const auto& [k, v] : entries->items()) {
    if (!v.is_string()) {
      fail(ErrorKind::kValidation, "dictionary entry '" + k + "' is not a string");
    }
    dict[k] = v.get<std::string>();
  }
  return dict;
}

promptgen::PromptDictionary load_prompt_dictionary(const fs::path& path) {
  return dictionary_from_json(read_json(path));
}

std::vector<DecomposeOutcome> decompose(const DefinitionStore& store,
                                        const std::vector<std::string>& classes,
                                        LLMClient& client,
                                        const GenerationParams& params,
                                        const RetryPolicy& retry,
                                        const PoolStore& pools,
                                        std::uint64_t seed, int max_in_flight) {
  params.validate();
  std::vector<DecomposeOutcome> outcomes(classes.size());
  for (std::size_t i = 0; i < classes.size(); ++i) {
    outcomes[i].class_name = classes[i];
    if (!store.find(classes[i])) {
      fail(ErrorKind::kNotFound, "no definition for class '" + classes[i] + "'");
    }
  }
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < classes.size(); i = next++) {
      auto& out = outcomes[i];
      try {
        const auto prompt = render_prompt(*store.find(classes[i]));
        CandidatePool pool =
            generate_candidates(prompt, client, params, retry, seed, &out.warnings);
        pools.save(pool);
        out.ok = true;
        out.n_candidates = pool.candidates.size();
      } catch (const std::exception& e) {
        out.error = e.what();
      }
    }
  };
  const std::size_t n_threads =
      std::min<std::size_t>(static_cast<std::size_t>(std::max(1, max_in_flight)),
                            classes.size());
  std::vector<std::thread> threads;
  for (std::size_t t = 1; t < n_threads; ++t) threads.emplace_back(worker);
  if (n_threads > 0) worker();
  for (auto& t : threads) t.join();
  return outcomes;
}

}  // namespace k2s::knowledge
