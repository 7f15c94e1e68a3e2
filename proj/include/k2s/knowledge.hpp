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

// Knowledge decomposition: clinical definitions d(a) are turned into a
// distillation prompt, an LLM proposes N candidate visual descriptions, and
// one candidate per class is selected into the prompt dictionary.

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "k2s/error.hpp"
#include "k2s/io.hpp"
#include "k2s/promptgen.hpp"

namespace k2s::knowledge {

struct AbnormalityDefinition {
  std::string class_name;
  std::string definition;
  std::string source;
};

/// Definitions keyed by class name, in file order.
class DefinitionStore {
 public:
  DefinitionStore() = default;
  explicit DefinitionStore(std::vector<AbnormalityDefinition> defs);

  /// [{class_name, definition, source}]. Empty definitions, empty names and
  /// duplicate names -> Error(kValidation).
  static DefinitionStore from_json(const json& doc);
  static DefinitionStore load(const fs::path& path);
  json to_json() const;

  const std::vector<AbnormalityDefinition>& definitions() const { return defs_; }
  const AbnormalityDefinition* find(std::string_view class_name) const;
  std::vector<std::string> class_names() const;
  std::size_t size() const { return defs_.size(); }

 private:
  std::vector<AbnormalityDefinition> defs_;
};

struct DistillationPrompt {
  std::string class_name;
  std::string rendered_text;
};

/// Class names holding a double quote are rejected so that the rendering
/// stays injective.
DistillationPrompt render_prompt(const AbnormalityDefinition& def);

struct GenerationParams {
  double temperature = 0.7;
  double top_p = 0.7;
  double repetition_penalty = 1.1;
  int max_tokens = 1024;
  int n = 5;

  void validate() const;
  json to_json() const;
  static GenerationParams from_json(const json& j);
  std::string to_string() const;  // "(0.7, 0.7, 1.1, 1024, 5)"
};

struct CompletionRequest {
  std::string class_name;
  std::string prompt;
  GenerationParams params;
  int sample_index = 0;
  std::uint64_t seed = 0;
};

/// Endpoint failure. `retryable` marks transport errors and 5xx replies.
class TransportError : public Error {
 public:
  TransportError(const std::string& what, bool retryable, int status = 0)
      : Error(ErrorKind::kEndpoint, what), retryable_(retryable), status_(status) {}

  bool retryable() const noexcept { return retryable_; }
  int status() const noexcept { return status_; }

 private:
  bool retryable_;
  int status_;
};

/// Single-completion interface. Implementations must be safe to call from
/// several threads at once.
class LLMClient {
 public:
  virtual ~LLMClient() = default;
  virtual std::string complete(const CompletionRequest& request) = 0;
  virtual std::string name() const = 0;
};

struct HttpClientConfig {
  std::string url;  // base URL or full .../chat/completions URL
  std::string api_key;
  std::string model;
  int timeout_seconds = 120;

  /// K2S_LLM_URL, K2S_LLM_API_KEY, K2S_LLM_MODEL.
  static HttpClientConfig from_env();
};

/// OpenAI-compatible chat completions over HTTP(S).
class HttpClient : public LLMClient {
 public:
  explicit HttpClient(HttpClientConfig config);
  std::string complete(const CompletionRequest& request) override;
  std::string name() const override { return "http"; }

 private:
  HttpClientConfig config_;
  std::string origin_;  // scheme://host[:port]
  std::string path_;
};

/// Deterministic offline client. With fixed responses it returns
/// responses[sample_index % size]; otherwise it synthesizes a description
/// from the class name, sample index and seed.
class StubClient : public LLMClient {
 public:
  StubClient() = default;
  explicit StubClient(std::vector<std::string> responses);
  std::string complete(const CompletionRequest& request) override;
  std::string name() const override { return "stub"; }

 private:
  std::vector<std::string> responses_;
};

/// Lookup key of a request in a transcript.
std::string transcript_key(const CompletionRequest& request);

/// Serves completions from a JSON-lines transcript
/// {key, class_name, sample_index, response}. Missing entries ->
/// TransportError (not retryable).
class ReplayClient : public LLMClient {
 public:
  explicit ReplayClient(const fs::path& transcript);
  std::string complete(const CompletionRequest& request) override;
  std::string name() const override { return "replay"; }

 private:
  std::map<std::string, std::string> responses_;
};

/// Forwards to `inner` and appends every successful exchange to a
/// transcript readable by ReplayClient.
class RecordingClient : public LLMClient {
 public:
  RecordingClient(std::shared_ptr<LLMClient> inner, fs::path transcript);
  std::string complete(const CompletionRequest& request) override;
  std::string name() const override { return "record"; }

 private:
  std::shared_ptr<LLMClient> inner_;
  fs::path transcript_;
  std::mutex mu_;
};

struct RetryPolicy {
  int attempts = 3;
  std::chrono::milliseconds initial_backoff{1000};
  std::function<void(std::chrono::milliseconds)> sleep;  // default: real sleep
};

/// Calls the client up to `attempts` times, doubling the backoff after each
/// retryable failure. The final TransportError carries the attempt log.
std::string complete_with_retry(LLMClient& client,
                                const CompletionRequest& request,
                                const RetryPolicy& policy);

/// Strips code fences, emphasis markers, leading "Description:"-style labels
/// and unfinished trailing fragments, then collapses whitespace. Returns
/// nullopt for candidates under five words or containing a refusal.
std::optional<std::string> clean_candidate(std::string_view raw);

struct CandidatePool {
  std::string class_name;
  std::vector<std::string> candidates;
  GenerationParams params;

  json to_json() const;
  static CandidatePool from_json(const json& j);
};

/// N completions, cleaned. Dropped completions are reported in `warnings`.
/// Fails with TransportError if any request fails after retries, and with
/// Error(kEndpoint) when every completion is dropped.
CandidatePool generate_candidates(const DistillationPrompt& prompt,
                                  LLMClient& client,
                                  const GenerationParams& params,
                                  const RetryPolicy& retry, std::uint64_t seed,
                                  std::vector<std::string>* warnings = nullptr);

/// One `<slug>.json` per class in a directory.
class PoolStore {
 public:
  explicit PoolStore(fs::path dir) : dir_(std::move(dir)) {}

  fs::path path_for(std::string_view class_name) const;
  void save(const CandidatePool& pool) const;
  std::optional<CandidatePool> load(std::string_view class_name) const;
  const fs::path& dir() const { return dir_; }

 private:
  fs::path dir_;
};

enum class Selector { kHuman, kAuto };

std::string_view selector_name(Selector who);
Selector parse_selector(std::string_view name);

struct AttributePrompt {
  std::string class_name;
  std::string description;
  int selected_index = 0;
  Selector selected_by = Selector::kHuman;
  std::string timestamp;  // ISO-8601 UTC

  json to_json() const;
  static AttributePrompt from_json(const json& j);
};

/// Append-only JSON-lines selection log. Later entries supersede earlier
/// ones for the same class. Writes are serialized within the process.
class SelectionLedger {
 public:
  explicit SelectionLedger(fs::path path) : path_(std::move(path)) {}

  /// Appends unless the class's latest entry already has the same index,
  /// description and selector. Returns the entry that is now current.
  AttributePrompt record(const AttributePrompt& entry);

  std::vector<AttributePrompt> entries() const;
  std::map<std::string, AttributePrompt> latest() const;
  std::optional<AttributePrompt> latest(std::string_view class_name) const;
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
  mutable std::mutex mu_;
};

/// Current UTC time; SOURCE_DATE_EPOCH, when set, replaces the clock.
std::string utc_timestamp();

/// Records pool.candidates[index] for the pool's class. Re-selecting what
/// is already the latest entry (same index, text and selector) appends
/// nothing, so retries are idempotent. Index out of range ->
/// Error(kValidation) naming the bounds.
AttributePrompt select_candidate(const CandidatePool& pool, int index,
                                 Selector who, SelectionLedger& ledger,
                                 std::optional<std::string> timestamp = {});

/// Index of the candidate with the most attribute lexicon matches; ties go
/// to the lowest index.
int auto_select_index(const CandidatePool& pool,
                      const promptgen::Lexicons& lexicons);

inline constexpr int kDictionaryVersion = 1;

/// Latest selection of every class in `classes`. Missing selections ->
/// Error(kValidation) listing them.
promptgen::PromptDictionary build_prompt_dictionary(
    const SelectionLedger& ledger, const std::vector<std::string>& classes);

/// {"version": 1, "kind": "prompt-dictionary", "entries": {...}}
json dictionary_to_json(const promptgen::PromptDictionary& dict);
/// Accepts the versioned document or a bare {class: description} object.
promptgen::PromptDictionary dictionary_from_json(const json& doc);
promptgen::PromptDictionary load_prompt_dictionary(const fs::path& path);

struct DecomposeOutcome {
  std::string class_name;
  bool ok = false;
  std::size_t n_candidates = 0;
  std::string error;
  std::vector<std::string> warnings;
};

/// Generates and saves a pool per class with at most `max_in_flight`
/// concurrent requests. A failed class leaves no pool file; completed pools
/// are kept. Outcomes follow `classes` order.
std::vector<DecomposeOutcome> decompose(const DefinitionStore& store,
                                        const std::vector<std::string>& classes,
                                        LLMClient& client,
                                        const GenerationParams& params,
                                        const RetryPolicy& retry,
                                        const PoolStore& pools,
                                        std::uint64_t seed,
                                        int max_in_flight = 4);

}  // namespace k2s::knowledge
