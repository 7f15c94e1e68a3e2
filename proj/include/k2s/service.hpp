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

// Local HTTP+JSON API over the file-backed stores: definitions, candidate
// pools, the selection ledger and evaluation run directories. Routing lives
// in Service::handle so it can be exercised without sockets.

#include <memory>
#include <optional>
#include <string>
#include <string_view>

#include "k2s/io.hpp"
#include "k2s/knowledge.hpp"

namespace httplib {
class Server;
}  // namespace httplib

namespace k2s::service {

inline constexpr int kDefaultPort = 7700;

struct ServiceConfig {
  fs::path definitions;
  fs::path pools_dir;
  fs::path ledger;
  fs::path runs_dir;
  std::optional<fs::path> images_dir;
  std::optional<fs::path> ui_dir;
  std::string host = "127.0.0.1";
  int port = kDefaultPort;
};

struct HttpResponse {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
};

/// The published API description (OpenAPI-style).
const json& api_schema();

/// Percent-decodes one path segment. Malformed escapes -> nullopt.
std::optional<std::string> decode_segment(std::string_view s);

class Service {
 public:
  explicit Service(ServiceConfig config);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  /// Routes one /api request. `target` is the raw request target; path
  /// segments are percent-decoded after splitting, so class names may hold
  /// an encoded '/'.
  HttpResponse handle(std::string_view method, std::string_view target,
                      std::string_view body);

  /// Binds the listener; port 0 picks a free port. Returns the bound port,
  /// or -1 on failure.
  int bind();
  /// Serves until stop(). Call after bind().
  void listen();
  void stop();

 private:
  HttpResponse classes();
  HttpResponse candidates(const std::string& name);
  HttpResponse get_selection(const std::string& name);
  HttpResponse post_selection(const std::string& name, std::string_view body);
  HttpResponse dictionary();
  HttpResponse runs();
  HttpResponse run(const std::string& id);
  HttpResponse case_overlay(const std::string& id, const std::string& case_id);
  std::optional<knowledge::DefinitionStore> load_store() const;

  ServiceConfig config_;
  knowledge::SelectionLedger ledger_;
  std::unique_ptr<httplib::Server> server_;
};

}  // namespace k2s::service
