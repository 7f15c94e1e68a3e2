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

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace k2s {

using json = nlohmann::json;
namespace fs = std::filesystem;

/// Whole-file read. Missing or unreadable file -> Error(kUsage).
std::string read_text(const fs::path& path);

/// Writes via a sibling temp file and rename, so readers never observe a
/// half-written file.
void write_text_atomic(const fs::path& path, std::string_view content);

void append_line(const fs::path& path, std::string_view line);

/// Parse a JSON document; parse failure -> Error(kValidation) with the path.
json read_json(const fs::path& path);

/// One JSON value per non-blank line.
std::vector<json> read_jsonl(const fs::path& path);

/// Serialization used for every file this toolkit emits: invalid UTF-8 is
/// replaced rather than thrown on.
std::string dump(const json& j, int indent = -1);

std::uint64_t fnv1a64(std::string_view data,
                      std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);

/// File-system safe form of a class name ("Nodule / Mass" -> "nodule_mass").
std::string slugify(std::string_view name);

std::string to_lower(std::string_view s);
std::string trim(std::string_view s);

/// Advisory exclusive lock on `<dir>/.k2s.lock`, held for the object's
/// lifetime. Throws Error(kUsage) when another process holds it.
class DirLock {
 public:
  explicit DirLock(const fs::path& dir);
  ~DirLock();
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  int fd_ = -1;
};

}  // namespace k2s
