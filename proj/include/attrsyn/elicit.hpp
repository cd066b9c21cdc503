// Copyright 2026 The AttrSyn Authors.
// SPDX-License-Identifier: Apache-2.0

// Language-model elicitation of attribute concepts and attribute values.
//
// Concept proposal sends the dataset-level question verbatim. Value queries
// use one of two templates depending on the concept kind, followed by a
// format-coercion sentence so that answers parse into plain lists. Every
// exchange is appended to an ElicitationLog for auditing.

#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "attrsyn/schema.hpp"

namespace attrsyn {

class LlmBackend {
 public:
  virtual ~LlmBackend() = default;
  // Returns the completion text. Throws BackendError on transport failure.
  virtual std::string complete(const std::string& prompt) = 0;
  virtual std::string backend_id() const = 0;
};

// Table-driven backend: exact prompt -> canned response.
class MockLlm final : public LlmBackend {
 public:
  MockLlm(std::string backend_id, std::map<std::string, std::string> responses,
          std::optional<std::string> fallback = std::nullopt);
  MockLlm(MockLlm&& other) noexcept
      : backend_id_(std::move(other.backend_id_)),
        responses_(std::move(other.responses_)),
        fallback_(std::move(other.fallback_)),
        calls_(other.calls_.load()) {}

  // {"backend_id": ..., "responses": {prompt: response}, "fallback": optional}
  static MockLlm from_file(const std::filesystem::path& path);
  static MockLlm from_json(const Json& j);
  Json to_json() const;

  std::string complete(const std::string& prompt) override;
  std::string backend_id() const override { return backend_id_; }
  std::size_t calls() const { return calls_.load(); }

 private:
  std::string backend_id_;
  std::map<std::string, std::string> responses_;
  std::optional<std::string> fallback_;
  std::atomic<std::size_t> calls_{0};
};

struct HttpLlmConfig {
  std::string base_url;                 // "https://host:port"
  std::string path = "/v1/completions";
  std::string model;
  std::string api_key_env;              // environment variable holding the bearer token
  int timeout_seconds = 120;
};

// POST {model, prompt}; the response body's "text" field is the completion.
class HttpLlm final : public LlmBackend {
 public:
  explicit HttpLlm(HttpLlmConfig config);
  std::string complete(const std::string& prompt) override;
  std::string backend_id() const override;

 private:
  HttpLlmConfig config_;
};

struct ElicitationEntry {
  std::int64_t timestamp_ms = 0;
  std::string prompt;
  std::string response;
  std::vector<std::string> parsed;       // full parse of the response
  std::vector<std::string> contributed;  // the parsed items that made it into the output
  std::string concept_id;                // empty for concept proposal
  std::optional<int> class_id;
};

void to_json(Json& j, const ElicitationEntry& e);
void from_json(const Json& j, ElicitationEntry& e);

// Append-only, thread-safe.
class ElicitationLog {
 public:
  using Clock = std::function<std::int64_t()>;

  ElicitationLog();
  explicit ElicitationLog(Clock clock);

  std::size_t append(ElicitationEntry entry);
  std::vector<ElicitationEntry> entries() const;
  std::size_t size() const;

  // One entry per line, appended after any existing content of `path`.
  void append_to_file(const std::filesystem::path& path) const;

 private:
  Clock clock_;
  mutable std::mutex mutex_;
  std::vector<ElicitationEntry> entries_;
};

// Splits on newlines and commas, strips enumeration markers ("1.", "2)",
// "-", "*", "•"), normalizes, drops empties, and removes case-insensitive
// duplicates keeping first occurrence.
std::vector<std::string> parse_list_response(std::string_view text);

inline constexpr std::string_view kListFormatInstruction = "Answer as a plain comma-separated list.";
inline constexpr std::string_view kRetryInstruction = "Please list more.";
inline constexpr int kDefaultValuesPerConcept = 5;

// "Which attributes would you consider to distinguish a {domain} of a {noun}?"
std::string concept_query(const DatasetSpec& spec);

// Class-dependent: "Please list some common {concept} related to the {class}."
// Class-independent: "Please list some common {concept}."
// Both followed by the list-format instruction.
std::string value_query(const AttributeConcept& concept_def, const ClassLabel* class_label);

std::vector<AttributeConcept> propose_concepts(const DatasetSpec& spec, LlmBackend& llm, ElicitationLog& log);

AttributeValueSet generate_values(const AttributeConcept& concept_def, const std::optional<ClassLabel>& class_label,
                                  LlmBackend& llm, int target_count, ElicitationLog& log);

// Value sets for every accepted concept: one per class for class-dependent
// concepts, one shared set otherwise. Output order: concept order, then class id.
std::vector<AttributeValueSet> generate_value_pool(const DatasetSpec& spec,
                                                   const std::vector<AttributeConcept>& accepted, LlmBackend& llm,
                                                   int target_count, int parallelism, ElicitationLog& log);

void save_value_pool(const std::vector<AttributeValueSet>& pool, const std::filesystem::path& path);
std::vector<AttributeValueSet> load_value_pool(const std::filesystem::path& path);

}  // namespace attrsyn
