// Copyright 2026 The AttrSyn Authors.
// SPDX-License-Identifier: Apache-2.0

#include "attrsyn/elicit.hpp"

#include <cctype>
#include <chrono>
#include <fstream>
#include <set>
#include <unordered_set>

#include "attrsyn/error.hpp"
#include "attrsyn/io.hpp"
#include "attrsyn/parallel.hpp"

namespace fs = std::filesystem;

namespace attrsyn {
namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

// Removes one leading enumeration marker; returns false when none is present.
bool strip_marker(std::string_view& s) {
  static constexpr std::string_view kBullet = "\xe2\x80\xa2";
  if (s.starts_with(kBullet)) {
    s.remove_prefix(kBullet.size());
    return true;
  }
  if (!s.empty() && (s.front() == '-' || s.front() == '*')) {
    s.remove_prefix(1);
    return true;
  }
  std::size_t digits = 0;
  while (digits < s.size() && std::isdigit(static_cast<unsigned char>(s[digits]))) ++digits;
  if (digits > 0 && digits < s.size() && (s[digits] == '.' || s[digits] == ')')) {
    const std::size_t after = digits + 1;
    if (after == s.size() || std::isspace(static_cast<unsigned char>(s[after]))) {
      s.remove_prefix(after);
      return true;
    }
  }
  return false;
}

std::int64_t wall_clock_ms() {
  using namespace std::chrono;
  return duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count();
}

std::string call_backend(LlmBackend& llm, const std::string& prompt) {
  try {
    return llm.complete(prompt);
  } catch (const BackendError& e) {
    throw BackendError(std::string(e.what()) + " [prompt: " + prompt + "]");
  }
}

}  // namespace

MockLlm::MockLlm(std::string backend_id, std::map<std::string, std::string> responses,
                 std::optional<std::string> fallback)
    : backend_id_(std::move(backend_id)), responses_(std::move(responses)), fallback_(std::move(fallback)) {}

MockLlm MockLlm::from_json(const Json& j) {
  try {
    std::map<std::string, std::string> table;
    for (const auto& [prompt, response] : j.at("responses").items()) table[prompt] = response.get<std::string>();
    std::optional<std::string> fallback;
    if (j.contains("fallback") && !j["fallback"].is_null()) fallback = j["fallback"].get<std::string>();
    return MockLlm(j.value("backend_id", std::string("mock-llm")), std::move(table), std::move(fallback));
  } catch (const Json::exception& e) {
    throw ParseError(std::string("mock llm table: ") + e.what());
  }
}

MockLlm MockLlm::from_file(const fs::path& path) {
  try {
    return from_json(Json::parse(read_text_file(path)));
  } catch (const Json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

Json MockLlm::to_json() const {
  Json j = Json::object();
  j["backend_id"] = backend_id_;
  j["responses"] = Json::object();
  for (const auto& [prompt, response] : responses_) j["responses"][prompt] = response;
  j["fallback"] = fallback_ ? Json(*fallback_) : Json(nullptr);
  return j;
}

std::string MockLlm::complete(const std::string& prompt) {
  ++calls_;
  if (auto it = responses_.find(prompt); it != responses_.end()) return it->second;
  if (fallback_) return *fallback_;
  throw BackendError("mock llm has no response for prompt");
}

void to_json(Json& j, const ElicitationEntry& e) {
  j = Json::object();
  j["timestamp_ms"] = e.timestamp_ms;
  j["concept_id"] = e.concept_id;
  j["class_id"] = e.class_id ? Json(*e.class_id) : Json(nullptr);
  j["prompt"] = e.prompt;
  j["response"] = e.response;
  j["parsed"] = e.parsed;
  j["contributed"] = e.contributed;
}

void from_json(const Json& j, ElicitationEntry& e) {
  e.timestamp_ms = j.at("timestamp_ms").get<std::int64_t>();
  e.concept_id = j.at("concept_id").get<std::string>();
  e.class_id = j.at("class_id").is_null() ? std::nullopt : std::optional<int>(j["class_id"].get<int>());
  e.prompt = j.at("prompt").get<std::string>();
  e.response = j.at("response").get<std::string>();
  e.parsed = j.at("parsed").get<std::vector<std::string>>();
  e.contributed = j.at("contributed").get<std::vector<std::string>>();
}

ElicitationLog::ElicitationLog() : clock_(wall_clock_ms) {}
ElicitationLog::ElicitationLog(Clock clock) : clock_(std::move(clock)) {}

std::size_t ElicitationLog::append(ElicitationEntry entry) {
  std::lock_guard lock(mutex_);
  entry.timestamp_ms = clock_();
  entries_.push_back(std::move(entry));
  return entries_.size() - 1;
}

std::vector<ElicitationEntry> ElicitationLog::entries() const {
  std::lock_guard lock(mutex_);
  return entries_;
}

std::size_t ElicitationLog::size() const {
  std::lock_guard lock(mutex_);
  return entries_.size();
}

void ElicitationLog::append_to_file(const fs::path& path) const {
  std::lock_guard lock(mutex_);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::app | std::ios::binary);
  if (!out) throw IoError("cannot open elicitation log: " + path.string());
  for (const auto& e : entries_) out << Json(e).dump() << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

std::vector<std::string> parse_list_response(std::string_view text) {
  std::vector<std::string> items;
  std::unordered_set<std::string> seen;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find_first_of(",\n", start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view item = trim(text.substr(start, end - start));
    while (strip_marker(item)) item = trim(item);
    std::string value = normalize_value(item);
    if (!value.empty() && seen.insert(value).second) items.push_back(std::move(value));
    start = end + 1;
  }
  return items;
}

std::string concept_query(const DatasetSpec& spec) {
  return "Which attributes would you consider to distinguish a " + spec.domain_name + " of a " + spec.class_noun +
         "?";
}

std::string value_query(const AttributeConcept& concept_def, const ClassLabel* class_label) {
  std::string q = "Please list some common " + concept_def.name;
  if (class_label != nullptr) q += " related to the " + class_label->name;
  q += ". ";
  q += kListFormatInstruction;
  return q;
}

std::vector<AttributeConcept> propose_concepts(const DatasetSpec& spec, LlmBackend& llm, ElicitationLog& log) {
  require_valid_dataset(spec);
  const std::string prompt = concept_query(spec);
  ElicitationEntry entry;
  entry.prompt = prompt;
  entry.response = call_backend(llm, prompt);
  entry.parsed = parse_list_response(entry.response);
  entry.contributed = entry.parsed;
  const bool empty = entry.parsed.empty();
  const auto names = entry.parsed;
  log.append(std::move(entry));
  if (empty) throw ParseError("unparseable response");

  std::vector<AttributeConcept> concepts;
  std::set<std::string> ids;
  for (const auto& name : names) {
    std::string id = slugify(name);
    for (int n = 2; !ids.insert(id).second; ++n) id = slugify(name) + "-" + std::to_string(n);
    AttributeConcept c;
    c.id = id;
    c.name = name;
    concepts.push_back(std::move(c));
  }
  return concepts;
}

AttributeValueSet generate_values(const AttributeConcept& concept_def, const std::optional<ClassLabel>& class_label,
                                  LlmBackend& llm, int target_count, ElicitationLog& log) {
  if (concept_def.status != ConceptStatus::accepted) {
    throw PreconditionError("concept " + concept_def.id + " is not accepted");
  }
  const bool dependent = concept_def.kind == ConceptKind::class_dependent;
  if (dependent && !class_label) throw PreconditionError("class-dependent concept " + concept_def.id + " needs a class");
  if (!dependent && class_label) {
    throw PreconditionError("class-independent concept " + concept_def.id + " takes no class");
  }
  if (target_count < 1) throw PreconditionError("target_count must be >= 1");

  AttributeValueSet out;
  out.concept_id = concept_def.id;
  if (class_label) out.class_id = class_label->id;
  std::unordered_set<std::string> seen;

  const std::string base_prompt = value_query(concept_def, class_label ? &*class_label : nullptr);
  for (int attempt = 0; attempt < 2; ++attempt) {
    ElicitationEntry entry;
    entry.prompt = attempt == 0 ? base_prompt : base_prompt + " " + std::string(kRetryInstruction);
    entry.concept_id = concept_def.id;
    entry.class_id = out.class_id;
    entry.response = call_backend(llm, entry.prompt);
    entry.parsed = parse_list_response(entry.response);
    for (const auto& v : entry.parsed) {
      if (static_cast<int>(out.values.size()) >= target_count) break;
      if (seen.insert(v).second) {
        out.values.push_back(v);
        entry.contributed.push_back(v);
      }
    }
    log.append(std::move(entry));
    if (static_cast<int>(out.values.size()) >= target_count) return out;
  }
  throw BackendError("insufficient values: got " + std::to_string(out.values.size()) + ", need " +
                     std::to_string(target_count));
}

std::vector<AttributeValueSet> generate_value_pool(const DatasetSpec& spec,
                                                   const std::vector<AttributeConcept>& accepted, LlmBackend& llm,
                                                   int target_count, int parallelism, ElicitationLog& log) {
  require_valid_dataset(spec);
  struct Job {
    const AttributeConcept* concept_def;
    std::optional<ClassLabel> label;
  };
  std::vector<Job> jobs;
  for (const auto& c : accepted) {
    if (c.kind == ConceptKind::class_dependent) {
      for (const auto& label : spec.classes) jobs.push_back({&c, label});
    } else {
      jobs.push_back({&c, std::nullopt});
    }
  }
  std::vector<AttributeValueSet> pool(jobs.size());
  parallel_for(jobs.size(), parallelism, [&](std::size_t i) {
    pool[i] = generate_values(*jobs[i].concept_def, jobs[i].label, llm, target_count, log);
  });
  return pool;
}

void save_value_pool(const std::vector<AttributeValueSet>& pool, const fs::path& path) {
  write_file_atomic(path, Json(pool).dump(2) + "\n");
}

std::vector<AttributeValueSet> load_value_pool(const fs::path& path) {
  try {
    return Json::parse(read_text_file(path)).get<std::vector<AttributeValueSet>>();
  } catch (const Json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

}  // namespace attrsyn
