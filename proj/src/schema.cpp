// Copyright 2026 The AttrSyn Authors.
// SPDX-License-Identifier: Apache-2.0

#include "attrsyn/schema.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <initializer_list>
#include <set>
#include <sstream>
#include <unordered_set>

#include "attrsyn/digest.hpp"
#include "attrsyn/error.hpp"
#include "attrsyn/io.hpp"

namespace fs = std::filesystem;

namespace attrsyn {
namespace {

bool is_space(unsigned char c) { return std::isspace(c) != 0; }

const Json& require_key(const Json& j, const char* key, const char* what) {
  if (!j.is_object()) throw ParseError(std::string(what) + ": expected a JSON object");
  auto it = j.find(key);
  if (it == j.end()) throw ParseError(std::string(what) + ": missing key \"" + key + "\"");
  return *it;
}

void reject_unknown_keys(const Json& j, std::initializer_list<const char*> allowed, const char* what) {
  for (const auto& [key, _] : j.items()) {
    bool known = std::any_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; });
    if (!known) throw ParseError(std::string(what) + ": unknown key \"" + key + "\"");
  }
}

template <typename T>
std::optional<T> optional_field(const Json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  return it->template get<T>();
}

template <typename T>
Json optional_json(const std::optional<T>& v) {
  return v ? Json(*v) : Json(nullptr);
}

bool is_identifier(std::string_view s) {
  if (s.empty()) return false;
  return std::all_of(s.begin(), s.end(), [](unsigned char c) {
    return std::isalnum(c) != 0 || c == '-' || c == '_' || c == '.';
  });
}

}  // namespace

DatasetSpec DatasetSpec::with_classes(std::string name, std::string domain_name, std::string class_noun,
                                      const std::vector<std::string>& class_names) {
  DatasetSpec spec;
  spec.name = std::move(name);
  spec.domain_name = std::move(domain_name);
  spec.class_noun = std::move(class_noun);
  spec.classes.reserve(class_names.size());
  for (std::size_t i = 0; i < class_names.size(); ++i) {
    spec.classes.push_back({static_cast<int>(i), class_names[i]});
  }
  return spec;
}

const ClassLabel& DatasetSpec::class_at(int id) const {
  if (id < 0 || id >= num_classes()) {
    throw PreconditionError("class id " + std::to_string(id) + " out of range for dataset " + name);
  }
  return classes[static_cast<std::size_t>(id)];
}

std::vector<std::string> validate_dataset(const DatasetSpec& spec) {
  std::vector<std::string> violations;
  if (!is_identifier(spec.name)) violations.push_back("dataset name is not an identifier: \"" + spec.name + "\"");
  if (spec.domain_name.empty()) violations.push_back("empty domain_name");
  if (spec.classes.empty()) violations.push_back("dataset has no classes");
  std::set<std::string> seen;
  std::set<std::string> reported;
  for (std::size_t i = 0; i < spec.classes.size(); ++i) {
    const ClassLabel& c = spec.classes[i];
    if (c.id != static_cast<int>(i)) {
      violations.push_back("class id mismatch at position " + std::to_string(i) + ": id " + std::to_string(c.id));
    }
    if (c.name.empty()) {
      violations.push_back("empty class name at position " + std::to_string(i));
      continue;
    }
    if (!seen.insert(c.name).second && reported.insert(c.name).second) {
      violations.push_back("duplicate class name: " + c.name);
    }
  }
  return violations;
}

void require_valid_dataset(const DatasetSpec& spec) {
  const auto violations = validate_dataset(spec);
  if (violations.empty()) return;
  std::string msg = "invalid dataset spec";
  for (const auto& v : violations) msg += "; " + v;
  throw PreconditionError(msg);
}

std::string normalize_value(std::string_view raw) {
  std::string out;
  out.reserve(raw.size());
  bool pending_space = false;
  for (char ch : raw) {
    const auto c = static_cast<unsigned char>(ch);
    if (is_space(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : ch);
  }
  return out;
}

bool is_normalized_value(std::string_view value) {
  return !value.empty() && normalize_value(value) == value && value.find(kPromptSeparator) == std::string_view::npos;
}

std::string slugify(std::string_view text) {
  std::string out;
  bool dash = false;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) != 0) {
      if (dash && !out.empty()) out.push_back('-');
      dash = false;
      out.push_back(static_cast<char>(std::tolower(c)));
    } else {
      dash = true;
    }
  }
  return out.empty() ? std::string("concept") : out;
}

std::vector<std::string> validate_value_set(const AttributeValueSet& set, const AttributeConcept& concept_def) {
  std::vector<std::string> violations;
  if (set.concept_id != concept_def.id) {
    violations.push_back("value set concept " + set.concept_id + " does not match concept " + concept_def.id);
  }
  if (set.values.empty()) violations.push_back("empty value set for concept " + set.concept_id);
  std::unordered_set<std::string> seen;
  for (const auto& v : set.values) {
    if (!is_normalized_value(v)) violations.push_back("value not normalized: \"" + v + "\"");
    if (!seen.insert(v).second) violations.push_back("duplicate value: " + v);
  }
  const bool dependent = concept_def.kind == ConceptKind::class_dependent;
  if (dependent && !set.class_id) violations.push_back("class-dependent concept " + set.concept_id + " needs class_id");
  if (!dependent && set.class_id)
    violations.push_back("class-independent concept " + set.concept_id + " must not carry class_id");
  return violations;
}

std::vector<std::string> validate_record(const GenerationRecord& r) {
  std::vector<std::string> violations;
  if (r.record_id.empty()) violations.push_back("empty record_id");
  if (r.status == RecordStatus::done && !r.image_ref) violations.push_back("record " + r.record_id + " is done without image_ref");
  if (!(r.guidance_scale > 0.0) || !std::isfinite(r.guidance_scale)) violations.push_back("guidance_scale must be positive");
  if (r.steps <= 0) violations.push_back("steps must be positive");
  if (r.config && r.config->class_id != r.class_id) violations.push_back("config class_id differs from record class_id");
  return violations;
}

std::vector<std::string> validate_embedding(const EmbeddingRecord& r) {
  std::vector<std::string> violations;
  if (r.dim <= 0) violations.push_back("dim must be positive");
  if (static_cast<std::size_t>(std::max(r.dim, 0)) != r.vector.size()) violations.push_back("dim does not match vector length");
  if (!std::all_of(r.vector.begin(), r.vector.end(), [](float x) { return std::isfinite(x); })) {
    violations.push_back("non-finite component in embedding " + r.record_id);
  }
  return violations;
}

const char* to_string(ConceptKind kind) {
  return kind == ConceptKind::class_dependent ? "class_dependent" : "class_independent";
}

const char* to_string(ConceptStatus status) {
  switch (status) {
    case ConceptStatus::proposed: return "proposed";
    case ConceptStatus::accepted: return "accepted";
    case ConceptStatus::rejected: return "rejected";
  }
  return "proposed";
}

const char* to_string(RecordStatus status) {
  switch (status) {
    case RecordStatus::pending: return "pending";
    case RecordStatus::done: return "done";
    case RecordStatus::failed: return "failed";
  }
  return "pending";
}

ConceptKind parse_concept_kind(std::string_view text) {
  if (text == "class_dependent") return ConceptKind::class_dependent;
  if (text == "class_independent") return ConceptKind::class_independent;
  throw ParseError("unknown concept kind: " + std::string(text));
}

ConceptStatus parse_concept_status(std::string_view text) {
  if (text == "proposed") return ConceptStatus::proposed;
  if (text == "accepted") return ConceptStatus::accepted;
  if (text == "rejected") return ConceptStatus::rejected;
  throw ParseError("unknown concept status: " + std::string(text));
}

RecordStatus parse_record_status(std::string_view text) {
  if (text == "pending") return RecordStatus::pending;
  if (text == "done") return RecordStatus::done;
  if (text == "failed") return RecordStatus::failed;
  throw ParseError("unknown record status: " + std::string(text));
}

void to_json(Json& j, const ClassLabel& v) { j = Json{{"id", v.id}, {"name", v.name}}; }

void from_json(const Json& j, ClassLabel& v) {
  if (j.is_string()) {
    v.name = j.get<std::string>();
    return;
  }
  reject_unknown_keys(j, {"id", "name"}, "class label");
  v.id = require_key(j, "id", "class label").get<int>();
  v.name = require_key(j, "name", "class label").get<std::string>();
}

void to_json(Json& j, const DatasetSpec& v) {
  j = Json::object();
  j["name"] = v.name;
  j["domain_name"] = v.domain_name;
  j["class_noun"] = v.class_noun;
  j["classes"] = v.classes;
  j["test_set_ref"] = optional_json(v.test_set_ref);
}

void from_json(const Json& j, DatasetSpec& v) {
  reject_unknown_keys(j, {"name", "domain_name", "class_noun", "classes", "test_set_ref"}, "dataset spec");
  v.name = require_key(j, "name", "dataset spec").get<std::string>();
  v.domain_name = require_key(j, "domain_name", "dataset spec").get<std::string>();
  v.class_noun = j.value("class_noun", std::string());
  v.classes.clear();
  const Json& classes = require_key(j, "classes", "dataset spec");
  if (!classes.is_array()) throw ParseError("dataset spec: classes must be an array");
  for (std::size_t i = 0; i < classes.size(); ++i) {
    ClassLabel label;
    label.id = static_cast<int>(i);  // plain-string entries take positional ids
    from_json(classes[i], label);
    v.classes.push_back(std::move(label));
  }
  v.test_set_ref = optional_field<std::string>(j, "test_set_ref");
}

void to_json(Json& j, const AttributeConcept& v) {
  j = Json::object();
  j["id"] = v.id;
  j["name"] = v.name;
  j["kind"] = to_string(v.kind);
  j["status"] = to_string(v.status);
  j["decision_note"] = optional_json(v.decision_note);
  j["failed_rule"] = optional_json(v.failed_rule);
}

void from_json(const Json& j, AttributeConcept& v) {
  reject_unknown_keys(j, {"id", "name", "kind", "status", "decision_note", "failed_rule"}, "concept");
  v.name = require_key(j, "name", "concept").get<std::string>();
  v.id = j.contains("id") ? j["id"].get<std::string>() : slugify(v.name);
  v.kind = j.contains("kind") ? parse_concept_kind(j["kind"].get<std::string>()) : ConceptKind::class_dependent;
  v.status = j.contains("status") ? parse_concept_status(j["status"].get<std::string>()) : ConceptStatus::proposed;
  v.decision_note = optional_field<std::string>(j, "decision_note");
  v.failed_rule = optional_field<std::string>(j, "failed_rule");
}

void to_json(Json& j, const AttributeValueSet& v) {
  j = Json::object();
  j["concept_id"] = v.concept_id;
  j["class_id"] = optional_json(v.class_id);
  j["values"] = v.values;
}

void from_json(const Json& j, AttributeValueSet& v) {
  reject_unknown_keys(j, {"concept_id", "class_id", "values"}, "value set");
  v.concept_id = require_key(j, "concept_id", "value set").get<std::string>();
  v.class_id = optional_field<int>(j, "class_id");
  v.values = require_key(j, "values", "value set").get<std::vector<std::string>>();
}

void to_json(Json& j, const AttributeAssignment& v) { j = Json{{"concept_id", v.concept_id}, {"value", v.value}}; }

void from_json(const Json& j, AttributeAssignment& v) {
  reject_unknown_keys(j, {"concept_id", "value"}, "assignment");
  v.concept_id = require_key(j, "concept_id", "assignment").get<std::string>();
  v.value = require_key(j, "value", "assignment").get<std::string>();
}

void to_json(Json& j, const DiversityConfiguration& v) {
  j = Json::object();
  j["class_id"] = v.class_id;
  j["config_index"] = v.config_index;
  j["assignment"] = v.assignment;
}

void from_json(const Json& j, DiversityConfiguration& v) {
  reject_unknown_keys(j, {"class_id", "config_index", "assignment"}, "configuration");
  v.class_id = require_key(j, "class_id", "configuration").get<int>();
  v.config_index = require_key(j, "config_index", "configuration").get<std::uint64_t>();
  v.assignment = require_key(j, "assignment", "configuration").get<std::vector<AttributeAssignment>>();
}

void to_json(Json& j, const GenerationRecord& v) {
  j = Json::object();
  j["record_id"] = v.record_id;
  j["class_id"] = v.class_id;
  j["prompt_text"] = v.prompt_text;
  j["config"] = optional_json(v.config);
  j["seed"] = v.seed;
  j["guidance_scale"] = v.guidance_scale;
  j["steps"] = v.steps;
  j["backend_id"] = v.backend_id;
  j["image_ref"] = optional_json(v.image_ref);
  j["status"] = to_string(v.status);
  j["failure_note"] = optional_json(v.failure_note);
}

void from_json(const Json& j, GenerationRecord& v) {
  static constexpr const char* kWhat = "generation record";
  reject_unknown_keys(j,
                      {"record_id", "class_id", "prompt_text", "config", "seed", "guidance_scale", "steps",
                       "backend_id", "image_ref", "status", "failure_note"},
                      kWhat);
  v.record_id = require_key(j, "record_id", kWhat).get<std::string>();
  v.class_id = require_key(j, "class_id", kWhat).get<int>();
  v.prompt_text = require_key(j, "prompt_text", kWhat).get<std::string>();
  v.config = optional_field<DiversityConfiguration>(j, "config");
  const Json& seed = require_key(j, "seed", kWhat);
  if (!seed.is_number_unsigned() && !(seed.is_number_integer() && seed.get<std::int64_t>() >= 0)) {
    throw ParseError("generation record: seed must be an unsigned integer");
  }
  v.seed = seed.get<std::uint64_t>();
  v.guidance_scale = require_key(j, "guidance_scale", kWhat).get<double>();
  v.steps = require_key(j, "steps", kWhat).get<int>();
  v.backend_id = require_key(j, "backend_id", kWhat).get<std::string>();
  v.image_ref = optional_field<std::string>(j, "image_ref");
  v.status = parse_record_status(require_key(j, "status", kWhat).get<std::string>());
  v.failure_note = optional_field<std::string>(j, "failure_note");
}

void to_json(Json& j, const EmbeddingRecord& v) {
  j = Json::object();
  j["record_id"] = v.record_id;
  j["backbone_id"] = v.backbone_id;
  j["dim"] = v.dim;
  j["vector"] = v.vector;
}

void from_json(const Json& j, EmbeddingRecord& v) {
  reject_unknown_keys(j, {"record_id", "backbone_id", "dim", "vector"}, "embedding record");
  v.record_id = require_key(j, "record_id", "embedding record").get<std::string>();
  v.backbone_id = require_key(j, "backbone_id", "embedding record").get<std::string>();
  v.dim = require_key(j, "dim", "embedding record").get<int>();
  v.vector = require_key(j, "vector", "embedding record").get<std::vector<float>>();
}

DatasetSpec load_dataset(const fs::path& path) {
  DatasetSpec spec;
  try {
    from_json(Json::parse(read_text_file(path)), spec);
  } catch (const Json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return spec;
}

void save_dataset(const DatasetSpec& spec, const fs::path& path) {
  write_file_atomic(path, Json(spec).dump(2) + "\n");
}

std::string dataset_digest(const DatasetSpec& spec) { return sha256_hex(Json(spec).dump()); }

std::string serialize_manifest(std::span<const GenerationRecord> records) {
  std::string out;
  for (const auto& r : records) {
    out += Json(r).dump();
    out += '\n';
  }
  return out;
}

std::vector<GenerationRecord> parse_manifest(std::string_view text, std::string_view source_name,
                                             ManifestParseOptions options) {
  std::vector<GenerationRecord> records;
  std::unordered_set<std::string> ids;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const std::size_t end = std::min(text.find('\n', pos), text.size());
    const std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    const bool is_last = pos >= text.size() || text.find_first_not_of(" \t\r\n", pos) == std::string_view::npos;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    const auto where = std::string(source_name) + ":" + std::to_string(line_no) + ": ";
    GenerationRecord record;
    try {
      from_json(Json::parse(line), record);
    } catch (const std::exception& e) {
      if (options.tolerate_truncated_tail && is_last) break;
      throw ParseError(where + "malformed record: " + e.what());
    }
    const auto violations = validate_record(record);
    if (!violations.empty()) throw ParseError(where + "invalid record: " + violations.front());
    if (!ids.insert(record.record_id).second) throw ParseError(where + "duplicate record_id: " + record.record_id);
    records.push_back(std::move(record));
  }
  return records;
}

void manifest_write(std::span<const GenerationRecord> records, const fs::path& path) {
  write_file_atomic(path, serialize_manifest(records));
}

std::vector<GenerationRecord> manifest_read(const fs::path& path, ManifestParseOptions options) {
  return parse_manifest(read_text_file(path), path.string(), options);
}

}  // namespace attrsyn
