// Copyright 2026 The AttrSyn Authors.
// SPDX-License-Identifier: Apache-2.0

// Shared domain types for the synthesis pipeline, their invariants, and the
// JSON Lines manifest format. Every other module speaks these types.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace attrsyn {

using Json = nlohmann::ordered_json;

// Prompt segments are joined with this; normalized values never contain it.
inline constexpr std::string_view kPromptSeparator = ", ";

struct ClassLabel {
  int id = 0;
  std::string name;

  bool operator==(const ClassLabel&) const = default;
};

struct DatasetSpec {
  std::string name;
  std::string domain_name;  // "photo", "painting"
  std::string class_noun;   // "bird"; may be empty for generic datasets
  std::vector<ClassLabel> classes;
  std::optional<std::string> test_set_ref;

  // Builds a spec with positional class ids.
  static DatasetSpec with_classes(std::string name, std::string domain_name, std::string class_noun,
                                  const std::vector<std::string>& class_names);

  int num_classes() const { return static_cast<int>(classes.size()); }
  const ClassLabel& class_at(int id) const;

  bool operator==(const DatasetSpec&) const = default;
};

// Empty iff every DatasetSpec invariant holds; one message per violation.
std::vector<std::string> validate_dataset(const DatasetSpec& spec);

// Throws PreconditionError listing all violations.
void require_valid_dataset(const DatasetSpec& spec);

enum class ConceptKind { class_dependent, class_independent };
enum class ConceptStatus { proposed, accepted, rejected };

struct AttributeConcept {
  std::string id;
  std::string name;
  ConceptKind kind = ConceptKind::class_dependent;
  ConceptStatus status = ConceptStatus::proposed;
  std::optional<std::string> decision_note;
  std::optional<std::string> failed_rule;

  bool operator==(const AttributeConcept&) const = default;
};

struct AttributeValueSet {
  std::string concept_id;
  std::optional<int> class_id;  // absent for class-independent concepts
  std::vector<std::string> values;

  std::size_t size() const { return values.size(); }
  bool operator==(const AttributeValueSet&) const = default;
};

std::vector<std::string> validate_value_set(const AttributeValueSet& set, const AttributeConcept& concept_def);

struct AttributeAssignment {
  std::string concept_id;
  std::string value;

  bool operator==(const AttributeAssignment&) const = default;
};

struct DiversityConfiguration {
  int class_id = 0;
  std::vector<AttributeAssignment> assignment;  // concept acceptance order
  std::uint64_t config_index = 0;

  bool operator==(const DiversityConfiguration&) const = default;
};

enum class RecordStatus { pending, done, failed };

struct GenerationRecord {
  std::string record_id;
  int class_id = 0;
  std::string prompt_text;
  std::optional<DiversityConfiguration> config;  // absent for base-prompt records
  std::uint64_t seed = 0;
  double guidance_scale = 5.0;
  int steps = 50;
  std::string backend_id;
  std::optional<std::string> image_ref;
  RecordStatus status = RecordStatus::pending;
  std::optional<std::string> failure_note;

  bool operator==(const GenerationRecord&) const = default;
};

std::vector<std::string> validate_record(const GenerationRecord& record);

struct EmbeddingRecord {
  std::string record_id;
  std::string backbone_id;
  std::vector<float> vector;
  int dim = 0;

  bool operator==(const EmbeddingRecord&) const = default;
};

std::vector<std::string> validate_embedding(const EmbeddingRecord& record);

// Lowercase (ASCII), trim, collapse internal whitespace runs to one space.
std::string normalize_value(std::string_view raw);

// True when `value` is non-empty, already normalized, and free of the separator.
bool is_normalized_value(std::string_view value);

// "bill and beak" -> "bill-and-beak". Used for concept ids.
std::string slugify(std::string_view text);

const char* to_string(ConceptKind kind);
const char* to_string(ConceptStatus status);
const char* to_string(RecordStatus status);
ConceptKind parse_concept_kind(std::string_view text);
ConceptStatus parse_concept_status(std::string_view text);
RecordStatus parse_record_status(std::string_view text);

// JSON mapping. Keys are emitted in a fixed order so identical inputs always
// serialize to identical bytes.
void to_json(Json& j, const ClassLabel& v);
void from_json(const Json& j, ClassLabel& v);
void to_json(Json& j, const DatasetSpec& v);
void from_json(const Json& j, DatasetSpec& v);
void to_json(Json& j, const AttributeConcept& v);
void from_json(const Json& j, AttributeConcept& v);
void to_json(Json& j, const AttributeValueSet& v);
void from_json(const Json& j, AttributeValueSet& v);
void to_json(Json& j, const AttributeAssignment& v);
void from_json(const Json& j, AttributeAssignment& v);
void to_json(Json& j, const DiversityConfiguration& v);
void from_json(const Json& j, DiversityConfiguration& v);
void to_json(Json& j, const GenerationRecord& v);
void from_json(const Json& j, GenerationRecord& v);
void to_json(Json& j, const EmbeddingRecord& v);
void from_json(const Json& j, EmbeddingRecord& v);

DatasetSpec load_dataset(const std::filesystem::path& path);
void save_dataset(const DatasetSpec& spec, const std::filesystem::path& path);

// Digest of the canonical serialization; used to detect mixing datasets.
std::string dataset_digest(const DatasetSpec& spec);

// One GenerationRecord per line, newline-terminated.
std::string serialize_manifest(std::span<const GenerationRecord> records);

struct ManifestParseOptions {
  // Ignore a malformed final line (an append interrupted by a crash).
  bool tolerate_truncated_tail = false;
};

// Errors name the source and 1-based line number.
std::vector<GenerationRecord> parse_manifest(std::string_view text, std::string_view source_name,
                                             ManifestParseOptions options = {});

void manifest_write(std::span<const GenerationRecord> records, const std::filesystem::path& path);
std::vector<GenerationRecord> manifest_read(const std::filesystem::path& path,
                                            ManifestParseOptions options = {});

}  // namespace attrsyn
