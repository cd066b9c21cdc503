// Copyright 2026 The AttrSyn Authors.
// SPDX-License-Identifier: Apache-2.0

// Diversity configurations, generation plans, and prompt assembly.

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "attrsyn/schema.hpp"

namespace attrsyn {

// Value sets of every accepted concept for one class, in concept order.
// Class-dependent concepts resolve to the set tagged with class_id.
std::vector<AttributeValueSet> value_sets_for_class(const std::vector<AttributeConcept>& accepted,
                                                    const std::vector<AttributeValueSet>& pool, int class_id);

// Product of the set sizes; the empty product is 1. Throws on overflow.
std::uint64_t config_count(std::span<const AttributeValueSet> sets);

// Mixed-radix decode of `index`, last concept varying fastest.
DiversityConfiguration config_at(int class_id, std::span<const AttributeValueSet> sets, std::uint64_t index);

// The full Cartesian product in lexicographic index order.
std::vector<DiversityConfiguration> enumerate_configs(int class_id, std::span<const AttributeValueSet> sets);

struct DiversityCount {
  std::vector<std::uint64_t> per_class;
  std::uint64_t total = 0;

  // Set when every class has the same count.
  std::optional<std::uint64_t> uniform_per_class() const;
};

DiversityCount diversity_count(const std::vector<AttributeConcept>& accepted,
                               const std::vector<AttributeValueSet>& pool, const DatasetSpec& dataset);

struct PlanEntry {
  int class_id = 0;
  std::optional<std::uint64_t> config_index;  // nullopt marks a base-prompt entry
  int replica_index = 0;                      // position within the class

  bool is_base() const { return !config_index.has_value(); }
  bool operator==(const PlanEntry&) const = default;
};

// Entries are ordered replica-major (replica 0 of every class, then replica
// 1, ...), so the plan for a smaller per_class is a literal prefix of the
// plan for a larger one under the same seed.
struct GenerationPlan {
  std::string dataset;
  int per_class = 0;
  std::uint64_t seed = 0;
  std::vector<PlanEntry> entries;
};

// For each class draws per_class configuration indices uniformly without
// replacement; beyond the class's count, further cycles are fresh permutations.
// Each class's stream is keyed on (seed, class_id).
GenerationPlan sample_plan(const DatasetSpec& dataset, const std::vector<std::uint64_t>& configs_per_class,
                           int per_class, std::uint64_t seed);

GenerationPlan sample_base_plan(const DatasetSpec& dataset, int per_class, std::uint64_t seed);

// "A {class name}, v1, v2, ..." in concept acceptance order.
std::string assemble_prompt(const ClassLabel& class_label, const DiversityConfiguration& config);

// "a {class name} {class noun}, {domain name}", whitespace collapsed.
std::string base_prompt(const ClassLabel& class_label, const DatasetSpec& dataset);

}  // namespace attrsyn
