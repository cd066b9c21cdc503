// Copyright 2026 The AttrSyn Authors.
// SPDX-License-Identifier: Apache-2.0

#include "attrsyn/forge.hpp"

#include <algorithm>
#include <cctype>
#include <limits>
#include <unordered_map>

#include "attrsyn/error.hpp"
#include "attrsyn/rng.hpp"

namespace attrsyn {
namespace {

// Lazily evaluated Fisher-Yates over [0, n): yields the first `take` elements
// of a uniform random permutation in O(take) time and memory.
void partial_permutation(std::uint64_t n, std::uint64_t take, CounterRng& rng, std::vector<std::uint64_t>& out) {
  std::unordered_map<std::uint64_t, std::uint64_t> swapped;
  auto at = [&](std::uint64_t i) {
    auto it = swapped.find(i);
    return it == swapped.end() ? i : it->second;
  };
  for (std::uint64_t i = 0; i < take; ++i) {
    const std::uint64_t j = i + rng.uniform_below(n - i);
    const std::uint64_t vi = at(i);
    const std::uint64_t vj = at(j);
    swapped[j] = vi;
    swapped[i] = vj;
    out.push_back(vj);
  }
}

}  // namespace

std::vector<AttributeValueSet> value_sets_for_class(const std::vector<AttributeConcept>& accepted,
                                                    const std::vector<AttributeValueSet>& pool, int class_id) {
  std::vector<AttributeValueSet> sets;
  sets.reserve(accepted.size());
  for (const auto& c : accepted) {
    const bool dependent = c.kind == ConceptKind::class_dependent;
    auto it = std::find_if(pool.begin(), pool.end(), [&](const AttributeValueSet& s) {
      return s.concept_id == c.id && (dependent ? s.class_id == class_id : !s.class_id.has_value());
    });
    if (it == pool.end()) {
      throw PreconditionError("missing value set for concept " + c.id +
                              (dependent ? " (class " + std::to_string(class_id) + ")" : std::string()));
    }
    sets.push_back(*it);
  }
  return sets;
}

std::uint64_t config_count(std::span<const AttributeValueSet> sets) {
  std::uint64_t n = 1;
  for (const auto& s : sets) {
    const std::uint64_t k = s.values.size();
    if (k != 0 && n > std::numeric_limits<std::uint64_t>::max() / k) {
      throw PreconditionError("diversity count overflows 64 bits");
    }
    n *= k;
  }
  return n;
}

DiversityConfiguration config_at(int class_id, std::span<const AttributeValueSet> sets, std::uint64_t index) {
  for (const auto& s : sets) {
    if (s.class_id && *s.class_id != class_id) {
      throw PreconditionError("class mismatch: value set for concept " + s.concept_id + " belongs to class " +
                              std::to_string(*s.class_id) + ", not " + std::to_string(class_id));
    }
  }
  const std::uint64_t count = config_count(sets);
  if (index >= count) throw PreconditionError("config index " + std::to_string(index) + " out of range");
  DiversityConfiguration config;
  config.class_id = class_id;
  config.config_index = index;
  config.assignment.resize(sets.size());
  std::uint64_t rest = index;
  for (std::size_t i = sets.size(); i-- > 0;) {
    const std::uint64_t k = sets[i].values.size();
    config.assignment[i] = {sets[i].concept_id, sets[i].values[rest % k]};
    rest /= k;
  }
  return config;
}

std::vector<DiversityConfiguration> enumerate_configs(int class_id, std::span<const AttributeValueSet> sets) {
  const std::uint64_t count = config_count(sets);
  std::vector<DiversityConfiguration> out;
  if (count == 0) return out;
  out.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) out.push_back(config_at(class_id, sets, i));
  return out;
}

std::optional<std::uint64_t> DiversityCount::uniform_per_class() const {
  if (per_class.empty()) return std::nullopt;
  const bool uniform = std::all_of(per_class.begin(), per_class.end(), [&](auto n) { return n == per_class.front(); });
  return uniform ? std::optional(per_class.front()) : std::nullopt;
}

DiversityCount diversity_count(const std::vector<AttributeConcept>& accepted,
                               const std::vector<AttributeValueSet>& pool, const DatasetSpec& dataset) {
  DiversityCount count;
  for (const auto& label : dataset.classes) {
    const auto sets = value_sets_for_class(accepted, pool, label.id);
    const std::uint64_t n = config_count(sets);
    if (count.total > std::numeric_limits<std::uint64_t>::max() - n) {
      throw PreconditionError("dataset diversity total overflows 64 bits");
    }
    count.per_class.push_back(n);
    count.total += n;
  }
  return count;
}

GenerationPlan sample_plan(const DatasetSpec& dataset, const std::vector<std::uint64_t>& configs_per_class,
                           int per_class, std::uint64_t seed) {
  if (per_class < 1) throw PreconditionError("per_class must be >= 1");
  if (configs_per_class.size() != dataset.classes.size()) {
    throw PreconditionError("configuration counts must cover every class");
  }
  std::vector<std::vector<std::uint64_t>> draws(dataset.classes.size());
  for (std::size_t c = 0; c < dataset.classes.size(); ++c) {
    const std::uint64_t n = configs_per_class[c];
    if (n == 0) throw PreconditionError("empty configuration list for class " + dataset.classes[c].name);
    auto& seq = draws[c];
    seq.reserve(static_cast<std::size_t>(per_class));
    for (std::uint64_t cycle = 0; seq.size() < static_cast<std::size_t>(per_class); ++cycle) {
      CounterRng rng(combine_keys({seed, static_cast<std::uint64_t>(c), cycle}));
      const std::uint64_t take = std::min<std::uint64_t>(n, static_cast<std::uint64_t>(per_class) - seq.size());
      partial_permutation(n, take, rng, seq);
    }
  }
  GenerationPlan plan;
  plan.dataset = dataset.name;
  plan.per_class = per_class;
  plan.seed = seed;
  plan.entries.reserve(dataset.classes.size() * static_cast<std::size_t>(per_class));
  for (int r = 0; r < per_class; ++r) {
    for (std::size_t c = 0; c < dataset.classes.size(); ++c) {
      plan.entries.push_back({static_cast<int>(c), draws[c][static_cast<std::size_t>(r)], r});
    }
  }
  return plan;
}

GenerationPlan sample_base_plan(const DatasetSpec& dataset, int per_class, std::uint64_t seed) {
  if (per_class < 1) throw PreconditionError("per_class must be >= 1");
  GenerationPlan plan;
  plan.dataset = dataset.name;
  plan.per_class = per_class;
  plan.seed = seed;
  for (int r = 0; r < per_class; ++r) {
    for (const auto& label : dataset.classes) plan.entries.push_back({label.id, std::nullopt, r});
  }
  return plan;
}

std::string assemble_prompt(const ClassLabel& class_label, const DiversityConfiguration& config) {
  std::string prompt = "A " + class_label.name;
  for (const auto& a : config.assignment) {
    if (a.value.find(kPromptSeparator) != std::string::npos) {
      throw PreconditionError("attribute value contains the prompt separator: \"" + a.value + "\"");
    }
    prompt += kPromptSeparator;
    prompt += a.value;
  }
  return prompt;
}

std::string base_prompt(const ClassLabel& class_label, const DatasetSpec& dataset) {
  const std::string raw = "a " + class_label.name + " " + dataset.class_noun + ", " + dataset.domain_name;
  std::string out;
  for (char ch : raw) {
    const bool space = std::isspace(static_cast<unsigned char>(ch)) != 0;
    if (space && (out.empty() || out.back() == ' ')) continue;
    if (ch == ',' && !out.empty() && out.back() == ' ') out.pop_back();
    out.push_back(space ? ' ' : ch);
  }
  while (!out.empty() && out.back() == ' ') out.pop_back();
  return out;
}

}  // namespace attrsyn
