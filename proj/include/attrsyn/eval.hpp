// Copyright 2026 The AttrSyn Authors.
// SPDX-License-Identifier: Apache-2.0

// Zero-shot baseline, accuracy, experiment runner, scale ablation, and the
// results table.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "attrsyn/embed.hpp"
#include "attrsyn/forge.hpp"
#include "attrsyn/probe.hpp"
#include "attrsyn/schema.hpp"

namespace attrsyn {

enum class Method { zeroshot, base_prompt, attrsyn };
enum class Classifier { lr, mlp };

const char* to_string(Method m);
const char* to_string(Classifier c);
Method parse_method(std::string_view text);
Classifier parse_classifier(std::string_view text);

struct EvalResult {
  std::string dataset;
  std::string backbone_id;
  Method method = Method::zeroshot;
  std::optional<Classifier> classifier;
  double accuracy = 0;
  std::vector<std::optional<double>> per_class_accuracy;  // nullopt for classes absent from the test set
  int n_train = 0;
  std::string config_digest;
  std::string dataset_digest;

  // "zeroshot", "attrsyn+lr", ...
  std::string method_label() const;
  bool operator==(const EvalResult&) const = default;
};

void to_json(Json& j, const EvalResult& r);
void from_json(const Json& j, EvalResult& r);
void save_results(std::span<const EvalResult> results, const std::filesystem::path& path);
std::vector<EvalResult> load_results(const std::filesystem::path& path);

// Cosine argmax: both sides are L2-normalized, ties go to the smaller class id.
// Row c of class_text_embs is class c.
std::vector<int> zeroshot_predict(const EmbeddingMatrix& image_embs, const EmbeddingMatrix& class_text_embs);

struct AccuracyReport {
  double overall = 0;
  std::vector<std::optional<double>> per_class;
};

AccuracyReport accuracy(std::span<const int> predictions, std::span<const int> labels, int num_classes);

struct ProbeConfig {
  LrOptions lr;
  MlpOptions mlp;
  bool normalize_features = false;  // L2-normalize train and test rows before probing
};

Json to_json(const ProbeConfig& c);

struct ExperimentSpec {
  DatasetSpec dataset;
  std::string backbone_id;
  Method method = Method::zeroshot;
  std::optional<Classifier> classifier;  // required unless zeroshot
  const EmbeddingMatrix* train = nullptr;        // labelled, for base_prompt / attrsyn
  const EmbeddingMatrix* class_texts = nullptr;  // for zeroshot
  const EmbeddingMatrix* test = nullptr;         // labelled
  ProbeConfig probe;
  Json extra_config = Json::object();  // upstream knobs folded into the digest
  std::optional<std::filesystem::path> model_out;  // where to save the trained probe
};

// sha256 over the canonical JSON of every knob plus digests of the inputs.
std::string experiment_digest(const ExperimentSpec& spec);

EvalResult run_experiment(const ExperimentSpec& spec);

// Digest of a feature matrix: row ids, labels, and the float64 data bytes.
std::string matrix_digest(const EmbeddingMatrix& m);

// First `scale` entries of sample_plan at ceil(scale / classes) per class.
// Without allow_remainder the scale must be a positive multiple of the class
// count; with it, early classes receive the extra entries.
GenerationPlan ablation_plan(const DatasetSpec& dataset, const std::vector<std::uint64_t>& configs_per_class,
                             int scale, std::uint64_t seed, bool allow_remainder);

struct AblationSpec {
  DatasetSpec dataset;
  std::vector<std::uint64_t> configs_per_class;
  std::string backbone_id;
  Classifier classifier = Classifier::lr;
  std::vector<int> scales;
  std::uint64_t seed = 42;
  bool allow_remainder = false;
  const EmbeddingMatrix* test = nullptr;
  ProbeConfig probe;
  Json extra_config = Json::object();
  // Generates (or reuses) and embeds the plan's images; rows labelled.
  std::function<EmbeddingMatrix(const GenerationPlan&)> features_for_plan;
};

// One attrsyn result per scale, in the given scale order.
std::vector<EvalResult> ablate_scale(const AblationSpec& spec);

struct RenderedResults {
  std::string table;
  std::string plot_tsv;
};

// Text table grouped by backbone (first-appearance order), methods as rows,
// datasets as columns. The best cell of each (backbone, dataset) column gets
// "*" when the column has more than one entry; rows other than zeroshot show
// the percentage-point delta against that column's zeroshot cell. When a
// row label repeats, the entry with the largest n_train is shown. The TSV
// lists every result: n_train, accuracy, method, backbone.
RenderedResults render_results(std::span<const EvalResult> results);

// Throws ConflictError if two results for the same dataset name carry
// different dataset digests.
void check_mergeable(std::span<const EvalResult> results);

// "+1.15%" style delta from two accuracies, via rounded basis points.
std::string format_delta(double accuracy, double baseline);

}  // namespace attrsyn
