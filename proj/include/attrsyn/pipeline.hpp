// Copyright 2026 The AttrSyn Authors.
// SPDX-License-Identifier: Apache-2.0

// Workflow steps shared by the command line and the demo. Every path is
// relative to RunConfig::workdir.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "attrsyn/curation.hpp"
#include "attrsyn/dispatch.hpp"
#include "attrsyn/elicit.hpp"
#include "attrsyn/embed.hpp"
#include "attrsyn/eval.hpp"
#include "attrsyn/forge.hpp"
#include "attrsyn/schema.hpp"

namespace attrsyn {

struct RunConfig {
  std::filesystem::path workdir = ".";
  std::string dataset = "dataset.json";
  std::uint64_t seed = 42;
  int parallelism = 4;

  struct Llm {
    std::string kind = "mock";  // mock | http
    std::string responses = "mock_llm.json";
    std::string base_url;
    std::string path = "/v1/completions";
    std::string model;
    std::string api_key_env;
    int values_per_concept = kDefaultValuesPerConcept;
  } llm;

  struct Image {
    std::string kind = "mock";
    std::string backend_id = "mock-image";
    int size = 16;  // mock only
    std::string base_url;
    std::string path = "/generate";
    std::string api_key_env;
    double guidance_scale = 5.0;
    int steps = 50;
    int retries = 3;
    int backoff_ms = 200;
  } image;

  struct Embed {
    std::string kind = "mock";
    std::string backbone_id = "mock-clip";
    int dim = 64;
    double noise = 0.05;  // mock only
    std::string base_url;
    std::string api_key_env;
    std::string text_template = kClassTextTemplate;
  } embed;

  struct Plan {
    int per_class = 30;
  } plan;

  ProbeConfig probe;

  struct Eval {
    std::string test_features = "features/test.jsonl";
    int mock_test_per_class = 10;
  } eval;

  // Canonical JSON of every knob except workdir.
  Json to_json() const;
  std::string digest() const;
  GenParams gen_params() const;
};

// One settable config entry: "section.key" in the config file, --section-key
// on the command line (top-level keys have no section).
struct Setting {
  std::string key;
  std::string flag;
  std::string help;
  std::function<void(const std::vector<std::string>&)> assign;
  std::function<std::string()> current;
};

std::vector<Setting> config_settings(RunConfig& config);

// Applies a TOML config document. Unknown keys are a ParseError.
void apply_config_text(RunConfig& config, const std::string& text, const std::string& source_name);

struct Paths {
  explicit Paths(std::filesystem::path root) : root(std::move(root)) {}
  std::filesystem::path root;

  std::filesystem::path operator/(const std::filesystem::path& rel) const { return root / rel; }
  std::filesystem::path concepts() const { return root / "concepts.json"; }
  std::filesystem::path elicitation_log() const { return root / "elicitation_log.jsonl"; }
  std::filesystem::path sessions() const { return root / "sessions"; }
  std::filesystem::path accepted() const { return root / "accepted.json"; }
  std::filesystem::path value_pool() const { return root / "value_pool.json"; }
  std::filesystem::path plan(Method m) const;
  std::filesystem::path generation(Method m) const;
  std::filesystem::path features(Method m) const;
  std::filesystem::path class_texts() const { return root / "features" / "class_texts.jsonl"; }
  std::filesystem::path embed_cache() const { return root / "cache" / "embeddings.jsonl"; }
  std::filesystem::path model(Method m, Classifier c) const;
  std::filesystem::path results() const { return root / "results.jsonl"; }
  std::filesystem::path run_records() const { return root / "run_records"; }
};

std::unique_ptr<LlmBackend> make_llm(const RunConfig& config);
std::unique_ptr<ImageGenBackend> make_image_backend(const RunConfig& config);
std::unique_ptr<EmbeddingBackend> make_embedder(const RunConfig& config, const DatasetSpec& dataset);

DatasetSpec load_run_dataset(const RunConfig& config);

void save_concepts(const std::vector<AttributeConcept>& concepts, const std::filesystem::path& path);
std::vector<AttributeConcept> load_concepts(const std::filesystem::path& path);

Json plan_to_json(const GenerationPlan& plan);
GenerationPlan plan_from_json(const Json& j);
void save_plan(const GenerationPlan& plan, const std::filesystem::path& path);
GenerationPlan load_plan(const std::filesystem::path& path);

// {subcommand, config, config_digest, seeds, ...extra} written to
// run_records/{subcommand}.json and, when given, beside the outputs.
void write_run_record(const RunConfig& config, const std::string& subcommand, const Json& extra,
                      const std::vector<std::filesystem::path>& output_dirs = {});

struct GenerateOutcome {
  RunReport report;
  std::filesystem::path manifest;
};

std::vector<AttributeConcept> step_elicit(const RunConfig& config, const DatasetSpec& dataset, LlmBackend& llm);
std::vector<AttributeValueSet> step_values(const RunConfig& config, const DatasetSpec& dataset,
                                           const std::vector<AttributeConcept>& accepted, LlmBackend& llm);
// Writes accepted.json from a finalized session.
std::vector<AttributeConcept> export_accepted(const RunConfig& config, const std::string& session_id);
GenerationPlan step_plan(const RunConfig& config, const DatasetSpec& dataset, Method method);
GenerateOutcome step_generate(const RunConfig& config, const DatasetSpec& dataset, Method method,
                              ImageGenBackend& backend);

struct EmbedOutcome {
  EmbeddingMatrix matrix;
  std::size_t skipped_records = 0;  // not done in the manifest
  std::size_t failures = 0;
  std::uint64_t backend_calls = 0;
};

EmbedOutcome step_embed(const RunConfig& config, Method method, EmbeddingBackend& embedder);
EmbeddingMatrix step_class_texts(const RunConfig& config, const DatasetSpec& dataset, EmbeddingBackend& embedder);
// Mock test set; reused when the file exists and was built with the same settings.
EmbeddingMatrix step_mock_test_set(const RunConfig& config, const DatasetSpec& dataset, ImageGenBackend& images,
                                   EmbeddingBackend& embedder, bool* reused = nullptr);

// Trains and evaluates; saves the probe under models/ and merges the result
// into results.jsonl (replacing an equal-keyed entry).
EvalResult step_eval(const RunConfig& config, const DatasetSpec& dataset, Method method,
                     std::optional<Classifier> classifier, const EmbeddingMatrix* train,
                     const EmbeddingMatrix* class_texts, const EmbeddingMatrix& test);

// Replaces the entry with the same dataset, backbone, method label, and n_train.
void merge_result(const std::filesystem::path& results_path, const EvalResult& result);

std::vector<EvalResult> step_ablate(const RunConfig& config, const DatasetSpec& dataset, Classifier classifier,
                                    const std::vector<int>& scales, bool allow_remainder, ImageGenBackend& images,
                                    EmbeddingBackend& embedder, const EmbeddingMatrix& test);

RenderedResults step_report(const std::vector<std::filesystem::path>& result_files,
                            const std::filesystem::path& table_out, const std::filesystem::path& plot_out);

// The bundled toy problem.
DatasetSpec demo_dataset();
MockLlm demo_llm(const DatasetSpec& dataset);

struct DemoReport {
  std::size_t attrsyn_records = 0;
  std::size_t base_records = 0;
  std::size_t failed_records = 0;
  std::uint64_t image_calls = 0;  // generation runs plus the test set
  std::uint64_t embed_calls = 0;
  std::vector<EvalResult> results;
  std::vector<AttributeConcept> accepted;
  std::size_t configs_per_class = 0;

  const EvalResult* find(Method m, std::optional<Classifier> c) const;
};

// Full mock pipeline under config.workdir. Backend settings in `config` are
// overridden with the mock ones; seed, probe and parallelism are honored.
DemoReport run_demo(RunConfig config, std::ostream& log);

}  // namespace attrsyn
