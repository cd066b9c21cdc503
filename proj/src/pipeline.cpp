// Copyright 2026 The AttrSyn Authors.
// SPDX-License-Identifier: Apache-2.0

#include "attrsyn/pipeline.hpp"

#include <algorithm>
#include <ostream>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "attrsyn/digest.hpp"
#include "attrsyn/error.hpp"
#include "attrsyn/http_backends.hpp"
#include "attrsyn/io.hpp"

namespace fs = std::filesystem;

namespace attrsyn {
namespace {

template <typename T>
Setting make_setting(std::string key, std::string help, T& field) {
  Setting s;
  s.flag = "--" + key;
  std::replace(s.flag.begin(), s.flag.end(), '.', '-');
  std::replace(s.flag.begin(), s.flag.end(), '_', '-');
  s.key = std::move(key);
  s.help = std::move(help);
  s.assign = [&field, k = s.key](const std::vector<std::string>& in) {
    if (in.size() != 1) throw ParseError("config key " + k + " takes one value");
    T value{};
    if (!CLI::detail::lexical_conversion<T, T>(in, value)) {
      throw ParseError("config key " + k + ": cannot convert \"" + in[0] + "\"");
    }
    field = value;
  };
  s.current = [&field] {
    if constexpr (std::is_same_v<T, std::string>) {
      return field;
    } else if constexpr (std::is_same_v<T, bool>) {
      return std::string(field ? "true" : "false");
    } else {
      std::ostringstream os;
      os << field;
      return os.str();
    }
  };
  return s;
}

Json read_json_file(const fs::path& path) {
  const std::string text = read_text_file(path);
  try {
    return Json::parse(text);
  } catch (const Json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void write_json_file(const fs::path& path, const Json& j) { write_file_atomic(path, j.dump(2) + "\n"); }

const char* method_dir(Method m) { return to_string(m); }

std::vector<GenerationRecord> done_records(const std::vector<GenerationRecord>& records, std::size_t* skipped) {
  std::vector<GenerationRecord> out;
  for (const auto& r : records) {
    if (r.status == RecordStatus::done) {
      out.push_back(r);
    } else if (skipped != nullptr) {
      ++*skipped;
    }
  }
  return out;
}

EmbeddingCache open_cache(const Paths& paths) {
  return fs::exists(paths.embed_cache()) ? EmbeddingCache::load(paths.embed_cache()) : EmbeddingCache{};
}

struct PlanInputs {
  std::vector<AttributeConcept> accepted;
  std::vector<AttributeValueSet> pool;
};

PlanInputs load_plan_inputs(const Paths& paths) {
  PlanInputs in;
  if (!fs::exists(paths.accepted())) {
    throw PreconditionError("no accepted concepts at " + paths.accepted().string() + "; run review first");
  }
  if (!fs::exists(paths.value_pool())) {
    throw PreconditionError("no value pool at " + paths.value_pool().string() + "; run values first");
  }
  in.accepted = load_concepts(paths.accepted());
  in.pool = load_value_pool(paths.value_pool());
  return in;
}

}  // namespace

Json RunConfig::to_json() const {
  Json j = Json::object();
  j["dataset"] = dataset;
  j["seed"] = seed;
  j["parallelism"] = parallelism;
  j["llm"] = Json{{"kind", llm.kind},         {"responses", llm.responses},     {"base_url", llm.base_url},
                  {"path", llm.path},         {"model", llm.model},             {"api_key_env", llm.api_key_env},
                  {"values_per_concept", llm.values_per_concept}};
  j["image"] = Json{{"kind", image.kind},
                    {"backend_id", image.backend_id},
                    {"size", image.size},
                    {"base_url", image.base_url},
                    {"path", image.path},
                    {"api_key_env", image.api_key_env},
                    {"guidance_scale", image.guidance_scale},
                    {"steps", image.steps},
                    {"retries", image.retries},
                    {"backoff_ms", image.backoff_ms}};
  j["embed"] = Json{{"kind", embed.kind},         {"backbone_id", embed.backbone_id}, {"dim", embed.dim},
                    {"noise", embed.noise},       {"base_url", embed.base_url},       {"api_key_env", embed.api_key_env},
                    {"text_template", embed.text_template}};
  j["plan"] = Json{{"per_class", plan.per_class}};
  j["probe"] = attrsyn::to_json(probe);
  j["eval"] = Json{{"test_features", eval.test_features}, {"mock_test_per_class", eval.mock_test_per_class}};
  return j;
}

std::string RunConfig::digest() const { return sha256_hex(to_json().dump()); }

GenParams RunConfig::gen_params() const {
  GenParams p{image.guidance_scale, image.steps};
  p.validate();
  return p;
}

std::vector<Setting> config_settings(RunConfig& c) {
  return {
      make_setting("dataset", "dataset spec JSON, relative to the workdir", c.dataset),
      make_setting("seed", "run seed", c.seed),
      make_setting("parallelism", "worker threads for backend calls", c.parallelism),
      make_setting("llm.kind", "mock | http", c.llm.kind),
      make_setting("llm.responses", "mock LLM response table", c.llm.responses),
      make_setting("llm.base_url", "LLM service URL", c.llm.base_url),
      make_setting("llm.path", "LLM completion path", c.llm.path),
      make_setting("llm.model", "LLM model name", c.llm.model),
      make_setting("llm.api_key_env", "environment variable holding the LLM key", c.llm.api_key_env),
      make_setting("llm.values_per_concept", "values elicited per concept", c.llm.values_per_concept),
      make_setting("image.kind", "mock | http", c.image.kind),
      make_setting("image.backend_id", "image backend id recorded in manifests", c.image.backend_id),
      make_setting("image.size", "mock image side length", c.image.size),
      make_setting("image.base_url", "image service URL", c.image.base_url),
      make_setting("image.path", "image generation path", c.image.path),
      make_setting("image.api_key_env", "environment variable holding the image service key", c.image.api_key_env),
      make_setting("image.guidance_scale", "classifier-free guidance scale", c.image.guidance_scale),
      make_setting("image.steps", "denoising steps", c.image.steps),
      make_setting("image.retries", "retries per image after the first attempt", c.image.retries),
      make_setting("image.backoff_ms", "initial retry backoff", c.image.backoff_ms),
      make_setting("embed.kind", "mock | http", c.embed.kind),
      make_setting("embed.backbone_id", "embedding backbone id", c.embed.backbone_id),
      make_setting("embed.dim", "embedding dim (0 asks the service)", c.embed.dim),
      make_setting("embed.noise", "mock embedder noise", c.embed.noise),
      make_setting("embed.base_url", "embedding service URL", c.embed.base_url),
      make_setting("embed.api_key_env", "environment variable holding the embedding service key", c.embed.api_key_env),
      make_setting("embed.text_template", "zero-shot text template", c.embed.text_template),
      make_setting("plan.per_class", "images per class", c.plan.per_class),
      make_setting("probe.C", "LR inverse regularization strength", c.probe.lr.C),
      make_setting("probe.lr_max_iter", "LR outer iterations", c.probe.lr.max_iter),
      make_setting("probe.lr_tol", "LR gradient-norm tolerance", c.probe.lr.tol),
      make_setting("probe.hidden", "MLP hidden units", c.probe.mlp.hidden),
      make_setting("probe.mlp_lr", "MLP Adam learning rate", c.probe.mlp.lr),
      make_setting("probe.mlp_epochs", "MLP epochs", c.probe.mlp.max_iter),
      make_setting("probe.mlp_batch_size", "MLP minibatch size (0: min(200, N))", c.probe.mlp.batch_size),
      make_setting("probe.normalize_features", "L2-normalize features before probing", c.probe.normalize_features),
      make_setting("eval.test_features", "labelled test feature matrix", c.eval.test_features),
      make_setting("eval.mock_test_per_class", "mock test images per class", c.eval.mock_test_per_class),
  };
}

void apply_config_text(RunConfig& config, const std::string& text, const std::string& source_name) {
  auto settings = config_settings(config);
  std::istringstream in(text);
  std::vector<CLI::ConfigItem> items;
  try {
    items = CLI::ConfigTOML().from_config(in);
  } catch (const CLI::Error& e) {
    throw ParseError(source_name + ": " + e.what());
  }
  for (const auto& item : items) {
    if (item.name == "++" || item.name == "--") continue;
    const std::string key = item.fullname();
    auto it = std::find_if(settings.begin(), settings.end(), [&](const Setting& s) { return s.key == key; });
    if (it == settings.end()) throw ParseError(source_name + ": unknown config key " + key);
    it->assign(item.inputs);
  }
  // seeds flow into both probes
  config.probe.lr.seed = config.seed;
  config.probe.mlp.seed = config.seed;
}

fs::path Paths::plan(Method m) const { return root / "plans" / (std::string(method_dir(m)) + ".json"); }
fs::path Paths::generation(Method m) const { return root / "generation" / method_dir(m); }
fs::path Paths::features(Method m) const { return root / "features" / (std::string(method_dir(m)) + ".jsonl"); }
fs::path Paths::model(Method m, Classifier c) const {
  return root / "models" / (std::string(method_dir(m)) + "-" + to_string(c) + ".json");
}

std::unique_ptr<LlmBackend> make_llm(const RunConfig& config) {
  if (config.llm.kind == "mock") {
    const fs::path table = config.workdir / config.llm.responses;
    if (!fs::exists(table)) throw PreconditionError("mock LLM table not found: " + table.string());
    return std::make_unique<MockLlm>(MockLlm::from_file(table));
  }
  if (config.llm.kind == "http") {
    HttpLlmConfig c;
    c.base_url = config.llm.base_url;
    c.path = config.llm.path;
    c.model = config.llm.model;
    c.api_key_env = config.llm.api_key_env;
    return std::make_unique<HttpLlm>(c);
  }
  throw PreconditionError("unknown llm.kind: " + config.llm.kind);
}

std::unique_ptr<ImageGenBackend> make_image_backend(const RunConfig& config) {
  if (config.image.kind == "mock") return std::make_unique<MockImageBackend>(config.image.backend_id, config.image.size);
  if (config.image.kind == "http") {
    HttpImageConfig c;
    c.base_url = config.image.base_url;
    c.path = config.image.path;
    c.backend_id = config.image.backend_id;
    c.api_key_env = config.image.api_key_env;
    return std::make_unique<HttpImageBackend>(c);
  }
  throw PreconditionError("unknown image.kind: " + config.image.kind);
}

std::unique_ptr<EmbeddingBackend> make_embedder(const RunConfig& config, const DatasetSpec& dataset) {
  if (config.embed.kind == "mock") {
    std::vector<std::string> names;
    for (const auto& c : dataset.classes) names.push_back(c.name);
    return std::make_unique<MockEmbedder>(config.embed.backbone_id, config.embed.dim, names, config.embed.noise,
                                          config.seed);
  }
  if (config.embed.kind == "http") {
    HttpEmbedConfig c;
    c.base_url = config.embed.base_url;
    c.backbone_id = config.embed.backbone_id;
    c.dim = config.embed.dim;
    c.api_key_env = config.embed.api_key_env;
    return std::make_unique<HttpEmbedder>(c);
  }
  throw PreconditionError("unknown embed.kind: " + config.embed.kind);
}

DatasetSpec load_run_dataset(const RunConfig& config) {
  const fs::path path = config.workdir / config.dataset;
  if (!fs::exists(path)) throw PreconditionError("dataset spec not found: " + path.string());
  auto spec = load_dataset(path);
  require_valid_dataset(spec);
  return spec;
}

void save_concepts(const std::vector<AttributeConcept>& concepts, const fs::path& path) {
  write_json_file(path, Json(concepts));
}

std::vector<AttributeConcept> load_concepts(const fs::path& path) {
  try {
    return read_json_file(path).get<std::vector<AttributeConcept>>();
  } catch (const Json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

Json plan_to_json(const GenerationPlan& plan) {
  Json entries = Json::array();
  for (const auto& e : plan.entries) {
    entries.push_back(Json{{"class_id", e.class_id},
                           {"config_index", e.config_index ? Json(*e.config_index) : Json(nullptr)},
                           {"replica_index", e.replica_index}});
  }
  return Json{{"dataset", plan.dataset}, {"per_class", plan.per_class}, {"seed", plan.seed}, {"entries", entries}};
}

GenerationPlan plan_from_json(const Json& j) {
  GenerationPlan p;
  p.dataset = j.at("dataset").get<std::string>();
  p.per_class = j.at("per_class").get<int>();
  p.seed = j.at("seed").get<std::uint64_t>();
  for (const auto& e : j.at("entries")) {
    PlanEntry entry;
    entry.class_id = e.at("class_id").get<int>();
    if (!e.at("config_index").is_null()) entry.config_index = e.at("config_index").get<std::uint64_t>();
    entry.replica_index = e.at("replica_index").get<int>();
    p.entries.push_back(entry);
  }
  return p;
}

void save_plan(const GenerationPlan& plan, const fs::path& path) {
  write_file_atomic(path, plan_to_json(plan).dump() + "\n");
}

GenerationPlan load_plan(const fs::path& path) {
  if (!fs::exists(path)) throw PreconditionError("no plan at " + path.string() + "; run plan first");
  try {
    return plan_from_json(read_json_file(path));
  } catch (const Json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void write_run_record(const RunConfig& config, const std::string& subcommand, const Json& extra,
                      const std::vector<fs::path>& output_dirs) {
  Json j = Json::object();
  j["subcommand"] = subcommand;
  j["config_digest"] = config.digest();
  j["seeds"] = Json{{"run", config.seed}, {"lr", config.probe.lr.seed}, {"mlp", config.probe.mlp.seed}};
  j["config"] = config.to_json();
  for (const auto& [k, v] : extra.items()) j[k] = v;
  const std::string text = j.dump(2) + "\n";
  const Paths paths(config.workdir);
  write_file_atomic(paths.run_records() / (subcommand + ".json"), text);
  for (const auto& dir : output_dirs) write_file_atomic(dir / "run_record.json", text);
}

std::vector<AttributeConcept> step_elicit(const RunConfig& config, const DatasetSpec& dataset, LlmBackend& llm) {
  const Paths paths(config.workdir);
  ElicitationLog log;
  const auto concepts = propose_concepts(dataset, llm, log);
  save_concepts(concepts, paths.concepts());
  log.append_to_file(paths.elicitation_log());
  return concepts;
}

std::vector<AttributeValueSet> step_values(const RunConfig& config, const DatasetSpec& dataset,
                                           const std::vector<AttributeConcept>& accepted, LlmBackend& llm) {
  if (accepted.empty()) throw PreconditionError("no accepted concepts");
  const Paths paths(config.workdir);
  ElicitationLog log;
  auto pool = generate_value_pool(dataset, accepted, llm, config.llm.values_per_concept, config.parallelism, log);
  save_value_pool(pool, paths.value_pool());
  log.append_to_file(paths.elicitation_log());
  return pool;
}

std::vector<AttributeConcept> export_accepted(const RunConfig& config, const std::string& session_id) {
  const Paths paths(config.workdir);
  const auto path = paths.sessions() / (session_id + ".json");
  if (!fs::exists(path)) throw NotFoundError("no session " + session_id);
  const auto session = load_session(path);
  if (session.state != SessionState::finalized) throw PreconditionError("session " + session_id + " is not finalized");
  auto accepted = accepted_concepts(session);
  save_concepts(accepted, paths.accepted());
  return accepted;
}

GenerationPlan step_plan(const RunConfig& config, const DatasetSpec& dataset, Method method) {
  const Paths paths(config.workdir);
  GenerationPlan plan;
  if (method == Method::base_prompt) {
    plan = sample_base_plan(dataset, config.plan.per_class, config.seed);
  } else if (method == Method::attrsyn) {
    const auto in = load_plan_inputs(paths);
    const auto counts = diversity_count(in.accepted, in.pool, dataset);
    plan = sample_plan(dataset, counts.per_class, config.plan.per_class, config.seed);
  } else {
    throw PreconditionError("zeroshot has no generation plan");
  }
  save_plan(plan, paths.plan(method));
  return plan;
}

GenerateOutcome step_generate(const RunConfig& config, const DatasetSpec& dataset, Method method,
                              ImageGenBackend& backend) {
  const Paths paths(config.workdir);
  const auto plan = load_plan(paths.plan(method));
  if (plan.dataset != dataset.name) {
    throw PreconditionError("plan was made for dataset " + plan.dataset + ", not " + dataset.name);
  }
  PlanInputs in;
  if (method == Method::attrsyn) in = load_plan_inputs(paths);
  const auto params = config.gen_params();
  const auto records = plan_to_records(plan, dataset, in.accepted, in.pool, params, backend.backend_id());
  RunOptions options;
  options.retries = config.image.retries;
  options.backoff = std::chrono::milliseconds(config.image.backoff_ms);
  GenerateOutcome out;
  out.report = run_plan(records, backend, params, config.parallelism, paths.generation(method), options);
  out.manifest = paths.generation(method) / kManifestName;
  return out;
}

EmbedOutcome step_embed(const RunConfig& config, Method method, EmbeddingBackend& embedder) {
  const Paths paths(config.workdir);
  const auto manifest = paths.generation(method) / kManifestName;
  if (!fs::exists(manifest)) throw PreconditionError("no manifest at " + manifest.string() + "; run generate first");
  EmbedOutcome out;
  const auto records = done_records(manifest_read(manifest), &out.skipped_records);
  if (records.empty()) throw PreconditionError("manifest has no finished records: " + manifest.string());
  auto cache = open_cache(paths);
  auto result = embed_manifest(records, paths.generation(method), embedder, config.parallelism, &cache);
  cache.save(paths.embed_cache());
  result.matrix.backbone_id = embedder.backbone_id();
  save_matrix(result.matrix, paths.features(method));
  out.matrix = std::move(result.matrix);
  out.failures = result.failures.size();
  out.backend_calls = result.backend_calls;
  return out;
}

EmbeddingMatrix step_class_texts(const RunConfig& config, const DatasetSpec& dataset, EmbeddingBackend& embedder) {
  const Paths paths(config.workdir);
  auto m = embed_class_texts(dataset, config.embed.text_template, embedder);
  save_matrix(m, paths.class_texts());
  return m;
}

EmbeddingMatrix step_mock_test_set(const RunConfig& config, const DatasetSpec& dataset, ImageGenBackend& images,
                                   EmbeddingBackend& embedder, bool* reused) {
  const Paths paths(config.workdir);
  const fs::path out = paths / config.eval.test_features;
  const fs::path stamp = out.string() + ".key";
  const Json key{{"dataset_digest", dataset_digest(dataset)},
                 {"per_class", config.eval.mock_test_per_class},
                 {"image_backend", images.backend_id()},
                 {"image_size", config.image.size},
                 {"backbone_id", embedder.backbone_id()},
                 {"dim", config.embed.dim},
                 {"noise", config.embed.noise},
                 {"seed", config.seed}};
  if (reused != nullptr) *reused = false;
  if (fs::exists(out) && fs::exists(stamp) && read_text_file(stamp) == key.dump() + "\n") {
    if (reused != nullptr) *reused = true;
    return load_matrix(out);
  }
  auto m = build_mock_test_set(dataset, config.eval.mock_test_per_class, images, embedder, config.seed);
  save_matrix(m, out);
  write_file_atomic(stamp, key.dump() + "\n");
  return m;
}

void merge_result(const fs::path& results_path, const EvalResult& result) {
  std::vector<EvalResult> all = fs::exists(results_path) ? load_results(results_path) : std::vector<EvalResult>{};
  auto same = [&](const EvalResult& r) {
    return r.dataset == result.dataset && r.backbone_id == result.backbone_id &&
           r.method_label() == result.method_label() && r.n_train == result.n_train;
  };
  auto it = std::find_if(all.begin(), all.end(), same);
  if (it != all.end()) {
    *it = result;
  } else {
    all.push_back(result);
  }
  save_results(all, results_path);
}

EvalResult step_eval(const RunConfig& config, const DatasetSpec& dataset, Method method,
                     std::optional<Classifier> classifier, const EmbeddingMatrix* train,
                     const EmbeddingMatrix* class_texts, const EmbeddingMatrix& test) {
  const Paths paths(config.workdir);
  ExperimentSpec spec;
  spec.dataset = dataset;
  spec.backbone_id = config.embed.backbone_id;
  spec.method = method;
  spec.classifier = classifier;
  spec.train = train;
  spec.class_texts = class_texts;
  spec.test = &test;
  spec.probe = config.probe;
  spec.extra_config = Json{{"run_config", config.digest()}};
  if (classifier) spec.model_out = paths.model(method, *classifier);
  fs::create_directories(paths / "models");
  const auto result = run_experiment(spec);
  merge_result(paths.results(), result);
  return result;
}

std::vector<EvalResult> step_ablate(const RunConfig& config, const DatasetSpec& dataset, Classifier classifier,
                                    const std::vector<int>& scales, bool allow_remainder, ImageGenBackend& images,
                                    EmbeddingBackend& embedder, const EmbeddingMatrix& test) {
  if (scales.empty()) throw PreconditionError("no scales given");
  const Paths paths(config.workdir);
  const auto in = load_plan_inputs(paths);
  const auto counts = diversity_count(in.accepted, in.pool, dataset);
  for (int s : scales) ablation_plan(dataset, counts.per_class, s, config.seed, allow_remainder);

  // Generate and embed the largest plan once; smaller scales are prefixes.
  const int largest = *std::max_element(scales.begin(), scales.end());
  const auto big = ablation_plan(dataset, counts.per_class, largest, config.seed, allow_remainder);
  const auto params = config.gen_params();
  const auto records = plan_to_records(big, dataset, in.accepted, in.pool, params, images.backend_id());
  RunOptions options;
  options.retries = config.image.retries;
  options.backoff = std::chrono::milliseconds(config.image.backoff_ms);
  const fs::path dir = paths / "generation" / "ablation";
  const auto report = run_plan(records, images, params, config.parallelism, dir, options);
  if (report.partial()) {
    throw BackendError(std::to_string(report.failed) + " ablation image(s) failed; rerun to retry");
  }
  auto cache = open_cache(paths);
  const auto embedded = embed_manifest(report.records, dir, embedder, config.parallelism, &cache);
  cache.save(paths.embed_cache());
  if (!embedded.failures.empty()) throw BackendError("embedding failed for " + embedded.failures[0].record_id);
  std::map<std::string, std::size_t> row_of;
  for (std::size_t i = 0; i < embedded.matrix.row_ids.size(); ++i) row_of[embedded.matrix.row_ids[i]] = i;

  AblationSpec spec;
  spec.dataset = dataset;
  spec.configs_per_class = counts.per_class;
  spec.backbone_id = config.embed.backbone_id;
  spec.classifier = classifier;
  spec.scales = scales;
  spec.seed = config.seed;
  spec.allow_remainder = allow_remainder;
  spec.test = &test;
  spec.probe = config.probe;
  spec.extra_config = Json{{"run_config", config.digest()}};
  spec.features_for_plan = [&](const GenerationPlan& plan) {
    std::vector<std::size_t> rows;
    for (const auto& e : plan.entries) rows.push_back(row_of.at(record_id_for(dataset.name, e)));
    auto m = select_rows(embedded.matrix, rows);
    m.backbone_id = embedder.backbone_id();
    return m;
  };
  auto results = ablate_scale(spec);
  for (const auto& r : results) merge_result(paths.results(), r);
  return results;
}

RenderedResults step_report(const std::vector<fs::path>& result_files, const fs::path& table_out,
                            const fs::path& plot_out) {
  std::vector<EvalResult> all;
  for (const auto& f : result_files) {
    if (!fs::exists(f)) throw PreconditionError("no results at " + f.string());
    auto rs = load_results(f);
    all.insert(all.end(), rs.begin(), rs.end());
  }
  if (all.empty()) throw PreconditionError("no results to report");
  check_mergeable(all);
  auto rendered = render_results(all);
  write_file_atomic(table_out, rendered.table);
  write_file_atomic(plot_out, rendered.plot_tsv);
  return rendered;
}

DatasetSpec demo_dataset() {
  return DatasetSpec::with_classes("demo-birds-painting", "painting", "bird",
                                   {"black-footed albatross", "cardinal", "blue jay", "painted bunting"});
}

MockLlm demo_llm(const DatasetSpec& dataset) {
  std::map<std::string, std::string> table;
  table[concept_query(dataset)] = "1. Behavior\n2. Painting style\n3. Shape\n4. Plumage";
  const std::map<std::string, std::string> behavior{
      {"black-footed albatross", "soaring, gliding over waves, floating"},
      {"cardinal", "perching, singing, foraging on the ground"},
      {"blue jay", "calling, caching acorns, hopping"},
      {"painted bunting", "feeding on seeds, flitting, preening"}};
  AttributeConcept b{"behavior", "behavior", ConceptKind::class_dependent, ConceptStatus::accepted, {}, {}};
  for (const auto& c : dataset.classes) table[value_query(b, &c)] = behavior.at(c.name);
  AttributeConcept s{"painting-style", "painting style", ConceptKind::class_independent, ConceptStatus::accepted, {},
                     {}};
  table[value_query(s, nullptr)] = "oil painting, watercolor, ink sketch";
  return MockLlm("mock-llm", std::move(table));
}

const EvalResult* DemoReport::find(Method m, std::optional<Classifier> c) const {
  for (const auto& r : results) {
    if (r.method == m && r.classifier == c) return &r;
  }
  return nullptr;
}

DemoReport run_demo(RunConfig config, std::ostream& log) {
  config.dataset = "dataset.json";
  config.llm.kind = "mock";
  config.llm.responses = "mock_llm.json";
  config.llm.values_per_concept = 3;
  config.image.kind = "mock";
  config.embed.kind = "mock";
  config.plan.per_class = 5;
  config.image.backoff_ms = 0;
  config.probe.lr.seed = config.seed;
  config.probe.mlp.seed = config.seed;
  const Paths paths(config.workdir);
  fs::create_directories(paths.root);

  DemoReport report;
  const auto dataset = demo_dataset();
  save_dataset(dataset, paths / config.dataset);
  write_file_atomic(paths / config.llm.responses, demo_llm(dataset).to_json().dump(2) + "\n");
  // a demo rerun starts the audit log afresh
  fs::remove(paths.elicitation_log());

  auto llm = make_llm(config);
  const auto concepts = step_elicit(config, dataset, *llm);
  log << "elicit: " << concepts.size() << " proposed concepts\n";

  const std::string session_id = "demo";
  fs::remove(paths.sessions() / (session_id + ".json"));
  SessionStore fresh(paths.sessions());
  fresh.create(dataset, concepts, session_id);
  auto decide = [&](std::string id, Decision d, std::optional<ConceptKind> kind, std::optional<std::string> rule) {
    DecisionRequest r;
    r.concept_id = std::move(id);
    r.decision = d;
    r.kind = kind;
    r.failed_rule = std::move(rule);
    fresh.decide(session_id, r);
  };
  decide("behavior", Decision::accept, ConceptKind::class_dependent, std::nullopt);
  decide("painting-style", Decision::accept, ConceptKind::class_independent, std::nullopt);
  decide("shape", Decision::reject, std::nullopt, "quality");
  decide("plumage", Decision::reject, std::nullopt, "diversity");
  fresh.finalize(session_id);
  report.accepted = export_accepted(config, session_id);
  log << "review: accepted " << report.accepted.size() << " of " << concepts.size() << " concepts\n";

  const auto pool = step_values(config, dataset, report.accepted, *llm);
  const auto counts = diversity_count(report.accepted, pool, dataset);
  report.configs_per_class = counts.uniform_per_class().value_or(0);
  log << "values: " << pool.size() << " value sets, " << report.configs_per_class << " configurations per class\n";

  step_plan(config, dataset, Method::attrsyn);
  step_plan(config, dataset, Method::base_prompt);
  auto images = make_image_backend(config);
  const auto gen_a = step_generate(config, dataset, Method::attrsyn, *images);
  const auto gen_b = step_generate(config, dataset, Method::base_prompt, *images);
  report.attrsyn_records = gen_a.report.records.size();
  report.base_records = gen_b.report.records.size();
  report.failed_records = gen_a.report.failed + gen_b.report.failed;
  report.image_calls = gen_a.report.backend_calls + gen_b.report.backend_calls;
  log << "generate: " << report.attrsyn_records << " attrsyn + " << report.base_records << " base images, "
      << report.image_calls << " backend calls\n";

  auto embedder = make_embedder(config, dataset);
  const auto emb_a = step_embed(config, Method::attrsyn, *embedder);
  const auto emb_b = step_embed(config, Method::base_prompt, *embedder);
  report.embed_calls = emb_a.backend_calls + emb_b.backend_calls;
  const auto texts = step_class_texts(config, dataset, *embedder);
  MockImageBackend test_images("mock-test-image", config.image.size);
  bool reused = false;
  const auto test = step_mock_test_set(config, dataset, test_images, *embedder, &reused);
  report.image_calls += test_images.calls();
  log << "embed: " << emb_a.matrix.rows() + emb_b.matrix.rows() << " training rows, " << test.rows()
      << " test rows" << (reused ? " (test set reused)" : "") << "\n";

  fs::remove(paths.results());
  report.results.push_back(step_eval(config, dataset, Method::zeroshot, std::nullopt, nullptr, &texts, test));
  for (Method m : {Method::base_prompt, Method::attrsyn}) {
    const auto& train = m == Method::attrsyn ? emb_a.matrix : emb_b.matrix;
    for (Classifier c : {Classifier::lr, Classifier::mlp}) {
      report.results.push_back(step_eval(config, dataset, m, c, &train, nullptr, test));
    }
  }
  for (const auto& r : report.results) {
    log << "eval: " << r.method_label() << " accuracy " << r.accuracy << "\n";
  }
  const auto rendered = step_report({paths.results()}, paths / "report" / "table.txt", paths / "report" / "curve.tsv");
  log << rendered.table;
  write_run_record(config, "demo",
                   Json{{"dataset_digest", dataset_digest(dataset)},
                        {"attrsyn_records", report.attrsyn_records},
                        {"base_records", report.base_records}},
                   {paths.generation(Method::attrsyn), paths.generation(Method::base_prompt), paths / "models",
                    paths / "report"});
  return report;
}

}  // namespace attrsyn
