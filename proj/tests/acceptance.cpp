// Copyright 2026 The AttrSyn Authors.
// SPDX-License-Identifier: Apache-2.0

// Acceptance suite: one PASS/FAIL line per criterion, with its time budget.
// Exit status is the number of failed criteria.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "attrsyn/eval.hpp"
#include "attrsyn/forge.hpp"
#include "attrsyn/io.hpp"
#include "attrsyn/pipeline.hpp"
#include "attrsyn/probe.hpp"
#include "attrsyn/rng.hpp"
#include "forge_fixtures.hpp"
#include "probe_fixtures.hpp"
#include "test_util.hpp"

using namespace attrsyn;
using namespace attrsyn::testing;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool ok = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// Nested loops over value indices, first concept outermost.
std::vector<std::vector<std::string>> nested_product(const std::vector<AttributeValueSet>& sets) {
  std::vector<std::vector<std::string>> out{{}};
  for (const auto& s : sets) {
    std::vector<std::vector<std::string>> next;
    for (const auto& prefix : out) {
      for (const auto& v : s.values) {
        auto t = prefix;
        t.push_back(v);
        next.push_back(std::move(t));
      }
    }
    out = std::move(next);
  }
  return out;
}

Outcome combinatorics() {
  const auto fx = table_scale_fixture();
  const auto count = diversity_count(fx.concepts, fx.pool, fx.dataset);
  if (count.uniform_per_class() != 125u || count.total != 25000u) {
    return {false, "table-scale count " + std::to_string(count.total)};
  }
  CounterRng rng(737);
  int trials = 0;
  for (; trials < 2000; ++trials) {
    const int n = static_cast<int>(rng.uniform_below(5));
    std::vector<AttributeValueSet> sets;
    for (int i = 0; i < n; ++i) {
      AttributeValueSet s{"c" + std::to_string(i), 0, {}};
      const int k = 1 + static_cast<int>(rng.uniform_below(6));
      for (int j = 0; j < k; ++j) s.values.push_back("v" + std::to_string(i) + "." + std::to_string(j));
      sets.push_back(s);
    }
    const auto oracle = nested_product(sets);
    const auto configs = enumerate_configs(0, sets);
    if (config_count(sets) != oracle.size() || configs.size() != oracle.size()) {
      return {false, "count mismatch at trial " + std::to_string(trials)};
    }
    for (std::size_t i = 0; i < configs.size(); ++i) {
      std::vector<std::string> values;
      for (const auto& a : configs[i].assignment) values.push_back(a.value);
      if (values != oracle[i]) return {false, "configuration mismatch at trial " + std::to_string(trials)};
    }
  }
  return {true, "125 per class, 25000 total; " + std::to_string(trials) + " random instances match the oracle"};
}

Outcome prompt_fidelity() {
  DiversityConfiguration config;
  config.assignment = {{"behavior", "soaring"}, {"background-environment", "ocean"}, {"painting-style", "oil painting"}};
  const ClassLabel albatross{0, "black-footed albatross"};
  const std::string attributed = assemble_prompt(albatross, config);
  const auto photo = DatasetSpec::with_classes("cub-200", "photo", "bird", {"black-footed albatross"});
  const auto painting = DatasetSpec::with_classes("cub-200-painting", "painting", "bird", {"black-footed albatross"});
  const std::string p1 = base_prompt(albatross, photo);
  const std::string p2 = base_prompt(albatross, painting);
  const bool ok = attributed == "A black-footed albatross, soaring, ocean, oil painting" &&
                  p1 == "a black-footed albatross bird, photo" && p2 == "a black-footed albatross bird, painting";
  return {ok, "\"" + attributed + "\" | \"" + p1 + "\" | \"" + p2 + "\""};
}

Outcome plan_balance() {
  const auto fx = table_scale_fixture();
  const auto count = diversity_count(fx.concepts, fx.pool, fx.dataset);
  const auto plan = sample_plan(fx.dataset, count.per_class, 30, 42);
  std::map<int, std::set<std::uint64_t>> seen;
  std::map<int, int> per;
  for (const auto& e : plan.entries) {
    per[e.class_id]++;
    if (!e.config_index || !seen[e.class_id].insert(*e.config_index).second) {
      return {false, "duplicate configuration in class " + std::to_string(e.class_id)};
    }
  }
  if (plan.entries.size() != 6000 || per.size() != 200) return {false, std::to_string(plan.entries.size()) + " entries"};
  for (const auto& [c, n] : per) {
    if (n != 30) return {false, "class " + std::to_string(c) + " has " + std::to_string(n)};
  }
  return {true, "6000 entries, 30 per class over 200 classes, no duplicates"};
}

double accuracy_of(const std::vector<int>& pred, const std::vector<int>& y) {
  std::size_t hits = 0;
  for (std::size_t i = 0; i < y.size(); ++i) hits += pred[i] == y[i];
  return static_cast<double>(hits) / static_cast<double>(y.size());
}

Outcome lr_optimizer() {
  const auto inst = blob_instance();
  const auto model = train_lr(inst.X, inst.y, inst.classes);
  const auto oracle = gd_oracle(inst, 0.316);
  const double rel = std::abs(model.meta.final_objective - oracle.objective) / oracle.objective;
  const double acc = accuracy_of(predict(model, inst.X), inst.y);
  const bool ok = rel <= 1e-4 && model.meta.final_grad_norm <= 1e-4 && acc == 1.0;
  return {ok, "objective rel err " + fmt("%.2e", rel) + ", grad norm " + fmt("%.2e", model.meta.final_grad_norm) +
                  ", train acc " + fmt("%.3f", acc)};
}

Outcome gradient_checks() {
  CounterRng lr_rng(9101), mlp_rng(9202);
  double worst_lr = 0, worst_mlp = 0;
  const int n = 120;
  for (int i = 0; i < n; ++i) worst_lr = std::max(worst_lr, lr_gradcheck(lr_rng));
  for (int i = 0; i < n; ++i) worst_mlp = std::max(worst_mlp, mlp_gradcheck(mlp_rng));
  return {worst_lr < 1e-4 && worst_mlp < 1e-4, std::to_string(n) + " instances each; worst LR " +
                                                   fmt("%.2e", worst_lr) + ", worst MLP " + fmt("%.2e", worst_mlp)};
}

EmbeddingMatrix matrix_of(const Eigen::MatrixXd& data) {
  EmbeddingMatrix m;
  m.data = data;
  for (Eigen::Index r = 0; r < data.rows(); ++r) m.row_ids.push_back("r" + std::to_string(r));
  return m;
}

std::vector<int> cosine_oracle(const Eigen::MatrixXd& images, const Eigen::MatrixXd& texts) {
  std::vector<int> out;
  for (Eigen::Index i = 0; i < images.rows(); ++i) {
    int best = -1;
    double best_cos = 0;
    for (Eigen::Index c = 0; c < texts.rows(); ++c) {
      double dot = 0, na = 0, nb = 0;
      for (Eigen::Index d = 0; d < images.cols(); ++d) {
        dot += images(i, d) * texts(c, d);
        na += images(i, d) * images(i, d);
        nb += texts(c, d) * texts(c, d);
      }
      const double cos = dot / (std::sqrt(na) * std::sqrt(nb));
      if (best < 0 || cos > best_cos) {
        best = static_cast<int>(c);
        best_cos = cos;
      }
    }
    out.push_back(best);
  }
  return out;
}

Outcome zeroshot_oracle() {
  CounterRng rng(31337);
  int disagreements = 0, scale_trials = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const auto classes = 1 + static_cast<Eigen::Index>(rng.uniform_below(12));
    const auto dim = 1 + static_cast<Eigen::Index>(rng.uniform_below(16));
    const auto n = 1 + static_cast<Eigen::Index>(rng.uniform_below(8));
    Eigen::MatrixXd texts(classes, dim), images(n, dim);
    for (Eigen::Index i = 0; i < texts.size(); ++i) texts.data()[i] = rng.normal();
    for (Eigen::Index i = 0; i < images.size(); ++i) images.data()[i] = rng.normal();
    if (trial % 4 == 1) texts.row(classes - 1) = texts.row(0) * 4.0;
    const auto got = zeroshot_predict(matrix_of(images), matrix_of(texts));
    disagreements += got != cosine_oracle(images, texts);
    if (trial % 2 == 0) {
      ++scale_trials;
      Eigen::MatrixXd scaled = images;
      for (Eigen::Index r = 0; r < n; ++r) scaled.row(r) *= std::pow(10.0, rng.uniform(-4, 4));
      disagreements += zeroshot_predict(matrix_of(scaled), matrix_of(texts)) != got;
    }
  }
  return {disagreements == 0, "1000 trials (" + std::to_string(scale_trials) + " with rescaled images), " +
                                  std::to_string(disagreements) + " disagreements"};
}

// Relative path -> bytes for every file under root, minus the excluded names.
std::map<std::string, std::string> snapshot(const fs::path& root, const std::set<std::string>& exclude = {}) {
  std::map<std::string, std::string> out;
  if (!fs::exists(root)) return out;
  for (auto it = fs::recursive_directory_iterator(root); it != fs::recursive_directory_iterator(); ++it) {
    const auto rel = fs::relative(it->path(), root);
    if (exclude.count(rel.begin()->string())) {
      if (it->is_directory()) it.disable_recursion_pending();
      continue;
    }
    if (it->is_regular_file()) out[rel.generic_string()] = read_text_file(it->path());
  }
  return out;
}

std::string first_difference(const std::map<std::string, std::string>& a, const std::map<std::string, std::string>& b) {
  for (const auto& [k, v] : a) {
    const auto it = b.find(k);
    if (it == b.end()) return k + " missing in second run";
    if (it->second != v) return k + " differs";
  }
  for (const auto& [k, v] : b) {
    if (!a.count(k)) return k + " missing in first run";
  }
  return {};
}

DemoReport demo_in(const fs::path& dir) {
  RunConfig cfg;
  cfg.workdir = dir;
  std::ostringstream log;
  return run_demo(cfg, log);
}

Outcome hermetic_demo() {
  TempDir a("attrsyn-accept-a"), b("attrsyn-accept-b");
  const auto r1 = demo_in(a.path());
  const auto r2 = demo_in(b.path());
  std::vector<std::string> problems;
  if (r1.attrsyn_records != 20 || r1.base_records != 20 || r1.failed_records != 0) {
    problems.push_back("manifest counts " + std::to_string(r1.attrsyn_records) + "/" + std::to_string(r1.base_records));
  }
  const auto manifest_lines = [](const fs::path& p) {
    std::ifstream in(p);
    int n = 0;
    for (std::string line; std::getline(in, line);) n += !line.empty();
    return n;
  };
  if (manifest_lines(a / "generation/attrsyn/manifest.jsonl") != 20 ||
      manifest_lines(a / "generation/base_prompt/manifest.jsonl") != 20) {
    problems.push_back("manifest files do not hold 20 records each");
  }
  if (r1.accepted.size() != 2 || r1.configs_per_class != 9) problems.push_back("unexpected curation outcome");
  const std::set<std::string> volatile_files{"sessions", "elicitation_log.jsonl"};
  if (const auto d = first_difference(snapshot(a.path(), volatile_files), snapshot(b.path(), volatile_files));
      !d.empty()) {
    problems.push_back("not byte-identical: " + d);
  }
  const auto rerun = demo_in(a.path());
  if (rerun.image_calls != 0 || rerun.embed_calls != 0) {
    problems.push_back("rerun made " + std::to_string(rerun.image_calls) + " image and " +
                       std::to_string(rerun.embed_calls) + " embedding calls");
  }
  std::string accs;
  for (const auto& [m, c] : std::vector<std::pair<Method, std::optional<Classifier>>>{
           {Method::attrsyn, Classifier::lr}, {Method::attrsyn, Classifier::mlp}, {Method::zeroshot, std::nullopt}}) {
    const auto* res = r1.find(m, c);
    if (!res) {
      problems.push_back("missing result");
      continue;
    }
    accs += (accs.empty() ? "" : ", ") + res->method_label() + " " + fmt("%.3f", res->accuracy);
    if (res->accuracy < 0.95) problems.push_back(res->method_label() + " below 0.95");
  }
  std::string detail = "20/20 records, byte-identical reruns, 0 calls on resume; " + accs;
  if (!problems.empty()) {
    detail.clear();
    for (const auto& p : problems) detail += (detail.empty() ? "" : "; ") + p;
  }
  return {problems.empty(), detail};
}

Outcome determinism() {
  TempDir a("attrsyn-det-a"), b("attrsyn-det-b");
  demo_in(a.path());
  demo_in(b.path());
  std::size_t files = 0;
  for (const char* sub : {"models", "report"}) {
    const auto sa = snapshot(a / sub), sb = snapshot(b / sub);
    if (sa.empty()) return {false, std::string(sub) + " is empty"};
    if (const auto d = first_difference(sa, sb); !d.empty()) return {false, std::string(sub) + "/" + d};
    files += sa.size();
  }
  // Direct probe training, seed 42, twice.
  const auto inst = blob_instance();
  MlpOptions mo;
  mo.hidden = 16;
  mo.max_iter = 50;
  for (const auto& dir : {&a, &b}) {
    save_model(train_lr(inst.X, inst.y, inst.classes), *dir / "direct-lr.json");
    save_model(train_mlp(inst.X, inst.y, inst.classes, mo), *dir / "direct-mlp.json");
  }
  for (const char* f : {"direct-lr.json", "direct-lr.json.f32", "direct-mlp.json", "direct-mlp.json.f32"}) {
    if (!fs::exists(a / f)) return {false, std::string(f) + " not written"};
    if (read_text_file(a / f) != read_text_file(b / f)) return {false, std::string(f) + " differs"};
    ++files;
  }
  return {true, std::to_string(files) + " model and report files bit-identical across runs"};
}

Outcome ablation_prefix() {
  const auto ds = demo_dataset();
  const std::vector<std::uint64_t> configs(ds.classes.size(), 9);
  const std::vector<int> scales{8, 16, 24};
  std::vector<GenerationPlan> plans;
  for (int s : scales) plans.push_back(ablation_plan(ds, configs, s, 42, false));
  for (std::size_t i = 0; i < plans.size(); ++i) {
    if (plans[i].entries.size() != static_cast<std::size_t>(scales[i])) return {false, "wrong plan size"};
    for (std::size_t j = i + 1; j < plans.size(); ++j) {
      if (!std::equal(plans[i].entries.begin(), plans[i].entries.end(), plans[j].entries.begin())) {
        return {false, std::to_string(scales[i]) + " is not a prefix of " + std::to_string(scales[j])};
      }
    }
  }
  return {true, "plans at 8, 16, 24 over 4 classes are nested prefixes"};
}

struct Criterion {
  const char* name;
  double budget_seconds;  // 0: no time limit
  std::function<Outcome()> run;
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria{
      {"combinatorics", 1, combinatorics},
      {"prompt-fidelity", 0, prompt_fidelity},
      {"plan-balance", 1, plan_balance},
      {"lr-optimizer", 5, lr_optimizer},
      {"gradient-checks", 30, gradient_checks},
      {"zeroshot-oracle", 5, zeroshot_oracle},
      {"hermetic-end-to-end", 60, hermetic_demo},
      {"determinism", 0, determinism},
      {"ablation-prefix", 0, ablation_prefix},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    bool ok = o.ok;
    std::string timing = fmt("%.3fs", secs);
    if (c.budget_seconds > 0) {
      timing += " / " + fmt("%gs", c.budget_seconds);
      if (secs >= c.budget_seconds) {
        ok = false;
        o.detail += "; over time budget";
      }
    }
    failed += !ok;
    std::printf("%s %s [%s] %s\n", ok ? "PASS" : "FAIL", c.name, timing.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  return failed;
}
