// Copyright 2026 The AttrSyn Authors.
// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include "attrsyn/dispatch.hpp"
#include "attrsyn/embed.hpp"
#include "attrsyn/error.hpp"
#include "attrsyn/eval.hpp"
#include "attrsyn/io.hpp"
#include "attrsyn/rng.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace attrsyn;
using namespace attrsyn::testing;
namespace fs = std::filesystem;

namespace {

EmbeddingMatrix make_matrix(const Eigen::MatrixXd& data, std::string prefix) {
  EmbeddingMatrix m;
  m.data = data;
  for (Eigen::Index r = 0; r < data.rows(); ++r) m.row_ids.push_back(prefix + std::to_string(r));
  return m;
}

// Double loop over raw vectors, cosine = dot / (|a| |b|), first maximum wins.
std::vector<int> brute_force_cosine(const Eigen::MatrixXd& images, const Eigen::MatrixXd& texts) {
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

DatasetSpec birds() {
  return DatasetSpec::with_classes("birds", "painting", "bird",
                                   {"black-footed albatross", "cardinal", "blue jay", "painted bunting"});
}

std::vector<std::string> names(const DatasetSpec& d) {
  std::vector<std::string> out;
  for (const auto& c : d.classes) out.push_back(c.name);
  return out;
}

EvalResult sample_result(std::string backbone, Method m, std::optional<Classifier> c, double acc,
                         std::string dataset = "cub-painting") {
  EvalResult r;
  r.dataset = std::move(dataset);
  r.backbone_id = std::move(backbone);
  r.method = m;
  r.classifier = c;
  r.accuracy = acc;
  r.dataset_digest = "d-" + r.dataset;
  return r;
}

}  // namespace

TEST_CASE("zeroshot_predict: exact match and scale invariance") {
  CounterRng rng(1);
  Eigen::MatrixXd texts(10, 6);
  for (Eigen::Index i = 0; i < texts.size(); ++i) texts.data()[i] = rng.normal();
  Eigen::MatrixXd img = texts.row(7);
  CHECK(zeroshot_predict(make_matrix(img, "i"), make_matrix(texts, "t")) == std::vector<int>{7});
  img *= 1000;
  CHECK(zeroshot_predict(make_matrix(img, "i"), make_matrix(texts, "t")) == std::vector<int>{7});
}

TEST_CASE("zeroshot_predict: ties go to the smaller class id") {
  Eigen::MatrixXd texts(3, 2);
  texts << 0, 1, 1, 0, 2, 0;  // classes 1 and 2 point the same way
  Eigen::MatrixXd img(1, 2);
  img << 5, 0.1;
  CHECK(zeroshot_predict(make_matrix(img, "i"), make_matrix(texts, "t")) == std::vector<int>{1});
}

TEST_CASE("zeroshot_predict: errors") {
  Eigen::MatrixXd texts = Eigen::MatrixXd::Identity(3, 3);
  Eigen::MatrixXd img = Eigen::MatrixXd::Ones(2, 2);
  CHECK_THROWS_AS(zeroshot_predict(make_matrix(img, "i"), make_matrix(texts, "t")), PreconditionError);
  Eigen::MatrixXd zero = Eigen::MatrixXd::Zero(1, 3);
  CHECK_THROWS_AS(zeroshot_predict(make_matrix(zero, "i"), make_matrix(texts, "t")), PreconditionError);
  CHECK_THROWS_AS(zeroshot_predict(make_matrix(texts, "i"), make_matrix(zero, "t")), PreconditionError);
}

TEST_CASE("zeroshot_predict agrees with the brute-force cosine oracle on 1000 trials") {
  CounterRng rng(2026);
  int disagreements = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const auto classes = 1 + static_cast<Eigen::Index>(rng.uniform_below(12));
    const auto dim = 1 + static_cast<Eigen::Index>(rng.uniform_below(16));
    const auto n = 1 + static_cast<Eigen::Index>(rng.uniform_below(8));
    Eigen::MatrixXd texts(classes, dim), images(n, dim);
    for (Eigen::Index i = 0; i < texts.size(); ++i) texts.data()[i] = rng.normal();
    for (Eigen::Index i = 0; i < images.size(); ++i) images.data()[i] = rng.normal();
    if (trial % 4 == 1) texts.row(classes - 1) = texts.row(0) * 4.0;  // exact tie (power-of-two scale is exact)
    const auto expected = brute_force_cosine(images, texts);
    const auto got = zeroshot_predict(make_matrix(images, "i"), make_matrix(texts, "t"));
    disagreements += got != expected;
    if (trial % 2 == 0) {
      Eigen::MatrixXd scaled = images;
      for (Eigen::Index r = 0; r < n; ++r) scaled.row(r) *= std::pow(10.0, rng.uniform(-4, 4));
      disagreements += zeroshot_predict(make_matrix(scaled, "i"), make_matrix(texts, "t")) != got;
    }
  }
  CHECK(disagreements == 0);
}

TEST_CASE("accuracy") {
  CHECK(accuracy(std::vector<int>{0, 1, 1, 2}, std::vector<int>{0, 1, 2, 2}, 3).overall == 0.75);
  const std::vector<int> p{2, 0, 1, 1};
  CHECK(accuracy(p, p, 3).overall == 1.0);
  const auto r = accuracy(std::vector<int>{0, 1, 1}, std::vector<int>{0, 0, 1}, 3);
  CHECK(std::abs(r.overall - 2.0 / 3.0) < 1e-15);
  CHECK(r.per_class[0] == 0.5);
  CHECK(r.per_class[1] == 1.0);
  CHECK_FALSE(r.per_class[2].has_value());
  CHECK_THROWS_AS(accuracy(std::vector<int>{0}, std::vector<int>{0, 1}, 2), PreconditionError);
  CHECK_THROWS_AS(accuracy(std::vector<int>{}, std::vector<int>{}, 2), PreconditionError);
}

TEST_CASE("render_results: delta in percentage points") {
  const std::vector<EvalResult> rs{sample_result("ViT-B/32", Method::zeroshot, std::nullopt, 0.4852),
                                   sample_result("ViT-B/32", Method::attrsyn, Classifier::lr, 0.4967)};
  const auto out = render_results(rs);
  CHECK(out.table.find("49.67%* (+1.15%)") != std::string::npos);
  CHECK(out.table.find("48.52%") != std::string::npos);
  CHECK(out.table.find("48.52%*") == std::string::npos);
  CHECK(format_delta(0.4852, 0.4967) == "-1.15%");
  CHECK(format_delta(0.5, 0.5) == "+0.00%");
  CHECK(format_delta(0.5651, 0.4289) == "+13.62%");
}

TEST_CASE("render_results: single result has no delta") {
  const std::vector<EvalResult> rs{sample_result("RN50", Method::attrsyn, Classifier::mlp, 0.9)};
  const auto out = render_results(rs);
  CHECK(out.table == "backbone: RN50\nmethod       cub-painting\nattrsyn+mlp  90.00%\n");
  CHECK(out.table.find('(') == std::string::npos);
}

TEST_CASE("render_results: groups in backbone order, rows in method order") {
  std::vector<EvalResult> rs{sample_result("B", Method::attrsyn, Classifier::lr, 0.6),
                             sample_result("A", Method::zeroshot, std::nullopt, 0.5),
                             sample_result("B", Method::zeroshot, std::nullopt, 0.55),
                             sample_result("A", Method::base_prompt, Classifier::mlp, 0.52, "cub-photo")};
  rs[0].n_train = 24;
  rs[3].n_train = 8;
  const auto out = render_results(rs);
  const auto b = out.table.find("backbone: B");
  const auto a = out.table.find("backbone: A");
  REQUIRE(b != std::string::npos);
  REQUIRE(a != std::string::npos);
  CHECK(b < a);
  // zeroshot row precedes attrsyn row within B
  const auto group_b = out.table.substr(b, a - b);
  CHECK(group_b.find("zeroshot") < group_b.find("attrsyn+lr"));
  CHECK(group_b.find("60.00%* (+5.00%)") != std::string::npos);
  CHECK(out.plot_tsv ==
        "n_train\taccuracy\tmethod\tbackbone\n"
        "24\t0.600000\tattrsyn+lr\tB\n"
        "0\t0.500000\tzeroshot\tA\n"
        "0\t0.550000\tzeroshot\tB\n"
        "8\t0.520000\tbase_prompt+mlp\tA\n");
}

TEST_CASE("check_mergeable") {
  auto a = sample_result("B", Method::zeroshot, std::nullopt, 0.5);
  auto b = a;
  std::vector<EvalResult> ok{a, b};
  CHECK_NOTHROW(check_mergeable(ok));
  b.dataset_digest = "other";
  std::vector<EvalResult> bad{a, b};
  CHECK_THROWS_AS(check_mergeable(bad), ConflictError);
}

TEST_CASE("eval result JSON round trip") {
  TempDir dir;
  auto r = sample_result("B", Method::attrsyn, Classifier::lr, 0.75);
  r.per_class_accuracy = {1.0, std::nullopt, 0.5};
  r.n_train = 40;
  r.config_digest = "abc";
  std::vector<EvalResult> rs{r, sample_result("B", Method::zeroshot, std::nullopt, 0.25)};
  save_results(rs, dir / "results.jsonl");
  CHECK(load_results(dir / "results.jsonl") == rs);
  write_file_atomic(dir / "bad.jsonl", std::string("{\"dataset\":1}\n"));
  CHECK_THROWS_AS(load_results(dir / "bad.jsonl"), ParseError);
}

TEST_CASE("ablation_plan: prefix property and scale rules") {
  const auto ds = birds();
  const std::vector<std::uint64_t> configs(4, 9);
  const auto p8 = ablation_plan(ds, configs, 8, 42, false);
  const auto p16 = ablation_plan(ds, configs, 16, 42, false);
  const auto p24 = ablation_plan(ds, configs, 24, 42, false);
  CHECK(p8.entries.size() == 8);
  CHECK(std::equal(p8.entries.begin(), p8.entries.end(), p16.entries.begin()));
  CHECK(std::equal(p16.entries.begin(), p16.entries.end(), p24.entries.begin()));
  CHECK_THROWS_AS(ablation_plan(ds, configs, 10, 42, false), PreconditionError);
  CHECK_THROWS_AS(ablation_plan(ds, configs, 3, 42, false), PreconditionError);
  CHECK_THROWS_AS(ablation_plan(ds, configs, 0, 42, true), PreconditionError);
  const auto p10 = ablation_plan(ds, configs, 10, 42, true);
  CHECK(p10.entries.size() == 10);
  CHECK(std::equal(p10.entries.begin(), p10.entries.end(), p16.entries.begin()));
  std::vector<int> per(4, 0);
  for (const auto& e : p10.entries) per[static_cast<std::size_t>(e.class_id)]++;
  CHECK(per == std::vector<int>{3, 3, 2, 2});

  std::vector<std::string> many;
  for (int i = 0; i < 200; ++i) many.push_back("class " + std::to_string(i));
  const auto big = DatasetSpec::with_classes("cub", "photo", "bird", many);
  const auto p200 = ablation_plan(big, std::vector<std::uint64_t>(200, 125), 200, 42, false);
  CHECK(p200.per_class == 1);
  CHECK(p200.entries.size() == 200);
}

namespace {

struct MockWorld {
  DatasetSpec ds = birds();
  MockImageBackend images;
  MockEmbedder embedder{"mock-clip", 32, names(ds)};
  TempDir dir;
  EmbeddingCache cache;
  EmbeddingMatrix test;
  EmbeddingMatrix texts;

  MockWorld() {
    test = build_mock_test_set(ds, 10, images, embedder, 7);
    texts = embed_class_texts(ds, kClassTextTemplate, embedder);
  }

  EmbeddingMatrix features(const GenerationPlan& plan) {
    const auto records = plan_to_records(plan, ds, {}, {}, GenParams{}, images.backend_id());
    RunOptions o;
    o.backoff = std::chrono::milliseconds(0);
    const auto report = run_plan(records, images, GenParams{}, 1, dir.path(), o);
    std::vector<GenerationRecord> wanted;
    for (const auto& r : report.records) {
      for (const auto& want : records) {
        if (want.record_id == r.record_id) wanted.push_back(r);
      }
    }
    return embed_manifest(wanted, dir.path(), embedder, 1, &cache).matrix;
  }
};

}  // namespace

TEST_CASE("run_experiment on the mock construction") {
  MockWorld w;
  const auto train = w.features(sample_base_plan(w.ds, 5, 42));
  ExperimentSpec spec;
  spec.dataset = w.ds;
  spec.backbone_id = "mock-clip";
  spec.method = Method::base_prompt;
  spec.classifier = Classifier::lr;
  spec.train = &train;
  spec.test = &w.test;
  const auto lr = run_experiment(spec);
  CHECK(lr.accuracy >= 0.95);
  CHECK(lr.n_train == 20);
  CHECK(lr.per_class_accuracy.size() == 4);
  CHECK(run_experiment(spec) == lr);

  spec.classifier = Classifier::mlp;
  spec.probe.mlp.hidden = 16;
  spec.probe.mlp.max_iter = 200;
  spec.probe.mlp.lr = 0.01;
  const auto mlp = run_experiment(spec);
  CHECK(mlp.accuracy >= 0.95);
  CHECK(mlp.config_digest != lr.config_digest);

  ExperimentSpec zs;
  zs.dataset = w.ds;
  zs.backbone_id = "mock-clip";
  zs.class_texts = &w.texts;
  zs.test = &w.test;
  const auto z = run_experiment(zs);
  CHECK(z.accuracy >= 0.95);
  CHECK(z.n_train == 0);
  CHECK_FALSE(z.classifier.has_value());

  zs.class_texts = nullptr;
  CHECK_THROWS_AS(run_experiment(zs), PreconditionError);
  spec.train = nullptr;
  CHECK_THROWS_AS(run_experiment(spec), PreconditionError);
  spec.train = &train;
  spec.classifier.reset();
  CHECK_THROWS_AS(run_experiment(spec), PreconditionError);

  // a class missing from the training labels
  auto partial = train;
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < partial.labels->size(); ++i) {
    if ((*partial.labels)[i] != 3) keep.push_back(i);
  }
  partial = select_rows(train, keep);
  spec.classifier = Classifier::lr;
  spec.train = &partial;
  CHECK_THROWS_AS(run_experiment(spec), PreconditionError);
}

TEST_CASE("ablate_scale reuses generations across scales") {
  MockWorld w;
  AblationSpec a;
  a.dataset = w.ds;
  a.configs_per_class = std::vector<std::uint64_t>(4, 1);
  a.backbone_id = "mock-clip";
  a.scales = {8, 16};
  a.test = &w.test;
  // base-style plans stand in here: a single configuration per class
  a.features_for_plan = [&](const GenerationPlan& plan) {
    GenerationPlan base = plan;
    for (auto& e : base.entries) e.config_index.reset();
    return w.features(base);
  };
  const auto calls_before = w.images.calls();
  const auto results = ablate_scale(a);
  REQUIRE(results.size() == 2);
  CHECK(results[0].n_train == 8);
  CHECK(results[1].n_train == 16);
  CHECK(results[0].config_digest != results[1].config_digest);
  // 16 distinct images in total: the 8-plan is reused
  CHECK(w.images.calls() - calls_before == 16);
  a.scales = {8, 10};
  CHECK_THROWS_AS(ablate_scale(a), PreconditionError);
}
