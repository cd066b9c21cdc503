// Copyright 2026 The AttrSyn Authors.
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <cstring>

#include "attrsyn/dispatch.hpp"
#include "attrsyn/embed.hpp"
#include "attrsyn/error.hpp"
#include "attrsyn/io.hpp"
#include "attrsyn/rng.hpp"
#include "doctest.h"
#include "forge_fixtures.hpp"
#include "test_util.hpp"

using namespace attrsyn;
using namespace attrsyn::testing;
namespace fs = std::filesystem;

namespace {

DatasetSpec birds() {
  return DatasetSpec::with_classes("birds", "painting", "bird",
                                   {"black-footed albatross", "cardinal", "blue jay", "painted bunting"});
}

std::vector<std::string> names(const DatasetSpec& d) {
  std::vector<std::string> out;
  for (const auto& c : d.classes) out.push_back(c.name);
  return out;
}

struct Generated {
  TempDir dir;
  std::vector<GenerationRecord> records;
};

std::unique_ptr<Generated> generate_base(const DatasetSpec& ds, int per_class) {
  auto g = std::make_unique<Generated>();
  MockImageBackend backend;
  const auto plan = sample_base_plan(ds, per_class, 42);
  const auto records = plan_to_records(plan, ds, {}, {}, GenParams{}, backend.backend_id());
  RunOptions o;
  o.backoff = std::chrono::milliseconds(0);
  g->records = run_plan(records, backend, GenParams{}, 2, g->dir.path(), o).records;
  return g;
}

}  // namespace

TEST_CASE("embed_manifest: 20-image mock manifest") {
  const auto ds = birds();
  auto g = generate_base(ds, 5);
  MockEmbedder embedder("mock-clip", 32, names(ds));
  const auto result = embed_manifest(g->records, g->dir.path(), embedder, 3);
  CHECK(result.failures.empty());
  CHECK(result.matrix.rows() == 20);
  CHECK(result.matrix.dim() == 32);
  REQUIRE(result.matrix.labels.has_value());
  for (std::size_t i = 0; i < g->records.size(); ++i) {
    CHECK(result.matrix.row_ids[i] == g->records[i].record_id);
    CHECK((*result.matrix.labels)[i] == g->records[i].class_id);
  }
  // rows sit near their class mean
  for (Eigen::Index r = 0; r < result.matrix.rows(); ++r) {
    const auto& mu = embedder.class_mean((*result.matrix.labels)[static_cast<std::size_t>(r)]);
    const Eigen::RowVectorXd m = Eigen::Map<const Eigen::RowVectorXd>(mu.data(), 32);
    CHECK((result.matrix.data.row(r) - m).norm() < 0.6);
  }
}

TEST_CASE("embed_manifest: identical image files give identical rows") {
  const auto ds = birds();
  auto g = generate_base(ds, 1);
  auto twin = g->records[0];
  twin.record_id += "-copy";
  fs::copy_file(g->dir / *g->records[0].image_ref, g->dir / "images/copy.png");
  twin.image_ref = "images/copy.png";
  g->records.push_back(twin);
  MockEmbedder embedder("mock-clip", 16, names(ds));
  const auto m = embed_manifest(g->records, g->dir.path(), embedder, 1).matrix;
  CHECK(m.data.row(0) == m.data.row(m.rows() - 1));
}

TEST_CASE("embed_manifest: failed records are a precondition error") {
  const auto ds = birds();
  auto g = generate_base(ds, 1);
  g->records[2].status = RecordStatus::failed;
  g->records[2].image_ref.reset();
  MockEmbedder embedder("mock-clip", 16, names(ds));
  try {
    embed_manifest(g->records, g->dir.path(), embedder, 1);
    FAIL("expected failure");
  } catch (const PreconditionError& e) {
    CHECK(std::string(e.what()).find(g->records[2].record_id) != std::string::npos);
  }
}

TEST_CASE("embed_manifest: per-image backend failure excludes the row") {
  const auto ds = birds();
  auto g = generate_base(ds, 2);
  write_file_atomic(g->dir / *g->records[1].image_ref, std::string("not a png"));
  MockEmbedder embedder("mock-clip", 16, names(ds));
  const auto result = embed_manifest(g->records, g->dir.path(), embedder, 2);
  CHECK(result.matrix.rows() == 7);
  REQUIRE(result.failures.size() == 1);
  CHECK(result.failures[0].record_id == g->records[1].record_id);
}

TEST_CASE("embed_manifest: wrong dimension is a hard error") {
  struct Liar : EmbeddingBackend {
    std::vector<double> embed_image(std::span<const std::uint8_t>) override { return {1.0, 2.0}; }
    std::vector<double> embed_text(const std::string&) override { return {1.0, 2.0}; }
    std::string backbone_id() const override { return "liar"; }
    int dim() override { return 3; }
  } liar;
  const auto ds = birds();
  auto g = generate_base(ds, 1);
  CHECK_THROWS_AS(embed_manifest(g->records, g->dir.path(), liar, 1), PreconditionError);
  CHECK_THROWS_AS(embed_class_texts(ds, kClassTextTemplate, liar), PreconditionError);
}

TEST_CASE("embedding cache avoids repeat backend calls") {
  const auto ds = birds();
  auto g = generate_base(ds, 2);
  MockEmbedder embedder("mock-clip", 16, names(ds));
  EmbeddingCache cache;
  const auto first = embed_manifest(g->records, g->dir.path(), embedder, 2, &cache);
  CHECK(first.backend_calls == 8);
  const auto second = embed_manifest(g->records, g->dir.path(), embedder, 2, &cache);
  CHECK(second.backend_calls == 0);
  CHECK(second.matrix.data == first.matrix.data);
  cache.save(g->dir / "cache.jsonl");
  auto loaded = EmbeddingCache::load(g->dir / "cache.jsonl");
  CHECK(loaded.size() == 8);
  CHECK(embed_manifest(g->records, g->dir.path(), embedder, 2, &loaded).matrix.data == first.matrix.data);
}

TEST_CASE("class text templates") {
  const auto ds = birds();
  CHECK(instantiate_template(kClassTextTemplate, ds, ds.classes[1]) == "a painting of a cardinal");
  const auto photo = DatasetSpec::with_classes("cub", "photo", "bird", {"black-footed albatross"});
  CHECK(instantiate_template(kClassTextTemplate, photo, photo.classes[0]) == "a photo of a black-footed albatross");
  CHECK_THROWS_AS(instantiate_template("a {domain} of a thing", ds, ds.classes[0]), PreconditionError);

  struct Recorder : EmbeddingBackend {
    std::vector<std::string> seen;
    std::vector<double> embed_image(std::span<const std::uint8_t>) override { return {1.0}; }
    std::vector<double> embed_text(const std::string& t) override {
      seen.push_back(t);
      return {static_cast<double>(seen.size())};
    }
    std::string backbone_id() const override { return "rec"; }
    int dim() override { return 1; }
  } rec;
  const auto m = embed_class_texts(ds, kClassTextTemplate, rec);
  CHECK(m.rows() == 4);
  CHECK(rec.seen[1] == "a painting of a cardinal");
  CHECK(m.data(3, 0) == 4.0);
  CHECK_THROWS_AS(embed_class_texts(ds, "{class}", rec), PreconditionError);
}

TEST_CASE("embed_class_texts: 200 classes") {
  const auto fx = table_scale_fixture();
  MockEmbedder embedder("mock-clip", 8, names(fx.dataset));
  CHECK(embed_class_texts(fx.dataset, kClassTextTemplate, embedder).rows() == 200);
}

TEST_CASE("l2_normalize_rows") {
  EmbeddingMatrix m;
  m.row_ids = {"a", "b"};
  m.data.resize(2, 2);
  m.data << 3, 4, 0.6, 0.8;
  const auto n = l2_normalize_rows(m);
  CHECK(n.data(0, 0) == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(n.data(0, 1) == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(std::abs(n.data(1, 0) - 0.6) < 1e-12);
  m.data.row(1).setZero();
  try {
    l2_normalize_rows(m);
    FAIL("expected failure");
  } catch (const PreconditionError& e) {
    CHECK(std::string(e.what()).find("row b") != std::string::npos);
  }
}

TEST_CASE("property: normalization gives unit rows and is idempotent") {
  CounterRng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    EmbeddingMatrix m;
    const auto rows = 1 + static_cast<Eigen::Index>(rng.uniform_below(6));
    const auto dim = 1 + static_cast<Eigen::Index>(rng.uniform_below(9));
    m.data.resize(rows, dim);
    for (Eigen::Index r = 0; r < rows; ++r) {
      m.row_ids.push_back(std::to_string(r));
      const double scale = std::pow(10.0, rng.uniform(-3, 3));
      for (Eigen::Index c = 0; c < dim; ++c) m.data(r, c) = scale * rng.normal();
    }
    const auto once = l2_normalize_rows(m);
    const auto twice = l2_normalize_rows(once);
    for (Eigen::Index r = 0; r < rows; ++r) {
      CHECK(std::abs(once.data.row(r).norm() - 1.0) < 1e-9);
      // direction preserved
      CHECK(once.data.row(r).dot(m.data.row(r)) > 0);
    }
    CHECK((twice.data - once.data).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("matrix save/load keeps rows aligned and floats exact") {
  TempDir dir;
  CounterRng rng(11);
  EmbeddingMatrix m;
  m.backbone_id = "mock-clip";
  m.data.resize(5, 3);
  m.labels.emplace();
  for (int r = 0; r < 5; ++r) {
    m.row_ids.push_back("row-" + std::to_string(r));
    m.labels->push_back(r % 2);
    for (int c = 0; c < 3; ++c) m.data(r, c) = static_cast<float>(rng.normal());
  }
  m.data(2, 1) = -0.0;
  save_matrix(m, dir / "m.jsonl");
  CHECK(fs::exists(dir / "m.jsonl.f32"));
  CHECK(fs::file_size(dir / "m.jsonl.f32") == 5 * 3 * 4);
  const auto back = load_matrix(dir / "m.jsonl");
  CHECK(back.backbone_id == m.backbone_id);
  CHECK(back.row_ids == m.row_ids);
  CHECK(back.labels == m.labels);
  CHECK(back.data == m.data);

  const auto bytes = read_binary_file(dir / "m.jsonl.f32");
  const float first = static_cast<float>(m.data(0, 0));
  std::uint32_t bits = 0;
  std::memcpy(&bits, &first, 4);
  CHECK(bytes[0] == (bits & 0xff));  // little-endian
  CHECK(bytes[3] == (bits >> 24));

  write_file_atomic(dir / "m.jsonl.f32", std::string("abc"));
  CHECK_THROWS_AS(load_matrix(dir / "m.jsonl"), ParseError);
}

TEST_CASE("mock class structure") {
  const auto ds = birds();
  MockEmbedder embedder("mock-clip", 32, names(ds));
  CHECK(embedder.match_class("A cardinal, perching, oil painting") == 1);
  CHECK(embedder.match_class("a painted bunting bird, painting") == 3);
  CHECK_FALSE(embedder.match_class("a cardinals nest").has_value());
  CHECK(embedder.embed_text("a painting of a blue jay") == embedder.class_mean(2));
  double norm = 0;
  for (double x : embedder.class_mean(0)) norm += x * x;
  CHECK(std::abs(norm - 1.0) < 1e-12);

  MockImageBackend images;
  const auto test = build_mock_test_set(ds, 10, images, embedder, 7);
  CHECK(test.rows() == 40);
  CHECK(test.labels->at(39) == 3);
  const auto again = build_mock_test_set(ds, 10, images, embedder, 7);
  CHECK(again.data == test.data);
}
