// Copyright 2026 The AttrSyn Authors.
// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include "attrsyn/error.hpp"
#include "attrsyn/probe.hpp"
#include "attrsyn/rng.hpp"
#include "doctest.h"
#include "probe_fixtures.hpp"
#include "test_util.hpp"

using namespace attrsyn;
using namespace attrsyn::testing;
namespace fs = std::filesystem;

namespace {

double accuracy_of(const std::vector<int>& pred, const std::vector<int>& y) {
  int hit = 0;
  for (std::size_t i = 0; i < y.size(); ++i) hit += pred[i] == y[i];
  return static_cast<double>(hit) / static_cast<double>(y.size());
}

Eigen::MatrixXd random_matrix(CounterRng& rng, Eigen::Index r, Eigen::Index c) {
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

}  // namespace

TEST_CASE("lr_objective at W = 0") {
  Eigen::MatrixXd X(1, 2);
  X << 1.0, 2.0;
  const std::vector<int> y{0};
  const double f = lr_objective(Eigen::MatrixXd::Zero(2, 2), Eigen::VectorXd::Zero(2), X, y, 0.316);
  CHECK(std::abs(f - 0.316 * std::log(2.0)) < 1e-12);
  CHECK(std::abs(f - 0.219034) < 1e-6);

  const auto inst = blobs(5, 4, 7, 1.0, 3);
  const double f5 = lr_objective(Eigen::MatrixXd::Zero(5, 4), Eigen::VectorXd::Zero(5), inst.X, inst.y, 0.5);
  CHECK(std::abs(f5 - 0.5 * 35 * std::log(5.0)) < 1e-10);
}

TEST_CASE("lr_objective and lr_gradient agree with loop oracles") {
  CounterRng rng(17);
  for (int trial = 0; trial < 100; ++trial) {
    const auto inst = random_small_instance(rng);
    const auto W = random_matrix(rng, inst.classes, inst.X.cols());
    const Eigen::VectorXd b = random_matrix(rng, inst.classes, 1).col(0);
    const double C = rng.uniform(0.01, 3);
    const double f = lr_objective(W, b, inst.X, inst.y, C);
    CHECK(std::abs(f - naive_lr_objective(W, b, inst.X, inst.y, C)) <= 1e-12 * std::max(1.0, std::abs(f)));
    const auto g = lr_gradient(W, b, inst.X, inst.y, C);
    const auto ng = naive_lr_gradient(W, b, inst.X, inst.y, C);
    const Eigen::Index K = W.rows(), D = W.cols();
    for (Eigen::Index k = 0; k < K; ++k) {
      for (Eigen::Index d = 0; d < D; ++d) CHECK(std::abs(g.dW(k, d) - ng[static_cast<std::size_t>(k * D + d)]) < 1e-10);
      CHECK(std::abs(g.db(k) - ng[static_cast<std::size_t>(K * D + k)]) < 1e-10);
    }
  }
}

TEST_CASE("lr_objective is stable for large logits") {
  Eigen::MatrixXd X(1, 1);
  X << 1000.0;
  Eigen::MatrixXd W(2, 1);
  W << 1.0, -1.0;
  const std::vector<int> y{1};
  const double f = lr_objective(W, Eigen::VectorXd::Zero(2), X, y, 1.0);
  CHECK(std::isfinite(f));
  CHECK(std::abs(f - (1.0 + 2000.0)) < 1e-9);
}

TEST_CASE("gradient checks: LR, 150 random instances") {
  CounterRng rng(101);
  double worst = 0;
  for (int i = 0; i < 150; ++i) worst = std::max(worst, lr_gradcheck(rng));
  CHECK(worst < 1e-4);
}

TEST_CASE("gradient checks: MLP, 150 random instances") {
  CounterRng rng(202);
  double worst = 0;
  for (int i = 0; i < 150; ++i) worst = std::max(worst, mlp_gradcheck(rng));
  CHECK(worst < 1e-4);
}

TEST_CASE("train_lr matches the gradient-descent oracle on the blob instance") {
  const auto inst = blob_instance();
  const auto model = train_lr(inst.X, inst.y, 3);
  const auto oracle = gd_oracle(inst, 0.316);
  CHECK(oracle.grad_norm <= 1e-7);
  CHECK(model.meta.converged);
  CHECK(model.meta.final_grad_norm <= 1e-4);
  CHECK(std::abs(model.meta.final_objective - oracle.objective) <= 1e-4 * oracle.objective);
  CHECK(std::abs(lr_objective(model.W, model.b, inst.X, inst.y, 0.316) - model.meta.final_objective) < 1e-12);
  CHECK(accuracy_of(predict(model, inst.X), inst.y) == 1.0);
}

TEST_CASE("train_lr: optimum beats random points") {
  const auto inst = blob_instance();
  const auto model = train_lr(inst.X, inst.y, 3);
  CounterRng rng(9);
  for (int i = 0; i < 100; ++i) {
    const double scale = rng.uniform(0.01, 2);
    const Eigen::MatrixXd W = model.W + scale * random_matrix(rng, 3, 10);
    const Eigen::VectorXd b = model.b + scale * random_matrix(rng, 3, 1).col(0);
    CHECK(lr_objective(W, b, inst.X, inst.y, 0.316) >= model.meta.final_objective);
  }
}

TEST_CASE("train_lr: tiny C drives W to zero") {
  const auto inst = blob_instance();
  LrOptions o;
  o.C = 1e-9;
  const auto model = train_lr(inst.X, inst.y, 3, o);
  CHECK(model.W.norm() <= 1e-3);
}

TEST_CASE("train_lr: duplicating the data and halving C gives the same optimum") {
  const auto inst = blobs(3, 5, 8, 2.0, 77);
  Instance twice;
  twice.classes = 3;
  twice.X.resize(inst.X.rows() * 2, inst.X.cols());
  twice.X << inst.X, inst.X;
  twice.y = inst.y;
  twice.y.insert(twice.y.end(), inst.y.begin(), inst.y.end());
  LrOptions o;
  o.tol = 1e-9;
  const auto a = train_lr(inst.X, inst.y, 3, o);
  o.C /= 2;
  const auto b = train_lr(twice.X, twice.y, 3, o);
  CHECK((a.W - b.W).cwiseAbs().maxCoeff() < 1e-6);
  CHECK((a.b - b.b).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("train_lr: symmetric balanced data gives zero bias") {
  Eigen::MatrixXd X(4, 1);
  X << 1, 2, -1, -2;
  const std::vector<int> y{0, 0, 1, 1};
  const auto model = train_lr(X, y, 2);
  CHECK(std::abs(model.b(0) - model.b(1)) < 1e-8);
  CHECK(std::abs(model.W(0, 0) + model.W(1, 0)) < 1e-8);
}

TEST_CASE("train_lr preconditions") {
  const auto inst = blob_instance();
  std::vector<int> one(inst.y.size(), 0);
  CHECK_THROWS_AS(train_lr(inst.X, one, 3), PreconditionError);
  CHECK_THROWS_AS(train_lr(inst.X, one, 1), PreconditionError);
  std::vector<int> two = inst.y;
  for (auto& v : two) v = v == 2 ? 1 : v;
  try {
    train_lr(inst.X, two, 3);
    FAIL("expected failure");
  } catch (const PreconditionError& e) {
    CHECK(std::string(e.what()).find("class") != std::string::npos);
  }
  auto bad = inst.X;
  bad(3, 3) = NAN;
  CHECK_THROWS_AS(train_lr(bad, inst.y, 3), PreconditionError);
  CHECK_THROWS_AS(train_lr(inst.X, std::vector<int>{0, 1, 2}, 3), PreconditionError);
  const auto model = train_lr(inst.X, inst.y, 3);
  CHECK_THROWS_AS(predict(model, Eigen::MatrixXd::Zero(2, 9)), PreconditionError);
}

TEST_CASE("train_mlp fits the blobs and is bit-reproducible") {
  const auto inst = blob_instance();
  MlpOptions o;
  o.hidden = 32;
  o.max_iter = 300;
  o.lr = 0.01;
  const auto a = train_mlp(inst.X, inst.y, 3, o);
  const auto b = train_mlp(inst.X, inst.y, 3, o);
  CHECK(accuracy_of(predict(a, inst.X), inst.y) == 1.0);
  CHECK(a.W1 == b.W1);
  CHECK(a.W2 == b.W2);
  CHECK(a.b1 == b.b1);
  CHECK(a.b2 == b.b2);
  CHECK(a.meta == b.meta);
  CHECK(a.meta.final_objective < mlp_loss(init_mlp(10, 3, o), inst.X, inst.y));
  o.seed = 43;
  const auto c = train_mlp(inst.X, inst.y, 3, o);
  CHECK(c.W1 != a.W1);
}

TEST_CASE("train_mlp: minibatches and hidden = 1") {
  const auto inst = blob_instance();
  MlpOptions o;
  o.hidden = 1;
  o.max_iter = 20;
  o.batch_size = 7;  // does not divide 60
  const auto m = train_mlp(inst.X, inst.y, 3, o);
  CHECK(m.W1.rows() == 1);
  CHECK(std::isfinite(m.meta.final_objective));
}

TEST_CASE("mlp_gradients edge cases") {
  const auto inst = blobs(3, 4, 5, 1.0, 8);
  MlpOptions o;
  o.hidden = 6;
  auto model = init_mlp(4, 3, o);
  model.W2.setZero();
  auto g = mlp_gradients(model, inst.X, inst.y);
  CHECK(g.dW1.cwiseAbs().maxCoeff() == 0.0);
  CHECK(g.db1.cwiseAbs().maxCoeff() == 0.0);

  // all hidden units dead: only the output bias learns
  model = init_mlp(4, 3, o);
  model.b1.setConstant(-1e6);
  g = mlp_gradients(model, inst.X, inst.y);
  CHECK(g.dW1.cwiseAbs().maxCoeff() == 0.0);
  CHECK(g.dW2.cwiseAbs().maxCoeff() == 0.0);
  CHECK(g.db2.cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("init_mlp bounds") {
  MlpOptions o;
  o.hidden = 50;
  const auto m = init_mlp(16, 4, o);
  CHECK(m.W1.cwiseAbs().maxCoeff() <= 0.25);
  CHECK(m.W2.cwiseAbs().maxCoeff() <= 1.0 / std::sqrt(50.0));
  CHECK(m.W1.cwiseAbs().maxCoeff() > 0.2);
  CHECK(init_mlp(16, 4, o).W1 == m.W1);
}

TEST_CASE("predict: ties, bias dominance, probabilities") {
  Eigen::MatrixXd Z(1, 3);
  Z << 2, 2, 1;
  CHECK(argmax_rows(Z) == std::vector<int>{0});
  Z << 1, 2, 2;
  CHECK(argmax_rows(Z) == std::vector<int>{1});

  LrModel m;
  m.W = Eigen::MatrixXd::Zero(3, 2);
  m.b = Eigen::Vector3d(0, 0, 5);
  CounterRng rng(4);
  const auto X = random_matrix(rng, 10, 2);
  CHECK(predict(m, X) == std::vector<int>(10, 2));

  m.W = random_matrix(rng, 3, 2);
  const auto P = predict_proba(m, X);
  for (Eigen::Index i = 0; i < P.rows(); ++i) {
    CHECK(std::abs(P.row(i).sum() - 1.0) < 1e-12);
    CHECK(P.row(i).minCoeff() >= 0.0);
  }

  // positive scaling of the logits keeps the argmax
  LrModel scaled = m;
  scaled.W *= 7.5;
  scaled.b *= 7.5;
  CHECK(predict(scaled, X) == predict(m, X));
}

TEST_CASE("model save/load") {
  TempDir dir;
  const auto inst = blob_instance();
  const auto lr = train_lr(inst.X, inst.y, 3);
  save_model(lr, dir / "lr.json");
  CHECK(model_type(dir / "lr.json") == "lr");
  const auto back = load_lr_model(dir / "lr.json");
  CHECK(back.meta == lr.meta);
  CHECK(back.C == lr.C);
  CHECK((back.W - lr.W).cwiseAbs().maxCoeff() <= 1e-6 * std::max(1.0, lr.W.cwiseAbs().maxCoeff()));
  CHECK(predict(back, inst.X) == predict(lr, inst.X));
  CHECK_THROWS_AS(load_mlp_model(dir / "lr.json"), ParseError);

  MlpOptions o;
  o.hidden = 8;
  o.max_iter = 5;
  const auto mlp = train_mlp(inst.X, inst.y, 3, o);
  save_model(mlp, dir / "mlp.json");
  CHECK(model_type(dir / "mlp.json") == "mlp");
  const auto mback = load_mlp_model(dir / "mlp.json");
  CHECK(mback.hyper.hidden == 8);
  CHECK(mback.hyper.seed == 42);
  CHECK(mback.W1.rows() == 8);
  // float32 storage is idempotent
  save_model(mback, dir / "mlp2.json");
  CHECK(load_mlp_model(dir / "mlp2.json").W2 == mback.W2);
}
