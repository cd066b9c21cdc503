// Copyright 2026 The AttrSyn Authors.
// SPDX-License-Identifier: Apache-2.0

// Linear-probe classifiers on frozen embeddings: L2-regularized multinomial
// logistic regression and a one-hidden-layer ReLU MLP trained with Adam.
// X is samples x dim; labels are class ids in [0, num_classes).

#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace attrsyn {

struct TrainingMeta {
  int iterations_used = 0;
  double final_grad_norm = 0;
  double final_objective = 0;
  bool converged = false;

  bool operator==(const TrainingMeta&) const = default;
};

struct LrOptions {
  double C = 0.316;
  int max_iter = 1000;  // outer L-BFGS iterations
  double tol = 1e-5;    // on the Euclidean norm of the full gradient
  std::uint64_t seed = 42;  // the solver is deterministic; kept for the run record
  int history = 10;
};

struct LrModel {
  Eigen::MatrixXd W;  // classes x dim
  Eigen::VectorXd b;  // classes
  double C = 0.316;
  TrainingMeta meta;

  int num_classes() const { return static_cast<int>(W.rows()); }
  int dim() const { return static_cast<int>(W.cols()); }
};

// 0.5 * ||W||_F^2 + C * sum_i CE(softmax(W x_i + b), y_i); b unregularized.
double lr_objective(const Eigen::MatrixXd& W, const Eigen::VectorXd& b, const Eigen::MatrixXd& X,
                    std::span<const int> y, double C);

struct LrGradient {
  Eigen::MatrixXd dW;
  Eigen::VectorXd db;

  double norm() const { return std::sqrt(dW.squaredNorm() + db.squaredNorm()); }
};

LrGradient lr_gradient(const Eigen::MatrixXd& W, const Eigen::VectorXd& b, const Eigen::MatrixXd& X,
                       std::span<const int> y, double C);

// L-BFGS with backtracking (Armijo) line search from W = 0, b = 0. Every
// class in [0, num_classes) must appear in y.
LrModel train_lr(const Eigen::MatrixXd& X, std::span<const int> y, int num_classes, const LrOptions& options = {});

struct MlpOptions {
  int hidden = 256;
  double lr = 0.001;
  int max_iter = 1000;  // epochs
  std::uint64_t seed = 42;
  int batch_size = 0;  // 0 means min(200, N)
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct MlpModel {
  Eigen::MatrixXd W1;  // hidden x dim
  Eigen::VectorXd b1;
  Eigen::MatrixXd W2;  // classes x hidden
  Eigen::VectorXd b2;
  MlpOptions hyper;
  TrainingMeta meta;

  int num_classes() const { return static_cast<int>(W2.rows()); }
  int dim() const { return static_cast<int>(W1.cols()); }
};

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases from the seed.
MlpModel init_mlp(int dim, int num_classes, const MlpOptions& options);

struct MlpGradients {
  Eigen::MatrixXd dW1;
  Eigen::VectorXd db1;
  Eigen::MatrixXd dW2;
  Eigen::VectorXd db2;

  double norm() const { return std::sqrt(dW1.squaredNorm() + db1.squaredNorm() + dW2.squaredNorm() + db2.squaredNorm()); }
};

// Mean cross-entropy and its exact gradients (ReLU subgradient 0 at 0).
double mlp_loss(const MlpModel& model, const Eigen::MatrixXd& X, std::span<const int> y);
MlpGradients mlp_gradients(const MlpModel& model, const Eigen::MatrixXd& X, std::span<const int> y);

MlpModel train_mlp(const Eigen::MatrixXd& X, std::span<const int> y, int num_classes, const MlpOptions& options = {});

// samples x classes
Eigen::MatrixXd logits(const LrModel& model, const Eigen::MatrixXd& X);
Eigen::MatrixXd logits(const MlpModel& model, const Eigen::MatrixXd& X);

Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits);
// Row argmax, ties to the smaller column index.
std::vector<int> argmax_rows(const Eigen::MatrixXd& scores);

template <typename Model>
std::vector<int> predict(const Model& model, const Eigen::MatrixXd& X) {
  return argmax_rows(logits(model, X));
}

template <typename Model>
Eigen::MatrixXd predict_proba(const Model& model, const Eigen::MatrixXd& X) {
  return softmax_rows(logits(model, X));
}

// Header line plus `path`.f32 sidecar (float32, little-endian). Loaded
// parameters carry float32 precision.
void save_model(const LrModel& model, const std::filesystem::path& path);
void save_model(const MlpModel& model, const std::filesystem::path& path);
LrModel load_lr_model(const std::filesystem::path& path);
MlpModel load_mlp_model(const std::filesystem::path& path);
// "lr" or "mlp", from the header.
std::string model_type(const std::filesystem::path& path);

}  // namespace attrsyn
