// Copyright 2026 The AttrSyn Authors.
// SPDX-License-Identifier: Apache-2.0

#include "attrsyn/probe.hpp"

#include <cmath>
#include <deque>
#include <numeric>
#include <sstream>

#include "attrsyn/embed.hpp"
#include "attrsyn/error.hpp"
#include "attrsyn/io.hpp"
#include "attrsyn/rng.hpp"
#include "attrsyn/schema.hpp"

namespace fs = std::filesystem;

namespace attrsyn {
namespace {

void check_training_data(const Eigen::MatrixXd& X, std::span<const int> y, int num_classes) {
  if (X.cols() == 0) throw PreconditionError("feature dim must be positive");
  if (X.rows() == 0) throw PreconditionError("no training samples");
  if (static_cast<Eigen::Index>(y.size()) != X.rows()) throw PreconditionError("labels do not match sample count");
  if (num_classes < 2) throw PreconditionError("need at least 2 classes");
  if (!X.allFinite()) throw PreconditionError("non-finite training features");
  std::vector<int> seen(static_cast<std::size_t>(num_classes), 0);
  for (int label : y) {
    if (label < 0 || label >= num_classes) throw PreconditionError("label out of range: " + std::to_string(label));
    seen[static_cast<std::size_t>(label)] = 1;
  }
  std::vector<int> missing;
  for (int c = 0; c < num_classes; ++c) {
    if (!seen[static_cast<std::size_t>(c)]) missing.push_back(c);
  }
  if (static_cast<int>(missing.size()) == num_classes - 1) throw PreconditionError("single-class training data");
  if (!missing.empty()) {
    throw PreconditionError("training labels miss " + std::to_string(missing.size()) + " class(es), first " +
                            std::to_string(missing.front()));
  }
}

void check_shapes(const Eigen::MatrixXd& W, const Eigen::VectorXd& b, const Eigen::MatrixXd& X,
                  std::span<const int> y) {
  if (W.rows() != b.size()) throw PreconditionError("W and b disagree on class count");
  if (W.cols() != X.cols()) throw PreconditionError("W and X disagree on dim");
  if (static_cast<Eigen::Index>(y.size()) != X.rows()) throw PreconditionError("labels do not match sample count");
  for (int label : y) {
    if (label < 0 || label >= W.rows()) throw PreconditionError("label out of range: " + std::to_string(label));
  }
  if (!W.allFinite() || !b.allFinite() || !X.allFinite()) throw PreconditionError("non-finite input");
}

Eigen::VectorXd row_logsumexp(const Eigen::MatrixXd& Z) {
  Eigen::VectorXd out(Z.rows());
  for (Eigen::Index i = 0; i < Z.rows(); ++i) {
    const double m = Z.row(i).maxCoeff();
    out(i) = m + std::log((Z.row(i).array() - m).exp().sum());
  }
  return out;
}

Eigen::MatrixXd affine(const Eigen::MatrixXd& X, const Eigen::MatrixXd& W, const Eigen::VectorXd& b) {
  Eigen::MatrixXd Z = X * W.transpose();
  Z.rowwise() += b.transpose();
  return Z;
}

double cross_entropy_sum(const Eigen::MatrixXd& Z, std::span<const int> y) {
  const Eigen::VectorXd lse = row_logsumexp(Z);
  double total = 0;
  for (Eigen::Index i = 0; i < Z.rows(); ++i) total += lse(i) - Z(i, y[static_cast<std::size_t>(i)]);
  return total;
}

// softmax(Z) - onehot(y)
Eigen::MatrixXd softmax_residual(const Eigen::MatrixXd& Z, std::span<const int> y) {
  Eigen::MatrixXd P = softmax_rows(Z);
  for (Eigen::Index i = 0; i < P.rows(); ++i) P(i, y[static_cast<std::size_t>(i)]) -= 1.0;
  return P;
}

struct LrProblem {
  const Eigen::MatrixXd& X;
  std::span<const int> y;
  double C;
  Eigen::Index K;
  Eigen::Index D;

  Eigen::MatrixXd W(const Eigen::VectorXd& theta) const {
    return Eigen::Map<const Eigen::MatrixXd>(theta.data(), K, D);
  }
  Eigen::VectorXd b(const Eigen::VectorXd& theta) const { return theta.tail(K); }

  double value(const Eigen::VectorXd& theta) const {
    const Eigen::MatrixXd w = W(theta);
    return 0.5 * w.squaredNorm() + C * cross_entropy_sum(affine(X, w, b(theta)), y);
  }

  Eigen::VectorXd gradient(const Eigen::VectorXd& theta, double* f) const {
    const Eigen::MatrixXd w = W(theta);
    const Eigen::MatrixXd Z = affine(X, w, b(theta));
    if (f != nullptr) *f = 0.5 * w.squaredNorm() + C * cross_entropy_sum(Z, y);
    const Eigen::MatrixXd R = softmax_residual(Z, y);
    Eigen::VectorXd g(K * D + K);
    Eigen::Map<Eigen::MatrixXd>(g.data(), K, D) = w + C * (R.transpose() * X);
    g.tail(K) = C * R.colwise().sum().transpose();
    return g;
  }
};

Eigen::MatrixXd gather_rows(const Eigen::MatrixXd& X, std::span<const std::size_t> rows) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), X.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = X.row(static_cast<Eigen::Index>(rows[i]));
  }
  return out;
}

Json meta_to_json(const TrainingMeta& m) {
  Json j = Json::object();
  j["iterations_used"] = m.iterations_used;
  j["final_grad_norm"] = m.final_grad_norm;
  j["final_objective"] = m.final_objective;
  j["converged"] = m.converged;
  return j;
}

TrainingMeta meta_from_json(const Json& j) {
  TrainingMeta m;
  m.iterations_used = j.at("iterations_used").get<int>();
  m.final_grad_norm = j.at("final_grad_norm").get<double>();
  m.final_objective = j.at("final_objective").get<double>();
  m.converged = j.at("converged").get<bool>();
  return m;
}

struct Block {
  std::string name;
  const Eigen::MatrixXd* data;
};

void write_model(const fs::path& path, Json header, const std::vector<Block>& blocks) {
  const fs::path sidecar = fs::path(path.string() + ".f32");
  Eigen::Index total = 0;
  Json layout = Json::array();
  for (const auto& b : blocks) {
    layout.push_back(Json{{"name", b.name}, {"rows", b.data->rows()}, {"cols", b.data->cols()}});
    total += b.data->size();
  }
  Eigen::MatrixXd flat(1, total);
  Eigen::Index at = 0;
  for (const auto& b : blocks) {
    for (Eigen::Index r = 0; r < b.data->rows(); ++r) {
      for (Eigen::Index c = 0; c < b.data->cols(); ++c) flat(0, at++) = (*b.data)(r, c);
    }
  }
  header["blocks"] = layout;
  header["sidecar"] = sidecar.filename().string();
  write_f32_sidecar(flat, sidecar);
  write_file_atomic(path, header.dump() + "\n");
}

struct LoadedModel {
  Json header;
  std::map<std::string, Eigen::MatrixXd> blocks;
};

LoadedModel read_model(const fs::path& path, const std::string& expected_type) {
  LoadedModel out;
  const std::string text = read_text_file(path);
  try {
    out.header = Json::parse(text.substr(0, text.find('\n')));
    if (out.header.at("format") != "attrsyn-model") throw ParseError(path.string() + ": not a model file");
    if (out.header.at("type") != expected_type) {
      throw ParseError(path.string() + ": expected a " + expected_type + " model, found " +
                       out.header["type"].get<std::string>());
    }
    Eigen::Index total = 0;
    for (const auto& b : out.header.at("blocks")) total += b.at("rows").get<Eigen::Index>() * b.at("cols").get<Eigen::Index>();
    const Eigen::MatrixXd flat =
        read_f32_sidecar(path.parent_path() / out.header.at("sidecar").get<std::string>(), 1, total);
    Eigen::Index at = 0;
    for (const auto& b : out.header.at("blocks")) {
      const auto rows = b.at("rows").get<Eigen::Index>();
      const auto cols = b.at("cols").get<Eigen::Index>();
      Eigen::MatrixXd m(rows, cols);
      for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = flat(0, at++);
      }
      out.blocks[b.at("name").get<std::string>()] = std::move(m);
    }
  } catch (const Json::exception& e) {
    throw ParseError(path.string() + ":1: " + e.what());
  }
  return out;
}

const Eigen::MatrixXd& block(const LoadedModel& m, const std::string& name) {
  auto it = m.blocks.find(name);
  if (it == m.blocks.end()) throw ParseError("model file lacks block " + name);
  return it->second;
}

}  // namespace

double lr_objective(const Eigen::MatrixXd& W, const Eigen::VectorXd& b, const Eigen::MatrixXd& X,
                    std::span<const int> y, double C) {
  check_shapes(W, b, X, y);
  if (!(C > 0)) throw PreconditionError("C must be positive");
  return 0.5 * W.squaredNorm() + C * cross_entropy_sum(affine(X, W, b), y);
}

LrGradient lr_gradient(const Eigen::MatrixXd& W, const Eigen::VectorXd& b, const Eigen::MatrixXd& X,
                       std::span<const int> y, double C) {
  check_shapes(W, b, X, y);
  const Eigen::MatrixXd R = softmax_residual(affine(X, W, b), y);
  LrGradient g;
  g.dW = W + C * (R.transpose() * X);
  g.db = C * R.colwise().sum().transpose();
  return g;
}

LrModel train_lr(const Eigen::MatrixXd& X, std::span<const int> y, int num_classes, const LrOptions& options) {
  check_training_data(X, y, num_classes);
  if (!(options.C > 0)) throw PreconditionError("C must be positive");
  if (options.max_iter < 1) throw PreconditionError("max_iter must be >= 1");
  const Eigen::Index K = num_classes;
  const Eigen::Index D = X.cols();
  const LrProblem problem{X, y, options.C, K, D};

  Eigen::VectorXd theta = Eigen::VectorXd::Zero(K * D + K);
  double f = 0;
  Eigen::VectorXd g = problem.gradient(theta, &f);
  std::deque<std::pair<Eigen::VectorXd, Eigen::VectorXd>> memory;  // (s, y)
  int iter = 0;
  bool converged = g.norm() <= options.tol;

  while (!converged && iter < options.max_iter) {
    ++iter;
    // two-loop recursion
    Eigen::VectorXd q = g;
    std::vector<double> alpha(memory.size());
    for (std::size_t i = memory.size(); i-- > 0;) {
      const auto& [s, yv] = memory[i];
      alpha[i] = s.dot(q) / yv.dot(s);
      q -= alpha[i] * yv;
    }
    double gamma = 1.0;
    if (!memory.empty()) {
      const auto& [s, yv] = memory.back();
      gamma = s.dot(yv) / yv.squaredNorm();
    } else {
      gamma = 1.0 / std::max(1.0, g.norm());
    }
    Eigen::VectorXd d = gamma * q;
    for (std::size_t i = 0; i < memory.size(); ++i) {
      const auto& [s, yv] = memory[i];
      const double beta = yv.dot(d) / yv.dot(s);
      d += (alpha[i] - beta) * s;
    }
    d = -d;
    double slope = g.dot(d);
    if (!(slope < 0)) {
      memory.clear();
      d = -g / std::max(1.0, g.norm());
      slope = g.dot(d);
    }

    double step = 1.0;
    Eigen::VectorXd next;
    double f_next = 0;
    bool accepted = false;
    for (int tries = 0; tries < 60; ++tries) {
      next = theta + step * d;
      f_next = problem.value(next);
      if (std::isfinite(f_next) && f_next <= f + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      if (memory.empty()) break;  // no descent possible at working precision
      memory.clear();
      continue;
    }
    double f_new = 0;
    const Eigen::VectorXd g_new = problem.gradient(next, &f_new);
    Eigen::VectorXd s = next - theta;
    Eigen::VectorXd yv = g_new - g;
    if (s.dot(yv) > 1e-12 * yv.squaredNorm()) {
      memory.emplace_back(std::move(s), std::move(yv));
      if (static_cast<int>(memory.size()) > options.history) memory.pop_front();
    }
    theta = next;
    f = f_new;
    g = g_new;
    converged = g.norm() <= options.tol;
  }

  LrModel model;
  model.W = problem.W(theta);
  model.b = problem.b(theta);
  model.C = options.C;
  model.meta.iterations_used = iter;
  model.meta.final_grad_norm = g.norm();
  model.meta.final_objective = f;
  model.meta.converged = converged;
  return model;
}

MlpModel init_mlp(int dim, int num_classes, const MlpOptions& options) {
  if (dim <= 0) throw PreconditionError("feature dim must be positive");
  if (options.hidden <= 0) throw PreconditionError("hidden must be positive");
  if (num_classes < 2) throw PreconditionError("need at least 2 classes");
  CounterRng rng(combine_keys({options.seed, 0x696e6974ULL}));
  auto fill = [&](Eigen::MatrixXd& m, int fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = rng.uniform(-bound, bound);
    }
  };
  MlpModel m;
  m.hyper = options;
  m.W1.resize(options.hidden, dim);
  Eigen::MatrixXd b1(options.hidden, 1);
  m.W2.resize(num_classes, options.hidden);
  Eigen::MatrixXd b2(num_classes, 1);
  fill(m.W1, dim);
  fill(b1, dim);
  fill(m.W2, options.hidden);
  fill(b2, options.hidden);
  m.b1 = b1.col(0);
  m.b2 = b2.col(0);
  return m;
}

double mlp_loss(const MlpModel& model, const Eigen::MatrixXd& X, std::span<const int> y) {
  if (X.cols() != model.dim()) throw PreconditionError("dim mismatch");
  const Eigen::MatrixXd Z1 = affine(X, model.W1, model.b1);
  const Eigen::MatrixXd A = Z1.cwiseMax(0.0);
  return cross_entropy_sum(affine(A, model.W2, model.b2), y) / static_cast<double>(X.rows());
}

MlpGradients mlp_gradients(const MlpModel& model, const Eigen::MatrixXd& X, std::span<const int> y) {
  if (X.cols() != model.dim()) throw PreconditionError("dim mismatch");
  if (static_cast<Eigen::Index>(y.size()) != X.rows() || X.rows() == 0) {
    throw PreconditionError("labels do not match sample count");
  }
  if (!X.allFinite()) throw PreconditionError("non-finite input");
  for (int label : y) {
    if (label < 0 || label >= model.num_classes()) throw PreconditionError("label out of range");
  }
  const Eigen::MatrixXd Z1 = affine(X, model.W1, model.b1);
  const Eigen::MatrixXd A = Z1.cwiseMax(0.0);
  const Eigen::MatrixXd G2 = softmax_residual(affine(A, model.W2, model.b2), y) / static_cast<double>(X.rows());
  MlpGradients g;
  g.dW2 = G2.transpose() * A;
  g.db2 = G2.colwise().sum().transpose();
  const Eigen::MatrixXd G1 = ((G2 * model.W2).array() * (Z1.array() > 0.0).cast<double>()).matrix();
  g.dW1 = G1.transpose() * X;
  g.db1 = G1.colwise().sum().transpose();
  return g;
}

MlpModel train_mlp(const Eigen::MatrixXd& X, std::span<const int> y, int num_classes, const MlpOptions& options) {
  check_training_data(X, y, num_classes);
  if (options.max_iter < 1) throw PreconditionError("max_iter must be >= 1");
  if (!(options.lr > 0)) throw PreconditionError("lr must be positive");
  MlpModel model = init_mlp(static_cast<int>(X.cols()), num_classes, options);
  const std::size_t n = static_cast<std::size_t>(X.rows());
  const std::size_t batch =
      options.batch_size > 0 ? static_cast<std::size_t>(options.batch_size) : std::min<std::size_t>(200, n);

  MlpGradients m{Eigen::MatrixXd::Zero(model.W1.rows(), model.W1.cols()), Eigen::VectorXd::Zero(model.b1.size()),
                 Eigen::MatrixXd::Zero(model.W2.rows(), model.W2.cols()), Eigen::VectorXd::Zero(model.b2.size())};
  MlpGradients v = m;
  std::int64_t t = 0;
  std::vector<std::size_t> order(n);
  std::vector<int> yb;

  auto adam = [&](auto& param, auto& mom, auto& var, const auto& grad, double c1, double c2) {
    mom = options.beta1 * mom + (1 - options.beta1) * grad;
    var = options.beta2 * var + (1 - options.beta2) * grad.cwiseProduct(grad);
    param.array() -= options.lr * (mom.array() / c1) / ((var.array() / c2).sqrt() + options.epsilon);
  };

  for (int epoch = 0; epoch < options.max_iter; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    CounterRng rng(combine_keys({options.seed, 0x73687566ULL, static_cast<std::uint64_t>(epoch)}));
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.uniform_below(i)]);
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t count = std::min(batch, n - start);
      const std::span<const std::size_t> rows(order.data() + start, count);
      const Eigen::MatrixXd Xb = gather_rows(X, rows);
      yb.resize(count);
      for (std::size_t i = 0; i < count; ++i) yb[i] = y[rows[i]];
      const MlpGradients g = mlp_gradients(model, Xb, yb);
      ++t;
      const double c1 = 1 - std::pow(options.beta1, static_cast<double>(t));
      const double c2 = 1 - std::pow(options.beta2, static_cast<double>(t));
      adam(model.W1, m.dW1, v.dW1, g.dW1, c1, c2);
      adam(model.b1, m.db1, v.db1, g.db1, c1, c2);
      adam(model.W2, m.dW2, v.dW2, g.dW2, c1, c2);
      adam(model.b2, m.db2, v.db2, g.db2, c1, c2);
    }
  }
  if (!model.W1.allFinite() || !model.W2.allFinite()) throw Error("MLP training diverged");
  model.meta.iterations_used = options.max_iter;
  model.meta.final_objective = mlp_loss(model, X, y);
  model.meta.final_grad_norm = mlp_gradients(model, X, y).norm();
  model.meta.converged = false;
  return model;
}

Eigen::MatrixXd logits(const LrModel& model, const Eigen::MatrixXd& X) {
  if (X.cols() != model.dim()) {
    throw PreconditionError("feature dim " + std::to_string(X.cols()) + " does not match model dim " +
                            std::to_string(model.dim()));
  }
  return affine(X, model.W, model.b);
}

Eigen::MatrixXd logits(const MlpModel& model, const Eigen::MatrixXd& X) {
  if (X.cols() != model.dim()) {
    throw PreconditionError("feature dim " + std::to_string(X.cols()) + " does not match model dim " +
                            std::to_string(model.dim()));
  }
  return affine(affine(X, model.W1, model.b1).cwiseMax(0.0), model.W2, model.b2);
}

Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& Z) {
  Eigen::MatrixXd P(Z.rows(), Z.cols());
  for (Eigen::Index i = 0; i < Z.rows(); ++i) {
    const double m = Z.row(i).maxCoeff();
    P.row(i) = (Z.row(i).array() - m).exp();
    P.row(i) /= P.row(i).sum();
  }
  return P;
}

std::vector<int> argmax_rows(const Eigen::MatrixXd& scores) {
  std::vector<int> out(static_cast<std::size_t>(scores.rows()));
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < scores.cols(); ++c) {
      if (scores(i, c) > scores(i, best)) best = c;
    }
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

void save_model(const LrModel& model, const fs::path& path) {
  Json header = Json::object();
  header["format"] = "attrsyn-model";
  header["type"] = "lr";
  header["num_classes"] = model.num_classes();
  header["dim"] = model.dim();
  header["C"] = model.C;
  header["meta"] = meta_to_json(model.meta);
  const Eigen::MatrixXd b = model.b;
  write_model(path, std::move(header), {{"W", &model.W}, {"b", &b}});
}

void save_model(const MlpModel& model, const fs::path& path) {
  Json header = Json::object();
  header["format"] = "attrsyn-model";
  header["type"] = "mlp";
  header["num_classes"] = model.num_classes();
  header["dim"] = model.dim();
  Json hyper = Json::object();
  hyper["hidden"] = model.hyper.hidden;
  hyper["lr"] = model.hyper.lr;
  hyper["max_iter"] = model.hyper.max_iter;
  hyper["seed"] = model.hyper.seed;
  hyper["batch_size"] = model.hyper.batch_size;
  hyper["beta1"] = model.hyper.beta1;
  hyper["beta2"] = model.hyper.beta2;
  hyper["epsilon"] = model.hyper.epsilon;
  header["hyper"] = hyper;
  header["meta"] = meta_to_json(model.meta);
  const Eigen::MatrixXd b1 = model.b1;
  const Eigen::MatrixXd b2 = model.b2;
  write_model(path, std::move(header), {{"W1", &model.W1}, {"b1", &b1}, {"W2", &model.W2}, {"b2", &b2}});
}

LrModel load_lr_model(const fs::path& path) {
  const auto loaded = read_model(path, "lr");
  LrModel m;
  m.W = block(loaded, "W");
  m.b = block(loaded, "b").col(0);
  m.C = loaded.header.at("C").get<double>();
  m.meta = meta_from_json(loaded.header.at("meta"));
  return m;
}

MlpModel load_mlp_model(const fs::path& path) {
  const auto loaded = read_model(path, "mlp");
  MlpModel m;
  m.W1 = block(loaded, "W1");
  m.b1 = block(loaded, "b1").col(0);
  m.W2 = block(loaded, "W2");
  m.b2 = block(loaded, "b2").col(0);
  const auto& h = loaded.header.at("hyper");
  m.hyper.hidden = h.at("hidden").get<int>();
  m.hyper.lr = h.at("lr").get<double>();
  m.hyper.max_iter = h.at("max_iter").get<int>();
  m.hyper.seed = h.at("seed").get<std::uint64_t>();
  m.hyper.batch_size = h.at("batch_size").get<int>();
  m.hyper.beta1 = h.at("beta1").get<double>();
  m.hyper.beta2 = h.at("beta2").get<double>();
  m.hyper.epsilon = h.at("epsilon").get<double>();
  m.meta = meta_from_json(loaded.header.at("meta"));
  return m;
}

std::string model_type(const fs::path& path) {
  const std::string text = read_text_file(path);
  try {
    const auto header = Json::parse(text.substr(0, text.find('\n')));
    if (header.at("format") != "attrsyn-model") throw ParseError(path.string() + ": not a model file");
    return header.at("type").get<std::string>();
  } catch (const Json::exception& e) {
    throw ParseError(path.string() + ":1: " + e.what());
  }
}

}  // namespace attrsyn
