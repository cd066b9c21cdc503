// Copyright 2026 The AttrSyn Authors.
// SPDX-License-Identifier: Apache-2.0

#include "attrsyn/eval.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "attrsyn/digest.hpp"
#include "attrsyn/error.hpp"
#include "attrsyn/io.hpp"

namespace fs = std::filesystem;

namespace attrsyn {
namespace {

long long basis_points(double accuracy) { return std::llround(accuracy * 10000.0); }

std::string format_percent(double accuracy) {
  const long long bp = basis_points(accuracy);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%lld.%02lld%%", bp / 100, bp % 100);
  return buf;
}

int label_rank(const EvalResult& r) {
  const int c = r.classifier ? static_cast<int>(*r.classifier) + 1 : 0;
  return static_cast<int>(r.method) * 3 + c;
}

const std::vector<int>& require_labels(const EmbeddingMatrix& m, const char* what) {
  if (!m.labels) throw PreconditionError(std::string(what) + " features carry no labels");
  return *m.labels;
}

void check_backbone(const EmbeddingMatrix& m, const std::string& backbone, const char* what) {
  if (!m.backbone_id.empty() && !backbone.empty() && m.backbone_id != backbone) {
    throw PreconditionError(std::string(what) + " features come from backbone " + m.backbone_id + ", expected " +
                            backbone);
  }
}

}  // namespace

const char* to_string(Method m) {
  switch (m) {
    case Method::zeroshot:
      return "zeroshot";
    case Method::base_prompt:
      return "base_prompt";
    case Method::attrsyn:
      return "attrsyn";
  }
  return "?";
}

const char* to_string(Classifier c) { return c == Classifier::lr ? "lr" : "mlp"; }

Method parse_method(std::string_view text) {
  if (text == "zeroshot") return Method::zeroshot;
  if (text == "base_prompt") return Method::base_prompt;
  if (text == "attrsyn") return Method::attrsyn;
  throw ParseError("unknown method: " + std::string(text));
}

Classifier parse_classifier(std::string_view text) {
  if (text == "lr") return Classifier::lr;
  if (text == "mlp") return Classifier::mlp;
  throw ParseError("unknown classifier: " + std::string(text));
}

std::string EvalResult::method_label() const {
  std::string out = to_string(method);
  if (classifier) out += std::string("+") + to_string(*classifier);
  return out;
}

void to_json(Json& j, const EvalResult& r) {
  j = Json::object();
  j["dataset"] = r.dataset;
  j["backbone_id"] = r.backbone_id;
  j["method"] = to_string(r.method);
  j["classifier"] = r.classifier ? Json(to_string(*r.classifier)) : Json(nullptr);
  j["accuracy"] = r.accuracy;
  Json per = Json::array();
  for (const auto& a : r.per_class_accuracy) per.push_back(a ? Json(*a) : Json(nullptr));
  j["per_class_accuracy"] = per;
  j["n_train"] = r.n_train;
  j["config_digest"] = r.config_digest;
  j["dataset_digest"] = r.dataset_digest;
}

void from_json(const Json& j, EvalResult& r) {
  for (const auto& [key, _] : j.items()) {
    static const std::vector<std::string> known{"dataset",  "backbone_id",        "method",
                                                "classifier", "accuracy",          "per_class_accuracy",
                                                "n_train",  "config_digest",      "dataset_digest"};
    if (std::find(known.begin(), known.end(), key) == known.end()) throw ParseError("eval result: unknown key " + key);
  }
  r.dataset = j.at("dataset").get<std::string>();
  r.backbone_id = j.at("backbone_id").get<std::string>();
  r.method = parse_method(j.at("method").get<std::string>());
  r.classifier.reset();
  if (!j.at("classifier").is_null()) r.classifier = parse_classifier(j.at("classifier").get<std::string>());
  r.accuracy = j.at("accuracy").get<double>();
  r.per_class_accuracy.clear();
  for (const auto& a : j.at("per_class_accuracy")) {
    r.per_class_accuracy.push_back(a.is_null() ? std::nullopt : std::optional<double>(a.get<double>()));
  }
  r.n_train = j.at("n_train").get<int>();
  r.config_digest = j.at("config_digest").get<std::string>();
  r.dataset_digest = j.at("dataset_digest").get<std::string>();
  if (!(r.accuracy >= 0 && r.accuracy <= 1)) throw ParseError("eval result: accuracy outside [0,1]");
}

void save_results(std::span<const EvalResult> results, const fs::path& path) {
  std::string out;
  for (const auto& r : results) out += Json(r).dump() + "\n";
  write_file_atomic(path, out);
}

std::vector<EvalResult> load_results(const fs::path& path) {
  std::vector<EvalResult> out;
  std::istringstream in(read_text_file(path));
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      out.push_back(Json::parse(line).get<EvalResult>());
    } catch (const Json::exception& e) {
      throw ParseError(path.string() + ":" + std::to_string(n) + ": " + e.what());
    } catch (const ParseError& e) {
      throw ParseError(path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

std::vector<int> zeroshot_predict(const EmbeddingMatrix& image_embs, const EmbeddingMatrix& class_text_embs) {
  if (image_embs.dim() != class_text_embs.dim()) {
    throw PreconditionError("image dim " + std::to_string(image_embs.dim()) + " does not match text dim " +
                            std::to_string(class_text_embs.dim()));
  }
  if (class_text_embs.rows() == 0) throw PreconditionError("no class text embeddings");
  const auto images = l2_normalize_rows(image_embs);
  const auto texts = l2_normalize_rows(class_text_embs);
  // Plain loops so every (image, class) pair sums in the same order; a GEMM
  // kernel can round identical text rows differently and break exact ties.
  const Eigen::Index dim = images.dim();
  Eigen::MatrixXd scores(images.rows(), texts.rows());
  for (Eigen::Index i = 0; i < images.rows(); ++i) {
    for (Eigen::Index c = 0; c < texts.rows(); ++c) {
      double s = 0;
      for (Eigen::Index d = 0; d < dim; ++d) s += images.data(i, d) * texts.data(c, d);
      scores(i, c) = s;
    }
  }
  return argmax_rows(scores);
}

AccuracyReport accuracy(std::span<const int> predictions, std::span<const int> labels, int num_classes) {
  if (predictions.size() != labels.size()) {
    throw PreconditionError("predictions and labels differ in length: " + std::to_string(predictions.size()) +
                            " vs " + std::to_string(labels.size()));
  }
  if (labels.empty()) throw PreconditionError("accuracy of an empty set");
  std::vector<int> hits(static_cast<std::size_t>(num_classes), 0), totals(static_cast<std::size_t>(num_classes), 0);
  int correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes) throw PreconditionError("label out of range");
    const bool ok = predictions[i] == labels[i];
    correct += ok;
    hits[static_cast<std::size_t>(labels[i])] += ok;
    totals[static_cast<std::size_t>(labels[i])] += 1;
  }
  AccuracyReport out;
  out.overall = static_cast<double>(correct) / static_cast<double>(labels.size());
  for (int c = 0; c < num_classes; ++c) {
    const auto t = totals[static_cast<std::size_t>(c)];
    out.per_class.push_back(t == 0 ? std::nullopt
                                   : std::optional<double>(static_cast<double>(hits[static_cast<std::size_t>(c)]) / t));
  }
  return out;
}

Json to_json(const ProbeConfig& c) {
  Json j = Json::object();
  j["lr"] = Json{{"C", c.lr.C}, {"max_iter", c.lr.max_iter}, {"tol", c.lr.tol},
                 {"seed", c.lr.seed}, {"history", c.lr.history}};
  j["mlp"] = Json{{"hidden", c.mlp.hidden},   {"lr", c.mlp.lr},       {"max_iter", c.mlp.max_iter},
                  {"seed", c.mlp.seed},       {"batch_size", c.mlp.batch_size}, {"beta1", c.mlp.beta1},
                  {"beta2", c.mlp.beta2},     {"epsilon", c.mlp.epsilon}};
  j["normalize_features"] = c.normalize_features;
  return j;
}

std::string matrix_digest(const EmbeddingMatrix& m) {
  Json head = Json::object();
  head["backbone_id"] = m.backbone_id;
  head["row_ids"] = m.row_ids;
  head["labels"] = m.labels ? Json(*m.labels) : Json(nullptr);
  head["rows"] = m.rows();
  head["dim"] = m.dim();
  std::string bytes = head.dump();
  bytes.reserve(bytes.size() + static_cast<std::size_t>(m.data.size()) * 8);
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.dim(); ++c) {
      const double v = m.data(r, c);
      const auto bits = std::bit_cast<std::uint64_t>(v);
      for (int b = 0; b < 8; ++b) bytes.push_back(static_cast<char>((bits >> (8 * b)) & 0xff));
    }
  }
  return sha256_hex(bytes);
}

std::string experiment_digest(const ExperimentSpec& spec) {
  Json j = Json::object();
  j["dataset_digest"] = dataset_digest(spec.dataset);
  j["backbone_id"] = spec.backbone_id;
  j["method"] = to_string(spec.method);
  j["classifier"] = spec.classifier ? Json(to_string(*spec.classifier)) : Json(nullptr);
  j["probe"] = to_json(spec.probe);
  j["train"] = spec.train ? Json(matrix_digest(*spec.train)) : Json(nullptr);
  j["class_texts"] = spec.class_texts ? Json(matrix_digest(*spec.class_texts)) : Json(nullptr);
  j["test"] = spec.test ? Json(matrix_digest(*spec.test)) : Json(nullptr);
  j["extra"] = spec.extra_config;
  return sha256_hex(j.dump());
}

EvalResult run_experiment(const ExperimentSpec& spec) {
  require_valid_dataset(spec.dataset);
  if (spec.test == nullptr) throw PreconditionError("experiment needs test features");
  const auto& test_labels = require_labels(*spec.test, "test");
  check_backbone(*spec.test, spec.backbone_id, "test");
  const int K = spec.dataset.num_classes();

  EvalResult result;
  result.dataset = spec.dataset.name;
  result.backbone_id = spec.backbone_id;
  result.method = spec.method;
  result.classifier = spec.classifier;
  result.dataset_digest = dataset_digest(spec.dataset);
  result.config_digest = experiment_digest(spec);

  std::vector<int> predictions;
  if (spec.method == Method::zeroshot) {
    if (spec.classifier) throw PreconditionError("zeroshot takes no classifier");
    if (spec.class_texts == nullptr) throw PreconditionError("zeroshot needs class text embeddings");
    check_backbone(*spec.class_texts, spec.backbone_id, "class text");
    if (spec.class_texts->rows() != K) {
      throw PreconditionError("expected " + std::to_string(K) + " class text rows, got " +
                              std::to_string(spec.class_texts->rows()));
    }
    predictions = zeroshot_predict(*spec.test, *spec.class_texts);
  } else {
    if (!spec.classifier) throw PreconditionError(std::string(to_string(spec.method)) + " needs a classifier");
    if (spec.train == nullptr) throw PreconditionError(std::string(to_string(spec.method)) + " needs training features");
    check_backbone(*spec.train, spec.backbone_id, "training");
    const auto& y = require_labels(*spec.train, "training");
    if (spec.train->dim() != spec.test->dim()) throw PreconditionError("training and test dims differ");
    const Eigen::MatrixXd Xtrain =
        spec.probe.normalize_features ? l2_normalize_rows(*spec.train).data : spec.train->data;
    const Eigen::MatrixXd Xtest = spec.probe.normalize_features ? l2_normalize_rows(*spec.test).data : spec.test->data;
    result.n_train = static_cast<int>(spec.train->rows());
    if (*spec.classifier == Classifier::lr) {
      const auto model = train_lr(Xtrain, y, K, spec.probe.lr);
      if (spec.model_out) save_model(model, *spec.model_out);
      predictions = predict(model, Xtest);
    } else {
      const auto model = train_mlp(Xtrain, y, K, spec.probe.mlp);
      if (spec.model_out) save_model(model, *spec.model_out);
      predictions = predict(model, Xtest);
    }
  }
  const auto acc = accuracy(predictions, test_labels, K);
  result.accuracy = acc.overall;
  result.per_class_accuracy = acc.per_class;
  return result;
}

GenerationPlan ablation_plan(const DatasetSpec& dataset, const std::vector<std::uint64_t>& configs_per_class,
                             int scale, std::uint64_t seed, bool allow_remainder) {
  const int n = dataset.num_classes();
  if (n == 0) throw PreconditionError("dataset has no classes");
  if (scale <= 0) throw PreconditionError("scale must be positive, got " + std::to_string(scale));
  if (!allow_remainder) {
    if (scale < n) {
      throw PreconditionError("scale " + std::to_string(scale) + " is below the class count " + std::to_string(n));
    }
    if (scale % n != 0) {
      throw PreconditionError("scale " + std::to_string(scale) + " is not a multiple of the class count " +
                              std::to_string(n));
    }
  }
  const int per_class = (scale + n - 1) / n;
  GenerationPlan plan = sample_plan(dataset, configs_per_class, per_class, seed);
  plan.entries.resize(static_cast<std::size_t>(scale));
  return plan;
}

std::vector<EvalResult> ablate_scale(const AblationSpec& spec) {
  if (spec.scales.empty()) throw PreconditionError("no scales given");
  if (!spec.features_for_plan) throw PreconditionError("ablation needs a feature source");
  // validate every scale before doing any work
  for (int s : spec.scales) ablation_plan(spec.dataset, spec.configs_per_class, s, spec.seed, spec.allow_remainder);
  std::vector<EvalResult> out;
  for (int s : spec.scales) {
    const auto plan = ablation_plan(spec.dataset, spec.configs_per_class, s, spec.seed, spec.allow_remainder);
    const EmbeddingMatrix features = spec.features_for_plan(plan);
    ExperimentSpec e;
    e.dataset = spec.dataset;
    e.backbone_id = spec.backbone_id;
    e.method = Method::attrsyn;
    e.classifier = spec.classifier;
    e.train = &features;
    e.test = spec.test;
    e.probe = spec.probe;
    e.extra_config = spec.extra_config;
    e.extra_config["scale"] = s;
    e.extra_config["plan_seed"] = spec.seed;
    e.extra_config["allow_remainder"] = spec.allow_remainder;
    out.push_back(run_experiment(e));
  }
  return out;
}

std::string format_delta(double accuracy, double baseline) {
  const long long d = basis_points(accuracy) - basis_points(baseline);
  const long long a = d < 0 ? -d : d;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%c%lld.%02lld%%", d < 0 ? '-' : '+', a / 100, a % 100);
  return buf;
}

void check_mergeable(std::span<const EvalResult> results) {
  std::map<std::string, std::string> seen;
  for (const auto& r : results) {
    auto [it, inserted] = seen.emplace(r.dataset, r.dataset_digest);
    if (!inserted && it->second != r.dataset_digest) {
      throw ConflictError("results for dataset " + r.dataset + " come from different dataset specs (" +
                          it->second.substr(0, 12) + " vs " + r.dataset_digest.substr(0, 12) + ")");
    }
  }
}

RenderedResults render_results(std::span<const EvalResult> results) {
  RenderedResults out;
  std::vector<std::string> backbones, datasets;
  for (const auto& r : results) {
    if (std::find(backbones.begin(), backbones.end(), r.backbone_id) == backbones.end()) {
      backbones.push_back(r.backbone_id);
    }
    if (std::find(datasets.begin(), datasets.end(), r.dataset) == datasets.end()) datasets.push_back(r.dataset);
  }

  std::ostringstream table;
  for (std::size_t g = 0; g < backbones.size(); ++g) {
    const auto& backbone = backbones[g];
    // label -> dataset -> shown result
    std::map<std::string, std::map<std::string, const EvalResult*>> cells;
    std::vector<std::pair<int, std::string>> labels;
    for (const auto& r : results) {
      if (r.backbone_id != backbone) continue;
      const auto label = r.method_label();
      if (!cells.count(label)) labels.emplace_back(label_rank(r), label);
      auto& slot = cells[label][r.dataset];
      if (slot == nullptr || r.n_train >= slot->n_train) slot = &r;
    }
    std::stable_sort(labels.begin(), labels.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });

    std::vector<std::vector<std::string>> rows;
    rows.push_back({"method"});
    rows[0].insert(rows[0].end(), datasets.begin(), datasets.end());
    for (const auto& [rank, label] : labels) {
      std::vector<std::string> row{label};
      for (const auto& ds : datasets) {
        auto it = cells[label].find(ds);
        if (it == cells[label].end()) {
          row.push_back("-");
          continue;
        }
        const EvalResult& r = *it->second;
        double best = -1;
        int entries = 0;
        const EvalResult* zeroshot = nullptr;
        for (const auto& [other_label, by_ds] : cells) {
          auto o = by_ds.find(ds);
          if (o == by_ds.end()) continue;
          ++entries;
          best = std::max(best, o->second->accuracy);
          if (o->second->method == Method::zeroshot) zeroshot = o->second;
        }
        std::string cell = format_percent(r.accuracy);
        if (entries > 1 && r.accuracy == best) cell += "*";
        if (zeroshot != nullptr && r.method != Method::zeroshot) {
          cell += " (" + format_delta(r.accuracy, zeroshot->accuracy) + ")";
        }
        row.push_back(cell);
      }
      rows.push_back(std::move(row));
    }

    std::vector<std::size_t> widths(rows[0].size(), 0);
    for (const auto& row : rows) {
      for (std::size_t c = 0; c < row.size(); ++c) widths[c] = std::max(widths[c], row[c].size());
    }
    if (g > 0) table << "\n";
    table << "backbone: " << backbone << "\n";
    for (const auto& row : rows) {
      std::string line;
      for (std::size_t c = 0; c < row.size(); ++c) {
        line += row[c];
        if (c + 1 < row.size()) line += std::string(widths[c] - row[c].size() + 2, ' ');
      }
      table << line << "\n";
    }
  }
  out.table = table.str();

  std::ostringstream tsv;
  tsv << "n_train\taccuracy\tmethod\tbackbone\n";
  for (const auto& r : results) {
    char acc[32];
    std::snprintf(acc, sizeof acc, "%.6f", r.accuracy);
    tsv << r.n_train << "\t" << acc << "\t" << r.method_label() << "\t" << r.backbone_id << "\n";
  }
  out.plot_tsv = tsv.str();
  return out;
}

}  // namespace attrsyn
