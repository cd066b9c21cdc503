// Copyright 2026 The AttrSyn Authors.
// SPDX-License-Identifier: Apache-2.0

#include "attrsyn/embed.hpp"

#include <bit>
#include <cctype>
#include <cmath>
#include <sstream>

#include "attrsyn/digest.hpp"
#include "attrsyn/error.hpp"
#include "attrsyn/io.hpp"
#include "attrsyn/parallel.hpp"
#include "attrsyn/png.hpp"
#include "attrsyn/rng.hpp"

namespace fs = std::filesystem;

namespace attrsyn {
namespace {

bool word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

std::vector<double> to_float_precision(std::vector<double> v) {
  for (auto& x : v) x = static_cast<double>(static_cast<float>(x));
  return v;
}

void check_vector(const std::vector<double>& v, int dim, const std::string& what) {
  if (static_cast<int>(v.size()) != dim) {
    throw PreconditionError("embedding dim mismatch for " + what + ": got " + std::to_string(v.size()) +
                            ", backend reports " + std::to_string(dim));
  }
}

std::uint64_t parse_hex(const std::string& s) {
  std::size_t used = 0;
  const auto v = std::stoull(s, &used, 16);
  if (used != s.size()) throw ParseError("bad hex key: " + s);
  return v;
}

}  // namespace

MockEmbedder::MockEmbedder(std::string backbone_id, int dim, std::vector<std::string> class_names, double noise,
                           std::uint64_t seed)
    : backbone_id_(std::move(backbone_id)), dim_(dim), class_names_(std::move(class_names)), noise_(noise) {
  if (dim_ <= 0) throw PreconditionError("mock embedder dim must be positive");
  if (class_names_.empty()) throw PreconditionError("mock embedder needs class names");
  for (std::size_t c = 0; c < class_names_.size(); ++c) {
    CounterRng rng(combine_keys({seed, hash64(backbone_id_), static_cast<std::uint64_t>(c)}));
    std::vector<double> mu(static_cast<std::size_t>(dim_));
    double norm = 0;
    for (auto& x : mu) {
      x = rng.normal();
      norm += x * x;
    }
    norm = std::sqrt(norm);
    for (auto& x : mu) x /= norm;
    means_.push_back(std::move(mu));
  }
}

const std::vector<double>& MockEmbedder::class_mean(int class_id) const {
  if (class_id < 0 || static_cast<std::size_t>(class_id) >= means_.size()) {
    throw PreconditionError("no mock class " + std::to_string(class_id));
  }
  return means_[static_cast<std::size_t>(class_id)];
}

std::optional<int> MockEmbedder::match_class(const std::string& text) const {
  std::optional<int> best;
  std::size_t best_pos = std::string::npos;
  std::size_t best_len = 0;
  for (std::size_t c = 0; c < class_names_.size(); ++c) {
    const auto& name = class_names_[c];
    if (name.empty()) continue;
    for (std::size_t pos = text.find(name); pos != std::string::npos; pos = text.find(name, pos + 1)) {
      const bool left = pos == 0 || !word_char(text[pos - 1]);
      const std::size_t end = pos + name.size();
      const bool right = end == text.size() || !word_char(text[end]);
      if (!left || !right) continue;
      if (pos < best_pos || (pos == best_pos && name.size() > best_len)) {
        best = static_cast<int>(c);
        best_pos = pos;
        best_len = name.size();
      }
      break;
    }
  }
  return best;
}

std::vector<double> MockEmbedder::embed_image(std::span<const std::uint8_t> image) {
  ++calls_;
  PngImage png;
  try {
    png = decode_png(image);
  } catch (const ParseError& e) {
    throw BackendError(std::string("mock embedder cannot read image: ") + e.what());
  }
  auto prompt = png.text.find(MockImageBackend::kPromptKey);
  auto key = png.text.find(MockImageBackend::kSeedKey);
  if (prompt == png.text.end() || key == png.text.end()) {
    throw BackendError("mock embedder: image carries no mock prompt");
  }
  const auto c = match_class(prompt->second);
  if (!c) throw BackendError("mock embedder: no class name in prompt \"" + prompt->second + "\"");
  auto v = MockImageBackend::keyed_vector(parse_hex(key->second), static_cast<std::size_t>(dim_));
  const auto& mu = means_[static_cast<std::size_t>(*c)];
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = mu[i] + noise_ * v[i];
  return v;
}

std::vector<double> MockEmbedder::embed_text(const std::string& text) {
  ++calls_;
  if (const auto c = match_class(text)) return means_[static_cast<std::size_t>(*c)];
  auto v = MockImageBackend::keyed_vector(hash64(text), static_cast<std::size_t>(dim_));
  return v;
}

void EmbeddingMatrix::validate() const {
  if (static_cast<Eigen::Index>(row_ids.size()) != data.rows()) {
    throw PreconditionError("row_ids do not match matrix rows");
  }
  if (labels && static_cast<Eigen::Index>(labels->size()) != data.rows()) {
    throw PreconditionError("labels do not match matrix rows");
  }
  if (!data.allFinite()) throw PreconditionError("matrix has non-finite entries");
}

EmbeddingMatrix select_rows(const EmbeddingMatrix& m, std::span<const std::size_t> rows) {
  EmbeddingMatrix out;
  out.backbone_id = m.backbone_id;
  out.data.resize(static_cast<Eigen::Index>(rows.size()), m.dim());
  if (m.labels) out.labels.emplace();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto r = rows[i];
    if (static_cast<Eigen::Index>(r) >= m.rows()) throw PreconditionError("row index out of range");
    out.row_ids.push_back(m.row_ids[r]);
    out.data.row(static_cast<Eigen::Index>(i)) = m.data.row(static_cast<Eigen::Index>(r));
    if (m.labels) out.labels->push_back((*m.labels)[r]);
  }
  return out;
}

std::optional<std::vector<double>> EmbeddingCache::find(const std::string& backbone_id,
                                                        const std::string& image_digest) const {
  std::lock_guard lock(mutex_);
  auto it = entries_.find({backbone_id, image_digest});
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

void EmbeddingCache::insert(const std::string& backbone_id, const std::string& image_digest, std::vector<double> v) {
  std::lock_guard lock(mutex_);
  entries_[{backbone_id, image_digest}] = std::move(v);
}

std::size_t EmbeddingCache::size() const {
  std::lock_guard lock(mutex_);
  return entries_.size();
}

void EmbeddingCache::save(const fs::path& path) const {
  std::lock_guard lock(mutex_);
  std::string out;
  for (const auto& [key, v] : entries_) {
    Json line = Json::object();
    line["backbone_id"] = key.first;
    line["image_sha256"] = key.second;
    line["vector"] = v;
    out += line.dump();
    out += '\n';
  }
  write_file_atomic(path, out);
}

EmbeddingCache EmbeddingCache::load(const fs::path& path) {
  EmbeddingCache cache;
  std::istringstream in(read_text_file(path));
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      const auto j = Json::parse(line);
      cache.entries_[{j.at("backbone_id").get<std::string>(), j.at("image_sha256").get<std::string>()}] =
          j.at("vector").get<std::vector<double>>();
    } catch (const Json::exception& e) {
      throw ParseError(path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return cache;
}

EmbedResult embed_manifest(const std::vector<GenerationRecord>& records, const fs::path& image_root,
                           EmbeddingBackend& backend, int parallelism, EmbeddingCache* cache) {
  for (const auto& r : records) {
    if (r.status != RecordStatus::done || !r.image_ref) {
      throw PreconditionError("record " + r.record_id + " is not done (status " + to_string(r.status) + ")");
    }
  }
  const int dim = backend.dim();
  if (dim <= 0) throw BackendError("backend reports non-positive dim");
  const std::string backbone = backend.backbone_id();

  std::vector<std::optional<std::vector<double>>> rows(records.size());
  std::vector<std::string> errors(records.size());
  std::atomic<std::uint64_t> calls{0};
  parallel_for(records.size(), parallelism, [&](std::size_t i) {
    const auto& r = records[i];
    const auto bytes = read_binary_file(image_root / *r.image_ref);
    std::string digest;
    if (cache != nullptr) {
      digest = sha256_hex(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
      if (auto hit = cache->find(backbone, digest)) {
        rows[i] = std::move(*hit);
        return;
      }
    }
    try {
      ++calls;
      auto v = backend.embed_image(bytes);
      check_vector(v, dim, r.record_id);
      if (!std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); })) {
        throw BackendError("non-finite embedding");
      }
      v = to_float_precision(std::move(v));
      if (cache != nullptr) cache->insert(backbone, digest, v);
      rows[i] = std::move(v);
    } catch (const BackendError& e) {
      errors[i] = e.what();
    }
  });

  EmbedResult result;
  result.backend_calls = calls;
  result.matrix.backbone_id = backbone;
  std::size_t kept = 0;
  for (const auto& row : rows) kept += row.has_value();
  result.matrix.data.resize(static_cast<Eigen::Index>(kept), dim);
  result.matrix.labels.emplace();
  Eigen::Index at = 0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!rows[i]) {
      result.failures.push_back({records[i].record_id, errors[i]});
      continue;
    }
    result.matrix.row_ids.push_back(records[i].record_id);
    result.matrix.labels->push_back(records[i].class_id);
    result.matrix.data.row(at++) = Eigen::Map<const Eigen::RowVectorXd>(rows[i]->data(), dim);
  }
  return result;
}

std::string instantiate_template(const std::string& text_template, const DatasetSpec& dataset,
                                 const ClassLabel& class_label) {
  if (text_template.find("{domain}") == std::string::npos || text_template.find("{class}") == std::string::npos) {
    throw PreconditionError("template must contain {domain} and {class}: \"" + text_template + "\"");
  }
  std::string out;
  for (std::size_t i = 0; i < text_template.size();) {
    if (text_template.compare(i, 8, "{domain}") == 0) {
      out += dataset.domain_name;
      i += 8;
    } else if (text_template.compare(i, 7, "{class}") == 0) {
      out += class_label.name;
      i += 7;
    } else {
      out += text_template[i++];
    }
  }
  return out;
}

EmbeddingMatrix embed_class_texts(const DatasetSpec& dataset, const std::string& text_template,
                                  EmbeddingBackend& backend) {
  instantiate_template(text_template, dataset, dataset.classes.at(0));
  const int dim = backend.dim();
  EmbeddingMatrix m;
  m.backbone_id = backend.backbone_id();
  m.data.resize(static_cast<Eigen::Index>(dataset.classes.size()), dim);
  m.labels.emplace();
  for (const auto& label : dataset.classes) {
    const std::string text = instantiate_template(text_template, dataset, label);
    auto v = to_float_precision(backend.embed_text(text));
    check_vector(v, dim, "class text \"" + text + "\"");
    m.row_ids.push_back("class-" + std::to_string(label.id));
    m.labels->push_back(label.id);
    m.data.row(label.id) = Eigen::Map<const Eigen::RowVectorXd>(v.data(), dim);
  }
  return m;
}

EmbeddingMatrix l2_normalize_rows(const EmbeddingMatrix& m) {
  EmbeddingMatrix out = m;
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    const double norm = out.data.row(r).norm();
    if (!(norm > 0.0) || !std::isfinite(norm)) {
      const std::string id = static_cast<std::size_t>(r) < m.row_ids.size() ? m.row_ids[static_cast<std::size_t>(r)]
                                                                              : std::to_string(r);
      throw PreconditionError("cannot normalize zero row " + id);
    }
    out.data.row(r) /= norm;
  }
  return out;
}

void write_f32_sidecar(const Eigen::MatrixXd& data, const fs::path& path) {
  std::vector<std::uint8_t> bytes;
  bytes.reserve(static_cast<std::size_t>(data.size()) * 4);
  for (Eigen::Index r = 0; r < data.rows(); ++r) {
    for (Eigen::Index c = 0; c < data.cols(); ++c) {
      const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(data(r, c)));
      for (int s = 0; s < 32; s += 8) bytes.push_back(static_cast<std::uint8_t>(bits >> s));
    }
  }
  write_file_atomic(path, std::span<const std::uint8_t>(bytes));
}

Eigen::MatrixXd read_f32_sidecar(const fs::path& path, Eigen::Index rows, Eigen::Index cols) {
  const auto bytes = read_binary_file(path);
  if (bytes.size() != static_cast<std::size_t>(rows * cols) * 4) {
    throw ParseError(path.string() + ": expected " + std::to_string(rows * cols * 4) + " bytes, found " +
                     std::to_string(bytes.size()));
  }
  Eigen::MatrixXd data(rows, cols);
  std::size_t at = 0;
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) {
      std::uint32_t bits = 0;
      for (int s = 0; s < 32; s += 8) bits |= std::uint32_t{bytes[at++]} << s;
      data(r, c) = std::bit_cast<float>(bits);
    }
  }
  return data;
}

void save_matrix(const EmbeddingMatrix& m, const fs::path& path) {
  m.validate();
  const fs::path sidecar = fs::path(path.string() + ".f32");
  Json header = Json::object();
  header["format"] = "attrsyn-matrix";
  header["backbone_id"] = m.backbone_id;
  header["rows"] = m.rows();
  header["dim"] = m.dim();
  header["has_labels"] = m.labels.has_value();
  header["sidecar"] = sidecar.filename().string();
  std::string out = header.dump() + "\n";
  for (std::size_t i = 0; i < m.row_ids.size(); ++i) {
    Json line = Json::object();
    line["row_id"] = m.row_ids[i];
    line["label"] = m.labels ? Json((*m.labels)[i]) : Json(nullptr);
    out += line.dump() + "\n";
  }
  write_f32_sidecar(m.data, sidecar);
  write_file_atomic(path, out);
}

EmbeddingMatrix load_matrix(const fs::path& path) {
  std::istringstream in(read_text_file(path));
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path.string() + ":1: missing header");
  EmbeddingMatrix m;
  Eigen::Index rows = 0;
  Eigen::Index dim = 0;
  std::string sidecar;
  try {
    const auto header = Json::parse(line);
    if (header.at("format") != "attrsyn-matrix") throw ParseError(path.string() + ":1: not a matrix file");
    m.backbone_id = header.at("backbone_id").get<std::string>();
    rows = header.at("rows").get<Eigen::Index>();
    dim = header.at("dim").get<Eigen::Index>();
    if (header.at("has_labels").get<bool>()) m.labels.emplace();
    sidecar = header.at("sidecar").get<std::string>();
  } catch (const Json::exception& e) {
    throw ParseError(path.string() + ":1: " + e.what());
  }
  int n = 1;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      const auto j = Json::parse(line);
      m.row_ids.push_back(j.at("row_id").get<std::string>());
      if (m.labels) m.labels->push_back(j.at("label").get<int>());
    } catch (const Json::exception& e) {
      throw ParseError(path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  if (static_cast<Eigen::Index>(m.row_ids.size()) != rows) {
    throw ParseError(path.string() + ": header declares " + std::to_string(rows) + " rows, found " +
                     std::to_string(m.row_ids.size()));
  }
  m.data = read_f32_sidecar(path.parent_path() / sidecar, rows, dim);
  return m;
}

EmbeddingMatrix build_mock_test_set(const DatasetSpec& dataset, int per_class, ImageGenBackend& images,
                                    EmbeddingBackend& embedder, std::uint64_t seed) {
  if (per_class < 1) throw PreconditionError("per_class must be >= 1");
  const int dim = embedder.dim();
  EmbeddingMatrix m;
  m.backbone_id = embedder.backbone_id();
  m.labels.emplace();
  m.data.resize(static_cast<Eigen::Index>(dataset.classes.size()) * per_class, dim);
  Eigen::Index at = 0;
  for (const auto& label : dataset.classes) {
    for (int r = 0; r < per_class; ++r) {
      const std::string prompt =
          instantiate_template(kClassTextTemplate, dataset, label) + ", test sample " + std::to_string(r);
      const auto bytes = images.generate(prompt, derive_seed(seed, label.id, std::nullopt, r), 5.0, 50);
      auto v = to_float_precision(embedder.embed_image(bytes));
      check_vector(v, dim, prompt);
      m.row_ids.push_back("test-" + std::to_string(label.id) + "-" + std::to_string(r));
      m.labels->push_back(label.id);
      m.data.row(at++) = Eigen::Map<const Eigen::RowVectorXd>(v.data(), dim);
    }
  }
  return m;
}

}  // namespace attrsyn
