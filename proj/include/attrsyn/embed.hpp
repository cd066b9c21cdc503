// Copyright 2026 The AttrSyn Authors.
// SPDX-License-Identifier: Apache-2.0

// Image/text embeddings and the feature matrices built from them.

#pragma once

#include <Eigen/Dense>

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "attrsyn/dispatch.hpp"
#include "attrsyn/schema.hpp"

namespace attrsyn {

class EmbeddingBackend {
 public:
  virtual ~EmbeddingBackend() = default;
  virtual std::vector<double> embed_image(std::span<const std::uint8_t> image) = 0;
  virtual std::vector<double> embed_text(const std::string& text) = 0;
  virtual std::string backbone_id() const = 0;
  virtual int dim() = 0;
};

// Deterministic stand-in for a CLIP-style encoder. Each class c has a fixed
// unit mean mu_c; images produced by MockImageBackend map to
// mu_c + noise * eps, where the class is recovered from the prompt stored in
// the PNG and eps is the image's keyed normal vector. Text maps to mu_c
// exactly when it names a class.
class MockEmbedder : public EmbeddingBackend {
 public:
  MockEmbedder(std::string backbone_id, int dim, std::vector<std::string> class_names, double noise = 0.05,
               std::uint64_t seed = 42);

  std::vector<double> embed_image(std::span<const std::uint8_t> image) override;
  std::vector<double> embed_text(const std::string& text) override;
  std::string backbone_id() const override { return backbone_id_; }
  int dim() override { return dim_; }

  const std::vector<double>& class_mean(int class_id) const;
  // Earliest class name occurring in text on word boundaries, longest on ties.
  std::optional<int> match_class(const std::string& text) const;
  std::uint64_t calls() const { return calls_; }

 private:
  std::string backbone_id_;
  int dim_;
  std::vector<std::string> class_names_;
  double noise_;
  std::vector<std::vector<double>> means_;
  std::atomic<std::uint64_t> calls_{0};
};

struct EmbeddingMatrix {
  std::string backbone_id;
  std::vector<std::string> row_ids;
  Eigen::MatrixXd data;  // rows x dim
  std::optional<std::vector<int>> labels;

  Eigen::Index rows() const { return data.rows(); }
  Eigen::Index dim() const { return data.cols(); }
  void validate() const;
};

EmbeddingMatrix select_rows(const EmbeddingMatrix& m, std::span<const std::size_t> rows);

// Embeddings keyed by (backbone, sha256 of the image). Lets repeated runs and
// ablation scales reuse work.
class EmbeddingCache {
 public:
  EmbeddingCache() = default;
  EmbeddingCache(EmbeddingCache&& other) noexcept : entries_(std::move(other.entries_)) {}

  std::optional<std::vector<double>> find(const std::string& backbone_id, const std::string& image_digest) const;
  void insert(const std::string& backbone_id, const std::string& image_digest, std::vector<double> v);
  std::size_t size() const;

  // JSON Lines: {"backbone_id","image_sha256","vector"}.
  void save(const std::filesystem::path& path) const;
  static EmbeddingCache load(const std::filesystem::path& path);

 private:
  mutable std::mutex mutex_;
  std::map<std::pair<std::string, std::string>, std::vector<double>> entries_;
};

struct EmbedFailure {
  std::string record_id;
  std::string message;
};

struct EmbedResult {
  EmbeddingMatrix matrix;
  std::vector<EmbedFailure> failures;
  std::uint64_t backend_calls = 0;
};

// One row per record in manifest order, labels from class_id. image_ref is
// resolved against `image_root`. Components are rounded to float32 so the
// matrix survives save/load exactly. Per-image backend failures exclude the
// row and are reported; a wrong dimension is a hard error.
EmbedResult embed_manifest(const std::vector<GenerationRecord>& records, const std::filesystem::path& image_root,
                           EmbeddingBackend& backend, int parallelism, EmbeddingCache* cache = nullptr);

inline constexpr const char* kClassTextTemplate = "a {domain} of a {class}";

std::string instantiate_template(const std::string& text_template, const DatasetSpec& dataset,
                                 const ClassLabel& class_label);

// Rows are classes in id order. The template must contain {domain} and {class}.
EmbeddingMatrix embed_class_texts(const DatasetSpec& dataset, const std::string& text_template,
                                  EmbeddingBackend& backend);

// Throws PreconditionError naming the first zero row.
EmbeddingMatrix l2_normalize_rows(const EmbeddingMatrix& m);

// Header line, one {"row_id","label"} line per row, and `path`.f32 holding
// the little-endian float32 data row-major.
void save_matrix(const EmbeddingMatrix& m, const std::filesystem::path& path);
EmbeddingMatrix load_matrix(const std::filesystem::path& path);

void write_f32_sidecar(const Eigen::MatrixXd& data, const std::filesystem::path& path);
Eigen::MatrixXd read_f32_sidecar(const std::filesystem::path& path, Eigen::Index rows, Eigen::Index cols);

// Stand-in for a real test set: per_class images per class rendered by the
// image backend from "a {domain} of a {class}, test sample {r}" and embedded.
EmbeddingMatrix build_mock_test_set(const DatasetSpec& dataset, int per_class, ImageGenBackend& images,
                                    EmbeddingBackend& embedder, std::uint64_t seed);

}  // namespace attrsyn
