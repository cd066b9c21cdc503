// Copyright 2026 The AttrSyn Authors.
// SPDX-License-Identifier: Apache-2.0

// Running generation plans against a text-to-image backend.

#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "attrsyn/forge.hpp"
#include "attrsyn/schema.hpp"

namespace attrsyn {

struct GenParams {
  double guidance_scale = 5.0;
  int steps = 50;

  void validate() const;
};

class ImageGenBackend {
 public:
  virtual ~ImageGenBackend() = default;
  // Must be deterministic in all four arguments. Throws BackendError.
  virtual std::vector<std::uint8_t> generate(const std::string& prompt, std::uint64_t seed, double guidance_scale,
                                             int steps) = 0;
  virtual std::string backend_id() const = 0;
};

// Hermetic backend: a small RGB PNG whose pixels come from a counter-based
// generator keyed on (prompt hash, seed, guidance, steps). The prompt and key
// are stored as PNG text so mock embedders can recover them.
class MockImageBackend : public ImageGenBackend {
 public:
  static constexpr const char* kPromptKey = "attrsyn:prompt";
  static constexpr const char* kSeedKey = "attrsyn:key";

  explicit MockImageBackend(std::string backend_id = "mock-image", int size = 16);

  std::vector<std::uint8_t> generate(const std::string& prompt, std::uint64_t seed, double guidance_scale,
                                     int steps) override;
  std::string backend_id() const override { return backend_id_; }

  // Every call whose prompt contains `needle` fails.
  void fail_prompts_containing(std::string needle);
  // The next `n` calls for `prompt` fail, later ones succeed.
  void fail_transiently(const std::string& prompt, int n);

  std::uint64_t calls() const { return calls_; }

  static std::uint64_t image_key(const std::string& prompt, std::uint64_t seed, double guidance_scale, int steps);
  // The raw keyed vector behind an image: n standard-normal draws.
  static std::vector<double> keyed_vector(std::uint64_t key, std::size_t n);

 private:
  std::string backend_id_;
  int size_;
  std::atomic<std::uint64_t> calls_{0};
  std::mutex mutex_;
  std::vector<std::string> failing_needles_;
  std::map<std::string, int> transient_;
};

// Stable hash of the four inputs; base-prompt entries use no config index.
std::uint64_t derive_seed(std::uint64_t plan_seed, int class_id, std::optional<std::uint64_t> config_index,
                          int replica_index);

// "{dataset}-{class_id}-{config_index|base}-{replica_index}"
std::string record_id_for(const std::string& dataset, const PlanEntry& entry);

// Pending records for every plan entry, prompts filled in. `accepted` and
// `pool` are only consulted for non-base entries. Throws PreconditionError if
// two entries derive the same seed.
std::vector<GenerationRecord> plan_to_records(const GenerationPlan& plan, const DatasetSpec& dataset,
                                              const std::vector<AttributeConcept>& accepted,
                                              const std::vector<AttributeValueSet>& pool, const GenParams& params,
                                              const std::string& backend_id);

struct RunOptions {
  int retries = 3;
  std::chrono::milliseconds backoff{200};  // doubled after each failed attempt
  std::function<void(const GenerationRecord&)> on_record;
};

struct RunReport {
  std::vector<GenerationRecord> records;  // sorted by record_id
  std::size_t done = 0;
  std::size_t failed = 0;
  std::size_t skipped = 0;  // already done before this run
  std::uint64_t backend_calls = 0;

  bool partial() const { return failed > 0; }
};

inline constexpr const char* kManifestName = "manifest.jsonl";

// Images go to out_dir/images/{record_id}.png; the manifest to
// out_dir/manifest.jsonl, appended as records finish and rewritten sorted by
// record_id at the end. Records already done in an existing manifest (with
// their image present) are skipped. Backend failures mark records failed;
// IoError aborts the run with the appended manifest intact.
RunReport run_plan(const std::vector<GenerationRecord>& records, ImageGenBackend& backend, const GenParams& params,
                   int parallelism, const std::filesystem::path& out_dir, const RunOptions& options = {});

struct PreviewBatch {
  std::string prompt;
  std::vector<std::string> image_refs;  // relative to the preview root's parent
};

// Generates k images (replicas 0..k-1) for one configuration into
// dir/preview/. Results are cached on disk, so repeated calls are free.
PreviewBatch preview(const ClassLabel& class_label, const std::vector<AttributeAssignment>& assignment, int k,
                     ImageGenBackend& backend, const GenParams& params, const std::filesystem::path& dir);

}  // namespace attrsyn
