// Copyright 2026 The AttrSyn Authors.
// SPDX-License-Identifier: Apache-2.0

#include "attrsyn/dispatch.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <thread>
#include <unordered_map>
#include <unordered_set>

#include "attrsyn/digest.hpp"
#include "attrsyn/error.hpp"
#include "attrsyn/io.hpp"
#include "attrsyn/parallel.hpp"
#include "attrsyn/png.hpp"
#include "attrsyn/rng.hpp"

namespace fs = std::filesystem;

namespace attrsyn {
namespace {

constexpr std::uint64_t kBaseMarker = std::numeric_limits<std::uint64_t>::max();

std::string hex16(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// Serialized appends to the in-progress manifest.
class ManifestAppender {
 public:
  explicit ManifestAppender(const fs::path& path) : path_(path), out_(path, std::ios::binary | std::ios::app) {
    if (!out_) throw IoError("cannot open manifest for append: " + path.string());
  }

  void append(const GenerationRecord& record) {
    std::lock_guard lock(mutex_);
    out_ << serialize_manifest(std::span(&record, 1));
    out_.flush();
    if (!out_) throw IoError("write failed for " + path_.string() + " (disk full?)");
  }

 private:
  fs::path path_;
  std::ofstream out_;
  std::mutex mutex_;
};

}  // namespace

void GenParams::validate() const {
  if (!(guidance_scale > 0.0) || !std::isfinite(guidance_scale)) {
    throw PreconditionError("guidance_scale must be positive");
  }
  if (steps <= 0) throw PreconditionError("steps must be positive");
}

MockImageBackend::MockImageBackend(std::string backend_id, int size) : backend_id_(std::move(backend_id)), size_(size) {
  if (size_ <= 0) throw PreconditionError("mock image size must be positive");
}

std::uint64_t MockImageBackend::image_key(const std::string& prompt, std::uint64_t seed, double guidance_scale,
                                          int steps) {
  return combine_keys({hash64(prompt), seed, std::bit_cast<std::uint64_t>(guidance_scale),
                       static_cast<std::uint64_t>(steps)});
}

std::vector<double> MockImageBackend::keyed_vector(std::uint64_t key, std::size_t n) {
  CounterRng rng(key);
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal();
  return v;
}

void MockImageBackend::fail_prompts_containing(std::string needle) {
  std::lock_guard lock(mutex_);
  failing_needles_.push_back(std::move(needle));
}

void MockImageBackend::fail_transiently(const std::string& prompt, int n) {
  std::lock_guard lock(mutex_);
  transient_[prompt] = n;
}

std::vector<std::uint8_t> MockImageBackend::generate(const std::string& prompt, std::uint64_t seed,
                                                     double guidance_scale, int steps) {
  ++calls_;
  {
    std::lock_guard lock(mutex_);
    for (const auto& needle : failing_needles_) {
      if (prompt.find(needle) != std::string::npos) throw BackendError("mock backend refused prompt: " + prompt);
    }
    auto it = transient_.find(prompt);
    if (it != transient_.end() && it->second > 0) {
      --it->second;
      throw BackendError("mock backend transient failure");
    }
  }
  const std::uint64_t key = image_key(prompt, seed, guidance_scale, steps);
  PngImage image;
  image.width = size_;
  image.height = size_;
  image.channels = 3;
  image.pixels.resize(static_cast<std::size_t>(size_) * static_cast<std::size_t>(size_) * 3);
  CounterRng rng(key);
  for (auto& p : image.pixels) p = static_cast<std::uint8_t>(rng.next_u64() >> 56);
  image.text[kPromptKey] = prompt;
  image.text[kSeedKey] = hex16(key);
  return encode_png(image);
}

std::uint64_t derive_seed(std::uint64_t plan_seed, int class_id, std::optional<std::uint64_t> config_index,
                          int replica_index) {
  return combine_keys({plan_seed, static_cast<std::uint64_t>(class_id), config_index.value_or(kBaseMarker),
                       static_cast<std::uint64_t>(replica_index)});
}

std::string record_id_for(const std::string& dataset, const PlanEntry& entry) {
  return dataset + "-" + std::to_string(entry.class_id) + "-" +
         (entry.config_index ? std::to_string(*entry.config_index) : std::string("base")) + "-" +
         std::to_string(entry.replica_index);
}

std::vector<GenerationRecord> plan_to_records(const GenerationPlan& plan, const DatasetSpec& dataset,
                                              const std::vector<AttributeConcept>& accepted,
                                              const std::vector<AttributeValueSet>& pool, const GenParams& params,
                                              const std::string& backend_id) {
  params.validate();
  if (plan.dataset != dataset.name) {
    throw PreconditionError("plan is for dataset " + plan.dataset + ", not " + dataset.name);
  }
  std::unordered_map<int, std::vector<AttributeValueSet>> sets;
  std::vector<GenerationRecord> records;
  records.reserve(plan.entries.size());
  std::unordered_map<std::uint64_t, std::string> seeds;
  for (const auto& entry : plan.entries) {
    const ClassLabel& label = dataset.class_at(entry.class_id);
    GenerationRecord r;
    r.record_id = record_id_for(dataset.name, entry);
    r.class_id = entry.class_id;
    r.seed = derive_seed(plan.seed, entry.class_id, entry.config_index, entry.replica_index);
    r.guidance_scale = params.guidance_scale;
    r.steps = params.steps;
    r.backend_id = backend_id;
    if (entry.config_index) {
      auto it = sets.find(entry.class_id);
      if (it == sets.end()) it = sets.emplace(entry.class_id, value_sets_for_class(accepted, pool, entry.class_id)).first;
      r.config = config_at(entry.class_id, it->second, *entry.config_index);
      r.prompt_text = assemble_prompt(label, *r.config);
    } else {
      r.prompt_text = base_prompt(label, dataset);
    }
    auto [pos, fresh] = seeds.emplace(r.seed, r.record_id);
    if (!fresh) throw PreconditionError("seed collision between " + pos->second + " and " + r.record_id);
    records.push_back(std::move(r));
  }
  return records;
}

RunReport run_plan(const std::vector<GenerationRecord>& input, ImageGenBackend& backend, const GenParams& params,
                   int parallelism, const fs::path& out_dir, const RunOptions& options) {
  params.validate();
  if (options.retries < 0) throw PreconditionError("retries must be >= 0");
  {
    std::unordered_set<std::string> ids;
    for (const auto& r : input) {
      if (!ids.insert(r.record_id).second) throw PreconditionError("duplicate record_id in plan: " + r.record_id);
    }
  }
  std::error_code ec;
  fs::create_directories(out_dir / "images", ec);
  if (ec) throw IoError("cannot create " + (out_dir / "images").string() + ": " + ec.message());
  const fs::path manifest_path = out_dir / kManifestName;

  std::unordered_map<std::string, GenerationRecord> previous;
  if (fs::exists(manifest_path)) {
    for (auto& r : manifest_read(manifest_path, {.tolerate_truncated_tail = true})) {
      previous.emplace(r.record_id, std::move(r));
    }
  }

  std::vector<GenerationRecord> kept;
  std::vector<GenerationRecord> todo;
  for (const auto& r : input) {
    auto it = previous.find(r.record_id);
    const bool reusable = it != previous.end() && it->second.status == RecordStatus::done &&
                          it->second.prompt_text == r.prompt_text && it->second.seed == r.seed &&
                          it->second.guidance_scale == params.guidance_scale && it->second.steps == params.steps &&
                          it->second.image_ref && fs::exists(out_dir / *it->second.image_ref);
    if (reusable) {
      kept.push_back(it->second);
    } else {
      GenerationRecord fresh = r;
      fresh.guidance_scale = params.guidance_scale;
      fresh.steps = params.steps;
      fresh.backend_id = backend.backend_id();
      fresh.status = RecordStatus::pending;
      fresh.image_ref.reset();
      fresh.failure_note.reset();
      todo.push_back(std::move(fresh));
    }
  }

  // Start the append log from the reusable records only, which also drops a
  // truncated tail left behind by a crash.
  manifest_write(kept, manifest_path);
  ManifestAppender appender(manifest_path);

  std::atomic<std::uint64_t> calls{0};
  parallel_for(todo.size(), parallelism, [&](std::size_t i) {
    GenerationRecord& r = todo[i];
    std::string note;
    std::optional<std::vector<std::uint8_t>> bytes;
    auto delay = options.backoff;
    for (int attempt = 0; attempt <= options.retries && !bytes; ++attempt) {
      try {
        ++calls;
        auto out = backend.generate(r.prompt_text, r.seed, r.guidance_scale, r.steps);
        if (!is_png(out)) {
          note = "backend returned non-PNG image data";
          break;
        }
        bytes = std::move(out);
      } catch (const BackendError& e) {
        note = std::string(e.what()) + " (attempt " + std::to_string(attempt + 1) + " of " +
               std::to_string(options.retries + 1) + ")";
        if (attempt < options.retries && delay.count() > 0) {
          std::this_thread::sleep_for(delay);
          delay *= 2;
        }
      }
    }
    if (bytes) {
      const std::string ref = "images/" + r.record_id + ".png";
      write_file_atomic(out_dir / ref, std::span<const std::uint8_t>(*bytes));
      r.image_ref = ref;
      r.status = RecordStatus::done;
    } else {
      r.status = RecordStatus::failed;
      r.failure_note = note;
    }
    appender.append(r);
    if (options.on_record) options.on_record(r);
  });

  RunReport report;
  report.skipped = kept.size();
  report.backend_calls = calls;
  report.records = std::move(kept);
  for (auto& r : todo) {
    (r.status == RecordStatus::done ? report.done : report.failed) += 1;
    report.records.push_back(std::move(r));
  }
  report.done += report.skipped;
  std::sort(report.records.begin(), report.records.end(),
            [](const GenerationRecord& a, const GenerationRecord& b) { return a.record_id < b.record_id; });
  manifest_write(report.records, manifest_path);
  return report;
}

PreviewBatch preview(const ClassLabel& class_label, const std::vector<AttributeAssignment>& assignment, int k,
                     ImageGenBackend& backend, const GenParams& params, const fs::path& dir) {
  if (k < 1) throw PreconditionError("k must be >= 1");
  params.validate();
  DiversityConfiguration config;
  config.class_id = class_label.id;
  config.assignment = assignment;
  PreviewBatch batch;
  batch.prompt = assemble_prompt(class_label, config);
  const Json cache_key{{"prompt", batch.prompt},
                       {"backend", backend.backend_id()},
                       {"guidance_scale", params.guidance_scale},
                       {"steps", params.steps}};
  const std::string stem = hex16(hash64(cache_key.dump()));
  const std::uint64_t prompt_seed = hash64(batch.prompt);
  for (int r = 0; r < k; ++r) {
    const std::string ref = "preview/" + stem + "-" + std::to_string(r) + ".png";
    if (!fs::exists(dir / ref)) {
      const auto bytes = backend.generate(batch.prompt, derive_seed(prompt_seed, class_label.id, std::nullopt, r),
                                          params.guidance_scale, params.steps);
      if (!is_png(bytes)) throw BackendError("backend returned non-PNG image data");
      write_file_atomic(dir / ref, std::span<const std::uint8_t>(bytes));
    }
    batch.image_refs.push_back(ref);
  }
  return batch;
}

}  // namespace attrsyn
