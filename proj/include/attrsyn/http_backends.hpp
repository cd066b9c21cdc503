// Copyright 2026 The AttrSyn Authors.
// SPDX-License-Identifier: Apache-2.0

// HTTP clients for externally hosted image generators and embedders. The
// LLM client is declared in elicit.hpp. Credentials come from environment
// variables named in the config; a named but unset variable is a
// PreconditionError at construction.

#pragma once

#include <string>

#include "attrsyn/dispatch.hpp"
#include "attrsyn/embed.hpp"

namespace attrsyn {

struct HttpImageConfig {
  std::string base_url;  // "http://host:port" or "https://host:port"
  std::string path = "/generate";
  std::string backend_id = "http-image";
  std::string api_key_env;
  int timeout_seconds = 300;
};

// POST {prompt, seed, guidance_scale, num_inference_steps}; the response
// body is the encoded image.
class HttpImageBackend final : public ImageGenBackend {
 public:
  explicit HttpImageBackend(HttpImageConfig config);
  std::vector<std::uint8_t> generate(const std::string& prompt, std::uint64_t seed, double guidance_scale,
                                     int steps) override;
  std::string backend_id() const override { return config_.backend_id; }

 private:
  HttpImageConfig config_;
  std::string api_key_;
};

struct HttpEmbedConfig {
  std::string base_url;
  std::string image_path = "/embed/image";  // POST raw image bytes
  std::string text_path = "/embed/text";    // POST {"text": ...}
  std::string info_path = "/info";          // GET {"backbone_id", "dim"}
  std::string backbone_id;
  int dim = 0;  // 0: ask info_path on first use
  std::string api_key_env;
  int timeout_seconds = 120;
};

// Responses are {"vector": [...]} with optional "dim" and "backbone_id",
// which must agree with the config when present.
class HttpEmbedder final : public EmbeddingBackend {
 public:
  explicit HttpEmbedder(HttpEmbedConfig config);
  std::vector<double> embed_image(std::span<const std::uint8_t> image) override;
  std::vector<double> embed_text(const std::string& text) override;
  std::string backbone_id() const override { return config_.backbone_id; }
  int dim() override;

 private:
  std::vector<double> parse_vector(const std::string& body) const;

  HttpEmbedConfig config_;
  std::string api_key_;
  std::mutex mutex_;
};

// The value of `name`, or empty when name is empty. Throws PreconditionError
// if a named variable is unset.
std::string credential_from_env(const std::string& name);

}  // namespace attrsyn
