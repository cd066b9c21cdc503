// Copyright 2026 The AttrSyn Authors.
// SPDX-License-Identifier: Apache-2.0

#include "attrsyn/http_backends.hpp"

#include <cstdlib>

#include "attrsyn/elicit.hpp"
#include "attrsyn/error.hpp"
#include "httplib.h"

namespace attrsyn {
namespace {

httplib::Client make_client(const std::string& base_url, int timeout_seconds) {
  if (base_url.rfind("http://", 0) != 0 && base_url.rfind("https://", 0) != 0) {
    throw PreconditionError("base_url must start with http:// or https://: " + base_url);
  }
  httplib::Client client(base_url);
  if (!client.is_valid()) throw PreconditionError("invalid base_url: " + base_url);
  client.set_connection_timeout(timeout_seconds, 0);
  client.set_read_timeout(timeout_seconds, 0);
  client.set_write_timeout(timeout_seconds, 0);
  return client;
}

httplib::Headers auth_headers(const std::string& api_key) {
  httplib::Headers h;
  if (!api_key.empty()) h.emplace("Authorization", "Bearer " + api_key);
  return h;
}

std::string check_response(const httplib::Result& res, const std::string& what) {
  if (!res) throw BackendError(what + ": " + httplib::to_string(res.error()));
  if (res->status != 200) {
    std::string body = res->body.substr(0, 200);
    throw BackendError(what + ": HTTP " + std::to_string(res->status) + (body.empty() ? "" : ": " + body));
  }
  return res->body;
}

Json parse_json_body(const std::string& body, const std::string& what) {
  try {
    return Json::parse(body);
  } catch (const Json::exception& e) {
    throw BackendError(what + ": malformed JSON response: " + e.what());
  }
}

}  // namespace

std::string credential_from_env(const std::string& name) {
  if (name.empty()) return {};
  const char* v = std::getenv(name.c_str());
  if (v == nullptr) throw PreconditionError("environment variable " + name + " is not set");
  return v;
}

HttpLlm::HttpLlm(HttpLlmConfig config) : config_(std::move(config)) {
  credential_from_env(config_.api_key_env);
  make_client(config_.base_url, config_.timeout_seconds);
}

std::string HttpLlm::backend_id() const { return "http-llm:" + config_.model; }

std::string HttpLlm::complete(const std::string& prompt) {
  auto client = make_client(config_.base_url, config_.timeout_seconds);
  const Json body{{"model", config_.model}, {"prompt", prompt}};
  const auto res = client.Post(config_.path, auth_headers(credential_from_env(config_.api_key_env)), body.dump(),
                               "application/json");
  const Json j = parse_json_body(check_response(res, "llm request"), "llm request");
  if (!j.is_object() || !j.contains("text") || !j["text"].is_string()) {
    throw BackendError("llm request: response lacks a string \"text\" field");
  }
  return j["text"].get<std::string>();
}

HttpImageBackend::HttpImageBackend(HttpImageConfig config)
    : config_(std::move(config)), api_key_(credential_from_env(config_.api_key_env)) {
  make_client(config_.base_url, config_.timeout_seconds);
}

std::vector<std::uint8_t> HttpImageBackend::generate(const std::string& prompt, std::uint64_t seed,
                                                     double guidance_scale, int steps) {
  auto client = make_client(config_.base_url, config_.timeout_seconds);
  const Json body{{"prompt", prompt},
                  {"seed", seed},
                  {"guidance_scale", guidance_scale},
                  {"num_inference_steps", steps}};
  const auto res = client.Post(config_.path, auth_headers(api_key_), body.dump(), "application/json");
  const std::string bytes = check_response(res, "image request");
  if (bytes.empty()) throw BackendError("image request: empty response");
  return {bytes.begin(), bytes.end()};
}

HttpEmbedder::HttpEmbedder(HttpEmbedConfig config)
    : config_(std::move(config)), api_key_(credential_from_env(config_.api_key_env)) {
  if (config_.backbone_id.empty()) throw PreconditionError("HttpEmbedder needs a backbone_id");
  if (config_.dim < 0) throw PreconditionError("embedding dim must be non-negative");
  make_client(config_.base_url, config_.timeout_seconds);
}

int HttpEmbedder::dim() {
  std::lock_guard lock(mutex_);
  if (config_.dim > 0) return config_.dim;
  auto client = make_client(config_.base_url, config_.timeout_seconds);
  const Json j = parse_json_body(check_response(client.Get(config_.info_path, auth_headers(api_key_)), "embedder info"),
                                 "embedder info");
  if (!j.is_object() || !j.contains("dim") || !j["dim"].is_number_integer() || j["dim"].get<int>() <= 0) {
    throw BackendError("embedder info: response lacks a positive integer \"dim\"");
  }
  if (j.contains("backbone_id") && j["backbone_id"] != config_.backbone_id) {
    throw BackendError("embedder info: backbone " + j["backbone_id"].dump() + " differs from " + config_.backbone_id);
  }
  config_.dim = j["dim"].get<int>();
  return config_.dim;
}

std::vector<double> HttpEmbedder::parse_vector(const std::string& body) const {
  const Json j = parse_json_body(body, "embed request");
  if (!j.is_object() || !j.contains("vector") || !j["vector"].is_array()) {
    throw BackendError("embed request: response lacks a \"vector\" array");
  }
  if (j.contains("backbone_id") && j["backbone_id"] != config_.backbone_id) {
    throw BackendError("embed request: backbone " + j["backbone_id"].dump() + " differs from " + config_.backbone_id);
  }
  std::vector<double> v;
  for (const auto& x : j["vector"]) {
    if (!x.is_number()) throw BackendError("embed request: non-numeric vector entry");
    v.push_back(x.get<double>());
  }
  if (j.contains("dim") && j["dim"] != v.size()) throw BackendError("embed request: dim field disagrees with vector");
  return v;
}

std::vector<double> HttpEmbedder::embed_image(std::span<const std::uint8_t> image) {
  auto client = make_client(config_.base_url, config_.timeout_seconds);
  const std::string body(image.begin(), image.end());
  return parse_vector(
      check_response(client.Post(config_.image_path, auth_headers(api_key_), body, "application/octet-stream"),
                     "embed request"));
}

std::vector<double> HttpEmbedder::embed_text(const std::string& text) {
  auto client = make_client(config_.base_url, config_.timeout_seconds);
  const Json body{{"text", text}};
  return parse_vector(check_response(
      client.Post(config_.text_path, auth_headers(api_key_), body.dump(), "application/json"), "embed request"));
}

}  // namespace attrsyn
