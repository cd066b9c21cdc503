// Copyright 2026 The AttrSyn Authors.
// SPDX-License-Identifier: Apache-2.0

#include <cstdlib>
#include <thread>

#include "attrsyn/dispatch.hpp"
#include "attrsyn/elicit.hpp"
#include "attrsyn/error.hpp"
#include "attrsyn/http_backends.hpp"
#include "attrsyn/png.hpp"
#include "doctest.h"
#include "httplib.h"

using namespace attrsyn;

namespace {

// A local stand-in for the hosted services.
struct FakeServices {
  httplib::Server server;
  std::thread thread;
  int port = 0;
  std::string last_auth;
  Json last_body;

  FakeServices() {
    server.Post("/v1/completions", [this](const httplib::Request& req, httplib::Response& res) {
      last_auth = req.get_header_value("Authorization");
      last_body = Json::parse(req.body);
      if (last_body["prompt"] == "boom") {
        res.status = 500;
        res.set_content("overloaded", "text/plain");
        return;
      }
      res.set_content(Json{{"text", "behavior, habitat"}}.dump(), "application/json");
    });
    server.Post("/generate", [this](const httplib::Request& req, httplib::Response& res) {
      last_body = Json::parse(req.body);
      MockImageBackend mock;
      const auto png = mock.generate(last_body["prompt"], last_body["seed"], last_body["guidance_scale"],
                                     last_body["num_inference_steps"]);
      res.set_content(std::string(png.begin(), png.end()), "image/png");
    });
    server.Post("/embed/image", [](const httplib::Request& req, httplib::Response& res) {
      const double size = static_cast<double>(req.body.size());
      res.set_content(Json{{"vector", {size, 1.0, 2.0}}, {"dim", 3}, {"backbone_id", "remote-clip"}}.dump(),
                      "application/json");
    });
    server.Post("/embed/text", [](const httplib::Request& req, httplib::Response& res) {
      const auto text = Json::parse(req.body)["text"].get<std::string>();
      if (text == "wrong") {
        res.set_content(Json{{"vector", {1.0}}, {"backbone_id", "other"}}.dump(), "application/json");
        return;
      }
      res.set_content(Json{{"vector", {static_cast<double>(text.size()), 0.0, 0.0}}}.dump(), "application/json");
    });
    server.Get("/info", [](const httplib::Request&, httplib::Response& res) {
      res.set_content(Json{{"backbone_id", "remote-clip"}, {"dim", 3}}.dump(), "application/json");
    });
    port = server.bind_to_any_port("127.0.0.1");
    thread = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }

  ~FakeServices() {
    server.stop();
    thread.join();
  }

  std::string url() const { return "http://127.0.0.1:" + std::to_string(port); }
};

}  // namespace

TEST_CASE("HttpLlm posts model and prompt and returns text") {
  FakeServices fake;
  ::setenv("ATTRSYN_TEST_KEY", "sekret", 1);
  HttpLlmConfig cfg;
  cfg.base_url = fake.url();
  cfg.model = "gpt-test";
  cfg.api_key_env = "ATTRSYN_TEST_KEY";
  HttpLlm llm(cfg);
  CHECK(llm.complete("Which attributes?") == "behavior, habitat");
  CHECK(fake.last_auth == "Bearer sekret");
  CHECK(fake.last_body == Json{{"model", "gpt-test"}, {"prompt", "Which attributes?"}});
  try {
    llm.complete("boom");
    FAIL("expected failure");
  } catch (const BackendError& e) {
    CHECK(std::string(e.what()).find("500") != std::string::npos);
  }
}

TEST_CASE("missing credentials and bad urls are user errors") {
  HttpLlmConfig cfg;
  cfg.base_url = "http://127.0.0.1:1";
  cfg.api_key_env = "ATTRSYN_SURELY_UNSET_VARIABLE";
  CHECK_THROWS_AS(HttpLlm{cfg}, PreconditionError);
  HttpImageConfig img;
  img.base_url = "ftp://example";
  CHECK_THROWS_AS(HttpImageBackend{img}, PreconditionError);
}

TEST_CASE("unreachable service is a backend error") {
  HttpImageConfig img;
  img.base_url = "http://127.0.0.1:1";
  img.timeout_seconds = 2;
  HttpImageBackend backend(img);
  CHECK_THROWS_AS(backend.generate("a cardinal", 1, 5.0, 50), BackendError);
}

TEST_CASE("HttpImageBackend sends generation parameters") {
  FakeServices fake;
  HttpImageConfig cfg;
  cfg.base_url = fake.url();
  HttpImageBackend backend(cfg);
  const auto bytes = backend.generate("A cardinal, perching", 77, 5.0, 50);
  CHECK(is_png(bytes));
  CHECK(fake.last_body["seed"] == 77);
  CHECK(fake.last_body["guidance_scale"] == 5.0);
  CHECK(fake.last_body["num_inference_steps"] == 50);
  CHECK(decode_png(bytes).text.at(MockImageBackend::kPromptKey) == "A cardinal, perching");
}

TEST_CASE("HttpEmbedder") {
  FakeServices fake;
  HttpEmbedConfig cfg;
  cfg.base_url = fake.url();
  cfg.backbone_id = "remote-clip";
  HttpEmbedder embedder(cfg);
  CHECK(embedder.dim() == 3);
  const std::vector<std::uint8_t> image(10, 1);
  CHECK(embedder.embed_image(image) == std::vector<double>{10, 1, 2});
  CHECK(embedder.embed_text("abcd") == std::vector<double>{4, 0, 0});
  CHECK_THROWS_AS(embedder.embed_text("wrong"), BackendError);
  cfg.backbone_id = "local-clip";
  HttpEmbedder mismatched(cfg);
  CHECK_THROWS_AS(mismatched.dim(), BackendError);
}
