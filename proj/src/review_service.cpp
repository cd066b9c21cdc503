// Copyright 2026 The AttrSyn Authors.
// SPDX-License-Identifier: Apache-2.0

#include <atomic>
#include <set>
#include <thread>

#include "attrsyn/curation.hpp"
#include "attrsyn/error.hpp"
#include "httplib.h"

namespace attrsyn {
namespace {

constexpr const char* kJson = "application/json";

void reply(httplib::Response& res, int status, const Json& body) {
  res.status = status;
  res.set_content(body.dump(), kJson);
}

void reply_error(httplib::Response& res, int status, const std::string& message) {
  reply(res, status, Json{{"error", message}});
}

Json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return Json::object();
  Json body;
  try {
    body = Json::parse(req.body);
  } catch (const Json::parse_error& e) {
    throw ParseError(std::string("malformed JSON body: ") + e.what());
  }
  if (!body.is_object()) throw ParseError("request body must be a JSON object");
  return body;
}

void reject_unknown_keys(const Json& body, std::initializer_list<const char*> allowed) {
  for (const auto& [key, _] : body.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ParseError("unknown field: " + key);
  }
}

template <typename T>
std::optional<T> optional_field(const Json& body, const char* key) {
  if (!body.contains(key) || body[key].is_null()) return std::nullopt;
  return body[key].get<T>();
}

DecisionRequest decision_from_body(const Json& body, std::string concept_id) {
  reject_unknown_keys(body, {"decision", "kind", "failed_rule", "note"});
  if (!body.contains("decision")) throw ParseError("missing field: decision");
  DecisionRequest req;
  req.concept_id = std::move(concept_id);
  req.decision = parse_decision(body["decision"].get<std::string>());
  if (auto kind = optional_field<std::string>(body, "kind")) req.kind = parse_concept_kind(*kind);
  req.failed_rule = optional_field<std::string>(body, "failed_rule");
  req.note = optional_field<std::string>(body, "note");
  return req;
}

Json concepts_view(const ReviewSession& s) {
  Json concepts = Json::array();
  for (const auto& c : s.concepts) {
    Json item = c;
    item["history"] = s.history(c.id);
    concepts.push_back(std::move(item));
  }
  return Json{{"session_id", s.session_id}, {"state", to_string(s.state)}, {"concepts", std::move(concepts)}};
}

// Assignment as [{concept_id, value}] or {concept_id: value}; returned in
// acceptance order.
std::vector<AttributeAssignment> preview_assignment(const ReviewSession& s, const Json& raw) {
  std::map<std::string, std::string> chosen;
  if (raw.is_object()) {
    for (const auto& [k, v] : raw.items()) chosen[k] = v.get<std::string>();
  } else if (raw.is_array()) {
    for (const auto& a : raw) {
      const auto parsed = a.get<AttributeAssignment>();
      if (!chosen.emplace(parsed.concept_id, parsed.value).second) {
        throw ParseError("duplicate concept in assignment: " + parsed.concept_id);
      }
    }
  } else if (!raw.is_null()) {
    throw ParseError("assignment must be an object or a list");
  }
  std::vector<AttributeAssignment> out;
  std::set<std::string> seen;
  for (const auto& c : accepted_concepts(s)) {
    auto it = chosen.find(c.id);
    if (it == chosen.end()) continue;
    out.push_back({c.id, normalize_value(it->second)});
    seen.insert(c.id);
  }
  for (const auto& [id, _] : chosen) {
    if (!seen.contains(id)) throw PreconditionError("assignment names a concept that is not accepted: " + id);
  }
  return out;
}

}  // namespace

struct ReviewService::Impl {
  SessionStore& store;
  PreviewFn preview;
  httplib::Server server;
  std::jthread thread;
  std::atomic<int> port{0};

  Impl(SessionStore& s, PreviewFn p) : store(s), preview(std::move(p)) {
    // The library default adds SO_REUSEPORT, which lets a second server share
    // an occupied port instead of failing to bind.
    server.set_socket_options([](socket_t sock) {
      int yes = 1;
      setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
    });
    install_routes();
  }

  template <typename Handler>
  auto guarded(Handler h) {
    return [h](const httplib::Request& req, httplib::Response& res) {
      try {
        h(req, res);
      } catch (const NotFoundError& e) {
        reply_error(res, 404, e.what());
      } catch (const ConflictError& e) {
        reply_error(res, 409, e.what());
      } catch (const BackendError& e) {
        reply_error(res, 502, e.what());
      } catch (const IoError& e) {
        reply_error(res, 500, e.what());
      } catch (const Error& e) {
        reply_error(res, 400, e.what());
      } catch (const Json::exception& e) {
        reply_error(res, 400, e.what());
      }
    };
  }

  void install_routes() {
    server.Get("/sessions", guarded([this](const httplib::Request&, httplib::Response& res) {
      Json out = Json::array();
      for (const auto& s : store.list()) out.push_back(s);
      reply(res, 200, out);
    }));

    server.Post("/sessions", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const Json body = parse_body(req);
      reject_unknown_keys(body, {"session_id", "dataset", "concepts"});
      if (!body.contains("dataset")) throw ParseError("missing field: dataset");
      auto dataset = body["dataset"].get<DatasetSpec>();
      auto concepts = body.value("concepts", Json::array()).get<std::vector<AttributeConcept>>();
      const std::string id = store.create(std::move(dataset), std::move(concepts), body.value("session_id", ""));
      reply(res, 201, concepts_view(store.get(id)));
    }));

    server.Get(R"(/sessions/([^/]+)/concepts)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      reply(res, 200, concepts_view(store.get(req.matches[1])));
    }));

    server.Post(R"(/sessions/([^/]+)/concepts/([^/]+)/decision)",
                guarded([this](const httplib::Request& req, httplib::Response& res) {
                  const std::string session_id = req.matches[1];
                  const std::string concept_id = req.matches[2];
                  // Resolve the session first so an unknown session is a 404 even with a bad body.
                  store.get(session_id);
                  const auto request = decision_from_body(parse_body(req), concept_id);
                  const auto updated = store.decide(session_id, request);
                  Json item = *updated.find_concept(concept_id);
                  item["history"] = updated.history(concept_id);
                  reply(res, 200, item);
                }));

    server.Post(R"(/sessions/([^/]+)/finalize)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto accepted = store.finalize(req.matches[1]);
      reply(res, 200, Json{{"session_id", std::string(req.matches[1])}, {"accepted", accepted}});
    }));

    server.Get("/rules", guarded([](const httplib::Request&, httplib::Response& res) {
      reply(res, 200, builtin_rules());
    }));

    server.Post(R"(/sessions/([^/]+)/preview)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto session = store.get(req.matches[1]);
      const Json body = parse_body(req);
      reject_unknown_keys(body, {"class_id", "assignment", "k"});
      if (!body.contains("class_id")) throw ParseError("missing field: class_id");
      const int class_id = body["class_id"].get<int>();
      session.dataset.class_at(class_id);
      const int k = body.value("k", 3);
      if (k < 1) throw PreconditionError("k must be >= 1");
      const auto assignment = preview_assignment(session, body.value("assignment", Json()));
      if (!preview) {
        reply_error(res, 503, "no image backend configured for previews");
        return;
      }
      const auto result = preview(session, class_id, assignment, k);
      reply(res, 200, Json{{"prompt", result.prompt}, {"images", result.image_refs}});
    }));
  }
};

ReviewService::ReviewService(SessionStore& store, PreviewFn preview)
    : impl_(std::make_unique<Impl>(store, std::move(preview))) {}

ReviewService::~ReviewService() { stop(); }

void ReviewService::mount_static(const std::filesystem::path& dir) {
  if (!impl_->server.set_mount_point("/", dir.string())) {
    throw IoError("cannot serve static files from " + dir.string());
  }
}

int ReviewService::start(const std::string& host, int port) {
  int bound = port;
  if (port == 0) {
    bound = impl_->server.bind_to_any_port(host);
    if (bound < 0) throw IoError("cannot bind " + host + ":0");
  } else if (!impl_->server.bind_to_port(host, port)) {
    throw IoError("cannot bind " + host + ":" + std::to_string(port));
  }
  impl_->port = bound;
  impl_->thread = std::jthread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return bound;
}

void ReviewService::listen_blocking(const std::string& host, int port) {
  if (!impl_->server.bind_to_port(host, port)) {
    throw IoError("cannot bind " + host + ":" + std::to_string(port));
  }
  impl_->port = port;
  impl_->server.listen_after_bind();
}

void ReviewService::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

int ReviewService::port() const { return impl_->port; }

std::unique_ptr<ReviewService> serve_review_api(SessionStore& store, const std::string& host, int port,
                                                PreviewFn preview) {
  auto service = std::make_unique<ReviewService>(store, std::move(preview));
  service->start(host, port);
  return service;
}

}  // namespace attrsyn
