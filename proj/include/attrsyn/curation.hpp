// Copyright 2026 The AttrSyn Authors.
// SPDX-License-Identifier: Apache-2.0

// Human review of proposed attribute concepts.
//
// A ReviewSession holds the proposed concepts and an append-only decision
// history. A concept's effective status is its latest decision. Decisions
// are revisable until the session is finalized; finalization freezes the
// session and fixes the canonical concept order (the order in which the
// effective accept decisions were made) used by every downstream module.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "attrsyn/schema.hpp"

namespace attrsyn {

struct Rule {
  std::string id;
  std::string description;

  bool operator==(const Rule&) const = default;
};

// quality and diversity, in that order.
std::vector<Rule> builtin_rules();

enum class Decision { accept, reject };
enum class SessionState { reviewing, finalized };

const char* to_string(Decision d);
const char* to_string(SessionState s);
Decision parse_decision(std::string_view text);

struct DecisionEntry {
  std::string concept_id;
  Decision decision = Decision::accept;
  std::optional<ConceptKind> kind;
  std::optional<std::string> rule_id;
  std::string note;
  std::int64_t timestamp_ms = 0;

  bool operator==(const DecisionEntry&) const = default;
};

struct DecisionRequest {
  std::string concept_id;
  Decision decision = Decision::accept;
  std::optional<ConceptKind> kind;         // required for accept
  std::optional<std::string> failed_rule;  // required for reject
  std::optional<std::string> note;
};

struct ReviewSession {
  std::string session_id;
  DatasetSpec dataset;
  std::vector<AttributeConcept> concepts;
  std::vector<Rule> rules;
  std::vector<DecisionEntry> decisions;
  SessionState state = SessionState::reviewing;

  const AttributeConcept* find_concept(std::string_view concept_id) const;
  std::vector<DecisionEntry> history(std::string_view concept_id) const;

  bool operator==(const ReviewSession&) const = default;
};

void to_json(Json& j, const Rule& v);
void from_json(const Json& j, Rule& v);
void to_json(Json& j, const DecisionEntry& v);
void from_json(const Json& j, DecisionEntry& v);
void to_json(Json& j, const ReviewSession& v);
void from_json(const Json& j, ReviewSession& v);

// Concepts are reset to status=proposed; ids must be unique.
ReviewSession make_session(std::string session_id, DatasetSpec dataset, std::vector<AttributeConcept> concepts);

// Throws NotFoundError (unknown concept), ConflictError (finalized session or
// kind change after acceptance) or PreconditionError (missing kind/rule).
void record_decision(ReviewSession& session, const DecisionRequest& request, std::int64_t timestamp_ms);

// Custom rules may be added while reviewing; rules are never removed.
void add_rule(ReviewSession& session, Rule rule);

// Accepted concepts ordered by the position of their effective accept decision.
std::vector<AttributeConcept> accepted_concepts(const ReviewSession& session);

// Freezes the session and returns accepted_concepts(). ConflictError if
// already finalized; PreconditionError when nothing is accepted.
std::vector<AttributeConcept> finalize(ReviewSession& session);

struct SessionSummary {
  std::string session_id;
  std::string dataset;
  SessionState state = SessionState::reviewing;
  std::size_t concepts = 0;
  std::size_t accepted = 0;
  std::size_t decisions = 0;
};

void to_json(Json& j, const SessionSummary& v);

// Directory-backed session store. Each mutation is applied to a copy,
// written to disk, and only then published, so a crash never loses an
// acknowledged decision. One writer per session at a time; readers share.
class SessionStore {
 public:
  using Clock = std::function<std::int64_t()>;

  explicit SessionStore(std::filesystem::path dir);
  SessionStore(std::filesystem::path dir, Clock clock);
  ~SessionStore();

  SessionStore(const SessionStore&) = delete;
  SessionStore& operator=(const SessionStore&) = delete;

  // Empty id -> "{dataset}-{n}". ConflictError when the id exists.
  std::string create(DatasetSpec dataset, std::vector<AttributeConcept> concepts, std::string session_id = {});
  bool contains(const std::string& session_id) const;
  ReviewSession get(const std::string& session_id) const;
  std::vector<SessionSummary> list() const;

  ReviewSession decide(const std::string& session_id, const DecisionRequest& request);
  std::vector<AttributeConcept> finalize(const std::string& session_id);
  ReviewSession add_rule(const std::string& session_id, Rule rule);

  const std::filesystem::path& dir() const { return dir_; }
  std::filesystem::path session_path(const std::string& session_id) const;

 private:
  struct Slot;
  Slot& slot(const std::string& session_id) const;
  template <typename Mutation>
  ReviewSession mutate(const std::string& session_id, Mutation&& m);

  std::filesystem::path dir_;
  Clock clock_;
  mutable std::shared_mutex map_mutex_;
  std::map<std::string, std::unique_ptr<Slot>> sessions_;
};

ReviewSession load_session(const std::filesystem::path& path);
void save_session(const ReviewSession& session, const std::filesystem::path& path);

// Interactive terminal review over `in`/`out`. Returns true when the
// session was finalized.
bool run_terminal_review(SessionStore& store, const std::string& session_id, std::istream& in, std::ostream& out);

// Callback behind the preview endpoint: (session, class_id, assignment in
// acceptance order, k) -> {prompt, image refs}.
struct PreviewResult {
  std::string prompt;
  std::vector<std::string> image_refs;
};
using PreviewFn = std::function<PreviewResult(const ReviewSession&, int, const std::vector<AttributeAssignment>&, int)>;

// HTTP/1.1 + JSON review service:
//   GET  /sessions
//   POST /sessions
//   GET  /sessions/{id}/concepts
//   POST /sessions/{id}/concepts/{cid}/decision
//   POST /sessions/{id}/finalize
//   GET  /rules
//   POST /sessions/{id}/preview
class ReviewService {
 public:
  explicit ReviewService(SessionStore& store, PreviewFn preview = {});
  ~ReviewService();

  ReviewService(const ReviewService&) = delete;
  ReviewService& operator=(const ReviewService&) = delete;

  // Serves static files (the browser UI) from `dir` at "/".
  void mount_static(const std::filesystem::path& dir);

  // Binds and serves on a background thread. Port 0 picks a free port.
  // Returns the bound port; throws IoError when the address cannot be bound.
  int start(const std::string& host, int port);

  // Blocks the calling thread serving requests until stop().
  void listen_blocking(const std::string& host, int port);
  void stop();
  int port() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

std::unique_ptr<ReviewService> serve_review_api(SessionStore& store, const std::string& host, int port,
                                                PreviewFn preview = {});

}  // namespace attrsyn
