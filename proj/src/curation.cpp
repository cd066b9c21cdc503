// Copyright 2026 The AttrSyn Authors.
// SPDX-License-Identifier: Apache-2.0

#include "attrsyn/curation.hpp"

#include <algorithm>
#include <chrono>
#include <iostream>
#include <mutex>
#include <set>

#include "attrsyn/error.hpp"
#include "attrsyn/io.hpp"

namespace fs = std::filesystem;

namespace attrsyn {
namespace {

std::int64_t wall_clock_ms() {
  using namespace std::chrono;
  return duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count();
}

bool valid_session_id(std::string_view id) {
  return !id.empty() && id.front() != '.' && std::all_of(id.begin(), id.end(), [](unsigned char c) {
    return std::isalnum(c) != 0 || c == '-' || c == '_' || c == '.';
  });
}

AttributeConcept& concept_ref(ReviewSession& session, std::string_view concept_id) {
  auto it = std::find_if(session.concepts.begin(), session.concepts.end(),
                         [&](const AttributeConcept& c) { return c.id == concept_id; });
  if (it == session.concepts.end()) throw NotFoundError("unknown concept: " + std::string(concept_id));
  return *it;
}

}  // namespace

std::vector<Rule> builtin_rules() {
  return {{"quality", "captures distinguishable features"},
          {"diversity", "sufficient variation in candidate values"}};
}

const char* to_string(Decision d) { return d == Decision::accept ? "accept" : "reject"; }
const char* to_string(SessionState s) { return s == SessionState::reviewing ? "reviewing" : "finalized"; }

Decision parse_decision(std::string_view text) {
  if (text == "accept") return Decision::accept;
  if (text == "reject") return Decision::reject;
  throw ParseError("unknown decision: " + std::string(text));
}

const AttributeConcept* ReviewSession::find_concept(std::string_view concept_id) const {
  auto it = std::find_if(concepts.begin(), concepts.end(), [&](const AttributeConcept& c) { return c.id == concept_id; });
  return it == concepts.end() ? nullptr : &*it;
}

std::vector<DecisionEntry> ReviewSession::history(std::string_view concept_id) const {
  std::vector<DecisionEntry> out;
  for (const auto& d : decisions) {
    if (d.concept_id == concept_id) out.push_back(d);
  }
  return out;
}

void to_json(Json& j, const Rule& v) { j = Json{{"id", v.id}, {"description", v.description}}; }

void from_json(const Json& j, Rule& v) {
  v.id = j.at("id").get<std::string>();
  v.description = j.at("description").get<std::string>();
}

void to_json(Json& j, const DecisionEntry& v) {
  j = Json::object();
  j["concept_id"] = v.concept_id;
  j["decision"] = to_string(v.decision);
  j["kind"] = v.kind ? Json(to_string(*v.kind)) : Json(nullptr);
  j["rule_id"] = v.rule_id ? Json(*v.rule_id) : Json(nullptr);
  j["note"] = v.note;
  j["timestamp_ms"] = v.timestamp_ms;
}

void from_json(const Json& j, DecisionEntry& v) {
  v.concept_id = j.at("concept_id").get<std::string>();
  v.decision = parse_decision(j.at("decision").get<std::string>());
  v.kind = j.at("kind").is_null() ? std::nullopt : std::optional(parse_concept_kind(j["kind"].get<std::string>()));
  v.rule_id = j.at("rule_id").is_null() ? std::nullopt : std::optional(j["rule_id"].get<std::string>());
  v.note = j.at("note").get<std::string>();
  v.timestamp_ms = j.at("timestamp_ms").get<std::int64_t>();
}

void to_json(Json& j, const ReviewSession& v) {
  j = Json::object();
  j["session_id"] = v.session_id;
  j["state"] = to_string(v.state);
  j["dataset"] = v.dataset;
  j["rules"] = v.rules;
  j["concepts"] = v.concepts;
  j["decisions"] = v.decisions;
}

void from_json(const Json& j, ReviewSession& v) {
  v.session_id = j.at("session_id").get<std::string>();
  const auto state = j.at("state").get<std::string>();
  if (state == "reviewing") {
    v.state = SessionState::reviewing;
  } else if (state == "finalized") {
    v.state = SessionState::finalized;
  } else {
    throw ParseError("unknown session state: " + state);
  }
  v.dataset = j.at("dataset").get<DatasetSpec>();
  v.rules = j.at("rules").get<std::vector<Rule>>();
  v.concepts = j.at("concepts").get<std::vector<AttributeConcept>>();
  v.decisions = j.at("decisions").get<std::vector<DecisionEntry>>();
}

void to_json(Json& j, const SessionSummary& v) {
  j = Json::object();
  j["session_id"] = v.session_id;
  j["dataset"] = v.dataset;
  j["state"] = to_string(v.state);
  j["concepts"] = v.concepts;
  j["accepted"] = v.accepted;
  j["decisions"] = v.decisions;
}

ReviewSession make_session(std::string session_id, DatasetSpec dataset, std::vector<AttributeConcept> concepts) {
  if (!valid_session_id(session_id)) throw PreconditionError("invalid session id: \"" + session_id + "\"");
  require_valid_dataset(dataset);
  std::set<std::string> ids;
  for (auto& c : concepts) {
    if (c.id.empty()) c.id = slugify(c.name);
    if (!ids.insert(c.id).second) throw PreconditionError("duplicate concept id: " + c.id);
    c.status = ConceptStatus::proposed;
    c.kind = ConceptKind::class_dependent;
    c.failed_rule.reset();
    c.decision_note.reset();
  }
  ReviewSession s;
  s.session_id = std::move(session_id);
  s.dataset = std::move(dataset);
  s.concepts = std::move(concepts);
  s.rules = builtin_rules();
  return s;
}

void record_decision(ReviewSession& session, const DecisionRequest& request, std::int64_t timestamp_ms) {
  if (session.state == SessionState::finalized) {
    throw ConflictError("session " + session.session_id + " is finalized");
  }
  AttributeConcept& target = concept_ref(session, request.concept_id);
  DecisionEntry entry;
  entry.concept_id = target.id;
  entry.decision = request.decision;
  entry.note = request.note.value_or("");
  entry.timestamp_ms = timestamp_ms;

  if (request.decision == Decision::reject) {
    if (!request.failed_rule) throw PreconditionError("reject requires failed_rule");
    const bool known = std::any_of(session.rules.begin(), session.rules.end(),
                                   [&](const Rule& r) { return r.id == *request.failed_rule; });
    if (!known) throw PreconditionError("unknown rule: " + *request.failed_rule);
    entry.rule_id = request.failed_rule;
  } else {
    if (!request.kind) throw PreconditionError("accept requires kind");
    const auto past = session.history(target.id);
    const bool ever_accepted = std::any_of(past.begin(), past.end(), [](const DecisionEntry& d) {
      return d.decision == Decision::accept;
    });
    if (ever_accepted && target.kind != *request.kind) {
      throw ConflictError("kind of concept " + target.id + " is immutable after acceptance");
    }
    entry.kind = request.kind;
  }

  session.decisions.push_back(entry);
  if (entry.decision == Decision::accept) {
    target.status = ConceptStatus::accepted;
    target.kind = *entry.kind;
    target.failed_rule.reset();
  } else {
    target.status = ConceptStatus::rejected;
    target.failed_rule = entry.rule_id;
  }
  target.decision_note = request.note;
}

void add_rule(ReviewSession& session, Rule rule) {
  if (session.state == SessionState::finalized) throw ConflictError("session " + session.session_id + " is finalized");
  if (rule.id.empty()) throw PreconditionError("rule id must be non-empty");
  if (std::any_of(session.rules.begin(), session.rules.end(), [&](const Rule& r) { return r.id == rule.id; })) {
    throw ConflictError("rule already exists: " + rule.id);
  }
  session.rules.push_back(std::move(rule));
}

std::vector<AttributeConcept> accepted_concepts(const ReviewSession& session) {
  std::vector<std::pair<std::size_t, const AttributeConcept*>> ordered;
  for (const auto& c : session.concepts) {
    if (c.status != ConceptStatus::accepted) continue;
    std::size_t last_accept = 0;
    for (std::size_t i = 0; i < session.decisions.size(); ++i) {
      const auto& d = session.decisions[i];
      if (d.concept_id == c.id && d.decision == Decision::accept) last_accept = i;
    }
    ordered.emplace_back(last_accept, &c);
  }
  std::sort(ordered.begin(), ordered.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<AttributeConcept> out;
  for (const auto& [_, c] : ordered) out.push_back(*c);
  return out;
}

std::vector<AttributeConcept> finalize(ReviewSession& session) {
  if (session.state == SessionState::finalized) {
    throw ConflictError("session " + session.session_id + " is already finalized");
  }
  auto accepted = accepted_concepts(session);
  if (accepted.empty()) throw PreconditionError("no accepted concepts");
  for (const auto& c : accepted) {
    const auto h = session.history(c.id);
    if (h.empty() || !h.back().kind) throw PreconditionError("accepted concept without kind: " + c.id);
  }
  session.state = SessionState::finalized;
  return accepted;
}

ReviewSession load_session(const fs::path& path) {
  try {
    return Json::parse(read_text_file(path)).get<ReviewSession>();
  } catch (const Json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void save_session(const ReviewSession& session, const fs::path& path) {
  write_file_atomic(path, Json(session).dump(2) + "\n");
}

struct SessionStore::Slot {
  mutable std::shared_mutex mutex;
  ReviewSession session;
};

SessionStore::SessionStore(fs::path dir) : SessionStore(std::move(dir), wall_clock_ms) {}

SessionStore::SessionStore(fs::path dir, Clock clock) : dir_(std::move(dir)), clock_(std::move(clock)) {
  std::error_code ec;
  fs::create_directories(dir_, ec);
  if (ec) throw IoError("cannot create session directory " + dir_.string() + ": " + ec.message());
  for (const auto& entry : fs::directory_iterator(dir_)) {
    if (entry.path().extension() != ".json") continue;
    auto slot = std::make_unique<Slot>();
    slot->session = load_session(entry.path());
    const std::string id = slot->session.session_id;
    sessions_.emplace(id, std::move(slot));
  }
}

SessionStore::~SessionStore() = default;

fs::path SessionStore::session_path(const std::string& session_id) const { return dir_ / (session_id + ".json"); }

SessionStore::Slot& SessionStore::slot(const std::string& session_id) const {
  std::shared_lock lock(map_mutex_);
  auto it = sessions_.find(session_id);
  if (it == sessions_.end()) throw NotFoundError("unknown session: " + session_id);
  return *it->second;
}

std::string SessionStore::create(DatasetSpec dataset, std::vector<AttributeConcept> concepts, std::string session_id) {
  std::unique_lock lock(map_mutex_);
  if (session_id.empty()) {
    for (int n = 1;; ++n) {
      session_id = dataset.name + "-" + std::to_string(n);
      if (!sessions_.contains(session_id)) break;
    }
  }
  if (sessions_.contains(session_id)) throw ConflictError("session already exists: " + session_id);
  auto slot = std::make_unique<Slot>();
  slot->session = make_session(session_id, std::move(dataset), std::move(concepts));
  save_session(slot->session, session_path(session_id));
  sessions_.emplace(session_id, std::move(slot));
  return session_id;
}

bool SessionStore::contains(const std::string& session_id) const {
  std::shared_lock lock(map_mutex_);
  return sessions_.contains(session_id);
}

ReviewSession SessionStore::get(const std::string& session_id) const {
  Slot& s = slot(session_id);
  std::shared_lock lock(s.mutex);
  return s.session;
}

std::vector<SessionSummary> SessionStore::list() const {
  std::shared_lock lock(map_mutex_);
  std::vector<SessionSummary> out;
  for (const auto& [id, slot] : sessions_) {
    std::shared_lock session_lock(slot->mutex);
    const ReviewSession& s = slot->session;
    SessionSummary summary;
    summary.session_id = id;
    summary.dataset = s.dataset.name;
    summary.state = s.state;
    summary.concepts = s.concepts.size();
    summary.accepted = static_cast<std::size_t>(std::count_if(
        s.concepts.begin(), s.concepts.end(), [](const AttributeConcept& c) { return c.status == ConceptStatus::accepted; }));
    summary.decisions = s.decisions.size();
    out.push_back(summary);
  }
  return out;
}

template <typename Mutation>
ReviewSession SessionStore::mutate(const std::string& session_id, Mutation&& m) {
  Slot& s = slot(session_id);
  std::unique_lock lock(s.mutex);
  ReviewSession next = s.session;
  m(next);
  save_session(next, session_path(session_id));
  s.session = std::move(next);
  return s.session;
}

ReviewSession SessionStore::decide(const std::string& session_id, const DecisionRequest& request) {
  return mutate(session_id, [&](ReviewSession& s) { record_decision(s, request, clock_()); });
}

std::vector<AttributeConcept> SessionStore::finalize(const std::string& session_id) {
  std::vector<AttributeConcept> accepted;
  mutate(session_id, [&](ReviewSession& s) { accepted = attrsyn::finalize(s); });
  return accepted;
}

ReviewSession SessionStore::add_rule(const std::string& session_id, Rule rule) {
  return mutate(session_id, [&](ReviewSession& s) { attrsyn::add_rule(s, std::move(rule)); });
}

bool run_terminal_review(SessionStore& store, const std::string& session_id, std::istream& in, std::ostream& out) {
  auto ask_raw = [&](const std::string& question) {
    out << question << std::flush;
    std::string line;
    if (!std::getline(in, line)) return std::optional<std::string>();
    const auto first = line.find_first_not_of(" \t\r");
    const auto last = line.find_last_not_of(" \t\r");
    return std::optional(first == std::string::npos ? std::string() : line.substr(first, last - first + 1));
  };
  auto ask = [&](const std::string& question) {
    auto answer = ask_raw(question);
    if (answer) *answer = normalize_value(*answer);
    return answer;
  };

  ReviewSession session = store.get(session_id);
  if (session.state == SessionState::finalized) {
    out << "session " << session_id << " is already finalized\n";
    return true;
  }
  out << "Reviewing " << session.concepts.size() << " concepts for dataset " << session.dataset.name << "\n";
  out << "Rules:\n";
  for (const auto& r : session.rules) out << "  " << r.id << ": " << r.description << "\n";

  for (std::size_t i = 0; i < session.concepts.size(); ++i) {
    const AttributeConcept c = session.concepts[i];
    out << "[" << i + 1 << "/" << session.concepts.size() << "] " << c.name << " (" << to_string(c.status) << ")\n";
    while (true) {
      auto answer = ask("  accept, reject, skip or quit? [a/r/s/q] ");
      if (!answer || *answer == "q") return false;
      if (*answer == "s" || answer->empty()) break;
      try {
        DecisionRequest req;
        req.concept_id = c.id;
        if (*answer == "a") {
          auto kind = ask("  kind: class-dependent or class-independent? [d/i] ");
          if (!kind) return false;
          req.decision = Decision::accept;
          req.kind = *kind == "i" ? ConceptKind::class_independent : ConceptKind::class_dependent;
        } else if (*answer == "r") {
          auto rule = ask("  failed rule id: ");
          if (!rule) return false;
          req.decision = Decision::reject;
          req.failed_rule = *rule;
        } else {
          continue;
        }
        auto note = ask_raw("  note (optional): ");
        if (note && !note->empty()) req.note = *note;
        session = store.decide(session_id, req);
        const auto* updated = session.find_concept(c.id);
        out << "  -> " << to_string(updated->status) << "\n";
        break;
      } catch (const Error& e) {
        out << "  error: " << e.what() << "\n";
      }
    }
  }
  auto answer = ask("finalize? [y/n] ");
  if (!answer || *answer != "y") return false;
  try {
    const auto accepted = store.finalize(session_id);
    out << "finalized with " << accepted.size() << " accepted concepts:";
    for (const auto& c : accepted) out << " " << c.id;
    out << "\n";
    return true;
  } catch (const Error& e) {
    out << "error: " << e.what() << "\n";
    return false;
  }
}

}  // namespace attrsyn
