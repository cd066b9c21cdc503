// Copyright 2026 The AttrSyn Authors.
// SPDX-License-Identifier: Apache-2.0

#include "attrsyn/cli.hpp"

#include <algorithm>
#include <iostream>
#include <map>

#include "CLI11.hpp"
#include "attrsyn/error.hpp"
#include "attrsyn/io.hpp"
#include "attrsyn/pipeline.hpp"

namespace fs = std::filesystem;

namespace attrsyn {
namespace {

struct Options {
  std::string workdir = ".";
  std::string config_file;
  std::map<std::string, std::vector<std::string>> raw;  // setting key -> flag value

  std::string session;
  bool serve = false;
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string static_dir;

  bool count_only = false;
  bool base = false;
  std::string method = "attrsyn";
  bool mock_test_set = false;
  bool class_texts = false;

  std::string model;
  std::string features;
  std::string out;
  std::string test;
  std::string classifier = "lr";
  std::vector<int> scales;
  bool allow_remainder = false;
  std::vector<std::string> results;
  std::string plot_data;
  bool mock = false;
};

Method generation_method(const std::string& text) {
  const Method m = parse_method(text);
  if (m == Method::zeroshot) throw PreconditionError("method must be attrsyn or base_prompt");
  return m;
}

fs::path under(const RunConfig& cfg, const std::string& p) { return cfg.workdir / p; }

EmbeddingMatrix load_labelled(const fs::path& path, const char* what) {
  if (!fs::exists(path)) throw PreconditionError(std::string(what) + " features not found: " + path.string());
  auto m = load_matrix(path);
  if (!m.labels) throw PreconditionError(std::string(what) + " features carry no labels: " + path.string());
  return m;
}

int cmd_elicit(const RunConfig& cfg, std::ostream& out) {
  const auto ds = load_run_dataset(cfg);
  auto llm = make_llm(cfg);
  const auto concepts = step_elicit(cfg, ds, *llm);
  out << "proposed " << concepts.size() << " concepts:";
  for (const auto& c : concepts) out << " " << c.id;
  out << "\n";
  write_run_record(cfg, "elicit", Json{{"concepts", concepts.size()}});
  return kExitOk;
}

int cmd_review(const RunConfig& cfg, const Options& o, std::istream& in, std::ostream& out) {
  const auto ds = load_run_dataset(cfg);
  const Paths paths(cfg.workdir);
  SessionStore store(paths.sessions());
  std::string id = o.session;
  if (id.empty() || !store.contains(id)) {
    if (!fs::exists(paths.concepts())) throw PreconditionError("no proposed concepts; run elicit first");
    id = store.create(ds, load_concepts(paths.concepts()), id);
    out << "created session " << id << "\n";
  }
  if (o.serve) {
    auto images = std::shared_ptr<ImageGenBackend>(make_image_backend(cfg));
    const auto params = cfg.gen_params();
    const fs::path preview_dir = paths.root;
    PreviewFn fn = [images, params, preview_dir](const ReviewSession& s, int class_id,
                                                 const std::vector<AttributeAssignment>& assignment, int k) {
      const auto batch = preview(s.dataset.class_at(class_id), assignment, k, *images, params, preview_dir);
      return PreviewResult{batch.prompt, batch.image_refs};
    };
    ReviewService service(store, fn);
    if (!o.static_dir.empty()) service.mount_static(o.static_dir);
    out << "serving review API for session " << id << " on http://" << o.host << ":" << o.port << std::endl;
    service.listen_blocking(o.host, o.port);
    return kExitOk;
  }
  if (run_terminal_review(store, id, in, out)) {
    const auto accepted = export_accepted(cfg, id);
    write_run_record(cfg, "review", Json{{"session_id", id}, {"accepted", accepted.size()}});
  } else {
    out << "session " << id << " saved; resume with: attrsyn review --session " << id << "\n";
  }
  return kExitOk;
}

int cmd_values(const RunConfig& cfg, const Options& o, std::ostream& out) {
  const auto ds = load_run_dataset(cfg);
  const Paths paths(cfg.workdir);
  std::vector<AttributeConcept> accepted;
  if (!o.session.empty()) {
    accepted = export_accepted(cfg, o.session);
  } else {
    if (!fs::exists(paths.accepted())) throw PreconditionError("no accepted concepts; finish a review first");
    accepted = load_concepts(paths.accepted());
  }
  auto llm = make_llm(cfg);
  const auto pool = step_values(cfg, ds, accepted, *llm);
  out << "generated " << pool.size() << " value sets for " << accepted.size() << " concepts\n";
  write_run_record(cfg, "values", Json{{"value_sets", pool.size()}});
  return kExitOk;
}

int cmd_plan(const RunConfig& cfg, const Options& o, std::ostream& out) {
  const auto ds = load_run_dataset(cfg);
  const Paths paths(cfg.workdir);
  if (o.count_only) {
    const auto accepted = load_concepts(paths.accepted());
    const auto pool = load_value_pool(paths.value_pool());
    const auto counts = diversity_count(accepted, pool, ds);
    if (const auto per = counts.uniform_per_class()) {
      out << *per << " " << counts.total << "\n";
    } else {
      out << "mixed " << counts.total << "\n";
    }
    return kExitOk;
  }
  const Method m = o.base ? Method::base_prompt : Method::attrsyn;
  const auto plan = step_plan(cfg, ds, m);
  out << "planned " << plan.entries.size() << " " << to_string(m) << " images (" << plan.per_class
      << " per class) -> " << paths.plan(m).string() << "\n";
  write_run_record(cfg, std::string("plan-") + to_string(m), Json{{"entries", plan.entries.size()}});
  return kExitOk;
}

int cmd_generate(const RunConfig& cfg, const Options& o, std::ostream& out) {
  const auto ds = load_run_dataset(cfg);
  const Method m = generation_method(o.method);
  auto backend = make_image_backend(cfg);
  const auto g = step_generate(cfg, ds, m, *backend);
  out << "done " << g.report.done << ", failed " << g.report.failed << ", skipped " << g.report.skipped
      << ", backend calls " << g.report.backend_calls << " -> " << g.manifest.string() << "\n";
  for (const auto& r : g.report.records) {
    if (r.status == RecordStatus::failed) out << "  failed " << r.record_id << ": " << r.failure_note.value_or("") << "\n";
  }
  write_run_record(cfg, std::string("generate-") + to_string(m),
                   Json{{"done", g.report.done}, {"failed", g.report.failed}}, {Paths(cfg.workdir).generation(m)});
  return g.report.partial() ? kExitPartial : kExitOk;
}

int cmd_embed(const RunConfig& cfg, const Options& o, std::ostream& out) {
  const auto ds = load_run_dataset(cfg);
  auto embedder = make_embedder(cfg, ds);
  if (o.class_texts) {
    const auto m = step_class_texts(cfg, ds, *embedder);
    out << "embedded " << m.rows() << " class texts\n";
    return kExitOk;
  }
  if (o.mock_test_set) {
    MockImageBackend images("mock-test-image", cfg.image.size);
    bool reused = false;
    const auto m = step_mock_test_set(cfg, ds, images, *embedder, &reused);
    out << (reused ? "reused " : "built ") << "mock test set with " << m.rows() << " rows\n";
    return kExitOk;
  }
  const Method m = generation_method(o.method);
  const auto e = step_embed(cfg, m, *embedder);
  out << "embedded " << e.matrix.rows() << " images (" << e.backend_calls << " backend calls, " << e.failures
      << " failures, " << e.skipped_records << " unfinished records skipped)\n";
  write_run_record(cfg, std::string("embed-") + to_string(m), Json{{"rows", e.matrix.rows()}});
  return e.failures > 0 || e.skipped_records > 0 ? kExitPartial : kExitOk;
}

int cmd_train(const RunConfig& cfg, const Options& o, std::ostream& out) {
  const auto ds = load_run_dataset(cfg);
  const Classifier c = parse_classifier(o.model);
  const auto features = load_labelled(under(cfg, o.features), "training");
  const fs::path model_path =
      o.out.empty() ? cfg.workdir / "models" / (fs::path(o.features).stem().string() + "-" + o.model + ".json")
                    : under(cfg, o.out);
  const Eigen::MatrixXd X =
      cfg.probe.normalize_features ? l2_normalize_rows(features).data : features.data;
  TrainingMeta meta;
  if (c == Classifier::lr) {
    const auto model = train_lr(X, *features.labels, ds.num_classes(), cfg.probe.lr);
    save_model(model, model_path);
    meta = model.meta;
  } else {
    const auto model = train_mlp(X, *features.labels, ds.num_classes(), cfg.probe.mlp);
    save_model(model, model_path);
    meta = model.meta;
  }
  out << "trained " << o.model << " on " << features.rows() << " rows: objective " << meta.final_objective
      << ", gradient norm " << meta.final_grad_norm << ", iterations " << meta.iterations_used << " -> "
      << model_path.string() << "\n";
  write_run_record(cfg, std::string("train-") + o.model, Json{{"features", o.features}},
                   {model_path.parent_path()});
  return kExitOk;
}

int cmd_zeroshot(const RunConfig& cfg, const Options& o, std::ostream& out) {
  const auto ds = load_run_dataset(cfg);
  const Paths paths(cfg.workdir);
  const auto test = load_labelled(under(cfg, o.test.empty() ? cfg.eval.test_features : o.test), "test");
  EmbeddingMatrix texts;
  if (fs::exists(paths.class_texts())) {
    texts = load_matrix(paths.class_texts());
  } else {
    auto embedder = make_embedder(cfg, ds);
    texts = step_class_texts(cfg, ds, *embedder);
  }
  const auto r = step_eval(cfg, ds, Method::zeroshot, std::nullopt, nullptr, &texts, test);
  out << "zeroshot accuracy " << r.accuracy << "\n";
  write_run_record(cfg, "zeroshot", Json{{"config_digest", r.config_digest}});
  return kExitOk;
}

int cmd_eval(const RunConfig& cfg, const Options& o, std::ostream& out) {
  const auto ds = load_run_dataset(cfg);
  const Paths paths(cfg.workdir);
  const Method m = generation_method(o.method);
  const Classifier c = parse_classifier(o.classifier);
  const auto train = load_labelled(o.features.empty() ? paths.features(m) : under(cfg, o.features), "training");
  const auto test = load_labelled(under(cfg, o.test.empty() ? cfg.eval.test_features : o.test), "test");
  const auto r = step_eval(cfg, ds, m, c, &train, nullptr, test);
  out << r.method_label() << " accuracy " << r.accuracy << " (n_train " << r.n_train << ")\n";
  write_run_record(cfg, "eval-" + r.method_label(), Json{{"config_digest", r.config_digest}});
  return kExitOk;
}

int cmd_ablate(const RunConfig& cfg, const Options& o, std::ostream& out) {
  const auto ds = load_run_dataset(cfg);
  const auto test = load_labelled(under(cfg, o.test.empty() ? cfg.eval.test_features : o.test), "test");
  auto images = make_image_backend(cfg);
  auto embedder = make_embedder(cfg, ds);
  const auto rs =
      step_ablate(cfg, ds, parse_classifier(o.classifier), o.scales, o.allow_remainder, *images, *embedder, test);
  for (const auto& r : rs) out << "n_train " << r.n_train << " accuracy " << r.accuracy << "\n";
  write_run_record(cfg, "ablate", Json{{"scales", o.scales}});
  return kExitOk;
}

int cmd_report(const RunConfig& cfg, const Options& o, std::ostream& out) {
  std::vector<fs::path> files;
  for (const auto& r : o.results) files.push_back(under(cfg, r));
  if (files.empty()) files.push_back(Paths(cfg.workdir).results());
  const auto rendered = step_report(files, under(cfg, o.out.empty() ? "report/table.txt" : o.out),
                                    under(cfg, o.plot_data.empty() ? "report/curve.tsv" : o.plot_data));
  out << rendered.table;
  write_run_record(cfg, "report", Json::object());
  return kExitOk;
}

int cmd_demo(const RunConfig& cfg, const Options& o, std::ostream& out) {
  if (!o.mock) throw PreconditionError("demo needs --mock (it only runs on the bundled mock backends)");
  const auto report = run_demo(cfg, out);
  return report.failed_records > 0 ? kExitPartial : kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err) {
  CLI::App app{"Attribute-diverse synthetic training data for zero-shot classification.", "attrsyn"};
  app.require_subcommand(1);
  app.fallthrough();
  Options o;
  RunConfig cfg;
  const auto settings = config_settings(cfg);
  app.add_option("--workdir", o.workdir, "root for every relative path")->capture_default_str();
  app.add_option("--config", o.config_file, "TOML config file; flags override its values");
  auto* config_group = app.add_option_group("config", "settings, also accepted as section.key in the config file");
  for (const auto& s : settings) {
    config_group->add_option(s.flag, o.raw[s.key], s.help + " [" + s.current() + "]")->expected(1);
  }

  auto* elicit = app.add_subcommand("elicit", "propose attribute concepts with the language model");
  auto* review = app.add_subcommand("review", "review proposed concepts (terminal, or --serve for the HTTP API)");
  review->add_option("--session", o.session, "session id to create or resume");
  review->add_flag("--serve", o.serve, "serve the review API instead of prompting");
  review->add_option("--host", o.host)->capture_default_str();
  review->add_option("--port", o.port)->capture_default_str();
  review->add_option("--static-dir", o.static_dir, "browser UI build to serve at /");
  auto* values = app.add_subcommand("values", "elicit attribute values for the accepted concepts");
  values->add_option("--session", o.session, "export accepted concepts from this finalized session first");
  auto* plan = app.add_subcommand("plan", "sample a generation plan");
  plan->add_flag("--count-only", o.count_only, "print configurations per class and in total");
  plan->add_flag("--base", o.base, "plan base-prompt images instead");
  auto* generate = app.add_subcommand("generate", "render a plan's images");
  generate->add_option("--method", o.method, "attrsyn | base_prompt")->capture_default_str();
  auto* embed = app.add_subcommand("embed", "embed generated images, class texts, or a mock test set");
  embed->add_option("--method", o.method, "attrsyn | base_prompt")->capture_default_str();
  embed->add_flag("--class-texts", o.class_texts, "embed the zero-shot class texts");
  embed->add_flag("--mock-test-set", o.mock_test_set, "build the mock test set");
  auto* train = app.add_subcommand("train", "train a probe on a feature matrix");
  train->add_option("--model", o.model, "lr | mlp")->required()->check(CLI::IsMember({"lr", "mlp"}));
  train->add_option("--features", o.features, "labelled feature matrix")->required();
  train->add_option("--out", o.out, "model path");
  auto* zeroshot = app.add_subcommand("zeroshot", "evaluate the zero-shot baseline");
  zeroshot->add_option("--test", o.test, "test feature matrix");
  auto* eval = app.add_subcommand("eval", "train and evaluate a probe");
  eval->add_option("--method", o.method, "attrsyn | base_prompt")->capture_default_str();
  eval->add_option("--classifier", o.classifier, "lr | mlp")->capture_default_str()->check(CLI::IsMember({"lr", "mlp"}));
  eval->add_option("--features", o.features, "training features (default: the method's)");
  eval->add_option("--test", o.test, "test feature matrix");
  auto* ablate = app.add_subcommand("ablate", "synthetic-data scale ablation");
  ablate->add_option("--scales", o.scales, "total training images per point")->required()->delimiter(',');
  ablate->add_option("--classifier", o.classifier, "lr | mlp")->capture_default_str()->check(CLI::IsMember({"lr", "mlp"}));
  ablate->add_flag("--allow-remainder", o.allow_remainder, "allow scales that are not a multiple of the class count");
  ablate->add_option("--test", o.test, "test feature matrix");
  auto* report = app.add_subcommand("report", "render the results table and plot data");
  report->add_option("--results", o.results, "result files (default results.jsonl)");
  report->add_option("--out", o.out, "table path (default report/table.txt)");
  report->add_option("--plot-data", o.plot_data, "plot TSV path (default report/curve.tsv)");
  auto* demo = app.add_subcommand("demo", "run the whole pipeline on the bundled mock problem");
  demo->add_flag("--mock", o.mock, "use the mock backends (required)");

  std::vector<std::string> argv(args.rbegin(), args.rend());  // CLI11 consumes from the back
  try {
    app.parse(argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUserError;
  }

  try {
    cfg.workdir = o.workdir;
    if (!o.config_file.empty()) apply_config_text(cfg, read_text_file(o.config_file), o.config_file);
    auto settings_now = config_settings(cfg);
    for (const auto& s : settings_now) {
      const auto& v = o.raw[s.key];
      if (!v.empty()) s.assign(v);
    }
    cfg.probe.lr.seed = cfg.seed;
    cfg.probe.mlp.seed = cfg.seed;
    fs::create_directories(cfg.workdir);

    if (elicit->parsed()) return cmd_elicit(cfg, out);
    if (review->parsed()) return cmd_review(cfg, o, in, out);
    if (values->parsed()) return cmd_values(cfg, o, out);
    if (plan->parsed()) return cmd_plan(cfg, o, out);
    if (generate->parsed()) return cmd_generate(cfg, o, out);
    if (embed->parsed()) return cmd_embed(cfg, o, out);
    if (train->parsed()) return cmd_train(cfg, o, out);
    if (zeroshot->parsed()) return cmd_zeroshot(cfg, o, out);
    if (eval->parsed()) return cmd_eval(cfg, o, out);
    if (ablate->parsed()) return cmd_ablate(cfg, o, out);
    if (report->parsed()) return cmd_report(cfg, o, out);
    if (demo->parsed()) return cmd_demo(cfg, o, out);
    err << app.help();
    return kExitUserError;
  } catch (const BackendError& e) {
    err << "error: " << e.what() << "\n";
    return kExitPartial;
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return kExitPartial;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitUserError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitPartial;
  }
}

}  // namespace attrsyn
