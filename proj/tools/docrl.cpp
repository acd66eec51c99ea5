// docrl: command-line entry point for corpus generation, training,
// evaluation, experiment tables and the feedback service.

#include <csignal>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "docrl/checkpoint.hpp"
#include "docrl/config.hpp"
#include "docrl/corpus.hpp"
#include "docrl/evaluator.hpp"
#include "docrl/experiments.hpp"
#include "docrl/feedback.hpp"
#include "docrl/feedback_http.hpp"

#include <CLI11.hpp>

namespace fs = std::filesystem;
using namespace docrl;

namespace {

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kUsage = 2,
  kConfig = 3,
  kMissingInput = 4,
  kCorpusData = 5,
  kCheckpoint = 6,
  kDiverged = 7,
};

struct CommonOptions {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<uint64_t> seed;
  std::optional<std::string> experiment;
  std::optional<std::string> corpus;
  std::optional<double> fraction;
  std::optional<std::string> out;
  bool quiet = false;
};

void add_common(CLI::App* cmd, CommonOptions& o, bool config_required = true) {
  auto* c = cmd->add_option("-c,--config", o.config_path, "JSON run configuration");
  if (config_required) c->required();
  cmd->add_option("--set", o.overrides, "Override a configuration key, e.g. ppo.learning_rate=1e-4");
  cmd->add_option("--seed", o.seed, "Override the run seed");
  cmd->add_option("--experiment", o.experiment, "Override the experiment name");
  cmd->add_option("--corpus", o.corpus, "Corpus directory (replaces the generator section)");
  cmd->add_option("--fraction", o.fraction, "Training-data fraction in (0, 1]");
  cmd->add_option("--out", o.out, "Output directory (default: <output_dir>/<experiment>)");
  cmd->add_flag("-q,--quiet", o.quiet, "Suppress progress messages");
}

RunConfig resolve(const CommonOptions& o) {
  json doc = o.config_path.empty() ? json::object() : read_json_file(o.config_path);
  for (const auto& kv : o.overrides) apply_override(doc, kv);
  if (o.seed) doc["seed"] = *o.seed;
  if (o.experiment) doc["experiment"] = *o.experiment;
  if (o.fraction) doc["fraction"] = *o.fraction;
  if (o.corpus) {
    doc["corpus"] = json{{"path", *o.corpus}};
  }
  return RunConfig::from_json(doc);
}

fs::path output_root(const CommonOptions& o, const RunConfig& c) {
  return o.out ? fs::path(*o.out) : fs::path(c.output_dir) / c.experiment;
}

Progress progress_for(const CommonOptions& o) {
  if (o.quiet) return {};
  return [](const std::string& msg) { std::cerr << "[docrl] " << msg << std::endl; };
}

Corpus load_input_corpus(const RunConfig& c) {
  if (c.corpus_path && !fs::exists(*c.corpus_path)) {
    throw fs::filesystem_error("corpus not found", fs::path(*c.corpus_path),
                               std::make_error_code(std::errc::no_such_file_or_directory));
  }
  return obtain_corpus(c);
}

PolicyModel load_model(const std::string& path) { return load_checkpoint(path).model; }

const std::vector<Document>& split_of(const Corpus& corpus, const std::string& name) {
  if (name == "train") return corpus.train;
  if (name == "dev") return corpus.dev;
  if (name == "test") return corpus.test;
  throw ConfigError("unknown split '" + name + "' (expected train, dev or test)");
}

int cmd_gen(const CommonOptions& o, const std::string& out_dir, const GeneratorConfig& flags, bool flags_given) {
  GeneratorConfig g = flags;
  if (!o.config_path.empty()) {
    const RunConfig c = resolve(o);
    if (c.corpus_path) throw ConfigError("gen needs a corpus.generator section, not corpus.path");
    if (flags_given) throw ConfigError("gen: give either --config or generator flags, not both");
    g = c.generator;
  } else if (!o.seed) {
    throw ConfigError("gen: --seed is required when no configuration file is given");
  } else {
    g.seed = *o.seed;
  }
  const Corpus corpus = generate_synthetic_corpus(g);
  save_corpus(corpus, out_dir);
  write_text_file(fs::path(out_dir) / "generator.json", g.to_json().dump(2) + "\n");
  std::cout << "wrote " << out_dir << ": " << corpus.train.size() << " train, " << corpus.dev.size() << " dev, "
            << corpus.test.size() << " test documents, " << corpus.schema.fields.size() << " fields\n";
  return kOk;
}

int cmd_train_sl(const CommonOptions& o) {
  const RunConfig c = resolve(o);
  const Corpus full = load_input_corpus(c);
  const Corpus corpus = subset_fraction(full, c.fraction, c.seed);
  const fs::path dir = output_root(o, c) / cell_name(c.fraction, c.seed) / "sl";
  const SLCell cell = run_sl_cell(corpus, c, dir, progress_for(o));
  std::cout << format_report(cell.test) << "checkpoint: " << (dir / "sl.ckpt").string() << "\n";
  return kOk;
}

int cmd_finetune_rl(const CommonOptions& o, const std::string& checkpoint) {
  const RunConfig c = resolve(o);
  const Corpus full = load_input_corpus(c);
  const Corpus corpus = subset_fraction(full, c.fraction, c.seed);
  const PolicyModel start = load_model(checkpoint);
  const EvalReport baseline = evaluate(start, corpus.test, corpus.schema);
  const fs::path dir = output_root(o, c) / cell_name(c.fraction, c.seed) / "rl";
  const RLCell cell = run_rl_cell(corpus, start, c, c.rewards, baseline, dir, progress_for(o));
  std::cout << format_report(cell.test, &baseline) << "checkpoint: " << (dir / "rl.ckpt").string() << "\n";
  return kOk;
}

int cmd_eval(const CommonOptions& o, const std::string& checkpoint, const std::string& split,
             const std::optional<std::string>& baseline_ckpt) {
  const RunConfig c = resolve(o);
  const Corpus corpus = load_input_corpus(c);
  const auto& docs = split_of(corpus, split);
  if (docs.empty()) throw ConfigError("split '" + split + "' is empty");
  const EvalReport report = evaluate(load_model(checkpoint), docs, corpus.schema);
  std::optional<EvalReport> baseline;
  if (baseline_ckpt) baseline = evaluate(load_model(*baseline_ckpt), docs, corpus.schema);
  const fs::path dir = output_root(o, c) / ("eval_" + split);
  write_text_file(dir / "config.json", c.to_json().dump(2) + "\n");
  write_report(dir, report, baseline ? &*baseline : nullptr);
  std::cout << format_report(report, baseline ? &*baseline : nullptr);
  return kOk;
}

int cmd_sweep(const CommonOptions& o, const std::vector<double>& fractions) {
  RunConfig c = resolve(o);
  if (!fractions.empty()) c.sweep_fractions = fractions;
  for (double f : c.sweep_fractions) {
    if (!(f > 0.0 && f <= 1.0)) throw ConfigError("--fractions entries must lie in (0, 1]");
  }
  const Corpus full = load_input_corpus(c);
  const fs::path root = output_root(o, c);
  write_text_file(root / "config.json", c.to_json().dump(2) + "\n");
  const auto rows = run_sweep(full, c, root, progress_for(o));
  std::cout << format_sweep_table(rows);
  return kOk;
}

int cmd_ablate(const CommonOptions& o) {
  const RunConfig c = resolve(o);
  const Corpus full = load_input_corpus(c);
  const fs::path root = output_root(o, c);
  write_text_file(root / "config.json", c.to_json().dump(2) + "\n");
  const auto rows = run_ablation(full, c, root, progress_for(o));
  std::cout << format_ablation_table(rows);
  long violations = 0;
  for (const auto& r : rows) violations += r.breakdown_violations;
  if (violations > 0) {
    std::cerr << "reward breakdown invariant violated on " << violations << " logged steps\n";
    return kFailure;
  }
  return kOk;
}

struct FeedbackOptions {
  std::optional<std::string> checkpoint;
  std::optional<int> sets;
  std::optional<int> docs_per_set;
  std::optional<int> interactions;
  std::optional<std::string> log;
  bool via_http = false;
};

RunConfig resolve_feedback(const CommonOptions& o, const FeedbackOptions& f) {
  RunConfig c = resolve(o);
  if (f.sets) c.feedback.n_sets = *f.sets;
  if (f.docs_per_set) c.feedback.docs_per_set = *f.docs_per_set;
  if (f.interactions) c.feedback.interactions = *f.interactions;
  try {
    c.feedback.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return c;
}

// Start model for feedback sessions: the given checkpoint, or a supervised
// model trained at the configured fraction.
PolicyModel feedback_start_model(const CommonOptions& o, const FeedbackOptions& f, const RunConfig& c,
                                 const Corpus& full, const fs::path& root) {
  if (f.checkpoint) return load_model(*f.checkpoint);
  const Corpus corpus = subset_fraction(full, c.fraction, c.seed);
  return run_sl_cell(corpus, c, root / "sl", progress_for(o)).model;
}

int cmd_simulate_feedback(const CommonOptions& o, const FeedbackOptions& f) {
  const RunConfig c = resolve_feedback(o, f);
  auto corpus = std::make_shared<const Corpus>(load_input_corpus(c));
  const fs::path root = output_root(o, c);
  write_text_file(root / "config.json", c.to_json().dump(2) + "\n");
  PolicyModel start = feedback_start_model(o, f, c, *corpus, root);
  const fs::path log = f.log ? fs::path(*f.log) : root / "feedback.log.jsonl";
  if (fs::exists(log)) fs::remove(log);
  FeedbackService service(corpus, std::move(start), c.feedback, log);
  std::vector<FeedbackCurve> curves;
  if (f.via_http) {
    httplib::Server server;
    register_feedback_routes(server, service);
    const int port = server.bind_to_any_port("127.0.0.1");
    std::thread worker([&] { server.listen_after_bind(); });
    server.wait_until_ready();
    try {
      HttpFeedbackApi api("127.0.0.1", port);
      curves = run_simulated_feedback(api, *corpus, c.feedback);
    } catch (...) {
      server.stop();
      worker.join();
      throw;
    }
    server.stop();
    worker.join();
  } else {
    InProcessFeedbackApi api(service);
    curves = run_simulated_feedback(api, *corpus, c.feedback);
  }
  const std::string table = format_feedback_table(curves);
  write_text_file(root / "table.txt", table);
  write_text_file(root / "curves.json", feedback_json(curves).dump(2) + "\n");
  std::cout << table;
  return kOk;
}

httplib::Server* g_server = nullptr;

int cmd_serve_feedback(const CommonOptions& o, const FeedbackOptions& f, const std::string& host, int port,
                       const std::optional<std::string>& static_dir) {
  const RunConfig c = resolve_feedback(o, f);
  auto corpus = std::make_shared<const Corpus>(load_input_corpus(c));
  const fs::path root = output_root(o, c);
  write_text_file(root / "config.json", c.to_json().dump(2) + "\n");
  PolicyModel start = feedback_start_model(o, f, c, *corpus, root);
  const fs::path log = f.log ? fs::path(*f.log) : root / "feedback.log.jsonl";
  FeedbackService service(corpus, std::move(start), c.feedback, log);
  httplib::Server server;
  register_feedback_routes(server, service, static_dir ? std::optional<fs::path>(*static_dir) : std::nullopt);
  g_server = &server;
  std::signal(SIGINT, [](int) {
    if (g_server) g_server->stop();
  });
  std::signal(SIGTERM, [](int) {
    if (g_server) g_server->stop();
  });
  if (!server.bind_to_port(host, port)) {
    std::cerr << "cannot bind " << host << ":" << port << "\n";
    return kFailure;
  }
  std::cerr << "[docrl] feedback service on http://" << host << ":" << port << " (base test F1 "
            << fixed2(100 * service.base_f1()) << ", log " << log.string() << ")" << std::endl;
  server.listen_after_bind();
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reinforcement finetuning for span-based document information extraction"};
  app.require_subcommand(1);

  CommonOptions common;

  auto* gen = app.add_subcommand("gen", "Generate a synthetic corpus directory");
  std::string gen_out;
  GeneratorConfig gen_flags;
  add_common(gen, common, false);
  gen->add_option("--corpus-out,-o", gen_out, "Directory to write")->required();
  gen->add_option("--n-fields", gen_flags.n_fields);
  gen->add_option("--n-train", gen_flags.n_train);
  gen->add_option("--n-dev", gen_flags.n_dev);
  gen->add_option("--n-test", gen_flags.n_test);
  gen->add_option("--min-tokens", gen_flags.min_tokens);
  gen->add_option("--max-tokens", gen_flags.max_tokens);

  auto* train_sl = app.add_subcommand("train-sl", "Supervised training on a corpus fraction");
  add_common(train_sl, common);

  auto* finetune_rl = app.add_subcommand("finetune-rl", "PPO finetuning from a supervised checkpoint");
  std::string rl_checkpoint;
  add_common(finetune_rl, common);
  finetune_rl->add_option("--checkpoint", rl_checkpoint, "Supervised checkpoint")->required();

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a split");
  std::string eval_checkpoint;
  std::string eval_split = "test";
  std::optional<std::string> eval_baseline;
  add_common(eval, common);
  eval->add_option("--checkpoint", eval_checkpoint, "Checkpoint to evaluate")->required();
  eval->add_option("--split", eval_split, "train, dev or test");
  eval->add_option("--baseline", eval_baseline, "Checkpoint for the dF1 column");

  auto* ablate = app.add_subcommand("ablate", "Reward-component ablation table");
  add_common(ablate, common);

  auto* sweep = app.add_subcommand("sweep", "SL vs SL+RL across training-data fractions");
  std::vector<double> sweep_fractions;
  add_common(sweep, common);
  sweep->add_option("--fractions", sweep_fractions, "Fractions, e.g. 0.02 0.05 0.1 1.0");

  FeedbackOptions fb;
  auto add_feedback = [&](CLI::App* cmd) {
    add_common(cmd, common);
    cmd->add_option("--checkpoint", fb.checkpoint, "Start model (default: train SL at the configured fraction)");
    cmd->add_option("--sets", fb.sets, "Number of document sets (default 5)");
    cmd->add_option("--docs-per-set", fb.docs_per_set, "Documents per set (default 4)");
    cmd->add_option("--interactions", fb.interactions, "Interaction rounds per session (default 3)");
    cmd->add_option("--log", fb.log, "Append-only session log (JSONL)");
  };

  auto* serve = app.add_subcommand("serve-feedback", "HTTP service for expert feedback sessions");
  std::string host = "127.0.0.1";
  int port = 8080;
  std::optional<std::string> static_dir;
  add_feedback(serve);
  serve->add_option("--host", host);
  serve->add_option("--port", port);
  serve->add_option("--static", static_dir, "Directory with the browser frontend bundle");

  auto* simulate = app.add_subcommand("simulate-feedback", "Feedback sessions driven by the simulated expert");
  add_feedback(simulate);
  simulate->add_flag("--via-http", fb.via_http, "Drive the sessions over a loopback HTTP server");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }

  try {
    if (*gen) {
      const bool flags_given = gen->count("--n-fields") + gen->count("--n-train") + gen->count("--n-dev") +
                                   gen->count("--n-test") + gen->count("--min-tokens") + gen->count("--max-tokens") >
                               0;
      return cmd_gen(common, gen_out, gen_flags, flags_given);
    }
    if (*train_sl) return cmd_train_sl(common);
    if (*finetune_rl) return cmd_finetune_rl(common, rl_checkpoint);
    if (*eval) return cmd_eval(common, eval_checkpoint, eval_split, eval_baseline);
    if (*ablate) return cmd_ablate(common);
    if (*sweep) return cmd_sweep(common, sweep_fractions);
    if (*serve) return cmd_serve_feedback(common, fb, host, port, static_dir);
    if (*simulate) return cmd_simulate_feedback(common, fb);
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kConfig;
  } catch (const std::invalid_argument& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kConfig;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "missing input: " << e.path1().string() << "\n";
    return kMissingInput;
  } catch (const CorpusParseError& e) {
    std::cerr << "corpus error: " << e.what() << "\n";
    return kCorpusData;
  } catch (const CorpusInvariantError& e) {
    std::cerr << "corpus error: " << e.what() << "\n";
    return kCorpusData;
  } catch (const CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
    return e.kind() == CheckpointError::Kind::kMissing ? kMissingInput : kCheckpoint;
  } catch (const TrainingDiverged& e) {
    std::cerr << "training diverged: " << e.what() << "\n" << e.diagnostic().dump(2) << "\n";
    return kDiverged;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kFailure;
}
