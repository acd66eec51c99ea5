#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "docrl/checkpoint.hpp"
#include "docrl/config.hpp"
#include "docrl/corpus.hpp"
#include "docrl/evaluator.hpp"
#include "docrl/feedback.hpp"
#include "docrl/ppo.hpp"
#include "docrl/sl_trainer.hpp"

namespace docrl {

namespace fs = std::filesystem;

using Progress = std::function<void(const std::string&)>;

inline Corpus obtain_corpus(const RunConfig& c) {
  if (c.corpus_path) return load_corpus(*c.corpus_path);
  return generate_synthetic_corpus(c.generator);
}

inline std::string fraction_label(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g%%", 100.0 * fraction);
  return buf;
}

inline std::string cell_name(double fraction, uint64_t seed) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "frac%g_seed%llu", fraction, static_cast<unsigned long long>(seed));
  return buf;
}

inline std::string jsonl(const std::vector<json>& records) {
  std::string out;
  for (const auto& r : records) out += r.dump() + "\n";
  return out;
}

// Wall-clock time goes to its own file so that every other output is a
// pure function of the configuration.
class Stopwatch {
 public:
  double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count(); }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

inline void write_report(const fs::path& dir, const EvalReport& report, const EvalReport* baseline = nullptr) {
  write_text_file(dir / "report.json", report.to_json().dump(2) + "\n");
  write_text_file(dir / "report.txt", format_report(report, baseline));
}

struct SLCell {
  PolicyModel model;
  EvalReport test;
  int best_epoch = 0;
};

// Supervised training on `corpus` (already subsampled); writes sl.ckpt,
// metrics.jsonl, report.{json,txt}, config.json and timing.json into `dir`.
inline SLCell run_sl_cell(const Corpus& corpus, const RunConfig& c, const fs::path& dir, const Progress& progress = {}) {
  Stopwatch clock;
  write_text_file(dir / "config.json", c.to_json().dump(2) + "\n");
  std::vector<json> epochs;
  const SLResult r = train_supervised(corpus, c.model, c.sl, [&](const EpochRecord& e) {
    epochs.push_back(e.to_json());
    if (progress && (e.epoch % 10 == 0)) progress("sl epoch " + std::to_string(e.epoch) + " loss " + std::to_string(e.loss));
  });
  SLCell cell{r.model, evaluate(r.model, corpus.test, corpus.schema), r.best_epoch};
  save_checkpoint(cell.model, dir / "sl.ckpt", "sl");
  write_text_file(dir / "metrics.jsonl", jsonl(epochs));
  write_report(dir, cell.test);
  write_text_file(dir / "timing.json", json{{"wall_seconds", clock.seconds()}}.dump() + "\n");
  return cell;
}

struct RLCell {
  PolicyModel model;
  EvalReport test;
  long steps = 0;
  long logged_steps = 0;
  long breakdown_violations = 0;
};

// PPO finetuning from `start`; writes rl.ckpt, rounds.jsonl (one record per
// update round), report.{json,txt} with dF1 against `baseline`, config.json
// and timing.json.
inline RLCell run_rl_cell(const Corpus& corpus, const PolicyModel& start, const RunConfig& c, const RewardConfig& rewards,
                          const EvalReport& baseline, const fs::path& dir, const Progress& progress = {}) {
  Stopwatch clock;
  write_text_file(dir / "config.json", c.to_json().dump(2) + "\n");
  RLCell cell;
  std::vector<json> rounds;
  const RLResult r = finetune(start, corpus, c.ppo, rewards, [&](const RoundRecord& rec, const std::vector<Trajectory>& batch) {
    for (const auto& tau : batch) {
      for (const auto& tr : tau.steps) {
        ++cell.logged_steps;
        if (!tr.breakdown.consistent(rewards.weights)) ++cell.breakdown_violations;
      }
    }
    rounds.push_back(rec.to_json());
    if (progress && rec.round % 50 == 0) {
      progress("rl round " + std::to_string(rec.round) + " mean reward " + std::to_string(rec.mean_reward));
    }
  });
  cell.model = r.model;
  cell.steps = r.steps;
  cell.test = evaluate(cell.model, corpus.test, corpus.schema);
  save_checkpoint(cell.model, dir / "rl.ckpt", "rl");
  write_text_file(dir / "rounds.jsonl", jsonl(rounds));
  write_report(dir, cell.test, &baseline);
  write_text_file(dir / "timing.json",
                  json{{"wall_seconds", clock.seconds()}, {"steps", r.steps}, {"warmup_steps", r.warmup_steps}}.dump() +
                      "\n");
  return cell;
}

struct MeanReport {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

inline MeanReport mean_of(const std::vector<EvalReport>& reports) {
  MeanReport m;
  for (const auto& r : reports) {
    m.precision += r.precision;
    m.recall += r.recall;
    m.f1 += r.f1;
  }
  const double n = static_cast<double>(reports.size());
  m.precision /= n;
  m.recall /= n;
  m.f1 /= n;
  return m;
}

inline json mean_json(const MeanReport& m) {
  return json{{"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1}};
}

// ---- sweep: fractions x {SL, SL+RL} -------------------------------------

struct SweepRow {
  double fraction = 0.0;
  std::vector<EvalReport> sl;  // one per seed
  std::vector<EvalReport> rl;
  MeanReport sl_mean() const { return mean_of(sl); }
  MeanReport rl_mean() const { return mean_of(rl); }
  double delta_f1() const { return rl_mean().f1 - sl_mean().f1; }
};

inline std::string format_sweep_table(const std::vector<SweepRow>& rows) {
  std::string out;
  char line[256];
  std::snprintf(line, sizeof(line), "%-9s | %9s %9s %9s | %9s %9s %9s %9s\n", "", "Original", "SL", "", "+RL", "", "",
                "");
  out += line;
  std::snprintf(line, sizeof(line), "%-9s | %9s %9s %9s | %9s %9s %9s %9s\n", "Fraction", "Precision", "Recall", "F1",
                "Precision", "Recall", "F1", "dF1");
  out += line;
  for (const auto& r : rows) {
    const MeanReport s = r.sl_mean();
    const MeanReport l = r.rl_mean();
    std::snprintf(line, sizeof(line), "%-9s | %9s %9s %9s | %9s %9s %9s %9s\n", fraction_label(r.fraction).c_str(),
                  fixed2(100 * s.precision).c_str(), fixed2(100 * s.recall).c_str(), fixed2(100 * s.f1).c_str(),
                  fixed2(100 * l.precision).c_str(), fixed2(100 * l.recall).c_str(), fixed2(100 * l.f1).c_str(),
                  fixed2(100 * r.delta_f1()).c_str());
    out += line;
  }
  return out;
}

inline json sweep_json(const std::vector<SweepRow>& rows, const std::vector<uint64_t>& seeds) {
  json out = json::array();
  for (const auto& r : rows) {
    json per_seed = json::array();
    for (size_t i = 0; i < r.sl.size(); ++i) {
      per_seed.push_back({{"seed", seeds[i]}, {"sl_f1", r.sl[i].f1}, {"rl_f1", r.rl[i].f1}});
    }
    out.push_back({{"fraction", r.fraction},
                   {"sl", mean_json(r.sl_mean())},
                   {"rl", mean_json(r.rl_mean())},
                   {"delta_f1", r.delta_f1()},
                   {"per_seed", per_seed}});
  }
  return out;
}

// For every fraction and seed: subsample, supervised training, PPO
// finetuning. Results are averaged over seeds.
inline std::vector<SweepRow> run_sweep(const Corpus& full, const RunConfig& base, const fs::path& root,
                                       const Progress& progress = {}) {
  std::vector<SweepRow> rows;
  for (double fraction : base.sweep_fractions) {
    SweepRow row;
    row.fraction = fraction;
    for (uint64_t seed : base.seeds) {
      RunConfig c = base;
      c.apply_seed(seed);
      c.fraction = fraction;
      const fs::path dir = root / cell_name(fraction, seed);
      if (progress) progress("cell " + cell_name(fraction, seed));
      const Corpus corpus = subset_fraction(full, fraction, seed);
      const SLCell sl = run_sl_cell(corpus, c, dir / "sl", progress);
      const RLCell rl = run_rl_cell(corpus, sl.model, c, c.rewards, sl.test, dir / "rl", progress);
      row.sl.push_back(sl.test);
      row.rl.push_back(rl.test);
      if (progress) {
        progress("  SL F1 " + fixed2(100 * sl.test.f1) + "  SL+RL F1 " + fixed2(100 * rl.test.f1));
      }
    }
    rows.push_back(std::move(row));
  }
  write_text_file(root / "table.txt", format_sweep_table(rows));
  write_text_file(root / "table.json", sweep_json(rows, base.seeds).dump(2) + "\n");
  return rows;
}

// ---- ablate: reward components ------------------------------------------

struct AblationRow {
  std::string label;
  std::vector<EvalReport> reports;  // one per seed
  long breakdown_violations = 0;
  long logged_steps = 0;
};

struct AblationVariant {
  std::string label;
  std::string cell;
  RewardWeights weights;
};

// Row order: SL model, one row per zeroed component, full unified reward.
inline std::vector<AblationVariant> ablation_variants(const RewardWeights& full) {
  RewardWeights no_string = full, no_location = full, no_label = full, no_semantic = full;
  no_string.string = 0.0;
  no_location.location = 0.0;
  no_label.label = 0.0;
  no_semantic.semantic = 0.0;
  return {{"w/o string matching", "no-string", no_string},
          {"w/o location", "no-location", no_location},
          {"w/o label", "no-label", no_label},
          {"w/o semantic", "no-semantic", no_semantic},
          {"Full unified reward", "full", full}};
}

inline std::string format_ablation_table(const std::vector<AblationRow>& rows) {
  std::string out;
  char line[256];
  std::snprintf(line, sizeof(line), "%-22s %10s %10s %10s %10s\n", "Model", "Precision", "Recall", "F1", "dF1");
  out += line;
  const double base = mean_of(rows.front().reports).f1;
  for (size_t i = 0; i < rows.size(); ++i) {
    const MeanReport m = mean_of(rows[i].reports);
    const std::string delta = i == 0 ? std::string("-") : fixed2(100 * (m.f1 - base));
    std::snprintf(line, sizeof(line), "%-22s %10s %10s %10s %10s\n", rows[i].label.c_str(),
                  fixed2(100 * m.precision).c_str(), fixed2(100 * m.recall).c_str(), fixed2(100 * m.f1).c_str(),
                  delta.c_str());
    out += line;
  }
  return out;
}

inline json ablation_json(const std::vector<AblationRow>& rows) {
  json out = json::array();
  const double base = mean_of(rows.front().reports).f1;
  for (size_t i = 0; i < rows.size(); ++i) {
    const MeanReport m = mean_of(rows[i].reports);
    json row{{"model", rows[i].label}, {"mean", mean_json(m)}};
    row["delta_f1"] = i == 0 ? json(nullptr) : json(m.f1 - base);
    json per_seed = json::array();
    for (const auto& r : rows[i].reports) per_seed.push_back(r.f1);
    row["per_seed_f1"] = per_seed;
    if (i > 0) {
      row["logged_steps"] = rows[i].logged_steps;
      row["breakdown_violations"] = rows[i].breakdown_violations;
    }
    out.push_back(row);
  }
  return out;
}

// One supervised model per seed at `fraction`, then PPO finetuning with the
// full reward and with each component zeroed in turn.
inline std::vector<AblationRow> run_ablation(const Corpus& full, const RunConfig& base, const fs::path& root,
                                             const Progress& progress = {}) {
  const auto variants = ablation_variants(base.rewards.weights);
  std::vector<AblationRow> rows(1 + variants.size());
  rows[0].label = "SL model";
  for (size_t v = 0; v < variants.size(); ++v) rows[v + 1].label = variants[v].label;
  for (uint64_t seed : base.seeds) {
    RunConfig c = base;
    c.apply_seed(seed);
    const fs::path dir = root / cell_name(c.fraction, seed);
    const Corpus corpus = subset_fraction(full, c.fraction, seed);
    if (progress) progress("cell " + cell_name(c.fraction, seed) + " sl");
    const SLCell sl = run_sl_cell(corpus, c, dir / "sl", progress);
    rows[0].reports.push_back(sl.test);
    for (size_t v = 0; v < variants.size(); ++v) {
      RunConfig cv = c;
      cv.rewards.weights = variants[v].weights;
      if (progress) progress("cell " + cell_name(c.fraction, seed) + " " + variants[v].cell);
      const RLCell rl = run_rl_cell(corpus, sl.model, cv, cv.rewards, sl.test, dir / variants[v].cell, progress);
      rows[v + 1].reports.push_back(rl.test);
      rows[v + 1].logged_steps += rl.logged_steps;
      rows[v + 1].breakdown_violations += rl.breakdown_violations;
    }
  }
  write_text_file(root / "table.txt", format_ablation_table(rows));
  write_text_file(root / "table.json", ablation_json(rows).dump(2) + "\n");
  return rows;
}

// ---- simulate-feedback --------------------------------------------------

inline double mean_value(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

inline double population_std(const std::vector<double>& v) {
  const double m = mean_value(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return v.empty() ? 0.0 : std::sqrt(s / static_cast<double>(v.size()));
}

inline std::string format_feedback_table(const std::vector<FeedbackCurve>& curves) {
  std::string out;
  char line[512];
  std::snprintf(line, sizeof(line), "%-12s %10s %10s %10s", "Interaction", "Mean F1", "Std", "dF1");
  out += line;
  for (const auto& c : curves) {
    std::snprintf(line, sizeof(line), " %10s", ("set" + std::to_string(c.set)).c_str());
    out += line;
  }
  out += "\n";
  const size_t n_points = curves.empty() ? 0 : curves.front().test_f1.size();
  std::vector<double> start;
  for (const auto& c : curves) start.push_back(c.test_f1.front());
  for (size_t i = 0; i < n_points; ++i) {
    std::vector<double> v;
    for (const auto& c : curves) v.push_back(c.test_f1[i]);
    std::snprintf(line, sizeof(line), "%-12zu %10s %10s %10s", i, fixed2(100 * mean_value(v)).c_str(),
                  fixed2(100 * population_std(v)).c_str(), fixed2(100 * (mean_value(v) - mean_value(start))).c_str());
    out += line;
    for (double x : v) {
      std::snprintf(line, sizeof(line), " %10s", fixed2(100 * x).c_str());
      out += line;
    }
    out += "\n";
  }
  return out;
}

inline json feedback_json(const std::vector<FeedbackCurve>& curves) {
  json sessions = json::array();
  for (const auto& c : curves) {
    sessions.push_back({{"session_id", c.session_id},
                        {"set", c.set},
                        {"test_f1", c.test_f1},
                        {"mean_reward", c.mean_reward},
                        {"n_selections", c.n_selections},
                        {"n_no_good", c.n_no_good}});
  }
  return json{{"sessions", sessions}};
}

}  // namespace docrl
