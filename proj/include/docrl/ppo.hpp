#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "docrl/autodiff.hpp"
#include "docrl/corpus.hpp"
#include "docrl/evaluator.hpp"
#include "docrl/model.hpp"
#include "docrl/rewards.hpp"
#include "docrl/rng.hpp"
#include "docrl/sl_trainer.hpp"

namespace docrl {

struct PPOConfig {
  double learning_rate = 1e-6;
  double gamma = 0.95;
  double clip_eps = 0.2;
  double gae_lambda = 0.95;
  int docs_per_batch = 8;
  int optim_epochs_per_batch = 4;
  double value_loss_coef = 0.5;
  double value_learning_rate = 1e-3;  // separate optimizer for the value head
  int value_warmup_rounds = 10;       // value-only rounds before the first policy update
  int lr_warmup_rounds = 0;           // policy learning rate ramps up linearly over these rounds
  long n_max = 100000;                // question-steps
  int eval_every = 20;  // update rounds
  bool normalize_advantages = true;
  bool center_per_question = true;  // zero-mean advantages per question index
  double advantage_std_floor = 0.0;  // lower bound on the normalizing std
  uint64_t seed = 0;

  void validate() const {
    if (!(gamma > 0.0 && gamma <= 1.0)) throw std::invalid_argument("PPOConfig: need 0 < gamma <= 1");
    if (!(clip_eps > 0.0 && clip_eps < 1.0)) throw std::invalid_argument("PPOConfig: need 0 < clip_eps < 1");
    if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0)) throw std::invalid_argument("PPOConfig: need 0 <= gae_lambda <= 1");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("PPOConfig: learning_rate must be > 0");
    if (!(value_learning_rate > 0.0)) throw std::invalid_argument("PPOConfig: value_learning_rate must be > 0");
    if (value_warmup_rounds < 0 || lr_warmup_rounds < 0) {
      throw std::invalid_argument("PPOConfig: warm-up round counts must be >= 0");
    }
    if (docs_per_batch < 1 || optim_epochs_per_batch < 1 || eval_every < 1) {
      throw std::invalid_argument("PPOConfig: batch, epoch and eval counts must be >= 1");
    }
    if (n_max < 0) throw std::invalid_argument("PPOConfig: n_max must be >= 0");
    if (!(advantage_std_floor >= 0.0)) throw std::invalid_argument("PPOConfig: advantage_std_floor must be >= 0");
  }

  json to_json() const {
    return json{{"learning_rate", learning_rate},
                {"gamma", gamma},
                {"clip_eps", clip_eps},
                {"gae_lambda", gae_lambda},
                {"docs_per_batch", docs_per_batch},
                {"optim_epochs_per_batch", optim_epochs_per_batch},
                {"value_loss_coef", value_loss_coef},
                {"value_learning_rate", value_learning_rate},
                {"value_warmup_rounds", value_warmup_rounds},
                {"lr_warmup_rounds", lr_warmup_rounds},
                {"n_max", n_max},
                {"eval_every", eval_every},
                {"normalize_advantages", normalize_advantages},
                {"center_per_question", center_per_question},
                {"advantage_std_floor", advantage_std_floor},
                {"seed", seed}};
  }
  static PPOConfig from_json(const json& j) {
    PPOConfig c;
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.gamma = j.value("gamma", c.gamma);
    c.clip_eps = j.value("clip_eps", c.clip_eps);
    c.gae_lambda = j.value("gae_lambda", c.gae_lambda);
    c.docs_per_batch = j.value("docs_per_batch", c.docs_per_batch);
    c.optim_epochs_per_batch = j.value("optim_epochs_per_batch", c.optim_epochs_per_batch);
    c.value_loss_coef = j.value("value_loss_coef", c.value_loss_coef);
    c.value_learning_rate = j.value("value_learning_rate", c.value_learning_rate);
    c.value_warmup_rounds = j.value("value_warmup_rounds", c.value_warmup_rounds);
    c.lr_warmup_rounds = j.value("lr_warmup_rounds", c.lr_warmup_rounds);
    c.n_max = j.value("n_max", c.n_max);
    c.eval_every = j.value("eval_every", c.eval_every);
    c.normalize_advantages = j.value("normalize_advantages", c.normalize_advantages);
    c.center_per_question = j.value("center_per_question", c.center_per_question);
    c.advantage_std_floor = j.value("advantage_std_floor", c.advantage_std_floor);
    c.seed = j.value("seed", c.seed);
    c.validate();
    return c;
  }
};

// Reward weights plus the sentence encoder behind the semantic component.
struct RewardConfig {
  RewardWeights weights;
  std::shared_ptr<const SentenceEncoder> encoder = std::make_shared<StandInEncoder>();

  json to_json() const {
    return json{{"weights", weights.to_json()}, {"encoder", {{"kind", encoder->name()}, {"hash_dim", encoder->dim()}}}};
  }
  static RewardConfig from_json(const json& j) {
    RewardConfig c;
    if (j.contains("weights")) c.weights = RewardWeights::from_json(j.at("weights"));
    if (j.contains("encoder")) c.encoder = make_encoder(j.at("encoder"));
    return c;
  }
};

struct Transition {
  const Document* doc = nullptr;
  std::string question;
  SpanAction action;
  double reward = 0.0;
  RewardBreakdown breakdown;
  double log_prob_old = 0.0;
  double value_old = 0.0;
  int t = 0;
};

struct Trajectory {
  std::vector<Transition> steps;
};

struct AdvantageEstimate {
  std::vector<std::vector<double>> advantages;  // aligned with trajectories/steps
  std::vector<std::vector<double>> returns;
};

// Samples one action per schema question for each document, in schema order.
// `steps` advances by one per question.
inline std::vector<Trajectory> collect_trajectories(const PolicyModel& model, const std::vector<const Document*>& docs,
                                                    const FieldSchema& schema, const RewardConfig& rewards, Rng& rng,
                                                    long& steps) {
  std::vector<Trajectory> out;
  out.reserve(docs.size());
  for (const Document* doc : docs) {
    const auto pass = model.run(*doc, schema.fields);
    Trajectory tau;
    for (size_t f = 0; f < schema.fields.size(); ++f) {
      const std::string& q = schema.fields[f];
      const SampledAction s = sample_action(pass.dists[f], rng);
      Transition tr;
      tr.doc = doc;
      tr.question = q;
      tr.action = s.action;
      tr.log_prob_old = s.log_prob;
      tr.value_old = pass.values[f];
      tr.t = static_cast<int>(f);
      tr.breakdown = unified_reward(*doc, s.action, gold_span(*doc, q), q, rewards.weights, *rewards.encoder);
      tr.reward = tr.breakdown.total;
      tau.steps.push_back(std::move(tr));
      ++steps;
    }
    out.push_back(std::move(tau));
  }
  return out;
}

// GAE(gamma, lambda) with V = 0 past the end of each trajectory; returns are
// advantage + value. With `normalize`, advantages are shifted to zero mean
// (per question index Transition::t when `per_question`, otherwise over the
// whole batch)
// and scaled to unit variance over the batch, dividing by at least
// `std_floor`. Returns are not normalized.
inline AdvantageEstimate compute_advantages(const std::vector<Trajectory>& trajectories, double gamma, double lambda,
                                            bool normalize = false, bool per_question = false,
                                            double std_floor = 0.0) {
  AdvantageEstimate est;
  for (const auto& tau : trajectories) {
    const size_t n = tau.steps.size();
    std::vector<double> adv(n), ret(n);
    double running = 0.0;
    for (size_t k = n; k-- > 0;) {
      const double next_value = (k + 1 < n) ? tau.steps[k + 1].value_old : 0.0;
      const double delta = tau.steps[k].reward + gamma * next_value - tau.steps[k].value_old;
      running = delta + gamma * lambda * running;
      adv[k] = running;
      ret[k] = running + tau.steps[k].value_old;
    }
    est.advantages.push_back(std::move(adv));
    est.returns.push_back(std::move(ret));
  }
  if (!normalize) return est;

  std::map<int, std::pair<double, size_t>> groups;  // question index -> (sum, count)
  size_t count = 0;
  for (size_t i = 0; i < trajectories.size(); ++i) {
    const auto& a = est.advantages[i];
    for (size_t k = 0; k < a.size(); ++k) {
      auto& g = groups[per_question ? trajectories[i].steps[k].t : 0];
      g.first += a[k];
      ++g.second;
      ++count;
    }
  }
  if (count == 0) return est;
  double sq = 0.0;
  for (size_t i = 0; i < trajectories.size(); ++i) {
    auto& a = est.advantages[i];
    for (size_t k = 0; k < a.size(); ++k) {
      const auto& g = groups[per_question ? trajectories[i].steps[k].t : 0];
      a[k] -= g.first / static_cast<double>(g.second);
      sq += a[k] * a[k];
    }
  }
  const double stddev = std::max(std::sqrt(sq / static_cast<double>(count)), std_floor);
  for (auto& a : est.advantages) {
    for (double& v : a) v = stddev > 1e-8 ? v / stddev : 0.0;
  }
  return est;
}

struct SurrogateStats {
  double surrogate = 0.0;   // J: mean clipped objective
  double value_loss = 0.0;  // mean (V - return)^2
  double loss = 0.0;        // -J + c * value_loss
  double clip_fraction = 0.0;
  double mean_ratio = 0.0;
  size_t n = 0;
};

inline bool is_value_parameter(const ad::Parameter& p) { return p.name.starts_with("value."); }
inline bool is_policy_parameter(const ad::Parameter& p) { return !is_value_parameter(p); }

// Evaluates the PPO objective at the model's current parameters against the
// cached old log-probabilities. With `backward`, gradients of
// -policy_coef * J + value_loss_coef * value_loss are accumulated into the model.
inline SurrogateStats ppo_objective(PolicyModel& model, const std::vector<Trajectory>& trajectories,
                                    const AdvantageEstimate& adv, double clip_eps, double value_loss_coef,
                                    bool backward, double policy_coef = 1.0) {
  SurrogateStats stats;
  for (const auto& tau : trajectories) stats.n += tau.steps.size();
  if (stats.n == 0) return stats;
  const double inv_n = 1.0 / static_cast<double>(stats.n);
  double clipped = 0.0;
  for (size_t i = 0; i < trajectories.size(); ++i) {
    const auto& tau = trajectories[i];
    if (tau.steps.empty()) continue;
    Tape t;
    Var hidden = model.encode(t, *tau.steps.front().doc);
    std::vector<Var> terms;
    for (size_t k = 0; k < tau.steps.size(); ++k) {
      const Transition& tr = tau.steps[k];
      const double a = adv.advantages[i][k];
      const HeadOutputs h = model.heads(t, hidden, model.question(t, tr.question));
      Var logp = PolicyModel::action_log_prob(h, tr.action);
      const double ratio = std::exp(logp.scalar() - tr.log_prob_old);
      stats.mean_ratio += ratio * inv_n;
      if (ratio < 1.0 - clip_eps || ratio > 1.0 + clip_eps) clipped += 1.0;
      Var term = ad::clipped_surrogate(logp, tr.log_prob_old, a, clip_eps);
      stats.surrogate += term.scalar() * inv_n;
      Matrix target(1, 1);
      target(0, 0) = adv.returns[i][k];
      Var vloss = ad::squared_error(h.value, target);
      stats.value_loss += vloss.scalar() * inv_n;
      terms.push_back(ad::add(ad::scale(term, -policy_coef * inv_n), ad::scale(vloss, value_loss_coef * inv_n)));
    }
    Var loss = ad::add_all(terms);
    if (backward) t.backward(loss);
  }
  stats.clip_fraction = clipped * inv_n;
  stats.loss = -stats.surrogate + value_loss_coef * stats.value_loss;
  return stats;
}

// J at the current parameters (no gradients).
inline double ppo_surrogate(const PolicyModel& model, const std::vector<Trajectory>& trajectories,
                            const AdvantageEstimate& adv, double clip_eps) {
  return ppo_objective(const_cast<PolicyModel&>(model), trajectories, adv, clip_eps, 0.0, false).surrogate;
}

inline json diagnostic_dump(const std::vector<Trajectory>& trajectories, const AdvantageEstimate& adv) {
  json out = json::array();
  for (size_t i = 0; i < trajectories.size(); ++i) {
    for (size_t k = 0; k < trajectories[i].steps.size(); ++k) {
      const auto& tr = trajectories[i].steps[k];
      out.push_back({{"document", tr.doc ? tr.doc->id : ""},
                     {"question", tr.question},
                     {"action", {tr.action.start, tr.action.end}},
                     {"reward", tr.reward},
                     {"log_prob_old", tr.log_prob_old},
                     {"value_old", tr.value_old},
                     {"advantage", adv.advantages[i][k]},
                     {"return", adv.returns[i][k]}});
    }
  }
  return out;
}

struct UpdateStats {
  SurrogateStats first;  // at theta == theta_old, before any step
  SurrogateStats last;   // during the final optimization epoch
};

struct PPOOptimizers {
  ad::Adam policy;
  ad::Adam value;

  explicit PPOOptimizers(const PPOConfig& c)
      : policy({c.learning_rate, 0.9, 0.999, 1e-8}), value({c.value_learning_rate, 0.9, 0.999, 1e-8}) {}
};

// One update round: optim_epochs full-batch gradient steps on the clipped
// surrogate plus value loss. With `value_only`, the policy is left untouched.
inline UpdateStats ppo_update(PolicyModel& model, PPOOptimizers& opt, const std::vector<Trajectory>& trajectories,
                              const AdvantageEstimate& adv, const PPOConfig& config, bool value_only = false) {
  UpdateStats out;
  model.params().zero_grad();
  for (int epoch = 0; epoch < config.optim_epochs_per_batch; ++epoch) {
    const SurrogateStats s = ppo_objective(model, trajectories, adv, config.clip_eps, config.value_loss_coef, true,
                                           value_only ? 0.0 : 1.0);
    if (!std::isfinite(s.loss)) {
      throw TrainingDiverged("PPO loss is not finite", json{{"batch", diagnostic_dump(trajectories, adv)},
                                                            {"surrogate", s.surrogate},
                                                            {"value_loss", s.value_loss}});
    }
    if (epoch == 0) out.first = s;
    out.last = s;
    if (!value_only) opt.policy.step(model.params(), is_policy_parameter);
    opt.value.step(model.params(), is_value_parameter);
    model.params().zero_grad();
    if (!model.params().all_finite()) {
      throw TrainingDiverged("parameters became non-finite", json{{"batch", diagnostic_dump(trajectories, adv)}});
    }
  }
  return out;
}

struct RoundRecord {
  int round = 0;
  long steps = 0;
  double mean_reward = 0.0;
  double mean_string = 0.0;
  double mean_location = 0.0;
  double mean_label = 0.0;
  double mean_semantic = 0.0;
  double surrogate = 0.0;
  double clip_fraction = 0.0;
  double value_loss = 0.0;
  double dev_f1 = std::numeric_limits<double>::quiet_NaN();

  json to_json() const {
    json j{{"round", round},
           {"steps", steps},
           {"mean_reward", mean_reward},
           {"mean_r_string", mean_string},
           {"mean_r_location", mean_location},
           {"mean_r_label", mean_label},
           {"mean_r_semantic", mean_semantic},
           {"surrogate", surrogate},
           {"clip_fraction", clip_fraction},
           {"value_loss", value_loss}};
    j["dev_f1"] = std::isnan(dev_f1) ? json(nullptr) : json(dev_f1);
    return j;
  }
};

struct RLResult {
  PolicyModel model;
  std::vector<RoundRecord> history;
  long steps = 0;         // policy-update question-steps
  long warmup_steps = 0;  // question-steps spent on value warm-up
  int best_round = 0;     // 0: the input parameters
};

using RoundCallback = std::function<void(const RoundRecord&, const std::vector<Trajectory>&)>;

inline RoundRecord summarize_round(int round, long steps, const std::vector<Trajectory>& trajectories,
                                   const UpdateStats& u) {
  RoundRecord r;
  r.round = round;
  r.steps = steps;
  size_t n = 0;
  for (const auto& tau : trajectories) {
    for (const auto& tr : tau.steps) {
      r.mean_reward += tr.reward;
      r.mean_string += tr.breakdown.r_string;
      r.mean_location += tr.breakdown.r_location;
      r.mean_label += tr.breakdown.r_label;
      r.mean_semantic += tr.breakdown.r_semantic;
      ++n;
    }
  }
  if (n > 0) {
    for (double* v : {&r.mean_reward, &r.mean_string, &r.mean_location, &r.mean_label, &r.mean_semantic}) {
      *v /= static_cast<double>(n);
    }
  }
  r.surrogate = u.first.surrogate;
  r.clip_fraction = u.last.clip_fraction;
  r.value_loss = u.first.value_loss;
  return r;
}

// Draws documents without replacement, reshuffling after each pass.
class DocumentSampler {
 public:
  DocumentSampler(const std::vector<Document>& docs, Rng& rng) : docs_(docs), rng_(rng), order_(docs.size()) {
    for (size_t i = 0; i < order_.size(); ++i) order_[i] = i;
    cursor_ = order_.size();
  }

  std::vector<const Document*> next(int n) {
    std::vector<const Document*> batch;
    for (int k = 0; k < n; ++k) {
      if (cursor_ == order_.size()) {
        rng_.shuffle(order_);
        cursor_ = 0;
      }
      batch.push_back(&docs_[order_[cursor_++]]);
    }
    return batch;
  }

 private:
  const std::vector<Document>& docs_;
  Rng& rng_;
  std::vector<size_t> order_;
  size_t cursor_ = 0;
};

// PPO finetuning: after value_warmup_rounds value-only rounds, repeat
// (collect docs_per_batch trajectories, GAE, optim_epochs gradient epochs)
// until n_max question-steps have been taken. Returns the parameters with the
// best dev F1 (evaluated every eval_every rounds and at the end), or the
// final parameters when dev is empty.
inline RLResult finetune(PolicyModel model, const Corpus& corpus, const PPOConfig& config, const RewardConfig& rewards,
                         const RoundCallback& on_round = {}) {
  config.validate();
  rewards.weights.validate();
  RLResult result;
  result.model = model;
  if (config.n_max == 0) return result;
  if (corpus.train.empty()) throw std::invalid_argument("finetune: empty train split");

  const bool use_dev = !corpus.dev.empty();
  double best_f1 = -1.0;
  if (use_dev) best_f1 = evaluate(model, corpus.dev, corpus.schema).f1;

  PPOOptimizers opt(config);
  Rng rng(Rng::mix(config.seed ^ 0x99cULL));
  DocumentSampler sampler(corpus.train, rng);

  for (int w = 0; w < config.value_warmup_rounds; ++w) {
    const auto trajectories = collect_trajectories(model, sampler.next(config.docs_per_batch), corpus.schema, rewards,
                                                   rng, result.warmup_steps);
    const auto adv = compute_advantages(trajectories, config.gamma, config.gae_lambda, config.normalize_advantages,
                                        config.center_per_question, config.advantage_std_floor);
    ppo_update(model, opt, trajectories, adv, config, true);
  }

  long steps = 0;
  int round = 0;
  while (steps < config.n_max) {
    ++round;
    if (config.lr_warmup_rounds > 0) {
      const double ramp = std::min(1.0, static_cast<double>(round) / static_cast<double>(config.lr_warmup_rounds));
      opt.policy.set_learning_rate(config.learning_rate * ramp);
    }
    const auto trajectories =
        collect_trajectories(model, sampler.next(config.docs_per_batch), corpus.schema, rewards, rng, steps);
    const auto adv = compute_advantages(trajectories, config.gamma, config.gae_lambda, config.normalize_advantages,
                                        config.center_per_question, config.advantage_std_floor);
    const UpdateStats u = ppo_update(model, opt, trajectories, adv, config);

    RoundRecord rec = summarize_round(round, steps, trajectories, u);
    const bool last = steps >= config.n_max;
    if (use_dev && (round % config.eval_every == 0 || last)) {
      rec.dev_f1 = evaluate(model, corpus.dev, corpus.schema).f1;
      if (rec.dev_f1 > best_f1) {
        best_f1 = rec.dev_f1;
        result.model = model;
        result.best_round = round;
      }
    }
    result.history.push_back(rec);
    if (on_round) on_round(rec, trajectories);
  }
  if (!use_dev) {
    result.model = model;
    result.best_round = round;
  }
  result.steps = steps;
  return result;
}

}  // namespace docrl
