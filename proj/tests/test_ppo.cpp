#include <gtest/gtest.h>

#include <numeric>

#include "docrl/ppo.hpp"
#include "test_support.hpp"

using namespace docrl;

namespace {

PPOConfig quick_ppo(uint64_t seed) {
  PPOConfig c;
  c.learning_rate = 1e-3;
  c.docs_per_batch = 2;
  c.optim_epochs_per_batch = 2;
  c.value_warmup_rounds = 0;
  c.seed = seed;
  return c;
}

std::vector<double> flatten(const std::vector<std::vector<double>>& v) {
  std::vector<double> out;
  for (const auto& row : v) out.insert(out.end(), row.begin(), row.end());
  return out;
}

std::vector<const Document*> pointers(const std::vector<Document>& docs, size_t n) {
  std::vector<const Document*> out;
  for (size_t i = 0; i < n && i < docs.size(); ++i) out.push_back(&docs[i]);
  return out;
}

bool same_parameters(const PolicyModel& a, const PolicyModel& b) {
  for (size_t i = 0; i < a.params().size(); ++i) {
    if (a.params()[i].value != b.params()[i].value) return false;
  }
  return true;
}

// Supervised training on a single document until its spans dominate.
PolicyModel overfit_tiny(const Document& doc, const FieldSchema& schema) {
  Corpus c;
  c.schema = schema;
  c.train = {doc};
  SLConfig sl;
  sl.learning_rate = 1e-2;
  sl.max_epochs = 400;
  sl.patience = 400;
  sl.seed = 1;
  return train_supervised(c, testkit::tiny_config(5), sl).model;
}

}  // namespace

TEST(Advantages, SingleStepTerminal) {
  const auto est = compute_advantages({testkit::make_trajectory({0.7}, {0.0})}, 0.95, 0.95);
  EXPECT_DOUBLE_EQ(est.advantages[0][0], 0.7);
  EXPECT_DOUBLE_EQ(est.returns[0][0], 0.7);
}

TEST(Advantages, TwoStepHandExpansion) {
  const auto est = compute_advantages({testkit::make_trajectory({1.0, 0.0}, {0.0, 0.0})}, 0.95, 0.95);
  EXPECT_NEAR(est.advantages[0][1], 0.0, 1e-12);
  EXPECT_NEAR(est.advantages[0][0], 1.0, 1e-12);
}

TEST(Advantages, LambdaZeroIsTdError) {
  const std::vector<double> r{0.3, -0.2, 1.0, 0.5}, v{0.1, 0.4, -0.3, 0.2};
  const auto est = compute_advantages({testkit::make_trajectory(r, v)}, 0.9, 0.0);
  for (size_t t = 0; t < r.size(); ++t) {
    const double next = t + 1 < r.size() ? v[t + 1] : 0.0;
    EXPECT_NEAR(est.advantages[0][t], r[t] + 0.9 * next - v[t], 1e-12) << t;
    EXPECT_NEAR(est.returns[0][t], est.advantages[0][t] + v[t], 1e-12);
  }
}

TEST(Advantages, MatchesBruteForceDefinition) {
  Rng rng(17);
  size_t mismatches = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const size_t n = 1 + rng.below(4);
    std::vector<double> r(n), v(n);
    for (size_t k = 0; k < n; ++k) {
      r[k] = rng.uniform() * 2.0 - 1.0;
      v[k] = rng.uniform() * 2.0 - 1.0;
    }
    const double gamma = 0.5 + 0.5 * rng.uniform();
    const double lambda = rng.uniform();
    const auto est = compute_advantages({testkit::make_trajectory(r, v)}, gamma, lambda);
    const auto oracle = testkit::brute_gae(r, v, gamma, lambda);
    for (size_t k = 0; k < n; ++k) {
      if (std::abs(est.advantages[0][k] - oracle[k]) > 1e-12) ++mismatches;
    }
  }
  EXPECT_EQ(mismatches, 0u);
}

TEST(Advantages, NormalizationGivesZeroMeanUnitStd) {
  std::vector<Trajectory> batch{testkit::make_trajectory({0.1, 0.9, 0.4}, {0.0, 0.2, 0.1}),
                                testkit::make_trajectory({1.0, -0.5, 0.3}, {0.5, 0.1, 0.0})};
  for (bool per_question : {false, true}) {
    const auto a = flatten(compute_advantages(batch, 0.95, 0.95, true, per_question).advantages);
    const double mean = std::accumulate(a.begin(), a.end(), 0.0) / static_cast<double>(a.size());
    double var = 0.0;
    for (double x : a) var += (x - mean) * (x - mean);
    EXPECT_NEAR(mean, 0.0, 1e-6);
    EXPECT_NEAR(std::sqrt(var / static_cast<double>(a.size())), 1.0, 1e-3);
  }
}

TEST(Advantages, StdFloorOnlyBindsBelowIt) {
  // Constant reward: the spread left after centering is value error only.
  std::vector<Trajectory> batch;
  for (double v : {0.02, -0.01, -0.03, 0.01}) batch.push_back(testkit::make_trajectory({1.0}, {v}));
  const auto raw = flatten(compute_advantages(batch, 0.95, 0.95).advantages);
  const auto floored = flatten(compute_advantages(batch, 0.95, 0.95, true, false, 0.1).advantages);
  const double mean = std::accumulate(raw.begin(), raw.end(), 0.0) / static_cast<double>(raw.size());
  for (size_t i = 0; i < raw.size(); ++i) EXPECT_NEAR(floored[i], (raw[i] - mean) / 0.1, 1e-12);
  // A floor below the batch std changes nothing.
  const std::vector<Trajectory> wide{testkit::make_trajectory({0.1, 0.9, 0.4}, {0.0, 0.2, 0.1})};
  EXPECT_EQ(compute_advantages(wide, 0.95, 0.95, true, false, 1e-3).advantages,
            compute_advantages(wide, 0.95, 0.95, true).advantages);
}

TEST(Advantages, ReturnsAreNotNormalized) {
  const std::vector<Trajectory> batch{testkit::make_trajectory({1.0, 2.0}, {0.5, 0.5})};
  const auto raw = compute_advantages(batch, 0.95, 0.95);
  const auto norm = compute_advantages(batch, 0.95, 0.95, true);
  EXPECT_EQ(raw.returns, norm.returns);
}

TEST(ClippedSurrogate, RatioOnePassesAdvantageThrough) {
  ad::Tape t;
  ad::Matrix m(1, 1);
  m(0, 0) = -1.3;
  for (double a : {-2.0, -0.1, 0.0, 0.7}) {
    EXPECT_DOUBLE_EQ(ad::clipped_surrogate(t.constant(m), -1.3, a, 0.2).scalar(), a);
  }
}

TEST(ClippedSurrogate, ClipCases) {
  ad::Tape t;
  ad::Matrix m(1, 1);
  m(0, 0) = std::log(1.5);
  EXPECT_NEAR(ad::clipped_surrogate(t.constant(m), 0.0, 1.0, 0.2).scalar(), 1.2, 1e-12);
  m(0, 0) = std::log(0.5);
  EXPECT_NEAR(ad::clipped_surrogate(t.constant(m), 0.0, -1.0, 0.2).scalar(), -0.8, 1e-12);
  // The unclipped branch wins on the other two sides.
  EXPECT_NEAR(ad::clipped_surrogate(t.constant(m), 0.0, 1.0, 0.2).scalar(), 0.5, 1e-12);
  m(0, 0) = std::log(1.5);
  EXPECT_NEAR(ad::clipped_surrogate(t.constant(m), 0.0, -1.0, 0.2).scalar(), -1.5, 1e-12);
}

TEST(ClippedSurrogate, ClippedTermIsBounded) {
  Rng rng(3);
  ad::Tape t;
  for (int i = 0; i < 1000; ++i) {
    ad::Matrix m(1, 1);
    m(0, 0) = rng.uniform() * 4.0 - 2.0;
    const double a = rng.uniform() * 6.0 - 3.0;
    const double eps = 0.05 + 0.9 * rng.uniform();
    const double ratio = std::exp(m(0, 0));
    const double term = ad::clipped_surrogate(t.constant(m), 0.0, a, eps).scalar();
    const double clipped = std::clamp(ratio, 1.0 - eps, 1.0 + eps) * a;
    EXPECT_LE(std::abs(clipped), std::max(std::abs((1 - eps) * a), std::abs((1 + eps) * a)) + 1e-12);
    EXPECT_LE(term, clipped + 1e-12);
  }
}

TEST(Surrogate, EqualsMeanAdvantageAtSnapshot) {
  const Corpus c = testkit::small_corpus(3, 0, 1);
  PolicyModel m(testkit::small_config(3));
  Rng rng(8);
  long steps = 0;
  const RewardConfig rewards;
  const auto batch = collect_trajectories(m, pointers(c.train, 3), c.schema, rewards, rng, steps);
  const auto adv = compute_advantages(batch, 0.95, 0.95);
  const auto all = flatten(adv.advantages);
  const double mean = std::accumulate(all.begin(), all.end(), 0.0) / static_cast<double>(all.size());
  const SurrogateStats s = ppo_objective(m, batch, adv, 0.2, 0.5, false);
  EXPECT_NEAR(s.surrogate, mean, 1e-6);
  EXPECT_NEAR(s.mean_ratio, 1.0, 1e-6);
  EXPECT_DOUBLE_EQ(s.clip_fraction, 0.0);
  EXPECT_NEAR(ppo_surrogate(m, batch, adv, 0.2), mean, 1e-6);
}

TEST(Surrogate, GradientMatchesFiniteDifferences) {
  PolicyModel m(testkit::tiny_config(9));
  const Document doc = testkit::tiny_document();
  const FieldSchema schema = testkit::tiny_schema();
  Rng rng(4);
  long steps = 0;
  auto batch = collect_trajectories(m, {&doc, &doc}, schema, RewardConfig{}, rng, steps);
  // Move the old log-probabilities so that ratios differ from one: three
  // transitions stay inside the clip range, one is clipped.
  const double shifts[] = {0.1, -0.12, 0.05, -0.6};
  int i = 0;
  for (auto& tau : batch) {
    for (auto& tr : tau.steps) tr.log_prob_old += shifts[i++];
  }
  AdvantageEstimate adv = compute_advantages(batch, 0.95, 0.95);
  adv.advantages = {{0.8, -0.5}, {1.1, 0.9}};
  // The value head reads a detached copy of the query, so only the policy
  // term is differentiated here.
  auto backward = [&](PolicyModel& model) { ppo_objective(model, batch, adv, 0.2, 0.0, true); };
  auto loss = [&](PolicyModel& model) { return ppo_objective(model, batch, adv, 0.2, 0.0, false).loss; };
  const auto r = testkit::finite_difference_check(m, backward, loss);
  EXPECT_LT(r.max_rel, 1e-4) << r.worst << " analytic " << r.worst_analytic << " numeric " << r.worst_numeric;
  EXPECT_GT(r.n_nonzero, 100u);
  EXPECT_GT(ppo_objective(m, batch, adv, 0.2, 0.5, false).clip_fraction, 0.0);
}

TEST(Surrogate, ValueLossGradientMatchesOnValueHead) {
  PolicyModel m(testkit::tiny_config(10));
  const Document doc = testkit::tiny_document();
  const FieldSchema schema = testkit::tiny_schema();
  Rng rng(6);
  long steps = 0;
  const auto batch = collect_trajectories(m, {&doc}, schema, RewardConfig{}, rng, steps);
  AdvantageEstimate adv = compute_advantages(batch, 0.95, 0.95);
  adv.returns = {{0.9, -0.4}};
  auto backward = [&](PolicyModel& model) { ppo_objective(model, batch, adv, 0.2, 0.5, true, 0.0); };
  auto loss = [&](PolicyModel& model) { return 0.5 * ppo_objective(model, batch, adv, 0.2, 0.5, false).value_loss; };
  const auto r = testkit::finite_difference_check(m, backward, loss, 1e-5, 1e-10, is_value_parameter);
  EXPECT_LT(r.max_rel, 1e-4) << r.worst << " analytic " << r.worst_analytic << " numeric " << r.worst_numeric;
  EXPECT_GT(r.n_nonzero, 10u);
}

TEST(Collect, CountsOneStepPerQuestion) {
  const Corpus c = testkit::small_corpus(3, 0, 1);
  const PolicyModel m(testkit::small_config());
  Rng rng(2);
  long steps = 0;
  const auto batch = collect_trajectories(m, pointers(c.train, 3), c.schema, RewardConfig{}, rng, steps);
  EXPECT_EQ(steps, 12);
  ASSERT_EQ(batch.size(), 3u);
  for (const auto& tau : batch) {
    ASSERT_EQ(tau.steps.size(), 4u);
    for (size_t k = 0; k < 4; ++k) {
      EXPECT_EQ(tau.steps[k].t, static_cast<int>(k));
      EXPECT_EQ(tau.steps[k].question, c.schema.fields[k]);
      EXPECT_LE(tau.steps[k].log_prob_old, 0.0);
      EXPECT_TRUE(std::isfinite(tau.steps[k].reward));
      EXPECT_LE(tau.steps[k].action.start, tau.steps[k].action.end);
    }
  }
}

TEST(Collect, ConfidentPolicyEarnsFullReward) {
  const Document doc = testkit::tiny_document();
  const FieldSchema schema = testkit::tiny_schema();
  const PolicyModel m = overfit_tiny(doc, schema);
  const auto pass = m.run(doc, schema.fields);
  for (size_t f = 0; f < schema.fields.size(); ++f) {
    ASSERT_GT(pass.dists[f].joint_prob(gold_span(doc, schema.fields[f])), 0.999);
  }
  Rng rng(5);
  long steps = 0;
  const auto batch = collect_trajectories(m, {&doc, &doc, &doc}, schema, RewardConfig{}, rng, steps);
  for (const auto& tau : batch) {
    for (const auto& tr : tau.steps) {
      EXPECT_EQ(tr.action, gold_span(doc, tr.question));
      EXPECT_NEAR(tr.reward, 1.0, 1e-12);
    }
  }
}

TEST(Collect, IdenticalSeedsGiveIdenticalTrajectories) {
  const Corpus c = testkit::small_corpus(4, 0, 1);
  const PolicyModel m(testkit::small_config());
  auto run = [&] {
    Rng rng(31);
    long steps = 0;
    return collect_trajectories(m, pointers(c.train, 4), c.schema, RewardConfig{}, rng, steps);
  };
  const auto a = run(), b = run();
  for (size_t i = 0; i < a.size(); ++i) {
    for (size_t k = 0; k < a[i].steps.size(); ++k) {
      EXPECT_EQ(a[i].steps[k].action, b[i].steps[k].action);
      EXPECT_EQ(a[i].steps[k].reward, b[i].steps[k].reward);
      EXPECT_EQ(a[i].steps[k].log_prob_old, b[i].steps[k].log_prob_old);
    }
  }
}

TEST(Finetune, ZeroBudgetLeavesModelUnchanged) {
  const Corpus c = testkit::small_corpus(3, 0, 1);
  const PolicyModel m(testkit::small_config());
  PPOConfig p = quick_ppo(1);
  p.n_max = 0;
  const RLResult r = finetune(m, c, p, RewardConfig{});
  EXPECT_TRUE(same_parameters(r.model, m));
  EXPECT_EQ(r.steps, 0);
  EXPECT_TRUE(r.history.empty());
}

TEST(Finetune, StepAccounting) {
  const Corpus c = testkit::small_corpus(5, 0, 1);
  const PolicyModel m(testkit::small_config());
  for (long n_max : {1L, 8L, 9L, 20L}) {
    PPOConfig p = quick_ppo(2);
    p.optim_epochs_per_batch = 1;
    p.n_max = n_max;
    const RLResult r = finetune(m, c, p, RewardConfig{});
    const long batch = p.docs_per_batch * 4;
    const long rounded = (n_max + batch - 1) / batch * batch;
    EXPECT_EQ(r.steps, std::min(rounded, n_max + batch)) << n_max;
    EXPECT_EQ(static_cast<long>(r.history.size()), rounded / batch);
  }
}

TEST(Finetune, IdenticalSeedsGiveIdenticalModels) {
  const Corpus c = testkit::small_corpus(4, 0, 1);
  const PolicyModel m(testkit::small_config());
  PPOConfig p = quick_ppo(3);
  p.n_max = 24;
  p.value_warmup_rounds = 1;
  const RLResult a = finetune(m, c, p, RewardConfig{});
  const RLResult b = finetune(m, c, p, RewardConfig{});
  EXPECT_TRUE(same_parameters(a.model, b.model));
  ASSERT_EQ(a.history.size(), b.history.size());
  for (size_t i = 0; i < a.history.size(); ++i) EXPECT_EQ(a.history[i].to_json().dump(), b.history[i].to_json().dump());
  EXPECT_FALSE(same_parameters(a.model, m));
}

TEST(Finetune, ValueOnlyRoundLeavesPolicyUntouched) {
  const Corpus c = testkit::small_corpus(2, 0, 1);
  PolicyModel m(testkit::small_config());
  const PolicyModel before = m;
  PPOConfig p = quick_ppo(4);
  PPOOptimizers opt(p);
  Rng rng(1);
  long steps = 0;
  const auto batch = collect_trajectories(m, pointers(c.train, 2), c.schema, RewardConfig{}, rng, steps);
  ppo_update(m, opt, batch, compute_advantages(batch, p.gamma, p.gae_lambda, true, true), p, true);
  size_t changed_value = 0;
  for (size_t i = 0; i < m.params().size(); ++i) {
    const bool same = m.params()[i].value == before.params()[i].value;
    if (is_policy_parameter(m.params()[i])) EXPECT_TRUE(same) << m.params()[i].name;
    else if (!same) ++changed_value;
  }
  EXPECT_GT(changed_value, 0u);
}

TEST(Finetune, ValueHeadFitsConstantReward) {
  const Corpus c = testkit::small_corpus(2, 0, 1);
  PolicyModel m(testkit::small_config(5));
  PPOConfig p = quick_ppo(5);
  p.value_learning_rate = 1e-2;
  p.optim_epochs_per_batch = 4;
  PPOOptimizers opt(p);
  // Fixed actions and a constant reward of 0.5 per question.
  std::vector<Trajectory> batch;
  for (const Document* d : pointers(c.train, 2)) {
    Trajectory tau;
    for (size_t f = 0; f < c.schema.fields.size(); ++f) {
      Transition tr;
      tr.doc = d;
      tr.question = c.schema.fields[f];
      tr.action = {0, 0};
      tr.reward = 0.5;
      tr.t = static_cast<int>(f);
      tau.steps.push_back(tr);
    }
    batch.push_back(tau);
  }
  // Discounted return-to-go of the constant reward.
  std::vector<double> expected(c.schema.fields.size());
  double g = 0.0;
  for (size_t k = expected.size(); k-- > 0;) expected[k] = g = 0.5 + p.gamma * g;
  for (int round = 0; round < 150; ++round) {
    for (auto& tau : batch) {
      const auto pass = m.run(*tau.steps.front().doc, c.schema.fields);
      for (size_t k = 0; k < tau.steps.size(); ++k) {
        tau.steps[k].value_old = pass.values[k];
        tau.steps[k].log_prob_old = action_log_prob(pass.dists[k], tau.steps[k].action);
      }
    }
    ppo_update(m, opt, batch, compute_advantages(batch, p.gamma, p.gae_lambda), p, true);
  }
  for (const auto& tau : batch) {
    const auto pass = m.run(*tau.steps.front().doc, c.schema.fields);
    for (size_t k = 0; k < expected.size(); ++k) EXPECT_NEAR(pass.values[k], expected[k], 0.1) << k;
  }
}

TEST(Finetune, RejectsInvalidConfig) {
  PPOConfig p;
  p.gamma = 0.0;
  EXPECT_THROW(p.validate(), std::invalid_argument);
  p = PPOConfig{};
  p.clip_eps = 1.0;
  EXPECT_THROW(p.validate(), std::invalid_argument);
  p = PPOConfig{};
  p.gae_lambda = 1.5;
  EXPECT_THROW(p.validate(), std::invalid_argument);
}

TEST(Finetune, RecordsRewardComponents) {
  const Corpus c = testkit::small_corpus(4, 0, 1);
  PPOConfig p = quick_ppo(6);
  p.n_max = 16;
  const RewardConfig rewards;
  long logged = 0, violations = 0;
  const RLResult r = finetune(PolicyModel(testkit::small_config()), c, p, rewards,
                              [&](const RoundRecord& rec, const std::vector<Trajectory>& batch) {
                                double total = 0.0;
                                size_t n = 0;
                                for (const auto& tau : batch) {
                                  for (const auto& tr : tau.steps) {
                                    ++logged;
                                    if (!tr.breakdown.consistent(rewards.weights)) ++violations;
                                    total += tr.reward;
                                    ++n;
                                  }
                                }
                                EXPECT_NEAR(rec.mean_reward, total / static_cast<double>(n), 1e-12);
                              });
  EXPECT_EQ(logged, 16);
  EXPECT_EQ(violations, 0);
  EXPECT_EQ(r.history.size(), 2u);
}

TEST(Finetune, RewardTrendOverFirstTenRounds) {
  GeneratorConfig g;
  const Corpus full = generate_synthetic_corpus(g);
  // A briefly trained policy leaves room for the reward to grow; a fully
  // trained one already earns close to 1 on its own training documents.
  int rising = 0;
  for (uint64_t seed : {0, 1, 2}) {
    const Corpus c = subset_fraction(full, 0.02, seed);
    ModelConfig mc;
    mc.seed = seed;
    SLConfig sl;
    sl.learning_rate = 1e-3;
    sl.max_epochs = 3;
    sl.seed = seed;
    const SLResult start = train_supervised(c, mc, sl);
    PPOConfig p;
    p.learning_rate = 1e-4;
    p.seed = seed;
    p.n_max = 10L * p.docs_per_batch * static_cast<long>(c.schema.fields.size());
    const RLResult r = finetune(start.model, c, p, RewardConfig{});
    ASSERT_EQ(r.history.size(), 10u);
    // Least-squares slope of mean reward against round index.
    double sx = 0, sy = 0, sxy = 0, sxx = 0;
    for (const auto& rec : r.history) {
      sx += rec.round;
      sy += rec.mean_reward;
      sxy += rec.round * rec.mean_reward;
      sxx += rec.round * rec.round;
    }
    const double n = static_cast<double>(r.history.size());
    const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    if (slope >= 0.0) ++rising;
  }
  EXPECT_GE(rising, 2);
}
