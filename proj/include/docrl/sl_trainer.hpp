#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "docrl/autodiff.hpp"
#include "docrl/corpus.hpp"
#include "docrl/evaluator.hpp"
#include "docrl/model.hpp"
#include "docrl/rng.hpp"

namespace docrl {

// Raised when a loss turns non-finite. diagnostic() holds a structured dump of
// the offending batch.
class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(const std::string& what, json diagnostic)
      : std::runtime_error(what), diagnostic_(std::move(diagnostic)) {}
  const json& diagnostic() const { return diagnostic_; }

 private:
  json diagnostic_;
};

inline constexpr double kProbFloor = 1e-12;

struct SLConfig {
  double learning_rate = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int batch_size = 8;
  int max_epochs = 300;
  int patience = 20;
  double min_relative_improvement = 1e-4;  // train-loss plateau threshold
  uint64_t seed = 0;

  void validate() const {
    if (!(learning_rate > 0.0)) throw std::invalid_argument("SLConfig: learning_rate must be > 0");
    if (patience < 1) throw std::invalid_argument("SLConfig: patience must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("SLConfig: batch_size must be >= 1");
    if (max_epochs < 0) throw std::invalid_argument("SLConfig: max_epochs must be >= 0");
  }

  json to_json() const {
    return json{{"learning_rate", learning_rate}, {"beta1", beta1},           {"beta2", beta2},
                {"eps", eps},                     {"batch_size", batch_size}, {"max_epochs", max_epochs},
                {"patience", patience},           {"min_relative_improvement", min_relative_improvement},
                {"seed", seed}};
  }
  static SLConfig from_json(const json& j) {
    SLConfig c;
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.eps = j.value("eps", c.eps);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.patience = j.value("patience", c.patience);
    c.min_relative_improvement = j.value("min_relative_improvement", c.min_relative_improvement);
    c.seed = j.value("seed", c.seed);
    c.validate();
    return c;
  }
};

// -log p_start[start_gt] - log p_end[end_gt], probabilities floored at 1e-12.
inline double ce_loss(const SpanDistribution& d, SpanAction gt) {
  check_distribution(d);
  return -std::log(std::max(d.start_probs.at(static_cast<size_t>(gt.start)), kProbFloor)) -
         std::log(std::max(d.end_probs.at(static_cast<size_t>(gt.end)), kProbFloor));
}

inline double ce_loss(const std::vector<SpanDistribution>& dists, const std::vector<SpanAction>& gts) {
  if (dists.empty() || dists.size() != gts.size()) throw std::invalid_argument("ce_loss: batch size mismatch");
  double s = 0.0;
  for (size_t i = 0; i < dists.size(); ++i) s += ce_loss(dists[i], gts[i]);
  return s / static_cast<double>(dists.size());
}

// Tape version of ce_loss for one (document, question) head.
inline Var ce_loss_node(const HeadOutputs& h, SpanAction gt) {
  const double log_floor = std::log(kProbFloor);
  Var ls = ad::floor_at(ad::log_prob_at(h.start_logits, gt.start), log_floor);
  Var le = ad::floor_at(ad::log_prob_at(h.end_logits, gt.end), log_floor);
  return ad::scale(ad::add(ls, le), -1.0);
}

inline SpanAction gold_span(const Document& doc, const std::string& field) {
  const auto it = doc.annotations.find(field);
  if (it == doc.annotations.end()) throw std::invalid_argument("document '" + doc.id + "' has no annotation for '" + field + "'");
  return {it->second.start, it->second.end};
}

struct QuestionRef {
  size_t doc = 0;
  size_t field = 0;
};

// Forward + backward of the mean cross-entropy over a batch of
// (document, question) pairs; gradients accumulate into the model. Pairs that
// share a document reuse one encoder pass. Returns the mean loss.
inline double sl_batch_gradient(PolicyModel& model, const std::vector<Document>& docs, const FieldSchema& schema,
                                const std::vector<QuestionRef>& batch) {
  std::vector<size_t> order;
  std::map<size_t, std::vector<size_t>> by_doc;
  for (const auto& q : batch) {
    if (!by_doc.count(q.doc)) order.push_back(q.doc);
    by_doc[q.doc].push_back(q.field);
  }
  const double inv_batch = 1.0 / static_cast<double>(batch.size());
  double total = 0.0;
  for (size_t d : order) {
    const Document& doc = docs[d];
    Tape t;
    Var hidden = model.encode(t, doc);
    std::vector<Var> terms;
    for (size_t f : by_doc[d]) {
      const std::string& field = schema.fields[f];
      SpanAction gt = gold_span(doc, field);
      if (gt.end >= model.config().max_seq_len) continue;  // answer truncated away
      const HeadOutputs h = model.heads(t, hidden, model.question(t, field));
      terms.push_back(ce_loss_node(h, gt));
    }
    if (terms.empty()) continue;
    Var loss = ad::scale(ad::add_all(terms), inv_batch);
    total += loss.scalar();
    if (!std::isfinite(loss.scalar())) {
      throw TrainingDiverged("supervised loss is not finite", json{{"document", doc.id}, {"loss", loss.scalar()}});
    }
    t.backward(loss);
  }
  return total;
}

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;
  double dev_f1 = std::numeric_limits<double>::quiet_NaN();  // NaN when dev is empty
  double wall_seconds = 0.0;

  // Deterministic fields only; wall time is reported separately.
  json to_json() const {
    json j{{"epoch", epoch}, {"loss", loss}};
    j["dev_f1"] = std::isnan(dev_f1) ? json(nullptr) : json(dev_f1);
    return j;
  }
  bool same_metrics(const EpochRecord& o) const {
    return epoch == o.epoch && loss == o.loss && (dev_f1 == o.dev_f1 || (std::isnan(dev_f1) && std::isnan(o.dev_f1)));
  }
};

struct SLResult {
  PolicyModel model;
  std::vector<EpochRecord> history;
  int best_epoch = 0;  // 0: the initial parameters
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// Supervised training from given initial parameters. Stops when the selection
// metric (dev weighted F1, or train loss when dev is empty) has not improved
// for `patience` epochs, or at max_epochs; returns the best parameters.
inline SLResult train_supervised(PolicyModel model, const Corpus& corpus, const SLConfig& config,
                                 const EpochCallback& on_epoch = {}) {
  config.validate();
  if (corpus.train.empty()) throw std::invalid_argument("train_supervised: empty train split");
  SLResult result;
  result.model = model;
  if (config.max_epochs == 0) return result;

  const bool use_dev = !corpus.dev.empty();
  std::vector<QuestionRef> pairs;
  for (size_t d = 0; d < corpus.train.size(); ++d) {
    for (size_t f = 0; f < corpus.schema.fields.size(); ++f) pairs.push_back({d, f});
  }
  ad::Adam adam({config.learning_rate, config.beta1, config.beta2, config.eps});
  Rng rng(Rng::mix(config.seed ^ 0x5eedULL));

  double best = use_dev ? -1.0 : std::numeric_limits<double>::infinity();
  int since_best = 0;
  model.params().zero_grad();
  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    rng.shuffle(pairs);
    double loss_sum = 0.0;
    size_t n_batches = 0;
    for (size_t b = 0; b < pairs.size(); b += static_cast<size_t>(config.batch_size)) {
      const std::vector<QuestionRef> batch(pairs.begin() + static_cast<long>(b),
                                           pairs.begin() + static_cast<long>(std::min(pairs.size(), b + config.batch_size)));
      const double loss = sl_batch_gradient(model, corpus.train, corpus.schema, batch);
      if (!std::isfinite(loss)) {
        throw TrainingDiverged("supervised loss is not finite at epoch " + std::to_string(epoch),
                               json{{"epoch", epoch}, {"batch", b / config.batch_size}});
      }
      adam.step(model.params());
      model.params().zero_grad();
      loss_sum += loss;
      ++n_batches;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.loss = loss_sum / static_cast<double>(n_batches);
    if (use_dev) rec.dev_f1 = evaluate(model, corpus.dev, corpus.schema).f1;
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);

    const bool improved = use_dev ? rec.dev_f1 > best : rec.loss < best * (1.0 - config.min_relative_improvement);
    if (improved) {
      best = use_dev ? rec.dev_f1 : rec.loss;
      result.model = model;
      result.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  return result;
}

inline SLResult train_supervised(const Corpus& corpus, const ModelConfig& model_config, const SLConfig& config,
                                 const EpochCallback& on_epoch = {}) {
  return train_supervised(PolicyModel(model_config), corpus, config, on_epoch);
}

}  // namespace docrl
