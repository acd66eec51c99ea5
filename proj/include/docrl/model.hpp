#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "docrl/autodiff.hpp"
#include "docrl/corpus.hpp"
#include "docrl/encoder.hpp"
#include "docrl/rng.hpp"
#include "docrl/text.hpp"

namespace docrl {

using ad::Matrix;
using ad::Tape;
using ad::Var;

struct ModelConfig {
  int n_layers = 2;
  int hidden_size = 64;
  int n_heads = 4;
  int max_seq_len = 128;
  int trigram_hash_dim = 4096;
  int box_buckets = 64;
  int ffn_multiplier = 4;
  double init_std = 0.02;
  double position_init_std = 0.0002;
  uint64_t seed = 0;

  void validate() const {
    if (n_layers < 0 || hidden_size < 1 || n_heads < 1 || max_seq_len < 1 || trigram_hash_dim < 1 ||
        box_buckets < 1 || ffn_multiplier < 1) {
      throw std::invalid_argument("ModelConfig: sizes must be positive");
    }
    if (hidden_size % n_heads != 0) throw std::invalid_argument("ModelConfig: hidden_size must be divisible by n_heads");
  }

  json to_json() const {
    return json{{"n_layers", n_layers},
                {"hidden_size", hidden_size},
                {"n_heads", n_heads},
                {"max_seq_len", max_seq_len},
                {"text_embedding", {{"trigram_hash_dim", trigram_hash_dim}}},
                {"box_buckets", box_buckets},
                {"ffn_multiplier", ffn_multiplier},
                {"init_std", init_std},
                {"position_init_std", position_init_std},
                {"seed", seed}};
  }

  static ModelConfig from_json(const json& j) {
    ModelConfig c;
    c.n_layers = j.value("n_layers", c.n_layers);
    c.hidden_size = j.value("hidden_size", c.hidden_size);
    c.n_heads = j.value("n_heads", c.n_heads);
    c.max_seq_len = j.value("max_seq_len", c.max_seq_len);
    if (j.contains("text_embedding")) {
      c.trigram_hash_dim = j.at("text_embedding").value("trigram_hash_dim", c.trigram_hash_dim);
    }
    c.box_buckets = j.value("box_buckets", c.box_buckets);
    c.ffn_multiplier = j.value("ffn_multiplier", c.ffn_multiplier);
    c.init_std = j.value("init_std", c.init_std);
    c.position_init_std = j.value("position_init_std", c.position_init_std);
    c.seed = j.value("seed", c.seed);
    c.validate();
    return c;
  }

  bool operator==(const ModelConfig&) const = default;
};

// Inclusive token span chosen by the policy.
struct SpanAction {
  int start = 0;
  int end = 0;

  bool operator==(const SpanAction&) const = default;
  auto operator<=>(const SpanAction&) const = default;
};

struct SpanDistribution {
  std::vector<double> start_probs;
  std::vector<double> end_probs;

  int size() const { return static_cast<int>(start_probs.size()); }

  // p(start) * p(end | end >= start).
  double joint_prob(SpanAction a) const {
    double tail = 0.0;
    for (int j = a.start; j < size(); ++j) tail += end_probs[static_cast<size_t>(j)];
    if (tail <= 0.0) return 0.0;
    return start_probs[static_cast<size_t>(a.start)] * end_probs[static_cast<size_t>(a.end)] / tail;
  }
};

struct HiddenStates {
  Matrix values;  // n_tokens x hidden_size
  bool truncated = false;
};

struct QuestionEmbedding {
  std::string question;
  Matrix values;  // 1 x hidden_size
};

// Tape nodes of one (document, question) head evaluation.
struct HeadOutputs {
  Var start_logits;  // 1 x n
  Var end_logits;    // 1 x n
  Var value;         // 1 x 1
};

inline int box_bucket(int coordinate, int buckets) {
  const int c = std::clamp(coordinate, 0, kPageUnits);
  return std::min(buckets - 1, c * buckets / (kPageUnits + 1));
}

inline std::vector<double> softmax(const Eigen::Ref<const ad::RowVector>& logits) {
  const double m = logits.maxCoeff();
  std::vector<double> p(static_cast<size_t>(logits.size()));
  double z = 0.0;
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    p[static_cast<size_t>(i)] = std::exp(logits(i) - m);
    z += p[static_cast<size_t>(i)];
  }
  for (double& v : p) v /= z;
  return p;
}

// Layout-aware span extractor: a small transformer encoder over token text,
// position and box features, plus a question-conditioned cross-attention
// head that scores every token as a start and as an end, and a value head.
class PolicyModel {
 public:
  PolicyModel() = default;

  explicit PolicyModel(ModelConfig config) : config_(std::move(config)) {
    config_.validate();
    build();
  }

  const ModelConfig& config() const { return config_; }
  ad::ParameterStore& params() { return params_; }
  const ad::ParameterStore& params() const { return params_; }
  const StandInEncoder& question_encoder() const { return question_encoder_; }

  long truncation_count() const { return truncations_->load(); }

  // Forward pass of the encoder on a tape; returns H (n x hidden).
  Var encode(Tape& t, const Document& doc) const {
    if (doc.tokens.empty()) throw std::invalid_argument("encode: empty document");
    const int n = std::min(doc.size(), config_.max_seq_len);
    if (doc.size() > config_.max_seq_len) truncations_->fetch_add(1);

    std::vector<ad::Bag> bags;
    std::vector<int> positions, xs0, ys0, xs1, ys1;
    bags.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
      const Token& tok = doc.tokens[static_cast<size_t>(i)];
      bags.push_back(token_bag(tok.text));
      positions.push_back(i);
      xs0.push_back(box_bucket(tok.bbox[0], config_.box_buckets));
      ys0.push_back(box_bucket(tok.bbox[1], config_.box_buckets));
      xs1.push_back(box_bucket(tok.bbox[2], config_.box_buckets));
      ys1.push_back(box_bucket(tok.bbox[3], config_.box_buckets));
    }
    Var x = ad::embedding_bag(t, p(idx_.text), std::move(bags));
    x = ad::add(x, ad::gather_rows(t, p(idx_.position), std::move(positions)));
    x = ad::add(x, ad::gather_rows(t, p(idx_.box_x), std::move(xs0)));
    x = ad::add(x, ad::gather_rows(t, p(idx_.box_y), std::move(ys0)));
    x = ad::add(x, ad::gather_rows(t, p(idx_.box_x), std::move(xs1)));
    x = ad::add(x, ad::gather_rows(t, p(idx_.box_y), std::move(ys1)));
    x = ad::layer_norm(x, t.param(p(idx_.embed_ln_gain)), t.param(p(idx_.embed_ln_bias)));

    for (const auto& layer : idx_.layers) {
      Var attn = self_attention(t, x, layer);
      x = ad::layer_norm(ad::add(x, attn), t.param(p(layer.ln1_gain)), t.param(p(layer.ln1_bias)));
      Var h = ad::gelu(ad::add_row(ad::matmul(x, t.param(p(layer.w1))), t.param(p(layer.b1))));
      h = ad::add_row(ad::matmul(h, t.param(p(layer.w2))), t.param(p(layer.b2)));
      x = ad::layer_norm(ad::add(x, h), t.param(p(layer.ln2_gain)), t.param(p(layer.ln2_bias)));
    }
    return x;
  }

  // e_q: frozen trigram encoding of the question through a trainable
  // projection (1 x hidden).
  Var question(Tape& t, const std::string& q) const {
    if (q.empty()) throw std::invalid_argument("question: empty question");
    ad::Bag bag;
    for (const auto& [bucket, w] : question_encoder_.encode(q)) bag.emplace_back(static_cast<int>(bucket), w);
    Var e = ad::embedding_bag(t, p(idx_.question_proj), {std::move(bag)});
    return ad::add(e, t.param(p(idx_.question_bias)));
  }

  // g(H, e_q): cross-attention of the question over the tokens, then two
  // per-token bilinear scorers. The value head reads a detached copy of the
  // pooled query, so value-loss gradients stop at the value head.
  HeadOutputs heads(Tape& t, Var hidden, Var question_embedding) const {
    const double inv_sqrt_h = 1.0 / std::sqrt(static_cast<double>(config_.hidden_size));
    Var qv = ad::add_row(ad::matmul(question_embedding, t.param(p(idx_.cross_q))), t.param(p(idx_.cross_q_b)));
    Var kv = ad::add_row(ad::matmul(hidden, t.param(p(idx_.cross_k))), t.param(p(idx_.cross_k_b)));
    Var vv = ad::add_row(ad::matmul(hidden, t.param(p(idx_.cross_v))), t.param(p(idx_.cross_v_b)));
    Var weights = ad::softmax_rows(ad::scale(ad::matmul_nt(qv, kv), inv_sqrt_h));
    Var context = ad::add_row(ad::matmul(ad::matmul(weights, vv), t.param(p(idx_.cross_o))), t.param(p(idx_.cross_o_b)));
    Var query = ad::layer_norm(ad::add(question_embedding, context), t.param(p(idx_.cross_ln_gain)),
                               t.param(p(idx_.cross_ln_bias)));

    Var start_keys = ad::matmul(hidden, t.param(p(idx_.start_w)));
    Var end_keys = ad::matmul(hidden, t.param(p(idx_.end_w)));
    HeadOutputs out;
    out.start_logits = ad::scale(ad::matmul_nt(query, start_keys), inv_sqrt_h);
    out.end_logits = ad::scale(ad::matmul_nt(query, end_keys), inv_sqrt_h);

    Var pooled = t.constant(query.value());
    Var v = ad::gelu(ad::add_row(ad::matmul(pooled, t.param(p(idx_.value_w1))), t.param(p(idx_.value_b1))));
    out.value = ad::add(ad::matmul(v, t.param(p(idx_.value_w2))), t.param(p(idx_.value_b2)));
    return out;
  }

  // log pi(a | s) on the tape: log p(start) + log p(end | end >= start).
  static Var action_log_prob(const HeadOutputs& h, SpanAction a) {
    return ad::add(ad::log_prob_at(h.start_logits, a.start), ad::log_prob_at(h.end_logits, a.end, a.start));
  }

  // ---- Inference API (no gradients) --------------------------------------

  HiddenStates encode_document(const Document& doc) const {
    Tape t;
    HiddenStates h;
    h.truncated = doc.size() > config_.max_seq_len;
    h.values = encode(t, doc).value();
    return h;
  }

  QuestionEmbedding embed_question(const std::string& q) const {
    Tape t;
    return QuestionEmbedding{q, question(t, q).value()};
  }

  SpanDistribution interact(const HiddenStates& hidden, const QuestionEmbedding& e) const {
    Tape t;
    const HeadOutputs h = heads(t, t.constant(hidden.values), t.constant(e.values));
    return distribution(h);
  }

  double value_estimate(const HiddenStates& hidden, const QuestionEmbedding& e) const {
    Tape t;
    return heads(t, t.constant(hidden.values), t.constant(e.values)).value.scalar();
  }

  static SpanDistribution distribution(const HeadOutputs& h) {
    SpanDistribution d;
    d.start_probs = softmax(h.start_logits.value().row(0));
    d.end_probs = softmax(h.end_logits.value().row(0));
    return d;
  }

  // Encodes a document once and answers many questions against it.
  struct Pass {
    std::vector<SpanDistribution> dists;
    std::vector<double> values;
  };
  Pass run(const Document& doc, const std::vector<std::string>& questions) const {
    Tape t;
    Var hidden = encode(t, doc);
    Pass out;
    for (const auto& q : questions) {
      const HeadOutputs h = heads(t, hidden, question(t, q));
      out.dists.push_back(distribution(h));
      out.values.push_back(h.value.scalar());
    }
    return out;
  }

 private:
  struct LayerIndex {
    size_t wq, bq, wk, bk, wv, bv, wo, bo, ln1_gain, ln1_bias, w1, b1, w2, b2, ln2_gain, ln2_bias;
  };
  struct Index {
    size_t text, position, box_x, box_y, embed_ln_gain, embed_ln_bias;
    std::vector<LayerIndex> layers;
    size_t question_proj, question_bias;
    size_t cross_q, cross_q_b, cross_k, cross_k_b, cross_v, cross_v_b, cross_o, cross_o_b;
    size_t cross_ln_gain, cross_ln_bias, start_w, end_w;
    size_t value_w1, value_b1, value_w2, value_b2;
  };

  // Counter that survives model copies (copies start from the current count).
  struct Counter {
    std::unique_ptr<std::atomic<long>> value = std::make_unique<std::atomic<long>>(0);
    Counter() = default;
    Counter(const Counter& o) : value(std::make_unique<std::atomic<long>>(o.value->load())) {}
    Counter& operator=(const Counter& o) {
      value->store(o.value->load());
      return *this;
    }
    Counter(Counter&&) noexcept = default;
    Counter& operator=(Counter&&) noexcept = default;
    std::atomic<long>* operator->() const { return value.get(); }
  };

  // Inference tapes never run backward, so routing through the mutable
  // parameter reference is safe for const callers.
  ad::Parameter& p(size_t i) const { return const_cast<ad::ParameterStore&>(params_)[i]; }

  ad::Bag token_bag(const std::string& token) const {
    const auto grams = text::char_trigrams("#" + token + "#");
    ad::Bag bag;
    const double w = 1.0 / static_cast<double>(grams.size());
    for (const auto& g : grams) {
      bag.emplace_back(static_cast<int>(text::hash_bucket(g, static_cast<size_t>(config_.trigram_hash_dim))), w);
    }
    return bag;
  }

  Var self_attention(Tape& t, Var x, const LayerIndex& l) const {
    const int heads = config_.n_heads;
    const int d = config_.hidden_size / heads;
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
    Var q = ad::add_row(ad::matmul(x, t.param(p(l.wq))), t.param(p(l.bq)));
    Var k = ad::add_row(ad::matmul(x, t.param(p(l.wk))), t.param(p(l.bk)));
    Var v = ad::add_row(ad::matmul(x, t.param(p(l.wv))), t.param(p(l.bv)));
    std::vector<Var> outs;
    for (int h = 0; h < heads; ++h) {
      Var qh = ad::slice_cols(q, h * d, d);
      Var kh = ad::slice_cols(k, h * d, d);
      Var vh = ad::slice_cols(v, h * d, d);
      Var a = ad::softmax_rows(ad::scale(ad::matmul_nt(qh, kh), inv_sqrt_d));
      outs.push_back(ad::matmul(a, vh));
    }
    Var merged = heads == 1 ? outs.front() : ad::concat_cols(outs);
    return ad::add_row(ad::matmul(merged, t.param(p(l.wo))), t.param(p(l.bo)));
  }

  void build() {
    Rng rng(config_.seed);
    const int h = config_.hidden_size;
    auto normal = [&](const std::string& name, int rows, int cols, double std) {
      Matrix m(rows, cols);
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = std * rng.normal();
      return params_.add(name, std::move(m));
    };
    auto constant = [&](const std::string& name, int rows, int cols, double v) {
      return params_.add(name, Matrix::Constant(rows, cols, v));
    };
    const double s = config_.init_std;
    idx_.text = normal("embed.text", config_.trigram_hash_dim, h, s);
    idx_.position = normal("embed.position", config_.max_seq_len, h, config_.position_init_std);
    idx_.box_x = normal("embed.box_x", config_.box_buckets, h, s);
    idx_.box_y = normal("embed.box_y", config_.box_buckets, h, s);
    idx_.embed_ln_gain = constant("embed.ln.gain", 1, h, 1.0);
    idx_.embed_ln_bias = constant("embed.ln.bias", 1, h, 0.0);
    const int f = h * config_.ffn_multiplier;
    for (int l = 0; l < config_.n_layers; ++l) {
      const std::string pre = "layer" + std::to_string(l) + ".";
      LayerIndex li{};
      li.wq = normal(pre + "attn.wq", h, h, s);
      li.bq = constant(pre + "attn.bq", 1, h, 0.0);
      li.wk = normal(pre + "attn.wk", h, h, s);
      li.bk = constant(pre + "attn.bk", 1, h, 0.0);
      li.wv = normal(pre + "attn.wv", h, h, s);
      li.bv = constant(pre + "attn.bv", 1, h, 0.0);
      li.wo = normal(pre + "attn.wo", h, h, s);
      li.bo = constant(pre + "attn.bo", 1, h, 0.0);
      li.ln1_gain = constant(pre + "ln1.gain", 1, h, 1.0);
      li.ln1_bias = constant(pre + "ln1.bias", 1, h, 0.0);
      li.w1 = normal(pre + "ffn.w1", h, f, s);
      li.b1 = constant(pre + "ffn.b1", 1, f, 0.0);
      li.w2 = normal(pre + "ffn.w2", f, h, s);
      li.b2 = constant(pre + "ffn.b2", 1, h, 0.0);
      li.ln2_gain = constant(pre + "ln2.gain", 1, h, 1.0);
      li.ln2_bias = constant(pre + "ln2.bias", 1, h, 0.0);
      idx_.layers.push_back(li);
    }
    idx_.question_proj = normal("question.proj", config_.trigram_hash_dim, h, s);
    idx_.question_bias = constant("question.bias", 1, h, 0.0);
    idx_.cross_q = normal("interact.wq", h, h, s);
    idx_.cross_q_b = constant("interact.bq", 1, h, 0.0);
    idx_.cross_k = normal("interact.wk", h, h, s);
    idx_.cross_k_b = constant("interact.bk", 1, h, 0.0);
    idx_.cross_v = normal("interact.wv", h, h, s);
    idx_.cross_v_b = constant("interact.bv", 1, h, 0.0);
    idx_.cross_o = normal("interact.wo", h, h, s);
    idx_.cross_o_b = constant("interact.bo", 1, h, 0.0);
    idx_.cross_ln_gain = constant("interact.ln.gain", 1, h, 1.0);
    idx_.cross_ln_bias = constant("interact.ln.bias", 1, h, 0.0);
    idx_.start_w = normal("interact.start", h, h, s);
    idx_.end_w = normal("interact.end", h, h, s);
    idx_.value_w1 = normal("value.w1", h, h, s);
    idx_.value_b1 = constant("value.b1", 1, h, 0.0);
    idx_.value_w2 = normal("value.w2", h, 1, s);
    idx_.value_b2 = constant("value.b2", 1, 1, 0.0);
    question_encoder_ = StandInEncoder(static_cast<size_t>(config_.trigram_hash_dim));
  }

  ModelConfig config_;
  ad::ParameterStore params_;
  Index idx_{};
  StandInEncoder question_encoder_{1};
  Counter truncations_;
};

// ---------------------------------------------------------------------------
// Decoding

inline void check_distribution(const SpanDistribution& d) {
  if (d.start_probs.empty() || d.start_probs.size() != d.end_probs.size()) {
    throw std::invalid_argument("span distribution: mismatched or empty vectors");
  }
}

// Argmax start, then argmax end over positions >= start; lowest index wins ties.
inline SpanAction greedy_decode(const SpanDistribution& d) {
  check_distribution(d);
  const int n = d.size();
  int start = 0;
  for (int i = 1; i < n; ++i) {
    if (d.start_probs[static_cast<size_t>(i)] > d.start_probs[static_cast<size_t>(start)]) start = i;
  }
  int end = start;
  for (int j = start + 1; j < n; ++j) {
    if (d.end_probs[static_cast<size_t>(j)] > d.end_probs[static_cast<size_t>(end)]) end = j;
  }
  return {start, end};
}

inline double action_log_prob(const SpanDistribution& d, SpanAction a) {
  double tail = 0.0;
  for (int j = a.start; j < d.size(); ++j) tail += d.end_probs[static_cast<size_t>(j)];
  return std::log(d.start_probs[static_cast<size_t>(a.start)]) +
         std::log(d.end_probs[static_cast<size_t>(a.end)] / tail);
}

struct SampledAction {
  SpanAction action;
  double log_prob = 0.0;
};

inline SampledAction sample_action(const SpanDistribution& d, Rng& rng) {
  check_distribution(d);
  const int start = static_cast<int>(rng.categorical(d.start_probs));
  std::span<const double> tail(d.end_probs.data() + start, d.end_probs.size() - static_cast<size_t>(start));
  double mass = 0.0;
  for (double v : tail) mass += v;
  // All end mass before start: fall back to the single-token span.
  const int end = mass > 0.0 ? start + static_cast<int>(rng.categorical(tail)) : start;
  SampledAction out{{start, end}, 0.0};
  out.log_prob = mass > 0.0 ? action_log_prob(d, out.action) : std::log(d.start_probs[static_cast<size_t>(start)]);
  return out;
}

struct Candidate {
  SpanAction action;
  double prob = 0.0;
};

// k distinct spans: sampled first, topped up with the most probable unseen
// spans, ordered by descending joint probability (ties by position).
inline std::vector<Candidate> top_k_candidates(const SpanDistribution& d, int k, Rng& rng,
                                               int max_attempts = 10000) {
  check_distribution(d);
  if (k < 1) throw std::invalid_argument("top_k_candidates: k must be >= 1");
  const int n = d.size();
  const long n_valid = static_cast<long>(n) * (n + 1) / 2;
  const int want = static_cast<int>(std::min<long>(k, n_valid));

  std::set<SpanAction> chosen;
  for (int attempt = 0; attempt < max_attempts && static_cast<int>(chosen.size()) < want; ++attempt) {
    chosen.insert(sample_action(d, rng).action);
  }
  if (static_cast<int>(chosen.size()) < want) {
    std::vector<Candidate> all;
    all.reserve(static_cast<size_t>(n_valid));
    for (int s = 0; s < n; ++s) {
      for (int e = s; e < n; ++e) all.push_back({{s, e}, d.joint_prob({s, e})});
    }
    std::stable_sort(all.begin(), all.end(), [](const Candidate& a, const Candidate& b) { return a.prob > b.prob; });
    for (const auto& c : all) {
      if (static_cast<int>(chosen.size()) >= want) break;
      chosen.insert(c.action);
    }
  }
  std::vector<Candidate> out;
  for (const auto& a : chosen) out.push_back({a, d.joint_prob(a)});
  std::stable_sort(out.begin(), out.end(), [](const Candidate& a, const Candidate& b) { return a.prob > b.prob; });
  return out;
}

}  // namespace docrl
