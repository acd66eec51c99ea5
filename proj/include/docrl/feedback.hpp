#pragma once

#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "docrl/corpus.hpp"
#include "docrl/evaluator.hpp"
#include "docrl/model.hpp"
#include "docrl/ppo.hpp"
#include "docrl/rewards.hpp"
#include "docrl/rng.hpp"
#include "docrl/text.hpp"

namespace docrl {

inline constexpr int kNoGood = -1;
inline constexpr const char* kNoGoodLabel = "No good options available";

struct CandidateOption {
  SpanAction action;
  std::string text;
  double prob = 0.0;
};

struct CandidateSet {
  std::string item_id;
  std::string document_id;
  std::string question;
  std::vector<CandidateOption> candidates;  // descending joint probability
};

struct Selection {
  std::string item_id;
  int choice = kNoGood;  // candidate index, or kNoGood
  std::string timestamp;
  std::string rater;
};

struct ScoredCandidate {
  SpanAction action;
  double reward = 0.0;
  RewardBreakdown breakdown;
};

// Up to k distinct spans sampled from the policy, with answer strings.
inline CandidateSet propose_candidates(const PolicyModel& model, const Document& doc, const std::string& question,
                                       Rng& rng, std::string item_id, int k = 5) {
  if (doc.tokens.empty()) throw std::invalid_argument("propose_candidates: document '" + doc.id + "' has no tokens");
  const SpanDistribution dist = model.run(doc, {question}).dists.front();
  CandidateSet set;
  set.item_id = std::move(item_id);
  set.document_id = doc.id;
  set.question = question;
  for (const Candidate& c : top_k_candidates(dist, k, rng)) {
    set.candidates.push_back({c.action, doc.slice_text(c.action.start, c.action.end), c.prob});
  }
  return set;
}

// Copy of `doc` whose tags mark the selected span as `question` and every
// other token as "other".
inline Document pseudo_tagged(const Document& doc, SpanAction selected, const std::string& question) {
  Document out = doc;
  for (int i = 0; i < out.size(); ++i) {
    out.tokens[static_cast<size_t>(i)].tag = (i >= selected.start && i <= selected.end) ? question : kOtherTag;
  }
  return out;
}

// Each candidate is scored against the selected one; NO_GOOD gives every
// candidate `no_good_reward`.
inline std::vector<ScoredCandidate> reward_from_selection(const Document& doc, const CandidateSet& set,
                                                          const Selection& selection, const RewardWeights& w,
                                                          const SentenceEncoder& enc, double no_good_reward = -0.25) {
  if (selection.item_id != set.item_id) throw std::invalid_argument("selection refers to a different item");
  if (selection.choice != kNoGood && (selection.choice < 0 || selection.choice >= static_cast<int>(set.candidates.size()))) {
    throw std::invalid_argument("selection choice " + std::to_string(selection.choice) + " out of range");
  }
  std::vector<ScoredCandidate> out;
  if (selection.choice == kNoGood) {
    for (const auto& c : set.candidates) {
      ScoredCandidate s;
      s.action = c.action;
      s.reward = no_good_reward;
      s.breakdown.total = no_good_reward;
      out.push_back(s);
    }
    return out;
  }
  const SpanAction chosen = set.candidates[static_cast<size_t>(selection.choice)].action;
  const Document tagged = pseudo_tagged(doc, chosen, set.question);
  for (const auto& c : set.candidates) {
    ScoredCandidate s;
    s.action = c.action;
    s.breakdown = unified_reward(tagged, c.action, chosen, set.question, w, enc);
    s.reward = s.breakdown.total;
    out.push_back(s);
  }
  return out;
}

// Oracle stand-in for the human: the candidate with the highest reward
// against the true annotation (first one on ties), or NO_GOOD when that
// reward is below `threshold`.
inline Selection simulate_expert(const CandidateSet& set, const Document& doc, const RewardWeights& w,
                                 const SentenceEncoder& enc, double threshold = 0.3) {
  Selection sel;
  sel.item_id = set.item_id;
  sel.rater = "simulated-expert";
  const SpanAction gt = gold_span(doc, set.question);
  double best = -std::numeric_limits<double>::infinity();
  int best_index = kNoGood;
  for (size_t i = 0; i < set.candidates.size(); ++i) {
    const double r = unified_reward(doc, set.candidates[i].action, gt, set.question, w, enc).total;
    if (r > best) {
      best = r;
      best_index = static_cast<int>(i);
    }
  }
  sel.choice = (best_index == kNoGood || best < threshold) ? kNoGood : best_index;
  return sel;
}

struct FeedbackTransition {
  const Document* doc = nullptr;
  std::string question;
  int field_index = 0;
  ScoredCandidate scored;
};

struct FeedbackUpdate {
  size_t n_transitions = 0;
  double mean_reward = 0.0;
  UpdateStats stats;
};

// One PPO update round over single-step feedback transitions (advantage
// r - V before normalization). Old log-probabilities and values come from
// the current parameters, which are unchanged since the candidates were served.
inline FeedbackUpdate apply_feedback_update(PolicyModel& model, PPOOptimizers& opt,
                                            const std::vector<FeedbackTransition>& pending, const PPOConfig& config) {
  FeedbackUpdate out;
  if (pending.empty()) return out;
  std::vector<Trajectory> trajectories;
  for (const auto& f : pending) {
    Tape t;
    const HeadOutputs h = model.heads(t, model.encode(t, *f.doc), model.question(t, f.question));
    Transition tr;
    tr.doc = f.doc;
    tr.question = f.question;
    tr.action = f.scored.action;
    tr.reward = f.scored.reward;
    tr.breakdown = f.scored.breakdown;
    tr.log_prob_old = PolicyModel::action_log_prob(h, f.scored.action).scalar();
    tr.value_old = h.value.scalar();
    tr.t = f.field_index;
    trajectories.push_back(Trajectory{{tr}});
    out.mean_reward += tr.reward;
  }
  out.n_transitions = pending.size();
  out.mean_reward /= static_cast<double>(pending.size());
  const auto adv = compute_advantages(trajectories, config.gamma, config.gae_lambda, config.normalize_advantages,
                                      config.center_per_question, config.advantage_std_floor);
  out.stats = ppo_update(model, opt, trajectories, adv, config);
  return out;
}

struct FeedbackConfig {
  int n_sets = 5;
  int docs_per_set = 4;
  int interactions = 3;
  int n_candidates = 5;
  double no_good_reward = -0.25;
  double expert_threshold = 0.3;
  uint64_t seed = 0;
  PPOConfig ppo;
  RewardConfig rewards;

  void validate() const {
    if (n_sets < 1 || docs_per_set < 1 || interactions < 1 || n_candidates < 1) {
      throw std::invalid_argument("FeedbackConfig: counts must be >= 1");
    }
    ppo.validate();
    rewards.weights.validate();
  }

  json to_json() const {
    return json{{"n_sets", n_sets},
                {"docs_per_set", docs_per_set},
                {"interactions", interactions},
                {"n_candidates", n_candidates},
                {"no_good_reward", no_good_reward},
                {"expert_threshold", expert_threshold},
                {"seed", seed},
                {"ppo", ppo.to_json()},
                {"rewards", rewards.to_json()}};
  }
  static FeedbackConfig from_json(const json& j) {
    FeedbackConfig c;
    c.n_sets = j.value("n_sets", c.n_sets);
    c.docs_per_set = j.value("docs_per_set", c.docs_per_set);
    c.interactions = j.value("interactions", c.interactions);
    c.n_candidates = j.value("n_candidates", c.n_candidates);
    c.no_good_reward = j.value("no_good_reward", c.no_good_reward);
    c.expert_threshold = j.value("expert_threshold", c.expert_threshold);
    c.seed = j.value("seed", c.seed);
    if (j.contains("ppo")) c.ppo = PPOConfig::from_json(j.at("ppo"));
    if (j.contains("rewards")) c.rewards = RewardConfig::from_json(j.at("rewards"));
    c.validate();
    return c;
  }
};

// Document sets for feedback sessions, drawn from dev (train when dev is
// empty). Sets are disjoint while the pool lasts.
inline std::vector<std::vector<size_t>> sample_document_sets(size_t pool_size, int n_sets, int docs_per_set,
                                                             uint64_t seed) {
  if (pool_size == 0) throw std::invalid_argument("no documents available for feedback sessions");
  Rng rng(Rng::mix(seed ^ 0xfeedULL));
  std::vector<size_t> order(pool_size);
  for (size_t i = 0; i < pool_size; ++i) order[i] = i;
  rng.shuffle(order);
  std::vector<std::vector<size_t>> sets(static_cast<size_t>(n_sets));
  size_t cursor = 0;
  for (auto& s : sets) {
    for (int k = 0; k < docs_per_set; ++k) {
      if (cursor == order.size()) {
        rng.shuffle(order);
        cursor = 0;
      }
      s.push_back(order[cursor++]);
    }
  }
  return sets;
}

class FeedbackError : public std::runtime_error {
 public:
  enum class Kind { kNotFound, kConflict, kBadRequest };
  FeedbackError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t tt = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline json candidate_set_json(const CandidateSet& set, const Document& doc, int round) {
  json tokens = json::array();
  for (const auto& t : doc.tokens) tokens.push_back({{"text", t.text}, {"bbox", t.bbox}});
  json candidates = json::array();
  for (size_t i = 0; i < set.candidates.size(); ++i) {
    const auto& c = set.candidates[i];
    candidates.push_back(
        {{"index", i}, {"start", c.action.start}, {"end", c.action.end}, {"text", c.text}, {"prob", c.prob}});
  }
  return json{{"done", false},
              {"item_id", set.item_id},
              {"document_id", set.document_id},
              {"question", set.question},
              {"interaction", round},
              {"tokens", tokens},
              {"candidates", candidates},
              {"no_good_label", kNoGoodLabel}};
}

// Candidate serving, selections and updates for several concurrent feedback
// sessions, each over its own document set and its own copy of the policy.
// Every state change is appended to a JSONL log; constructing the service on
// an existing log replays it.
class FeedbackService {
 public:
  FeedbackService(std::shared_ptr<const Corpus> corpus, PolicyModel base, FeedbackConfig config,
                  std::optional<std::filesystem::path> log_path = std::nullopt)
      : corpus_(std::move(corpus)), base_(std::move(base)), config_(std::move(config)), log_path_(std::move(log_path)) {
    config_.validate();
    if (corpus_->test.empty()) throw std::invalid_argument("feedback service needs a non-empty test split");
    pool_ = corpus_->dev.empty() ? &corpus_->train : &corpus_->dev;
    sets_ = sample_document_sets(pool_->size(), config_.n_sets, config_.docs_per_set, config_.seed);
    base_f1_ = evaluate(base_, corpus_->test, corpus_->schema).f1;
    if (log_path_ && std::filesystem::exists(*log_path_)) replay();
    if (log_path_) {
      if (log_path_->has_parent_path()) std::filesystem::create_directories(log_path_->parent_path());
      log_.open(*log_path_, std::ios::app);
      if (!log_) throw std::runtime_error("cannot open feedback log " + log_path_->string());
    }
  }

  const FeedbackConfig& config() const { return config_; }
  const Corpus& corpus() const { return *corpus_; }
  double base_f1() const { return base_f1_; }

  // GET /api/session: opens a session on the next document set (or the
  // given one).
  json create_session(std::optional<int> set_index = std::nullopt) {
    std::lock_guard lock(sessions_mutex_);
    const int set = set_index.value_or(static_cast<int>(sessions_.size()) % config_.n_sets);
    if (set < 0 || set >= config_.n_sets) {
      throw FeedbackError(FeedbackError::Kind::kBadRequest, "set index out of range");
    }
    const std::string id = "s" + std::to_string(sessions_.size());
    append({{"event", "session"}, {"session_id", id}, {"set", set}});
    Session& s = open_session(id, set);
    std::lock_guard slock(s.mutex);
    return describe(s);
  }

  json describe_session(const std::string& id) {
    Session& s = session(id);
    std::lock_guard lock(s.mutex);
    return describe(s);
  }

  // GET /api/session/{id}/next
  json next(const std::string& id) {
    Session& s = session(id);
    std::lock_guard lock(s.mutex);
    if (s.outstanding) return serve_json(s, s.items.at(*s.outstanding));
    if (s.finished()) return json{{"done", true}, {"awaiting_update", false}};
    if (s.cursor == s.plan.size()) {
      return json{{"done", true}, {"awaiting_update", true}, {"pending_updates", s.pending.size()}};
    }
    const auto [doc_index, field_index] = s.plan[s.cursor];
    const std::string item_id = s.id + "-" + std::to_string(s.round) + "-" + std::to_string(s.cursor);
    Rng rng(Rng::mix(config_.seed ^ text::fnv1a64(item_id)));
    const Document& doc = (*pool_)[doc_index];
    CandidateSet set =
        propose_candidates(s.model, doc, corpus_->schema.fields[field_index], rng, item_id, config_.n_candidates);
    append(served_record(s, set, doc_index, field_index));
    record_served(s, std::move(set), doc_index, field_index);
    return serve_json(s, s.items.at(item_id));
  }

  // POST /api/session/{id}/selection
  json select(const std::string& id, Selection selection) {
    Session& s = session(id);
    std::lock_guard lock(s.mutex);
    const auto it = s.items.find(selection.item_id);
    if (it == s.items.end()) {
      throw FeedbackError(FeedbackError::Kind::kNotFound, "unknown item '" + selection.item_id + "'");
    }
    if (it->second.answered) {
      throw FeedbackError(FeedbackError::Kind::kConflict, "item '" + selection.item_id + "' already answered");
    }
    if (selection.choice != kNoGood &&
        (selection.choice < 0 || selection.choice >= static_cast<int>(it->second.set.candidates.size()))) {
      throw FeedbackError(FeedbackError::Kind::kBadRequest, "choice out of range");
    }
    if (selection.timestamp.empty()) selection.timestamp = utc_timestamp();
    append({{"event", "selection"},
            {"session_id", s.id},
            {"item_id", selection.item_id},
            {"choice", selection.choice},
            {"timestamp", selection.timestamp},
            {"rater", selection.rater}});
    record_selection(s, selection);
    return json{{"accepted", true}, {"pending_updates", s.pending.size()}};
  }

  // POST /api/session/{id}/update
  json update(const std::string& id) {
    Session& s = session(id);
    std::lock_guard lock(s.mutex);
    if (s.finished()) throw FeedbackError(FeedbackError::Kind::kConflict, "session already finished");
    if (s.cursor < s.plan.size() || s.outstanding) {
      throw FeedbackError(FeedbackError::Kind::kConflict, "interaction round not complete");
    }
    const double before = s.f1_history.back();
    const FeedbackUpdate u = apply_feedback_update(s.model, s.optimizers, s.pending, config_.ppo);
    const double after = evaluate(s.model, corpus_->test, corpus_->schema).f1;
    append({{"event", "update"},
            {"session_id", s.id},
            {"interaction", s.round},
            {"n_transitions", u.n_transitions},
            {"mean_reward", u.mean_reward},
            {"test_f1_before", before},
            {"test_f1_after", after}});
    finish_round(s, after, u.mean_reward);
    return json{{"interaction", s.round - 1},
                {"test_f1_before", before},
                {"test_f1_after", after},
                {"mean_reward", u.mean_reward},
                {"n_transitions", u.n_transitions}};
  }

  // GET /api/metrics: F1 after each interaction (index 0 = before any).
  json metrics() {
    std::lock_guard lock(sessions_mutex_);
    json sessions = json::array();
    for (const auto& id : order_) {
      Session& s = *sessions_.at(id);
      std::lock_guard slock(s.mutex);
      json points = json::array();
      for (size_t i = 0; i < s.f1_history.size(); ++i) {
        json p{{"interaction", i}, {"test_f1", s.f1_history[i]}};
        if (i > 0) p["mean_reward"] = s.reward_history[i - 1];
        points.push_back(p);
      }
      sessions.push_back({{"session_id", s.id}, {"set", s.set}, {"points", points}});
    }
    return json{{"base_test_f1", base_f1_}, {"sessions", sessions}};
  }

  // Ground truth for a served document (simulated expert only).
  const Document& document(const std::string& document_id) const {
    for (const auto& d : *pool_) {
      if (d.id == document_id) return d;
    }
    throw FeedbackError(FeedbackError::Kind::kNotFound, "unknown document '" + document_id + "'");
  }

 private:
  struct ServedItem {
    CandidateSet set;
    size_t doc_index = 0;
    size_t field_index = 0;
    int round = 0;
    bool answered = false;
  };

  struct Session {
    std::string id;
    int set = 0;
    PolicyModel model;
    PPOOptimizers optimizers;
    std::vector<std::pair<size_t, size_t>> plan;  // (document, field) per item, fixed order
    size_t cursor = 0;
    int round = 1;
    int max_rounds = 0;
    std::optional<std::string> outstanding;
    std::map<std::string, ServedItem> items;
    std::vector<FeedbackTransition> pending;
    std::vector<double> f1_history;
    std::vector<double> reward_history;
    std::mutex mutex;

    Session(PolicyModel m, const PPOConfig& c) : model(std::move(m)), optimizers(c) {}
    bool finished() const { return round > max_rounds; }
  };

  Session& open_session(const std::string& id, int set) {
    auto s = std::make_unique<Session>(base_, config_.ppo);
    s->id = id;
    s->set = set;
    s->max_rounds = config_.interactions;
    for (size_t d : sets_[static_cast<size_t>(set)]) {
      for (size_t f = 0; f < corpus_->schema.fields.size(); ++f) s->plan.emplace_back(d, f);
    }
    s->f1_history.push_back(base_f1_);
    Session& ref = *s;
    sessions_[id] = std::move(s);
    order_.push_back(id);
    return ref;
  }

  Session& session(const std::string& id) {
    std::lock_guard lock(sessions_mutex_);
    const auto it = sessions_.find(id);
    if (it == sessions_.end()) throw FeedbackError(FeedbackError::Kind::kNotFound, "unknown session '" + id + "'");
    return *it->second;
  }

  json describe(const Session& s) const {
    return json{{"session_id", s.id},
                {"set", s.set},
                {"n_items", s.plan.size()},
                {"interaction", std::min(s.round, s.max_rounds)},
                {"interactions", s.max_rounds},
                {"test_f1", s.f1_history.back()}};
  }

  json serve_json(const Session& s, const ServedItem& item) const {
    return candidate_set_json(item.set, (*pool_)[item.doc_index], s.round);
  }

  json served_record(const Session& s, const CandidateSet& set, size_t doc_index, size_t field_index) const {
    json candidates = json::array();
    for (const auto& c : set.candidates) {
      candidates.push_back({{"start", c.action.start}, {"end", c.action.end}, {"text", c.text}, {"prob", c.prob}});
    }
    return json{{"event", "served"},       {"session_id", s.id},           {"item_id", set.item_id},
                {"document_id", set.document_id}, {"document_index", doc_index}, {"field_index", field_index},
                {"question", set.question},  {"candidates", candidates}};
  }

  void record_served(Session& s, CandidateSet set, size_t doc_index, size_t field_index) {
    const std::string item_id = set.item_id;
    s.items[item_id] = ServedItem{std::move(set), doc_index, field_index, s.round, false};
    s.outstanding = item_id;
    ++s.cursor;
  }

  void record_selection(Session& s, const Selection& selection) {
    ServedItem& item = s.items.at(selection.item_id);
    const Document& doc = (*pool_)[item.doc_index];
    for (const auto& scored : reward_from_selection(doc, item.set, selection, config_.rewards.weights,
                                                    *config_.rewards.encoder, config_.no_good_reward)) {
      s.pending.push_back({&doc, item.set.question, static_cast<int>(item.field_index), scored});
    }
    item.answered = true;
    if (s.outstanding == selection.item_id) s.outstanding.reset();
  }

  void finish_round(Session& s, double f1_after, double mean_reward) {
    s.pending.clear();
    s.f1_history.push_back(f1_after);
    s.reward_history.push_back(mean_reward);
    s.cursor = 0;
    ++s.round;
  }

  void append(const json& record) {
    if (!log_.is_open()) return;
    log_ << record.dump() << '\n';
    log_.flush();
  }

  // Rebuilds sessions from the log. Served candidates and recorded F1 values
  // are taken from the log; parameter updates are recomputed, which is exact
  // because they are deterministic.
  void replay() {
    std::ifstream in(*log_path_);
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      json r;
      try {
        r = json::parse(line);
      } catch (const json::parse_error&) {
        throw std::runtime_error("feedback log line " + std::to_string(line_no) + " is not valid JSON");
      }
      const std::string event = r.at("event");
      if (event == "session") {
        open_session(r.at("session_id"), r.at("set"));
        continue;
      }
      Session& s = *sessions_.at(r.at("session_id").get<std::string>());
      if (event == "served") {
        CandidateSet set;
        set.item_id = r.at("item_id");
        set.document_id = r.at("document_id");
        set.question = r.at("question");
        for (const auto& c : r.at("candidates")) {
          set.candidates.push_back({{c.at("start").get<int>(), c.at("end").get<int>()}, c.at("text"), c.at("prob")});
        }
        record_served(s, std::move(set), r.at("document_index"), r.at("field_index"));
      } else if (event == "selection") {
        record_selection(s, Selection{r.at("item_id"), r.at("choice"), r.at("timestamp"), r.at("rater")});
      } else if (event == "update") {
        const FeedbackUpdate u = apply_feedback_update(s.model, s.optimizers, s.pending, config_.ppo);
        finish_round(s, r.at("test_f1_after"), u.mean_reward);
      } else {
        throw std::runtime_error("feedback log line " + std::to_string(line_no) + ": unknown event '" + event + "'");
      }
    }
  }

  std::shared_ptr<const Corpus> corpus_;
  PolicyModel base_;
  FeedbackConfig config_;
  std::optional<std::filesystem::path> log_path_;
  std::ofstream log_;
  const std::vector<Document>* pool_ = nullptr;
  std::vector<std::vector<size_t>> sets_;
  double base_f1_ = 0.0;
  std::mutex sessions_mutex_;
  std::map<std::string, std::unique_ptr<Session>> sessions_;
  std::vector<std::string> order_;
};

}  // namespace docrl

namespace docrl {

// The request surface shared by the HTTP server and in-process callers.
class FeedbackApi {
 public:
  virtual ~FeedbackApi() = default;
  virtual json create_session(std::optional<int> set) = 0;
  virtual json next(const std::string& session_id) = 0;
  virtual json select(const std::string& session_id, const json& body) = 0;
  virtual json update(const std::string& session_id) = 0;
  virtual json metrics() = 0;
};

inline Selection parse_selection(const json& body) {
  if (!body.is_object() || !body.contains("item_id") || !body.contains("choice")) {
    throw FeedbackError(FeedbackError::Kind::kBadRequest, "selection needs item_id and choice");
  }
  Selection s;
  s.item_id = body.at("item_id").get<std::string>();
  const json& choice = body.at("choice");
  if (choice.is_string() && choice.get<std::string>() == "NO_GOOD") {
    s.choice = kNoGood;
  } else if (choice.is_number_integer()) {
    s.choice = choice.get<int>();
    if (s.choice < 0) throw FeedbackError(FeedbackError::Kind::kBadRequest, "choice must be 0..4 or \"NO_GOOD\"");
  } else {
    throw FeedbackError(FeedbackError::Kind::kBadRequest, "choice must be 0..4 or \"NO_GOOD\"");
  }
  s.rater = body.value("rater", std::string("anonymous"));
  s.timestamp = body.value("timestamp", std::string());
  return s;
}

class InProcessFeedbackApi : public FeedbackApi {
 public:
  explicit InProcessFeedbackApi(FeedbackService& service) : service_(service) {}
  json create_session(std::optional<int> set) override { return service_.create_session(set); }
  json next(const std::string& id) override { return service_.next(id); }
  json select(const std::string& id, const json& body) override { return service_.select(id, parse_selection(body)); }
  json update(const std::string& id) override { return service_.update(id); }
  json metrics() override { return service_.metrics(); }

 private:
  FeedbackService& service_;
};

struct FeedbackCurve {
  std::string session_id;
  int set = 0;
  std::vector<double> test_f1;  // index 0: before any interaction
  std::vector<double> mean_reward;
  int n_selections = 0;
  int n_no_good = 0;
};

// Drives one session per document set through the API with the simulated
// expert. Selections carry the interaction number as a logical timestamp so
// that logs are reproducible.
inline std::vector<FeedbackCurve> run_simulated_feedback(FeedbackApi& api, const Corpus& corpus,
                                                         const FeedbackConfig& config) {
  std::map<std::string, const Document*> by_id;
  for (const auto* split : {&corpus.train, &corpus.dev, &corpus.test}) {
    for (const auto& d : *split) by_id[d.id] = &d;
  }
  std::vector<FeedbackCurve> curves;
  for (int set = 0; set < config.n_sets; ++set) {
    const json info = api.create_session(set);
    FeedbackCurve curve;
    curve.session_id = info.at("session_id");
    curve.set = set;
    curve.test_f1.push_back(info.at("test_f1"));
    for (int round = 1; round <= config.interactions; ++round) {
      for (;;) {
        const json item = api.next(curve.session_id);
        if (item.at("done").get<bool>()) break;
        CandidateSet cs;
        cs.item_id = item.at("item_id");
        cs.document_id = item.at("document_id");
        cs.question = item.at("question");
        for (const auto& c : item.at("candidates")) {
          cs.candidates.push_back({{c.at("start").get<int>(), c.at("end").get<int>()}, c.at("text"), c.at("prob")});
        }
        const Selection sel = simulate_expert(cs, *by_id.at(cs.document_id), config.rewards.weights,
                                              *config.rewards.encoder, config.expert_threshold);
        json body{{"item_id", sel.item_id}, {"rater", sel.rater}, {"timestamp", "interaction-" + std::to_string(round)}};
        body["choice"] = sel.choice == kNoGood ? json("NO_GOOD") : json(sel.choice);
        api.select(curve.session_id, body);
        ++curve.n_selections;
        if (sel.choice == kNoGood) ++curve.n_no_good;
      }
      const json u = api.update(curve.session_id);
      curve.test_f1.push_back(u.at("test_f1_after"));
      curve.mean_reward.push_back(u.at("mean_reward"));
    }
    curves.push_back(std::move(curve));
  }
  return curves;
}

}  // namespace docrl
