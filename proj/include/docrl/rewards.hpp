#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "docrl/corpus.hpp"
#include "docrl/encoder.hpp"
#include "docrl/model.hpp"
#include "docrl/text.hpp"

namespace docrl {

struct RewardWeights {
  double string = 0.25;
  double location = 0.25;
  double label = 0.25;
  double semantic = 0.25;

  void validate() const {
    for (double w : {string, location, label, semantic}) {
      if (!std::isfinite(w) || w < 0.0) throw std::invalid_argument("reward weights must be finite and non-negative");
    }
  }

  json to_json() const { return json::array({string, location, label, semantic}); }
  static RewardWeights from_json(const json& j) {
    if (!j.is_array() || j.size() != 4) throw std::invalid_argument("reward weights must be an array of 4 numbers");
    RewardWeights w{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
    w.validate();
    return w;
  }
  bool operator==(const RewardWeights&) const = default;
};

struct RewardBreakdown {
  double r_string = 0.0;
  double r_location = 0.0;
  double r_label = 0.0;
  double r_semantic = 0.0;
  double total = 0.0;

  // total == weighted sum of the components.
  bool consistent(const RewardWeights& w, double tol = 1e-12) const {
    const double expect = w.string * r_string + w.location * r_location + w.label * r_label + w.semantic * r_semantic;
    return std::abs(expect - total) <= tol;
  }
};

// Unit-cost Levenshtein distance over code points.
inline size_t levenshtein(std::string_view a, std::string_view b) {
  const std::u32string x = text::decode_utf8(a);
  const std::u32string y = text::decode_utf8(b);
  std::vector<size_t> prev(y.size() + 1), cur(y.size() + 1);
  for (size_t j = 0; j <= y.size(); ++j) prev[j] = j;
  for (size_t i = 1; i <= x.size(); ++i) {
    cur[0] = i;
    for (size_t j = 1; j <= y.size(); ++j) {
      const size_t sub = prev[j - 1] + (x[i - 1] == y[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[y.size()];
}

// 1 - d(y, y_hat) / max(|y|, |y_hat|); 1 when both strings are empty.
inline double string_reward(std::string_view y, std::string_view y_hat) {
  const size_t ly = text::decode_utf8(y).size();
  const size_t lh = text::decode_utf8(y_hat).size();
  const size_t longest = std::max(ly, lh);
  if (longest == 0) return 1.0;
  return 1.0 - static_cast<double>(levenshtein(y, y_hat)) / static_cast<double>(longest);
}

// IoU of two inclusive token spans.
inline double location_reward(SpanAction a, SpanAction gt) {
  if (a.start > a.end || gt.start > gt.end) throw std::invalid_argument("location_reward: span with start > end");
  const int inter = std::max(0, std::min(a.end, gt.end) - std::max(a.start, gt.start) + 1);
  const int len_a = a.end - a.start + 1;
  const int len_gt = gt.end - gt.start + 1;
  return static_cast<double>(inter) / static_cast<double>(len_a + len_gt - inter);
}

inline void check_span(const Document& doc, SpanAction a) {
  if (a.start < 0 || a.start > a.end || a.end >= doc.size()) {
    throw std::invalid_argument("span [" + std::to_string(a.start) + ", " + std::to_string(a.end) +
                                "] invalid for document '" + doc.id + "'");
  }
}

// The strictly most frequent tag over the span; "other" on a tie for the top.
inline std::string majority_label(const Document& doc, SpanAction a) {
  check_span(doc, a);
  std::map<std::string, int> counts;
  for (int i = a.start; i <= a.end; ++i) ++counts[doc.tokens[static_cast<size_t>(i)].tag];
  int best = 0;
  int n_best = 0;
  std::string label = kOtherTag;
  for (const auto& [tag, c] : counts) {
    if (c > best) {
      best = c;
      n_best = 1;
      label = tag;
    } else if (c == best) {
      ++n_best;
    }
  }
  return n_best == 1 ? label : std::string(kOtherTag);
}

inline double label_reward(const Document& doc, SpanAction a, const std::string& question) {
  const std::string label = majority_label(doc, a);
  if (label == question) return 1.0;
  if (label == kOtherTag) return 0.0;
  return -1.0;
}

inline double semantic_reward(std::string_view y, std::string_view y_hat, const SentenceEncoder& enc) {
  return cosine(enc.encode(y), enc.encode(y_hat));
}

inline RewardBreakdown combine_rewards(const RewardWeights& w, double r_string, double r_location, double r_label,
                                       double r_semantic) {
  RewardBreakdown r{r_string, r_location, r_label, r_semantic, 0.0};
  r.total = w.string * r_string + w.location * r_location + w.label * r_label + w.semantic * r_semantic;
  return r;
}

// Weighted combination of the four components; y and y_hat are the slices of
// the document under the two spans.
inline RewardBreakdown unified_reward(const Document& doc, SpanAction a, SpanAction a_gt, const std::string& question,
                                      const RewardWeights& w, const SentenceEncoder& enc) {
  check_span(doc, a);
  check_span(doc, a_gt);
  const std::string y = doc.slice_text(a_gt.start, a_gt.end);
  const std::string y_hat = doc.slice_text(a.start, a.end);
  return combine_rewards(w, string_reward(y, y_hat), location_reward(a, a_gt), label_reward(doc, a, question),
                         semantic_reward(y, y_hat, enc));
}

inline std::unique_ptr<SentenceEncoder> make_encoder(const json& j) {
  const std::string kind = j.value("kind", std::string("trigram-hash"));
  if (kind != "trigram-hash") throw std::invalid_argument("unknown encoder kind '" + kind + "'");
  return std::make_unique<StandInEncoder>(j.value("hash_dim", StandInEncoder::kDefaultHashDim));
}

}  // namespace docrl
