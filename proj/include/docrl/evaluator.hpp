#pragma once

#include <cstdio>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "docrl/corpus.hpp"
#include "docrl/model.hpp"
#include "docrl/text.hpp"

namespace docrl {

struct FieldResult {
  std::string field;
  int support = 0;
  int n_predicted = 0;
  int n_correct = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct EvalReport {
  std::vector<FieldResult> fields;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  int n_documents = 0;

  json to_json() const {
    json per_field = json::array();
    for (const auto& f : fields) {
      per_field.push_back({{"field", f.field},
                           {"support", f.support},
                           {"n_predicted", f.n_predicted},
                           {"n_correct", f.n_correct},
                           {"precision", f.precision},
                           {"recall", f.recall},
                           {"f1", f.f1}});
    }
    return json{{"fields", per_field},
                {"precision", precision},
                {"recall", recall},
                {"f1", f1},
                {"n_documents", n_documents}};
  }
};

inline std::string fixed2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

// Per-document predictions: field -> predicted answer string. A missing key
// means no prediction for that field.
using Predictions = std::map<std::string, std::string>;

// Field-level exact-match scoring after whitespace normalization, averaged
// with field support as weights.
inline EvalReport score_predictions(const FieldSchema& schema, const std::vector<Document>& docs,
                                    const std::vector<Predictions>& predictions) {
  if (docs.size() != predictions.size()) throw std::invalid_argument("score_predictions: size mismatch");
  EvalReport report;
  report.n_documents = static_cast<int>(docs.size());
  for (const auto& field : schema.fields) {
    FieldResult r;
    r.field = field;
    for (size_t d = 0; d < docs.size(); ++d) {
      const auto gold = docs[d].annotations.find(field);
      const auto pred = predictions[d].find(field);
      const bool has_gold = gold != docs[d].annotations.end();
      const bool has_pred = pred != predictions[d].end();
      if (has_gold) ++r.support;
      if (has_pred) ++r.n_predicted;
      if (has_gold && has_pred &&
          text::normalize_whitespace(gold->second.text) == text::normalize_whitespace(pred->second)) {
        ++r.n_correct;
      }
    }
    r.precision = r.n_predicted > 0 ? static_cast<double>(r.n_correct) / r.n_predicted : 0.0;
    r.recall = r.support > 0 ? static_cast<double>(r.n_correct) / r.support : 0.0;
    r.f1 = (r.precision + r.recall) > 0.0 ? 2.0 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
    report.fields.push_back(r);
  }
  double total_support = 0.0;
  for (const auto& r : report.fields) {
    total_support += r.support;
    report.precision += r.support * r.precision;
    report.recall += r.support * r.recall;
    report.f1 += r.support * r.f1;
  }
  if (total_support > 0.0) {
    report.precision /= total_support;
    report.recall /= total_support;
    report.f1 /= total_support;
  }
  return report;
}

// One question per field, greedy decoding, answer sliced from the document.
inline Predictions extract_all(const PolicyModel& model, const Document& doc, const FieldSchema& schema) {
  const auto pass = model.run(doc, schema.fields);
  Predictions out;
  for (size_t f = 0; f < schema.fields.size(); ++f) {
    const SpanAction a = greedy_decode(pass.dists[f]);
    out[schema.fields[f]] = doc.slice_text(a.start, a.end);
  }
  return out;
}

inline EvalReport evaluate(const PolicyModel& model, const std::vector<Document>& docs, const FieldSchema& schema) {
  if (docs.empty()) throw std::invalid_argument("evaluate: empty split");
  std::vector<Predictions> preds;
  preds.reserve(docs.size());
  for (const auto& doc : docs) preds.push_back(extract_all(model, doc, schema));
  return score_predictions(schema, docs, preds);
}

// Aligned text table: one row per field plus the weighted average, values in
// percent. With a baseline, a delta-F1 column is appended.
inline std::string format_report(const EvalReport& report, const EvalReport* baseline = nullptr) {
  std::string out;
  char line[256];
  std::snprintf(line, sizeof(line), "%-22s %8s %10s %10s %10s", "Field", "Support", "Precision", "Recall", "F1");
  out += line;
  if (baseline) out += "        dF1";
  out += "\n";
  auto row = [&](const std::string& name, int support, double p, double r, double f1, std::optional<double> base_f1) {
    std::snprintf(line, sizeof(line), "%-22s %8d %10s %10s %10s", name.c_str(), support, fixed2(100 * p).c_str(),
                  fixed2(100 * r).c_str(), fixed2(100 * f1).c_str());
    out += line;
    if (base_f1) {
      std::snprintf(line, sizeof(line), " %10s", fixed2(100 * (f1 - *base_f1)).c_str());
      out += line;
    }
    out += "\n";
  };
  int total = 0;
  for (size_t i = 0; i < report.fields.size(); ++i) {
    const auto& f = report.fields[i];
    total += f.support;
    std::optional<double> base;
    if (baseline && i < baseline->fields.size()) base = baseline->fields[i].f1;
    row(f.field, f.support, f.precision, f.recall, f.f1, base);
  }
  row("weighted", total, report.precision, report.recall, report.f1,
      baseline ? std::optional<double>(baseline->f1) : std::nullopt);
  return out;
}

}  // namespace docrl
