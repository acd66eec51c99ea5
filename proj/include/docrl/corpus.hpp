#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "docrl/digest.hpp"
#include "docrl/rng.hpp"
#include "docrl/text.hpp"
#include "json.hpp"

namespace docrl {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

inline constexpr const char* kOtherTag = "other";
inline constexpr int kPageUnits = 1000;

struct Token {
  std::string text;
  std::array<int, 4> bbox{0, 0, 0, 0};  // x0, y0, x1, y1 in 0..1000
  std::string tag = kOtherTag;

  bool operator==(const Token&) const = default;
};

struct FieldSchema {
  std::vector<std::string> fields;

  bool contains(const std::string& name) const {
    return std::find(fields.begin(), fields.end(), name) != fields.end();
  }
  bool operator==(const FieldSchema&) const = default;
};

// Inclusive token span [start, end] answering one field.
struct AnswerAnnotation {
  std::string field;
  int start = 0;
  int end = 0;
  std::string text;

  bool operator==(const AnswerAnnotation&) const = default;
};

struct Document {
  std::string id;
  std::vector<Token> tokens;
  std::map<std::string, AnswerAnnotation> annotations;

  int size() const { return static_cast<int>(tokens.size()); }

  // Space-joined token texts of tokens[start..end].
  std::string slice_text(int start, int end) const {
    std::string out;
    for (int i = start; i <= end; ++i) {
      if (i > start) out.push_back(' ');
      out += tokens[static_cast<size_t>(i)].text;
    }
    return out;
  }

  bool operator==(const Document&) const = default;
};

struct Provenance {
  uint64_t seed = 0;
  std::string config_digest;
  json generator;  // generator config, or null for externally produced corpora

  bool operator==(const Provenance&) const = default;
};

struct Corpus {
  FieldSchema schema;
  std::vector<Document> train;
  std::vector<Document> dev;
  std::vector<Document> test;
  Provenance provenance;

  const std::vector<Document>& split(const std::string& name) const {
    if (name == "train") return train;
    if (name == "dev") return dev;
    if (name == "test") return test;
    throw std::invalid_argument("unknown split '" + name + "'");
  }

  bool operator==(const Corpus&) const = default;
};

// Malformed bytes or structure in a corpus file.
class CorpusParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Well-formed records that break a Token/Annotation/Document invariant.
class CorpusInvariantError : public std::runtime_error {
 public:
  CorpusInvariantError(std::string document_id, const std::string& reason)
      : std::runtime_error("document '" + document_id + "': " + reason),
        document_id_(std::move(document_id)) {}
  const std::string& document_id() const { return document_id_; }

 private:
  std::string document_id_;
};

// ---------------------------------------------------------------------------
// Validation

inline void validate_schema(const FieldSchema& schema) {
  std::set<std::string> seen;
  for (const auto& f : schema.fields) {
    if (f.empty()) throw CorpusInvariantError("<schema>", "empty field name");
    if (f == kOtherTag) {
      throw CorpusInvariantError("<schema>", "'other' is reserved and cannot be a field");
    }
    if (!seen.insert(f).second) {
      throw CorpusInvariantError("<schema>", "duplicate field '" + f + "'");
    }
  }
}

inline void validate_document(const Document& doc, const FieldSchema& schema) {
  auto fail = [&](const std::string& why) { throw CorpusInvariantError(doc.id, why); };
  if (doc.id.empty()) fail("empty document id");
  for (size_t i = 0; i < doc.tokens.size(); ++i) {
    const Token& t = doc.tokens[i];
    const std::string where = "token " + std::to_string(i);
    if (t.text.empty()) fail(where + " has empty text");
    const auto& b = t.bbox;
    for (int v : b) {
      if (v < 0 || v > kPageUnits) fail(where + " bbox outside 0..1000");
    }
    if (b[0] > b[2] || b[1] > b[3]) fail(where + " bbox has x0>x1 or y0>y1");
    if (t.tag != kOtherTag && !schema.contains(t.tag)) {
      fail(where + " tag '" + t.tag + "' not in schema");
    }
  }
  std::vector<std::pair<int, int>> ranges;
  for (const auto& [key, ann] : doc.annotations) {
    const std::string where = "annotation '" + key + "'";
    if (ann.field != key) fail(where + " field name mismatch");
    if (!schema.contains(ann.field)) fail(where + " field not in schema");
    if (ann.start < 0 || ann.start > ann.end || ann.end >= doc.size()) {
      fail(where + " span [" + std::to_string(ann.start) + ", " + std::to_string(ann.end) +
           "] invalid for document length " + std::to_string(doc.size()));
    }
    if (doc.slice_text(ann.start, ann.end) != ann.text) {
      fail(where + " text does not match its token span");
    }
    for (int i = ann.start; i <= ann.end; ++i) {
      if (doc.tokens[static_cast<size_t>(i)].tag != ann.field) {
        fail(where + " covers token " + std::to_string(i) + " tagged '" +
             doc.tokens[static_cast<size_t>(i)].tag + "'");
      }
    }
    ranges.emplace_back(ann.start, ann.end);
  }
  std::sort(ranges.begin(), ranges.end());
  for (size_t i = 1; i < ranges.size(); ++i) {
    if (ranges[i].first <= ranges[i - 1].second) fail("annotations overlap");
  }
}

inline void validate_corpus(const Corpus& corpus) {
  validate_schema(corpus.schema);
  std::set<std::string> ids;
  for (const auto* split : {&corpus.train, &corpus.dev, &corpus.test}) {
    for (const auto& doc : *split) {
      validate_document(doc, corpus.schema);
      if (!ids.insert(doc.id).second) {
        throw CorpusInvariantError(doc.id, "document id appears more than once across splits");
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Synthetic generator

struct GeneratorConfig {
  int n_fields = 4;
  int n_train = 626;
  int n_dev = 0;
  int n_test = 347;
  int min_tokens = 32;
  int max_tokens = 96;
  uint64_t seed = 0;

  json to_json() const {
    return json{{"n_fields", n_fields}, {"n_train", n_train},       {"n_dev", n_dev},
                {"n_test", n_test},     {"min_tokens", min_tokens}, {"max_tokens", max_tokens},
                {"seed", seed}};
  }
  static GeneratorConfig from_json(const json& j) {
    GeneratorConfig c;
    c.n_fields = j.value("n_fields", c.n_fields);
    c.n_train = j.value("n_train", c.n_train);
    c.n_dev = j.value("n_dev", c.n_dev);
    c.n_test = j.value("n_test", c.n_test);
    c.min_tokens = j.value("min_tokens", c.min_tokens);
    c.max_tokens = j.value("max_tokens", c.max_tokens);
    c.seed = j.value("seed", c.seed);
    return c;
  }
};

namespace synth {

enum class Kind { kCompany, kAddress, kDate, kMoney, kTime, kPhone, kCode, kPerson, kCount, kCard, kEmail, kUrl, kPayment };
enum class Band { kHeader, kFooter };

struct FieldSpec {
  std::string name;
  Kind kind;
  Band band;
  std::vector<std::string> keys;  // empty: the field is identified by position
};

inline constexpr int kMinSpanLength = 1;

inline const std::vector<FieldSpec>& catalogue() {
  static const std::vector<FieldSpec> specs = {
      {"company", Kind::kCompany, Band::kHeader, {}},
      {"address", Kind::kAddress, Band::kHeader, {}},
      {"date", Kind::kDate, Band::kHeader, {"DATE", "Date:", "DATE:", "Dated"}},
      {"total", Kind::kMoney, Band::kFooter, {"TOTAL", "TOTAL:", "Total", "GRAND TOTAL", "AMOUNT DUE"}},
      {"tax", Kind::kMoney, Band::kFooter, {"TAX", "GST", "SST 6%", "Tax:"}},
      {"subtotal", Kind::kMoney, Band::kFooter, {"SUBTOTAL", "Sub Total", "SUB-TOTAL"}},
      {"cash", Kind::kMoney, Band::kFooter, {"CASH", "Cash Tendered", "TENDER"}},
      {"change", Kind::kMoney, Band::kFooter, {"CHANGE", "Change Due", "BALANCE"}},
      {"discount", Kind::kMoney, Band::kFooter, {"DISCOUNT", "Disc", "PROMO"}},
      {"service_charge", Kind::kMoney, Band::kFooter, {"SERVICE CHARGE", "SVC CHG", "Service 10%"}},
      {"rounding", Kind::kMoney, Band::kFooter, {"ROUNDING", "Rounding Adj", "RND"}},
      {"invoice_no", Kind::kCode, Band::kHeader, {"INVOICE NO", "Inv No:", "Receipt #", "BILL"}},
      {"time", Kind::kTime, Band::kHeader, {"TIME", "Time:", "@"}},
      {"phone", Kind::kPhone, Band::kHeader, {"TEL", "Tel:", "Phone", "PH"}},
      {"cashier", Kind::kPerson, Band::kHeader, {"CASHIER", "Cashier:", "Served by", "OP"}},
      {"table_no", Kind::kCount, Band::kHeader, {"TABLE", "Table No", "TBL"}},
      {"guest_count", Kind::kCount, Band::kHeader, {"PAX", "Guests", "COVERS"}},
      {"member_id", Kind::kCode, Band::kFooter, {"MEMBER", "Member ID", "LOYALTY"}},
      {"card_no", Kind::kCard, Band::kFooter, {"CARD", "Card No", "ACCT"}},
      {"approval_code", Kind::kCode, Band::kFooter, {"APPR CODE", "Auth", "APPROVAL"}},
      {"item_count", Kind::kCount, Band::kFooter, {"QTY", "Total Items", "ITEMS"}},
      {"order_no", Kind::kCode, Band::kHeader, {"ORDER", "Order #", "CHK"}},
      {"terminal_id", Kind::kCode, Band::kFooter, {"TID", "Terminal", "POS"}},
      {"gst_id", Kind::kCode, Band::kHeader, {"GST ID", "GST Reg No", "TAX ID"}},
      {"email", Kind::kEmail, Band::kFooter, {"EMAIL", "E-mail", "Mail:"}},
      {"website", Kind::kUrl, Band::kFooter, {"WEB", "Visit", "Site:"}},
      {"due_date", Kind::kDate, Band::kFooter, {"DUE DATE", "Due", "PAY BY"}},
      {"payment_method", Kind::kPayment, Band::kFooter, {"PAYMENT", "Paid by", "MODE"}},
      {"tip", Kind::kMoney, Band::kFooter, {"TIP", "Gratuity", "TIPS"}},
      {"points", Kind::kCount, Band::kFooter, {"POINTS", "Points Earned", "PTS"}},
  };
  return specs;
}

inline FieldSpec spec_for(int index) {
  const auto& cat = catalogue();
  if (index < static_cast<int>(cat.size())) return cat[static_cast<size_t>(index)];
  const std::string n = std::to_string(index + 1);
  return {"field_" + n, Kind::kCode, (index % 2 == 0) ? Band::kHeader : Band::kFooter,
          {"F" + n, "Field " + n + ":", "REF" + n}};
}

inline const std::vector<std::string> kWords = {
    "GOLDEN", "SUNRISE", "MAWAR", "EVERGREEN", "PERDANA", "HARMONY", "SENTOSA", "MAJU",
    "LUCKY",  "ORIENT",  "PERMATA", "SINAR",   "JAYA",    "CITY",    "PACIFIC", "EMAS"};
inline const std::vector<std::string> kCompanySuffix = {"SDN BHD", "ENTERPRISE", "TRADING",
                                                        "MART",    "CAFE",       "BOOKSTORE"};
inline const std::vector<std::string> kStreetType = {"JALAN", "LORONG", "PERSIARAN", "AVENUE"};
inline const std::vector<std::string> kCities = {"KUALA LUMPUR", "PETALING JAYA", "SHAH ALAM",
                                                 "JOHOR BAHRU",  "IPOH",          "MELAKA"};
inline const std::vector<std::string> kMonths = {"JAN", "FEB", "MAR", "APR", "MAY", "JUN",
                                                 "JUL", "AUG", "SEP", "OCT", "NOV", "DEC"};
inline const std::vector<std::string> kFirstNames = {"AMIR", "MEI", "RAJ", "SITI", "KEVIN", "LINA", "HAFIZ", "JOY"};
inline const std::vector<std::string> kLastNames = {"TAN", "LIM", "WONG", "KUMAR", "AHMAD", "LEE"};
inline const std::vector<std::string> kItems = {"COFFEE", "TEA", "NASI LEMAK", "ROTI", "MEE GORENG",
                                                "PEN", "NOTEBOOK", "WATER", "CAKE", "SANDWICH",
                                                "RICE", "SOUP", "JUICE", "TAPE", "FOLDER"};
inline const std::vector<std::string> kMessages = {"THANK YOU", "PLEASE COME AGAIN",
                                                   "GOODS SOLD ARE NOT RETURNABLE",
                                                   "HAVE A NICE DAY", "TAX INVOICE", "WELCOME"};
inline const std::vector<std::string> kPayments = {"VISA", "MASTERCARD", "CASH", "DEBIT", "EWALLET"};

inline std::vector<std::string> split_words(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

inline std::string pad(int64_t v, int width) {
  std::string s = std::to_string(v);
  while (static_cast<int>(s.size()) < width) s.insert(s.begin(), '0');
  return s;
}

inline std::string money(Rng& rng, int lo_cents, int hi_cents) {
  const int64_t cents = rng.range(lo_cents, hi_cents);
  return std::to_string(cents / 100) + "." + pad(cents % 100, 2);
}

inline std::vector<std::string> value_tokens(Kind kind, Rng& rng) {
  std::vector<std::string> v;
  switch (kind) {
    case Kind::kCompany: {
      v.push_back(rng.pick(kWords));
      if (rng.bernoulli(0.5)) v.push_back(rng.pick(kWords));
      for (auto& w : split_words(rng.pick(kCompanySuffix))) v.push_back(w);
      break;
    }
    case Kind::kAddress: {
      v.push_back("NO." + std::to_string(rng.range(1, 250)) + ",");
      v.push_back(rng.pick(kStreetType));
      v.push_back(rng.pick(kWords) + ",");
      for (auto& w : split_words(rng.pick(kCities))) v.push_back(w);
      break;
    }
    case Kind::kDate: {
      const int64_t d = rng.range(1, 28), m = rng.range(1, 12), y = rng.range(2015, 2022);
      switch (rng.below(4)) {
        case 0: v.push_back(pad(d, 2) + "/" + pad(m, 2) + "/" + std::to_string(y)); break;
        case 1: v.push_back(std::to_string(y) + "-" + pad(m, 2) + "-" + pad(d, 2)); break;
        case 2: v.push_back(pad(d, 2) + "-" + pad(m, 2) + "-" + pad(y % 100, 2)); break;
        default:
          v.push_back(pad(d, 2));
          v.push_back(kMonths[static_cast<size_t>(m - 1)]);
          v.push_back(std::to_string(y));
      }
      break;
    }
    case Kind::kMoney: {
      if (rng.bernoulli(0.3)) v.push_back("RM");
      v.push_back(money(rng, 10, 50000));
      break;
    }
    case Kind::kTime: {
      v.push_back(pad(rng.range(0, 23), 2) + ":" + pad(rng.range(0, 59), 2));
      if (rng.bernoulli(0.3)) v.push_back(rng.bernoulli(0.5) ? "AM" : "PM");
      break;
    }
    case Kind::kPhone: {
      v.push_back("0" + std::to_string(rng.range(1, 9)) + "-" + pad(rng.range(0, 9999), 4));
      v.push_back(pad(rng.range(0, 9999), 4));
      break;
    }
    case Kind::kCode: {
      static const std::vector<std::string> prefixes = {"INV-", "#", "T", "CS", "A"};
      v.push_back(rng.pick(prefixes) + pad(rng.range(0, 999999), 6));
      break;
    }
    case Kind::kPerson: {
      v.push_back(rng.pick(kFirstNames));
      if (rng.bernoulli(0.5)) v.push_back(rng.pick(kLastNames));
      break;
    }
    case Kind::kCount: v.push_back(std::to_string(rng.range(1, 12))); break;
    case Kind::kCard: v.push_back("XXXX-" + pad(rng.range(0, 9999), 4)); break;
    case Kind::kEmail: {
      std::string w = rng.pick(kWords);
      std::transform(w.begin(), w.end(), w.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
      v.push_back("info@" + w + ".com");
      break;
    }
    case Kind::kUrl: {
      std::string w = rng.pick(kWords);
      std::transform(w.begin(), w.end(), w.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
      v.push_back("www." + w + ".com.my");
      break;
    }
    case Kind::kPayment: v.push_back(rng.pick(kPayments)); break;
  }
  return v;
}

struct Line {
  std::vector<std::string> words;
  std::vector<std::string> tags;
  bool right_align_value = false;
  size_t value_begin = 0;  // index of the first value word
};

// Places lines of one band on the page and appends tokens in reading order.
inline void layout_band(const std::vector<Line>& lines, int y_lo, int y_hi, Rng& rng,
                        std::vector<Token>& out) {
  if (lines.empty()) return;
  const double pitch = std::min(32.0, static_cast<double>(y_hi - y_lo) / static_cast<double>(lines.size()));
  const int margin = 30 + static_cast<int>(rng.below(20));
  for (size_t li = 0; li < lines.size(); ++li) {
    const Line& line = lines[li];
    const int y0 = y_lo + static_cast<int>(std::floor(pitch * static_cast<double>(li)));
    const int y1 = std::min(kPageUnits, y0 + std::max(1, static_cast<int>(pitch * 0.75)));
    std::vector<int> widths;
    int total = 0;
    for (const auto& w : line.words) {
      widths.push_back(11 * static_cast<int>(w.size()));
      total += widths.back() + 10;
    }
    const double scale = total > (kPageUnits - 2 * margin) ? static_cast<double>(kPageUnits - 2 * margin) / total : 1.0;
    std::vector<int> xs(line.words.size());
    int x = margin;
    for (size_t k = 0; k < line.words.size(); ++k) {
      xs[k] = x;
      x += static_cast<int>((widths[k] + 10) * scale);
    }
    if (line.right_align_value && line.value_begin < line.words.size()) {
      int shift = (kPageUnits - margin) - x;
      if (shift > 0) {
        for (size_t k = line.value_begin; k < line.words.size(); ++k) xs[k] += shift;
      }
    }
    for (size_t k = 0; k < line.words.size(); ++k) {
      Token t;
      t.text = line.words[k];
      const int x0 = std::clamp(xs[k], 0, kPageUnits);
      const int x1 = std::clamp(xs[k] + std::max(1, static_cast<int>(widths[k] * scale)), x0, kPageUnits);
      t.bbox = {x0, y0, x1, y1};
      t.tag = line.tags[k];
      out.push_back(std::move(t));
    }
  }
}

inline Document generate_document(const std::string& id, const FieldSchema& schema,
                                  const GeneratorConfig& config, Rng rng) {
  const int n_fields = static_cast<int>(schema.fields.size());
  const int target = static_cast<int>(rng.range(config.min_tokens, config.max_tokens));

  struct Planned {
    FieldSpec spec;
    std::vector<std::string> key;
    std::vector<std::string> value;
  };
  std::vector<Planned> plan;
  int used = 0;
  for (int f = 0; f < n_fields; ++f) {
    Planned p{spec_for(f), {}, {}};
    if (!p.spec.keys.empty()) p.key = split_words(rng.pick(p.spec.keys));
    p.value = value_tokens(p.spec.kind, rng);
    used += static_cast<int>(p.key.size() + p.value.size());
    plan.push_back(std::move(p));
  }
  // Shrink to the token budget: drop keys from the last field backwards, then
  // trim values down to the minimum span length.
  for (int f = n_fields - 1; f >= 0 && used > target; --f) {
    used -= static_cast<int>(plan[static_cast<size_t>(f)].key.size());
    plan[static_cast<size_t>(f)].key.clear();
  }
  for (int f = n_fields - 1; f >= 0 && used > target; --f) {
    auto& v = plan[static_cast<size_t>(f)].value;
    while (static_cast<int>(v.size()) > kMinSpanLength && used > target) {
      v.pop_back();
      --used;
    }
  }

  std::vector<Line> header_keyless, header_keyed, footer;
  for (int f = 0; f < n_fields; ++f) {
    const Planned& p = plan[static_cast<size_t>(f)];
    Line line;
    line.words = p.key;
    line.tags.assign(p.key.size(), kOtherTag);
    line.value_begin = line.words.size();
    for (const auto& w : p.value) {
      line.words.push_back(w);
      line.tags.push_back(schema.fields[static_cast<size_t>(f)]);
    }
    if (p.spec.band == Band::kFooter) {
      line.right_align_value = true;
      footer.push_back(std::move(line));
    } else if (p.spec.keys.empty()) {
      header_keyless.push_back(std::move(line));
    } else {
      header_keyed.push_back(std::move(line));
    }
  }
  rng.shuffle(header_keyed);
  rng.shuffle(footer);

  std::vector<Line> body;
  int remaining = target - used;
  while (remaining > 0) {
    Line line;
    if (rng.bernoulli(0.8)) {
      line.words.push_back(std::to_string(rng.range(1, 5)));
      for (auto& w : split_words(rng.pick(kItems))) line.words.push_back(w);
      line.words.push_back(money(rng, 50, 9000));
    } else {
      line.words = split_words(rng.pick(kMessages));
    }
    if (static_cast<int>(line.words.size()) > remaining) line.words.resize(static_cast<size_t>(remaining));
    line.tags.assign(line.words.size(), kOtherTag);
    line.value_begin = line.words.size();
    remaining -= static_cast<int>(line.words.size());
    body.push_back(std::move(line));
  }

  std::vector<Line> header = std::move(header_keyless);
  for (auto& l : header_keyed) header.push_back(std::move(l));

  Document doc;
  doc.id = id;
  layout_band(header, 20, 250, rng, doc.tokens);
  layout_band(body, 270, 740, rng, doc.tokens);
  layout_band(footer, 760, 985, rng, doc.tokens);

  for (const auto& field : schema.fields) {
    int start = -1, end = -1;
    for (int i = 0; i < doc.size(); ++i) {
      if (doc.tokens[static_cast<size_t>(i)].tag == field) {
        if (start < 0) start = i;
        end = i;
      }
    }
    doc.annotations[field] = AnswerAnnotation{field, start, end, doc.slice_text(start, end)};
  }
  return doc;
}

}  // namespace synth

inline void validate_generator_config(const GeneratorConfig& c) {
  if (c.n_fields < 1) throw std::invalid_argument("generator: n_fields must be >= 1");
  if (c.n_train < 0 || c.n_dev < 0 || c.n_test < 0) {
    throw std::invalid_argument("generator: split counts must be >= 0");
  }
  if (c.min_tokens < 1 || c.max_tokens < c.min_tokens) {
    throw std::invalid_argument("generator: need 1 <= min_tokens <= max_tokens");
  }
  if (c.n_fields * synth::kMinSpanLength > c.min_tokens) {
    throw std::invalid_argument("generator: n_fields x minimum span length (" +
                                std::to_string(c.n_fields * synth::kMinSpanLength) +
                                ") exceeds min_tokens (" + std::to_string(c.min_tokens) + ")");
  }
}

inline FieldSchema synthetic_schema(int n_fields) {
  FieldSchema schema;
  for (int f = 0; f < n_fields; ++f) schema.fields.push_back(synth::spec_for(f).name);
  return schema;
}

inline Corpus generate_synthetic_corpus(const GeneratorConfig& config) {
  validate_generator_config(config);
  Corpus corpus;
  corpus.schema = synthetic_schema(config.n_fields);
  corpus.provenance.seed = config.seed;
  corpus.provenance.generator = config.to_json();
  corpus.provenance.config_digest = sha256_hex(corpus.provenance.generator.dump());

  auto fill = [&](std::vector<Document>& out, const std::string& split, int count, uint64_t salt) {
    out.reserve(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i) {
      const uint64_t doc_seed = Rng::mix(config.seed ^ Rng::mix(salt * 0x100000000ULL + static_cast<uint64_t>(i)));
      out.push_back(synth::generate_document(split + "-" + synth::pad(i, 5), corpus.schema, config, Rng(doc_seed)));
    }
  };
  fill(corpus.train, "train", config.n_train, 1);
  fill(corpus.dev, "dev", config.n_dev, 2);
  fill(corpus.test, "test", config.n_test, 3);
  return corpus;
}

// ---------------------------------------------------------------------------
// On-disk format

inline constexpr const char* kCorpusFormat = "docrl-corpus";
inline constexpr int kCorpusFormatVersion = 1;

inline ordered_json document_to_json(const Document& doc, const FieldSchema& schema) {
  ordered_json j;
  j["id"] = doc.id;
  ordered_json tokens = ordered_json::array();
  for (const auto& t : doc.tokens) {
    ordered_json tj;
    tj["text"] = t.text;
    tj["bbox"] = t.bbox;
    tj["tag"] = t.tag;
    tokens.push_back(std::move(tj));
  }
  j["tokens"] = std::move(tokens);
  ordered_json anns = ordered_json::object();
  for (const auto& field : schema.fields) {
    auto it = doc.annotations.find(field);
    if (it == doc.annotations.end()) continue;
    ordered_json aj;
    aj["start"] = it->second.start;
    aj["end"] = it->second.end;
    aj["text"] = it->second.text;
    anns[field] = std::move(aj);
  }
  j["annotations"] = std::move(anns);
  return j;
}

inline Document document_from_json(const json& j) {
  Document doc;
  try {
    doc.id = j.at("id").get<std::string>();
    for (const auto& tj : j.at("tokens")) {
      Token t;
      t.text = tj.at("text").get<std::string>();
      const auto& b = tj.at("bbox");
      if (!b.is_array() || b.size() != 4) throw CorpusParseError("bbox must be an array of 4 integers");
      for (size_t k = 0; k < 4; ++k) t.bbox[k] = b.at(k).get<int>();
      t.tag = tj.at("tag").get<std::string>();
      doc.tokens.push_back(std::move(t));
    }
    for (const auto& [field, aj] : j.at("annotations").items()) {
      AnswerAnnotation a;
      a.field = field;
      a.start = aj.at("start").get<int>();
      a.end = aj.at("end").get<int>();
      a.text = aj.at("text").get<std::string>();
      doc.annotations[field] = std::move(a);
    }
  } catch (const json::exception& e) {
    throw CorpusParseError(std::string("malformed document record: ") + e.what());
  }
  return doc;
}

inline void save_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  ordered_json meta;
  meta["format"] = kCorpusFormat;
  meta["version"] = kCorpusFormatVersion;
  meta["schema"] = {{"fields", corpus.schema.fields}};
  ordered_json prov;
  prov["seed"] = corpus.provenance.seed;
  prov["config_digest"] = corpus.provenance.config_digest;
  prov["generator"] = corpus.provenance.generator;
  meta["provenance"] = std::move(prov);
  meta["splits"] = {{"train", corpus.train.size()}, {"dev", corpus.dev.size()}, {"test", corpus.test.size()}};
  {
    std::ofstream out(dir / "meta.json", std::ios::binary);
    out << meta.dump(2) << "\n";
    if (!out) throw std::runtime_error("cannot write " + (dir / "meta.json").string());
  }
  for (const auto& [name, docs] :
       {std::pair{"train", &corpus.train}, std::pair{"dev", &corpus.dev}, std::pair{"test", &corpus.test}}) {
    const auto path = dir / (std::string(name) + ".jsonl");
    std::ofstream out(path, std::ios::binary);
    for (const auto& doc : *docs) out << document_to_json(doc, corpus.schema).dump() << "\n";
    if (!out) throw std::runtime_error("cannot write " + path.string());
  }
}

inline std::vector<Document> load_split(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorpusParseError("missing split file " + path.string());
  std::vector<Document> docs;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw CorpusParseError(path.filename().string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    docs.push_back(document_from_json(j));
  }
  return docs;
}

inline Corpus load_corpus(const std::filesystem::path& dir) {
  const auto meta_path = dir / "meta.json";
  std::ifstream in(meta_path, std::ios::binary);
  if (!in) throw CorpusParseError("missing " + meta_path.string());
  json meta;
  try {
    meta = json::parse(in);
  } catch (const json::parse_error& e) {
    throw CorpusParseError("meta.json: " + std::string(e.what()));
  }
  Corpus corpus;
  try {
    if (meta.at("format").get<std::string>() != kCorpusFormat) throw CorpusParseError("meta.json: unknown format");
    if (meta.at("version").get<int>() != kCorpusFormatVersion) throw CorpusParseError("meta.json: unsupported version");
    corpus.schema.fields = meta.at("schema").at("fields").get<std::vector<std::string>>();
    const json prov = meta.value("provenance", json::object());
    corpus.provenance.seed = prov.value("seed", uint64_t{0});
    corpus.provenance.config_digest = prov.value("config_digest", std::string());
    corpus.provenance.generator = prov.contains("generator") ? prov.at("generator") : json();
  } catch (const json::exception& e) {
    throw CorpusParseError(std::string("meta.json: ") + e.what());
  }
  corpus.train = load_split(dir / "train.jsonl");
  corpus.dev = load_split(dir / "dev.jsonl");
  corpus.test = load_split(dir / "test.jsonl");
  validate_corpus(corpus);
  return corpus;
}

// ---------------------------------------------------------------------------
// Subsampling

// Size of a fraction of n, rounded up; products such as 0.05 * 100 that land a
// hair above an integer are not bumped to the next one.
inline size_t fraction_count(double fraction, size_t n) {
  const double x = fraction * static_cast<double>(n);
  const auto k = static_cast<size_t>(std::ceil(x - 1e-9 * std::max(1.0, x)));
  return std::clamp<size_t>(k, 1, n);
}

inline Corpus subset_fraction(const Corpus& corpus, double fraction, uint64_t seed) {
  if (!(fraction > 0.0) || fraction > 1.0) {
    throw std::invalid_argument("subset_fraction: fraction must be in (0, 1]");
  }
  if (corpus.train.empty()) throw std::invalid_argument("subset_fraction: empty train split");
  const size_t n = corpus.train.size();
  const size_t k = fraction_count(fraction, n);
  std::vector<size_t> idx(n);
  for (size_t i = 0; i < n; ++i) idx[i] = i;
  Rng rng(seed);
  for (size_t i = 0; i < k; ++i) std::swap(idx[i], idx[i + rng.below(n - i)]);
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  Corpus out = corpus;
  out.train.clear();
  for (size_t i : idx) out.train.push_back(corpus.train[i]);
  return out;
}

}  // namespace docrl
