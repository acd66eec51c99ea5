#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "docrl/corpus.hpp"
#include "docrl/feedback.hpp"
#include "docrl/model.hpp"
#include "docrl/ppo.hpp"
#include "docrl/sl_trainer.hpp"

namespace docrl {

// Invalid, missing or contradictory configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Fully resolved settings for one command. Component seeds are all taken
// from `seed`; the corpus generator keeps its own seed so that every run
// seed sees the same corpus.
struct RunConfig {
  std::string experiment = "default";
  uint64_t seed = 0;
  std::optional<std::string> corpus_path;
  GeneratorConfig generator;
  double fraction = 1.0;
  std::vector<double> sweep_fractions{0.02, 0.05, 0.10, 1.0};
  std::vector<uint64_t> seeds{0};
  ModelConfig model;
  SLConfig sl;
  PPOConfig ppo;
  RewardConfig rewards;
  FeedbackConfig feedback;
  std::string output_dir = "out";

  void apply_seed(uint64_t s) {
    seed = s;
    model.seed = s;
    sl.seed = s;
    ppo.seed = s;
    feedback.seed = s;
    feedback.ppo.seed = s;
  }

  ordered_json to_json() const {
    ordered_json j;
    j["experiment"] = experiment;
    j["seed"] = seed;
    j["seeds"] = seeds;
    ordered_json corpus;
    if (corpus_path) corpus["path"] = *corpus_path;
    else corpus["generator"] = generator.to_json();
    j["corpus"] = corpus;
    j["fraction"] = fraction;
    j["sweep_fractions"] = sweep_fractions;
    j["model"] = model.to_json();
    j["sl"] = sl.to_json();
    j["ppo"] = ppo.to_json();
    j["rewards"] = rewards.to_json();
    j["feedback"] = feedback.to_json();
    j["output_dir"] = output_dir;
    return j;
  }

  static RunConfig from_json(const json& j) {
    if (!j.is_object()) throw ConfigError("configuration must be a JSON object");
    if (!j.contains("seed")) throw ConfigError("configuration must set \"seed\"");
    RunConfig c;
    try {
      c.experiment = j.value("experiment", c.experiment);
      if (j.contains("corpus")) {
        const json& corpus = j.at("corpus");
        if (corpus.contains("path") && corpus.contains("generator")) {
          throw ConfigError("corpus: set either \"path\" or \"generator\", not both");
        }
        if (corpus.contains("path")) c.corpus_path = corpus.at("path").get<std::string>();
        if (corpus.contains("generator")) c.generator = GeneratorConfig::from_json(corpus.at("generator"));
      }
      c.fraction = j.value("fraction", c.fraction);
      if (!(c.fraction > 0.0 && c.fraction <= 1.0)) throw ConfigError("fraction must lie in (0, 1]");
      if (j.contains("sweep_fractions")) c.sweep_fractions = j.at("sweep_fractions").get<std::vector<double>>();
      if (c.sweep_fractions.empty()) throw ConfigError("sweep_fractions must not be empty");
      for (double f : c.sweep_fractions) {
        if (!(f > 0.0 && f <= 1.0)) throw ConfigError("sweep_fractions entries must lie in (0, 1]");
      }
      if (j.contains("model")) c.model = ModelConfig::from_json(j.at("model"));
      if (j.contains("sl")) c.sl = SLConfig::from_json(j.at("sl"));
      if (j.contains("ppo")) c.ppo = PPOConfig::from_json(j.at("ppo"));
      if (j.contains("rewards")) c.rewards = RewardConfig::from_json(j.at("rewards"));
      if (j.contains("feedback")) c.feedback = FeedbackConfig::from_json(j.at("feedback"));
      c.output_dir = j.value("output_dir", c.output_dir);
      c.apply_seed(j.at("seed").get<uint64_t>());
      c.seeds = j.contains("seeds") ? j.at("seeds").get<std::vector<uint64_t>>() : std::vector<uint64_t>{c.seed};
      if (c.seeds.empty()) throw ConfigError("seeds must not be empty");
    } catch (const json::exception& e) {
      throw ConfigError(std::string("configuration: ") + e.what());
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    return c;
  }
};

// Parses a flag value as JSON when possible (numbers, booleans, arrays),
// otherwise keeps it as a string.
inline json parse_override_value(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error&) {
    return json(text);
  }
}

// Applies "a.b.c=value" to a configuration document.
inline void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  json* node = &doc;
  std::stringstream ss(key);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) {
    if (part.empty()) throw ConfigError("override key '" + key + "' has an empty component");
    parts.push_back(part);
  }
  for (size_t i = 0; i + 1 < parts.size(); ++i) {
    json& child = (*node)[parts[i]];
    if (child.is_null()) child = json::object();
    if (!child.is_object()) throw ConfigError("override key '" + key + "' descends into a non-object");
    node = &child;
  }
  (*node)[parts.back()] = parse_override_value(assignment.substr(eq + 1));
}

inline json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::filesystem::filesystem_error("cannot open", path, std::make_error_code(std::errc::no_such_file_or_directory));
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

}  // namespace docrl
