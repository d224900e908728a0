#pragma once

#include <filesystem>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "gril/errors.hpp"
#include "gril/kg/knowledge_graph.hpp"

namespace gril {

// One question. Seeds and answers are entity names; answers that are not
// graph entities are free-form strings. `options` switches to multiple choice.
struct TrainSample {
  std::string question;
  std::vector<std::string> seeds;
  std::vector<std::string> answers;
  std::vector<std::string> options;
  std::optional<int> hops;

  void validate() const {
    if (seeds.empty()) throw DataError("sample '" + question + "' has no seed entities");
    if (answers.empty()) throw DataError("sample '" + question + "' has no gold answers");
  }

  friend bool operator==(const TrainSample&, const TrainSample&) = default;
};

inline nlohmann::json to_json(const TrainSample& s) {
  nlohmann::json j{{"question", s.question}, {"seeds", s.seeds}, {"answers", s.answers}};
  if (s.hops) j["hops"] = *s.hops;
  if (!s.options.empty()) j["options"] = s.options;
  return j;
}

inline TrainSample sample_from_json(const nlohmann::json& j) {
  static const std::vector<std::string> known{"question", "seeds", "answers", "hops", "options"};
  if (!j.is_object()) throw DataError("sample must be a JSON object");
  for (const auto& [k, _] : j.items())
    if (std::find(known.begin(), known.end(), k) == known.end()) throw DataError("unknown sample key '" + k + "'");
  TrainSample s;
  try {
    s.question = j.at("question").get<std::string>();
    s.seeds = j.at("seeds").get<std::vector<std::string>>();
    s.answers = j.at("answers").get<std::vector<std::string>>();
    if (j.contains("hops") && !j["hops"].is_null()) s.hops = j["hops"].get<int>();
    if (j.contains("options")) s.options = j["options"].get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed sample: ") + e.what());
  }
  s.validate();
  return s;
}

inline std::vector<TrainSample> read_dataset(std::istream& in) {
  std::vector<TrainSample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(sample_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::parse_error&) {
      throw ParseError(lineno, "invalid JSON");
    } catch (const DataError& e) {
      throw ParseError(lineno, e.what());
    }
  }
  return out;
}

inline std::vector<TrainSample> read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset " + path.string());
  return read_dataset(in);
}

inline void write_dataset(const std::vector<TrainSample>& samples, std::ostream& out) {
  for (const auto& s : samples) out << to_json(s).dump() << '\n';
}

inline void write_dataset(const std::vector<TrainSample>& samples, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  write_dataset(samples, out);
}

}  // namespace gril
