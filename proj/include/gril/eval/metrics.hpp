#pragma once

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <set>
#include <string>
#include <vector>

#include "gril/errors.hpp"

namespace gril {

struct MatchOptions {
  bool case_fold = false;
};

inline std::string normalize_answer(const std::string& s, const MatchOptions& m) {
  if (!m.case_fold) return s;
  std::string out = s;
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

inline std::set<std::string> answer_set(const std::vector<std::string>& xs, const MatchOptions& m) {
  std::set<std::string> out;
  for (const auto& x : xs) out.insert(normalize_answer(x, m));
  return out;
}

// Set when a metric meets a question with no predictions.
struct MetricWarnings {
  std::size_t empty_predictions = 0;
};

inline bool top1_correct(const std::vector<std::string>& ranked, const std::vector<std::string>& gold, const MatchOptions& m = {}) {
  if (ranked.empty()) return false;
  return answer_set(gold, m).count(normalize_answer(ranked.front(), m)) > 0;
}

inline double hits_at_1(const std::vector<std::vector<std::string>>& ranked, const std::vector<std::vector<std::string>>& golds,
                        const MatchOptions& m = {}, MetricWarnings* warn = nullptr) {
  if (ranked.size() != golds.size()) throw DimensionError("hits_at_1: predictions and golds differ in length");
  if (ranked.empty()) return 0.0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    if (ranked[i].empty() && warn) ++warn->empty_predictions;
    hit += top1_correct(ranked[i], golds[i], m) ? 1 : 0;
  }
  return static_cast<double>(hit) / static_cast<double>(ranked.size());
}

struct SetOverlap {
  std::size_t predicted = 0, gold = 0, common = 0;
};

inline SetOverlap overlap(const std::vector<std::string>& predicted, const std::vector<std::string>& gold, const MatchOptions& m) {
  auto p = answer_set(predicted, m), g = answer_set(gold, m);
  if (g.empty()) throw DomainError("f1: gold answer set is empty");
  SetOverlap o{p.size(), g.size(), 0};
  for (const auto& x : p) o.common += g.count(x);
  return o;
}

inline double f1_from(const SetOverlap& o) {
  if (o.common == 0) return 0.0;
  double prec = double(o.common) / double(o.predicted), rec = double(o.common) / double(o.gold);
  return 2.0 * prec * rec / (prec + rec);
}

// Per-question F1 between exact-match answer sets.
inline double f1_score(const std::vector<std::string>& predicted, const std::vector<std::string>& gold, const MatchOptions& m = {}) {
  return f1_from(overlap(predicted, gold, m));
}

struct F1Summary {
  double macro = 0.0;  // mean of per-question F1
  double micro = 0.0;  // F1 of pooled counts
};

inline F1Summary f1_score(const std::vector<std::vector<std::string>>& predicted, const std::vector<std::vector<std::string>>& golds,
                          const MatchOptions& m = {}, MetricWarnings* warn = nullptr) {
  if (predicted.size() != golds.size()) throw DimensionError("f1_score: predictions and golds differ in length");
  F1Summary s;
  if (predicted.empty()) return s;
  SetOverlap pooled;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    if (predicted[i].empty() && warn) ++warn->empty_predictions;
    SetOverlap o = overlap(predicted[i], golds[i], m);
    s.macro += f1_from(o);
    pooled.predicted += o.predicted;
    pooled.gold += o.gold;
    pooled.common += o.common;
  }
  s.macro /= static_cast<double>(predicted.size());
  s.micro = f1_from(pooled);
  return s;
}

}  // namespace gril
