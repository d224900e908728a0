#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <random>
#include <vector>

#include <json.hpp>

#include "gril/eval/dataset.hpp"
#include "gril/training/engine.hpp"

namespace gril {

struct LatencyStats {
  double mean = 0.0, median = 0.0, p95 = 0.0;  // seconds
  std::size_t queries = 0;
  std::vector<double> samples;

  static LatencyStats from(std::vector<double> xs) {
    LatencyStats s;
    s.samples = xs;
    s.queries = xs.size();
    if (xs.empty()) return s;
    std::sort(xs.begin(), xs.end());
    double sum = 0.0;
    for (double x : xs) sum += x;
    s.mean = sum / static_cast<double>(xs.size());
    const std::size_t n = xs.size();
    s.median = n % 2 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
    // nearest-rank
    const auto rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(n)));
    s.p95 = xs[std::max<std::size_t>(rank, 1) - 1];
    return s;
  }

  nlohmann::json to_json() const {
    return {{"mean_s", mean}, {"median_s", median}, {"p95_s", p95}, {"queries", queries}};
  }
};

struct TimingReport {
  LatencyStats pruned;
  LatencyStats unpruned;  // same weights, prune_mode = none

  // Relative increase of the mean when pruning is off.
  double slowdown() const { return pruned.mean > 0 ? unpruned.mean / pruned.mean - 1.0 : 0.0; }
  nlohmann::json to_json() const {
    return {{"pruned", pruned.to_json()}, {"unpruned", unpruned.to_json()}, {"slowdown", slowdown()}};
  }
};

struct TimingOptions {
  std::size_t repeats = 1;     // timed passes over the query set
  std::size_t warmup = 1;      // untimed passes first
  const HopClassifier* cam = nullptr;
};

// Wall-clock of retrieval alone (frozen weights, noise pinned) per query, on
// the calling thread. Queries whose seeds are unknown are skipped.
inline LatencyStats time_queries(RetrieverParams params, const Resources& res, const std::vector<PreparedSample>& queries,
                                 const std::vector<std::pair<std::size_t, std::size_t>>& shapes, const TimingOptions& opt) {
  auto once = [&](std::size_t i) {
    Tape tape;
    RetrieveOptions ro;
    ro.budget = shapes[i].first;
    ro.num_layers = shapes[i].second;
    ro.fixed_noise = 0.5;
    std::mt19937_64 rng(0);
    const auto t0 = std::chrono::steady_clock::now();
    (void)retrieve(tape, *res.graph, res.embeddings, queries[i].question, queries[i].seeds, params, ro, rng);
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };
  for (std::size_t w = 0; w < opt.warmup; ++w)
    for (std::size_t i = 0; i < queries.size(); ++i) once(i);
  std::vector<double> acc(queries.size(), 0.0);
  for (std::size_t r = 0; r < std::max<std::size_t>(opt.repeats, 1); ++r)
    for (std::size_t i = 0; i < queries.size(); ++i) acc[i] += once(i);
  for (double& a : acc) a /= static_cast<double>(std::max<std::size_t>(opt.repeats, 1));
  return LatencyStats::from(std::move(acc));
}

// Pruned and unpruned retrieval latency of the same model.
inline TimingReport time_retrieval(const Model& m, const Resources& res, const std::vector<TrainSample>& samples,
                                   const TimingOptions& opt = {}) {
  std::vector<PreparedSample> qs;
  std::vector<std::pair<std::size_t, std::size_t>> shapes;
  for (const auto& s : samples) {
    try {
      qs.push_back(prepare(s, res));
    } catch (const LookupError&) {
      continue;
    }
    shapes.push_back(retrieval_shape(m, qs.back(), opt.cam));
  }
  TimingReport rep;
  RetrieverParams on = m.retriever;
  rep.pruned = time_queries(on, res, qs, shapes, opt);
  RetrieverParams off = m.retriever;
  off.config.prune_mode = PruneMode::none;
  rep.unpruned = time_queries(off, res, qs, shapes, opt);
  return rep;
}

}  // namespace gril
