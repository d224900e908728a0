#pragma once

#include <cmath>
#include <cstddef>
#include <deque>
#include <limits>
#include <set>
#include <span>
#include <vector>

#include "gril/kg/knowledge_graph.hpp"
#include "gril/numerics/ops.hpp"
#include "gril/retriever/retriever.hpp"

namespace gril {

inline constexpr std::size_t kUnreached = std::numeric_limits<std::size_t>::max();

// Undirected hop distances from `src`, stopping once `max_depth` is reached.
inline std::vector<std::size_t> bfs_distances(const KnowledgeGraph& g, EntityId src,
                                              std::size_t max_depth = kUnreached) {
  std::vector<std::size_t> dist(g.num_entities(), kUnreached);
  std::deque<EntityId> queue{src};
  dist[src] = 0;
  while (!queue.empty()) {
    EntityId u = queue.front();
    queue.pop_front();
    if (dist[u] >= max_depth) continue;
    for (TripleId t : g.incident(u)) {
      EntityId v = g.triple(t).other(u);
      if (dist[v] != kUnreached) continue;
      dist[v] = dist[u] + 1;
      queue.push_back(v);
    }
  }
  return dist;
}

inline std::size_t shortest_distance(const KnowledgeGraph& g, EntityId a, EntityId b) {
  if (a == b) return 0;
  return bfs_distances(g, a)[b];
}

struct PathPositives {
  std::set<EntityId> entities;
  bool reachable = false;
};

// Union over (seed, answer) pairs of every entity lying on some minimum-length
// undirected path: v qualifies iff d(seed, v) + d(v, answer) == d(seed, answer).
// One search from each end, the second bounded by the known distance.
inline PathPositives shortest_path_positives(const KnowledgeGraph& g, std::span<const EntityId> seeds,
                                             std::span<const EntityId> answers) {
  PathPositives out;
  for (EntityId s : seeds) {
    if (!g.contains(s)) throw LookupError("unknown seed id " + std::to_string(s));
    auto from_seed = bfs_distances(g, s);
    for (EntityId a : answers) {
      if (!g.contains(a)) throw LookupError("unknown answer id " + std::to_string(a));
      const std::size_t d = from_seed[a];
      if (d == kUnreached) continue;
      out.reachable = true;
      auto from_answer = bfs_distances(g, a, d);
      for (EntityId v = 0; v < g.num_entities(); ++v) {
        if (from_seed[v] != kUnreached && from_answer[v] != kUnreached && from_seed[v] + from_answer[v] == d) {
          out.entities.insert(v);
        }
      }
    }
  }
  return out;
}

// Mean binary cross-entropy over scored entities plus `missed_positives`
// positives that were never scored and sit at the clamp floor.
inline Var entity_bce(Tape& tape, std::span<const Var> scores, std::span<const double> labels, std::size_t missed_positives) {
  if (scores.size() != labels.size()) throw DimensionError("entity_bce: scores and labels differ in length");
  const std::size_t n = scores.size() + missed_positives;
  if (n == 0) return tape.constant(Tensor::scalar(0.0));
  std::vector<Var> terms;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    Var p = ops::clamp(scores[i], kProbClamp, 1.0 - kProbClamp);
    terms.push_back(ops::binary_cross_entropy(p, labels[i]));
  }
  terms.push_back(tape.constant(Tensor::scalar(-std::log(kProbClamp) * static_cast<double>(missed_positives))));
  return ops::scale(ops::sum_of(terms), 1.0 / static_cast<double>(n));
}

// Entity score = max probability over its scored incident triples; visited
// entities without any scored triple sit at the clamp floor.
inline Var graph_supervision_loss(const RetrievalState& s, const KnowledgeGraph& g, const std::set<EntityId>& positives) {
  Tape& tape = *s.tape;
  if (positives.empty()) return tape.constant(Tensor::scalar(0.0));
  std::vector<Var> scores;
  std::vector<double> labels;
  for (EntityId e : s.visited) {
    std::vector<Var> adj;
    for (TripleId t : g.incident(e)) {
      auto it = s.edge_probs.find(t);
      if (it != s.edge_probs.end()) adj.push_back(it->second);
    }
    scores.push_back(adj.empty() ? tape.constant(Tensor::scalar(kProbClamp))
                                 : (adj.size() == 1 ? adj[0] : ops::maximum(adj)));
    labels.push_back(positives.count(e) ? 1.0 : 0.0);
  }
  std::size_t missed = 0;
  for (EntityId p : positives)
    if (!s.visited.count(p)) ++missed;
  return entity_bce(tape, scores, labels, missed);
}

// log P_theta(G_s | q) = sum_i M_i log P_i + (1 - M_i) log(1 - P_i) over scored
// edges. The sampled mask is the observation: gradient flows through P only.
inline Var subgraph_log_likelihood(Var probs, Var mask) {
  Var p = ops::clamp(probs, kProbClamp, 1.0 - kProbClamp);
  Var m = ops::detach(mask);
  Var one_minus_p = ops::add_scalar(ops::scale(p, -1.0), 1.0);
  Var one_minus_m = ops::add_scalar(ops::scale(m, -1.0), 1.0);
  return ops::add(ops::dot(m, ops::log(p)), ops::dot(one_minus_m, ops::log(one_minus_p)));
}

}  // namespace gril
