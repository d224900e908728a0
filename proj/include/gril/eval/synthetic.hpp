#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "gril/errors.hpp"
#include "gril/eval/dataset.hpp"
#include "gril/kg/knowledge_graph.hpp"
#include "gril/training/supervision.hpp"

namespace gril {

struct SyntheticSpec {
  std::size_t num_entities = 100000;  // upper bound on entities created
  std::size_t num_relations = 24;
  std::size_t branching = 3;  // max distractor children per node
  std::size_t distractor_depth = 2;
  std::size_t min_hops = 1;
  std::size_t max_hops = 3;
  double distractor_density = 3.0;  // distractor edges per gold edge
  std::size_t num_questions = 2000;
  std::uint64_t seed = 0;

  // Distractor capacity of one question's component: every node (chain or
  // distractor) takes at most `branching` children, trees at most
  // `distractor_depth` deep.
  static std::size_t tree_capacity(std::size_t branching, std::size_t depth) {
    std::size_t total = 0, level = 1;
    for (std::size_t d = 0; d < depth; ++d) {
      level *= branching;
      total += level;
    }
    return total;
  }

  std::size_t distractors_for(std::size_t hops) const {
    return static_cast<std::size_t>(std::ceil(distractor_density * static_cast<double>(hops) - 1e-9));
  }

  std::size_t entities_needed() const {
    std::size_t per = max_hops + 1 + distractors_for(max_hops);
    return per * num_questions;
  }

  void validate() const {
    if (min_hops < 1 || max_hops < min_hops) throw ConfigError("hop range must satisfy 1 <= min_hops <= max_hops");
    if (num_questions == 0) throw ConfigError("num_questions must be positive");
    if (!(distractor_density >= 0.0)) throw ConfigError("distractor_density must be >= 0");
    if (num_relations < std::max<std::size_t>(max_hops, distractor_density > 0 ? 2 : 1)) {
      throw ConfigError("num_relations " + std::to_string(num_relations) + " too small for " + std::to_string(max_hops) +
                        "-hop chains plus distractor relations");
    }
    for (std::size_t k = min_hops; k <= max_hops; ++k) {
      std::size_t cap = (k + 1) * tree_capacity(branching, distractor_depth);
      if (distractors_for(k) > cap) {
        throw ConfigError("branching " + std::to_string(branching) + " and distractor depth " + std::to_string(distractor_depth) +
                          " cannot hold " + std::to_string(distractors_for(k)) + " distractors for depth " + std::to_string(k));
      }
    }
    if (entities_needed() > num_entities) {
      throw ConfigError("spec needs up to " + std::to_string(entities_needed()) + " entities but num_entities is " +
                        std::to_string(num_entities));
    }
  }
};

struct SyntheticQuestion {
  TrainSample sample;
  std::vector<TripleId> path;  // gold chain, seed side first
};

struct SyntheticCorpus {
  KnowledgeGraph graph;
  std::vector<SyntheticQuestion> train, dev, test;

  static std::vector<TrainSample> samples(const std::vector<SyntheticQuestion>& qs) {
    std::vector<TrainSample> out;
    out.reserve(qs.size());
    for (const auto& q : qs) out.push_back(q.sample);
    return out;
  }
};

// Each question owns a fresh chain seed -r1-> x1 -r2-> ... -rk-> answer with k
// distinct relations, plus distractor trees hanging off its chain. A distractor
// edge on chain node x_i never uses r_{i+1}, so the chain is the only path that
// follows the question's relation sequence; other chain relations may recur,
// which makes some distractors look like the answer from relations alone.
// Trees never join two chain nodes, so the labeled depth is the shortest-path
// distance.
inline SyntheticCorpus generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  auto uniform = [&](std::size_t n) { return static_cast<std::size_t>(rng() % n); };

  struct Edge {
    std::size_t head, tail, relation;
  };
  struct Pending {
    std::size_t seed, answer, hops;
    std::vector<std::size_t> relations;
    std::vector<std::size_t> chain_edges;
  };
  std::vector<Edge> edges;
  std::vector<Pending> pending;
  std::size_t next_entity = 0;

  for (std::size_t qi = 0; qi < spec.num_questions; ++qi) {
    Pending p;
    p.hops = spec.min_hops + uniform(spec.max_hops - spec.min_hops + 1);
    std::vector<std::size_t> rel_pool(spec.num_relations);
    std::iota(rel_pool.begin(), rel_pool.end(), 0);
    std::shuffle(rel_pool.begin(), rel_pool.end(), rng);
    p.relations.assign(rel_pool.begin(), rel_pool.begin() + static_cast<std::ptrdiff_t>(p.hops));

    std::vector<std::size_t> chain;
    for (std::size_t i = 0; i <= p.hops; ++i) chain.push_back(next_entity++);
    for (std::size_t i = 0; i < p.hops; ++i) {
      p.chain_edges.push_back(edges.size());
      edges.push_back({chain[i], chain[i + 1], p.relations[i]});
    }
    p.seed = chain.front();
    p.answer = chain.back();

    // Open slots: (node, depth below the chain, children so far, banned relation).
    struct Slot {
      std::size_t node, depth, children, banned;
    };
    const std::size_t none = spec.num_relations;
    std::vector<Slot> slots;
    for (std::size_t i = 0; i < chain.size(); ++i) slots.push_back({chain[i], 0, 0, i < p.hops ? p.relations[i] : none});
    const std::size_t want = spec.distractors_for(p.hops);
    for (std::size_t n = 0; n < want; ++n) {
      std::vector<std::size_t> open;
      for (std::size_t s = 0; s < slots.size(); ++s)
        if (slots[s].children < spec.branching && slots[s].depth < spec.distractor_depth) open.push_back(s);
      if (open.empty()) throw ConfigError("distractor capacity exhausted");
      Slot& parent = slots[open[uniform(open.size())]];
      ++parent.children;
      const std::size_t child = next_entity++;
      std::size_t rel = uniform(spec.num_relations - (parent.banned == none ? 0 : 1));
      if (parent.banned != none && rel >= parent.banned) ++rel;
      const std::size_t node = parent.node, depth = parent.depth + 1;
      if (rng() & 1) edges.push_back({node, child, rel});
      else edges.push_back({child, node, rel});
      slots.push_back({child, depth, 0, none});
    }
    pending.push_back(std::move(p));
  }

  // Shuffle names and insertion order so ids carry no hint of the chain.
  std::vector<std::size_t> entity_name(next_entity);
  std::iota(entity_name.begin(), entity_name.end(), 0);
  std::shuffle(entity_name.begin(), entity_name.end(), rng);
  auto ename = [&](std::size_t e) { return "e" + std::to_string(entity_name[e]); };
  auto rname = [](std::size_t r) { return "r" + std::to_string(r); };

  std::vector<std::size_t> order(edges.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  SyntheticCorpus corpus;
  KnowledgeGraph& g = corpus.graph;
  for (std::size_t r = 0; r < spec.num_relations; ++r) g.add_relation(rname(r));
  std::vector<TripleId> tid(edges.size());
  for (std::size_t i : order) {
    g.add_triple(ename(edges[i].head), rname(edges[i].relation), ename(edges[i].tail));
    tid[i] = static_cast<TripleId>(g.num_triples() - 1);
  }

  std::vector<SyntheticQuestion> all;
  for (const Pending& p : pending) {
    SyntheticQuestion q;
    q.sample.question = "from " + ename(p.seed) + " follow";
    for (std::size_t r : p.relations) q.sample.question += " " + rname(r);
    q.sample.seeds = {ename(p.seed)};
    q.sample.answers = {ename(p.answer)};
    q.sample.hops = static_cast<int>(p.hops);
    for (std::size_t e : p.chain_edges) q.path.push_back(tid[e]);
    const std::size_t d = shortest_distance(g, g.entity_id(q.sample.seeds[0]), g.entity_id(q.sample.answers[0]));
    if (d != p.hops) throw DataError("generated depth " + std::to_string(p.hops) + " but shortest path is " + std::to_string(d));
    all.push_back(std::move(q));
  }
  std::shuffle(all.begin(), all.end(), rng);
  const std::size_t n_train = all.size() * 8 / 10, n_dev = all.size() / 10;
  for (std::size_t i = 0; i < all.size(); ++i) {
    auto& dst = i < n_train ? corpus.train : (i < n_train + n_dev ? corpus.dev : corpus.test);
    dst.push_back(std::move(all[i]));
  }
  return corpus;
}

}  // namespace gril
