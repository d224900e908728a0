#pragma once

#include <random>
#include <string>
#include <vector>

#include "gril/gril.hpp"

namespace testing_util {

inline gril::Tensor randn(std::mt19937_64& rng, gril::Shape shape, double s = 1.0) {
  std::normal_distribution<double> nd(0.0, s);
  gril::Tensor t(std::move(shape));
  for (auto& v : t.values()) v = nd(rng);
  return t;
}

// Tiny hand-built graph:
//   a -r1-> b -r2-> c,  a -r3-> d,  d -r1-> e,  b -r3-> f
inline gril::KnowledgeGraph small_graph() {
  gril::KnowledgeGraph g;
  g.add_triple("a", "r1", "b");
  g.add_triple("b", "r2", "c");
  g.add_triple("a", "r3", "d");
  g.add_triple("d", "r1", "e");
  g.add_triple("b", "r3", "f");
  return g;
}

// Small random graph on `n` nodes with `m` edge attempts over `rels` relations.
inline gril::KnowledgeGraph random_graph(std::mt19937_64& rng, std::size_t n, std::size_t m, std::size_t rels = 3) {
  gril::KnowledgeGraph g;
  for (std::size_t i = 0; i < n; ++i) g.add_entity("n" + std::to_string(i));
  for (std::size_t r = 0; r < rels; ++r) g.add_relation("r" + std::to_string(r));
  for (std::size_t k = 0; k < m; ++k) {
    auto h = static_cast<gril::EntityId>(rng() % n), t = static_cast<gril::EntityId>(rng() % n);
    g.add_triple(gril::Triple{h, static_cast<gril::RelationId>(rng() % rels), t});
  }
  return g;
}

inline gril::EngineConfig tiny_config(std::size_t dim = 8) {
  gril::EngineConfig c;
  c.retriever.dim = dim;
  c.retriever.num_layers = 2;
  c.retriever.prune_trigger_budget = 0;
  c.llm_dim = dim;
  c.bridge_hidden = dim;
  c.reasoner_hidden = 8;
  c.budget = 6;
  c.learning_rate = 1e-2;
  c.epochs = 3;
  c.batch_size = 2;
  return c;
}

}  // namespace testing_util
