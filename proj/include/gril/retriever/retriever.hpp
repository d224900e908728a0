#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "gril/errors.hpp"
#include "gril/kg/embeddings.hpp"
#include "gril/kg/knowledge_graph.hpp"
#include "gril/numerics/ops.hpp"
#include "gril/numerics/tape.hpp"

namespace gril {

enum class PruneMode { threshold, top_k, none };

inline std::string to_string(PruneMode m) {
  switch (m) {
    case PruneMode::threshold: return "threshold";
    case PruneMode::top_k: return "top_k";
    case PruneMode::none: return "none";
  }
  return "?";
}

inline PruneMode prune_mode_from_string(const std::string& s) {
  if (s == "threshold") return PruneMode::threshold;
  if (s == "top_k") return PruneMode::top_k;
  if (s == "none") return PruneMode::none;
  throw ConfigError("unknown prune mode '" + s + "'");
}

struct RetrieverConfig {
  std::size_t dim = 512;
  std::size_t num_layers = 2;
  double sigma = 0.1;
  // Pruning fires only when more than this many scored edges fall below sigma.
  std::size_t prune_trigger_budget = 16;
  double tau = 1.0;
  PruneMode prune_mode = PruneMode::threshold;
  std::size_t top_k = 10;
  bool entity_update = true;
  // Appends h_rel * h_q to the scorer input. Without it the per-source softmax
  // cancels every question-dependent term and attention ignores the question.
  bool question_interaction = true;

  void validate() const {
    if (dim == 0) throw ConfigError("retriever dim must be positive");
    if (num_layers < 1) throw ConfigError("num_layers must be >= 1");
    if (!(sigma > 0.0 && sigma < 1.0)) throw ConfigError("sigma must lie in (0,1)");
    if (!(tau > 0.0)) throw ConfigError("tau must be positive");
    if (prune_mode == PruneMode::top_k && top_k == 0) throw ConfigError("top_k must be >= 1");
  }

  std::size_t feature_dim() const { return (question_interaction ? 5 : 4) * dim; }
};

// Learnable retriever weights: the edge scorer over [h_src, h_tgt, h_rel, h_q(, h_rel*h_q)]
// and the two message-passing matrices.
struct RetrieverParams {
  RetrieverConfig config;
  Parameter score_weight;
  Parameter score_bias;
  Parameter w_self;
  Parameter w_neighbor;

  static RetrieverParams init(const RetrieverConfig& cfg, std::mt19937_64& rng) {
    cfg.validate();
    RetrieverParams p;
    p.config = cfg;
    const std::size_t f = cfg.feature_dim(), d = cfg.dim;
    std::normal_distribution<double> nd(0.0, 1.0);
    Tensor sw({1, f});
    for (auto& v : sw.values()) v = 0.1 * nd(rng) / std::sqrt(static_cast<double>(d));
    Tensor w1 = Tensor::identity(d);
    Tensor w2({d, d});
    for (auto& v : w1.values()) v += 0.01 * nd(rng) / std::sqrt(static_cast<double>(d));
    for (auto& v : w2.values()) v = 0.1 * nd(rng) / std::sqrt(static_cast<double>(d));
    p.score_weight = Parameter("retriever.score_weight", std::move(sw));
    p.score_bias = Parameter("retriever.score_bias", Tensor({1}));
    p.w_self = Parameter("retriever.w_self", std::move(w1));
    p.w_neighbor = Parameter("retriever.w_neighbor", std::move(w2));
    return p;
  }

  std::vector<Parameter*> parameters() { return {&score_weight, &score_bias, &w_self, &w_neighbor}; }
};

// Retriever weights bound onto one tape, trainable or frozen.
struct RetrieverVars {
  Var score_weight, score_bias, w_self, w_neighbor;
};

inline RetrieverVars bind(Tape& t, RetrieverParams& p, bool trainable) {
  auto b = [&](Parameter& x) { return trainable ? t.param(x) : t.frozen(x); };
  return {b(p.score_weight), b(p.score_bias), b(p.w_self), b(p.w_neighbor)};
}

struct ScoredEdge {
  TripleId triple;
  EntityId source;
  EntityId target;
  Var alpha;
  bool kept = true;
};

struct LayerTrace {
  std::size_t layer = 0;
  std::size_t frontier_size = 0;
  std::size_t scored = 0;
  std::size_t low_alpha = 0;
  bool pruning_triggered = false;
  std::size_t pruned = 0;
  struct Edge {
    TripleId triple;
    EntityId source, target;
    double alpha;
    bool kept;
  };
  std::vector<Edge> edges;
};

struct RetrievalState {
  Tape* tape = nullptr;
  Var question;
  std::vector<EntityId> seeds;
  std::set<EntityId> frontier;
  std::set<EntityId> visited;
  std::map<EntityId, Var> context;
  std::map<TripleId, Var> edge_probs;
  std::vector<ScoredEdge> layer_edges;
  std::size_t layer_index = 0;
  bool exhausted = false;
  std::vector<LayerTrace> trace;
};

inline RetrievalState init_retrieval(Tape& tape, const KnowledgeGraph& g, const Tensor& question,
                                     std::span<const EntityId> seeds) {
  RetrievalState s;
  s.tape = &tape;
  s.question = tape.constant(question);
  for (EntityId e : seeds) {
    if (!g.contains(e)) throw LookupError("unknown seed entity id " + std::to_string(e));
    s.frontier.insert(e);
    s.visited.insert(e);
  }
  s.seeds.assign(s.frontier.begin(), s.frontier.end());
  return s;
}

// Contextualized embedding of `e`, seeded from the initial vector on first use.
inline Var context_of(RetrievalState& s, const GraphEmbeddings& emb, EntityId e) {
  auto it = s.context.find(e);
  if (it != s.context.end()) return it->second;
  Var v = s.tape->constant(emb.entities.at(e));
  s.context.emplace(e, v);
  return v;
}

// Per-source softmax over each frontier entity's incident triples that no
// earlier layer has scored (the triples a growing step expands into). The score
// is one linear map over the concatenated features, evaluated block-wise so
// per-entity and per-relation partial products are shared between edges.
inline std::vector<ScoredEdge> attention_scores(RetrievalState& s, const KnowledgeGraph& g, const GraphEmbeddings& emb,
                                                const RetrieverVars& v, const RetrieverConfig& cfg) {
  if (s.frontier.empty()) throw RetrievalExhausted("attention over an empty frontier");
  const std::size_t d = cfg.dim;
  if (v.score_weight.size() != cfg.feature_dim()) {
    throw DimensionError("score weight " + shape_str(v.score_weight.shape()) + " does not match feature dim " +
                         std::to_string(cfg.feature_dim()));
  }
  if (s.question.size() != d) throw DimensionError("question embedding " + shape_str(s.question.shape()) + " vs dim " + std::to_string(d));
  Var w_src = ops::slice(v.score_weight, 0, d);
  Var w_tgt = ops::slice(v.score_weight, d, d);
  Var w_rel = ops::slice(v.score_weight, 2 * d, d);
  Var w_q = ops::slice(v.score_weight, 3 * d, d);
  Var q_term = ops::add(ops::dot(w_q, s.question), v.score_bias);

  std::map<EntityId, Var> src_term, tgt_term;
  std::map<RelationId, Var> rel_term;
  auto src_of = [&](EntityId e) {
    auto it = src_term.find(e);
    if (it != src_term.end()) return it->second;
    return src_term.emplace(e, ops::dot(w_src, context_of(s, emb, e))).first->second;
  };
  auto tgt_of = [&](EntityId e) {
    auto it = tgt_term.find(e);
    if (it != tgt_term.end()) return it->second;
    return tgt_term.emplace(e, ops::dot(w_tgt, context_of(s, emb, e))).first->second;
  };
  auto rel_of = [&](RelationId r) {
    auto it = rel_term.find(r);
    if (it != rel_term.end()) return it->second;
    Var hr = s.tape->constant(emb.relations.at(r));
    Var term = ops::dot(w_rel, hr);
    if (cfg.question_interaction) {
      Var w_x = ops::slice(v.score_weight, 4 * d, d);
      term = ops::add(term, ops::dot(w_x, ops::mul(hr, s.question)));
    }
    return rel_term.emplace(r, term).first->second;
  };

  std::vector<ScoredEdge> out;
  std::vector<Var> scores;
  std::vector<TripleId> inc;
  for (EntityId src : s.frontier) {
    inc.clear();
    for (TripleId tid : g.incident(src))
      if (!s.edge_probs.count(tid)) inc.push_back(tid);
    if (inc.empty()) continue;
    scores.clear();
    for (TripleId tid : inc) {
      const Triple& tr = g.triple(tid);
      std::vector<Var> parts{src_of(src), tgt_of(tr.other(src)), rel_of(tr.relation), q_term};
      scores.push_back(ops::sum_of(parts));
    }
    Var alpha = ops::softmax(ops::stack(scores));
    for (std::size_t k = 0; k < inc.size(); ++k) {
      const Triple& tr = g.triple(inc[k]);
      out.push_back(ScoredEdge{inc[k], src, tr.other(src), ops::element(alpha, k), true});
    }
  }
  if (out.empty()) throw RetrievalExhausted("no unexpanded triples around the frontier");
  return out;
}

// h'_i = W_self h_i + W_neighbor * sum_j alpha_ji h_j over kept edges j -> i
// of the current layer; every visited entity is refreshed synchronously.
inline void update_entity_embeddings(RetrievalState& s, const GraphEmbeddings& emb, const RetrieverVars& v) {
  std::map<EntityId, std::vector<std::pair<Var, EntityId>>> incoming;
  for (const ScoredEdge& e : s.layer_edges) {
    if (e.kept) incoming[e.target].emplace_back(e.alpha, e.source);
  }
  for (EntityId e : s.visited) context_of(s, emb, e);
  std::map<EntityId, Var> next;
  for (const auto& [ent, h] : s.context) {
    Var out = ops::matvec(v.w_self, h);
    auto it = incoming.find(ent);
    if (it != incoming.end()) {
      std::vector<Var> weights, vecs;
      for (const auto& [a, src] : it->second) {
        weights.push_back(a);
        vecs.push_back(s.context.at(src));
      }
      Var agg = ops::weighted_sum(ops::stack(weights), vecs);
      out = ops::add(out, ops::matvec(v.w_neighbor, agg));
    }
    next.emplace(ent, out);
  }
  s.context = std::move(next);
}

// One growing + pruning iteration.
inline void grow_prune_step(RetrievalState& s, const KnowledgeGraph& g, const GraphEmbeddings& emb,
                            const RetrieverVars& v, const RetrieverConfig& cfg) {
  if (s.layer_index >= cfg.num_layers) throw DomainError("retrieval already ran all " + std::to_string(cfg.num_layers) + " layers");
  std::vector<ScoredEdge> edges;
  try {
    edges = attention_scores(s, g, emb, v, cfg);
  } catch (const RetrievalExhausted&) {
    s.exhausted = true;
    return;
  }
  LayerTrace tr;
  tr.layer = s.layer_index;
  tr.frontier_size = s.frontier.size();
  tr.scored = edges.size();
  for (const ScoredEdge& e : edges)
    if (e.alpha.item() < cfg.sigma) ++tr.low_alpha;

  switch (cfg.prune_mode) {
    case PruneMode::threshold:
      tr.pruning_triggered = tr.low_alpha > cfg.prune_trigger_budget;
      if (tr.pruning_triggered)
        for (ScoredEdge& e : edges) e.kept = e.alpha.item() > cfg.sigma;
      break;
    case PruneMode::top_k: {
      std::vector<std::size_t> order(edges.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        double x = edges[a].alpha.item(), y = edges[b].alpha.item();
        if (x != y) return x > y;
        return edges[a].triple < edges[b].triple;
      });
      tr.pruning_triggered = edges.size() > cfg.top_k;
      for (std::size_t r = cfg.top_k; r < order.size(); ++r) edges[order[r]].kept = false;
      break;
    }
    case PruneMode::none:
      break;
  }

  std::map<TripleId, std::vector<Var>> per_triple;
  for (const ScoredEdge& e : edges) {
    per_triple[e.triple].push_back(e.alpha);
    s.visited.insert(e.source);
    s.visited.insert(e.target);
    if (!e.kept) ++tr.pruned;
    tr.edges.push_back({e.triple, e.source, e.target, e.alpha.item(), e.kept});
  }
  for (auto& [tid, alphas] : per_triple) {
    if (auto it = s.edge_probs.find(tid); it != s.edge_probs.end()) alphas.insert(alphas.begin(), it->second);
    s.edge_probs[tid] = alphas.size() == 1 ? alphas[0] : ops::maximum(alphas);
  }
  for (const ScoredEdge& e : edges)
    if (e.kept && e.alpha.item() > 0.0) s.frontier.insert(e.target);

  s.layer_edges = std::move(edges);
  if (cfg.entity_update) update_entity_embeddings(s, emb, v);
  s.trace.push_back(std::move(tr));
  ++s.layer_index;
}

inline constexpr double kProbClamp = 1e-6;

// M_i = sigmoid((logit(eps_i) + logit(P_i)) / tau), P clamped to [1e-6, 1 - 1e-6].
inline Var sample_mask(Var probs, double tau, std::span<const double> noise) {
  if (!(tau > 0.0)) throw DomainError("temperature must be positive, got " + std::to_string(tau));
  if (noise.size() != probs.size()) throw DimensionError("sample_mask: noise length does not match probabilities");
  Tensor nl({noise.size()});
  for (std::size_t i = 0; i < noise.size(); ++i) {
    if (!(noise[i] > 0.0 && noise[i] < 1.0)) throw DomainError("noise outside (0,1)");
    nl[i] = std::log(noise[i]) - std::log1p(-noise[i]);
  }
  Var l = ops::logit(ops::clamp(probs, kProbClamp, 1.0 - kProbClamp));
  return ops::sigmoid(ops::scale(ops::add(l, probs.tape->constant(std::move(nl))), 1.0 / tau));
}

// Draws eps ~ Uniform(0,1) per edge from `rng`.
inline std::vector<double> draw_noise(std::size_t n, std::mt19937_64& rng) {
  std::vector<double> eps(n);
  for (auto& e : eps) e = (static_cast<double>(rng() >> 11) + 0.5) * (1.0 / 9007199254740992.0);
  return eps;
}

inline Var sample_mask(Var probs, double tau, std::mt19937_64& rng) {
  auto eps = draw_noise(probs.size(), rng);
  return sample_mask(probs, tau, eps);
}

struct Subgraph {
  std::vector<TripleId> triples;
  std::vector<Var> mask;
  std::vector<double> importance;

  std::size_t size() const noexcept { return triples.size(); }
  bool empty() const noexcept { return triples.empty(); }
};

// Top-`budget` edges by probability (ties by ascending triple id), skipping P = 0.
// `edge_ids` must index `probs` and `mask` position-wise.
inline Subgraph select_subgraph(std::span<const TripleId> edge_ids, Var probs, Var mask, std::size_t budget) {
  if (budget < 1) throw DomainError("subgraph budget must be >= 1");
  if (edge_ids.size() != probs.size() || probs.size() != mask.size()) {
    throw DimensionError("select_subgraph: ids, probabilities and mask differ in length");
  }
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < edge_ids.size(); ++i)
    if (probs.value()[i] > 0.0) order.push_back(i);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    double x = probs.value()[a], y = probs.value()[b];
    if (x != y) return x > y;
    return edge_ids[a] < edge_ids[b];
  });
  if (order.size() > budget) order.resize(budget);
  Subgraph sg;
  for (std::size_t i : order) {
    sg.triples.push_back(edge_ids[i]);
    sg.importance.push_back(probs.value()[i]);
    sg.mask.push_back(ops::element(mask, i));
  }
  return sg;
}

struct RetrieveOptions {
  bool trainable = false;
  std::size_t budget = 15;
  // 0 keeps config.num_layers.
  std::size_t num_layers = 0;
  // When set, every eps_i takes this value instead of being drawn.
  std::optional<double> fixed_noise;
};

struct RetrievalResult {
  RetrievalState state;
  std::vector<TripleId> edge_ids;
  Var probs;
  Var mask;
  Subgraph subgraph;
  bool has_edges() const noexcept { return !edge_ids.empty(); }
};

// Runs all layers, then samples the mask and selects the final subgraph.
inline RetrievalResult retrieve(Tape& tape, const KnowledgeGraph& g, const GraphEmbeddings& emb, const Tensor& question,
                                std::span<const EntityId> seeds, RetrieverParams& params, const RetrieveOptions& opt,
                                std::mt19937_64& rng) {
  RetrieverConfig cfg = params.config;
  if (opt.num_layers > 0) cfg.num_layers = opt.num_layers;
  RetrievalResult r;
  r.state = init_retrieval(tape, g, question, seeds);
  RetrieverVars v = bind(tape, params, opt.trainable);
  while (r.state.layer_index < cfg.num_layers && !r.state.exhausted) grow_prune_step(r.state, g, emb, v, cfg);
  std::vector<Var> ps;
  for (const auto& [tid, p] : r.state.edge_probs) {
    r.edge_ids.push_back(tid);
    ps.push_back(p);
  }
  if (ps.empty()) return r;
  r.probs = ops::stack(ps);
  if (opt.fixed_noise) {
    std::vector<double> eps(ps.size(), *opt.fixed_noise);
    r.mask = sample_mask(r.probs, cfg.tau, eps);
  } else {
    r.mask = sample_mask(r.probs, cfg.tau, rng);
  }
  r.subgraph = select_subgraph(r.edge_ids, r.probs, r.mask, opt.budget);
  return r;
}

// Per-query retrieval trace: layer statistics, per-edge attention and the final
// subgraph with importance and mask values.
inline nlohmann::json trace_json(const RetrievalResult& r, const KnowledgeGraph& g, const std::string& question) {
  nlohmann::json j;
  j["question"] = question;
  j["seeds"] = nlohmann::json::array();
  for (EntityId e : r.state.seeds) j["seeds"].push_back(g.entity_name(e));
  j["layers"] = nlohmann::json::array();
  for (const LayerTrace& l : r.state.trace) {
    nlohmann::json lj{{"layer", l.layer},
                      {"frontier_size", l.frontier_size},
                      {"scored_edges", l.scored},
                      {"low_alpha_edges", l.low_alpha},
                      {"pruning_triggered", l.pruning_triggered},
                      {"pruned_edges", l.pruned}};
    lj["edges"] = nlohmann::json::array();
    for (const auto& e : l.edges) {
      const Triple& t = g.triple(e.triple);
      lj["edges"].push_back({{"triple", e.triple},
                             {"source", g.entity_name(e.source)},
                             {"target", g.entity_name(e.target)},
                             {"relation", g.relation_name(t.relation)},
                             {"alpha", e.alpha},
                             {"kept", e.kept}});
    }
    j["layers"].push_back(std::move(lj));
  }
  j["subgraph"] = nlohmann::json::array();
  for (std::size_t i = 0; i < r.subgraph.size(); ++i) {
    const Triple& t = g.triple(r.subgraph.triples[i]);
    j["subgraph"].push_back({{"triple", r.subgraph.triples[i]},
                             {"head", g.entity_name(t.head)},
                             {"relation", g.relation_name(t.relation)},
                             {"tail", g.entity_name(t.tail)},
                             {"importance", r.subgraph.importance[i]},
                             {"mask", r.subgraph.mask[i].item()}});
  }
  return j;
}

}  // namespace gril
