#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "gril/errors.hpp"
#include "gril/kg/embeddings.hpp"
#include "gril/kg/knowledge_graph.hpp"
#include "gril/numerics/ops.hpp"
#include "gril/retriever/retriever.hpp"

namespace gril {

struct BridgeConfig {
  std::size_t dim = 512;      // retriever embedding size
  std::size_t llm_dim = 512;  // reasoner input embedding size
  std::size_t hidden = 512;
};

// SAG scorer plus the two-layer tanh perceptron that projects the pooled
// subgraph embedding into the reasoner's input space.
struct BridgeParams {
  BridgeConfig config;
  Parameter sag_weight;
  Parameter sag_bias;
  Parameter proj1_weight, proj1_bias;
  Parameter proj2_weight, proj2_bias;

  static BridgeParams init(const BridgeConfig& cfg, std::mt19937_64& rng) {
    if (cfg.dim == 0 || cfg.llm_dim == 0 || cfg.hidden == 0) throw ConfigError("bridge dimensions must be positive");
    std::normal_distribution<double> nd(0.0, 1.0);
    auto randn = [&](std::size_t r, std::size_t c, double s) {
      Tensor t({r, c});
      for (auto& v : t.values()) v = s * nd(rng);
      return t;
    };
    BridgeParams p;
    p.config = cfg;
    p.sag_weight = Parameter("bridge.sag_weight", randn(1, cfg.dim, 0.1 / std::sqrt(double(cfg.dim))));
    p.sag_bias = Parameter("bridge.sag_bias", Tensor({1}));
    p.proj1_weight = Parameter("bridge.proj1_weight", randn(cfg.hidden, cfg.dim, 1.0 / std::sqrt(double(cfg.dim))));
    p.proj1_bias = Parameter("bridge.proj1_bias", Tensor({cfg.hidden}));
    // Zero output layer: the graph token starts as a no-op and grows only as far
    // as the reasoner's loss asks it to.
    p.proj2_weight = Parameter("bridge.proj2_weight", Tensor({cfg.llm_dim, cfg.hidden}));
    p.proj2_bias = Parameter("bridge.proj2_bias", Tensor({cfg.llm_dim}));
    return p;
  }

  std::vector<Parameter*> parameters() {
    return {&sag_weight, &sag_bias, &proj1_weight, &proj1_bias, &proj2_weight, &proj2_bias};
  }
};

struct BridgeVars {
  Var sag_weight, sag_bias, proj1_weight, proj1_bias, proj2_weight, proj2_bias;
};

inline BridgeVars bind(Tape& t, BridgeParams& p, bool trainable) {
  auto b = [&](Parameter& x) { return trainable ? t.param(x) : t.frozen(x); };
  return {b(p.sag_weight), b(p.sag_bias), b(p.proj1_weight), b(p.proj1_bias), b(p.proj2_weight), b(p.proj2_bias)};
}

struct GraphToken {
  Var vector;
  std::vector<EntityId> entities;  // pooled entities, ascending
  Var attention;                   // A^s over `entities`
  Var inclusion;                   // per-entity soft inclusion weight
};

// Pooled entities of a subgraph with their inclusion weight: the largest
// mask value among the selected edges touching the entity.
inline std::vector<std::pair<EntityId, Var>> subgraph_entities(const Subgraph& sg, const KnowledgeGraph& g) {
  std::map<EntityId, std::vector<Var>> touching;
  for (std::size_t i = 0; i < sg.size(); ++i) {
    const Triple& t = g.triple(sg.triples[i]);
    touching[t.head].push_back(sg.mask[i]);
    if (t.tail != t.head) touching[t.tail].push_back(sg.mask[i]);
  }
  std::vector<std::pair<EntityId, Var>> out;
  for (auto& [e, ms] : touching) out.emplace_back(e, ms.size() == 1 ? ms[0] : ops::maximum(ms));
  return out;
}

inline Var project(Var pooled, const BridgeVars& v) {
  Var h = ops::tanh(ops::linear(pooled, v.proj1_weight, v.proj1_bias));
  return ops::linear(h, v.proj2_weight, v.proj2_bias);
}

// Self-attention graph pooling: A^s = softmax over entities of a linear score
// of h'_e; h_GT = MLP(sum_e A^s_e * w_e * h'_e).
inline GraphToken sag_pool(const Subgraph& sg, const KnowledgeGraph& g, RetrievalState& state, const GraphEmbeddings& emb,
                           const BridgeVars& v) {
  if (sg.empty()) throw RetrievalExhausted("cannot pool an empty subgraph");
  auto ents = subgraph_entities(sg, g);
  GraphToken tok;
  std::vector<Var> scores, weights, vecs;
  for (auto& [e, w] : ents) {
    Var h = context_of(state, emb, e);
    tok.entities.push_back(e);
    vecs.push_back(h);
    weights.push_back(w);
    scores.push_back(ops::linear(h, v.sag_weight, v.sag_bias));
  }
  tok.attention = ops::softmax(ops::stack(scores));
  tok.inclusion = ops::stack(weights);
  Var pooled = ops::weighted_sum(ops::mul(tok.attention, tok.inclusion), vecs);
  tok.vector = project(pooled, v);
  return tok;
}

inline constexpr const char* kGraphTokenPlaceholder = "[Graph Token]";

struct VerbalizedPrompt {
  std::string text;
  std::size_t triple_count = 0;
};

inline std::string verbalize_triple(const KnowledgeGraph& g, TripleId id) {
  const Triple& t = g.triple(id);
  return "<" + g.entity_name(t.head) + " → " + g.relation_name(t.relation) + " → " + g.entity_name(t.tail) + ">";
}

// Renders the subgraph (already in descending-importance order) into the
// reasoning-paths prompt. Each "\n" in the template is a newline character.
inline VerbalizedPrompt verbalize(std::span<const TripleId> triples, const KnowledgeGraph& g, const std::string& question,
                                  const std::string& answer = {}) {
  std::string paths;
  for (std::size_t i = 0; i < triples.size(); ++i) {
    if (i) paths += "; ";
    paths += verbalize_triple(g, triples[i]);
  }
  VerbalizedPrompt p;
  p.triple_count = triples.size();
  p.text = std::string(kGraphTokenPlaceholder) +
           " Based on the following reasoning paths, please answer the given question. \n Reasoning Paths: " + paths +
           " \n Question: " + question + " \n Answer: " + answer;
  return p;
}

inline VerbalizedPrompt verbalize(const Subgraph& sg, const KnowledgeGraph& g, const std::string& question,
                                  const std::string& answer = {}) {
  return verbalize(std::span<const TripleId>(sg.triples), g, question, answer);
}

// Whitespace tokens hashed to fixed vectors of the reasoner's input size.
class TokenEmbedder {
 public:
  explicit TokenEmbedder(std::size_t dim = 512, std::uint64_t salt = 0) : dim_(dim), salt_(salt) {
    if (dim == 0) throw ConfigError("token embedding dim must be positive");
  }
  std::size_t dim() const noexcept { return dim_; }
  std::uint64_t salt() const noexcept { return salt_; }
  Tensor embed(const std::string& token) const { return hash_vector(token, dim_, salt_); }

  // Prompt tokens; the graph-token placeholder is not a text token.
  std::vector<std::string> tokenize(const std::string& text) const {
    std::string_view body = text;
    const std::string_view ph = kGraphTokenPlaceholder;
    if (body.substr(0, ph.size()) == ph) body.remove_prefix(ph.size());
    return whitespace_tokens(body);
  }

 private:
  std::size_t dim_;
  std::uint64_t salt_;
};

// [h_GT || h_IS]: the graph token (when given) followed by prompt token embeddings.
inline std::vector<Var> assemble_reasoner_input(Tape& tape, const std::optional<Var>& graph_token,
                                                const VerbalizedPrompt& prompt, const TokenEmbedder& embedder) {
  std::vector<Var> seq;
  if (graph_token) {
    if (graph_token->size() != embedder.dim() || graph_token->value().rank() != 1) {
      throw ConfigError("graph token dim " + shape_str(graph_token->shape()) + " does not match embedder dim " +
                        std::to_string(embedder.dim()));
    }
    seq.push_back(*graph_token);
  }
  for (const auto& tok : embedder.tokenize(prompt.text)) seq.push_back(tape.constant(embedder.embed(tok)));
  return seq;
}

}  // namespace gril
