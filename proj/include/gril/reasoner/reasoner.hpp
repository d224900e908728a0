#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "gril/bridge/bridge.hpp"
#include "gril/errors.hpp"
#include "gril/kg/knowledge_graph.hpp"
#include "gril/numerics/ops.hpp"

namespace gril {

// A candidate answer: its surface string and its embedding on the pass's tape.
struct Candidate {
  std::string name;
  Var embedding;
};

struct ReasonerInput {
  std::vector<Var> sequence;  // [graph token,] prompt tokens
  Tensor question;            // question embedding in the reasoner's space
};

struct ReasonerFeedback {
  Var logits;
  Var log_probs;
  std::vector<std::string> candidates;
  std::vector<std::size_t> ranking;  // candidate indices, best first

  std::optional<std::size_t> index_of(const std::string& name) const {
    auto it = std::find(candidates.begin(), candidates.end(), name);
    if (it == candidates.end()) return std::nullopt;
    return static_cast<std::size_t>(it - candidates.begin());
  }
  double log_prob(std::size_t i) const { return log_probs.value()[i]; }
};

// The pluggable reasoner. Implementations must be deterministic given their
// parameters and inputs, and differentiable w.r.t. every input position.
class Reasoner {
 public:
  virtual ~Reasoner() = default;
  virtual std::size_t embedding_dim() const = 0;
  virtual ReasonerFeedback forward(Tape& tape, const ReasonerInput& input, std::span<const Candidate> candidates,
                                   bool trainable) = 0;
  virtual std::vector<Parameter*> parameters() = 0;
};

struct ToyReasonerConfig {
  std::size_t dim = 512;
  std::size_t hidden = 64;
};

// Small differentiable reader. Features f = [x_0; mean(sequence); q] where x_0
// is the leading position (the graph token when one is prepended); each
// candidate c scores e_c^T B f + v^T tanh(U [f; e_c] + u).
class ToyReasoner final : public Reasoner {
 public:
  ToyReasoner(const ToyReasonerConfig& cfg, std::mt19937_64& rng) : cfg_(cfg) {
    if (cfg.dim == 0 || cfg.hidden == 0) throw ConfigError("reasoner dimensions must be positive");
    std::normal_distribution<double> nd(0.0, 1.0);
    auto randn = [&](std::size_t r, std::size_t c, double s) {
      Tensor t({r, c});
      for (auto& v : t.values()) v = s * nd(rng);
      return t;
    };
    const std::size_t d = cfg.dim, h = cfg.hidden;
    bilinear_ = Parameter("reasoner.bilinear", randn(d, 3 * d, 0.1 / std::sqrt(double(d))));
    mlp_in_ = Parameter("reasoner.mlp_in", randn(h, 4 * d, 1.0 / std::sqrt(double(4 * d))));
    mlp_bias_ = Parameter("reasoner.mlp_bias", Tensor({h}));
    mlp_out_ = Parameter("reasoner.mlp_out", randn(1, h, 0.1 / std::sqrt(double(h))));
  }

  std::size_t embedding_dim() const override { return cfg_.dim; }
  const ToyReasonerConfig& config() const noexcept { return cfg_; }

  std::vector<Parameter*> parameters() override { return {&bilinear_, &mlp_in_, &mlp_bias_, &mlp_out_}; }

  ReasonerFeedback forward(Tape& tape, const ReasonerInput& input, std::span<const Candidate> candidates,
                           bool trainable) override {
    if (candidates.empty()) throw DomainError("reasoner: empty candidate set");
    if (input.sequence.empty()) throw DomainError("reasoner: empty input sequence");
    if (input.question.size() != cfg_.dim) throw ConfigError("reasoner: question embedding dim mismatch");
    auto b = [&](Parameter& p) { return trainable ? tape.param(p) : tape.frozen(p); };
    Var B = b(bilinear_), U = b(mlp_in_), u = b(mlp_bias_), vout = b(mlp_out_);

    Var pooled = ops::mean_of(input.sequence);
    Var f = ops::concat({input.sequence.front(), pooled, tape.constant(input.question)});
    Var bf = ops::matvec(B, f);
    std::vector<Var> logits;
    ReasonerFeedback fb;
    for (const Candidate& c : candidates) {
      if (c.embedding.size() != cfg_.dim) throw ConfigError("reasoner: candidate embedding dim mismatch");
      const Var& e = c.embedding;
      Var bil = ops::dot(e, bf);
      Var hid = ops::tanh(ops::linear(ops::concat({f, e}), U, u));
      logits.push_back(ops::add(bil, ops::matvec(vout, hid)));
      fb.candidates.push_back(c.name);
    }
    fb.logits = ops::stack(logits);
    fb.log_probs = ops::log_softmax(fb.logits);
    fb.ranking.resize(candidates.size());
    for (std::size_t i = 0; i < fb.ranking.size(); ++i) fb.ranking[i] = i;
    std::stable_sort(fb.ranking.begin(), fb.ranking.end(),
                     [&](std::size_t a, std::size_t c) { return fb.logits.value()[a] > fb.logits.value()[c]; });
    return fb;
  }

 private:
  ToyReasonerConfig cfg_;
  Parameter bilinear_, mlp_in_, mlp_bias_, mlp_out_;
};

// Negative log-likelihood of the gold candidate.
inline Var reasoner_loss(const ReasonerFeedback& fb, std::size_t gold) {
  if (gold >= fb.candidates.size()) throw SupervisionError("gold answer is not among the candidates");
  return ops::scale(ops::element(fb.log_probs, gold), -1.0);
}

inline Var reasoner_loss(const ReasonerFeedback& fb, const std::string& gold) {
  auto i = fb.index_of(gold);
  if (!i) throw SupervisionError("gold answer '" + gold + "' is not among the candidates");
  return reasoner_loss(fb, *i);
}

// Several acceptable answers: -log of their total probability.
inline Var reasoner_loss(const ReasonerFeedback& fb, const std::vector<std::string>& golds) {
  std::vector<Var> lp;
  for (const auto& a : golds)
    if (auto i = fb.index_of(a)) lp.push_back(ops::element(fb.log_probs, *i));
  if (lp.empty()) throw SupervisionError("no gold answer is among the candidates");
  if (lp.size() == 1) return ops::scale(lp[0], -1.0);
  return ops::scale(ops::logsumexp(ops::stack(lp)), -1.0);
}

// Candidate embeddings as the toy reader sees them: the name's token vector
// plus the mean of role-tagged relation vectors ("in:r" when the candidate is
// a tail, "out:r" when a head) over the prompt triples that mention it. With
// `masks` (one per prompt triple) each mention's vector is scaled by its
// triple's mask value, so the reader's loss reaches the retriever through the
// mask; without, every mention counts with weight 1.
inline std::vector<Candidate> encode_candidates(Tape& tape, const std::vector<std::string>& names,
                                                std::span<const TripleId> prompt_triples, std::span<const Var> masks,
                                                const KnowledgeGraph& g, const TokenEmbedder& embedder) {
  if (!masks.empty() && masks.size() != prompt_triples.size()) throw DimensionError("encode_candidates: one mask per triple");
  std::vector<Candidate> out;
  out.reserve(names.size());
  for (const auto& name : names) {
    Tensor base({embedder.dim()});
    auto toks = whitespace_tokens(name);
    for (const auto& t : toks) {
      Tensor v = embedder.embed(t);
      for (std::size_t k = 0; k < base.size(); ++k) base[k] += v[k] / static_cast<double>(toks.size());
    }
    std::vector<Var> roles, weights;
    if (auto id = g.find_entity(name)) {
      for (std::size_t i = 0; i < prompt_triples.size(); ++i) {
        const Triple& t = g.triple(prompt_triples[i]);
        const std::string& r = g.relation_name(t.relation);
        for (const auto& [role, ent] : {std::pair{"in:", t.tail}, std::pair{"out:", t.head}}) {
          if (ent != *id) continue;
          roles.push_back(tape.constant(embedder.embed(role + r)));
          weights.push_back(masks.empty() ? tape.constant(Tensor::scalar(1.0)) : masks[i]);
        }
      }
    }
    Var e = tape.constant(base);
    if (!roles.empty()) {
      Var ctx = ops::weighted_sum(ops::stack(weights), roles);
      e = ops::add(e, ops::scale(ctx, 1.0 / static_cast<double>(roles.size())));
    }
    out.push_back(Candidate{name, e});
  }
  return out;
}

}  // namespace gril
