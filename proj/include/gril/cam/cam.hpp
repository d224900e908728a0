#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "gril/errors.hpp"
#include "gril/numerics/adam.hpp"
#include "gril/numerics/checkpoint.hpp"
#include "gril/numerics/ops.hpp"

namespace gril {

inline constexpr std::size_t kTriplesPerHop = 5;

struct CamConfig {
  std::size_t dim = 512;  // question embedding size
  std::size_t hidden = 64;
  std::size_t max_hops = 4;
  std::size_t epochs = 200;
  double learning_rate = 1e-2;
  std::uint64_t seed = 0;

  void validate() const {
    if (dim == 0 || hidden == 0) throw ConfigError("cam dimensions must be positive");
    if (max_hops < 1) throw ConfigError("cam max_hops must be >= 1");
    if (!(learning_rate > 0)) throw ConfigError("cam learning rate must be positive");
  }
};

struct HopPrediction {
  std::size_t hops = 1;              // argmax class, 1-based
  std::vector<double> probabilities;  // over hops 1..max_hops
};

// Two-layer perceptron over the question embedding, one class per hop count.
class HopClassifier {
 public:
  explicit HopClassifier(const CamConfig& cfg) : cfg_(cfg) {
    cfg.validate();
    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> nd(0.0, 1.0);
    auto randn = [&](std::size_t r, std::size_t c) {
      Tensor t({r, c});
      for (auto& v : t.values()) v = nd(rng) / std::sqrt(static_cast<double>(c));
      return t;
    };
    w1_ = Parameter("cam.w1", randn(cfg.hidden, cfg.dim));
    b1_ = Parameter("cam.b1", Tensor({cfg.hidden}));
    w2_ = Parameter("cam.w2", randn(cfg.max_hops, cfg.hidden));
    b2_ = Parameter("cam.b2", Tensor({cfg.max_hops}));
  }

  const CamConfig& config() const noexcept { return cfg_; }
  std::vector<Parameter*> parameters() { return {&w1_, &b1_, &w2_, &b2_}; }

  Var logits(Tape& t, const Tensor& q, bool trainable) {
    if (!trainable) return logits(t, q);
    check_dim(q);
    Var h = ops::tanh(ops::linear(t.constant(q), t.param(w1_), t.param(b1_)));
    return ops::linear(h, t.param(w2_), t.param(b2_));
  }

  Var logits(Tape& t, const Tensor& q) const {
    check_dim(q);
    Var h = ops::tanh(ops::linear(t.constant(q), t.frozen(w1_), t.frozen(b1_)));
    return ops::linear(h, t.frozen(w2_), t.frozen(b2_));
  }

  HopPrediction predict(const Tensor& q) const {
    Tape t;
    Var p = ops::softmax(logits(t, q));
    HopPrediction out;
    out.probabilities = p.value().values();
    out.hops = static_cast<std::size_t>(std::max_element(out.probabilities.begin(), out.probabilities.end()) -
                                        out.probabilities.begin()) + 1;
    return out;
  }

  Checkpoint checkpoint() const {
    Checkpoint ck;
    for (const Parameter* p : {&w1_, &b1_, &w2_, &b2_}) ck.arrays[p->name] = p->value;
    ck.meta["kind"] = "cam";
    ck.meta["config"] = nlohmann::json{{"dim", cfg_.dim}, {"hidden", cfg_.hidden}, {"max_hops", cfg_.max_hops},
                                       {"epochs", cfg_.epochs}, {"learning_rate", cfg_.learning_rate}, {"seed", cfg_.seed}}
                            .dump();
    return ck;
  }

  static HopClassifier from_checkpoint(const Checkpoint& ck) {
    auto kind = ck.meta.find("kind");
    if (kind == ck.meta.end() || kind->second != "cam") throw DataError("checkpoint is not a hop classifier");
    CamConfig cfg;
    try {
      auto j = nlohmann::json::parse(ck.meta.at("config"));
      cfg.dim = j.at("dim");
      cfg.hidden = j.at("hidden");
      cfg.max_hops = j.at("max_hops");
      cfg.epochs = j.at("epochs");
      cfg.learning_rate = j.at("learning_rate");
      cfg.seed = j.at("seed");
    } catch (const std::exception& e) {
      throw DataError(std::string("cam checkpoint: bad config: ") + e.what());
    }
    HopClassifier c(cfg);
    for (Parameter* p : c.parameters()) {
      auto it = ck.arrays.find(p->name);
      if (it == ck.arrays.end()) throw DataError("cam checkpoint: missing " + p->name);
      if (it->second.shape() != p->value.shape()) throw DataError("cam checkpoint: shape mismatch for " + p->name);
      p->value = it->second;
    }
    return c;
  }

 private:
  void check_dim(const Tensor& q) const {
    if (q.size() != cfg_.dim) {
      throw DimensionError("cam: question embedding has " + std::to_string(q.size()) + " values, expected " + std::to_string(cfg_.dim));
    }
  }

  CamConfig cfg_;
  Parameter w1_, b1_, w2_, b2_;
};

// 5 x c triples for a question predicted to need c hops.
inline std::size_t predict_budget(const Tensor& question, const HopClassifier& cam) {
  return kTriplesPerHop * cam.predict(question).hops;
}

struct CamTrainReport {
  double train_accuracy = 0.0;
  std::vector<double> epoch_losses;
  bool single_class = false;  // degenerate data: trained anyway
};

// Full-batch cross-entropy training against 1-based hop labels.
inline CamTrainReport train_cam(HopClassifier& cam, const std::vector<Tensor>& questions, const std::vector<std::size_t>& hops) {
  const CamConfig& cfg = cam.config();
  if (questions.size() != hops.size()) throw DimensionError("train_cam: questions and labels differ in length");
  if (questions.empty()) throw DataError("train_cam: no samples");
  for (std::size_t h : hops) {
    if (h < 1 || h > cfg.max_hops) {
      throw DataError("hop label " + std::to_string(h) + " outside 1.." + std::to_string(cfg.max_hops));
    }
  }
  CamTrainReport rep;
  rep.single_class = std::set<std::size_t>(hops.begin(), hops.end()).size() < 2;
  AdamConfig ac;
  ac.learning_rate = cfg.learning_rate;
  Adam opt(cam.parameters(), ac);
  const double inv_n = 1.0 / static_cast<double>(questions.size());
  for (std::size_t ep = 0; ep < cfg.epochs; ++ep) {
    opt.zero_grad();
    Tape t;
    std::vector<Var> losses;
    losses.reserve(questions.size());
    for (std::size_t i = 0; i < questions.size(); ++i) losses.push_back(ops::cross_entropy(cam.logits(t, questions[i], true), hops[i] - 1));
    Var loss = ops::scale(ops::sum_of(losses), inv_n);
    t.backward(loss);
    rep.epoch_losses.push_back(loss.item());
    opt.step();
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < questions.size(); ++i) correct += cam.predict(questions[i]).hops == hops[i];
  rep.train_accuracy = static_cast<double>(correct) * inv_n;
  return rep;
}

}  // namespace gril
