#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <type_traits>
#include <vector>

#include <json.hpp>

#include "gril/errors.hpp"
#include "gril/retriever/retriever.hpp"

namespace gril {

enum class TrainMode { full, feedback_only, separate };

inline std::string to_string(TrainMode m) {
  switch (m) {
    case TrainMode::full: return "full";
    case TrainMode::feedback_only: return "feedback_only";
    case TrainMode::separate: return "separate";
  }
  return "?";
}

inline TrainMode train_mode_from_string(const std::string& s) {
  if (s == "full") return TrainMode::full;
  if (s == "feedback_only") return TrainMode::feedback_only;
  if (s == "separate") return TrainMode::separate;
  throw ConfigError("unknown training mode '" + s + "'");
}

struct LossWeights {
  double reasoner = 1.0;    // Term 1
  double feedback = 1.0;    // Term 2, -log P(a | G_s, q)
  double likelihood = 1.0;  // Term 2, -log P_theta(G_s | q)
  double graph = 1.0;       // shortest-path supervision
};

// Everything a run needs besides data paths.
struct EngineConfig {
  RetrieverConfig retriever;
  std::size_t llm_dim = 512;
  std::size_t bridge_hidden = 512;
  std::size_t reasoner_hidden = 64;
  std::size_t budget = 15;
  bool use_cam = false;
  std::size_t min_layers = 1;
  TrainMode mode = TrainMode::full;
  LossWeights weights;
  double learning_rate = 1e-5;
  double clip_norm = 0.0;
  std::size_t batch_size = 2;
  std::size_t eval_batch_size = 4;
  std::size_t epochs = 20;
  std::size_t patience = 3;
  std::uint64_t seed = 0;
  std::uint64_t embedding_salt = 0;
  bool case_fold = false;
  double f1_ratio = 0.5;
  std::size_t workers = 1;
  std::size_t max_hops = 4;
  std::size_t cam_hidden = 64;
  std::size_t cam_epochs = 200;
  double cam_learning_rate = 1e-2;

  void validate() const {
    retriever.validate();
    if (llm_dim == 0 || bridge_hidden == 0 || reasoner_hidden == 0) throw ConfigError("model dimensions must be positive");
    if (budget < 1) throw ConfigError("budget must be >= 1");
    if (min_layers < 1) throw ConfigError("min_layers must be >= 1");
    for (double w : {weights.reasoner, weights.feedback, weights.likelihood, weights.graph})
      if (!(w >= 0.0)) throw ConfigError("loss weights must be non-negative");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
    if (!(clip_norm >= 0.0)) throw ConfigError("clip_norm must be >= 0");
    if (batch_size < 1 || eval_batch_size < 1) throw ConfigError("batch sizes must be >= 1");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (!(f1_ratio > 0.0 && f1_ratio <= 1.0)) throw ConfigError("f1_ratio must lie in (0,1]");
    if (workers < 1) throw ConfigError("workers must be >= 1");
    if (max_hops < 1 || cam_hidden < 1 || cam_epochs < 1) throw ConfigError("cam settings must be positive");
    if (!(cam_learning_rate > 0.0)) throw ConfigError("cam_learning_rate must be positive");
  }
};

struct ConfigField {
  std::string key;
  std::string help;
  std::function<nlohmann::json(const EngineConfig&)> get;
  std::function<void(EngineConfig&, const nlohmann::json&)> set;
};

namespace detail {

template <class T, class Access>
ConfigField field(std::string key, std::string help, Access access) {
  return {std::move(key), std::move(help),
          [access](const EngineConfig& c) { return nlohmann::json(access(const_cast<EngineConfig&>(c))); },
          [access](EngineConfig& c, const nlohmann::json& j) {
            if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
              if (!j.is_number_unsigned()) throw nlohmann::json::type_error::create(302, "expected a non-negative integer", &j);
            }
            access(c) = j.get<T>();
          }};
}

}  // namespace detail

// Every recognised key, in display order.
inline const std::vector<ConfigField>& config_fields() {
  using detail::field;
  using C = EngineConfig;
  static const std::vector<ConfigField> fields = {
      field<std::size_t>("dim", "retriever embedding size", [](C& c) -> auto& { return c.retriever.dim; }),
      field<std::size_t>("num_layers", "growing/pruning iterations L", [](C& c) -> auto& { return c.retriever.num_layers; }),
      field<double>("sigma", "pruning threshold on attention", [](C& c) -> auto& { return c.retriever.sigma; }),
      field<std::size_t>("prune_trigger_budget", "low-attention edge count that triggers pruning",
                         [](C& c) -> auto& { return c.retriever.prune_trigger_budget; }),
      field<double>("tau", "mask temperature", [](C& c) -> auto& { return c.retriever.tau; }),
      {"prune_mode", "threshold | top_k | none", [](const C& c) { return nlohmann::json(to_string(c.retriever.prune_mode)); },
       [](C& c, const nlohmann::json& j) { c.retriever.prune_mode = prune_mode_from_string(j.get<std::string>()); }},
      field<std::size_t>("top_k", "edges kept per layer in top_k mode", [](C& c) -> auto& { return c.retriever.top_k; }),
      field<bool>("entity_update", "refresh entity embeddings between layers", [](C& c) -> auto& { return c.retriever.entity_update; }),
      field<bool>("question_interaction", "relation-question product feature in the edge scorer",
                  [](C& c) -> auto& { return c.retriever.question_interaction; }),
      field<std::size_t>("llm_dim", "reasoner input embedding size", [](C& c) -> auto& { return c.llm_dim; }),
      field<std::size_t>("bridge_hidden", "hidden width of the graph-token projection", [](C& c) -> auto& { return c.bridge_hidden; }),
      field<std::size_t>("reasoner_hidden", "hidden width of the toy reasoner", [](C& c) -> auto& { return c.reasoner_hidden; }),
      field<std::size_t>("budget", "triples kept in the final subgraph", [](C& c) -> auto& { return c.budget; }),
      field<bool>("use_cam", "let the hop classifier set budget and depth", [](C& c) -> auto& { return c.use_cam; }),
      field<std::size_t>("min_layers", "depth floor when the hop classifier drives retrieval", [](C& c) -> auto& { return c.min_layers; }),
      {"mode", "full | feedback_only | separate", [](const C& c) { return nlohmann::json(to_string(c.mode)); },
       [](C& c, const nlohmann::json& j) { c.mode = train_mode_from_string(j.get<std::string>()); }},
      field<double>("w_reasoner", "weight of the reasoner loss", [](C& c) -> auto& { return c.weights.reasoner; }),
      field<double>("w_feedback", "weight of the reasoner feedback to the retriever", [](C& c) -> auto& { return c.weights.feedback; }),
      field<double>("w_likelihood", "weight of the subgraph log-likelihood", [](C& c) -> auto& { return c.weights.likelihood; }),
      field<double>("w_graph", "weight of shortest-path supervision", [](C& c) -> auto& { return c.weights.graph; }),
      field<double>("learning_rate", "Adam step size", [](C& c) -> auto& { return c.learning_rate; }),
      field<double>("clip_norm", "global gradient-norm clip, 0 disables", [](C& c) -> auto& { return c.clip_norm; }),
      field<std::size_t>("batch_size", "training minibatch size", [](C& c) -> auto& { return c.batch_size; }),
      field<std::size_t>("eval_batch_size", "evaluation chunk size", [](C& c) -> auto& { return c.eval_batch_size; }),
      field<std::size_t>("epochs", "maximum training epochs", [](C& c) -> auto& { return c.epochs; }),
      field<std::size_t>("patience", "epochs without dev improvement tolerated", [](C& c) -> auto& { return c.patience; }),
      field<std::uint64_t>("seed", "rng seed", [](C& c) -> auto& { return c.seed; }),
      field<std::uint64_t>("embedding_salt", "salt of the hashed embeddings", [](C& c) -> auto& { return c.embedding_salt; }),
      field<bool>("case_fold", "case-insensitive answer matching", [](C& c) -> auto& { return c.case_fold; }),
      field<double>("f1_ratio", "answers with p >= ratio * top p form the F1 prediction set", [](C& c) -> auto& { return c.f1_ratio; }),
      field<std::size_t>("workers", "concurrent evaluation workers", [](C& c) -> auto& { return c.workers; }),
      field<std::size_t>("max_hops", "hop classes of the hop classifier", [](C& c) -> auto& { return c.max_hops; }),
      field<std::size_t>("cam_hidden", "hop classifier hidden width", [](C& c) -> auto& { return c.cam_hidden; }),
      field<std::size_t>("cam_epochs", "hop classifier training epochs", [](C& c) -> auto& { return c.cam_epochs; }),
      field<double>("cam_learning_rate", "hop classifier step size", [](C& c) -> auto& { return c.cam_learning_rate; }),
  };
  return fields;
}

inline nlohmann::json config_to_json(const EngineConfig& c) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& f : config_fields()) j[f.key] = f.get(c);
  return j;
}

// Applies the keys present in `j` on top of `base`. Unknown keys and
// ill-typed values are configuration errors; the result is validated.
inline EngineConfig config_from_json(const nlohmann::json& j, EngineConfig base = {}) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  const auto& fields = config_fields();
  for (const auto& [key, value] : j.items()) {
    auto it = std::find_if(fields.begin(), fields.end(), [&](const ConfigField& f) { return f.key == key; });
    if (it == fields.end()) throw ConfigError("unknown config key '" + key + "'");
    try {
      it->set(base, value);
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("bad value for config key '" + key + "': " + value.dump());
    }
  }
  base.validate();
  return base;
}

}  // namespace gril
