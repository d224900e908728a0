#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "gril/bridge/bridge.hpp"
#include "gril/cam/cam.hpp"
#include "gril/errors.hpp"
#include "gril/eval/dataset.hpp"
#include "gril/eval/metrics.hpp"
#include "gril/kg/embeddings.hpp"
#include "gril/kg/knowledge_graph.hpp"
#include "gril/numerics/adam.hpp"
#include "gril/numerics/checkpoint.hpp"
#include "gril/reasoner/reasoner.hpp"
#include "gril/retriever/retriever.hpp"
#include "gril/training/config.hpp"
#include "gril/training/supervision.hpp"

namespace gril {

// Read-only inputs shared by every pass: the graph and its embeddings.
struct Resources {
  const KnowledgeGraph* graph = nullptr;
  EmbeddingProvider provider;
  GraphEmbeddings embeddings;
  TokenEmbedder tokens;

  static Resources build(const KnowledgeGraph& g, const EngineConfig& cfg,
                         std::optional<EmbeddingProvider> provider = std::nullopt) {
    Resources r;
    r.graph = &g;
    r.provider = provider ? std::move(*provider) : EmbeddingProvider::hashed(cfg.retriever.dim, cfg.embedding_salt);
    if (r.provider.dim() != cfg.retriever.dim) {
      throw ConfigError("embedding dim " + std::to_string(r.provider.dim()) + " does not match configured dim " +
                        std::to_string(cfg.retriever.dim));
    }
    r.embeddings = GraphEmbeddings::build(g, r.provider);
    r.tokens = TokenEmbedder(cfg.llm_dim, cfg.embedding_salt);
    return r;
  }
};

// A sample resolved against the graph.
struct PreparedSample {
  const TrainSample* sample = nullptr;
  std::vector<EntityId> seeds;
  std::vector<EntityId> gold_entities;  // answers that are graph entities
  Tensor question;                      // retriever space
  Tensor reader_question;               // reasoner space
  PathPositives positives;
};

inline PreparedSample prepare(const TrainSample& s, const Resources& res) {
  s.validate();
  const KnowledgeGraph& g = *res.graph;
  PreparedSample p;
  p.sample = &s;
  for (const auto& name : s.seeds) {
    auto id = g.find_entity(name);
    if (!id) throw LookupError("seed '" + name + "' is not in the graph");
    p.seeds.push_back(*id);
  }
  for (const auto& name : s.answers)
    if (auto id = g.find_entity(name)) p.gold_entities.push_back(*id);
  p.question = res.provider.question(s.question);
  p.reader_question = hash_text_vector(s.question, res.tokens.dim(), res.tokens.salt());
  if (!p.gold_entities.empty()) p.positives = shortest_path_positives(g, p.seeds, p.gold_entities);
  return p;
}

// Retriever theta, bridge psi and reasoner phi, with stable addresses.
class Model {
 public:
  explicit Model(const EngineConfig& cfg) : Model(cfg, std::mt19937_64(cfg.seed)) {}
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const EngineConfig& config() const noexcept { return config_; }

  RetrieverParams retriever;
  BridgeParams bridge;
  ToyReasoner reasoner;

  std::vector<Parameter*> theta() { return retriever.parameters(); }
  std::vector<Parameter*> head() {
    auto out = bridge.parameters();
    for (Parameter* p : reasoner.parameters()) out.push_back(p);
    return out;
  }
  std::vector<Parameter*> all() {
    auto out = theta();
    for (Parameter* p : head()) out.push_back(p);
    return out;
  }

  Checkpoint checkpoint() {
    Checkpoint ck;
    for (Parameter* p : all()) ck.arrays[p->name] = p->value;
    ck.meta["kind"] = "gril";
    ck.meta["config"] = config_to_json(config_).dump();
    return ck;
  }

  void load(const Checkpoint& ck) {
    for (Parameter* p : all()) {
      auto it = ck.arrays.find(p->name);
      if (it == ck.arrays.end()) throw DataError("checkpoint is missing " + p->name);
      if (it->second.shape() != p->value.shape()) {
        throw DataError("checkpoint shape " + shape_str(it->second.shape()) + " for " + p->name + ", expected " +
                        shape_str(p->value.shape()));
      }
    }
    for (Parameter* p : all()) p->value = ck.arrays.at(p->name);
  }

  static std::unique_ptr<Model> from_checkpoint(const Checkpoint& ck) {
    auto kind = ck.meta.find("kind");
    if (kind == ck.meta.end() || kind->second != "gril") throw DataError("not a model checkpoint");
    EngineConfig cfg;
    try {
      cfg = config_from_json(nlohmann::json::parse(ck.meta.at("config")));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(std::string("model checkpoint: bad config: ") + e.what());
    }
    auto m = std::make_unique<Model>(cfg);
    m->load(ck);
    return m;
  }

 private:
  Model(const EngineConfig& cfg, std::mt19937_64&& rng)
      : retriever(RetrieverParams::init(cfg.retriever, rng)),
        bridge(BridgeParams::init(BridgeConfig{cfg.retriever.dim, cfg.llm_dim, cfg.bridge_hidden}, rng)),
        reasoner(ToyReasonerConfig{cfg.llm_dim, cfg.reasoner_hidden}, rng),
        config_(cfg) {
    cfg.validate();
  }

  EngineConfig config_;
};

struct PassOptions {
  bool retriever_trainable = false;
  bool head_trainable = false;
  bool graph_token = true;
  bool include_gold = false;  // training: gold answers join the candidates
  std::optional<double> fixed_noise;
  std::size_t budget = 15;
  std::size_t num_layers = 0;  // 0 keeps the configured depth
};

struct Pass {
  RetrievalResult retrieval;
  std::optional<GraphToken> token;
  VerbalizedPrompt prompt;
  std::vector<Candidate> candidates;
  std::optional<ReasonerFeedback> feedback;
  double retrieval_seconds = 0.0;
};

// Retrieve, pool, verbalize and read one sample on `tape`.
inline Pass forward_pass(Tape& tape, Model& m, const Resources& res, const PreparedSample& s, const PassOptions& opt,
                         std::uint64_t noise_seed) {
  const KnowledgeGraph& g = *res.graph;
  std::mt19937_64 rng(noise_seed);
  Pass pass;
  RetrieveOptions ro;
  ro.trainable = opt.retriever_trainable;
  ro.budget = opt.budget;
  ro.num_layers = opt.num_layers;
  ro.fixed_noise = opt.fixed_noise;
  auto t0 = std::chrono::steady_clock::now();
  pass.retrieval = retrieve(tape, g, res.embeddings, s.question, s.seeds, m.retriever, ro, rng);
  pass.retrieval_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const Subgraph& sg = pass.retrieval.subgraph;

  std::optional<Var> gt;
  if (opt.graph_token && !sg.empty()) {
    BridgeVars bv = bind(tape, m.bridge, opt.head_trainable);
    pass.token = sag_pool(sg, g, pass.retrieval.state, res.embeddings, bv);
    gt = pass.token->vector;
  }
  pass.prompt = verbalize(sg, g, s.sample->question);

  std::vector<std::string> names;
  if (!s.sample->options.empty()) {
    names = s.sample->options;
  } else {
    std::set<EntityId> ents;
    for (TripleId t : sg.triples) {
      ents.insert(g.triple(t).head);
      ents.insert(g.triple(t).tail);
    }
    for (EntityId e : ents) names.push_back(g.entity_name(e));
    if (opt.include_gold)
      for (const auto& a : s.sample->answers)
        if (std::find(names.begin(), names.end(), a) == names.end()) names.push_back(a);
  }
  pass.candidates = encode_candidates(tape, names, sg.triples, sg.mask, g, res.tokens);
  if (pass.candidates.empty()) return pass;
  ReasonerInput in{assemble_reasoner_input(tape, gt, pass.prompt, res.tokens), s.reader_question};
  pass.feedback = m.reasoner.forward(tape, in, pass.candidates, opt.head_trainable);
  return pass;
}

struct LossReport {
  double reasoner = 0.0;
  double feedback = 0.0;
  double likelihood = 0.0;  // -log P_theta(G_s | q)
  double graph = 0.0;
  double total = 0.0;

  static LossReport weighted(double reasoner, double feedback, double likelihood, double graph, const LossWeights& w) {
    LossReport r{reasoner, feedback, likelihood, graph, 0.0};
    r.total = w.reasoner * reasoner + w.feedback * feedback + w.likelihood * likelihood + w.graph * graph;
    return r;
  }

  LossReport& operator+=(const LossReport& o) {
    reasoner += o.reasoner;
    feedback += o.feedback;
    likelihood += o.likelihood;
    graph += o.graph;
    total += o.total;
    return *this;
  }
  LossReport scaled(double c) const { return {reasoner * c, feedback * c, likelihood * c, graph * c, total * c}; }

  bool finite() const {
    return std::isfinite(reasoner) && std::isfinite(feedback) && std::isfinite(likelihood) && std::isfinite(graph) &&
           std::isfinite(total);
  }

  nlohmann::json to_json() const {
    return {{"reasoner", reasoner}, {"feedback", feedback}, {"likelihood", likelihood}, {"graph", graph}, {"total", total}};
  }

  friend bool operator==(const LossReport&, const LossReport&) = default;
};

// Which halves of the objective a step runs; tests switch them individually.
struct StepTerms {
  bool term1 = true;  // reasoner + bridge from the reasoner loss
  bool term2 = true;  // retriever from feedback, likelihood and supervision
};

enum class StepStatus { applied, skipped, aborted };

struct StepResult {
  StepStatus status = StepStatus::applied;
  LossReport losses;
  TrainMode effective_mode = TrainMode::full;
  std::string reason;
};

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c = 0) {
  std::uint64_t s = a * 0x9E3779B97F4A7C15ULL ^ (b + 0x632BE59BD9B4E019ULL) ^ (c * 0xD1B54A32D192ED03ULL);
  return detail::splitmix64(s);
}

// Budget and depth for one question: fixed, or 5c triples over max(c, min_layers) layers.
inline std::pair<std::size_t, std::size_t> retrieval_shape(const Model& m, const PreparedSample& s, const HopClassifier* cam) {
  const EngineConfig& c = m.config();
  if (!c.use_cam) return {c.budget, c.retriever.num_layers};
  if (!cam) throw ConfigError("use_cam is set but no hop classifier was provided");
  const std::size_t hops = cam->predict(s.question).hops;
  return {kTriplesPerHop * hops, std::max(hops, c.min_layers)};
}

// Holds the two optimizers: one over theta, one over psi and phi.
class Trainer {
 public:
  Trainer(Model& m, const Resources& res, const HopClassifier* cam = nullptr)
      : model_(m), res_(res), cam_(cam), theta_opt_(m.theta(), adam_config(m.config())), head_opt_(m.head(), adam_config(m.config())) {}

  Model& model() noexcept { return model_; }
  std::size_t incidents() const noexcept { return incidents_; }

  // Adds one sample's gradients to the parameters. Throws RetrievalExhausted
  // when the sample cannot be used and NumericError on a non-finite value.
  StepResult accumulate(const PreparedSample& s, TrainMode mode, std::uint64_t noise_seed, const StepTerms& terms = {}) {
    const EngineConfig& cfg = model_.config();
    const LossWeights& w = cfg.weights;
    StepResult out;
    out.effective_mode = mode;
    if (mode == TrainMode::full && s.positives.entities.empty()) out.effective_mode = TrainMode::feedback_only;
    const bool token = out.effective_mode != TrainMode::separate;

    auto [budget, layers] = retrieval_shape(model_, s, cam_);
    PassOptions po;
    po.graph_token = token;
    po.include_gold = true;
    po.budget = budget;
    po.num_layers = layers;
    double reasoner = 0.0, feedback = 0.0, likelihood = 0.0, graph = 0.0;

    if (terms.term1) {
      Tape t1;
      po.retriever_trainable = false;
      po.head_trainable = true;
      Pass p = forward_pass(t1, model_, res_, s, po, noise_seed);
      if (p.retrieval.subgraph.empty()) throw RetrievalExhausted("empty subgraph");
      Var l = reasoner_loss(*p.feedback, s.sample->answers);
      reasoner = l.item();
      check_finite(reasoner, "reasoner loss");
      t1.backward(ops::scale(l, w.reasoner));
      head_touched_ = true;
    }
    if (terms.term2) {
      Tape t2;
      po.retriever_trainable = true;
      po.head_trainable = false;
      std::vector<Var> parts;
      if (out.effective_mode == TrainMode::separate) {
        RetrieveOptions ro;
        ro.trainable = true;
        ro.budget = budget;
        ro.num_layers = layers;
        std::mt19937_64 rng(noise_seed);
        RetrievalResult r = retrieve(t2, *res_.graph, res_.embeddings, s.question, s.seeds, model_.retriever, ro, rng);
        if (r.subgraph.empty()) throw RetrievalExhausted("empty subgraph");
        Var gl = graph_supervision_loss(r.state, *res_.graph, s.positives.entities);
        graph = gl.item();
        parts.push_back(ops::scale(gl, w.graph));
      } else {
        Pass p = forward_pass(t2, model_, res_, s, po, noise_seed);
        if (p.retrieval.subgraph.empty()) throw RetrievalExhausted("empty subgraph");
        Var fl = reasoner_loss(*p.feedback, s.sample->answers);
        Var ll = ops::scale(subgraph_log_likelihood(p.retrieval.probs, p.retrieval.mask), -1.0);
        feedback = fl.item();
        likelihood = ll.item();
        parts.push_back(ops::scale(fl, w.feedback));
        parts.push_back(ops::scale(ll, w.likelihood));
        if (out.effective_mode == TrainMode::full) {
          Var gl = graph_supervision_loss(p.retrieval.state, *res_.graph, s.positives.entities);
          graph = gl.item();
          parts.push_back(ops::scale(gl, w.graph));
        }
      }
      Var total = ops::sum_of(parts);
      check_finite(total.item(), "retriever loss");
      if (total.requires_grad()) {
        t2.backward(total);
        theta_touched_ = true;
      }
    }
    out.losses = LossReport::weighted(reasoner, feedback, likelihood, graph, w);
    check_finite(out.losses.total, "total loss");
    return out;
  }

  // Applies the accumulated gradients averaged over `n` samples. Groups that
  // received no gradient are left untouched.
  void apply(std::size_t n) {
    for (Parameter* p : model_.all())
      for (double g : p->grad.values())
        if (!std::isfinite(g)) {
          discard();
          throw NumericError("non-finite gradient in " + p->name);
        }
    const double scale = 1.0 / static_cast<double>(std::max<std::size_t>(n, 1));
    if (theta_touched_) theta_opt_.step(scale);
    if (head_touched_) head_opt_.step(scale);
    discard();
  }

  void discard() {
    theta_opt_.zero_grad();
    head_opt_.zero_grad();
    theta_touched_ = head_touched_ = false;
  }

  // One sample, one update. Numeric failures leave the parameters untouched.
  StepResult joint_step(const PreparedSample& s, TrainMode mode, std::uint64_t noise_seed, const StepTerms& terms = {}) {
    discard();
    StepResult r;
    try {
      r = accumulate(s, mode, noise_seed, terms);
      apply(1);
    } catch (const RetrievalExhausted& e) {
      discard();
      r.status = StepStatus::skipped;
      r.reason = e.what();
    } catch (const SupervisionError& e) {
      discard();
      r.status = StepStatus::skipped;
      r.reason = e.what();
    } catch (const NumericError& e) {
      discard();
      ++incidents_;
      r.status = StepStatus::aborted;
      r.reason = e.what();
    }
    return r;
  }

 private:
  static AdamConfig adam_config(const EngineConfig& c) {
    AdamConfig a;
    a.learning_rate = c.learning_rate;
    a.clip_norm = c.clip_norm;
    return a;
  }
  static void check_finite(double v, const char* what) {
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite ") + what);
  }

  Model& model_;
  const Resources& res_;
  const HopClassifier* cam_;
  Adam theta_opt_, head_opt_;
  bool theta_touched_ = false, head_touched_ = false;
  std::size_t incidents_ = 0;
};

// ---- evaluation ----

struct QuestionRecord {
  std::string question;
  std::vector<std::string> gold;
  std::vector<std::string> ranked;
  std::vector<std::string> predicted;
  double hit = 0.0;
  double f1 = 0.0;
  std::size_t budget = 0;
  std::size_t subgraph_size = 0;
  double retrieval_seconds = 0.0;
};

struct EvalReport {
  double hits_at_1 = 0.0;
  double f1 = 0.0;  // macro
  double f1_micro = 0.0;
  double mean_retrieval_seconds = 0.0;
  std::size_t empty_predictions = 0;
  std::vector<QuestionRecord> records;

  // Wall-clock fields vary run to run; leave them out for reproducible output.
  nlohmann::json to_json(bool include_timing = true) const {
    nlohmann::json j{{"hits_at_1", hits_at_1}, {"f1", f1}, {"f1_micro", f1_micro}, {"questions", records.size()},
                     {"empty_predictions", empty_predictions}};
    if (include_timing) j["mean_retrieval_seconds"] = mean_retrieval_seconds;
    j["records"] = nlohmann::json::array();
    for (const auto& r : records) {
      nlohmann::json rj{{"question", r.question}, {"gold", r.gold},     {"ranked", r.ranked},
                        {"predicted", r.predicted}, {"hit", r.hit},      {"f1", r.f1},
                        {"budget", r.budget},       {"subgraph_size", r.subgraph_size}};
      if (include_timing) rj["retrieval_seconds"] = r.retrieval_seconds;
      j["records"].push_back(std::move(rj));
    }
    return j;
  }
};

// Candidates whose probability is at least `ratio` times the best one.
inline std::vector<std::string> prediction_set(const ReasonerFeedback& fb, double ratio) {
  std::vector<std::string> out;
  if (fb.ranking.empty()) return out;
  const double top = fb.log_prob(fb.ranking.front());
  const double cut = top + std::log(ratio);
  for (std::size_t i : fb.ranking)
    if (fb.log_prob(i) >= cut) out.push_back(fb.candidates[i]);
  return out;
}

// Aggregates per-question records; both means are over questions.
inline void summarize(EvalReport& rep, const MatchOptions& mo) {
  std::vector<std::vector<std::string>> ranked, preds, golds;
  double t = 0.0;
  for (auto& r : rep.records) {
    r.hit = top1_correct(r.ranked, r.gold, mo) ? 1.0 : 0.0;
    r.f1 = f1_score(r.predicted, r.gold, mo);
    ranked.push_back(r.ranked);
    preds.push_back(r.predicted);
    golds.push_back(r.gold);
    t += r.retrieval_seconds;
  }
  MetricWarnings warn;
  rep.hits_at_1 = hits_at_1(ranked, golds, mo, &warn);
  warn.empty_predictions = 0;
  F1Summary f = f1_score(preds, golds, mo, &warn);
  rep.empty_predictions = warn.empty_predictions;
  rep.f1 = f.macro;
  rep.f1_micro = f.micro;
  rep.mean_retrieval_seconds = rep.records.empty() ? 0.0 : t / static_cast<double>(rep.records.size());
}

struct EvalOptions {
  const HopClassifier* cam = nullptr;  // consulted when config.use_cam
  std::optional<std::size_t> workers;  // defaults to config.workers
};

inline QuestionRecord answer_question(Model& m, const Resources& res, const TrainSample& sample, const HopClassifier* cam) {
  const EngineConfig& cfg = m.config();
  QuestionRecord rec;
  rec.question = sample.question;
  rec.gold = sample.answers;
  PreparedSample s;
  try {
    s = prepare(sample, res);
  } catch (const LookupError&) {
    return rec;  // unknown seed: no prediction
  }
  auto [budget, layers] = retrieval_shape(m, s, cam);
  rec.budget = budget;
  PassOptions po;
  po.graph_token = cfg.mode != TrainMode::separate;
  po.fixed_noise = 0.5;
  po.budget = budget;
  po.num_layers = layers;
  Tape tape;
  Pass p = forward_pass(tape, m, res, s, po, 0);
  rec.retrieval_seconds = p.retrieval_seconds;
  rec.subgraph_size = p.retrieval.subgraph.size();
  if (p.feedback) {
    for (std::size_t i : p.feedback->ranking) rec.ranked.push_back(p.feedback->candidates[i]);
    rec.predicted = prediction_set(*p.feedback, cfg.f1_ratio);
  }
  return rec;
}

// Answers every sample with the retriever's mask pinned to its probabilities
// (noise fixed at 0.5). Questions are split across workers; results keep
// input order.
inline EvalReport evaluate(Model& m, const Resources& res, const std::vector<TrainSample>& samples, const EvalOptions& opt = {}) {
  const EngineConfig& cfg = m.config();
  EvalReport rep;
  rep.records.resize(samples.size());
  const std::size_t workers = std::max<std::size_t>(1, std::min(opt.workers.value_or(cfg.workers), samples.size()));
  const std::size_t chunk = cfg.eval_batch_size;
  auto run = [&](std::size_t w) {
    for (std::size_t start = w * chunk; start < samples.size(); start += workers * chunk)
      for (std::size_t i = start; i < std::min(start + chunk, samples.size()); ++i)
        rep.records[i] = answer_question(m, res, samples[i], opt.cam);
  };
  if (workers == 1) {
    run(0);
  } else {
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        try {
          run(w);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    for (auto& t : pool) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  summarize(rep, MatchOptions{cfg.case_fold});
  return rep;
}

// Mean retrieval probability over `triples` (0 for triples never scored),
// with the retriever frozen and noise pinned.
inline double mean_edge_probability(Model& m, const Resources& res, const TrainSample& sample, const std::vector<TripleId>& triples) {
  if (triples.empty()) return 0.0;
  PreparedSample s = prepare(sample, res);
  Tape tape;
  RetrieveOptions ro;
  ro.budget = m.config().budget;
  ro.fixed_noise = 0.5;
  std::mt19937_64 rng(0);
  RetrievalResult r = retrieve(tape, *res.graph, res.embeddings, s.question, s.seeds, m.retriever, ro, rng);
  double sum = 0.0;
  for (TripleId t : triples)
    if (auto it = r.state.edge_probs.find(t); it != r.state.edge_probs.end()) sum += it->second.item();
  return sum / static_cast<double>(triples.size());
}

// ---- fitting ----

struct EpochRecord {
  std::size_t epoch = 0;
  LossReport train_losses;  // means over applied samples
  double dev_hits1 = 0.0;
  double dev_f1 = 0.0;
  double wall_time_s = 0.0;
  std::size_t skipped = 0;
  std::size_t aborted = 0;

  nlohmann::json to_json() const {
    return {{"epoch", epoch},       {"train_losses", train_losses.to_json()}, {"dev_hits1", dev_hits1},
            {"dev_f1", dev_f1},     {"wall_time_s", wall_time_s},             {"skipped", skipped},
            {"aborted", aborted}};
  }
};

struct FitOptions {
  std::function<void(const EpochRecord&)> on_epoch;
  std::optional<std::filesystem::path> curve_path;       // one JSON line per epoch
  std::optional<std::filesystem::path> checkpoint_path;  // best model so far
  // Restores the best epoch's parameters into the model when done.
  bool restore_best = true;
  const HopClassifier* cam = nullptr;  // consulted when config.use_cam
};

struct FitResult {
  std::vector<EpochRecord> curve;
  std::size_t best_epoch = 0;
  double best_dev_hits1 = -1.0;
  double best_dev_f1 = -1.0;
  Checkpoint best;
};

// Shuffled minibatches, dev evaluation after each epoch, early stopping once
// `patience` + 1 consecutive epochs fail to improve dev Hits@1 (F1 breaks ties).
inline FitResult fit(Model& m, const Resources& res, const std::vector<TrainSample>& train, const std::vector<TrainSample>& dev,
                     const FitOptions& opt = {}) {
  const EngineConfig& cfg = m.config();
  if (train.empty()) throw ConfigError("training set is empty");
  std::vector<std::optional<PreparedSample>> prepared;
  prepared.reserve(train.size());
  for (const auto& s : train) {
    try {
      prepared.emplace_back(prepare(s, res));
    } catch (const LookupError&) {
      prepared.emplace_back(std::nullopt);
    }
  }
  const std::vector<TrainSample>& dev_set = dev.empty() ? train : dev;

  std::optional<std::ofstream> curve;
  if (opt.curve_path) {
    curve.emplace(*opt.curve_path);
    if (!*curve) throw DataError("cannot write " + opt.curve_path->string());
  }
  Trainer trainer(m, res, opt.cam);
  FitResult result;
  std::vector<std::size_t> order(train.size());
  std::size_t since_best = 0;
  const auto start = std::chrono::steady_clock::now();

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::mt19937_64 shuffle_rng(mix_seed(cfg.seed, epoch, 1));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    EpochRecord rec;
    rec.epoch = epoch;
    std::size_t applied = 0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      trainer.discard();
      LossReport batch;
      std::size_t used = 0;
      bool aborted = false;
      for (std::size_t k = b; k < std::min(b + cfg.batch_size, order.size()); ++k) {
        const std::size_t idx = order[k];
        if (!prepared[idx]) {
          ++rec.skipped;
          continue;
        }
        try {
          StepResult r = trainer.accumulate(*prepared[idx], cfg.mode, mix_seed(cfg.seed, epoch, idx + 2));
          batch += r.losses;
          ++used;
        } catch (const RetrievalExhausted&) {
          ++rec.skipped;
        } catch (const SupervisionError&) {
          ++rec.skipped;
        } catch (const NumericError&) {
          aborted = true;
          break;
        }
      }
      if (!aborted && used > 0) {
        try {
          trainer.apply(used);
        } catch (const NumericError&) {
          aborted = true;
        }
      }
      if (aborted) {
        trainer.discard();
        ++rec.aborted;
        continue;
      }
      rec.train_losses += batch;
      applied += used;
    }
    if (applied == 0) throw ConfigError("every training sample was skipped in epoch " + std::to_string(epoch));
    rec.train_losses = rec.train_losses.scaled(1.0 / static_cast<double>(applied));

    EvalReport dev_rep = evaluate(m, res, dev_set, EvalOptions{opt.cam, std::nullopt});
    rec.dev_hits1 = dev_rep.hits_at_1;
    rec.dev_f1 = dev_rep.f1;
    rec.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.curve.push_back(rec);
    if (curve) *curve << rec.to_json().dump() << '\n' << std::flush;
    if (opt.on_epoch) opt.on_epoch(rec);

    const bool better = rec.dev_hits1 > result.best_dev_hits1 ||
                        (rec.dev_hits1 == result.best_dev_hits1 && rec.dev_f1 > result.best_dev_f1);
    if (better) {
      result.best_epoch = epoch;
      result.best_dev_hits1 = rec.dev_hits1;
      result.best_dev_f1 = rec.dev_f1;
      result.best = m.checkpoint();
      result.best.meta["epoch"] = std::to_string(epoch);
      if (opt.checkpoint_path) save_checkpoint(result.best, *opt.checkpoint_path);
      since_best = 0;
    } else if (++since_best > cfg.patience) {
      break;
    }
  }
  if (opt.restore_best) m.load(result.best);
  return result;
}

}  // namespace gril
