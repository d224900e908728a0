#pragma once

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "gril/cam/cam.hpp"
#include "gril/errors.hpp"
#include "gril/eval/dataset.hpp"
#include "gril/eval/metrics.hpp"
#include "gril/eval/synthetic.hpp"
#include "gril/eval/timing.hpp"
#include "gril/training/config.hpp"
#include "gril/training/engine.hpp"

namespace gril::cli {

namespace fs = std::filesystem;

enum ExitCode : int { kOk = 0, kConfig = 2, kData = 3, kNumeric = 4 };

// Output directory of one command. Files handed out through `file()` are
// removed again unless `commit()` is reached, and so is the directory itself
// when this command created it.
class OutputDir {
 public:
  explicit OutputDir(fs::path dir) : dir_(std::move(dir)) {
    if (dir_.empty()) throw ConfigError("--out is required");
    if (fs::exists(dir_) && !fs::is_directory(dir_)) throw ConfigError("--out " + dir_.string() + " is not a directory");
    if (!fs::exists(dir_)) {
      std::error_code ec;
      fs::create_directories(dir_, ec);
      if (ec) throw DataError("cannot create " + dir_.string() + ": " + ec.message());
      created_ = true;
    }
  }
  OutputDir(const OutputDir&) = delete;
  OutputDir& operator=(const OutputDir&) = delete;

  ~OutputDir() {
    if (committed_) return;
    std::error_code ec;
    for (const auto& f : files_) fs::remove(f, ec);
    if (created_) fs::remove_all(dir_, ec);
  }

  fs::path file(const std::string& name) {
    fs::path p = dir_ / name;
    files_.push_back(p);
    return p;
  }

  std::ofstream open(const std::string& name) {
    fs::path p = file(name);
    std::ofstream out(p);
    if (!out) throw DataError("cannot write " + p.string());
    return out;
  }

  void commit() { committed_ = true; }
  const fs::path& path() const { return dir_; }

 private:
  fs::path dir_;
  std::vector<fs::path> files_;
  bool created_ = false, committed_ = false;
};

namespace detail {

inline nlohmann::json parse_flag_value(const std::string& s) {
  try {
    return nlohmann::json::parse(s);
  } catch (const nlohmann::json::exception&) {
    return nlohmann::json(s);
  }
}

// Every engine config key as `--<key>`; values are kept as strings until the
// layers are merged.
struct ConfigFlags {
  std::string config_file;
  std::map<std::string, std::string> values;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_file, "JSON config file (flags override it)");
    const EngineConfig defaults;
    for (const auto& f : config_fields()) {
      values[f.key];
      cmd->add_option("--" + f.key, values[f.key], f.help + " (default: " + f.get(defaults).dump() + ")");
    }
  }

  // defaults < base < file < flags
  EngineConfig resolve(CLI::App* cmd, const EngineConfig& base) const {
    EngineConfig cfg = base;
    if (!config_file.empty()) {
      std::ifstream in(config_file);
      if (!in) throw ConfigError("cannot open config file " + config_file);
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(in);
      } catch (const nlohmann::json::exception&) {
        throw ConfigError("config file " + config_file + " is not valid JSON");
      }
      cfg = config_from_json(j, cfg);
    }
    nlohmann::json flags = nlohmann::json::object();
    for (const auto& [key, value] : values)
      if (cmd->count("--" + key) > 0) flags[key] = parse_flag_value(value);
    return config_from_json(flags, cfg);
  }
};

inline KnowledgeGraph load_graph(const std::string& path) {
  if (path.empty()) throw ConfigError("--kg is required");
  return ingest_triples(fs::path(path));
}

inline std::optional<EmbeddingProvider> load_embeddings(const std::string& path) {
  if (path.empty()) return std::nullopt;
  return EmbeddingProvider::from_file(path);
}

inline std::vector<TrainSample> load_samples(const std::string& path, const char* flag) {
  if (path.empty()) throw ConfigError(std::string(flag) + " is required");
  return read_dataset(fs::path(path));
}

inline std::optional<HopClassifier> load_cam(const std::string& path) {
  if (path.empty()) return std::nullopt;
  return HopClassifier::from_checkpoint(load_checkpoint(path));
}

inline void write_json(OutputDir& out, const std::string& name, const nlohmann::json& j) {
  auto f = out.open(name);
  f << j.dump(2) << '\n';
}

inline CamConfig cam_config(const EngineConfig& c) {
  CamConfig cc;
  cc.dim = c.retriever.dim;
  cc.hidden = c.cam_hidden;
  cc.max_hops = c.max_hops;
  cc.epochs = c.cam_epochs;
  cc.learning_rate = c.cam_learning_rate;
  cc.seed = c.seed;
  return cc;
}

inline void require_cam(const EngineConfig& c, const std::optional<HopClassifier>& cam) {
  if (c.use_cam && !cam) throw ConfigError("use_cam is set; pass --cam <checkpoint>");
  if (cam && cam->config().dim != c.retriever.dim) throw ConfigError("hop classifier dim does not match the retriever dim");
}

// Predictions file: one JSON object per line aligned with the dataset, with
// "ranked" (best first) and optionally "predicted" (the F1 answer set).
inline EvalReport report_from_predictions(const std::vector<TrainSample>& gold, const fs::path& path, const MatchOptions& mo) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open predictions " + path.string());
  EvalReport rep;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    if (rep.records.size() >= gold.size()) throw ParseError(lineno, "more predictions than dataset samples");
    QuestionRecord r;
    try {
      auto j = nlohmann::json::parse(line);
      for (const auto& [k, _] : j.items())
        if (k != "question" && k != "ranked" && k != "predicted") throw ParseError(lineno, "unknown key '" + k + "'");
      r.ranked = j.at("ranked").get<std::vector<std::string>>();
      if (j.contains("predicted")) r.predicted = j["predicted"].get<std::vector<std::string>>();
      else if (!r.ranked.empty()) r.predicted = {r.ranked.front()};
      if (j.contains("question") && j["question"].get<std::string>() != gold[rep.records.size()].question)
        throw ParseError(lineno, "question does not match dataset line");
    } catch (const nlohmann::json::exception&) {
      throw ParseError(lineno, "expected {\"ranked\": [...], \"predicted\": [...]}");
    }
    r.question = gold[rep.records.size()].question;
    r.gold = gold[rep.records.size()].answers;
    rep.records.push_back(std::move(r));
  }
  if (rep.records.size() != gold.size()) {
    throw DataError("predictions cover " + std::to_string(rep.records.size()) + " of " + std::to_string(gold.size()) +
                    " samples");
  }
  summarize(rep, mo);
  return rep;
}

struct AblationArm {
  std::string name;
  std::function<void(EngineConfig&)> apply;
};

inline std::vector<AblationArm> ablation_arms() {
  std::vector<AblationArm> arms;
  arms.push_back({"full", [](EngineConfig&) {}});
  for (double s : {0.1, 0.2, 0.5}) {
    std::ostringstream n;
    n << "sigma=" << s;
    arms.push_back({n.str(), [s](EngineConfig& c) {
                      c.retriever.prune_mode = PruneMode::threshold;
                      c.retriever.sigma = s;
                    }});
  }
  for (std::size_t k : {5, 10, 20}) {
    arms.push_back({"top_k=" + std::to_string(k), [k](EngineConfig& c) {
                      c.retriever.prune_mode = PruneMode::top_k;
                      c.retriever.top_k = k;
                    }});
  }
  arms.push_back({"w/o pruning", [](EngineConfig& c) { c.retriever.prune_mode = PruneMode::none; }});
  arms.push_back({"w/o entity update", [](EngineConfig& c) { c.retriever.entity_update = false; }});
  arms.push_back({"separate", [](EngineConfig& c) { c.mode = TrainMode::separate; }});
  return arms;
}

}  // namespace detail

// Runs one command line. argv[0] is the program name.
inline int run(const std::vector<std::string>& argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Graph retrieval and reasoning engine"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "help for every subcommand");

  // gen-data
  SyntheticSpec spec;
  std::string gen_out;
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic multi-hop corpus");
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--num_entities", spec.num_entities, "entity cap")->capture_default_str();
  gen->add_option("--num_relations", spec.num_relations, "relation vocabulary size")->capture_default_str();
  gen->add_option("--branching", spec.branching, "max distractor children per node")->capture_default_str();
  gen->add_option("--distractor_depth", spec.distractor_depth, "distractor tree depth")->capture_default_str();
  gen->add_option("--min_hops", spec.min_hops, "shortest question depth")->capture_default_str();
  gen->add_option("--max_hops", spec.max_hops, "longest question depth")->capture_default_str();
  gen->add_option("--distractor_density", spec.distractor_density, "distractor edges per gold edge")->capture_default_str();
  gen->add_option("--num_questions", spec.num_questions, "questions generated")->capture_default_str();
  gen->add_option("--seed", spec.seed, "rng seed")->capture_default_str();

  // shared path options
  struct Paths {
    std::string out, kg, embeddings, train, dev, dataset, cam, checkpoint, predictions;
  };
  Paths p;
  auto common = [&](CLI::App* cmd) {
    cmd->add_option("--out", p.out, "output directory")->required();
    cmd->add_option("--kg", p.kg, "triple file (.tsv or .jsonl)");
    cmd->add_option("--embeddings", p.embeddings, "precomputed embedding table (default: hashed vectors)");
  };

  detail::ConfigFlags cam_flags, train_flags, retrieve_flags, eval_flags, ablate_flags;

  auto* tcam = app.add_subcommand("train-cam", "train the hop classifier");
  common(tcam);
  tcam->add_option("--train", p.train, "training samples with hop labels");
  cam_flags.attach(tcam);

  auto* train = app.add_subcommand("train", "train retriever, bridge and reasoner");
  common(train);
  train->add_option("--train", p.train, "training samples");
  train->add_option("--dev", p.dev, "dev samples for early stopping");
  train->add_option("--cam", p.cam, "hop classifier checkpoint");
  train_flags.attach(train);

  auto* retr = app.add_subcommand("retrieve", "retrieve subgraphs and render prompts");
  common(retr);
  retr->add_option("--checkpoint", p.checkpoint, "model checkpoint");
  retr->add_option("--dataset", p.dataset, "questions");
  retr->add_option("--cam", p.cam, "hop classifier checkpoint");
  retrieve_flags.attach(retr);

  bool no_timing = false;
  auto* ev = app.add_subcommand("eval", "score a model or a predictions file");
  common(ev);
  ev->add_option("--checkpoint", p.checkpoint, "model checkpoint");
  ev->add_option("--dataset", p.dataset, "gold samples");
  ev->add_option("--cam", p.cam, "hop classifier checkpoint");
  ev->add_option("--predictions", p.predictions, "predictions JSONL instead of a model");
  ev->add_flag("--no-timing", no_timing, "omit wall-clock fields from the report");
  eval_flags.attach(ev);

  std::string arm_filter;
  auto* abl = app.add_subcommand("ablate", "train and compare the ablation arms");
  common(abl);
  abl->add_option("--train", p.train, "training samples");
  abl->add_option("--dev", p.dev, "evaluation samples");
  abl->add_option("--cam", p.cam, "hop classifier checkpoint");
  abl->add_option("--arms", arm_filter, "comma-separated subset of arms (default: all)");
  ablate_flags.attach(abl);

  std::vector<std::string> args(argv.begin() + (argv.empty() ? 0 : 1), argv.end());
  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      app.exit(e, out, err);
      return kOk;
    }
    err << nlohmann::json{{"error", "config"}, {"message", e.what()}}.dump() << '\n';
    return kConfig;
  }

  auto fail = [&](const char* kind, const std::string& msg, int code) {
    std::string line = msg;
    std::replace(line.begin(), line.end(), '\n', ' ');
    err << nlohmann::json{{"error", kind}, {"message", line}}.dump() << '\n';
    return code;
  };

  try {
    auto finish_cfg = [](EngineConfig c) {
      c.validate();
      return c;
    };

    if (gen->parsed()) {
      spec.validate();
      OutputDir dir(gen_out);
      SyntheticCorpus c = generate_synthetic(spec);
      {
        auto f = dir.open("kg.tsv");
        write_triples_tsv(c.graph, f);
      }
      write_dataset(SyntheticCorpus::samples(c.train), dir.file("train.jsonl"));
      write_dataset(SyntheticCorpus::samples(c.dev), dir.file("dev.jsonl"));
      write_dataset(SyntheticCorpus::samples(c.test), dir.file("test.jsonl"));
      detail::write_json(dir, "summary.json",
                         {{"entities", c.graph.num_entities()}, {"relations", c.graph.num_relations()},
                          {"triples", c.graph.num_triples()}, {"train", c.train.size()}, {"dev", c.dev.size()},
                          {"test", c.test.size()}, {"seed", spec.seed}});
      dir.commit();
      out << "wrote " << c.graph.num_triples() << " triples and " << c.train.size() + c.dev.size() + c.test.size()
          << " questions to " << gen_out << '\n';
      return kOk;
    }

    if (tcam->parsed()) {
      EngineConfig cfg = finish_cfg(cam_flags.resolve(tcam, {}));
      auto samples = detail::load_samples(p.train, "--train");
      auto provider = detail::load_embeddings(p.embeddings);
      EmbeddingProvider prov = provider ? *provider : EmbeddingProvider::hashed(cfg.retriever.dim, cfg.embedding_salt);
      if (prov.dim() != cfg.retriever.dim) throw ConfigError("embedding dim does not match configured dim");
      std::vector<Tensor> qs;
      std::vector<std::size_t> hops;
      for (const auto& s : samples) {
        if (!s.hops) throw DataError("sample '" + s.question + "' has no hop label");
        if (*s.hops < 1) throw DataError("sample '" + s.question + "' has hop label < 1");
        qs.push_back(prov.question(s.question));
        hops.push_back(static_cast<std::size_t>(*s.hops));
      }
      OutputDir dir(p.out);
      HopClassifier cam(detail::cam_config(cfg));
      CamTrainReport rep = train_cam(cam, qs, hops);
      save_checkpoint(cam.checkpoint(), dir.file("cam.ckpt"));
      detail::write_json(dir, "cam_report.json",
                         {{"train_accuracy", rep.train_accuracy},
                          {"final_loss", rep.epoch_losses.empty() ? 0.0 : rep.epoch_losses.back()},
                          {"single_class", rep.single_class}});
      dir.commit();
      out << "hop classifier train accuracy " << rep.train_accuracy << '\n';
      return kOk;
    }

    if (train->parsed()) {
      EngineConfig cfg = finish_cfg(train_flags.resolve(train, {}));
      KnowledgeGraph g = detail::load_graph(p.kg);
      auto tr = detail::load_samples(p.train, "--train");
      std::vector<TrainSample> dev;
      if (!p.dev.empty()) dev = read_dataset(fs::path(p.dev));
      auto cam = detail::load_cam(p.cam);
      detail::require_cam(cfg, cam);
      Resources res = Resources::build(g, cfg, detail::load_embeddings(p.embeddings));
      OutputDir dir(p.out);
      detail::write_json(dir, "config.json", config_to_json(cfg));
      Model m(cfg);
      FitOptions fo;
      fo.cam = cam ? &*cam : nullptr;
      fo.curve_path = dir.file("curve.jsonl");
      fo.on_epoch = [&](const EpochRecord& r) {
        out << "epoch " << r.epoch << " loss " << r.train_losses.total << " dev_hits1 " << r.dev_hits1 << " dev_f1 "
            << r.dev_f1 << '\n';
      };
      FitResult fr = fit(m, res, tr, dev, fo);
      save_checkpoint(m.checkpoint(), dir.file("model.ckpt"));
      detail::write_json(dir, "train_summary.json",
                         {{"best_epoch", fr.best_epoch}, {"best_dev_hits1", fr.best_dev_hits1},
                          {"best_dev_f1", fr.best_dev_f1}, {"epochs_run", fr.curve.size()}});
      dir.commit();
      return kOk;
    }

    // Model from a checkpoint with file/flag overrides on top of its config.
    auto load_model = [&](detail::ConfigFlags& flags, CLI::App* cmd) {
      if (p.checkpoint.empty()) throw ConfigError("--checkpoint is required");
      Checkpoint ck = load_checkpoint(p.checkpoint);
      auto base = Model::from_checkpoint(ck);
      EngineConfig cfg = finish_cfg(flags.resolve(cmd, base->config()));
      auto m = std::make_unique<Model>(cfg);
      m->load(ck);
      return m;
    };

    if (retr->parsed()) {
      auto m = load_model(retrieve_flags, retr);
      const EngineConfig& cfg = m->config();
      KnowledgeGraph g = detail::load_graph(p.kg);
      auto qs = detail::load_samples(p.dataset, "--dataset");
      auto cam = detail::load_cam(p.cam);
      detail::require_cam(cfg, cam);
      Resources res = Resources::build(g, cfg, detail::load_embeddings(p.embeddings));
      OutputDir dir(p.out);
      auto prompts = dir.open("prompts.jsonl");
      auto traces = dir.open("traces.jsonl");
      for (const auto& q : qs) {
        PreparedSample s = prepare(q, res);
        auto [budget, layers] = retrieval_shape(*m, s, cam ? &*cam : nullptr);
        PassOptions po;
        po.graph_token = cfg.mode != TrainMode::separate;
        po.fixed_noise = 0.5;
        po.budget = budget;
        po.num_layers = layers;
        Tape tape;
        Pass pass = forward_pass(tape, *m, res, s, po, 0);
        prompts << nlohmann::json{{"question", q.question}, {"prompt", pass.prompt.text},
                                  {"triples", pass.prompt.triple_count}}
                       .dump()
                << '\n';
        traces << trace_json(pass.retrieval, g, q.question).dump() << '\n';
      }
      prompts.close();
      traces.close();
      dir.commit();
      out << "retrieved " << qs.size() << " questions\n";
      return kOk;
    }

    if (ev->parsed()) {
      auto gold = detail::load_samples(p.dataset, "--dataset");
      EvalReport rep;
      if (!p.predictions.empty()) {
        if (!p.checkpoint.empty()) throw ConfigError("--predictions and --checkpoint are exclusive");
        EngineConfig cfg = finish_cfg(eval_flags.resolve(ev, {}));
        rep = detail::report_from_predictions(gold, p.predictions, MatchOptions{cfg.case_fold});
      } else {
        auto m = load_model(eval_flags, ev);
        KnowledgeGraph g = detail::load_graph(p.kg);
        auto cam = detail::load_cam(p.cam);
        detail::require_cam(m->config(), cam);
        Resources res = Resources::build(g, m->config(), detail::load_embeddings(p.embeddings));
        rep = evaluate(*m, res, gold, EvalOptions{cam ? &*cam : nullptr, std::nullopt});
      }
      OutputDir dir(p.out);
      detail::write_json(dir, "report.json", rep.to_json(!no_timing));
      dir.commit();
      out << "hits@1 " << rep.hits_at_1 << " f1 " << rep.f1 << " f1_micro " << rep.f1_micro << '\n';
      return kOk;
    }

    if (abl->parsed()) {
      EngineConfig base = finish_cfg(ablate_flags.resolve(abl, {}));
      KnowledgeGraph g = detail::load_graph(p.kg);
      auto tr = detail::load_samples(p.train, "--train");
      auto dev = detail::load_samples(p.dev, "--dev");
      auto cam = detail::load_cam(p.cam);
      detail::require_cam(base, cam);
      auto provider = detail::load_embeddings(p.embeddings);
      Resources res = Resources::build(g, base, provider);
      auto arms = detail::ablation_arms();
      if (!arm_filter.empty()) {
        std::vector<detail::AblationArm> picked;
        std::istringstream ss(arm_filter);
        std::string name;
        while (std::getline(ss, name, ',')) {
          auto it = std::find_if(arms.begin(), arms.end(), [&](const auto& a) { return a.name == name; });
          if (it == arms.end()) throw ConfigError("unknown ablation arm '" + name + "'");
          picked.push_back(*it);
        }
        arms = std::move(picked);
      }
      OutputDir dir(p.out);
      nlohmann::json rows = nlohmann::json::array();
      const HopClassifier* camp = cam ? &*cam : nullptr;
      for (const auto& arm : arms) {
        EngineConfig cfg = base;
        arm.apply(cfg);
        cfg.validate();
        Model m(cfg);
        FitOptions fo;
        fo.cam = camp;
        FitResult fr = fit(m, res, tr, dev, fo);
        EvalReport rep = evaluate(m, res, dev, EvalOptions{camp, std::nullopt});
        TimingOptions to;
        to.cam = camp;
        LatencyStats lat = time_retrieval(m, res, dev, to).pruned;
        rows.push_back({{"arm", arm.name}, {"hits_at_1", rep.hits_at_1}, {"f1", rep.f1}, {"mean_retrieval_s", lat.mean},
                        {"p95_retrieval_s", lat.p95}, {"best_epoch", fr.best_epoch}});
        out << "arm " << arm.name << " done\n";
      }
      {
        auto tsv = dir.open("ablation.tsv");
        tsv << "arm\thits_at_1\tf1\tmean_retrieval_s\tp95_retrieval_s\n";
        for (const auto& r : rows) {
          tsv << r["arm"].get<std::string>() << '\t' << r["hits_at_1"].get<double>() << '\t' << r["f1"].get<double>() << '\t'
              << r["mean_retrieval_s"].get<double>() << '\t' << r["p95_retrieval_s"].get<double>() << '\n';
        }
      }
      detail::write_json(dir, "ablation.json", rows);
      dir.commit();
      out << std::left << std::setw(20) << "arm" << std::setw(10) << "hits@1" << std::setw(10) << "f1"
          << "mean_ms\n";
      for (const auto& r : rows) {
        out << std::left << std::setw(20) << r["arm"].get<std::string>() << std::setw(10) << std::setprecision(4)
            << r["hits_at_1"].get<double>() << std::setw(10) << r["f1"].get<double>()
            << r["mean_retrieval_s"].get<double>() * 1e3 << '\n';
      }
      return kOk;
    }
  } catch (const ConfigError& e) {
    return fail("config", e.what(), kConfig);
  } catch (const NumericError& e) {
    return fail("numeric", e.what(), kNumeric);
  } catch (const Error& e) {
    return fail("data", e.what(), kData);
  } catch (const fs::filesystem_error& e) {
    return fail("data", e.what(), kData);
  } catch (const nlohmann::json::exception& e) {
    return fail("data", e.what(), kData);
  }
  return kConfig;
}

}  // namespace gril::cli
