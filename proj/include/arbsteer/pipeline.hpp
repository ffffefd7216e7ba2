#pragma once

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "arbsteer/arbitration.hpp"
#include "arbsteer/capture.hpp"
#include "arbsteer/eval/report.hpp"
#include "arbsteer/eval/sweep.hpp"
#include "arbsteer/io.hpp"
#include "arbsteer/model/checkpoint.hpp"
#include "arbsteer/model/train.hpp"
#include "arbsteer/probes.hpp"
#include "arbsteer/synthkb/datasets.hpp"
#include "arbsteer/synthkb/kb.hpp"
#include "json.hpp"

namespace arbsteer::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

struct KbConfig {
  std::size_t num_relations = 27;
  std::size_t entities_per_relation = 150;
};

struct EvalConfig {
  std::size_t scenario_pool = 200;  // scenarios drawn per regime before stratification
  std::size_t per_regime = 50;      // stratified sample kept per regime
  std::size_t max_relations = 16;
  std::size_t max_new = 4;
};

struct GridConfig {
  std::vector<std::size_t> layers;  // empty means every layer
  std::vector<double> alphas_copy_to_recall{1, 3, 30, 100};
  std::vector<double> alphas_recall_to_copy{-1, -3, -30, -100};
  std::vector<Location> locations{Location::ObjCf, Location::Subj, Location::Last};
  std::vector<Topology> topologies{Topology::QueryFirst, Topology::ContextFirst};
  std::vector<Regime> regimes{Regime::CopyToRecall, Regime::RecallToCopy};
};

struct RunConfig {
  std::uint64_t seed = 0;
  fs::path out = "run";
  KbConfig kb;
  EvalConfig eval;
  model::ModelConfig model;
  model::TrainConfig train;
  model::Curriculum curriculum;
  GridConfig grid;
  eval::ReportThresholds thresholds;
  std::size_t probe_scenarios = 8;  // per regime

  std::vector<std::size_t> layers() const {
    if (!grid.layers.empty()) return grid.layers;
    std::vector<std::size_t> all(model.n_layers);
    std::iota(all.begin(), all.end(), std::size_t{0});
    return all;
  }

  void validate() const {
    model::ModelConfig m = model;
    if (m.vocab_size == 0) m.vocab_size = 1;
    m.validate();
    for (std::size_t l : grid.layers) {
      if (l >= model.n_layers) {
        throw ContractError("config: grid layer " + std::to_string(l) + " outside [0, " +
                            std::to_string(model.n_layers) + ")");
      }
    }
    for (double a : grid.alphas_copy_to_recall) {
      if (a < 0) throw ContractError("config: CopyToRecall alphas must be >= 0");
    }
    for (double a : grid.alphas_recall_to_copy) {
      if (a > 0) throw ContractError("config: RecallToCopy alphas must be <= 0");
    }
    if (eval.per_regime == 0 || eval.max_new == 0) throw ContractError("config: eval sizes must be >= 1");
    if (thresholds.ppl_ratio <= 0) throw ContractError("config: ppl_ratio must be positive");
  }
};

template <class E>
std::vector<std::string> enum_names(const std::vector<E>& v) {
  std::vector<std::string> out;
  for (E e : v) out.emplace_back(to_string(e));
  return out;
}

template <class E>
std::vector<E> parse_enums(const std::vector<std::string>& v) {
  std::vector<E> out;
  for (const auto& s : v) out.push_back(parse_enum<E>(s));
  return out;
}

/// Effective configuration as echoed into provenance records. The output
/// directory is left out so runs in different directories compare equal.
inline json to_json(const RunConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["kb"] = {{"num_relations", c.kb.num_relations}, {"entities_per_relation", c.kb.entities_per_relation}};
  j["eval"] = {{"scenario_pool", c.eval.scenario_pool},
               {"per_regime", c.eval.per_regime},
               {"max_relations", c.eval.max_relations},
               {"max_new", c.eval.max_new}};
  j["model"] = c.model;
  j["train"] = c.train;
  j["curriculum"] = c.curriculum;
  j["grid"] = {{"layers", c.grid.layers},
               {"alphas_copy_to_recall", c.grid.alphas_copy_to_recall},
               {"alphas_recall_to_copy", c.grid.alphas_recall_to_copy},
               {"locations", enum_names(c.grid.locations)},
               {"topologies", enum_names(c.grid.topologies)},
               {"regimes", enum_names(c.grid.regimes)}};
  j["thresholds"] = {{"success_margin", c.thresholds.success_margin}, {"ppl_ratio", c.thresholds.ppl_ratio}};
  j["probe_scenarios"] = c.probe_scenarios;
  return j;
}

/// Fields absent from `j` keep their current values.
inline void merge_json(const json& j, RunConfig& c) {
  auto get = [&](const json& o, const char* k, auto& dst) {
    if (o.contains(k)) dst = o.at(k).get<std::decay_t<decltype(dst)>>();
  };
  get(j, "seed", c.seed);
  if (j.contains("out")) c.out = j.at("out").get<std::string>();
  if (j.contains("kb")) {
    get(j["kb"], "num_relations", c.kb.num_relations);
    get(j["kb"], "entities_per_relation", c.kb.entities_per_relation);
  }
  if (j.contains("eval")) {
    get(j["eval"], "scenario_pool", c.eval.scenario_pool);
    get(j["eval"], "per_regime", c.eval.per_regime);
    get(j["eval"], "max_relations", c.eval.max_relations);
    get(j["eval"], "max_new", c.eval.max_new);
  }
  if (j.contains("model")) {
    json m = c.model;
    m.update(j["model"]);
    c.model = m.get<model::ModelConfig>();
  }
  if (j.contains("train")) {
    json t = c.train;
    t.update(j["train"]);
    c.train = t.get<model::TrainConfig>();
  }
  if (j.contains("curriculum")) {
    json t = c.curriculum;
    t.update(j["curriculum"]);
    c.curriculum = t.get<model::Curriculum>();
  }
  if (j.contains("grid")) {
    const json& g = j["grid"];
    get(g, "layers", c.grid.layers);
    get(g, "alphas_copy_to_recall", c.grid.alphas_copy_to_recall);
    get(g, "alphas_recall_to_copy", c.grid.alphas_recall_to_copy);
    if (g.contains("locations")) c.grid.locations = parse_enums<Location>(g["locations"]);
    if (g.contains("topologies")) c.grid.topologies = parse_enums<Topology>(g["topologies"]);
    if (g.contains("regimes")) c.grid.regimes = parse_enums<Regime>(g["regimes"]);
  }
  if (j.contains("thresholds")) {
    get(j["thresholds"], "success_margin", c.thresholds.success_margin);
    get(j["thresholds"], "ppl_ratio", c.thresholds.ppl_ratio);
  }
  get(j, "probe_scenarios", c.probe_scenarios);
}

// Artifact names inside the workspace.
inline constexpr const char* kKb = "facts.jsonl";
inline constexpr const char* kVocab = "vocab.json";
inline constexpr const char* kArbitration = "arbitration.jsonl";
inline constexpr const char* kScenarios = "scenarios.jsonl";
inline constexpr const char* kCheckpoint = "checkpoint.bin";
inline constexpr const char* kTrainLog = "train_log.json";
inline constexpr const char* kActivations = "activations.bin";
inline constexpr const char* kVectors = "vectors.json";
inline constexpr const char* kGrid = "grid.csv";
inline constexpr const char* kSweepRows = "sweep_rows.csv";
inline constexpr const char* kProbes = "probes.jsonl";
inline constexpr const char* kResults = "results.csv";
inline constexpr const char* kReport = "report.json";

/// Which stage produces each artifact, for "rerun X" messages.
inline std::string producer_of(const std::string& artifact) {
  static const std::map<std::string, std::string> m{
      {kKb, "gen"},           {kVocab, "gen"},          {kArbitration, "gen"}, {kScenarios, "gen"},
      {kCheckpoint, "train"}, {kTrainLog, "train"},     {kActivations, "capture"},
      {kVectors, "extract"},  {kGrid, "sweep"},         {kSweepRows, "sweep"}, {kProbes, "probe"},
      {kResults, "report"},   {kReport, "report"}};
  auto it = m.find(artifact);
  return it == m.end() ? "?" : it->second;
}

/// Exclusive advisory lock on the workspace, released on destruction (and by
/// the kernel if the process dies).
class WorkspaceLock {
 public:
  explicit WorkspaceLock(const fs::path& dir) {
    fs::create_directories(dir);
    const auto p = dir / ".lock";
    fd_ = ::open(p.c_str(), O_CREAT | O_RDWR, 0644);
    if (fd_ < 0) throw ContractError("cannot open lock file " + p.string());
    if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
      ::close(fd_);
      fd_ = -1;
      throw ContractError("workspace " + dir.string() + " is in use by another arbsteer process");
    }
  }
  WorkspaceLock(const WorkspaceLock&) = delete;
  WorkspaceLock& operator=(const WorkspaceLock&) = delete;
  ~WorkspaceLock() {
    if (fd_ >= 0) {
      ::flock(fd_, LOCK_UN);
      ::close(fd_);
    }
  }

 private:
  int fd_ = -1;
};

/// Provenance records live next to the artifacts as <stage>.prov.json and list
/// the hash of every consumed and produced file plus the effective config.
class Workspace {
 public:
  explicit Workspace(RunConfig cfg) : cfg_(std::move(cfg)) {}

  const RunConfig& config() const { return cfg_; }
  fs::path path(const std::string& name) const { return cfg_.out / name; }
  fs::path prov_path(const std::string& stage) const { return cfg_.out / (stage + ".prov.json"); }

  /// Hash of an upstream artifact after checking it exists and matches what
  /// its producing stage recorded.
  std::string require(const std::string& artifact) const {
    const std::string stage = producer_of(artifact);
    const fs::path p = path(artifact);
    if (!fs::exists(p)) {
      throw ContractError("missing " + artifact + "; run `arbsteer " + stage + "` first");
    }
    const std::string h = io::file_sha256(p);
    const fs::path pp = prov_path(stage);
    if (!fs::exists(pp)) {
      throw ContractError("no provenance record for " + artifact + "; rerun `arbsteer " + stage + "`");
    }
    const json prov = json::parse(io::read_file(pp));
    if (!prov.contains("outputs") || !prov["outputs"].contains(artifact) ||
        prov["outputs"][artifact].get<std::string>() != h) {
      throw ContractError("stale " + artifact + " (hash differs from its provenance record); rerun `arbsteer " +
                          stage + "`");
    }
    return h;
  }

  void record(const std::string& stage, const std::map<std::string, std::string>& inputs,
              const std::vector<std::string>& outputs, const json& extra = json::object()) const {
    json j;
    j["stage"] = stage;
    j["config"] = to_json(cfg_);
    j["inputs"] = inputs;
    json outs = json::object();
    for (const auto& o : outputs) outs[o] = io::file_sha256(path(o));
    j["outputs"] = outs;
    if (!extra.empty()) j["extra"] = extra;
    io::write_file(prov_path(stage), j.dump(2) + "\n");
  }

  /// Every recorded stage must have consumed the current bytes of its inputs.
  void verify_chain(const std::vector<std::string>& stages) const {
    for (const auto& stage : stages) {
      const fs::path pp = prov_path(stage);
      if (!fs::exists(pp)) throw ContractError("no provenance for stage " + stage + "; run `arbsteer " + stage + "`");
      const json prov = json::parse(io::read_file(pp));
      for (const auto& [name, h] : prov.at("inputs").items()) {
        const fs::path p = path(name);
        if (!fs::exists(p) || io::file_sha256(p) != h.get<std::string>()) {
          throw ContractError("provenance chain broken: " + stage + " consumed a different " + name +
                              "; rerun `arbsteer " + stage + "`");
        }
      }
      for (const auto& [name, h] : prov.at("outputs").items()) {
        const fs::path p = path(name);
        if (!fs::exists(p) || io::file_sha256(p) != h.get<std::string>()) {
          throw ContractError("provenance chain broken: " + name + " changed since " + stage +
                              " wrote it; rerun `arbsteer " + stage + "`");
        }
      }
    }
  }

 private:
  RunConfig cfg_;
};

using Log = std::function<void(const std::string&)>;

inline std::vector<synthkb::FactRecord> load_kb(const Workspace& ws) {
  return io::from_jsonl<synthkb::FactRecord>(io::read_file(ws.path(kKb)));
}

inline model::Vocab load_vocab(const Workspace& ws) {
  return model::Vocab::from_json(json::parse(io::read_file(ws.path(kVocab))));
}

inline void cmd_gen(const Workspace& ws, const Log& log = {}) {
  const RunConfig& c = ws.config();
  c.validate();
  const auto kb = synthkb::generate_kb(c.seed, c.kb.num_relations, c.kb.entities_per_relation);
  const auto vocab = model::Vocab::build(kb);
  const auto arb = synthkb::make_arbitration_pairs(kb, c.seed);
  const auto pool = synthkb::make_eval_scenarios(kb, c.seed, c.eval.scenario_pool,
                                                 {.max_relations = c.eval.max_relations});
  std::vector<synthkb::EvalScenario> scenarios;
  for (Regime r : {Regime::CopyToRecall, Regime::RecallToCopy}) {
    std::vector<synthkb::EvalScenario> part;
    for (const auto& s : pool) {
      if (s.regime == r) part.push_back(s);
    }
    for (auto& s : synthkb::stratified_sample(part, c.eval.per_regime, c.seed)) scenarios.push_back(std::move(s));
  }
  io::write_file(ws.path(kKb), io::to_jsonl(kb));
  io::write_file(ws.path(kVocab), vocab.to_json().dump() + "\n");
  io::write_file(ws.path(kArbitration), io::to_jsonl(arb.examples));
  io::write_file(ws.path(kScenarios), io::to_jsonl(scenarios));
  ws.record("gen", {}, {kKb, kVocab, kArbitration, kScenarios},
            {{"facts", kb.size()},
             {"vocab_size", vocab.size()},
             {"arbitration_examples", arb.examples.size()},
             {"arbitration_skipped", arb.skipped},
             {"scenarios", scenarios.size()}});
  if (log) {
    log("gen: " + std::to_string(kb.size()) + " facts, vocab " + std::to_string(vocab.size()) + ", " +
        std::to_string(arb.examples.size()) + " arbitration examples, " + std::to_string(scenarios.size()) +
        " scenarios");
  }
}

/// Returns whether the behavior gate was reached. The checkpoint is written
/// either way so the failure can be inspected.
inline bool cmd_train(const Workspace& ws, const Log& log = {}) {
  const RunConfig& c = ws.config();
  c.validate();
  std::map<std::string, std::string> in{{kKb, ws.require(kKb)}, {kVocab, ws.require(kVocab)}};
  const auto kb = load_kb(ws);
  const auto vocab = load_vocab(ws);
  model::ModelConfig mc = c.model;
  mc.vocab_size = vocab.size();
  mc.seed = c.seed;
  model::TrainConfig tc = c.train;
  tc.seed = c.seed;
  tc.require_gate = false;
  auto res = model::train<Real>(kb, vocab, mc, c.curriculum, tc, [&](const model::EpochLog& e) {
    if (!log) return;
    char buf[160];
    std::snprintf(buf, sizeof buf, "train: epoch %zu loss %.4f recall %.3f copy %.3f%s (%.1fs)", e.epoch,
                  e.mean_loss, e.recall_em, e.copy_em, e.full_gate ? " [full gate]" : "", e.seconds);
    log(buf);
  });
  io::write_file(ws.path(kCheckpoint), model::serialize_checkpoint(res.model));
  json tl;
  tl["gate_reached"] = res.gate_reached;
  tl["gate"] = {{"recall_em", res.gate.recall_em}, {"copy_em", res.gate.copy_em}, {"n", res.gate.n}};
  tl["epochs"] = json::array();
  for (const auto& e : res.log) {
    json je = e;
    je.erase("seconds");  // wall time would break byte-identical reruns
    tl["epochs"].push_back(je);
  }
  tl["loss_curve"] = res.loss_curve;
  io::write_file(ws.path(kTrainLog), tl.dump() + "\n");
  ws.record("train", in, {kCheckpoint, kTrainLog}, {{"gate_reached", res.gate_reached}});
  if (log) {
    log(std::string("train: gate ") + (res.gate_reached ? "reached" : "NOT reached") + " (recall " +
        std::to_string(res.gate.recall_em) + ", copy " + std::to_string(res.gate.copy_em) + ")");
  }
  return res.gate_reached;
}

inline model::Transformer<Real> load_model(const Workspace& ws) {
  return model::deserialize_checkpoint<Real>(io::read_file(ws.path(kCheckpoint)));
}

inline void cmd_capture(const Workspace& ws, const Log& log = {}) {
  const RunConfig& c = ws.config();
  c.validate();
  std::map<std::string, std::string> in{{kVocab, ws.require(kVocab)},
                                        {kArbitration, ws.require(kArbitration)},
                                        {kCheckpoint, ws.require(kCheckpoint)}};
  const auto vocab = load_vocab(ws);
  const auto m = load_model(ws);
  const auto examples = io::from_jsonl<synthkb::ArbitrationExample>(io::read_file(ws.path(kArbitration)));
  std::vector<std::size_t> layers = c.layers();
  for (std::size_t l : layers) {
    if (l >= m.config().n_layers) throw ContractError("capture: layer outside the trained model");
  }
  const auto res = capture::capture_dataset(examples, m, vocab, layers, c.grid.locations,
                                            {.subject = model::SubjectSpan::ContextThenQuery});
  io::write_file(ws.path(kActivations), capture::serialize_activations(res.records, m.config().d_model));
  ws.record("capture", in, {kActivations}, {{"records", res.records.size()}, {"unavailable", res.unavailable}});
  if (log) {
    log("capture: " + std::to_string(res.records.size()) + " records, " + std::to_string(res.unavailable) +
        " unavailable spans");
  }
}

inline void cmd_extract(const Workspace& ws, const Log& log = {}) {
  const RunConfig& c = ws.config();
  c.validate();
  std::map<std::string, std::string> in{{kActivations, ws.require(kActivations)}};
  const auto file = capture::deserialize_activations(io::read_file(ws.path(kActivations)));
  json arr = json::array();
  for (std::size_t l : c.layers()) {
    for (Location loc : c.grid.locations) {
      arr.push_back(arbitration::extract_vector(file.records, l, loc, in[kActivations]));
    }
  }
  io::write_file(ws.path(kVectors), arr.dump() + "\n");
  ws.record("extract", in, {kVectors});
  if (log) log("extract: " + std::to_string(arr.size()) + " vectors");
}

inline eval::VectorTable load_vectors(const Workspace& ws) {
  eval::VectorTable t;
  for (const auto& j : json::parse(io::read_file(ws.path(kVectors)))) {
    auto v = j.get<arbitration::ArbitrationVector>();
    t.emplace(std::pair{v.layer, v.location}, std::move(v));
  }
  return t;
}

inline std::vector<synthkb::EvalScenario> load_scenarios(const Workspace& ws) {
  return io::from_jsonl<synthkb::EvalScenario>(io::read_file(ws.path(kScenarios)));
}

inline eval::SweepSpec sweep_spec(const RunConfig& c) {
  eval::SweepSpec s;
  s.layers = c.layers();
  s.alphas_copy_to_recall = c.grid.alphas_copy_to_recall;
  s.alphas_recall_to_copy = c.grid.alphas_recall_to_copy;
  s.locations = c.grid.locations;
  s.topologies = c.grid.topologies;
  s.regimes = c.grid.regimes;
  s.eval.max_new = c.eval.max_new;
  return s;
}

/// Without `resume` any previous grid is discarded. With it, completed cells
/// are kept provided the inputs are the ones the interrupted sweep used.
inline std::vector<eval::GridCell> cmd_sweep(const Workspace& ws, bool resume, const Log& log = {}) {
  const RunConfig& c = ws.config();
  c.validate();
  std::map<std::string, std::string> in{{kVocab, ws.require(kVocab)},
                                        {kScenarios, ws.require(kScenarios)},
                                        {kCheckpoint, ws.require(kCheckpoint)},
                                        {kVectors, ws.require(kVectors)}};
  const fs::path pending = ws.path("sweep.pending.json");
  json pend = {{"inputs", in}, {"config", to_json(c)}};
  if (resume) {
    const fs::path prior = fs::exists(pending) ? pending : ws.prov_path("sweep");
    if (fs::exists(prior) && json::parse(io::read_file(prior)).at("inputs") != pend["inputs"]) {
      throw ContractError("cannot resume: sweep inputs changed since the earlier run; rerun without --resume");
    }
  } else {
    fs::remove(ws.path(kGrid));
    fs::remove(ws.path(kSweepRows));
  }
  io::write_file(pending, pend.dump(2) + "\n");

  const auto vocab = load_vocab(ws);
  const auto m = load_model(ws);
  const auto scenarios = load_scenarios(ws);
  const auto vectors = load_vectors(ws);

  // Drop per-scenario rows of a cell that was cut off before its grid row
  // landed, so a resumed sweep never duplicates them.
  if (fs::exists(ws.path(kSweepRows))) {
    std::set<std::tuple<int, int, int, int, double>> done;
    if (fs::exists(ws.path(kGrid))) {
      for (const auto& g : eval::parse_grid(io::read_file(ws.path(kGrid)))) done.insert(g.key());
    }
    std::istringstream rows(io::read_file(ws.path(kSweepRows)));
    std::string line, kept;
    bool header = true;
    while (std::getline(rows, line)) {
      if (header) {
        kept += line + "\n";
        header = false;
        continue;
      }
      const auto f = eval::split_csv_line(line);
      eval::GridCell k;
      k.regime = parse_enum<Regime>(f.at(1));
      k.topology = parse_enum<Topology>(f.at(2));
      if (f.at(3) != "baseline") k.location = parse_enum<Location>(f.at(3));
      k.layer = std::stoi(f.at(4));
      k.alpha = std::stod(f.at(5));
      if (done.count(k.key())) kept += line + "\n";
    }
    io::write_file(ws.path(kSweepRows), kept);
  }

  const auto cells = eval::sweep(scenarios, m, vocab, vectors, sweep_spec(c), ws.path(kGrid),
                                 ws.path(kSweepRows), [&](const eval::SweepProgress& p) {
                                   if (log && (p.done % 10 == 0 || p.done == p.total)) {
                                     log("sweep: " + std::to_string(p.done) + "/" + std::to_string(p.total) +
                                         " cells");
                                   }
                                 });
  // Canonical grid: cell order independent of how many resumes happened.
  std::string grid = eval::grid_csv_header();
  for (const auto& cell : cells) grid += eval::to_csv_row(cell);
  io::write_file(ws.path(kGrid), grid);
  ws.record("sweep", in, {kGrid, kSweepRows});
  fs::remove(pending);
  return cells;
}

/// Traces the first scenarios of each regime unsteered and under the best
/// cell found for every location.
inline void cmd_probe(const Workspace& ws, const Log& log = {}) {
  const RunConfig& c = ws.config();
  c.validate();
  std::map<std::string, std::string> in{{kVocab, ws.require(kVocab)},
                                        {kScenarios, ws.require(kScenarios)},
                                        {kCheckpoint, ws.require(kCheckpoint)},
                                        {kVectors, ws.require(kVectors)},
                                        {kGrid, ws.require(kGrid)}};
  const auto vocab = load_vocab(ws);
  const auto m = load_model(ws);
  const auto scenarios = load_scenarios(ws);
  const auto vectors = load_vectors(ws);
  const auto rep = eval::asymmetry_report(eval::parse_grid(io::read_file(ws.path(kGrid))), c.thresholds);

  std::string out;
  std::size_t n = 0;
  for (Regime regime : c.grid.regimes) {
    std::vector<const synthkb::EvalScenario*> picked;
    for (const auto& s : scenarios) {
      if (s.regime == regime && picked.size() < c.probe_scenarios) picked.push_back(&s);
    }
    std::vector<std::optional<eval::GridCell>> configs{std::nullopt};
    for (const auto& site : rep.sites) {
      if (site.regime == regime && site.best) configs.push_back(site.best->cell);
    }
    for (const auto* s : picked) {
      for (const auto& cell : configs) {
        const Topology topo = cell ? cell->topology : s->topology;
        const auto p = model::assemble_prompt(vocab, *s, topo);
        std::optional<arbitration::SteeringConfig> sc;
        const arbitration::ArbitrationVector* vec = nullptr;
        if (cell) {
          sc = arbitration::SteeringConfig{static_cast<std::size_t>(cell->layer), *cell->location, cell->alpha,
                                           regime};
          vec = &vectors.at({sc->layer, sc->location});
          if (!model::resolve_span(p, sc->location, model::SubjectSpan::ContextThenQuery)) continue;
        }
        const auto t = probes::trace_prompt(m, vocab, p, s->id, s->record.base.object, s->record.cf_object, sc, vec);
        json j = probes::trace_to_json(t, vocab);
        j["regime"] = to_string(regime);
        j["topology"] = to_string(topo);
        out += j.dump() + "\n";
        ++n;
      }
    }
  }
  io::write_file(ws.path(kProbes), out);
  ws.record("probe", in, {kProbes});
  if (log) log("probe: " + std::to_string(n) + " traces");
}

/// Canonical per-scenario rows: sorted by cell then scenario id.
inline std::string canonical_results(std::string_view rows_csv) {
  std::istringstream in{std::string(rows_csv)};
  std::string line;
  std::getline(in, line);
  if (line + "\n" != eval::results_csv_header()) throw ContractError("sweep rows: unexpected header");
  struct Row {
    std::tuple<int, int, int, int, double, std::int64_t> key;
    std::string text;
  };
  std::vector<Row> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = eval::split_csv_line(line);
    const int loc = f.at(3) == "baseline" ? -1 : static_cast<int>(parse_enum<Location>(f.at(3)));
    rows.push_back({{static_cast<int>(parse_enum<Regime>(f.at(1))), static_cast<int>(parse_enum<Topology>(f.at(2))),
                     loc, std::stoi(f.at(4)), std::stod(f.at(5)), std::stoll(f.at(0))},
                    line});
  }
  std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.key < b.key; });
  std::string out = eval::results_csv_header();
  for (const auto& r : rows) out += r.text + "\n";
  return out;
}

inline eval::AsymmetryReport cmd_report(const Workspace& ws, const Log& log = {}) {
  const RunConfig& c = ws.config();
  c.validate();
  ws.verify_chain({"gen", "train", "capture", "extract", "sweep"});
  std::map<std::string, std::string> in{{kGrid, ws.require(kGrid)}, {kSweepRows, ws.require(kSweepRows)}};
  const auto grid = eval::parse_grid(io::read_file(ws.path(kGrid)));
  const auto rep = eval::asymmetry_report(grid, c.thresholds);
  io::write_file(ws.path(kResults), canonical_results(io::read_file(ws.path(kSweepRows))));
  json j = eval::to_json(rep);
  j["config"] = to_json(c);
  json chain;
  for (const char* stage : {"gen", "train", "capture", "extract", "sweep"}) {
    chain[stage] = json::parse(io::read_file(ws.prov_path(stage))).at("outputs");
  }
  j["provenance"] = chain;
  io::write_file(ws.path(kReport), j.dump(2) + "\n");
  std::vector<std::string> outs{kResults, kReport};
  for (const auto& f : eval::figure_csvs(grid)) {
    io::write_file(ws.path("figures/" + f.name), f.text);
    outs.push_back("figures/" + f.name);
  }
  ws.record("report", in, outs);
  if (log) log("report: " + rep.summary);
  return rep;
}

}  // namespace arbsteer::pipeline
