// Pipeline driver: gen -> train -> capture -> extract -> sweep -> probe -> report.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "arbsteer/pipeline.hpp"

namespace {

using namespace arbsteer;
namespace pl = arbsteer::pipeline;

template <class E>
std::vector<E> parse_list(const std::vector<std::string>& raw) {
  std::vector<E> out;
  for (const auto& s : raw) out.push_back(parse_enum<E>(s));
  return out;
}

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool resume = false;
  std::vector<std::size_t> layers;
  std::vector<double> alphas;
  std::vector<std::string> locations, topologies, regimes;
};

pl::RunConfig effective_config(const Overrides& o) {
  pl::RunConfig c;
  if (!o.config.empty()) pl::merge_json(nlohmann::json::parse(io::read_file(o.config)), c);
  if (o.seed) c.seed = *o.seed;
  if (!o.out.empty()) c.out = o.out;
  if (!o.layers.empty()) c.grid.layers = o.layers;
  if (!o.alphas.empty()) {
    c.grid.alphas_copy_to_recall.clear();
    c.grid.alphas_recall_to_copy.clear();
    for (double a : o.alphas) {
      (a >= 0 ? c.grid.alphas_copy_to_recall : c.grid.alphas_recall_to_copy).push_back(a);
    }
  }
  if (!o.locations.empty()) c.grid.locations = parse_list<Location>(o.locations);
  if (!o.topologies.empty()) c.grid.topologies = parse_list<Topology>(o.topologies);
  if (!o.regimes.empty()) c.grid.regimes = parse_list<Regime>(o.regimes);
  c.validate();
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Arbitration-vector steering on a desk-scale transformer"};
  app.require_subcommand(1);
  Overrides o;
  app.add_option("--config", o.config, "JSON run configuration")->check(CLI::ExistingFile);
  app.add_option("--seed", o.seed, "Global seed");
  app.add_option("--out", o.out, "Workspace directory (default: run)");
  app.add_flag("--resume", o.resume, "Keep completed sweep cells");
  app.add_option("--layers", o.layers, "Layers to capture, extract and sweep")->delimiter(',');
  app.add_option("--alphas", o.alphas, "Steering strengths; the sign selects the regime")->delimiter(',');
  app.add_option("--locations", o.locations, "subj, obj_cf, last")->delimiter(',');
  app.add_option("--topology", o.topologies, "QueryFirst, ContextFirst")->delimiter(',');
  app.add_option("--regime", o.regimes, "CopyToRecall, RecallToCopy")->delimiter(',');
  app.fallthrough();

  const std::vector<std::string> stages{"gen", "train", "capture", "extract", "sweep", "probe", "report"};
  auto* sub_gen = app.add_subcommand("gen", "Generate the knowledge base, arbitration pairs and scenarios");
  auto* sub_train = app.add_subcommand("train", "Train the model until the behavior gate holds");
  auto* sub_capture = app.add_subcommand("capture", "Pool residual activations over the arbitration pairs");
  auto* sub_extract = app.add_subcommand("extract", "Compute arbitration vectors per layer and location");
  auto* sub_sweep = app.add_subcommand("sweep", "Evaluate the layer x alpha x location grid");
  auto* sub_probe = app.add_subcommand("probe", "Attention, MLP and logit-lens traces");
  auto* sub_report = app.add_subcommand("report", "Asymmetry report, results.csv and figure CSVs");
  auto* sub_all = app.add_subcommand("all", "Run every stage in order");

  CLI11_PARSE(app, argc, argv);

  auto log = [](const std::string& s) { std::cerr << s << std::endl; };
  try {
    const pl::RunConfig cfg = effective_config(o);
    pl::WorkspaceLock lock(cfg.out);
    pl::Workspace ws(cfg);
    bool gate = true;
    auto run = [&](const std::string& stage) {
      if (stage == "gen") pl::cmd_gen(ws, log);
      if (stage == "train") gate = pl::cmd_train(ws, log);
      if (stage == "capture") pl::cmd_capture(ws, log);
      if (stage == "extract") pl::cmd_extract(ws, log);
      if (stage == "sweep") pl::cmd_sweep(ws, o.resume, log);
      if (stage == "probe") pl::cmd_probe(ws, log);
      if (stage == "report") pl::cmd_report(ws, log);
    };
    if (sub_all->parsed()) {
      for (const auto& s : stages) run(s);
    } else {
      for (auto* sub : {sub_gen, sub_train, sub_capture, sub_extract, sub_sweep, sub_probe, sub_report}) {
        if (sub->parsed()) run(sub->get_name());
      }
    }
    if (!gate) {
      std::cerr << "behavior gate not reached; see " << ws.path(pl::kTrainLog) << "\n";
      return 1;
    }
  } catch (const ContractError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
