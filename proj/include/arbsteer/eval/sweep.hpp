#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "arbsteer/eval/evaluate.hpp"
#include "arbsteer/io.hpp"

namespace arbsteer::eval {

/// One aggregated sweep cell. Baseline cells carry no location, layer -1 and
/// alpha 0.
struct GridCell {
  Regime regime = Regime::CopyToRecall;
  Topology topology = Topology::QueryFirst;
  std::optional<Location> location;
  int layer = -1;
  double alpha = 0.0;
  double em_true = 0.0, em_cf = 0.0, f1_true = 0.0, f1_cf = 0.0, ppl_mean = 0.0;
  std::size_t n = 0;

  bool baseline() const { return !location.has_value(); }

  auto key() const {
    return std::make_tuple(static_cast<int>(regime), static_cast<int>(topology),
                           location ? static_cast<int>(*location) : -1, layer, alpha);
  }
};

inline GridCell aggregate(Regime regime, Topology topo, std::optional<Location> loc, int layer,
                          double alpha, const std::vector<EvalResult>& rs) {
  GridCell c{regime, topo, loc, layer, alpha};
  c.n = rs.size();
  if (rs.empty()) return c;
  for (const auto& r : rs) {
    c.em_true += r.em_true;
    c.em_cf += r.em_cf;
    c.f1_true += r.f1_true;
    c.f1_cf += r.f1_cf;
    c.ppl_mean += r.ppl;
  }
  const double n = static_cast<double>(rs.size());
  c.em_true /= n;
  c.em_cf /= n;
  c.f1_true /= n;
  c.f1_cf /= n;
  c.ppl_mean /= n;
  return c;
}

inline std::string grid_csv_header() {
  return "regime,topology,location,layer,alpha,em_true,em_cf,f1_true,f1_cf,ppl_mean,n\n";
}

inline std::string to_csv_row(const GridCell& c) {
  return std::string(to_string(c.regime)) + ',' + std::string(to_string(c.topology)) + ',' +
         (c.location ? std::string(to_string(*c.location)) : std::string("baseline")) + ',' +
         std::to_string(c.layer) + ',' + fmt_num(c.alpha) + ',' + fmt_num(c.em_true) + ',' +
         fmt_num(c.em_cf) + ',' + fmt_num(c.f1_true) + ',' + fmt_num(c.f1_cf) + ',' +
         fmt_num(c.ppl_mean) + ',' + std::to_string(c.n) + '\n';
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

inline GridCell parse_grid_row(const std::string& line) {
  const auto f = split_csv_line(line);
  if (f.size() != 11) throw ContractError("grid row has " + std::to_string(f.size()) + " fields: " + line);
  GridCell c;
  c.regime = parse_enum<Regime>(f[0]);
  c.topology = parse_enum<Topology>(f[1]);
  if (f[2] != "baseline") c.location = parse_enum<Location>(f[2]);
  c.layer = std::stoi(f[3]);
  c.alpha = std::stod(f[4]);
  c.em_true = std::stod(f[5]);
  c.em_cf = std::stod(f[6]);
  c.f1_true = std::stod(f[7]);
  c.f1_cf = std::stod(f[8]);
  c.ppl_mean = std::stod(f[9]);
  c.n = std::stoul(f[10]);
  return c;
}

inline std::vector<GridCell> parse_grid(std::string_view text) {
  std::vector<GridCell> cells;
  std::istringstream in{std::string(text)};
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (header) {
      header = false;
      if (line + "\n" != grid_csv_header()) throw ContractError("grid file: unexpected header");
      continue;
    }
    cells.push_back(parse_grid_row(line));
  }
  return cells;
}

struct SweepSpec {
  std::vector<std::size_t> layers;
  std::vector<double> alphas_copy_to_recall{1, 3, 30, 100};
  std::vector<double> alphas_recall_to_copy{-1, -3, -30, -100};
  std::vector<Location> locations{Location::ObjCf, Location::Subj, Location::Last};
  std::vector<Topology> topologies{Topology::QueryFirst, Topology::ContextFirst};
  std::vector<Regime> regimes{Regime::CopyToRecall, Regime::RecallToCopy};
  bool include_zero = false;  // add an alpha = 0 column per site
  EvalOptions eval;
};

using VectorTable = std::map<std::pair<std::size_t, Location>, arbitration::ArbitrationVector>;

struct SweepProgress {
  std::size_t done = 0, total = 0, skipped_scenarios = 0;
};

/// Layer x alpha x location grid over both regimes and the requested
/// topologies, plus one baseline cell per (regime, topology). When
/// `grid_path` is given, cells already present there are kept and each newly
/// finished cell is appended immediately, so an interrupted sweep resumes
/// where it stopped. Per-scenario rows are appended to `results_path`.
template <class T>
std::vector<GridCell> sweep(const std::vector<synthkb::EvalScenario>& scenarios,
                            const model::Transformer<T>& m, const model::Vocab& vocab,
                            const VectorTable& vectors, const SweepSpec& spec,
                            const std::optional<std::filesystem::path>& grid_path = std::nullopt,
                            const std::optional<std::filesystem::path>& results_path = std::nullopt,
                            const std::function<void(const SweepProgress&)>& progress = {}) {
  for (std::size_t l : spec.layers) {
    for (Location loc : spec.locations) {
      if (!vectors.count({l, loc})) {
        throw ContractError("sweep: no arbitration vector for layer " + std::to_string(l) +
                            ", location " + std::string(to_string(loc)));
      }
    }
  }

  std::map<std::tuple<int, int, int, int, double>, GridCell> done;
  if (grid_path && std::filesystem::exists(*grid_path)) {
    for (auto& c : parse_grid(io::read_file(*grid_path))) done.emplace(c.key(), c);
  }
  std::ofstream grid_out, results_out;
  if (grid_path) {
    const bool fresh = !std::filesystem::exists(*grid_path);
    if (grid_path->has_parent_path()) std::filesystem::create_directories(grid_path->parent_path());
    grid_out.open(*grid_path, std::ios::app | std::ios::binary);
    if (fresh) grid_out << grid_csv_header();
  }
  if (results_path) {
    const bool fresh = !std::filesystem::exists(*results_path);
    results_out.open(*results_path, std::ios::app | std::ios::binary);
    if (fresh) results_out << results_csv_header();
  }

  struct Job {
    Regime regime;
    Topology topo;
    std::optional<Location> loc;
    int layer;
    double alpha;
  };
  std::vector<Job> jobs;
  for (Regime regime : spec.regimes) {
    const auto& alphas =
        regime == Regime::CopyToRecall ? spec.alphas_copy_to_recall : spec.alphas_recall_to_copy;
    for (Topology topo : spec.topologies) {
      jobs.push_back({regime, topo, std::nullopt, -1, 0.0});
      for (Location loc : spec.locations) {
        for (std::size_t l : spec.layers) {
          if (spec.include_zero) jobs.push_back({regime, topo, loc, static_cast<int>(l), 0.0});
          for (double a : alphas) jobs.push_back({regime, topo, loc, static_cast<int>(l), a});
        }
      }
    }
  }

  std::map<Regime, std::vector<synthkb::EvalScenario>> by_regime;
  for (const auto& s : scenarios) by_regime[s.regime].push_back(s);

  SweepProgress prog{0, jobs.size(), 0};
  std::vector<GridCell> cells;
  for (const Job& job : jobs) {
    GridCell probe{job.regime, job.topo, job.loc, job.layer, job.alpha};
    if (auto it = done.find(probe.key()); it != done.end()) {
      cells.push_back(it->second);
      ++prog.done;
      continue;
    }
    EvalOptions eo = spec.eval;
    eo.topology = job.topo;
    std::optional<Steering> st;
    if (job.loc) {
      st = Steering{{static_cast<std::size_t>(job.layer), *job.loc, job.alpha, job.regime},
                    &vectors.at({static_cast<std::size_t>(job.layer), *job.loc})};
    }
    const auto out = evaluate(by_regime[job.regime], m, vocab, st, eo);
    prog.skipped_scenarios += out.skipped.size();
    GridCell c = aggregate(job.regime, job.topo, job.loc, job.layer, job.alpha, out.results);
    if (results_out.is_open()) {
      for (const auto& r : out.results) results_out << to_csv_row(r);
      results_out.flush();
    }
    if (grid_out.is_open()) {
      grid_out << to_csv_row(c);
      grid_out.flush();
    }
    done.emplace(c.key(), c);
    cells.push_back(c);
    ++prog.done;
    if (progress) progress(prog);
  }
  return cells;
}

}  // namespace arbsteer::eval
