#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "arbsteer/eval/sweep.hpp"
#include "json.hpp"

namespace arbsteer::eval {

struct ReportThresholds {
  double success_margin = 0.30;  // absolute target-EM gain over the same-topology baseline
  double ppl_ratio = 10.0;       // at or above this ratio a cell counts as collapsed
};

inline double target_em(const GridCell& c) {
  return c.regime == Regime::CopyToRecall ? c.em_true : c.em_cf;
}

struct CellSummary {
  GridCell cell;
  double baseline_target = 0.0;
  double gain = 0.0;
  double ppl_ratio = 0.0;
  bool success = false;
  bool fluent = false;
};

struct SiteReport {
  Regime regime = Regime::CopyToRecall;
  Location location = Location::Last;
  std::optional<CellSummary> best;         // highest target-EM gain
  std::optional<CellSummary> best_fluent;  // highest gain among cells below the PPL threshold
};

struct CollapseReport {
  std::vector<int> band;  // layers of the chosen cells, widened by one on each side
  std::size_t extreme_cells = 0;
  std::size_t spiking_cells = 0;
  double spiking_fraction = 0.0;
  bool moderate_below = false;  // every chosen cell stays under the PPL threshold
  bool shape_holds = false;
};

struct AsymmetryReport {
  ReportThresholds thresholds;
  std::vector<GridCell> baselines;
  std::vector<SiteReport> sites;
  std::vector<std::string> warnings;
  bool complete = true;
  bool any_success = false;
  bool recall_to_copy_all_locations = false;
  bool copy_to_recall_object_only = false;
  std::size_t recall_to_copy_fluent_locations = 0;
  bool copy_to_recall_at_object = false;
  std::map<Location, bool> copy_to_recall_cleared;
  std::vector<std::string> patterns;
  std::vector<CellSummary> chosen;  // cells backing the steering-effect claims
  CollapseReport collapse;
  std::string summary;
};

namespace detail {

inline constexpr Location kReportLocations[] = {Location::ObjCf, Location::Subj, Location::Last};
inline constexpr Regime kReportRegimes[] = {Regime::CopyToRecall, Regime::RecallToCopy};

inline const GridCell* find_baseline(const std::vector<GridCell>& grid, Regime r, Topology t) {
  for (const auto& c : grid) {
    if (c.baseline() && c.regime == r && c.topology == t) return &c;
  }
  return nullptr;
}

}  // namespace detail

inline AsymmetryReport asymmetry_report(const std::vector<GridCell>& grid,
                                        const ReportThresholds& th = {}) {
  AsymmetryReport rep;
  rep.thresholds = th;
  for (const auto& c : grid) {
    if (c.baseline()) rep.baselines.push_back(c);
  }

  for (Regime regime : detail::kReportRegimes) {
    for (Location loc : detail::kReportLocations) {
      SiteReport site{regime, loc, std::nullopt, std::nullopt};
      bool covered = false;
      for (const auto& c : grid) {
        if (c.baseline() || c.regime != regime || c.location != loc) continue;
        covered = true;
        const GridCell* base = detail::find_baseline(grid, regime, c.topology);
        if (!base) {
          rep.warnings.push_back("no baseline for " + std::string(to_string(regime)) + "/" +
                                 std::string(to_string(c.topology)));
          rep.complete = false;
          continue;
        }
        CellSummary s{c, target_em(*base), target_em(c) - target_em(*base), 0.0, false, false};
        s.ppl_ratio = base->ppl_mean > 0 ? c.ppl_mean / base->ppl_mean : INFINITY;
        s.success = s.gain >= th.success_margin - 1e-12;
        s.fluent = s.ppl_ratio < th.ppl_ratio;
        if (!site.best || s.gain > site.best->gain) site.best = s;
        if (s.fluent && (!site.best_fluent || s.gain > site.best_fluent->gain)) site.best_fluent = s;
      }
      if (!covered) {
        rep.complete = false;
        rep.warnings.push_back("grid has no cells for " + std::string(to_string(regime)) + " at " +
                               std::string(to_string(loc)));
      }
      rep.sites.push_back(site);
    }
  }
  std::sort(rep.warnings.begin(), rep.warnings.end());
  rep.warnings.erase(std::unique(rep.warnings.begin(), rep.warnings.end()), rep.warnings.end());

  auto site_of = [&](Regime r, Location l) -> const SiteReport& {
    for (const auto& s : rep.sites) {
      if (s.regime == r && s.location == l) return s;
    }
    throw ContractError("asymmetry_report: missing site");
  };
  auto cleared = [&](Regime r, Location l) {
    const auto& s = site_of(r, l);
    return s.best && s.best->success;
  };

  std::size_t r2c_cleared = 0;
  for (Location l : detail::kReportLocations) {
    if (cleared(Regime::RecallToCopy, l)) ++r2c_cleared;
    rep.copy_to_recall_cleared[l] = cleared(Regime::CopyToRecall, l);
    const auto& f = site_of(Regime::RecallToCopy, l).best_fluent;
    if (f && f->success) ++rep.recall_to_copy_fluent_locations;
  }
  rep.copy_to_recall_at_object = rep.copy_to_recall_cleared[Location::ObjCf];
  for (const auto& [l, ok] : rep.copy_to_recall_cleared) rep.any_success |= ok;
  rep.any_success |= r2c_cleared > 0;

  if (rep.any_success) {
    rep.recall_to_copy_all_locations = r2c_cleared == 3;
    rep.copy_to_recall_object_only = rep.copy_to_recall_at_object &&
                                     !rep.copy_to_recall_cleared[Location::Subj] &&
                                     !rep.copy_to_recall_cleared[Location::Last];
    if (rep.copy_to_recall_object_only) rep.patterns.push_back("object-only recall restoration");
    if (rep.recall_to_copy_all_locations) rep.patterns.push_back("copy induced at every location");
  }

  // Chosen cells: the fluent success per site when one exists, otherwise the
  // raw best success.
  for (const auto& s : rep.sites) {
    if (s.best_fluent && s.best_fluent->success) {
      rep.chosen.push_back(*s.best_fluent);
    } else if (s.best && s.best->success) {
      rep.chosen.push_back(*s.best);
    }
  }
  std::set<int> band;
  for (const auto& c : rep.chosen) {
    for (int d = -1; d <= 1; ++d) {
      if (c.cell.layer + d >= 0) band.insert(c.cell.layer + d);
    }
  }
  rep.collapse.band.assign(band.begin(), band.end());
  rep.collapse.moderate_below = !rep.chosen.empty();
  for (const auto& c : rep.chosen) {
    rep.collapse.moderate_below &= c.fluent && std::abs(c.cell.alpha) < 100.0;
  }
  for (const auto& c : grid) {
    if (c.baseline() || std::abs(c.alpha) != 100.0 || !band.count(c.layer)) continue;
    const GridCell* base = detail::find_baseline(grid, c.regime, c.topology);
    if (!base) continue;
    ++rep.collapse.extreme_cells;
    if (c.ppl_mean > th.ppl_ratio * base->ppl_mean) ++rep.collapse.spiking_cells;
  }
  if (rep.collapse.extreme_cells > 0) {
    rep.collapse.spiking_fraction =
        static_cast<double>(rep.collapse.spiking_cells) / static_cast<double>(rep.collapse.extreme_cells);
  }
  rep.collapse.shape_holds = rep.collapse.extreme_cells > 0 && rep.collapse.spiking_fraction >= 0.5 &&
                             rep.collapse.moderate_below;

  if (!rep.any_success) {
    rep.summary = "no successful steer";
  } else {
    std::string s = "recall->copy cleared at " + std::to_string(r2c_cleared) + "/3 locations; copy->recall cleared at";
    bool first = true;
    for (Location l : detail::kReportLocations) {
      if (!rep.copy_to_recall_cleared[l]) continue;
      s += (first ? " " : ", ") + std::string(to_string(l));
      first = false;
    }
    if (first) s += " no location";
    if (!rep.copy_to_recall_object_only && rep.copy_to_recall_at_object) {
      s += " (recall also restored away from the object, unlike the object-only expectation)";
    } else if (!rep.copy_to_recall_at_object) {
      s += " (recall not restored at the object)";
    }
    rep.summary = s;
  }
  if (!rep.complete) rep.summary += "; partial grid";
  return rep;
}

inline nlohmann::json cell_json(const GridCell& c) {
  nlohmann::json j = {{"regime", to_string(c.regime)},
                      {"topology", to_string(c.topology)},
                      {"location", c.location ? std::string(to_string(*c.location)) : "baseline"},
                      {"layer", c.layer},
                      {"alpha", c.alpha},
                      {"em_true", c.em_true},
                      {"em_cf", c.em_cf},
                      {"f1_true", c.f1_true},
                      {"f1_cf", c.f1_cf},
                      {"ppl_mean", c.ppl_mean},
                      {"n", c.n}};
  return j;
}

inline nlohmann::json summary_json(const CellSummary& s) {
  nlohmann::json j = cell_json(s.cell);
  j["baseline_target_em"] = s.baseline_target;
  j["gain"] = s.gain;
  j["ppl_ratio"] = std::isfinite(s.ppl_ratio) ? nlohmann::json(s.ppl_ratio) : nlohmann::json(nullptr);
  j["success"] = s.success;
  j["fluent"] = s.fluent;
  return j;
}

inline nlohmann::json to_json(const AsymmetryReport& r) {
  nlohmann::json j;
  j["thresholds"] = {{"success_margin", r.thresholds.success_margin},
                     {"ppl_ratio", r.thresholds.ppl_ratio}};
  j["complete"] = r.complete;
  j["warnings"] = r.warnings;
  j["baselines"] = nlohmann::json::array();
  for (const auto& b : r.baselines) j["baselines"].push_back(cell_json(b));
  j["sites"] = nlohmann::json::array();
  for (const auto& s : r.sites) {
    j["sites"].push_back({{"regime", to_string(s.regime)},
                          {"location", to_string(s.location)},
                          {"best", s.best ? summary_json(*s.best) : nlohmann::json(nullptr)},
                          {"best_fluent", s.best_fluent ? summary_json(*s.best_fluent) : nlohmann::json(nullptr)}});
  }
  nlohmann::json c2r;
  for (const auto& [l, ok] : r.copy_to_recall_cleared) c2r[std::string(to_string(l))] = ok;
  j["flags"] = {{"any_success", r.any_success},
                {"recall_to_copy_all_locations", r.recall_to_copy_all_locations},
                {"recall_to_copy_fluent_locations", r.recall_to_copy_fluent_locations},
                {"copy_to_recall_object_only", r.copy_to_recall_object_only},
                {"copy_to_recall_cleared", c2r},
                {"patterns", r.patterns}};
  j["chosen"] = nlohmann::json::array();
  for (const auto& c : r.chosen) j["chosen"].push_back(summary_json(c));
  j["collapse"] = {{"band", r.collapse.band},
                   {"extreme_cells", r.collapse.extreme_cells},
                   {"spiking_cells", r.collapse.spiking_cells},
                   {"spiking_fraction", r.collapse.spiking_fraction},
                   {"moderate_below", r.collapse.moderate_below},
                   {"shape_holds", r.collapse.shape_holds}};
  j["summary"] = r.summary;
  return j;
}

struct FigureCsv {
  std::string name;
  std::string text;
};

/// One wide CSV per (regime, topology, location): a row per (metric, layer),
/// the baseline value, then one column per alpha.
inline std::vector<FigureCsv> figure_csvs(const std::vector<GridCell>& grid) {
  std::vector<FigureCsv> out;
  static constexpr const char* kMetrics[] = {"em_true", "em_cf", "f1_true", "f1_cf", "ppl_mean"};
  auto metric = [](const GridCell& c, std::string_view m) {
    if (m == "em_true") return c.em_true;
    if (m == "em_cf") return c.em_cf;
    if (m == "f1_true") return c.f1_true;
    if (m == "f1_cf") return c.f1_cf;
    return c.ppl_mean;
  };
  for (Regime regime : detail::kReportRegimes) {
    for (Topology topo : {Topology::QueryFirst, Topology::ContextFirst}) {
      const GridCell* base = detail::find_baseline(grid, regime, topo);
      for (Location loc : detail::kReportLocations) {
        std::set<int> layers;
        std::set<double> alphas;
        std::map<std::pair<int, double>, const GridCell*> at;
        for (const auto& c : grid) {
          if (c.baseline() || c.regime != regime || c.topology != topo || c.location != loc) continue;
          layers.insert(c.layer);
          alphas.insert(c.alpha);
          at[{c.layer, c.alpha}] = &c;
        }
        if (layers.empty()) continue;
        std::vector<double> order(alphas.begin(), alphas.end());
        std::sort(order.begin(), order.end(),
                  [](double a, double b) { return std::abs(a) < std::abs(b) || (std::abs(a) == std::abs(b) && a < b); });
        std::string text = "metric,layer,baseline";
        for (double a : order) text += ",alpha=" + fmt_num(a);
        text += '\n';
        for (const char* m : kMetrics) {
          for (int l : layers) {
            text += std::string(m) + ',' + std::to_string(l) + ',' + (base ? fmt_num(metric(*base, m)) : "");
            for (double a : order) {
              auto it = at.find({l, a});
              text += ',';
              if (it != at.end()) text += fmt_num(metric(*it->second, m));
            }
            text += '\n';
          }
        }
        out.push_back({"fig_" + std::string(to_string(regime)) + "_" + std::string(to_string(topo)) + "_" +
                           std::string(to_string(loc)) + ".csv",
                       std::move(text)});
      }
    }
  }
  return out;
}

}  // namespace arbsteer::eval
