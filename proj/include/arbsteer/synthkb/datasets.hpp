#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "arbsteer/synthkb/kb.hpp"

namespace arbsteer::synthkb {

/// Picks a counterfactual object for `base`. Same-domain draws from the
/// relation's own pool (excluding the true object); different-domain draws
/// from another relation's pool. Empty when no candidate exists.
inline std::optional<Entity> choose_counterfactual(
    const FactRecord& base, Domain domain, const std::map<std::string, std::vector<Entity>>& pools,
    std::mt19937_64& rng) {
  std::vector<const Entity*> cands;
  if (domain == Domain::Same) {
    for (const auto& e : pools.at(base.relation)) {
      if (e != base.object) cands.push_back(&e);
    }
  } else {
    std::vector<const std::vector<Entity>*> others;
    for (const auto& [rel, pool] : pools) {
      if (rel != base.relation) others.push_back(&pool);
    }
    if (others.empty()) return std::nullopt;
    const auto& pool = *others[std::uniform_int_distribution<std::size_t>(0, others.size() - 1)(rng)];
    for (const auto& e : pool) {
      if (e != base.object) cands.push_back(&e);
    }
  }
  if (cands.empty()) return std::nullopt;
  return *cands[std::uniform_int_distribution<std::size_t>(0, cands.size() - 1)(rng)];
}

inline std::vector<std::string> entity_tokens(const Entity& e) { return tokenize(e.surface); }

/// Occurrence rules for arbitration sentences, checked on tokens.
inline bool satisfies_mode_rules(const ArbitrationExample& ex, std::string_view surface) {
  const auto subj = entity_tokens(ex.record.base.subject);
  const auto obj = entity_tokens(ex.record.base.object);
  const auto cf = entity_tokens(ex.record.cf_object);
  const std::size_t words = word_count(surface);
  if (words < kMinContextWords || words > kMaxContextWords) return false;
  if (count_occurrences(ex.sentence, cf) != 1) return false;
  if (count_occurrences(ex.sentence, obj) != 0) return false;
  const std::size_t ns = count_occurrences(ex.sentence, subj);
  return ex.mode == Mode::IC ? ns == 0 : ns == 1;
}

inline std::string query_text(const FactRecord& f) {
  const RelationSpec* rel = find_relation(f.relation);
  if (!rel) throw ContractError("no templates for relation " + f.relation);
  return fill(std::string(rel->query), "subj", f.subject.surface);
}

inline std::string irrelevant_sentence(const Entity& cf, std::size_t frame) {
  return fill(std::string(kIrrelevantFrames[frame % kIrrelevantFrames.size()]), "cf", cf.surface);
}

/// Relation assertion with a neutral tail chosen to land in the 12-16 word
/// band; empty when no tail fits.
inline std::optional<std::string> relevant_sentence(const FactRecord& base, const Entity& cf,
                                                    std::mt19937_64& rng) {
  const RelationSpec* rel = find_relation(base.relation);
  if (!rel) return std::nullopt;
  std::string core = fill(fill(std::string(rel->assertion), "subj", base.subject.surface), "obj",
                          cf.surface);
  if (!core.empty() && core.back() == '.') core.pop_back();
  std::vector<std::string> fits;
  for (auto tail : kRelevantTails) {
    std::string s = tail.empty() ? core + "." : core + ", " + std::string(tail) + ".";
    const std::size_t w = word_count(s);
    if (w >= kMinContextWords && w <= kMaxContextWords) fits.push_back(std::move(s));
  }
  if (fits.empty()) return std::nullopt;
  return fits[std::uniform_int_distribution<std::size_t>(0, fits.size() - 1)(rng)];
}

struct ArbitrationSet {
  std::vector<ArbitrationExample> examples;  // IC at even ids, RC at the following odd id
  std::size_t skipped = 0;                   // pairs dropped by the occurrence/length rules
};

/// IC/RC pairs over the arbitration split. Each retained fact yields a
/// same-domain and (when another relation exists) a different-domain pair.
inline ArbitrationSet make_arbitration_pairs(const std::vector<FactRecord>& kb, std::uint64_t seed) {
  if (kb.empty()) throw ContractError("make_arbitration_pairs: empty knowledge base");
  const auto pools = object_pools(kb);
  const auto split = split_kb(kb);
  std::mt19937_64 rng(seed ^ 0xA4B17Aull);
  std::bernoulli_distribution coin(0.5);
  std::uniform_int_distribution<std::size_t> frame(0, kIrrelevantFrames.size() - 1);

  ArbitrationSet out;
  std::int64_t pair_id = 0;
  for (std::size_t fi : split.arbitration) {
    const FactRecord& f = kb[fi];
    for (Domain dom : {Domain::Same, Domain::Different}) {
      auto cf = choose_counterfactual(f, dom, pools, rng);
      if (!cf) continue;
      const Topology topo = coin(rng) ? Topology::ContextFirst : Topology::QueryFirst;
      CounterfactualRecord rec{f, *cf, dom};
      const auto query = tokenize(query_text(f));

      const std::string ic_text = irrelevant_sentence(*cf, frame(rng));
      const auto rc_text = relevant_sentence(f, *cf, rng);

      ArbitrationExample ic{2 * pair_id, rec, Mode::IC, tokenize(ic_text), query, topo};
      if (!rc_text) {
        ++out.skipped;
        continue;
      }
      ArbitrationExample rc{2 * pair_id + 1, rec, Mode::RC, tokenize(*rc_text), query, topo};
      if (!satisfies_mode_rules(ic, ic_text) || !satisfies_mode_rules(rc, *rc_text)) {
        ++out.skipped;
        continue;
      }
      out.examples.push_back(std::move(ic));
      out.examples.push_back(std::move(rc));
      ++pair_id;
    }
  }
  return out;
}

inline std::string authoritative_context(const FactRecord& base, const Entity& cf, std::size_t which) {
  const RelationSpec* rel = find_relation(base.relation);
  if (!rel) throw ContractError("no authoritative templates for relation " + base.relation);
  return fill(fill(std::string(rel->authoritative[which % rel->authoritative.size()]), "subj",
                   base.subject.surface),
              "obj", cf.surface);
}

inline std::string archive_context(const Entity& cf, std::size_t which) {
  return fill(std::string(kArchiveTemplates[which % kArchiveTemplates.size()]), "obj", cf.surface);
}

struct ScenarioOptions {
  std::size_t max_relations = 16;  // evaluation covers a subset of relations
};

/// Evaluation scenarios over held-out facts: Copy->Recall uses authoritative
/// relation templates asserting cf; Recall->Copy uses archive templates that
/// mention only cf. Domains and topologies alternate.
inline std::vector<EvalScenario> make_eval_scenarios(const std::vector<FactRecord>& kb,
                                                     std::uint64_t seed, std::size_t per_regime,
                                                     const ScenarioOptions& opts = {}) {
  std::vector<EvalScenario> out;
  if (per_regime == 0 || kb.empty()) return out;
  const auto pools = object_pools(kb);
  const auto rels = relation_order(kb);
  const std::size_t nrel = std::min(opts.max_relations, rels.size());
  const std::vector<std::string> allowed(rels.begin(), rels.begin() + static_cast<std::ptrdiff_t>(nrel));
  std::vector<std::size_t> eligible;
  for (std::size_t i : split_kb(kb).evaluation) {
    if (std::find(allowed.begin(), allowed.end(), kb[i].relation) != allowed.end()) {
      eligible.push_back(i);
    }
  }
  if (eligible.empty()) return out;
  std::mt19937_64 rng(seed ^ 0xE7A1ull);
  std::shuffle(eligible.begin(), eligible.end(), rng);
  std::uniform_int_distribution<std::size_t> pick_auth(0, 5);
  std::uniform_int_distribution<std::size_t> pick_arch(0, kArchiveTemplates.size() - 1);

  std::int64_t id = 0;
  for (Regime regime : {Regime::CopyToRecall, Regime::RecallToCopy}) {
    for (std::size_t i = 0; i < per_regime; ++i) {
      const FactRecord& f = kb[eligible[i % eligible.size()]];
      Domain dom = (i % 2 == 0) ? Domain::Same : Domain::Different;
      auto cf = choose_counterfactual(f, dom, pools, rng);
      if (!cf) {
        dom = Domain::Same;
        cf = choose_counterfactual(f, dom, pools, rng);
      }
      if (!cf) continue;
      EvalScenario s;
      s.id = id++;
      s.record = {f, *cf, dom};
      s.regime = regime;
      s.query = tokenize(query_text(f));
      s.topology = ((i / 2) % 2 == 0) ? Topology::QueryFirst : Topology::ContextFirst;
      s.context = tokenize(regime == Regime::CopyToRecall ? authoritative_context(f, *cf, pick_auth(rng))
                                                          : archive_context(*cf, pick_arch(rng)));
      out.push_back(std::move(s));
    }
  }
  return out;
}

/// Per-relation sample sizes: proportional (floor then largest remainder),
/// then raised to min(2, available) for every relation.
inline std::vector<std::size_t> stratified_quotas(const std::vector<std::size_t>& counts,
                                                  std::size_t n) {
  std::size_t total = 0;
  for (auto c : counts) total += c;
  n = std::min(n, total);
  std::vector<std::size_t> q(counts.size(), 0);
  if (total == 0) return q;
  std::vector<std::pair<std::size_t, std::size_t>> rema;  // (remainder numerator, index)
  std::size_t given = 0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    q[i] = counts[i] * n / total;
    given += q[i];
    rema.emplace_back(counts[i] * n % total, i);
  }
  std::stable_sort(rema.begin(), rema.end(), [](auto a, auto b) { return a.first > b.first; });
  for (std::size_t k = 0; given < n; ++k, ++given) ++q[rema[k % rema.size()].second];

  std::vector<std::size_t> floor(counts.size());
  for (std::size_t i = 0; i < counts.size(); ++i) floor[i] = std::min<std::size_t>(2, counts[i]);
  for (std::size_t i = 0; i < counts.size(); ++i) {
    while (q[i] < floor[i]) {
      std::size_t donor = counts.size();
      std::size_t best = 0;
      for (std::size_t j = 0; j < counts.size(); ++j) {
        if (q[j] > floor[j] && q[j] - floor[j] > best) {
          best = q[j] - floor[j];
          donor = j;
        }
      }
      if (donor == counts.size()) break;
      --q[donor];
      ++q[i];
    }
  }
  return q;
}

/// Relation-stratified subset of size n with at least two scenarios per
/// relation; output keeps input order.
inline std::vector<EvalScenario> stratified_sample(const std::vector<EvalScenario>& scenarios,
                                                   std::size_t n, std::uint64_t seed) {
  std::vector<std::string> rels;
  std::map<std::string, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < scenarios.size(); ++i) {
    const auto& r = scenarios[i].record.base.relation;
    if (!members.count(r)) rels.push_back(r);
    members[r].push_back(i);
  }
  if (n < 2 * rels.size()) {
    throw ContractError("stratified_sample: n=" + std::to_string(n) + " is below the minimum " +
                        std::to_string(2 * rels.size()) + " (two per relation)");
  }
  std::vector<std::size_t> counts;
  for (const auto& r : rels) counts.push_back(members[r].size());
  const auto quota = stratified_quotas(counts, n);

  std::mt19937_64 rng(seed ^ 0x57A7ull);
  std::vector<std::size_t> chosen;
  for (std::size_t k = 0; k < rels.size(); ++k) {
    auto idx = members[rels[k]];
    std::shuffle(idx.begin(), idx.end(), rng);
    chosen.insert(chosen.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(quota[k]));
  }
  std::sort(chosen.begin(), chosen.end());
  std::vector<EvalScenario> out;
  out.reserve(chosen.size());
  for (auto i : chosen) out.push_back(scenarios[i]);
  return out;
}

}  // namespace arbsteer::synthkb
