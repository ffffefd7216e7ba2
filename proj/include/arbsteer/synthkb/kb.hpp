#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <set>
#include <string>
#include <unordered_set>
#include <vector>

#include "arbsteer/synthkb/templates.hpp"
#include "arbsteer/synthkb/text.hpp"
#include "arbsteer/synthkb/types.hpp"

namespace arbsteer::synthkb {

struct KbOptions {
  std::size_t objects_per_relation = 12;  // size of each relation's object pool
  std::size_t max_entity_slots = 8192;    // vocabulary slots reserved for entities
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// Every word that can appear in a template, query, frame or tail.
inline std::set<std::string> template_words() {
  std::set<std::string> words;
  auto add = [&](std::string_view t) {
    std::string s = fill(fill(fill(std::string(t), "subj", "xsubjx"), "obj", "xobjx"), "cf", "xcfx");
    for (auto& w : tokenize(s)) {
      if (w != "xsubjx" && w != "xobjx" && w != "xcfx") words.insert(w);
    }
  };
  for (const auto& r : kRelations) {
    add(r.query);
    add(r.assertion);
    for (auto t : r.authoritative) add(t);
  }
  for (auto t : kArchiveTemplates) add(t);
  for (auto t : kIrrelevantFrames) add(t);
  for (auto t : kRelevantTails) add(t);
  return words;
}

namespace detail {

inline constexpr std::string_view kConsonants = "bdfgklmnprstvz";
inline constexpr std::string_view kVowels = "aeiou";
inline constexpr std::array<std::string_view, 27> kObjectSuffixes{
    "ar", "en", "ix", "on", "ul", "eth", "is", "ok", "um", "ia", "or", "an", "ex", "ond",
    "ira", "esh", "ott", "ule", "ank", "irn", "ova", "elm", "usk", "ard", "ini", "oth", "ax"};

class NameForge {
 public:
  NameForge(std::uint64_t seed, std::size_t capacity)
      : rng_(seed ^ 0x5EEDF00Dull), capacity_(capacity), reserved_(template_words()) {}

  std::string subject() { return draw(3, ""); }
  std::string object(std::size_t relation) { return draw(2, kObjectSuffixes[relation % 27]); }

 private:
  std::string draw(int syllables, std::string_view suffix) {
    if (used_.size() >= capacity_) {
      throw ContractError("vocabulary overflow: more than " + std::to_string(capacity_) +
                          " entities requested");
    }
    std::uniform_int_distribution<std::size_t> c(0, kConsonants.size() - 1);
    std::uniform_int_distribution<std::size_t> v(0, kVowels.size() - 1);
    for (int attempt = 0; attempt < 10000; ++attempt) {
      std::string w;
      for (int s = 0; s < syllables; ++s) {
        w.push_back(kConsonants[c(rng_)]);
        w.push_back(kVowels[v(rng_)]);
      }
      if (attempt > 200) w.push_back(kConsonants[c(rng_)]);
      w += suffix;
      if (reserved_.count(w) || used_.count(w)) continue;
      used_.insert(w);
      return w;
    }
    throw ContractError("vocabulary overflow: name space exhausted");
  }

  std::mt19937_64 rng_;
  std::size_t capacity_;
  std::set<std::string> reserved_;
  std::unordered_set<std::string> used_;
};

}  // namespace detail

/// Deterministic synthetic knowledge base: `num_relations` relations, each
/// with `entities_per_relation` unique single-token subjects mapped onto a
/// relation-specific object pool.
inline std::vector<FactRecord> generate_kb(std::uint64_t seed, std::size_t num_relations = 27,
                                           std::size_t entities_per_relation = 150,
                                           const KbOptions& opts = {}) {
  if (num_relations == 0 || num_relations > kRelations.size()) {
    throw ContractError("generate_kb: num_relations must be in [1, " +
                        std::to_string(kRelations.size()) + "]");
  }
  if (entities_per_relation < 2) {
    throw ContractError("generate_kb: entities_per_relation must be >= 2");
  }
  const std::size_t pool = std::max<std::size_t>(
      2, std::min(opts.objects_per_relation, entities_per_relation));
  const std::size_t needed = num_relations * (entities_per_relation + pool);
  if (needed > opts.max_entity_slots) {
    throw ContractError("vocabulary overflow: " + std::to_string(needed) +
                        " entities exceed the " + std::to_string(opts.max_entity_slots) +
                        " reserved slots");
  }

  detail::NameForge forge(seed, opts.max_entity_slots);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> logpop(1.0, 7.0);
  auto popularity = [&] { return static_cast<std::uint64_t>(std::floor(std::pow(10.0, logpop(rng)))); };

  std::int32_t next_id = 0;
  std::vector<FactRecord> kb;
  kb.reserve(num_relations * entities_per_relation);
  for (std::size_t r = 0; r < num_relations; ++r) {
    std::vector<Entity> objects;
    std::vector<std::uint64_t> object_pop;
    for (std::size_t i = 0; i < pool; ++i) {
      objects.push_back({next_id++, forge.object(r)});
      object_pop.push_back(popularity());
    }
    // The first `pool` subjects cover every object so each pool is fully used.
    std::vector<std::size_t> assignment(entities_per_relation);
    std::uniform_int_distribution<std::size_t> pick(0, pool - 1);
    for (std::size_t i = 0; i < entities_per_relation; ++i) {
      assignment[i] = i < pool ? i : pick(rng);
    }
    std::shuffle(assignment.begin(), assignment.end(), rng);

    const std::size_t first = kb.size();
    for (std::size_t i = 0; i < entities_per_relation; ++i) {
      FactRecord f;
      f.subject = {next_id++, forge.subject()};
      f.relation = std::string(kRelations[r].code);
      f.object = objects[assignment[i]];
      f.pop_subject = popularity();
      f.pop_object = object_pop[assignment[i]];
      kb.push_back(std::move(f));
    }
    // Tier split: upper half of subject popularity within the relation is High.
    std::vector<std::size_t> order(entities_per_relation);
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = first + i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return kb[a].pop_subject > kb[b].pop_subject;
    });
    for (std::size_t i = 0; i < order.size(); ++i) {
      kb[order[i]].popularity_tier = i < (order.size() + 1) / 2 ? Tier::High : Tier::Low;
    }
  }
  return kb;
}

/// Indices of facts feeding arbitration-pair extraction versus evaluation
/// scenarios. Depends only on the KB contents: about 20% of each relation
/// (at least one fact) is held out for evaluation.
struct KbSplit {
  std::vector<std::size_t> arbitration;
  std::vector<std::size_t> evaluation;
};

inline KbSplit split_kb(const std::vector<FactRecord>& kb) {
  std::map<std::string, std::vector<std::size_t>> by_rel;
  std::vector<std::string> rel_order;
  for (std::size_t i = 0; i < kb.size(); ++i) {
    auto [it, inserted] = by_rel.try_emplace(kb[i].relation);
    if (inserted) rel_order.push_back(kb[i].relation);
    it->second.push_back(i);
  }
  std::vector<bool> is_eval(kb.size(), false);
  for (const auto& rel : rel_order) {
    auto idx = by_rel[rel];
    if (idx.size() < 2) continue;
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      return splitmix64(static_cast<std::uint64_t>(kb[a].subject.id)) <
             splitmix64(static_cast<std::uint64_t>(kb[b].subject.id));
    });
    const std::size_t n_eval = std::max<std::size_t>(1, idx.size() / 5);
    for (std::size_t k = idx.size() - n_eval; k < idx.size(); ++k) is_eval[idx[k]] = true;
  }
  KbSplit s;
  for (std::size_t i = 0; i < kb.size(); ++i) (is_eval[i] ? s.evaluation : s.arbitration).push_back(i);
  return s;
}

/// Object pool per relation in first-seen order.
inline std::map<std::string, std::vector<Entity>> object_pools(const std::vector<FactRecord>& kb) {
  std::map<std::string, std::vector<Entity>> pools;
  for (const auto& f : kb) {
    auto& p = pools[f.relation];
    if (std::find(p.begin(), p.end(), f.object) == p.end()) p.push_back(f.object);
  }
  return pools;
}

/// Relation codes in first-seen order.
inline std::vector<std::string> relation_order(const std::vector<FactRecord>& kb) {
  std::vector<std::string> out;
  for (const auto& f : kb) {
    if (std::find(out.begin(), out.end(), f.relation) == out.end()) out.push_back(f.relation);
  }
  return out;
}

}  // namespace arbsteer::synthkb
