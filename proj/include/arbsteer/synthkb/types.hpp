#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "arbsteer/common.hpp"
#include "json.hpp"

namespace arbsteer::synthkb {

using nlohmann::json;

struct Entity {
  std::int32_t id = -1;
  std::string surface;

  friend bool operator==(const Entity&, const Entity&) = default;
};

/// (subject, relation, object) with popularity metadata.
struct FactRecord {
  Entity subject;
  std::string relation;
  Entity object;
  std::uint64_t pop_subject = 0;
  std::uint64_t pop_object = 0;
  Tier popularity_tier = Tier::Low;

  friend bool operator==(const FactRecord&, const FactRecord&) = default;
};

struct CounterfactualRecord {
  FactRecord base;
  Entity cf_object;
  Domain domain = Domain::Same;

  friend bool operator==(const CounterfactualRecord&, const CounterfactualRecord&) = default;
};

struct ArbitrationExample {
  std::int64_t id = 0;
  CounterfactualRecord record;
  Mode mode = Mode::IC;
  std::vector<std::string> sentence;
  std::vector<std::string> query;
  Topology topology = Topology::QueryFirst;
};

struct EvalScenario {
  std::int64_t id = 0;
  CounterfactualRecord record;
  Regime regime = Regime::CopyToRecall;
  std::vector<std::string> context;
  std::vector<std::string> query;
  Topology topology = Topology::QueryFirst;
};

// JSON mapping; field names follow the struct members.

inline void to_json(json& j, const Entity& e) { j = json{{"id", e.id}, {"surface", e.surface}}; }
inline void from_json(const json& j, Entity& e) {
  j.at("id").get_to(e.id);
  j.at("surface").get_to(e.surface);
}

inline void to_json(json& j, const FactRecord& f) {
  j = json{{"subject", f.subject},
           {"relation", f.relation},
           {"object", f.object},
           {"pop_subject", f.pop_subject},
           {"pop_object", f.pop_object},
           {"popularity_tier", to_string(f.popularity_tier)}};
}
inline void from_json(const json& j, FactRecord& f) {
  j.at("subject").get_to(f.subject);
  j.at("relation").get_to(f.relation);
  j.at("object").get_to(f.object);
  j.at("pop_subject").get_to(f.pop_subject);
  j.at("pop_object").get_to(f.pop_object);
  f.popularity_tier = parse_enum<Tier>(j.at("popularity_tier").get<std::string>());
}

inline void to_json(json& j, const CounterfactualRecord& c) {
  j = json{{"base", c.base}, {"cf_object", c.cf_object}, {"domain", to_string(c.domain)}};
}
inline void from_json(const json& j, CounterfactualRecord& c) {
  j.at("base").get_to(c.base);
  j.at("cf_object").get_to(c.cf_object);
  c.domain = parse_enum<Domain>(j.at("domain").get<std::string>());
}

inline void to_json(json& j, const ArbitrationExample& e) {
  j = json{{"id", e.id},
           {"record", e.record},
           {"mode", to_string(e.mode)},
           {"sentence", e.sentence},
           {"query", e.query},
           {"topology", to_string(e.topology)}};
}
inline void from_json(const json& j, ArbitrationExample& e) {
  j.at("id").get_to(e.id);
  j.at("record").get_to(e.record);
  e.mode = parse_enum<Mode>(j.at("mode").get<std::string>());
  j.at("sentence").get_to(e.sentence);
  j.at("query").get_to(e.query);
  e.topology = parse_enum<Topology>(j.at("topology").get<std::string>());
}

inline void to_json(json& j, const EvalScenario& s) {
  j = json{{"id", s.id},
           {"record", s.record},
           {"regime", to_string(s.regime)},
           {"context", s.context},
           {"query", s.query},
           {"topology", to_string(s.topology)}};
}
inline void from_json(const json& j, EvalScenario& s) {
  j.at("id").get_to(s.id);
  j.at("record").get_to(s.record);
  s.regime = parse_enum<Regime>(j.at("regime").get<std::string>());
  j.at("context").get_to(s.context);
  j.at("query").get_to(s.query);
  s.topology = parse_enum<Topology>(j.at("topology").get<std::string>());
}

}  // namespace arbsteer::synthkb
