#pragma once

#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "arbsteer/arbitration.hpp"
#include "arbsteer/eval/metrics.hpp"
#include "arbsteer/model/decode.hpp"
#include "arbsteer/probes.hpp"

namespace arbsteer::eval {

struct EvalResult {
  std::int64_t scenario_id = 0;
  Regime regime = Regime::CopyToRecall;
  Topology topology = Topology::QueryFirst;
  std::optional<Location> location;  // empty for the unsteered baseline
  int layer = -1;
  double alpha = 0.0;
  std::string decoded;
  int em_true = 0, em_cf = 0;
  double f1_true = 0.0, f1_cf = 0.0;
  double ppl = 1.0;
};

struct Skipped {
  std::int64_t scenario_id = 0;
  std::string reason;
};

struct Steering {
  arbitration::SteeringConfig config;
  const arbitration::ArbitrationVector* vector = nullptr;
};

struct EvalOptions {
  std::size_t max_new = 4;
  std::optional<Topology> topology;  // overrides each scenario's own topology
  model::SubjectSpan subject = model::SubjectSpan::ContextThenQuery;
};

struct EvalOutput {
  std::vector<EvalResult> results;
  std::vector<Skipped> skipped;
};

template <class T>
EvalResult score(const synthkb::EvalScenario& sc, Topology topo, const model::Decoded<T>& dec,
                 const model::Vocab& vocab, const std::optional<Steering>& steering) {
  EvalResult r;
  r.scenario_id = sc.id;
  r.regime = sc.regime;
  r.topology = topo;
  if (steering) {
    r.location = steering->config.location;
    r.layer = static_cast<int>(steering->config.layer);
    r.alpha = steering->config.alpha;
  }
  r.decoded = vocab.decode(dec.answer);
  r.em_true = em(r.decoded, sc.record.base.object.surface);
  r.em_cf = em(r.decoded, sc.record.cf_object.surface);
  r.f1_true = f1(r.decoded, sc.record.base.object.surface);
  r.f1_cf = f1(r.decoded, sc.record.cf_object.surface);
  r.ppl = probes::perplexity(std::span<const model::StepRecord>(dec.steps));
  return r;
}

/// Greedy decoding of every scenario, optionally steered. Scenarios whose
/// steering location has no span in their prompt are skipped with a reason.
template <class T>
EvalOutput evaluate(const std::vector<synthkb::EvalScenario>& scenarios, const model::Transformer<T>& m,
                    const model::Vocab& vocab, const std::optional<Steering>& steering = std::nullopt,
                    const EvalOptions& opts = {}) {
  if (steering) {
    steering->config.validate();
    if (!steering->vector) throw ContractError("evaluate: steering requested without a vector");
    if (steering->vector->layer != steering->config.layer ||
        steering->vector->location != steering->config.location) {
      throw ContractError("evaluate: vector site does not match the steering site");
    }
  }
  EvalOutput out;
  for (const auto& sc : scenarios) {
    const Topology topo = opts.topology.value_or(sc.topology);
    const model::PromptSpec p = model::assemble_prompt(vocab, sc, topo);
    std::optional<model::Hooks<T>> hooks;
    if (steering) {
      auto span = model::resolve_span(p, steering->config.location, opts.subject);
      if (!span) {
        out.skipped.push_back({sc.id, "location " + std::string(to_string(steering->config.location)) +
                                          " not present in prompt"});
        continue;
      }
      hooks = arbitration::steering_hooks<T>(steering->config, *steering->vector, *span);
    }
    const auto dec = model::greedy_decode(m, vocab, p, opts.max_new, hooks ? &*hooks : nullptr);
    out.results.push_back(score(sc, topo, dec, vocab, steering));
  }
  return out;
}

inline std::string results_csv_header() {
  return "scenario_id,regime,topology,location,layer,alpha,decoded,em_true,em_cf,f1_true,f1_cf,ppl\n";
}

inline std::string fmt_num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

inline std::string csv_quote(const std::string& s) {
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q += '"';
    q += c;
  }
  return q + '"';
}

inline std::string to_csv_row(const EvalResult& r) {
  std::string s;
  s += std::to_string(r.scenario_id) + ',' + std::string(to_string(r.regime)) + ',' +
       std::string(to_string(r.topology)) + ',' +
       (r.location ? std::string(to_string(*r.location)) : std::string("baseline")) + ',' +
       std::to_string(r.layer) + ',' + fmt_num(r.alpha) + ',' + csv_quote(r.decoded) + ',' +
       std::to_string(r.em_true) + ',' + std::to_string(r.em_cf) + ',' + fmt_num(r.f1_true) + ',' +
       fmt_num(r.f1_cf) + ',' + fmt_num(r.ppl) + '\n';
  return s;
}

}  // namespace arbsteer::eval
