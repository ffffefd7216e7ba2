#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "arbsteer/arbitration.hpp"
#include "arbsteer/model/decode.hpp"
#include "arbsteer/model/prompt.hpp"
#include "json.hpp"

namespace arbsteer::probes {

using numerics::Tensor;

/// Per layer, the largest attention probability (over heads) from the final
/// position to `token`. `attn[l]` is [heads x seq x seq].
template <class T>
std::vector<double> attention_routing(const std::vector<Tensor<T>>& attn, std::size_t token) {
  std::vector<double> out;
  out.reserve(attn.size());
  for (const auto& a : attn) {
    if (a.rank() != 3 || a.dim(1) != a.dim(2)) throw ContractError("attention_routing: bad shape");
    const std::size_t heads = a.dim(0), seq = a.dim(1);
    if (token >= seq) throw ContractError("attention_routing: token index out of range");
    double best = 0.0;
    for (std::size_t h = 0; h < heads; ++h) {
      best = std::max(best, static_cast<double>(a[(h * seq + seq - 1) * seq + token]));
    }
    out.push_back(best);
  }
  return out;
}

/// Dot product of each layer's MLP output with the unembedding row of `token`.
template <class T>
std::vector<double> mlp_projection(const std::vector<std::vector<T>>& mlp_out,
                                   const Tensor<T>& unembed, std::size_t token) {
  if (token >= unembed.rows()) throw ContractError("mlp_projection: token outside vocabulary");
  const auto row = unembed.row(token);
  std::vector<double> out;
  out.reserve(mlp_out.size());
  for (const auto& m : mlp_out) {
    if (m.size() != row.size()) throw ContractError("mlp_projection: width mismatch");
    double s = 0.0;
    for (std::size_t j = 0; j < m.size(); ++j) s += static_cast<double>(m[j]) * static_cast<double>(row[j]);
    out.push_back(s);
  }
  return out;
}

/// Full-vocabulary softmax of the logit-lens readout (final norm, then
/// unembedding) of each layer's last-position residual.
template <class T>
std::vector<std::vector<double>> layer_distributions(const model::Transformer<T>& m,
                                                     const std::vector<std::vector<T>>& residuals) {
  std::vector<std::vector<double>> out;
  out.reserve(residuals.size());
  for (const auto& r : residuals) {
    const auto logits = m.project(std::span<const T>(r));
    out.push_back(model::probabilities(std::span<const T>(logits)));
  }
  return out;
}

struct Trajectory {
  std::vector<double> p_true, p_cf;
};

template <class T>
Trajectory probability_trajectory(const model::Transformer<T>& m,
                                  const std::vector<std::vector<T>>& residuals, std::size_t o,
                                  std::size_t o_cf) {
  Trajectory t;
  for (const auto& p : layer_distributions(m, residuals)) {
    t.p_true.push_back(p.at(o));
    t.p_cf.push_back(p.at(o_cf));
  }
  return t;
}

/// exp of the mean negative log-probability of the generated steps.
inline double perplexity(std::span<const double> step_probs) {
  if (step_probs.empty()) throw ContractError("perplexity: no generated tokens");
  double nll = 0.0;
  for (double p : step_probs) {
    if (!(p > 0.0)) throw ContractError("perplexity: zero-probability token");
    nll -= std::log(p);
  }
  return std::exp(nll / static_cast<double>(step_probs.size()));
}

inline double perplexity(std::span<const model::StepRecord> steps) {
  std::vector<double> p;
  p.reserve(steps.size());
  for (const auto& s : steps) p.push_back(s.prob);
  return perplexity(std::span<const double>(p));
}

struct ProbeTrace {
  std::int64_t scenario_id = 0;
  std::optional<arbitration::SteeringConfig> config;  // empty for the baseline
  std::optional<std::vector<double>> attn_subj;       // empty when the subject is not in the prompt
  std::optional<std::vector<double>> attn_cf;
  std::vector<double> mlp_true, mlp_cf;
  std::vector<double> p_true, p_cf;
  std::vector<model::TokenId> decoded;
  std::vector<double> step0_probs;  // not serialized; kept for consistency checks
};

/// Runs one instrumented forward pass over the prompt (with steering hooks
/// when given) and collects every trace field at the final prompt position.
template <class T>
ProbeTrace trace_prompt(const model::Transformer<T>& m, const model::Vocab& vocab,
                        const model::PromptSpec& prompt, std::int64_t scenario_id,
                        const synthkb::Entity& o, const synthkb::Entity& o_cf,
                        const std::optional<arbitration::SteeringConfig>& cfg = std::nullopt,
                        const arbitration::ArbitrationVector* vec = nullptr,
                        model::SubjectSpan subject_policy = model::SubjectSpan::ContextThenQuery) {
  const std::size_t L = m.config().n_layers;
  ProbeTrace t;
  t.scenario_id = scenario_id;
  t.config = cfg;
  model::Hooks<T> steer;
  if (cfg) {
    if (!vec) throw ContractError("trace_prompt: steering config without a vector");
    auto span = model::resolve_span(prompt, cfg->location, subject_policy);
    if (!span) {
      throw ContractError("trace_prompt: location " + std::string(to_string(cfg->location)) +
                          " unavailable in scenario " + std::to_string(scenario_id));
    }
    steer = arbitration::steering_hooks<T>(*cfg, *vec, *span);
  }
  model::Hooks<T> hooks = steer;
  std::vector<Tensor<T>> attn(L);
  std::vector<std::vector<T>> mlp(L), resid(L);
  const std::size_t last = prompt.tokens.size() - 1;
  hooks.on_attention = [&](std::size_t l, const Tensor<T>& p) { attn[l] = p; };
  hooks.on_mlp_out = [&](std::size_t l, const Tensor<T>& x) {
    auto r = x.row(last);
    mlp[l].assign(r.begin(), r.end());
  };
  hooks.on_residual = [&](std::size_t l, const Tensor<T>& x) {
    auto r = x.row(last);
    resid[l].assign(r.begin(), r.end());
  };
  const auto logits = m.last_logits(prompt.tokens, &hooks);
  (void)logits;

  const auto o_ids = vocab.encode(synthkb::tokenize(o.surface));
  const auto cf_ids = vocab.encode(synthkb::tokenize(o_cf.surface));
  if (o_ids.size() != 1 || cf_ids.size() != 1) {
    throw ContractError("trace_prompt: objects must be single tokens");
  }
  const auto o_tok = static_cast<std::size_t>(o_ids[0]);
  const auto cf_tok = static_cast<std::size_t>(cf_ids[0]);

  if (auto s = model::resolve_span(prompt, Location::Subj, subject_policy)) {
    t.attn_subj = attention_routing(attn, s->front());
  }
  if (auto s = model::resolve_span(prompt, Location::ObjCf, subject_policy)) {
    t.attn_cf = attention_routing(attn, s->front());
  }
  t.mlp_true = mlp_projection(mlp, m.params().unembed, o_tok);
  t.mlp_cf = mlp_projection(mlp, m.params().unembed, cf_tok);
  const auto traj = probability_trajectory(m, resid, o_tok, cf_tok);
  t.p_true = traj.p_true;
  t.p_cf = traj.p_cf;

  auto dec = model::greedy_decode(m, vocab, prompt, 4, cfg ? &steer : nullptr);
  t.decoded = dec.answer;
  t.step0_probs = dec.step0_probs;
  return t;
}

inline nlohmann::json trace_to_json(const ProbeTrace& t, const model::Vocab& vocab) {
  nlohmann::json j;
  j["scenario_id"] = t.scenario_id;
  if (t.config) {
    j["config"] = {{"layer", t.config->layer},
                   {"location", to_string(t.config->location)},
                   {"alpha", t.config->alpha},
                   {"regime", to_string(t.config->regime)}};
  } else {
    j["config"] = "baseline";
  }
  j["attn_subj"] = t.attn_subj ? nlohmann::json(*t.attn_subj) : nlohmann::json(nullptr);
  j["attn_cf"] = t.attn_cf ? nlohmann::json(*t.attn_cf) : nlohmann::json(nullptr);
  j["mlp_true"] = t.mlp_true;
  j["mlp_cf"] = t.mlp_cf;
  j["p_true"] = t.p_true;
  j["p_cf"] = t.p_cf;
  j["decoded"] = vocab.decode(t.decoded);
  return j;
}

}  // namespace arbsteer::probes
