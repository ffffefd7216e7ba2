#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "arbsteer/capture.hpp"
#include "arbsteer/model/transformer.hpp"
#include "json.hpp"

namespace arbsteer::arbitration {

struct Centroids {
  std::vector<double> mu_ic;
  std::vector<double> mu_rc;
  std::size_t n_ic = 0;
  std::size_t n_rc = 0;
};

/// Per-mode means of the pooled activations at (layer, location).
inline Centroids compute_centroids(const std::vector<capture::PooledActivation>& acts,
                                   std::size_t layer, Location location) {
  Centroids c;
  for (const auto& a : acts) {
    if (a.layer != layer || a.location != location) continue;
    auto& mu = a.mode == Mode::IC ? c.mu_ic : c.mu_rc;
    auto& n = a.mode == Mode::IC ? c.n_ic : c.n_rc;
    if (mu.empty()) mu.assign(a.vector.size(), 0.0);
    if (mu.size() != a.vector.size()) throw ContractError("compute_centroids: mixed dimensions");
    for (std::size_t j = 0; j < mu.size(); ++j) mu[j] += static_cast<double>(a.vector[j]);
    ++n;
  }
  for (auto [mode, n] : {std::pair{Mode::IC, c.n_ic}, std::pair{Mode::RC, c.n_rc}}) {
    if (n == 0) {
      throw ContractError("compute_centroids: no " + std::string(to_string(mode)) +
                          " records at layer " + std::to_string(layer) + ", location " +
                          std::string(to_string(location)));
    }
  }
  for (double& v : c.mu_ic) v /= static_cast<double>(c.n_ic);
  for (double& v : c.mu_rc) v /= static_cast<double>(c.n_rc);
  return c;
}

struct ArbitrationVector {
  std::size_t layer = 0;
  Location location = Location::Last;
  std::vector<double> vector;
  std::size_t n_ic = 0;
  std::size_t n_rc = 0;
  std::string source_hash;
};

struct VectorMeta {
  std::size_t layer = 0;
  Location location = Location::Last;
  std::size_t n_ic = 1;
  std::size_t n_rc = 1;
  std::string source_hash;
};

/// v = mu_ic - mu_rc.
inline ArbitrationVector build_vector(std::span<const double> mu_ic, std::span<const double> mu_rc,
                                      const VectorMeta& meta) {
  if (mu_ic.size() != mu_rc.size()) {
    throw ContractError("build_vector: dimension mismatch " + std::to_string(mu_ic.size()) + " vs " +
                        std::to_string(mu_rc.size()));
  }
  if (meta.n_ic == 0 || meta.n_rc == 0) throw ContractError("build_vector: empty centroid");
  ArbitrationVector v{meta.layer, meta.location, std::vector<double>(mu_ic.size()), meta.n_ic,
                      meta.n_rc, meta.source_hash};
  for (std::size_t j = 0; j < mu_ic.size(); ++j) {
    v.vector[j] = mu_ic[j] - mu_rc[j];
    if (!std::isfinite(v.vector[j])) throw ContractError("build_vector: non-finite component");
  }
  return v;
}

inline ArbitrationVector extract_vector(const std::vector<capture::PooledActivation>& acts,
                                        std::size_t layer, Location location,
                                        const std::string& source_hash) {
  const Centroids c = compute_centroids(acts, layer, location);
  return build_vector(c.mu_ic, c.mu_rc, {layer, location, c.n_ic, c.n_rc, source_hash});
}

inline void to_json(nlohmann::json& j, const ArbitrationVector& v) {
  std::vector<float> f(v.vector.begin(), v.vector.end());
  j = {{"layer", v.layer},   {"location", to_string(v.location)},
       {"d", v.vector.size()}, {"n_ic", v.n_ic},
       {"n_rc", v.n_rc},     {"source_hash", v.source_hash},
       {"vector", f}};
}

inline void from_json(const nlohmann::json& j, ArbitrationVector& v) {
  v.layer = j.at("layer").get<std::size_t>();
  v.location = parse_enum<Location>(j.at("location").get<std::string>());
  v.n_ic = j.at("n_ic").get<std::size_t>();
  v.n_rc = j.at("n_rc").get<std::size_t>();
  v.source_hash = j.at("source_hash").get<std::string>();
  const auto f = j.at("vector").get<std::vector<float>>();
  if (f.size() != j.at("d").get<std::size_t>()) throw ContractError("vector file: d mismatch");
  v.vector.assign(f.begin(), f.end());
}

struct SteeringConfig {
  std::size_t layer = 0;
  Location location = Location::Last;
  double alpha = 0.0;
  Regime regime = Regime::CopyToRecall;

  /// CopyToRecall needs alpha > 0 and RecallToCopy alpha < 0; alpha == 0 is
  /// accepted for identity checks.
  void validate() const {
    if (alpha > 0 && regime != Regime::CopyToRecall) {
      throw ContractError("steering: positive alpha requires the CopyToRecall regime");
    }
    if (alpha < 0 && regime != Regime::RecallToCopy) {
      throw ContractError("steering: negative alpha requires the RecallToCopy regime");
    }
  }
};

/// Adds alpha * v to the rows in `span`; every other row is left untouched.
template <class T>
void apply_steering(numerics::Tensor<T>& hidden, const SteeringConfig& cfg, const ArbitrationVector& v,
                    std::span<const std::size_t> span) {
  if (cfg.layer != v.layer) {
    throw ContractError("apply_steering: config layer " + std::to_string(cfg.layer) +
                        " differs from vector layer " + std::to_string(v.layer));
  }
  if (hidden.rank() != 2 || hidden.cols() != v.vector.size()) {
    throw ContractError("apply_steering: hidden width does not match vector dimension");
  }
  if (span.empty()) throw ContractError("apply_steering: empty span");
  for (std::size_t r : span) {
    if (r >= hidden.rows()) throw ContractError("apply_steering: span index out of range");
  }
  if (cfg.alpha == 0.0) return;
  const T a = static_cast<T>(cfg.alpha);
  for (std::size_t r : span) {
    auto row = hidden.row(r);
    for (std::size_t j = 0; j < row.size(); ++j) row[j] += a * static_cast<T>(v.vector[j]);
  }
}

/// Forward hooks that inject the vector at cfg.layer over `span` on every
/// forward pass they are attached to.
template <class T>
model::Hooks<T> steering_hooks(const SteeringConfig& cfg, const ArbitrationVector& v,
                               std::vector<std::size_t> span) {
  model::Hooks<T> h;
  h.edits.push_back([cfg, &v, span = std::move(span)](std::size_t layer, numerics::Tensor<T>& x) {
    if (layer == cfg.layer) apply_steering(x, cfg, v, span);
  });
  return h;
}

}  // namespace arbsteer::arbitration
