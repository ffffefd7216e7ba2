#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "arbsteer/io.hpp"
#include "arbsteer/model/prompt.hpp"
#include "arbsteer/model/transformer.hpp"

namespace arbsteer::capture {

struct PooledActivation {
  std::int64_t example_id = 0;
  Mode mode = Mode::IC;
  std::uint32_t layer = 0;
  Location location = Location::Last;
  std::vector<float> vector;
  std::uint32_t span_size = 0;
};

/// Mean of the hidden rows at `span`.
template <class T>
std::vector<T> pool_span(const numerics::Tensor<T>& hidden, std::span<const std::size_t> span) {
  if (span.empty()) throw ContractError("pool_span: empty span");
  if (hidden.rank() != 2) throw ContractError("pool_span: hidden must be [seq x d]");
  const std::size_t d = hidden.cols();
  std::vector<T> out(d, T{0});
  for (std::size_t r : span) {
    if (r >= hidden.rows()) {
      throw ContractError("pool_span: index " + std::to_string(r) + " outside " +
                          std::to_string(hidden.rows()) + " rows");
    }
    auto row = hidden.row(r);
    for (std::size_t j = 0; j < d; ++j) out[j] += row[j];
  }
  const T n = static_cast<T>(span.size());
  for (T& v : out) v /= n;
  return out;
}

struct CaptureOptions {
  model::SubjectSpan subject = model::SubjectSpan::ContextOnly;
};

struct CaptureResult {
  std::vector<PooledActivation> records;
  std::size_t unavailable = 0;  // (example, location) pairs skipped for a missing span
};

/// Clean forward passes over `examples`, pooling the post-block residual at
/// each requested layer and available location. Records are ordered by
/// (example id, layer, location).
template <class T>
CaptureResult capture_dataset(const std::vector<synthkb::ArbitrationExample>& examples,
                              const model::Transformer<T>& m, const model::Vocab& vocab,
                              const std::vector<std::size_t>& layers,
                              const std::vector<Location>& locations,
                              const CaptureOptions& opts = {}) {
  for (std::size_t l : layers) {
    if (l >= m.config().n_layers) {
      throw ContractError("capture: layer " + std::to_string(l) + " outside [0, " +
                          std::to_string(m.config().n_layers) + ")");
    }
  }
  const std::set<std::size_t> layer_set(layers.begin(), layers.end());
  const std::set<Location> loc_set(locations.begin(), locations.end());

  std::vector<const synthkb::ArbitrationExample*> order;
  for (const auto& ex : examples) order.push_back(&ex);
  std::stable_sort(order.begin(), order.end(),
                   [](const auto* a, const auto* b) { return a->id < b->id; });

  CaptureResult res;
  for (const auto* ex : order) {
    const model::PromptSpec p = model::assemble_prompt(vocab, *ex);
    std::vector<std::pair<Location, model::Span>> spans;
    for (Location loc : loc_set) {
      if (auto s = model::resolve_span(p, loc, opts.subject)) {
        spans.emplace_back(loc, *s);
      } else {
        ++res.unavailable;
      }
    }
    if (spans.empty()) continue;
    model::Hooks<T> hooks;
    hooks.on_residual = [&](std::size_t layer, const numerics::Tensor<T>& h) {
      if (!layer_set.count(layer)) return;
      for (const auto& [loc, span] : spans) {
        const auto v = pool_span(h, std::span<const std::size_t>(span));
        PooledActivation a;
        a.example_id = ex->id;
        a.mode = ex->mode;
        a.layer = static_cast<std::uint32_t>(layer);
        a.location = loc;
        a.vector.assign(v.begin(), v.end());
        a.span_size = static_cast<std::uint32_t>(span.size());
        res.records.push_back(std::move(a));
      }
    };
    numerics::Tape<T> tape(false);
    const numerics::Segment seg{0, p.tokens.size()};
    m.trunk(tape, std::span<const model::TokenId>(p.tokens), std::span<const numerics::Segment>(&seg, 1),
            &hooks);
  }
  return res;
}

inline constexpr std::uint32_t kActivationMagic = 0x41524241;  // "ARBA"
inline constexpr std::uint32_t kActivationVersion = 1;

/// Binary activation file: magic, version, d (u64), count (u64), then
/// fixed-size records: example id (i64), layer (u32), location (u8), mode
/// (u8), span size (u16), d little-endian f32 values.
inline std::string serialize_activations(const std::vector<PooledActivation>& recs, std::size_t d) {
  std::string buf;
  io::put_le<std::uint32_t>(buf, kActivationMagic);
  io::put_le<std::uint32_t>(buf, kActivationVersion);
  io::put_le<std::uint64_t>(buf, d);
  io::put_le<std::uint64_t>(buf, recs.size());
  for (const auto& r : recs) {
    if (r.vector.size() != d) throw ContractError("activation record has wrong dimension");
    io::put_le<std::int64_t>(buf, r.example_id);
    io::put_le<std::uint32_t>(buf, r.layer);
    io::put_le<std::uint8_t>(buf, static_cast<std::uint8_t>(r.location));
    io::put_le<std::uint8_t>(buf, static_cast<std::uint8_t>(r.mode));
    io::put_le<std::uint16_t>(buf, static_cast<std::uint16_t>(r.span_size));
    for (float v : r.vector) io::put_le<float>(buf, v);
  }
  return buf;
}

struct ActivationFile {
  std::size_t d = 0;
  std::vector<PooledActivation> records;
};

inline ActivationFile deserialize_activations(std::string_view buf) {
  std::size_t pos = 0;
  if (io::get_le<std::uint32_t>(buf, pos) != kActivationMagic) {
    throw ContractError("activations: bad magic");
  }
  if (io::get_le<std::uint32_t>(buf, pos) != kActivationVersion) {
    throw ContractError("activations: unsupported version");
  }
  ActivationFile f;
  f.d = io::get_le<std::uint64_t>(buf, pos);
  const auto count = io::get_le<std::uint64_t>(buf, pos);
  f.records.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    PooledActivation r;
    r.example_id = io::get_le<std::int64_t>(buf, pos);
    r.layer = io::get_le<std::uint32_t>(buf, pos);
    const auto loc = io::get_le<std::uint8_t>(buf, pos);
    const auto mode = io::get_le<std::uint8_t>(buf, pos);
    if (loc > 2 || mode > 1) throw ContractError("activations: bad location/mode code");
    r.location = static_cast<Location>(loc);
    r.mode = static_cast<Mode>(mode);
    r.span_size = io::get_le<std::uint16_t>(buf, pos);
    r.vector.resize(f.d);
    for (float& v : r.vector) v = io::get_le<float>(buf, pos);
    f.records.push_back(std::move(r));
  }
  if (pos != buf.size()) throw ContractError("activations: trailing bytes");
  return f;
}

}  // namespace arbsteer::capture
