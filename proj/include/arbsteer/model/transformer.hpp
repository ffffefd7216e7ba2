#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "arbsteer/model/vocab.hpp"
#include "arbsteer/numerics/ops.hpp"
#include "json.hpp"

namespace arbsteer::model {

using numerics::Segment;
using numerics::Tape;
using numerics::Tensor;
using numerics::Var;

struct ModelConfig {
  std::size_t d_model = 128;
  std::size_t n_layers = 8;
  std::size_t n_heads = 4;
  std::size_t d_ff = 512;
  std::size_t vocab_size = 0;
  std::size_t max_seq = 64;
  std::uint64_t seed = 0;

  void validate() const {
    if (n_heads == 0 || d_model % n_heads != 0) {
      throw ContractError("ModelConfig: d_model " + std::to_string(d_model) +
                          " not divisible by n_heads " + std::to_string(n_heads));
    }
    if (n_layers == 0 || d_ff == 0 || vocab_size == 0 || max_seq == 0) {
      throw ContractError("ModelConfig: zero-sized dimension");
    }
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"d_model", c.d_model},     {"n_layers", c.n_layers}, {"n_heads", c.n_heads},
                     {"d_ff", c.d_ff},           {"vocab_size", c.vocab_size},
                     {"max_seq", c.max_seq},     {"seed", c.seed}};
}
inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  c.d_model = j.value("d_model", c.d_model);
  c.n_layers = j.value("n_layers", c.n_layers);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.d_ff = j.value("d_ff", c.d_ff);
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.max_seq = j.value("max_seq", c.max_seq);
  c.seed = j.value("seed", c.seed);
}

template <class T>
struct BlockParams {
  Tensor<T> attn_gain, wq, wk, wv, wo;
  Tensor<T> mlp_gain, w_in, w_out;
};

template <class T>
struct Parameters {
  Tensor<T> tok_emb;  // [V x d]
  Tensor<T> pos_emb;  // [max_seq x d]
  std::vector<BlockParams<T>> blocks;
  Tensor<T> final_gain;  // [d]
  Tensor<T> unembed;     // [V x d]; logits = norm(h) . unembed^T

  /// Every parameter tensor in declaration order (the checkpoint order).
  std::vector<Tensor<T>*> all() {
    std::vector<Tensor<T>*> v{&tok_emb, &pos_emb};
    for (auto& b : blocks) {
      for (auto* t : {&b.attn_gain, &b.wq, &b.wk, &b.wv, &b.wo, &b.mlp_gain, &b.w_in, &b.w_out}) {
        v.push_back(t);
      }
    }
    v.push_back(&final_gain);
    v.push_back(&unembed);
    return v;
  }
  std::vector<const Tensor<T>*> all() const {
    auto v = const_cast<Parameters*>(this)->all();
    return {v.begin(), v.end()};
  }
};

enum class HookSite : std::uint8_t { ResidualPostBlock, AttentionProbs, MlpOut };

struct HookPoint {
  std::size_t layer = 0;
  HookSite site = HookSite::ResidualPostBlock;
};

/// Per-forward instrumentation. Capture callbacks observe; edit callbacks may
/// rewrite the post-block residual in place, and the edited tensor is what
/// the next block consumes. Hooks are only supported on single sequences.
template <class T>
struct Hooks {
  using Capture = std::function<void(std::size_t layer, const Tensor<T>&)>;
  using Edit = std::function<void(std::size_t layer, Tensor<T>&)>;

  Capture on_residual;   // [seq x d], after edits
  Capture on_attention;  // [heads x seq x seq]
  Capture on_mlp_out;    // [seq x d]
  std::vector<Edit> edits;

  bool empty() const { return !on_residual && !on_attention && !on_mlp_out && edits.empty(); }
};

/// A packed training batch: sequences laid end to end, with the rows whose
/// next-token prediction is supervised.
struct Batch {
  std::vector<TokenId> tokens;
  std::vector<Segment> segments;
  std::vector<std::size_t> target_rows;
  std::vector<TokenId> targets;

  void add(std::span<const TokenId> seq, std::span<const std::size_t> rows,
           std::span<const TokenId> tgt) {
    const std::size_t off = tokens.size();
    tokens.insert(tokens.end(), seq.begin(), seq.end());
    segments.push_back({off, seq.size()});
    for (std::size_t i = 0; i < rows.size(); ++i) {
      target_rows.push_back(off + rows[i]);
      targets.push_back(tgt[i]);
    }
  }
};

/// Pre-norm decoder-only transformer with learned positions, RMSNorm, GELU
/// MLPs and an untied unembedding.
template <class T>
class Transformer {
 public:
  explicit Transformer(ModelConfig cfg) : cfg_(cfg) {
    cfg_.validate();
    init();
  }

  Transformer(ModelConfig cfg, Parameters<T> params) : cfg_(cfg), p_(std::move(params)) {
    cfg_.validate();
  }

  const ModelConfig& config() const noexcept { return cfg_; }
  Parameters<T>& params() noexcept { return p_; }
  const Parameters<T>& params() const noexcept { return p_; }

  template <class U>
  Transformer<U> cast() const {
    Parameters<U> q;
    q.tok_emb = p_.tok_emb.template cast<U>();
    q.pos_emb = p_.pos_emb.template cast<U>();
    for (const auto& b : p_.blocks) {
      q.blocks.push_back({b.attn_gain.template cast<U>(), b.wq.template cast<U>(),
                          b.wk.template cast<U>(), b.wv.template cast<U>(),
                          b.wo.template cast<U>(), b.mlp_gain.template cast<U>(),
                          b.w_in.template cast<U>(), b.w_out.template cast<U>()});
    }
    q.final_gain = p_.final_gain.template cast<U>();
    q.unembed = p_.unembed.template cast<U>();
    return Transformer<U>(cfg_, std::move(q));
  }

  /// Residual stream after the last block for every packed token.
  Var<T> trunk(Tape<T>& tape, std::span<const TokenId> tokens, std::span<const Segment> segments,
               const Hooks<T>* hooks = nullptr) const {
    const bool grad = tape.grad_enabled();
    if (hooks && !hooks->empty() && segments.size() != 1) {
      throw ContractError("hooks require a single sequence");
    }
    std::vector<std::int32_t> pos(tokens.size());
    for (const Segment& s : segments) {
      if (s.length > cfg_.max_seq) {
        throw ContractError("sequence length " + std::to_string(s.length) + " exceeds max_seq " +
                            std::to_string(cfg_.max_seq));
      }
      for (std::size_t i = 0; i < s.length; ++i) pos[s.offset + i] = static_cast<std::int32_t>(i);
    }
    Var<T> x = numerics::add(numerics::embedding(tape.ref(p_.tok_emb, grad), tokens),
                             numerics::embedding(tape.ref(p_.pos_emb, grad),
                                                 std::span<const std::int32_t>(pos)));
    std::vector<Tensor<T>> probs;
    for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
      const auto& b = p_.blocks[l];
      Var<T> h = numerics::rms_norm(x, tape.ref(b.attn_gain, grad), eps());
      Var<T> q = numerics::matmul(h, tape.ref(b.wq, grad));
      Var<T> k = numerics::matmul(h, tape.ref(b.wk, grad));
      Var<T> v = numerics::matmul(h, tape.ref(b.wv, grad));
      const bool want_probs = hooks && hooks->on_attention;
      probs.clear();
      Var<T> a = numerics::causal_attention(q, k, v, segments, cfg_.n_heads,
                                            want_probs ? &probs : nullptr);
      if (want_probs) hooks->on_attention(l, probs.front());
      x = numerics::add(x, numerics::matmul(a, tape.ref(b.wo, grad)));
      Var<T> h2 = numerics::rms_norm(x, tape.ref(b.mlp_gain, grad), eps());
      Var<T> m = numerics::matmul(numerics::gelu(numerics::matmul(h2, tape.ref(b.w_in, grad))),
                                  tape.ref(b.w_out, grad));
      if (hooks && hooks->on_mlp_out) hooks->on_mlp_out(l, m.value());
      x = numerics::add(x, m);
      if (hooks && !hooks->edits.empty()) {
        Tensor<T> edited = x.value();
        for (const auto& e : hooks->edits) e(l, edited);
        x = tape.leaf(std::move(edited));
      }
      if (hooks && hooks->on_residual) hooks->on_residual(l, x.value());
    }
    return x;
  }

  /// Logits for selected residual rows.
  Var<T> readout(Tape<T>& tape, Var<T> resid, std::span<const std::size_t> rows) const {
    const bool grad = tape.grad_enabled();
    Var<T> sel = numerics::gather_rows(resid, rows);
    Var<T> n = numerics::rms_norm(sel, tape.ref(p_.final_gain, grad), eps());
    return numerics::matmul_bt(n, tape.ref(p_.unembed, grad));
  }

  /// Full-sequence logits [seq x V].
  Tensor<T> forward(std::span<const TokenId> tokens, const Hooks<T>* hooks = nullptr) const {
    check_tokens(tokens);
    Tape<T> tape(false);
    const Segment seg{0, tokens.size()};
    Var<T> r = trunk(tape, tokens, std::span<const Segment>(&seg, 1), hooks);
    std::vector<std::size_t> rows(tokens.size());
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
    return readout(tape, r, rows).value();
  }

  /// Next-token logits at the final position [V].
  std::vector<T> last_logits(std::span<const TokenId> tokens, const Hooks<T>* hooks = nullptr) const {
    check_tokens(tokens);
    Tape<T> tape(false);
    const Segment seg{0, tokens.size()};
    Var<T> r = trunk(tape, tokens, std::span<const Segment>(&seg, 1), hooks);
    const std::size_t last = tokens.size() - 1;
    const auto& lv = readout(tape, r, std::span<const std::size_t>(&last, 1)).value();
    return {lv.data().begin(), lv.data().end()};
  }

  /// Logit-lens readout of an arbitrary residual vector through the final norm.
  std::vector<T> project(std::span<const T> residual) const {
    Tape<T> tape(false);
    Var<T> r = tape.leaf(Tensor<T>({1, cfg_.d_model}, std::vector<T>(residual.begin(), residual.end())));
    const std::size_t row = 0;
    const auto& lv = readout(tape, r, std::span<const std::size_t>(&row, 1)).value();
    return {lv.data().begin(), lv.data().end()};
  }

  /// Mean cross-entropy over the batch's supervised rows.
  Var<T> loss(Tape<T>& tape, const Batch& batch) const {
    check_tokens(batch.tokens);
    Var<T> r = trunk(tape, batch.tokens, batch.segments);
    Var<T> logits = readout(tape, r, batch.target_rows);
    return numerics::cross_entropy(logits, std::span<const std::int32_t>(batch.targets));
  }

  static constexpr T eps() { return T(1e-6); }

 private:
  void check_tokens(std::span<const TokenId> tokens) const {
    if (tokens.empty()) throw ContractError("forward: empty token sequence");
    for (TokenId t : tokens) {
      if (t < 0 || static_cast<std::size_t>(t) >= cfg_.vocab_size) {
        throw ContractError("forward: token id " + std::to_string(t) + " outside vocabulary");
      }
    }
  }

  void init() {
    std::mt19937_64 rng(cfg_.seed ^ 0x7EA5ull);
    std::normal_distribution<double> nd(0.0, 1.0);
    const std::size_t d = cfg_.d_model;
    auto normal = [&](numerics::Shape s, double stdev) {
      Tensor<T> t(std::move(s));
      for (T& v : t.data()) v = static_cast<T>(nd(rng) * stdev);
      return t;
    };
    const double out_std = 0.02 / std::sqrt(2.0 * static_cast<double>(cfg_.n_layers));
    p_.tok_emb = normal({cfg_.vocab_size, d}, 0.02);
    p_.pos_emb = normal({cfg_.max_seq, d}, 0.02);
    p_.blocks.clear();
    for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
      BlockParams<T> b;
      b.attn_gain = Tensor<T>({d}, T{1});
      b.wq = normal({d, d}, 0.02);
      b.wk = normal({d, d}, 0.02);
      b.wv = normal({d, d}, 0.02);
      b.wo = normal({d, d}, out_std);
      b.mlp_gain = Tensor<T>({d}, T{1});
      b.w_in = normal({d, cfg_.d_ff}, 0.02);
      b.w_out = normal({cfg_.d_ff, d}, out_std);
      p_.blocks.push_back(std::move(b));
    }
    p_.final_gain = Tensor<T>({d}, T{1});
    p_.unembed = normal({cfg_.vocab_size, d}, 0.02);
  }

  ModelConfig cfg_;
  Parameters<T> p_;
};

}  // namespace arbsteer::model
