#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <vector>

#include "arbsteer/numerics/tape.hpp"

namespace arbsteer::numerics {

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using Map = Eigen::Map<RowMat<T>>;
template <class T>
using CMap = Eigen::Map<const RowMat<T>>;

template <class T>
CMap<T> cmap(const Tensor<T>& t, std::size_t rows, std::size_t cols) {
  return CMap<T>(t.data().data(), static_cast<Eigen::Index>(rows),
                 static_cast<Eigen::Index>(cols));
}
template <class T>
Map<T> map(Tensor<T>& t, std::size_t rows, std::size_t cols) {
  return Map<T>(t.data().data(), static_cast<Eigen::Index>(rows),
                static_cast<Eigen::Index>(cols));
}

inline void require_rank2(const Shape& s, const char* op) {
  if (s.size() != 2) {
    throw ContractError(std::string(op) + ": expected a matrix, got shape " + shape_str(s));
  }
}

template <class T>
void check_no_nan(const Tensor<T>& x, const char* op) {
  for (T v : x.data()) {
    if (std::isnan(v)) throw ContractError(std::string(op) + ": NaN input");
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Plain tensor kernels (no tape).

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_rank2(a.shape(), "matmul");
  detail::require_rank2(b.shape(), "matmul");
  if (a.dim(1) != b.dim(0)) {
    throw ContractError("matmul: shape mismatch " + shape_str(a.shape()) + " x " +
                        shape_str(b.shape()));
  }
  Tensor<T> c({a.dim(0), b.dim(1)});
  detail::map(c, a.dim(0), b.dim(1)).noalias() =
      detail::cmap(a, a.dim(0), a.dim(1)) * detail::cmap(b, b.dim(0), b.dim(1));
  return c;
}

/// a[m x k] * b[n x k]^T
template <class T>
Tensor<T> matmul_bt(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_rank2(a.shape(), "matmul_bt");
  detail::require_rank2(b.shape(), "matmul_bt");
  if (a.dim(1) != b.dim(1)) {
    throw ContractError("matmul_bt: shape mismatch " + shape_str(a.shape()) + " x " +
                        shape_str(b.shape()) + "^T");
  }
  Tensor<T> c({a.dim(0), b.dim(0)});
  detail::map(c, a.dim(0), b.dim(0)).noalias() =
      detail::cmap(a, a.dim(0), a.dim(1)) * detail::cmap(b, b.dim(0), b.dim(1)).transpose();
  return c;
}

/// Numerically stable in-place softmax of one slice.
template <class T>
void softmax_inplace(std::span<T> x) {
  T m = -std::numeric_limits<T>::infinity();
  for (T v : x) m = std::max(m, v);
  T s{0};
  for (T& v : x) {
    v = std::exp(v - m);
    s += v;
  }
  for (T& v : x) v /= s;
}

template <class T>
T dot(std::span<const T> a, std::span<const T> b) {
  T s{0};
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// ---------------------------------------------------------------------------
// Recorded ops.

template <class T>
Var<T> matmul(Var<T> a, Var<T> b) {
  Tape<T>& tape = *a.tape;
  const auto& av = a.value();
  const auto& bv = b.value();
  Tensor<T> out = matmul(av, bv);
  return tape.record(std::move(out), a.requires_grad() || b.requires_grad(),
                     [a, b](Tape<T>& t, const Tensor<T>& g) {
                       const auto& av = a.value();
                       const auto& bv = b.value();
                       const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
                       auto gm = detail::cmap(g, m, n);
                       if (auto* ga = t.grad_buffer(a)) {
                         detail::map(*ga, m, k).noalias() += gm * detail::cmap(bv, k, n).transpose();
                       }
                       if (auto* gb = t.grad_buffer(b)) {
                         detail::map(*gb, k, n).noalias() += detail::cmap(av, m, k).transpose() * gm;
                       }
                     });
}

template <class T>
Var<T> matmul_bt(Var<T> a, Var<T> b) {
  Tape<T>& tape = *a.tape;
  Tensor<T> out = matmul_bt(a.value(), b.value());
  return tape.record(std::move(out), a.requires_grad() || b.requires_grad(),
                     [a, b](Tape<T>& t, const Tensor<T>& g) {
                       const auto& av = a.value();
                       const auto& bv = b.value();
                       const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(0);
                       auto gm = detail::cmap(g, m, n);
                       if (auto* ga = t.grad_buffer(a)) {
                         detail::map(*ga, m, k).noalias() += gm * detail::cmap(bv, n, k);
                       }
                       if (auto* gb = t.grad_buffer(b)) {
                         detail::map(*gb, n, k).noalias() += gm.transpose() * detail::cmap(av, m, k);
                       }
                     });
}

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.shape() != bv.shape()) {
    throw ContractError("add: shape mismatch " + shape_str(av.shape()) + " vs " +
                        shape_str(bv.shape()));
  }
  Tensor<T> out = av;
  auto o = out.data();
  auto bd = bv.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bd[i];
  return a.tape->record(std::move(out), a.requires_grad() || b.requires_grad(),
                        [a, b](Tape<T>& t, const Tensor<T>& g) {
                          t.accumulate(a, g);
                          t.accumulate(b, g);
                        });
}

template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.shape() != bv.shape()) {
    throw ContractError("mul: shape mismatch " + shape_str(av.shape()) + " vs " +
                        shape_str(bv.shape()));
  }
  Tensor<T> out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return a.tape->record(std::move(out), a.requires_grad() || b.requires_grad(),
                        [a, b](Tape<T>& t, const Tensor<T>& g) {
                          const auto& av = a.value();
                          const auto& bv = b.value();
                          if (auto* ga = t.grad_buffer(a)) {
                            for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * bv[i];
                          }
                          if (auto* gb = t.grad_buffer(b)) {
                            for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * av[i];
                          }
                        });
}

template <class T>
Var<T> scale(Var<T> a, T s) {
  Tensor<T> out = a.value();
  for (T& v : out.data()) v *= s;
  return a.tape->record(std::move(out), a.requires_grad(), [a, s](Tape<T>& t, const Tensor<T>& g) {
    if (auto* ga = t.grad_buffer(a)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * s;
    }
  });
}

template <class T>
Var<T> sum(Var<T> a) {
  T s{0};
  for (T v : a.value().data()) s += v;
  return a.tape->record(Tensor<T>({1}, s), a.requires_grad(),
                        [a](Tape<T>& t, const Tensor<T>& g) {
                          if (auto* ga = t.grad_buffer(a)) {
                            for (T& v : ga->data()) v += g[0];
                          }
                        });
}

/// Softmax along `axis`, stabilised by max subtraction.
template <class T>
Var<T> softmax(Var<T> x, std::size_t axis) {
  const auto& xv = x.value();
  const Shape& s = xv.shape();
  if (axis >= s.size()) {
    throw ContractError("softmax: axis " + std::to_string(axis) + " out of range for " +
                        shape_str(s));
  }
  if (s[axis] == 0) throw ContractError("softmax: empty axis");
  detail::check_no_nan(xv, "softmax");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t n = s[axis];
  Tensor<T> out = xv;
  std::vector<T> buf(n);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      for (std::size_t j = 0; j < n; ++j) buf[j] = out[base + j * inner];
      softmax_inplace(std::span<T>(buf));
      for (std::size_t j = 0; j < n; ++j) out[base + j * inner] = buf[j];
    }
  }
  return x.tape->record(std::move(out), x.requires_grad(),
                        [x, outer, inner, n](Tape<T>& t, const Tensor<T>& g) {
                          auto* gx = t.grad_buffer(x);
                          if (!gx) return;
                          // Probabilities are recomputed from x.
                          const auto& xv = x.value();
                          std::vector<T> p(n);
                          for (std::size_t o = 0; o < outer; ++o) {
                            for (std::size_t in = 0; in < inner; ++in) {
                              const std::size_t base = o * n * inner + in;
                              for (std::size_t j = 0; j < n; ++j) p[j] = xv[base + j * inner];
                              softmax_inplace(std::span<T>(p));
                              T dotgp{0};
                              for (std::size_t j = 0; j < n; ++j) dotgp += g[base + j * inner] * p[j];
                              for (std::size_t j = 0; j < n; ++j) {
                                (*gx)[base + j * inner] += p[j] * (g[base + j * inner] - dotgp);
                              }
                            }
                          }
                        });
}

/// Root-mean-square normalisation over the last axis followed by a gain.
template <class T>
Var<T> rms_norm(Var<T> x, Var<T> gain, T eps = T(1e-6)) {
  if (eps < T{0}) throw ContractError("rms_norm: eps must be non-negative");
  const auto& xv = x.value();
  const std::size_t d = xv.cols();
  if (gain.value().size() != d) {
    throw ContractError("rms_norm: gain " + shape_str(gain.shape()) + " does not match " +
                        shape_str(xv.shape()));
  }
  const std::size_t rows = xv.rows();
  const auto& gv = gain.value();
  Tensor<T> out(xv.shape());
  std::vector<T> inv(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    auto xr = xv.row(r);
    T ms{0};
    for (T v : xr) ms += v * v;
    ms /= static_cast<T>(d);
    const T denom = std::sqrt(ms + eps);
    inv[r] = denom > T{0} ? T{1} / denom : T{0};
    auto o = out.row(r);
    for (std::size_t j = 0; j < d; ++j) o[j] = xr[j] * inv[r] * gv[j];
  }
  return x.tape->record(
      std::move(out), x.requires_grad() || gain.requires_grad(),
      [x, gain, inv = std::move(inv), d, rows](Tape<T>& t, const Tensor<T>& g) {
        const auto& xv = x.value();
        const auto& gv = gain.value();
        auto* gx = t.grad_buffer(x);
        auto* gg = t.grad_buffer(gain);
        for (std::size_t r = 0; r < rows; ++r) {
          auto xr = xv.row(r);
          auto gr = g.row(r);
          const T ir = inv[r];
          if (gg) {
            for (std::size_t j = 0; j < d; ++j) (*gg)[j] += gr[j] * xr[j] * ir;
          }
          if (gx) {
            T m{0};
            for (std::size_t j = 0; j < d; ++j) m += gr[j] * gv[j] * xr[j] * ir;
            m /= static_cast<T>(d);
            auto dx = gx->row(r);
            for (std::size_t j = 0; j < d; ++j) dx[j] += ir * (gr[j] * gv[j] - xr[j] * ir * m);
          }
        }
      });
}

/// Tanh-approximated GELU.
template <class T>
Var<T> gelu(Var<T> x) {
  using Arr = Eigen::Array<T, Eigen::Dynamic, 1>;
  static constexpr T c = T(0.7978845608028654);  // sqrt(2/pi)
  static constexpr T k = T(0.044715);
  const auto& xv = x.value();
  const auto n = static_cast<Eigen::Index>(xv.size());
  Eigen::Map<const Arr> xa(xv.data().data(), n);
  Tensor<T> out(xv.shape());
  Eigen::Map<Arr>(out.data().data(), n) = T(0.5) * xa * (T{1} + (c * (xa + k * xa.cube())).tanh());
  return x.tape->record(std::move(out), x.requires_grad(), [x, n](Tape<T>& t, const Tensor<T>& g) {
    auto* gx = t.grad_buffer(x);
    if (!gx) return;
    Eigen::Map<const Arr> xa(x.value().data().data(), n);
    Eigen::Map<const Arr> ga(g.data().data(), n);
    const Arr th = (c * (xa + k * xa.cube())).tanh();
    const Arr du = c * (T{1} + T{3} * k * xa.square());
    Eigen::Map<Arr>(gx->data().data(), n) +=
        ga * (T(0.5) * (T{1} + th) + T(0.5) * xa * (T{1} - th.square()) * du);
  });
}

/// Row gather from an embedding table.
template <class T>
Var<T> embedding(Var<T> table, std::span<const std::int32_t> ids) {
  const auto& tv = table.value();
  detail::require_rank2(tv.shape(), "embedding");
  const std::size_t d = tv.dim(1);
  Tensor<T> out({ids.size(), d});
  std::vector<std::int32_t> idx(ids.begin(), ids.end());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || static_cast<std::size_t>(idx[i]) >= tv.dim(0)) {
      throw ContractError("embedding: index " + std::to_string(idx[i]) + " out of range " +
                          std::to_string(tv.dim(0)));
    }
    auto src = tv.row(static_cast<std::size_t>(idx[i]));
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return table.tape->record(std::move(out), table.requires_grad(),
                            [table, idx = std::move(idx), d](Tape<T>& t, const Tensor<T>& g) {
                              auto* gt = t.grad_buffer(table);
                              if (!gt) return;
                              for (std::size_t i = 0; i < idx.size(); ++i) {
                                auto dst = gt->row(static_cast<std::size_t>(idx[i]));
                                auto src = g.row(i);
                                for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
                              }
                            });
}

template <class T>
Var<T> gather_rows(Var<T> x, std::span<const std::size_t> rows) {
  std::vector<std::int32_t> ids;
  ids.reserve(rows.size());
  for (std::size_t r : rows) ids.push_back(static_cast<std::int32_t>(r));
  return embedding(x, std::span<const std::int32_t>(ids));
}

/// Mean negative log-likelihood of `targets` under row-wise softmax(logits).
template <class T>
Var<T> cross_entropy(Var<T> logits, std::span<const std::int32_t> targets) {
  const auto& lv = logits.value();
  detail::require_rank2(lv.shape(), "cross_entropy");
  const std::size_t n = lv.dim(0), vocab = lv.dim(1);
  if (targets.size() != n) {
    throw ContractError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                        std::to_string(n) + " rows");
  }
  Tensor<T> probs(lv.shape());
  T loss{0};
  for (std::size_t r = 0; r < n; ++r) {
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= vocab) {
      throw ContractError("cross_entropy: target " + std::to_string(targets[r]) +
                          " out of range for vocabulary of " + std::to_string(vocab));
    }
    auto lr = lv.row(r);
    T m = -std::numeric_limits<T>::infinity();
    for (T v : lr) m = std::max(m, v);
    T s{0};
    auto pr = probs.row(r);
    for (std::size_t j = 0; j < vocab; ++j) {
      pr[j] = std::exp(lr[j] - m);
      s += pr[j];
    }
    for (T& p : pr) p /= s;
    loss += (std::log(s) + m) - lr[static_cast<std::size_t>(targets[r])];
  }
  loss /= static_cast<T>(n);
  std::vector<std::int32_t> tg(targets.begin(), targets.end());
  return logits.tape->record(
      Tensor<T>({1}, loss), logits.requires_grad(),
      [logits, probs = std::move(probs), tg = std::move(tg), n, vocab](Tape<T>& t,
                                                                      const Tensor<T>& g) {
        auto* gl = t.grad_buffer(logits);
        if (!gl) return;
        const T s = g[0] / static_cast<T>(n);
        for (std::size_t r = 0; r < n; ++r) {
          auto pr = probs.row(r);
          auto dr = gl->row(r);
          for (std::size_t j = 0; j < vocab; ++j) dr[j] += s * pr[j];
          dr[static_cast<std::size_t>(tg[r])] -= s;
        }
      });
}

/// One packed sequence inside a batch: rows [offset, offset + length).
struct Segment {
  std::size_t offset = 0;
  std::size_t length = 0;
};

/// Multi-head causal self-attention over packed sequences. q, k, v are
/// [tokens x d]; heads split d evenly. When `probs_out` is set, one
/// [heads x len x len] probability tensor per segment is appended to it.
template <class T>
Var<T> causal_attention(Var<T> q, Var<T> k, Var<T> v, std::span<const Segment> segments,
                        std::size_t heads, std::vector<Tensor<T>>* probs_out = nullptr) {
  using Block = Eigen::Map<const detail::RowMat<T>, 0, Eigen::OuterStride<>>;
  using MBlock = Eigen::Map<detail::RowMat<T>, 0, Eigen::OuterStride<>>;
  const auto& qv = q.value();
  const auto& kv = k.value();
  const auto& vv = v.value();
  detail::require_rank2(qv.shape(), "causal_attention");
  if (kv.shape() != qv.shape() || vv.shape() != qv.shape()) {
    throw ContractError("causal_attention: q/k/v shapes differ");
  }
  const std::size_t d = qv.dim(1);
  if (heads == 0 || d % heads != 0) {
    throw ContractError("causal_attention: d=" + std::to_string(d) +
                        " not divisible by heads=" + std::to_string(heads));
  }
  for (const Segment& seg : segments) {
    if (seg.offset + seg.length > qv.dim(0)) throw ContractError("causal_attention: segment out of range");
  }
  const std::size_t dh = d / heads;
  const T sc = T{1} / std::sqrt(static_cast<T>(dh));
  const auto D = static_cast<Eigen::Index>(d);
  const auto DH = static_cast<Eigen::Index>(dh);
  auto block = [&](const Tensor<T>& t, const Segment& s, std::size_t h) {
    return Block(t.data().data() + s.offset * d + h * dh, static_cast<Eigen::Index>(s.length), DH,
                 Eigen::OuterStride<>(D));
  };

  std::vector<Tensor<T>> probs;
  probs.reserve(segments.size());
  Tensor<T> out(qv.shape());
  for (const Segment& seg : segments) {
    const auto len = static_cast<Eigen::Index>(seg.length);
    Tensor<T> p({heads, seg.length, seg.length});
    for (std::size_t h = 0; h < heads; ++h) {
      detail::Map<T> P(p.data().data() + h * seg.length * seg.length, len, len);
      P.noalias() = block(qv, seg, h) * block(kv, seg, h).transpose();
      for (Eigen::Index i = 0; i < len; ++i) {
        T* row = &P(i, 0);
        for (Eigen::Index j = i + 1; j < len; ++j) row[j] = T{0};
        for (Eigen::Index j = 0; j <= i; ++j) row[j] *= sc;
        softmax_inplace(std::span<T>(row, static_cast<std::size_t>(i + 1)));
      }
      MBlock(out.data().data() + seg.offset * d + h * dh, len, DH, Eigen::OuterStride<>(D)).noalias() =
          P * block(vv, seg, h);
    }
    if (probs_out) probs_out->push_back(p);
    probs.push_back(std::move(p));
  }

  const bool rg = q.requires_grad() || k.requires_grad() || v.requires_grad();
  std::vector<Segment> segs(segments.begin(), segments.end());
  return q.tape->record(
      std::move(out), rg,
      [q, k, v, segs = std::move(segs), probs = std::move(probs), heads, dh, d, sc](
          Tape<T>& t, const Tensor<T>& g) {
        const auto D = static_cast<Eigen::Index>(d);
        const auto DH = static_cast<Eigen::Index>(dh);
        auto block = [&](const Tensor<T>& x, const Segment& s, std::size_t h) {
          return Block(x.data().data() + s.offset * d + h * dh, static_cast<Eigen::Index>(s.length),
                       DH, Eigen::OuterStride<>(D));
        };
        auto mblock = [&](Tensor<T>& x, const Segment& s, std::size_t h) {
          return MBlock(x.data().data() + s.offset * d + h * dh, static_cast<Eigen::Index>(s.length),
                        DH, Eigen::OuterStride<>(D));
        };
        auto* gq = t.grad_buffer(q);
        auto* gk = t.grad_buffer(k);
        auto* gv = t.grad_buffer(v);
        detail::RowMat<T> dP, dS;
        for (std::size_t s = 0; s < segs.size(); ++s) {
          const Segment& seg = segs[s];
          const auto len = static_cast<Eigen::Index>(seg.length);
          for (std::size_t h = 0; h < heads; ++h) {
            detail::CMap<T> P(probs[s].data().data() + h * seg.length * seg.length, len, len);
            const auto G = block(g, seg, h);
            if (gv) mblock(*gv, seg, h).noalias() += P.transpose() * G;
            if (!gq && !gk) continue;
            dP.noalias() = G * block(v.value(), seg, h).transpose();
            const auto rowdot = (dP.array() * P.array()).rowwise().sum().eval();
            dS = (P.array() * (dP.array().colwise() - rowdot) * sc).matrix();
            if (gq) mblock(*gq, seg, h).noalias() += dS * block(k.value(), seg, h);
            if (gk) mblock(*gk, seg, h).noalias() += dS.transpose() * block(q.value(), seg, h);
          }
        }
      });
}

}  // namespace arbsteer::numerics
