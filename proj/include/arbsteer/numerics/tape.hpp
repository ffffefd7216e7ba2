#pragma once

#include <cstdint>
#include <cstring>
#include <deque>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "arbsteer/numerics/tensor.hpp"

namespace arbsteer::numerics {

template <class T>
class Tape;

/// Handle to a value recorded on a Tape.
template <class T>
struct Var {
  Tape<T>* tape = nullptr;
  std::uint32_t id = 0;

  const Tensor<T>& value() const { return tape->value(*this); }
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const { return tape->requires_grad(*this); }
};

/// Reverse-mode gradient tape. Nodes are appended in execution order and
/// backward() replays their closures in reverse. A tape built with
/// grad_enabled=false records values only, which is what inference uses.
template <class T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Tensor<T>& out_grad)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const noexcept { return grad_enabled_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Leaf that owns its value.
  Var<T> leaf(Tensor<T> value, bool requires_grad = false) {
    Node& n = nodes_.emplace_back();
    n.owned = std::move(value);
    n.requires_grad = requires_grad && grad_enabled_;
    return {this, static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  /// Leaf that borrows an externally owned tensor (model parameters). The
  /// referenced tensor must outlive the tape. Repeated refs to the same
  /// tensor share one node, so its gradient can be read back with grad_of().
  Var<T> ref(const Tensor<T>& value, bool requires_grad = false) {
    if (auto it = refs_.find(&value); it != refs_.end()) {
      Node& n = nodes_[it->second];
      n.requires_grad = n.requires_grad || (requires_grad && grad_enabled_);
      return {this, it->second};
    }
    Node& n = nodes_.emplace_back();
    n.ref = &value;
    n.requires_grad = requires_grad && grad_enabled_;
    const auto id = static_cast<std::uint32_t>(nodes_.size() - 1);
    refs_.emplace(&value, id);
    return {this, id};
  }

  /// Gradient for a tensor previously passed to ref(); zeros if it was never
  /// referenced or received no gradient.
  Tensor<T> grad_of(const Tensor<T>& value) {
    auto it = refs_.find(&value);
    if (it == refs_.end()) return Tensor<T>(value.shape());
    return grad({this, it->second});
  }

  /// Records an op result. `backward` receives the upstream gradient and must
  /// accumulate into its parents via accumulate().
  Var<T> record(Tensor<T> value, bool any_parent_requires_grad, Backward backward) {
    Node& n = nodes_.emplace_back();
    n.owned = std::move(value);
    n.requires_grad = grad_enabled_ && any_parent_requires_grad;
    if (n.requires_grad) n.backward = std::move(backward);
    return {this, static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  const Tensor<T>& value(Var<T> v) const {
    const Node& n = nodes_.at(v.id);
    return n.ref ? *n.ref : n.owned;
  }

  bool requires_grad(Var<T> v) const { return nodes_.at(v.id).requires_grad; }

  bool has_grad(Var<T> v) const { return !nodes_.at(v.id).grad.empty(); }

  /// Gradient of the last backward() root with respect to v. Zero-filled if
  /// nothing flowed into v.
  const Tensor<T>& grad(Var<T> v) {
    Node& n = nodes_.at(v.id);
    if (n.grad.empty()) n.grad = Tensor<T>(value(v).shape());
    return n.grad;
  }

  /// Adds `g` into v's gradient buffer; no-op when v does not require grad.
  void accumulate(Var<T> v, const Tensor<T>& g) {
    Node& n = nodes_.at(v.id);
    if (!n.requires_grad) return;
    if (n.grad.empty()) {
      n.grad = g;
      return;
    }
    auto dst = n.grad.data();
    auto src = g.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }

  /// Mutable gradient buffer for in-place accumulation; null when v needs none.
  Tensor<T>* grad_buffer(Var<T> v) {
    Node& n = nodes_.at(v.id);
    if (!n.requires_grad) return nullptr;
    if (n.grad.empty()) n.grad = Tensor<T>(value(v).shape());
    return &n.grad;
  }

  /// Backpropagates from a scalar root. Every recorded op at or before the
  /// root that lies on a gradient path is visited once, newest first.
  void backward(Var<T> root) {
    if (!grad_enabled_) throw ContractError("backward() on a tape without gradients");
    if (value(root).size() != 1) {
      throw ContractError("backward() root must be scalar, got shape " +
                          shape_str(value(root).shape()));
    }
    for (auto& n : nodes_) n.grad = Tensor<T>();
    Node& r = nodes_.at(root.id);
    if (!r.requires_grad) return;
    r.grad = Tensor<T>(value(root).shape(), T{1});
    visits_ = 0;
    for (std::size_t i = root.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.backward || n.grad.empty()) continue;
      ++visits_;
      n.backward(*this, n.grad);
    }
  }

  std::size_t last_backward_visits() const noexcept { return visits_; }

 private:
  struct Node {
    Tensor<T> owned;
    const Tensor<T>* ref = nullptr;
    Tensor<T> grad;
    bool requires_grad = false;
    Backward backward;
  };

  bool grad_enabled_;
  std::deque<Node> nodes_;
  std::unordered_map<const Tensor<T>*, std::uint32_t> refs_;
  std::size_t visits_ = 0;
};

template <class T>
bool bitwise_equal(const Tensor<T>& a, const Tensor<T>& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(T)) == 0;
}

}  // namespace arbsteer::numerics
