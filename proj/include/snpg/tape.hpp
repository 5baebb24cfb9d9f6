#pragma once

#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "snpg/ndarray.hpp"

namespace snpg {

template <typename T>
struct Parameter {
  std::string name;
  NdArray<T> value;
  NdArray<T> grad;

  void zero_grad() {
    if (grad.shape() != value.shape()) grad = NdArray<T>(value.shape());
    else grad.fill(T(0));
  }
};

// Handle to a value recorded on a Tape.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Records operations in execution order so gradients can be propagated in
// reverse. A tape is confined to one task and is consumed by backward():
// interior values and gradients are released as soon as they are propagated.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const NdArray<T>& grad_out)>;

  Var constant(NdArray<T> value) { return push(std::move(value), nullptr, false, true); }
  Var input(NdArray<T> value) { return push(std::move(value), nullptr, true, true); }

  // The parameter must outlive the tape; its value is read in place.
  Var param(Parameter<T>& p) {
    Var v = push(NdArray<T>(), nullptr, true, true);
    nodes_.back().param = &p;
    return v;
  }

  // Records an op output. `backward` runs only if some input needs a gradient.
  Var record(NdArray<T> value, std::initializer_list<Var> inputs, BackwardFn backward) {
    bool needs = false;
    for (Var in : inputs) needs = needs || requires_grad(in);
    return push(std::move(value), needs ? std::move(backward) : BackwardFn(), needs, false);
  }

  const NdArray<T>& value(Var v) const {
    const Node& n = node(v);
    return n.param ? n.param->value : n.value;
  }

  bool requires_grad(Var v) const { return node(v).requires_grad; }

  // Zero-initialized on first use; null when v needs no gradient.
  NdArray<T>* grad_buffer(Var v) {
    Node& n = node(v);
    if (!n.requires_grad) return nullptr;
    if (n.grad.empty()) n.grad = NdArray<T>(value(v).shape());
    return &n.grad;
  }

  // Gradient of a leaf after backward(); zeros when nothing reached it.
  NdArray<T> grad(Var v) const {
    const Node& n = node(v);
    if (!n.leaf) throw std::logic_error("Tape::grad: only leaf gradients are retained");
    if (n.grad.empty()) return NdArray<T>(value(v).shape());
    return n.grad;
  }

  void backward(Var loss) {
    if (!loss.valid() || loss.id >= static_cast<int>(nodes_.size())) {
      throw std::invalid_argument("Tape::backward: loss is not recorded on this tape");
    }
    if (consumed_) throw std::logic_error("Tape::backward: tape already consumed");
    if (value(loss).size() != 1) {
      throw std::invalid_argument("Tape::backward: loss must be a scalar, got shape " +
                                  shape_str(value(loss).shape()));
    }
    consumed_ = true;
    if (!requires_grad(loss)) return;
    grad_buffer(loss)->fill(T(1));
    for (int i = loss.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<size_t>(i)];
      if (n.leaf) continue;
      if (n.backward && !n.grad.empty()) {
        // The closure may touch other nodes; keep the gradient alive locally.
        NdArray<T> g = std::move(n.grad);
        n.backward(*this, g);
      }
      n.backward = nullptr;
      n.grad.release();
      n.value.release();
    }
    for (Node& n : nodes_) {
      if (!n.param || n.grad.empty()) continue;
      if (n.param->grad.shape() != n.param->value.shape()) n.param->zero_grad();
      T* dst = n.param->grad.data();
      const T* src = n.grad.data();
      for (int64_t k = 0; k < n.grad.size(); ++k) dst[k] += src[k];
    }
  }

  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    NdArray<T> value;
    NdArray<T> grad;
    BackwardFn backward;
    Parameter<T>* param = nullptr;
    bool requires_grad = false;
    bool leaf = false;
  };

  Var push(NdArray<T> value, BackwardFn fn, bool requires_grad, bool leaf) {
    if (consumed_) throw std::logic_error("Tape: cannot record after backward");
    nodes_.push_back(Node{std::move(value), NdArray<T>(), std::move(fn), nullptr, requires_grad, leaf});
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  const Node& node(Var v) const {
    if (!v.valid() || v.id >= static_cast<int>(nodes_.size())) {
      throw std::invalid_argument("Tape: variable " + std::to_string(v.id) + " not on tape");
    }
    return nodes_[static_cast<size_t>(v.id)];
  }
  Node& node(Var v) { return const_cast<Node&>(std::as_const(*this).node(v)); }

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

}  // namespace snpg
