// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>
#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "srdepth/common.hpp"

namespace srdepth {

template <typename S>
class Tape;

template <typename S>
using Buffer = Eigen::Array<S, Eigen::Dynamic, 1>;

// Immutable dense rank-4 value. Copies are cheap (shared storage). A tensor
// is either a plain constant or attached to the Tape that recorded the
// operation producing it; attachment is what makes downstream ops
// differentiable through it.
template <typename S>
class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, Buffer<S> data) : shape_(shape) {
    check_nonnegative_shape(shape);
    require(data.size() == shape.numel(), "bad-shape",
            "data length " + std::to_string(data.size()) + " does not match shape " +
                shape.str());
    data_ = std::make_shared<Buffer<S>>(std::move(data));
  }

  static Tensor zeros(Shape shape) { return full(shape, S(0)); }

  static Tensor full(Shape shape, S value) {
    Buffer<S> b = Buffer<S>::Constant(shape.numel(), value);
    return Tensor(shape, std::move(b));
  }

  static Tensor from(Shape shape, const std::vector<S>& values) {
    Buffer<S> b(static_cast<Eigen::Index>(values.size()));
    for (Eigen::Index i = 0; i < b.size(); ++i) b[i] = values[static_cast<std::size_t>(i)];
    return Tensor(shape, std::move(b));
  }

  // Scalar constant, shape 1x1x1x1.
  static Tensor scalar(S value) { return full(Shape(1, 1, 1, 1), value); }

  const Shape& shape() const { return shape_; }
  long long numel() const { return shape_.numel(); }
  bool empty() const { return !data_; }

  const Buffer<S>& buf() const { return *data_; }
  const S* data() const { return data_->data(); }

  S at(int n, int c, int y, int x) const { return (*data_)[shape_.index(n, c, y, x)]; }
  S operator[](long long i) const { return (*data_)[i]; }

  // Scalar read for 1-element tensors.
  S value() const {
    require(numel() == 1, "bad-shape", "value() on non-scalar tensor " + shape_.str());
    return (*data_)[0];
  }

  bool requires_grad() const { return tape_ != nullptr; }
  Tape<S>* tape() const { return tape_; }
  int node() const { return node_; }

  bool all_finite() const {
    const Buffer<S>& b = *data_;
    for (Eigen::Index i = 0; i < b.size(); ++i)
      if (!std::isfinite(static_cast<double>(b[i]))) return false;
    return true;
  }

 private:
  friend class Tape<S>;
  Shape shape_{};
  std::shared_ptr<const Buffer<S>> data_;
  Tape<S>* tape_ = nullptr;
  int node_ = -1;
};

// Named learnable value with a gradient buffer of the same extent.
template <typename S>
struct Parameter {
  std::string name;
  Shape shape;
  Buffer<S> value;
  Buffer<S> grad;

  Parameter() = default;
  Parameter(std::string name_, Shape shape_)
      : name(std::move(name_)), shape(shape_) {
    value = Buffer<S>::Zero(shape.numel());
    grad = Buffer<S>::Zero(shape.numel());
  }

  void reset_grad() { grad.setZero(); }

  Tensor<S> constant() const { return Tensor<S>(shape, value); }
};

// Straight-line differentiation record. Operations append nodes in
// application order; backward() replays them in reverse. The recording is
// valid for exactly the graph that was executed (no control-flow capture).
template <typename S>
class Tape {
 public:
  using BackFn = std::function<void(Tape<S>&, const Buffer<S>&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Watches a parameter. Repeated calls for the same parameter return the
  // same leaf so gradient contributions from every use accumulate in one
  // place.
  Tensor<S> leaf(Parameter<S>& p) {
    auto it = leaf_index_.find(&p);
    if (it != leaf_index_.end()) return leaf_tensors_[static_cast<std::size_t>(it->second)];
    Tensor<S> t(p.shape, p.value);
    t.tape_ = this;
    t.node_ = add_node(p.shape.numel(), BackFn{}, &p);
    leaf_index_.emplace(&p, t.node_);
    leaf_tensors_.push_back(t);
    return t;
  }

  // Attaches a computed value to this tape with its reverse rule.
  Tensor<S> record(Tensor<S> value, BackFn back) {
    value.tape_ = this;
    value.node_ = add_node(value.numel(), std::move(back), nullptr);
    return value;
  }

  Buffer<S>& grad(int node) { return nodes_[static_cast<std::size_t>(node)].grad; }

  // Reverse sweep from a scalar loss. Node gradients are rebuilt from zero on
  // every call and each watched parameter's gradient is overwritten with
  // d loss / d parameter, so replaying without re-recording is idempotent.
  void backward(const Tensor<S>& loss) {
    require(loss.tape() == this && loss.node() >= 0, "bad-graph",
            "loss tensor is not recorded on this tape");
    require(loss.numel() == 1, "bad-shape",
            "backward requires a scalar loss, got shape " + loss.shape().str());
    for (Node& n : nodes_) {
      n.grad = Buffer<S>::Zero(n.numel);
    }
    nodes_[static_cast<std::size_t>(loss.node())].grad[0] = S(1);
    for (std::size_t i = nodes_.size(); i-- > 0;) {
      Node& n = nodes_[i];
      if (n.back) n.back(*this, n.grad);
    }
    for (Node& n : nodes_) {
      if (n.bound) n.bound->grad = n.grad;
    }
  }

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    long long numel;
    Buffer<S> grad;
    BackFn back;
    Parameter<S>* bound;
  };

  int add_node(long long numel, BackFn back, Parameter<S>* bound) {
    nodes_.push_back(Node{numel, Buffer<S>(), std::move(back), bound});
    return static_cast<int>(nodes_.size()) - 1;
  }

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter<S>*, int> leaf_index_;
  std::vector<Tensor<S>> leaf_tensors_;
};

// Common tape of a set of operands: all recorded operands must share one
// tape; returns nullptr when none is recorded.
template <typename S>
Tape<S>* joint_tape(std::initializer_list<const Tensor<S>*> operands) {
  Tape<S>* tape = nullptr;
  for (const Tensor<S>* t : operands) {
    if (!t->requires_grad()) continue;
    if (tape == nullptr) {
      tape = t->tape();
    } else {
      require(tape == t->tape(), "bad-graph", "operands recorded on different tapes");
    }
  }
  return tape;
}

template <typename A, typename B>
Tensor<B> cast(const Tensor<A>& t) {
  Buffer<B> out(t.buf().size());
  for (Eigen::Index i = 0; i < out.size(); ++i) out[i] = static_cast<B>(t.buf()[i]);
  return Tensor<B>(t.shape(), std::move(out));
}

}  // namespace srdepth
