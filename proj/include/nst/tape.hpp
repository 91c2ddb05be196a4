#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nst/error.hpp"
#include "nst/tensor.hpp"

namespace nst {

using NodeId = std::size_t;

enum class OpKind : std::uint8_t {
  Leaf,
  Conv2d,
  Relu,
  MaxPool,
  AvgPool,
  Upsample,
  Add,
  Sub,
  Mul,
  Div,
  Scale,
  AddScalar,
  Square,
  Sum,
  Mean,
  Gram,
  SoftmaxChannel,
  SoftmaxSpatial,
  Tanh,
  Softsign,
  ChannelMean,
  ChannelStd,
  Broadcast,
  L2Norm,
};

const char* op_name(OpKind kind);

template <typename Scalar>
class Tape;

template <typename Scalar>
struct TapeNode {
  using TensorT = BasicTensor<Scalar>;
  // Adds this node's contribution into each parent accumulator. A null
  // pointer means that parent does not need a gradient.
  using Backward = std::function<void(const Tape<Scalar>&, const TensorT& grad_out,
                                      std::span<TensorT* const> parent_grads)>;

  OpKind kind = OpKind::Leaf;
  std::vector<NodeId> inputs;
  std::shared_ptr<const TensorT> value;
  Backward backward;  // saved values live in the closure
  std::optional<TensorT> grad;
  bool requires_grad = false;
};

template <typename Scalar>
class BasicVar;

/// Append-only record of differentiable operations. Node ids are assigned in
/// creation order, so reverse id order is a valid reverse topological order.
///
/// A tape is confined to one thread. It is neither copyable nor movable
/// because Vars hold a pointer to it.
template <typename Scalar>
class Tape {
 public:
  using TensorT = BasicTensor<Scalar>;
  using Node = TapeNode<Scalar>;
  using Var = BasicVar<Scalar>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(TensorT value) {
    return constant(std::make_shared<const TensorT>(std::move(value)));
  }
  Var constant(std::shared_ptr<const TensorT> value);
  Var variable(TensorT value);

  /// Records an op result. Inputs must already be on this tape; the result
  /// requires a gradient iff any input does. Non-finite results throw.
  Var record(OpKind kind, std::vector<NodeId> inputs, TensorT value,
             typename Node::Backward backward);

  const Node& node(NodeId id) const {
    if (id >= nodes_.size()) {
      throw LookupError("tape node " + std::to_string(id) + " does not exist (tape has " +
                        std::to_string(nodes_.size()) + " nodes)");
    }
    return nodes_[id];
  }
  const TensorT& value(NodeId id) const { return *node(id).value; }
  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  /// Reverse-mode sweep from a scalar node. Returns d(loss)/d(leaf) for each
  /// requested leaf; leaves the loss does not depend on get zero tensors.
  std::map<NodeId, TensorT> backprop(NodeId loss, std::span<const NodeId> leaves);
  std::map<NodeId, TensorT> backprop(NodeId loss, std::initializer_list<NodeId> leaves) {
    return backprop(loss, std::span<const NodeId>(leaves.begin(), leaves.size()));
  }

 private:
  std::vector<Node> nodes_;
};

/// Handle to a value recorded on a tape.
template <typename Scalar>
class BasicVar {
 public:
  using TensorT = BasicTensor<Scalar>;

  BasicVar() = default;
  BasicVar(Tape<Scalar>* tape, NodeId id) : tape_(tape), id_(id) {}

  Tape<Scalar>& tape() const {
    if (tape_ == nullptr) throw ContractError("use of an unbound Var");
    return *tape_;
  }
  NodeId id() const { return id_; }
  const TensorT& value() const { return tape().value(id_); }
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const { return tape().node(id_).requires_grad; }

 private:
  Tape<Scalar>* tape_ = nullptr;
  NodeId id_ = 0;
};

using Var = BasicVar<float>;

template <typename Scalar>
BasicVar<Scalar> Tape<Scalar>::constant(std::shared_ptr<const TensorT> value) {
  if (!value) throw ContractError("null tensor passed to Tape::constant");
  require_finite(*value, "tape constant");
  Node node;
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

template <typename Scalar>
BasicVar<Scalar> Tape<Scalar>::variable(TensorT value) {
  require_finite(value, "tape variable");
  Node node;
  node.value = std::make_shared<const TensorT>(std::move(value));
  node.requires_grad = true;
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

template <typename Scalar>
BasicVar<Scalar> Tape<Scalar>::record(OpKind kind, std::vector<NodeId> inputs, TensorT value,
                                      typename Node::Backward backward) {
  bool needs_grad = false;
  for (NodeId in : inputs) needs_grad = needs_grad || node(in).requires_grad;
  require_finite(value, std::string("output of ") + op_name(kind));
  Node node;
  node.kind = kind;
  node.inputs = std::move(inputs);
  node.value = std::make_shared<const TensorT>(std::move(value));
  node.requires_grad = needs_grad;
  if (needs_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

template <typename Scalar>
std::map<NodeId, BasicTensor<Scalar>> Tape<Scalar>::backprop(NodeId loss,
                                                             std::span<const NodeId> leaves) {
  const Node& root = node(loss);
  if (root.value->size() != 1) {
    throw ContractError("backprop requires a scalar loss, got shape " + root.value->shape().str());
  }
  for (NodeId leaf : leaves) {
    const Node& n = node(leaf);
    if (!n.requires_grad) {
      throw ContractError("node " + std::to_string(leaf) + " is not a differentiable leaf");
    }
  }

  for (auto& n : nodes_) n.grad.reset();
  nodes_[loss].grad = TensorT::constant(root.value->shape(), Scalar(1));

  std::vector<TensorT*> parent_grads;
  for (NodeId id = loss + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.grad || !n.requires_grad || !n.backward) continue;
    parent_grads.assign(n.inputs.size(), nullptr);
    for (std::size_t i = 0; i < n.inputs.size(); ++i) {
      Node& parent = nodes_[n.inputs[i]];
      if (!parent.requires_grad) continue;
      if (!parent.grad) parent.grad = TensorT(parent.value->shape());
      parent_grads[i] = &*parent.grad;
    }
    n.backward(*this, *n.grad, parent_grads);
    n.grad.reset();  // interior gradients are not retained
  }

  std::map<NodeId, TensorT> out;
  for (NodeId leaf : leaves) {
    Node& n = nodes_[leaf];
    out.emplace(leaf, n.grad ? *n.grad : TensorT(n.value->shape()));
  }
  return out;
}

}  // namespace nst
