#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "flowguide/tensor.hpp"

namespace flowguide {

enum class ActivationKind { Tanh, Relu, Gelu, Softplus };

// Reverse-mode autodiff over Tensor-valued nodes. A Tape is rebuilt per
// forward pass; nodes are recorded in topological order by construction, so
// backward() is a single reverse sweep. Ops are coarse (whole affine layers,
// whole activations) to keep the node count per MLP forward small.
class Tape {
public:
    using NodeId = std::int32_t;

    NodeId leaf(Tensor value);

    NodeId add(NodeId a, NodeId b);
    NodeId sub(NodeId a, NodeId b);
    NodeId mul(NodeId a, NodeId b);  // elementwise
    NodeId scale(NodeId a, double c);
    NodeId square(NodeId a);
    // y = x * W^T + b, with x of shape (n x in) or (in), W (out x in), b (out).
    NodeId linear(NodeId x, NodeId w, NodeId b);
    NodeId activation(NodeId a, ActivationKind kind);
    // column concatenation; rank-1 inputs concatenate plainly
    NodeId concat_cols(NodeId a, NodeId b);
    NodeId sum(NodeId a);   // -> scalar
    NodeId mean(NodeId a);  // -> scalar
    NodeId dot(NodeId a, NodeId b);

    const Tensor& value(NodeId id) const { return nodes_[id].value; }
    std::size_t node_count() const { return nodes_.size(); }

    // Seed the adjoint of `output` and run the reverse sweep. The seed shape
    // must match the output value shape (this is the vjp entry point).
    void backward(NodeId output, const Tensor& seed);

    // Reverse sweep from a scalar output with seed 1. Throws ContractError if
    // the output is not a scalar.
    void backward_scalar(NodeId output);

    const Tensor& adjoint(NodeId id) const { return nodes_[id].adjoint; }

    // Gradient of a scalar output with respect to the given leaves.
    std::vector<Tensor> gradients(NodeId output, std::span<const NodeId> leaves);

    // Recompute every non-leaf value from the recorded inputs. Used to check
    // the record/replay invariant; replayed values are bit-identical.
    void replay();

private:
    enum class Op : std::uint8_t {
        Leaf, Add, Sub, Mul, Scale, Square, Linear, Tanh, Relu, Gelu,
        Softplus, ConcatCols, Sum, Mean, Dot
    };

    struct Node {
        Op op = Op::Leaf;
        NodeId a = -1, b = -1, c = -1;
        double aux = 0.0;
        Tensor value;
        Tensor adjoint;
        bool seen = false;  // reached during backward
    };

    NodeId push(Node node);
    void compute(Node& node) const;
    void backprop(Node& node);
    Tensor& grad_of(NodeId id, const Tensor& like);

    std::vector<Node> nodes_;
};

double activation_apply(ActivationKind kind, double x);
double activation_derivative(ActivationKind kind, double x, double y);

}  // namespace flowguide
