#include "flowguide/tape.hpp"

#include <cmath>

#include "flowguide/errors.hpp"

namespace flowguide {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

}  // namespace

double activation_apply(ActivationKind kind, double x) {
    switch (kind) {
        case ActivationKind::Tanh: return std::tanh(x);
        case ActivationKind::Relu: return x > 0.0 ? x : 0.0;
        case ActivationKind::Gelu: return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
        case ActivationKind::Softplus:
            if (x > 30.0) return x;
            if (x < -30.0) return std::exp(x);
            return std::log1p(std::exp(x));
    }
    return 0.0;
}

double activation_derivative(ActivationKind kind, double x, double y) {
    switch (kind) {
        case ActivationKind::Tanh: return 1.0 - y * y;
        case ActivationKind::Relu: return x > 0.0 ? 1.0 : 0.0;
        case ActivationKind::Gelu: {
            const double phi = kInvSqrt2Pi * std::exp(-0.5 * x * x);
            return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) + x * phi;
        }
        case ActivationKind::Softplus: {
            if (x > 30.0) return 1.0;
            const double e = std::exp(x);
            return e / (1.0 + e);
        }
    }
    return 0.0;
}

Tape::NodeId Tape::push(Node node) {
    nodes_.push_back(std::move(node));
    return static_cast<NodeId>(nodes_.size() - 1);
}

Tape::NodeId Tape::leaf(Tensor value) {
    Node n;
    n.op = Op::Leaf;
    n.value = std::move(value);
    return push(std::move(n));
}

Tape::NodeId Tape::add(NodeId a, NodeId b) {
    Node n;
    n.op = Op::Add;
    n.a = a;
    n.b = b;
    compute(n);
    return push(std::move(n));
}

Tape::NodeId Tape::sub(NodeId a, NodeId b) {
    Node n;
    n.op = Op::Sub;
    n.a = a;
    n.b = b;
    compute(n);
    return push(std::move(n));
}

Tape::NodeId Tape::mul(NodeId a, NodeId b) {
    Node n;
    n.op = Op::Mul;
    n.a = a;
    n.b = b;
    compute(n);
    return push(std::move(n));
}

Tape::NodeId Tape::scale(NodeId a, double c) {
    Node n;
    n.op = Op::Scale;
    n.a = a;
    n.aux = c;
    compute(n);
    return push(std::move(n));
}

Tape::NodeId Tape::square(NodeId a) {
    Node n;
    n.op = Op::Square;
    n.a = a;
    compute(n);
    return push(std::move(n));
}

Tape::NodeId Tape::linear(NodeId x, NodeId w, NodeId b) {
    Node n;
    n.op = Op::Linear;
    n.a = x;
    n.b = w;
    n.c = b;
    compute(n);
    return push(std::move(n));
}

Tape::NodeId Tape::activation(NodeId a, ActivationKind kind) {
    Node n;
    switch (kind) {
        case ActivationKind::Tanh: n.op = Op::Tanh; break;
        case ActivationKind::Relu: n.op = Op::Relu; break;
        case ActivationKind::Gelu: n.op = Op::Gelu; break;
        case ActivationKind::Softplus: n.op = Op::Softplus; break;
    }
    n.a = a;
    compute(n);
    return push(std::move(n));
}

Tape::NodeId Tape::concat_cols(NodeId a, NodeId b) {
    Node n;
    n.op = Op::ConcatCols;
    n.a = a;
    n.b = b;
    compute(n);
    return push(std::move(n));
}

Tape::NodeId Tape::sum(NodeId a) {
    Node n;
    n.op = Op::Sum;
    n.a = a;
    compute(n);
    return push(std::move(n));
}

Tape::NodeId Tape::mean(NodeId a) {
    Node n;
    n.op = Op::Mean;
    n.a = a;
    compute(n);
    return push(std::move(n));
}

Tape::NodeId Tape::dot(NodeId a, NodeId b) {
    Node n;
    n.op = Op::Dot;
    n.a = a;
    n.b = b;
    compute(n);
    return push(std::move(n));
}

void Tape::compute(Node& n) const {
    auto val = [&](NodeId id) -> const Tensor& { return nodes_[id].value; };
    switch (n.op) {
        case Op::Leaf:
            break;
        case Op::Add:
            n.value = val(n.a) + val(n.b);
            break;
        case Op::Sub:
            n.value = val(n.a) - val(n.b);
            break;
        case Op::Mul:
            n.value = hadamard(val(n.a), val(n.b));
            break;
        case Op::Scale:
            n.value = n.aux * val(n.a);
            break;
        case Op::Square:
            n.value = hadamard(val(n.a), val(n.a));
            break;
        case Op::Linear: {
            const Tensor& x = val(n.a);
            const Tensor& w = val(n.b);
            const Tensor& bias = val(n.c);
            const std::size_t in = w.shape()[1], out = w.shape()[0];
            if (x.rank() == 1) {
                if (x.size() != in)
                    throw DimensionError("linear: input width " + x.shape_string() +
                                         " does not match weight " + w.shape_string());
                Tensor y({out});
                for (std::size_t o = 0; o < out; ++o) {
                    double s = bias[o];
                    const double* wr = w.data() + o * in;
                    for (std::size_t j = 0; j < in; ++j) s += wr[j] * x[j];
                    y[o] = s;
                }
                n.value = std::move(y);
            } else {
                if (x.shape()[1] != in)
                    throw DimensionError("linear: input width " + x.shape_string() +
                                         " does not match weight " + w.shape_string());
                const std::size_t rows = x.shape()[0];
                Tensor y({rows, out});
                for (std::size_t r = 0; r < rows; ++r) {
                    const double* xr = x.data() + r * in;
                    double* yr = y.data() + r * out;
                    for (std::size_t o = 0; o < out; ++o) {
                        double s = bias[o];
                        const double* wr = w.data() + o * in;
                        for (std::size_t j = 0; j < in; ++j) s += wr[j] * xr[j];
                        yr[o] = s;
                    }
                }
                n.value = std::move(y);
            }
            break;
        }
        case Op::Tanh:
        case Op::Relu:
        case Op::Gelu:
        case Op::Softplus: {
            ActivationKind kind = n.op == Op::Tanh   ? ActivationKind::Tanh
                                  : n.op == Op::Relu ? ActivationKind::Relu
                                  : n.op == Op::Gelu ? ActivationKind::Gelu
                                                     : ActivationKind::Softplus;
            Tensor y = val(n.a);
            for (std::size_t i = 0; i < y.size(); ++i)
                y[i] = activation_apply(kind, y[i]);
            n.value = std::move(y);
            break;
        }
        case Op::ConcatCols: {
            const Tensor& a = val(n.a);
            const Tensor& b = val(n.b);
            if (a.rank() == 1) {
                Tensor y({a.size() + b.size()});
                for (std::size_t i = 0; i < a.size(); ++i) y[i] = a[i];
                for (std::size_t i = 0; i < b.size(); ++i) y[a.size() + i] = b[i];
                n.value = std::move(y);
            } else {
                if (a.shape()[0] != b.shape()[0])
                    throw DimensionError("concat_cols: row mismatch");
                const std::size_t rows = a.shape()[0];
                const std::size_t ca = a.shape()[1], cb = b.shape()[1];
                Tensor y({rows, ca + cb});
                for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t j = 0; j < ca; ++j) y.at(r, j) = a.at(r, j);
                    for (std::size_t j = 0; j < cb; ++j) y.at(r, ca + j) = b.at(r, j);
                }
                n.value = std::move(y);
            }
            break;
        }
        case Op::Sum: {
            double s = 0.0;
            for (std::size_t i = 0; i < val(n.a).size(); ++i) s += val(n.a)[i];
            n.value = Tensor({1}, {s});
            break;
        }
        case Op::Mean: {
            double s = 0.0;
            const std::size_t cnt = val(n.a).size();
            for (std::size_t i = 0; i < cnt; ++i) s += val(n.a)[i];
            n.value = Tensor({1}, {s / static_cast<double>(cnt)});
            break;
        }
        case Op::Dot: {
            const Tensor& a = val(n.a);
            const Tensor& b = val(n.b);
            if (!a.same_shape(b)) throw DimensionError("dot: shape mismatch");
            double s = 0.0;
            for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
            n.value = Tensor({1}, {s});
            break;
        }
    }
}

Tensor& Tape::grad_of(NodeId id, const Tensor& like) {
    Node& n = nodes_[id];
    if (!n.seen) {
        n.adjoint = Tensor(like.shape());
        n.seen = true;
    }
    return n.adjoint;
}

void Tape::backprop(Node& n) {
    const Tensor& g = n.adjoint;
    auto val = [&](NodeId id) -> const Tensor& { return nodes_[id].value; };
    switch (n.op) {
        case Op::Leaf:
            break;
        case Op::Add: {
            Tensor& da = grad_of(n.a, val(n.a));
            Tensor& db = grad_of(n.b, val(n.b));
            for (std::size_t i = 0; i < g.size(); ++i) {
                da[i] += g[i];
                db[i] += g[i];
            }
            break;
        }
        case Op::Sub: {
            Tensor& da = grad_of(n.a, val(n.a));
            Tensor& db = grad_of(n.b, val(n.b));
            for (std::size_t i = 0; i < g.size(); ++i) {
                da[i] += g[i];
                db[i] -= g[i];
            }
            break;
        }
        case Op::Mul: {
            Tensor& da = grad_of(n.a, val(n.a));
            Tensor& db = grad_of(n.b, val(n.b));
            for (std::size_t i = 0; i < g.size(); ++i) {
                da[i] += g[i] * val(n.b)[i];
                db[i] += g[i] * val(n.a)[i];
            }
            break;
        }
        case Op::Scale: {
            Tensor& da = grad_of(n.a, val(n.a));
            for (std::size_t i = 0; i < g.size(); ++i) da[i] += n.aux * g[i];
            break;
        }
        case Op::Square: {
            Tensor& da = grad_of(n.a, val(n.a));
            for (std::size_t i = 0; i < g.size(); ++i)
                da[i] += 2.0 * g[i] * val(n.a)[i];
            break;
        }
        case Op::Linear: {
            const Tensor& x = val(n.a);
            const Tensor& w = val(n.b);
            const std::size_t in = w.shape()[1], out = w.shape()[0];
            Tensor& dx = grad_of(n.a, x);
            Tensor& dw = grad_of(n.b, w);
            Tensor& db = grad_of(n.c, val(n.c));
            const std::size_t rows = x.rank() == 1 ? 1 : x.shape()[0];
            for (std::size_t r = 0; r < rows; ++r) {
                const double* gr = g.data() + r * out;
                const double* xr = x.data() + r * in;
                double* dxr = dx.data() + r * in;
                for (std::size_t o = 0; o < out; ++o) {
                    const double go = gr[o];
                    if (go == 0.0) continue;
                    const double* wr = w.data() + o * in;
                    double* dwr = dw.data() + o * in;
                    for (std::size_t j = 0; j < in; ++j) {
                        dxr[j] += go * wr[j];
                        dwr[j] += go * xr[j];
                    }
                    db[o] += go;
                }
            }
            break;
        }
        case Op::Tanh:
        case Op::Relu:
        case Op::Gelu:
        case Op::Softplus: {
            ActivationKind kind = n.op == Op::Tanh   ? ActivationKind::Tanh
                                  : n.op == Op::Relu ? ActivationKind::Relu
                                  : n.op == Op::Gelu ? ActivationKind::Gelu
                                                     : ActivationKind::Softplus;
            Tensor& da = grad_of(n.a, val(n.a));
            for (std::size_t i = 0; i < g.size(); ++i)
                da[i] += g[i] * activation_derivative(kind, val(n.a)[i], n.value[i]);
            break;
        }
        case Op::ConcatCols: {
            const Tensor& a = val(n.a);
            const Tensor& b = val(n.b);
            Tensor& da = grad_of(n.a, a);
            Tensor& db = grad_of(n.b, b);
            if (a.rank() == 1) {
                for (std::size_t i = 0; i < a.size(); ++i) da[i] += g[i];
                for (std::size_t i = 0; i < b.size(); ++i) db[i] += g[a.size() + i];
            } else {
                const std::size_t rows = a.shape()[0];
                const std::size_t ca = a.shape()[1], cb = b.shape()[1];
                for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t j = 0; j < ca; ++j) da.at(r, j) += g.at(r, j);
                    for (std::size_t j = 0; j < cb; ++j) db.at(r, j) += g.at(r, ca + j);
                }
            }
            break;
        }
        case Op::Sum: {
            Tensor& da = grad_of(n.a, val(n.a));
            for (std::size_t i = 0; i < da.size(); ++i) da[i] += g[0];
            break;
        }
        case Op::Mean: {
            Tensor& da = grad_of(n.a, val(n.a));
            const double gg = g[0] / static_cast<double>(da.size());
            for (std::size_t i = 0; i < da.size(); ++i) da[i] += gg;
            break;
        }
        case Op::Dot: {
            Tensor& da = grad_of(n.a, val(n.a));
            Tensor& db = grad_of(n.b, val(n.b));
            for (std::size_t i = 0; i < da.size(); ++i) {
                da[i] += g[0] * val(n.b)[i];
                db[i] += g[0] * val(n.a)[i];
            }
            break;
        }
    }
}

void Tape::backward(NodeId output, const Tensor& seed) {
    if (output < 0 || output >= static_cast<NodeId>(nodes_.size()))
        throw ContractError("backward: unknown node");
    if (!seed.same_shape(nodes_[output].value))
        throw DimensionError("backward: seed shape " + seed.shape_string() +
                             " does not match output " +
                             nodes_[output].value.shape_string());
    for (auto& n : nodes_) {
        n.seen = false;
        n.adjoint = Tensor();
    }
    nodes_[output].adjoint = seed;
    nodes_[output].seen = true;
    for (NodeId id = output; id >= 0; --id) {
        if (!nodes_[id].seen) continue;
        backprop(nodes_[id]);
    }
    // Leaves never reached keep empty adjoints; normalize them to zeros so
    // callers can read any leaf.
    for (auto& n : nodes_) {
        if (!n.seen) {
            n.adjoint = Tensor(n.value.shape());
            n.seen = true;
        }
    }
}

void Tape::backward_scalar(NodeId output) {
    if (nodes_[output].value.size() != 1)
        throw ContractError("gradient output must be a scalar node");
    backward(output, Tensor({1}, {1.0}));
}

std::vector<Tensor> Tape::gradients(NodeId output, std::span<const NodeId> leaves) {
    backward_scalar(output);
    std::vector<Tensor> out;
    out.reserve(leaves.size());
    for (NodeId id : leaves) out.push_back(nodes_[id].adjoint);
    return out;
}

void Tape::replay() {
    for (auto& n : nodes_)
        if (n.op != Op::Leaf) compute(n);
}

}  // namespace flowguide
