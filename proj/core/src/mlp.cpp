#include "flowguide/mlp.hpp"

#include <cmath>

#include "flowguide/errors.hpp"

namespace flowguide {

ActivationKind activation_from_string(const std::string& name) {
    if (name == "tanh") return ActivationKind::Tanh;
    if (name == "relu") return ActivationKind::Relu;
    if (name == "gelu") return ActivationKind::Gelu;
    throw ValidationError("unknown activation '" + name + "' (expected tanh|relu|gelu)");
}

std::string activation_to_string(ActivationKind kind) {
    switch (kind) {
        case ActivationKind::Tanh: return "tanh";
        case ActivationKind::Relu: return "relu";
        case ActivationKind::Gelu: return "gelu";
        case ActivationKind::Softplus: return "softplus";
    }
    return "tanh";
}

std::size_t MlpModel::param_count() const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < weights.size(); ++i)
        n += weights[i].size() + biases[i].size();
    return n;
}

std::vector<double> MlpModel::flatten_params() const {
    std::vector<double> flat;
    flat.reserve(param_count());
    for (std::size_t i = 0; i < weights.size(); ++i) {
        flat.insert(flat.end(), weights[i].data(), weights[i].data() + weights[i].size());
        flat.insert(flat.end(), biases[i].data(), biases[i].data() + biases[i].size());
    }
    return flat;
}

void MlpModel::load_params(std::span<const double> flat) {
    if (flat.size() != param_count())
        throw DimensionError("load_params: expected " + std::to_string(param_count()) +
                             " values, got " + std::to_string(flat.size()));
    std::size_t pos = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        for (std::size_t j = 0; j < weights[i].size(); ++j) weights[i][j] = flat[pos++];
        for (std::size_t j = 0; j < biases[i].size(); ++j) biases[i][j] = flat[pos++];
    }
}

MlpModel MlpModel::make(std::vector<std::size_t> layer_sizes, ActivationKind activation,
                        std::size_t time_embedding, Rng& rng) {
    if (layer_sizes.size() < 2)
        throw ValidationError("MlpModel: need at least input and output widths");
    MlpModel m;
    m.layer_sizes = std::move(layer_sizes);
    m.activation = activation;
    m.time_embedding = time_embedding;
    const std::size_t layers = m.layer_sizes.size() - 1;
    for (std::size_t l = 0; l < layers; ++l) {
        std::size_t in = m.layer_sizes[l];
        if (l == 0) in += m.time_features();
        const std::size_t out = m.layer_sizes[l + 1];
        Tensor w({out, in});
        const double scale = std::sqrt(2.0 / static_cast<double>(in + out));
        for (std::size_t i = 0; i < w.size(); ++i) w[i] = scale * rng.normal();
        m.weights.push_back(std::move(w));
        m.biases.push_back(Tensor({out}));
    }
    return m;
}

void time_features(const MlpModel& model, double t, std::span<double> out) {
    if (model.time_embedding == 0) {
        out[0] = t;
        return;
    }
    // linear frequency ladder pi * (k+1), sin/cos interleaved; t in [0,1] so
    // the highest mode stays smooth enough for gradient-based guidance
    const std::size_t pairs = model.time_embedding / 2;
    std::size_t idx = 0;
    for (std::size_t k = 0; k < pairs; ++k) {
        const double freq = 3.14159265358979323846 * static_cast<double>(k + 1);
        out[idx++] = std::sin(freq * t);
        out[idx++] = std::cos(freq * t);
    }
    if (idx < model.time_embedding) out[idx] = t;  // odd feature count
}

namespace {

Tensor embed_input(const MlpModel& model, std::span<const double> x, double t) {
    if (x.size() != model.input_dim())
        throw DimensionError("forward: input width " + std::to_string(x.size()) +
                             " does not match model input " +
                             std::to_string(model.input_dim()));
    const std::size_t tf = model.time_features();
    Tensor in({x.size() + tf});
    for (std::size_t i = 0; i < x.size(); ++i) in[i] = x[i];
    time_features(model, t, std::span<double>(in.data() + x.size(), tf));
    return in;
}

}  // namespace

Tensor mlp_forward(const MlpModel& model, std::span<const double> x, double t) {
    Tensor h = embed_input(model, x, t);
    const std::size_t layers = model.weights.size();
    for (std::size_t l = 0; l < layers; ++l) {
        const Tensor& w = model.weights[l];
        const Tensor& b = model.biases[l];
        Tensor y({w.shape()[0]});
        for (std::size_t o = 0; o < y.size(); ++o) {
            double s = b[o];
            const double* wr = w.data() + o * w.shape()[1];
            for (std::size_t j = 0; j < h.size(); ++j) s += wr[j] * h[j];
            y[o] = s;
        }
        if (l + 1 < layers)
            for (std::size_t i = 0; i < y.size(); ++i)
                y[i] = activation_apply(model.activation, y[i]);
        h = std::move(y);
    }
    return h;
}

Tensor mlp_forward_batch(const MlpModel& model, const Tensor& x,
                         std::span<const double> t) {
    if (x.rank() != 2 || x.shape()[1] != model.input_dim())
        throw DimensionError("forward_batch: bad input shape " + x.shape_string());
    const std::size_t n = x.shape()[0];
    Tensor out({n, model.output_dim()});
    for (std::size_t i = 0; i < n; ++i) {
        Tensor y = mlp_forward(model, x.row(i), t[i]);
        for (std::size_t j = 0; j < y.size(); ++j) out.at(i, j) = y[j];
    }
    return out;
}

Tape::NodeId mlp_forward_tape(const MlpModel& model, Tape& tape, Tape::NodeId x_node,
                              std::span<const double> t,
                              std::vector<Tape::NodeId>& param_leaves) {
    const Tensor& x = tape.value(x_node);
    const bool batched = x.rank() == 2;
    const std::size_t rows = batched ? x.shape()[0] : 1;
    if ((batched ? x.shape()[1] : x.size()) != model.input_dim())
        throw DimensionError("forward_tape: input width mismatch");
    if (t.size() != rows)
        throw DimensionError("forward_tape: one t per row required");

    const std::size_t tf = model.time_features();
    Tensor emb = batched ? Tensor({rows, tf}) : Tensor({tf});
    for (std::size_t r = 0; r < rows; ++r)
        time_features(model, t[r], std::span<double>(emb.data() + r * tf, tf));
    Tape::NodeId h = tape.concat_cols(x_node, tape.leaf(std::move(emb)));

    const std::size_t layers = model.weights.size();
    for (std::size_t l = 0; l < layers; ++l) {
        Tape::NodeId w = tape.leaf(model.weights[l]);
        Tape::NodeId b = tape.leaf(model.biases[l]);
        param_leaves.push_back(w);
        param_leaves.push_back(b);
        h = tape.linear(h, w, b);
        if (l + 1 < layers) h = tape.activation(h, model.activation);
    }
    return h;
}

Tensor mlp_vjp(const MlpModel& model, std::span<const double> x, double t,
               std::span<const double> cotangent) {
    if (cotangent.size() != model.output_dim())
        throw DimensionError("vjp: cotangent width " + std::to_string(cotangent.size()) +
                             " does not match output " +
                             std::to_string(model.output_dim()));
    Tape tape;
    Tape::NodeId x_node = tape.leaf(Tensor({x.size()}, {x.begin(), x.end()}));
    std::vector<Tape::NodeId> params;
    const double tv = t;
    Tape::NodeId out = mlp_forward_tape(model, tape, x_node, std::span<const double>(&tv, 1), params);
    tape.backward(out, Tensor({cotangent.size()}, {cotangent.begin(), cotangent.end()}));
    return tape.adjoint(x_node);
}

Tensor mlp_jacobian(const MlpModel& model, std::span<const double> x, double t,
                    std::size_t cap) {
    const std::size_t out_dim = model.output_dim();
    const std::size_t in_dim = model.input_dim();
    if (out_dim > cap || in_dim > cap)
        throw ContractError("jacobian: dimension exceeds dense cap " +
                            std::to_string(cap) + "; use vjp directly");
    Tensor jac({out_dim, in_dim});
    std::vector<double> e(out_dim, 0.0);
    for (std::size_t i = 0; i < out_dim; ++i) {
        e[i] = 1.0;
        Tensor row = mlp_vjp(model, x, t, e);
        for (std::size_t j = 0; j < in_dim; ++j) jac.at(i, j) = row[j];
        e[i] = 0.0;
    }
    return jac;
}

}  // namespace flowguide
