#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "flowguide/rng.hpp"
#include "flowguide/tape.hpp"
#include "flowguide/tensor.hpp"

namespace flowguide {

ActivationKind activation_from_string(const std::string& name);
std::string activation_to_string(ActivationKind kind);

// Fully connected network (x, t) -> R^out. The time coordinate enters as
// `time_embedding` sinusoidal features concatenated to x; with
// time_embedding == 0, t is appended raw.
struct MlpModel {
    std::vector<std::size_t> layer_sizes;  // data_in, hidden..., out
    ActivationKind activation = ActivationKind::Tanh;
    std::size_t time_embedding = 16;
    std::vector<Tensor> weights;  // per layer, (out x in); first layer sees in + time features
    std::vector<Tensor> biases;   // per layer, (out)

    std::size_t input_dim() const { return layer_sizes.front(); }
    std::size_t output_dim() const { return layer_sizes.back(); }
    std::size_t time_features() const { return time_embedding == 0 ? 1 : time_embedding; }
    std::size_t param_count() const;

    std::vector<double> flatten_params() const;              // weights before biases, per layer
    void load_params(std::span<const double> flat);

    static MlpModel make(std::vector<std::size_t> layer_sizes, ActivationKind activation,
                         std::size_t time_embedding, Rng& rng);
};

// Sinusoidal features of t; writes model.time_features() values.
void time_features(const MlpModel& model, double t, std::span<double> out);

// Plain forward pass for a single input x (length input_dim).
Tensor mlp_forward(const MlpModel& model, std::span<const double> x, double t);

// Batched plain forward: x (n x input_dim), t per row.
Tensor mlp_forward_batch(const MlpModel& model, const Tensor& x,
                         std::span<const double> t);

// Tape construction for training: records the forward pass of a batch and
// returns the output node. Parameter leaves (weights then biases, per layer)
// are appended to `param_leaves`.
Tape::NodeId mlp_forward_tape(const MlpModel& model, Tape& tape, Tape::NodeId x_node,
                              std::span<const double> t,
                              std::vector<Tape::NodeId>& param_leaves);

// cotangent^T (d forward / d x): pullback through the network at (x, t).
Tensor mlp_vjp(const MlpModel& model, std::span<const double> x, double t,
               std::span<const double> cotangent);

inline constexpr std::size_t kDenseJacobianCap = 64;

// Full (out x in) Jacobian assembled from vjp calls with basis cotangents.
// Throws ContractError above the dense cap; callers needing larger systems
// must use mlp_vjp directly.
Tensor mlp_jacobian(const MlpModel& model, std::span<const double> x, double t,
                    std::size_t cap = kDenseJacobianCap);

}  // namespace flowguide
