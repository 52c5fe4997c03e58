#pragma once

#include <vector>

#include "flowguide/tensor.hpp"

namespace flowguide {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    AdamConfig config;
    std::vector<Tensor> first_moment;
    std::vector<Tensor> second_moment;
    long step = 0;

    static AdamState init(const std::vector<Tensor>& params, AdamConfig config = {});
};

// Standard bias-corrected Adam update, in place. Throws TrainingError (with
// the offending parameter index in the message) on non-finite gradients.
void adam_step(std::vector<Tensor>& params, const std::vector<Tensor>& grads,
               AdamState& state);

// Polyak parameter averaging; evaluation uses the averaged weights while
// optimization continues on the raw ones.
struct EmaState {
    double decay = 0.999;
    long step = 0;
    std::vector<Tensor> average;

    static EmaState init(const std::vector<Tensor>& params, double decay = 0.999);
    void update(const std::vector<Tensor>& params);
};

}  // namespace flowguide
