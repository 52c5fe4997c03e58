#include "flowguide/optim.hpp"

#include <cmath>
#include <string>

#include "flowguide/errors.hpp"

namespace flowguide {

AdamState AdamState::init(const std::vector<Tensor>& params, AdamConfig config) {
    AdamState s;
    s.config = config;
    s.first_moment.reserve(params.size());
    s.second_moment.reserve(params.size());
    for (const auto& p : params) {
        s.first_moment.emplace_back(p.shape());
        s.second_moment.emplace_back(p.shape());
    }
    return s;
}

void adam_step(std::vector<Tensor>& params, const std::vector<Tensor>& grads,
               AdamState& state) {
    if (params.size() != grads.size() || params.size() != state.first_moment.size())
        throw DimensionError("adam_step: parameter/gradient/state count mismatch");
    for (std::size_t p = 0; p < params.size(); ++p) {
        if (!params[p].same_shape(grads[p]))
            throw DimensionError("adam_step: gradient shape mismatch at parameter " +
                                 std::to_string(p));
        if (!tensor_all_finite(grads[p]))
            throw TrainingError("adam_step: non-finite gradient at parameter " +
                                std::to_string(p), state.step);
    }
    state.step += 1;
    const AdamConfig& c = state.config;
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
    for (std::size_t p = 0; p < params.size(); ++p) {
        Tensor& m = state.first_moment[p];
        Tensor& v = state.second_moment[p];
        Tensor& w = params[p];
        const Tensor& g = grads[p];
        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
            v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            w[i] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
        }
    }
}

EmaState EmaState::init(const std::vector<Tensor>& params, double decay) {
    EmaState s;
    s.decay = decay;
    s.average = params;
    return s;
}

void EmaState::update(const std::vector<Tensor>& params) {
    step += 1;
    // warmup: effectively an arithmetic mean until the horizon ~1/(1-decay)
    const double d = std::min(decay, static_cast<double>(step) /
                                         static_cast<double>(step + 10));
    for (std::size_t p = 0; p < params.size(); ++p)
        for (std::size_t i = 0; i < params[p].size(); ++i)
            average[p][i] = d * average[p][i] + (1.0 - d) * params[p][i];
}

}  // namespace flowguide
