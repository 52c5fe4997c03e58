// why does constant-target regression plateau at ~1-2%?
#include <cstdio>
#include <cmath>

#include "flowguide/oracle.hpp"
#include "flowguide/trainguide.hpp"

using namespace flowguide;

int main() {
    CouplingSampler pairs(Density2D::standard_gaussian(),
                          Density2D::gaussian({1.0, -0.5}, {0.4, 0.0, 0.0, 0.4}));
    EnergyFn constant =
        EnergyFn::quadratic(Tensor({2}), Tensor({2, 2}), 1.0).with_offset(0.8);
    GmmFlowOracle prior = GmmFlowOracle::single(Tensor({2}, {1.0, -0.5}),
                                                Tensor({2, 2}, {0.4, 0, 0, 0.4}));
    auto field = prior.field();

    for (std::size_t steps : {2000u, 4000u, 8000u}) {
        GuidanceTrainConfig cfg;
        cfg.steps = steps;
        cfg.batch = 256;
        cfg.lr = 3e-3;
        cfg.z_hidden = {32, 32};
        cfg.g_hidden = {8};
        cfg.seed = 8;
        GuidanceNets nets =
            train_guidance(field, pairs, Schedule::linear(), constant, cfg);
        double tail = 0;
        for (std::size_t i = steps - 50; i < steps; ++i)
            tail += nets.z_loss_curve[i] / 50;
        Rng rng(9);
        double worst = 0, avg = 0;
        for (int i = 0; i < 40; ++i) {
            const double t = rng.uniform();
            Tensor xs;
            prior.sample_path(1, t, rng, xs);
            const double rel =
                std::abs(z_value(nets, xs.row(0), t) - std::exp(-0.8)) / std::exp(-0.8);
            worst = std::max(worst, rel);
            avg += rel / 40;
        }
        std::printf("steps=%zu: tail z-loss %.3e, worst rel %.4f, avg rel %.4f\n",
                    steps, tail, worst, avg);
    }
    return 0;
}
