// residual (centered) second-moment regression experiment
#include <cstdio>
#include <cmath>
#include "flowguide/flow.hpp"
#include "flowguide/numeric.hpp"
#include "flowguide/optim.hpp"
#include "flowguide/oracle.hpp"
using namespace flowguide;
static double rel_l2s(std::span<const double> a, std::span<const double> b) {
    double n = 0, d = 0;
    for (std::size_t i = 0; i < a.size(); ++i) { n += (a[i]-b[i])*(a[i]-b[i]); d += b[i]*b[i]; }
    return std::sqrt(n / std::max(d, 1e-24));
}
int main() {
    const double s2 = 0.4;
    GmmFlowOracle oracle = GmmFlowOracle::single(Tensor({2}, {1.0, -0.5}),
                                                 Tensor({2, 2}, {s2, 0, 0, s2}));
    CouplingSampler pairs(Density2D::standard_gaussian(),
                          Density2D::gaussian({1.0, -0.5}, {s2, 0.0, 0.0, s2}));
    auto field = oracle.field();
    const Schedule sched = Schedule::linear();

    Rng rng = Rng::from_path(33, {0x31});
    MlpModel net = MlpModel::make({2, 64, 64, 3}, ActivationKind::Tanh, 16, rng);
    std::vector<Tensor> params;
    for (std::size_t l = 0; l < net.weights.size(); ++l) {
        params.push_back(net.weights[l]);
        params.push_back(net.biases[l]);
    }
    AdamConfig acfg; acfg.lr = 2e-3;
    AdamState adam = AdamState::init(params, acfg);
    EmaState ema = EmaState::init(params);

    const std::size_t steps = 3000, b = 256;
    Tensor x0, x1;
    std::vector<double> zero(2, 0.0), v(2), x1hat(2);
    for (std::size_t step = 0; step < steps; ++step) {
        adam.config.lr = acfg.lr * cosine_anneal(step, steps);
        pairs.sample_pairs(b, rng, x0, x1);
        Tensor xt({b, 2}), target({b, 3});
        std::vector<double> ts(b);
        for (std::size_t i = 0; i < b; ++i) {
            ts[i] = rng.uniform();
            sample_conditional_path(x0.row(i), x1.row(i), ts[i], zero, sched, xt.row(i));
            field.eval(xt.row(i), std::min(ts[i], 1.0 - 1e-4), v);
            estimate_x1(xt.row(i), std::min(ts[i], 1.0 - 1e-4), v, sched, x1hat);
            const double r0 = x1.at(i, 0) - x1hat[0], r1 = x1.at(i, 1) - x1hat[1];
            target.at(i, 0) = r0 * r0;
            target.at(i, 1) = r0 * r1;
            target.at(i, 2) = r1 * r1;
        }
        for (std::size_t l = 0, p = 0; l < net.weights.size(); ++l) {
            net.weights[l] = params[p++];
            net.biases[l] = params[p++];
        }
        Tape tape;
        Tape::NodeId xn = tape.leaf(xt);
        std::vector<Tape::NodeId> leaves;
        Tape::NodeId pred = mlp_forward_tape(net, tape, xn, ts, leaves);
        Tape::NodeId loss = tape.scale(tape.sum(tape.square(tape.sub(pred, tape.leaf(target)))), 1.0 / b);
        auto grads = tape.gradients(loss, leaves);
        adam_step(params, grads, adam);
        ema.update(params);
    }
    for (std::size_t l = 0, p = 0; l < net.weights.size(); ++l) {
        net.weights[l] = ema.average[p++];
        net.biases[l] = ema.average[p++];
    }

    Rng erng(34);
    std::vector<double> rels;
    double bucket[7] = {0}; int bn[7] = {0};
    for (int rep = 0; rep < 300; ++rep) {
        const double t = 0.15 + 0.7 * erng.uniform();
        Tensor x; oracle.sample_path(1, t, erng, x);
        Tensor packed = mlp_forward(net, x.row(0), t);
        Tensor got({2, 2}, {packed[0], packed[1], packed[1], packed[2]});
        Tensor want = oracle.posterior(x.row(0), t).covariance();
        rels.push_back(rel_l2s(got.span(), want.span()));
        const int bidx = std::min(6, (int)((t - 0.15) / 0.1));
        bucket[bidx] += rels.back(); bn[bidx] += 1;
    }
    std::printf("centered regression: median rel %.4f | t-profile:", median(rels));
    for (int i = 0; i < 7; ++i) std::printf(" %.3f", bucket[i] / std::max(bn[i], 1));
    std::printf("\n");
    return 0;
}
