// calibration scratch: training recipes for the three convergence tests
#include <cstdio>
#include <cmath>

#include "flowguide/flow.hpp"
#include "flowguide/numeric.hpp"
#include "flowguide/oracle.hpp"
#include "flowguide/trainguide.hpp"

using namespace flowguide;

static double rel_l2s(std::span<const double> a, std::span<const double> b) {
    double n = 0, d = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        n += (a[i] - b[i]) * (a[i] - b[i]);
        d += b[i] * b[i];
    }
    return std::sqrt(n / std::max(d, 1e-24));
}

int main() {
    // 1. CFM tracks oracle VF
    {
        Density2D target = Density2D::gaussian_mixture(
            {0.5, 0.5}, {{{-1.2, 0.0}}, {{1.2, 0.0}}},
            {{{0.2, 0.0, 0.0, 0.2}}, {{0.2, 0.0, 0.0, 0.2}}});
        GmmFlowOracle oracle = GmmFlowOracle::from_density(target);
        for (auto [hidden, steps, lr, batch] :
             {std::tuple<std::size_t, std::size_t, double, std::size_t>{64, 2500, 2e-3, 192},
              {64, 4000, 2e-3, 256},
              {96, 4000, 2e-3, 256}}) {
            CfmConfig cfg;
            cfg.target = target;
            cfg.hidden = {hidden, hidden};
            cfg.steps = steps;
            cfg.batch = batch;
            cfg.lr = lr;
            cfg.seed = 31;
            FlowModel flow = cfm_train(cfg);
            Rng rng(32);
            double total = 0;
            int count = 0;
            std::vector<double> rels;
            for (double t : {0.25, 0.5, 0.75}) {
                Tensor xs;
                oracle.sample_path(60, t, rng, xs);
                for (int i = 0; i < 60; ++i) {
                    Tensor v = mlp_forward(flow.model, xs.row(i), t);
                    Tensor vo = oracle.vt(xs.row(i), t);
                    const double r = rel_l2s(v.span(), vo.span());
                    total += r;
                    rels.push_back(r);
                    ++count;
                }
            }
            std::printf("cfm hidden=%zu steps=%zu: avg rel %.4f median %.4f\n", hidden,
                        steps, total / count, median(rels));
        }
    }

    // 2. z-net on constant J
    {
        CouplingSampler pairs(Density2D::standard_gaussian(),
                              Density2D::gaussian({1.0, -0.5}, {0.4, 0.0, 0.0, 0.4}));
        EnergyFn constant = EnergyFn::quadratic(Tensor({2}), Tensor({2, 2}), 1.0)
                                .with_offset(0.8);
        GmmFlowOracle prior = GmmFlowOracle::single(Tensor({2}, {1.0, -0.5}),
                                                    Tensor({2, 2}, {0.4, 0, 0, 0.4}));
        auto field = prior.field();
        for (auto [steps, lr, hidden] :
             {std::tuple<std::size_t, double, std::size_t>{2000, 3e-3, 32},
              {2500, 5e-3, 16},
              {3000, 3e-3, 32}}) {
            GuidanceTrainConfig cfg;
            cfg.steps = steps;
            cfg.batch = 256;
            cfg.lr = lr;
            cfg.z_hidden = {hidden, hidden};
            cfg.g_hidden = {8};
            cfg.seed = 8;
            GuidanceNets nets = train_guidance(field, pairs, Schedule::linear(),
                                               constant, cfg);
            Rng rng(9);
            double worst = 0;
            for (int i = 0; i < 20; ++i) {
                const double t = rng.uniform();
                Tensor xs;
                prior.sample_path(1, t, rng, xs);
                worst = std::max(worst, std::abs(z_value(nets, xs.row(0), t) -
                                                 std::exp(-0.8)) /
                                            std::exp(-0.8));
            }
            std::printf("z const steps=%zu lr=%.0e hidden=%zu: worst rel %.4f\n", steps,
                        lr, hidden, worst);
        }
    }

    // 3. cov model on the single-Gaussian toy
    {
        GmmFlowOracle oracle = GmmFlowOracle::single(Tensor({2}, {1.0, -0.5}),
                                                     Tensor({2, 2}, {0.4, 0, 0, 0.4}));
        CouplingSampler pairs(Density2D::standard_gaussian(),
                              Density2D::gaussian({1.0, -0.5}, {0.4, 0.0, 0.0, 0.4}));
        auto field = oracle.field();
        GuidanceContext ctx;
        ctx.field = &field;
        ctx.schedule = Schedule::linear();
        for (auto [steps, hidden, batch, lr] :
             {std::tuple<std::size_t, std::size_t, std::size_t, double>{5000, 48, 512, 2e-3},
              {5000, 64, 384, 2e-3},
              {6000, 64, 512, 2e-3}}) {
            CovTrainConfig cfg;
            cfg.steps = steps;
            cfg.batch = batch;
            cfg.hidden = {hidden, hidden};
            cfg.lr = lr;
            cfg.seed = 33;
            CovModel cov = train_cov_model(pairs, Schedule::linear(), cfg);
            Rng rng(34);
            std::vector<double> rels, m2_errs;
            for (int rep = 0; rep < 100; ++rep) {
                const double t = 0.15 + 0.7 * rng.uniform();
                Tensor x;
                oracle.sample_path(1, t, rng, x);
                Tensor got = cov_model_sigma(cov, ctx, x.row(0), t);
                auto post = oracle.posterior(x.row(0), t);
                Tensor want = post.covariance();
                rels.push_back(rel_l2s(got.span(), want.span()));
                // M error
                Tensor m2 = mlp_forward(cov.m2_net, x.row(0), t);
                Tensor pm = post.mean();
                const double m00 = want.at(0, 0) + pm[0] * pm[0];
                m2_errs.push_back(std::abs(m2[0] - m00));
            }
            std::printf("cov steps=%zu hidden=%zu: median rel %.4f  median |M00 err| %.4f\n",
                        steps, hidden, median(rels), median(m2_errs));
        }
    }
    return 0;
}
