// temporary smoke harness, not part of the build
#include <cstdio>
#include <cmath>
#include <vector>

#include "flowguide/assignment.hpp"
#include "flowguide/density.hpp"
#include "flowguide/energy.hpp"
#include "flowguide/guidance.hpp"
#include "flowguide/mlp.hpp"
#include "flowguide/numeric.hpp"
#include "flowguide/oracle.hpp"
#include "flowguide/tape.hpp"
#include "flowguide/wasserstein.hpp"

using namespace flowguide;

int main() {
    // 1. tape gradient vs finite differences on a random MLP scalar head
    {
        Rng rng(7);
        MlpModel m = MlpModel::make({2, 16, 16, 1}, ActivationKind::Tanh, 8, rng);
        std::vector<double> x = {0.3, -0.7};
        const double t = 0.4;

        Tape tape;
        Tape::NodeId xn = tape.leaf(Tensor({2}, {x[0], x[1]}));
        std::vector<Tape::NodeId> leaves;
        Tape::NodeId out = mlp_forward_tape(m, tape, xn, std::span<const double>(&t, 1), leaves);
        tape.backward_scalar(out);
        Tensor gx = tape.adjoint(xn);

        double max_rel = 0.0;
        const double h = 1e-5;
        for (int j = 0; j < 2; ++j) {
            std::vector<double> xp = x, xm = x;
            xp[j] += h; xm[j] -= h;
            double fd = (mlp_forward(m, xp, t)[0] - mlp_forward(m, xm, t)[0]) / (2 * h);
            max_rel = std::max(max_rel, std::abs(fd - gx[j]) / std::max(std::abs(fd), 1e-8));
        }
        std::printf("tape-vs-fd input grad rel err: %.3e\n", max_rel);

        // parameter gradients
        tape.backward_scalar(out);
        double max_rel_p = 0.0;
        Tensor w0 = m.weights[0];
        for (std::size_t k = 0; k < 5; ++k) {
            MlpModel mp = m, mm = m;
            mp.weights[0][k] += h;
            mm.weights[0][k] -= h;
            double fd = (mlp_forward(mp, x, t)[0] - mlp_forward(mm, x, t)[0]) / (2 * h);
            double ad = tape.adjoint(leaves[0])[k];
            max_rel_p = std::max(max_rel_p, std::abs(fd - ad) / std::max(std::abs(fd), 1e-8));
        }
        std::printf("tape-vs-fd param grad rel err: %.3e\n", max_rel_p);
    }

    // 2. assignment vs brute force n=4
    {
        Rng rng(3);
        bool ok = true;
        for (int trial = 0; trial < 200; ++trial) {
            Tensor cost({4, 4});
            for (std::size_t i = 0; i < 16; ++i) cost[i] = rng.uniform();
            auto perm = solve_assignment(cost);
            double best = 1e300;
            std::vector<std::size_t> p = {0, 1, 2, 3};
            do {
                double c = 0;
                for (int i = 0; i < 4; ++i) c += cost.at(i, p[i]);
                best = std::min(best, c);
            } while (std::next_permutation(p.begin(), p.end()));
            if (std::abs(assignment_cost(cost, perm) - best) > 1e-12) ok = false;
        }
        std::printf("assignment vs brute force: %s\n", ok ? "OK" : "FAIL");
        Tensor c2({2, 2}, {4, 1, 2, 3});
        auto perm2 = solve_assignment(c2);
        std::printf("cost [[4,1],[2,3]] -> perm (%zu,%zu) total %.1f\n", perm2[0], perm2[1],
                    assignment_cost(c2, perm2));
    }

    // 3. oracle tilted vs quadrature on a 2-component GMM + quadratic J
    {
        Density2D target = Density2D::gaussian_mixture(
            {0.4, 0.6},
            {{{-1.0, 0.5}}, {{1.2, -0.3}}},
            {{{0.3, 0.05, 0.05, 0.2}}, {{0.25, -0.04, -0.04, 0.35}}});
        GmmFlowOracle oracle = GmmFlowOracle::from_density(target);
        EnergyFn energy = EnergyFn::quadratic(Tensor({2}, {0.5, 0.5}),
                                              Tensor::identity(2), 0.7);
        std::vector<double> xt = {0.2, -0.1};
        const double t = 0.55;
        auto tilt = oracle.tilted(energy, xt, t);
        auto quad = quadrature_guidance(target, Density2D::standard_gaussian(), energy,
                                        xt, t);
        double rel_g = norm((tilt.guidance - quad.guidance).span()) /
                       std::max(norm(tilt.guidance.span()), 1e-12);
        std::printf("tilted vs quadrature: g rel %.3e  z rel %.3e (warn=%d est_err=%.2e)\n",
                    rel_g, std::abs(tilt.z - quad.z) / tilt.z, quad.accuracy_warning,
                    quad.est_error);

        // posterior mean via estimate_x1 against oracle vt
        Tensor v = oracle.vt(xt, t);
        std::vector<double> x1hat(2);
        estimate_x1(xt, t, v.span(), Schedule::linear(), x1hat);
        auto post = oracle.posterior(xt, t);
        Tensor pm = post.mean();
        std::printf("estimate_x1 vs posterior mean: %.3e\n",
                    std::max(std::abs(x1hat[0] - pm[0]), std::abs(x1hat[1] - pm[1])));

        // jacobian trick: (beta^2/alpha) d x1hat/dx vs posterior covariance
        GuidanceContext ctx;
        auto field = oracle.field();
        ctx.field = &field;
        ctx.schedule = Schedule::linear();
        Tensor sigma = jacobian_trick_sigma(ctx, xt, t);
        Tensor pc = post.covariance();
        std::printf("jacobian-trick sigma vs posterior cov: %.3e\n",
                    max_abs_diff(sigma, pc));

        // g_cov_g vs -sched * Sigma * grad J on single gaussian
        GmmFlowOracle single = GmmFlowOracle::single(Tensor({2}, {0.8, -0.4}),
                                                     Tensor({2, 2}, {0.5, 0.1, 0.1, 0.4}));
        auto sfield = single.field();
        GuidanceContext ctx2;
        ctx2.field = &sfield;
        ctx2.schedule = Schedule::linear();
        Tensor gg = g_cov_g(ctx2, xt, t, energy);
        auto post2 = single.posterior(xt, t);
        Tensor x1h2({2});
        Tensor v2 = single.vt(xt, t);
        estimate_x1(xt, t, v2.span(), ctx2.schedule, x1h2.span());
        Tensor dj = energy.grad(x1h2.span());
        Tensor pcov = post2.covariance();
        // g_cov with exact covariance: -(den/beta) Sigma dJ
        const double coef = -1.0 / (1.0 - t);
        Tensor ref({2});
        matvec_into(pcov, dj.span(), ref.span());
        ref[0] *= coef; ref[1] *= coef;
        std::printf("g_cov_g vs exact-cov g_cov: %.3e (gg=[%.5f %.5f] ref=[%.5f %.5f])\n",
                    max_abs_diff(gg, ref), gg[0], gg[1], ref[0], ref[1]);

        // exact tilted guidance for quadratic J on single gaussian vs g_cov_g
        auto tilt2 = single.tilted(energy, xt, t);
        std::printf("g_cov_g vs exact tilt (approx, should be small but nonzero): %.3e\n",
                    max_abs_diff(gg, tilt2.guidance));
    }

    // 4. g_mc vs oracle on the GMM
    {
        Density2D target = Density2D::gaussian_mixture(
            {0.4, 0.6},
            {{{-1.0, 0.5}}, {{1.2, -0.3}}},
            {{{0.3, 0.05, 0.05, 0.2}}, {{0.25, -0.04, -0.04, 0.35}}});
        GmmFlowOracle oracle = GmmFlowOracle::from_density(target);
        EnergyFn energy = EnergyFn::quadratic(Tensor({2}, {0.5, 0.5}),
                                              Tensor::identity(2), 0.7);
        CouplingSampler pairs(Density2D::standard_gaussian(), target);
        auto field = oracle.field();
        GuidanceContext ctx;
        ctx.field = &field;
        ctx.schedule = Schedule::linear();
        ctx.pairs = &pairs;
        ctx.sigma_mc = 0.1;

        Rng rng(11);
        std::vector<double> rels;
        for (int rep = 0; rep < 20; ++rep) {
            Tensor xs;
            oracle.sample_path(1, 0.15 + 0.7 * rng.uniform(), rng, xs);
            const double t = 0.15 + 0.7 * rng.uniform();
            Tensor xt2;
            oracle.sample_path(1, t, rng, xt2);
            Tensor g = g_mc(ctx, xt2.row(0), t, energy, 100000, rng);
            auto tilt = oracle.tilted(energy, xt2.row(0), t);
            rels.push_back(norm((g - tilt.guidance).span()) /
                           std::max(norm(tilt.guidance.span()), 1e-12));
        }
        std::printf("g_mc N=1e5 vs oracle: median rel %.4f\n", median(rels));
    }
    return 0;
}
