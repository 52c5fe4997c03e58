// temporary smoke harness #2
#include <chrono>
#include <cmath>
#include <cstdio>
#include <vector>

#include "flowguide/density.hpp"
#include "flowguide/energy.hpp"
#include "flowguide/guidance.hpp"
#include "flowguide/numeric.hpp"
#include "flowguide/oracle.hpp"
#include "flowguide/wasserstein.hpp"

using namespace flowguide;

int main() {
    // 1. JV timing at n=1000 and W2 translation identity
    {
        Rng rng(5);
        const std::size_t n = 1000;
        Tensor a({n, 2}), b({n, 2});
        for (std::size_t i = 0; i < n; ++i) {
            auto [x, y] = rng.normal2();
            a.at(i, 0) = x; a.at(i, 1) = y;
            auto [u, v] = rng.normal2();
            b.at(i, 0) = u + 0.5; b.at(i, 1) = v - 0.2;
        }
        auto t0 = std::chrono::steady_clock::now();
        double w = w2_distance(a, b);
        auto t1 = std::chrono::steady_clock::now();
        std::printf("w2(n=1000) = %.4f in %.2f s\n", w,
                    std::chrono::duration<double>(t1 - t0).count());

        Tensor c = a;
        for (std::size_t i = 0; i < n; ++i) { c.at(i, 0) += 3.0; c.at(i, 1) += 4.0; }
        std::printf("translation |w2 - 5| = %.3e, w2(a,a) = %.3e\n",
                    std::abs(w2_distance(a, c) - 5.0), w2_distance(a, a));
    }

    // 2. inverse-problem: conjugate Gaussian, exact r_t^2, canonical lambda
    {
        const std::size_t d = 2;
        const double prior_var = 0.8;
        Tensor mu({d}, {1.0, -0.5});
        Tensor cov = Tensor::identity(d);
        for (std::size_t i = 0; i < d; ++i) cov.at(i, i) = prior_var;
        GmmFlowOracle prior = GmmFlowOracle::single(mu, cov);
        auto field = prior.field();
        GuidanceContext ctx;
        ctx.field = &field;
        ctx.schedule = Schedule::linear();

        Tensor h = Tensor::identity(d);
        const double sigma_y = 0.3;
        Tensor y({d}, {2.0, 0.5});
        EnergyFn energy = EnergyFn::measurement(h, y, sigma_y);

        // closed-form posterior mean
        const double k = prior_var / (prior_var + sigma_y * sigma_y);
        Tensor post_mean({d});
        for (std::size_t i = 0; i < d; ++i)
            post_mean[i] = mu[i] + k * (y[i] - mu[i]);

        // guided sampling with g_sim_inv_a
        GuidanceFn fn = [&](std::size_t, int, std::span<const double> x, double t,
                            std::span<double> out, McDiagnostics*, bool*) {
            const double tt = std::min(t, 1.0 - 1e-4);
            const double r2 = conjugate_r2(ctx.schedule, tt, prior_var);
            const double lam = pigdm_lambda(ctx.schedule, tt);
            Tensor g = g_sim_inv_a(ctx, x, tt, h, y, sigma_y, std::sqrt(r2), lam);
            for (std::size_t j = 0; j < d; ++j) out[j] = g[j];
        };
        Rng rng(42);
        Tensor x0;
        prior.sample_source(2000, rng, x0);
        OdeOptions opts;
        opts.steps = 200;
        opts.method = OdeMethod::Euler;
        opts.t_end = 1.0 - 1e-4;
        opts.threads = 2;
        auto run = guided_sample(field, &fn, x0, opts);
        Tensor mean({d});
        for (std::size_t i = 0; i < 2000; ++i)
            for (std::size_t j = 0; j < d; ++j) mean[j] += run.samples.at(i, j) / 2000.0;
        std::printf("sim_inv_a terminal mean (%.4f, %.4f) vs posterior (%.4f, %.4f)  rel %.3f\n",
                    mean[0], mean[1], post_mean[0], post_mean[1],
                    norm((mean - post_mean).span()) / norm(post_mean.span()));
        // sample covariance vs posterior variance k*sigma_y^2... = prior_var*sig^2/(prior+sig^2)
        const double post_var = prior_var * sigma_y * sigma_y / (prior_var + sigma_y * sigma_y);
        double var0 = 0.0;
        for (std::size_t i = 0; i < 2000; ++i) {
            const double dx = run.samples.at(i, 0) - mean[0];
            var0 += dx * dx / 1999.0;
        }
        std::printf("terminal var %.4f vs posterior var %.4f\n", var0, post_var);
    }

    // 3. diffusion-equivalence: g_diff_logz with closed-form log Z == exact guidance
    {
        Tensor mu({2}, {0.6, -0.2});
        Tensor cov({2, 2}, {0.5, 0.1, 0.1, 0.3});
        GmmFlowOracle single = GmmFlowOracle::single(mu, cov);
        EnergyFn energy = EnergyFn::quadratic(Tensor({2}, {-0.3, 0.9}),
                                              Tensor({2, 2}, {1.0, 0.2, 0.2, 0.8}), 0.6);
        auto field = single.field();
        GuidanceContext ctx;
        ctx.field = &field;
        ctx.schedule = Schedule::linear();

        FunctionScalarField logz(
            [&](std::span<const double> x, double t) {
                return single.tilted(energy, x, t).log_z;
            });
        Rng rng(9);
        double worst = 0.0;
        for (int rep = 0; rep < 10; ++rep) {
            const double t = 0.15 + 0.7 * rng.uniform();
            Tensor xs;
            single.sample_path(1, t, rng, xs);
            Tensor g = g_diff_logz(ctx, xs.row(0), t, logz);
            auto tilt = single.tilted(energy, xs.row(0), t);
            worst = std::max(worst, norm((g - tilt.guidance).span()) /
                                        std::max(norm(tilt.guidance.span()), 1e-12));
        }
        std::printf("g_diff_logz (FD grad) vs exact guidance: worst rel %.3e\n", worst);
    }

    // 4. tilted_resample variance for N(0,1), J = x^2/2 -> 1/2
    {
        Rng rng(13);
        const std::size_t n = 100000;
        Tensor pool({n, 1});
        for (std::size_t i = 0; i < n; ++i) pool.at(i, 0) = rng.normal();
        EnergyFn energy = EnergyFn::quadratic(Tensor({1}, {0.0}), Tensor::identity(1), 1.0);
        auto rs = tilted_resample(pool, energy, n, rng);
        double mean = 0, var = 0;
        for (std::size_t i = 0; i < n; ++i) mean += rs.samples.at(i, 0) / n;
        for (std::size_t i = 0; i < n; ++i) {
            const double dx = rs.samples.at(i, 0) - mean;
            var += dx * dx / (n - 1.0);
        }
        std::printf("tilted_resample var %.4f (expect 0.5), ess %.0f\n", var, rs.ess);
    }

    // 5. mc invariances
    {
        Density2D target = Density2D::eight_gaussians();
        CouplingSampler pairs(Density2D::standard_gaussian(), target);
        GmmFlowOracle oracle = GmmFlowOracle::from_density(target);
        auto field = oracle.field();
        GuidanceContext ctx;
        ctx.field = &field;
        ctx.schedule = Schedule::linear();
        ctx.pairs = &pairs;

        EnergyFn j1 = EnergyFn::linear(Tensor({2}, {0.7, -0.3}));
        std::vector<double> xt = {0.4, 0.6};
        const double t = 0.5;

        Rng r1(77), r2(77);
        Tensor g1 = g_mc(ctx, xt, t, j1, 5000, r1);
        // shifted energy: J + c via quadratic trick? use linear with same c and compare after shift:
        // emulate shift by scaling e^{-J} equivalently: add constant via custom J
        EnergyFn j_shift = EnergyFn::custom_grid(0, 0, 1, 1, Tensor({2, 2}, {0, 0, 0, 0}), 1.0);
        // simpler: wrap with value+c through quadratic form? do direct: compare N=1 and constant J
        Tensor x0p, x1p;
        Rng rp(5);
        pairs.sample_pairs(1, rp, x0p, x1p);
        Tensor gn1 = g_mc_pool(ctx, xt, t, j1, x0p, x1p);
        std::printf("g_mc N=1: (%.17g, %.17g)\n", gn1[0], gn1[1]);

        // constant J via linear with c=0... use quadratic with B=0 disallowed (PSD ok, B=0 is PSD)
        EnergyFn j_const = EnergyFn::quadratic(Tensor({2}, {0.0, 0.0}), Tensor({2, 2}), 1.0);
        Rng r3(77);
        Tensor gc = g_mc(ctx, xt, t, j_const, 5000, r3);
        std::printf("g_mc constant J: norm %.3e\n", norm(gc.span()));
        (void)g1;
    }
    std::printf("done\n");
    return 0;
}
