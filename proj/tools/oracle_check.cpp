#include <cmath>
#include <cstdio>
#include <functional>

#include "commands.hpp"
#include "flowguide/guidance.hpp"
#include "flowguide/linalg.hpp"
#include "flowguide/numeric.hpp"
#include "flowguide/oracle.hpp"
#include "flowguide/wasserstein.hpp"
#include "run_common.hpp"

namespace flowguide::cli {

namespace {

struct CheckResult {
    std::string id;
    std::string quantity;
    double value;
    double tolerance;
    bool pass;
};

struct CheckSuite {
    bool mutate_cov_g_sign = false;
    std::vector<CheckResult> results;

    void add(const std::string& id, const std::string& quantity, double value,
             double tolerance) {
        results.push_back({id, quantity, value, tolerance, value <= tolerance});
    }
};

Density2D bench_target() {
    return Density2D::gaussian_mixture(
        {0.3, 0.3, 0.4},
        {{{-1.5, -1.0}}, {{1.5, -1.0}}, {{0.0, 1.5}}},
        {{{0.16, 0.03, 0.03, 0.12}}, {{0.12, -0.02, -0.02, 0.16}},
         {{0.2, 0.0, 0.0, 0.1}}});
}

EnergyFn bench_energy() {
    return EnergyFn::quadratic(Tensor({2}, {0.8, 0.3}), Tensor::identity(2), 0.5);
}

void run_checks(CheckSuite& suite) {
    const Density2D target = bench_target();
    const GmmFlowOracle oracle = GmmFlowOracle::from_density(target);
    const EnergyFn energy = bench_energy();
    GmmFlowOracle::Field ofield = oracle.field();
    GuidanceContext ctx;
    ctx.field = &ofield;
    ctx.schedule = Schedule::linear();
    ctx.sigma_mc = 0.1;

    auto cov_g_eval = [&](const GuidanceContext& c, std::span<const double> x, double t,
                          const EnergyFn& e) {
        Tensor g = g_cov_g(c, x, t, e);
        if (suite.mutate_cov_g_sign)
            for (std::size_t j = 0; j < g.size(); ++j) g[j] = -g[j];
        return g;
    };

    // 1. vt == (posterior mean - x) / (1 - t)
    {
        Rng rng(101);
        double worst = 0.0;
        for (int rep = 0; rep < 50; ++rep) {
            const double t = 0.05 + 0.9 * rng.uniform();
            Tensor x;
            oracle.sample_path(1, t, rng, x);
            Tensor v = oracle.vt(x.row(0), t);
            Tensor pm = oracle.posterior(x.row(0), t).mean();
            for (std::size_t j = 0; j < 2; ++j)
                worst = std::max(worst,
                                 std::abs(v[j] - (pm[j] - x.at(0, j)) / (1.0 - t)));
        }
        suite.add("vt_posterior_identity", "max_abs_diff", worst, 1e-12);
    }

    // 2. estimate_x1 with the oracle VF recovers the posterior mean
    {
        Rng rng(102);
        double worst = 0.0;
        for (int rep = 0; rep < 50; ++rep) {
            const double t = 0.05 + 0.9 * rng.uniform();
            Tensor x;
            oracle.sample_path(1, t, rng, x);
            Tensor v = oracle.vt(x.row(0), t);
            std::vector<double> x1(2);
            estimate_x1(x.row(0), t, v.span(), ctx.schedule, x1);
            Tensor pm = oracle.posterior(x.row(0), t).mean();
            worst = std::max({worst, std::abs(x1[0] - pm[0]), std::abs(x1[1] - pm[1])});
        }
        suite.add("estimate_x1_posterior_mean", "max_abs_diff", worst, 1e-10);
    }

    // 3. marginal density vs quadrature of the pushforward integral
    {
        const GmmFlowOracle single =
            GmmFlowOracle::single(Tensor({2}, {0.5, -0.3}), Tensor::identity(2));
        const double t = 0.6;
        const std::vector<double> x = {0.4, 0.1};
        const double exact = single.pt(x, t);
        // integrate p0((x - t x1)/(1-t)) (1-t)^-2 p1(x1) on a grid
        const std::size_t n = 400;
        const double lo = -6.0, hi = 6.0, step = (hi - lo) / (n - 1);
        double acc = 0.0;
        std::vector<double> x1(2), u(2);
        for (std::size_t iy = 0; iy < n; ++iy) {
            x1[1] = lo + step * iy;
            const double wy = (iy == 0 || iy == n - 1) ? 0.5 : 1.0;
            for (std::size_t ix = 0; ix < n; ++ix) {
                x1[0] = lo + step * ix;
                const double wx = (ix == 0 || ix == n - 1) ? 0.5 : 1.0;
                u[0] = (x[0] - t * x1[0]) / (1 - t);
                u[1] = (x[1] - t * x1[1]) / (1 - t);
                acc += wx * wy *
                       std::exp(single.log_density_source(u) -
                                2.0 * std::log(1 - t) +
                                single.log_density_target(x1));
            }
        }
        acc *= step * step;
        suite.add("pt_quadrature", "rel_err", std::abs(acc - exact) / exact, 1e-6);
    }

    // 4. continuity equation residual d_t p + div(p v) = 0
    {
        const double t = 0.5, h = 1e-4;
        double max_resid = 0.0, max_dtp = 0.0;
        std::vector<double> x(2);
        for (double gx = -1.5; gx <= 1.5; gx += 0.5) {
            for (double gy = -1.5; gy <= 1.5; gy += 0.5) {
                x[0] = gx;
                x[1] = gy;
                const double dtp =
                    (oracle.pt(x, t + h) - oracle.pt(x, t - h)) / (2 * h);
                double div = 0.0;
                for (int j = 0; j < 2; ++j) {
                    std::vector<double> xp = x, xm = x;
                    xp[j] += h;
                    xm[j] -= h;
                    const double fp = oracle.pt(xp, t) * oracle.vt(xp, t)[j];
                    const double fm = oracle.pt(xm, t) * oracle.vt(xm, t)[j];
                    div += (fp - fm) / (2 * h);
                }
                max_resid = std::max(max_resid, std::abs(dtp + div));
                max_dtp = std::max(max_dtp, std::abs(dtp));
            }
        }
        suite.add("continuity_equation", "resid_over_max_dtp", max_resid / max_dtp, 1e-3);
    }

    // 5. closed-form tilt vs direct quadrature of the guidance integral
    {
        Rng rng(105);
        double worst = 0.0;
        for (int rep = 0; rep < 5; ++rep) {
            const double t = 0.2 + 0.6 * rng.uniform();
            Tensor x;
            oracle.sample_path(1, t, rng, x);
            auto tilt = oracle.tilted(energy, x.row(0), t);
            auto quad = quadrature_guidance(target, Density2D::standard_gaussian(),
                                            energy, x.row(0), t);
            worst = std::max(worst, norm((tilt.guidance - quad.guidance).span()) /
                                        std::max(norm(tilt.guidance.span()), 1e-12));
        }
        suite.add("tilted_vs_quadrature", "rel_l2", worst, 1e-4);
    }

    // 6. constant energy gives zero quadrature guidance
    {
        EnergyFn constant = EnergyFn::quadratic(Tensor({2}), Tensor({2, 2}), 1.0);
        auto quad = quadrature_guidance(target, Density2D::standard_gaussian(), constant,
                                        std::vector<double>{0.3, -0.2}, 0.5);
        suite.add("quadrature_constant_j", "gnorm", norm(quad.guidance.span()), 1e-10);
    }

    // 7. Jacobian trick covariance vs closed-form posterior covariance
    {
        Rng rng(107);
        double worst = 0.0;
        for (int rep = 0; rep < 50; ++rep) {
            const double t = 0.1 + 0.8 * rng.uniform();
            Tensor x;
            oracle.sample_path(1, t, rng, x);
            Tensor sigma = jacobian_trick_sigma(ctx, x.row(0), t);
            Tensor ref = oracle.posterior(x.row(0), t).covariance();
            double num = 0.0, den = 0.0;
            for (std::size_t i = 0; i < 4; ++i) {
                num += (sigma[i] - ref[i]) * (sigma[i] - ref[i]);
                den += ref[i] * ref[i];
            }
            worst = std::max(worst, std::sqrt(num / den));
        }
        suite.add("jacobian_trick_sigma", "max_rel_fro", worst, 1e-6);
    }

    // 8. cov-G equals the exact-covariance preconditioned gradient (single
    //    Gaussian)
    {
        const GmmFlowOracle single = GmmFlowOracle::single(
            Tensor({2}, {0.8, -0.4}), Tensor({2, 2}, {0.5, 0.1, 0.1, 0.4}));
        GmmFlowOracle::Field sfield = single.field();
        GuidanceContext sctx = ctx;
        sctx.field = &sfield;
        Rng rng(108);
        double worst = 0.0;
        for (int rep = 0; rep < 20; ++rep) {
            const double t = 0.1 + 0.8 * rng.uniform();
            Tensor x;
            single.sample_path(1, t, rng, x);
            Tensor g = cov_g_eval(sctx, x.row(0), t, energy);
            Tensor pcov = single.posterior(x.row(0), t).covariance();
            Tensor v = single.vt(x.row(0), t);
            std::vector<double> x1(2);
            estimate_x1(x.row(0), t, v.span(), sctx.schedule, x1);
            Tensor dj = energy.grad(x1);
            Tensor ref({2});
            matvec_into(pcov, dj.span(), ref.span());
            const double coef = -1.0 / (1.0 - t);
            ref[0] *= coef;
            ref[1] *= coef;
            worst = std::max(worst, norm((g - ref).span()) /
                                        std::max(norm(ref.span()), 1e-12));
        }
        suite.add("cov_g_exact_cov", "max_rel_l2", worst, 1e-6);
    }

    // 9. mild-energy limit: cov-G matches the exact tilted guidance
    {
        const GmmFlowOracle single = GmmFlowOracle::single(
            Tensor({2}, {0.8, -0.4}), Tensor({2, 2}, {0.5, 0.1, 0.1, 0.4}));
        GmmFlowOracle::Field sfield = single.field();
        GuidanceContext sctx = ctx;
        sctx.field = &sfield;
        EnergyFn mild = EnergyFn::quadratic(Tensor({2}, {-0.3, 0.9}),
                                            Tensor::identity(2), 1e-6);
        Rng rng(109);
        double worst = 0.0;
        for (int rep = 0; rep < 20; ++rep) {
            const double t = 0.1 + 0.8 * rng.uniform();
            Tensor x;
            single.sample_path(1, t, rng, x);
            Tensor g = cov_g_eval(sctx, x.row(0), t, mild);
            auto tilt = single.tilted(mild, x.row(0), t);
            worst = std::max(worst, norm((g - tilt.guidance).span()) /
                                        std::max(norm(tilt.guidance.span()), 1e-12));
        }
        suite.add("cov_g_tilt_limit", "max_rel_l2", worst, 1e-6);
    }

    // 10. pseudoinverse coverage identity over random systems
    {
        Rng rng(110);
        double worst = 0.0;
        for (int rep = 0; rep < 1000; ++rep) {
            const std::size_t m_dim = 1 + rng.below(8);
            const std::size_t n_dim = 1 + rng.below(8);
            Tensor h({m_dim, n_dim});
            for (std::size_t i = 0; i < h.size(); ++i) h[i] = rng.normal();
            const double sigma = 0.1 + rng.uniform();
            const double r = 0.1 + rng.uniform();
            // A = sigma^2 I_n + r^2 H^T H ; B = sigma^2 I_m + r^2 H H^T
            Tensor a({n_dim, n_dim}), b({m_dim, m_dim});
            for (std::size_t i = 0; i < n_dim; ++i)
                for (std::size_t j = 0; j < n_dim; ++j) {
                    double s = 0.0;
                    for (std::size_t k = 0; k < m_dim; ++k)
                        s += h.at(k, i) * h.at(k, j);
                    a.at(i, j) = r * r * s + (i == j ? sigma * sigma : 0.0);
                }
            for (std::size_t i = 0; i < m_dim; ++i)
                for (std::size_t j = 0; j < m_dim; ++j) {
                    double s = 0.0;
                    for (std::size_t k = 0; k < n_dim; ++k)
                        s += h.at(i, k) * h.at(j, k);
                    b.at(i, j) = r * r * s + (i == j ? sigma * sigma : 0.0);
                }
            // H A^{-1} vs B^{-1} H
            Tensor a_l = cholesky(a);
            Tensor b_l = cholesky(b);
            Tensor lhs = matmul(h, cholesky_solve_matrix(a_l, Tensor::identity(n_dim)));
            Tensor rhs = cholesky_solve_matrix(b_l, h);
            worst = std::max(worst, max_abs_diff(lhs, rhs));
        }
        suite.add("pigdm_coverage", "max_abs", worst, 1e-10);
    }

    // 11. diffusion-equivalent guidance with the closed-form log Z
    {
        const GmmFlowOracle single = GmmFlowOracle::single(
            Tensor({2}, {0.6, -0.2}), Tensor({2, 2}, {0.5, 0.1, 0.1, 0.3}));
        GmmFlowOracle::Field sfield = single.field();
        GuidanceContext sctx = ctx;
        sctx.field = &sfield;
        FunctionScalarField logz([&](std::span<const double> x, double t) {
            return single.tilted(energy, x, t).log_z;
        });
        Rng rng(111);
        double worst = 0.0;
        for (int rep = 0; rep < 20; ++rep) {
            const double t = 0.15 + 0.7 * rng.uniform();
            Tensor x;
            single.sample_path(1, t, rng, x);
            Tensor g = g_diff_logz(sctx, x.row(0), t, logz);
            auto tilt = single.tilted(energy, x.row(0), t);
            worst = std::max(worst, norm((g - tilt.guidance).span()) /
                                        std::max(norm(tilt.guidance.span()), 1e-12));
        }
        suite.add("diff_logz_equivalence", "max_rel_l2", worst, 1e-6);
    }

    // 12. Monte-Carlo Z estimate vs the closed form
    {
        CouplingSampler pairs(Density2D::standard_gaussian(), target);
        GuidanceContext mcctx = ctx;
        mcctx.pairs = &pairs;
        Rng rng(112);
        std::vector<double> rels;
        for (int rep = 0; rep < 20; ++rep) {
            const double t = 0.1 + 0.8 * rng.uniform();
            Tensor x;
            oracle.sample_path(1, t, rng, x);
            const double z = estimate_z_mc(mcctx, x.row(0), t, energy, 100000, rng);
            auto tilt = oracle.tilted(energy, x.row(0), t);
            rels.push_back(std::abs(z - tilt.z) / tilt.z);
        }
        suite.add("estimate_z_mc", "median_rel", median(rels), 0.05);
    }

    // 13. Monte-Carlo guidance vs the closed form
    {
        CouplingSampler pairs(Density2D::standard_gaussian(), target);
        GuidanceContext mcctx = ctx;
        mcctx.pairs = &pairs;
        Rng rng(113);
        std::vector<double> rels;
        for (int rep = 0; rep < 20; ++rep) {
            const double t = 0.1 + 0.8 * rng.uniform();
            Tensor x;
            oracle.sample_path(1, t, rng, x);
            Tensor g = g_mc(mcctx, x.row(0), t, energy, 100000, rng);
            auto tilt = oracle.tilted(energy, x.row(0), t);
            rels.push_back(norm((g - tilt.guidance).span()) /
                           std::max(norm(tilt.guidance.span()), 1e-12));
        }
        suite.add("g_mc_oracle", "median_rel_l2", median(rels), 0.05);
    }

    // 14. discrete W2 identities
    {
        Rng rng(114);
        Tensor a({64, 2});
        for (std::size_t i = 0; i < a.size(); ++i) a[i] = rng.normal();
        Tensor b = a;
        for (std::size_t i = 0; i < 64; ++i) {
            b.at(i, 0) += 3.0;
            b.at(i, 1) += 4.0;
        }
        const double w_self = w2_distance(a, a);
        const double w_shift = std::abs(w2_distance(a, b) - 5.0);
        suite.add("w2_identities", "max_abs", std::max(w_self, w_shift), 1e-12);
    }

    // 15. reconstruction identity alpha x1_hat + beta x0_hat = x_t
    {
        Rng rng(115);
        double worst = 0.0;
        for (int rep = 0; rep < 100; ++rep) {
            const double t = rng.uniform();
            std::vector<double> x = {rng.normal(), rng.normal()};
            std::vector<double> v = {rng.normal(), rng.normal()};
            std::vector<double> x1(2), x0(2);
            estimate_x1(x, t, v, ctx.schedule, x1);
            estimate_x0(x, t, v, ctx.schedule, x0);
            for (int j = 0; j < 2; ++j)
                worst = std::max(worst,
                                 std::abs(t * x1[j] + (1 - t) * x0[j] - x[j]));
        }
        suite.add("reconstruction_identity", "max_abs", worst, 1e-12);
    }

    // 16. tilted resampling of N(0,1) under J = x^2/2 has variance 1/2
    {
        Rng rng(116);
        const std::size_t n = 100000;
        Tensor pool({n, 1});
        for (std::size_t i = 0; i < n; ++i) pool.at(i, 0) = rng.normal();
        EnergyFn j1 = EnergyFn::quadratic(Tensor({1}), Tensor::identity(1), 1.0);
        auto rs = tilted_resample(pool, j1, n, rng);
        double mean = 0.0, var = 0.0;
        for (std::size_t i = 0; i < n; ++i) mean += rs.samples.at(i, 0);
        mean /= n;
        for (std::size_t i = 0; i < n; ++i) {
            const double dx = rs.samples.at(i, 0) - mean;
            var += dx * dx / (n - 1.0);
        }
        // std error of the variance of a Gaussian: var * sqrt(2/(n-1))
        const double se = 0.5 * std::sqrt(2.0 / (n - 1.0));
        suite.add("tilted_resample_variance", "abs_err_over_3se",
                  std::abs(var - 0.5) / (3.0 * se), 1.0);
    }
}

}  // namespace

namespace {

// per-t sweep of the main closed-form quantities against their independent
// routes (quadrature / Monte Carlo / identity rearrangements)
void write_oracle_sweep(RunContext& run) {
    const Density2D target = bench_target();
    const GmmFlowOracle oracle = GmmFlowOracle::from_density(target);
    const EnergyFn energy = bench_energy();
    GmmFlowOracle::Field field = oracle.field();
    GuidanceContext ctx;
    ctx.field = &field;
    ctx.schedule = Schedule::linear();
    ctx.sigma_mc = 0.1;
    CouplingSampler pairs(Density2D::standard_gaussian(), target);
    ctx.pairs = &pairs;

    CsvFile csv = run.csv("oracle_sweep.csv",
                          {"t", "quantity", "value", "method", "rel_err"});
    Rng rng(0xCAFE);
    for (double t : {0.1, 0.3, 0.5, 0.7, 0.9}) {
        Tensor x;
        oracle.sample_path(1, t, rng, x);
        const auto xt = x.row(0);
        auto tilt = oracle.tilted(energy, xt, t);

        // velocity identity route
        Tensor v = oracle.vt(xt, t);
        Tensor pm = oracle.posterior(xt, t).mean();
        double v_alt0 = (pm[0] - xt[0]) / (1.0 - t);
        const double v_rel = std::abs(v[0] - v_alt0) / std::max(std::abs(v[0]), 1e-12);
        csv.row({format_double(t), "vt_x", format_double(v[0]), "posterior_identity",
                 format_double(v_rel)});

        // guidance vs quadrature
        auto quad = quadrature_guidance(target, Density2D::standard_gaussian(), energy,
                                        xt, t);
        csv.row({format_double(t), "guidance",
                 format_double(norm(tilt.guidance.span())), "quadrature",
                 format_double(norm((tilt.guidance - quad.guidance).span()) /
                               std::max(norm(tilt.guidance.span()), 1e-12))});

        // Z_t vs self-normalized Monte Carlo
        const double z_mc = estimate_z_mc(ctx, xt, t, energy, 20000, rng);
        csv.row({format_double(t), "z", format_double(tilt.z), "mc",
                 format_double(std::abs(z_mc - tilt.z) / tilt.z)});

        // posterior covariance vs the Jacobian trick
        Tensor sigma = jacobian_trick_sigma(ctx, xt, t);
        Tensor ref = oracle.posterior(xt, t).covariance();
        double num = 0.0, den = 0.0;
        for (std::size_t i = 0; i < 4; ++i) {
            num += (sigma[i] - ref[i]) * (sigma[i] - ref[i]);
            den += ref[i] * ref[i];
        }
        csv.row({format_double(t), "posterior_cov", format_double(ref[0]),
                 "jacobian_trick", format_double(std::sqrt(num / den))});
    }
    csv.close();
}

}  // namespace

int cmd_oracle_check(const CommonArgs& args, const std::string& mutate) {
    std::vector<std::string> overrides = args.overrides;
    json doc = json::object();
    doc["output_dir"] = args.output_dir.empty() ? "runs/oracle_check" : args.output_dir;
    ExperimentConfig cfg = parse_config(doc, overrides);
    RunContext run(cfg, "oracle-check");

    CheckSuite suite;
    if (!mutate.empty()) {
        if (mutate != "cov-g-sign")
            throw ValidationError("unknown --mutate id '" + mutate + "'");
        suite.mutate_cov_g_sign = true;
        std::printf("oracle-check: mutation '%s' active\n", mutate.c_str());
    }
    run_checks(suite);

    CsvFile csv = run.csv("oracle_check.csv",
                          {"check", "quantity", "value", "tolerance", "pass"});
    bool all_pass = true;
    for (const auto& r : suite.results) {
        csv.row({r.id, r.quantity, format_double(r.value), format_double(r.tolerance),
                 r.pass ? "1" : "0"});
        std::printf("[%s] %-28s %s = %.3e (tol %.3e)\n", r.pass ? "PASS" : "FAIL",
                    r.id.c_str(), r.quantity.c_str(), r.value, r.tolerance);
        all_pass = all_pass && r.pass;
    }
    csv.close();
    run.finish();
    std::printf("oracle-check: %zu checks, %s\n", suite.results.size(),
                all_pass ? "all passed" : "FAILURES PRESENT");
    return all_pass ? 0 : 3;
}

}  // namespace flowguide::cli
