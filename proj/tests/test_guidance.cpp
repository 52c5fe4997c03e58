#include <doctest.h>

#include <cmath>

#include "flowguide/errors.hpp"
#include "flowguide/guidance.hpp"
#include "flowguide/numeric.hpp"
#include "flowguide/oracle.hpp"
#include "flowguide/wasserstein.hpp"
#include "test_util.hpp"

using namespace flowguide;

namespace {

Density2D gmm_target() {
    return Density2D::gaussian_mixture(
        {0.3, 0.3, 0.4}, {{{-1.5, -1.0}}, {{1.5, -1.0}}, {{0.0, 1.5}}},
        {{{0.16, 0.03, 0.03, 0.12}}, {{0.12, -0.02, -0.02, 0.16}},
         {{0.2, 0.0, 0.0, 0.1}}});
}

EnergyFn quad_energy() {
    return EnergyFn::quadratic(Tensor({2}, {0.8, 0.3}), Tensor::identity(2), 0.5);
}

struct OracleSetup {
    Density2D target;
    GmmFlowOracle oracle;
    GmmFlowOracle::Field field;
    CouplingSampler pairs;
    GuidanceContext ctx;

    explicit OracleSetup(Density2D tgt, double sigma_mc = 0.1)
        : target(tgt),
          oracle(GmmFlowOracle::from_density(target)),
          field(oracle.field()),
          pairs(Density2D::standard_gaussian(), target) {
        ctx.field = &field;
        ctx.schedule = Schedule::linear();
        ctx.pairs = &pairs;
        ctx.sigma_mc = sigma_mc;
        const Density2D src = Density2D::standard_gaussian();
        ctx.source_log_density = [src](std::span<const double> x) {
            return src.log_density(x);
        };
        const Density2D t2 = target;
        ctx.target_sampler = [t2](Rng& rng, std::span<double> out) {
            t2.sample_point(rng, out);
        };
    }
};

}  // namespace

TEST_CASE("lambda schedules stay within [0, scale]") {
    for (auto shape : {LambdaShape::Constant, LambdaShape::LinearDecay,
                       LambdaShape::CosineDecay, LambdaShape::ExpDecay}) {
        LambdaSchedule l;
        l.shape = shape;
        l.scale = 2.5;
        for (double t = 0.0; t <= 1.0; t += 0.05) {
            CHECK(l.eval(t) >= 0.0);
            CHECK(l.eval(t) <= 2.5);
        }
    }
}

TEST_CASE("g_mc: constant energy gives zero guidance") {
    OracleSetup s(gmm_target());
    EnergyFn constant = EnergyFn::quadratic(Tensor({2}), Tensor({2, 2}), 1.0)
                            .with_offset(1.7);
    Rng rng(90);
    Tensor g = g_mc(s.ctx, std::vector<double>{0.4, 0.6}, 0.5, constant, 4000, rng);
    CHECK(norm(g.span()) <= 1e-12);
}

TEST_CASE("g_mc: N = 1 is exactly zero by self-normalization") {
    OracleSetup s(gmm_target());
    Rng rng(91);
    EnergyFn energy = quad_energy();
    Tensor g = g_mc(s.ctx, std::vector<double>{0.4, 0.6}, 0.5, energy, 1, rng);
    CHECK(g[0] == 0.0);
    CHECK(g[1] == 0.0);
}

TEST_CASE("g_mc: energy-shift invariance to 1e-12") {
    OracleSetup s(gmm_target());
    EnergyFn energy = quad_energy();
    EnergyFn shifted = energy.with_offset(3.7);
    Rng r1(92), r2(92);
    std::vector<double> x = {0.1, -0.3};
    Tensor a = g_mc(s.ctx, x, 0.45, energy, 3000, r1);
    Tensor b = g_mc(s.ctx, x, 0.45, shifted, 3000, r2);
    CHECK(max_abs_diff(a, b) <= 1e-12);
}

TEST_CASE("g_mc: weights sum to one, signed weights sum to zero") {
    OracleSetup s(gmm_target());
    EnergyFn energy = quad_energy();
    std::vector<double> x = {0.2, 0.1};
    const double t = 0.5;
    Rng rng(93);
    Tensor x0, x1;
    s.pairs.sample_pairs(2000, rng, x0, x1);

    // reproduce the estimator's weights from its public pieces
    const double sigma = std::max(s.ctx.schedule.eval(t).sigma, s.ctx.sigma_mc);
    std::vector<double> lp(2000), u(2000);
    for (std::size_t i = 0; i < 2000; ++i) {
        lp[i] = conditional_log_density(x, x0.row(i), x1.row(i), t, s.ctx.schedule, sigma);
        u[i] = -energy.value(x1.row(i));
    }
    const double lse = log_sum_exp(lp);
    std::vector<double> uk(2000);
    double w_total = 0.0;
    for (std::size_t i = 0; i < 2000; ++i) {
        lp[i] -= lse;
        w_total += std::exp(lp[i]);
        uk[i] = u[i] + lp[i];
    }
    CHECK(std::abs(w_total - 1.0) <= 1e-12);
    const double log_z = log_sum_exp(uk);
    double signed_total = 0.0;
    for (std::size_t i = 0; i < 2000; ++i)
        signed_total += std::exp(u[i] + lp[i] - log_z) - std::exp(lp[i]);
    CHECK(std::abs(signed_total) <= 1e-12);

    // consequence: adding a constant vector c to every conditional field
    // changes g by (sum of signed weights) * c, i.e. by nothing
    Tensor g = g_mc_pool(s.ctx, x, t, energy, x0, x1);
    const double cshift[2] = {7.0, -3.0};
    Tensor g_shifted({2});
    for (std::size_t i = 0; i < 2000; ++i) {
        const double sw = std::exp(u[i] + lp[i] - log_z) - std::exp(lp[i]);
        std::vector<double> v(2), zero(2, 0.0);
        conditional_vf(x0.row(i), x1.row(i), t, zero, s.ctx.schedule, v);
        g_shifted[0] += sw * (v[0] + cshift[0]);
        g_shifted[1] += sw * (v[1] + cshift[1]);
    }
    CHECK(max_abs_diff(g, g_shifted) <= 1e-11);
}

TEST_CASE("g_mc: matches the closed-form guidance on the GMM benchmark") {
    OracleSetup s(gmm_target());
    EnergyFn energy = quad_energy();
    Rng rng(94);
    std::vector<double> rels;
    for (int rep = 0; rep < 24; ++rep) {
        const double t = 0.1 + 0.8 * rng.uniform();
        Tensor x;
        s.oracle.sample_path(1, t, rng, x);
        Tensor g = g_mc(s.ctx, x.row(0), t, energy, 40000, rng);
        auto tilt = s.oracle.tilted(energy, x.row(0), t);
        rels.push_back(fgtest::rel_l2(g.span(), tilt.guidance.span()));
    }
    CHECK(median(rels) <= 0.08);
}

TEST_CASE("g_mc: asymptotic exactness is monotone in N (repetition medians)") {
    OracleSetup s(gmm_target());
    EnergyFn energy = quad_energy();
    Rng rng(95);
    // fixed probe points
    std::vector<std::vector<double>> points;
    std::vector<double> ts;
    for (int i = 0; i < 10; ++i) {
        const double t = 0.2 + 0.6 * rng.uniform();
        Tensor x;
        s.oracle.sample_path(1, t, rng, x);
        points.push_back({x.at(0, 0), x.at(0, 1)});
        ts.push_back(t);
    }
    std::vector<double> medians;
    for (std::size_t n : {100u, 1000u, 10000u, 100000u}) {
        std::vector<double> rels;
        for (std::size_t p = 0; p < points.size(); ++p) {
            auto tilt = s.oracle.tilted(energy, points[p], ts[p]);
            const std::size_t reps = n <= 10000 ? 20 : 4;
            for (std::size_t rep = 0; rep < reps; ++rep) {
                Tensor g = g_mc(s.ctx, points[p], ts[p], energy, n, rng);
                rels.push_back(fgtest::rel_l2(g.span(), tilt.guidance.span()));
            }
        }
        medians.push_back(median(rels));
    }
    for (std::size_t i = 1; i < medians.size(); ++i)
        CHECK(medians[i] <= medians[i - 1]);
}

TEST_CASE("g_mc_x1: requires independent coupling and sigma = 0") {
    OracleSetup s(gmm_target());
    EnergyFn energy = quad_energy();
    Rng rng(96);

    GuidanceContext coupled = s.ctx;
    coupled.independent_coupling = false;
    CHECK_THROWS_AS(g_mc_x1(coupled, std::vector<double>{0, 0}, 0.5, energy, 10, rng),
                    ContractError);

    GuidanceContext sigma = s.ctx;
    sigma.schedule = Schedule::linear_sigma(0.05);
    CHECK_THROWS_AS(g_mc_x1(sigma, std::vector<double>{0, 0}, 0.5, energy, 10, rng),
                    ContractError);
}

TEST_CASE("g_mc_x1: constant energy gives zero, agrees with g_mc, lower variance") {
    // a small bandwidth keeps the pair-space estimator's smoothing bias far
    // below the Monte-Carlo standard error, so the two estimators target the
    // same quantity
    OracleSetup s(gmm_target(), /*sigma_mc=*/0.02);
    EnergyFn energy = quad_energy();
    EnergyFn constant = EnergyFn::quadratic(Tensor({2}), Tensor({2, 2}), 1.0);
    Rng rng(97);
    std::vector<double> x = {0.3, 0.2};
    const double t = 0.55;

    Tensor zero = g_mc_x1(s.ctx, x, t, constant, 2000, rng);
    CHECK(norm(zero.span()) <= 1e-12);

    // both estimators target the same guidance; compare their means over
    // repetitions against the MC standard error
    const int reps = 30;
    const std::size_t n = 20000;
    Tensor mean_a({2}), mean_b({2});
    std::vector<Tensor> a_samples, b_samples;
    for (int rep = 0; rep < reps; ++rep) {
        Tensor a = g_mc(s.ctx, x, t, energy, n, rng);
        Tensor b = g_mc_x1(s.ctx, x, t, energy, n, rng);
        a_samples.push_back(a);
        b_samples.push_back(b);
        for (int j = 0; j < 2; ++j) {
            mean_a[j] += a[j] / reps;
            mean_b[j] += b[j] / reps;
        }
    }
    double var_a = 0.0, var_b = 0.0;
    for (int rep = 0; rep < reps; ++rep)
        for (int j = 0; j < 2; ++j) {
            var_a += std::pow(a_samples[rep][j] - mean_a[j], 2) / (reps - 1);
            var_b += std::pow(b_samples[rep][j] - mean_b[j], 2) / (reps - 1);
        }
    const double se = std::sqrt((var_a + var_b) / reps);
    CHECK(norm((mean_a - mean_b).span()) <= 2.0 * se + 1e-9);

    // note: the x1-conditioned estimator uses the exact pushforward density
    // rather than the sigma_mc-smoothed kernel, so at equal N its spread
    // around the target must not exceed the pair-space estimator's
    CHECK(var_b <= var_a * 1.25);
}

TEST_CASE("g_cov_a: zero schedule and analytic quadratic gradient") {
    OracleSetup s(gmm_target());
    std::vector<double> x = {0.4, -0.2};
    const double t = 0.5;

    LambdaSchedule off;
    off.scale = 0.0;
    EnergyFn energy = quad_energy();
    Tensor g0 = g_cov_a(s.ctx, x, t, energy, off);
    CHECK(norm(g0.span()) == 0.0);

    // J = 0.5 ||x - a||^2, lambda = 1  ->  g = a - x1_hat
    EnergyFn unit = EnergyFn::quadratic(Tensor({2}, {0.8, 0.3}), Tensor::identity(2), 1.0);
    LambdaSchedule one;
    Tensor g = g_cov_a(s.ctx, x, t, unit, one);
    Tensor v = s.field.eval(x, t);
    std::vector<double> x1(2);
    estimate_x1(x, t, v.span(), s.ctx.schedule, x1);
    CHECK(g[0] == doctest::Approx(0.8 - x1[0]).epsilon(1e-12));
    CHECK(g[1] == doctest::Approx(0.3 - x1[1]).epsilon(1e-12));
}

TEST_CASE("g_cov_a: guided sampling shifts toward the tilted posterior mean") {
    // single-Gaussian target with quadratic J has a closed-form tilted mean
    Tensor mu({2}, {1.0, -0.5});
    Tensor cov({2, 2}, {0.4, 0.0, 0.0, 0.4});
    GmmFlowOracle oracle = GmmFlowOracle::single(mu, cov);
    GmmFlowOracle::Field field = oracle.field();
    GuidanceContext ctx;
    ctx.field = &field;
    ctx.schedule = Schedule::linear();

    EnergyFn energy = EnergyFn::quadratic(Tensor({2}, {-1.0, 1.0}),
                                          Tensor::identity(2), 1.0);
    // tilted gaussian: precision 1/0.4 + 1
    const double prec = 1.0 / 0.4 + 1.0;
    Tensor tilted_mean({2});
    tilted_mean[0] = (mu[0] / 0.4 + -1.0) / prec;
    tilted_mean[1] = (mu[1] / 0.4 + 1.0) / prec;

    GuidanceSpec spec;
    spec.method = GuidanceSpec::Method::CovA;
    spec.lambda.shape = LambdaShape::LinearDecay;
    spec.lambda.scale = 1.0;
    GuidanceFn fn = make_training_free_guidance(ctx, spec, &energy, 7);

    Rng rng(98);
    Tensor x0;
    oracle.sample_source(600, rng, x0);
    OdeOptions opts;
    opts.steps = 100;
    opts.t_end = 1.0 - 1e-4;
    opts.threads = 2;
    Tensor guided = guided_sample(field, &fn, x0, opts).samples;
    Tensor unguided = guided_sample(field, nullptr, x0, opts).samples;

    auto mean_of = [](const Tensor& pts) {
        Tensor m({2});
        for (std::size_t i = 0; i < pts.shape()[0]; ++i)
            for (int j = 0; j < 2; ++j) m[j] += pts.at(i, j) / pts.shape()[0];
        return m;
    };
    const double err_guided = norm((mean_of(guided) - tilted_mean).span());
    const double err_unguided = norm((mean_of(unguided) - tilted_mean).span());
    CHECK(err_guided <= 0.5 * err_unguided);
}

TEST_CASE("g_cov_g: identity field pullback matches finite differences") {
    // v(x, t) = x  ->  x1_hat = x + (1-t) x = (2-t) x, d x1_hat / dx = (2-t) I
    FunctionField ident(2, [](std::span<const double> x, double, std::span<double> out) {
        out[0] = x[0];
        out[1] = x[1];
    });
    GuidanceContext ctx;
    ctx.field = &ident;
    ctx.schedule = Schedule::linear();

    EnergyFn energy = quad_energy();
    const double t = 0.4;
    std::vector<double> x = {0.3, -0.7};
    Tensor g = g_cov_g(ctx, x, t, energy);

    std::vector<double> x1(2);
    for (int j = 0; j < 2; ++j) x1[j] = (2 - t) * x[j];
    Tensor dj = energy.grad(x1);
    const double lam = -(1 - t) / t;
    for (int j = 0; j < 2; ++j)
        CHECK(g[j] == doctest::Approx(lam * (2 - t) * dj[j]).epsilon(1e-8));
}

TEST_CASE("g_cov_g: schedule coefficient is -(1-t)/t on the linear path") {
    // with grad J == const vector and v == 0 the pullback reduces to lambda
    FunctionField zero(2, [](std::span<const double>, double, std::span<double> out) {
        out[0] = out[1] = 0.0;
    });
    GuidanceContext ctx;
    ctx.field = &zero;
    ctx.schedule = Schedule::linear();
    EnergyFn lin = EnergyFn::linear(Tensor({2}, {1.0, 0.0}), 1.0);
    Tensor g = g_cov_g(ctx, std::vector<double>{0.0, 0.0}, 0.5, lin);
    // lambda(0.5) = -1, dbeta = -1, beta = 0.5: g = lam*(-dbeta*dj + beta*0)/1
    CHECK(g[0] == doctest::Approx(-1.0).epsilon(1e-9));
    CHECK(g[1] == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("jacobian_trick_sigma: oracle field recovers the posterior covariance") {
    GmmFlowOracle single = GmmFlowOracle::single(Tensor({2}, {0.8, -0.4}),
                                                 Tensor({2, 2}, {0.5, 0.1, 0.1, 0.4}));
    GmmFlowOracle::Field field = single.field();
    GuidanceContext ctx;
    ctx.field = &field;
    ctx.schedule = Schedule::linear();

    Rng rng(99);
    for (int rep = 0; rep < 10; ++rep) {
        const double t = 0.1 + 0.8 * rng.uniform();
        Tensor x;
        single.sample_path(1, t, rng, x);
        double asym = -1.0;
        Tensor sigma = jacobian_trick_sigma(ctx, x.row(0), t, &asym);
        Tensor want = single.posterior(x.row(0), t).covariance();
        CHECK(fgtest::rel_l2(sigma.span(), want.span()) <= 1e-6);
        CHECK(asym >= 0.0);
        CHECK(asym <= 1e-8);
        // symmetry by construction
        CHECK(sigma.at(0, 1) == sigma.at(1, 0));
    }

    // posterior variance collapses at t -> 1
    Tensor x({2}, {0.5, 0.1});
    Tensor sigma = jacobian_trick_sigma(ctx, x.span(), 0.999);
    double fro = 0.0;
    for (int i = 0; i < 4; ++i) fro += sigma[i] * sigma[i];
    CHECK(std::sqrt(fro) <= 1e-3);
}

TEST_CASE("g_sim_mc: constant energy and N = 1 are exactly zero") {
    OracleSetup s(gmm_target());
    EnergyFn constant = EnergyFn::quadratic(Tensor({2}), Tensor({2, 2}), 1.0)
                            .with_offset(0.9);
    Rng rng(100);
    Tensor g0 = g_sim_mc(s.ctx, std::vector<double>{0.4, 0.0}, 0.5, constant, 500, 0.2, rng);
    CHECK(norm(g0.span()) <= 1e-12);

    EnergyFn energy = quad_energy();
    Tensor g1 = g_sim_mc(s.ctx, std::vector<double>{0.4, 0.0}, 0.5, energy, 1, 0.2, rng);
    CHECK(g1[0] == 0.0);
    CHECK(g1[1] == 0.0);
}

TEST_CASE("g_sim_mc: directional agreement with the oracle at t >= 0.5") {
    OracleSetup s(gmm_target());
    EnergyFn energy = quad_energy();
    Rng rng(101);
    double cosine_sum = 0.0;
    int count = 0;
    for (int rep = 0; rep < 100; ++rep) {
        const double t = 0.5 + 0.45 * rng.uniform();
        Tensor x;
        s.oracle.sample_path(1, t, rng, x);
        Tensor g = g_sim_mc(s.ctx, x.row(0), t, energy, 1000, -1.0, rng);
        auto tilt = s.oracle.tilted(energy, x.row(0), t);
        const double dot_gv = g[0] * tilt.guidance[0] + g[1] * tilt.guidance[1];
        const double denom = norm(g.span()) * norm(tilt.guidance.span());
        if (denom > 1e-12) {
            cosine_sum += dot_gv / denom;
            count += 1;
        }
    }
    CHECK(cosine_sum / count >= 0.9);
}

TEST_CASE("g_sim_inv_a: consistent measurement gives zero, scalar case checks out") {
    OracleSetup s(gmm_target());
    const double t = 0.5;
    std::vector<double> x = {0.4, -0.1};
    Tensor v = s.field.eval(x, t);
    std::vector<double> x1(2);
    estimate_x1(x, t, v.span(), s.ctx.schedule, x1);

    Tensor h = Tensor::identity(2);
    Tensor y({2}, {x1[0], x1[1]});
    Tensor g = g_sim_inv_a(s.ctx, x, t, h, y, 0.3, 0.5, 1.0);
    CHECK(norm(g.span()) <= 1e-12);

    // H = I, sigma^2/r^2 = 1, lambda = 1: g = -(y - x1_hat) / 2
    Tensor y2({2}, {x1[0] + 1.0, x1[1] - 2.0});
    Tensor g2 = g_sim_inv_a(s.ctx, x, t, h, y2, 0.5, 0.5, 1.0);
    CHECK(g2[0] == doctest::Approx(-0.5).epsilon(1e-12));
    CHECK(g2[1] == doctest::Approx(1.0).epsilon(1e-12));

    CHECK_THROWS_AS(g_sim_inv_a(s.ctx, x, t, h, y2, 0.0, 0.5, 1.0), ContractError);
}

TEST_CASE("g_diff_logz: constant log Z gives zero; clamps near t = 0") {
    OracleSetup s(gmm_target());
    FunctionScalarField constant([](std::span<const double>, double) { return 1.3; });
    Tensor g = g_diff_logz(s.ctx, std::vector<double>{0.2, 0.2}, 0.5, constant);
    CHECK(norm(g.span()) <= 1e-9);
    bool clamped = false;
    g_diff_logz(s.ctx, std::vector<double>{0.2, 0.2}, 0.0, constant, &clamped);
    CHECK(clamped);
}

TEST_CASE("g_diff_logz: deviates from the true guidance on a uniform source") {
    // the diffusion-equivalent construction assumes a Gaussian source; on a
    // uniform source it is biased (reported, not asserted as a hard bound)
    Density2D source = Density2D::uniform_box({-2, -2}, {2, 2});
    Density2D target = gmm_target();
    EnergyFn energy = quad_energy();

    // true guidance for this source via quadrature; log Z via quadrature too
    auto quad_logz = [&](std::span<const double> x, double t) {
        auto q = quadrature_guidance(target, source, energy, x, t);
        return std::log(q.z);
    };
    FunctionScalarField logz(quad_logz);

    GmmFlowOracle helper = GmmFlowOracle::from_density(target);
    GmmFlowOracle::Field field = helper.field();  // only sets dim/t_eps context
    GuidanceContext ctx;
    ctx.field = &field;
    ctx.schedule = Schedule::linear();

    Rng rng(103);
    std::vector<double> rels;
    for (int rep = 0; rep < 6; ++rep) {
        const double t = 0.3 + 0.4 * rng.uniform();
        std::vector<double> x = {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
        Tensor g = g_diff_logz(ctx, x, t, logz);
        auto truth = quadrature_guidance(target, source, energy, x, t);
        rels.push_back(fgtest::rel_l2(g.span(), truth.guidance.span()));
    }
    MESSAGE("diffusion-equivalent guidance on uniform source: median rel L2 = ",
            median(rels));
    CHECK(std::isfinite(median(rels)));
    CHECK(median(rels) > 0.01);  // visibly biased, exact magnitude not pinned
}

TEST_CASE("guided_sample: method none is bit-identical to unguided") {
    OracleSetup s(gmm_target());
    Rng rng(104);
    Tensor x0;
    s.oracle.sample_source(64, rng, x0);
    OdeOptions opts;
    opts.steps = 40;
    opts.t_end = 1.0 - 1e-4;
    opts.threads = 2;
    GuidedSampleResult a = guided_sample(s.field, nullptr, x0, opts);
    GuidanceFn none = make_training_free_guidance(s.ctx, GuidanceSpec{}, nullptr, 1);
    CHECK(!none);  // method none yields no guidance closure
    GuidedSampleResult b = guided_sample(s.field, nullptr, x0, opts);
    CHECK(max_abs_diff(a.samples, b.samples) == 0.0);
}

TEST_CASE("guided_sample: constant energy with g_mc stays within resampling noise") {
    OracleSetup s(gmm_target());
    EnergyFn constant = EnergyFn::quadratic(Tensor({2}), Tensor({2, 2}), 1.0);
    GuidanceSpec spec;
    spec.method = GuidanceSpec::Method::Mc;
    spec.n_samples = 500;
    spec.sigma_mc = s.ctx.sigma_mc;
    GuidanceFn fn = make_training_free_guidance(s.ctx, spec, &constant, 11);

    Rng rng(105);
    Tensor x0;
    s.oracle.sample_source(256, rng, x0);
    OdeOptions opts;
    opts.steps = 50;
    opts.t_end = 1.0 - 1e-4;
    opts.threads = 2;
    Tensor guided = guided_sample(s.field, &fn, x0, opts).samples;
    Tensor unguided = guided_sample(s.field, nullptr, x0, opts).samples;
    CHECK(w2_distance(guided, unguided) <= 1e-10);
}

TEST_CASE("guided_sample: per-step diagnostics and trajectories carry gnorm") {
    OracleSetup s(gmm_target());
    EnergyFn energy = quad_energy();
    GuidanceSpec spec;
    spec.method = GuidanceSpec::Method::Mc;
    spec.n_samples = 300;
    spec.sigma_mc = s.ctx.sigma_mc;
    GuidanceFn fn = make_training_free_guidance(s.ctx, spec, &energy, 12);

    Rng rng(106);
    Tensor x0;
    s.oracle.sample_source(32, rng, x0);
    OdeOptions opts;
    opts.steps = 25;
    opts.t_end = 1.0 - 1e-4;
    opts.record_trajectories = 4;
    GuidedSampleResult result = guided_sample(s.field, &fn, x0, opts);
    REQUIRE(result.diagnostics.size() == 25);
    for (const auto& d : result.diagnostics) {
        CHECK(d.mean_ess > 0.0);
        CHECK(d.mean_z > 0.0);
    }
    REQUIRE(result.trajectories.size() == 4);
    CHECK(result.trajectories[0].gnorm.size() == 25);
}

TEST_CASE("guided_sample: guidance evaluation is thread-count independent") {
    OracleSetup s(gmm_target());
    EnergyFn energy = quad_energy();
    GuidanceSpec spec;
    spec.method = GuidanceSpec::Method::Mc;
    spec.n_samples = 200;
    spec.sigma_mc = s.ctx.sigma_mc;
    GuidanceFn fn = make_training_free_guidance(s.ctx, spec, &energy, 13);

    Rng rng(107);
    Tensor x0;
    s.oracle.sample_source(48, rng, x0);
    OdeOptions opts;
    opts.steps = 20;
    opts.t_end = 1.0 - 1e-4;

    opts.threads = 1;
    Tensor a = guided_sample(s.field, &fn, x0, opts).samples;
    opts.threads = 4;
    Tensor b = guided_sample(s.field, &fn, x0, opts).samples;
    CHECK(max_abs_diff(a, b) == 0.0);
}

TEST_CASE("fixed-pool mode reuses one particle set across steps") {
    OracleSetup s(gmm_target());
    EnergyFn energy = quad_energy();
    GuidanceSpec spec;
    spec.method = GuidanceSpec::Method::Mc;
    spec.n_samples = 400;
    spec.fresh_samples = false;
    spec.sigma_mc = s.ctx.sigma_mc;
    GuidanceFn fixed = make_training_free_guidance(s.ctx, spec, &energy, 21);
    spec.fresh_samples = true;
    GuidanceFn fresh = make_training_free_guidance(s.ctx, spec, &energy, 21);

    std::vector<double> x = {0.3, 0.3};
    Tensor g_a({2}), g_b({2}), f_a({2}), f_b({2});
    fixed(0, 3, x, 0.5, g_a.span(), nullptr, nullptr);
    fixed(0, 9, x, 0.5, g_b.span(), nullptr, nullptr);
    fresh(0, 3, x, 0.5, f_a.span(), nullptr, nullptr);
    fresh(0, 9, x, 0.5, f_b.span(), nullptr, nullptr);
    CHECK(max_abs_diff(g_a, g_b) == 0.0);   // same pool, same estimate
    CHECK(max_abs_diff(f_a, f_b) != 0.0);   // fresh draws differ across steps
}

TEST_CASE("energy-shift invariance holds for every method") {
    OracleSetup s(gmm_target());
    EnergyFn energy = quad_energy();
    EnergyFn shifted = energy.with_offset(-2.3);
    std::vector<double> x = {0.25, -0.4};
    const double t = 0.6;

    auto check_pair = [&](const Tensor& a, const Tensor& b) {
        CHECK(max_abs_diff(a, b) <= 1e-12);
    };

    {
        Rng r1(201), r2(201);
        check_pair(g_mc(s.ctx, x, t, energy, 2000, r1),
                   g_mc(s.ctx, x, t, shifted, 2000, r2));
    }
    {
        Rng r1(202), r2(202);
        check_pair(g_mc_x1(s.ctx, x, t, energy, 2000, r1),
                   g_mc_x1(s.ctx, x, t, shifted, 2000, r2));
    }
    {
        LambdaSchedule lam;
        check_pair(g_cov_a(s.ctx, x, t, energy, lam),
                   g_cov_a(s.ctx, x, t, shifted, lam));
        check_pair(g_cov_g(s.ctx, x, t, energy), g_cov_g(s.ctx, x, t, shifted));
    }
    {
        Rng r1(203), r2(203);
        check_pair(g_sim_mc(s.ctx, x, t, energy, 500, 0.2, r1),
                   g_sim_mc(s.ctx, x, t, shifted, 500, 0.2, r2));
    }
}
