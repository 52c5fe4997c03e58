#include <doctest.h>

#include <cmath>

#include "flowguide/numeric.hpp"
#include "flowguide/oracle.hpp"
#include "flowguide/trainguide.hpp"
#include "test_util.hpp"

using namespace flowguide;

namespace {

struct SingleGaussianToy {
    GmmFlowOracle oracle;
    GmmFlowOracle::Field field;
    CouplingSampler pairs;
    EnergyFn energy;
    Schedule schedule = Schedule::linear();

    SingleGaussianToy()
        : oracle(GmmFlowOracle::single(Tensor({2}, {1.0, -0.5}),
                                       Tensor({2, 2}, {0.4, 0.0, 0.0, 0.4}))),
          field(oracle.field()),
          pairs(Density2D::standard_gaussian(),
                Density2D::gaussian({1.0, -0.5}, {0.4, 0.0, 0.0, 0.4})),
          energy(EnergyFn::quadratic(Tensor({2}, {-0.5, 0.5}), Tensor::identity(2),
                                     1.0)) {}
};

}  // namespace

TEST_CASE("stop-gradient contract: a g step changes no z parameter") {
    SingleGaussianToy toy;
    GuidanceTrainConfig cfg;
    cfg.steps = 0;
    cfg.z_hidden = {16, 16};
    cfg.g_hidden = {16, 16};
    cfg.seed = 5;
    GuidanceNets nets = train_guidance(toy.field, toy.pairs, toy.schedule, toy.energy, cfg);

    const std::vector<double> z_before = nets.z_net.flatten_params();
    const std::vector<double> g_before = nets.g_net.flatten_params();
    AdamState adam = guidance_adam_init(nets.g_net, 1e-3);
    Rng rng(6);
    guidance_g_step(nets, toy.field, toy.pairs, toy.schedule, toy.energy, adam, 64, rng);

    CHECK(nets.z_net.flatten_params() == z_before);   // bitwise unchanged
    CHECK(nets.g_net.flatten_params() != g_before);   // g actually trained
}

TEST_CASE("z head is strictly positive on random probes") {
    SingleGaussianToy toy;
    GuidanceTrainConfig cfg;
    cfg.steps = 0;
    cfg.z_hidden = {8};
    cfg.g_hidden = {8};
    GuidanceNets nets = train_guidance(toy.field, toy.pairs, toy.schedule, toy.energy, cfg);
    Rng rng(7);
    for (int i = 0; i < 200; ++i) {
        std::vector<double> x = {rng.normal() * 3, rng.normal() * 3};
        CHECK(z_value(nets, x, rng.uniform()) > 0.0);
    }
}

TEST_CASE("loss_z: constant energy regresses to e^{-c}") {
    SingleGaussianToy toy;
    EnergyFn constant = EnergyFn::quadratic(Tensor({2}), Tensor({2, 2}), 1.0)
                            .with_offset(0.8);
    GuidanceTrainConfig cfg;
    cfg.steps = 2000;
    cfg.batch = 256;
    cfg.z_hidden = {32, 32};
    cfg.g_hidden = {8};
    cfg.lr = 3e-3;
    cfg.seed = 8;
    GuidanceNets nets = train_guidance(toy.field, toy.pairs, toy.schedule, constant, cfg);
    const double want = std::exp(-0.8);
    Rng rng(9);
    double mean_rel = 0.0, worst = 0.0;
    const int probes = 40;
    for (int i = 0; i < probes; ++i) {
        const double t = rng.uniform();
        Tensor xs;
        toy.oracle.sample_path(1, t, rng, xs);
        const double rel = fgtest::rel_err(z_value(nets, xs.row(0), t), want);
        mean_rel += rel / probes;
        worst = std::max(worst, rel);
    }
    CHECK(mean_rel <= 0.01);
    CHECK(worst <= 0.05);
}

TEST_CASE("loss_z: converged surrogate matches the closed-form Z_t") {
    SingleGaussianToy toy;
    GuidanceTrainConfig cfg;
    cfg.steps = 3000;
    cfg.batch = 256;
    cfg.z_hidden = {64, 64, 64};
    cfg.g_hidden = {8};
    cfg.lr = 2e-3;
    cfg.seed = 10;
    GuidanceNets nets = train_guidance(toy.field, toy.pairs, toy.schedule, toy.energy, cfg);

    Rng rng(11);
    std::vector<double> rels;
    for (int rep = 0; rep < 200; ++rep) {
        const double t = 0.05 + 0.9 * rng.uniform();
        Tensor x;
        toy.oracle.sample_path(1, t, rng, x);
        const double got = z_value(nets, x.row(0), t);
        const double want = toy.oracle.tilted(toy.energy, x.row(0), t).z;
        rels.push_back(fgtest::rel_err(got, want));
    }
    CHECK(median(rels) <= 0.05);
}

TEST_CASE("loss_z minimizer check: the exact oracle beats perturbed oracles") {
    SingleGaussianToy toy;
    Rng rng(12);
    const std::size_t n = 20000;
    Tensor x0, x1;
    toy.pairs.sample_pairs(n, rng, x0, x1);

    auto batch_mse = [&](double shift, double gain) {
        double total = 0.0;
        std::vector<double> xt(2), zero(2, 0.0);
        Rng trng(13);
        for (std::size_t i = 0; i < n; ++i) {
            const double t = trng.uniform();
            sample_conditional_path(x0.row(i), x1.row(i), t, zero, toy.schedule, xt);
            const double z = toy.oracle.tilted(toy.energy, xt, t).z * gain + shift;
            const double target = std::exp(-toy.energy.value(x1.row(i)));
            total += (z - target) * (z - target);
        }
        return total / n;
    };
    const double at_oracle = batch_mse(0.0, 1.0);
    CHECK(at_oracle <= batch_mse(0.05, 1.0));
    CHECK(at_oracle <= batch_mse(-0.05, 1.0));
    CHECK(at_oracle <= batch_mse(0.0, 1.1));
    CHECK(at_oracle <= batch_mse(0.0, 0.9));
}

TEST_CASE("loss_g: constant energy trains the guidance to zero") {
    SingleGaussianToy toy;
    EnergyFn constant = EnergyFn::quadratic(Tensor({2}), Tensor({2, 2}), 1.0);
    GuidanceTrainConfig cfg;
    cfg.steps = 1200;
    cfg.batch = 128;
    cfg.z_hidden = {16, 16};
    cfg.g_hidden = {32, 32};
    cfg.lr = 2e-3;
    cfg.seed = 14;
    GuidanceNets nets = train_guidance(toy.field, toy.pairs, toy.schedule, constant, cfg);

    // field scale: mean |v| over path points
    Rng rng(15);
    double field_scale = 0.0, g_norm = 0.0;
    for (int rep = 0; rep < 100; ++rep) {
        const double t = 0.1 + 0.8 * rng.uniform();
        Tensor x;
        toy.oracle.sample_path(1, t, rng, x);
        field_scale += norm(toy.field.eval(x.row(0), t).span()) / 100.0;
        g_norm += norm(g_value(nets, x.row(0), t).span()) / 100.0;
    }
    CHECK(g_norm <= 0.05 * std::max(field_scale, 1.0));
}

TEST_CASE("discrete-z toy: marginal and conditional loss gradients agree to 1e-8") {
    // z in {z1, z2}, p(x|z)一维 Gaussians, linear model f_theta(x) = theta^T phi(x)
    // with phi(x) = (1, x). The marginal loss gradient equals the conditional
    // loss gradient when both are evaluated with exact expectations.
    const double pz[2] = {0.4, 0.6};
    const double mu[2] = {-1.0, 1.5};
    const double sd = 0.7;
    const double fz[2] = {2.0, -1.0};  // f_{t|z}(x, z) = fz[z] (constant in x)
    const double theta[2] = {0.3, -0.2};

    const std::size_t grid_n = 4001;
    const double lo = -6.0, hi = 7.0;
    const double step = (hi - lo) / (grid_n - 1);
    auto normal_pdf = [&](double x, double m) {
        return std::exp(-0.5 * (x - m) * (x - m) / (sd * sd)) /
               (sd * std::sqrt(2 * 3.14159265358979323846));
    };

    double grad_marginal[2] = {0, 0}, grad_conditional[2] = {0, 0};
    for (std::size_t i = 0; i < grid_n; ++i) {
        const double x = lo + step * i;
        const double w = (i == 0 || i == grid_n - 1) ? 0.5 : 1.0;
        const double px_z[2] = {normal_pdf(x, mu[0]), normal_pdf(x, mu[1])};
        const double px = pz[0] * px_z[0] + pz[1] * px_z[1];
        const double post[2] = {pz[0] * px_z[0] / px, pz[1] * px_z[1] / px};
        const double f_pred = theta[0] + theta[1] * x;
        const double f_bar = post[0] * fz[0] + post[1] * fz[1];
        // marginal: d/dtheta (f_pred - f_bar)^2 = 2 (f_pred - f_bar) phi
        grad_marginal[0] += w * px * 2 * (f_pred - f_bar) * 1.0;
        grad_marginal[1] += w * px * 2 * (f_pred - f_bar) * x;
        // conditional: E_z 2 (f_pred - f_z) phi
        for (int z = 0; z < 2; ++z) {
            const double joint = px * post[z];
            grad_conditional[0] += w * joint * 2 * (f_pred - fz[z]) * 1.0;
            grad_conditional[1] += w * joint * 2 * (f_pred - fz[z]) * x;
        }
    }
    grad_marginal[0] *= step;
    grad_marginal[1] *= step;
    grad_conditional[0] *= step;
    grad_conditional[1] *= step;
    CHECK(std::abs(grad_marginal[0] - grad_conditional[0]) <= 1e-8);
    CHECK(std::abs(grad_marginal[1] - grad_conditional[1]) <= 1e-8);
}

TEST_CASE("discrete-z toy: GM/VGM/RGM/MRGM expected gradients coincide") {
    // same toy; guidance-matching targets with exact Z(x) and exact v_theta.
    // GM:   d/dth ||g - (r - 1) f_z||^2
    // VGM:  d/dth ||g + v - r f_z||^2        (v = E[f_z | x])
    // RGM:  d/dth r ||g + v - f_z||^2
    // MRGM: d/dth (e^{-J}/Z_marg) ||g + v - f_z||^2
    const double pz[2] = {0.4, 0.6};
    const double mu[2] = {-1.0, 1.5};
    const double sd = 0.7;
    const double fz[2] = {2.0, -1.0};
    const double jz[2] = {0.3, 1.1};  // energy value per z (depends on x1 = z)
    const double theta[2] = {0.3, -0.2};

    const std::size_t grid_n = 8001;
    const double lo = -7.0, hi = 8.0;
    const double step = (hi - lo) / (grid_n - 1);
    auto normal_pdf = [&](double x, double m) {
        return std::exp(-0.5 * (x - m) * (x - m) / (sd * sd)) /
               (sd * std::sqrt(2 * 3.14159265358979323846));
    };
    const double z_marg = pz[0] * std::exp(-jz[0]) + pz[1] * std::exp(-jz[1]);

    double g_gm[2] = {0, 0}, g_vgm[2] = {0, 0}, g_rgm[2] = {0, 0}, g_mrgm[2] = {0, 0};
    double g_rgm_reweighted[2] = {0, 0};  // RGM under the Z(x)-reweighted x-measure
    for (std::size_t i = 0; i < grid_n; ++i) {
        const double x = lo + step * i;
        const double w = ((i == 0 || i == grid_n - 1) ? 0.5 : 1.0) * step;
        const double px_z[2] = {normal_pdf(x, mu[0]), normal_pdf(x, mu[1])};
        const double px = pz[0] * px_z[0] + pz[1] * px_z[1];
        const double post[2] = {pz[0] * px_z[0] / px, pz[1] * px_z[1] / px};
        const double zx = post[0] * std::exp(-jz[0]) + post[1] * std::exp(-jz[1]);
        const double v = post[0] * fz[0] + post[1] * fz[1];
        const double g_pred = theta[0] + theta[1] * x;
        const double phi[2] = {1.0, x};
        for (int z = 0; z < 2; ++z) {
            const double joint = px * post[z];
            const double r = std::exp(-jz[z]) / zx;
            for (int p = 0; p < 2; ++p) {
                g_gm[p] += w * joint * 2 * (g_pred - (r - 1) * fz[z]) * phi[p];
                g_vgm[p] += w * joint * 2 * (g_pred + v - r * fz[z]) * phi[p];
                g_rgm[p] += w * joint * r * 2 * (g_pred + v - fz[z]) * phi[p];
                g_mrgm[p] += w * joint * (std::exp(-jz[z]) / z_marg) * 2 *
                             (g_pred + v - fz[z]) * phi[p];
                g_rgm_reweighted[p] += w * joint * (zx / z_marg) * r * 2 *
                                       (g_pred + v - fz[z]) * phi[p];
            }
        }
    }
    for (int p = 0; p < 2; ++p) {
        CHECK(std::abs(g_gm[p] - g_vgm[p]) <= 1e-8);
        CHECK(std::abs(g_gm[p] - g_rgm[p]) <= 1e-8);
        // MRGM equals RGM once the x-measure is reweighted by Z(x)/Z_marg
        CHECK(std::abs(g_mrgm[p] - g_rgm_reweighted[p]) <= 1e-8);
    }
}

TEST_CASE("estimate_z_mc: trivial values") {
    SingleGaussianToy toy;
    GuidanceContext ctx;
    ctx.field = &toy.field;
    ctx.schedule = toy.schedule;
    ctx.pairs = &toy.pairs;
    ctx.sigma_mc = 0.1;

    EnergyFn constant = EnergyFn::quadratic(Tensor({2}), Tensor({2, 2}), 1.0)
                            .with_offset(1.3);
    Rng rng(16);
    const double z = estimate_z_mc(ctx, std::vector<double>{0.2, 0.0}, 0.5, constant,
                                   500, rng);
    CHECK(z == doctest::Approx(std::exp(-1.3)).epsilon(1e-12));

    // N = 1 returns e^{-J(x1)} for the single drawn x1
    Rng r_pairs(17);
    Tensor x0, x1;
    toy.pairs.sample_pairs(1, r_pairs, x0, x1);
    Rng r_same(17);
    const double z1 = estimate_z_mc(ctx, std::vector<double>{0.2, 0.0}, 0.5,
                                    toy.energy, 1, r_same);
    CHECK(z1 == doctest::Approx(std::exp(-toy.energy.value(x1.row(0)))).epsilon(1e-12));
}

TEST_CASE("train_guidance: zero steps returns the initialization; MRGM has no z net") {
    SingleGaussianToy toy;
    GuidanceTrainConfig cfg;
    cfg.steps = 0;
    cfg.z_hidden = {8};
    cfg.g_hidden = {8};
    cfg.seed = 30;
    GuidanceNets nets = train_guidance(toy.field, toy.pairs, toy.schedule, toy.energy, cfg);
    CHECK(nets.has_z);
    CHECK(nets.g_loss_curve.empty());

    cfg.kind = GuidanceLossKind::MRGM;
    cfg.mrgm_z_samples = 5000;
    GuidanceNets mrgm = train_guidance(toy.field, toy.pairs, toy.schedule, toy.energy, cfg);
    CHECK(!mrgm.has_z);
    CHECK(mrgm.z_net.weights.empty());
    CHECK(mrgm.mrgm_z > 0.0);
}

TEST_CASE("train_guidance is seed deterministic") {
    SingleGaussianToy toy;
    GuidanceTrainConfig cfg;
    cfg.steps = 30;
    cfg.batch = 64;
    cfg.z_hidden = {8};
    cfg.g_hidden = {8};
    cfg.seed = 31;
    GuidanceNets a = train_guidance(toy.field, toy.pairs, toy.schedule, toy.energy, cfg);
    GuidanceNets b = train_guidance(toy.field, toy.pairs, toy.schedule, toy.energy, cfg);
    CHECK(a.g_net.flatten_params() == b.g_net.flatten_params());
    CHECK(a.z_loss_curve == b.z_loss_curve);
}

TEST_CASE("cov model: learned covariance approaches the closed form") {
    SingleGaussianToy toy;
    CovTrainConfig cfg;
    cfg.steps = 2500;
    cfg.batch = 256;
    cfg.hidden = {64, 64};
    cfg.lr = 2e-3;
    cfg.seed = 33;
    CovModel cov = train_cov_model(toy.field, toy.pairs, toy.schedule, cfg);

    GuidanceContext ctx;
    ctx.field = &toy.field;
    ctx.schedule = toy.schedule;

    Rng rng(34);
    std::vector<double> rels;
    for (int rep = 0; rep < 100; ++rep) {
        const double t = 0.15 + 0.7 * rng.uniform();
        Tensor x;
        toy.oracle.sample_path(1, t, rng, x);
        Tensor got = cov_model_sigma(cov, ctx, x.row(0), t);
        Tensor want = toy.oracle.posterior(x.row(0), t).covariance();
        rels.push_back(fgtest::rel_l2(got.span(), want.span()));
    }
    CHECK(median(rels) <= 0.1);
}

TEST_CASE("g_cov_l: isotropic covariance is collinear with cov-A; constant J is zero") {
    SingleGaussianToy toy;
    GuidanceContext ctx;
    ctx.field = &toy.field;
    ctx.schedule = toy.schedule;

    const double t = 0.5;
    std::vector<double> x = {0.3, -0.2};
    Tensor v = toy.field.eval(x, t);
    std::vector<double> x1(2);
    estimate_x1(x, t, v.span(), toy.schedule, x1);

    // fabricate a cov model that reads out s^2 I everywhere: zero weights,
    // bias = packed isotropic covariance
    const double s2 = 0.17;
    CovModel cov;
    cov.dim = 2;
    Rng rng(35);
    cov.m2_net = MlpModel::make({2, 4, 3}, ActivationKind::Tanh, 4, rng);
    for (auto& w : cov.m2_net.weights) w.fill(0.0);
    for (auto& b : cov.m2_net.biases) b.fill(0.0);
    cov.m2_net.biases.back()[0] = s2;
    cov.m2_net.biases.back()[1] = 0.0;
    cov.m2_net.biases.back()[2] = s2;

    Tensor g_l = g_cov_l(ctx, x, t, toy.energy, cov);
    LambdaSchedule one;
    Tensor g_a = g_cov_a(ctx, x, t, toy.energy, one);
    const double cosine =
        (g_l[0] * g_a[0] + g_l[1] * g_a[1]) /
        std::max(norm(g_l.span()) * norm(g_a.span()), 1e-30);
    CHECK(cosine >= 0.999);
    // magnitude: scalar preconditioner s^2 times the schedule (1/beta at t=.5 -> 2)
    CHECK(norm(g_l.span()) ==
          doctest::Approx(s2 / (1 - t) * norm(g_a.span())).epsilon(1e-9));

    EnergyFn constant = EnergyFn::quadratic(Tensor({2}), Tensor({2, 2}), 1.0);
    Tensor g_zero = g_cov_l(ctx, x, t, constant, cov);
    CHECK(norm(g_zero.span()) == 0.0);
}

TEST_CASE("z-net scalar field: exact gradient matches finite differences") {
    SingleGaussianToy toy;
    GuidanceTrainConfig cfg;
    cfg.steps = 150;
    cfg.batch = 64;
    cfg.z_hidden = {16, 16};
    cfg.g_hidden = {8};
    cfg.seed = 36;
    GuidanceNets nets = train_guidance(toy.field, toy.pairs, toy.schedule, toy.energy, cfg);

    ZNetScalarField field(&nets);
    std::vector<double> x = {0.4, -0.6};
    const double t = 0.35;
    std::vector<double> grad(2);
    field.grad(x, t, grad);
    auto f = [&](std::span<const double> q) { return field.value(q, t); };
    auto fd = fgtest::fd_grad(f, x);
    CHECK(fgtest::rel_err(grad[0], fd[0], 1e-8) <= 1e-6);
    CHECK(fgtest::rel_err(grad[1], fd[1], 1e-8) <= 1e-6);
}

TEST_CASE("guidance loss probes decrease after training (smoothed)") {
    SingleGaussianToy toy;
    GuidanceTrainConfig cfg;
    cfg.steps = 400;
    cfg.batch = 128;
    cfg.z_hidden = {32, 32};
    cfg.g_hidden = {32, 32};
    cfg.lr = 2e-3;
    cfg.seed = 37;
    GuidanceNets nets = train_guidance(toy.field, toy.pairs, toy.schedule, toy.energy, cfg);
    REQUIRE(nets.g_loss_curve.size() == 400);
    double head = 0, tail = 0;
    for (int i = 0; i < 40; ++i) {
        head += nets.g_loss_curve[i] / 40;
        tail += nets.g_loss_curve[400 - 1 - i] / 40;
    }
    CHECK(tail < head);
    double zhead = 0, ztail = 0;
    for (int i = 0; i < 40; ++i) {
        zhead += nets.z_loss_curve[i] / 40;
        ztail += nets.z_loss_curve[400 - 1 - i] / 40;
    }
    CHECK(ztail < zhead);
}
