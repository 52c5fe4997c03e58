#include "flowguide/guidance.hpp"

#include <cmath>

#include "flowguide/errors.hpp"
#include "flowguide/linalg.hpp"
#include "flowguide/numeric.hpp"
#include "flowguide/parallel.hpp"

namespace flowguide {

double LambdaSchedule::eval(double t) const {
    const double tc = std::clamp(t, 0.0, 1.0);
    double shape_value = 1.0;
    switch (shape) {
        case LambdaShape::Constant: shape_value = 1.0; break;
        case LambdaShape::LinearDecay: shape_value = 1.0 - tc; break;
        case LambdaShape::CosineDecay:
            shape_value = 0.5 * (1.0 + std::cos(3.14159265358979323846 * tc));
            break;
        case LambdaShape::ExpDecay: shape_value = std::exp(-decay_rate * tc); break;
    }
    return scale * shape_value;
}

LambdaShape LambdaSchedule::shape_from_string(const std::string& name) {
    if (name == "constant") return LambdaShape::Constant;
    if (name == "linear_decay") return LambdaShape::LinearDecay;
    if (name == "cosine_decay") return LambdaShape::CosineDecay;
    if (name == "exp_decay") return LambdaShape::ExpDecay;
    throw ValidationError("unknown lambda shape '" + name + "'");
}

std::string LambdaSchedule::shape_to_string(LambdaShape shape) {
    switch (shape) {
        case LambdaShape::Constant: return "constant";
        case LambdaShape::LinearDecay: return "linear_decay";
        case LambdaShape::CosineDecay: return "cosine_decay";
        case LambdaShape::ExpDecay: return "exp_decay";
    }
    return "constant";
}

void ScalarField::grad(std::span<const double> x, double t, std::span<double> out) const {
    const double h = 1e-5;
    std::vector<double> xp(x.begin(), x.end());
    for (std::size_t j = 0; j < x.size(); ++j) {
        const double orig = xp[j];
        xp[j] = orig + h;
        const double fp = value(xp, t);
        xp[j] = orig - h;
        const double fm = value(xp, t);
        xp[j] = orig;
        out[j] = (fp - fm) / (2.0 * h);
    }
}

namespace {

// Shared self-normalized weight reduction. Inputs: per-sample conditional
// log-densities `log_p` and energy exponents u_i = -J(x1_i). Produces the
// log importance weights kappa_i = log_p_i - LSE(log_p) (they sum to one in
// linear space), the normalizer estimate and its eps_stab floor. The floor is
// relative to max_i u_i so that constant-energy and energy-shift exactness
// are preserved.
struct McWeights {
    std::vector<double> kappa;
    std::vector<double> u;
    double log_z = 0.0;       // un-floored normalizer estimate
    double log_z_stab = 0.0;  // floored
    double ess = 0.0;
};

McWeights reduce_weights(const GuidanceContext& ctx, std::vector<double> log_p,
                         std::vector<double> u) {
    double max_lp = kNegInf;
    for (double v : log_p) max_lp = std::max(max_lp, v);
    if (max_lp < ctx.log_weight_floor)
        throw DegenerateEstimateError(
            "mc guidance: every conditional density underflowed (max log-weight " +
            std::to_string(max_lp) + ")");

    McWeights w;
    w.kappa = std::move(log_p);
    const double lse = log_sum_exp(w.kappa);
    double sum_sq = 0.0;
    for (double& k : w.kappa) {
        k -= lse;
        const double wi = std::exp(k);
        sum_sq += wi * wi;
    }
    w.ess = 1.0 / sum_sq;
    w.u = std::move(u);

    std::vector<double> uk(w.u.size());
    double max_u = kNegInf;
    for (std::size_t i = 0; i < w.u.size(); ++i) {
        uk[i] = w.u[i] + w.kappa[i];
        max_u = std::max(max_u, w.u[i]);
    }
    w.log_z = log_sum_exp(uk);
    w.log_z_stab = w.log_z;
    if (ctx.eps_stab > 0.0)
        w.log_z_stab = std::max(w.log_z, std::log(ctx.eps_stab) + max_u);
    return w;
}

void fill_diag(const McWeights& w, McDiagnostics* diag) {
    if (!diag) return;
    diag->log_z = w.log_z;
    diag->z = std::exp(w.log_z);
    diag->ess = w.ess;
}

}  // namespace

Tensor g_mc_pool(const GuidanceContext& ctx, std::span<const double> x_t, double t,
                 const EnergyFn& energy, const Tensor& x0_pool, const Tensor& x1_pool,
                 McDiagnostics* diag) {
    const std::size_t n = x0_pool.shape()[0];
    if (n < 1) throw ContractError("g_mc: N >= 1 required");
    const ScheduleEval sched = ctx.schedule.eval(t);
    const double sigma_eff = std::max(sched.sigma, ctx.sigma_mc);

    std::vector<double> log_p(n), u(n);
    for (std::size_t i = 0; i < n; ++i) {
        log_p[i] = conditional_log_density(x_t, x0_pool.row(i), x1_pool.row(i), t,
                                           ctx.schedule, sigma_eff);
        u[i] = -energy.value(x1_pool.row(i));
    }
    McWeights w = reduce_weights(ctx, std::move(log_p), std::move(u));
    fill_diag(w, diag);

    const std::size_t d = x_t.size();
    Tensor g({d});
    std::vector<double> v(d);
    const std::vector<double> zero_noise(d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double signed_w =
            std::exp(w.u[i] + w.kappa[i] - w.log_z_stab) - std::exp(w.kappa[i]);
        if (signed_w == 0.0) continue;
        conditional_vf(x0_pool.row(i), x1_pool.row(i), t, zero_noise, ctx.schedule, v);
        for (std::size_t j = 0; j < d; ++j) g[j] += signed_w * v[j];
    }
    return g;
}

Tensor g_mc(const GuidanceContext& ctx, std::span<const double> x_t, double t,
            const EnergyFn& energy, std::size_t n, Rng& rng, McDiagnostics* diag) {
    if (!ctx.pairs) throw ContractError("g_mc: context has no pair sampler");
    if (n < 1) throw ContractError("g_mc: N >= 1 required");
    Tensor x0, x1;
    ctx.pairs->sample_pairs(n, rng, x0, x1);
    return g_mc_pool(ctx, x_t, t, energy, x0, x1, diag);
}

namespace {

void require_x1_variant(const GuidanceContext& ctx) {
    if (!ctx.independent_coupling)
        throw ContractError("g_mc_x1: independent coupling required "
                            "(the reduction needs pi(x0|x1) = p(x0))");
    if (!ctx.source_log_density)
        throw ContractError("g_mc_x1: analytic source log-density required");
    if (ctx.schedule.eval(0.5).sigma != 0.0)
        throw ContractError("g_mc_x1: sigma = 0 schedule required");
}

}  // namespace

Tensor g_mc_x1_pool(const GuidanceContext& ctx, std::span<const double> x_t, double t,
                    const EnergyFn& energy, const Tensor& x1_pool, McDiagnostics* diag) {
    require_x1_variant(ctx);
    const std::size_t n = x1_pool.shape()[0];
    if (n < 1) throw ContractError("g_mc_x1: N >= 1 required");
    const ScheduleEval sched = ctx.schedule.eval(t);
    if (!(sched.beta > 0.0))
        throw NumericalError("g_mc_x1: beta_t = 0 (t = 1 excluded)");

    std::vector<double> log_p(n), u(n);
    for (std::size_t i = 0; i < n; ++i) {
        log_p[i] = pushforward_log_density_x1(x_t, x1_pool.row(i), t, ctx.schedule,
                                              ctx.source_log_density);
        u[i] = -energy.value(x1_pool.row(i));
    }
    McWeights w = reduce_weights(ctx, std::move(log_p), std::move(u));
    fill_diag(w, diag);

    // v_{t|x1} = (dalpha - dbeta alpha / beta) x1 + (dbeta / beta) x_t
    const double cx1 = sched.dalpha - sched.dbeta * sched.alpha / sched.beta;
    const double cxt = sched.dbeta / sched.beta;
    const std::size_t d = x_t.size();
    Tensor g({d});
    for (std::size_t i = 0; i < n; ++i) {
        const double signed_w =
            std::exp(w.u[i] + w.kappa[i] - w.log_z_stab) - std::exp(w.kappa[i]);
        if (signed_w == 0.0) continue;
        const auto x1 = x1_pool.row(i);
        for (std::size_t j = 0; j < d; ++j)
            g[j] += signed_w * (cx1 * x1[j] + cxt * x_t[j]);
    }
    return g;
}

Tensor g_mc_x1(const GuidanceContext& ctx, std::span<const double> x_t, double t,
               const EnergyFn& energy, std::size_t n, Rng& rng, McDiagnostics* diag) {
    require_x1_variant(ctx);
    if (!ctx.target_sampler) throw ContractError("g_mc_x1: target sampler required");
    Tensor x1({n, x_t.size()});
    for (std::size_t i = 0; i < n; ++i) ctx.target_sampler(rng, x1.row(i));
    return g_mc_x1_pool(ctx, x_t, t, energy, x1, diag);
}

double estimate_z_mc(const GuidanceContext& ctx, std::span<const double> x_t, double t,
                     const EnergyFn& energy, std::size_t n, Rng& rng) {
    if (!ctx.pairs) throw ContractError("estimate_z_mc: context has no pair sampler");
    if (n < 1) throw ContractError("estimate_z_mc: N >= 1 required");
    Tensor x0, x1;
    ctx.pairs->sample_pairs(n, rng, x0, x1);
    const ScheduleEval sched = ctx.schedule.eval(t);
    const double sigma_eff = std::max(sched.sigma, ctx.sigma_mc);
    std::vector<double> log_p(n), u(n);
    for (std::size_t i = 0; i < n; ++i) {
        log_p[i] = conditional_log_density(x_t, x0.row(i), x1.row(i), t, ctx.schedule,
                                           sigma_eff);
        u[i] = -energy.value(x1.row(i));
    }
    McWeights w = reduce_weights(ctx, std::move(log_p), std::move(u));
    return std::exp(w.log_z);
}

namespace {

void check_finite_grad(std::span<const double> g) {
    if (!all_finite(g))
        throw NumericalError("guidance: non-finite energy gradient");
}

}  // namespace

Tensor g_cov_a(const GuidanceContext& ctx, std::span<const double> x_t, double t,
               const EnergyFn& energy, const LambdaSchedule& lambda) {
    const std::size_t d = x_t.size();
    const double lam = lambda.eval(t);
    Tensor g({d});
    if (lam == 0.0) return g;
    Tensor v = ctx.field->eval(x_t, t);
    std::vector<double> x1_hat(d);
    estimate_x1(x_t, t, v.span(), ctx.schedule, x1_hat);
    energy.grad(x1_hat, g.span());
    check_finite_grad(g.span());
    for (std::size_t j = 0; j < d; ++j) g[j] *= -lam;
    return g;
}

Tensor g_cov_g(const GuidanceContext& ctx, std::span<const double> x_t, double t,
               const EnergyFn& energy) {
    const std::size_t d = x_t.size();
    const double t_lam = std::max(t, ctx.t_eps);
    const ScheduleEval sched_lam = ctx.schedule.eval(t_lam);
    if (sched_lam.alpha == 0.0)
        throw NumericalError("g_cov_g: alpha_t = 0; schedule singular at t = " +
                             std::to_string(t));
    const double lam = -sched_lam.beta *
                       (sched_lam.dalpha * sched_lam.beta - sched_lam.dbeta * sched_lam.alpha) /
                       sched_lam.alpha;

    const ScheduleEval sched = ctx.schedule.eval(t);
    const double den = sched.dalpha * sched.beta - sched.dbeta * sched.alpha;

    Tensor v = ctx.field->eval(x_t, t);
    std::vector<double> x1_hat(d);
    estimate_x1(x_t, t, v.span(), ctx.schedule, x1_hat);
    Tensor dj = energy.grad(x1_hat);
    check_finite_grad(dj.span());

    // (d x1_hat / d x_t)^T u = (-dbeta u + beta (dv/dx)^T u) / den
    std::vector<double> pullback(d);
    ctx.field->vjp(x_t, t, dj.span(), pullback);
    Tensor g({d});
    for (std::size_t j = 0; j < d; ++j)
        g[j] = lam * (-sched.dbeta * dj[j] + sched.beta * pullback[j]) / den;
    return g;
}

Tensor jacobian_trick_sigma(const GuidanceContext& ctx, std::span<const double> x_t,
                            double t, double* asymmetry) {
    const std::size_t d = x_t.size();
    const ScheduleEval sched = ctx.schedule.eval(t);
    if (!(t > ctx.t_eps) || !(t < 1.0))
        throw ContractError("jacobian_trick_sigma: t in (t_eps, 1) required");
    const double den = sched.dalpha * sched.beta - sched.dbeta * sched.alpha;

    const Tensor jac_v = ctx.field->jacobian(x_t, t);
    Tensor sigma({d, d});
    const double coef = sched.beta * sched.beta / sched.alpha;
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) {
            const double dx1 =
                (-sched.dbeta * (i == j ? 1.0 : 0.0) + sched.beta * jac_v.at(i, j)) / den;
            sigma.at(i, j) = coef * dx1;
        }

    double asym = 0.0;
    Tensor out({d, d});
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) {
            out.at(i, j) = 0.5 * (sigma.at(i, j) + sigma.at(j, i));
            const double a = 0.5 * (sigma.at(i, j) - sigma.at(j, i));
            asym += a * a;
        }
    if (asymmetry) *asymmetry = std::sqrt(asym);
    return out;
}

Tensor g_sim_mc(const GuidanceContext& ctx, std::span<const double> x_t, double t,
                const EnergyFn& energy, std::size_t n, double posterior_std, Rng& rng,
                McDiagnostics* diag) {
    if (n < 1) throw ContractError("g_sim_mc: N >= 1 required");
    const std::size_t d = x_t.size();
    const ScheduleEval sched = ctx.schedule.eval(t);
    if (!(sched.beta > 0.0))
        throw NumericalError("g_sim_mc: beta_t = 0 (t = 1 excluded)");

    Tensor v = ctx.field->eval(x_t, t);
    std::vector<double> x1_hat(d);
    estimate_x1(x_t, t, v.span(), ctx.schedule, x1_hat);

    Tensor chol;
    if (posterior_std > 0.0) {
        chol = Tensor({d, d});
        for (std::size_t i = 0; i < d; ++i) chol.at(i, i) = posterior_std;
    } else {
        Tensor sigma = jacobian_trick_sigma(ctx, x_t, t);
        try {
            chol = cholesky(sigma);
        } catch (const NumericalError&) {
            throw NumericalError("g_sim_mc: posterior covariance estimate is not "
                                 "positive definite");
        }
    }

    Tensor x1s({n, d});
    std::vector<double> z(d);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) z[j] = rng.normal();
        affine_sample(chol, x1_hat, z, x1s.row(i));
    }

    std::vector<double> u(n);
    double max_u = kNegInf;
    for (std::size_t i = 0; i < n; ++i) {
        u[i] = -energy.value(x1s.row(i));
        max_u = std::max(max_u, u[i]);
    }
    double log_z = log_sum_exp(u) - std::log(static_cast<double>(n));
    double log_z_stab = log_z;
    if (ctx.eps_stab > 0.0)
        log_z_stab = std::max(log_z, std::log(ctx.eps_stab) + max_u);
    if (diag) {
        diag->log_z = log_z;
        diag->z = std::exp(log_z);
        double lse2 = kNegInf;
        for (double ui : u) lse2 = log_sum_exp(lse2, 2.0 * ui);
        diag->ess = std::exp(2.0 * log_sum_exp(u) - lse2);
    }

    // path-consistent source point x0 = (x_t - alpha x1) / beta
    Tensor g({d});
    std::vector<double> x0(d), vi(d);
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double w = std::exp(u[i] - log_z_stab) - 1.0;
        if (w == 0.0) continue;
        const auto x1 = x1s.row(i);
        for (std::size_t j = 0; j < d; ++j)
            x0[j] = (x_t[j] - sched.alpha * x1[j]) / sched.beta;
        for (std::size_t j = 0; j < d; ++j)
            vi[j] = sched.dalpha * x1[j] + sched.dbeta * x0[j];
        for (std::size_t j = 0; j < d; ++j) g[j] += inv_n * w * vi[j];
    }
    return g;
}

Tensor g_sim_inv_a(const GuidanceContext& ctx, std::span<const double> x_t, double t,
                   const Tensor& h, const Tensor& y, double sigma_y, double r_t,
                   double lambda_t) {
    (void)ctx;
    if (!(sigma_y > 0.0) || !(r_t > 0.0))
        throw ContractError("g_sim_inv_a: sigma_y > 0 and r_t > 0 required");
    const std::size_t m = h.shape()[0], d = h.shape()[1];
    if (y.size() != m) throw DimensionError("g_sim_inv_a: y must have m entries");

    Tensor v = ctx.field->eval(x_t, t);
    std::vector<double> x1_hat(d);
    estimate_x1(x_t, t, v.span(), ctx.schedule, x1_hat);

    // residual r = y - H x1_hat
    std::vector<double> resid(m);
    for (std::size_t i = 0; i < m; ++i) {
        double hx = 0.0;
        for (std::size_t j = 0; j < d; ++j) hx += h.at(i, j) * x1_hat[j];
        resid[i] = y[i] - hx;
    }
    // M = (sigma_y^2 / r_t^2) I + H^T H  (SPD for sigma_y, r_t > 0)
    Tensor mat({d, d});
    const double ridge = sigma_y * sigma_y / (r_t * r_t);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < m; ++k) s += h.at(k, i) * h.at(k, j);
            mat.at(i, j) = s + (i == j ? ridge : 0.0);
        }
    std::vector<double> rhs(d);
    for (std::size_t j = 0; j < d; ++j) {
        double s = 0.0;
        for (std::size_t k = 0; k < m; ++k) s += h.at(k, j) * resid[k];
        rhs[j] = s;
    }
    Tensor l;
    try {
        l = cholesky(mat);
    } catch (const NumericalError&) {
        throw NumericalError("g_sim_inv_a: singular system");
    }
    Tensor g({d});
    cholesky_solve_into(l, rhs, g.span());
    for (std::size_t j = 0; j < d; ++j) g[j] *= -lambda_t;
    return g;
}

double pigdm_lambda(const Schedule& schedule, double t) {
    const ScheduleEval e = schedule.eval(t);
    if (!(e.beta > 0.0))
        throw NumericalError("pigdm_lambda: beta_t = 0");
    return -(e.dalpha * e.beta - e.dbeta * e.alpha) / e.beta;
}

double pigdm_r2(const Schedule& schedule, double t) {
    const ScheduleEval e = schedule.eval(t);
    return e.beta * e.beta / (e.alpha * e.alpha + e.beta * e.beta);
}

double conjugate_r2(const Schedule& schedule, double t, double prior_var) {
    const ScheduleEval e = schedule.eval(t);
    return prior_var * e.beta * e.beta /
           (e.alpha * e.alpha * prior_var + e.beta * e.beta);
}

Tensor g_diff_logz(const GuidanceContext& ctx, std::span<const double> x_t, double t,
                   const ScalarField& log_z, bool* clamped) {
    const std::size_t d = x_t.size();
    const double t_used = std::max(t, ctx.t_eps);
    if (clamped) *clamped = t_used != t;
    const ScheduleEval e = ctx.schedule.eval(t_used);
    if (e.alpha == 0.0)
        throw NumericalError("g_diff_logz: alpha_t = 0 at t = " + std::to_string(t));
    const double coef = e.beta * (e.dalpha * e.beta - e.dbeta * e.alpha) / e.alpha;
    Tensor g({d});
    log_z.grad(x_t, t, g.span());
    for (std::size_t j = 0; j < d; ++j) g[j] *= coef;
    return g;
}

GuidanceSpec::Method GuidanceSpec::method_from_string(const std::string& name) {
    if (name == "none") return Method::None;
    if (name == "mc") return Method::Mc;
    if (name == "mc_x1") return Method::McX1;
    if (name == "cov_a") return Method::CovA;
    if (name == "cov_g") return Method::CovG;
    if (name == "cov_l") return Method::CovL;
    if (name == "sim_mc") return Method::SimMc;
    if (name == "sim_inv_a") return Method::SimInvA;
    if (name == "diff_logz") return Method::DiffLogZ;
    if (name == "learned") return Method::Learned;
    throw ValidationError("unknown guidance method '" + name + "'");
}

std::string GuidanceSpec::method_to_string(Method method) {
    switch (method) {
        case Method::None: return "none";
        case Method::Mc: return "mc";
        case Method::McX1: return "mc_x1";
        case Method::CovA: return "cov_a";
        case Method::CovG: return "cov_g";
        case Method::CovL: return "cov_l";
        case Method::SimMc: return "sim_mc";
        case Method::SimInvA: return "sim_inv_a";
        case Method::DiffLogZ: return "diff_logz";
        case Method::Learned: return "learned";
    }
    return "none";
}

GuidanceFn make_training_free_guidance(const GuidanceContext& ctx_in,
                                       const GuidanceSpec& spec, const EnergyFn* energy,
                                       std::uint64_t seed) {
    if (spec.method == GuidanceSpec::Method::None) return nullptr;

    // the closure owns an adjusted copy of the context
    auto ctx = std::make_shared<GuidanceContext>(ctx_in);
    ctx->sigma_mc = spec.sigma_mc;
    ctx->eps_stab = spec.eps_stab;

    switch (spec.method) {
        case GuidanceSpec::Method::Mc: {
            std::shared_ptr<std::pair<Tensor, Tensor>> pool;
            if (!spec.fresh_samples) {
                Rng rng = Rng::from_path(seed, {0xF00D});
                pool = std::make_shared<std::pair<Tensor, Tensor>>();
                ctx->pairs->sample_pairs(spec.n_samples, rng, pool->first, pool->second);
            }
            const std::size_t n = spec.n_samples;
            return [ctx, energy, n, pool, seed](std::size_t sample, int step,
                                                std::span<const double> x, double t,
                                                std::span<double> out, McDiagnostics* diag,
                                                bool* degenerate) {
                try {
                    Tensor g;
                    if (pool) {
                        g = g_mc_pool(*ctx, x, t, *energy, pool->first, pool->second, diag);
                    } else {
                        Rng rng = Rng::from_path(seed, {sample, static_cast<std::uint64_t>(step)});
                        g = g_mc(*ctx, x, t, *energy, n, rng, diag);
                    }
                    for (std::size_t j = 0; j < out.size(); ++j) out[j] = g[j];
                } catch (const DegenerateEstimateError&) {
                    for (std::size_t j = 0; j < out.size(); ++j) out[j] = 0.0;
                    if (degenerate) *degenerate = true;
                }
            };
        }
        case GuidanceSpec::Method::McX1: {
            std::shared_ptr<Tensor> pool;
            if (!spec.fresh_samples) {
                Rng rng = Rng::from_path(seed, {0xF00D});
                pool = std::make_shared<Tensor>(
                    Tensor({spec.n_samples, ctx->pairs ? ctx->pairs->dim() : 2}));
                for (std::size_t i = 0; i < spec.n_samples; ++i)
                    ctx->target_sampler(rng, pool->row(i));
            }
            const std::size_t n = spec.n_samples;
            return [ctx, energy, n, pool, seed](std::size_t sample, int step,
                                                std::span<const double> x, double t,
                                                std::span<double> out, McDiagnostics* diag,
                                                bool* degenerate) {
                try {
                    Tensor g;
                    if (pool) {
                        g = g_mc_x1_pool(*ctx, x, t, *energy, *pool, diag);
                    } else {
                        Rng rng = Rng::from_path(seed, {sample, static_cast<std::uint64_t>(step)});
                        g = g_mc_x1(*ctx, x, t, *energy, n, rng, diag);
                    }
                    for (std::size_t j = 0; j < out.size(); ++j) out[j] = g[j];
                } catch (const DegenerateEstimateError&) {
                    for (std::size_t j = 0; j < out.size(); ++j) out[j] = 0.0;
                    if (degenerate) *degenerate = true;
                }
            };
        }
        case GuidanceSpec::Method::CovA: {
            const LambdaSchedule lambda = spec.lambda;
            return [ctx, energy, lambda](std::size_t, int, std::span<const double> x,
                                         double t, std::span<double> out,
                                         McDiagnostics*, bool*) {
                Tensor g = g_cov_a(*ctx, x, t, *energy, lambda);
                for (std::size_t j = 0; j < out.size(); ++j) out[j] = g[j];
            };
        }
        case GuidanceSpec::Method::CovG:
            return [ctx, energy](std::size_t, int, std::span<const double> x, double t,
                                 std::span<double> out, McDiagnostics*, bool*) {
                Tensor g = g_cov_g(*ctx, x, t, *energy);
                for (std::size_t j = 0; j < out.size(); ++j) out[j] = g[j];
            };
        case GuidanceSpec::Method::SimMc: {
            const std::size_t n = spec.n_samples;
            const double std_dev = spec.posterior_std;
            return [ctx, energy, n, std_dev, seed](std::size_t sample, int step,
                                                   std::span<const double> x, double t,
                                                   std::span<double> out,
                                                   McDiagnostics* diag, bool*) {
                Rng rng = Rng::from_path(seed, {sample, static_cast<std::uint64_t>(step)});
                Tensor g = g_sim_mc(*ctx, x, t, *energy, n, std_dev, rng, diag);
                for (std::size_t j = 0; j < out.size(); ++j) out[j] = g[j];
            };
        }
        case GuidanceSpec::Method::SimInvA: {
            if (!energy || energy->kind() != EnergyFn::Kind::Measurement)
                throw ValidationError("sim_inv_a guidance requires a measurement energy");
            const double r_const = spec.r_const;
            const double lambda_const = spec.lambda_const;
            return [ctx, energy, r_const, lambda_const](std::size_t, int,
                                                        std::span<const double> x, double t,
                                                        std::span<double> out,
                                                        McDiagnostics*, bool*) {
                const double tt = std::min(t, 1.0 - ctx->t_eps);
                const double r2 = r_const > 0.0 ? r_const * r_const
                                                : pigdm_r2(ctx->schedule, tt);
                const double lam = lambda_const != 0.0 ? lambda_const
                                                       : pigdm_lambda(ctx->schedule, tt);
                Tensor g = g_sim_inv_a(*ctx, x, tt, energy->h(), energy->y(),
                                       energy->sigma_y(), std::sqrt(r2), lam);
                for (std::size_t j = 0; j < out.size(); ++j) out[j] = g[j];
            };
        }
        default:
            throw ValidationError("guidance method '" +
                                  GuidanceSpec::method_to_string(spec.method) +
                                  "' needs a trained model; use the trainguide factories");
    }
}

GuidedSampleResult guided_sample(const VectorField& field, const GuidanceFn* guidance,
                                 const Tensor& x0_batch, const OdeOptions& options) {
    const std::size_t n = x0_batch.shape()[0];
    const std::size_t steps = options.steps;
    const double h = (options.t_end - options.t_start) / static_cast<double>(steps);

    std::vector<double> gnorm_buf(guidance ? n * steps : 0, 0.0);
    std::vector<double> z_buf(guidance ? n * steps : 0, 0.0);
    std::vector<double> ess_buf(guidance ? n * steps : 0, 0.0);
    std::vector<std::size_t> fallback_count(guidance ? n : 0, 0);
    std::vector<int> last_step(guidance ? n : 0, -1);

    SampleField fn = [&](std::size_t sample, int step, std::span<const double> x,
                         double t, std::span<double> out) {
        field.eval(x, t, out);
        if (!guidance) return;
        std::vector<double> g(out.size());
        McDiagnostics diag;
        bool degenerate = false;
        (*guidance)(sample, step, x, t, g, &diag, &degenerate);
        for (std::size_t j = 0; j < out.size(); ++j) out[j] += g[j];
        // record on the first stage of each step only
        if (last_step[sample] != step) {
            last_step[sample] = step;
            const std::size_t idx = sample * steps + static_cast<std::size_t>(step);
            gnorm_buf[idx] = norm(g);
            z_buf[idx] = diag.z;
            ess_buf[idx] = diag.ess;
            if (degenerate) fallback_count[sample] += 1;
        }
    };

    OdeResult run = ode_sample(fn, x0_batch, options);

    GuidedSampleResult result;
    result.samples = std::move(run.final_states);
    result.trajectories = std::move(run.trajectories);

    if (guidance) {
        result.diagnostics.resize(steps);
        for (std::size_t s = 0; s < steps; ++s) {
            StepDiagnostics& d = result.diagnostics[s];
            d.t = options.t_start + h * static_cast<double>(s);
            for (std::size_t i = 0; i < n; ++i) {
                d.mean_gnorm += gnorm_buf[i * steps + s];
                d.mean_z += z_buf[i * steps + s];
                d.mean_ess += ess_buf[i * steps + s];
            }
            d.mean_gnorm /= static_cast<double>(n);
            d.mean_z /= static_cast<double>(n);
            d.mean_ess /= static_cast<double>(n);
        }
        for (std::size_t i = 0; i < fallback_count.size(); ++i)
            result.degenerate_fallbacks += fallback_count[i];
        for (std::size_t s = 0; s < result.trajectories.size(); ++s) {
            result.trajectories[s].gnorm.resize(steps);
            for (std::size_t k = 0; k < steps; ++k)
                result.trajectories[s].gnorm[k] = gnorm_buf[s * steps + k];
        }
    }
    return result;
}

}  // namespace flowguide
