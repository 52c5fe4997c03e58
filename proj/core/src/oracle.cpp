#include "flowguide/oracle.hpp"

#include <cmath>

#include "flowguide/errors.hpp"
#include "flowguide/linalg.hpp"
#include "flowguide/numeric.hpp"

namespace flowguide {

namespace {
constexpr double kLog2Pi = 1.8378770664093454836;
}

GmmFlowOracle::GmmFlowOracle(std::vector<double> weights, std::vector<Tensor> means,
                             std::vector<Tensor> covs)
    : weights_(std::move(weights)), means_(std::move(means)), covs_(std::move(covs)) {
    if (weights_.empty() || weights_.size() != means_.size() || weights_.size() != covs_.size())
        throw ValidationError("GmmFlowOracle: weights/means/covs must align");
    dim_ = means_[0].size();
    double total = 0.0;
    for (std::size_t k = 0; k < weights_.size(); ++k) {
        if (!(weights_[k] > 0.0)) throw ValidationError("GmmFlowOracle: weights must be positive");
        total += weights_[k];
        if (means_[k].size() != dim_ || covs_[k].shape() != std::vector<std::size_t>{dim_, dim_})
            throw ValidationError("GmmFlowOracle: inconsistent component shapes");
        cholesky(covs_[k]);  // SPD check
    }
    if (std::abs(total - 1.0) > 1e-9)
        throw ValidationError("GmmFlowOracle: weights must sum to 1");
}

GmmFlowOracle GmmFlowOracle::single(Tensor mean, Tensor cov) {
    return GmmFlowOracle({1.0}, {std::move(mean)}, {std::move(cov)});
}

GmmFlowOracle GmmFlowOracle::from_density(const Density2D& target) {
    if (!target.has_log_density() || target.kind() == Density2D::Kind::UniformBox)
        throw ContractError("GmmFlowOracle::from_density: Gaussian-family density required");
    std::vector<double> w;
    std::vector<Tensor> means, covs;
    for (const auto& c : target.components()) {
        w.push_back(c.weight);
        means.push_back(Tensor({2}, {c.mean[0], c.mean[1]}));
        covs.push_back(Tensor({2, 2}, {c.cov[0], c.cov[1], c.cov[2], c.cov[3]}));
    }
    return GmmFlowOracle(std::move(w), std::move(means), std::move(covs));
}

std::vector<GmmFlowOracle::PerComponent> GmmFlowOracle::condition(
    std::span<const double> x, double t, bool need_jacobian_terms) const {
    const std::size_t k_count = weights_.size();
    const double beta = 1.0 - t;
    std::vector<PerComponent> out(k_count);
    std::vector<double> log_terms(k_count);

    for (std::size_t k = 0; k < k_count; ++k) {
        // marginal component: N(t mu_k, t^2 S + beta^2 I)
        Tensor a({dim_, dim_});
        for (std::size_t i = 0; i < dim_; ++i)
            for (std::size_t j = 0; j < dim_; ++j)
                a.at(i, j) = t * t * covs_[k].at(i, j) + (i == j ? beta * beta : 0.0);
        const Tensor la = cholesky(a);

        Tensor resid({dim_});
        for (std::size_t i = 0; i < dim_; ++i) resid[i] = x[i] - t * means_[k][i];
        Tensor ainv_resid = cholesky_solve(la, resid);
        double quad = 0.0;
        for (std::size_t i = 0; i < dim_; ++i) quad += resid[i] * ainv_resid[i];
        log_terms[k] = std::log(weights_[k]) -
                       0.5 * (static_cast<double>(dim_) * kLog2Pi + spd_log_det(la)) -
                       0.5 * quad;

        PerComponent& pc = out[k];
        // conditional mean c_k = mu_k + t S A^{-1} (x - t mu_k)
        pc.cond_mean = Tensor({dim_});
        Tensor s_ainv_resid = matvec(covs_[k], ainv_resid);
        for (std::size_t i = 0; i < dim_; ++i)
            pc.cond_mean[i] = means_[k][i] + t * s_ainv_resid[i];
        // conditional covariance S_k = S - t^2 S A^{-1} S
        Tensor ainv_s = cholesky_solve_matrix(la, covs_[k]);
        pc.cond_cov = Tensor({dim_, dim_});
        for (std::size_t i = 0; i < dim_; ++i)
            for (std::size_t j = 0; j < dim_; ++j) {
                double s = 0.0;
                for (std::size_t m = 0; m < dim_; ++m)
                    s += covs_[k].at(i, m) * ainv_s.at(m, j);
                pc.cond_cov.at(i, j) = covs_[k].at(i, j) - t * t * s;
            }
        if (need_jacobian_terms) {
            pc.gain = Tensor({dim_, dim_});
            for (std::size_t i = 0; i < dim_; ++i)
                for (std::size_t j = 0; j < dim_; ++j)
                    pc.gain.at(i, j) = t * ainv_s.at(j, i);  // t S A^{-1}, S A^{-1} symmetric-free form
            pc.score = Tensor({dim_});
            for (std::size_t i = 0; i < dim_; ++i) pc.score[i] = -ainv_resid[i];
        }
    }

    const double lse = log_sum_exp(log_terms);
    for (std::size_t k = 0; k < k_count; ++k) out[k].log_resp = log_terms[k] - lse;
    return out;
}

double GmmFlowOracle::pt(std::span<const double> x, double t) const {
    const double beta = 1.0 - t;
    std::vector<double> log_terms(weights_.size());
    for (std::size_t k = 0; k < weights_.size(); ++k) {
        Tensor a({dim_, dim_});
        for (std::size_t i = 0; i < dim_; ++i)
            for (std::size_t j = 0; j < dim_; ++j)
                a.at(i, j) = t * t * covs_[k].at(i, j) + (i == j ? beta * beta : 0.0);
        const Tensor la = cholesky(a);
        Tensor resid({dim_});
        for (std::size_t i = 0; i < dim_; ++i) resid[i] = x[i] - t * means_[k][i];
        Tensor sol = cholesky_solve(la, resid);
        double quad = 0.0;
        for (std::size_t i = 0; i < dim_; ++i) quad += resid[i] * sol[i];
        log_terms[k] = std::log(weights_[k]) -
                       0.5 * (static_cast<double>(dim_) * kLog2Pi + spd_log_det(la)) -
                       0.5 * quad;
    }
    return std::exp(log_sum_exp(log_terms));
}

void GmmFlowOracle::vt(std::span<const double> x, double t, std::span<double> out) const {
    if (t >= 1.0)
        throw NumericalError("oracle vt: singular at t = 1");
    const auto comps = condition(x, t, false);
    for (std::size_t i = 0; i < dim_; ++i) out[i] = 0.0;
    for (const auto& pc : comps) {
        const double r = std::exp(pc.log_resp);
        for (std::size_t i = 0; i < dim_; ++i) out[i] += r * pc.cond_mean[i];
    }
    const double inv = 1.0 / (1.0 - t);
    for (std::size_t i = 0; i < dim_; ++i) out[i] = (out[i] - x[i]) * inv;
}

Tensor GmmFlowOracle::vt(std::span<const double> x, double t) const {
    Tensor out({dim_});
    vt(x, t, out.span());
    return out;
}

Tensor GmmFlowOracle::Posterior::mean() const {
    Tensor m({means[0].size()});
    for (std::size_t k = 0; k < weights.size(); ++k)
        for (std::size_t i = 0; i < m.size(); ++i) m[i] += weights[k] * means[k][i];
    return m;
}

Tensor GmmFlowOracle::Posterior::covariance() const {
    const std::size_t d = means[0].size();
    const Tensor m = mean();
    Tensor cov({d, d});
    for (std::size_t k = 0; k < weights.size(); ++k) {
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < d; ++j)
                cov.at(i, j) += weights[k] * (covs[k].at(i, j) +
                                              means[k][i] * means[k][j]);
    }
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) cov.at(i, j) -= m[i] * m[j];
    return cov;
}

GmmFlowOracle::Posterior GmmFlowOracle::posterior(std::span<const double> x, double t) const {
    const auto comps = condition(x, t, false);
    Posterior p;
    for (const auto& pc : comps) {
        p.weights.push_back(std::exp(pc.log_resp));
        p.means.push_back(pc.cond_mean);
        p.covs.push_back(pc.cond_cov);
    }
    return p;
}

GmmFlowOracle::Tilt GmmFlowOracle::tilted(const EnergyFn& energy,
                                          std::span<const double> x, double t) const {
    const auto form = energy.quadratic_form();
    if (!form)
        throw ContractError("oracle tilted: energy must expose a quadratic form");
    const auto comps = condition(x, t, false);

    const std::size_t k_count = comps.size();
    std::vector<double> log_mass(k_count);
    std::vector<Tensor> tilted_means(k_count);

    for (std::size_t k = 0; k < k_count; ++k) {
        const Tensor& s = comps[k].cond_cov;
        const Tensor ls = cholesky(s);
        // precision-form tilt: Lambda = S^{-1} + P, h = S^{-1} c - q
        Tensor lambda = spd_inverse(s);
        Tensor h = cholesky_solve(ls, comps[k].cond_mean);
        double c_sinv_c = 0.0;
        for (std::size_t i = 0; i < dim_; ++i) c_sinv_c += comps[k].cond_mean[i] * h[i];
        for (std::size_t i = 0; i < dim_; ++i) {
            h[i] -= form->q[i];
            for (std::size_t j = 0; j < dim_; ++j) lambda.at(i, j) += form->p.at(i, j);
        }
        const Tensor ll = cholesky(lambda);
        Tensor mprime = cholesky_solve(ll, h);
        double h_m = 0.0;
        for (std::size_t i = 0; i < dim_; ++i) h_m += h[i] * mprime[i];
        // integral of N(x; c, S) e^{-J} dx in log form
        log_mass[k] = 0.5 * h_m - 0.5 * c_sinv_c - form->r -
                      0.5 * (spd_log_det(ls) + spd_log_det(ll));
        tilted_means[k] = std::move(mprime);
    }

    std::vector<double> log_joint(k_count);
    for (std::size_t k = 0; k < k_count; ++k)
        log_joint[k] = comps[k].log_resp + log_mass[k];
    const double log_z = log_sum_exp(log_joint);

    Tilt out;
    out.log_z = log_z;
    out.z = std::exp(log_z);
    out.tilted_mean = Tensor({dim_});
    Tensor base_mean({dim_});
    for (std::size_t k = 0; k < k_count; ++k) {
        const double rk = std::exp(comps[k].log_resp);
        const double rk_tilted = std::exp(log_joint[k] - log_z);
        for (std::size_t i = 0; i < dim_; ++i) {
            out.tilted_mean[i] += rk_tilted * tilted_means[k][i];
            base_mean[i] += rk * comps[k].cond_mean[i];
        }
    }
    out.guidance = Tensor({dim_});
    const double inv = 1.0 / (1.0 - t);
    for (std::size_t i = 0; i < dim_; ++i)
        out.guidance[i] = (out.tilted_mean[i] - base_mean[i]) * inv;
    return out;
}

Tensor GmmFlowOracle::posterior_mean_jacobian(std::span<const double> x, double t) const {
    const auto comps = condition(x, t, true);
    Tensor jac({dim_, dim_});
    Tensor mean_score({dim_});
    for (const auto& pc : comps) {
        const double r = std::exp(pc.log_resp);
        for (std::size_t i = 0; i < dim_; ++i) mean_score[i] += r * pc.score[i];
    }
    for (const auto& pc : comps) {
        const double r = std::exp(pc.log_resp);
        for (std::size_t i = 0; i < dim_; ++i)
            for (std::size_t j = 0; j < dim_; ++j)
                jac.at(i, j) += r * (pc.gain.at(i, j) +
                                     pc.cond_mean[i] * (pc.score[j] - mean_score[j]));
    }
    return jac;
}

Tensor GmmFlowOracle::vf_jacobian(std::span<const double> x, double t) const {
    Tensor jac = posterior_mean_jacobian(x, t);
    const double inv = 1.0 / (1.0 - t);
    for (std::size_t i = 0; i < dim_; ++i)
        for (std::size_t j = 0; j < dim_; ++j)
            jac.at(i, j) = (jac.at(i, j) - (i == j ? 1.0 : 0.0)) * inv;
    return jac;
}

void GmmFlowOracle::Field::vjp(std::span<const double> x, double t,
                               std::span<const double> cotangent,
                               std::span<double> out) const {
    const Tensor jac = oracle_->vf_jacobian(x, t);
    matvec_transposed_into(jac, cotangent, out);
}

void GmmFlowOracle::sample_target(std::size_t n, Rng& rng, Tensor& out) const {
    if (out.shape() != std::vector<std::size_t>{n, dim_}) out = Tensor({n, dim_});
    std::vector<Tensor> chols;
    chols.reserve(weights_.size());
    for (const auto& c : covs_) chols.push_back(cholesky(c));
    std::vector<double> z(dim_);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t k = 0;
        if (weights_.size() > 1) {
            const double u = rng.uniform();
            double acc = 0.0;
            for (; k + 1 < weights_.size(); ++k) {
                acc += weights_[k];
                if (u < acc) break;
            }
        }
        for (std::size_t j = 0; j < dim_; ++j) z[j] = rng.normal();
        affine_sample(chols[k], means_[k].span(), z, out.row(i));
    }
}

void GmmFlowOracle::sample_source(std::size_t n, Rng& rng, Tensor& out) const {
    if (out.shape() != std::vector<std::size_t>{n, dim_}) out = Tensor({n, dim_});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < dim_; ++j) out.at(i, j) = rng.normal();
}

void GmmFlowOracle::sample_path(std::size_t n, double t, Rng& rng, Tensor& out) const {
    Tensor x0, x1;
    sample_source(n, rng, x0);
    sample_target(n, rng, x1);
    if (out.shape() != std::vector<std::size_t>{n, dim_}) out = Tensor({n, dim_});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < dim_; ++j)
            out.at(i, j) = t * x1.at(i, j) + (1.0 - t) * x0.at(i, j);
}

double GmmFlowOracle::log_density_target(std::span<const double> x) const {
    std::vector<double> log_terms(weights_.size());
    for (std::size_t k = 0; k < weights_.size(); ++k) {
        const Tensor l = cholesky(covs_[k]);
        Tensor resid({dim_});
        for (std::size_t i = 0; i < dim_; ++i) resid[i] = x[i] - means_[k][i];
        Tensor sol = cholesky_solve(l, resid);
        double quad = 0.0;
        for (std::size_t i = 0; i < dim_; ++i) quad += resid[i] * sol[i];
        log_terms[k] = std::log(weights_[k]) -
                       0.5 * (static_cast<double>(dim_) * kLog2Pi + spd_log_det(l)) -
                       0.5 * quad;
    }
    return log_sum_exp(log_terms);
}

double GmmFlowOracle::log_density_source(std::span<const double> x) const {
    double quad = 0.0;
    for (std::size_t i = 0; i < dim_; ++i) quad += x[i] * x[i];
    return -0.5 * static_cast<double>(dim_) * kLog2Pi - 0.5 * quad;
}

QuadratureResult quadrature_guidance(const Density2D& target, const Density2D& source,
                                     const EnergyFn& energy, std::span<const double> x_t,
                                     double t, const QuadratureGrid& grid) {
    if (!target.has_log_density() || !source.has_log_density())
        throw ContractError("quadrature_guidance: analytic source and target required");
    if (!(t > 0.0) || !(t < 1.0))
        throw ContractError("quadrature_guidance: t in (0, 1) required");

    const double beta = 1.0 - t;

    auto integrate = [&](std::size_t points) {
        const double step = (grid.hi - grid.lo) / static_cast<double>(points - 1);
        // trapezoid weights on a tensor grid; log-domain accumulation
        std::vector<double> log_w;
        std::vector<double> evals;          // e^{-J}
        std::vector<std::array<double, 2>> vels;
        log_w.reserve(points * points);
        double u[2], x1[2];
        double max_lw = kNegInf;
        for (std::size_t iy = 0; iy < points; ++iy) {
            x1[1] = grid.lo + step * static_cast<double>(iy);
            const double wy = (iy == 0 || iy == points - 1) ? 0.5 : 1.0;
            for (std::size_t ix = 0; ix < points; ++ix) {
                x1[0] = grid.lo + step * static_cast<double>(ix);
                const double wx = (ix == 0 || ix == points - 1) ? 0.5 : 1.0;
                u[0] = (x_t[0] - t * x1[0]) / beta;
                u[1] = (x_t[1] - t * x1[1]) / beta;
                const double lt = target.log_density(x1);
                const double ls = source.log_density(u);
                double lw = lt + ls + std::log(wx * wy);
                log_w.push_back(lw);
                max_lw = std::max(max_lw, lw);
                evals.push_back(std::exp(-energy.value(x1)));
                vels.push_back({(x1[0] - x_t[0]) / beta, (x1[1] - x_t[1]) / beta});
            }
        }
        double mass = 0.0, z = 0.0, g0 = 0.0, g1 = 0.0;
        for (std::size_t i = 0; i < log_w.size(); ++i) {
            const double w = std::exp(log_w[i] - max_lw);
            mass += w;
            z += w * evals[i];
        }
        z /= mass;
        for (std::size_t i = 0; i < log_w.size(); ++i) {
            const double w = std::exp(log_w[i] - max_lw) / mass;
            const double signed_w = (evals[i] / z - 1.0) * w;
            g0 += signed_w * vels[i][0];
            g1 += signed_w * vels[i][1];
        }
        QuadratureResult r;
        r.guidance = Tensor({2}, {g0, g1});
        r.z = z;
        r.est_error = 0.0;
        r.accuracy_warning = false;
        return r;
    };

    QuadratureResult fine = integrate(grid.points);
    QuadratureResult coarse = integrate(grid.points / 2);
    const double scale = std::max(norm(fine.guidance.span()), 1e-12);
    fine.est_error = norm((fine.guidance - coarse.guidance).span()) / scale;
    fine.accuracy_warning = fine.est_error > grid.warn_threshold;
    return fine;
}

ResampleResult tilted_resample(const Tensor& pool, const EnergyFn& energy,
                               std::size_t m, Rng& rng, double ess_floor) {
    if (pool.rank() != 2 || pool.shape()[0] == 0)
        throw DimensionError("tilted_resample: non-empty (n x d) pool required");
    const std::size_t n = pool.shape()[0];
    const std::size_t d = pool.shape()[1];

    std::vector<double> log_w(n);
    for (std::size_t i = 0; i < n; ++i) log_w[i] = -energy.value(pool.row(i));
    const double lse = log_sum_exp(log_w);

    ResampleResult out;
    out.weights.resize(n);
    double sum_sq = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        out.weights[i] = std::exp(log_w[i] - lse);
        sum_sq += out.weights[i] * out.weights[i];
    }
    out.ess = 1.0 / sum_sq;
    out.degenerate_warning = out.ess < ess_floor;

    std::vector<double> cdf(n);
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        acc += out.weights[i];
        cdf[i] = acc;
    }
    cdf[n - 1] = 1.0;

    out.samples = Tensor({m, d});
    for (std::size_t s = 0; s < m; ++s) {
        const double u = rng.uniform();
        const std::size_t idx = static_cast<std::size_t>(
            std::lower_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
        for (std::size_t j = 0; j < d; ++j) out.samples.at(s, j) = pool.at(idx, j);
    }
    return out;
}

std::vector<CouplingGapRow> coupling_gap(const FlowModel& flow_ref,
                                         const FlowModel& flow_other,
                                         std::size_t n, std::span<const double> t_list,
                                         std::uint64_t seed,
                                         const OdeOptions& options) {
    Rng rng = Rng::from_path(seed, {0x9a});
    Tensor x0 = flow_ref.coupling.source().sample(n, rng);

    OdeOptions opts = options;
    opts.record_trajectories = n;
    const MlpVectorField ref_field(&flow_ref.model);
    const MlpVectorField other_field(&flow_other.model);
    OdeResult run = ode_sample(ref_field, x0, opts);

    std::vector<CouplingGapRow> rows;
    std::vector<double> v_ref(2), v_other(2);
    for (double t : t_list) {
        // nearest recorded trajectory time
        const auto& times = run.trajectories[0].times;
        std::size_t best = 0;
        for (std::size_t i = 1; i < times.size(); ++i)
            if (std::abs(times[i] - t) < std::abs(times[best] - t)) best = i;
        const double t_used = times[best];

        double mean = 0.0, m2 = 0.0;
        for (std::size_t s = 0; s < n; ++s) {
            const auto x = run.trajectories[s].states.row(best);
            ref_field.eval(x, t_used, v_ref);
            other_field.eval(x, t_used, v_other);
            double num = 0.0, den = 0.0;
            for (std::size_t j = 0; j < 2; ++j) {
                const double dv = v_other[j] - v_ref[j];
                num += dv * dv;
                den += v_ref[j] * v_ref[j];
            }
            const double rel = std::sqrt(num / std::max(den, 1e-24));
            const double delta = rel - mean;
            mean += delta / static_cast<double>(s + 1);
            m2 += delta * (rel - mean);
        }
        CouplingGapRow row;
        row.t = t_used;
        row.mean_rel_l2 = mean;
        row.std_rel_l2 = n > 1 ? std::sqrt(m2 / static_cast<double>(n - 1)) : 0.0;
        rows.push_back(row);
    }
    return rows;
}

}  // namespace flowguide
