#pragma once

#include <vector>

#include "flowguide/density.hpp"
#include "flowguide/energy.hpp"
#include "flowguide/field.hpp"
#include "flowguide/flow.hpp"
#include "flowguide/rng.hpp"
#include "flowguide/tensor.hpp"

namespace flowguide {

// Exact flow quantities for a Gaussian-mixture target under a standard
// Gaussian source, independent coupling and the linear sigma = 0 schedule
// (alpha = t, beta = 1 - t). Everything here is closed form; it is the ground
// truth the learned models and Monte-Carlo estimators are checked against.
class GmmFlowOracle {
public:
    GmmFlowOracle(std::vector<double> weights, std::vector<Tensor> means,
                  std::vector<Tensor> covs);

    static GmmFlowOracle single(Tensor mean, Tensor cov);
    // Gaussian-family 2-D densities only.
    static GmmFlowOracle from_density(const Density2D& target);

    std::size_t dim() const { return dim_; }
    std::size_t component_count() const { return weights_.size(); }

    // marginal path density p_t(x) = sum_k w_k N(x; t mu_k, t^2 S_k + (1-t)^2 I)
    double pt(std::span<const double> x, double t) const;

    // marginal vector field (E[x1|x_t] - x) / (1 - t); t < 1 required
    void vt(std::span<const double> x, double t, std::span<double> out) const;
    Tensor vt(std::span<const double> x, double t) const;

    struct Posterior {
        std::vector<double> weights;
        std::vector<Tensor> means;  // E[x1 | x_t, component]
        std::vector<Tensor> covs;
        Tensor mean() const;
        Tensor covariance() const;  // total covariance of p(x1 | x_t)
    };
    Posterior posterior(std::span<const double> x, double t) const;

    struct Tilt {
        double z;            // Z_t(x_t) = E[e^{-J(x1)} | x_t]
        double log_z;
        Tensor tilted_mean;  // E[x1 | x_t] under the e^{-J}-tilted posterior
        Tensor guidance;     // (tilted_mean - posterior_mean) / (1 - t)
    };
    // Requires an energy with a canonical quadratic form; exact for this
    // schedule because v_{t|x1} is affine in x1 at fixed x_t.
    Tilt tilted(const EnergyFn& energy, std::span<const double> x, double t) const;

    // analytic d x1_hat / d x_t and d v_t / d x_t
    Tensor posterior_mean_jacobian(std::span<const double> x, double t) const;
    Tensor vf_jacobian(std::span<const double> x, double t) const;

    void sample_target(std::size_t n, Rng& rng, Tensor& out) const;
    void sample_source(std::size_t n, Rng& rng, Tensor& out) const;
    void sample_path(std::size_t n, double t, Rng& rng, Tensor& out) const;
    double log_density_target(std::span<const double> x) const;
    double log_density_source(std::span<const double> x) const;

    // VectorField view with analytic vjp.
    class Field : public VectorField {
    public:
        explicit Field(const GmmFlowOracle* oracle) : oracle_(oracle) {}
        using VectorField::eval;
        std::size_t dim() const override { return oracle_->dim(); }
        void eval(std::span<const double> x, double t, std::span<double> out) const override {
            oracle_->vt(x, t, out);
        }
        void vjp(std::span<const double> x, double t,
                 std::span<const double> cotangent, std::span<double> out) const override;

    private:
        const GmmFlowOracle* oracle_;
    };
    Field field() const { return Field(this); }

private:
    struct PerComponent {
        double log_resp;   // log responsibility at (x, t)
        Tensor cond_mean;  // c_k
        Tensor cond_cov;   // S_k
        Tensor gain;       // D_k = t S_k_prior A_k^{-1}
        Tensor score;      // -A_k^{-1} (x - t mu_k)
    };
    std::vector<PerComponent> condition(std::span<const double> x, double t,
                                        bool need_jacobian_terms) const;

    std::size_t dim_;
    std::vector<double> weights_;
    std::vector<Tensor> means_;
    std::vector<Tensor> covs_;
};

// Direct 2-D trapezoid integration of the guidance integral over x1 (x0 is
// eliminated by the sigma = 0 path constraint). Works for any analytic
// source/target pair and any energy; the error heuristic compares against the
// half-resolution grid.
struct QuadratureGrid {
    double lo = -6.0;
    double hi = 6.0;
    std::size_t points = 400;
    double warn_threshold = 1e-3;
};

struct QuadratureResult {
    Tensor guidance;
    double z;
    double est_error;  // relative difference vs the coarse grid
    bool accuracy_warning;
};

QuadratureResult quadrature_guidance(const Density2D& target, const Density2D& source,
                                     const EnergyFn& energy, std::span<const double> x_t,
                                     double t, const QuadratureGrid& grid = {});

// Self-normalized importance resampling from `pool` with weights e^{-J}.
struct ResampleResult {
    Tensor samples;
    double ess;
    std::vector<double> weights;  // normalized, one per pool row
    bool degenerate_warning;
};

ResampleResult tilted_resample(const Tensor& pool, const EnergyFn& energy,
                               std::size_t m, Rng& rng, double ess_floor = 10.0);

// Relative L2 between two vector fields on the reference field's sampling
// trajectory, per requested time.
struct CouplingGapRow {
    double t;
    double mean_rel_l2;
    double std_rel_l2;
};

std::vector<CouplingGapRow> coupling_gap(const FlowModel& flow_ref,
                                         const FlowModel& flow_other,
                                         std::size_t n, std::span<const double> t_list,
                                         std::uint64_t seed,
                                         const OdeOptions& options);

}  // namespace flowguide
