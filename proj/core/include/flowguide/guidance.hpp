#pragma once

#include <functional>
#include <memory>
#include <string>

#include "flowguide/coupling.hpp"
#include "flowguide/energy.hpp"
#include "flowguide/field.hpp"
#include "flowguide/flow.hpp"
#include "flowguide/schedule.hpp"
#include "flowguide/tensor.hpp"

namespace flowguide {

// ---------------------------------------------------------------------------
// Guidance strength schedules
// ---------------------------------------------------------------------------

enum class LambdaShape { Constant, LinearDecay, CosineDecay, ExpDecay };

struct LambdaSchedule {
    LambdaShape shape = LambdaShape::Constant;
    double scale = 1.0;
    double decay_rate = 4.0;  // exp_decay only

    // shape value normalized to [0, 1], then multiplied by scale
    double eval(double t) const;

    static LambdaShape shape_from_string(const std::string& name);
    static std::string shape_to_string(LambdaShape shape);
};

// Scalar field with a gradient; backs the diffusion-equivalent guidance.
class ScalarField {
public:
    virtual ~ScalarField() = default;
    virtual double value(std::span<const double> x, double t) const = 0;
    // default: central finite differences
    virtual void grad(std::span<const double> x, double t, std::span<double> out) const;
};

class FunctionScalarField : public ScalarField {
public:
    using ValueFn = std::function<double(std::span<const double>, double)>;
    using GradFn = std::function<void(std::span<const double>, double, std::span<double>)>;

    explicit FunctionScalarField(ValueFn value_fn, GradFn grad_fn = nullptr)
        : value_(std::move(value_fn)), grad_(std::move(grad_fn)) {}

    double value(std::span<const double> x, double t) const override { return value_(x, t); }
    void grad(std::span<const double> x, double t, std::span<double> out) const override {
        if (grad_) grad_(x, t, out);
        else ScalarField::grad(x, t, out);
    }

private:
    ValueFn value_;
    GradFn grad_;
};

// ---------------------------------------------------------------------------
// Evaluation context shared by the training-free methods
// ---------------------------------------------------------------------------

struct GuidanceContext {
    const VectorField* field = nullptr;  // learned v_theta or an oracle field
    Schedule schedule;
    const PairSampler* pairs = nullptr;  // z ~ p(z) for Monte-Carlo guidance

    // x1-only variant: requires independent coupling, an analytic source
    // log-density and a target sampler.
    bool independent_coupling = true;
    std::function<double(std::span<const double>)> source_log_density;
    std::function<void(Rng&, std::span<double>)> target_sampler;

    double sigma_mc = 0.05;          // smoothing bandwidth when schedule sigma_t = 0
    double eps_stab = 5e-3;          // floor on the self-normalized Z estimate
    double t_eps = 1e-4;             // clamping near schedule singularities
    double log_weight_floor = -700;  // all conditional densities below -> degenerate
};

struct McDiagnostics {
    double log_z = 0.0;
    double z = 0.0;
    double ess = 0.0;
};

// ---------------------------------------------------------------------------
// Training-free guidance vector fields
// ---------------------------------------------------------------------------

// Self-normalized Monte-Carlo guidance over endpoint pairs z_i ~ p(z). All
// weight arithmetic is in the log domain; the normalizer estimate is floored
// by eps_stab. Throws DegenerateEstimateError when every conditional density
// underflows.
Tensor g_mc(const GuidanceContext& ctx, std::span<const double> x_t, double t,
            const EnergyFn& energy, std::size_t n, Rng& rng,
            McDiagnostics* diag = nullptr);

// Same estimator over a fixed, pre-drawn pool of pairs.
Tensor g_mc_pool(const GuidanceContext& ctx, std::span<const double> x_t, double t,
                 const EnergyFn& energy, const Tensor& x0_pool, const Tensor& x1_pool,
                 McDiagnostics* diag = nullptr);

// x1-conditioned variant: integrates over x1 only using the pushforward
// density p_t(x_t|x1). Requires independent coupling, sigma = 0 schedule and
// an analytic source density.
Tensor g_mc_x1(const GuidanceContext& ctx, std::span<const double> x_t, double t,
               const EnergyFn& energy, std::size_t n, Rng& rng,
               McDiagnostics* diag = nullptr);

Tensor g_mc_x1_pool(const GuidanceContext& ctx, std::span<const double> x_t, double t,
                    const EnergyFn& energy, const Tensor& x1_pool,
                    McDiagnostics* diag = nullptr);

// Self-normalized importance estimate of Z_t(x_t); shares the weight
// machinery with g_mc (no stabilizer floor is applied to the returned value).
double estimate_z_mc(const GuidanceContext& ctx, std::span<const double> x_t, double t,
                     const EnergyFn& energy, std::size_t n, Rng& rng);

// -lambda_t grad_{x1_hat} J(x1_hat); one field evaluation, no pullback.
Tensor g_cov_a(const GuidanceContext& ctx, std::span<const double> x_t, double t,
               const EnergyFn& energy, const LambdaSchedule& lambda);

// lambda_t^{cov-G} grad_{x_t} J(x1_hat(x_t)) with
// lambda^{cov-G} = -beta (dalpha beta - dbeta alpha) / alpha, pulled back
// through the model with one vjp. lambda is clamped at t < t_eps.
Tensor g_cov_g(const GuidanceContext& ctx, std::span<const double> x_t, double t,
               const EnergyFn& energy);

// Sigma_{1|t} = (beta^2 / alpha) d x1_hat / d x_t, symmetrized. The optional
// output reports the Frobenius norm of the asymmetric part as a diagnostic.
Tensor jacobian_trick_sigma(const GuidanceContext& ctx, std::span<const double> x_t,
                            double t, double* asymmetry = nullptr);

// Gaussian-posterior Monte-Carlo guidance: x1 ~ N(x1_hat, Sigma), x0 chosen
// path-consistent, signed weights from the sample-mean normalizer.
// posterior_std > 0 selects Sigma = std^2 I; otherwise the Jacobian trick
// covariance is used (must be positive definite).
Tensor g_sim_mc(const GuidanceContext& ctx, std::span<const double> x_t, double t,
                const EnergyFn& energy, std::size_t n, double posterior_std, Rng& rng,
                McDiagnostics* diag = nullptr);

// Linear-Gaussian inverse-problem guidance
//   g = -lambda_t (sigma_y^2 / r_t^2 I + H^T H)^{-1} H^T (y - H x1_hat),
// solved as an SPD system. lambda_t is a signed coefficient; the canonical
// schedule value is pigdm_lambda() below (negative), which makes the guidance
// point toward measurement agreement.
Tensor g_sim_inv_a(const GuidanceContext& ctx, std::span<const double> x_t, double t,
                   const Tensor& h, const Tensor& y, double sigma_y, double r_t,
                   double lambda_t);

// canonical schedule coefficient -(dalpha beta - dbeta alpha)/beta
double pigdm_lambda(const Schedule& schedule, double t);
// r_t^2 = beta^2 / (alpha^2 + beta^2)
double pigdm_r2(const Schedule& schedule, double t);
// exact posterior variance r_t^2 for an isotropic Gaussian prior
double conjugate_r2(const Schedule& schedule, double t, double prior_var);

// Diffusion-equivalent guidance (uncoupled affine Gaussian paths):
//   g = (beta (dalpha beta - dbeta alpha) / alpha) grad_{x_t} log Z_t(x_t),
// with t clamped at t_eps. `clamped` reports whether clamping occurred.
Tensor g_diff_logz(const GuidanceContext& ctx, std::span<const double> x_t, double t,
                   const ScalarField& log_z, bool* clamped = nullptr);

// ---------------------------------------------------------------------------
// Guided sampling
// ---------------------------------------------------------------------------

struct GuidanceSpec {
    enum class Method {
        None, Mc, McX1, CovA, CovG, CovL, SimMc, SimInvA, DiffLogZ, Learned
    };
    Method method = Method::None;

    std::size_t n_samples = 1000;  // mc / mc_x1 / sim_mc
    bool fresh_samples = true;     // false: one fixed pool for the whole run
    double sigma_mc = 0.05;
    double eps_stab = 5e-3;
    LambdaSchedule lambda;         // cov_a scaling
    double posterior_std = 0.1;    // sim_mc; <= 0 selects the Jacobian trick
    // sim_inv_a
    double sigma_y = 0.1;
    double r_const = -1.0;    // <= 0: use pigdm_r2(t)
    double lambda_const = 0;  // 0: use pigdm_lambda(t), else this constant
    std::string model_path;   // cov_l / learned / diff_logz checkpoint (CLI)

    static Method method_from_string(const std::string& name);
    static std::string method_to_string(Method method);
};

// Per-sample guidance evaluation; implementations must be pure given
// (sample, step, x, t) so batches parallelize deterministically.
using GuidanceFn = std::function<void(std::size_t sample, int step,
                                      std::span<const double> x, double t,
                                      std::span<double> g_out, McDiagnostics* diag,
                                      bool* degenerate)>;

// Training-free methods only (cov_l / learned / diff_logz are assembled by
// the trainguide layer, which owns the extra models).
GuidanceFn make_training_free_guidance(const GuidanceContext& ctx, const GuidanceSpec& spec,
                                       const EnergyFn* energy, std::uint64_t seed);

struct StepDiagnostics {
    double t = 0.0;
    double mean_gnorm = 0.0;
    double mean_z = 0.0;
    double mean_ess = 0.0;
};

struct GuidedSampleResult {
    Tensor samples;
    std::vector<Trajectory> trajectories;       // gnorm filled per recorded sample
    std::vector<StepDiagnostics> diagnostics;   // one row per ODE step
    std::size_t degenerate_fallbacks = 0;
};

// Integrates v' = v + g. With guidance == nullptr this is exactly unguided
// sampling (bit-identical trajectories for the same inputs).
GuidedSampleResult guided_sample(const VectorField& field, const GuidanceFn* guidance,
                                 const Tensor& x0_batch, const OdeOptions& options);

}  // namespace flowguide
