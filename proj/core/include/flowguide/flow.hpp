#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <vector>

#include "flowguide/coupling.hpp"
#include "flowguide/density.hpp"
#include "flowguide/field.hpp"
#include "flowguide/mlp.hpp"
#include "flowguide/schedule.hpp"
#include "flowguide/tensor.hpp"

namespace flowguide {

// ---------------------------------------------------------------------------
// Conditional path operations (all pure)
// ---------------------------------------------------------------------------

// x_t = alpha_t x1 + beta_t x0 + sigma_t noise
void sample_conditional_path(std::span<const double> x0, std::span<const double> x1,
                             double t, std::span<const double> noise,
                             const Schedule& schedule, std::span<double> out);

// d/dt x_t = dalpha x1 + dbeta x0 + dsigma noise
void conditional_vf(std::span<const double> x0, std::span<const double> x1, double t,
                    std::span<const double> noise, const Schedule& schedule,
                    std::span<double> out);

// Isotropic Gaussian log p_t(x_t | z) with mean alpha x1 + beta x0 and
// standard deviation sigma_eff (the larger of schedule sigma_t and the
// configured floor). sigma_eff must be positive.
double conditional_log_density(std::span<const double> x_t, std::span<const double> x0,
                               std::span<const double> x1, double t,
                               const Schedule& schedule, double sigma_eff);

// log p_t(x_t | x1) for sigma = 0 independent coupling via change of
// variables: log p0((x_t - alpha x1)/beta) - d log beta. Throws at beta = 0.
double pushforward_log_density_x1(
    std::span<const double> x_t, std::span<const double> x1, double t,
    const Schedule& schedule,
    const std::function<double(std::span<const double>)>& source_log_density);

// x1-parameterization: x1_hat = (-dbeta x_t + beta v) / (dalpha beta - dbeta alpha)
void estimate_x1(std::span<const double> x_t, double t, std::span<const double> v,
                 const Schedule& schedule, std::span<double> out);
// x0_hat = (dalpha x_t - alpha v) / (dalpha beta - dbeta alpha)
void estimate_x0(std::span<const double> x_t, double t, std::span<const double> v,
                 const Schedule& schedule, std::span<double> out);

// ---------------------------------------------------------------------------
// ODE sampling
// ---------------------------------------------------------------------------

enum class OdeMethod { Euler, Rk4 };

OdeMethod ode_method_from_string(const std::string& name);
std::string ode_method_to_string(OdeMethod method);

struct Trajectory {
    std::vector<double> times;
    Tensor states;                 // (len(times) x d)
    std::vector<double> gnorm;     // per recorded step, optional
};

// Per-sample field evaluation: `step` identifies the ODE step so stochastic
// guidance can hold its Monte-Carlo draw fixed across RK stages.
using SampleField = std::function<void(std::size_t sample, int step,
                                       std::span<const double> x, double t,
                                       std::span<double> out)>;

struct OdeOptions {
    std::size_t steps = 100;
    OdeMethod method = OdeMethod::Euler;
    double t_start = 0.0;
    double t_end = 1.0;
    unsigned threads = 1;
    std::size_t record_trajectories = 0;  // how many leading samples to record
};

struct OdeResult {
    Tensor final_states;  // (n x d)
    std::vector<Trajectory> trajectories;
};

OdeResult ode_sample(const SampleField& field, const Tensor& x0_batch,
                     const OdeOptions& options);

// Convenience wrapper for a shared deterministic field.
OdeResult ode_sample(const VectorField& field, const Tensor& x0_batch,
                     const OdeOptions& options);

// ---------------------------------------------------------------------------
// Conditional flow matching training
// ---------------------------------------------------------------------------

struct FlowModel {
    MlpModel model;
    Schedule schedule;
    CouplingSampler coupling;
    std::vector<double> loss_curve;
    std::uint64_t seed = 0;
    std::size_t train_steps = 0;

    MlpVectorField field() const { return MlpVectorField(&model); }
};

struct CfmConfig {
    Density2D source = Density2D::standard_gaussian();
    Density2D target = Density2D::standard_gaussian();
    CouplingMode coupling = CouplingMode::Independent;
    std::size_t ot_batch_size = 128;
    Schedule schedule = Schedule::linear();
    std::vector<std::size_t> hidden = {128, 128, 128};
    ActivationKind activation = ActivationKind::Tanh;
    std::size_t time_embedding = 16;
    std::size_t steps = 3000;
    std::size_t batch = 256;
    double lr = 1e-3;
    bool cosine_lr = true;
    std::uint64_t seed = 0;
};

// cosine learning-rate annealing with a small floor
inline double cosine_anneal(std::size_t step, std::size_t total) {
    if (total <= 1) return 1.0;
    const double frac = static_cast<double>(step) / static_cast<double>(total - 1);
    const double v = 0.5 * (1.0 + std::cos(3.14159265358979323846 * frac));
    return 0.005 + 0.995 * v;
}

// Minimizes E || v_theta(x_t, t) - v_{t|z}(x_t|z) ||^2 with Adam. Throws
// TrainingError (with the step index) if the loss becomes non-finite.
FlowModel cfm_train(const CfmConfig& config);

// One epoch-free loss evaluation used by tests: mean conditional flow
// matching loss of `model` over a freshly drawn batch.
double cfm_loss_probe(const FlowModel& flow, std::size_t batch, Rng& rng);

}  // namespace flowguide
