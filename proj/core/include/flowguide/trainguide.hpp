#pragma once

#include <string>
#include <vector>

#include "flowguide/energy.hpp"
#include "flowguide/guidance.hpp"
#include "flowguide/mlp.hpp"
#include "flowguide/optim.hpp"

namespace flowguide {

enum class GuidanceLossKind { GM, VGM, RGM, MRGM };

GuidanceLossKind guidance_loss_from_string(const std::string& name);
std::string guidance_loss_to_string(GuidanceLossKind kind);

// Surrogate normalizer Z_phi (softplus head, strictly positive) and guidance
// network g_phi trained by guidance matching. The base flow is frozen; its
// parameters are never touched here.
struct GuidanceNets {
    MlpModel z_net;  // scalar raw output; evaluate through z_value()
    MlpModel g_net;  // d outputs
    bool has_z = true;
    GuidanceLossKind loss_kind = GuidanceLossKind::GM;
    double z_floor = 1e-6;
    double mrgm_z = 1.0;  // dataset-level E[e^{-J}] (MRGM only)
    std::vector<double> z_loss_curve;
    std::vector<double> g_loss_curve;
    std::size_t z_clamp_events = 0;
};

// softplus(raw) + floor; > 0 everywhere
double z_value(const GuidanceNets& nets, std::span<const double> x, double t);
Tensor g_value(const GuidanceNets& nets, std::span<const double> x, double t);

struct GuidanceTrainConfig {
    GuidanceLossKind kind = GuidanceLossKind::GM;
    std::size_t steps = 3000;
    std::size_t batch = 256;
    double lr = 1e-3;
    std::uint64_t seed = 0;
    std::vector<std::size_t> z_hidden = {128, 128, 128, 128};
    std::vector<std::size_t> g_hidden = {128, 128, 128, 128};
    ActivationKind activation = ActivationKind::Tanh;
    std::size_t time_embedding = 16;
    bool joint = true;  // false: train z to completion first, then g
    bool cosine_lr = true;
    double ema_decay = 0.999;
    double z_floor = 1e-6;
    std::size_t mrgm_z_samples = 100000;
};

// Mean loss_z over one batch (probe; no parameter update).
double loss_z_probe(const GuidanceNets& nets, const PairSampler& pairs,
                    const Schedule& schedule, const EnergyFn& energy,
                    std::size_t batch, Rng& rng);

// Mean guidance-matching loss of the requested kind over one batch.
double loss_g_probe(const GuidanceNets& nets, const VectorField& base_field,
                    const PairSampler& pairs, const Schedule& schedule,
                    const EnergyFn& energy, GuidanceLossKind kind,
                    std::size_t batch, Rng& rng);

GuidanceNets train_guidance(const VectorField& base_field, const PairSampler& pairs,
                            const Schedule& schedule, const EnergyFn& energy,
                            const GuidanceTrainConfig& config);

// Single optimization steps on a freshly drawn batch, for custom loops and
// the stop-gradient contract tests. The g step reads Z_phi values only; it
// never writes a z_net parameter.
double guidance_z_step(GuidanceNets& nets, const PairSampler& pairs,
                       const Schedule& schedule, const EnergyFn& energy,
                       AdamState& adam, std::size_t batch, Rng& rng);
double guidance_g_step(GuidanceNets& nets, const VectorField& base_field,
                       const PairSampler& pairs, const Schedule& schedule,
                       const EnergyFn& energy, AdamState& adam, std::size_t batch,
                       Rng& rng);
AdamState guidance_adam_init(const MlpModel& model, double lr);

// ---------------------------------------------------------------------------
// Learned covariance model for the cov-L guidance
// ---------------------------------------------------------------------------

// The net regresses the x1_hat-centered second moment (x1 - x1_hat)(x1 -
// x1_hat)^T in symmetric packing; its conditional minimizer is the posterior
// covariance once the base field's x1_hat matches the posterior mean. The
// uncentered moment is recovered as net(x, t) + x1_hat x1_hat^T. Regressing
// the centered form keeps the approximation error proportional to the
// covariance scale instead of the much larger second-moment scale.
struct CovModel {
    MlpModel m2_net;  // d(d+1)/2 outputs, symmetric packing
    std::size_t dim = 2;
    std::vector<double> loss_curve;
};

struct CovTrainConfig {
    std::size_t steps = 3000;
    std::size_t batch = 256;
    double lr = 1e-3;
    bool cosine_lr = true;
    double ema_decay = 0.999;
    std::uint64_t seed = 0;
    std::vector<std::size_t> hidden = {128, 128, 128};
    ActivationKind activation = ActivationKind::Tanh;
    std::size_t time_embedding = 16;
};

CovModel train_cov_model(const VectorField& base_field, const PairSampler& pairs,
                         const Schedule& schedule, const CovTrainConfig& config);

// The PSD-projected covariance estimate at (x_t, t). `clamp_fraction`
// (optional) reports |largest clamped eigenvalue| / |largest eigenvalue|.
Tensor cov_model_sigma(const CovModel& cov, const GuidanceContext& ctx,
                       std::span<const double> x_t, double t,
                       double* clamp_fraction = nullptr);

// g^{cov-L} = -((dalpha beta - dbeta alpha)/beta) Sigma_hat grad J(x1_hat)
Tensor g_cov_l(const GuidanceContext& ctx, std::span<const double> x_t, double t,
               const EnergyFn& energy, const CovModel& cov);

// ---------------------------------------------------------------------------
// GuidanceFn adapters for the learned models
// ---------------------------------------------------------------------------

GuidanceFn make_learned_guidance(const GuidanceNets& nets);
GuidanceFn make_cov_l_guidance(const GuidanceContext& ctx, const CovModel& cov,
                               const EnergyFn* energy);

// log Z_phi(x, t) with an exact gradient through the network.
class ZNetScalarField : public ScalarField {
public:
    explicit ZNetScalarField(const GuidanceNets* nets) : nets_(nets) {}
    double value(std::span<const double> x, double t) const override;
    void grad(std::span<const double> x, double t, std::span<double> out) const override;

private:
    const GuidanceNets* nets_;
};

GuidanceFn make_diff_logz_guidance(const GuidanceContext& ctx, const GuidanceNets& nets);

}  // namespace flowguide
