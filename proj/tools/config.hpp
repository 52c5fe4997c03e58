#pragma once

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "flowguide/density.hpp"
#include "flowguide/energy.hpp"
#include "flowguide/flow.hpp"
#include "flowguide/guidance.hpp"
#include "flowguide/trainguide.hpp"

namespace flowguide::cli {

using nlohmann::json;

struct DataConfig {
    Density2D source = Density2D::standard_gaussian();
    Density2D target = Density2D::standard_gaussian();
    CouplingMode coupling = CouplingMode::Independent;
    std::size_t ot_batch_size = 128;
    double data_scale = 1.0;
};

struct ModelConfig {
    std::vector<std::size_t> hidden = {128, 128, 128};
    ActivationKind activation = ActivationKind::Tanh;
    std::size_t time_embedding = 16;
};

struct TrainConfig {
    std::size_t steps = 3000;
    std::size_t batch = 256;
    double lr = 1e-3;
};

struct SamplerConfig {
    std::size_t steps = 100;
    OdeMethod method = OdeMethod::Euler;
    double t_eps = 1e-4;
};

struct EvalConfig {
    std::size_t n_eval = 1000;
    std::size_t w2_repetitions = 50;
    std::size_t tilted_pool = 20000;
    std::string reference = "resampled";  // resampled | oracle_tilted
    std::size_t trajectories = 16;
    double ess_floor = 10.0;
};

struct SweepConfig {
    std::vector<std::size_t> n_grid = {5, 100, 1000, 10000};
};

struct InverseConfig {
    std::size_t dim = 4;
    std::string h_kind = "masking";  // identity | masking | decimation | blur | random
    std::size_t keep = 2;            // masking: leading coordinates kept
    std::size_t stride = 2;          // decimation
    double sigma_y = 0.1;
    std::vector<double> prior_mean;  // defaults to ones
    double prior_std = 1.0;
    std::size_t n_eval = 1000;
    std::string r_mode = "conjugate";  // conjugate | pigdm
    std::vector<std::string> methods = {"sim_inv_a", "cov_a", "cov_g", "mc"};
    std::size_t mc_samples = 20000;
    double lambda_scale = 1.0;
};

struct GuidanceTrainingConfig {
    std::vector<GuidanceLossKind> kinds = {GuidanceLossKind::GM};
    std::size_t steps = 3000;
    std::size_t batch = 256;
    double lr = 1e-3;
    std::vector<std::size_t> z_hidden = {128, 128, 128, 128};
    std::vector<std::size_t> g_hidden = {128, 128, 128, 128};
    bool joint = true;
    double z_floor = 1e-6;
    bool train_cov = false;  // also fit the covariance model for cov_l
};

struct ExperimentConfig {
    std::uint64_t seed = 0;
    std::string output_dir = "runs/out";
    unsigned threads = 0;  // 0 = hardware concurrency
    DataConfig data;
    Schedule schedule = Schedule::linear();
    ModelConfig model;
    TrainConfig train;
    SamplerConfig sampler;
    std::optional<EnergyFn> energy;
    std::vector<GuidanceSpec> guidance;
    EvalConfig eval;
    SweepConfig sweep;
    InverseConfig inverse;
    GuidanceTrainingConfig guidance_training;

    json resolved;  // fully-resolved document (defaults applied)
    std::string config_hash;

    CfmConfig cfm_config() const;
    OdeOptions ode_options() const;
};

// Parse + strictly validate (unknown keys rejected, errors name the key).
// Dotted-path overrides are applied before validation; FLOWGUIDE_SEED
// overrides the seed afterwards.
ExperimentConfig load_config(const std::string& path,
                             const std::vector<std::string>& overrides);
ExperimentConfig parse_config(json doc, const std::vector<std::string>& overrides);

Density2D density_from_json(const json& j, const std::string& where);
EnergyFn energy_from_json(const json& j, const std::string& where);
GuidanceSpec guidance_spec_from_json(const json& j, const std::string& where);

}  // namespace flowguide::cli
