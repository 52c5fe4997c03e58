#pragma once

#include <chrono>
#include <string>
#include <vector>

#include "config.hpp"
#include "flowguide/checkpoint.hpp"
#include "flowguide/io.hpp"
#include "flowguide/oracle.hpp"

namespace flowguide::cli {

// Output bookkeeping shared by every command: creates the output directory,
// writes the resolved config, collects artifact paths and emits the manifest.
class RunContext {
public:
    RunContext(const ExperimentConfig& config, const std::string& command);

    std::string path(const std::string& filename);
    void note_artifact(const std::string& path);
    CsvFile csv(const std::string& filename, const std::vector<std::string>& columns);
    void finish();  // writes manifest.json

    const ExperimentConfig& config() const { return *config_; }
    const std::string& dir() const { return dir_; }

private:
    const ExperimentConfig* config_;
    std::string dir_;
    std::vector<std::string> artifacts_;
    std::chrono::steady_clock::time_point start_;
};

// Checkpoint + config -> runnable flow model (coupling/schedule come from the
// config; the checkpoint stores the architecture and schedule id).
FlowModel load_flow(const ExperimentConfig& config, const std::string& checkpoint_path);

GuidanceContext make_context(const ExperimentConfig& config, const FlowModel& flow,
                             const VectorField* field);

// CSV point loading (skips `#` comments and the header row).
Tensor load_points_csv(const std::string& path);

void write_points_csv(RunContext& run, const std::string& filename, const Tensor& points,
                      const std::string& config_hash);

void write_trajectories_csv(RunContext& run, const std::string& filename,
                            const std::vector<Trajectory>& trajectories,
                            const std::string& config_hash);

// Optional dataset cache keyed by (kind, params, seed).
Tensor cached_density_sample(const std::string& cache_dir, const Density2D& density,
                             std::size_t n, std::uint64_t seed,
                             const std::string& config_hash);

// Closed-form tilted target for Gaussian-family targets and quadratic-form
// energies: per-component Gaussian tilt, reweighted.
GmmFlowOracle tilted_target_oracle(const Density2D& target, const EnergyFn& energy);

// Draw one reference set of `n` points from the tilted ground truth.
// mode "resampled": self-normalized resampling from a target pool;
// mode "oracle_tilted": exact sampling from the tilted GMM.
Tensor tilted_reference(const ExperimentConfig& config, std::size_t n,
                        std::uint64_t rep_seed, const Tensor* pool);

std::string version_string();

}  // namespace flowguide::cli
