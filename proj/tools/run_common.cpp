#include "run_common.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "flowguide/errors.hpp"
#include "flowguide/linalg.hpp"
#include "flowguide/numeric.hpp"

namespace flowguide::cli {

namespace fs = std::filesystem;

std::string version_string() { return "flowguide 0.1.0"; }

RunContext::RunContext(const ExperimentConfig& config, const std::string& command)
    : config_(&config), start_(std::chrono::steady_clock::now()) {
    dir_ = config.output_dir;
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec) throw IoError("cannot create output directory '" + dir_ + "': " + ec.message());

    json resolved = config.resolved;
    resolved["command"] = command;
    const std::string cfg_path = path("resolved_config.json");
    std::ofstream os(cfg_path);
    if (!os) throw IoError("cannot write " + cfg_path);
    os << resolved.dump(2) << "\n";
    note_artifact(cfg_path);
}

std::string RunContext::path(const std::string& filename) {
    return (fs::path(dir_) / filename).string();
}

void RunContext::note_artifact(const std::string& p) { artifacts_.push_back(p); }

CsvFile RunContext::csv(const std::string& filename,
                        const std::vector<std::string>& columns) {
    const std::string p = path(filename);
    note_artifact(p);
    return CsvFile(p, config_->config_hash, columns);
}

void RunContext::finish() {
    RunManifest manifest;
    manifest.config_hash = config_->config_hash;
    manifest.seed = config_->seed;
    manifest.artifacts = artifacts_;
    manifest.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    manifest.version = version_string();
    write_manifest(path("manifest.json"), manifest);
}

FlowModel load_flow(const ExperimentConfig& config, const std::string& checkpoint_path) {
    LoadedCheckpoint ckpt = load_checkpoint(checkpoint_path);
    if (ckpt.meta.role != "vf")
        throw ValidationError("checkpoint '" + checkpoint_path + "' has role '" +
                              ckpt.meta.role + "', expected a vector-field checkpoint");
    FlowModel flow;
    flow.model = std::move(ckpt.model);
    flow.schedule = Schedule::from_string(ckpt.meta.schedule_id, ckpt.meta.sigma_const);
    flow.coupling = CouplingSampler(config.data.source, config.data.target,
                                    config.data.coupling, config.data.ot_batch_size);
    flow.seed = config.seed;
    return flow;
}

GuidanceContext make_context(const ExperimentConfig& config, const FlowModel& flow,
                             const VectorField* field) {
    GuidanceContext ctx;
    ctx.field = field;
    ctx.schedule = flow.schedule;
    ctx.pairs = &flow.coupling;
    ctx.independent_coupling = flow.coupling.mode() == CouplingMode::Independent;
    if (config.data.source.has_log_density()) {
        const Density2D source = config.data.source;
        ctx.source_log_density = [source](std::span<const double> x) {
            return source.log_density(x);
        };
    }
    {
        const Density2D target = config.data.target;
        ctx.target_sampler = [target](Rng& rng, std::span<double> out) {
            target.sample_point(rng, out);
        };
    }
    ctx.sigma_mc = 0.05 * config.data.data_scale;
    ctx.t_eps = config.sampler.t_eps;
    return ctx;
}

Tensor load_points_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open csv: " + path);
    std::string line;
    std::vector<double> flat;
    std::size_t cols = 0;
    bool header_skipped = false;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#') continue;
        if (!header_skipped) {
            header_skipped = true;  // first non-comment row is the header
            continue;
        }
        std::stringstream ss(line);
        std::string cell;
        std::vector<double> row;
        while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
        if (cols == 0) cols = row.size();
        if (row.size() != cols)
            throw IoError("csv has ragged rows: " + path);
        flat.insert(flat.end(), row.begin(), row.end());
    }
    if (cols == 0) throw IoError("csv has no data rows: " + path);
    const std::size_t rows = flat.size() / cols;
    return Tensor({rows, cols}, std::move(flat));
}

void write_points_csv(RunContext& run, const std::string& filename, const Tensor& points,
                      const std::string& config_hash) {
    (void)config_hash;
    std::vector<std::string> columns;
    if (points.shape()[1] == 2) {
        columns = {"x", "y"};
    } else {
        for (std::size_t j = 0; j < points.shape()[1]; ++j)
            columns.push_back("x" + std::to_string(j));
    }
    CsvFile csv = run.csv(filename, columns);
    std::vector<std::string> cells(points.shape()[1]);
    for (std::size_t i = 0; i < points.shape()[0]; ++i) {
        for (std::size_t j = 0; j < points.shape()[1]; ++j)
            cells[j] = format_double(points.at(i, j));
        csv.row(cells);
    }
    csv.close();
}

void write_trajectories_csv(RunContext& run, const std::string& filename,
                            const std::vector<Trajectory>& trajectories,
                            const std::string& config_hash) {
    (void)config_hash;
    const bool with_gnorm =
        !trajectories.empty() && !trajectories.front().gnorm.empty();
    std::vector<std::string> columns = {"sample_id", "t", "x", "y"};
    if (with_gnorm) columns.push_back("gnorm");
    CsvFile csv = run.csv(filename, columns);
    for (std::size_t s = 0; s < trajectories.size(); ++s) {
        const Trajectory& tr = trajectories[s];
        for (std::size_t k = 0; k < tr.times.size(); ++k) {
            std::vector<std::string> cells = {
                std::to_string(s), format_double(tr.times[k]),
                format_double(tr.states.at(k, 0)), format_double(tr.states.at(k, 1))};
            if (with_gnorm)
                cells.push_back(format_double(k < tr.gnorm.size() ? tr.gnorm[k] : 0.0));
            csv.row(cells);
        }
    }
    csv.close();
}

Tensor cached_density_sample(const std::string& cache_dir, const Density2D& density,
                             std::size_t n, std::uint64_t seed,
                             const std::string& config_hash) {
    Rng rng = Rng::from_path(seed, {0xCAC4E});
    if (cache_dir.empty()) return density.sample(n, rng);

    std::error_code ec;
    fs::create_directories(cache_dir, ec);
    const std::string key = density.describe() + "|n=" + std::to_string(n) +
                            "|seed=" + std::to_string(seed);
    const std::string file =
        (fs::path(cache_dir) / (hash_hex(fnv1a_hash(key)) + ".csv")).string();
    if (fs::exists(file)) {
        Tensor cached = load_points_csv(file);
        if (cached.shape()[0] == n) return cached;
    }
    Tensor fresh = density.sample(n, rng);
    CsvFile csv(file, config_hash, {"x", "y"});
    for (std::size_t i = 0; i < n; ++i)
        csv.row({format_double(fresh.at(i, 0)), format_double(fresh.at(i, 1))});
    csv.close();
    return fresh;
}

GmmFlowOracle tilted_target_oracle(const Density2D& target, const EnergyFn& energy) {
    const auto form = energy.quadratic_form();
    if (!form)
        throw ValidationError("oracle-tilted reference requires a quadratic-form energy");
    GmmFlowOracle base = GmmFlowOracle::from_density(target);

    std::vector<double> log_mass;
    std::vector<double> weights;
    std::vector<Tensor> means, covs;
    const std::size_t d = base.dim();
    for (std::size_t k = 0; k < base.component_count(); ++k) {
        // posterior() at t -> 1 degenerates; tilt the raw components directly
        const auto& comp = target.components()[k];
        Tensor mean({d}, {comp.mean[0], comp.mean[1]});
        Tensor cov({d, d}, {comp.cov[0], comp.cov[1], comp.cov[2], comp.cov[3]});
        const Tensor ls = cholesky(cov);
        Tensor lambda = spd_inverse(cov);
        Tensor h = cholesky_solve(ls, mean);
        double m_sinv_m = 0.0;
        for (std::size_t i = 0; i < d; ++i) m_sinv_m += mean[i] * h[i];
        for (std::size_t i = 0; i < d; ++i) {
            h[i] -= form->q[i];
            for (std::size_t j = 0; j < d; ++j) lambda.at(i, j) += form->p.at(i, j);
        }
        const Tensor ll = cholesky(lambda);
        Tensor mprime = cholesky_solve(ll, h);
        double h_m = 0.0;
        for (std::size_t i = 0; i < d; ++i) h_m += h[i] * mprime[i];
        log_mass.push_back(std::log(comp.weight) + 0.5 * h_m - 0.5 * m_sinv_m - form->r -
                           0.5 * (spd_log_det(ls) + spd_log_det(ll)));
        means.push_back(std::move(mprime));
        covs.push_back(spd_inverse(lambda));
    }
    const double lse = log_sum_exp(log_mass);
    for (double lm : log_mass) weights.push_back(std::exp(lm - lse));
    // renormalize exactly
    double total = 0.0;
    for (double w : weights) total += w;
    for (double& w : weights) w /= total;
    return GmmFlowOracle(weights, means, covs);
}

Tensor tilted_reference(const ExperimentConfig& config, std::size_t n,
                        std::uint64_t rep_seed, const Tensor* pool) {
    if (!config.energy)
        throw ValidationError("tilted reference requires an energy in the config");
    if (config.eval.reference == "oracle_tilted") {
        GmmFlowOracle tilted = tilted_target_oracle(config.data.target, *config.energy);
        Rng rng = Rng::from_path(rep_seed, {0x7E});
        Tensor out;
        tilted.sample_target(n, rng, out);
        return out;
    }
    if (!pool)
        throw ContractError("resampled reference needs a target pool");
    Rng rng = Rng::from_path(rep_seed, {0x7F});
    ResampleResult rs = tilted_resample(*pool, *config.energy, n, rng,
                                        config.eval.ess_floor);
    return rs.samples;
}

}  // namespace flowguide::cli
