#include "config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>

#include "flowguide/errors.hpp"
#include "flowguide/io.hpp"

namespace flowguide::cli {

namespace {

void check_keys(const json& j, const std::string& where,
                const std::set<std::string>& allowed) {
    if (!j.is_object())
        throw ValidationError(where + ": expected a JSON object");
    for (const auto& item : j.items()) {
        if (!allowed.count(item.key()))
            throw ValidationError(where + ": unknown key '" + item.key() + "'");
    }
}

template <typename T>
T require(const json& j, const std::string& where, const std::string& key) {
    if (!j.contains(key))
        throw ValidationError(where + ": missing required key '" + key + "'");
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ValidationError(where + ": key '" + key + "' has the wrong type");
    }
}

template <typename T>
T get_or(const json& j, const std::string& where, const std::string& key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ValidationError(where + ": key '" + key + "' has the wrong type");
    }
}

std::array<double, 2> point2(const json& j, const std::string& where, const std::string& key) {
    auto v = require<std::vector<double>>(j, where, key);
    if (v.size() != 2) throw ValidationError(where + ": '" + key + "' must have 2 entries");
    return {v[0], v[1]};
}

std::array<double, 4> cov2(const json& j, const std::string& where, const std::string& key) {
    auto m = require<std::vector<std::vector<double>>>(j, where, key);
    if (m.size() != 2 || m[0].size() != 2 || m[1].size() != 2)
        throw ValidationError(where + ": '" + key + "' must be a 2x2 matrix");
    return {m[0][0], m[0][1], m[1][0], m[1][1]};
}

Tensor tensor_vector(const json& j, const std::string& where, const std::string& key) {
    auto v = require<std::vector<double>>(j, where, key);
    return Tensor::vector(std::move(v));
}

Tensor tensor_matrix(const json& j, const std::string& where, const std::string& key) {
    auto m = require<std::vector<std::vector<double>>>(j, where, key);
    if (m.empty()) throw ValidationError(where + ": '" + key + "' must be non-empty");
    const std::size_t cols = m[0].size();
    std::vector<double> flat;
    for (const auto& row : m) {
        if (row.size() != cols)
            throw ValidationError(where + ": '" + key + "' rows must have equal length");
        flat.insert(flat.end(), row.begin(), row.end());
    }
    return Tensor::matrix(m.size(), cols, std::move(flat));
}

}  // namespace

Density2D density_from_json(const json& j, const std::string& where) {
    const std::string kind = require<std::string>(j, where, "kind");
    if (kind == "gaussian") {
        check_keys(j, where, {"kind", "mean", "cov"});
        return Density2D::gaussian(point2(j, where, "mean"), cov2(j, where, "cov"));
    }
    if (kind == "gaussian_mixture") {
        check_keys(j, where, {"kind", "weights", "means", "covs"});
        auto weights = require<std::vector<double>>(j, where, "weights");
        auto means_j = require<std::vector<std::vector<double>>>(j, where, "means");
        auto covs_j = require<std::vector<std::vector<std::vector<double>>>>(j, where, "covs");
        std::vector<std::array<double, 2>> means;
        std::vector<std::array<double, 4>> covs;
        for (const auto& m : means_j) {
            if (m.size() != 2) throw ValidationError(where + ": means must be 2-vectors");
            means.push_back({m[0], m[1]});
        }
        for (const auto& c : covs_j) {
            if (c.size() != 2 || c[0].size() != 2 || c[1].size() != 2)
                throw ValidationError(where + ": covs must be 2x2 matrices");
            covs.push_back({c[0][0], c[0][1], c[1][0], c[1][1]});
        }
        return Density2D::gaussian_mixture(weights, means, covs);
    }
    if (kind == "uniform_box") {
        check_keys(j, where, {"kind", "lo", "hi"});
        return Density2D::uniform_box(point2(j, where, "lo"), point2(j, where, "hi"));
    }
    if (kind == "circle_ring") {
        check_keys(j, where, {"kind", "radius", "thickness"});
        return Density2D::circle_ring(require<double>(j, where, "radius"),
                                      require<double>(j, where, "thickness"));
    }
    if (kind == "moons") {
        check_keys(j, where, {"kind", "noise"});
        return Density2D::moons(get_or(j, where, "noise", 0.05));
    }
    if (kind == "s_curve") {
        check_keys(j, where, {"kind", "noise"});
        return Density2D::s_curve(get_or(j, where, "noise", 0.05));
    }
    if (kind == "eight_gaussians") {
        check_keys(j, where, {"kind", "radius", "sigma"});
        return Density2D::eight_gaussians(get_or(j, where, "radius", 2.0),
                                          get_or(j, where, "sigma", 0.1));
    }
    throw ValidationError(where + ": unknown density kind '" + kind + "'");
}

EnergyFn energy_from_json(const json& j, const std::string& where) {
    const std::string kind = require<std::string>(j, where, "kind");
    const double scale = get_or(j, where, "scale", 1.0);
    if (kind == "quadratic") {
        check_keys(j, where, {"kind", "a", "b", "scale"});
        return EnergyFn::quadratic(tensor_vector(j, where, "a"),
                                   tensor_matrix(j, where, "b"), scale);
    }
    if (kind == "linear") {
        check_keys(j, where, {"kind", "c", "scale"});
        return EnergyFn::linear(tensor_vector(j, where, "c"), scale);
    }
    if (kind == "measurement") {
        check_keys(j, where, {"kind", "h", "y", "sigma_y", "scale"});
        return EnergyFn::measurement(tensor_matrix(j, where, "h"),
                                     tensor_vector(j, where, "y"),
                                     require<double>(j, where, "sigma_y"), scale);
    }
    if (kind == "custom_grid") {
        check_keys(j, where, {"kind", "x0", "y0", "dx", "dy", "values", "scale"});
        return EnergyFn::custom_grid(require<double>(j, where, "x0"),
                                     require<double>(j, where, "y0"),
                                     require<double>(j, where, "dx"),
                                     require<double>(j, where, "dy"),
                                     tensor_matrix(j, where, "values"), scale);
    }
    throw ValidationError(where + ": unknown energy kind '" + kind + "'");
}

GuidanceSpec guidance_spec_from_json(const json& j, const std::string& where) {
    check_keys(j, where,
               {"method", "n_samples", "fresh_samples", "sigma_mc", "eps_stab", "lambda",
                "posterior_std", "sigma_y", "r_const", "lambda_const", "model_path"});
    GuidanceSpec spec;
    spec.method = GuidanceSpec::method_from_string(require<std::string>(j, where, "method"));
    spec.n_samples = get_or<std::size_t>(j, where, "n_samples", 1000);
    if (spec.n_samples < 1) throw ValidationError(where + ": n_samples must be >= 1");
    spec.fresh_samples = get_or(j, where, "fresh_samples", true);
    spec.sigma_mc = get_or(j, where, "sigma_mc", 0.05);
    spec.eps_stab = get_or(j, where, "eps_stab", 5e-3);
    if (spec.eps_stab < 0.0) throw ValidationError(where + ": eps_stab must be >= 0");
    if (j.contains("lambda")) {
        const json& l = j.at("lambda");
        check_keys(l, where + ".lambda", {"shape", "scale", "decay_rate"});
        spec.lambda.shape =
            LambdaSchedule::shape_from_string(get_or<std::string>(l, where, "shape", "constant"));
        spec.lambda.scale = get_or(l, where, "scale", 1.0);
        spec.lambda.decay_rate = get_or(l, where, "decay_rate", 4.0);
        if (spec.lambda.scale < 0.0)
            throw ValidationError(where + ": lambda.scale must be >= 0");
    }
    spec.posterior_std = get_or(j, where, "posterior_std", 0.1);
    spec.sigma_y = get_or(j, where, "sigma_y", 0.1);
    spec.r_const = get_or(j, where, "r_const", -1.0);
    spec.lambda_const = get_or(j, where, "lambda_const", 0.0);
    spec.model_path = get_or<std::string>(j, where, "model_path", "");
    return spec;
}

namespace {

void apply_override(json& doc, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos)
        throw ValidationError("--set expects key.path=value, got '" + assignment + "'");
    const std::string path = assignment.substr(0, eq);
    const std::string value = assignment.substr(eq + 1);

    json* node = &doc;
    std::size_t pos = 0;
    while (true) {
        const auto dot = path.find('.', pos);
        const std::string key = path.substr(pos, dot == std::string::npos
                                                     ? std::string::npos
                                                     : dot - pos);
        if (key.empty()) throw ValidationError("--set: empty key in '" + path + "'");
        if (dot == std::string::npos) {
            json parsed;
            try {
                parsed = json::parse(value);
            } catch (const json::exception&) {
                parsed = value;  // treat as a plain string
            }
            (*node)[key] = parsed;
            return;
        }
        node = &(*node)[key];
        pos = dot + 1;
    }
}

}  // namespace

ExperimentConfig parse_config(json doc, const std::vector<std::string>& overrides) {
    for (const auto& o : overrides) apply_override(doc, o);

    check_keys(doc, "config",
               {"seed", "output_dir", "threads", "data", "schedule", "model", "train",
                "sampler", "energy", "guidance", "eval", "sweep", "inverse",
                "guidance_training"});

    ExperimentConfig cfg;
    cfg.seed = get_or<std::uint64_t>(doc, "config", "seed", 0);
    cfg.output_dir = get_or<std::string>(doc, "config", "output_dir", "runs/out");
    cfg.threads = get_or<unsigned>(doc, "config", "threads", 0);

    if (doc.contains("data")) {
        const json& d = doc.at("data");
        check_keys(d, "data", {"source", "target", "coupling", "ot_batch_size", "data_scale"});
        if (!d.contains("target"))
            throw ValidationError("data: missing required key 'target'");
        cfg.data.target = density_from_json(d.at("target"), "data.target");
        if (d.contains("source"))
            cfg.data.source = density_from_json(d.at("source"), "data.source");
        cfg.data.coupling =
            coupling_mode_from_string(get_or<std::string>(d, "data", "coupling", "independent"));
        cfg.data.ot_batch_size = get_or<std::size_t>(d, "data", "ot_batch_size", 128);
        cfg.data.data_scale = get_or(d, "data", "data_scale", 1.0);
    }

    if (doc.contains("schedule")) {
        const json& s = doc.at("schedule");
        check_keys(s, "schedule", {"id", "sigma_const"});
        cfg.schedule = Schedule::from_string(get_or<std::string>(s, "schedule", "id", "linear"),
                                             get_or(s, "schedule", "sigma_const", 0.0));
    }

    if (doc.contains("model")) {
        const json& m = doc.at("model");
        check_keys(m, "model", {"hidden", "activation", "time_embedding"});
        cfg.model.hidden = get_or(m, "model", "hidden", cfg.model.hidden);
        cfg.model.activation =
            activation_from_string(get_or<std::string>(m, "model", "activation", "tanh"));
        cfg.model.time_embedding = get_or<std::size_t>(m, "model", "time_embedding", 16);
    }

    if (doc.contains("train")) {
        const json& t = doc.at("train");
        check_keys(t, "train", {"steps", "batch", "lr"});
        cfg.train.steps = get_or<std::size_t>(t, "train", "steps", cfg.train.steps);
        cfg.train.batch = get_or<std::size_t>(t, "train", "batch", cfg.train.batch);
        cfg.train.lr = get_or(t, "train", "lr", cfg.train.lr);
    }

    if (doc.contains("sampler")) {
        const json& s = doc.at("sampler");
        check_keys(s, "sampler", {"steps", "method", "t_eps"});
        cfg.sampler.steps = get_or<std::size_t>(s, "sampler", "steps", cfg.sampler.steps);
        cfg.sampler.method =
            ode_method_from_string(get_or<std::string>(s, "sampler", "method", "euler"));
        cfg.sampler.t_eps = get_or(s, "sampler", "t_eps", cfg.sampler.t_eps);
        if (!(cfg.sampler.t_eps >= 0.0 && cfg.sampler.t_eps < 0.5))
            throw ValidationError("sampler: t_eps must be in [0, 0.5)");
    }

    if (doc.contains("energy"))
        cfg.energy = energy_from_json(doc.at("energy"), "energy");

    if (doc.contains("guidance")) {
        const json& g = doc.at("guidance");
        if (!g.is_array()) throw ValidationError("guidance: expected an array of specs");
        for (std::size_t i = 0; i < g.size(); ++i)
            cfg.guidance.push_back(
                guidance_spec_from_json(g[i], "guidance[" + std::to_string(i) + "]"));
    }

    if (doc.contains("eval")) {
        const json& e = doc.at("eval");
        check_keys(e, "eval",
                   {"n_eval", "w2_repetitions", "tilted_pool", "reference", "trajectories",
                    "ess_floor"});
        cfg.eval.n_eval = get_or<std::size_t>(e, "eval", "n_eval", cfg.eval.n_eval);
        cfg.eval.w2_repetitions =
            get_or<std::size_t>(e, "eval", "w2_repetitions", cfg.eval.w2_repetitions);
        cfg.eval.tilted_pool = get_or<std::size_t>(e, "eval", "tilted_pool", cfg.eval.tilted_pool);
        cfg.eval.reference = get_or<std::string>(e, "eval", "reference", cfg.eval.reference);
        if (cfg.eval.reference != "resampled" && cfg.eval.reference != "oracle_tilted")
            throw ValidationError("eval.reference must be resampled|oracle_tilted");
        cfg.eval.trajectories =
            get_or<std::size_t>(e, "eval", "trajectories", cfg.eval.trajectories);
        cfg.eval.ess_floor = get_or(e, "eval", "ess_floor", cfg.eval.ess_floor);
    }

    if (doc.contains("sweep")) {
        const json& s = doc.at("sweep");
        check_keys(s, "sweep", {"n_grid"});
        cfg.sweep.n_grid = get_or(s, "sweep", "n_grid", cfg.sweep.n_grid);
        if (cfg.sweep.n_grid.empty()) throw ValidationError("sweep.n_grid must be non-empty");
    }

    if (doc.contains("inverse")) {
        const json& v = doc.at("inverse");
        check_keys(v, "inverse",
                   {"dim", "h_kind", "keep", "stride", "sigma_y", "prior_mean", "prior_std",
                    "n_eval", "r_mode", "methods", "mc_samples", "lambda_scale"});
        cfg.inverse.dim = get_or<std::size_t>(v, "inverse", "dim", cfg.inverse.dim);
        if (cfg.inverse.dim < 1 || cfg.inverse.dim > 16)
            throw ValidationError("inverse.dim must be in [1, 16]");
        cfg.inverse.h_kind = get_or<std::string>(v, "inverse", "h_kind", cfg.inverse.h_kind);
        cfg.inverse.keep = get_or<std::size_t>(v, "inverse", "keep", cfg.inverse.keep);
        cfg.inverse.stride = get_or<std::size_t>(v, "inverse", "stride", cfg.inverse.stride);
        cfg.inverse.sigma_y = get_or(v, "inverse", "sigma_y", cfg.inverse.sigma_y);
        cfg.inverse.prior_mean =
            get_or(v, "inverse", "prior_mean", cfg.inverse.prior_mean);
        cfg.inverse.prior_std = get_or(v, "inverse", "prior_std", cfg.inverse.prior_std);
        cfg.inverse.n_eval = get_or<std::size_t>(v, "inverse", "n_eval", cfg.inverse.n_eval);
        cfg.inverse.r_mode = get_or<std::string>(v, "inverse", "r_mode", cfg.inverse.r_mode);
        cfg.inverse.methods = get_or(v, "inverse", "methods", cfg.inverse.methods);
        cfg.inverse.mc_samples =
            get_or<std::size_t>(v, "inverse", "mc_samples", cfg.inverse.mc_samples);
        cfg.inverse.lambda_scale = get_or(v, "inverse", "lambda_scale", cfg.inverse.lambda_scale);
    }

    if (doc.contains("guidance_training")) {
        const json& g = doc.at("guidance_training");
        check_keys(g, "guidance_training",
                   {"kinds", "steps", "batch", "lr", "z_hidden", "g_hidden", "joint",
                    "z_floor", "train_cov"});
        if (g.contains("kinds")) {
            cfg.guidance_training.kinds.clear();
            for (const auto& k : g.at("kinds"))
                cfg.guidance_training.kinds.push_back(
                    guidance_loss_from_string(k.get<std::string>()));
        }
        cfg.guidance_training.steps =
            get_or<std::size_t>(g, "guidance_training", "steps", cfg.guidance_training.steps);
        cfg.guidance_training.batch =
            get_or<std::size_t>(g, "guidance_training", "batch", cfg.guidance_training.batch);
        cfg.guidance_training.lr = get_or(g, "guidance_training", "lr", cfg.guidance_training.lr);
        cfg.guidance_training.z_hidden =
            get_or(g, "guidance_training", "z_hidden", cfg.guidance_training.z_hidden);
        cfg.guidance_training.g_hidden =
            get_or(g, "guidance_training", "g_hidden", cfg.guidance_training.g_hidden);
        cfg.guidance_training.joint =
            get_or(g, "guidance_training", "joint", cfg.guidance_training.joint);
        cfg.guidance_training.z_floor =
            get_or(g, "guidance_training", "z_floor", cfg.guidance_training.z_floor);
        cfg.guidance_training.train_cov =
            get_or(g, "guidance_training", "train_cov", cfg.guidance_training.train_cov);
    }

    // environment override for the seed
    if (const char* env_seed = std::getenv("FLOWGUIDE_SEED")) {
        try {
            cfg.seed = std::stoull(env_seed);
        } catch (const std::exception&) {
            throw ValidationError("FLOWGUIDE_SEED is not an integer: " +
                                  std::string(env_seed));
        }
        doc["seed"] = cfg.seed;
    }

    // resolved document: original keys plus the effective seed/output_dir
    doc["seed"] = cfg.seed;
    doc["output_dir"] = cfg.output_dir;
    cfg.resolved = doc;
    // the hash identifies the experiment: where it is written and how many
    // workers ran it do not change the numbers
    json hashed = doc;
    hashed.erase("output_dir");
    hashed.erase("threads");
    cfg.config_hash = hash_hex(fnv1a_hash(hashed.dump()));
    return cfg;
}

ExperimentConfig load_config(const std::string& path,
                             const std::vector<std::string>& overrides) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config file: " + path);
    json doc;
    try {
        doc = json::parse(is);
    } catch (const json::exception& e) {
        throw ValidationError("config is not valid JSON: " + std::string(e.what()));
    }
    return parse_config(std::move(doc), overrides);
}

CfmConfig ExperimentConfig::cfm_config() const {
    CfmConfig c;
    c.source = data.source;
    c.target = data.target;
    c.coupling = data.coupling;
    c.ot_batch_size = data.ot_batch_size;
    c.schedule = schedule;
    c.hidden = model.hidden;
    c.activation = model.activation;
    c.time_embedding = model.time_embedding;
    c.steps = train.steps;
    c.batch = train.batch;
    c.lr = train.lr;
    c.seed = seed;
    return c;
}

OdeOptions ExperimentConfig::ode_options() const {
    OdeOptions o;
    o.steps = sampler.steps;
    o.method = sampler.method;
    o.t_start = 0.0;
    o.t_end = 1.0 - sampler.t_eps;
    o.threads = threads;
    o.record_trajectories = eval.trajectories;
    return o;
}

}  // namespace flowguide::cli
