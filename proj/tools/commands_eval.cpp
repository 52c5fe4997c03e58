#include <cmath>
#include <cstdio>

#include "commands.hpp"
#include "flowguide/errors.hpp"
#include "flowguide/linalg.hpp"
#include "flowguide/numeric.hpp"
#include "flowguide/parallel.hpp"
#include "flowguide/wasserstein.hpp"
#include "run_common.hpp"

namespace flowguide::cli {

namespace {

struct W2Stats {
    double median, q25, q75;
};

W2Stats summarize(const std::vector<double>& values) {
    return {median(values), quantile(values, 0.25), quantile(values, 0.75)};
}

}  // namespace

int cmd_eval_w2(const CommonArgs& args, const std::string& samples_csv,
                const std::string& reference_mode, const std::string& reference_csv) {
    ExperimentConfig cfg = resolve_config(args);
    RunContext run(cfg, "eval-w2");

    Tensor samples = load_points_csv(samples_csv);
    const std::size_t n = samples.shape()[0];

    std::vector<double> values;
    if (reference_mode == "file") {
        if (reference_csv.empty())
            throw ValidationError("eval-w2: --reference file needs --reference-samples");
        Tensor other = load_points_csv(reference_csv);
        values.push_back(w2_distance(samples, other));
    } else {
        if (reference_mode != "resampled" && reference_mode != "oracle_tilted")
            throw ValidationError("eval-w2: unknown reference mode '" + reference_mode +
                                  "' (resampled|oracle_tilted|file)");
        ExperimentConfig ref_cfg = cfg;
        ref_cfg.eval.reference = reference_mode;
        Tensor pool;
        if (reference_mode == "resampled")
            pool = cached_density_sample(args.cache_dir, cfg.data.target,
                                         cfg.eval.tilted_pool, cfg.seed, cfg.config_hash);
        const std::size_t reps = cfg.eval.w2_repetitions;
        values.resize(reps);
        parallel_for(reps, cfg.threads, [&](std::size_t r) {
            Tensor ref = tilted_reference(ref_cfg, n, cfg.seed + 1000 + r,
                                          reference_mode == "resampled" ? &pool : nullptr);
            values[r] = w2_distance(samples, ref);
        });
    }

    CsvFile csv = run.csv("w2.csv", {"rep", "w2"});
    for (std::size_t r = 0; r < values.size(); ++r)
        csv.row({std::to_string(r), format_double(values[r])});
    csv.close();

    const W2Stats stats = summarize(values);
    std::printf("eval-w2: median %.6f  iqr [%.6f, %.6f]  (reps=%zu)\n", stats.median,
                stats.q25, stats.q75, values.size());
    run.finish();
    return 0;
}

int cmd_asymptotic_sweep(const CommonArgs& args, const std::string& checkpoint) {
    ExperimentConfig cfg = resolve_config(args);
    if (!cfg.energy)
        throw ValidationError("asymptotic-sweep: config needs an energy");
    RunContext run(cfg, "asymptotic-sweep");

    FlowModel flow = load_flow(cfg, checkpoint);
    MlpVectorField field(&flow.model);
    GuidanceContext ctx = make_context(cfg, flow, &field);

    // guidance parameters come from the first mc spec when present
    GuidanceSpec mc_spec;
    mc_spec.method = GuidanceSpec::Method::Mc;
    mc_spec.sigma_mc = ctx.sigma_mc;
    for (const auto& spec : cfg.guidance)
        if (spec.method == GuidanceSpec::Method::Mc) {
            mc_spec = spec;
            break;
        }

    const std::size_t n = cfg.eval.n_eval;
    const std::size_t reps = cfg.eval.w2_repetitions;
    Rng rng = Rng::from_path(cfg.seed, {0x5A});
    Tensor x0 = cfg.data.source.sample(n, rng);
    const OdeOptions ode = cfg.ode_options();

    // references: tilted ground truth per repetition, plus raw target draws
    // for the unguided baseline
    Tensor pool = cached_density_sample(args.cache_dir, cfg.data.target,
                                        cfg.eval.tilted_pool, cfg.seed, cfg.config_hash);
    std::vector<Tensor> tilted_refs(reps), raw_refs(reps);
    parallel_for(reps, cfg.threads, [&](std::size_t r) {
        tilted_refs[r] = tilted_reference(cfg, n, cfg.seed + 1000 + r, &pool);
        Rng rr = Rng::from_path(cfg.seed + 2000 + r, {0x11});
        raw_refs[r] = cfg.data.target.sample(n, rr);
    });

    GuidedSampleResult unguided = guided_sample(field, nullptr, x0, ode);
    std::vector<double> baseline(reps);
    parallel_for(reps, cfg.threads, [&](std::size_t r) {
        baseline[r] = w2_distance(unguided.samples, raw_refs[r]);
    });
    const W2Stats base_stats = summarize(baseline);

    CsvFile csv = run.csv("asymptotic_sweep.csv",
                          {"label", "n", "w2_median", "w2_q25", "w2_q75"});
    csv.row({"baseline", "0", format_double(base_stats.median),
             format_double(base_stats.q25), format_double(base_stats.q75)});

    std::vector<double> medians;
    for (std::size_t n_mc : cfg.sweep.n_grid) {
        GuidanceSpec spec = mc_spec;
        spec.n_samples = n_mc;
        GuidanceFn fn = make_training_free_guidance(ctx, spec, &*cfg.energy, cfg.seed);
        GuidedSampleResult guided = guided_sample(field, &fn, x0, ode);

        std::vector<double> values(reps);
        parallel_for(reps, cfg.threads, [&](std::size_t r) {
            values[r] = w2_distance(guided.samples, tilted_refs[r]);
        });
        const W2Stats stats = summarize(values);
        medians.push_back(stats.median);
        csv.row({"mc", std::to_string(n_mc), format_double(stats.median),
                 format_double(stats.q25), format_double(stats.q75)});
        std::printf("sweep N=%-8zu w2 median %.5f  iqr [%.5f, %.5f]\n", n_mc,
                    stats.median, stats.q25, stats.q75);
    }
    csv.close();
    std::printf("sweep baseline (unguided vs target) median %.5f\n", base_stats.median);

    // line plot: medians over the N grid plus the dashed-line analogue
    const std::size_t k = medians.size();
    Tensor line({k, 2});
    double max_y = base_stats.median;
    for (double m : medians) max_y = std::max(max_y, m);
    for (std::size_t i = 0; i < k; ++i) {
        line.at(i, 0) = static_cast<double>(i);
        line.at(i, 1) = medians[i] / max_y;
    }
    Tensor base_line({2, 2});
    base_line.at(0, 0) = 0.0;
    base_line.at(1, 0) = static_cast<double>(k - 1);
    base_line.at(0, 1) = base_line.at(1, 1) = base_stats.median / max_y;
    std::vector<SvgPolyline> lines = {{&line, "#d62728", 2.0, 0.9},
                                      {&base_line, "#555555", 1.0, 0.7}};
    std::vector<SvgScatter> pts = {{&line, "#d62728", 3.0, 1.0}};
    const std::string svg = run.path("asymptotic_sweep.svg");
    write_svg(svg, pts, lines, 480);
    run.note_artifact(svg);

    run.finish();
    return 0;
}

namespace {

Tensor build_h(const InverseConfig& inv) {
    const std::size_t d = inv.dim;
    if (inv.h_kind == "identity") return Tensor::identity(d);
    if (inv.h_kind == "masking") {
        const std::size_t m = std::min(inv.keep, d);
        if (m == 0) throw ValidationError("inverse: masking needs keep >= 1");
        Tensor h({m, d});
        for (std::size_t i = 0; i < m; ++i) h.at(i, i) = 1.0;
        return h;
    }
    if (inv.h_kind == "decimation") {
        if (inv.stride == 0) throw ValidationError("inverse: stride must be >= 1");
        const std::size_t m = (d + inv.stride - 1) / inv.stride;
        Tensor h({m, d});
        for (std::size_t i = 0; i < m; ++i) h.at(i, i * inv.stride) = 1.0;
        return h;
    }
    if (inv.h_kind == "blur") {
        // circulant [0.25, 0.5, 0.25]
        Tensor h({d, d});
        for (std::size_t i = 0; i < d; ++i) {
            h.at(i, i) = 0.5;
            h.at(i, (i + 1) % d) += 0.25;
            h.at(i, (i + d - 1) % d) += 0.25;
        }
        return h;
    }
    throw ValidationError("inverse: unknown h_kind '" + inv.h_kind +
                          "' (identity|masking|decimation|blur)");
}

}  // namespace

int cmd_inverse(const CommonArgs& args) {
    ExperimentConfig cfg = resolve_config(args);
    const InverseConfig& inv = cfg.inverse;
    RunContext run(cfg, "inverse");

    const std::size_t d = inv.dim;
    std::vector<double> mu(d, 1.0);
    if (!inv.prior_mean.empty()) {
        if (inv.prior_mean.size() != d)
            throw ValidationError("inverse: prior_mean length must equal dim");
        mu = inv.prior_mean;
    }
    const double prior_var = inv.prior_std * inv.prior_std;
    Tensor prior_mean({d}, std::vector<double>(mu));
    Tensor prior_cov({d, d});
    for (std::size_t i = 0; i < d; ++i) prior_cov.at(i, i) = prior_var;
    GmmFlowOracle prior = GmmFlowOracle::single(prior_mean, prior_cov);
    GmmFlowOracle::Field field = prior.field();

    const Tensor h = build_h(inv);
    const std::size_t m = h.shape()[0];

    // ground-truth draw and noisy measurement
    Rng rng = Rng::from_path(cfg.seed, {0x1A});
    Tensor x_true_t;
    prior.sample_target(1, rng, x_true_t);
    std::vector<double> y(m);
    for (std::size_t i = 0; i < m; ++i) {
        double hx = 0.0;
        for (std::size_t j = 0; j < d; ++j) hx += h.at(i, j) * x_true_t.at(0, j);
        y[i] = hx + inv.sigma_y * rng.normal();
    }
    Tensor y_t({m}, std::vector<double>(y));
    EnergyFn energy = EnergyFn::measurement(h, y_t, inv.sigma_y);

    // closed-form posterior mean: mu + S H^T (H S H^T + sigma^2 I)^{-1} (y - H mu)
    // with S = prior_var I this reduces to prior_var H^T solve(...).
    Tensor gram({m, m});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < m; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < d; ++k) s += h.at(i, k) * h.at(j, k);
            gram.at(i, j) = prior_var * s + (i == j ? inv.sigma_y * inv.sigma_y : 0.0);
        }
    std::vector<double> resid(m);
    for (std::size_t i = 0; i < m; ++i) {
        double hmu = 0.0;
        for (std::size_t j = 0; j < d; ++j) hmu += h.at(i, j) * mu[j];
        resid[i] = y[i] - hmu;
    }
    Tensor gram_l = cholesky(gram);
    std::vector<double> alpha(m);
    cholesky_solve_into(gram_l, resid, alpha);
    Tensor post_mean({d});
    for (std::size_t j = 0; j < d; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < m; ++i) s += h.at(i, j) * alpha[i];
        post_mean[j] = mu[j] + prior_var * s;
    }

    GuidanceContext ctx;
    ctx.field = &field;
    ctx.schedule = Schedule::linear();
    ctx.sigma_mc = 0.1 * inv.prior_std;
    ctx.t_eps = cfg.sampler.t_eps;
    CallablePairSampler pairs(
        d,
        [d](Rng& r, std::span<double> out) {
            for (std::size_t j = 0; j < d; ++j) out[j] = r.normal();
        },
        [&prior](Rng& r, std::span<double> out) {
            Tensor row;
            prior.sample_target(1, r, row);
            for (std::size_t j = 0; j < out.size(); ++j) out[j] = row.at(0, j);
        });
    ctx.pairs = &pairs;

    Rng rng_x0 = Rng::from_path(cfg.seed, {0x5A});
    Tensor x0;
    prior.sample_source(inv.n_eval, rng_x0, x0);
    OdeOptions ode = cfg.ode_options();
    ode.record_trajectories = 0;

    GuidedSampleResult unguided = guided_sample(field, nullptr, x0, ode);

    CsvFile recon = run.csv("reconstruction.csv",
                            {"method", "residual", "dist_posterior_mean",
                             "rel_posterior_mean"});
    CsvFile coords = run.csv("reconstruction_coords.csv",
                             {"method", "coord", "mean", "posterior_mean", "variance",
                              "prior_variance", "measured"});

    // which coordinates are observed (column norm of H)
    std::vector<bool> measured(d, false);
    for (std::size_t j = 0; j < d; ++j)
        for (std::size_t i = 0; i < m; ++i)
            if (h.at(i, j) != 0.0) measured[j] = true;

    for (const std::string& method_name : inv.methods) {
        GuidanceSpec spec;
        spec.method = GuidanceSpec::method_from_string(method_name);
        spec.sigma_mc = ctx.sigma_mc;
        spec.n_samples = inv.mc_samples;
        spec.lambda.shape = LambdaShape::LinearDecay;
        spec.lambda.scale = inv.lambda_scale;

        GuidanceFn fn;
        if (spec.method == GuidanceSpec::Method::SimInvA) {
            const double prior_var_c = prior_var;
            const std::string r_mode = inv.r_mode;
            const double lam_scale = inv.lambda_scale;
            const double sigma_y = inv.sigma_y;
            const Tensor* hp = &h;
            const Tensor* yp = &y_t;
            GuidanceContext* cp = &ctx;
            fn = [cp, hp, yp, sigma_y, prior_var_c, r_mode, lam_scale](
                     std::size_t, int, std::span<const double> x, double t,
                     std::span<double> out, McDiagnostics*, bool*) {
                const double tt = std::min(t, 1.0 - cp->t_eps);
                const double r2 = r_mode == "conjugate"
                                      ? conjugate_r2(cp->schedule, tt, prior_var_c)
                                      : pigdm_r2(cp->schedule, tt);
                const double lam = pigdm_lambda(cp->schedule, tt) * lam_scale;
                Tensor g = g_sim_inv_a(*cp, x, tt, *hp, *yp, sigma_y, std::sqrt(r2), lam);
                for (std::size_t j = 0; j < out.size(); ++j) out[j] = g[j];
            };
        } else {
            fn = make_training_free_guidance(ctx, spec, &energy, cfg.seed);
        }

        GuidedSampleResult result = guided_sample(field, fn ? &fn : nullptr, x0, ode);

        Tensor mean({d});
        for (std::size_t i = 0; i < inv.n_eval; ++i)
            for (std::size_t j = 0; j < d; ++j)
                mean[j] += result.samples.at(i, j) / static_cast<double>(inv.n_eval);
        std::vector<double> variance(d, 0.0);
        for (std::size_t i = 0; i < inv.n_eval; ++i)
            for (std::size_t j = 0; j < d; ++j) {
                const double dx = result.samples.at(i, j) - mean[j];
                variance[j] += dx * dx / static_cast<double>(inv.n_eval - 1);
            }

        double res_norm = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
            double hx = 0.0;
            for (std::size_t j = 0; j < d; ++j) hx += h.at(i, j) * mean[j];
            const double r = y[i] - hx;
            res_norm += r * r;
        }
        res_norm = std::sqrt(res_norm);
        const double dist = norm((mean - post_mean).span());
        const double rel = dist / std::max(norm(post_mean.span()), 1e-12);

        recon.row({method_name, format_double(res_norm), format_double(dist),
                   format_double(rel)});
        for (std::size_t j = 0; j < d; ++j)
            coords.row({method_name, std::to_string(j), format_double(mean[j]),
                        format_double(post_mean[j]), format_double(variance[j]),
                        format_double(prior_var), measured[j] ? "1" : "0"});

        write_points_csv(run, "inverse_samples_" + method_name + ".csv", result.samples,
                         cfg.config_hash);
        std::printf("inverse[%s]: residual %.4f  |mean - posterior| %.4f (rel %.4f)\n",
                    method_name.c_str(), res_norm, dist, rel);

        if (d >= 2) {
            Tensor guided2({inv.n_eval, 2}), unguided2({inv.n_eval, 2});
            for (std::size_t i = 0; i < inv.n_eval; ++i) {
                guided2.at(i, 0) = result.samples.at(i, 0);
                guided2.at(i, 1) = result.samples.at(i, 1);
                unguided2.at(i, 0) = unguided.samples.at(i, 0);
                unguided2.at(i, 1) = unguided.samples.at(i, 1);
            }
            Tensor pm2({1, 2});
            pm2.at(0, 0) = post_mean[0];
            pm2.at(0, 1) = post_mean[1];
            std::vector<SvgScatter> sc = {{&unguided2, "#999999", 1.5, 0.5},
                                          {&guided2, "#d62728", 1.5, 0.7},
                                          {&pm2, "#000000", 5.0, 1.0}};
            const std::string svg = run.path("inverse_" + method_name + ".svg");
            write_svg(svg, sc, {});
            run.note_artifact(svg);
        }
    }
    recon.close();
    coords.close();
    run.finish();
    return 0;
}

}  // namespace flowguide::cli
