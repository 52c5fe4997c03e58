#include <cstdio>
#include <map>
#include <memory>

#include "commands.hpp"
#include "flowguide/errors.hpp"
#include "run_common.hpp"

namespace flowguide::cli {

ExperimentConfig resolve_config(const CommonArgs& args) {
    std::vector<std::string> overrides = args.overrides;
    if (!args.output_dir.empty())
        overrides.push_back("output_dir=\"" + args.output_dir + "\"");
    if (args.threads != 0)
        overrides.push_back("threads=" + std::to_string(args.threads));
    return load_config(args.config_path, overrides);
}

int cmd_train(const CommonArgs& args) {
    ExperimentConfig cfg = resolve_config(args);
    RunContext run(cfg, "train");

    FlowModel flow = cfm_train(cfg.cfm_config());

    CheckpointMeta meta;
    meta.schedule_id = flow.schedule.id_string();
    meta.sigma_const = flow.schedule.sigma_const();
    meta.role = "vf";
    const std::string ckpt_path = run.path("checkpoint.bin");
    save_checkpoint(ckpt_path, flow.model, meta);
    run.note_artifact(ckpt_path);

    CsvFile csv = run.csv("loss_curve.csv", {"step", "loss"});
    for (std::size_t i = 0; i < flow.loss_curve.size(); ++i)
        csv.row({std::to_string(i), format_double(flow.loss_curve[i])});
    csv.close();

    run.finish();
    const double final_loss = flow.loss_curve.empty() ? 0.0 : flow.loss_curve.back();
    std::printf("train: %zu steps, final loss %.6f -> %s\n", flow.loss_curve.size(),
                final_loss, ckpt_path.c_str());
    return 0;
}

int cmd_sample(const CommonArgs& args, const std::string& checkpoint) {
    ExperimentConfig cfg = resolve_config(args);
    RunContext run(cfg, "sample");

    FlowModel flow = load_flow(cfg, checkpoint);
    MlpVectorField field(&flow.model);

    Rng rng = Rng::from_path(cfg.seed, {0x5A});
    Tensor x0 = cfg.data.source.sample(cfg.eval.n_eval, rng);
    GuidedSampleResult result = guided_sample(field, nullptr, x0, cfg.ode_options());

    write_points_csv(run, "samples.csv", result.samples, cfg.config_hash);
    write_trajectories_csv(run, "trajectories.csv", result.trajectories, cfg.config_hash);

    std::vector<SvgScatter> scatters = {
        {&x0, "#1f77b4", 1.5, 0.5},
        {&result.samples, "#999999", 1.5, 0.7},
    };
    std::vector<SvgPolyline> lines;
    for (const auto& tr : result.trajectories)
        lines.push_back({&tr.states, "#bbbbbb", 0.5, 0.4});
    const std::string svg = run.path("samples.svg");
    write_svg(svg, scatters, lines);
    run.note_artifact(svg);

    run.finish();
    std::printf("sample: %zu points -> %s\n", cfg.eval.n_eval, run.dir().c_str());
    return 0;
}

namespace {

struct LoadedGuidance {
    GuidanceFn fn;
    // keep-alive for models behind the closure
    std::shared_ptr<GuidanceNets> nets;
    std::shared_ptr<CovModel> cov;
};

LoadedGuidance build_guidance(const ExperimentConfig& cfg, const GuidanceContext& ctx,
                              const GuidanceSpec& spec, const EnergyFn* energy) {
    LoadedGuidance out;
    switch (spec.method) {
        case GuidanceSpec::Method::None:
            break;
        case GuidanceSpec::Method::CovL: {
            if (spec.model_path.empty())
                throw ValidationError("cov_l guidance needs model_path");
            LoadedCheckpoint ckpt = load_checkpoint(spec.model_path);
            if (ckpt.meta.role != "cov")
                throw ValidationError("cov_l guidance expects a role=cov checkpoint");
            out.cov = std::make_shared<CovModel>();
            out.cov->m2_net = std::move(ckpt.model);
            out.cov->dim = 2;
            auto cov = out.cov;
            GuidanceFn inner = make_cov_l_guidance(ctx, *cov, energy);
            out.fn = [cov, inner](std::size_t s, int st, std::span<const double> x,
                                  double t, std::span<double> g, McDiagnostics* d,
                                  bool* deg) { inner(s, st, x, t, g, d, deg); };
            break;
        }
        case GuidanceSpec::Method::Learned: {
            if (spec.model_path.empty())
                throw ValidationError("learned guidance needs model_path");
            LoadedCheckpoint ckpt = load_checkpoint(spec.model_path);
            if (ckpt.meta.role != "g")
                throw ValidationError("learned guidance expects a role=g checkpoint");
            out.nets = std::make_shared<GuidanceNets>();
            out.nets->g_net = std::move(ckpt.model);
            out.nets->has_z = false;
            auto nets = out.nets;
            GuidanceFn inner = make_learned_guidance(*nets);
            out.fn = [nets, inner](std::size_t s, int st, std::span<const double> x,
                                   double t, std::span<double> g, McDiagnostics* d,
                                   bool* deg) { inner(s, st, x, t, g, d, deg); };
            break;
        }
        case GuidanceSpec::Method::DiffLogZ: {
            if (spec.model_path.empty())
                throw ValidationError("diff_logz guidance needs model_path (role=z)");
            LoadedCheckpoint ckpt = load_checkpoint(spec.model_path);
            if (ckpt.meta.role != "z")
                throw ValidationError("diff_logz guidance expects a role=z checkpoint");
            out.nets = std::make_shared<GuidanceNets>();
            out.nets->z_net = std::move(ckpt.model);
            auto nets = out.nets;
            GuidanceFn inner = make_diff_logz_guidance(ctx, *nets);
            out.fn = [nets, inner](std::size_t s, int st, std::span<const double> x,
                                   double t, std::span<double> g, McDiagnostics* d,
                                   bool* deg) { inner(s, st, x, t, g, d, deg); };
            break;
        }
        default:
            out.fn = make_training_free_guidance(ctx, spec, energy, cfg.seed);
            break;
    }
    return out;
}

}  // namespace

int cmd_guide(const CommonArgs& args, const std::string& checkpoint) {
    ExperimentConfig cfg = resolve_config(args);
    if (cfg.guidance.empty())
        throw ValidationError("guide: config has no guidance specs");
    RunContext run(cfg, "guide");

    FlowModel flow = load_flow(cfg, checkpoint);
    MlpVectorField field(&flow.model);
    GuidanceContext ctx = make_context(cfg, flow, &field);
    const EnergyFn* energy = cfg.energy ? &*cfg.energy : nullptr;

    Rng rng = Rng::from_path(cfg.seed, {0x5A});
    Tensor x0 = cfg.data.source.sample(cfg.eval.n_eval, rng);
    const OdeOptions ode = cfg.ode_options();

    GuidedSampleResult unguided = guided_sample(field, nullptr, x0, ode);
    write_points_csv(run, "samples_unguided.csv", unguided.samples, cfg.config_hash);

    // count method name collisions for unambiguous artifact names
    std::map<std::string, int> name_count;
    for (const auto& spec : cfg.guidance)
        name_count[GuidanceSpec::method_to_string(spec.method)] += 1;
    std::map<std::string, int> name_index;

    for (const auto& spec : cfg.guidance) {
        std::string name = GuidanceSpec::method_to_string(spec.method);
        if (name_count[name] > 1) name += "_" + std::to_string(name_index[name]++);

        const bool needs_energy = spec.method != GuidanceSpec::Method::None &&
                                  spec.method != GuidanceSpec::Method::Learned &&
                                  spec.method != GuidanceSpec::Method::DiffLogZ;
        if (needs_energy && !energy)
            throw ValidationError("guidance '" + name + "' requires an energy in the config");

        LoadedGuidance g = build_guidance(cfg, ctx, spec, energy);
        GuidedSampleResult result =
            guided_sample(field, g.fn ? &g.fn : nullptr, x0, ode);

        write_points_csv(run, "samples_" + name + ".csv", result.samples, cfg.config_hash);
        write_trajectories_csv(run, "trajectories_" + name + ".csv", result.trajectories,
                               cfg.config_hash);

        CsvFile diag = run.csv("diagnostics_" + name + ".csv",
                               {"t", "method", "gnorm", "Ztilde", "ess"});
        for (const auto& row : result.diagnostics)
            diag.row({format_double(row.t), name, format_double(row.mean_gnorm),
                      format_double(row.mean_z), format_double(row.mean_ess)});
        diag.close();

        std::vector<SvgScatter> scatters = {
            {&x0, "#1f77b4", 1.5, 0.5},
            {&unguided.samples, "#999999", 1.5, 0.5},
            {&result.samples, "#d62728", 1.5, 0.7},
        };
        std::vector<SvgPolyline> lines;
        for (const auto& tr : result.trajectories)
            lines.push_back({&tr.states, "#e8a0a0", 0.5, 0.4});
        const std::string svg = run.path("scatter_" + name + ".svg");
        write_svg(svg, scatters, lines);
        run.note_artifact(svg);

        if (result.degenerate_fallbacks > 0)
            std::fprintf(stderr,
                         "warning: %s had %zu degenerate MC estimates "
                         "(fell back to zero guidance)\n",
                         name.c_str(), result.degenerate_fallbacks);
        std::printf("guide[%s]: %zu samples\n", name.c_str(), cfg.eval.n_eval);
    }

    run.finish();
    return 0;
}

int cmd_train_guidance(const CommonArgs& args, const std::string& checkpoint) {
    ExperimentConfig cfg = resolve_config(args);
    if (!cfg.energy)
        throw ValidationError("train-guidance: config needs an energy");
    RunContext run(cfg, "train-guidance");

    FlowModel flow = load_flow(cfg, checkpoint);
    MlpVectorField field(&flow.model);

    for (GuidanceLossKind kind : cfg.guidance_training.kinds) {
        GuidanceTrainConfig tc;
        tc.kind = kind;
        tc.steps = cfg.guidance_training.steps;
        tc.batch = cfg.guidance_training.batch;
        tc.lr = cfg.guidance_training.lr;
        tc.seed = cfg.seed;
        tc.z_hidden = cfg.guidance_training.z_hidden;
        tc.g_hidden = cfg.guidance_training.g_hidden;
        tc.activation = cfg.model.activation;
        tc.time_embedding = cfg.model.time_embedding;
        tc.joint = cfg.guidance_training.joint;
        tc.z_floor = cfg.guidance_training.z_floor;

        GuidanceNets nets = train_guidance(field, flow.coupling, flow.schedule,
                                           *cfg.energy, tc);
        const std::string kind_name = guidance_loss_to_string(kind);

        CheckpointMeta meta;
        meta.schedule_id = flow.schedule.id_string();
        meta.sigma_const = flow.schedule.sigma_const();
        meta.role = "g";
        const std::string g_path = run.path("g_" + kind_name + ".bin");
        save_checkpoint(g_path, nets.g_net, meta);
        run.note_artifact(g_path);

        if (nets.has_z) {
            meta.role = "z";
            const std::string z_path = run.path("z_" + kind_name + ".bin");
            save_checkpoint(z_path, nets.z_net, meta);
            run.note_artifact(z_path);

            CsvFile zcsv = run.csv("z_loss_" + kind_name + ".csv", {"step", "loss"});
            for (std::size_t i = 0; i < nets.z_loss_curve.size(); ++i)
                zcsv.row({std::to_string(i), format_double(nets.z_loss_curve[i])});
            zcsv.close();
        }

        CsvFile gcsv = run.csv("g_loss_" + kind_name + ".csv", {"step", "loss"});
        for (std::size_t i = 0; i < nets.g_loss_curve.size(); ++i)
            gcsv.row({std::to_string(i), format_double(nets.g_loss_curve[i])});
        gcsv.close();

        std::printf("train-guidance[%s]: %zu steps, final g loss %.6f\n",
                    kind_name.c_str(), tc.steps,
                    nets.g_loss_curve.empty() ? 0.0 : nets.g_loss_curve.back());
    }

    if (cfg.guidance_training.train_cov) {
        CovTrainConfig cc;
        cc.steps = cfg.guidance_training.steps;
        cc.batch = cfg.guidance_training.batch;
        cc.lr = cfg.guidance_training.lr;
        cc.seed = cfg.seed;
        cc.hidden = cfg.guidance_training.g_hidden;
        cc.activation = cfg.model.activation;
        cc.time_embedding = cfg.model.time_embedding;
        CovModel cov = train_cov_model(field, flow.coupling, flow.schedule, cc);

        CheckpointMeta meta;
        meta.schedule_id = flow.schedule.id_string();
        meta.sigma_const = flow.schedule.sigma_const();
        meta.role = "cov";
        const std::string cov_path = run.path("cov_model.bin");
        save_checkpoint(cov_path, cov.m2_net, meta);
        run.note_artifact(cov_path);

        CsvFile ccsv = run.csv("cov_loss.csv", {"step", "loss"});
        for (std::size_t i = 0; i < cov.loss_curve.size(); ++i)
            ccsv.row({std::to_string(i), format_double(cov.loss_curve[i])});
        ccsv.close();
        std::printf("train-guidance[cov]: %zu steps, final loss %.6f\n", cc.steps,
                    cov.loss_curve.empty() ? 0.0 : cov.loss_curve.back());
    }

    run.finish();
    return 0;
}

int cmd_coupling_gap(const CommonArgs& args, const std::string& cfm_checkpoint,
                     const std::string& ot_checkpoint,
                     const std::string& baseline_checkpoint) {
    ExperimentConfig cfg = resolve_config(args);
    RunContext run(cfg, "coupling-gap");

    FlowModel flow_cfm = load_flow(cfg, cfm_checkpoint);
    FlowModel flow_ot = load_flow(cfg, ot_checkpoint);

    FlowModel flow_baseline;
    if (!baseline_checkpoint.empty()) {
        flow_baseline = load_flow(cfg, baseline_checkpoint);
    } else {
        // seed-baseline control: retrain the reference architecture with a
        // shifted seed on the same data
        CfmConfig cc = cfg.cfm_config();
        cc.seed = cfg.seed + 1;
        std::printf("coupling-gap: training seed-baseline model (seed %llu)\n",
                    static_cast<unsigned long long>(cc.seed));
        flow_baseline = cfm_train(cc);
    }

    const std::vector<double> t_list = {0.05, 0.25, 0.5, 0.75, 0.95};
    OdeOptions ode = cfg.ode_options();
    ode.record_trajectories = 0;

    auto gap = coupling_gap(flow_cfm, flow_ot, cfg.eval.n_eval, t_list, cfg.seed, ode);
    auto baseline = coupling_gap(flow_cfm, flow_baseline, cfg.eval.n_eval, t_list,
                                 cfg.seed, ode);

    CsvFile csv = run.csv("coupling_gap.csv",
                          {"t", "rel_l2_mean", "rel_l2_std", "baseline_rel_l2_mean",
                           "baseline_rel_l2_std"});
    for (std::size_t i = 0; i < gap.size(); ++i) {
        csv.row({format_double(gap[i].t), format_double(gap[i].mean_rel_l2),
                 format_double(gap[i].std_rel_l2),
                 format_double(baseline[i].mean_rel_l2),
                 format_double(baseline[i].std_rel_l2)});
        std::printf("t=%.2f  ot-vs-cfm %.4f +- %.4f   seed-baseline %.4f +- %.4f\n",
                    gap[i].t, gap[i].mean_rel_l2, gap[i].std_rel_l2,
                    baseline[i].mean_rel_l2, baseline[i].std_rel_l2);
    }
    csv.close();
    run.finish();
    return 0;
}

}  // namespace flowguide::cli
