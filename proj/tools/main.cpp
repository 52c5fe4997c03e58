#include <cstdio>

#include <CLI11.hpp>

#include "commands.hpp"
#include "flowguide/errors.hpp"
#include "run_common.hpp"

using namespace flowguide;
using namespace flowguide::cli;

namespace {

void add_common(CLI::App* sub, CommonArgs& args, bool config_required = true) {
    auto* opt = sub->add_option("-c,--config", args.config_path, "experiment config (JSON)");
    if (config_required) opt->required();
    sub->add_option("--set", args.overrides,
                    "override a config leaf by dotted path, e.g. --set train.steps=200");
    sub->add_option("-o,--output", args.output_dir, "output directory (overrides config)");
    sub->add_option("--threads", args.threads, "worker thread cap (0 = hardware)");
    sub->add_option("--cache-dir", args.cache_dir, "dataset cache directory");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"flow-matching training and energy-guided sampling"};
    app.set_version_flag("--version", version_string());
    app.require_subcommand(1);

    CommonArgs args;
    std::string checkpoint, cfm_ckpt, ot_ckpt, baseline_ckpt;
    std::string samples_csv, reference_mode = "resampled", reference_csv, mutate;

    auto* train = app.add_subcommand("train", "train a flow matching model");
    add_common(train, args);

    auto* sample = app.add_subcommand("sample", "unguided sampling from a checkpoint");
    add_common(sample, args);
    sample->add_option("-k,--checkpoint", checkpoint, "model checkpoint")->required();

    auto* guide = app.add_subcommand("guide", "guided sampling with the configured methods");
    add_common(guide, args);
    guide->add_option("-k,--checkpoint", checkpoint, "model checkpoint")->required();

    auto* eval_w2 = app.add_subcommand("eval-w2", "Wasserstein-2 of samples vs a reference");
    add_common(eval_w2, args);
    eval_w2->add_option("--samples", samples_csv, "samples CSV")->required();
    eval_w2->add_option("--reference", reference_mode,
                        "reference mode: resampled|oracle_tilted|file");
    eval_w2->add_option("--reference-samples", reference_csv,
                        "reference CSV (mode 'file')");

    auto* sweep = app.add_subcommand("asymptotic-sweep",
                                     "W2 error scaling over the MC sample grid");
    add_common(sweep, args);
    sweep->add_option("-k,--checkpoint", checkpoint, "model checkpoint")->required();

    auto* oracle = app.add_subcommand("oracle-check", "closed-form identity suite");
    add_common(oracle, args, /*config_required=*/false);
    oracle->add_option("--mutate", mutate, "inject a deliberate defect (for meta-tests)");

    auto* inverse = app.add_subcommand("inverse", "linear-Gaussian inverse problem");
    add_common(inverse, args);

    auto* gap = app.add_subcommand("coupling-gap",
                                   "relative L2 between OT-CFM and CFM fields");
    add_common(gap, args);
    gap->add_option("--cfm", cfm_ckpt, "CFM checkpoint")->required();
    gap->add_option("--ot", ot_ckpt, "OT-CFM checkpoint")->required();
    gap->add_option("--baseline", baseline_ckpt,
                    "seed-baseline CFM checkpoint (trained on demand when omitted)");

    auto* tg = app.add_subcommand("train-guidance", "train guidance-matching networks");
    add_common(tg, args);
    tg->add_option("-k,--checkpoint", checkpoint, "base flow checkpoint")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (train->parsed()) return cmd_train(args);
        if (sample->parsed()) return cmd_sample(args, checkpoint);
        if (guide->parsed()) return cmd_guide(args, checkpoint);
        if (eval_w2->parsed())
            return cmd_eval_w2(args, samples_csv, reference_mode, reference_csv);
        if (sweep->parsed()) return cmd_asymptotic_sweep(args, checkpoint);
        if (oracle->parsed()) return cmd_oracle_check(args, mutate);
        if (inverse->parsed()) return cmd_inverse(args);
        if (gap->parsed()) return cmd_coupling_gap(args, cfm_ckpt, ot_ckpt, baseline_ckpt);
        if (tg->parsed()) return cmd_train_guidance(args, checkpoint);
    } catch (const ValidationError& e) {
        std::fprintf(stderr, "validation error: %s\n", e.what());
        return 2;
    } catch (const IoError& e) {
        std::fprintf(stderr, "io error: %s\n", e.what());
        return 4;
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    }
    return 0;
}
