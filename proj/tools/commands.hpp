#pragma once

#include <string>

#include "config.hpp"

namespace flowguide::cli {

struct CommonArgs {
    std::string config_path;
    std::vector<std::string> overrides;
    std::string output_dir;  // overrides config.output_dir when non-empty
    std::string cache_dir;
    unsigned threads = 0;  // overrides config.threads when non-zero
};

ExperimentConfig resolve_config(const CommonArgs& args);

int cmd_train(const CommonArgs& args);
int cmd_sample(const CommonArgs& args, const std::string& checkpoint);
int cmd_guide(const CommonArgs& args, const std::string& checkpoint);
int cmd_eval_w2(const CommonArgs& args, const std::string& samples_csv,
                const std::string& reference_mode, const std::string& reference_csv);
int cmd_asymptotic_sweep(const CommonArgs& args, const std::string& checkpoint);
int cmd_oracle_check(const CommonArgs& args, const std::string& mutate);
int cmd_inverse(const CommonArgs& args);
int cmd_coupling_gap(const CommonArgs& args, const std::string& cfm_checkpoint,
                     const std::string& ot_checkpoint, const std::string& baseline_checkpoint);
int cmd_train_guidance(const CommonArgs& args, const std::string& checkpoint);

}  // namespace flowguide::cli
