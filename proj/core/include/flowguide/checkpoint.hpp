#pragma once

#include <string>

#include "flowguide/mlp.hpp"

namespace flowguide {

// Model checkpoint: one line of JSON metadata (layer_sizes, activation,
// time_embedding, schedule id, role, format version) followed by every
// parameter as little-endian 64-bit floats in layer order, weights before
// biases.
struct CheckpointMeta {
    std::string schedule_id = "linear";
    double sigma_const = 0.0;
    std::string role = "vf";  // vf | z | g | cov
    int format_version = 1;
};

void save_checkpoint(const std::string& path, const MlpModel& model,
                     const CheckpointMeta& meta);

struct LoadedCheckpoint {
    MlpModel model;
    CheckpointMeta meta;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace flowguide
