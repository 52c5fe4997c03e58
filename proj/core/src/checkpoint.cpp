#include "flowguide/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "flowguide/errors.hpp"

namespace flowguide {

namespace {

static_assert(sizeof(double) == 8, "checkpoint format assumes 64-bit doubles");

void write_le_doubles(std::ostream& os, const std::vector<double>& values) {
    for (double v : values) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, 8);
        if constexpr (std::endian::native == std::endian::big)
            bits = __builtin_bswap64(bits);
        char buf[8];
        std::memcpy(buf, &bits, 8);
        os.write(buf, 8);
    }
}

std::vector<double> read_le_doubles(std::istream& is, std::size_t count) {
    std::vector<double> out(count);
    for (std::size_t i = 0; i < count; ++i) {
        char buf[8];
        is.read(buf, 8);
        if (!is) throw IoError("checkpoint: truncated parameter block");
        std::uint64_t bits;
        std::memcpy(&bits, buf, 8);
        if constexpr (std::endian::native == std::endian::big)
            bits = __builtin_bswap64(bits);
        std::memcpy(&out[i], &bits, 8);
    }
    return out;
}

}  // namespace

void save_checkpoint(const std::string& path, const MlpModel& model,
                     const CheckpointMeta& meta) {
    nlohmann::json header;
    header["format_version"] = meta.format_version;
    header["layer_sizes"] = model.layer_sizes;
    header["activation"] = activation_to_string(model.activation);
    header["time_embedding"] = model.time_embedding;
    header["schedule_id"] = meta.schedule_id;
    header["sigma_const"] = meta.sigma_const;
    header["role"] = meta.role;
    header["param_count"] = model.param_count();

    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open checkpoint for writing: " + path);
    os << header.dump() << "\n";
    write_le_doubles(os, model.flatten_params());
    if (!os) throw IoError("failed writing checkpoint: " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint: " + path);
    std::string line;
    if (!std::getline(is, line)) throw IoError("checkpoint missing header: " + path);

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        throw IoError("checkpoint header is not valid JSON: " + std::string(e.what()));
    }

    LoadedCheckpoint out;
    try {
        out.meta.format_version = header.at("format_version").get<int>();
        out.model.layer_sizes = header.at("layer_sizes").get<std::vector<std::size_t>>();
        out.model.activation = activation_from_string(header.at("activation").get<std::string>());
        out.model.time_embedding = header.at("time_embedding").get<std::size_t>();
        out.meta.schedule_id = header.at("schedule_id").get<std::string>();
        out.meta.sigma_const = header.value("sigma_const", 0.0);
        out.meta.role = header.value("role", "vf");
    } catch (const nlohmann::json::exception& e) {
        throw IoError("checkpoint header missing field: " + std::string(e.what()));
    }

    // rebuild tensor shapes, then fill from the binary block
    MlpModel& m = out.model;
    const std::size_t layers = m.layer_sizes.size() - 1;
    for (std::size_t l = 0; l < layers; ++l) {
        std::size_t in = m.layer_sizes[l];
        if (l == 0) in += m.time_features();
        m.weights.emplace_back(std::vector<std::size_t>{m.layer_sizes[l + 1], in});
        m.biases.emplace_back(std::vector<std::size_t>{m.layer_sizes[l + 1]});
    }
    const std::size_t expected = header.at("param_count").get<std::size_t>();
    if (expected != m.param_count())
        throw IoError("checkpoint param_count does not match architecture");
    m.load_params(read_le_doubles(is, expected));
    return out;
}

}  // namespace flowguide
