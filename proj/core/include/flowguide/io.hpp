#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "flowguide/tensor.hpp"

namespace flowguide {

// Round-trip formatting: doubles written with enough digits to reparse
// bit-identically, so rerunning a command reproduces CSV payloads exactly.
std::string format_double(double v);

std::uint64_t fnv1a_hash(const std::string& data);
std::string hash_hex(std::uint64_t h);

// CSV with a `# config_hash=` comment line followed by a header row.
class CsvFile {
public:
    CsvFile(const std::string& path, const std::string& config_hash,
            const std::vector<std::string>& columns);
    ~CsvFile();

    void row(const std::vector<std::string>& cells);
    void close();

private:
    std::string path_;
    std::string buffer_;
    std::size_t columns_;
    bool closed_ = false;
};

// Minimal SVG emission: scatter circles and polylines, auto view box.
struct SvgScatter {
    const Tensor* points;  // (n x 2)
    std::string color;
    double radius = 2.0;
    double opacity = 0.8;
};

struct SvgPolyline {
    const Tensor* points;  // (n x 2)
    std::string color;
    double width = 0.6;
    double opacity = 0.5;
};

void write_svg(const std::string& path, const std::vector<SvgScatter>& scatters,
               const std::vector<SvgPolyline>& polylines, int size_px = 640);

struct RunManifest {
    std::string config_hash;
    std::uint64_t seed = 0;
    std::vector<std::string> artifacts;
    double wall_seconds = 0.0;
    std::string version;
};

void write_manifest(const std::string& path, const RunManifest& manifest);

}  // namespace flowguide
