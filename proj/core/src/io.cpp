#include "flowguide/io.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>

#include <nlohmann/json.hpp>

#include "flowguide/errors.hpp"

namespace flowguide {

std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::uint64_t fnv1a_hash(const std::string& data) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hash_hex(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

CsvFile::CsvFile(const std::string& path, const std::string& config_hash,
                 const std::vector<std::string>& columns)
    : path_(path), columns_(columns.size()) {
    buffer_ = "# config_hash=" + config_hash + "\n";
    for (std::size_t i = 0; i < columns.size(); ++i) {
        if (i) buffer_ += ",";
        buffer_ += columns[i];
    }
    buffer_ += "\n";
}

void CsvFile::row(const std::vector<std::string>& cells) {
    if (cells.size() != columns_)
        throw ContractError("csv row has " + std::to_string(cells.size()) +
                            " cells, expected " + std::to_string(columns_));
    for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i) buffer_ += ",";
        buffer_ += cells[i];
    }
    buffer_ += "\n";
}

void CsvFile::close() {
    if (closed_) return;
    closed_ = true;
    std::ofstream os(path_, std::ios::binary);
    if (!os) throw IoError("cannot open csv for writing: " + path_);
    os << buffer_;
    if (!os) throw IoError("failed writing csv: " + path_);
}

CsvFile::~CsvFile() {
    try {
        close();
    } catch (...) {
        // destructor must not throw; callers wanting the error call close()
    }
}

void write_svg(const std::string& path, const std::vector<SvgScatter>& scatters,
               const std::vector<SvgPolyline>& polylines, int size_px) {
    double lo_x = 1e300, hi_x = -1e300, lo_y = 1e300, hi_y = -1e300;
    auto include = [&](const Tensor* pts) {
        for (std::size_t i = 0; i < pts->shape()[0]; ++i) {
            lo_x = std::min(lo_x, pts->at(i, 0));
            hi_x = std::max(hi_x, pts->at(i, 0));
            lo_y = std::min(lo_y, pts->at(i, 1));
            hi_y = std::max(hi_y, pts->at(i, 1));
        }
    };
    for (const auto& s : scatters) include(s.points);
    for (const auto& p : polylines) include(p.points);
    if (lo_x > hi_x) {
        lo_x = lo_y = -1.0;
        hi_x = hi_y = 1.0;
    }
    const double margin = 0.05 * std::max(hi_x - lo_x, hi_y - lo_y) + 1e-9;
    lo_x -= margin;
    hi_x += margin;
    lo_y -= margin;
    hi_y += margin;
    const double span = std::max(hi_x - lo_x, hi_y - lo_y);
    const double scale = size_px / span;
    auto sx = [&](double x) { return (x - lo_x) * scale; };
    auto sy = [&](double y) { return (hi_y - y) * scale; };  // y up

    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open svg for writing: " + path);
    os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << size_px
       << "\" height=\"" << size_px << "\" viewBox=\"0 0 " << size_px << " "
       << size_px << "\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    for (const auto& p : polylines) {
        os << "<polyline fill=\"none\" stroke=\"" << p.color << "\" stroke-width=\""
           << p.width << "\" stroke-opacity=\"" << p.opacity << "\" points=\"";
        for (std::size_t i = 0; i < p.points->shape()[0]; ++i) {
            if (i) os << " ";
            os << sx(p.points->at(i, 0)) << "," << sy(p.points->at(i, 1));
        }
        os << "\"/>\n";
    }
    for (const auto& s : scatters) {
        os << "<g fill=\"" << s.color << "\" fill-opacity=\"" << s.opacity << "\">\n";
        for (std::size_t i = 0; i < s.points->shape()[0]; ++i)
            os << "<circle cx=\"" << sx(s.points->at(i, 0)) << "\" cy=\""
               << sy(s.points->at(i, 1)) << "\" r=\"" << s.radius << "\"/>\n";
        os << "</g>\n";
    }
    os << "</svg>\n";
    if (!os) throw IoError("failed writing svg: " + path);
}

void write_manifest(const std::string& path, const RunManifest& manifest) {
    nlohmann::json j;
    j["config_hash"] = manifest.config_hash;
    j["seed"] = manifest.seed;
    j["artifacts"] = manifest.artifacts;
    j["wall_seconds"] = manifest.wall_seconds;
    j["version"] = manifest.version;
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open manifest for writing: " + path);
    os << j.dump(2) << "\n";
    if (!os) throw IoError("failed writing manifest: " + path);
}

}  // namespace flowguide
