#pragma once

// Field files: a JSON metadata document plus a raw value file next to it.
// Values are little-endian float64 (fields) or uint8 0/1 (masks), row-major.

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>

#include <json.hpp>

#include "obshom/grid.hpp"

namespace obshom::io {

namespace fs = std::filesystem;
using nlohmann::json;

/// Write `content` to `path` through a temporary file and rename.
inline void write_atomic(const fs::path& path, const std::string& content) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::random_device rd;
    fs::path tmp = path;
    tmp += ".tmp" + std::to_string(rd());
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw Error(ErrorKind::io, "cannot open " + tmp.string());
        os.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!os) throw Error(ErrorKind::io, "write failed for " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp);
        throw Error(ErrorKind::io, "rename to " + path.string() + " failed: " + ec.message());
    }
}

inline std::string read_file(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error(ErrorKind::io, "cannot open " + path.string());
    return std::string(std::istreambuf_iterator<char>(is), {});
}

inline json grid_to_json(const Grid& g) {
    json j;
    j["dim"] = g.dim();
    json shape = json::array(), origin = json::array();
    for (int d = 0; d < g.dim(); ++d) {
        shape.push_back(g.extent(d));
        origin.push_back(g.origin()[d]);
    }
    j["shape"] = shape;
    j["spacing"] = g.spacing();
    j["origin"] = origin;
    j["topology"] = to_string(g.topology());
    return j;
}

inline Grid grid_from_json(const json& j) {
    try {
        int dim = j.at("dim").get<int>();
        if (dim < 1 || dim > max_dim) throw Error(ErrorKind::io, "bad dim in field metadata");
        Index ext{1, 1, 1};
        Coord origin{};
        const auto& shape = j.at("shape");
        const auto& org = j.at("origin");
        if (shape.size() != static_cast<std::size_t>(dim) || org.size() != static_cast<std::size_t>(dim))
            throw Error(ErrorKind::io, "shape/origin length must equal dim");
        for (int d = 0; d < dim; ++d) {
            ext[d] = shape[d].get<std::size_t>();
            origin[d] = org[d].get<double>();
        }
        std::string topo = j.at("topology").get<std::string>();
        if (topo != "box" && topo != "torus") throw Error(ErrorKind::io, "unknown topology " + topo);
        return Grid(dim, ext, j.at("spacing").get<double>(), origin,
                    topo == "box" ? Topology::box : Topology::torus);
    } catch (const json::exception& e) {
        throw Error(ErrorKind::io, std::string("malformed field metadata: ") + e.what());
    }
}

namespace detail {

inline fs::path values_path_for(const fs::path& meta) {
    fs::path v = meta;
    v.replace_extension(".bin");
    return v;
}

inline std::string encode_f64(const std::vector<double>& values) {
    std::string out(values.size() * 8, '\0');
    for (std::size_t i = 0; i < values.size(); ++i) {
        auto bits = std::bit_cast<std::uint64_t>(values[i]);
        for (int b = 0; b < 8; ++b) out[i * 8 + b] = static_cast<char>((bits >> (8 * b)) & 0xffu);
    }
    return out;
}

inline std::vector<double> decode_f64(const std::string& raw) {
    std::vector<double> v(raw.size() / 8);
    for (std::size_t i = 0; i < v.size(); ++i) {
        std::uint64_t bits = 0;
        for (int b = 0; b < 8; ++b)
            bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(raw[i * 8 + b])) << (8 * b);
        v[i] = std::bit_cast<double>(bits);
    }
    return v;
}

inline std::pair<Grid, std::string> read_payload(const fs::path& meta_path, const char* kind) {
    json meta;
    try {
        meta = json::parse(read_file(meta_path));
    } catch (const json::exception& e) {
        throw Error(ErrorKind::io, meta_path.string() + ": " + e.what());
    }
    if (meta.value("kind", std::string(kind)) != kind)
        throw Error(ErrorKind::io, meta_path.string() + " is not a " + kind + " file");
    Grid g = grid_from_json(meta);
    fs::path values = meta_path.parent_path() / meta.at("values_file").get<std::string>();
    return {g, read_file(values)};
}

} // namespace detail

inline void write_field(const fs::path& meta_path, const ScalarField& f) {
    fs::path values = detail::values_path_for(meta_path);
    json meta = grid_to_json(f.grid);
    meta["kind"] = "field";
    meta["dtype"] = "float64-le";
    meta["values_file"] = values.filename().string();
    write_atomic(values, detail::encode_f64(f.values));
    write_atomic(meta_path, meta.dump(2) + "\n");
}

inline ScalarField read_field(const fs::path& meta_path) {
    auto [g, raw] = detail::read_payload(meta_path, "field");
    if (raw.size() != g.size() * 8) throw Error(ErrorKind::io, "value file length mismatch for " + meta_path.string());
    ScalarField f(g, detail::decode_f64(raw));
    if (!f.finite()) throw Error(ErrorKind::io, "non-finite values in " + meta_path.string());
    return f;
}

inline void write_mask(const fs::path& meta_path, const CellMask& m) {
    fs::path values = detail::values_path_for(meta_path);
    json meta = grid_to_json(m.grid);
    meta["kind"] = "mask";
    meta["dtype"] = "uint8";
    meta["values_file"] = values.filename().string();
    write_atomic(values, std::string(m.flags.begin(), m.flags.end()));
    write_atomic(meta_path, meta.dump(2) + "\n");
}

inline CellMask read_mask(const fs::path& meta_path) {
    auto [g, raw] = detail::read_payload(meta_path, "mask");
    if (raw.size() != g.size()) throw Error(ErrorKind::io, "value file length mismatch for " + meta_path.string());
    CellMask m(g);
    for (std::size_t i = 0; i < raw.size(); ++i) {
        auto b = static_cast<unsigned char>(raw[i]);
        if (b > 1) throw Error(ErrorKind::io, "mask values must be 0 or 1");
        m.flags[i] = b;
    }
    return m;
}

} // namespace obshom::io
