#pragma once

// On-disk formats: affine transforms as commented 3x3 text matrices, dense
// displacement fields in a small binary container (bit-exact round trips),
// landmark CSVs, and the flat key=value pipeline configuration with a strict
// schema (unknown keys are errors, absent keys take documented defaults).

#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "mmreg/core.hpp"

namespace mmreg {

namespace detail {

inline std::string read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file_bytes(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write file: " + path);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("write failed: " + path);
}

inline std::string trim(const std::string& s) {
    size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

inline void append_u32le(std::string& out, uint32_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 24) & 0xff));
}

inline uint32_t read_u32le(const unsigned char* p) {
    return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
           (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

inline void append_f32le(std::string& out, float f) {
    uint32_t bits;
    std::memcpy(&bits, &f, sizeof bits);
    append_u32le(out, bits);
}

inline float read_f32le(const unsigned char* p) {
    const uint32_t bits = read_u32le(p);
    float f;
    std::memcpy(&f, &bits, sizeof f);
    return f;
}

}  // namespace detail

// --------------------------------------------------------------------------
// Affine transform: nine numbers, row-major homogeneous 3x3, comment header.

inline void save_affine(const AffineTransform2D& t, const std::string& path) {
    char buf[512];
    std::snprintf(buf, sizeof buf,
                  "# 3x3 homogeneous affine, row-major. Maps target pixel coordinates\n"
                  "# (origin at the center of the top-left pixel, x right, y down)\n"
                  "# into the source frame (pull semantics).\n"
                  "%.17g %.17g %.17g\n%.17g %.17g %.17g\n0 0 1\n",
                  t.a11, t.a12, t.t1, t.a21, t.a22, t.t2);
    detail::write_file_bytes(path, buf);
}

inline AffineTransform2D load_affine(const std::string& path) {
    const std::string text = detail::read_file_bytes(path);
    std::istringstream in(text);
    std::string line;
    std::vector<double> nums;
    while (std::getline(in, line)) {
        line = detail::trim(line);
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        double v;
        while (ls >> v) nums.push_back(v);
    }
    if (nums.size() != 9)
        throw Error("affine file " + path + ": expected 9 numbers, found " +
                    std::to_string(nums.size()));
    if (nums[6] != 0.0 || nums[7] != 0.0 || nums[8] != 1.0)
        throw Error("affine file " + path + ": last row must be 0 0 1");
    AffineTransform2D t{nums[0], nums[1], nums[2], nums[3], nums[4], nums[5]};
    t.validate();
    return t;
}

// --------------------------------------------------------------------------
// Displacement field: magic MMDF, version 1, u32le dims, interleaved f32le.

inline void save_displacement_field(const DisplacementField& u, const std::string& path) {
    u.validate();
    std::string out;
    out.reserve(9 + u.dx.size() * 8);
    out += "MMDF";
    out.push_back(1);
    detail::append_u32le(out, static_cast<uint32_t>(u.width));
    detail::append_u32le(out, static_cast<uint32_t>(u.height));
    for (size_t i = 0; i < u.dx.size(); ++i) {
        detail::append_f32le(out, u.dx[i]);
        detail::append_f32le(out, u.dy[i]);
    }
    detail::write_file_bytes(path, out);
}

inline DisplacementField load_displacement_field(const std::string& path) {
    const std::string bytes = detail::read_file_bytes(path);
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    if (bytes.size() < 13 || std::memcmp(p, "MMDF", 4) != 0)
        throw Error("field file " + path + ": bad magic");
    if (p[4] != 1)
        throw Error("field file " + path + ": unsupported version " + std::to_string(p[4]));
    const uint32_t w = detail::read_u32le(p + 5);
    const uint32_t h = detail::read_u32le(p + 9);
    if (w == 0 || h == 0) throw Error("field file " + path + ": empty field");
    const size_t expected = 13 + static_cast<size_t>(w) * h * 8;
    if (bytes.size() != expected)
        throw Error("field file " + path + ": expected " + std::to_string(expected) +
                    " bytes, found " + std::to_string(bytes.size()));
    DisplacementField u = DisplacementField::zeros(static_cast<int>(w), static_cast<int>(h));
    const unsigned char* q = p + 13;
    for (size_t i = 0; i < u.dx.size(); ++i) {
        u.dx[i] = detail::read_f32le(q);
        u.dy[i] = detail::read_f32le(q + 4);
        q += 8;
    }
    u.validate();
    return u;
}

// --------------------------------------------------------------------------
// Landmarks: CSV with header "x,y", one pair per line, LF endings.

inline void save_landmarks(const LandmarkSet& set, const std::string& path) {
    std::string out = "x,y\n";
    char buf[80];
    for (const Point& p : set.points) {
        std::snprintf(buf, sizeof buf, "%.6f,%.6f\n", p.x, p.y);
        out += buf;
    }
    detail::write_file_bytes(path, out);
}

inline LandmarkSet load_landmarks(const std::string& path) {
    const std::string text = detail::read_file_bytes(path);
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    LandmarkSet set;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line_no == 1) {
            if (detail::trim(line) != "x,y")
                throw Error("landmarks file " + path + ": missing x,y header");
            continue;
        }
        if (detail::trim(line).empty()) continue;
        const size_t comma = line.find(',');
        size_t extent_x = 0, extent_y = 0;
        double x = 0.0, y = 0.0;
        bool ok = comma != std::string::npos;
        if (ok) {
            const std::string xs = detail::trim(line.substr(0, comma));
            const std::string ys = detail::trim(line.substr(comma + 1));
            try {
                x = std::stod(xs, &extent_x);
                y = std::stod(ys, &extent_y);
                ok = extent_x == xs.size() && extent_y == ys.size();
            } catch (const std::exception&) {
                ok = false;
            }
        }
        if (!ok)
            throw Error("landmarks file " + path + ": malformed row at line " +
                        std::to_string(line_no));
        set.points.push_back({x, y});
        set.valid.push_back(1);
    }
    return set;
}

// --------------------------------------------------------------------------
// Pipeline configuration.

struct PipelineConfig {
    RegistrationConfig reg;
    std::string direction = "he_to_shg";  // shg_to_he swaps the input roles
    bool deformable_enabled = true;
    int deformable_resolution = 1024;  // max dimension of the deformable working frame
    std::string matcher_spec = "builtin";  // "builtin" or an external command line
    std::string output_dir;
};

namespace detail {

inline std::vector<std::string> split_list(const std::string& value) {
    std::vector<std::string> items;
    std::string item;
    std::istringstream in(value);
    while (std::getline(in, item, ',')) items.push_back(trim(item));
    return items;
}

inline double parse_number(const std::string& key, const std::string& value) {
    size_t extent = 0;
    double v = 0.0;
    try {
        v = std::stod(value, &extent);
    } catch (const std::exception&) {
        extent = 0;
    }
    if (extent != value.size() || value.empty())
        throw Error("config key '" + key + "': not a number: '" + value + "'");
    return v;
}

inline long long parse_integer(const std::string& key, const std::string& value) {
    const double v = parse_number(key, value);
    if (v != std::floor(v))
        throw Error("config key '" + key + "': expected an integer, got '" + value + "'");
    return static_cast<long long>(v);
}

inline std::vector<double> parse_number_list(const std::string& key, const std::string& value) {
    std::vector<double> out;
    for (const std::string& item : split_list(value)) out.push_back(parse_number(key, item));
    if (out.empty()) throw Error("config key '" + key + "': empty list");
    return out;
}

}  // namespace detail

// Parse the flat key = value config text. Unknown keys are errors; absent
// keys keep the built-in defaults. The six level_* lists must agree in
// length and jointly define the deformable pyramid.
inline PipelineConfig parse_pipeline_config(const std::string& text) {
    PipelineConfig cfg;
    std::vector<std::string> seen;
    std::vector<double> thetas, step_sizes;
    std::vector<long long> iterations, bins, windows, strides;

    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw Error("config line " + std::to_string(line_no) + ": expected key = value");
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string value = detail::trim(line.substr(eq + 1));
        if (key.empty())
            throw Error("config line " + std::to_string(line_no) + ": empty key");
        for (const std::string& s : seen)
            if (s == key) throw Error("config: duplicate key '" + key + "'");
        seen.push_back(key);

        if (key == "angles") {
            cfg.reg.angles = detail::parse_number_list(key, value);
        } else if (key == "resolutions") {
            cfg.reg.resolutions.clear();
            for (double v : detail::parse_number_list(key, value))
                cfg.reg.resolutions.push_back(static_cast<int>(v));
        } else if (key == "scale_tolerance") {
            cfg.reg.scale_tolerance = detail::parse_number(key, value);
        } else if (key == "seed") {
            cfg.reg.deterministic_seed =
                static_cast<uint64_t>(detail::parse_integer(key, value));
        } else if (key == "direction") {
            if (value != "he_to_shg" && value != "shg_to_he")
                throw Error("config key 'direction': expected he_to_shg or shg_to_he");
            cfg.direction = value;
        } else if (key == "deformable") {
            if (value != "on" && value != "off")
                throw Error("config key 'deformable': expected on or off");
            cfg.deformable_enabled = value == "on";
        } else if (key == "deformable_resolution") {
            cfg.deformable_resolution = static_cast<int>(detail::parse_integer(key, value));
            if (cfg.deformable_resolution < 32)
                throw Error("config key 'deformable_resolution': must be >= 32");
        } else if (key == "matcher") {
            if (value == "builtin") {
                cfg.matcher_spec = "builtin";
            } else if (value.rfind("external", 0) == 0) {
                const std::string cmd = detail::trim(value.substr(8));
                if (cmd.empty()) throw Error("config key 'matcher': external needs a command");
                cfg.matcher_spec = cmd;
            } else {
                throw Error("config key 'matcher': expected builtin or external <command>");
            }
        } else if (key == "matcher_timeout") {
            cfg.reg.features.matcher_timeout_s = detail::parse_number(key, value);
        } else if (key == "output_dir") {
            cfg.output_dir = value;
        } else if (key == "max_keypoints") {
            cfg.reg.features.max_keypoints = static_cast<int>(detail::parse_integer(key, value));
        } else if (key == "match_ratio") {
            cfg.reg.features.match_ratio = detail::parse_number(key, value);
        } else if (key == "ransac_threshold") {
            cfg.reg.features.ransac_threshold = detail::parse_number(key, value);
        } else if (key == "ransac_iterations") {
            cfg.reg.features.ransac_iterations =
                static_cast<int>(detail::parse_integer(key, value));
        } else if (key == "level_thetas") {
            thetas = detail::parse_number_list(key, value);
        } else if (key == "level_iterations") {
            for (double v : detail::parse_number_list(key, value))
                iterations.push_back(static_cast<long long>(v));
        } else if (key == "level_step_sizes") {
            step_sizes = detail::parse_number_list(key, value);
        } else if (key == "level_mi_bins") {
            for (double v : detail::parse_number_list(key, value))
                bins.push_back(static_cast<long long>(v));
        } else if (key == "level_mi_windows") {
            for (double v : detail::parse_number_list(key, value))
                windows.push_back(static_cast<long long>(v));
        } else if (key == "level_mi_strides") {
            for (double v : detail::parse_number_list(key, value))
                strides.push_back(static_cast<long long>(v));
        } else {
            throw Error("config: unknown key '" + key + "'");
        }
    }

    // assemble the level pyramid from whichever lists were given
    size_t n_levels = cfg.reg.levels.size();
    bool any = false;
    auto reconcile = [&](size_t len, const char* key) {
        if (len == 0) return;
        if (any && len != n_levels)
            throw Error(std::string("config: level_* lists disagree in length at '") + key +
                        "'");
        n_levels = len;
        any = true;
    };
    reconcile(thetas.size(), "level_thetas");
    reconcile(iterations.size(), "level_iterations");
    reconcile(step_sizes.size(), "level_step_sizes");
    reconcile(bins.size(), "level_mi_bins");
    reconcile(windows.size(), "level_mi_windows");
    reconcile(strides.size(), "level_mi_strides");
    if (any) {
        cfg.reg.levels.assign(n_levels, LevelSettings{});
        for (size_t i = 0; i < n_levels; ++i) {
            if (!thetas.empty()) cfg.reg.levels[i].theta = thetas[i];
            if (!iterations.empty()) cfg.reg.levels[i].iterations = static_cast<int>(iterations[i]);
            if (!step_sizes.empty()) cfg.reg.levels[i].step_size = step_sizes[i];
            if (!bins.empty()) cfg.reg.levels[i].mi_bins = static_cast<int>(bins[i]);
            if (!windows.empty()) cfg.reg.levels[i].mi_window = static_cast<int>(windows[i]);
            if (!strides.empty()) cfg.reg.levels[i].mi_stride = static_cast<int>(strides[i]);
        }
    }
    cfg.reg.validate();
    return cfg;
}

inline PipelineConfig load_pipeline_config(const std::string& path) {
    try {
        return parse_pipeline_config(detail::read_file_bytes(path));
    } catch (const Error& e) {
        throw Error(path + ": " + e.what());
    }
}

}  // namespace mmreg
