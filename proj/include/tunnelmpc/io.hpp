#pragma once

#include <charconv>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "tunnelmpc/errors.hpp"
#include "tunnelmpc/sim.hpp"

namespace tunnelmpc {

/// 17 significant digits: enough for exact double round trips, independent
/// of locale.
inline std::string format_double(double v) {
    char buf[40];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v,
                                   std::chars_format::general, 17);
    return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& s) {
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{}) {
        throw std::runtime_error("parse_double: bad number '" + s + "'");
    }
    return v;
}

inline constexpr const char* kRecordsCsvHeader =
    "time,px,py,pz,vx,vy,vz,roll,pitch,yaw,ux,uy,uz,uyaw,refx,refy,refz,"
    "h_min,d_floor,d_ceiling,d_left,d_right,dist_fx,dist_fy,dist_fz,solver_status";

inline void write_records_csv(std::ostream& os, const std::vector<StepRecord>& records) {
    os << kRecordsCsvHeader << "\n";
    for (const StepRecord& r : records) {
        const Vec4 u = r.input.as_vec4();
        os << format_double(r.time);
        for (int i = 0; i < 3; ++i) os << ',' << format_double(r.plant.position(i));
        for (int i = 0; i < 3; ++i) os << ',' << format_double(r.plant.velocity(i));
        for (int i = 0; i < 3; ++i) os << ',' << format_double(r.plant.attitude(i));
        for (int i = 0; i < 4; ++i) os << ',' << format_double(u(i));
        for (int i = 0; i < 3; ++i) os << ',' << format_double(r.reference_position(i));
        os << ',' << format_double(r.h_min());
        for (int i = 0; i < 4; ++i) os << ',' << format_double(r.wall_distances(i));
        for (int i = 0; i < 3; ++i) os << ',' << format_double(r.disturbance.force(i));
        os << ',' << to_string(r.solver_status) << "\n";
    }
}

inline void write_records_csv(const std::string& path,
                              const std::vector<StepRecord>& records) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    write_records_csv(os, records);
}

/// Parse a records CSV produced by write_records_csv. Body rates and the
/// disturbance torque are not serialized; everything the metrics need is.
inline std::vector<StepRecord> read_records_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open for reading: " + path);
    std::string line;
    if (!std::getline(is, line) || line != kRecordsCsvHeader) {
        throw std::runtime_error("records CSV: unexpected header in " + path);
    }
    std::vector<StepRecord> out;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) f.push_back(cell);
        if (f.size() != 26) {
            throw std::runtime_error("records CSV: bad field count");
        }
        StepRecord r;
        int i = 0;
        r.time = parse_double(f[i++]);
        for (int k = 0; k < 3; ++k) r.plant.position(k) = parse_double(f[i++]);
        for (int k = 0; k < 3; ++k) r.plant.velocity(k) = parse_double(f[i++]);
        for (int k = 0; k < 3; ++k) r.plant.attitude(k) = parse_double(f[i++]);
        Vec4 u;
        for (int k = 0; k < 4; ++k) u(k) = parse_double(f[i++]);
        r.input.accel = u.head<3>();
        r.input.yaw_accel = u(3);
        for (int k = 0; k < 3; ++k) r.reference_position(k) = parse_double(f[i++]);
        r.h_values = {parse_double(f[i++])};
        for (int k = 0; k < 4; ++k) r.wall_distances(k) = parse_double(f[i++]);
        for (int k = 0; k < 3; ++k) r.disturbance.force(k) = parse_double(f[i++]);
        r.solver_status = parse_step_status(f[i++]);
        out.push_back(r);
    }
    return out;
}

inline nlohmann::json metrics_to_json(const RunMetrics& m, std::uint64_t config_hash,
                                      std::uint64_t seed) {
    nlohmann::json j;
    j["T_e"] = m.tracking_rms;
    j["c_e"] = m.control_effort;
    j["c_s"] = m.control_smoothness;
    j["min_wall_distance"] = {m.min_wall_distance(0), m.min_wall_distance(1),
                              m.min_wall_distance(2), m.min_wall_distance(3)};
    j["boundary_violations"] = m.boundary_violations;
    j["collided"] = m.collided;
    j["steps"] = m.steps;
    char hex[24];
    std::snprintf(hex, sizeof(hex), "%016llx",
                  static_cast<unsigned long long>(config_hash));
    j["config_hash"] = hex;
    j["seed"] = seed;
    return j;
}

/// Serialize numbers at full precision (nlohmann prints shortest-round-trip
/// doubles, which also round-trips exactly).
inline void write_json(const std::string& path, const nlohmann::json& j) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    os << j.dump(2) << "\n";
}

}  // namespace tunnelmpc
