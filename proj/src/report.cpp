#include "attnsink/report.hpp"

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace attnsink {

std::string config_hash(const std::string& text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << h;
    return os.str();
}

std::string resolve_output_dir(const std::string& fallback) {
    const char* env = std::getenv("ATTNSINK_OUTPUT_DIR");
    std::string dir = (env && *env) ? std::string(env) : fallback;
    std::filesystem::create_directories(dir);
    return dir;
}

namespace {

nlohmann::json num(double v) {
    if (std::isfinite(v)) return v;
    if (std::isnan(v)) return nullptr;
    return v > 0 ? "inf" : "-inf";
}

}  // namespace

nlohmann::json to_json(const CostReport& c) {
    return {{"qk_nuclear", num(c.qk_nuclear)}, {"vo_nuclear", num(c.vo_nuclear)}, {"mlp_frobsq", num(c.mlp_frobsq)},
            {"raw_frobsq", num(c.raw_frobsq)}, {"total", num(c.total)}, {"convention", to_string(c.convention)}};
}

nlohmann::json to_json(const BoundSet& b) {
    return {{"U_sink", num(b.u_sink)},   {"L_diag", num(b.l_diag)},   {"U_diag", num(b.u_diag)},
            {"L_sink", num(b.l_sink)},   {"eq3_lhs", num(b.eq3_lhs)}, {"eq3_rhs", num(b.eq3_rhs)},
            {"eq4_lhs", num(b.eq4_lhs)}, {"eq4_rhs", num(b.eq4_rhs)}, {"eq4_holds", b.eq4_holds}};
}

nlohmann::json to_json(const Thm2Bounds& b) {
    return {{"lhs", num(b.lhs)}, {"rhs", num(b.rhs)}, {"c1", num(b.c1)}, {"sink_cheaper", b.sink_cheaper}};
}

void write_json(const std::string& path, const nlohmann::json& j) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open " + path);
    os << j.dump(2) << "\n";
}

}  // namespace attnsink
