#include "attnsink/head_patterns.hpp"

#include <fstream>

namespace attnsink {

MassProfile mass_profile(const AttentionMap& a, bool exclude_bos_row) {
    const Eigen::Index n = a.size();
    const Eigen::Index first = exclude_bos_row ? 1 : 0;
    if (n - first < 1) throw InputError("mass_profile: no rows to profile");
    MassProfile p;
    double total = 0.0;
    for (Eigen::Index i = first; i < n; ++i) {
        for (Eigen::Index j = 0; j <= i; ++j) {
            double v = a(i, j);
            total += v;
            if (j == 0) p.sink_mass += v;
            else if (j == i) p.diag_mass += v;
            else if (j == i - 1) p.lower1_mass += v;
        }
    }
    p.sink_mass /= total;
    p.diag_mass /= total;
    p.lower1_mass /= total;
    p.other_mass = std::max(0.0, 1.0 - p.sink_mass - p.diag_mass - p.lower1_mass);
    return p;
}

std::string to_string(Pattern p) {
    switch (p) {
        case Pattern::Sink: return "sink";
        case Pattern::Diagonal: return "diagonal";
        case Pattern::SinkLowerDiag: return "sink_lowerdiag";
        case Pattern::Other: return "other";
    }
    return "other";
}

HeadLabel classify(const MassProfile& profile, const Thresholds& th) {
    HeadLabel out;
    out.profile = profile;
    out.thresholds = th;
    const double joint = profile.sink_mass + profile.lower1_mass;
    const bool dual = joint >= th.dual_joint && profile.lower1_mass >= th.dual_share * joint &&
                      profile.sink_mass >= th.dual_share * joint;
    if (dual) out.label = Pattern::SinkLowerDiag;
    else if (profile.sink_mass >= th.sink) out.label = Pattern::Sink;
    else if (profile.diag_mass >= th.diag) out.label = Pattern::Diagonal;
    else out.label = Pattern::Other;
    return out;
}

CensusSummary summarize(const std::vector<CensusRow>& rows) {
    CensusSummary s;
    s.rows = rows.size();
    if (rows.empty()) return s;
    for (const auto& r : rows) {
        switch (r.label.label) {
            case Pattern::Sink: s.sink += 1; break;
            case Pattern::Diagonal: s.diagonal += 1; break;
            case Pattern::SinkLowerDiag: s.dual += 1; break;
            case Pattern::Other: s.other += 1; break;
        }
    }
    const double n = static_cast<double>(rows.size());
    s.sink /= n;
    s.diagonal /= n;
    s.dual /= n;
    s.other /= n;
    return s;
}

void write_census_csv(const std::string& path, const std::vector<CensusRow>& rows, const std::string& config_hash) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open " + path);
    os << "# config_hash=" << config_hash << "\n";
    os << "layer,head,sequence,sink_mass,diag_mass,lower1_mass,other_mass,label\n";
    os.precision(10);
    for (const auto& r : rows) {
        const auto& p = r.label.profile;
        os << r.layer << "," << r.head << "," << r.sequence << "," << p.sink_mass << "," << p.diag_mass << ","
           << p.lower1_mass << "," << p.other_mass << "," << to_string(r.label.label) << "\n";
    }
}

}  // namespace attnsink
