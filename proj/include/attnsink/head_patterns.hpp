#pragma once

#include "attnsink/block.hpp"

#include <string>
#include <vector>

namespace attnsink {

struct MassProfile {
    double sink_mass = 0.0;
    double diag_mass = 0.0;
    double lower1_mass = 0.0;
    double other_mass = 0.0;
};

// Each entry is counted once: column 0 -> sink, j == i -> diag, j == i-1 -> lower1.
// With exclude_bos_row the BOS self-row is dropped and masses are averaged over rows 1..T.
MassProfile mass_profile(const AttentionMap& a, bool exclude_bos_row = true);

enum class Pattern { Sink, Diagonal, SinkLowerDiag, Other };
std::string to_string(Pattern p);

struct Thresholds {
    double sink = 0.40;
    double diag = 0.40;
    double dual_joint = 0.60;
    double dual_share = 0.10;
};

struct HeadLabel {
    Pattern label = Pattern::Other;
    MassProfile profile;
    Thresholds thresholds;
};

HeadLabel classify(const MassProfile& profile, const Thresholds& th = {});

struct CensusRow {
    int layer = 0, head = 0, sequence = 0;
    HeadLabel label;
};

struct CensusSummary {
    double sink = 0.0, diagonal = 0.0, dual = 0.0, other = 0.0;  // pooled fractions
    size_t rows = 0;
};
CensusSummary summarize(const std::vector<CensusRow>& rows);
void write_census_csv(const std::string& path, const std::vector<CensusRow>& rows, const std::string& config_hash);

}  // namespace attnsink
