#pragma once

#include "attnsink/block.hpp"

#include <optional>
#include <vector>

namespace attnsink {

struct SinkCheckReport {
    bool representable = false;
    FeasibilityResult diff_halfspace;   // over z0 - z_i, i = 1..T
    FeasibilityResult query_halfspace;  // over z_j, j in J
    std::optional<Matrix> witness_w;    // u v'
    double witness_slack = 0.0;         // min_{i,j} z_j' W (z0 - z_i)
    std::vector<int> boundary;          // i with z0 == z_i
};

// J holds 1-based token indices (column 0 is BOS).
SinkCheckReport sink_representable(const TokenMatrix& z, const std::vector<int>& j);

struct AlignmentStats {
    double min = 0.0, q1 = 0.0, median = 0.0, q3 = 0.0, max = 0.0;
    std::vector<double> values;
};
AlignmentStats bos_alignment_stats(const TokenMatrix& z);

// Linear-interpolation quantile of a sample (numpy default convention).
double quantile(std::vector<double> v, double q);

struct SwitchInput {
    std::vector<TokenMatrix> sequences;  // inputs to the head, column 0 is BOS
    std::vector<Matrix> outputs;         // attention-layer outputs, same shapes
    Matrix w_vo;
};

struct SwitchReport {
    bool halfspace_ok = false;           // every sequence lies in a strict half-space
    bool fullrank_ok = false;            // every sequence has full column rank
    bool per_sequence_ok = false;        // each sequence satisfies one of the two
    bool rank_equality_ok = false;       // rank{a_i} == rank{b_i}
    bool value_fullrank_on_span = false; // W_VO injective on span{a_i}
    int rank_a = 0, rank_b = 0;
};

SwitchReport switch_preconditions(const SwitchInput& in, double rel_tol = 1e-3);
// Outputs computed as W_VO Z A' for each sequence.
SwitchInput make_switch_input(const std::vector<TokenMatrix>& sequences, const std::vector<AttentionMap>& maps,
                              const Matrix& w_vo);

double value_rank_profile(const TokenMatrix& z, const Matrix& w_v, double rel_tol = 1e-3);

}  // namespace attnsink
