#pragma once

#include "attnsink/block.hpp"
#include "attnsink/tasks.hpp"

#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace attnsink {

// Variational: 2 ||W_QK||_* + 2 ||W_VO||_* + MLP (what ||W_Q||^2 + ||W_K||^2 + ... equals
// at a balanced factorization). ProductNuclear: each product counted once.
enum class CostConvention { Variational, ProductNuclear };
std::string to_string(CostConvention c);

struct CostReport {
    double qk_nuclear = 0.0;
    double vo_nuclear = 0.0;
    double mlp_frobsq = 0.0;
    double raw_frobsq = 0.0;  // ||W_Q||^2 + ||W_K||^2 + ||W_V||^2 + ||W_O||^2 + MLP
    double total = 0.0;
    CostConvention convention = CostConvention::Variational;
};

CostReport block_cost(const BlockWeights& w, CostConvention convention = CostConvention::Variational);

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct BoundSet {
    double u_sink = kNaN, l_diag = kNaN, u_diag = kNaN, l_sink = kNaN;
    double eq3_lhs = kNaN, eq3_rhs = kNaN;
    double eq4_lhs = kNaN, eq4_rhs = kNaN;
    bool eq4_holds = false;
};

struct Thm2Bounds {
    double lhs = 0.0, rhs = 0.0, c1 = 0.0;
    bool sink_cheaper = false;
};

// c1 <= 0 selects the smallest admissible value d / (T + |C| + |D| + 2).
Thm2Bounds thm2_bounds(const BackcopySpec& spec, double c1 = 0.0);

// Exact sink solution of the backcopy task. QK and VO products are split by a balanced
// factorization; W1, W2 are rescaled by a positive factor to balance their norms.
BlockWeights backcopy_sink_weights(const BackcopySpec& spec);
// Score matrix in query-left form: s(q,k) = q' W_QK k / sqrt(d).
Matrix backcopy_sink_qk(const BackcopySpec& spec);

struct GenericBasis {
    Matrix u;       // d x (1+2C) normalized special vectors
    Matrix pi;      // (U'U)^{-1} U'
    Matrix p_eta;   // projector on span{eta}
    Matrix t_base;  // P_eta + U D_cent Pi
};
GenericBasis generic_basis(const GenericSpec& spec);

BlockWeights generic_sink_weights(const GenericSpec& spec);
BlockWeights generic_diag_weights(const GenericSpec& spec, const TaskGeometry& geometry);

BoundSet thmE2_bounds(const GenericSpec& spec, const TaskGeometry& geometry);

enum class TaskKind { Backcopy, Generic };
enum class TargetPattern { Sink, Diagonal };

// Per-row sets of keys the pattern should attend to (identical earlier tokens included).
std::vector<std::vector<int>> pattern_targets(const LabeledSequence& seq, TaskKind task, TargetPattern pattern);

struct VerifyOptions {
    TaskKind task = TaskKind::Backcopy;
    TargetPattern pattern = TargetPattern::Sink;
    double eps_tol = 0.0;                  // relaxed-label half width (generic)
    std::optional<double> cost_upper;      // bound to compare block_cost against
    CostConvention convention = CostConvention::Variational;
};

struct VerifyReport {
    double max_output_err = 0.0;
    double min_attention_margin = std::numeric_limits<double>::infinity();
    bool bounds_respected = true;
    int unresolved_rows = 0;
    CostReport cost;
};

VerifyReport verify_construction(const BlockWeights& w, const std::vector<LabeledSequence>& data, AttentionMode mode,
                                 const VerifyOptions& opts);

// R_mu = ||c + mu/2|| / sqrt(d) for every copy-paste position with a same-group predecessor.
std::vector<double> copy_paste_r_mu(const std::vector<LabeledSequence>& data);

}  // namespace attnsink
