#include "attnsink/sink_geometry.hpp"

#include "attnsink/oversmoothing.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace attnsink {

SinkCheckReport sink_representable(const TokenMatrix& z, const std::vector<int>& j) {
    require_finite(z, "sink_representable");
    const Eigen::Index t = z.cols() - 1;
    if (t < 1) throw InputError("sink_representable: need at least one non-BOS token");
    if (j.empty()) throw InputError("sink_representable: J must be non-empty");
    for (int idx : j)
        if (idx < 1 || idx > t) throw InputError("sink_representable: J index " + std::to_string(idx) + " out of range");

    SinkCheckReport rep;
    std::vector<Vector> diffs, queries;
    const double scale = std::max(1.0, z.colwise().norm().maxCoeff());
    for (Eigen::Index i = 1; i <= t; ++i) {
        Vector dv = z.col(0) - z.col(i);
        if (dv.norm() <= 1e-12 * scale) rep.boundary.push_back(static_cast<int>(i));
        diffs.push_back(dv);
    }
    for (int idx : j) queries.push_back(z.col(idx));

    rep.query_halfspace = strict_half_space(queries);
    if (!rep.boundary.empty()) {
        rep.diff_halfspace.degenerate = true;
        rep.diff_halfspace.degenerate_index = rep.boundary.front() - 1;
        return rep;
    }
    rep.diff_halfspace = strict_half_space(diffs);
    if (rep.diff_halfspace.feasible && rep.query_halfspace.feasible) {
        Matrix w = *rep.query_halfspace.witness * rep.diff_halfspace.witness->transpose();
        double slack = std::numeric_limits<double>::infinity();
        for (const auto& q : queries)
            for (const auto& dv : diffs) slack = std::min(slack, q.dot(w * dv));
        rep.witness_slack = slack;
        rep.representable = slack > 0.0;
        rep.witness_w = std::move(w);
    }
    return rep;
}

double quantile(std::vector<double> v, double q) {
    if (v.empty()) throw InputError("quantile: empty sample");
    std::sort(v.begin(), v.end());
    double pos = q * static_cast<double>(v.size() - 1);
    auto lo = static_cast<size_t>(std::floor(pos));
    size_t hi = std::min(lo + 1, v.size() - 1);
    double frac = pos - static_cast<double>(lo);
    return v[lo] + frac * (v[hi] - v[lo]);
}

AlignmentStats bos_alignment_stats(const TokenMatrix& z) {
    if (z.cols() < 2) throw InputError("bos_alignment_stats: need at least one non-BOS token");
    Matrix c = pairwise_cos(z);
    AlignmentStats st;
    for (Eigen::Index i = 1; i < z.cols(); ++i) st.values.push_back(c(0, i));
    st.min = quantile(st.values, 0.0);
    st.q1 = quantile(st.values, 0.25);
    st.median = quantile(st.values, 0.5);
    st.q3 = quantile(st.values, 0.75);
    st.max = quantile(st.values, 1.0);
    return st;
}

SwitchInput make_switch_input(const std::vector<TokenMatrix>& sequences, const std::vector<AttentionMap>& maps,
                              const Matrix& w_vo) {
    if (sequences.size() != maps.size()) throw InputError("make_switch_input: one attention map per sequence required");
    SwitchInput in;
    in.sequences = sequences;
    in.w_vo = w_vo;
    for (size_t s = 0; s < sequences.size(); ++s) in.outputs.push_back(w_vo * sequences[s] * maps[s].matrix().transpose());
    return in;
}

SwitchReport switch_preconditions(const SwitchInput& in, double rel_tol) {
    if (in.sequences.empty()) throw InputError("switch_preconditions: no sequences");
    if (in.outputs.size() != in.sequences.size()) throw InputError("switch_preconditions: outputs/sequences mismatch");
    const Eigen::Index d = in.sequences.front().rows();
    require_shape(in.w_vo, d, d, "switch_preconditions W_VO");

    SwitchReport rep;
    rep.halfspace_ok = rep.fullrank_ok = rep.per_sequence_ok = true;
    std::vector<Vector> a_cols, b_cols;
    for (size_t s = 0; s < in.sequences.size(); ++s) {
        const TokenMatrix& z = in.sequences[s];
        const Matrix& o = in.outputs[s];
        if (z.rows() != d || o.rows() != d || o.cols() != z.cols()) throw InputError("switch_preconditions: shape mismatch");
        bool full = numerical_rank(z, rel_tol) == std::min(z.rows(), z.cols());
        std::vector<Vector> cols;
        for (Eigen::Index i = 0; i < z.cols(); ++i) cols.push_back(z.col(i));
        bool half = strict_half_space(cols).feasible;
        rep.fullrank_ok = rep.fullrank_ok && full;
        rep.halfspace_ok = rep.halfspace_ok && half;
        rep.per_sequence_ok = rep.per_sequence_ok && (full || half);
        for (Eigen::Index i = 1; i + 1 < z.cols(); ++i) {
            a_cols.push_back(z.col(i));
            b_cols.push_back(o.col(i));
        }
    }
    if (a_cols.empty()) throw InputError("switch_preconditions: empty a_i collection (need T >= 2)");
    Matrix a(d, static_cast<Eigen::Index>(a_cols.size())), b(d, static_cast<Eigen::Index>(b_cols.size()));
    for (size_t i = 0; i < a_cols.size(); ++i) {
        a.col(static_cast<Eigen::Index>(i)) = a_cols[i];
        b.col(static_cast<Eigen::Index>(i)) = b_cols[i];
    }
    rep.rank_a = numerical_rank(a, rel_tol);
    rep.rank_b = numerical_rank(b, rel_tol);
    rep.rank_equality_ok = rep.rank_a == rep.rank_b;
    Matrix basis = span_basis(a, rel_tol);
    rep.value_fullrank_on_span = basis.cols() == 0 || numerical_rank(in.w_vo * basis, rel_tol) == basis.cols();
    return rep;
}

double value_rank_profile(const TokenMatrix& z, const Matrix& w_v, double rel_tol) {
    if (w_v.cols() != z.rows()) throw InputError("value_rank_profile: shape mismatch");
    Matrix v = w_v * z;
    return static_cast<double>(numerical_rank(v, rel_tol)) / static_cast<double>(std::min(v.rows(), v.cols()));
}

}  // namespace attnsink
