#include "attnsink/constructions.hpp"

#include <algorithm>
#include <cmath>

namespace attnsink {

std::string to_string(CostConvention c) {
    return c == CostConvention::Variational ? "variational" : "product_nuclear";
}

CostReport block_cost(const BlockWeights& w, CostConvention convention) {
    w.validate();
    CostReport r;
    r.convention = convention;
    r.qk_nuclear = nuclear_norm(w.wk.transpose() * w.wq);
    r.vo_nuclear = nuclear_norm(w.w_vo());
    r.mlp_frobsq = w.w1.squaredNorm() + w.w2.squaredNorm();
    r.raw_frobsq = w.wq.squaredNorm() + w.wk.squaredNorm() + w.wv.squaredNorm() + w.wo.squaredNorm() + r.mlp_frobsq;
    const double k = convention == CostConvention::Variational ? 2.0 : 1.0;
    r.total = k * (r.qk_nuclear + r.vo_nuclear) + r.mlp_frobsq;
    return r;
}

namespace {

void set_qk(BlockWeights& w, const Matrix& w_qk) {
    Factorization f = balanced_factor(w_qk);  // W_QK = L R = Wq' Wk
    w.wq = f.left.transpose();
    w.wk = f.right;
}

void set_vo(BlockWeights& w, const Matrix& w_vo) {
    Factorization f = balanced_factor(w_vo);
    w.wo = f.left;
    w.wv = f.right;
}

double dist_to_interval(double x, double lo, double hi) {
    if (x < lo) return lo - x;
    if (x > hi) return x - hi;
    return 0.0;
}

}  // namespace

Thm2Bounds thm2_bounds(const BackcopySpec& spec, double c1) {
    const double t = spec.T, nd = spec.n_dormant, nc = spec.n_copy, d = spec.d;
    const double c1_min = d / (t + nc + nd + 2.0);
    if (c1 <= 0.0) c1 = c1_min;
    if (c1 < c1_min * (1.0 - 1e-12)) throw InputError("thm2_bounds: c1 must be at least d/(T+|C|+|D|+2)");
    Thm2Bounds b;
    b.c1 = c1;
    b.lhs = (2.0 * spec.kappa / std::sqrt(d)) * (std::sqrt(2.0 * nd) + t - 1.0) + 3.0 * t + 3.0 * nd + nc +
            4.0 * c1 * (t + nc + nd + 2.0) * nc - 2.0;
    b.rhs = spec.kappa / std::sqrt(3.0 * d) * std::sqrt(std::min(nc, nd)) * std::pow(t, 1.5);
    b.sink_cheaper = b.lhs < b.rhs;
    return b;
}

Matrix backcopy_sink_qk(const BackcopySpec& spec) {
    spec.validate();
    const int d = spec.d;
    Vector dorm = Vector::Zero(d);
    for (int k = 1; k <= spec.n_dormant; ++k) dorm += spec.h.col(k);
    // key-left form M with s = k' M q / sqrt(d)
    Matrix m = (spec.h.col(0) + spec.p.col(0)) * dorm.transpose();
    for (int t = 1; t < spec.T; ++t) m += spec.p.col(t) * spec.p.col(t + 1).transpose();
    m *= 2.0 * spec.kappa / std::sqrt(static_cast<double>(d));
    return m.transpose();
}

BlockWeights backcopy_sink_weights(const BackcopySpec& spec) {
    spec.validate();
    const int d = spec.d;
    BlockWeights w = BlockWeights::zeros(d);
    set_qk(w, backcopy_sink_qk(spec));
    Matrix vo = Matrix::Identity(d, d) - spec.h.col(0) * spec.h.col(0).transpose() - spec.p.col(0) * spec.p.col(0).transpose();
    set_vo(w, vo);

    Matrix keep = Matrix::Zero(d, d);
    for (int k = 1; k <= spec.n_dormant; ++k) keep += spec.h.col(k) * spec.h.col(k).transpose();
    for (int t = 1; t <= spec.T; ++t) keep += spec.p.col(t) * spec.p.col(t).transpose();
    Vector copy_sum = Vector::Zero(d);
    for (int k = spec.n_dormant + 1; k <= spec.n_dormant + spec.n_copy; ++k) copy_sum += spec.h.col(k);
    Matrix w1 = keep - 2.0 * Vector::Ones(d) * copy_sum.transpose();
    Matrix w2 = keep;
    const double n1 = w1.norm(), n2 = w2.norm();
    const double alpha = (n1 > 0.0 && n2 > 0.0) ? std::sqrt(n2 / n1) : 1.0;
    w.w1 = alpha * w1;
    w.w2 = w2 / alpha;
    return w;
}

GenericBasis generic_basis(const GenericSpec& spec) {
    const int c = spec.C();
    const double sd = std::sqrt(static_cast<double>(spec.d()));
    GenericBasis b;
    b.u = spec.special / sd;
    Matrix g = b.u.transpose() * b.u;
    Eigen::LDLT<Matrix> ldlt(g);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive() || min_eigenvalue_sym(g) <= 1e-12)
        throw InputError("generic_basis: Gram matrix of the special set is singular");
    b.pi = ldlt.solve(b.u.transpose());
    Matrix eta(spec.d(), spec.total_dormants());
    Eigen::Index k = 0;
    for (const auto& grp : spec.eta)
        for (const auto& e : grp) eta.col(k++) = e;
    b.p_eta = span_projector(eta, 1e-9);
    Vector dc = Vector::Zero(1 + 2 * c);
    dc.segment(1, c).setOnes();
    b.t_base = b.p_eta + b.u * dc.asDiagonal() * b.pi;
    return b;
}

namespace {

// MLP computing z -> T z on inputs of norm sqrt(d): positive preactivations, offset removed by b2.
void set_linear_mlp(BlockWeights& w, const Matrix& t) {
    Factorization f = balanced_factor(t);
    w.w1 = f.right;
    w.w2 = f.left;
    const double radius = std::sqrt(static_cast<double>(t.cols()));
    w.b1.resize(w.w1.rows());
    for (Eigen::Index k = 0; k < w.w1.rows(); ++k) w.b1(k) = w.w1.row(k).norm() * radius + 1.0;
    w.b2 = -w.w2 * w.b1;
}

}  // namespace

BlockWeights generic_sink_weights(const GenericSpec& spec) {
    const int c = spec.C(), m = 1 + 2 * c;
    if (2.0 * c * spec.params.phi >= 1.0) throw InputError("generic_sink_weights: need 2 C phi < 1");
    GenericBasis gb = generic_basis(spec);
    const double sd = std::sqrt(static_cast<double>(spec.d()));
    const double lam = spec.lambda_c, kappa = spec.params.kappa;
    const double a = kappa / (lam * sd);
    const double b = kappa * (1.0 + lam) / (lam * lam * sd);
    Vector r = Vector::Ones(m);
    r(0) = 0.0;
    Matrix mm = a * r * Vector::Unit(m, 0).transpose();
    for (int k = 1; k <= c; ++k) mm(c + k, k) += b;

    BlockWeights w = BlockWeights::zeros(spec.d());
    set_qk(w, gb.pi.transpose() * mm * gb.pi);
    set_vo(w, 0.5 * gb.t_base);
    set_linear_mlp(w, (1.0 + spec.params.eps_tol) * gb.t_base);
    return w;
}

BlockWeights generic_diag_weights(const GenericSpec& spec, const TaskGeometry& geometry) {
    if (!std::isfinite(geometry.delta_diag)) throw InputError("generic_diag_weights: Delta_diag is infinite");
    if (!(geometry.delta_diag > 0.0)) throw InputError("generic_diag_weights: Delta_diag must be positive");
    const int c = spec.C(), m = 1 + 2 * c;
    GenericBasis gb = generic_basis(spec);
    const double sd = std::sqrt(static_cast<double>(spec.d()));
    const double lam = spec.lambda_c, kappa = spec.params.kappa;
    const double s = kappa / (lam * lam * sd);
    const double a = kappa / sd;
    const double b = 2.0 * kappa / (lam * sd);
    Matrix mm = Matrix::Zero(m, m);
    for (int k = 1; k <= c; ++k) {
        mm(k, k) += s;
        mm(c + k, c + k) += a;
        mm(c + k, k) += b;
    }
    const double alpha = 2.0 * kappa * sd / geometry.delta_diag;

    BlockWeights w = BlockWeights::zeros(spec.d());
    set_qk(w, gb.pi.transpose() * mm * gb.pi + alpha * gb.p_eta);
    set_vo(w, (1.0 - spec.params.eps_tol) * gb.t_base);
    return w;
}

BoundSet thmE2_bounds(const GenericSpec& spec, const TaskGeometry& geometry) {
    spec.check_theorem_constraints();
    const double kappa = spec.params.kappa, c = spec.C(), sd = std::sqrt(static_cast<double>(spec.d()));
    const double delta = spec.params.delta;
    const double r_eta = geometry.r_eta;
    const double diag_term =
        geometry.r_eff_defined && delta > 0.0 ? kappa * geometry.r_eff / (delta * delta * sd) : 0.0;
    BoundSet b;
    b.u_sink = 12.0 * kappa * c / sd + 5.0 * (r_eta + c);
    b.l_diag = diag_term + kappa * c / (2.0 * sd);
    const double inv_delta = std::isfinite(geometry.delta_diag) ? 1.0 / geometry.delta_diag : 0.0;
    b.u_diag = 13.0 * kappa * c / sd + 4.0 * kappa * sd * inv_delta * r_eta + 3.0 * (r_eta + c);
    b.l_sink = kappa * c / (2.0 * sd);
    b.eq4_lhs = b.u_sink;
    b.eq4_rhs = diag_term;
    b.eq4_holds = b.eq4_lhs < b.eq4_rhs;
    return b;
}

std::vector<std::vector<int>> pattern_targets(const LabeledSequence& seq, TaskKind task, TargetPattern pattern) {
    const int n = static_cast<int>(seq.roles.size());
    std::vector<std::vector<int>> out(static_cast<size_t>(n));
    out[0] = {0};
    auto same_token = [&](int i, int j) {
        return seq.roles[static_cast<size_t>(i)] == seq.roles[static_cast<size_t>(j)] &&
               seq.groups[static_cast<size_t>(i)] == seq.groups[static_cast<size_t>(j)] &&
               seq.token_ids[static_cast<size_t>(i)] == seq.token_ids[static_cast<size_t>(j)];
    };
    for (int i = 1; i < n; ++i) {
        auto& tgt = out[static_cast<size_t>(i)];
        const Role role = seq.roles[static_cast<size_t>(i)];
        if (task == TaskKind::Backcopy) {
            if (role == Role::CopyPaste) tgt = {i - 1};
            else tgt = {pattern == TargetPattern::Sink ? 0 : i};
            continue;
        }
        if (role == Role::Dormant) {
            if (pattern == TargetPattern::Sink) {
                tgt = {0};
            } else {
                for (int j = 1; j <= i; ++j)
                    if (same_token(i, j)) tgt.push_back(j);
            }
            continue;
        }
        const int g = seq.groups[static_cast<size_t>(i)];
        for (int j = 1; j < i; ++j)
            if (seq.roles[static_cast<size_t>(j)] == Role::Dormant && seq.groups[static_cast<size_t>(j)] == g)
                tgt.push_back(j);
        if (tgt.empty()) {
            if (pattern == TargetPattern::Sink) {
                tgt = {0};
            } else {
                for (int j = 1; j <= i; ++j)
                    if (same_token(i, j)) tgt.push_back(j);
            }
        }
    }
    return out;
}

VerifyReport verify_construction(const BlockWeights& w, const std::vector<LabeledSequence>& data, AttentionMode mode,
                                 const VerifyOptions& opts) {
    VerifyReport rep;
    rep.cost = block_cost(w, opts.convention);
    if (opts.cost_upper) rep.bounds_respected = rep.cost.total <= *opts.cost_upper * (1.0 + 1e-6);
    const double lo = 1.0 - opts.eps_tol, hi = 1.0 + opts.eps_tol;
    for (const auto& seq : data) {
        BlockTrace tr = block_forward_trace(seq.inputs, w, mode);
        rep.unresolved_rows += tr.unresolved;
        auto targets = pattern_targets(seq, opts.task, opts.pattern);
        const auto n = static_cast<Eigen::Index>(seq.roles.size());
        for (Eigen::Index i = 1; i < n; ++i) {
            const auto& tg = targets[static_cast<size_t>(i)];
            double best_t = std::numeric_limits<double>::infinity();
            double best_o = -std::numeric_limits<double>::infinity();
            for (Eigen::Index j = 0; j <= i; ++j) {
                bool is_t = std::find(tg.begin(), tg.end(), static_cast<int>(j)) != tg.end();
                if (is_t) best_t = std::min(best_t, tr.scores(i, j));
                else best_o = std::max(best_o, tr.scores(i, j));
            }
            if (std::isfinite(best_o)) rep.min_attention_margin = std::min(rep.min_attention_margin, best_t - best_o);
        }

        for (Eigen::Index i = 0; i < n; ++i) {
            const Vector out = tr.out.col(i);
            const Vector x = seq.inputs.col(i);
            double err = 0.0;
            const Role role = seq.roles[static_cast<size_t>(i)];
            if (opts.task == TaskKind::Backcopy || role == Role::Bos) {
                err = (out - seq.targets.col(i)).norm();
            } else if (role == Role::Dormant) {
                Vector delta = out - x;
                double phi = delta.dot(x) / x.squaredNorm();
                err = (delta - phi * x).norm() + x.norm() * dist_to_interval(phi, lo, hi);
            } else {
                const int g = seq.groups[static_cast<size_t>(i)];
                Vector mu = Vector::Zero(x.size());
                int cnt = 0;
                for (Eigen::Index j = 1; j < i; ++j)
                    if (seq.roles[static_cast<size_t>(j)] == Role::Dormant && seq.groups[static_cast<size_t>(j)] == g) {
                        mu += seq.inputs.col(j);
                        ++cnt;
                    }
                Vector delta = out - x;
                if (cnt == 0) {
                    err = delta.norm();
                } else {
                    mu /= cnt;
                    double theta = delta.dot(mu) / mu.squaredNorm();
                    err = (delta - theta * mu).norm() + mu.norm() * dist_to_interval(theta, lo, hi);
                }
            }
            rep.max_output_err = std::max(rep.max_output_err, err);
        }
    }
    return rep;
}

std::vector<double> copy_paste_r_mu(const std::vector<LabeledSequence>& data) {
    std::vector<double> out;
    for (const auto& seq : data) {
        const double sd = std::sqrt(static_cast<double>(seq.inputs.rows()));
        for (size_t i = 1; i < seq.roles.size(); ++i) {
            if (seq.roles[i] != Role::CopyPaste) continue;
            Vector mu = Vector::Zero(seq.inputs.rows());
            int cnt = 0;
            for (size_t j = 1; j < i; ++j)
                if (seq.roles[j] == Role::Dormant && seq.groups[j] == seq.groups[i]) {
                    mu += seq.inputs.col(static_cast<Eigen::Index>(j));
                    ++cnt;
                }
            if (cnt == 0) continue;
            mu /= cnt;
            out.push_back((seq.inputs.col(static_cast<Eigen::Index>(i)) + 0.5 * mu).norm() / sd);
        }
    }
    return out;
}

}  // namespace attnsink
