#include "attnsink/oversmoothing.hpp"

#include <cmath>
#include <fstream>

namespace attnsink {

namespace {

void check_symmetric(const Matrix& m, const std::string& what) {
    double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
    if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale) throw InputError(what + " is not symmetric");
}

}  // namespace

void TokenStats::validate() const {
    const Eigen::Index d = z_bar.size();
    require_shape(sigma_v, d, d, "Sigma_V");
    require_shape(sigma_c, d, d, "Sigma_C");
    check_symmetric(sigma_v, "Sigma_V");
    check_symmetric(sigma_c, "Sigma_C");
    Matrix bm = b();
    Matrix sym = 0.5 * (bm + bm.transpose());
    if (d > 0 && min_eigenvalue_sym(sym) < -1e-8) throw InputError("TokenStats: B = Sigma_V - Sigma_C is not PSD");
    if (!std::isfinite(beta)) throw InputError("TokenStats: beta not finite");
}

std::vector<double> default_lambda_grid(int points) {
    std::vector<double> g;
    for (int i = 0; i < points; ++i) g.push_back(points == 1 ? 0.0 : static_cast<double>(i) / (points - 1));
    return g;
}

Matrix pairwise_cos(const TokenMatrix& x) {
    Vector n = x.colwise().norm();
    for (Eigen::Index i = 0; i < n.size(); ++i)
        if (n(i) == 0.0) throw InputError("pairwise_cos: zero column at index " + std::to_string(i));
    Matrix u = x * n.cwiseInverse().asDiagonal();
    return u.transpose() * u;
}

double avg_cos_sim(const TokenMatrix& x) {
    const Eigen::Index t = x.cols();
    if (t < 2) throw InputError("avg_cos_sim: need at least two tokens");
    Matrix c = pairwise_cos(x);
    double sum = 0.0;
    for (Eigen::Index i = 0; i < t; ++i)
        for (Eigen::Index j = i + 1; j < t; ++j) sum += c(i, j);
    return 2.0 * sum / (static_cast<double>(t) * static_cast<double>(t - 1));
}

AttentionMap uniform_causal(Eigen::Index t) {
    if (t < 1) throw InputError("uniform_causal: T must be positive");
    Matrix a = Matrix::Zero(t, t);
    for (Eigen::Index i = 0; i < t; ++i) a.row(i).head(i + 1).setConstant(1.0 / static_cast<double>(i + 1));
    return AttentionMap::unchecked(std::move(a));
}

TokenMatrix interpolated_update(const TokenMatrix& z, const Matrix& w, double beta, double lambda) {
    if (lambda < 0.0 || lambda > 1.0) throw InputError("interpolated_update: lambda outside [0,1]");
    require_shape(w, z.rows(), z.rows(), "interpolated_update W");
    const Eigen::Index t = z.cols();
    Matrix mix = (1.0 - lambda) * Matrix::Identity(t, t) + lambda * uniform_causal(t).matrix();
    return beta * z + w * z * mix.transpose();
}

namespace {

struct TraceTerms {
    double tr_c, tr_b, tr_cw, tr_bw, tr_cwtw, tr_bwtw;
};

TraceTerms traces(const TokenStats& s, const Matrix& w) {
    s.validate();
    require_shape(w, s.z_bar.size(), s.z_bar.size(), "W");
    Matrix b = s.b(), c = s.c(), wtw = w.transpose() * w;
    return {c.trace(), b.trace(), (c * w).trace(), (b * w).trace(), (c * wtw).trace(), (b * wtw).trace()};
}

double pair_inner(const TraceTerms& tt, double beta, int i, int j, double lambda) {
    if (i > j) std::swap(i, j);
    if (i == j) {
        const double k = 1.0 - 1.0 / i;
        return beta * beta * (tt.tr_b + tt.tr_c) + 2.0 * beta * (tt.tr_bw + tt.tr_cw) + (tt.tr_bwtw + tt.tr_cwtw) -
               2.0 * k * (beta * tt.tr_bw + tt.tr_bwtw) * lambda + k * tt.tr_bwtw * lambda * lambda;
    }
    return beta * beta * tt.tr_c + 2.0 * beta * tt.tr_cw + tt.tr_cwtw +
           (lambda / j) * (beta * tt.tr_bw + tt.tr_bwtw);
}

}  // namespace

double theory_pair_inner(const TokenStats& stats, const Matrix& w, int i, int j, double lambda) {
    if (i < 1 || j < 1) throw InputError("theory_pair_inner: positions are 1-based");
    return pair_inner(traces(stats, w), stats.beta, i, j, lambda);
}

SimCurve theory_avg_sim(const TokenStats& stats, const Matrix& w, int t, const std::vector<double>& grid) {
    if (t < 2) throw InputError("theory_avg_sim: T must be at least 2");
    TraceTerms tt = traces(stats, w);
    SimCurve curve;
    curve.lambda_grid = grid;
    for (double lam : grid) {
        std::vector<double> diag(static_cast<size_t>(t) + 1);
        for (int k = 1; k <= t; ++k) {
            diag[static_cast<size_t>(k)] = pair_inner(tt, stats.beta, k, k, lam);
            if (!(diag[static_cast<size_t>(k)] > 0.0)) throw ModelError("theory_avg_sim: non-positive expected squared norm");
        }
        double sum = 0.0;
        for (int i = 1; i <= t; ++i)
            for (int j = i + 1; j <= t; ++j)
                sum += pair_inner(tt, stats.beta, i, j, lam) /
                       std::sqrt(diag[static_cast<size_t>(i)] * diag[static_cast<size_t>(j)]);
        curve.values.push_back(2.0 * sum / (static_cast<double>(t) * (t - 1)));
    }
    return curve;
}

TraceConditions trace_conditions(const TokenStats& stats, const Matrix& w) {
    TraceTerms tt = traces(stats, w);
    TraceConditions out;
    out.beta_tr_bw = stats.beta * tt.tr_bw;
    out.tr_bwtw = tt.tr_bwtw;
    out.cond_i = out.beta_tr_bw > 0.0;
    out.cond_ii = out.beta_tr_bw + out.tr_bwtw < 0.0;
    if (!out.cond_i && !out.cond_ii && out.tr_bwtw > 0.0) out.lambda_star = (out.beta_tr_bw + out.tr_bwtw) / out.tr_bwtw;
    return out;
}

TokenStats estimate_stats(const std::vector<TokenMatrix>& batch) {
    if (batch.size() < 2) throw InputError("estimate_stats: need at least two sequences");
    const Eigen::Index d = batch.front().rows();
    const double sd = std::sqrt(static_cast<double>(d));
    Vector mean = Vector::Zero(d);
    double norm_sum = 0.0;
    double count = 0.0;
    std::vector<TokenMatrix> zs;
    zs.reserve(batch.size());
    for (const auto& x : batch) {
        if (x.rows() != d || x.cols() < 2) throw InputError("estimate_stats: inconsistent sequence shapes");
        norm_sum += x.colwise().norm().sum();
        zs.push_back(rms_norm(x));
        mean += zs.back().rowwise().sum();
        count += static_cast<double>(x.cols());
    }
    mean /= count;
    Matrix sv = Matrix::Zero(d, d), sc = Matrix::Zero(d, d);
    double n_v = 0.0, n_c = 0.0;
    for (const auto& z : zs) {
        Matrix e = z.colwise() - mean;
        Matrix outer = e * e.transpose();
        Vector s = e.rowwise().sum();
        const double t = static_cast<double>(z.cols());
        sv += outer;
        sc += s * s.transpose() - outer;
        n_v += t;
        n_c += t * (t - 1.0);
    }
    TokenStats st;
    st.z_bar = mean;
    st.sigma_v = sv / n_v;
    st.sigma_c = sc / n_c;
    st.sigma_v = 0.5 * (st.sigma_v + st.sigma_v.transpose()).eval();
    st.sigma_c = 0.5 * (st.sigma_c + st.sigma_c.transpose()).eval();
    st.beta = norm_sum / count / sd;

    Eigen::SelfAdjointEigenSolver<Matrix> es(st.b());
    const double lo = es.eigenvalues()(0);
    if (lo < -1e-3) throw ModelError("estimate_stats: B has eigenvalue " + std::to_string(lo) + " below -1e-3");
    if (lo < -1e-6) {
        Vector ev = es.eigenvalues().cwiseMax(0.0);
        Matrix bfix = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
        st.sigma_v = st.sigma_c + bfix;
    }
    return st;
}

std::vector<Matrix> estimate_position_covariances(const std::vector<TokenMatrix>& batch) {
    if (batch.size() < 2) throw InputError("estimate_position_covariances: need at least two sequences");
    const Eigen::Index t = batch.front().cols(), d = batch.front().rows();
    std::vector<TokenMatrix> zs;
    for (const auto& x : batch) {
        if (x.cols() != t || x.rows() != d) throw InputError("estimate_position_covariances: ragged batch");
        zs.push_back(rms_norm(x));
    }
    std::vector<Matrix> out;
    const double n = static_cast<double>(zs.size());
    for (Eigen::Index p = 0; p < t; ++p) {
        Vector m = Vector::Zero(d);
        for (const auto& z : zs) m += z.col(p);
        m /= n;
        Matrix cov = Matrix::Zero(d, d);
        for (const auto& z : zs) cov += (z.col(p) - m) * (z.col(p) - m).transpose();
        out.push_back(cov / n);
    }
    return out;
}

Matrix anti_smoothing_wvo(const TokenMatrix& x0, double scale) {
    const Eigen::Index d = x0.rows(), t = x0.cols();
    if (d < t) throw InputError("anti_smoothing_wvo: need d >= T");
    TokenMatrix v = rms_norm(x0);
    if (numerical_rank(v, 1e-10) < t) throw InputError("anti_smoothing_wvo: X0 is rank deficient");
    Matrix l = Matrix::Identity(t, t);
    for (Eigen::Index i = 0; i + 1 < t; ++i) l(i, i + 1) = -1.0;
    Matrix gram = v.transpose() * v;
    return scale * v * l * gram.ldlt().solve(v.transpose());
}

TokenMatrix attention_only_step(const TokenMatrix& x, const Matrix& w_vo, const AttentionMap& a) {
    return x + w_vo * rms_norm(x) * a.matrix().transpose();
}

SpanUpdate span_preserving_update(const TokenMatrix& x, const Matrix& q1, const Matrix& q2, double sigma) {
    const Eigen::Index d = x.rows(), t = x.cols();
    if (!(sigma > 0.0)) throw InputError("span_preserving_update: sigma must be positive");
    if (d < t || numerical_rank(x, 1e-10) < t) throw InputError("span_preserving_update: X must have full column rank");
    require_shape(q1, t, t, "Q1");
    require_shape(q2, d - t, d - t, "Q2");

    Eigen::HouseholderQR<Matrix> qr(x);
    Matrix u = qr.householderQ() * Matrix::Identity(d, d);
    Matrix blk = Matrix::Zero(d, d);
    blk.topLeftCorner(t, t) = q1;
    if (d > t) blk.bottomRightCorner(d - t, d - t) = q2;
    Matrix q = u * blk * u.transpose();

    Matrix xpinv = (x.transpose() * x).ldlt().solve(x.transpose());
    Matrix b = sigma * xpinv * q * x;
    Matrix a = uniform_causal(t).matrix();
    Vector dinv = x.colwise().norm() / std::sqrt(static_cast<double>(d));  // D^{-1}
    // (A')^{-1} D^{-1} X^+  computed by a triangular solve
    Matrix rhs = dinv.asDiagonal() * xpinv;
    Matrix at_inv_rhs = a.transpose().triangularView<Eigen::Upper>().solve(rhs);
    SpanUpdate out;
    out.w_vo = x * (b - Matrix::Identity(t, t)) * at_inv_rhs;
    out.x_next = attention_only_step(x, out.w_vo, AttentionMap::unchecked(a));
    return out;
}

double uniformity_coefficient(const AttentionMap& a) {
    const Eigen::Index t = a.size();
    if (t < 1) throw InputError("uniformity_coefficient: empty map");
    double sum = 1.0;
    for (Eigen::Index i = 1; i < t; ++i) {
        double h = 0.0;
        for (Eigen::Index j = 0; j <= i; ++j) {
            double p = a(i, j);
            if (p > 0.0) h -= p * std::log(p);
        }
        sum += h / std::log(static_cast<double>(i + 1));
    }
    return sum / static_cast<double>(t);
}

double head_rescale_factor(const TokenMatrix& full_update, const std::vector<TokenMatrix>& head_updates) {
    if (head_updates.empty()) throw InputError("head_rescale_factor: no heads");
    double head_mean = 0.0;
    for (const auto& h : head_updates) {
        if (h.cols() != full_update.cols()) throw InputError("head_rescale_factor: token count mismatch");
        head_mean += h.colwise().norm().mean();
    }
    head_mean /= static_cast<double>(head_updates.size());
    if (head_mean == 0.0) throw InputError("head_rescale_factor: zero head updates");
    return full_update.colwise().norm().mean() / head_mean;
}

void write_curve_csv(const std::string& path, const SimCurve& curve, const std::string& config_hash) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open " + path);
    os << "# config_hash=" << config_hash << "\n";
    os << "lambda,value\n";
    os.precision(17);
    for (size_t i = 0; i < curve.values.size(); ++i) os << curve.lambda_grid[i] << "," << curve.values[i] << "\n";
}

}  // namespace attnsink
