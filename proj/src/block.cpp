#include "attnsink/block.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace attnsink {

AttentionMap::AttentionMap(Matrix a) : a_(std::move(a)) {
    if (a_.rows() != a_.cols()) throw InputError("AttentionMap: matrix must be square");
    require_finite(a_, "AttentionMap");
    for (Eigen::Index i = 0; i < a_.rows(); ++i) {
        double sum = 0.0;
        for (Eigen::Index j = 0; j < a_.cols(); ++j) {
            if (j > i && a_(i, j) != 0.0) throw InputError("AttentionMap: entry above the diagonal in row " + std::to_string(i));
            if (a_(i, j) < 0.0) throw InputError("AttentionMap: negative entry in row " + std::to_string(i));
            sum += a_(i, j);
        }
        if (std::abs(sum - 1.0) > 1e-9) throw InputError("AttentionMap: row " + std::to_string(i) + " does not sum to 1");
    }
}

AttentionMap AttentionMap::unchecked(Matrix a) {
    AttentionMap m;
    m.a_ = std::move(a);
    return m;
}

BlockWeights BlockWeights::zeros(Eigen::Index d, Eigen::Index hidden) {
    if (hidden < 0) hidden = d;
    BlockWeights w;
    w.wq = Matrix::Zero(d, d);
    w.wk = Matrix::Zero(d, d);
    w.wv = Matrix::Zero(d, d);
    w.wo = Matrix::Zero(d, d);
    w.w1 = Matrix::Zero(hidden, d);
    w.w2 = Matrix::Zero(d, hidden);
    w.b1 = Vector::Zero(hidden);
    w.b2 = Vector::Zero(d);
    return w;
}

void BlockWeights::validate() const {
    const Eigen::Index d = wq.rows();
    if (d < 1) throw InputError("BlockWeights: empty");
    require_shape(wq, d, d, "W_Q");
    require_shape(wk, d, d, "W_K");
    require_shape(wv, d, d, "W_V");
    require_shape(wo, d, d, "W_O");
    const Eigen::Index h = w1.rows();
    require_shape(w1, h, d, "W_1");
    require_shape(w2, d, h, "W_2");
    if (b1.size() != h || b2.size() != d) throw InputError("BlockWeights: bias shape mismatch");
    for (const Matrix* m : {&wq, &wk, &wv, &wo, &w1, &w2}) require_finite(*m, "BlockWeights");
    if (!b1.allFinite() || !b2.allFinite()) throw InputError("BlockWeights: non-finite bias");
    if (!(logit_divisor > 0.0)) throw InputError("BlockWeights: logit_divisor must be positive");
}

TokenMatrix rms_norm(const TokenMatrix& x) {
    require_finite(x, "rms_norm");
    const double sd = std::sqrt(static_cast<double>(x.rows()));
    TokenMatrix z(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.cols(); ++i) {
        double n = x.col(i).norm();
        if (n == 0.0) throw InputError("rms_norm: zero column at index " + std::to_string(i));
        z.col(i) = x.col(i) * (sd / n);
    }
    return z;
}

TokenMatrix rms_norm(const TokenMatrix& x, const Vector& scale) {
    if (scale.size() != x.rows()) throw InputError("rms_norm: scale length mismatch");
    return scale.asDiagonal() * rms_norm(x);
}

Matrix attention_scores(const TokenMatrix& z, const Matrix& wq, const Matrix& wk, double divisor) {
    if (wq.cols() != z.rows() || wk.cols() != z.rows() || wq.rows() != wk.rows())
        throw InputError("attention_scores: shape mismatch");
    const double c = 1.0 / (std::sqrt(static_cast<double>(z.rows())) * divisor);
    return c * (wq * z).transpose() * (wk * z);
}

Matrix attention_scores_qk(const TokenMatrix& z, const Matrix& w_qk, double divisor) {
    require_shape(w_qk, z.rows(), z.rows(), "attention_scores_qk");
    const double c = 1.0 / (std::sqrt(static_cast<double>(z.rows())) * divisor);
    return c * z.transpose() * w_qk * z;
}

AttentionMap causal_softmax(const Matrix& s) {
    if (s.rows() != s.cols()) throw InputError("causal_softmax: square matrix required");
    const Eigen::Index n = s.rows();
    Matrix a = Matrix::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        double mx = s.row(i).head(i + 1).maxCoeff();
        double sum = 0.0;
        for (Eigen::Index j = 0; j <= i; ++j) {
            a(i, j) = std::exp(s(i, j) - mx);
            sum += a(i, j);
        }
        a.row(i).head(i + 1) /= sum;
    }
    return AttentionMap::unchecked(std::move(a));
}

HardAttention hard_attention(const Matrix& s, double kappa) {
    HardAttention out;
    Matrix a = causal_softmax(s).matrix();
    const Eigen::Index n = s.rows();
    out.resolved.assign(static_cast<size_t>(n), false);
    for (Eigen::Index i = 0; i < n; ++i) {
        double mx = s.row(i).head(i + 1).maxCoeff();
        double tie = 1e-9 * std::max(1.0, std::abs(mx));
        bool ok = true;
        int count = 0;
        for (Eigen::Index j = 0; j <= i; ++j) {
            if (s(i, j) >= mx - tie) ++count;
            else if (s(i, j) > mx - kappa + tie) ok = false;
        }
        if (ok) {
            a.row(i).setZero();
            for (Eigen::Index j = 0; j <= i; ++j)
                if (s(i, j) >= mx - tie) a(i, j) = 1.0 / count;
            out.resolved[static_cast<size_t>(i)] = true;
        } else {
            ++out.unresolved;
        }
    }
    out.map = AttentionMap::unchecked(std::move(a));
    return out;
}

BlockTrace block_forward_trace(const TokenMatrix& x, const BlockWeights& w, AttentionMode mode) {
    w.validate();
    if (x.rows() != w.dim()) throw InputError("block_forward: token dimension does not match weights");
    BlockTrace t;
    t.z = rms_norm(x);
    t.scores = attention_scores(t.z, w.wq, w.wk, w.logit_divisor);
    if (mode.kind == AttentionMode::Kind::Hard) {
        HardAttention h = hard_attention(t.scores, mode.kappa);
        t.attn = std::move(h.map);
        t.unresolved = h.unresolved;
    } else {
        t.attn = causal_softmax(t.scores);
    }
    t.h = x + w.wo * (w.wv * t.z) * t.attn.matrix().transpose();
    for (Eigen::Index i = 0; i < t.h.cols(); ++i)
        if (t.h.col(i).norm() == 0.0) throw ModelError("block_forward: zero-norm intermediate column " + std::to_string(i));
    t.z2 = rms_norm(t.h);
    t.pre = (w.w1 * t.z2).colwise() + w.b1;
    t.out = t.h + ((w.w2 * t.pre.cwiseMax(0.0)).colwise() + w.b2);
    return t;
}

TokenMatrix block_forward(const TokenMatrix& x, const BlockWeights& w, AttentionMode mode) {
    return block_forward_trace(x, w, mode).out;
}

}  // namespace attnsink
