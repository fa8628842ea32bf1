#pragma once

#include "attnsink/linalg.hpp"

#include <vector>

namespace attnsink {

// d x (T+1) token representations, one column per token, column 0 is BOS.
using TokenMatrix = Matrix;

// Lower-triangular row-stochastic attention map.
class AttentionMap {
public:
    AttentionMap() = default;
    // Validates causality, non-negativity and row sums (1e-9).
    explicit AttentionMap(Matrix a);
    static AttentionMap unchecked(Matrix a);

    const Matrix& matrix() const { return a_; }
    Eigen::Index size() const { return a_.rows(); }
    double operator()(Eigen::Index i, Eigen::Index j) const { return a_(i, j); }

private:
    Matrix a_;
};

struct BlockWeights {
    Matrix wq, wk, wv, wo;  // d x d
    Matrix w1;              // hidden x d
    Matrix w2;              // d x hidden
    Vector b1, b2;
    // extra divisor on the logits on top of 1/sqrt(d)
    double logit_divisor = 1.0;

    static BlockWeights zeros(Eigen::Index d, Eigen::Index hidden = -1);
    Eigen::Index dim() const { return wq.rows(); }
    Eigen::Index hidden() const { return w1.rows(); }
    Matrix w_qk() const { return wq.transpose() * wk; }
    Matrix w_vo() const { return wo * wv; }
    void validate() const;
};

struct AttentionMode {
    enum class Kind { Soft, Hard } kind = Kind::Soft;
    double kappa = 0.0;

    static AttentionMode soft() { return {}; }
    static AttentionMode hard(double kappa) { return {Kind::Hard, kappa}; }
};

TokenMatrix rms_norm(const TokenMatrix& x);
TokenMatrix rms_norm(const TokenMatrix& x, const Vector& scale);

// S_ij = (Wq z_i)'(Wk z_j) / (sqrt(d) * divisor); row = query.
Matrix attention_scores(const TokenMatrix& z, const Matrix& wq, const Matrix& wk, double divisor = 1.0);
// Same scores from a precomputed W_QK = Wq' Wk.
Matrix attention_scores_qk(const TokenMatrix& z, const Matrix& w_qk, double divisor = 1.0);

AttentionMap causal_softmax(const Matrix& s);

struct HardAttention {
    AttentionMap map;
    std::vector<bool> resolved;  // per row
    int unresolved = 0;
};
// Rows whose top logit beats every other by kappa become one-hot (ties within
// 1e-9 share mass uniformly); other rows keep their softmax values.
HardAttention hard_attention(const Matrix& s, double kappa);

struct BlockTrace {
    TokenMatrix z;       // RMS(X)
    Matrix scores;
    AttentionMap attn;
    TokenMatrix h;       // after attention residual
    TokenMatrix z2;      // RMS(H)
    Matrix pre;          // W1 z2 + b1
    TokenMatrix out;
    int unresolved = 0;
};

BlockTrace block_forward_trace(const TokenMatrix& x, const BlockWeights& w,
                               AttentionMode mode = AttentionMode::soft());
TokenMatrix block_forward(const TokenMatrix& x, const BlockWeights& w,
                          AttentionMode mode = AttentionMode::soft());

}  // namespace attnsink
