#pragma once

#include "attnsink/block.hpp"

#include <optional>
#include <string>
#include <vector>

namespace attnsink {

struct TokenStats {
    Vector z_bar;
    Matrix sigma_v;
    Matrix sigma_c;
    double beta = 1.0;

    Matrix b() const { return sigma_v - sigma_c; }
    Matrix c() const { return z_bar * z_bar.transpose() + sigma_c; }
    // Symmetry (1e-10 relative) and B PSD within 1e-8.
    void validate() const;
};

struct SimCurve {
    std::vector<double> lambda_grid;
    std::vector<double> values;
};

std::vector<double> default_lambda_grid(int points = 21);

double avg_cos_sim(const TokenMatrix& x);
Matrix pairwise_cos(const TokenMatrix& x);

// Rows uniform over the causal prefix: (A_u)_ij = 1/i (1-based).
AttentionMap uniform_causal(Eigen::Index t);

// Y = beta Z + W Z ((1-lambda) I + lambda A_u)'
TokenMatrix interpolated_update(const TokenMatrix& z, const Matrix& w, double beta, double lambda);

// E[Y_i' Y_j] for 1-based positions i, j; i == j gives E||Y_i||^2.
double theory_pair_inner(const TokenStats& stats, const Matrix& w, int i, int j, double lambda);

SimCurve theory_avg_sim(const TokenStats& stats, const Matrix& w, int t, const std::vector<double>& grid);

struct TraceConditions {
    bool cond_i = false;
    bool cond_ii = false;
    std::optional<double> lambda_star;
    double beta_tr_bw = 0.0;
    double tr_bwtw = 0.0;
};
TraceConditions trace_conditions(const TokenStats& stats, const Matrix& w);

// Pooled moments of normalized tokens. beta = mean ||x_i|| / sqrt(d).
TokenStats estimate_stats(const std::vector<TokenMatrix>& batch);
// Per-position within-token covariance, diagnostics only.
std::vector<Matrix> estimate_position_covariances(const std::vector<TokenMatrix>& batch);

// W_VO = scale * V L (V'V)^{-1} V' with V = RMS(X0), L upper bidiagonal (1, -1).
Matrix anti_smoothing_wvo(const TokenMatrix& x0, double scale);

// One layer of X <- X + W_VO RMS(X) A'.
TokenMatrix attention_only_step(const TokenMatrix& x, const Matrix& w_vo, const AttentionMap& a);

struct SpanUpdate {
    Matrix w_vo;
    TokenMatrix x_next;
};
// W_VO realizing X_next = sigma Q X under uniform causal attention.
SpanUpdate span_preserving_update(const TokenMatrix& x, const Matrix& q1, const Matrix& q2, double sigma);

double uniformity_coefficient(const AttentionMap& a);
double head_rescale_factor(const TokenMatrix& full_update, const std::vector<TokenMatrix>& head_updates);

void write_curve_csv(const std::string& path, const SimCurve& curve, const std::string& config_hash);

}  // namespace attnsink
