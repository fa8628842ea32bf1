#pragma once

#include "attnsink/train.hpp"
#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace grad_check {

using namespace attnsink;

inline BlockWeights random_weights(std::mt19937_64& rng, int d) {
    auto w = BlockWeights::zeros(d);
    w.wq = oracles::randn(rng, d, d, 0.8);
    w.wk = oracles::randn(rng, d, d, 0.8);
    w.wv = oracles::randn(rng, d, d, 0.5);
    w.wo = oracles::randn(rng, d, d, 0.5);
    w.w1 = oracles::randn(rng, w.hidden(), d, 0.5);
    w.w2 = oracles::randn(rng, d, w.hidden(), 0.5);
    w.b1 = oracles::randn(rng, w.hidden(), 1, 0.3).col(0);
    w.b2 = oracles::randn(rng, d, 1, 0.3).col(0);
    return w;
}

// Backcopy-style role layout on Gaussian tokens.
inline std::vector<LabeledSequence> random_batch(std::mt19937_64& rng, int d, int t, int n) {
    std::vector<LabeledSequence> out;
    std::bernoulli_distribution coin(0.5);
    for (int s = 0; s < n; ++s) {
        LabeledSequence seq;
        seq.inputs = oracles::randn(rng, d, t + 1);
        seq.targets = oracles::randn(rng, d, t + 1);
        for (int i = 0; i <= t; ++i) {
            seq.roles.push_back(i == 0 ? Role::Bos : (i == 1 || coin(rng)) ? Role::Dormant : Role::CopyPaste);
            seq.groups.push_back(-1);
            seq.token_ids.push_back(-1);
        }
        out.push_back(std::move(seq));
    }
    return out;
}

struct Result {
    double max_rel_err = 0.0;
    std::string worst_param;
};

// Entry-wise |g - fd| / max(|g|, |fd|, floor), floor = 1e-6 * largest gradient entry.
inline Result run_on(const BlockWeights& w0, const std::vector<LabeledSequence>& batch, const LossConfig& lc, double h = 1e-5) {
    const Gradients g = block_gradients(w0, batch, lc);
    double scale = 0.0;
    for (const Matrix* m : {&g.grad.wq, &g.grad.wk, &g.grad.wv, &g.grad.wo, &g.grad.w1, &g.grad.w2})
        scale = std::max(scale, m->cwiseAbs().maxCoeff());
    scale = std::max({scale, g.grad.b1.cwiseAbs().maxCoeff(), g.grad.b2.cwiseAbs().maxCoeff()});
    const double floor = std::max(1e-6 * scale, 1e-12);

    Result r;
    BlockWeights w = w0;
    auto probe = [&](const char* name, auto& param, const auto& grad) {
        for (Eigen::Index k = 0; k < param.size(); ++k) {
            const double orig = param.data()[k];
            param.data()[k] = orig + h;
            const double lp = block_loss(w, batch, lc).total;
            param.data()[k] = orig - h;
            const double lm = block_loss(w, batch, lc).total;
            param.data()[k] = orig;
            const double fd = (lp - lm) / (2.0 * h);
            const double an = grad.data()[k];
            const double rel = std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), floor});
            if (rel > r.max_rel_err) {
                r.max_rel_err = rel;
                r.worst_param = std::string(name) + "[" + std::to_string(k) + "]";
            }
        }
    };
    probe("wq", w.wq, g.grad.wq);
    probe("wk", w.wk, g.grad.wk);
    probe("wv", w.wv, g.grad.wv);
    probe("wo", w.wo, g.grad.wo);
    probe("w1", w.w1, g.grad.w1);
    probe("w2", w.w2, g.grad.w2);
    probe("b1", w.b1, g.grad.b1);
    probe("b2", w.b2, g.grad.b2);
    return r;
}

inline LossConfig default_loss() {
    LossConfig lc;
    lc.reg_weight = 1e-2;
    lc.ce_weight = 0.3;
    lc.hinge_weight = 0.5;
    lc.kappa = 1.0;
    return lc;
}

inline Result run(std::uint64_t seed, int d, int t, const LossConfig& lc = default_loss()) {
    std::mt19937_64 rng(seed);
    auto w = random_weights(rng, d);
    auto batch = random_batch(rng, d, t, 3);
    return run_on(w, batch, lc);
}

}  // namespace grad_check
