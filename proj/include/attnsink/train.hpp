#pragma once

#include "attnsink/constructions.hpp"
#include "attnsink/tasks.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace attnsink {

struct LossConfig {
    TaskKind task = TaskKind::Backcopy;
    TargetPattern pattern = TargetPattern::Sink;
    double reg_weight = 1e-3;     // on ||Wq||^2+||Wk||^2+||Wv||^2+||Wo||^2+||W1||^2+||W2||^2
    double ce_weight = 0.0;       // cross-entropy to the uniform target row
    double hinge_weight = 0.0;    // squared hinge on the target logit margin
    double kappa = 4.0;
};

struct LossParts {
    double task = 0.0;
    double reg = 0.0;      // unweighted Frobenius sum
    double ce = 0.0;
    double hinge = 0.0;
    double total = 0.0;
    double compliance = 0.0;  // mean attention mass on target keys, BOS row excluded
    double min_margin = 0.0;
};

struct Gradients {
    BlockWeights grad;
    LossParts loss;
};

LossParts block_loss(const BlockWeights& w, const std::vector<LabeledSequence>& batch, const LossConfig& cfg);
// Reverse-mode gradient of block_loss (soft attention).
Gradients block_gradients(const BlockWeights& w, const std::vector<LabeledSequence>& batch, const LossConfig& cfg);

enum class Optimizer { Adam, GradientDescent };

struct TrainConfig {
    TaskKind task = TaskKind::Backcopy;
    BackcopySpec backcopy;
    GenericSpec generic;
    TargetPattern pattern = TargetPattern::Sink;
    double reg_weight = 1e-3;
    double pattern_weight = 1000.0;  // weight of the margin hinge
    double ce_weight = 1.0;          // initial cross-entropy weight, annealed to 0
    double ce_anneal_fraction = 0.5;
    double kappa = 4.0;
    double lr = 0.03;
    int steps = 4000;
    int batch = 16;
    std::uint64_t seed = 0;
    double init_scale = 0.01;
    bool debias_logits = true;  // extra 1/sqrt(d) on the logits
    Optimizer optimizer = Optimizer::Adam;
    std::optional<BlockWeights> init;
    int eval_sequences = 64;
    int record_every = 1;
};

struct TrainTrace {
    std::vector<int> step;
    std::vector<double> task_loss, reg_cost, compliance;
    BlockWeights final_weights;
    CostReport final_cost;
    LossParts final_eval;
    bool converged = false;
};

TrainTrace train_block(const TrainConfig& cfg);

struct SweepPoint {
    std::string pattern;
    double x = 0.0;          // T, or r_eff / delta^2
    double cost = 0.0;       // ||Wq||^2+||Wk||^2+||Wv||^2+||Wo||^2+||W1||^2+||W2||^2
    double task_loss = 0.0;
    double compliance = 0.0;
    double min_margin = 0.0;
    double r_eff = 0.0, delta = 0.0;
    int T = 0, n_dormant = 0;
};

struct BackcopySweep {
    std::vector<int> t_values{8, 12, 16, 24, 32, 48, 64};
    int n_dormant = 5, n_copy = 5;
    int d_extra = 0;  // d = T + |D| + |C| + 2 + d_extra
    TrainConfig base;
    int threads = 1;
};
std::vector<SweepPoint> sweep_backcopy(const BackcopySweep& sw, TargetPattern pattern);

struct GenericSweep {
    std::vector<double> deltas{0.15, 0.25, 0.35, 0.5};
    std::vector<int> dormant_counts{4, 8};
    GenericParams params;
    TrainConfig base;
    int threads = 1;
};
std::vector<SweepPoint> sweep_generic(const GenericSweep& sw, TargetPattern pattern);

// Least-squares slope of log(y) on log(x).
double loglog_slope(const std::vector<double>& x, const std::vector<double>& y);
double pearson(const std::vector<double>& x, const std::vector<double>& y);

void write_sweep_csv(const std::string& path, const std::vector<SweepPoint>& pts, const std::string& config_hash);

}  // namespace attnsink
