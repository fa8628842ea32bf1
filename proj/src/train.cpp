#include "attnsink/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <mutex>
#include <numbers>
#include <random>
#include <thread>

namespace attnsink {

namespace {

void add_to(BlockWeights& acc, const BlockWeights& g, double s) {
    acc.wq += s * g.wq;
    acc.wk += s * g.wk;
    acc.wv += s * g.wv;
    acc.wo += s * g.wo;
    acc.w1 += s * g.w1;
    acc.w2 += s * g.w2;
    acc.b1 += s * g.b1;
    acc.b2 += s * g.b2;
}

double frob_sum(const BlockWeights& w) {
    return w.wq.squaredNorm() + w.wk.squaredNorm() + w.wv.squaredNorm() + w.wo.squaredNorm() + w.w1.squaredNorm() +
           w.w2.squaredNorm();
}

// Column-wise RMS backward: z = sqrt(d) x/|x|.
Matrix rms_backward(const Matrix& z, const Vector& norms, const Matrix& dz) {
    const double d = static_cast<double>(z.rows());
    const double sd = std::sqrt(d);
    Matrix dx(z.rows(), z.cols());
    for (Eigen::Index i = 0; i < z.cols(); ++i) {
        double proj = z.col(i).dot(dz.col(i)) / d;
        dx.col(i) = (sd / norms(i)) * (dz.col(i) - proj * z.col(i));
    }
    return dx;
}

LossParts evaluate(const BlockWeights& w, const std::vector<LabeledSequence>& batch, const LossConfig& cfg,
                   BlockWeights* grad) {
    w.validate();
    if (batch.empty()) throw InputError("block_loss: empty batch");
    const Eigen::Index d = w.dim();
    const double sd = std::sqrt(static_cast<double>(d));
    const double c = 1.0 / (sd * w.logit_divisor);

    // all sequences side by side; attention stays per sequence
    std::vector<Eigen::Index> off{0};
    double n_rows = 0.0;
    for (const auto& s : batch) {
        if (s.inputs.rows() != d || s.targets.rows() != d || s.targets.cols() != s.inputs.cols())
            throw InputError("block_loss: dimension mismatch");
        off.push_back(off.back() + s.inputs.cols());
        n_rows += static_cast<double>(s.inputs.cols() - 1);
    }
    const Eigen::Index N = off.back();
    const double n_tokens = static_cast<double>(N);
    Matrix x(d, N), y(d, N);
    for (size_t b = 0; b < batch.size(); ++b) {
        x.middleCols(off[b], batch[b].inputs.cols()) = batch[b].inputs;
        y.middleCols(off[b], batch[b].inputs.cols()) = batch[b].targets;
    }

    LossParts lp;
    lp.min_margin = std::numeric_limits<double>::infinity();
    if (grad) {
        *grad = BlockWeights::zeros(d, w.hidden());
        grad->logit_divisor = w.logit_divisor;
    }

    Vector xn = x.colwise().norm();
    if ((xn.array() == 0.0).any()) throw InputError("block_loss: zero-norm input column");
    Matrix z = x * (sd * xn.cwiseInverse()).asDiagonal();
    Matrix q = w.wq * z, k = w.wk * z, v = w.wv * z;
    Matrix u(d, N);
    std::vector<Matrix> attn(batch.size()), ds_extra(batch.size());

    for (size_t b = 0; b < batch.size(); ++b) {
        const Eigen::Index o = off[b], n = batch[b].inputs.cols();
        Matrix s = c * q.middleCols(o, n).transpose() * k.middleCols(o, n);
        Matrix a = causal_softmax(s).matrix();
        u.middleCols(o, n) = v.middleCols(o, n) * a.transpose();

        auto targets = pattern_targets(batch[b], cfg.task, cfg.pattern);
        Matrix dse = Matrix::Zero(n, n);
        std::vector<char> is_t(static_cast<size_t>(n));
        for (Eigen::Index i = 1; i < n; ++i) {
            const auto& tg = targets[static_cast<size_t>(i)];
            const double qv = 1.0 / static_cast<double>(tg.size());
            std::fill(is_t.begin(), is_t.end(), 0);
            double mass = 0.0;
            for (int j : tg) {
                is_t[static_cast<size_t>(j)] = 1;
                mass += a(i, j);
                lp.ce -= qv * std::log(std::max(a(i, j), 1e-300)) / n_rows;
            }
            lp.compliance += mass / n_rows;
            if (grad && cfg.ce_weight != 0.0) {
                for (Eigen::Index j = 0; j <= i; ++j) dse(i, j) += cfg.ce_weight * a(i, j) / n_rows;
                for (int j : tg) dse(i, j) -= cfg.ce_weight * qv / n_rows;
            }
            Eigen::Index ia = -1, ib = -1;
            double smin = std::numeric_limits<double>::infinity(), smax = -std::numeric_limits<double>::infinity();
            for (Eigen::Index j = 0; j <= i; ++j) {
                if (is_t[static_cast<size_t>(j)] && s(i, j) < smin) { smin = s(i, j); ia = j; }
                if (!is_t[static_cast<size_t>(j)] && s(i, j) > smax) { smax = s(i, j); ib = j; }
            }
            if (ib < 0) continue;
            const double m = smin - smax;
            lp.min_margin = std::min(lp.min_margin, m);
            const double gap = cfg.kappa - m;
            if (gap > 0.0) {
                lp.hinge += gap * gap / n_rows;
                if (grad) {
                    double dm = -2.0 * gap / n_rows * cfg.hinge_weight;
                    dse(i, ia) += dm;
                    dse(i, ib) -= dm;
                }
            }
        }
        attn[b] = std::move(a);
        ds_extra[b] = std::move(dse);
    }

    Matrix h = x + w.wo * u;
    Vector hn = h.colwise().norm();
    if ((hn.array() == 0.0).any()) throw ModelError("block_loss: zero-norm intermediate column");
    Matrix z2 = h * (sd * hn.cwiseInverse()).asDiagonal();
    Matrix p = (w.w1 * z2).colwise() + w.b1;
    Matrix r = p.cwiseMax(0.0);
    Matrix diff = h + ((w.w2 * r).colwise() + w.b2) - y;
    lp.task = diff.squaredNorm() / (n_tokens * static_cast<double>(d));
    if (!std::isfinite(lp.task)) throw ModelError("block_loss: non-finite task loss");

    if (grad) {
        Matrix g = 2.0 * diff / (n_tokens * static_cast<double>(d));
        grad->w2 = g * r.transpose();
        grad->b2 = g.rowwise().sum();
        Matrix dp = (w.w2.transpose() * g).cwiseProduct((p.array() > 0.0).cast<double>().matrix());
        grad->w1 = dp * z2.transpose();
        grad->b1 = dp.rowwise().sum();
        Matrix dh = g + rms_backward(z2, hn, w.w1.transpose() * dp);
        grad->wo = dh * u.transpose();
        Matrix du = w.wo.transpose() * dh;
        Matrix dq(d, N), dk(d, N), dv(d, N);
        for (size_t b = 0; b < batch.size(); ++b) {
            const Eigen::Index o = off[b], n = batch[b].inputs.cols();
            const Matrix& a = attn[b];
            dv.middleCols(o, n) = du.middleCols(o, n) * a;
            Matrix da = du.middleCols(o, n).transpose() * v.middleCols(o, n);
            Matrix& ds = ds_extra[b];
            for (Eigen::Index i = 0; i < n; ++i) {
                double dot = a.row(i).head(i + 1).dot(da.row(i).head(i + 1));
                for (Eigen::Index j = 0; j <= i; ++j) ds(i, j) += a(i, j) * (da(i, j) - dot);
            }
            dq.middleCols(o, n) = c * k.middleCols(o, n) * ds.transpose();
            dk.middleCols(o, n) = c * q.middleCols(o, n) * ds;
        }
        grad->wq = dq * z.transpose();
        grad->wk = dk * z.transpose();
        grad->wv = dv * z.transpose();
    }
    if (!std::isfinite(lp.min_margin)) lp.min_margin = 0.0;
    lp.reg = frob_sum(w);
    lp.total = lp.task + cfg.reg_weight * lp.reg + cfg.ce_weight * lp.ce + cfg.hinge_weight * lp.hinge;
    if (!std::isfinite(lp.total)) throw ModelError("block_loss: non-finite loss");
    if (grad) {
        grad->wq += 2.0 * cfg.reg_weight * w.wq;
        grad->wk += 2.0 * cfg.reg_weight * w.wk;
        grad->wv += 2.0 * cfg.reg_weight * w.wv;
        grad->wo += 2.0 * cfg.reg_weight * w.wo;
        grad->w1 += 2.0 * cfg.reg_weight * w.w1;
        grad->w2 += 2.0 * cfg.reg_weight * w.w2;
    }
    return lp;
}

std::vector<LabeledSequence> make_batch(const TrainConfig& cfg, int n, std::uint64_t seed) {
    if (cfg.task == TaskKind::Backcopy) return gen_backcopy(cfg.backcopy, n, seed);
    return gen_generic(cfg.generic, n, seed);
}

Eigen::Index task_dim(const TrainConfig& cfg) {
    return cfg.task == TaskKind::Backcopy ? cfg.backcopy.d : cfg.generic.d();
}

struct AdamState {
    BlockWeights m, v;
};

template <typename F>
void for_each_param(BlockWeights& a, BlockWeights& b, BlockWeights& c, BlockWeights& g, F f) {
    f(a.wq, b.wq, c.wq, g.wq);
    f(a.wk, b.wk, c.wk, g.wk);
    f(a.wv, b.wv, c.wv, g.wv);
    f(a.wo, b.wo, c.wo, g.wo);
    f(a.w1, b.w1, c.w1, g.w1);
    f(a.w2, b.w2, c.w2, g.w2);
}

}  // namespace

LossParts block_loss(const BlockWeights& w, const std::vector<LabeledSequence>& batch, const LossConfig& cfg) {
    return evaluate(w, batch, cfg, nullptr);
}

Gradients block_gradients(const BlockWeights& w, const std::vector<LabeledSequence>& batch, const LossConfig& cfg) {
    Gradients g;
    g.loss = evaluate(w, batch, cfg, &g.grad);
    return g;
}

TrainTrace train_block(const TrainConfig& cfg) {
    if (!(cfg.lr > 0.0) || cfg.steps < 1) throw InputError("train_block: lr and steps must be positive");
    if (cfg.reg_weight < 0.0) throw InputError("train_block: reg_weight must be non-negative");
    const Eigen::Index d = task_dim(cfg);
    BlockWeights w;
    if (cfg.init) {
        w = *cfg.init;
    } else {
        w = BlockWeights::zeros(d);
        std::mt19937_64 rng(cfg.seed ^ 0xa11ce5ULL);
        std::normal_distribution<double> nd(0.0, cfg.init_scale);
        for (Matrix* m : {&w.wq, &w.wk, &w.wv, &w.wo, &w.w1, &w.w2})
            for (Eigen::Index j = 0; j < m->cols(); ++j)
                for (Eigen::Index i = 0; i < m->rows(); ++i) (*m)(i, j) = nd(rng);
    }
    w.logit_divisor = cfg.debias_logits ? std::sqrt(static_cast<double>(d)) : 1.0;
    w.validate();

    LossConfig lc;
    lc.task = cfg.task;
    lc.pattern = cfg.pattern;
    lc.reg_weight = cfg.reg_weight;
    lc.hinge_weight = cfg.pattern_weight;
    lc.kappa = cfg.kappa;

    AdamState st{BlockWeights::zeros(d, w.hidden()), BlockWeights::zeros(d, w.hidden())};
    Vector mb1 = Vector::Zero(w.hidden()), vb1 = mb1, mb2 = Vector::Zero(d), vb2 = mb2;
    const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

    TrainTrace tr;
    const int anneal_steps = std::max(1, static_cast<int>(cfg.ce_anneal_fraction * cfg.steps));
    for (int step = 0; step < cfg.steps; ++step) {
        lc.ce_weight = step < anneal_steps ? cfg.ce_weight * (1.0 - static_cast<double>(step) / anneal_steps) : 0.0;
        auto batch = make_batch(cfg, cfg.batch, cfg.seed * 1000003ULL + static_cast<std::uint64_t>(step) + 1);
        Gradients g = block_gradients(w, batch, lc);
        if (!std::isfinite(g.loss.total)) throw ModelError("train_block: loss diverged at step " + std::to_string(step));
        if (cfg.record_every > 0 && step % cfg.record_every == 0) {
            tr.step.push_back(step);
            tr.task_loss.push_back(g.loss.task);
            tr.reg_cost.push_back(g.loss.reg);
            tr.compliance.push_back(g.loss.compliance);
        }
        const double lr = cfg.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * step / cfg.steps));
        if (cfg.optimizer == Optimizer::GradientDescent) {
            add_to(w, g.grad, -lr);
            continue;
        }
        const double t = step + 1.0;
        const double c1 = 1.0 - std::pow(beta1, t), c2 = 1.0 - std::pow(beta2, t);
        auto adam = [&](auto& p, auto& m, auto& v, const auto& gr) {
            m = beta1 * m + (1.0 - beta1) * gr;
            v = beta2 * v + (1.0 - beta2) * gr.cwiseProduct(gr);
            p.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
        };
        for_each_param(w, st.m, st.v, g.grad, [&](Matrix& p, Matrix& m, Matrix& v, const Matrix& gr) { adam(p, m, v, gr); });
        adam(w.b1, mb1, vb1, g.grad.b1);
        adam(w.b2, mb2, vb2, g.grad.b2);
    }

    auto eval = make_batch(cfg, cfg.eval_sequences, cfg.seed * 1000003ULL + 0xe7a1ULL);
    lc.ce_weight = 0.0;
    tr.final_eval = block_loss(w, eval, lc);
    tr.final_weights = w;
    tr.final_cost = block_cost(w);
    tr.converged = tr.final_eval.compliance >= 0.99;
    return tr;
}

namespace {

template <typename Job>
void run_parallel(int n_jobs, int threads, Job job) {
    threads = std::max(1, std::min(threads, n_jobs));
    if (threads == 1) {
        for (int i = 0; i < n_jobs; ++i) job(i);
        return;
    }
    std::vector<std::thread> pool;
    std::mutex mu;
    int next = 0;
    for (int t = 0; t < threads; ++t)
        pool.emplace_back([&] {
            for (;;) {
                int i;
                {
                    std::lock_guard<std::mutex> lock(mu);
                    if (next >= n_jobs) return;
                    i = next++;
                }
                job(i);
            }
        });
    for (auto& th : pool) th.join();
}

SweepPoint to_point(const TrainTrace& tr, TargetPattern pattern) {
    SweepPoint p;
    p.pattern = pattern == TargetPattern::Sink ? "sink" : "diagonal";
    p.cost = tr.final_cost.raw_frobsq;
    p.task_loss = tr.final_eval.task;
    p.compliance = tr.final_eval.compliance;
    p.min_margin = tr.final_eval.min_margin;
    return p;
}

}  // namespace

std::vector<SweepPoint> sweep_backcopy(const BackcopySweep& sw, TargetPattern pattern) {
    std::vector<SweepPoint> out(sw.t_values.size());
    run_parallel(static_cast<int>(sw.t_values.size()), sw.threads, [&](int i) {
        const int t = sw.t_values[static_cast<size_t>(i)];
        TrainConfig cfg = sw.base;
        cfg.task = TaskKind::Backcopy;
        cfg.pattern = pattern;
        const int d = t + sw.n_dormant + sw.n_copy + 2 + sw.d_extra;
        cfg.backcopy = make_backcopy_spec(d, t, sw.n_dormant, sw.n_copy, cfg.kappa);
        TrainTrace tr = train_block(cfg);
        SweepPoint p = to_point(tr, pattern);
        p.x = t;
        p.T = t;
        p.n_dormant = sw.n_dormant;
        out[static_cast<size_t>(i)] = p;
    });
    return out;
}

std::vector<SweepPoint> sweep_generic(const GenericSweep& sw, TargetPattern pattern) {
    struct Job {
        double delta;
        int count;
    };
    std::vector<Job> jobs;
    for (int n : sw.dormant_counts)
        for (double dl : sw.deltas) jobs.push_back({dl, n});
    std::vector<SweepPoint> out(jobs.size());
    run_parallel(static_cast<int>(jobs.size()), sw.threads, [&](int i) {
        const Job& jb = jobs[static_cast<size_t>(i)];
        GenericParams gp = sw.params;
        gp.delta = jb.delta;
        gp.dormants_per_group.assign(static_cast<size_t>(gp.C), jb.count);
        TrainConfig cfg = sw.base;
        cfg.task = TaskKind::Generic;
        cfg.pattern = pattern;
        cfg.generic = make_generic_spec(gp);
        TrainTrace tr = train_block(cfg);
        auto geo_data = gen_generic(cfg.generic, 256, cfg.seed + 77);
        TaskGeometry geo = task_geometry(cfg.generic, geo_data);
        SweepPoint p = to_point(tr, pattern);
        p.r_eff = geo.r_eff;
        p.delta = jb.delta;
        p.x = geo.r_eff / (jb.delta * jb.delta);
        p.T = gp.T;
        p.n_dormant = jb.count;
        out[static_cast<size_t>(i)] = p;
    });
    return out;
}

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2) throw InputError("loglog_slope: need matching samples");
    std::vector<double> lx, ly;
    for (size_t i = 0; i < x.size(); ++i) {
        if (!(x[i] > 0.0) || !(y[i] > 0.0)) throw InputError("loglog_slope: non-positive sample");
        lx.push_back(std::log(x[i]));
        ly.push_back(std::log(y[i]));
    }
    double mx = 0.0, my = 0.0;
    for (size_t i = 0; i < lx.size(); ++i) {
        mx += lx[i];
        my += ly[i];
    }
    mx /= static_cast<double>(lx.size());
    my /= static_cast<double>(ly.size());
    double sxy = 0.0, sxx = 0.0;
    for (size_t i = 0; i < lx.size(); ++i) {
        sxy += (lx[i] - mx) * (ly[i] - my);
        sxx += (lx[i] - mx) * (lx[i] - mx);
    }
    return sxy / sxx;
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2) throw InputError("pearson: need matching samples");
    const double n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    return sxy / std::sqrt(sxx * syy);
}

void write_sweep_csv(const std::string& path, const std::vector<SweepPoint>& pts, const std::string& config_hash) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open " + path);
    os << "# config_hash=" << config_hash << "\n";
    os << "pattern,x,T,n_dormant,delta,r_eff,cost,task_loss,compliance,min_margin\n";
    os.precision(10);
    for (const auto& p : pts)
        os << p.pattern << "," << p.x << "," << p.T << "," << p.n_dormant << "," << p.delta << "," << p.r_eff << ","
           << p.cost << "," << p.task_loss << "," << p.compliance << "," << p.min_margin << "\n";
}

}  // namespace attnsink
