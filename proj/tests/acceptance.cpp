#include "attnsink/constructions.hpp"
#include "attnsink/head_patterns.hpp"
#include "attnsink/linalg.hpp"
#include "attnsink/oversmoothing.hpp"
#include "attnsink/sink_geometry.hpp"
#include "attnsink/train.hpp"
#include "grad_check.hpp"
#include "oracles.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

using namespace attnsink;
using oracles::randn;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, double a) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, a);
    return buf;
}

Matrix random_psd(std::mt19937_64& rng, int d, double scale) {
    Matrix g = randn(rng, d, d);
    return scale * g * g.transpose() / d;
}

TokenStats random_stats(std::mt19937_64& rng, int d, double mean_norm) {
    TokenStats s;
    s.sigma_c = random_psd(rng, d, 0.2);
    s.sigma_v = s.sigma_c + random_psd(rng, d, 0.5);
    s.z_bar = randn(rng, d, 1).col(0).normalized() * mean_norm;
    s.beta = 1.0;
    return s;
}

Matrix psd_sqrt(const Matrix& s) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(s);
    return es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
}

// ---- 1. closed form vs Monte-Carlo ---------------------------------------------

Outcome monte_carlo() {
    const int d = 32, t = 16, n = 100000;
    std::mt19937_64 rng(101);
    TokenStats s = random_stats(rng, d, 2.0);
    Matrix w = randn(rng, d, d, 0.8 / std::sqrt(d));
    const Matrix lc = psd_sqrt(s.sigma_c), lb = psd_sqrt(s.b());

    struct Triple {
        int i, j;
        double lam;
        double sum = 0.0, sumsq = 0.0;
    };
    std::vector<Triple> triples;
    std::uniform_int_distribution<int> pos(1, t);
    std::uniform_real_distribution<double> ud(0.0, 1.0);
    for (int k = 0; k < 20; ++k) triples.push_back({pos(rng), pos(rng), ud(rng)});
    const std::vector<double> sim_lams{0.0, 0.5, 1.0};
    std::vector<double> sim_sum(sim_lams.size(), 0.0);

    // Y(lambda) = a + lambda b with a = beta Z + W Z, b = W Z (U' - I)
    const Matrix ut_minus_i = uniform_causal(t).matrix().transpose() - Matrix::Identity(t, t);
    std::normal_distribution<double> nd;
    Matrix g(d, 1), h(d, t);
    for (int rep = 0; rep < n; ++rep) {
        for (int r = 0; r < d; ++r) g(r, 0) = nd(rng);
        for (Eigen::Index k = 0; k < h.size(); ++k) h.data()[k] = nd(rng);
        Matrix z = lb * h;
        z.colwise() += s.z_bar + lc * g.col(0);
        const Matrix wz = w * z;
        const Matrix a = s.beta * z + wz;
        const Matrix b = wz * ut_minus_i;
        for (auto& tr : triples) {
            const Vector yi = a.col(tr.i - 1) + tr.lam * b.col(tr.i - 1);
            const Vector yj = a.col(tr.j - 1) + tr.lam * b.col(tr.j - 1);
            const double v = yi.dot(yj);
            tr.sum += v;
            tr.sumsq += v * v;
        }
        for (size_t k = 0; k < sim_lams.size(); ++k) sim_sum[k] += avg_cos_sim(a + sim_lams[k] * b);
    }
    int within = 0;
    double worst_z = 0.0;
    for (const auto& tr : triples) {
        const double mean = tr.sum / n;
        const double se = std::sqrt(std::max(tr.sumsq / n - mean * mean, 0.0) / n);
        const double zscore = std::abs(mean - theory_pair_inner(s, w, tr.i, tr.j, tr.lam)) / se;
        worst_z = std::max(worst_z, zscore);
        if (zscore <= 3.0) ++within;
    }
    const auto curve = theory_avg_sim(s, w, t, sim_lams);
    double worst_sim = 0.0;
    for (size_t k = 0; k < sim_lams.size(); ++k)
        worst_sim = std::max(worst_sim, std::abs(curve.values[k] - sim_sum[k] / n));
    return {within == 20 && worst_sim <= 0.02,
            std::to_string(within) + "/20 triples within 3 SE (max z " + fmt("%.2f", worst_z) + "), avg_sim gap " +
                fmt("%.4f", worst_sim)};
}

// ---- 2. monotonicity ------------------------------------------------------------

bool cross_positive(const TokenStats& s, const Matrix& w, int t, const std::vector<double>& grid) {
    for (double lam : grid)
        for (int i = 1; i <= t; ++i)
            for (int j = i + 1; j <= t; ++j)
                if (!(theory_pair_inner(s, w, i, j, lam) > 0.0)) return false;
    return true;
}

Outcome monotonicity() {
    const int d = 6, t = 8;
    const auto grid = default_lambda_grid(21);
    std::mt19937_64 rng(202);
    int inc = 0, dec = 0, bad = 0;
    for (int rep = 0; rep < 5000 && inc < 50; ++rep) {
        auto s = random_stats(rng, d, 2.0);
        Matrix w = 0.3 * randn(rng, d, d) + 0.3 * Matrix::Identity(d, d);
        if (!trace_conditions(s, w).cond_i || !cross_positive(s, w, t, grid)) continue;
        ++inc;
        auto c = theory_avg_sim(s, w, t, grid);
        for (size_t k = 1; k < c.values.size(); ++k) bad += !(c.values[k] > c.values[k - 1]);
    }
    std::uniform_real_distribution<double> cs(0.05, 0.3);
    for (int rep = 0; rep < 5000 && dec < 20; ++rep) {
        auto s = random_stats(rng, d, 2.0);
        Matrix w = -cs(rng) * s.b();
        if (!trace_conditions(s, w).cond_ii || !cross_positive(s, w, t, grid)) continue;
        ++dec;
        auto c = theory_avg_sim(s, w, t, grid);
        for (size_t k = 1; k < c.values.size(); ++k) bad += !(c.values[k] < c.values[k - 1]);
    }
    return {inc == 50 && dec == 20 && bad == 0,
            std::to_string(inc) + " increasing, " + std::to_string(dec) + " decreasing, " + std::to_string(bad) +
                " violations"};
}

// ---- 3. sink representability vs an LP over W -------------------------------------

// max t s.t. t <= <G_ji, W> for all j in J, i = 1..T, |W|_inf <= 1, W = P - N.
bool lp_in_w(const TokenMatrix& z, const std::vector<int>& j_set) {
    const Eigen::Index d = z.rows(), t = z.cols() - 1, nw = d * d, nv = 2 * nw + 1;
    std::vector<Vector> rows;
    for (int j : j_set)
        for (Eigen::Index i = 1; i <= t; ++i) {
            Matrix g = z.col(j) * (z.col(0) - z.col(i)).transpose();
            const double nrm = g.norm();
            if (nrm > 0.0) g /= nrm;
            rows.push_back(Eigen::Map<const Vector>(g.data(), nw));
        }
    const Eigen::Index m = static_cast<Eigen::Index>(rows.size());
    Matrix a = Matrix::Zero(m + nv, nv);
    Vector b = Vector::Zero(m + nv), c = Vector::Zero(nv);
    for (Eigen::Index r = 0; r < m; ++r) {
        a.block(r, 0, 1, nw) = -rows[static_cast<size_t>(r)].transpose();
        a.block(r, nw, 1, nw) = rows[static_cast<size_t>(r)].transpose();
        a(r, nv - 1) = 1.0;
    }
    a.bottomRows(nv).setIdentity();
    b.tail(nv).setOnes();
    c(nv - 1) = 1.0;
    auto res = lp_maximize(a, b, c);
    return res.objective > 1e-7;
}

Outcome prop1_equivalence() {
    std::mt19937_64 rng(303);
    std::uniform_real_distribution<double> ud(0.0, 1.0);
    int agree = 0, rep_count = 0;
    const int n = 500;
    for (int rep = 0; rep < n; ++rep) {
        const int d = 2 + static_cast<int>(rng() % 5), t = 1 + static_cast<int>(rng() % 4);
        const int jn = 1 + static_cast<int>(rng() % static_cast<unsigned>(std::min(3, t)));
        std::vector<int> all(static_cast<size_t>(t));
        std::iota(all.begin(), all.end(), 1);
        std::shuffle(all.begin(), all.end(), rng);
        std::vector<int> j_set(all.begin(), all.begin() + jn);
        std::sort(j_set.begin(), j_set.end());
        Matrix z = randn(rng, d, t + 1);
        switch (rep % 4) {
            case 1: {  // BOS inside the hull of the context
                Vector wts(t);
                for (int k = 0; k < t; ++k) wts(k) = ud(rng) + 1e-3;
                z.col(0) = z.rightCols(t) * (wts / wts.sum());
                break;
            }
            case 2:  // BOS duplicated in the context
                z.col(0) = z.col(1 + static_cast<int>(rng() % static_cast<unsigned>(t)));
                break;
            case 3:  // opposing queries
                if (jn >= 2) z.col(j_set[1]) = -ud(rng) * z.col(j_set[0]) - 0.1 * z.col(j_set[0]);
                break;
            default:
                break;
        }
        const bool got = sink_representable(z, j_set).representable;
        rep_count += got;
        agree += got == lp_in_w(z, j_set);
    }
    return {agree == n, std::to_string(agree) + "/" + std::to_string(n) + " agree (" + std::to_string(rep_count) +
                            " representable)"};
}

// ---- 4. backcopy construction -------------------------------------------------------

Outcome backcopy_exactness() {
    int cases = 0, ok = 0;
    double worst_err = 0.0, worst_ratio = 0.0;
    for (int t : {4, 8, 16, 24, 32})
        for (int d : {t + 12, 64}) {
            auto spec = make_backcopy_spec(d, t, 5, 5, 40.0);
            VerifyOptions opts;
            opts.convention = CostConvention::ProductNuclear;
            auto rep = verify_construction(backcopy_sink_weights(spec), gen_backcopy(spec, 16, 7), AttentionMode::hard(40.0), opts);
            const double lhs = thm2_bounds(spec).lhs;
            const double err_ratio = rep.max_output_err / (1e-9 * std::sqrt(d));
            worst_err = std::max(worst_err, err_ratio);
            worst_ratio = std::max(worst_ratio, rep.cost.total / lhs);
            ++cases;
            ok += err_ratio <= 1.0 && rep.cost.total <= lhs * (1.0 + 1e-6) && rep.unresolved_rows == 0;
        }
    return {ok == cases, std::to_string(ok) + "/" + std::to_string(cases) + " sizes, max err/(1e-9 sqrt d) " +
                             fmt("%.3g", worst_err) + ", max cost/LHS " + fmt("%.4f", worst_ratio)};
}

// ---- 5. generic bounds ------------------------------------------------------------------

Outcome generic_bounds() {
    std::mt19937_64 rng(505);
    std::uniform_real_distribution<double> ud(0.0, 1.0);
    int violations = 0, eq4_cases = 0;
    double worst_err = 0.0;
    for (int rep = 0; rep < 100; ++rep) {
        GenericParams gp;
        gp.C = 1 + static_cast<int>(rng() % 4);
        gp.d = rep % 2 == 0 ? 100 : 64;
        gp.kappa = 5.0 + 55.0 * ud(rng);
        gp.delta = 0.05 + 0.45 * ud(rng);
        gp.phi = ud(rng) * std::min(0.05, 0.125 / gp.C);
        gp.eps_tol = 0.05 + 0.2 * ud(rng);
        gp.dormants_per_group.clear();
        for (int c = 0; c < gp.C; ++c) gp.dormants_per_group.push_back(2 + static_cast<int>(rng() % 4));
        gp.frames = rep % 3 == 0 ? FrameKind::RandomOrthogonal : FrameKind::StandardBasis;
        gp.seed = 1000 + static_cast<std::uint64_t>(rep);
        auto s = make_generic_spec(gp);
        s.check_theorem_constraints();
        auto data = gen_generic(s, 8, 11 + static_cast<std::uint64_t>(rep));
        auto geo = task_geometry(s, data);
        auto b = thmE2_bounds(s, geo);
        VerifyOptions vo;
        vo.task = TaskKind::Generic;
        vo.eps_tol = gp.eps_tol;
        vo.pattern = TargetPattern::Sink;
        auto sink = verify_construction(generic_sink_weights(s), data, AttentionMode::hard(gp.kappa), vo);
        vo.pattern = TargetPattern::Diagonal;
        auto diag = verify_construction(generic_diag_weights(s, geo), data, AttentionMode::hard(gp.kappa), vo);
        worst_err = std::max({worst_err, sink.max_output_err, diag.max_output_err});
        bool ok = sink.cost.total <= b.u_sink && sink.cost.total >= b.l_sink;
        ok = ok && diag.cost.total <= b.u_diag && diag.cost.total >= b.l_diag;
        if (b.eq4_holds) {
            ++eq4_cases;
            ok = ok && sink.cost.total < diag.cost.total;
        }
        violations += !ok;
    }
    return {violations == 0, std::to_string(violations) + " violations over 100 specs (" + std::to_string(eq4_cases) +
                                 " with the sink condition), max output err " + fmt("%.2g", worst_err)};
}

// ---- 6, 7. training sweeps -----------------------------------------------------------

Outcome fig4_left() {
    BackcopySweep sw;
    std::vector<double> slopes;
    for (auto pat : {TargetPattern::Sink, TargetPattern::Diagonal}) {
        auto pts = sweep_backcopy(sw, pat);
        std::vector<double> xs, ys;
        for (const auto& p : pts) {
            xs.push_back(p.T);
            ys.push_back(p.cost);
        }
        slopes.push_back(loglog_slope(xs, ys));
    }
    return {std::abs(slopes[0] - 1.0) <= 0.25 && std::abs(slopes[1] - 1.5) <= 0.25,
            "sink slope " + fmt("%.3f", slopes[0]) + ", diag slope " + fmt("%.3f", slopes[1])};
}

Outcome fig4_right() {
    GenericSweep sw;
    sw.params.d = 100;
    sw.params.C = 3;
    sw.params.T = 50;
    sw.params.phi = 0.0;
    sw.params.kappa = 40.0;
    sw.base.steps = 1500;
    auto diag = sweep_generic(sw, TargetPattern::Diagonal);
    std::vector<double> lx, ly;
    for (const auto& p : diag) {
        lx.push_back(std::log(p.x));
        ly.push_back(std::log(p.cost));
    }
    const double r = pearson(lx, ly);
    auto sink = sweep_generic(sw, TargetPattern::Sink);
    std::vector<double> sc;
    for (const auto& p : sink) sc.push_back(p.cost);
    const double mean = std::accumulate(sc.begin(), sc.end(), 0.0) / static_cast<double>(sc.size());
    double var = 0.0;
    for (double v : sc) var += (v - mean) * (v - mean);
    const double cv = std::sqrt(var / static_cast<double>(sc.size())) / mean;
    const auto [lo, hi] = std::minmax_element(sc.begin(), sc.end());
    return {r >= 0.9 && cv <= 0.2, "pearson " + fmt("%.4f", r) + ", sink cost std/mean " + fmt("%.3f", cv) +
                                       " (range/mean " + fmt("%.3f", (*hi - *lo) / mean) + ")"};
}

// ---- 8. anti-oversmoothing ------------------------------------------------------------

Outcome anti_oversmoothing() {
    const int d = 16, t = 8;
    double tok = 0.0, drift = 0.0, cos_err = 0.0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        std::mt19937_64 rng(800 + seed);
        Matrix x = randn(rng, d, t);
        const Matrix z0 = rms_norm(x);
        const double rho0 = avg_cos_sim(x);
        const Matrix w = anti_smoothing_wvo(x, 0.5);
        const auto a = uniform_causal(t);
        for (int layer = 0; layer < 50; ++layer) x = attention_only_step(x, w, a);
        tok = std::max(tok, (rms_norm(x) - z0).colwise().norm().maxCoeff());
        drift = std::max(drift, std::abs(avg_cos_sim(x) - rho0));

        Matrix y = randn(rng, d, t);
        auto up = span_preserving_update(y, oracles::random_orthogonal(rng, t), oracles::random_orthogonal(rng, d - t), 1.5);
        cos_err = std::max(cos_err, (pairwise_cos(up.x_next) - pairwise_cos(y)).cwiseAbs().maxCoeff());
    }
    return {tok <= 1e-6 && drift <= 1e-6 && cos_err <= 1e-9,
            "token dev " + fmt("%.2e", tok) + ", avg_cos drift " + fmt("%.2e", drift) + ", cosine err " +
                fmt("%.2e", cos_err)};
}

// ---- 9. gradients ------------------------------------------------------------------------

Outcome gradients() {
    double worst = 0.0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) worst = std::max(worst, grad_check::run(seed, 8, 6).max_rel_err);
    return {worst <= 1e-4, "max relative error " + fmt("%.2e", worst)};
}

// ---- 10. metric identities ---------------------------------------------------------------

MassProfile profile(double sink, double diag, double lower1) {
    MassProfile p;
    p.sink_mass = sink;
    p.diag_mass = diag;
    p.lower1_mass = lower1;
    p.other_mass = 1.0 - sink - diag - lower1;
    return p;
}

Outcome metric_identities() {
    bool ok = true;
    for (int t : {2, 3, 5, 8, 16, 64}) {
        ok = ok && std::abs(uniformity_coefficient(uniform_causal(t)) - 1.0) <= 1e-12;
        ok = ok && std::abs(uniformity_coefficient(AttentionMap{Matrix::Identity(t, t)}) - 1.0 / t) <= 1e-15;
    }
    Matrix bos = Matrix::Zero(4, 4);
    bos.col(0).setOnes();
    ok = ok && mass_profile(AttentionMap{bos}, false).sink_mass == 1.0;
    ok = ok && mass_profile(AttentionMap{Matrix::Identity(4, 4)}).diag_mass == 1.0;
    ok = ok && std::abs(mass_profile(uniform_causal(3), false).sink_mass - (1.0 + 0.5 + 1.0 / 3.0) / 3.0) <= 1e-15;
    ok = ok && classify(profile(0.5, 0.0, 0.0)).label == Pattern::Sink;
    ok = ok && classify(profile(0.40, 0.0, 0.0)).label == Pattern::Sink;
    ok = ok && classify(profile(0.55, 0.0, 0.10)).label == Pattern::SinkLowerDiag;
    ok = ok && classify(profile(0.0, 0.45, 0.0)).label == Pattern::Diagonal;
    ok = ok && classify(profile(0.2, 0.2, 0.2)).label == Pattern::Other;
    return {ok, ok ? "uniformity and mass/classify examples reproduced" : "mismatch"};
}

}  // namespace

int main(int argc, char** argv) {
    std::vector<size_t> only;
    for (int k = 1; k < argc; ++k) only.push_back(std::stoul(argv[k]));
    const std::vector<std::pair<std::string, std::function<Outcome()>>> checks{
        {"monte-carlo closed form", monte_carlo},
        {"monotonicity", monotonicity},
        {"sink representability vs LP", prop1_equivalence},
        {"backcopy construction", backcopy_exactness},
        {"generic cost bounds", generic_bounds},
        {"cost vs T slopes", fig4_left},
        {"cost vs r_eff/delta^2", fig4_right},
        {"anti-oversmoothing", anti_oversmoothing},
        {"gradient check", gradients},
        {"metric identities", metric_identities},
    };
    int failed = 0;
    for (size_t k = 0; k < checks.size(); ++k) {
        if (!only.empty() && std::find(only.begin(), only.end(), k + 1) == only.end()) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = checks[k].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        failed += !o.pass;
        std::printf("%s [%zu] %s: %s (%.1fs)\n", o.pass ? "PASS" : "FAIL", k + 1, checks[k].first.c_str(), o.detail.c_str(), secs);
        std::fflush(stdout);
    }
    return failed == 0 ? 0 : 1;
}
