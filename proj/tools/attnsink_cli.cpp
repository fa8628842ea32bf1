#include "attnsink/constructions.hpp"
#include "attnsink/dump.hpp"
#include "attnsink/head_patterns.hpp"
#include "attnsink/oversmoothing.hpp"
#include "attnsink/report.hpp"
#include "attnsink/sink_geometry.hpp"
#include "attnsink/tasks.hpp"
#include "attnsink/train.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iomanip>
#include <iostream>
#include <random>
#include <sstream>

using namespace attnsink;

namespace {

struct Common {
    std::string out;
    std::uint64_t seed = 0;
};

std::string out_dir(const Common& c) {
    if (c.out.empty()) return resolve_output_dir("attnsink_out");
    std::filesystem::create_directories(c.out);
    return c.out;
}

std::string join_path(const std::string& dir, const std::string& file) { return (std::filesystem::path(dir) / file).string(); }

std::string hash_args(int argc, char** argv) {
    std::string s;
    for (int i = 1; i < argc; ++i) s += std::string(argv[i]) + " ";
    return config_hash(s);
}

// "8..64" keeps the default T grid inside the range, "8,16,32" is explicit.
std::vector<int> parse_t_list(const std::string& spec, const std::vector<int>& grid) {
    std::vector<int> out;
    auto dots = spec.find("..");
    if (dots != std::string::npos) {
        const int lo = std::stoi(spec.substr(0, dots)), hi = std::stoi(spec.substr(dots + 2));
        if (lo > hi) throw InputError("empty T range " + spec);
        for (int t : grid)
            if (t >= lo && t <= hi) out.push_back(t);
    } else {
        std::stringstream ss(spec);
        std::string tok;
        while (std::getline(ss, tok, ',')) out.push_back(std::stoi(tok));
    }
    if (out.empty()) throw InputError("no T values selected by " + spec);
    for (int t : out)
        if (t < 2) throw InputError("T must be at least 2");
    return out;
}

Thresholds parse_thresholds(const std::string& s) {
    if (s == "default") return {};
    Thresholds th;
    std::stringstream ss(s);
    std::string tok;
    std::vector<double> v;
    while (std::getline(ss, tok, ',')) v.push_back(std::stod(tok));
    if (v.size() != 4) throw InputError("thresholds must be 'default' or sink,diag,dual_joint,dual_share");
    for (double x : v)
        if (!(x >= 0.0 && x <= 1.0)) throw InputError("thresholds must lie in [0,1]");
    th.sink = v[0];
    th.diag = v[1];
    th.dual_joint = v[2];
    th.dual_share = v[3];
    return th;
}

TargetPattern parse_pattern(const std::string& p) { return p == "sink" ? TargetPattern::Sink : TargetPattern::Diagonal; }

std::ofstream open_csv(const std::string& path, const std::string& hash) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open " + path);
    os << "# config_hash=" << hash << "\n";
    os << std::setprecision(12);
    return os;
}

// ---- dump-driven subcommands ------------------------------------------------

int run_analyze(const std::string& dump, const Common& c, const std::string& hash) {
    DumpReader rd(dump);
    const auto path = join_path(out_dir(c), "analyze.csv");
    auto os = open_csv(path, hash);
    os << "layer,head,sequence,avg_cos_sim,uniformity,sink_mass,diag_mass,lower1_mass,other_mass\n";
    for (auto [l, h] : list_heads(rd)) {
        auto hd = load_head(rd, l, h);
        const size_t n = std::max(hd.attn.size(), hd.z.size());
        for (size_t s = 0; s < n; ++s) {
            os << l << "," << h << "," << s << ",";
            if (s < hd.z.size()) os << avg_cos_sim(rms_norm(hd.z[s]));
            os << ",";
            if (s < hd.attn.size()) {
                auto mp = mass_profile(hd.attn[s]);
                os << uniformity_coefficient(hd.attn[s]) << "," << mp.sink_mass << "," << mp.diag_mass << ","
                   << mp.lower1_mass << "," << mp.other_mass;
            } else {
                os << ",,,,";
            }
            os << "\n";
        }
    }
    std::cout << "wrote " << path << "\n";
    return 0;
}

int run_classify(const std::string& dump, const std::string& thresholds, const Common& c, const std::string& hash) {
    const Thresholds th = parse_thresholds(thresholds);
    DumpReader rd(dump);
    std::vector<CensusRow> rows;
    for (auto [l, h] : list_heads(rd)) {
        auto hd = load_head(rd, l, h);
        for (size_t s = 0; s < hd.attn.size(); ++s) rows.push_back({l, h, static_cast<int>(s), classify(mass_profile(hd.attn[s]), th)});
    }
    const auto dir = out_dir(c);
    write_census_csv(join_path(dir, "census.csv"), rows, hash);
    auto sum = summarize(rows);
    nlohmann::json j = {{"rows", sum.rows},
                        {"sink", sum.sink},
                        {"diagonal", sum.diagonal},
                        {"sink_lower_diag", sum.dual},
                        {"other", sum.other},
                        {"config_hash", hash}};
    write_json(join_path(dir, "census_summary.json"), j);
    std::cout << "heads=" << rows.size() << " sink=" << sum.sink << " diagonal=" << sum.diagonal << " dual=" << sum.dual
              << " other=" << sum.other << "\n";
    return 0;
}

int run_geometry(const std::string& dump, bool bos, bool value_rank, const Common& c, const std::string& hash) {
    if (!bos && !value_rank) throw InputError("geometry: pick --bos-alignment and/or --value-rank");
    DumpReader rd(dump);
    const auto dir = out_dir(c);
    std::ofstream qa, vr;
    if (bos) {
        qa = open_csv(join_path(dir, "bos_alignment.csv"), hash);
        qa << "layer,head,sequence,min,q1,median,q3,max\n";
    }
    if (value_rank) {
        vr = open_csv(join_path(dir, "value_rank.csv"), hash);
        vr << "layer,head,sequence,value_rank_ratio\n";
    }
    for (auto [l, h] : list_heads(rd)) {
        auto hd = load_head(rd, l, h, false);
        for (size_t s = 0; s < hd.z.size(); ++s) {
            if (bos) {
                auto st = bos_alignment_stats(hd.z[s]);
                qa << l << "," << h << "," << s << "," << st.min << "," << st.q1 << "," << st.median << "," << st.q3 << ","
                   << st.max << "\n";
            }
            if (value_rank && hd.wv) vr << l << "," << h << "," << s << "," << value_rank_profile(hd.z[s], *hd.wv) << "\n";
        }
    }
    std::cout << "wrote geometry CSVs to " << dir << "\n";
    return 0;
}

// ---- synthetic subcommands -------------------------------------------------

struct OversmoothArgs {
    std::string dump;
    int layer = -1, head = -1;
    int d = 16, T = 8, points = 21;
    double w_scale = 0.5;
};

int run_oversmooth(const OversmoothArgs& a, const Common& c, const std::string& hash) {
    TokenStats stats;
    Matrix w;
    int t = a.T;
    if (!a.dump.empty()) {
        DumpReader rd(a.dump);
        auto heads = list_heads(rd);
        if (heads.empty()) throw InputError("oversmooth: dump has no head records");
        int l = a.layer >= 0 ? a.layer : heads.front().first, h = a.head >= 0 ? a.head : heads.front().second;
        auto hd = load_head(rd, l, h, false);
        if (hd.z.empty() || !hd.wv || !hd.wo) throw InputError("oversmooth: head needs Z, Wv and Wo records");
        stats = estimate_stats(hd.z);
        w = *hd.wo * *hd.wv;
        t = static_cast<int>(hd.z.front().cols()) - 1;
    } else {
        if (a.d < 1 || a.T < 1) throw InputError("oversmooth: d and T must be positive");
        std::mt19937_64 rng(c.seed);
        std::normal_distribution<double> n01;
        auto randn = [&](int r, int cc) { return Matrix(Matrix::NullaryExpr(r, cc, [&]() { return n01(rng); })); };
        Matrix gv = randn(a.d, a.d), gc = randn(a.d, a.d);
        stats.sigma_c = 0.1 * gc * gc.transpose() / a.d;
        stats.sigma_v = stats.sigma_c + 0.5 * gv * gv.transpose() / a.d;
        stats.z_bar = randn(a.d, 1);
        stats.z_bar *= 0.5 / stats.z_bar.norm();
        stats.beta = 1.0;
        w = a.w_scale * randn(a.d, a.d) / std::sqrt(a.d);
    }
    auto curve = theory_avg_sim(stats, w, t, default_lambda_grid(a.points));
    auto cond = trace_conditions(stats, w);
    const auto dir = out_dir(c);
    write_curve_csv(join_path(dir, "oversmooth_curve.csv"), curve, hash);
    nlohmann::json j = {{"cond_i", cond.cond_i},         {"cond_ii", cond.cond_ii},
                        {"beta_tr_bw", cond.beta_tr_bw}, {"tr_bwtw", cond.tr_bwtw},
                        {"lambda_star", cond.lambda_star ? nlohmann::json(*cond.lambda_star) : nlohmann::json(nullptr)},
                        {"config_hash", hash}};
    write_json(join_path(dir, "oversmooth_conditions.json"), j);
    std::cout << "cond_i=" << cond.cond_i << " cond_ii=" << cond.cond_ii << "\n";
    return 0;
}

struct TaskArgs {
    std::string task = "backcopy", pattern = "sink";
    int d = 0, T = 16, n_dormant = 5, n_copy = 5;
    double kappa = 40.0;
    int C = 3, dormants = 4, noise_rank = 0, seqs = 64;
    double delta = 0.3, phi = 0.0, eps_tol = 0.1;
};

BackcopySpec backcopy_from(const TaskArgs& a, std::uint64_t seed) {
    const int d = a.d > 0 ? a.d : a.T + a.n_dormant + a.n_copy + 2;
    return make_backcopy_spec(d, a.T, a.n_dormant, a.n_copy, a.kappa, FrameKind::StandardBasis, seed);
}

GenericSpec generic_from(const TaskArgs& a, std::uint64_t seed) {
    GenericParams p;
    p.d = a.d > 0 ? a.d : 100;
    p.C = a.C;
    p.T = a.T;
    p.phi = a.phi;
    p.delta = a.delta;
    p.eps_tol = a.eps_tol;
    p.kappa = a.kappa;
    p.dormants_per_group.assign(static_cast<size_t>(a.C), a.dormants);
    p.noise_rank = a.noise_rank;
    p.seed = seed;
    return make_generic_spec(p);
}

int run_construct(const TaskArgs& a, const Common& c, const std::string& hash) {
    const auto pat = parse_pattern(a.pattern);
    BlockWeights w;
    std::vector<LabeledSequence> data;
    VerifyOptions vo;
    vo.pattern = pat;
    nlohmann::json bounds;
    if (a.task == "backcopy") {
        if (pat != TargetPattern::Sink) throw InputError("construct: the backcopy task only has a sink construction");
        auto spec = backcopy_from(a, c.seed);
        w = backcopy_sink_weights(spec);
        data = gen_backcopy(spec, a.seqs, c.seed + 1);
        vo.task = TaskKind::Backcopy;
        vo.convention = CostConvention::ProductNuclear;
        auto b = thm2_bounds(spec);
        vo.cost_upper = b.lhs;
        bounds = to_json(b);
    } else {
        auto spec = generic_from(a, c.seed);
        data = gen_generic(spec, a.seqs, c.seed + 1);
        auto geo = task_geometry(spec, data);
        w = pat == TargetPattern::Sink ? generic_sink_weights(spec) : generic_diag_weights(spec, geo);
        auto b = thmE2_bounds(spec, geo);
        vo.task = TaskKind::Generic;
        vo.eps_tol = a.eps_tol;
        vo.convention = CostConvention::Variational;
        vo.cost_upper = pat == TargetPattern::Sink ? b.u_sink : b.u_diag;
        bounds = to_json(b);
    }
    auto rep = verify_construction(w, data, AttentionMode::hard(a.kappa), vo);
    nlohmann::json j = {{"task", a.task},
                        {"pattern", a.pattern},
                        {"max_output_err", rep.max_output_err},
                        {"min_attention_margin", rep.min_attention_margin},
                        {"bounds_respected", rep.bounds_respected},
                        {"unresolved_rows", rep.unresolved_rows},
                        {"cost", to_json(rep.cost)},
                        {"bounds", bounds},
                        {"config_hash", hash}};
    write_json(join_path(out_dir(c), "construct.json"), j);
    std::cout << "max_output_err=" << rep.max_output_err << " cost=" << rep.cost.total
              << " bounds_respected=" << rep.bounds_respected << "\n";
    return 0;
}

int run_bounds(const TaskArgs& a, double c1, const Common& c, const std::string& hash) {
    nlohmann::json j;
    if (a.task == "backcopy") {
        j = to_json(thm2_bounds(backcopy_from(a, c.seed), c1));
    } else {
        auto spec = generic_from(a, c.seed);
        auto data = gen_generic(spec, a.seqs, c.seed + 1);
        auto geo = task_geometry(spec, data);
        j = to_json(thmE2_bounds(spec, geo));
        j["r_eff"] = geo.r_eff;
        j["delta_diag"] = std::isfinite(geo.delta_diag) ? nlohmann::json(geo.delta_diag) : nlohmann::json("inf");
        j["r_eta"] = geo.r_eta;
    }
    j["config_hash"] = hash;
    write_json(join_path(out_dir(c), "bounds.json"), j);
    std::cout << j.dump(2) << "\n";
    return 0;
}

struct TrainArgs {
    int steps = 4000, batch = 16;
    double lr = 0.03, reg = 1e-3, hinge = 1000.0, margin = 4.0;
    int threads = 1;
};

TrainConfig train_config(const TaskArgs& a, const TrainArgs& t, std::uint64_t seed) {
    TrainConfig cfg;
    cfg.pattern = parse_pattern(a.pattern);
    cfg.steps = t.steps;
    cfg.batch = t.batch;
    cfg.lr = t.lr;
    cfg.reg_weight = t.reg;
    cfg.pattern_weight = t.hinge;
    cfg.kappa = t.margin;
    cfg.seed = seed;
    if (t.steps < 1 || t.batch < 1 || !(t.lr > 0.0)) throw InputError("train: steps, batch and lr must be positive");
    return cfg;
}

int run_train(const TaskArgs& a, const TrainArgs& t, const Common& c, const std::string& hash) {
    auto cfg = train_config(a, t, c.seed);
    if (a.task == "backcopy") {
        cfg.task = TaskKind::Backcopy;
        cfg.backcopy = backcopy_from(a, c.seed);
    } else {
        cfg.task = TaskKind::Generic;
        cfg.generic = generic_from(a, c.seed);
    }
    auto tr = train_block(cfg);
    const auto dir = out_dir(c);
    auto os = open_csv(join_path(dir, "train_trace.csv"), hash);
    os << "step,task_loss,reg_cost,compliance\n";
    for (size_t k = 0; k < tr.step.size(); ++k)
        os << tr.step[k] << "," << tr.task_loss[k] << "," << tr.reg_cost[k] << "," << tr.compliance[k] << "\n";
    nlohmann::json j = {{"final_cost", to_json(tr.final_cost)},
                        {"task_loss", tr.final_eval.task},
                        {"compliance", tr.final_eval.compliance},
                        {"min_margin", tr.final_eval.min_margin},
                        {"converged", tr.converged},
                        {"config_hash", hash}};
    write_json(join_path(dir, "train_final.json"), j);
    std::cout << "cost=" << tr.final_cost.raw_frobsq << " compliance=" << tr.final_eval.compliance
              << " converged=" << tr.converged << "\n";
    return 0;
}

int run_sweep(const TaskArgs& a, const TrainArgs& t, const std::string& t_spec, const std::vector<double>& deltas,
              const std::vector<int>& dormant_counts, const Common& c, const std::string& hash) {
    const auto pat = parse_pattern(a.pattern);
    std::vector<SweepPoint> pts;
    if (a.task == "backcopy") {
        BackcopySweep sw;
        sw.t_values = parse_t_list(t_spec, sw.t_values);
        sw.n_dormant = a.n_dormant;
        sw.n_copy = a.n_copy;
        sw.base = train_config(a, t, c.seed);
        sw.threads = t.threads;
        pts = sweep_backcopy(sw, pat);
    } else {
        GenericSweep sw;
        if (!deltas.empty()) sw.deltas = deltas;
        if (!dormant_counts.empty()) sw.dormant_counts = dormant_counts;
        sw.params = generic_from(a, c.seed).params;
        sw.base = train_config(a, t, c.seed);
        sw.threads = t.threads;
        pts = sweep_generic(sw, pat);
    }
    const auto path = join_path(out_dir(c), "sweep_" + a.task + "_" + a.pattern + ".csv");
    write_sweep_csv(path, pts, hash);
    std::vector<double> xs, ys;
    std::cout << std::setw(10) << "x" << std::setw(14) << "cost" << std::setw(12) << "compliance" << "\n";
    for (const auto& p : pts) {
        std::cout << std::setw(10) << p.x << std::setw(14) << p.cost << std::setw(12) << p.compliance << "\n";
        xs.push_back(p.x);
        ys.push_back(p.cost);
    }
    if (pts.size() >= 2) std::cout << "loglog slope=" << loglog_slope(xs, ys) << "\n";
    std::cout << "wrote " << path << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"attnsink: attention sink and oversmoothing analysis toolkit"};
    app.require_subcommand(1);
    Common common;
    app.add_option("--out", common.out, "output directory (default: $ATTNSINK_OUTPUT_DIR or ./attnsink_out)");
    app.add_option("--seed", common.seed, "random seed");

    std::string dump, thresholds = "default", t_spec = "8..64";
    bool bos = false, vrank = false;
    double c1 = 0.0;
    std::vector<double> deltas;
    std::vector<int> dormant_counts;
    OversmoothArgs os_args;
    TaskArgs task;
    TrainArgs tr;

    auto* analyze = app.add_subcommand("analyze", "per-head similarity, uniformity and mass profiles from a dump");
    analyze->add_option("--dump", dump, "ATND file")->required()->check(CLI::ExistingFile);

    auto* cls = app.add_subcommand("classify", "head pattern census from a dump");
    cls->add_option("--dump", dump, "ATND file")->required()->check(CLI::ExistingFile);
    cls->add_option("--thresholds", thresholds, "'default' or sink,diag,dual_joint,dual_share");

    auto* geo = app.add_subcommand("geometry", "BOS alignment quartiles and value rank from a dump");
    geo->add_option("--dump", dump, "ATND file")->required()->check(CLI::ExistingFile);
    geo->add_flag("--bos-alignment", bos, "cosine of each token with BOS");
    geo->add_flag("--value-rank", vrank, "rank(W_V Z) / rank(Z)");

    auto* over = app.add_subcommand("oversmooth", "closed-form similarity curve and trace conditions");
    over->add_option("--dump", os_args.dump, "estimate stats from a dumped head")->check(CLI::ExistingFile);
    over->add_option("--layer", os_args.layer);
    over->add_option("--head", os_args.head);
    over->add_option("--d", os_args.d, "synthetic dimension");
    over->add_option("--T", os_args.T, "sequence length");
    over->add_option("--points", os_args.points, "lambda grid size")->check(CLI::Range(2, 10001));
    over->add_option("--w-scale", os_args.w_scale);

    auto add_task = [&](CLI::App* sc, bool with_kappa) {
        sc->add_option("--task", task.task)->check(CLI::IsMember({"backcopy", "generic"}));
        sc->add_option("--pattern", task.pattern)->check(CLI::IsMember({"sink", "diag"}));
        sc->add_option("--d", task.d, "model dimension (default from task)");
        sc->add_option("--n-dormant", task.n_dormant)->check(CLI::PositiveNumber);
        sc->add_option("--n-copy", task.n_copy)->check(CLI::PositiveNumber);
        sc->add_option("--C", task.C, "groups (generic)")->check(CLI::PositiveNumber);
        sc->add_option("--dormants", task.dormants, "dormant tokens per group (generic)")->check(CLI::PositiveNumber);
        sc->add_option("--delta", task.delta)->check(CLI::Range(0.0, 1.0));
        sc->add_option("--phi", task.phi)->check(CLI::Range(0.0, 1.0));
        sc->add_option("--eps-tol", task.eps_tol)->check(CLI::Range(0.0, 1.0));
        sc->add_option("--noise-rank", task.noise_rank)->check(CLI::NonNegativeNumber);
        sc->add_option("--seqs", task.seqs, "sequences for verification / geometry")->check(CLI::PositiveNumber);
        if (with_kappa) sc->add_option("--kappa", task.kappa, "hard-attention margin");
    };
    auto add_train = [&](CLI::App* sc) {
        sc->add_option("--steps", tr.steps);
        sc->add_option("--batch", tr.batch);
        sc->add_option("--lr", tr.lr);
        sc->add_option("--reg", tr.reg, "weight decay on the raw weights");
        sc->add_option("--hinge", tr.hinge, "pattern margin penalty weight");
        sc->add_option("--margin", tr.margin, "target logit margin");
        sc->add_option("--threads", tr.threads)->check(CLI::PositiveNumber);
    };

    auto* con = app.add_subcommand("construct", "explicit weight construction, verified in hard mode");
    add_task(con, true);
    con->add_option("--T", task.T)->check(CLI::Range(2, 100000));

    auto* bnd = app.add_subcommand("bounds", "cost bounds for a task");
    add_task(bnd, true);
    bnd->add_option("--T", task.T)->check(CLI::Range(2, 100000));
    bnd->add_option("--c1", c1, "MLP constant (backcopy); 0 selects the smallest admissible value");

    auto* trn = app.add_subcommand("train", "train one block on a task");
    add_task(trn, false);
    add_train(trn);
    trn->add_option("--T", task.T)->check(CLI::Range(2, 100000));

    auto* swp = app.add_subcommand("sweep", "training sweep over T (backcopy) or delta and dormant counts (generic)");
    add_task(swp, false);
    add_train(swp);
    swp->add_option("--T", t_spec, "backcopy: lo..hi or a comma list");
    swp->add_option("--deltas", deltas, "generic: delta values")->delimiter(',');
    swp->add_option("--dormant-counts", dormant_counts, "generic: dormant tokens per group")->delimiter(',');
    swp->add_option("--generic-T", task.T, "generic: sequence length");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        std::cerr << app.help();
        return 2;
    }

    const std::string hash = hash_args(argc, argv);
    try {
        if (*analyze) return run_analyze(dump, common, hash);
        if (*cls) return run_classify(dump, thresholds, common, hash);
        if (*geo) return run_geometry(dump, bos, vrank, common, hash);
        if (*over) return run_oversmooth(os_args, common, hash);
        if (*con) return run_construct(task, common, hash);
        if (*bnd) return run_bounds(task, c1, common, hash);
        if (*trn) return run_train(task, tr, common, hash);
        if (*swp) {
            if (task.task == "generic" && swp->count("--generic-T") == 0) task.T = 50;
            return run_sweep(task, tr, t_spec, deltas, dormant_counts, common, hash);
        }
    } catch (const InputError& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return 2;
    } catch (const DumpError& e) {
        std::cerr << "dump error (" << static_cast<int>(e.code()) << "): " << e.what() << "\n";
        return e.code() == DumpErrc::Io ? 1 : 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
