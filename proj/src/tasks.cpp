#include "attnsink/tasks.hpp"

#include <cmath>
#include <limits>
#include <random>

namespace attnsink {

namespace {

std::mt19937_64 sequence_rng(std::uint64_t seed, int index) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(index), 0x5eedu};
    return std::mt19937_64(seq);
}

Matrix frame(int d, int k, FrameKind kind, std::uint64_t seed) {
    if (kind == FrameKind::StandardBasis) return Matrix::Identity(d, d).leftCols(k);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    Matrix g(d, d);
    for (Eigen::Index j = 0; j < d; ++j)
        for (Eigen::Index i = 0; i < d; ++i) g(i, j) = n(rng);
    Eigen::HouseholderQR<Matrix> qr(g);
    Matrix q = qr.householderQ() * Matrix::Identity(d, d);
    return q.leftCols(k);
}

}  // namespace

// ---- backcopy --------------------------------------------------------------

Vector BackcopySpec::token(int t, int id) const {
    return std::sqrt(d / 2.0) * (h.col(id) + p.col(t));
}

void BackcopySpec::validate() const {
    if (T < 1 || n_dormant < 1 || n_copy < 0) throw InputError("BackcopySpec: invalid counts");
    if (d < T + n_dormant + n_copy + 2) throw InputError("BackcopySpec: d too small for orthonormal frames");
    require_shape(h, d, 1 + n_dormant + n_copy, "BackcopySpec h");
    require_shape(p, d, T + 1, "BackcopySpec p");
    Matrix f(d, h.cols() + p.cols());
    f << h, p;
    Matrix g = f.transpose() * f - Matrix::Identity(f.cols(), f.cols());
    if (g.cwiseAbs().maxCoeff() > 1e-10) throw InputError("BackcopySpec: frames are not orthonormal");
}

BackcopySpec make_backcopy_spec(int d, int T, int n_dormant, int n_copy, double kappa, FrameKind frames,
                                std::uint64_t seed) {
    if (T < 1 || n_dormant < 1 || n_copy < 0) throw InputError("make_backcopy_spec: invalid counts");
    const int k = 1 + n_dormant + n_copy + T + 1;
    if (d < k) throw InputError("make_backcopy_spec: d = " + std::to_string(d) + " too small, need " + std::to_string(k));
    BackcopySpec s;
    s.d = d;
    s.T = T;
    s.n_dormant = n_dormant;
    s.n_copy = n_copy;
    s.kappa = kappa;
    s.frames = frames;
    Matrix f = frame(d, k, frames, seed);
    s.h = f.leftCols(1 + n_dormant + n_copy);
    s.p = f.rightCols(T + 1);
    return s;
}

std::vector<LabeledSequence> gen_backcopy(const BackcopySpec& spec, int n_seqs, std::uint64_t seed) {
    spec.validate();
    if (n_seqs < 1) throw InputError("gen_backcopy: n_seqs must be positive");
    std::vector<LabeledSequence> out;
    out.reserve(static_cast<size_t>(n_seqs));
    const int n_tok = spec.n_dormant + spec.n_copy;
    for (int s = 0; s < n_seqs; ++s) {
        auto rng = sequence_rng(seed, s);
        std::uniform_int_distribution<int> any(1, n_tok);
        std::uniform_int_distribution<int> dorm(1, spec.n_dormant);
        LabeledSequence seq;
        seq.inputs.resize(spec.d, spec.T + 1);
        seq.targets.resize(spec.d, spec.T + 1);
        seq.inputs.col(0) = spec.token(0, 0);
        seq.targets.col(0) = seq.inputs.col(0);
        seq.roles.push_back(Role::Bos);
        seq.groups.push_back(-1);
        seq.token_ids.push_back(0);
        for (int t = 1; t <= spec.T; ++t) {
            int id = t == 1 ? dorm(rng) : any(rng);
            seq.inputs.col(t) = spec.token(t, id);
            seq.token_ids.push_back(id);
            seq.groups.push_back(-1);
            if (spec.is_dormant(id)) {
                seq.roles.push_back(Role::Dormant);
                seq.targets.col(t) = 2.0 * seq.inputs.col(t);
            } else {
                seq.roles.push_back(Role::CopyPaste);
                seq.targets.col(t) = seq.inputs.col(t) + seq.inputs.col(t - 1);
            }
        }
        out.push_back(std::move(seq));
    }
    return out;
}

// ---- generic -----------------------------------------------------------------

int GenericSpec::total_dormants() const {
    int n = 0;
    for (int k : params.dormants_per_group) n += k;
    return n;
}

void GenericSpec::check_theorem_constraints() const {
    const auto& p = params;
    if (2.0 * p.C * p.phi > 0.25 + 1e-15) throw InputError("constraint violated: 2 C phi <= 1/4");
    if (p.phi > 0.05 + 1e-15) throw InputError("constraint violated: phi <= 1/20");
    if (p.delta > 0.5 + 1e-15) throw InputError("constraint violated: delta <= 1/2");
    if (p.eps_tol < 0.05 - 1e-15 || p.eps_tol > 0.25 + 1e-15) throw InputError("constraint violated: eps in [1/20, 1/4]");
}

GenericSpec make_generic_spec(const GenericParams& params) {
    const int d = params.d, c = params.C;
    if (c < 1) throw InputError("make_generic_spec: need at least one group");
    if (static_cast<int>(params.dormants_per_group.size()) != c)
        throw InputError("make_generic_spec: dormants_per_group must have C entries");
    for (int k : params.dormants_per_group)
        if (k < 1) throw InputError("make_generic_spec: each group needs a dormant token");
    if (!(params.phi >= 0.0) || 2.0 * c * params.phi >= 1.0) throw InputError("make_generic_spec: need 2 C phi < 1");
    if (!(params.delta >= 0.0) || params.delta >= 1.0) throw InputError("make_generic_spec: delta must lie in [0,1)");
    if (params.T < 1) throw InputError("make_generic_spec: T must be positive");

    GenericSpec s;
    s.params = params;
    s.lambda_c = std::sqrt(1.0 - params.delta * params.delta);
    int n_dorm = s.total_dormants();
    const int m = 1 + 2 * c;
    const int noise_dims = params.noise_rank > 0 ? params.noise_rank : n_dorm;
    if (d < m + noise_dims) throw InputError("make_generic_spec: d too small for the special set plus noise directions");

    Matrix e = frame(d, m + noise_dims, params.frames, params.seed ^ 0x9e3779b97f4a7c15ULL);
    std::mt19937_64 rng(params.seed);
    std::uniform_real_distribution<double> unif(-1.0, 1.0);
    Matrix g = Matrix::Identity(m, m);
    if (params.phi > 0.0)
        for (int i = 0; i < m; ++i)
            for (int j = i + 1; j < m; ++j) g(i, j) = g(j, i) = params.phi * unif(rng);
    Eigen::LLT<Matrix> llt(g);
    if (llt.info() != Eigen::Success) throw InputError("make_generic_spec: Gram matrix not positive definite");
    Matrix r = llt.matrixU();
    const double sd = std::sqrt(static_cast<double>(d));
    s.special = sd * e.leftCols(m) * r;

    Matrix noise = e.rightCols(noise_dims);
    std::normal_distribution<double> normal(0.0, 1.0);
    int k = 0;
    s.eta.resize(static_cast<size_t>(c));
    s.dormant.resize(static_cast<size_t>(c));
    for (int grp = 0; grp < c; ++grp) {
        for (int i = 0; i < params.dormants_per_group[static_cast<size_t>(grp)]; ++i, ++k) {
            Vector dir;
            if (params.noise_rank > 0) {
                Vector coef(noise_dims);
                for (int q = 0; q < noise_dims; ++q) coef(q) = normal(rng);
                dir = noise * coef;
                dir.normalize();
            } else {
                dir = noise.col(k);
            }
            Vector eta = params.delta * sd * dir;
            s.eta[static_cast<size_t>(grp)].push_back(eta);
            s.dormant[static_cast<size_t>(grp)].push_back(s.lambda_c * s.dbar(grp) + eta);
        }
    }
    return s;
}

std::vector<LabeledSequence> gen_generic(const GenericSpec& spec, int n_seqs, std::uint64_t seed) {
    const auto& p = spec.params;
    if (n_seqs < 1) throw InputError("gen_generic: n_seqs must be positive");
    const int c_count = p.C, t_len = p.T;
    std::vector<std::vector<std::pair<int, int>>> layout(static_cast<size_t>(n_seqs));  // (group, member or -1)

    // coverage blocks: members forward then backward
    std::vector<int> fill(static_cast<size_t>(n_seqs), 0);
    std::vector<std::vector<std::pair<int, int>>> forced(static_cast<size_t>(n_seqs));
    if (p.cover_pairs) {
        for (int grp = 0; grp < c_count; ++grp) {
            int n = p.dormants_per_group[static_cast<size_t>(grp)];
            if (n < 2) continue;
            auto s = static_cast<size_t>(grp % n_seqs);
            if (fill[s] + 2 * n > t_len) throw InputError("gen_generic: T too short to cover all dormant pairs");
            for (int i = 0; i < n; ++i) forced[s].push_back({grp, i});
            for (int i = n - 1; i >= 0; --i) forced[s].push_back({grp, i});
            fill[s] += 2 * n;
        }
    }

    std::vector<LabeledSequence> out;
    out.reserve(static_cast<size_t>(n_seqs));
    for (int s = 0; s < n_seqs; ++s) {
        auto rng = sequence_rng(seed, s);
        std::uniform_int_distribution<int> grp_dist(0, c_count - 1);
        std::bernoulli_distribution dorm_dist(p.p_dormant);
        std::uniform_real_distribution<double> coef(1.0 - p.eps_tol, 1.0 + p.eps_tol);
        auto& lay = layout[static_cast<size_t>(s)];
        lay = forced[static_cast<size_t>(s)];
        std::vector<int> last_member(static_cast<size_t>(c_count), 0);
        while (static_cast<int>(lay.size()) < t_len) {
            int grp = grp_dist(rng);
            if (dorm_dist(rng)) {
                int n = p.dormants_per_group[static_cast<size_t>(grp)];
                int lo = p.cover_pairs ? 0 : last_member[static_cast<size_t>(grp)];
                std::uniform_int_distribution<int> mem(lo, n - 1);
                int i = mem(rng);
                last_member[static_cast<size_t>(grp)] = i;
                lay.push_back({grp, i});
            } else {
                lay.push_back({grp, -1});
            }
        }

        LabeledSequence seq;
        seq.inputs.resize(p.d, t_len + 1);
        seq.targets.resize(p.d, t_len + 1);
        seq.inputs.col(0) = spec.bos();
        seq.targets.col(0) = spec.bos();
        seq.roles.push_back(Role::Bos);
        seq.groups.push_back(-1);
        seq.token_ids.push_back(-1);
        std::vector<Vector> group_sum(static_cast<size_t>(c_count), Vector::Zero(p.d));
        std::vector<int> group_count(static_cast<size_t>(c_count), 0);
        for (int t = 1; t <= t_len; ++t) {
            auto [grp, mem] = lay[static_cast<size_t>(t - 1)];
            auto g = static_cast<size_t>(grp);
            seq.groups.push_back(grp);
            seq.token_ids.push_back(mem);
            if (mem >= 0) {
                const Vector& x = spec.dormant[g][static_cast<size_t>(mem)];
                seq.inputs.col(t) = x;
                seq.targets.col(t) = (1.0 + coef(rng)) * x;
                seq.roles.push_back(Role::Dormant);
                group_sum[g] += x;
                group_count[g] += 1;
            } else {
                Vector x = spec.copy(grp);
                seq.inputs.col(t) = x;
                seq.roles.push_back(Role::CopyPaste);
                if (group_count[g] > 0) seq.targets.col(t) = x + coef(rng) * group_sum[g] / group_count[g];
                else seq.targets.col(t) = x;
            }
        }
        out.push_back(std::move(seq));
    }
    return out;
}

TaskGeometry task_geometry(const GenericSpec& spec, const std::vector<LabeledSequence>& data) {
    const int c_count = spec.C();
    TaskGeometry g;
    g.before.resize(static_cast<size_t>(c_count));
    for (int c = 0; c < c_count; ++c) {
        auto n = static_cast<size_t>(spec.params.dormants_per_group[static_cast<size_t>(c)]);
        g.before[static_cast<size_t>(c)].assign(n, std::vector<bool>(n, false));
    }
    for (const auto& seq : data) {
        std::vector<std::vector<bool>> seen(static_cast<size_t>(c_count));
        for (int c = 0; c < c_count; ++c)
            seen[static_cast<size_t>(c)].assign(g.before[static_cast<size_t>(c)].size(), false);
        for (size_t t = 1; t < seq.roles.size(); ++t) {
            if (seq.roles[t] != Role::Dormant) continue;
            auto c = static_cast<size_t>(seq.groups[t]);
            auto i = static_cast<size_t>(seq.token_ids[t]);
            for (size_t j = 0; j < seen[c].size(); ++j)
                if (seen[c][j] && j != i) g.before[c][j][i] = true;
            seen[c][i] = true;
        }
    }

    const Eigen::Index d = spec.d();
    g.sigma_d = Matrix::Zero(d, d);
    g.delta_diag = std::numeric_limits<double>::infinity();
    for (int c = 0; c < c_count; ++c) {
        const auto& b = g.before[static_cast<size_t>(c)];
        const auto& dm = spec.dormant[static_cast<size_t>(c)];
        for (size_t i = 0; i < b.size(); ++i)
            for (size_t j = 0; j < b.size(); ++j) {
                if (i == j) continue;
                Vector diff = dm[i] - dm[j];
                if (b[j][i]) g.delta_diag = std::min(g.delta_diag, diff.squaredNorm());
                if (i < j && b[i][j] && b[j][i]) {
                    g.sigma_d += diff * diff.transpose();
                    ++g.n_pairs;
                }
            }
    }
    double top = spectral_norm(g.sigma_d);
    if (top > 1e-12) {
        g.r_eff = g.sigma_d.trace() / top;
        g.r_eff_defined = true;
    }
    Matrix stacked(d, spec.total_dormants());
    Eigen::Index k = 0;
    for (const auto& grp : spec.eta)
        for (const auto& e : grp) stacked.col(k++) = e;
    g.r_eta = numerical_rank(stacked, 1e-9);
    return g;
}

}  // namespace attnsink
