#pragma once

#include "attnsink/block.hpp"

#include <cstdint>
#include <vector>

namespace attnsink {

enum class Role { Bos, Dormant, CopyPaste };
enum class FrameKind { StandardBasis, RandomOrthogonal };

struct LabeledSequence {
    TokenMatrix inputs;
    TokenMatrix targets;
    std::vector<Role> roles;
    std::vector<int> groups;     // generic task group, -1 otherwise
    std::vector<int> token_ids;  // backcopy frame index / generic dormant member, -1 otherwise
};

// ---- backcopy --------------------------------------------------------------

struct BackcopySpec {
    int d = 0, T = 0;
    int n_dormant = 0, n_copy = 0;
    double kappa = 1.0;
    FrameKind frames = FrameKind::StandardBasis;
    Matrix h;  // d x (1 + n_dormant + n_copy): h_0 (BOS), dormant, copy-paste
    Matrix p;  // d x (T + 1): p_0 .. p_T

    bool is_dormant(int id) const { return id >= 1 && id <= n_dormant; }
    bool is_copy(int id) const { return id > n_dormant && id <= n_dormant + n_copy; }
    Vector token(int t, int id) const;  // sqrt(d/2) (h_id + p_t)
    void validate() const;
};

BackcopySpec make_backcopy_spec(int d, int T, int n_dormant, int n_copy, double kappa,
                                FrameKind frames = FrameKind::StandardBasis, std::uint64_t seed = 0);

// Position 1 is always dormant; later positions uniform over dormant and copy-paste tokens.
std::vector<LabeledSequence> gen_backcopy(const BackcopySpec& spec, int n_seqs, std::uint64_t seed);

// ---- generic grouped copy-paste ----------------------------------------------

struct GenericParams {
    int d = 100;
    int C = 3;
    double phi = 0.0;
    double delta = 0.3;
    double eps_tol = 0.1;
    double kappa = 10.0;
    std::vector<int> dormants_per_group{4, 4, 4};
    int noise_rank = 0;  // 0: one private direction per dormant token
    int T = 50;
    double p_dormant = 0.5;
    bool cover_pairs = true;  // force both orders of every same-group pair
    FrameKind frames = FrameKind::StandardBasis;
    std::uint64_t seed = 0;
};

struct GenericSpec {
    GenericParams params;
    double lambda_c = 1.0;  // sqrt(1 - delta^2)
    Matrix special;         // d x (1+2C): b_BOS, dbar_1..dbar_C, c_1..c_C (norm sqrt d)
    std::vector<std::vector<Vector>> eta;
    std::vector<std::vector<Vector>> dormant;

    int C() const { return params.C; }
    int d() const { return params.d; }
    Vector bos() const { return special.col(0); }
    Vector dbar(int c) const { return special.col(1 + c); }
    Vector copy(int c) const { return special.col(1 + params.C + c); }
    int total_dormants() const;
    // 2C phi <= 1/4, phi <= 1/20, delta <= 1/2, eps in [1/20, 1/4]
    void check_theorem_constraints() const;
};

GenericSpec make_generic_spec(const GenericParams& params);
std::vector<LabeledSequence> gen_generic(const GenericSpec& spec, int n_seqs, std::uint64_t seed);

struct TaskGeometry {
    Matrix sigma_d;
    double r_eff = 0.0;
    bool r_eff_defined = false;
    int r_eta = 0;
    double delta_diag = 0.0;  // +inf when no admissible pair
    int n_pairs = 0;          // N_D
    std::vector<std::vector<std::vector<bool>>> before;  // before[c][j][i]: d_cj precedes d_ci somewhere
};

TaskGeometry task_geometry(const GenericSpec& spec, const std::vector<LabeledSequence>& data);

}  // namespace attnsink
