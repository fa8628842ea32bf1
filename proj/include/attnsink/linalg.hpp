#pragma once

#include <Eigen/Dense>

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace attnsink {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Bad caller input (shapes, ranges, non-finite entries).
class InputError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// A numerical model assumption failed at run time (divergence, negative variance, ...).
class ModelError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

void require_finite(const Matrix& m, const std::string& what);
void require_shape(const Matrix& m, Eigen::Index rows, Eigen::Index cols, const std::string& what);

struct Tolerances {
    double sv_cutoff = 1e-12;   // absolute singular value floor
    double rank_rel = 1e-3;     // relative rank tolerance
    double lp_margin = 1e-9;    // strict feasibility threshold
};

Vector singular_values(const Matrix& m);
double nuclear_norm(const Matrix& m);
double spectral_norm(const Matrix& m);
int numerical_rank(const Matrix& m, double rel_tol = 1e-3, double abs_cutoff = 1e-12);

// Orthogonal projector onto the column span of m.
Matrix span_projector(const Matrix& m, double rel_tol = 1e-9);
// Orthonormal basis of the column span of m (d x rank).
Matrix span_basis(const Matrix& m, double rel_tol = 1e-9);

// Balanced factorization P = L * R with ||L||_F^2 = ||R||_F^2 = ||P||_*.
struct Factorization {
    Matrix left;   // rows(P) x k
    Matrix right;  // k x cols(P)
};
Factorization balanced_factor(const Matrix& p);

// ---- linear programming -------------------------------------------------

enum class LpStatus { Optimal, Unbounded };

struct LpResult {
    LpStatus status = LpStatus::Optimal;
    Vector x;
    double objective = 0.0;
};

// maximize c'x  s.t.  A x <= b, x >= 0, with b >= 0 (origin feasible).
// Dense tableau simplex with Bland's rule.
LpResult lp_maximize(const Matrix& a, const Vector& b, const Vector& c);

struct FeasibilityResult {
    bool feasible = false;
    std::optional<Vector> witness;
    double margin = 0.0;
    bool degenerate = false;             // a zero vector was present
    std::optional<int> degenerate_index;
};

// Is there u with u'v_i > 0 for all i?  Solves max t s.t. u'v_i >= t, |u|_inf <= 1
// on unit-normalized v_i.
FeasibilityResult strict_half_space(const std::vector<Vector>& vectors, double tol = 1e-9);

// Gershgorin bound 1 - (m-1) phi on lambda_min(U'U); U has m = 1+2C unit columns.
double gram_min_eig_bound(const Matrix& u, double phi);
double min_eigenvalue_sym(const Matrix& s);

}  // namespace attnsink
