#include "attnsink/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace attnsink {

void require_finite(const Matrix& m, const std::string& what) {
    if (!m.allFinite()) throw InputError(what + ": non-finite entries");
}

void require_shape(const Matrix& m, Eigen::Index rows, Eigen::Index cols, const std::string& what) {
    if (m.rows() != rows || m.cols() != cols) {
        std::ostringstream os;
        os << what << ": expected " << rows << "x" << cols << ", got " << m.rows() << "x" << m.cols();
        throw InputError(os.str());
    }
}

Vector singular_values(const Matrix& m) {
    require_finite(m, "singular_values");
    if (m.size() == 0) return Vector();
    Eigen::JacobiSVD<Matrix> svd(m);
    return svd.singularValues();
}

double nuclear_norm(const Matrix& m) {
    require_finite(m, "nuclear_norm");
    if (m.size() == 0) return 0.0;
    return singular_values(m).sum();
}

double spectral_norm(const Matrix& m) {
    if (m.size() == 0) return 0.0;
    return singular_values(m)(0);
}

int numerical_rank(const Matrix& m, double rel_tol, double abs_cutoff) {
    if (!(rel_tol > 0.0 && rel_tol < 1.0)) throw InputError("numerical_rank: rel_tol must lie in (0,1)");
    if (m.size() == 0) return 0;
    Vector s = singular_values(m);
    double smax = s(0);
    if (smax <= abs_cutoff) return 0;
    int r = 0;
    for (Eigen::Index i = 0; i < s.size(); ++i)
        if (s(i) > rel_tol * smax && s(i) > abs_cutoff) ++r;
    return r;
}

Matrix span_basis(const Matrix& m, double rel_tol) {
    if (m.cols() == 0) return Matrix(m.rows(), 0);
    Eigen::JacobiSVD<Matrix> svd(m, Eigen::ComputeThinU);
    const Vector& s = svd.singularValues();
    int r = 0;
    if (s.size() > 0 && s(0) > 1e-12)
        for (Eigen::Index i = 0; i < s.size(); ++i)
            if (s(i) > rel_tol * s(0)) ++r;
    return svd.matrixU().leftCols(r);
}

Matrix span_projector(const Matrix& m, double rel_tol) {
    Matrix b = span_basis(m, rel_tol);
    return b * b.transpose();
}

Factorization balanced_factor(const Matrix& p) {
    require_finite(p, "balanced_factor");
    Eigen::JacobiSVD<Matrix> svd(p, Eigen::ComputeThinU | Eigen::ComputeThinV);
    Vector root = svd.singularValues().cwiseSqrt();
    Factorization f;
    f.left = svd.matrixU() * root.asDiagonal();
    f.right = root.asDiagonal() * svd.matrixV().transpose();
    // pad to a square inner dimension so callers get d x d blocks
    const Eigen::Index k = f.left.cols();
    const Eigen::Index want = std::max(p.rows(), p.cols());
    if (k < want) {
        Matrix l = Matrix::Zero(p.rows(), want);
        Matrix r = Matrix::Zero(want, p.cols());
        l.leftCols(k) = f.left;
        r.topRows(k) = f.right;
        f.left = l;
        f.right = r;
    }
    return f;
}

// ---- simplex ------------------------------------------------------------

LpResult lp_maximize(const Matrix& a, const Vector& b, const Vector& c) {
    const Eigen::Index m = a.rows(), n = a.cols();
    if (b.size() != m || c.size() != n) throw InputError("lp_maximize: shape mismatch");
    if ((b.array() < 0).any()) throw InputError("lp_maximize: right-hand side must be non-negative");
    require_finite(a, "lp_maximize A");

    // tableau rows 0..m-1 constraints, row m objective (reduced costs, negated)
    const Eigen::Index cols = n + m + 1;
    Matrix tab = Matrix::Zero(m + 1, cols);
    tab.block(0, 0, m, n) = a;
    tab.block(0, n, m, m) = Matrix::Identity(m, m);
    tab.col(cols - 1).head(m) = b;
    tab.row(m).head(n) = -c.transpose();
    std::vector<Eigen::Index> basis(static_cast<size_t>(m));
    for (Eigen::Index i = 0; i < m; ++i) basis[static_cast<size_t>(i)] = n + i;

    const double eps = 1e-12;
    LpResult res;
    for (int iter = 0; iter < 100000; ++iter) {
        Eigen::Index enter = -1;
        for (Eigen::Index j = 0; j < n + m; ++j)
            if (tab(m, j) < -eps) { enter = j; break; }
        if (enter < 0) break;

        Eigen::Index leave = -1;
        double best = std::numeric_limits<double>::infinity();
        for (Eigen::Index i = 0; i < m; ++i) {
            double piv = tab(i, enter);
            if (piv > eps) {
                double ratio = tab(i, cols - 1) / piv;
                if (ratio < best - 1e-15 ||
                    (std::abs(ratio - best) <= 1e-15 && leave >= 0 &&
                     basis[static_cast<size_t>(i)] < basis[static_cast<size_t>(leave)])) {
                    best = ratio;
                    leave = i;
                }
            }
        }
        if (leave < 0) {
            res.status = LpStatus::Unbounded;
            return res;
        }
        tab.row(leave) /= tab(leave, enter);
        for (Eigen::Index i = 0; i <= m; ++i)
            if (i != leave && tab(i, enter) != 0.0) tab.row(i) -= tab(i, enter) * tab.row(leave);
        basis[static_cast<size_t>(leave)] = enter;
    }
    res.x = Vector::Zero(n);
    for (Eigen::Index i = 0; i < m; ++i)
        if (basis[static_cast<size_t>(i)] < n) res.x(basis[static_cast<size_t>(i)]) = tab(i, cols - 1);
    res.objective = c.dot(res.x);
    return res;
}

FeasibilityResult strict_half_space(const std::vector<Vector>& vectors, double tol) {
    if (vectors.empty()) throw InputError("strict_half_space: empty vector list");
    const Eigen::Index d = vectors.front().size();
    double max_norm = 0.0;
    for (const auto& v : vectors) {
        if (v.size() != d) throw InputError("strict_half_space: dimension mismatch");
        if (!v.allFinite()) throw InputError("strict_half_space: non-finite entries");
        max_norm = std::max(max_norm, v.norm());
    }
    FeasibilityResult out;
    for (size_t i = 0; i < vectors.size(); ++i) {
        if (vectors[i].norm() <= 1e-12 * std::max(1.0, max_norm)) {
            out.degenerate = true;
            out.degenerate_index = static_cast<int>(i);
            return out;
        }
    }

    // variables: w = u + 1 in [0,2]^d, s = t + K >= 0
    const Eigen::Index n = d + 1;
    const Eigen::Index m = static_cast<Eigen::Index>(vectors.size()) + d;
    Matrix a = Matrix::Zero(m, n);
    Vector b = Vector::Zero(m);
    std::vector<Vector> unit;
    unit.reserve(vectors.size());
    for (const auto& v : vectors) unit.push_back(v / v.norm());
    double k = 0.0;
    for (const auto& v : unit) k = std::max(k, v.lpNorm<1>());
    k += 1.0;
    for (size_t i = 0; i < unit.size(); ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        a.block(r, 0, 1, d) = -unit[i].transpose();
        a(r, d) = 1.0;
        b(r) = k - unit[i].sum();
    }
    for (Eigen::Index j = 0; j < d; ++j) {
        a(static_cast<Eigen::Index>(unit.size()) + j, j) = 1.0;
        b(static_cast<Eigen::Index>(unit.size()) + j) = 2.0;
    }
    Vector c = Vector::Zero(n);
    c(d) = 1.0;
    LpResult lp = lp_maximize(a, b, c);
    if (lp.status != LpStatus::Optimal) throw ModelError("strict_half_space: LP unexpectedly unbounded");

    double t = lp.x(d) - k;
    Vector u = lp.x.head(d).array() - 1.0;
    if (t > tol) {
        double margin = std::numeric_limits<double>::infinity();
        for (const auto& v : vectors) margin = std::min(margin, u.dot(v));
        if (margin > 0.0) {
            out.feasible = true;
            out.witness = u;
            out.margin = margin;
        }
    }
    return out;
}

double min_eigenvalue_sym(const Matrix& s) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(s, Eigen::EigenvaluesOnly);
    return es.eigenvalues()(0);
}

double gram_min_eig_bound(const Matrix& u, double phi) {
    require_finite(u, "gram_min_eig_bound");
    const Eigen::Index m = u.cols();
    if (m % 2 != 1) throw InputError("gram_min_eig_bound: column count must be 1+2C");
    Matrix g = u.transpose() * u;
    for (Eigen::Index i = 0; i < m; ++i)
        if (std::abs(g(i, i) - 1.0) > 1e-9) throw InputError("gram_min_eig_bound: column " + std::to_string(i) + " is not unit norm");
    for (Eigen::Index i = 0; i < m; ++i)
        for (Eigen::Index j = i + 1; j < m; ++j)
            if (std::abs(g(i, j)) > phi + 1e-12) {
                std::ostringstream os;
                os << "gram_min_eig_bound: pair (" << i << "," << j << ") has |<u_i,u_j>| = " << std::abs(g(i, j))
                   << " > phi = " << phi;
                throw InputError(os.str());
            }
    const double c = static_cast<double>((m - 1) / 2);
    const double bound = 1.0 - 2.0 * c * phi;
    const double lam = min_eigenvalue_sym(g);
    if (lam < bound - 1e-10) throw ModelError("gram_min_eig_bound: Gershgorin bound violated");
    return bound;
}

}  // namespace attnsink
