#include "stabid/lmi.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <fmt/format.h>

#include "stabid/error.hpp"

namespace stabid {

namespace {

struct Entry {
    int r;
    int c;
};

// Variables: psi_0..psi_{p-1}, then P(i, j) for i <= j in row-major order.
// basis[k] lists the entries of dM/dx_k (all coefficients are 1).
class LmiStructure {
public:
    explicit LmiStructure(int p) : p_(p), n_(p + p * (p + 1) / 2), basis_(static_cast<std::size_t>(n_)) {
        for (int j = 0; j < p; ++j) add_x(j, 0, j);
        int k = p;
        for (int i = 0; i < p; ++i) {
            for (int j = i; j < p; ++j, ++k) {
                add_sym(k, i, j);
                add_sym(k, p + i, p + j);
                if (i + 1 < p) add_x(k, i + 1, j);
                if (i != j && j + 1 < p) add_x(k, j + 1, i);
            }
        }
    }

    int p() const { return p_; }
    int n() const { return n_; }
    const std::vector<Entry>& basis(int k) const { return basis_[static_cast<std::size_t>(k)]; }

    int index(int i, int j) const {
        if (i > j) std::swap(i, j);
        return p_ + i * p_ - i * (i - 1) / 2 + (j - i);
    }

    Matrix assemble(const Vector& x) const {
        Matrix M = Matrix::Zero(2 * p_, 2 * p_);
        for (int k = 0; k < n_; ++k) {
            for (const auto& e : basis(k)) M(e.r, e.c) += x[k];
        }
        return M;
    }

    Vector pack(const Vector& psi, const Matrix& P) const {
        Vector x(n_);
        x.head(p_) = psi;
        for (int i = 0; i < p_; ++i) {
            for (int j = i; j < p_; ++j) x[index(i, j)] = P(i, j);
        }
        return x;
    }

    Matrix unpack_p(const Vector& x) const {
        Matrix P(p_, p_);
        for (int i = 0; i < p_; ++i) {
            for (int j = i; j < p_; ++j) P(i, j) = P(j, i) = x[index(i, j)];
        }
        return P;
    }

private:
    void add_sym(int k, int r, int c) {
        auto& b = basis_[static_cast<std::size_t>(k)];
        b.push_back({r, c});
        if (r != c) b.push_back({c, r});
    }
    // Entry (r, c) of the off-diagonal block X.
    void add_x(int k, int r, int c) { add_sym(k, r, p_ + c); }

    int p_;
    int n_;
    std::vector<std::vector<Entry>> basis_;
};

// Linear map x -> psi - P target.
Matrix residual_map(const LmiStructure& s, const Vector& target) {
    const int p = s.p();
    Matrix L = Matrix::Zero(p, s.n());
    for (int j = 0; j < p; ++j) L(j, j) = 1.0;
    for (int i = 0; i < p; ++i) {
        for (int j = i; j < p; ++j) {
            const int k = s.index(i, j);
            L(i, k) -= target[j];
            if (i != j) L(j, k) -= target[i];
        }
    }
    return L;
}

struct BarrierEval {
    bool feasible = false;
    double value = 0.0;  // -log det(M - margin I)
    Matrix W;            // (M - margin I)^{-1}
};

BarrierEval barrier(const LmiStructure& s, const Vector& x, double margin, bool need_inverse) {
    BarrierEval out;
    Matrix M = s.assemble(x);
    M.diagonal().array() -= margin;
    Eigen::LLT<Matrix> llt(M);
    if (llt.info() != Eigen::Success) return out;
    const auto diag = llt.matrixLLT().diagonal();
    if (!(diag.minCoeff() > 0.0) || !diag.allFinite()) return out;
    out.feasible = true;
    out.value = -2.0 * diag.array().log().sum();
    if (need_inverse) out.W = llt.solve(Matrix::Identity(M.rows(), M.cols()));
    return out;
}

}  // namespace

Matrix lmi_matrix(const Vector& psi, const Matrix& P) {
    const Eigen::Index p = psi.size();
    if (P.rows() != p || P.cols() != p) throw std::invalid_argument("lmi_matrix: dimension mismatch");
    Matrix M = Matrix::Zero(2 * p, 2 * p);
    M.topLeftCorner(p, p) = P;
    M.bottomRightCorner(p, p) = P;
    Matrix X(p, p);
    X.row(0) = psi.transpose();
    if (p > 1) X.bottomRows(p - 1) = P.topRows(p - 1);
    M.topRightCorner(p, p) = X;
    M.bottomLeftCorner(p, p) = X.transpose();
    return M;
}

SdpSolution solve_sdp(const SdpProblem& problem, const SdpOptions& options) {
    const auto p = static_cast<int>(problem.target.size());
    if (p < 1) throw std::invalid_argument("solve_sdp: empty target");
    if (!problem.target.allFinite()) throw std::invalid_argument("solve_sdp: non-finite target");
    if (!(problem.margin >= 0.0)) throw std::invalid_argument("solve_sdp: negative margin");

    const LmiStructure s(p);
    const int n = s.n();
    const Matrix L = residual_map(s, problem.target);
    const Matrix Q = 2.0 * L.transpose() * L;
    Vector a = Vector::Zero(n);
    for (int i = 0; i < p; ++i) a[s.index(i, i)] = 1.0;

    Matrix P0 = Matrix::Zero(p, p);
    for (int i = 0; i < p; ++i) P0(i, i) = 2.0 * (i + 1) / (p + 1.0);
    Vector x = s.pack(Vector::Zero(p), P0);
    if (!barrier(s, x, problem.margin, false).feasible) {
        throw NumericalError("solve_sdp: starting point infeasible for the requested margin");
    }

    const double m = 2.0 * p;
    double t = options.t0;
    int newton_steps = 0;
    for (int outer = 0;; ++outer) {
        for (int step = 0;; ++step) {
            if (step >= options.max_centering_steps) {
                throw NumericalError(fmt::format("solve_sdp: centering did not converge (t = {:g}, objective = {:g})",
                                                 t, (L * x).squaredNorm()));
            }
            const auto b = barrier(s, x, problem.margin, true);
            const Matrix& W = b.W;
            Vector g = t * (Q * x);
            Matrix H = t * Q;
            for (int k = 0; k < n; ++k) {
                const auto& bk = s.basis(k);
                double gk = 0.0;
                for (const auto& e : bk) gk += W(e.c, e.r);
                g[k] -= gk;
                for (int l = k; l < n; ++l) {
                    double h = 0.0;
                    for (const auto& e : bk) {
                        for (const auto& f : s.basis(l)) h += W(e.c, f.r) * W(f.c, e.r);
                    }
                    H(k, l) += h;
                    if (l != k) H(l, k) += h;
                }
            }
            const Eigen::LDLT<Matrix> ldlt(H);
            const Vector hg = ldlt.solve(g);
            const Vector ha = ldlt.solve(a);
            const double nu = -a.dot(hg) / a.dot(ha);
            Vector dx = -hg - nu * ha;
            const double decrement = -g.dot(dx);
            ++newton_steps;
            // decrement / 2t bounds the objective lost to inexact centering.
            if (!(0.5 * decrement > 1e-8) || 0.5 * decrement / t <= 0.1 * options.gap_tolerance) break;

            const double f0 = t * (L * x).squaredNorm() + b.value;
            double alpha = 1.0;
            bool moved = false;
            while (alpha > 1e-14) {
                const Vector xn = x + alpha * dx;
                const auto bn = barrier(s, xn, problem.margin, false);
                if (bn.feasible && t * (L * xn).squaredNorm() + bn.value <= f0 - 0.25 * alpha * decrement) {
                    x = xn;
                    moved = true;
                    break;
                }
                alpha *= 0.5;
            }
            // Line search stalls only once the iterate is centred to rounding.
            if (!moved) break;
        }
        if (m / t <= options.gap_tolerance || outer + 1 >= options.max_outer_iterations) break;
        t *= options.mu;
    }

    SdpSolution sol;
    sol.psi = x.head(p);
    sol.P = s.unpack_p(x);
    sol.objective = (L * x).squaredNorm();
    sol.duality_gap = m / t;
    sol.newton_steps = newton_steps;
    Eigen::SelfAdjointEigenSolver<Matrix> es(lmi_matrix(sol.psi, sol.P), Eigen::EigenvaluesOnly);
    sol.min_eigenvalue = es.eigenvalues().minCoeff();
    return sol;
}

LmiProjection project_stable_detailed(const Vector& target, double margin, const SdpOptions& options) {
    LmiProjection out;
    out.sdp = solve_sdp({target, margin}, options);
    Eigen::SelfAdjointEigenSolver<Matrix> es(out.sdp.P, Eigen::EigenvaluesOnly);
    const double lo = es.eigenvalues().minCoeff();
    const double hi = es.eigenvalues().maxCoeff();
    if (!(lo > 0.0) || hi / lo > 1e12) {
        throw NumericalError(fmt::format("project_stable: P is numerically singular (eigenvalues {:g}..{:g})", lo, hi));
    }
    out.f = out.sdp.P.llt().solve(out.sdp.psi);
    const double rho = spectral_radius(out.f);
    if (!(rho < 1.0)) {
        throw NumericalError(fmt::format("project_stable: recovered predictor has spectral radius {:.12g}", rho));
    }
    return out;
}

Vector project_stable(const Vector& target, double margin, const SdpOptions& options) {
    return project_stable_detailed(target, margin, options).f;
}

PredictorEstimate stabilize_lmi(const PredictorEstimate& estimate, double margin) {
    return PredictorEstimate(project_stable(estimate.f, margin), estimate.g);
}

}  // namespace stabid
