#include <cmath>
#include <random>

#include <Eigen/Eigenvalues>

#include "doctest.h"
#include "stabid/error.hpp"
#include "stabid/lmi.hpp"
#include "test_helpers.hpp"

using namespace stabid;
using stabid::testing::random_normal;
using stabid::testing::random_stable_f;

namespace {

double min_eig(const Matrix& m) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(m, Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff();
}

// Solution of P = C P C^T + I by doubling, scaled to trace p.
Matrix lyapunov_trace_normalized(const Vector& f) {
    Matrix A = companion(as_span(f));
    Matrix P = Matrix::Identity(f.size(), f.size());
    for (int k = 0; k < 60; ++k) {
        P += A * P * A.transpose();
        A = (A * A).eval();
        if (A.cwiseAbs().maxCoeff() < 1e-300) break;
    }
    P = 0.5 * (P + P.transpose()).eval();
    return P * (static_cast<double>(f.size()) / P.trace());
}

Vector unstable_target(std::mt19937_64& rng, std::size_t p) {
    for (;;) {
        Vector f = random_normal(rng, static_cast<Eigen::Index>(p), 0.3);
        for (Eigen::Index i = 0; i < f.size(); ++i) f[i] *= std::pow(0.85, static_cast<double>(i));
        f[0] += 0.8;
        const double rho = spectral_radius(f);
        if (rho > 1.01 && rho < 1.3) return f;
    }
}

}  // namespace

TEST_CASE("lmi matrix examples") {
    const Matrix I1 = Matrix::Identity(1, 1);
    const Matrix m0 = lmi_matrix(Vector::Zero(1), I1);
    CHECK((m0 - Matrix::Identity(2, 2)).norm() == 0.0);

    const Matrix m1 = lmi_matrix(Vector::Constant(1, 0.5), I1);
    CHECK(m1(0, 1) == 0.5);
    CHECK(m1(1, 0) == 0.5);
    CHECK(min_eig(m1) == doctest::Approx(0.5));

    const Matrix m2 = lmi_matrix(Vector::Constant(1, 2.0), I1);
    CHECK(min_eig(m2) == doctest::Approx(-1.0));

    CHECK_THROWS_AS(lmi_matrix(Vector::Zero(2), I1), std::invalid_argument);
}

TEST_CASE("lmi matrix encodes stability") {
    // Scalar case on a fine grid: M([f], [1]) >= 0 iff |f| <= 1.
    for (int i = -2000; i <= 2000; ++i) {
        const double f = i * 1e-3;
        const bool psd = min_eig(lmi_matrix(Vector::Constant(1, f), Matrix::Identity(1, 1))) >= -1e-12;
        CHECK(psd == (std::abs(f) <= 1.0));
    }

    // With psi = P f and P the Lyapunov solution, M is positive definite.
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 10; ++trial) {
        const Vector f = random_stable_f(rng, 8, 0.9);
        const Matrix P = lyapunov_trace_normalized(f);
        const Matrix M = lmi_matrix(P * f, P);
        CHECK((M - M.transpose()).norm() == 0.0);
        CHECK(min_eig(M) > 0.0);
    }
}

TEST_CASE("sdp scalar cases against a grid") {
    // The closest point of a 1e-4 grid over (-1, 1).
    auto grid_best = [](double target) {
        double best = 0.0;
        for (int i = -9999; i <= 9999; ++i) {
            const double f = i * 1e-4;
            if (std::abs(f - target) < std::abs(best - target)) best = f;
        }
        return best;
    };

    const auto stable = project_stable_detailed(Vector::Constant(1, 0.5));
    CHECK(stable.f[0] == doctest::Approx(grid_best(0.5)).epsilon(1e-4));
    CHECK(std::abs(stable.f[0] - 0.5) <= 1e-4);

    const auto unstable = project_stable_detailed(Vector::Constant(1, 2.0));
    CHECK(unstable.f[0] < 1.0);
    CHECK(unstable.f[0] > 1.0 - 1e-5);
    CHECK(std::abs(unstable.f[0] - grid_best(2.0)) <= 2e-4);
    CHECK(unstable.sdp.min_eigenvalue >= 1e-6 - 1e-7);
    CHECK(std::abs(unstable.sdp.P.trace() - 1.0) <= 1e-7);

    const auto negative = project_stable(Vector::Constant(1, -3.0));
    CHECK(negative[0] > -1.0);
    CHECK(negative[0] < -1.0 + 1e-5);
}

TEST_CASE("sdp two-dimensional stable target") {
    Vector target(2);
    target << 1.5, -0.56;  // roots 0.8 and 0.7
    const auto r = project_stable_detailed(target);
    CHECK((r.f - target).norm() <= 1e-3);
    CHECK(r.sdp.min_eigenvalue >= 1e-6 - 1e-7);
    CHECK(std::abs(r.sdp.P.trace() - 2.0) <= 1e-7);

    // Grid over the stability triangle: no stable grid point is closer than
    // the returned one by more than the grid resolution.
    double best = 1e300;
    for (int i = -200; i <= 200; ++i) {
        for (int j = -100; j <= 100; ++j) {
            Vector f(2);
            f << i * 0.01, j * 0.01;
            if (spectral_radius(f) < 1.0) best = std::min(best, (f - target).norm());
        }
    }
    CHECK((r.f - target).norm() <= best + 1e-2);
}

TEST_CASE("project_stable on zero and stable targets") {
    const Vector z = project_stable(Vector::Zero(6));
    CHECK(z.norm() <= 1e-6);

    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 5; ++trial) {
        const Vector f = random_stable_f(rng, 10, 0.85);
        const Vector fh = project_stable(f);
        CHECK((fh - f).norm() <= 1e-3 * (1.0 + f.norm()));
    }
}

TEST_CASE("project_stable on unstable order-30 targets") {
    std::mt19937_64 rng(29);
    for (int trial = 0; trial < 3; ++trial) {
        const Vector target = unstable_target(rng, 30);
        const auto r = project_stable_detailed(target);
        CHECK(spectral_radius(r.f) < 1.0);
        CHECK(r.sdp.min_eigenvalue >= 1e-6 - 1e-7);
        CHECK(std::abs(r.sdp.P.trace() - 30.0) <= 1e-7);
        CHECK(r.sdp.duality_gap <= 1e-6);

        // Shrinkage baseline: f_k s^k with s = 0.99 / rho is feasible.
        const double s = 0.99 / spectral_radius(target);
        Vector fs = target;
        for (Eigen::Index k = 0; k < fs.size(); ++k) fs[k] *= std::pow(s, static_cast<double>(k + 1));
        CHECK(spectral_radius(fs) == doctest::Approx(0.99).epsilon(1e-6));
        const Matrix Ps = lyapunov_trace_normalized(fs);
        const Vector psi_s = Ps * fs;
        CHECK(min_eig(lmi_matrix(psi_s, Ps)) >= 1e-6);
        const double baseline = (psi_s - Ps * target).squaredNorm();
        CHECK(r.sdp.objective <= baseline + 1e-6);

        // A second projection barely moves a stable result.
        const Vector again = project_stable(r.f);
        CHECK((again - r.f).norm() < 1e-3 * (1.0 + r.f.norm()));
    }
}

TEST_CASE("stabilize_lmi keeps g") {
    PredictorEstimate est(Vector::Constant(1, 1.5), Vector::Constant(1, 0.7));
    const auto out = stabilize_lmi(est);
    CHECK(out.g[0] == 0.7);
    CHECK(out.f[0] < 1.0);
    CHECK_THROWS_AS(solve_sdp({Vector(), 1e-6}), std::invalid_argument);
}
