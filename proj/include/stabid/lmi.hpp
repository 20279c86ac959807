#pragma once

#include "stabid/lti.hpp"

namespace stabid {

/// min ||psi - P target||^2  s.t.  M(psi, P) >= margin I,  Tr P = p.
struct SdpProblem {
    Vector target;
    double margin = 1e-6;
};

struct SdpOptions {
    double t0 = 1.0;
    double mu = 10.0;
    double gap_tolerance = 1e-9;
    int max_centering_steps = 200;
    int max_outer_iterations = 40;
};

struct SdpSolution {
    Vector psi;
    Matrix P;
    double objective = 0.0;
    double duality_gap = 0.0;      // barrier bound m / t at exit
    double min_eigenvalue = 0.0;   // of M(psi, P)
    int newton_steps = 0;
};

/// M(psi, P) = [[P, X], [X^T, P]] where X has first row psi^T and rows
/// 1..p-1 equal to rows 0..p-2 of P. For psi = P f this is X = C(f) P with
/// C(f) the companion matrix, so M > 0 iff P - C P C^T > 0.
Matrix lmi_matrix(const Vector& psi, const Matrix& P);

/// Log-det barrier interior point method. Starts from the strictly feasible
/// point psi = 0, P = normalized Lyapunov solution of the shift matrix.
/// Throws NumericalError if centering fails to converge.
SdpSolution solve_sdp(const SdpProblem& problem, const SdpOptions& options = {});

struct LmiProjection {
    Vector f;
    SdpSolution sdp;
};

/// f = P^{-1} psi from the SDP solution. Throws NumericalError when P is
/// numerically singular (condition number above 1e12) or the recovered
/// predictor is not strictly stable.
LmiProjection project_stable_detailed(const Vector& target, double margin = 1e-6, const SdpOptions& options = {});
Vector project_stable(const Vector& target, double margin = 1e-6, const SdpOptions& options = {});

/// Projects f and keeps g.
PredictorEstimate stabilize_lmi(const PredictorEstimate& estimate, double margin = 1e-6);

}  // namespace stabid
