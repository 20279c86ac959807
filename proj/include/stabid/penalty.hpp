#pragma once

#include "stabid/empirical_bayes.hpp"

namespace stabid {

struct PenaltyParams {
    double alpha = 1.0;  // steepness
    double delta = 1.0;  // barrier location
};

/// J(rho) = (alpha (delta - rho))^-alpha - (alpha delta)^-alpha on [0, delta),
/// +infinity for rho >= delta.
double penalty(double rho, const PenaltyParams& params);

/// Spectral radius of A(z) built from the posterior mean of f at eta.
double rho_of_eta(const Hyperparameters& eta, const MarginalLikelihood& ml);
double rho_of_eta(const Hyperparameters& eta, const Dataset& data, std::size_t p);

struct PenaltyOptions {
    double epsilon = 0.05;
    double alpha_step = 0.1;
    double alpha_floor = 0.05;
    double delta_step_fraction = 0.01;
    double delta_floor = 1.0 + 1e-4;
    int inner_evaluations = 200;
    int max_outer_iterations = 50;
    double stall_tolerance = 1e-6;
    int final_restarts = 20;
    HyperBox box{};
};

struct PenaltyResult {
    Hyperparameters eta;
    PredictorEstimate estimate;
    double rho = 0.0;
    double neg_log_marginal = 0.0;
    int outer_iterations = 0;
    PenaltyParams final_params;
};

/// Iterative barrier search over the hyperparameters: while the posterior
/// mean is unstable, minimize -ln p_eta(y) + J(rho_eta) with the barrier just
/// above the current radius, tightening (alpha, delta) on stalls; then one
/// last minimization with alpha = epsilon, delta = 1.
/// Throws NumericalError("penalty stabilization failed") at the outer cap.
PenaltyResult stabilize_ml_pf(const MarginalLikelihood& ml, const Hyperparameters& eta0,
                              const PenaltyOptions& options = {});
PenaltyResult stabilize_ml_pf(const Dataset& data, std::size_t p, const Hyperparameters& eta0,
                              const PenaltyOptions& options = {});

}  // namespace stabid
