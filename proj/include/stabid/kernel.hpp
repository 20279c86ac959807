#pragma once

#include <cstddef>

#include <Eigen/Cholesky>

#include "stabid/lti.hpp"

namespace stabid {

/// Kernel hyperparameters eta = (scale, decay) with the noise variance carried
/// alongside. The variance is estimated once and held fixed while eta moves.
struct Hyperparameters {
    double scale = 1.0;           // c >= 0
    double decay = 0.5;           // beta in (0, 1)
    double noise_variance = 1.0;  // sigma^2 > 0

    /// Throws std::domain_error when any field is out of range.
    void validate() const;
};

/// Search box for (scale, decay), shared by the optimizers and the flat
/// hyperprior. Optimizers work in theta = (log c, logit beta).
struct HyperBox {
    double scale_min = 1e-6;
    double scale_max = 1e4;
    double decay_min = 0.01;
    double decay_max = 0.99;

    Eigen::Vector2d to_theta(const Hyperparameters& eta) const;
    Hyperparameters from_theta(const Eigen::Vector2d& theta, double noise_variance) const;
    bool contains(const Hyperparameters& eta) const;
    bool contains_theta(const Eigen::Vector2d& theta) const;
    Eigen::Vector2d theta_lower() const;
    Eigen::Vector2d theta_upper() const;
    Eigen::Vector2d theta_center() const { return 0.5 * (theta_lower() + theta_upper()); }
};

struct KernelMatrix {
    Matrix K;
};

/// Lagged-data matrices: row t holds y(t-1)..y(t-p) and u(t-1)..u(t-p).
struct RegressorPair {
    Matrix A;
    Matrix B;

    /// [A B], T x 2p.
    Matrix stacked() const;
};

/// Sigma_eta = A K A^T + B K B^T + sigma^2 I with its Cholesky factor.
struct OutputCovariance {
    Matrix sigma;
    Eigen::LLT<Matrix> cholesky;
};

/// First-order stable-spline (TC) kernel K[t,s] = c * beta^max(t,s), t,s = 1..p.
KernelMatrix stable_spline_kernel(const Hyperparameters& eta, std::size_t p);

/// Exact factor G with K = G G^T. K = c U W U^T where U is the upper
/// triangular matrix of ones and W = diag(beta^k (1-beta)), with the last
/// weight beta^p, so G = sqrt(c) U W^{1/2}.
Matrix stable_spline_factor(const Hyperparameters& eta, std::size_t p);

/// log of the weights w_k above (k = 1..p).
Vector stable_spline_log_weights(double decay, std::size_t p);

RegressorPair build_regressors(const Vector& y, const Vector& u, std::size_t p);

/// Throws NumericalError("covariance not PD") if the factorization fails.
OutputCovariance output_covariance(const Hyperparameters& eta, const RegressorPair& reg);

}  // namespace stabid
