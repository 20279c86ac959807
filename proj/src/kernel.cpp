#include "stabid/kernel.hpp"

#include <cmath>
#include <stdexcept>

#include "stabid/error.hpp"

namespace stabid {

namespace {

double logit(double x) { return std::log(x / (1.0 - x)); }
double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

void Hyperparameters::validate() const {
    if (!(scale >= 0.0) || !std::isfinite(scale)) throw std::domain_error("hyperparameters: scale must be >= 0");
    if (!(decay > 0.0 && decay < 1.0)) throw std::domain_error("hyperparameters: decay must lie in (0, 1)");
    if (!(noise_variance > 0.0) || !std::isfinite(noise_variance)) {
        throw std::domain_error("hyperparameters: noise variance must be > 0");
    }
}

Eigen::Vector2d HyperBox::to_theta(const Hyperparameters& eta) const {
    return {std::log(eta.scale), logit(eta.decay)};
}

Hyperparameters HyperBox::from_theta(const Eigen::Vector2d& theta, double noise_variance) const {
    return {std::exp(theta[0]), logistic(theta[1]), noise_variance};
}

bool HyperBox::contains(const Hyperparameters& eta) const {
    return eta.scale >= scale_min && eta.scale <= scale_max && eta.decay >= decay_min && eta.decay <= decay_max;
}

bool HyperBox::contains_theta(const Eigen::Vector2d& theta) const {
    const auto lo = theta_lower();
    const auto hi = theta_upper();
    return theta[0] >= lo[0] && theta[0] <= hi[0] && theta[1] >= lo[1] && theta[1] <= hi[1];
}

Eigen::Vector2d HyperBox::theta_lower() const { return {std::log(scale_min), logit(decay_min)}; }
Eigen::Vector2d HyperBox::theta_upper() const { return {std::log(scale_max), logit(decay_max)}; }

Matrix RegressorPair::stacked() const {
    Matrix out(A.rows(), A.cols() + B.cols());
    out << A, B;
    return out;
}

KernelMatrix stable_spline_kernel(const Hyperparameters& eta, std::size_t p) {
    eta.validate();
    const auto n = static_cast<Eigen::Index>(p);
    Matrix K(n, n);
    for (Eigen::Index t = 0; t < n; ++t) {
        for (Eigen::Index s = 0; s < n; ++s) {
            K(t, s) = eta.scale * std::pow(eta.decay, static_cast<double>(std::max(t, s) + 1));
        }
    }
    return {std::move(K)};
}

Vector stable_spline_log_weights(double decay, std::size_t p) {
    const auto n = static_cast<Eigen::Index>(p);
    Vector w(n);
    const double log_beta = std::log(decay);
    const double log_tail = std::log1p(-decay);
    for (Eigen::Index k = 0; k < n; ++k) {
        w[k] = static_cast<double>(k + 1) * log_beta + (k + 1 < n ? log_tail : 0.0);
    }
    return w;
}

Matrix stable_spline_factor(const Hyperparameters& eta, std::size_t p) {
    eta.validate();
    const auto n = static_cast<Eigen::Index>(p);
    const Vector logw = stable_spline_log_weights(eta.decay, p);
    Matrix G = Matrix::Zero(n, n);
    const double root_c = std::sqrt(eta.scale);
    for (Eigen::Index k = 0; k < n; ++k) {
        const double col = root_c * std::exp(0.5 * logw[k]);
        for (Eigen::Index i = 0; i <= k; ++i) G(i, k) = col;
    }
    return G;
}

RegressorPair build_regressors(const Vector& y, const Vector& u, std::size_t p) {
    if (p == 0) throw std::domain_error("build_regressors: p must be positive");
    if (y.size() != u.size() || y.size() < 1) {
        throw std::invalid_argument("build_regressors: y and u must have equal, nonzero length");
    }
    const Eigen::Index T = y.size();
    const auto n = static_cast<Eigen::Index>(p);
    RegressorPair reg{Matrix::Zero(T, n), Matrix::Zero(T, n)};
    for (Eigen::Index t = 0; t < T; ++t) {
        for (Eigen::Index k = 1; k <= n && k <= t; ++k) {
            reg.A(t, k - 1) = y[t - k];
            reg.B(t, k - 1) = u[t - k];
        }
    }
    return reg;
}

OutputCovariance output_covariance(const Hyperparameters& eta, const RegressorPair& reg) {
    eta.validate();
    if (reg.A.cols() != reg.B.cols() || reg.A.rows() != reg.B.rows()) {
        throw std::invalid_argument("output_covariance: inconsistent regressor dimensions");
    }
    const auto K = stable_spline_kernel(eta, static_cast<std::size_t>(reg.A.cols())).K;
    OutputCovariance out;
    out.sigma = reg.A * K * reg.A.transpose() + reg.B * K * reg.B.transpose();
    out.sigma.diagonal().array() += eta.noise_variance;
    out.cholesky.compute(out.sigma);
    if (out.cholesky.info() != Eigen::Success) throw NumericalError("covariance not PD");
    return out;
}

}  // namespace stabid
