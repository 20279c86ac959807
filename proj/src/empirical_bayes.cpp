#include "stabid/empirical_bayes.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

#include <Eigen/QR>
#include <spdlog/spdlog.h>

#include "stabid/error.hpp"

namespace stabid {

namespace {

const double kLog2Pi = std::log(2.0 * std::numbers::pi);

Matrix block_diag(const Matrix& a) {
    const Eigen::Index n = a.rows();
    Matrix out = Matrix::Zero(2 * n, 2 * n);
    out.topLeftCorner(n, n) = a;
    out.bottomRightCorner(n, n) = a;
    return out;
}

// Inverse of the stable-spline factor: (1/sqrt(c w_k)) (e_k - e_{k+1})^T rows.
Matrix stable_spline_factor_inverse(const Hyperparameters& eta, std::size_t p) {
    const auto n = static_cast<Eigen::Index>(p);
    const Vector logw = stable_spline_log_weights(eta.decay, p);
    Matrix inv = Matrix::Zero(n, n);
    const double log_c = std::log(eta.scale);
    for (Eigen::Index k = 0; k < n; ++k) {
        const double s = std::exp(-0.5 * (log_c + logw[k]));
        inv(k, k) = s;
        if (k + 1 < n) inv(k, k + 1) = -s;
    }
    return inv;
}

}  // namespace

void Dataset::validate() const {
    if (u.size() != y.size()) throw std::invalid_argument("dataset: u and y must have equal length");
    if (y.size() < 1) throw std::invalid_argument("dataset: empty");
    if (!u.allFinite() || !y.allFinite()) throw std::invalid_argument("dataset: non-finite sample");
}

struct MarginalLikelihood::Solve {
    Matrix G;  // blockdiag(Gk, Gk)
    Eigen::LLT<Matrix> S;
    Vector b;  // G^T Phi^T y
};

MarginalLikelihood::MarginalLikelihood(const Dataset& data, std::size_t p) : p_(p) {
    data.validate();
    y_ = data.y;
    reg_ = build_regressors(data.y, data.u, p);
    const Matrix phi = reg_.stacked();
    gram_ = phi.transpose() * phi;
    cross_ = phi.transpose() * y_;
    yy_ = y_.squaredNorm();
}

MarginalLikelihood::Solve MarginalLikelihood::solve(const Hyperparameters& eta) const {
    eta.validate();
    Solve s;
    s.G = block_diag(stable_spline_factor(eta, p_));
    Matrix m = s.G.transpose() * gram_ * s.G / eta.noise_variance;
    m.diagonal().array() += 1.0;
    s.S.compute(m);
    if (s.S.info() != Eigen::Success) throw NumericalError("covariance not PD");
    s.b = s.G.transpose() * cross_;
    return s;
}

double MarginalLikelihood::neg_log(const Hyperparameters& eta) const {
    const auto s = solve(eta);
    const double T = static_cast<double>(y_.size());
    const Matrix& L = s.S.matrixLLT();
    const double log_det_s = 2.0 * L.diagonal().array().log().sum();
    const Vector w = s.S.matrixL().solve(s.b);
    const double quad = (yy_ - w.squaredNorm() / eta.noise_variance) / eta.noise_variance;
    return 0.5 * (T * kLog2Pi + T * std::log(eta.noise_variance) + log_det_s) + 0.5 * quad;
}

PredictorEstimate MarginalLikelihood::posterior_mean(const Hyperparameters& eta) const {
    const auto s = solve(eta);
    const Vector mean = s.G * s.S.solve(s.b) / eta.noise_variance;
    const auto n = static_cast<Eigen::Index>(p_);
    return PredictorEstimate(mean.head(n), mean.tail(n));
}

PosteriorMoments MarginalLikelihood::posterior_moments(const Hyperparameters& eta) const {
    const auto s = solve(eta);
    const Vector mean = s.G * s.S.solve(s.b) / eta.noise_variance;
    const auto n = static_cast<Eigen::Index>(p_);
    PosteriorMoments out;
    out.mean_f = mean.head(n);
    out.mean_g = mean.tail(n);
    out.covariance = s.G * s.S.solve(s.G.transpose());
    out.covariance = 0.5 * (out.covariance + out.covariance.transpose()).eval();
    return out;
}

PosteriorFactor MarginalLikelihood::posterior_factor(const Hyperparameters& eta) const {
    if (!(eta.scale > 0.0)) throw std::domain_error("posterior_factor: scale must be positive");
    const auto s = solve(eta);
    PosteriorFactor out;
    out.mean = s.G * s.S.solve(s.b) / eta.noise_variance;
    // S = L L^T, covariance = G S^{-1} G^T = (G L^{-T}) (G L^{-T})^T.
    const Matrix Lt = s.S.matrixU();
    out.factor = Lt.triangularView<Eigen::Upper>().solve<Eigen::OnTheRight>(s.G);
    out.whitening = Lt * block_diag(stable_spline_factor_inverse(eta, p_));
    const Vector logw = stable_spline_log_weights(eta.decay, p_);
    const double log_det_k = static_cast<double>(p_) * std::log(eta.scale) + logw.sum();
    const double log_det_s = 2.0 * Lt.diagonal().array().log().sum();
    out.log_det_covariance = 2.0 * log_det_k - log_det_s;
    return out;
}

double MarginalLikelihood::log_likelihood(const Vector& f, const Vector& g, double noise_variance) const {
    const Vector r = y_ - reg_.A * f - reg_.B * g;
    const double T = static_cast<double>(y_.size());
    return -0.5 * r.squaredNorm() / noise_variance - 0.5 * T * (kLog2Pi + std::log(noise_variance));
}

double estimate_noise_variance(const Dataset& data, std::size_t order) {
    data.validate();
    if (order == 0) throw std::domain_error("estimate_noise_variance: order must be positive");
    const std::size_t T = data.size();
    if (T <= 2 * order) throw std::invalid_argument("estimate_noise_variance: need T > 2 * order");
    const auto reg = build_regressors(data.y, data.u, order);
    // Exact fits of low-order ARX data make the output lags collinear, which
    // is harmless; collinear input lags mean the input does not excite.
    if (Eigen::ColPivHouseholderQR<Matrix>(reg.B).rank() < reg.B.cols()) {
        throw NumericalError("estimate_noise_variance: rank-deficient regressor matrix (degenerate excitation)");
    }
    const Matrix phi = reg.stacked();
    const Eigen::ColPivHouseholderQR<Matrix> qr(phi);
    const Vector theta = qr.solve(data.y);
    const double rss = (data.y - phi * theta).squaredNorm();
    if (!(rss > 0.0)) throw NumericalError("estimate_noise_variance: zero residual");
    return rss / static_cast<double>(T - 2 * order);
}

double neg_log_marginal(const Hyperparameters& eta, const Dataset& data, std::size_t p) {
    return MarginalLikelihood(data, p).neg_log(eta);
}

double neg_log_marginal_dense(const Hyperparameters& eta, const RegressorPair& reg, const Vector& y) {
    const auto cov = output_covariance(eta, reg);
    const double T = static_cast<double>(y.size());
    const double log_det = 2.0 * cov.cholesky.matrixLLT().diagonal().array().log().sum();
    const double quad = y.dot(cov.cholesky.solve(y));
    return 0.5 * (T * kLog2Pi + log_det) + 0.5 * quad;
}

PosteriorMoments posterior_moments_dense(const Hyperparameters& eta, const RegressorPair& reg, const Vector& y) {
    const auto cov = output_covariance(eta, reg);
    const Matrix K = stable_spline_kernel(eta, static_cast<std::size_t>(reg.A.cols())).K;
    const Matrix Kbar = block_diag(K);
    const Matrix phi = reg.stacked();
    const Vector alpha = cov.cholesky.solve(y);
    PosteriorMoments out;
    out.mean_f = K * reg.A.transpose() * alpha;
    out.mean_g = K * reg.B.transpose() * alpha;
    const Matrix kphi = Kbar * phi.transpose();
    out.covariance = Kbar - kphi * cov.cholesky.solve(kphi.transpose());
    return out;
}

Hyperparameters optimize_hyperparameters(const MarginalLikelihood& ml, const Hyperparameters& eta0,
                                         const HyperOptimizerOptions& options) {
    eta0.validate();
    const double sigma2 = eta0.noise_variance;
    const HyperBox& box = options.box;
    int finite_evaluations = 0;
    auto objective = [&](const Vector& theta) {
        const Eigen::Vector2d t = theta;
        if (!box.contains_theta(t)) return std::numeric_limits<double>::infinity();
        const double v = ml.neg_log(box.from_theta(t, sigma2));
        if (std::isfinite(v)) ++finite_evaluations;
        return v;
    };

    Eigen::Vector2d start = box.to_theta(eta0);
    start = start.cwiseMax(box.theta_lower()).cwiseMin(box.theta_upper());
    Vector best = start;
    double best_value = objective(best);
    for (int round = 0; round <= options.restarts; ++round) {
        const auto res = nelder_mead(objective, best, options.simplex);
        const double improvement = best_value - res.value;
        if (res.value < best_value || !std::isfinite(best_value)) {
            best = res.x;
            best_value = res.value;
        }
        if (!(improvement > 1e-10)) break;
    }
    if (finite_evaluations == 0 || !std::isfinite(best_value)) {
        throw NumericalError("optimize_hyperparameters: objective never finite");
    }
    return box.from_theta(Eigen::Vector2d(best), sigma2);
}

Hyperparameters optimize_hyperparameters(const Dataset& data, std::size_t p, const Hyperparameters& eta0,
                                         const HyperOptimizerOptions& options) {
    return optimize_hyperparameters(MarginalLikelihood(data, p), eta0, options);
}

Hyperparameters grid_start(const MarginalLikelihood& ml, double noise_variance, const HyperBox& box,
                           int points_per_axis) {
    const Eigen::Vector2d lo = box.theta_lower();
    const Eigen::Vector2d hi = box.theta_upper();
    Hyperparameters best = box.from_theta(box.theta_center(), noise_variance);
    double best_value = std::numeric_limits<double>::infinity();
    for (int i = 0; i < points_per_axis; ++i) {
        for (int j = 0; j < points_per_axis; ++j) {
            const double a = (i + 0.5) / points_per_axis;
            const double b = (j + 0.5) / points_per_axis;
            const Eigen::Vector2d theta(lo[0] + a * (hi[0] - lo[0]), lo[1] + b * (hi[1] - lo[1]));
            const auto eta = box.from_theta(theta, noise_variance);
            const double v = ml.neg_log(eta);
            if (v < best_value) {
                best_value = v;
                best = eta;
            }
        }
    }
    return best;
}

PosteriorMoments posterior_moments(const Hyperparameters& eta, const Dataset& data, std::size_t p) {
    return MarginalLikelihood(data, p).posterior_moments(eta);
}

IdentifyResult identify(const Dataset& data, const IdentifyOptions& options) {
    data.validate();
    double sigma2 = 0.0;
    try {
        sigma2 = estimate_noise_variance(data, options.p);
    } catch (const NumericalError& err) {
        const Eigen::Index n = data.y.size();
        const Vector diff = data.y.tail(n - 1) - data.y.head(n - 1);
        sigma2 = (diff.array() - diff.mean()).square().sum() / static_cast<double>(std::max<Eigen::Index>(n - 2, 1));
        spdlog::warn("{}; falling back to the variance of output differences ({})", err.what(), sigma2);
        if (!(sigma2 > 0.0)) throw;
    }
    const MarginalLikelihood ml(data, options.p);
    const auto start = grid_start(ml, sigma2, options.optimizer.box);
    IdentifyResult out;
    out.eta = optimize_hyperparameters(ml, start, options.optimizer);
    out.neg_log_marginal = ml.neg_log(out.eta);
    out.estimate = ml.posterior_mean(out.eta);
    out.forward = predictor_to_forward(out.estimate, options.expansion_length);
    return out;
}

}  // namespace stabid
