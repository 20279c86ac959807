#pragma once

#include <cstdint>

#include "stabid/kernel.hpp"
#include "stabid/lti.hpp"
#include "stabid/nelder_mead.hpp"

namespace stabid {

struct Dataset {
    Vector u;
    Vector y;
    std::uint64_t seed = 0;  // generator seed for synthetic data, 0 otherwise

    std::size_t size() const { return static_cast<std::size_t>(y.size()); }
    void validate() const;
};

/// Gaussian posterior of the stacked predictor [f; g] at fixed eta.
struct PosteriorMoments {
    Vector mean_f;
    Vector mean_g;
    Matrix covariance;  // 2p x 2p
};

/// Posterior of [f; g] in factored form: covariance = factor * factor^T,
/// whitening = factor^{-1}. Both are exact; no covariance matrix is inverted.
struct PosteriorFactor {
    Vector mean;       // [f; g]
    Matrix factor;     // 2p x 2p
    Matrix whitening;  // 2p x 2p
    double log_det_covariance = 0.0;
};

/// Marginal likelihood machinery for one dataset and truncation length.
///
/// Sigma_eta = Phi Kbar Phi^T + sigma^2 I is never formed. With Kbar = G G^T
/// (exact stable-spline factor) every quantity reduces to the 2p x 2p matrix
/// S = I + G^T Phi^T Phi G / sigma^2, so an evaluation costs O(p^3)
/// independently of the data length.
class MarginalLikelihood {
public:
    MarginalLikelihood(const Dataset& data, std::size_t p);

    std::size_t p() const { return p_; }
    std::size_t data_length() const { return static_cast<std::size_t>(y_.size()); }

    /// -ln p_eta(y) = 1/2 ln det(2 pi Sigma) + 1/2 y^T Sigma^{-1} y.
    double neg_log(const Hyperparameters& eta) const;
    /// E_eta[f | y], E_eta[g | y].
    PredictorEstimate posterior_mean(const Hyperparameters& eta) const;
    PosteriorMoments posterior_moments(const Hyperparameters& eta) const;
    PosteriorFactor posterior_factor(const Hyperparameters& eta) const;

    /// -1/2 ||y - A f - B g||^2 / sigma^2 - T/2 ln(2 pi sigma^2).
    double log_likelihood(const Vector& f, const Vector& g, double noise_variance) const;

    const RegressorPair& regressors() const { return reg_; }
    const Vector& y() const { return y_; }

private:
    struct Solve;
    Solve solve(const Hyperparameters& eta) const;

    std::size_t p_;
    Vector y_;
    RegressorPair reg_;
    Matrix gram_;   // Phi^T Phi
    Vector cross_;  // Phi^T y
    double yy_;
};

/// Least-squares ARX fit of the given order; RSS / (T - 2 order).
/// Throws NumericalError when the input lags are rank deficient (the input
/// does not excite the system) or the fit leaves no residual.
double estimate_noise_variance(const Dataset& data, std::size_t order);

double neg_log_marginal(const Hyperparameters& eta, const Dataset& data, std::size_t p);

/// Reference route through the full T x T covariance and its Cholesky factor.
/// Used for small problems and as a cross-check of MarginalLikelihood.
double neg_log_marginal_dense(const Hyperparameters& eta, const RegressorPair& reg, const Vector& y);
PosteriorMoments posterior_moments_dense(const Hyperparameters& eta, const RegressorPair& reg, const Vector& y);

struct HyperOptimizerOptions {
    HyperBox box{};
    NelderMeadOptions simplex{};
    int restarts = 2;
};

/// Nelder-Mead on -ln p_eta(y) over theta = (log c, logit beta) inside the
/// box; the noise variance of eta0 is kept fixed.
Hyperparameters optimize_hyperparameters(const MarginalLikelihood& ml, const Hyperparameters& eta0,
                                         const HyperOptimizerOptions& options = {});
Hyperparameters optimize_hyperparameters(const Dataset& data, std::size_t p, const Hyperparameters& eta0,
                                         const HyperOptimizerOptions& options = {});

/// Best point of a coarse theta grid over the box; used as a Nelder-Mead start.
Hyperparameters grid_start(const MarginalLikelihood& ml, double noise_variance, const HyperBox& box,
                           int points_per_axis = 7);

PosteriorMoments posterior_moments(const Hyperparameters& eta, const Dataset& data, std::size_t p);

struct IdentifyResult {
    PredictorEstimate estimate;
    ForwardModel forward;
    Hyperparameters eta;
    double neg_log_marginal = 0.0;
};

struct IdentifyOptions {
    std::size_t p = 30;
    std::size_t expansion_length = kDefaultExpansionLength;
    HyperOptimizerOptions optimizer{};
};

/// Noise-variance pre-estimate, marginal-likelihood maximization, posterior
/// mean and forward expansion.
IdentifyResult identify(const Dataset& data, const IdentifyOptions& options = {});

}  // namespace stabid
