#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include "stabid/empirical_bayes.hpp"

namespace stabid {

/// Flat prior on the hyperparameter box, uniform in theta = (log c, logit beta).
struct HyperPrior {
    HyperBox box{};

    /// 0 inside the box, -infinity outside.
    double log_density(const Eigen::Vector2d& theta) const;
};

/// Log density over theta; -infinity marks zero mass.
using LogDensity2 = std::function<double(const Eigen::Vector2d&)>;

/// Central differences with step 1e-4 (1 + |x_i|), symmetrized. The stencil
/// is shifted inside `box` when x sits on its edge.
Eigen::Matrix2d finite_difference_hessian(const LogDensity2& fn, const Eigen::Vector2d& x, const HyperBox& box);

/// Eigenvalues floored at max(1e-6 times the largest one, min_eigenvalue)
/// (identity if none is positive).
Eigen::Matrix2d repair_hessian(const Eigen::Matrix2d& h, double min_eigenvalue = 0.0);

/// 1 / (theta diameter of the box)^2. Used as an absolute eigenvalue floor so
/// that a flat posterior direction cannot give proposals wider than the box.
double box_curvature_floor(const HyperBox& box);

struct ModeAndHessian {
    Eigen::Vector2d theta = Eigen::Vector2d::Zero();
    Eigen::Matrix2d hessian = Eigen::Matrix2d::Identity();  // of the negative log posterior
    double neg_log_posterior = 0.0;
};

ModeAndHessian mode_and_hessian(const LogDensity2& neg_log_posterior, const Eigen::Vector2d& start,
                                const HyperBox& box);
ModeAndHessian posterior_mode_and_hessian(const MarginalLikelihood& ml, const Hyperparameters& start,
                                          const HyperPrior& prior);

struct RandomWalkChain {
    std::vector<Eigen::Vector2d> samples;
    std::vector<double> log_target;
    double acceptance_rate = 0.0;
};

/// Metropolis random walk with proposal N(current, gamma H^-1). Keeps the
/// `n` states after `burn_in` steps.
RandomWalkChain random_walk_metropolis(const LogDensity2& log_target, const Eigen::Vector2d& start,
                                       const Eigen::Matrix2d& hessian, double gamma, std::size_t n,
                                       std::size_t burn_in, std::uint64_t seed);

struct GammaTuning {
    double gamma = 0.0;
    double acceptance_rate = 0.0;
    int pilots = 0;
    bool converged = false;
};

/// Doubles or halves gamma over 500-step pilots until the acceptance lies in
/// [0.2, 0.4] (at most 12 pilots); on the cap the pilot closest to 0.3 wins.
GammaTuning tune_gamma(const LogDensity2& log_target, const Eigen::Vector2d& start, const Eigen::Matrix2d& hessian,
                       double gamma0, std::uint64_t seed, std::size_t pilot_length = 500, int max_pilots = 12);

struct HyperChain {
    std::vector<Hyperparameters> samples;
    Hyperparameters mode;
    Eigen::Matrix2d hessian = Eigen::Matrix2d::Identity();
    double acceptance_rate = 0.0;
    std::size_t burn_in = 0;
    double gamma = 0.0;
};

HyperChain sample_hyperposterior(const MarginalLikelihood& ml, const HyperPrior& prior, const ModeAndHessian& mode,
                                 double noise_variance, std::size_t n, std::size_t burn_in, double gamma,
                                 std::uint64_t seed);

/// M / (number of stable draws) with f ~ N(0, K_eta); +infinity when no draw is stable.
double estimate_truncation_constant(const Hyperparameters& eta, std::size_t p, std::size_t draws,
                                    std::uint64_t seed);

/// Memoizes truncation constants on a grid over theta. Each grid point has
/// its own seed, so values do not depend on the order of requests.
class KappaCache {
public:
    KappaCache(std::size_t p, std::size_t draws, std::uint64_t seed, double quantum = 0.01,
               HyperBox box = HyperBox{});

    double operator()(const Hyperparameters& eta);

private:
    std::size_t p_;
    std::size_t draws_;
    std::uint64_t seed_;
    double quantum_;
    HyperBox box_;
    std::mutex mutex_;
    std::map<std::pair<long long, long long>, double> values_;
};

enum class KappaPolicy { Estimate, Unit };

/// Gaussian posterior of [f; g] at one hyperparameter sample, with everything
/// the mixture evaluations need.
struct MixtureComponent {
    Hyperparameters eta;
    PosteriorFactor posterior;
    double log_marginal = 0.0;  // ln p_eta(y)
    double log_kappa = 0.0;
    Vector log_prior_scale;     // -1/2 ln(c w_k)
};

/// The proposal mixture (1/N) sum N(mu_i, Sigma_i) and the stable posterior
/// p_S(x | y) proportional to sum_i p(y | x) k_i p_i(f) p_i(g) / p_i(y).
/// Components whose truncation constant is infinite carry no mass.
class StablePosterior {
public:
    StablePosterior(const MarginalLikelihood& ml, const std::vector<Hyperparameters>& etas, KappaPolicy policy,
                    std::size_t kappa_draws, std::uint64_t seed);
    StablePosterior(const MarginalLikelihood& ml, const std::vector<Hyperparameters>& etas,
                    const std::function<double(const Hyperparameters&)>& kappa);

    std::size_t size() const { return components_.size(); }
    std::size_t p() const { return ml_.p(); }
    const std::vector<MixtureComponent>& components() const { return components_; }

    double log_proposal_density(const Vector& x) const;
    double proposal_density(const Vector& x) const;
    Vector sample_proposal(std::mt19937_64& rng) const;

    /// -infinity for unstable f.
    double log_stable_posterior(const Vector& x) const;
    double stable_posterior(const Vector& x) const;

    /// ln N(v; 0, K_eta) through the exact kernel factor.
    static double log_prior(const MixtureComponent& c, const Vector& v);

private:
    void build(const std::vector<Hyperparameters>& etas, const std::function<double(const Hyperparameters&)>& kappa);

    const MarginalLikelihood& ml_;
    std::vector<MixtureComponent> components_;
};

struct StableChain {
    std::vector<Vector> samples;  // [f; g]
    std::vector<double> log_ps;
    double acceptance_rate = 0.0;
};

/// Independence Metropolis-Hastings targeting p_S with the mixture proposal.
/// An unstable start is replaced by proposal draws (at most 10^4 attempts).
/// Throws NumericalError("stable region unreachable") if none is stable.
StableChain sample_stable_posterior(const StablePosterior& posterior, const Vector& start, std::size_t n,
                                    std::uint64_t seed);

/// Term-wise average of the forward expansions of every sample. The
/// spectral radius is the largest over the samples, which is the dominant
/// pole of the averaged transfer functions.
ForwardModel mcmc_posterior_mean(const StableChain& chain, std::size_t p, std::size_t L = kDefaultExpansionLength);

/// Sample with the largest recorded log_ps; earliest index on ties.
PredictorEstimate mcmc_map(const StableChain& chain, std::size_t p);

/// Autocorrelation-based effective sample size (Geyer initial positive sequence).
double effective_sample_size(std::span<const double> trace);

struct McmcOptions {
    std::size_t burn_in = 2000;
    std::size_t hyper_samples = 2000;
    std::size_t components = 200;
    std::size_t chain_length = 2000;
    std::size_t kappa_draws = 2000;
    KappaPolicy kappa_policy = KappaPolicy::Estimate;
    double gamma0 = 2.38 * 2.38 / 2.0;
    bool tune = true;
    std::size_t pilot_length = 500;
    int max_pilots = 12;
    HyperPrior prior{};
};

struct McmcDiagnostics {
    double gamma = 0.0;
    int pilots = 0;
    double hyper_acceptance = 0.0;
    double stable_acceptance = 0.0;
    double hyper_ess = 0.0;
    double stable_ess = 0.0;
    std::size_t components = 0;
};

struct McmcResult {
    HyperChain hyper;
    StableChain chain;
    ForwardModel mean;
    PredictorEstimate map;
    ForwardModel map_forward;
    McmcDiagnostics diagnostics;
};

/// Hyperparameter chain from the posterior mode, thinned mixture, stable
/// chain started at the posterior mean of the mode, and both estimators.
McmcResult run_mcmc(const MarginalLikelihood& ml, const Hyperparameters& eta_hat, std::uint64_t seed,
                    const McmcOptions& options = {});

}  // namespace stabid
