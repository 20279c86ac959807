#include "stabid/penalty.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "stabid/error.hpp"

namespace stabid {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Penalized {
    const MarginalLikelihood& ml;
    const HyperBox& box;
    double sigma2;
    PenaltyParams params;

    double operator()(const Vector& theta) const {
        const Eigen::Vector2d t = theta;
        if (!box.contains_theta(t)) return kInf;
        const auto eta = box.from_theta(t, sigma2);
        const double j = penalty(rho_of_eta(eta, ml), params);
        if (!std::isfinite(j)) return kInf;
        return ml.neg_log(eta) + j;
    }
};

// Shrinks the kernel scale until the posterior-mean radius drops below the
// barrier; c -> 0 gives f = 0, so this terminates inside the box.
Vector restore_feasibility(const MarginalLikelihood& ml, const HyperBox& box, double sigma2, Vector theta,
                           double delta, double& rho) {
    const double lower = box.theta_lower()[0];
    while (rho >= delta && theta[0] > lower) {
        theta[0] = std::max(theta[0] - 0.25, lower);
        rho = rho_of_eta(box.from_theta(Eigen::Vector2d(theta), sigma2), ml);
    }
    return theta;
}

}  // namespace

double penalty(double rho, const PenaltyParams& params) {
    if (!(params.alpha > 0.0)) throw std::domain_error("penalty: alpha must be positive");
    if (!(params.delta > 0.0)) throw std::domain_error("penalty: delta must be positive");
    if (!(rho >= 0.0)) throw std::domain_error("penalty: rho must be nonnegative");
    if (rho >= params.delta) return kInf;
    const double a = params.alpha;
    return std::pow(a * (params.delta - rho), -a) - std::pow(a * params.delta, -a);
}

double rho_of_eta(const Hyperparameters& eta, const MarginalLikelihood& ml) {
    return spectral_radius(ml.posterior_mean(eta).f);
}

double rho_of_eta(const Hyperparameters& eta, const Dataset& data, std::size_t p) {
    return rho_of_eta(eta, MarginalLikelihood(data, p));
}

PenaltyResult stabilize_ml_pf(const MarginalLikelihood& ml, const Hyperparameters& eta0,
                              const PenaltyOptions& options) {
    eta0.validate();
    const HyperBox& box = options.box;
    const double sigma2 = eta0.noise_variance;
    Vector theta = Eigen::Vector2d(box.to_theta(eta0).cwiseMax(box.theta_lower()).cwiseMin(box.theta_upper()));
    double rho = rho_of_eta(box.from_theta(Eigen::Vector2d(theta), sigma2), ml);

    NelderMeadOptions inner;
    inner.max_evaluations = options.inner_evaluations;

    PenaltyResult out;
    PenaltyParams params{1.0, rho * (1.0 + options.epsilon)};
    int outer = 0;
    while (rho >= 1.0) {
        if (outer >= options.max_outer_iterations) {
            throw NumericalError(fmt::format("penalty stabilization failed (radius {:.6f} after {} iterations)", rho,
                                             outer));
        }
        ++outer;
        const Penalized objective{ml, box, sigma2, params};
        const double start_value = objective(theta);
        const auto res = nelder_mead(objective, theta, inner);
        double value = start_value;
        if (res.value < start_value) {
            theta = res.x;
            value = res.value;
        }
        rho = rho_of_eta(box.from_theta(Eigen::Vector2d(theta), sigma2), ml);
        spdlog::debug("ml+pf iteration {}: alpha {:.3f} delta {:.6f} radius {:.6f} objective {:.6f}", outer,
                      params.alpha, params.delta, rho, value);

        // The barrier never moves outward; a stalled inner search tightens it.
        params.delta = std::min(params.delta, rho * (1.0 + options.epsilon));
        if (!(start_value - value >= options.stall_tolerance)) {
            params.alpha = std::max(params.alpha - options.alpha_step, options.alpha_floor);
            params.delta = std::max(params.delta - options.delta_step_fraction * params.delta, options.delta_floor);
            if (rho >= params.delta) theta = restore_feasibility(ml, box, sigma2, theta, params.delta, rho);
        }
    }

    params = PenaltyParams{options.epsilon, 1.0};
    const Penalized final_objective{ml, box, sigma2, params};
    // Restarted while it improves: the simplex tends to collapse against the wall.
    double current = final_objective(theta);
    for (int round = 0; round < options.final_restarts; ++round) {
        const auto res = nelder_mead(final_objective, theta, NelderMeadOptions{});
        if (!(res.value < current - options.stall_tolerance)) {
            if (res.value < current) theta = res.x;
            break;
        }
        theta = res.x;
        current = res.value;
    }

    out.eta = box.from_theta(Eigen::Vector2d(theta), sigma2);
    out.estimate = ml.posterior_mean(out.eta);
    out.rho = spectral_radius(out.estimate.f);
    out.neg_log_marginal = ml.neg_log(out.eta);
    out.outer_iterations = outer;
    out.final_params = params;
    if (!(out.rho < 1.0)) {
        throw NumericalError(fmt::format("penalty stabilization failed (final radius {:.6f})", out.rho));
    }
    return out;
}

PenaltyResult stabilize_ml_pf(const Dataset& data, std::size_t p, const Hyperparameters& eta0,
                              const PenaltyOptions& options) {
    return stabilize_ml_pf(MarginalLikelihood(data, p), eta0, options);
}

}  // namespace stabid
