#include "stabid/mcmc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include <Eigen/Eigenvalues>
#include <spdlog/spdlog.h>

#include "stabid/error.hpp"
#include "stabid/harness.hpp"

namespace stabid {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
const double kLog2Pi = std::log(2.0 * std::numbers::pi);

double log_sum_exp(const std::vector<double>& v) {
    double m = -kInf;
    for (double x : v) m = std::max(m, x);
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (double x : v) s += std::exp(x - m);
    return m + std::log(s);
}

Eigen::Vector2d clamp_inside(Eigen::Vector2d x, const Eigen::Vector2d& margin, const HyperBox& box) {
    const Eigen::Vector2d lo = box.theta_lower();
    const Eigen::Vector2d hi = box.theta_upper();
    for (int i = 0; i < 2; ++i) {
        if (hi[i] - lo[i] <= 2.0 * margin[i]) {
            x[i] = 0.5 * (lo[i] + hi[i]);
        } else {
            x[i] = std::clamp(x[i], lo[i] + margin[i], hi[i] - margin[i]);
        }
    }
    return x;
}

}  // namespace

double HyperPrior::log_density(const Eigen::Vector2d& theta) const {
    return box.contains_theta(theta) ? 0.0 : -kInf;
}

Eigen::Matrix2d finite_difference_hessian(const LogDensity2& fn, const Eigen::Vector2d& x, const HyperBox& box) {
    Eigen::Vector2d h;
    for (int i = 0; i < 2; ++i) h[i] = 1e-4 * (1.0 + std::abs(x[i]));
    const Eigen::Vector2d c = clamp_inside(x, 1.5 * h, box);
    const double f0 = fn(c);
    Eigen::Matrix2d H;
    for (int i = 0; i < 2; ++i) {
        Eigen::Vector2d e = Eigen::Vector2d::Zero();
        e[i] = h[i];
        H(i, i) = (fn(c + e) - 2.0 * f0 + fn(c - e)) / (h[i] * h[i]);
    }
    const Eigen::Vector2d e0(h[0], 0.0);
    const Eigen::Vector2d e1(0.0, h[1]);
    const double mixed = (fn(c + e0 + e1) - fn(c + e0 - e1) - fn(c - e0 + e1) + fn(c - e0 - e1)) / (4.0 * h[0] * h[1]);
    H(0, 1) = mixed;
    H(1, 0) = mixed;
    return H;
}

Eigen::Matrix2d repair_hessian(const Eigen::Matrix2d& h, double min_eigenvalue) {
    const Eigen::Matrix2d sym = 0.5 * (h + h.transpose());
    if (!sym.allFinite()) return Eigen::Matrix2d::Identity();
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(sym);
    Eigen::Vector2d lambda = es.eigenvalues();
    const double top = lambda.maxCoeff();
    if (!(top > 0.0)) return Eigen::Matrix2d::Identity();
    lambda = lambda.cwiseMax(std::max(1e-6 * top, min_eigenvalue));
    return es.eigenvectors() * lambda.asDiagonal() * es.eigenvectors().transpose();
}

double box_curvature_floor(const HyperBox& box) {
    return 1.0 / (box.theta_upper() - box.theta_lower()).squaredNorm();
}

ModeAndHessian mode_and_hessian(const LogDensity2& neg_log_posterior, const Eigen::Vector2d& start,
                                const HyperBox& box) {
    const Objective obj = [&](const Vector& t) {
        const Eigen::Vector2d th = t;
        if (!box.contains_theta(th)) return kInf;
        return neg_log_posterior(th);
    };
    Vector x = start;
    double value = obj(x);
    for (int round = 0; round < 3; ++round) {
        const auto res = nelder_mead(obj, x, NelderMeadOptions{});
        const bool improved = res.value < value - 1e-10;
        if (res.value < value) {
            x = res.x;
            value = res.value;
        }
        if (!improved) break;
    }
    ModeAndHessian out;
    out.theta = x;
    out.neg_log_posterior = value;
    out.hessian = repair_hessian(finite_difference_hessian(neg_log_posterior, out.theta, box), box_curvature_floor(box));
    return out;
}

ModeAndHessian posterior_mode_and_hessian(const MarginalLikelihood& ml, const Hyperparameters& start,
                                          const HyperPrior& prior) {
    start.validate();
    const double sigma2 = start.noise_variance;
    const HyperBox& box = prior.box;
    const LogDensity2 nlp = [&](const Eigen::Vector2d& t) {
        const double lp = prior.log_density(t);
        if (!std::isfinite(lp)) return kInf;
        return ml.neg_log(box.from_theta(t, sigma2)) - lp;
    };
    const Eigen::Vector2d t0 = box.to_theta(start).cwiseMax(box.theta_lower()).cwiseMin(box.theta_upper());
    return mode_and_hessian(nlp, t0, box);
}

RandomWalkChain random_walk_metropolis(const LogDensity2& log_target, const Eigen::Vector2d& start,
                                       const Eigen::Matrix2d& hessian, double gamma, std::size_t n,
                                       std::size_t burn_in, std::uint64_t seed) {
    if (!(gamma > 0.0)) throw std::domain_error("random_walk_metropolis: gamma must be positive");
    Eigen::LLT<Eigen::Matrix2d> llt(repair_hessian(hessian).inverse() * gamma);
    if (llt.info() != Eigen::Success) throw NumericalError("random_walk_metropolis: proposal covariance not PD");
    const Eigen::Matrix2d L = llt.matrixL();

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);

    Eigen::Vector2d x = start;
    double lx = log_target(x);
    if (!std::isfinite(lx)) throw std::invalid_argument("random_walk_metropolis: start has zero density");

    RandomWalkChain out;
    out.samples.reserve(n);
    out.log_target.reserve(n);
    std::size_t accepted = 0;
    const std::size_t total = burn_in + n;
    for (std::size_t k = 0; k < total; ++k) {
        const Eigen::Vector2d z(normal(rng), normal(rng));
        const Eigen::Vector2d cand = x + L * z;
        const double lc = log_target(cand);
        const double u = unif(rng);
        if (std::isfinite(lc) && std::log(u) <= lc - lx) {
            x = cand;
            lx = lc;
            ++accepted;
        }
        if (k >= burn_in) {
            out.samples.push_back(x);
            out.log_target.push_back(lx);
        }
    }
    out.acceptance_rate = total ? static_cast<double>(accepted) / static_cast<double>(total) : 0.0;
    return out;
}

GammaTuning tune_gamma(const LogDensity2& log_target, const Eigen::Vector2d& start, const Eigen::Matrix2d& hessian,
                       double gamma0, std::uint64_t seed, std::size_t pilot_length, int max_pilots) {
    if (!(gamma0 > 0.0)) throw std::domain_error("tune_gamma: gamma0 must be positive");
    GammaTuning best;
    double best_distance = kInf;
    double gamma = gamma0;
    for (int pilot = 1; pilot <= max_pilots; ++pilot) {
        const auto chain = random_walk_metropolis(log_target, start, hessian, gamma, pilot_length, 0,
                                                  derive_seed(seed, static_cast<std::uint64_t>(pilot)));
        const double acc = chain.acceptance_rate;
        const double distance = std::abs(acc - 0.3);
        if (distance < best_distance) {
            best_distance = distance;
            best.gamma = gamma;
            best.acceptance_rate = acc;
        }
        best.pilots = pilot;
        if (acc >= 0.2 && acc <= 0.4) {
            best.gamma = gamma;
            best.acceptance_rate = acc;
            best.converged = true;
            return best;
        }
        gamma = acc > 0.4 ? 2.0 * gamma : 0.5 * gamma;
    }
    spdlog::warn("gamma tuning did not reach the target acceptance after {} pilots; using gamma {:.4g} (acceptance "
                 "{:.3f})",
                 max_pilots, best.gamma, best.acceptance_rate);
    return best;
}

HyperChain sample_hyperposterior(const MarginalLikelihood& ml, const HyperPrior& prior, const ModeAndHessian& mode,
                                 double noise_variance, std::size_t n, std::size_t burn_in, double gamma,
                                 std::uint64_t seed) {
    const HyperBox& box = prior.box;
    const LogDensity2 target = [&](const Eigen::Vector2d& t) {
        const double lp = prior.log_density(t);
        if (!std::isfinite(lp)) return -kInf;
        return lp - ml.neg_log(box.from_theta(t, noise_variance));
    };
    const auto raw = random_walk_metropolis(target, mode.theta, mode.hessian, gamma, n, burn_in, seed);
    HyperChain out;
    out.samples.reserve(raw.samples.size());
    for (const auto& t : raw.samples) out.samples.push_back(box.from_theta(t, noise_variance));
    out.mode = box.from_theta(mode.theta, noise_variance);
    out.hessian = mode.hessian;
    out.acceptance_rate = raw.acceptance_rate;
    out.burn_in = burn_in;
    out.gamma = gamma;
    return out;
}

double estimate_truncation_constant(const Hyperparameters& eta, std::size_t p, std::size_t draws,
                                    std::uint64_t seed) {
    if (draws < 100) throw std::invalid_argument("estimate_truncation_constant: at least 100 draws required");
    if (p == 0) throw std::invalid_argument("estimate_truncation_constant: p must be positive");
    const Matrix G = stable_spline_factor(eta, p);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Vector z(static_cast<Eigen::Index>(p));
    std::size_t stable = 0;
    for (std::size_t k = 0; k < draws; ++k) {
        for (auto& v : z) v = normal(rng);
        const Vector f = G * z;
        if (schur_stable(as_span(f))) ++stable;
    }
    if (stable == 0) return kInf;
    return static_cast<double>(draws) / static_cast<double>(stable);
}

KappaCache::KappaCache(std::size_t p, std::size_t draws, std::uint64_t seed, double quantum, HyperBox box)
    : p_(p), draws_(draws), seed_(seed), quantum_(quantum), box_(box) {
    if (!(quantum > 0.0)) throw std::invalid_argument("KappaCache: quantum must be positive");
}

double KappaCache::operator()(const Hyperparameters& eta) {
    const Eigen::Vector2d t = box_.to_theta(eta);
    const auto key = std::make_pair(std::llround(t[0] / quantum_), std::llround(t[1] / quantum_));
    std::lock_guard<std::mutex> lock(mutex_);
    if (auto it = values_.find(key); it != values_.end()) return it->second;
    const Eigen::Vector2d grid(static_cast<double>(key.first) * quantum_, static_cast<double>(key.second) * quantum_);
    const auto point = box_.from_theta(grid, eta.noise_variance);
    const auto s = derive_seed(seed_, static_cast<std::uint64_t>(key.first), static_cast<std::uint64_t>(key.second));
    const double k = estimate_truncation_constant(point, p_, draws_, s);
    values_.emplace(key, k);
    return k;
}

StablePosterior::StablePosterior(const MarginalLikelihood& ml, const std::vector<Hyperparameters>& etas,
                                 KappaPolicy policy, std::size_t kappa_draws, std::uint64_t seed)
    : ml_(ml) {
    if (policy == KappaPolicy::Unit) {
        build(etas, [](const Hyperparameters&) { return 1.0; });
    } else {
        KappaCache cache(ml.p(), kappa_draws, seed);
        build(etas, [&](const Hyperparameters& e) { return cache(e); });
    }
}

StablePosterior::StablePosterior(const MarginalLikelihood& ml, const std::vector<Hyperparameters>& etas,
                                 const std::function<double(const Hyperparameters&)>& kappa)
    : ml_(ml) {
    build(etas, kappa);
}

void StablePosterior::build(const std::vector<Hyperparameters>& etas,
                            const std::function<double(const Hyperparameters&)>& kappa) {
    if (etas.empty()) throw std::invalid_argument("StablePosterior: no hyperparameter samples");
    const std::size_t p = ml_.p();
    components_.reserve(etas.size());
    for (const auto& eta : etas) {
        eta.validate();
        if (!(eta.scale > 0.0)) throw std::domain_error("StablePosterior: kernel scale must be positive");
        const double k = kappa(eta);
        if (!std::isfinite(k)) continue;
        if (!(k >= 1.0)) throw std::domain_error("StablePosterior: truncation constant below 1");
        MixtureComponent c;
        c.eta = eta;
        c.posterior = ml_.posterior_factor(eta);
        c.log_marginal = -ml_.neg_log(eta);
        c.log_kappa = std::log(k);
        c.log_prior_scale = -0.5 * (stable_spline_log_weights(eta.decay, p).array() + std::log(eta.scale)).matrix();
        components_.push_back(std::move(c));
    }
    if (components_.empty()) throw NumericalError("stable region unreachable: every truncation constant is infinite");
}

double StablePosterior::log_prior(const MixtureComponent& c, const Vector& v) {
    const Eigen::Index p = v.size();
    double quad = 0.0;
    double log_det = 0.0;
    for (Eigen::Index k = 0; k < p; ++k) {
        const double next = k + 1 < p ? v[k + 1] : 0.0;
        const double z = (v[k] - next) * std::exp(c.log_prior_scale[k]);
        quad += z * z;
        log_det -= 2.0 * c.log_prior_scale[k];
    }
    return -0.5 * quad - 0.5 * log_det - 0.5 * static_cast<double>(p) * kLog2Pi;
}

double StablePosterior::log_proposal_density(const Vector& x) const {
    const auto d = static_cast<double>(x.size());
    std::vector<double> terms;
    terms.reserve(components_.size());
    for (const auto& c : components_) {
        const Vector w = c.posterior.whitening * (x - c.posterior.mean);
        terms.push_back(-0.5 * w.squaredNorm() - 0.5 * c.posterior.log_det_covariance - 0.5 * d * kLog2Pi);
    }
    return log_sum_exp(terms) - std::log(static_cast<double>(components_.size()));
}

double StablePosterior::proposal_density(const Vector& x) const { return std::exp(log_proposal_density(x)); }

Vector StablePosterior::sample_proposal(std::mt19937_64& rng) const {
    std::uniform_int_distribution<std::size_t> pick(0, components_.size() - 1);
    std::normal_distribution<double> normal(0.0, 1.0);
    const auto& c = components_[pick(rng)];
    Vector z(c.posterior.mean.size());
    for (auto& v : z) v = normal(rng);
    return c.posterior.mean + c.posterior.factor * z;
}

double StablePosterior::log_stable_posterior(const Vector& x) const {
    const auto p = static_cast<Eigen::Index>(ml_.p());
    if (x.size() != 2 * p) throw std::invalid_argument("log_stable_posterior: dimension mismatch");
    const Vector f = x.head(p);
    const Vector g = x.tail(p);
    if (!schur_stable(as_span(f))) return -kInf;
    const double sigma2 = components_.front().eta.noise_variance;
    const double loglik = ml_.log_likelihood(f, g, sigma2);
    std::vector<double> terms;
    terms.reserve(components_.size());
    for (const auto& c : components_) {
        terms.push_back(loglik + c.log_kappa + log_prior(c, f) + log_prior(c, g) - c.log_marginal);
    }
    return log_sum_exp(terms) - std::log(static_cast<double>(components_.size()));
}

double StablePosterior::stable_posterior(const Vector& x) const { return std::exp(log_stable_posterior(x)); }

StableChain sample_stable_posterior(const StablePosterior& posterior, const Vector& start, std::size_t n,
                                    std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unif(0.0, 1.0);

    Vector x = start;
    double lp = posterior.log_stable_posterior(x);
    for (int attempt = 0; !std::isfinite(lp) && attempt < 10000; ++attempt) {
        x = posterior.sample_proposal(rng);
        lp = posterior.log_stable_posterior(x);
    }
    if (!std::isfinite(lp)) throw NumericalError("stable region unreachable");
    double lq = posterior.log_proposal_density(x);

    StableChain out;
    out.samples.reserve(n);
    out.log_ps.reserve(n);
    std::size_t accepted = 0;
    for (std::size_t k = 0; k < n; ++k) {
        Vector cand = posterior.sample_proposal(rng);
        const double lpc = posterior.log_stable_posterior(cand);
        const double u = unif(rng);
        if (std::isfinite(lpc)) {
            const double lqc = posterior.log_proposal_density(cand);
            if (std::log(u) <= (lpc - lqc) - (lp - lq)) {
                x = std::move(cand);
                lp = lpc;
                lq = lqc;
                ++accepted;
            }
        }
        out.samples.push_back(x);
        out.log_ps.push_back(lp);
    }
    out.acceptance_rate = n ? static_cast<double>(accepted) / static_cast<double>(n) : 0.0;
    return out;
}

ForwardModel mcmc_posterior_mean(const StableChain& chain, std::size_t p, std::size_t L) {
    if (chain.samples.empty()) throw std::invalid_argument("mcmc_posterior_mean: empty chain");
    const auto ip = static_cast<Eigen::Index>(p);
    ForwardModel out;
    out.p_ir = Vector::Zero(static_cast<Eigen::Index>(L));
    out.h_ir = Vector::Zero(static_cast<Eigen::Index>(L));
    const Vector* previous = nullptr;
    double previous_radius = 0.0;
    for (const auto& x : chain.samples) {
        if (x.size() != 2 * ip) throw std::invalid_argument("mcmc_posterior_mean: dimension mismatch");
        const PredictorEstimate est(x.head(ip), x.tail(ip));
        const auto fm = expand_predictor(est, L);
        out.p_ir += fm.p_ir;
        out.h_ir += fm.h_ir;
        // Rejected proposals repeat the previous state.
        const bool repeat = previous && (previous->head(ip) - x.head(ip)).cwiseAbs().maxCoeff() == 0.0;
        const double r = repeat ? previous_radius : spectral_radius(as_span(est.f));
        out.spectral_radius = std::max(out.spectral_radius, r);
        previous = &x;
        previous_radius = r;
    }
    const double n = static_cast<double>(chain.samples.size());
    out.p_ir /= n;
    out.h_ir /= n;
    return out;
}

PredictorEstimate mcmc_map(const StableChain& chain, std::size_t p) {
    if (chain.samples.empty() || chain.samples.size() != chain.log_ps.size()) {
        throw std::invalid_argument("mcmc_map: empty or inconsistent chain");
    }
    std::size_t best = 0;
    for (std::size_t i = 1; i < chain.log_ps.size(); ++i) {
        if (chain.log_ps[i] > chain.log_ps[best]) best = i;
    }
    const auto ip = static_cast<Eigen::Index>(p);
    return PredictorEstimate(chain.samples[best].head(ip), chain.samples[best].tail(ip));
}

double effective_sample_size(std::span<const double> trace) {
    const std::size_t n = trace.size();
    if (n < 4) return static_cast<double>(n);
    double mean = 0.0;
    for (double v : trace) mean += v;
    mean /= static_cast<double>(n);
    auto autocov = [&](std::size_t lag) {
        double s = 0.0;
        for (std::size_t i = 0; i + lag < n; ++i) s += (trace[i] - mean) * (trace[i + lag] - mean);
        return s / static_cast<double>(n);
    };
    const double c0 = autocov(0);
    if (!(c0 > 0.0)) return static_cast<double>(n);
    double sum = 0.0;
    double prev_pair = kInf;
    for (std::size_t k = 0; 2 * k + 1 < n; ++k) {
        double pair = (autocov(2 * k) + autocov(2 * k + 1)) / c0;
        if (!(pair > 0.0)) break;
        pair = std::min(pair, prev_pair);
        sum += pair;
        prev_pair = pair;
    }
    const double tau = std::max(2.0 * sum - 1.0, 1.0 / static_cast<double>(n));
    return std::min(static_cast<double>(n) / tau, static_cast<double>(n));
}

McmcResult run_mcmc(const MarginalLikelihood& ml, const Hyperparameters& eta_hat, std::uint64_t seed,
                    const McmcOptions& options) {
    if (options.components == 0 || options.hyper_samples < options.components) {
        throw std::invalid_argument("run_mcmc: need at least as many hyperparameter samples as components");
    }
    const double sigma2 = eta_hat.noise_variance;
    const HyperBox& box = options.prior.box;
    McmcResult out;

    const auto mode = posterior_mode_and_hessian(ml, eta_hat, options.prior);
    double gamma = options.gamma0;
    if (options.tune) {
        const LogDensity2 target = [&](const Eigen::Vector2d& t) {
            const double lp = options.prior.log_density(t);
            if (!std::isfinite(lp)) return -kInf;
            return lp - ml.neg_log(box.from_theta(t, sigma2));
        };
        const auto tuning = tune_gamma(target, mode.theta, mode.hessian, options.gamma0, derive_seed(seed, 0, 1),
                                       options.pilot_length, options.max_pilots);
        gamma = tuning.gamma;
        out.diagnostics.pilots = tuning.pilots;
    }
    out.hyper = sample_hyperposterior(ml, options.prior, mode, sigma2, options.hyper_samples, options.burn_in, gamma,
                                      derive_seed(seed, 0, 2));

    const std::size_t stride = options.hyper_samples / options.components;
    std::vector<Hyperparameters> thinned;
    thinned.reserve(options.components);
    for (std::size_t i = 0; i < options.components; ++i) thinned.push_back(out.hyper.samples[(i + 1) * stride - 1]);

    const StablePosterior posterior(ml, thinned, options.kappa_policy, options.kappa_draws, derive_seed(seed, 0, 3));
    const auto start = ml.posterior_factor(out.hyper.mode).mean;
    out.chain = sample_stable_posterior(posterior, start, options.chain_length, derive_seed(seed, 0, 4));

    const std::size_t p = ml.p();
    out.mean = mcmc_posterior_mean(out.chain, p);
    out.map = mcmc_map(out.chain, p);
    out.map_forward = predictor_to_forward(out.map);

    std::vector<double> log_c;
    log_c.reserve(out.hyper.samples.size());
    for (const auto& e : out.hyper.samples) log_c.push_back(std::log(e.scale));
    out.diagnostics.gamma = gamma;
    out.diagnostics.hyper_acceptance = out.hyper.acceptance_rate;
    out.diagnostics.stable_acceptance = out.chain.acceptance_rate;
    out.diagnostics.hyper_ess = effective_sample_size(log_c);
    out.diagnostics.stable_ess = effective_sample_size(out.chain.log_ps);
    out.diagnostics.components = posterior.size();
    return out;
}

}  // namespace stabid
