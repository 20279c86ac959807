#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "doctest.h"
#include "stabid/error.hpp"
#include "stabid/harness.hpp"
#include "stabid/mcmc.hpp"
#include "test_helpers.hpp"

using namespace stabid;

namespace {

constexpr double kPi = std::numbers::pi;

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double log_normal_pdf(double x, double mean, double var) {
    return -0.5 * (x - mean) * (x - mean) / var - 0.5 * std::log(2.0 * kPi * var);
}

// p = 1, T = 3: the least-squares fit puts f near 0.98, so truncation binds.
Dataset toy_data() {
    Dataset d;
    d.y = Vector(3);
    d.u = Vector(3);
    d.y << 0.3, 1.0, 1.05;
    d.u << 1.0, 0.1, -0.2;
    return d;
}

std::vector<Hyperparameters> toy_etas() {
    return {{2.0, 0.5, 0.05}, {0.5, 0.8, 0.05}, {4.0, 0.3, 0.05}};
}

double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

double sd_of(const std::vector<double>& v) {
    const double m = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

// Grid-normalized marginal CDF of f under p_S, evaluated at the sample deciles.
double worst_decile_gap(const StablePosterior& ps, const std::vector<double>& f_samples, double g_lo, double g_hi) {
    const int nf = 800;
    const int ng = 400;
    std::vector<double> fgrid(nf), mass(nf, 0.0);
    std::vector<double> logs;
    logs.reserve(static_cast<std::size_t>(nf) * ng);
    Vector x(2);
    for (int i = 0; i < nf; ++i) {
        fgrid[i] = -1.0 + (i + 0.5) * 2.0 / nf;
        for (int j = 0; j < ng; ++j) {
            x << fgrid[i], g_lo + (j + 0.5) * (g_hi - g_lo) / ng;
            logs.push_back(ps.log_stable_posterior(x));
        }
    }
    const double top = *std::max_element(logs.begin(), logs.end());
    double total = 0.0;
    for (int i = 0; i < nf; ++i) {
        for (int j = 0; j < ng; ++j) mass[i] += std::exp(logs[static_cast<std::size_t>(i) * ng + j] - top);
        total += mass[i];
    }
    std::vector<double> cdf(nf);
    double run = 0.0;
    for (int i = 0; i < nf; ++i) {
        run += mass[i] / total;
        cdf[i] = run;
    }
    auto sorted = f_samples;
    std::sort(sorted.begin(), sorted.end());
    double worst = 0.0;
    for (int k = 1; k <= 9; ++k) {
        const double q = sorted[sorted.size() * k / 10];
        // Grid CDF at q, interpolated between cell edges.
        const double pos = (q + 1.0) * nf / 2.0;
        const int cell = std::clamp(static_cast<int>(pos), 0, nf - 1);
        const double before = cell > 0 ? cdf[cell - 1] : 0.0;
        const double value = before + (cdf[cell] - before) * (pos - cell);
        worst = std::max(worst, std::abs(value - k / 10.0));
    }
    return worst;
}

}  // namespace

TEST_CASE("finite-difference hessian and repair") {
    Eigen::Matrix2d Q;
    Q << 3.0, 0.7, 0.7, 1.5;
    const Eigen::Vector2d m(0.4, -0.3);
    const LogDensity2 quad = [&](const Eigen::Vector2d& t) { return 0.5 * (t - m).dot(Q * (t - m)); };
    const HyperBox box;
    const Eigen::Matrix2d H = finite_difference_hessian(quad, Eigen::Vector2d(1.0, 2.0), box);
    CHECK((H - Q).cwiseAbs().maxCoeff() < 1e-4);
    CHECK(H(0, 1) == H(1, 0));

    const auto mh = mode_and_hessian(quad, Eigen::Vector2d(2.0, 1.0), box);
    CHECK((mh.theta - m).norm() < 1e-4);
    CHECK((mh.hessian - Q).cwiseAbs().maxCoeff() < 1e-4);

    // On the box edge the stencil moves inside instead of sampling +inf.
    const LogDensity2 walled = [&](const Eigen::Vector2d& t) {
        return box.contains_theta(t) ? quad(t) : std::numeric_limits<double>::infinity();
    };
    const Eigen::Matrix2d He = finite_difference_hessian(walled, box.theta_upper(), box);
    CHECK((He - Q).cwiseAbs().maxCoeff() < 1e-4);

    Eigen::Matrix2d indefinite;
    indefinite << 1.0, 0.0, 0.0, -2.0;
    const Eigen::Matrix2d R = repair_hessian(indefinite);
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(R);
    CHECK(es.eigenvalues().minCoeff() > 0.0);
    CHECK(es.eigenvalues().minCoeff() == doctest::Approx(1e-6));
    CHECK(es.eigenvalues().maxCoeff() == doctest::Approx(1.0));
    CHECK((repair_hessian(Q) - Q).norm() < 1e-12);
    CHECK(repair_hessian(-Q) == Eigen::Matrix2d::Identity());
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> floored(repair_hessian(indefinite, 0.01));
    CHECK(floored.eigenvalues().minCoeff() == doctest::Approx(0.01));
    CHECK(box_curvature_floor(box) * (box.theta_upper() - box.theta_lower()).squaredNorm() == doctest::Approx(1.0));
}

TEST_CASE("posterior mode with the flat prior matches the marginal-likelihood optimum") {
    const auto model = generate_armax_model(derive_seed(3, 1, 0));
    const auto data = generate_dataset(model, 400, 10, derive_seed(3, 1, 1));
    const MarginalLikelihood ml(data.identification, 30);
    const auto eb = identify(data.identification);
    const auto mh = posterior_mode_and_hessian(ml, eb.eta, HyperPrior{});
    const Eigen::Vector2d t_eb = HyperBox{}.to_theta(eb.eta);
    CHECK((mh.theta - t_eb).norm() < 1e-3);
    CHECK(mh.neg_log_posterior == doctest::Approx(ml.neg_log(eb.eta)).epsilon(1e-8));
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(mh.hessian);
    CHECK(es.eigenvalues().minCoeff() > 0.0);
    CHECK(mh.hessian(0, 1) == mh.hessian(1, 0));
}

TEST_CASE("random-walk chain on known targets") {
    const HyperPrior prior;
    const LogDensity2 flat = [&](const Eigen::Vector2d& t) { return prior.log_density(t); };
    const Eigen::Vector2d center = prior.box.theta_center();
    const auto chain = random_walk_metropolis(flat, center, Eigen::Matrix2d::Identity() * 0.02, 1.0, 5000, 500, 17);
    REQUIRE(chain.samples.size() == 5000);
    CHECK(chain.acceptance_rate > 0.0);
    CHECK(chain.acceptance_rate < 1.0);
    for (int i = 0; i < 2; ++i) {
        std::vector<double> trace;
        for (const auto& s : chain.samples) trace.push_back(s[i]);
        const double se = sd_of(trace) / std::sqrt(effective_sample_size(trace));
        CHECK(std::abs(mean_of(trace) - center[i]) < 3.0 * se);
        CHECK(*std::min_element(trace.begin(), trace.end()) >= prior.box.theta_lower()[i]);
        CHECK(*std::max_element(trace.begin(), trace.end()) <= prior.box.theta_upper()[i]);
    }

    const auto again = random_walk_metropolis(flat, center, Eigen::Matrix2d::Identity() * 0.02, 1.0, 5000, 500, 17);
    CHECK(again.samples == chain.samples);

    // Uphill moves always pass: a target increasing along x never rejects them.
    const LogDensity2 ramp = [](const Eigen::Vector2d& t) { return 1e6 * t[0]; };
    const auto up = random_walk_metropolis(ramp, Eigen::Vector2d::Zero(), Eigen::Matrix2d::Identity(), 1.0, 200, 0, 3);
    Eigen::Vector2d prev = Eigen::Vector2d::Zero();
    std::mt19937_64 rng(3);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (const auto& s : up.samples) {
        const Eigen::Vector2d z(normal(rng), normal(rng));
        unif(rng);
        if (z[0] > 0.0) CHECK((s - prev - z).norm() < 1e-12);
        prev = s;
    }

    // Standard Gaussian: moments of a long chain.
    const LogDensity2 gauss = [](const Eigen::Vector2d& t) { return -0.5 * t.squaredNorm(); };
    const auto g = random_walk_metropolis(gauss, Eigen::Vector2d::Zero(), Eigen::Matrix2d::Identity(), 2.8, 20000,
                                          1000, 9);
    std::vector<double> t0;
    for (const auto& s : g.samples) t0.push_back(s[0]);
    const double se = 1.0 / std::sqrt(effective_sample_size(t0));
    CHECK(std::abs(mean_of(t0)) < 4.0 * se);
    CHECK(sd_of(t0) == doctest::Approx(1.0).epsilon(0.05));
    CHECK_THROWS_AS(random_walk_metropolis(gauss, Eigen::Vector2d::Zero(), Eigen::Matrix2d::Identity(), 0.0, 10, 0, 1),
                    std::domain_error);
}

TEST_CASE("gamma tuning") {
    const LogDensity2 gauss = [](const Eigen::Vector2d& t) { return -0.5 * t.squaredNorm(); };
    const Eigen::Matrix2d I = Eigen::Matrix2d::Identity();
    double prev = 1.0;
    for (double gamma : {0.25, 1.0, 4.0, 16.0, 64.0}) {
        const double acc = random_walk_metropolis(gauss, Eigen::Vector2d::Zero(), I, gamma, 5000, 0, 11).acceptance_rate;
        CHECK(acc < prev);
        prev = acc;
    }

    const auto tuned = tune_gamma(gauss, Eigen::Vector2d::Zero(), I, 0.01, 5);
    CHECK(tuned.converged);
    CHECK(tuned.acceptance_rate >= 0.2);
    CHECK(tuned.acceptance_rate <= 0.4);
    CHECK(tuned.pilots > 1);

    const auto again = tune_gamma(gauss, Eigen::Vector2d::Zero(), I, tuned.gamma, 5);
    CHECK(again.pilots == 1);
    CHECK(again.gamma == tuned.gamma);

    const auto capped = tune_gamma(gauss, Eigen::Vector2d::Zero(), I, 1e-6, 5, 500, 3);
    CHECK_FALSE(capped.converged);
    CHECK(capped.pilots == 3);
    CHECK(capped.acceptance_rate > 0.4);
    CHECK(capped.gamma <= 4e-6);
}

TEST_CASE("truncation constant") {
    CHECK(estimate_truncation_constant({1e-6, 0.5, 1.0}, 30, 2000, 1) == 1.0);
    // p = 1, K = c beta = 1: stable mass is Phi(1) - Phi(-1).
    const double exact = 1.0 / (normal_cdf(1.0) - normal_cdf(-1.0));
    CHECK(exact == doctest::Approx(1.465).epsilon(1e-3));
    const double k = estimate_truncation_constant({2.0, 0.5, 1.0}, 1, 200000, 4);
    CHECK(k == doctest::Approx(exact).epsilon(0.01));
    for (double c : {0.01, 1.0, 100.0}) CHECK(estimate_truncation_constant({c, 0.9, 1.0}, 30, 500, 2) >= 1.0);
    CHECK(estimate_truncation_constant({1e4, 0.99, 1.0}, 30, 100, 2) == std::numeric_limits<double>::infinity());
    CHECK_THROWS_AS(estimate_truncation_constant({1.0, 0.5, 1.0}, 3, 99, 2), std::invalid_argument);

    KappaCache cache(1, 200000, 8);
    const double a = cache({2.0, 0.5, 1.0});
    const double b = cache({2.0 * (1.0 + 1e-4), 0.5, 1.0});
    CHECK(a == b);
    CHECK(a == doctest::Approx(exact).epsilon(0.01));
    KappaCache other_order(1, 200000, 8);
    other_order({0.3, 0.2, 1.0});
    CHECK(other_order({2.0, 0.5, 1.0}) == a);
}

TEST_CASE("proposal mixture") {
    const Dataset d = toy_data();
    const MarginalLikelihood ml(d, 1);
    const auto one = StablePosterior(ml, {toy_etas()[0]}, KappaPolicy::Unit, 0, 0);
    const auto mom = ml.posterior_moments(toy_etas()[0]);
    const Vector mu = (Vector(2) << mom.mean_f[0], mom.mean_g[0]).finished();
    const Matrix cov = mom.covariance;
    std::mt19937_64 rng(1);
    for (int i = 0; i < 20; ++i) {
        const Vector x = mu + testing::random_normal(rng, 2);
        const Vector r = x - mu;
        const double explicit_log = -0.5 * r.dot(cov.inverse() * r) - 0.5 * std::log(cov.determinant()) - std::log(2 * kPi);
        CHECK(one.log_proposal_density(x) == doctest::Approx(explicit_log).epsilon(1e-10));
    }
    Eigen::SelfAdjointEigenSolver<Matrix> es(cov);
    const Vector dir = es.eigenvectors().col(1) * std::sqrt(es.eigenvalues()[1]);
    CHECK(one.proposal_density(mu) >= one.proposal_density(mu + 5.0 * dir));

    const auto mix = StablePosterior(ml, toy_etas(), KappaPolicy::Unit, 0, 0);
    REQUIRE(mix.size() == 3);
    double lo_f = 1e9, hi_f = -1e9, lo_g = 1e9, hi_g = -1e9;
    for (const auto& c : mix.components()) {
        const Matrix cv = c.posterior.factor * c.posterior.factor.transpose();
        lo_f = std::min(lo_f, c.posterior.mean[0] - 10 * std::sqrt(cv(0, 0)));
        hi_f = std::max(hi_f, c.posterior.mean[0] + 10 * std::sqrt(cv(0, 0)));
        lo_g = std::min(lo_g, c.posterior.mean[1] - 10 * std::sqrt(cv(1, 1)));
        hi_g = std::max(hi_g, c.posterior.mean[1] + 10 * std::sqrt(cv(1, 1)));
    }
    const int n = 600;
    const double hf = (hi_f - lo_f) / n, hg = (hi_g - lo_g) / n;
    double integral = 0.0;
    Vector x(2);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            x << lo_f + (i + 0.5) * hf, lo_g + (j + 0.5) * hg;
            integral += mix.proposal_density(x) * hf * hg;
        }
    }
    CHECK(integral == doctest::Approx(1.0).epsilon(1e-3));
}

TEST_CASE("proposal sampling") {
    const Dataset d = toy_data();
    const MarginalLikelihood ml(d, 1);
    const auto eta = toy_etas()[0];
    const auto same = StablePosterior(ml, {eta, eta, eta, eta}, KappaPolicy::Unit, 0, 0);
    const auto mom = ml.posterior_moments(eta);
    std::mt19937_64 rng(21);
    const int n = 10000;
    Vector mean = Vector::Zero(2);
    Matrix second = Matrix::Zero(2, 2);
    for (int i = 0; i < n; ++i) {
        const Vector x = same.sample_proposal(rng);
        mean += x / n;
        second += x * x.transpose() / n;
    }
    const Matrix cov = second - mean * mean.transpose();
    CHECK(std::abs(mean[0] - mom.mean_f[0]) < 4.0 * std::sqrt(mom.covariance(0, 0) / n));
    CHECK(std::abs(mean[1] - mom.mean_g[0]) < 4.0 * std::sqrt(mom.covariance(1, 1) / n));
    CHECK((cov - mom.covariance).cwiseAbs().maxCoeff() < 0.05 * mom.covariance.cwiseAbs().maxCoeff());

    std::mt19937_64 r1(5), r2(5);
    CHECK(same.sample_proposal(r1) == same.sample_proposal(r2));

    // Far-apart components: draws split between two well separated modes.
    Dataset wide;
    wide.u = Vector(3);
    wide.y = Vector(3);
    wide.u << 1.0, 1.0, 1.0;
    wide.y << 0.0, 5.0, 5.0;
    const MarginalLikelihood mw(wide, 1);
    const auto bimodal = StablePosterior(mw, {{1e-6, 0.5, 0.01}, {100.0, 0.5, 0.01}}, KappaPolicy::Unit, 0, 0);
    const double m0 = bimodal.components()[0].posterior.mean[1];
    const double m1 = bimodal.components()[1].posterior.mean[1];
    REQUIRE(std::abs(m1 - m0) > 1.0);
    const double mid = 0.5 * (m0 + m1);
    int below = 0, between = 0;
    for (int i = 0; i < n; ++i) {
        const double g = bimodal.sample_proposal(rng)[1];
        if (g < mid) ++below;
        if (std::abs(g - mid) < 0.1 * std::abs(m1 - m0)) ++between;
    }
    CHECK(below > 4500);
    CHECK(below < 5500);
    CHECK(between < 100);
}

TEST_CASE("stable posterior evaluation") {
    const Dataset d = toy_data();
    const MarginalLikelihood ml(d, 1);
    const auto etas = toy_etas();
    const std::vector<double> kappas = {1.3, 1.1, 1.7};
    const auto ps = StablePosterior(ml, etas, [&](const Hyperparameters& e) {
        for (std::size_t i = 0; i < etas.size(); ++i) {
            if (etas[i].scale == e.scale) return kappas[i];
        }
        return 1.0;
    });

    Vector unstable(2);
    unstable << 1.0, 0.2;
    CHECK(ps.stable_posterior(unstable) == 0.0);
    unstable << -1.3, 0.0;
    CHECK(ps.log_stable_posterior(unstable) == -std::numeric_limits<double>::infinity());

    // Direct densities: Gaussian likelihood, scalar priors c beta, dense marginal.
    const auto reg = build_regressors(d.y, d.u, 1);
    auto brute = [&](double f, double g) {
        double total = 0.0;
        for (std::size_t i = 0; i < etas.size(); ++i) {
            const auto& e = etas[i];
            double ll = 0.0;
            for (int t = 0; t < 3; ++t) ll += log_normal_pdf(d.y[t], reg.A(t, 0) * f + reg.B(t, 0) * g, e.noise_variance);
            const double k = e.scale * e.decay;
            const double lm = -neg_log_marginal_dense(e, reg, d.y);
            total += std::exp(ll + std::log(kappas[i]) + log_normal_pdf(f, 0.0, k) + log_normal_pdf(g, 0.0, k) - lm);
        }
        return total;
    };
    const std::vector<std::pair<double, double>> pts = {{0.5, 0.7}, {0.95, 0.6}, {-0.2, 1.1}, {0.99, 0.8}};
    for (std::size_t i = 0; i < pts.size(); ++i) {
        for (std::size_t j = 0; j < pts.size(); ++j) {
            const Vector a = (Vector(2) << pts[i].first, pts[i].second).finished();
            const Vector b = (Vector(2) << pts[j].first, pts[j].second).finished();
            const double ratio = std::exp(ps.log_stable_posterior(a) - ps.log_stable_posterior(b));
            const double oracle = brute(pts[i].first, pts[i].second) / brute(pts[j].first, pts[j].second);
            CHECK(ratio == doctest::Approx(oracle).epsilon(1e-6));
        }
    }

    // One component with k = 1: the Bayes numerator p(y|x) p(x), up to a constant.
    const auto single = StablePosterior(ml, {etas[0]}, KappaPolicy::Unit, 0, 0);
    const double k0 = etas[0].scale * etas[0].decay;
    auto numerator = [&](double f, double g) {
        double ll = 0.0;
        for (int t = 0; t < 3; ++t) {
            ll += log_normal_pdf(d.y[t], reg.A(t, 0) * f + reg.B(t, 0) * g, etas[0].noise_variance);
        }
        return ll + log_normal_pdf(f, 0.0, k0) + log_normal_pdf(g, 0.0, k0);
    };
    const Vector a = (Vector(2) << 0.3, 0.9).finished();
    const Vector b = (Vector(2) << -0.6, 0.1).finished();
    CHECK(single.log_stable_posterior(a) - single.log_stable_posterior(b) ==
          doctest::Approx(numerator(0.3, 0.9) - numerator(-0.6, 0.1)).epsilon(1e-10));

    // With unit constants, p_S is the proposal mixture restricted to stable f.
    const auto unit = StablePosterior(ml, etas, KappaPolicy::Unit, 0, 0);
    for (const auto& [f, g] : pts) {
        const Vector x = (Vector(2) << f, g).finished();
        CHECK(unit.log_stable_posterior(x) == doctest::Approx(unit.log_proposal_density(x)).epsilon(1e-10));
    }

    // Components with no stable prior mass are dropped.
    const auto dropped = StablePosterior(ml, etas, [&](const Hyperparameters& e) {
        return e.scale == 2.0 ? std::numeric_limits<double>::infinity() : 1.0;
    });
    CHECK(dropped.size() == 2);
    CHECK_THROWS_AS(StablePosterior(ml, etas, [](const Hyperparameters&) { return std::numeric_limits<double>::infinity(); }),
                    NumericalError);
}

TEST_CASE("stable posterior at benchmark scale stays finite") {
    const auto model = generate_armax_model(derive_seed(1, 4, 0));
    const auto data = generate_dataset(model, 400, 10, derive_seed(1, 4, 1));
    const MarginalLikelihood ml(data.identification, 30);
    const auto eb = identify(data.identification);
    std::vector<Hyperparameters> etas;
    for (double dc : {0.5, 1.0, 2.0}) etas.push_back({eb.eta.scale * dc, eb.eta.decay, eb.eta.noise_variance});
    const auto ps = StablePosterior(ml, etas, KappaPolicy::Estimate, 2000, 1);
    std::mt19937_64 rng(2);
    int stable = 0;
    for (int i = 0; i < 300; ++i) {
        const Vector x = ps.sample_proposal(rng);
        CHECK(std::isfinite(ps.log_proposal_density(x)));
        const double v = ps.log_stable_posterior(x);
        if (schur_stable(as_span(Vector(x.head(30))))) {
            ++stable;
            CHECK(std::isfinite(v));
        } else {
            CHECK(v == -std::numeric_limits<double>::infinity());
        }
    }
    CHECK(stable > 0);
}

TEST_CASE("independence sampler") {
    const Dataset d = toy_data();
    const MarginalLikelihood ml(d, 1);

    SUBCASE("stability never binds") {
        Dataset calm = d;
        calm.y << 0.3, 0.2, 0.05;
        const MarginalLikelihood mc(calm, 1);
        const auto ps = StablePosterior(mc, {{0.01, 0.5, 0.05}}, KappaPolicy::Unit, 0, 0);
        const auto chain = sample_stable_posterior(ps, ps.components()[0].posterior.mean, 2000, 3);
        CHECK(chain.acceptance_rate > 0.999);
    }

    SUBCASE("truncated Gaussian marginal") {
        // One component with k = 1: p_S is the component Gaussian cut to |f| < 1,
        // so f follows a truncated normal.
        const auto eta = toy_etas()[0];
        const auto ps = StablePosterior(ml, {eta}, KappaPolicy::Unit, 0, 0);
        const auto mom = ml.posterior_moments(eta);
        const double m = mom.mean_f[0];
        const double s = std::sqrt(mom.covariance(0, 0));
        REQUIRE(normal_cdf((1.0 - m) / s) < 0.9);
        const auto chain = sample_stable_posterior(ps, Vector::Zero(2), 10000, 7);
        std::vector<double> f;
        for (const auto& x : chain.samples) f.push_back(x[0]);
        std::sort(f.begin(), f.end());
        const double lo = normal_cdf((-1.0 - m) / s);
        const double hi = normal_cdf((1.0 - m) / s);
        double ks = 0.0;
        for (std::size_t i = 0; i < f.size(); ++i) {
            const double F = (normal_cdf((f[i] - m) / s) - lo) / (hi - lo);
            ks = std::max({ks, std::abs(F - static_cast<double>(i) / f.size()),
                           std::abs(F - static_cast<double>(i + 1) / f.size())});
        }
        CHECK(ks < 0.05);
    }

    SUBCASE("mixture target against the grid") {
        std::vector<Hyperparameters> etas = toy_etas();
        const auto ps = StablePosterior(ml, etas, KappaPolicy::Estimate, 20000, 9);
        const auto chain = sample_stable_posterior(ps, Vector::Zero(2), 10000, 11);
        std::vector<double> f;
        for (const auto& x : chain.samples) {
            CHECK(spectral_radius(Vector(x.head(1))) < 1.0);
            CHECK(std::isfinite(x[0]));
            f.push_back(x[0]);
        }
        for (double v : chain.log_ps) CHECK(std::isfinite(v));
        CHECK(worst_decile_gap(ps, f, -4.0, 6.0) < 0.05);

        const auto again = sample_stable_posterior(ps, Vector::Zero(2), 10000, 11);
        CHECK(again.samples == chain.samples);
    }

    SUBCASE("unreachable stable region") {
        Dataset wild;
        wild.u = Vector(3);
        wild.y = Vector(3);
        wild.u << 0.0, 1e-3, 0.0;
        wild.y << 1.0, 40.0, 1600.0;
        const MarginalLikelihood mw(wild, 1);
        const auto ps = StablePosterior(mw, {{1e4, 0.99, 1e-4}}, KappaPolicy::Unit, 0, 0);
        CHECK_THROWS_WITH_AS(sample_stable_posterior(ps, ps.components()[0].posterior.mean, 10, 1),
                             "stable region unreachable", NumericalError);
    }
}

TEST_CASE("posterior mean and MAP of a chain") {
    StableChain chain;
    chain.samples = {(Vector(2) << 0.5, 1.0).finished(), (Vector(2) << -0.5, 1.0).finished()};
    chain.log_ps = {-1.0, -1.0};
    const auto mean = mcmc_posterior_mean(chain, 1, 20);
    CHECK(mean.p_ir[1] == 1.0);
    CHECK(mean.p_ir[2] == 0.0);
    CHECK(mean.h_ir[0] == 1.0);
    CHECK(mean.h_ir[1] == 0.0);
    CHECK(mean.spectral_radius == doctest::Approx(0.5));
    for (Eigen::Index k = 0; k < 20; ++k) {
        CHECK(std::abs(mean.p_ir[k]) <= std::pow(0.5, std::max<Eigen::Index>(k - 1, 0)) + 1e-15);
    }

    const auto map = mcmc_map(chain, 1);
    CHECK(map.f[0] == 0.5);  // tie: earliest

    StableChain single;
    single.samples = {(Vector(4) << 0.3, 0.1, 1.0, -0.5).finished()};
    single.log_ps = {0.0};
    const auto sm = mcmc_posterior_mean(single, 2, 50);
    const auto direct = predictor_to_forward(PredictorEstimate(Vector(single.samples[0].head(2)),
                                                               Vector(single.samples[0].tail(2))), 50);
    CHECK((sm.p_ir - direct.p_ir).norm() == 0.0);
    CHECK((sm.h_ir - direct.h_ir).norm() == 0.0);
    CHECK(sm.spectral_radius == doctest::Approx(direct.spectral_radius).epsilon(1e-12));

    std::mt19937_64 rng(4);
    StableChain many;
    for (int i = 0; i < 50; ++i) {
        Vector x(4);
        x << testing::random_stable_f(rng, 2, 0.8), testing::random_normal(rng, 2);
        many.samples.push_back(x);
        many.log_ps.push_back(-std::abs(x[2]));
    }
    many.log_ps[17] = 10.0;
    const auto m2 = mcmc_map(many, 2);
    CHECK(m2.f == many.samples[17].head(2));
    const auto avg = mcmc_posterior_mean(many, 2, 200);
    double tail = 0.0;
    for (const auto& x : many.samples) {
        const auto fm = predictor_to_forward(PredictorEstimate(Vector(x.head(2)), Vector(x.tail(2))), 200);
        tail = std::max(tail, std::abs(fm.p_ir[199]));
    }
    CHECK(std::abs(avg.p_ir[199]) <= tail);
    CHECK_THROWS_AS(mcmc_posterior_mean(StableChain{}, 2), std::invalid_argument);
    CHECK_THROWS_AS(mcmc_map(StableChain{}, 2), std::invalid_argument);
}

TEST_CASE("effective sample size") {
    std::mt19937_64 rng(12);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> iid(20000), ar(20000);
    double state = 0.0;
    for (std::size_t i = 0; i < iid.size(); ++i) {
        iid[i] = normal(rng);
        state = 0.9 * state + normal(rng);
        ar[i] = state;
    }
    CHECK(effective_sample_size(iid) > 0.8 * iid.size());
    const double expected = ar.size() * (1.0 - 0.9) / (1.0 + 0.9);
    CHECK(effective_sample_size(ar) == doctest::Approx(expected).epsilon(0.3));
    const std::vector<double> constant(10, 1.0);
    CHECK(effective_sample_size(constant) == 10.0);
}

TEST_CASE("toy pipeline: tuned hyper chain and stable chain") {
    const Dataset d = toy_data();
    const MarginalLikelihood ml(d, 1);
    const Hyperparameters start{1.0, 0.5, 0.05};
    McmcOptions opt;
    opt.hyper_samples = 2000;
    opt.components = 200;
    opt.chain_length = 10000;
    opt.kappa_draws = 5000;
    const auto r = run_mcmc(ml, start, 77, opt);
    CHECK(r.diagnostics.hyper_acceptance >= 0.2);
    CHECK(r.diagnostics.hyper_acceptance <= 0.4);
    CHECK(r.hyper.samples.size() == 2000);
    CHECK(r.hyper.hessian(0, 1) == r.hyper.hessian(1, 0));

    // Grid oracle over the same mixture of thinned samples.
    std::vector<Hyperparameters> thinned;
    for (std::size_t i = 0; i < 200; ++i) thinned.push_back(r.hyper.samples[(i + 1) * 10 - 1]);
    const auto ps = StablePosterior(ml, thinned, KappaPolicy::Estimate, 5000, derive_seed(77, 0, 3));
    std::vector<double> f;
    for (const auto& x : r.chain.samples) f.push_back(x[0]);
    CHECK(worst_decile_gap(ps, f, -6.0, 8.0) < 0.05);
}

TEST_CASE("full pipeline on an unstable benchmark case") {
    const auto model = generate_armax_model(derive_seed(1, 4, 0));
    const auto data = generate_dataset(model, 400, 10, derive_seed(1, 4, 1));
    const MarginalLikelihood ml(data.identification, 30);
    const auto eb = identify(data.identification);
    REQUIRE_FALSE(eb.forward.stable());

    const auto r = run_mcmc(ml, eb.eta, 5);
    CHECK(r.chain.samples.size() == 2000);
    for (const auto& x : r.chain.samples) CHECK(spectral_radius(Vector(x.head(30))) < 1.0);
    CHECK(r.mean.spectral_radius < 1.0);
    CHECK(r.map_forward.spectral_radius < 1.0);
    CHECK(r.mean.h_ir[0] == 1.0);
    CHECK(r.diagnostics.components > 0);
    CHECK(r.diagnostics.hyper_ess > 1.0);
    CHECK(r.diagnostics.stable_acceptance > 0.0);

    const auto again = run_mcmc(ml, eb.eta, 5);
    CHECK((again.mean.p_ir - r.mean.p_ir).norm() == 0.0);
    CHECK((again.map.f - r.map.f).norm() == 0.0);

    McmcOptions unit;
    unit.kappa_policy = KappaPolicy::Unit;
    const auto u = run_mcmc(ml, eb.eta, 5, unit);
    CHECK(u.mean.spectral_radius < 1.0);
}
