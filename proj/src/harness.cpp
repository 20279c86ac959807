#include "stabid/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <numbers>
#include <random>
#include <set>
#include <stdexcept>
#include <thread>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "stabid/error.hpp"
#include "stabid/lmi.hpp"
#include "stabid/penalty.hpp"

namespace stabid {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index, std::uint64_t stream) {
    return splitmix64(splitmix64(splitmix64(master) ^ index) ^ (stream * 0xd1b54a32d192ed03ULL));
}

double gain_from_variances(double var_e, double var_u) {
    if (!(var_e > 0.0) || !(var_u > 0.0)) throw std::domain_error("gain_from_variances: variances must be positive");
    return std::sqrt(var_e / var_u);
}

double armax_gain(const Polynomial& a, const Polynomial& b, const Polynomial& c, std::size_t horizon) {
    // y_u = B / A u is scored without the unit delay, which does not change its variance.
    const double var_u = impulse_response(b, a, horizon).squaredNorm();
    const double var_e = impulse_response(c, a, horizon).squaredNorm();
    return gain_from_variances(var_e, var_u);
}

ArmaxModel generate_armax_model(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> b_root(-0.9, 0.9);
    std::uniform_real_distribution<double> c_root(0.65, 0.73);
    ArmaxModel m;
    const double r = 0.996;
    m.a = Polynomial{{1.0, -2.0 * r * std::cos(std::numbers::pi / 3.0), r * r}};
    m.b = Polynomial{{1.0, -b_root(rng)}};
    const double c1 = c_root(rng);
    const double c2 = c_root(rng);
    m.c = Polynomial{{1.0, -(c1 + c2), c1 * c2}};
    m.k_gain = armax_gain(m.a, m.b, m.c);
    return m;
}

DatasetPair generate_dataset(const ArmaxModel& model, std::size_t id_length, std::size_t test_length,
                             std::uint64_t seed, bool noise_enabled) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    auto draw = [&](std::size_t n) {
        Vector v(static_cast<Eigen::Index>(n));
        for (auto& x : v) x = normal(rng);
        return v;
    };
    auto make = [&](std::size_t n) {
        Dataset d;
        d.u = draw(n);
        Vector e = draw(n);
        if (!noise_enabled) e.setZero();
        d.y = simulate_armax(model, d.u, e);
        d.seed = seed;
        return d;
    };
    DatasetPair out;
    out.identification = make(id_length);
    out.test = make(test_length);
    return out;
}

ForwardModel true_forward(const ArmaxModel& model, std::size_t L) {
    ForwardModel out;
    std::vector<double> kb(model.b.coeffs.size() + 1, 0.0);
    for (std::size_t i = 0; i < model.b.coeffs.size(); ++i) kb[i + 1] = model.k_gain * model.b.coeffs[i];
    out.p_ir = impulse_response(Polynomial{kb}, model.a, L);
    out.h_ir = impulse_response(model.c, model.a, L);
    std::vector<double> f(model.a.coeffs.size() - 1);
    for (std::size_t i = 1; i < model.a.coeffs.size(); ++i) f[i - 1] = -model.a.coeffs[i] / model.a.coeffs[0];
    out.spectral_radius = spectral_radius(std::span<const double>(f));
    return out;
}

double relative_error(const ArmaxModel& truth, const ForwardModel& estimate, std::size_t L) {
    if (estimate.length() < L) throw std::invalid_argument("relative_error: estimate shorter than L");
    const auto n = static_cast<Eigen::Index>(L);
    const ForwardModel ref = true_forward(truth, L);
    const double np = ref.p_ir.norm();
    const double nh = ref.h_ir.norm();
    if (!(np > 0.0) || !(nh > 0.0)) throw std::domain_error("relative_error: zero true impulse response");
    return 0.5 * (ref.p_ir - estimate.p_ir.head(n)).norm() / np + 0.5 * (ref.h_ir - estimate.h_ir.head(n)).norm() / nh;
}

namespace {

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

MethodOutcome outcome_from(const ArmaxModel& truth, ForwardModel forward, std::size_t L) {
    MethodOutcome out;
    out.err = relative_error(truth, forward, L);
    out.dominant_pole = forward.spectral_radius;
    out.forward = std::move(forward);
    out.ok = out.dominant_pole < 1.0;
    if (!out.ok) out.error = fmt::format("stabilized model has spectral radius {:.9f}", out.dominant_pole);
    return out;
}

MethodOutcome failure(const std::exception& e) {
    MethodOutcome out;
    out.error = e.what();
    return out;
}

}  // namespace

std::string method_name(Method m) {
    switch (m) {
        case Method::Lmi: return "lmi";
        case Method::MlPf: return "ml-pf";
        case Method::McmcMean: return "mcmc-mean";
        case Method::McmcMap: return "mcmc-map";
    }
    throw std::invalid_argument("method_name: bad method");
}

Method parse_method(const std::string& name) {
    for (Method m : kAllMethods) {
        if (method_name(m) == name) return m;
    }
    throw UsageError("unknown method '" + name + "' (expected lmi, ml-pf, mcmc-mean or mcmc-map)");
}

std::string kappa_policy_name(KappaPolicy k) { return k == KappaPolicy::Unit ? "unit" : "estimate"; }

KappaPolicy parse_kappa_policy(const std::string& name) {
    if (name == "estimate") return KappaPolicy::Estimate;
    if (name == "unit") return KappaPolicy::Unit;
    throw UsageError("unknown kappa policy '" + name + "' (expected estimate or unit)");
}

void BenchmarkConfig::validate() const {
    if (runs < 1) throw UsageError("config: runs must be at least 1");
    if (p < 1) throw UsageError("config: p must be at least 1");
    if (!(id_length > 2 * p)) throw UsageError(fmt::format("config: id_length {} must exceed 2p = {}", id_length, 2 * p));
    if (test_length < 1) throw UsageError("config: test_length must be at least 1");
    if (methods.empty()) throw UsageError("config: no methods selected");
    if (std::set<Method>(methods.begin(), methods.end()).size() != methods.size()) {
        throw UsageError("config: duplicate method");
    }
    if (expansion_length < 2) throw UsageError("config: expansion_length must be at least 2");
    if (mcmc.components == 0 || mcmc.hyper_samples < mcmc.components) {
        throw UsageError("config: mcmc components must be in [1, hyper_samples]");
    }
    if (mcmc.chain_length == 0) throw UsageError("config: mcmc chain_length must be positive");
    if (mcmc.kappa_draws < 100) throw UsageError("config: mcmc kappa_draws must be at least 100");
}

bool BenchmarkConfig::has(Method m) const { return std::find(methods.begin(), methods.end(), m) != methods.end(); }

McmcOptions BenchmarkConfig::mcmc_options() const {
    McmcOptions o;
    o.burn_in = mcmc.burn_in;
    o.hyper_samples = mcmc.hyper_samples;
    o.components = mcmc.components;
    o.chain_length = mcmc.chain_length;
    o.kappa_draws = mcmc.kappa_draws;
    o.kappa_policy = mcmc.kappa_policy;
    return o;
}

RunRecord run_single(const BenchmarkConfig& config, std::size_t index) {
    RunRecord rec;
    rec.index = index;
    rec.model_seed = derive_seed(config.seed, index, 0);
    rec.data_seed = derive_seed(config.seed, index, 1);
    rec.model = generate_armax_model(rec.model_seed);
    const auto data = generate_dataset(rec.model, config.id_length, config.test_length, rec.data_seed);
    const std::size_t L = config.expansion_length;

    IdentifyOptions io;
    io.p = config.p;
    io.expansion_length = L;
    IdentifyResult eb;
    auto t0 = std::chrono::steady_clock::now();
    try {
        eb = identify(data.identification, io);
    } catch (const std::exception& e) {
        rec.error = e.what();
        rec.timings.identify = seconds_since(t0);
        spdlog::warn("run {}: identification failed: {}", index, rec.error);
        return rec;
    }
    rec.timings.identify = seconds_since(t0);
    rec.eta = eb.eta;
    rec.estimate = eb.estimate;
    rec.eb_spectral_radius = eb.forward.spectral_radius;
    rec.eb_err = relative_error(rec.model, eb.forward, L);
    rec.unstable = !eb.forward.stable();
    if (!rec.unstable) return rec;

    const MarginalLikelihood ml(data.identification, config.p);
    if (config.has(Method::Lmi)) {
        t0 = std::chrono::steady_clock::now();
        try {
            rec.methods[Method::Lmi] = outcome_from(rec.model, predictor_to_forward(stabilize_lmi(eb.estimate), L), L);
        } catch (const std::exception& e) {
            rec.methods[Method::Lmi] = failure(e);
        }
        rec.timings.methods[Method::Lmi] = seconds_since(t0);
    }
    if (config.has(Method::MlPf)) {
        t0 = std::chrono::steady_clock::now();
        try {
            const auto r = stabilize_ml_pf(ml, eb.eta);
            rec.methods[Method::MlPf] = outcome_from(rec.model, predictor_to_forward(r.estimate, L), L);
        } catch (const std::exception& e) {
            rec.methods[Method::MlPf] = failure(e);
        }
        rec.timings.methods[Method::MlPf] = seconds_since(t0);
    }
    if (config.has(Method::McmcMean) || config.has(Method::McmcMap)) {
        t0 = std::chrono::steady_clock::now();
        try {
            McmcOptions mo = config.mcmc_options();
            auto r = run_mcmc(ml, eb.eta, derive_seed(config.seed, index, 2), mo);
            if (config.has(Method::McmcMean)) {
                ForwardModel mean = r.mean;
                if (mean.length() != L) mean = mcmc_posterior_mean(r.chain, config.p, L);
                rec.methods[Method::McmcMean] = outcome_from(rec.model, std::move(mean), L);
            }
            if (config.has(Method::McmcMap)) {
                rec.methods[Method::McmcMap] = outcome_from(rec.model, predictor_to_forward(r.map, L), L);
            }
            rec.mcmc = r.diagnostics;
        } catch (const std::exception& e) {
            if (config.has(Method::McmcMean)) rec.methods[Method::McmcMean] = failure(e);
            if (config.has(Method::McmcMap)) rec.methods[Method::McmcMap] = failure(e);
        }
        const double t = seconds_since(t0);
        if (config.has(Method::McmcMean)) rec.timings.methods[Method::McmcMean] = t;
        if (config.has(Method::McmcMap)) rec.timings.methods[Method::McmcMap] = t;
    }
    for (const auto& [m, o] : rec.methods) {
        if (!o.ok) spdlog::warn("run {}: {} failed: {}", index, method_name(m), o.error);
    }
    return rec;
}

std::vector<RunRecord> run_monte_carlo(const BenchmarkConfig& config) {
    config.validate();
    std::vector<RunRecord> records(config.runs);
    unsigned workers = config.threads ? config.threads : std::max(1u, std::thread::hardware_concurrency());
    workers = static_cast<unsigned>(std::min<std::size_t>(workers, config.runs));

    std::atomic<std::size_t> next{0};
    std::atomic<std::size_t> done{0};
    auto work = [&] {
        for (std::size_t i = next++; i < config.runs; i = next++) {
            try {
                records[i] = run_single(config, i);
            } catch (const std::exception& e) {
                records[i] = RunRecord{};
                records[i].index = i;
                records[i].model_seed = derive_seed(config.seed, i, 0);
                records[i].data_seed = derive_seed(config.seed, i, 1);
                records[i].error = e.what();
            }
            const std::size_t d = ++done;
            if (records[i].unstable) {
                spdlog::info("run {} unstable (radius {:.4f}), {}/{} done", i, records[i].eb_spectral_radius, d,
                             config.runs);
            } else if (d % 50 == 0) {
                spdlog::info("{}/{} runs done", d, config.runs);
            }
        }
    };
    if (workers == 1) {
        work();
    } else {
        std::vector<std::jthread> pool;
        pool.reserve(workers);
        for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work);
    }
    return records;
}

}  // namespace stabid
