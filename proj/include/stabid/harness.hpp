#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "stabid/empirical_bayes.hpp"
#include "stabid/mcmc.hpp"

namespace stabid {

/// splitmix64 step; used to derive independent per-run and per-stream seeds.
std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index, std::uint64_t stream = 0);

/// Gain k = sqrt(var_e / var_u).
double gain_from_variances(double var_e, double var_u);

/// Noise-to-signal gain from the stationary channel variances under unit white
/// noise, i.e. the squared impulse-response energies over `horizon` terms.
double armax_gain(const Polynomial& a, const Polynomial& b, const Polynomial& c, std::size_t horizon = 10000);

/// A(z) with poles 0.996 exp(+-j pi/3), B monic degree 1 with a real root
/// uniform in (-0.9, 0.9), C monic degree 2 with roots uniform in [0.65, 0.73].
ArmaxModel generate_armax_model(std::uint64_t seed);

struct DatasetPair {
    Dataset identification;
    Dataset test;
};

/// Independent zero-initial-condition simulations with unit white u and e.
DatasetPair generate_dataset(const ArmaxModel& model, std::size_t id_length, std::size_t test_length,
                             std::uint64_t seed, bool noise_enabled = true);

/// True impulse responses of P = k z^-1 B / A and H = C / A, length L.
ForwardModel true_forward(const ArmaxModel& model, std::size_t L = kDefaultExpansionLength);

/// 1/2 ||p - p_hat|| / ||p|| + 1/2 ||h - h_hat|| / ||h|| over the first L terms.
double relative_error(const ArmaxModel& truth, const ForwardModel& estimate, std::size_t L = kDefaultExpansionLength);

enum class Method { Lmi, MlPf, McmcMean, McmcMap };

inline constexpr Method kAllMethods[] = {Method::Lmi, Method::MlPf, Method::McmcMean, Method::McmcMap};

/// "lmi", "ml-pf", "mcmc-mean", "mcmc-map".
std::string method_name(Method m);
/// Throws UsageError for an unknown name.
Method parse_method(const std::string& name);

std::string kappa_policy_name(KappaPolicy k);
KappaPolicy parse_kappa_policy(const std::string& name);

struct McmcSizes {
    std::size_t burn_in = 2000;
    std::size_t hyper_samples = 2000;
    std::size_t components = 200;
    std::size_t chain_length = 2000;
    std::size_t kappa_draws = 2000;
    KappaPolicy kappa_policy = KappaPolicy::Estimate;
};

struct BenchmarkConfig {
    std::size_t runs = 500;
    std::size_t id_length = 400;
    std::size_t test_length = 1000;
    std::size_t p = 30;
    std::uint64_t seed = 1;
    std::vector<Method> methods{std::begin(kAllMethods), std::end(kAllMethods)};
    std::string output_dir;
    McmcSizes mcmc{};
    bool plots = true;
    unsigned threads = 0;  // 0: hardware concurrency
    std::size_t expansion_length = kDefaultExpansionLength;

    /// Throws UsageError unless runs >= 1, id_length > 2p and methods is a
    /// nonempty set.
    void validate() const;
    bool has(Method m) const;
    McmcOptions mcmc_options() const;
};

struct MethodOutcome {
    bool ok = false;
    std::string error;
    double err = 0.0;
    double dominant_pole = 0.0;
    ForwardModel forward;
};

struct RunTimings {
    double identify = 0.0;
    std::map<Method, double> methods;
};

struct RunRecord {
    std::size_t index = 0;
    std::uint64_t model_seed = 0;
    std::uint64_t data_seed = 0;
    ArmaxModel model;
    std::string error;  // identification failure, empty otherwise
    Hyperparameters eta;
    PredictorEstimate estimate;
    double eb_spectral_radius = 0.0;
    double eb_err = 0.0;
    bool unstable = false;
    std::map<Method, MethodOutcome> methods;
    std::optional<McmcDiagnostics> mcmc;
    RunTimings timings;
};

/// One benchmark run: model and data from seeds derived from (seed, index),
/// empirical Bayes identification and, when the forward model is unstable,
/// every configured stabilizer. Stabilizer failures are recorded, not thrown.
RunRecord run_single(const BenchmarkConfig& config, std::size_t index);

/// All runs, executed on a worker pool; records are returned in index order
/// and do not depend on the number of threads.
std::vector<RunRecord> run_monte_carlo(const BenchmarkConfig& config);

}  // namespace stabid
