#include "stabid/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "stabid/error.hpp"
#include "stabid/io.hpp"
#include "stabid/lmi.hpp"
#include "stabid/mcmc.hpp"
#include "stabid/penalty.hpp"
#include "stabid/report.hpp"

namespace stabid {

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitNumerical = 2;

std::string default_out_dir() {
    if (const char* env = std::getenv("STABID_OUT_DIR"); env && *env) return env;
    return "stabid_out";
}

void emit(const std::string& path, const std::string& text) {
    if (path.empty() || path == "-") {
        std::cout << text;
    } else {
        write_text_file(path, text);
    }
}

void print_summary(const BenchmarkSummary& s) {
    fmt::print("runs {}  identified {}  unstable {} ({:.1f}%)\n", s.runs, s.identified, s.unstable,
               100.0 * s.unstable_fraction);
    fmt::print("{:<10} {:>9} {:>11} {:>11} {:>13}\n", "method", "ok", "median err", "IQR err", "median pole");
    auto line = [](const std::string& name, std::size_t ok, std::size_t n, const std::vector<double>& err,
                   const std::vector<double>& pole) {
        if (err.empty()) {
            fmt::print("{:<10} {:>4}/{:<4}\n", name, ok, n);
            return;
        }
        const auto e = describe(err);
        const auto p = describe(pole);
        fmt::print("{:<10} {:>4}/{:<4} {:>11.4f} {:>11.4f} {:>13.6f}\n", name, ok, n, e.median, e.q3 - e.q1, p.median);
    };
    line("eb", s.unstable, s.unstable, s.eb_err, s.eb_radius);
    for (const auto& m : s.methods) line(method_name(m.method), m.succeeded, m.attempted, m.err, m.dominant_pole);
}

struct Options {
    std::string in;
    std::string out;
    std::string model;
    std::string data;
    std::string config;
    std::string method;
    std::string kappa_policy;
    std::size_t p = 30;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> runs;
    std::optional<unsigned> threads;
    bool no_plots = false;
    bool verbose = false;
    bool quiet = false;
};

int run_identify(const Options& o) {
    const auto data = read_dataset_csv(o.in);
    IdentifyOptions io;
    io.p = o.p;
    if (!(data.size() > 2 * o.p)) {
        throw UsageError(fmt::format("{}: {} samples are too few for p = {}", o.in, data.size(), o.p));
    }
    const auto r = identify(data, io);
    ModelFile m;
    m.estimate = r.estimate;
    m.spectral_radius = r.forward.spectral_radius;
    m.eta = r.eta;
    m.method = "eb";
    if (!r.forward.stable()) m.note = "forward model unstable";
    auto j = model_to_json(m);
    j["neg_log_marginal"] = r.neg_log_marginal;
    emit(o.out, j.dump(2) + "\n");
    spdlog::info("spectral radius {:.6f} ({})", m.spectral_radius, r.forward.stable() ? "stable" : "unstable");
    return 0;
}

int run_stabilize(const Options& o) {
    const Method method = parse_method(o.method);
    const auto input = model_from_json(read_json_file(o.model), o.model);
    const std::size_t p = input.estimate.p();

    ModelFile out = input;
    out.method = method_name(method);
    if (input.spectral_radius < 1.0) {
        out.note = "already stable";
        emit(o.out, model_to_json(out).dump(2) + "\n");
        spdlog::info("model already stable (spectral radius {:.6f})", input.spectral_radius);
        return 0;
    }

    if (method == Method::Lmi) {
        out.estimate = stabilize_lmi(input.estimate);
    } else {
        if (o.data.empty()) throw UsageError("--data is required for method " + o.method);
        const auto data = read_dataset_csv(o.data);
        if (!(data.size() > 2 * p)) throw UsageError(fmt::format("{}: too few samples for p = {}", o.data, p));
        const MarginalLikelihood ml(data, p);
        Hyperparameters eta;
        if (input.eta) {
            eta = *input.eta;
        } else {
            IdentifyOptions io;
            io.p = p;
            eta = identify(data, io).eta;
        }
        if (method == Method::MlPf) {
            const auto r = stabilize_ml_pf(ml, eta);
            out.estimate = r.estimate;
            out.eta = r.eta;
        } else {
            McmcOptions mo;
            if (!o.kappa_policy.empty()) mo.kappa_policy = parse_kappa_policy(o.kappa_policy);
            const auto r = run_mcmc(ml, eta, o.seed.value_or(1), mo);
            if (method == Method::McmcMap) {
                out.estimate = r.map;
            } else {
                // The averaged P and H have no finite predictor; f and g hold
                // the first p terms of its expansion, "forward" the averages.
                out.estimate = forward_to_predictor(r.mean, p);
                out.note = "posterior mean of P and H; f and g truncated to p terms";
                out.spectral_radius = r.mean.spectral_radius;
                auto j = model_to_json(out);
                j["forward"] = {{"p_ir", std::vector<double>(r.mean.p_ir.begin(), r.mean.p_ir.end())},
                                {"h_ir", std::vector<double>(r.mean.h_ir.begin(), r.mean.h_ir.end())},
                                {"spectral_radius", r.mean.spectral_radius}};
                j["stable"] = r.mean.stable();
                emit(o.out, j.dump(2) + "\n");
                spdlog::info("{}: spectral radius {:.6f} -> {:.6f}", out.method, input.spectral_radius,
                             out.spectral_radius);
                return r.mean.stable() ? 0 : kExitNumerical;
            }
        }
    }
    out.spectral_radius = spectral_radius(out.estimate.f);
    emit(o.out, model_to_json(out).dump(2) + "\n");
    spdlog::info("{}: spectral radius {:.6f} -> {:.6f}", out.method, input.spectral_radius, out.spectral_radius);
    return out.spectral_radius < 1.0 ? 0 : kExitNumerical;
}

int run_benchmark(const Options& o) {
    BenchmarkConfig cfg;
    if (!o.config.empty()) cfg = config_from_json(read_json_file(o.config), o.config);
    if (o.seed) cfg.seed = *o.seed;
    if (o.runs) cfg.runs = *o.runs;
    if (o.threads) cfg.threads = *o.threads;
    if (!o.kappa_policy.empty()) cfg.mcmc.kappa_policy = parse_kappa_policy(o.kappa_policy);
    if (o.no_plots) cfg.plots = false;
    if (!o.method.empty()) cfg.methods = {parse_method(o.method)};
    cfg.validate();
    const std::string dir = !o.out.empty() ? o.out : !cfg.output_dir.empty() ? cfg.output_dir : default_out_dir();

    spdlog::info("benchmark: {} runs, seed {}, output {}", cfg.runs, cfg.seed, dir);
    const auto records = run_monte_carlo(cfg);
    const auto paths = write_report_files(dir, cfg, records);
    print_summary(summarize(records, cfg));
    fmt::print("report {} hash {}\n", paths.report, paths.hash);
    return 0;
}

int run_report(const Options& o) {
    const std::string text = read_text_file(o.in);
    const auto parsed = parse_report(parse_json(text, o.in), o.in);
    std::string dir = o.out;
    if (dir.empty()) {
        const auto parent = std::filesystem::path(o.in).parent_path();
        dir = parent.empty() ? "." : parent.string();
    }
    write_tables_and_plots(dir, parsed.config, parsed.records, parsed.config.plots && !o.no_plots);
    print_summary(summarize(parsed.records, parsed.config));
    fmt::print("report {} hash {}\n", o.in, content_hash(text));
    return 0;
}

void setup_logging(const Options& o) {
    static const auto logger = [] {
        auto l = spdlog::stderr_color_mt("stabid");
        spdlog::set_default_logger(l);
        return l;
    }();
    spdlog::set_level(o.quiet ? spdlog::level::warn : o.verbose ? spdlog::level::debug : spdlog::level::info);
}

}  // namespace

int cli_main(const std::vector<std::string>& args) {
    CLI::App app{"Kernel-based identification with stabilized forward models", "stabid"};
    app.require_subcommand(1);
    Options o;
    app.add_flag("-v,--verbose", o.verbose, "Debug logging");
    app.add_flag("-q,--quiet", o.quiet, "Warnings and errors only");

    auto* identify_cmd = app.add_subcommand("identify", "Empirical Bayes identification from a t,u,y CSV file");
    identify_cmd->add_option("--in", o.in, "Dataset CSV")->required();
    identify_cmd->add_option("--p", o.p, "Predictor truncation length")->check(CLI::PositiveNumber);
    identify_cmd->add_option("--out", o.out, "Model JSON (stdout if omitted)");
    identify_cmd->add_option("--seed", o.seed, "Unused; accepted for uniformity");

    auto* stabilize_cmd = app.add_subcommand("stabilize", "Stabilize an identified model");
    stabilize_cmd->add_option("--model", o.model, "Model JSON")->required();
    stabilize_cmd->add_option("--method", o.method, "lmi, ml-pf, mcmc-mean or mcmc-map")->required();
    stabilize_cmd->add_option("--data", o.data, "Dataset CSV (needed by ml-pf and mcmc methods)");
    stabilize_cmd->add_option("--seed", o.seed, "MCMC seed");
    stabilize_cmd->add_option("--kappa-policy", o.kappa_policy, "estimate or unit");
    stabilize_cmd->add_option("--out", o.out, "Model JSON (stdout if omitted)");

    auto* bench_cmd = app.add_subcommand("benchmark", "Monte Carlo benchmark");
    bench_cmd->add_option("--config", o.config, "Benchmark configuration JSON");
    bench_cmd->add_option("--seed", o.seed, "Master seed");
    bench_cmd->add_option("--runs", o.runs, "Number of runs");
    bench_cmd->add_option("--threads", o.threads, "Worker threads (0: all cores)");
    bench_cmd->add_option("--method", o.method, "Restrict to one method");
    bench_cmd->add_option("--kappa-policy", o.kappa_policy, "estimate or unit");
    bench_cmd->add_option("--out", o.out, "Output directory (default $STABID_OUT_DIR or ./stabid_out)");
    bench_cmd->add_flag("--no-plots", o.no_plots, "Skip SVG output");

    auto* report_cmd = app.add_subcommand("report", "Regenerate CSV tables and plots from a report");
    report_cmd->add_option("--in", o.in, "report.json")->required();
    report_cmd->add_option("--out", o.out, "Output directory (default: next to the report)");
    report_cmd->add_flag("--no-plots", o.no_plots, "Skip SVG output");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        if (!reversed.empty()) reversed.pop_back();  // program name
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitUsage;
    }

    setup_logging(o);
    try {
        if (identify_cmd->parsed()) return run_identify(o);
        if (stabilize_cmd->parsed()) return run_stabilize(o);
        if (bench_cmd->parsed()) return run_benchmark(o);
        if (report_cmd->parsed()) return run_report(o);
    } catch (const UsageError& e) {
        spdlog::error("{}", e.what());
        return kExitUsage;
    } catch (const NumericalError& e) {
        spdlog::error("numerical failure: {}", e.what());
        return kExitNumerical;
    } catch (const std::invalid_argument& e) {
        spdlog::error("{}", e.what());
        return kExitUsage;
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return kExitNumerical;
    }
    return kExitUsage;
}

int cli_main(int argc, char** argv) { return cli_main(std::vector<std::string>(argv, argv + argc)); }

}  // namespace stabid
