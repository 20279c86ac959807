#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "stabid/harness.hpp"

namespace stabid {

inline constexpr int kReportSchemaVersion = 1;

/// Order statistics with linearly interpolated quartiles.
struct Distribution {
    std::size_t n = 0;
    double min = 0.0;
    double q1 = 0.0;
    double median = 0.0;
    double q3 = 0.0;
    double max = 0.0;
    double mean = 0.0;
};

/// Throws std::invalid_argument on an empty sample.
Distribution describe(std::vector<double> values);
double quantile_sorted(const std::vector<double>& sorted, double q);

struct MethodSummary {
    Method method{};
    std::size_t attempted = 0;
    std::size_t succeeded = 0;
    std::vector<double> err;            // successful unstable runs, index order
    std::vector<double> dominant_pole;  // same runs
};

struct BenchmarkSummary {
    std::size_t runs = 0;
    std::size_t identified = 0;
    std::size_t unstable = 0;
    double unstable_fraction = 0.0;
    std::vector<std::size_t> unstable_runs;
    std::vector<double> eb_err;     // unstable runs
    std::vector<double> eb_radius;  // unstable runs
    std::vector<MethodSummary> methods;

    const MethodSummary& method(Method m) const;
};

/// Pure function of the records.
BenchmarkSummary summarize(const std::vector<RunRecord>& records, const BenchmarkConfig& config);

nlohmann::json config_to_json(const BenchmarkConfig& config);
/// Missing keys keep their defaults; unknown keys and bad values raise UsageError.
BenchmarkConfig config_from_json(const nlohmann::json& j, const std::string& source = "<config>");

nlohmann::json record_to_json(const RunRecord& record, bool with_timings = false);
RunRecord record_from_json(const nlohmann::json& j, const std::string& source = "<record>");

nlohmann::json summary_to_json(const BenchmarkSummary& summary);

/// {schema_version, config, summary, records}; timings excluded so that the
/// document is a deterministic function of the configuration.
nlohmann::json make_report(const BenchmarkConfig& config, const std::vector<RunRecord>& records);
std::string dump_report(const nlohmann::json& report);

struct ParsedReport {
    BenchmarkConfig config;
    std::vector<RunRecord> records;
};
ParsedReport parse_report(const nlohmann::json& j, const std::string& source = "<report>");

/// 64-bit FNV-1a, printed as 16 hex digits.
std::string content_hash(const std::string& bytes);

std::string runs_csv(const std::vector<RunRecord>& records, const BenchmarkConfig& config);
std::string summary_csv(const BenchmarkSummary& summary);
nlohmann::json timings_json(const std::vector<RunRecord>& records);

/// Standalone SVG with one box (quartiles, median, 1.5 IQR whiskers, outliers) per series.
std::string boxplot_svg(const std::string& title, const std::vector<std::string>& labels,
                        const std::vector<std::vector<double>>& series, const std::string& y_label);

struct ReportPaths {
    std::string report;
    std::string hash;
};

/// Writes report.json, runs.csv, summary.csv, timings.json and, if enabled,
/// err_boxplot.svg and pole_boxplot.svg into `dir`.
ReportPaths write_report_files(const std::string& dir, const BenchmarkConfig& config,
                               const std::vector<RunRecord>& records, bool with_timings = true);

/// CSV tables and plots regenerated from a stored report.
void write_tables_and_plots(const std::string& dir, const BenchmarkConfig& config, const std::vector<RunRecord>& records,
                            bool plots);

}  // namespace stabid
