#include "stabid/report.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <set>
#include <stdexcept>

#include <fmt/format.h>

#include "stabid/error.hpp"
#include "stabid/io.hpp"

namespace stabid {

namespace {

using nlohmann::json;

std::vector<double> to_vector(const Vector& v) { return {v.data(), v.data() + v.size()}; }

Vector from_vector(const std::vector<double>& v) {
    return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

json distribution_json(const std::vector<double>& values) {
    if (values.empty()) return json{{"n", 0}};
    const auto d = describe(values);
    return {{"n", d.n},         {"min", d.min}, {"q1", d.q1},    {"median", d.median},
            {"q3", d.q3},       {"max", d.max}, {"mean", d.mean}};
}

std::string csv_number(double v) { return fmt::format("{}", v); }

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& source) {
    if (!j.is_object()) throw UsageError(source + ": expected an object");
    for (const auto& [key, _] : j.items()) {
        if (!allowed.count(key)) throw UsageError(source + ": unknown field '" + key + "'");
    }
}

template <class T>
void optional_field(const json& j, const std::string& key, T& target, const std::string& source) {
    if (j.contains(key)) target = json_field<T>(j, key, source);
}

}  // namespace

double quantile_sorted(const std::vector<double>& sorted, double q) {
    if (sorted.empty()) throw std::invalid_argument("quantile_sorted: empty sample");
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

Distribution describe(std::vector<double> values) {
    if (values.empty()) throw std::invalid_argument("describe: empty sample");
    std::sort(values.begin(), values.end());
    Distribution d;
    d.n = values.size();
    d.min = values.front();
    d.max = values.back();
    d.q1 = quantile_sorted(values, 0.25);
    d.median = quantile_sorted(values, 0.5);
    d.q3 = quantile_sorted(values, 0.75);
    double s = 0.0;
    for (double v : values) s += v;
    d.mean = s / static_cast<double>(values.size());
    return d;
}

const MethodSummary& BenchmarkSummary::method(Method m) const {
    for (const auto& s : methods) {
        if (s.method == m) return s;
    }
    throw std::invalid_argument("BenchmarkSummary: method " + method_name(m) + " not configured");
}

BenchmarkSummary summarize(const std::vector<RunRecord>& records, const BenchmarkConfig& config) {
    BenchmarkSummary s;
    s.runs = records.size();
    for (Method m : config.methods) s.methods.push_back(MethodSummary{m, 0, 0, {}, {}});
    for (const auto& r : records) {
        if (!r.error.empty()) continue;
        ++s.identified;
        if (!r.unstable) continue;
        ++s.unstable;
        s.unstable_runs.push_back(r.index);
        s.eb_err.push_back(r.eb_err);
        s.eb_radius.push_back(r.eb_spectral_radius);
        for (auto& ms : s.methods) {
            const auto it = r.methods.find(ms.method);
            if (it == r.methods.end()) continue;
            ++ms.attempted;
            if (!it->second.ok) continue;
            ++ms.succeeded;
            ms.err.push_back(it->second.err);
            ms.dominant_pole.push_back(it->second.dominant_pole);
        }
    }
    s.unstable_fraction = s.identified ? static_cast<double>(s.unstable) / static_cast<double>(s.identified) : 0.0;
    return s;
}

json config_to_json(const BenchmarkConfig& c) {
    json methods = json::array();
    for (Method m : c.methods) methods.push_back(method_name(m));
    return {{"runs", c.runs},
            {"id_length", c.id_length},
            {"test_length", c.test_length},
            {"p", c.p},
            {"seed", c.seed},
            {"methods", methods},
            {"expansion_length", c.expansion_length},
            {"plots", c.plots},
            {"mcmc",
             {{"burn_in", c.mcmc.burn_in},
              {"hyper_samples", c.mcmc.hyper_samples},
              {"components", c.mcmc.components},
              {"chain_length", c.mcmc.chain_length},
              {"kappa_draws", c.mcmc.kappa_draws},
              {"kappa_policy", kappa_policy_name(c.mcmc.kappa_policy)}}}};
}

BenchmarkConfig config_from_json(const json& j, const std::string& source) {
    check_keys(j,
               {"runs", "id_length", "test_length", "p", "seed", "methods", "expansion_length", "plots", "mcmc",
                "output_dir", "threads"},
               source);
    BenchmarkConfig c;
    optional_field(j, "runs", c.runs, source);
    optional_field(j, "id_length", c.id_length, source);
    optional_field(j, "test_length", c.test_length, source);
    optional_field(j, "p", c.p, source);
    optional_field(j, "seed", c.seed, source);
    optional_field(j, "expansion_length", c.expansion_length, source);
    optional_field(j, "plots", c.plots, source);
    optional_field(j, "output_dir", c.output_dir, source);
    optional_field(j, "threads", c.threads, source);
    if (j.contains("methods")) {
        c.methods.clear();
        for (const auto& name : json_field<std::vector<std::string>>(j, "methods", source)) {
            c.methods.push_back(parse_method(name));
        }
    }
    if (j.contains("mcmc")) {
        const auto& m = j.at("mcmc");
        const std::string ms = source + " mcmc";
        check_keys(m, {"burn_in", "hyper_samples", "components", "chain_length", "kappa_draws", "kappa_policy"}, ms);
        optional_field(m, "burn_in", c.mcmc.burn_in, ms);
        optional_field(m, "hyper_samples", c.mcmc.hyper_samples, ms);
        optional_field(m, "components", c.mcmc.components, ms);
        optional_field(m, "chain_length", c.mcmc.chain_length, ms);
        optional_field(m, "kappa_draws", c.mcmc.kappa_draws, ms);
        if (m.contains("kappa_policy")) c.mcmc.kappa_policy = parse_kappa_policy(json_field<std::string>(m, "kappa_policy", ms));
    }
    c.validate();
    return c;
}

json record_to_json(const RunRecord& r, bool with_timings) {
    json j;
    j["index"] = r.index;
    j["model_seed"] = r.model_seed;
    j["data_seed"] = r.data_seed;
    j["model"] = {{"a", r.model.a.coeffs}, {"b", r.model.b.coeffs}, {"c", r.model.c.coeffs}, {"k", r.model.k_gain}};
    j["error"] = r.error;
    j["eta"] = {{"scale", r.eta.scale}, {"decay", r.eta.decay}, {"noise_variance", r.eta.noise_variance}};
    j["f"] = to_vector(r.estimate.f);
    j["g"] = to_vector(r.estimate.g);
    j["eb_spectral_radius"] = r.eb_spectral_radius;
    j["eb_err"] = r.eb_err;
    j["unstable"] = r.unstable;
    json methods = json::object();
    for (const auto& [m, o] : r.methods) {
        methods[method_name(m)] = {{"ok", o.ok},
                                   {"error", o.error},
                                   {"err", o.err},
                                   {"dominant_pole", o.dominant_pole},
                                   {"p_ir", to_vector(o.forward.p_ir)},
                                   {"h_ir", to_vector(o.forward.h_ir)}};
    }
    j["methods"] = methods;
    if (r.mcmc) {
        const auto& d = *r.mcmc;
        j["mcmc"] = {{"gamma", d.gamma},
                     {"pilots", d.pilots},
                     {"hyper_acceptance", d.hyper_acceptance},
                     {"stable_acceptance", d.stable_acceptance},
                     {"hyper_ess", d.hyper_ess},
                     {"stable_ess", d.stable_ess},
                     {"components", d.components}};
    }
    if (with_timings) {
        json t = json::object();
        for (const auto& [m, v] : r.timings.methods) t[method_name(m)] = v;
        j["timings"] = {{"identify", r.timings.identify}, {"methods", t}};
    }
    return j;
}

RunRecord record_from_json(const json& j, const std::string& source) {
    RunRecord r;
    r.index = json_field<std::size_t>(j, "index", source);
    const std::string src = fmt::format("{} (run {})", source, r.index);
    r.model_seed = json_field<std::uint64_t>(j, "model_seed", src);
    r.data_seed = json_field<std::uint64_t>(j, "data_seed", src);
    const auto& m = j.at("model");
    r.model.a = Polynomial(json_field<std::vector<double>>(m, "a", src));
    r.model.b = Polynomial(json_field<std::vector<double>>(m, "b", src));
    r.model.c = Polynomial(json_field<std::vector<double>>(m, "c", src));
    r.model.k_gain = json_field<double>(m, "k", src);
    r.error = json_field<std::string>(j, "error", src);
    const auto& e = j.at("eta");
    r.eta = Hyperparameters{json_field<double>(e, "scale", src), json_field<double>(e, "decay", src),
                            json_field<double>(e, "noise_variance", src)};
    r.estimate.f = from_vector(json_field<std::vector<double>>(j, "f", src));
    r.estimate.g = from_vector(json_field<std::vector<double>>(j, "g", src));
    r.eb_spectral_radius = json_field<double>(j, "eb_spectral_radius", src);
    r.eb_err = json_field<double>(j, "eb_err", src);
    r.unstable = json_field<bool>(j, "unstable", src);
    const json methods = json_field<json>(j, "methods", src);
    for (const auto& [name, o] : methods.items()) {
        MethodOutcome out;
        out.ok = json_field<bool>(o, "ok", src);
        out.error = json_field<std::string>(o, "error", src);
        out.err = json_field<double>(o, "err", src);
        out.dominant_pole = json_field<double>(o, "dominant_pole", src);
        out.forward.p_ir = from_vector(json_field<std::vector<double>>(o, "p_ir", src));
        out.forward.h_ir = from_vector(json_field<std::vector<double>>(o, "h_ir", src));
        out.forward.spectral_radius = out.dominant_pole;
        r.methods[parse_method(name)] = std::move(out);
    }
    if (j.contains("mcmc")) {
        const auto& d = j.at("mcmc");
        McmcDiagnostics diag;
        diag.gamma = json_field<double>(d, "gamma", src);
        diag.pilots = json_field<int>(d, "pilots", src);
        diag.hyper_acceptance = json_field<double>(d, "hyper_acceptance", src);
        diag.stable_acceptance = json_field<double>(d, "stable_acceptance", src);
        diag.hyper_ess = json_field<double>(d, "hyper_ess", src);
        diag.stable_ess = json_field<double>(d, "stable_ess", src);
        diag.components = json_field<std::size_t>(d, "components", src);
        r.mcmc = diag;
    }
    if (j.contains("timings")) {
        const auto& t = j.at("timings");
        r.timings.identify = json_field<double>(t, "identify", src);
        const json methods_t = json_field<json>(t, "methods", src);
        for (const auto& [name, v] : methods_t.items()) {
            r.timings.methods[parse_method(name)] = v.get<double>();
        }
    }
    return r;
}

json summary_to_json(const BenchmarkSummary& s) {
    json methods = json::object();
    for (const auto& m : s.methods) {
        methods[method_name(m.method)] = {{"attempted", m.attempted},
                                          {"succeeded", m.succeeded},
                                          {"err", distribution_json(m.err)},
                                          {"dominant_pole", distribution_json(m.dominant_pole)}};
    }
    return {{"runs", s.runs},
            {"identified", s.identified},
            {"unstable", s.unstable},
            {"unstable_fraction", s.unstable_fraction},
            {"unstable_runs", s.unstable_runs},
            {"eb", {{"err", distribution_json(s.eb_err)}, {"spectral_radius", distribution_json(s.eb_radius)}}},
            {"methods", methods}};
}

json make_report(const BenchmarkConfig& config, const std::vector<RunRecord>& records) {
    json recs = json::array();
    for (const auto& r : records) recs.push_back(record_to_json(r, false));
    return {{"schema_version", kReportSchemaVersion},
            {"generator", "stabid"},
            {"config", config_to_json(config)},
            {"summary", summary_to_json(summarize(records, config))},
            {"records", recs}};
}

std::string dump_report(const json& report) { return report.dump(1) + "\n"; }

ParsedReport parse_report(const json& j, const std::string& source) {
    const int version = json_field<int>(j, "schema_version", source);
    if (version != kReportSchemaVersion) {
        throw UsageError(fmt::format("{}: unsupported schema_version {}", source, version));
    }
    ParsedReport out;
    out.config = config_from_json(json_field<json>(j, "config", source), source + " config");
    const json records = json_field<json>(j, "records", source);
    for (const auto& r : records) out.records.push_back(record_from_json(r, source));
    return out;
}

std::string content_hash(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return fmt::format("{:016x}", h);
}

std::string runs_csv(const std::vector<RunRecord>& records, const BenchmarkConfig& config) {
    std::string out = "index,model_seed,data_seed,error,unstable,eb_spectral_radius,eb_err";
    for (Method m : config.methods) {
        const auto n = method_name(m);
        out += fmt::format(",{0}_ok,{0}_err,{0}_dominant_pole", n);
    }
    out += "\n";
    for (const auto& r : records) {
        std::string error = r.error;
        std::replace(error.begin(), error.end(), ',', ';');
        std::replace(error.begin(), error.end(), '\n', ' ');
        out += fmt::format("{},{},{},{},{},{},{}", r.index, r.model_seed, r.data_seed, error, r.unstable ? 1 : 0,
                           r.error.empty() ? csv_number(r.eb_spectral_radius) : "",
                           r.error.empty() ? csv_number(r.eb_err) : "");
        for (Method m : config.methods) {
            const auto it = r.methods.find(m);
            if (it == r.methods.end()) {
                out += ",,,";
            } else if (!it->second.ok) {
                out += ",0,,";
            } else {
                out += fmt::format(",1,{},{}", csv_number(it->second.err), csv_number(it->second.dominant_pole));
            }
        }
        out += "\n";
    }
    return out;
}

std::string summary_csv(const BenchmarkSummary& s) {
    std::string out =
        "method,attempted,succeeded,err_min,err_q1,err_median,err_q3,err_max,pole_min,pole_q1,pole_median,pole_q3,"
        "pole_max\n";
    auto row = [&](const std::string& name, std::size_t attempted, std::size_t succeeded,
                   const std::vector<double>& err, const std::vector<double>& pole) {
        out += fmt::format("{},{},{}", name, attempted, succeeded);
        for (const auto* v : {&err, &pole}) {
            if (v->empty()) {
                out += ",,,,,";
                continue;
            }
            const auto d = describe(*v);
            out += fmt::format(",{},{},{},{},{}", d.min, d.q1, d.median, d.q3, d.max);
        }
        out += "\n";
    };
    row("eb", s.unstable, s.unstable, s.eb_err, s.eb_radius);
    for (const auto& m : s.methods) row(method_name(m.method), m.attempted, m.succeeded, m.err, m.dominant_pole);
    return out;
}

json timings_json(const std::vector<RunRecord>& records) {
    json runs = json::array();
    for (const auto& r : records) {
        json t = json::object();
        for (const auto& [m, v] : r.timings.methods) t[method_name(m)] = v;
        runs.push_back({{"index", r.index}, {"identify", r.timings.identify}, {"methods", t}});
    }
    return {{"schema_version", kReportSchemaVersion}, {"runs", runs}};
}

std::string boxplot_svg(const std::string& title, const std::vector<std::string>& labels,
                        const std::vector<std::vector<double>>& series, const std::string& y_label) {
    if (labels.size() != series.size()) throw std::invalid_argument("boxplot_svg: labels and series differ in size");
    const double width = 160.0 + 120.0 * static_cast<double>(std::max<std::size_t>(series.size(), 1));
    const double height = 420.0;
    const double left = 80.0, right = 30.0, top = 50.0, bottom = 60.0;
    const double plot_h = height - top - bottom;

    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (const auto& s : series) {
        for (double v : s) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    }
    if (!std::isfinite(lo)) {
        lo = 0.0;
        hi = 1.0;
    }
    if (hi - lo < 1e-12) {
        lo -= 0.5;
        hi += 0.5;
    }
    const double pad = 0.05 * (hi - lo);
    lo -= pad;
    hi += pad;
    auto ypos = [&](double v) { return top + plot_h * (hi - v) / (hi - lo); };

    std::string svg = fmt::format(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0:.0f}\" height=\"{1:.0f}\" viewBox=\"0 0 {0:.0f} "
        "{1:.0f}\" font-family=\"sans-serif\" font-size=\"12\">\n",
        width, height);
    svg += fmt::format("<rect width=\"{:.0f}\" height=\"{:.0f}\" fill=\"white\"/>\n", width, height);
    svg += fmt::format("<text x=\"{:.1f}\" y=\"25\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n", width / 2,
                       title);
    svg += fmt::format("<line x1=\"{0}\" y1=\"{1}\" x2=\"{0}\" y2=\"{2}\" stroke=\"black\"/>\n", left, top,
                       top + plot_h);
    for (int k = 0; k <= 5; ++k) {
        const double v = lo + (hi - lo) * k / 5.0;
        const double y = ypos(v);
        svg += fmt::format("<line x1=\"{:.1f}\" y1=\"{:.1f}\" x2=\"{:.1f}\" y2=\"{:.1f}\" stroke=\"#ddd\"/>\n", left, y,
                           width - right, y);
        svg += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" text-anchor=\"end\">{:.4g}</text>\n", left - 6, y + 4, v);
    }
    svg += fmt::format(
        "<text x=\"18\" y=\"{0:.1f}\" text-anchor=\"middle\" transform=\"rotate(-90 18 {0:.1f})\">{1}</text>\n",
        top + plot_h / 2, y_label);

    const double slot = (width - left - right) / static_cast<double>(std::max<std::size_t>(series.size(), 1));
    for (std::size_t i = 0; i < series.size(); ++i) {
        const double cx = left + slot * (static_cast<double>(i) + 0.5);
        svg += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" text-anchor=\"middle\">{} (n={})</text>\n", cx,
                           height - bottom + 22, labels[i], series[i].size());
        if (series[i].empty()) continue;
        auto v = series[i];
        std::sort(v.begin(), v.end());
        const double q1 = quantile_sorted(v, 0.25), med = quantile_sorted(v, 0.5), q3 = quantile_sorted(v, 0.75);
        const double iqr = q3 - q1;
        double wlo = q3, whi = q1;
        for (double x : v) {
            if (x >= q1 - 1.5 * iqr) wlo = std::min(wlo, x);
            if (x <= q3 + 1.5 * iqr) whi = std::max(whi, x);
        }
        const double bw = std::min(60.0, 0.5 * slot);
        svg += fmt::format("<line x1=\"{0:.1f}\" y1=\"{1:.1f}\" x2=\"{0:.1f}\" y2=\"{2:.1f}\" stroke=\"black\"/>\n", cx,
                           ypos(whi), ypos(q3));
        svg += fmt::format("<line x1=\"{0:.1f}\" y1=\"{1:.1f}\" x2=\"{0:.1f}\" y2=\"{2:.1f}\" stroke=\"black\"/>\n", cx,
                           ypos(q1), ypos(wlo));
        for (double w : {wlo, whi}) {
            svg += fmt::format("<line x1=\"{:.1f}\" y1=\"{:.1f}\" x2=\"{:.1f}\" y2=\"{:.1f}\" stroke=\"black\"/>\n",
                               cx - bw / 4, ypos(w), cx + bw / 4, ypos(w));
        }
        svg += fmt::format(
            "<rect x=\"{:.1f}\" y=\"{:.1f}\" width=\"{:.1f}\" height=\"{:.1f}\" fill=\"#9ecae1\" stroke=\"black\"/>\n",
            cx - bw / 2, ypos(q3), bw, std::max(ypos(q1) - ypos(q3), 0.5));
        svg += fmt::format(
            "<line x1=\"{:.1f}\" y1=\"{:.1f}\" x2=\"{:.1f}\" y2=\"{:.1f}\" stroke=\"#d62728\" stroke-width=\"2\"/>\n",
            cx - bw / 2, ypos(med), cx + bw / 2, ypos(med));
        for (double x : v) {
            if (x < wlo || x > whi) {
                svg += fmt::format("<circle cx=\"{:.1f}\" cy=\"{:.1f}\" r=\"3\" fill=\"none\" stroke=\"black\"/>\n", cx,
                                   ypos(x));
            }
        }
    }
    svg += "</svg>\n";
    return svg;
}

void write_tables_and_plots(const std::string& dir, const BenchmarkConfig& config, const std::vector<RunRecord>& records,
                            bool plots) {
    const std::filesystem::path d(dir);
    const auto s = summarize(records, config);
    write_text_file((d / "runs.csv").string(), runs_csv(records, config));
    write_text_file((d / "summary.csv").string(), summary_csv(s));
    if (!plots) return;
    std::vector<std::string> labels{"eb"};
    std::vector<std::vector<double>> err{s.eb_err}, pole{s.eb_radius};
    for (const auto& m : s.methods) {
        labels.push_back(method_name(m.method));
        err.push_back(m.err);
        pole.push_back(m.dominant_pole);
    }
    write_text_file((d / "err_boxplot.svg").string(),
                    boxplot_svg("Relative impulse-response error, unstable runs", labels, err, "err"));
    write_text_file((d / "pole_boxplot.svg").string(),
                    boxplot_svg("Dominant pole modulus, unstable runs", labels, pole, "|pole|"));
}

ReportPaths write_report_files(const std::string& dir, const BenchmarkConfig& config,
                               const std::vector<RunRecord>& records, bool with_timings) {
    const std::filesystem::path d(dir);
    const std::string text = dump_report(make_report(config, records));
    ReportPaths out;
    out.report = (d / "report.json").string();
    out.hash = content_hash(text);
    write_text_file(out.report, text);
    write_tables_and_plots(dir, config, records, config.plots);
    if (with_timings) write_text_file((d / "timings.json").string(), timings_json(records).dump(1) + "\n");
    return out;
}

}  // namespace stabid
