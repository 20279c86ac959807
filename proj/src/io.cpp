#include "stabid/io.hpp"

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <vector>

#include <fmt/format.h>

#include "stabid/error.hpp"

namespace stabid {

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(trim(cell));
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

double parse_number(const std::string& cell, const std::string& where) {
    double v = 0.0;
    const char* first = cell.data();
    const char* last = cell.data() + cell.size();
    const auto [ptr, ec] = std::from_chars(first, last, v);
    if (cell.empty() || ec != std::errc() || ptr != last) {
        throw UsageError(fmt::format("{}: '{}' is not a number", where, cell));
    }
    if (!std::isfinite(v)) throw UsageError(fmt::format("{}: non-finite value '{}'", where, cell));
    return v;
}

std::vector<double> to_vector(const Vector& v) { return {v.data(), v.data() + v.size()}; }

Vector from_vector(const std::vector<double>& v) {
    return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

Dataset parse_dataset_csv(const std::string& text, const std::string& source) {
    std::stringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    bool header = false;
    std::vector<double> u, y;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        const auto where = fmt::format("{}:{}", source, lineno);
        const auto cells = split_csv(line);
        if (!header) {
            if (cells != std::vector<std::string>{"t", "u", "y"}) {
                throw UsageError(where + ": expected header 't,u,y'");
            }
            header = true;
            continue;
        }
        if (cells.size() != 3) throw UsageError(fmt::format("{}: expected 3 columns, found {}", where, cells.size()));
        const double t = parse_number(cells[0], where);
        if (t != static_cast<double>(u.size())) {
            throw UsageError(fmt::format("{}: expected t = {}, found {}", where, u.size(), cells[0]));
        }
        u.push_back(parse_number(cells[1], where));
        y.push_back(parse_number(cells[2], where));
    }
    if (!header) throw UsageError(source + ": empty file");
    if (u.empty()) throw UsageError(source + ": no data rows");
    Dataset d;
    d.u = from_vector(u);
    d.y = from_vector(y);
    return d;
}

Dataset read_dataset_csv(const std::string& path) { return parse_dataset_csv(read_text_file(path), path); }

void write_dataset_csv(const std::string& path, const Dataset& data) {
    data.validate();
    std::string out = "t,u,y\n";
    for (Eigen::Index t = 0; t < data.y.size(); ++t) out += fmt::format("{},{},{}\n", t, data.u[t], data.y[t]);
    write_text_file(path, out);
}

nlohmann::json parse_json(const std::string& text, const std::string& source) {
    try {
        return nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        std::size_t line = 1, col = 1;
        for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
            if (text[i] == '\n') {
                ++line;
                col = 1;
            } else {
                ++col;
            }
        }
        throw UsageError(fmt::format("{}:{}:{}: invalid JSON", source, line, col));
    }
}

nlohmann::json read_json_file(const std::string& path) { return parse_json(read_text_file(path), path); }

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw UsageError("cannot open '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const std::string& path, const std::string& content) {
    const std::filesystem::path p(path);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw UsageError("cannot write '" + path + "'");
    out << content;
    if (!out) throw UsageError("write failed for '" + path + "'");
}

nlohmann::json model_to_json(const ModelFile& model) {
    nlohmann::json j;
    j["schema_version"] = kModelSchemaVersion;
    j["kind"] = "predictor";
    j["method"] = model.method;
    j["p"] = model.estimate.p();
    j["f"] = to_vector(model.estimate.f);
    j["g"] = to_vector(model.estimate.g);
    j["spectral_radius"] = model.spectral_radius;
    j["stable"] = model.spectral_radius < 1.0;
    if (model.eta) {
        j["eta"] = {{"scale", model.eta->scale},
                    {"decay", model.eta->decay},
                    {"noise_variance", model.eta->noise_variance}};
    }
    if (!model.note.empty()) j["note"] = model.note;
    return j;
}

ModelFile model_from_json(const nlohmann::json& j, const std::string& source) {
    const int version = json_field<int>(j, "schema_version", source);
    if (version != kModelSchemaVersion) {
        throw UsageError(fmt::format("{}: unsupported schema_version {}", source, version));
    }
    if (json_field<std::string>(j, "kind", source) != "predictor") throw UsageError(source + ": kind must be 'predictor'");
    ModelFile m;
    const auto f = json_field<std::vector<double>>(j, "f", source);
    const auto g = json_field<std::vector<double>>(j, "g", source);
    if (f.empty() || f.size() != g.size()) throw UsageError(source + ": f and g must be nonempty and of equal length");
    m.estimate = PredictorEstimate(from_vector(f), from_vector(g));
    m.spectral_radius = spectral_radius(m.estimate.f);
    if (j.contains("method")) m.method = json_field<std::string>(j, "method", source);
    if (j.contains("eta")) {
        const auto& e = j.at("eta");
        Hyperparameters eta{json_field<double>(e, "scale", source + " eta"), json_field<double>(e, "decay", source + " eta"),
                            json_field<double>(e, "noise_variance", source + " eta")};
        try {
            eta.validate();
        } catch (const std::domain_error& ex) {
            throw UsageError(source + ": " + ex.what());
        }
        m.eta = eta;
    }
    if (j.contains("note")) m.note = json_field<std::string>(j, "note", source);
    return m;
}

}  // namespace stabid
