#pragma once

#include <optional>
#include <string>

#include "json.hpp"
#include "stabid/empirical_bayes.hpp"
#include "stabid/error.hpp"

namespace stabid {

inline constexpr int kModelSchemaVersion = 1;

/// Three columns t,u,y with that header. Malformed input raises UsageError
/// naming the file and line.
Dataset read_dataset_csv(const std::string& path);
Dataset parse_dataset_csv(const std::string& text, const std::string& source = "<input>");
void write_dataset_csv(const std::string& path, const Dataset& data);

/// Parse errors become UsageError with the line and column.
nlohmann::json parse_json(const std::string& text, const std::string& source = "<input>");
nlohmann::json read_json_file(const std::string& path);

std::string read_text_file(const std::string& path);
/// Creates missing parent directories.
void write_text_file(const std::string& path, const std::string& content);

/// Predictor model as exchanged by the CLI.
struct ModelFile {
    PredictorEstimate estimate;
    double spectral_radius = 0.0;
    std::optional<Hyperparameters> eta;
    std::string method = "eb";
    std::string note;
};

nlohmann::json model_to_json(const ModelFile& model);
/// Throws UsageError on missing or mistyped fields.
ModelFile model_from_json(const nlohmann::json& j, const std::string& source = "<input>");

/// Reads a required field, raising UsageError("<source>: field '<key>' ...").
template <class T>
T json_field(const nlohmann::json& j, const std::string& key, const std::string& source) {
    if (!j.is_object() || !j.contains(key)) throw UsageError(source + ": missing field '" + key + "'");
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw UsageError(source + ": field '" + key + "' has the wrong type");
    }
}

}  // namespace stabid
