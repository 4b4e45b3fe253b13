#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

#include <json.hpp>

#include "laiml/calibration.hpp"
#include "laiml/knowledge_base.hpp"
#include "laiml/remote_policy.hpp"

namespace laiml::cli {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Every tunable of the pipeline. Paths, secrets and thread counts are left out
// of the JSON form, so the fingerprint identifies what a run computes rather
// than where its files live.
struct PipelineConfig {
    std::uint64_t seed = 1;
    double grid_step = 0.5;
    calibration::DistillConfig distill;
    kb::RetrievalConfig retrieval;
    std::size_t runs = 3;
    std::size_t predict_threads = 1;
    std::string policy = "stub";  // "stub" or "remote"
    double damping = 0.7;
    policy::RemoteEndpointConfig remote;
    std::string embedder = std::string(kb::StandardizedValueEmbedder::kId);

    void validate() const;
    nlohmann::json to_json() const;
    // Missing keys keep their defaults; unknown keys are rejected.
    static PipelineConfig from_json(const nlohmann::json& doc);
    static PipelineConfig load(const std::filesystem::path& path);
    std::string fingerprint() const;
};

struct SynthOptions {
    std::optional<std::filesystem::path> config;  // synthetic teacher config
    std::size_t n = 300;
    std::optional<std::uint64_t> seed;
    std::filesystem::path out;
    std::optional<std::filesystem::path> schema_out;
    std::optional<std::filesystem::path> config_out;
};

struct ExtractOptions {
    std::filesystem::path schema;
    std::filesystem::path matrix;
    std::filesystem::path out;
    std::optional<double> step;
};

struct DistillOptions {
    std::filesystem::path acpb;
    std::filesystem::path matrix;
    std::filesystem::path out_store;
    std::filesystem::path summary;
};

struct PredictOptions {
    std::filesystem::path acpb;
    std::filesystem::path store;
    std::optional<std::filesystem::path> case_file;
    std::optional<std::filesystem::path> report_text;
    std::optional<std::filesystem::path> report_json;
    std::optional<std::filesystem::path> cases_file;
    std::optional<std::filesystem::path> predictions;
};

struct EvaluateOptions {
    std::optional<std::filesystem::path> pred_a;
    std::optional<std::filesystem::path> pred_b;
    std::optional<std::filesystem::path> truth;
    std::optional<std::filesystem::path> teacher_probs;
    std::optional<std::filesystem::path> infer_probs;
    std::optional<std::filesystem::path> out_json;
    std::optional<std::filesystem::path> out_text;
    std::optional<std::filesystem::path> categories;
};

// Each command returns the process exit code. Human summaries go to `out`,
// diagnostics to `err`.
int cmd_synth(const SynthOptions& options, std::ostream& out, std::ostream& err);
int cmd_extract(const ExtractOptions& options, std::ostream& out, std::ostream& err);
int cmd_distill(const DistillOptions& options, const PipelineConfig& config, std::ostream& out, std::ostream& err);
int cmd_predict(const PredictOptions& options, const PipelineConfig& config, std::ostream& out, std::ostream& err);
int cmd_evaluate(const EvaluateOptions& options, std::ostream& out, std::ostream& err);

}  // namespace laiml::cli
