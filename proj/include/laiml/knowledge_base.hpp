#pragma once

#include <array>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "laiml/cacs.hpp"
#include "laiml/calibration.hpp"
#include "laiml/schema.hpp"

namespace laiml::kb {

class KbError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class RetrievalError : public KbError {
public:
    using KbError::KbError;
};

class StoreFormatError : public KbError {
public:
    using KbError::KbError;
};

// ---- embedding -------------------------------------------------------------

// Per-feature mean and population standard deviation of the training cohort.
struct Standardization {
    std::vector<double> mean;
    std::vector<double> stddev;

    static Standardization from_matrix(const FeatureShapMatrix& matrix);
    nlohmann::json to_json() const;
    static Standardization from_json(const nlohmann::json& doc);

    friend bool operator==(const Standardization&, const Standardization&) = default;
};

class Embedder {
public:
    virtual ~Embedder() = default;
    virtual std::string id() const = 0;
    virtual bool deterministic() const = 0;
    virtual std::size_t dimension(std::size_t group_size) const = 0;
    virtual nlohmann::json params() const = 0;
    virtual std::vector<double> embed(const cacs::PatientFeatureTable& table,
                                      std::span<const std::size_t> group) const = 0;
};

// Default embedder: the group's raw values, standardized feature by feature.
// Zero-variance features map to 0.
class StandardizedValueEmbedder final : public Embedder {
public:
    static constexpr std::string_view kId = "standardized-values/1";

    explicit StandardizedValueEmbedder(Standardization stats) : stats_(std::move(stats)) {}

    std::string id() const override { return std::string(kId); }
    bool deterministic() const override { return true; }
    std::size_t dimension(std::size_t group_size) const override { return group_size; }
    nlohmann::json params() const override { return stats_.to_json(); }
    std::vector<double> embed(const cacs::PatientFeatureTable& table,
                              std::span<const std::size_t> group) const override;

    const Standardization& stats() const { return stats_; }

private:
    Standardization stats_;
};

std::vector<double> embed_group(const cacs::PatientFeatureTable& table, std::span<const std::size_t> group,
                                const Embedder& embedder);

// Cosine similarity clamped to [-1, 1]. Two zero vectors are identical (1);
// a zero vector against a nonzero one scores 0.
double cosine_similarity(std::span<const double> a, std::span<const double> b);

// ---- store -----------------------------------------------------------------

struct DkbEntry {
    std::size_t entry_id = 0;
    std::string sample_id;
    std::array<std::vector<double>, kGroupCount> vectors;
    cacs::PatientFeatureTable table;
    calibration::WeightSet weights;
    std::string guidance;
    double teacher_prob = 0.5;
    double infer_prob = 0.5;
    std::optional<Label> label;
    bool converged = true;
    std::size_t iterations = 0;

    friend bool operator==(const DkbEntry&, const DkbEntry&) = default;
};

struct RetrievalConfig {
    std::size_t k = 8;
    double threshold = 0.7;
    bool allow_global_fallback = true;

    nlohmann::json to_json() const;
};

enum class Tier { intersection, majority, global };
std::string_view to_string(Tier tier);

struct Hit {
    std::size_t entry_id = 0;
    double similarity = 0.0;

    friend bool operator==(const Hit&, const Hit&) = default;
};

struct SelectedCase {
    std::size_t entry_id = 0;
    std::array<double, kGroupCount> group_similarity{};
    double mean_similarity = 0.0;

    friend bool operator==(const SelectedCase&, const SelectedCase&) = default;
};

struct RetrievalResult {
    std::array<std::vector<Hit>, kGroupCount> groups;
    std::vector<SelectedCase> selected;  // C_final, best first
    Tier tier = Tier::intersection;

    friend bool operator==(const RetrievalResult&, const RetrievalResult&) = default;
};

// Append-only store of calibrated cases. Appends are serialized; readers take
// an immutable snapshot and never block writers for longer than a pointer swap.
class KnowledgeBase final : public calibration::OutcomeSink {
public:
    KnowledgeBase(FeatureSchema schema, std::shared_ptr<const Embedder> embedder, RetrievalConfig defaults = {});

    // Persists a distillation outcome; rejects unconverged outcomes unless allowed.
    std::size_t save(const calibration::DistillationOutcome& outcome, bool allow_unconverged = false) override;

    std::shared_ptr<const std::vector<DkbEntry>> snapshot() const;
    std::size_t size() const { return snapshot()->size(); }

    const FeatureSchema& schema() const { return schema_; }
    const Embedder& embedder() const { return *embedder_; }
    const RetrievalConfig& defaults() const { return defaults_; }

    std::string serialize() const;
    void persist(const std::filesystem::path& path) const;

    // `embedder` is required when the store was written with a non-default
    // embedder; its id must match the header.
    static KnowledgeBase deserialize(std::string_view bytes, std::shared_ptr<const Embedder> embedder = nullptr);
    static KnowledgeBase open(const std::filesystem::path& path, std::shared_ptr<const Embedder> embedder = nullptr);

private:
    std::size_t append(DkbEntry entry);

    FeatureSchema schema_;
    std::shared_ptr<const Embedder> embedder_;
    RetrievalConfig defaults_;
    std::unique_ptr<std::mutex> write_mutex_ = std::make_unique<std::mutex>();
    std::shared_ptr<const std::vector<DkbEntry>> entries_;
};

inline constexpr std::string_view kStoreMagic = "LAIML-DKB";
inline constexpr int kStoreVersion = 1;

// Feature-grouped multi-round retrieval: per-group top-k above the threshold,
// intersected; falls back to >=2-of-3 agreement, then to a global top-k by
// mean similarity without threshold (when allowed).
RetrievalResult fgmr_retrieve(const KnowledgeBase& store, const cacs::PatientFeatureTable& table,
                              const RetrievalConfig& config);

// Exhaustive reference implementation of the same selection rules.
RetrievalResult brute_force_retrieve(const KnowledgeBase& store, const cacs::PatientFeatureTable& table,
                                     const RetrievalConfig& config);

nlohmann::json to_json(const RetrievalResult& result);

}  // namespace laiml::kb
