#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace laiml {

// Raised for malformed schema, matrix and case files. The message names the
// offending file, row and column wherever one exists.
class IngestError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class FeatureKind { continuous, integer };

std::string_view to_string(FeatureKind kind);
FeatureKind feature_kind_from_string(std::string_view text);

struct FeatureSpec {
    std::string name;
    FeatureKind kind = FeatureKind::continuous;
    std::string description;
};

constexpr std::size_t kGroupCount = 3;

using FeatureGroups = std::array<std::vector<std::size_t>, kGroupCount>;

class FeatureSchema {
public:
    FeatureSchema() = default;

    // Validates names and the partition. An empty `groups` requests the
    // contiguous-thirds default.
    FeatureSchema(std::vector<FeatureSpec> features, std::optional<FeatureGroups> groups = std::nullopt);

    const std::vector<FeatureSpec>& features() const { return features_; }
    const FeatureSpec& feature(std::size_t index) const { return features_.at(index); }
    std::size_t size() const { return features_.size(); }
    const FeatureGroups& groups() const { return groups_; }
    std::optional<std::size_t> index_of(std::string_view name) const;

    // Stable fingerprint over names, kinds and grouping (not descriptions).
    std::string hash() const;

    nlohmann::json to_json() const;
    static FeatureSchema from_json(const nlohmann::json& doc);

    friend bool operator==(const FeatureSchema& a, const FeatureSchema& b);

private:
    std::vector<FeatureSpec> features_;
    FeatureGroups groups_;
};

enum class Label { healthy = 0, unhealthy = 1 };

struct SampleRecord {
    std::string sample_id;
    std::vector<double> values;
    std::optional<std::vector<double>> shap;
    std::optional<double> teacher_prob;
    std::optional<Label> label;
};

struct FeatureShapMatrix {
    FeatureSchema schema;
    double base_value = 0.0;
    std::vector<SampleRecord> rows;
};

bool operator==(const FeatureSpec& a, const FeatureSpec& b);
bool operator==(const SampleRecord& a, const SampleRecord& b);
bool operator==(const FeatureShapMatrix& a, const FeatureShapMatrix& b);

FeatureSchema load_schema(const std::filesystem::path& path);
void write_schema(const std::filesystem::path& path, const FeatureSchema& schema);

FeatureShapMatrix parse_matrix(std::string_view contents, const FeatureSchema& schema,
                               std::string_view source = "<matrix>");
FeatureShapMatrix load_matrix(const std::filesystem::path& path, const FeatureSchema& schema);
std::string render_matrix(const FeatureShapMatrix& matrix);
void write_matrix(const std::filesystem::path& path, const FeatureShapMatrix& matrix);

// Case files hold raw values only. `load_case` insists on exactly one row.
std::vector<SampleRecord> parse_cases(std::string_view contents, const FeatureSchema& schema,
                                      std::string_view source = "<case>");
std::vector<SampleRecord> load_cases(const std::filesystem::path& path, const FeatureSchema& schema);
SampleRecord load_case(const std::filesystem::path& path, const FeatureSchema& schema);
std::string render_cases(const FeatureSchema& schema, const std::vector<SampleRecord>& cases);

// Shared record checks used by every loader.
void validate_values(const FeatureSchema& schema, const SampleRecord& record, std::string_view where);

}  // namespace laiml
