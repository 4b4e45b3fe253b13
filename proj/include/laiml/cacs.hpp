#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "laiml/haga.hpp"
#include "laiml/schema.hpp"

namespace laiml::cacs {

class AcpbError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Logistic function, evaluated without overflow for large |x|.
double sigmoid(double x);

// sigma(base + mean_shap) - sigma(base). Computed in a product form so the
// sign always matches mean_shap and tiny attributions do not cancel to zero.
double contribution_probability(double base_value, double mean_shap);

struct AcpbEntry {
    double midpoint = 0.0;
    double mean_shap = 0.0;
    double contribution_prob = 0.0;
    std::size_t count = 0;

    friend bool operator==(const AcpbEntry&, const AcpbEntry&) = default;
};

// Average contribution probability base. Carries the schema it was built
// from so downstream stages can load cases without a separate schema file.
struct Acpb {
    FeatureSchema schema;
    double base_value = 0.0;
    haga::Grid grid;
    std::vector<std::vector<AcpbEntry>> features;

    friend bool operator==(const Acpb&, const Acpb&) = default;
};

Acpb build_acpb(const haga::ShapKnowledgeBase& skb, double base_value, const FeatureSchema& schema);

// Convenience for the extract stage: HAGA followed by CACS.
Acpb extract(const FeatureShapMatrix& matrix, const haga::Grid& grid = {});

struct FeatureMatch {
    double raw_value = 0.0;
    double matched_midpoint = 0.0;
    double mean_shap = 0.0;
    double contribution_prob = 0.0;

    friend bool operator==(const FeatureMatch&, const FeatureMatch&) = default;
};

// Patient feature table: one entry per schema feature, in schema order.
struct PatientFeatureTable {
    std::vector<FeatureMatch> entries;

    std::size_t size() const { return entries.size(); }
    std::vector<double> raw_values() const;
    std::vector<double> contributions() const;

    friend bool operator==(const PatientFeatureTable&, const PatientFeatureTable&) = default;
};

PatientFeatureTable match_record(const SampleRecord& record, const Acpb& acpb);

nlohmann::json to_json(const PatientFeatureTable& table);
PatientFeatureTable table_from_json(const nlohmann::json& doc);

nlohmann::json to_json(const Acpb& acpb);
Acpb acpb_from_json(const nlohmann::json& doc);
void write_acpb(const std::filesystem::path& path, const Acpb& acpb);
Acpb load_acpb(const std::filesystem::path& path);

}  // namespace laiml::cacs
