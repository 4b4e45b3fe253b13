#include "laiml/cacs.hpp"

#include <cmath>

#include "laiml/text_io.hpp"

namespace laiml::cacs {
namespace {

constexpr std::string_view kAcpbFormat = "laiml-acpb";
constexpr int kAcpbVersion = 1;

double require_number(const nlohmann::json& obj, const char* key) {
    if (!obj.contains(key) || !obj[key].is_number()) {
        throw AcpbError(std::string("ACPB field '") + key + "' missing or not numeric");
    }
    return obj[key].get<double>();
}

}  // namespace

double sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double contribution_probability(double base_value, double mean_shap) {
    // s(a) - s(b) = s(a) * s(-b) * (1 - exp(b - a)), with a = b + mean_shap.
    return -sigmoid(base_value + mean_shap) * sigmoid(-base_value) * std::expm1(-mean_shap);
}

Acpb build_acpb(const haga::ShapKnowledgeBase& skb, double base_value, const FeatureSchema& schema) {
    if (skb.features.size() != schema.size()) {
        throw AcpbError("knowledge base covers " + std::to_string(skb.features.size()) + " features, schema has " +
                        std::to_string(schema.size()));
    }
    Acpb acpb;
    acpb.schema = schema;
    acpb.base_value = base_value;
    acpb.grid = skb.grid;
    acpb.features.reserve(skb.features.size());
    for (const auto& stats : skb.features) {
        std::vector<AcpbEntry> entries;
        entries.reserve(stats.size());
        for (const auto& s : stats) {
            entries.push_back({s.midpoint, s.mean_shap, contribution_probability(base_value, s.mean_shap), s.count});
        }
        acpb.features.push_back(std::move(entries));
    }
    return acpb;
}

Acpb extract(const FeatureShapMatrix& matrix, const haga::Grid& grid) {
    if (matrix.rows.empty()) {
        throw AcpbError("cannot extract a knowledge base from an empty matrix");
    }
    return build_acpb(haga::build_knowledge_base(matrix, grid), matrix.base_value, matrix.schema);
}

std::vector<double> PatientFeatureTable::raw_values() const {
    std::vector<double> out;
    out.reserve(entries.size());
    for (const auto& e : entries) {
        out.push_back(e.raw_value);
    }
    return out;
}

std::vector<double> PatientFeatureTable::contributions() const {
    std::vector<double> out;
    out.reserve(entries.size());
    for (const auto& e : entries) {
        out.push_back(e.contribution_prob);
    }
    return out;
}

PatientFeatureTable match_record(const SampleRecord& record, const Acpb& acpb) {
    if (record.values.size() != acpb.features.size()) {
        throw AcpbError("record '" + record.sample_id + "' has " + std::to_string(record.values.size()) +
                        " values, ACPB has " + std::to_string(acpb.features.size()) + " features");
    }
    PatientFeatureTable table;
    table.entries.reserve(record.values.size());
    std::vector<double> midpoints;
    for (std::size_t j = 0; j < acpb.features.size(); ++j) {
        const auto& entries = acpb.features[j];
        if (entries.empty()) {
            throw AcpbError("feature '" + acpb.schema.feature(j).name + "' has no stored intervals");
        }
        midpoints.clear();
        for (const auto& e : entries) {
            midpoints.push_back(e.midpoint);
        }
        const auto& hit = entries[haga::nearest_index(record.values[j], midpoints)];
        table.entries.push_back({record.values[j], hit.midpoint, hit.mean_shap, hit.contribution_prob});
    }
    return table;
}

nlohmann::json to_json(const PatientFeatureTable& table) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& e : table.entries) {
        rows.push_back({{"raw_value", e.raw_value},
                        {"midpoint", e.matched_midpoint},
                        {"mean_shap", e.mean_shap},
                        {"contribution_prob", e.contribution_prob}});
    }
    return rows;
}

PatientFeatureTable table_from_json(const nlohmann::json& doc) {
    if (!doc.is_array()) {
        throw AcpbError("feature table must be an array");
    }
    PatientFeatureTable table;
    for (const auto& row : doc) {
        table.entries.push_back({require_number(row, "raw_value"), require_number(row, "midpoint"),
                                 require_number(row, "mean_shap"), require_number(row, "contribution_prob")});
    }
    return table;
}

nlohmann::json to_json(const Acpb& acpb) {
    nlohmann::json doc;
    doc["format"] = kAcpbFormat;
    doc["version"] = kAcpbVersion;
    doc["base_value"] = acpb.base_value;
    doc["grid"] = {{"step", acpb.grid.step}, {"half_width", acpb.grid.half_width}};
    doc["schema"] = acpb.schema.to_json();
    doc["features"] = nlohmann::json::array();
    for (std::size_t j = 0; j < acpb.features.size(); ++j) {
        nlohmann::json entries = nlohmann::json::array();
        for (const auto& e : acpb.features[j]) {
            entries.push_back({{"midpoint", e.midpoint},
                               {"mean_shap", e.mean_shap},
                               {"contribution_prob", e.contribution_prob},
                               {"count", e.count}});
        }
        doc["features"].push_back({{"name", acpb.schema.feature(j).name}, {"entries", std::move(entries)}});
    }
    return doc;
}

Acpb acpb_from_json(const nlohmann::json& doc) {
    if (!doc.is_object() || doc.value("format", std::string()) != kAcpbFormat) {
        throw AcpbError("not an ACPB document");
    }
    if (doc.value("version", 0) != kAcpbVersion) {
        throw AcpbError("unsupported ACPB version " + doc.value("version", nlohmann::json()).dump());
    }
    Acpb acpb;
    acpb.schema = FeatureSchema::from_json(doc.at("schema"));
    acpb.base_value = require_number(doc, "base_value");
    acpb.grid.step = require_number(doc.at("grid"), "step");
    acpb.grid.half_width = require_number(doc.at("grid"), "half_width");
    acpb.grid.validate();

    const auto& features = doc.at("features");
    if (!features.is_array() || features.size() != acpb.schema.size()) {
        throw AcpbError("ACPB feature list does not match its schema");
    }
    for (std::size_t j = 0; j < features.size(); ++j) {
        if (features[j].value("name", std::string()) != acpb.schema.feature(j).name) {
            throw AcpbError("ACPB feature " + std::to_string(j) + " is out of schema order");
        }
        std::vector<AcpbEntry> entries;
        double previous = -INFINITY;
        for (const auto& e : features[j].at("entries")) {
            AcpbEntry entry{require_number(e, "midpoint"), require_number(e, "mean_shap"),
                            require_number(e, "contribution_prob"), e.at("count").get<std::size_t>()};
            if (!(entry.midpoint > previous) || entry.count == 0) {
                throw AcpbError("ACPB entries for '" + acpb.schema.feature(j).name +
                                "' must have increasing midpoints and positive counts");
            }
            previous = entry.midpoint;
            entries.push_back(entry);
        }
        acpb.features.push_back(std::move(entries));
    }
    return acpb;
}

void write_acpb(const std::filesystem::path& path, const Acpb& acpb) {
    io::write_file(path, to_json(acpb).dump(2) + "\n");
}

Acpb load_acpb(const std::filesystem::path& path) {
    try {
        return acpb_from_json(nlohmann::json::parse(io::read_file(path)));
    } catch (const nlohmann::json::exception& ex) {
        throw AcpbError(path.string() + ": " + ex.what());
    } catch (const IngestError& ex) {
        throw AcpbError(path.string() + ": " + ex.what());
    }
}

}  // namespace laiml::cacs
