#include "laiml/schema.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "laiml/text_io.hpp"

namespace laiml {
namespace {

constexpr std::string_view kBaseValueKey = "base_value=";

bool valid_identifier(std::string_view name) {
    if (name.empty()) {
        return false;
    }
    return std::all_of(name.begin(), name.end(), [](char c) {
        return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_' ||
               c == '.' || c == '-';
    });
}

bool valid_sample_id(std::string_view id) {
    return !id.empty() && id.find_first_of(",\n\r#") == std::string_view::npos && io::trim(id) == id;
}

std::string where_row(std::string_view source, std::size_t line, std::string_view sample_id) {
    std::ostringstream ss;
    ss << source << ": line " << line;
    if (!sample_id.empty()) {
        ss << " (sample '" << sample_id << "')";
    }
    return ss.str();
}

// Maps header names to column positions and rejects unknown or repeated columns.
class HeaderIndex {
public:
    HeaderIndex(const std::vector<std::string>& header, std::string_view source) : source_(source) {
        for (std::size_t i = 0; i < header.size(); ++i) {
            if (!columns_.emplace(header[i], i).second) {
                throw IngestError(std::string(source) + ": duplicate column '" + header[i] + "'");
            }
        }
    }

    std::size_t require(const std::string& name) {
        const auto it = columns_.find(name);
        if (it == columns_.end()) {
            throw IngestError(std::string(source_) + ": missing column '" + name + "'");
        }
        used_.insert(name);
        return it->second;
    }

    std::optional<std::size_t> optional(const std::string& name) {
        const auto it = columns_.find(name);
        if (it == columns_.end()) {
            return std::nullopt;
        }
        used_.insert(name);
        return it->second;
    }

    void reject_unused() const {
        for (const auto& [name, pos] : columns_) {
            if (!used_.contains(name)) {
                throw IngestError(std::string(source_) + ": unexpected column '" + name + "'");
            }
        }
    }

    std::size_t width() const { return columns_.size(); }

private:
    std::string_view source_;
    std::unordered_map<std::string, std::size_t> columns_;
    std::unordered_set<std::string> used_;
};

double parse_cell(const std::vector<std::string>& row, std::size_t column, const std::string& column_name,
                  const std::string& where) {
    const auto value = io::parse_double(row[column]);
    if (!value) {
        throw IngestError(where + ": column '" + column_name + "' is not a finite number ('" + row[column] + "')");
    }
    return *value;
}

void check_arity(const std::vector<std::string>& row, std::size_t width, const std::string& where) {
    if (row.size() != width) {
        throw IngestError(where + ": expected " + std::to_string(width) + " fields, found " +
                          std::to_string(row.size()));
    }
}

}  // namespace

std::string_view to_string(FeatureKind kind) {
    return kind == FeatureKind::integer ? "integer" : "continuous";
}

FeatureKind feature_kind_from_string(std::string_view text) {
    if (text == "continuous") {
        return FeatureKind::continuous;
    }
    if (text == "integer") {
        return FeatureKind::integer;
    }
    throw IngestError("unknown feature kind '" + std::string(text) + "' (expected continuous|integer)");
}

FeatureSchema::FeatureSchema(std::vector<FeatureSpec> features, std::optional<FeatureGroups> groups)
    : features_(std::move(features)) {
    if (features_.empty()) {
        throw IngestError("schema declares no features");
    }
    std::unordered_set<std::string> seen;
    for (const auto& spec : features_) {
        if (!valid_identifier(spec.name)) {
            throw IngestError("invalid feature name '" + spec.name + "'");
        }
        if (!seen.insert(spec.name).second) {
            throw IngestError("duplicate feature name '" + spec.name + "'");
        }
    }

    const std::size_t n = features_.size();
    if (!groups) {
        if (n % kGroupCount != 0) {
            throw IngestError(std::to_string(n) + " features cannot be split into " + std::to_string(kGroupCount) +
                              " equal groups");
        }
        const std::size_t per_group = n / kGroupCount;
        for (std::size_t g = 0; g < kGroupCount; ++g) {
            for (std::size_t i = 0; i < per_group; ++i) {
                groups_[g].push_back(g * per_group + i);
            }
        }
        return;
    }

    std::vector<int> owner(n, -1);
    const std::size_t per_group = (*groups)[0].size();
    for (std::size_t g = 0; g < kGroupCount; ++g) {
        const auto& group = (*groups)[g];
        if (group.size() != per_group || group.empty()) {
            throw IngestError("feature groups must be non-empty and of equal size");
        }
        for (const auto index : group) {
            if (index >= n) {
                throw IngestError("feature group references index " + std::to_string(index) + " out of range");
            }
            if (owner[index] != -1) {
                throw IngestError("feature '" + features_[index].name + "' appears in more than one group");
            }
            owner[index] = static_cast<int>(g);
        }
    }
    if (std::find(owner.begin(), owner.end(), -1) != owner.end()) {
        throw IngestError("feature groups do not cover every feature");
    }
    groups_ = *groups;
}

std::optional<std::size_t> FeatureSchema::index_of(std::string_view name) const {
    for (std::size_t i = 0; i < features_.size(); ++i) {
        if (features_[i].name == name) {
            return i;
        }
    }
    return std::nullopt;
}

std::string FeatureSchema::hash() const {
    std::string canonical;
    for (const auto& spec : features_) {
        canonical += spec.name;
        canonical += ':';
        canonical += to_string(spec.kind);
        canonical += ';';
    }
    for (const auto& group : groups_) {
        canonical += '|';
        for (const auto index : group) {
            canonical += std::to_string(index);
            canonical += ',';
        }
    }
    return io::hex32(io::crc32(canonical));
}

nlohmann::json FeatureSchema::to_json() const {
    nlohmann::json doc;
    doc["features"] = nlohmann::json::array();
    for (const auto& spec : features_) {
        doc["features"].push_back(
            {{"name", spec.name}, {"kind", std::string(to_string(spec.kind))}, {"description", spec.description}});
    }
    doc["groups"] = nlohmann::json::array();
    for (const auto& group : groups_) {
        nlohmann::json names = nlohmann::json::array();
        for (const auto index : group) {
            names.push_back(features_[index].name);
        }
        doc["groups"].push_back(std::move(names));
    }
    return doc;
}

FeatureSchema FeatureSchema::from_json(const nlohmann::json& doc) {
    if (!doc.is_object() || !doc.contains("features") || !doc["features"].is_array()) {
        throw IngestError("schema must be an object with a 'features' array");
    }
    std::vector<FeatureSpec> features;
    for (const auto& item : doc["features"]) {
        if (!item.is_object() || !item.contains("name") || !item["name"].is_string()) {
            throw IngestError("every feature needs a string 'name'");
        }
        FeatureSpec spec;
        spec.name = item["name"].get<std::string>();
        spec.kind = feature_kind_from_string(item.value("kind", std::string("continuous")));
        spec.description = item.value("description", std::string());
        features.push_back(std::move(spec));
    }

    std::optional<FeatureGroups> groups;
    if (doc.contains("groups") && !doc["groups"].is_null()) {
        const auto& raw = doc["groups"];
        if (!raw.is_array() || raw.size() != kGroupCount) {
            throw IngestError("'groups' must hold exactly " + std::to_string(kGroupCount) + " lists");
        }
        FeatureGroups parsed;
        for (std::size_t g = 0; g < kGroupCount; ++g) {
            if (!raw[g].is_array()) {
                throw IngestError("each group must be a list of feature names");
            }
            for (const auto& name : raw[g]) {
                if (!name.is_string()) {
                    throw IngestError("group entries must be feature names");
                }
                const auto wanted = name.get<std::string>();
                const auto it = std::find_if(features.begin(), features.end(),
                                             [&](const FeatureSpec& s) { return s.name == wanted; });
                if (it == features.end()) {
                    throw IngestError("group references unknown feature '" + wanted + "'");
                }
                parsed[g].push_back(static_cast<std::size_t>(it - features.begin()));
            }
        }
        groups = std::move(parsed);
    }
    return FeatureSchema(std::move(features), std::move(groups));
}

bool operator==(const FeatureSchema& a, const FeatureSchema& b) {
    return a.features_ == b.features_ && a.groups_ == b.groups_;
}

bool operator==(const FeatureSpec& a, const FeatureSpec& b) {
    return a.name == b.name && a.kind == b.kind && a.description == b.description;
}

bool operator==(const SampleRecord& a, const SampleRecord& b) {
    return a.sample_id == b.sample_id && a.values == b.values && a.shap == b.shap &&
           a.teacher_prob == b.teacher_prob && a.label == b.label;
}

bool operator==(const FeatureShapMatrix& a, const FeatureShapMatrix& b) {
    return a.schema == b.schema && a.base_value == b.base_value && a.rows == b.rows;
}

FeatureSchema load_schema(const std::filesystem::path& path) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(io::read_file(path));
    } catch (const nlohmann::json::exception& ex) {
        throw IngestError(path.string() + ": schema parse error: " + ex.what());
    } catch (const std::runtime_error& ex) {
        throw IngestError(ex.what());
    }
    try {
        return FeatureSchema::from_json(doc);
    } catch (const IngestError& ex) {
        throw IngestError(path.string() + ": " + ex.what());
    }
}

void write_schema(const std::filesystem::path& path, const FeatureSchema& schema) {
    io::write_file(path, schema.to_json().dump(2) + "\n");
}

void validate_values(const FeatureSchema& schema, const SampleRecord& record, std::string_view where) {
    if (record.values.size() != schema.size()) {
        throw IngestError(std::string(where) + ": expected " + std::to_string(schema.size()) + " values, found " +
                          std::to_string(record.values.size()));
    }
    for (std::size_t j = 0; j < schema.size(); ++j) {
        const double v = record.values[j];
        const auto& spec = schema.feature(j);
        if (!std::isfinite(v)) {
            throw IngestError(std::string(where) + ": feature '" + spec.name + "' is not finite");
        }
        if (spec.kind == FeatureKind::integer && std::floor(v) != v) {
            throw IngestError(std::string(where) + ": integer feature '" + spec.name +
                              "' holds fractional value " + io::format_double(v));
        }
    }
    if (record.shap) {
        if (record.shap->size() != schema.size()) {
            throw IngestError(std::string(where) + ": attribution count does not match schema");
        }
        for (std::size_t j = 0; j < schema.size(); ++j) {
            if (!std::isfinite((*record.shap)[j])) {
                throw IngestError(std::string(where) + ": attribution for '" + schema.feature(j).name +
                                  "' is not finite");
            }
        }
    }
    if (record.teacher_prob) {
        const double p = *record.teacher_prob;
        if (!(p > 0.0 && p < 1.0)) {
            throw IngestError(std::string(where) + ": teacher_prob " + io::format_double(p) +
                              " outside the open interval (0, 1)");
        }
    }
}

FeatureShapMatrix parse_matrix(std::string_view contents, const FeatureSchema& schema, std::string_view source) {
    const auto table = io::parse_delimited(contents);
    FeatureShapMatrix matrix;
    matrix.schema = schema;

    std::optional<double> base_value;
    for (const auto& comment : table.comments) {
        const auto body = io::trim(std::string_view(comment).substr(1));
        if (body.starts_with(kBaseValueKey)) {
            base_value = io::parse_double(body.substr(kBaseValueKey.size()));
            if (!base_value) {
                throw IngestError(std::string(source) + ": base_value is not a finite number");
            }
        }
    }
    if (!base_value) {
        throw IngestError(std::string(source) + ": missing '# base_value=' metadata line");
    }
    matrix.base_value = *base_value;

    if (table.header.empty()) {
        throw IngestError(std::string(source) + ": missing header row");
    }
    HeaderIndex index(table.header, source);
    const auto id_col = index.require("sample_id");
    std::vector<std::size_t> value_cols;
    std::vector<std::size_t> shap_cols;
    for (const auto& spec : schema.features()) {
        value_cols.push_back(index.require("v_" + spec.name));
    }
    for (const auto& spec : schema.features()) {
        shap_cols.push_back(index.require("s_" + spec.name));
    }
    const auto prob_col = index.require("teacher_prob");
    const auto label_col = index.optional("label");
    index.reject_unused();

    std::unordered_set<std::string> ids;
    matrix.rows.reserve(table.rows.size());
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& row = table.rows[r];
        const auto line = table.line_numbers[r];
        check_arity(row, index.width(), where_row(source, line, id_col < row.size() ? row[id_col] : ""));
        SampleRecord record;
        record.sample_id = row[id_col];
        const auto where = where_row(source, line, record.sample_id);
        if (!valid_sample_id(record.sample_id)) {
            throw IngestError(where + ": invalid sample_id");
        }
        if (!ids.insert(record.sample_id).second) {
            throw IngestError(where + ": duplicate sample_id");
        }
        std::vector<double> shap;
        for (std::size_t j = 0; j < schema.size(); ++j) {
            record.values.push_back(parse_cell(row, value_cols[j], "v_" + schema.feature(j).name, where));
            shap.push_back(parse_cell(row, shap_cols[j], "s_" + schema.feature(j).name, where));
        }
        record.shap = std::move(shap);
        record.teacher_prob = parse_cell(row, prob_col, "teacher_prob", where);
        if (label_col && !row[*label_col].empty()) {
            const auto& text = row[*label_col];
            if (text == "0") {
                record.label = Label::healthy;
            } else if (text == "1") {
                record.label = Label::unhealthy;
            } else {
                throw IngestError(where + ": label must be 0 or 1, found '" + text + "'");
            }
        }
        validate_values(schema, record, where);
        matrix.rows.push_back(std::move(record));
    }
    return matrix;
}

FeatureShapMatrix load_matrix(const std::filesystem::path& path, const FeatureSchema& schema) {
    std::string contents;
    try {
        contents = io::read_file(path);
    } catch (const std::runtime_error& ex) {
        throw IngestError(ex.what());
    }
    return parse_matrix(contents, schema, path.string());
}

std::string render_matrix(const FeatureShapMatrix& matrix) {
    const auto& schema = matrix.schema;
    std::string out;
    out += "# base_value=" + io::format_double(matrix.base_value) + "\n";
    out += "sample_id";
    for (const auto& spec : schema.features()) {
        out += ",v_" + spec.name;
    }
    for (const auto& spec : schema.features()) {
        out += ",s_" + spec.name;
    }
    out += ",teacher_prob,label\n";
    for (const auto& row : matrix.rows) {
        if (!valid_sample_id(row.sample_id)) {
            throw IngestError("cannot serialize sample_id '" + row.sample_id + "'");
        }
        if (!row.shap || !row.teacher_prob) {
            throw IngestError("matrix row '" + row.sample_id + "' lacks attributions or teacher_prob");
        }
        out += row.sample_id;
        for (const double v : row.values) {
            out += ',' + io::format_double(v);
        }
        for (const double s : *row.shap) {
            out += ',' + io::format_double(s);
        }
        out += ',' + io::format_double(*row.teacher_prob) + ',';
        if (row.label) {
            out += *row.label == Label::unhealthy ? '1' : '0';
        }
        out += '\n';
    }
    return out;
}

void write_matrix(const std::filesystem::path& path, const FeatureShapMatrix& matrix) {
    io::write_file(path, render_matrix(matrix));
}

std::vector<SampleRecord> parse_cases(std::string_view contents, const FeatureSchema& schema,
                                      std::string_view source) {
    const auto table = io::parse_delimited(contents);
    if (table.header.empty()) {
        throw IngestError(std::string(source) + ": missing header row");
    }
    HeaderIndex index(table.header, source);
    const auto id_col = index.require("sample_id");
    std::vector<std::size_t> value_cols;
    for (const auto& spec : schema.features()) {
        value_cols.push_back(index.require("v_" + spec.name));
    }
    index.reject_unused();

    std::vector<SampleRecord> cases;
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& row = table.rows[r];
        check_arity(row, index.width(),
                    where_row(source, table.line_numbers[r], id_col < row.size() ? row[id_col] : ""));
        SampleRecord record;
        record.sample_id = row[id_col];
        const auto where = where_row(source, table.line_numbers[r], record.sample_id);
        if (!valid_sample_id(record.sample_id)) {
            throw IngestError(where + ": invalid sample_id");
        }
        for (std::size_t j = 0; j < schema.size(); ++j) {
            record.values.push_back(parse_cell(row, value_cols[j], "v_" + schema.feature(j).name, where));
        }
        validate_values(schema, record, where);
        cases.push_back(std::move(record));
    }
    return cases;
}

std::vector<SampleRecord> load_cases(const std::filesystem::path& path, const FeatureSchema& schema) {
    std::string contents;
    try {
        contents = io::read_file(path);
    } catch (const std::runtime_error& ex) {
        throw IngestError(ex.what());
    }
    return parse_cases(contents, schema, path.string());
}

SampleRecord load_case(const std::filesystem::path& path, const FeatureSchema& schema) {
    auto cases = load_cases(path, schema);
    if (cases.size() != 1) {
        throw IngestError(path.string() + ": expected exactly one case row, found " + std::to_string(cases.size()));
    }
    return std::move(cases.front());
}

std::string render_cases(const FeatureSchema& schema, const std::vector<SampleRecord>& cases) {
    std::string out = "sample_id";
    for (const auto& spec : schema.features()) {
        out += ",v_" + spec.name;
    }
    out += '\n';
    for (const auto& record : cases) {
        out += record.sample_id;
        for (const double v : record.values) {
            out += ',' + io::format_double(v);
        }
        out += '\n';
    }
    return out;
}

}  // namespace laiml
