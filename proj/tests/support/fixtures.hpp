#pragma once

#include <unistd.h>

#include <atomic>
#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "laiml/cacs.hpp"
#include "laiml/knowledge_base.hpp"
#include "laiml/schema.hpp"

namespace laiml::testing {

// Scratch directory removed when the object goes out of scope.
class TempDir {
public:
    TempDir() {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("laiml-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

// Schema of `n` continuous features named f0..f(n-1); n must be a multiple of 3.
inline FeatureSchema continuous_schema(std::size_t n) {
    std::vector<FeatureSpec> specs;
    for (std::size_t i = 0; i < n; ++i) {
        specs.push_back({"f" + std::to_string(i), FeatureKind::continuous, "feature " + std::to_string(i)});
    }
    return FeatureSchema(std::move(specs));
}

// Table whose contribution probabilities are given directly.
inline cacs::PatientFeatureTable table_with_contributions(const std::vector<double>& contributions) {
    cacs::PatientFeatureTable table;
    for (std::size_t i = 0; i < contributions.size(); ++i) {
        table.entries.push_back({static_cast<double>(i), static_cast<double>(i), 0.0, contributions[i]});
    }
    return table;
}

// Table with given raw values and zero contributions (for retrieval tests).
inline cacs::PatientFeatureTable table_with_values(const std::vector<double>& values) {
    cacs::PatientFeatureTable table;
    for (const double v : values) {
        table.entries.push_back({v, v, 0.0, 0.0});
    }
    return table;
}

// Maps each group's first raw value to a unit vector at that angle, so the
// cosine between query and entry is cos(angle difference).
class AngleEmbedder final : public kb::Embedder {
public:
    std::string id() const override { return "test-angle"; }
    bool deterministic() const override { return true; }
    std::size_t dimension(std::size_t) const override { return 2; }
    nlohmann::json params() const override { return nlohmann::json::object(); }
    std::vector<double> embed(const cacs::PatientFeatureTable& table, std::span<const std::size_t> group) const override {
        const double angle = table.entries.at(group[0]).raw_value;
        return {std::cos(angle), std::sin(angle)};
    }
};

// Uniform double in [lo, hi) from an explicit engine.
inline double uniform(std::mt19937_64& rng, double lo, double hi) {
    return lo + (hi - lo) * static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace laiml::testing
