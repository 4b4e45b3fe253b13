#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "laiml/haga.hpp"
#include "laiml/schema.hpp"

namespace laiml::eval {

class EvalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// ---- classification metrics ------------------------------------------------

// Positive class is unhealthy.
struct ConfusionMatrix {
    std::size_t tp = 0;
    std::size_t tn = 0;
    std::size_t fp = 0;
    std::size_t fn = 0;

    std::size_t total() const { return tp + tn + fp + fn; }
    static ConfusionMatrix from_labels(std::span<const Label> predicted, std::span<const Label> truth);

    friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

// Metrics with an empty denominator are left unset rather than reported as 0.
struct ClassMetrics {
    std::optional<double> precision;
    std::optional<double> recall;
    std::optional<double> f1;
    std::size_t support = 0;
};

struct MetricReport {
    ClassMetrics healthy;
    ClassMetrics unhealthy;
    std::optional<double> accuracy;
};

MetricReport class_metrics(const ConfusionMatrix& cm);

// ---- bias statistics -------------------------------------------------------

// Statistics of |a_i - b_i|. `stddev` is the population standard deviation.
struct BiasStats {
    std::size_t n = 0;
    double mean = 0.0;
    double stddev = 0.0;
    double median = 0.0;
    double min = 0.0;
    double max = 0.0;

    friend bool operator==(const BiasStats&, const BiasStats&) = default;
};

BiasStats bias_stats(std::span<const double> teacher_probs, std::span<const double> infer_probs);

// ---- concordance -------------------------------------------------------------

enum class Agreement { both_correct, both_wrong, a_only_correct, b_only_correct };
std::string_view to_string(Agreement agreement);

struct ConcordanceBreakdown {
    std::array<std::size_t, 4> counts{};  // indexed by Agreement
    std::vector<Agreement> per_sample;

    std::size_t n() const { return counts[0] + counts[1] + counts[2] + counts[3]; }
    std::size_t count(Agreement a) const { return counts[static_cast<std::size_t>(a)]; }
    // Undefined (unset) for an empty comparison.
    std::optional<double> fraction(Agreement a) const;

    static ConcordanceBreakdown from_counts(std::size_t both_correct, std::size_t both_wrong,
                                            std::size_t a_only_correct, std::size_t b_only_correct);
};

ConcordanceBreakdown concordance(std::span<const Label> preds_a, std::span<const Label> preds_b,
                                 std::span<const Label> truth);

nlohmann::json to_json(const ConfusionMatrix& cm);
nlohmann::json to_json(const MetricReport& report);
nlohmann::json to_json(const BiasStats& stats);
nlohmann::json to_json(const ConcordanceBreakdown& breakdown);

// ---- synthetic additive teacher -------------------------------------------

// One feature of the synthetic teacher. Continuous features take values in the
// HAGA intervals with midpoints grid.step * (first_index + k); integer features
// take the integer values first_index + k. The effect is effects[k] throughout
// the k-th interval (or at the k-th integer), and each interval is equally
// likely, so E[f_i] is the plain mean of `effects`.
struct SyntheticFeature {
    FeatureSpec spec;
    int first_index = 0;
    std::vector<double> effects;

    double expected_effect() const;
    friend bool operator==(const SyntheticFeature&, const SyntheticFeature&) = default;
};

struct SyntheticTeacherConfig {
    std::uint64_t seed = 1;
    double intercept = 0.0;
    haga::Grid grid;
    std::vector<SyntheticFeature> features;

    void validate() const;
    FeatureSchema schema() const;

    nlohmann::json to_json() const;
    static SyntheticTeacherConfig from_json(const nlohmann::json& doc);

    friend bool operator==(const SyntheticTeacherConfig&, const SyntheticTeacherConfig&) = default;
};

// Fifteen features (every fifth one integer-valued) with centred effects of
// magnitude at most 2 * amplitude.
SyntheticTeacherConfig default_synthetic_config(std::uint64_t seed = 1, std::size_t feature_count = 15,
                                                double amplitude = 0.15);

// f_i(value); throws EvalError when the value lies outside the feature's support.
double synthetic_effect(const SyntheticFeature& feature, double value, const haga::Grid& grid);

// Rows carry shap_i = f_i(x_i) - E[f_i], teacher_prob = sigmoid(base + sum shap),
// and label = teacher_prob >= 0.5. Deterministic in config.seed.
FeatureShapMatrix synth_generate(const SyntheticTeacherConfig& config, std::size_t n);

// ---- exact Shapley values --------------------------------------------------

constexpr std::size_t kMaxShapleyFeatures = 8;

using ModelFn = std::function<double(std::span<const double>)>;

// Exact Shapley values by enumerating all coalitions. A coalition's value is the
// model output averaged over `background` rows with absent features taken from
// the background row.
std::vector<double> shapley_brute(const ModelFn& model, std::span<const double> x,
                                  const std::vector<std::vector<double>>& background);

// Absent features replaced by `means`.
std::vector<double> shapley_brute(const ModelFn& model, std::span<const double> x, std::span<const double> means);

}  // namespace laiml::eval
