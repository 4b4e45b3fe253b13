#include "laiml/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "laiml/cacs.hpp"

namespace laiml::eval {
namespace {

// Explicit mappings keep generated data identical across standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    std::size_t index(std::size_t n) {
        const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                    std::numeric_limits<std::uint64_t>::max() % n;
        std::uint64_t draw = engine_();
        while (draw >= limit) {
            draw = engine_();
        }
        return static_cast<std::size_t>(draw % n);
    }

private:
    std::mt19937_64 engine_;
};

std::string zero_padded(std::size_t value, std::size_t width) {
    auto text = std::to_string(value);
    return text.size() < width ? std::string(width - text.size(), '0') + text : text;
}

void require_same_length(std::size_t a, std::size_t b, std::string_view what) {
    if (a != b) {
        throw EvalError(std::string(what) + ": length mismatch (" + std::to_string(a) + " vs " + std::to_string(b) +
                        ")");
    }
}

std::optional<double> ratio(std::size_t num, std::size_t den) {
    if (den == 0) {
        return std::nullopt;
    }
    return static_cast<double>(num) / static_cast<double>(den);
}

std::optional<double> harmonic(const std::optional<double>& p, const std::optional<double>& r) {
    if (!p || !r || *p + *r == 0.0) {
        return std::nullopt;
    }
    return 2.0 * *p * *r / (*p + *r);
}

nlohmann::json optional_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

nlohmann::json to_json(const ClassMetrics& m) {
    return {{"precision", optional_json(m.precision)},
            {"recall", optional_json(m.recall)},
            {"f1", optional_json(m.f1)},
            {"support", m.support}};
}

}  // namespace

// ---- classification metrics ------------------------------------------------

ConfusionMatrix ConfusionMatrix::from_labels(std::span<const Label> predicted, std::span<const Label> truth) {
    require_same_length(predicted.size(), truth.size(), "confusion matrix");
    ConfusionMatrix cm;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        const bool pred_pos = predicted[i] == Label::unhealthy;
        const bool true_pos = truth[i] == Label::unhealthy;
        if (pred_pos && true_pos) {
            ++cm.tp;
        } else if (!pred_pos && !true_pos) {
            ++cm.tn;
        } else if (pred_pos) {
            ++cm.fp;
        } else {
            ++cm.fn;
        }
    }
    return cm;
}

MetricReport class_metrics(const ConfusionMatrix& cm) {
    MetricReport report;
    report.unhealthy.precision = ratio(cm.tp, cm.tp + cm.fp);
    report.unhealthy.recall = ratio(cm.tp, cm.tp + cm.fn);
    report.unhealthy.f1 = harmonic(report.unhealthy.precision, report.unhealthy.recall);
    report.unhealthy.support = cm.tp + cm.fn;
    report.healthy.precision = ratio(cm.tn, cm.tn + cm.fn);
    report.healthy.recall = ratio(cm.tn, cm.tn + cm.fp);
    report.healthy.f1 = harmonic(report.healthy.precision, report.healthy.recall);
    report.healthy.support = cm.tn + cm.fp;
    report.accuracy = ratio(cm.tp + cm.tn, cm.total());
    return report;
}

// ---- bias statistics -------------------------------------------------------

BiasStats bias_stats(std::span<const double> teacher_probs, std::span<const double> infer_probs) {
    require_same_length(teacher_probs.size(), infer_probs.size(), "bias statistics");
    if (teacher_probs.empty()) {
        throw EvalError("bias statistics need at least one pair");
    }
    std::vector<double> d(teacher_probs.size());
    for (std::size_t i = 0; i < d.size(); ++i) {
        d[i] = std::abs(teacher_probs[i] - infer_probs[i]);
    }
    const auto n = static_cast<double>(d.size());
    BiasStats s;
    s.n = d.size();
    double sum = 0.0;
    for (const double v : d) {
        sum += v;
    }
    s.mean = sum / n;
    double sq = 0.0;
    for (const double v : d) {
        sq += (v - s.mean) * (v - s.mean);
    }
    s.stddev = std::sqrt(sq / n);
    std::sort(d.begin(), d.end());
    s.min = d.front();
    s.max = d.back();
    const std::size_t mid = d.size() / 2;
    s.median = d.size() % 2 == 1 ? d[mid] : (d[mid - 1] + d[mid]) / 2.0;
    return s;
}

// ---- concordance -------------------------------------------------------------

std::string_view to_string(Agreement agreement) {
    switch (agreement) {
        case Agreement::both_correct:
            return "both_correct";
        case Agreement::both_wrong:
            return "both_wrong";
        case Agreement::a_only_correct:
            return "a_only_correct";
        case Agreement::b_only_correct:
            return "b_only_correct";
    }
    return "unknown";
}

std::optional<double> ConcordanceBreakdown::fraction(Agreement a) const { return ratio(count(a), n()); }

ConcordanceBreakdown ConcordanceBreakdown::from_counts(std::size_t both_correct, std::size_t both_wrong,
                                                       std::size_t a_only_correct, std::size_t b_only_correct) {
    ConcordanceBreakdown b;
    b.counts = {both_correct, both_wrong, a_only_correct, b_only_correct};
    return b;
}

ConcordanceBreakdown concordance(std::span<const Label> preds_a, std::span<const Label> preds_b,
                                 std::span<const Label> truth) {
    require_same_length(preds_a.size(), truth.size(), "concordance");
    require_same_length(preds_b.size(), truth.size(), "concordance");
    ConcordanceBreakdown b;
    b.per_sample.reserve(truth.size());
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const bool a_ok = preds_a[i] == truth[i];
        const bool b_ok = preds_b[i] == truth[i];
        const Agreement category = a_ok && b_ok ? Agreement::both_correct
                                   : a_ok       ? Agreement::a_only_correct
                                   : b_ok       ? Agreement::b_only_correct
                                                : Agreement::both_wrong;
        ++b.counts[static_cast<std::size_t>(category)];
        b.per_sample.push_back(category);
    }
    return b;
}

nlohmann::json to_json(const ConfusionMatrix& cm) {
    return {{"tp", cm.tp}, {"tn", cm.tn}, {"fp", cm.fp}, {"fn", cm.fn}, {"total", cm.total()}};
}

nlohmann::json to_json(const MetricReport& report) {
    return {{"healthy", to_json(report.healthy)},
            {"unhealthy", to_json(report.unhealthy)},
            {"accuracy", optional_json(report.accuracy)}};
}

nlohmann::json to_json(const BiasStats& stats) {
    return {{"n", stats.n},         {"mean", stats.mean}, {"std", stats.stddev},
            {"median", stats.median}, {"min", stats.min},   {"max", stats.max}};
}

nlohmann::json to_json(const ConcordanceBreakdown& breakdown) {
    nlohmann::json doc;
    doc["n"] = breakdown.n();
    for (const auto a : {Agreement::both_correct, Agreement::both_wrong, Agreement::a_only_correct,
                         Agreement::b_only_correct}) {
        doc["counts"][std::string(to_string(a))] = breakdown.count(a);
        doc["fractions"][std::string(to_string(a))] = optional_json(breakdown.fraction(a));
    }
    return doc;
}

// ---- synthetic additive teacher -------------------------------------------

double SyntheticFeature::expected_effect() const {
    if (effects.empty()) {
        return 0.0;
    }
    double sum = 0.0;
    for (const double e : effects) {
        sum += e;
    }
    return sum / static_cast<double>(effects.size());
}

void SyntheticTeacherConfig::validate() const {
    try {
        grid.validate();
    } catch (const haga::HagaError& ex) {
        throw EvalError(std::string("synthetic config: ") + ex.what());
    }
    if (!std::isfinite(intercept)) {
        throw EvalError("synthetic config: intercept must be finite");
    }
    if (features.empty()) {
        throw EvalError("synthetic config: no features");
    }
    for (const auto& f : features) {
        if (f.effects.empty()) {
            throw EvalError("synthetic config: feature '" + f.spec.name + "' has no effect levels");
        }
        for (const double e : f.effects) {
            if (!std::isfinite(e)) {
                throw EvalError("synthetic config: feature '" + f.spec.name + "' has a non-finite effect");
            }
        }
    }
    try {
        (void)schema();
    } catch (const IngestError& ex) {
        throw EvalError(std::string("synthetic config: ") + ex.what());
    }
}

FeatureSchema SyntheticTeacherConfig::schema() const {
    std::vector<FeatureSpec> specs;
    specs.reserve(features.size());
    for (const auto& f : features) {
        specs.push_back(f.spec);
    }
    return FeatureSchema(std::move(specs));
}

nlohmann::json SyntheticTeacherConfig::to_json() const {
    nlohmann::json doc;
    doc["seed"] = seed;
    doc["intercept"] = intercept;
    doc["grid"] = {{"step", grid.step}, {"half_width", grid.half_width}};
    doc["features"] = nlohmann::json::array();
    for (const auto& f : features) {
        doc["features"].push_back({{"name", f.spec.name},
                                   {"kind", std::string(laiml::to_string(f.spec.kind))},
                                   {"first_index", f.first_index},
                                   {"effects", f.effects}});
    }
    return doc;
}

SyntheticTeacherConfig SyntheticTeacherConfig::from_json(const nlohmann::json& doc) {
    SyntheticTeacherConfig config;
    try {
        config.seed = doc.value("seed", config.seed);
        config.intercept = doc.value("intercept", config.intercept);
        if (doc.contains("grid")) {
            config.grid.step = doc["grid"].at("step").get<double>();
            config.grid.half_width = doc["grid"].value("half_width", config.grid.step / 2.0);
        }
        for (const auto& raw : doc.at("features")) {
            SyntheticFeature f;
            f.spec.name = raw.at("name").get<std::string>();
            f.spec.kind = feature_kind_from_string(raw.value("kind", std::string("continuous")));
            f.first_index = raw.at("first_index").get<int>();
            f.effects = raw.at("effects").get<std::vector<double>>();
            config.features.push_back(std::move(f));
        }
    } catch (const nlohmann::json::exception& ex) {
        throw EvalError(std::string("synthetic config: ") + ex.what());
    } catch (const IngestError& ex) {
        throw EvalError(std::string("synthetic config: ") + ex.what());
    }
    config.validate();
    return config;
}

SyntheticTeacherConfig default_synthetic_config(std::uint64_t seed, std::size_t feature_count, double amplitude) {
    // Effect shapes come from their own fixed stream so the sampling seed
    // changes the cohort without changing the teacher.
    Rng shape_rng(0x5eed0f7eac4e7ULL);
    SyntheticTeacherConfig config;
    config.seed = seed;
    for (std::size_t i = 0; i < feature_count; ++i) {
        SyntheticFeature f;
        f.spec.name = "x" + zero_padded(i + 1, 2);
        const bool integer = (i + 1) % 5 == 0;
        f.spec.kind = integer ? FeatureKind::integer : FeatureKind::continuous;
        f.first_index = integer ? 0 : -3 + static_cast<int>(i % 4);
        const std::size_t levels = integer ? 5 : 6 + i % 3;
        f.effects.resize(levels);
        for (auto& e : f.effects) {
            e = amplitude * (2.0 * shape_rng.uniform() - 1.0);
        }
        const double mean = f.expected_effect();
        for (auto& e : f.effects) {
            e -= mean;
        }
        config.features.push_back(std::move(f));
    }
    return config;
}

double synthetic_effect(const SyntheticFeature& feature, double value, const haga::Grid& grid) {
    const double midpoint = haga::assign_interval(value, feature.spec.kind, grid);
    const double position = feature.spec.kind == FeatureKind::integer ? midpoint : midpoint / grid.step;
    const double k = std::round(position) - static_cast<double>(feature.first_index);
    if (k < 0.0 || k >= static_cast<double>(feature.effects.size()) || position != std::round(position)) {
        throw EvalError("value " + std::to_string(value) + " is outside the support of feature '" +
                        feature.spec.name + "'");
    }
    return feature.effects[static_cast<std::size_t>(k)];
}

FeatureShapMatrix synth_generate(const SyntheticTeacherConfig& config, std::size_t n) {
    config.validate();
    FeatureShapMatrix matrix;
    matrix.schema = config.schema();
    matrix.base_value = config.intercept;
    std::vector<double> expected(config.features.size());
    for (std::size_t j = 0; j < config.features.size(); ++j) {
        expected[j] = config.features[j].expected_effect();
        matrix.base_value += expected[j];
    }

    Rng rng(config.seed);
    matrix.rows.reserve(n);
    const std::size_t digits = n < 10 ? 1 : static_cast<std::size_t>(std::floor(std::log10(static_cast<double>(n - 1)))) + 1;
    for (std::size_t r = 0; r < n; ++r) {
        SampleRecord row;
        row.sample_id = "s" + zero_padded(r, digits);
        row.values.resize(config.features.size());
        std::vector<double> shap(config.features.size());
        double margin = matrix.base_value;
        for (std::size_t j = 0; j < config.features.size(); ++j) {
            const auto& f = config.features[j];
            const std::size_t k = rng.index(f.effects.size());
            const long long level = f.first_index + static_cast<long long>(k);
            if (f.spec.kind == FeatureKind::integer) {
                row.values[j] = static_cast<double>(level);
            } else {
                // 50 equally spaced offsets across [mid - hw, mid + hw).
                const auto offset = static_cast<long long>(rng.index(50)) - 25;
                row.values[j] = static_cast<double>(level * 50 + offset) * config.grid.step / 50.0;
            }
            shap[j] = f.effects[k] - expected[j];
            margin += shap[j];
        }
        row.shap = std::move(shap);
        const double p = cacs::sigmoid(margin);
        row.teacher_prob = p;
        row.label = p >= 0.5 ? Label::unhealthy : Label::healthy;
        matrix.rows.push_back(std::move(row));
    }
    return matrix;
}

// ---- exact Shapley values --------------------------------------------------

std::vector<double> shapley_brute(const ModelFn& model, std::span<const double> x,
                                  const std::vector<std::vector<double>>& background) {
    const std::size_t n = x.size();
    if (n > kMaxShapleyFeatures) {
        throw EvalError("exact Shapley enumeration supports at most " + std::to_string(kMaxShapleyFeatures) +
                        " features, got " + std::to_string(n));
    }
    if (background.empty()) {
        throw EvalError("exact Shapley enumeration needs at least one background row");
    }
    for (const auto& row : background) {
        require_same_length(row.size(), n, "Shapley background row");
    }

    const std::size_t coalitions = std::size_t{1} << n;
    std::vector<double> value(coalitions, 0.0);
    std::vector<double> point(n);
    for (std::size_t mask = 0; mask < coalitions; ++mask) {
        double sum = 0.0;
        for (const auto& row : background) {
            for (std::size_t i = 0; i < n; ++i) {
                point[i] = (mask >> i) & 1U ? x[i] : row[i];
            }
            sum += model(point);
        }
        value[mask] = sum / static_cast<double>(background.size());
    }

    // weight[s] = s! (n - s - 1)! / n!
    std::vector<double> factorial(n + 1, 1.0);
    for (std::size_t i = 1; i <= n; ++i) {
        factorial[i] = factorial[i - 1] * static_cast<double>(i);
    }
    std::vector<double> weight(n, 0.0);
    for (std::size_t s = 0; s < n; ++s) {
        weight[s] = factorial[s] * factorial[n - s - 1] / factorial[n];
    }
    std::vector<double> phi(n, 0.0);
    for (std::size_t mask = 0; mask < coalitions; ++mask) {
        const auto size = static_cast<std::size_t>(__builtin_popcountll(mask));
        for (std::size_t i = 0; i < n; ++i) {
            if (!((mask >> i) & 1U)) {
                phi[i] += weight[size] * (value[mask | (std::size_t{1} << i)] - value[mask]);
            }
        }
    }
    return phi;
}

std::vector<double> shapley_brute(const ModelFn& model, std::span<const double> x, std::span<const double> means) {
    return shapley_brute(model, x, std::vector<std::vector<double>>{{means.begin(), means.end()}});
}

}  // namespace laiml::eval
