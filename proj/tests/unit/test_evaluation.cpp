#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "fixtures.hpp"
#include "laiml/cacs.hpp"
#include "laiml/evaluation.hpp"

using namespace laiml;
using namespace laiml::eval;
using doctest::Approx;

namespace {

double percent_1dp(double fraction) { return std::round(fraction * 1000.0) / 10.0; }

// Small three-feature teacher used for the Shapley oracle.
SyntheticTeacherConfig tiny_config() {
    SyntheticTeacherConfig c;
    c.seed = 5;
    c.intercept = 0.2;
    c.features = {
        {{"a", FeatureKind::continuous, ""}, -1, {0.3, -0.1, 0.4}},
        {{"b", FeatureKind::integer, ""}, 0, {-0.2, 0.5}},
        {{"c", FeatureKind::continuous, ""}, 2, {0.0, 0.25, -0.3, 0.1}},
    };
    return c;
}

// Every combination of one representative value per interval, so the
// background is exactly the product distribution the generator samples from.
std::vector<std::vector<double>> full_background(const SyntheticTeacherConfig& c) {
    std::vector<std::vector<double>> rows{{}};
    for (const auto& f : c.features) {
        std::vector<std::vector<double>> next;
        for (const auto& row : rows) {
            for (std::size_t k = 0; k < f.effects.size(); ++k) {
                const double level = static_cast<double>(f.first_index) + static_cast<double>(k);
                auto extended = row;
                extended.push_back(f.spec.kind == FeatureKind::integer ? level : level * c.grid.step);
                next.push_back(std::move(extended));
            }
        }
        rows = std::move(next);
    }
    return rows;
}

}  // namespace

TEST_CASE("metrics from the first confusion matrix") {
    const ConfusionMatrix cm{23, 29, 4, 1};
    const auto m = class_metrics(cm);
    CHECK(cm.total() == 57);
    CHECK(*m.accuracy == Approx(52.0 / 57.0));
    CHECK(*m.accuracy == Approx(0.912).epsilon(1e-3));
    CHECK(*m.unhealthy.precision == Approx(23.0 / 27.0));
    CHECK(*m.unhealthy.recall == Approx(23.0 / 24.0));
    CHECK(*m.healthy.precision == Approx(29.0 / 30.0));
    CHECK(*m.healthy.recall == Approx(29.0 / 33.0));
    const double p = 23.0 / 27.0;
    const double r = 23.0 / 24.0;
    CHECK(*m.unhealthy.f1 == Approx(2 * p * r / (p + r)));
    CHECK(m.unhealthy.support == 24);
    CHECK(m.healthy.support == 33);
}

TEST_CASE("metrics from the second confusion matrix") {
    const auto m = class_metrics(ConfusionMatrix{24, 27, 10, 5});
    CHECK(*m.accuracy == Approx(51.0 / 66.0));
    CHECK(*m.accuracy == Approx(0.773).epsilon(1e-3));
}

TEST_CASE("degenerate confusion matrices leave metrics undefined") {
    auto m = class_metrics(ConfusionMatrix{});
    CHECK_FALSE(m.accuracy.has_value());
    CHECK_FALSE(m.unhealthy.precision.has_value());
    CHECK_FALSE(m.healthy.recall.has_value());
    CHECK(to_json(m)["accuracy"].is_null());

    m = class_metrics(ConfusionMatrix{0, 5, 0, 0});
    CHECK(*m.accuracy == 1.0);
    CHECK_FALSE(m.unhealthy.precision.has_value());
    CHECK_FALSE(m.unhealthy.recall.has_value());
}

TEST_CASE("confusion matrix from labels") {
    const std::vector<Label> pred{Label::unhealthy, Label::unhealthy, Label::healthy, Label::healthy, Label::unhealthy};
    const std::vector<Label> truth{Label::unhealthy, Label::healthy, Label::healthy, Label::unhealthy, Label::unhealthy};
    CHECK(ConfusionMatrix::from_labels(pred, truth) == ConfusionMatrix{2, 1, 1, 1});
    CHECK_THROWS_AS(ConfusionMatrix::from_labels(pred, std::vector<Label>{Label::healthy}), EvalError);
}

TEST_CASE("bias statistics examples") {
    const std::vector<double> teacher{0.5, 0.5, 0.5};
    const std::vector<double> infer{0.51, 0.48, 0.53};
    const auto s = bias_stats(teacher, infer);
    CHECK(s.n == 3);
    CHECK(s.mean == Approx(0.02));
    CHECK(s.median == Approx(0.02));
    CHECK(s.min == Approx(0.01));
    CHECK(s.max == Approx(0.03));
    CHECK(s.stddev == Approx(std::sqrt(2.0 / 3.0) * 0.01));

    const auto same = bias_stats(teacher, teacher);
    CHECK(same == BiasStats{3, 0, 0, 0, 0, 0});

    const auto even = bias_stats(std::vector<double>{0, 0, 0, 0}, std::vector<double>{0.1, 0.4, 0.2, 0.3});
    CHECK(even.median == Approx(0.25));

    CHECK_THROWS_AS(bias_stats(std::vector<double>{}, std::vector<double>{}), EvalError);
    CHECK_THROWS_AS(bias_stats(teacher, std::vector<double>{0.5}), EvalError);
}

TEST_CASE("bias statistics match a direct computation") {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 1 + rng() % 200;
        std::vector<double> a(n), b(n), d(n);
        for (std::size_t i = 0; i < n; ++i) {
            a[i] = laiml::testing::uniform(rng, 0, 1);
            b[i] = laiml::testing::uniform(rng, 0, 1);
            d[i] = std::abs(a[i] - b[i]);
        }
        const auto s = bias_stats(a, b);
        const double mean = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(n);
        double ss = 0;
        for (const double x : d) ss += (x - mean) * (x - mean);
        std::sort(d.begin(), d.end());
        const double median = n % 2 ? d[n / 2] : 0.5 * (d[n / 2 - 1] + d[n / 2]);
        CHECK(s.mean == Approx(mean).epsilon(1e-12));
        CHECK(s.stddev == Approx(std::sqrt(ss / static_cast<double>(n))).epsilon(1e-9));
        CHECK(s.median == median);
        CHECK(s.min == d.front());
        CHECK(s.max == d.back());
        CHECK(s.min <= s.median);
        CHECK(s.median <= s.max);
    }
}

TEST_CASE("concordance examples") {
    const auto fig = ConcordanceBreakdown::from_counts(37, 5, 13, 5);
    CHECK(fig.n() == 60);
    CHECK(percent_1dp(*fig.fraction(Agreement::both_correct)) == 61.7);
    CHECK(percent_1dp(*fig.fraction(Agreement::both_wrong)) == 8.3);
    CHECK(percent_1dp(*fig.fraction(Agreement::a_only_correct)) == 21.7);
    CHECK(percent_1dp(*fig.fraction(Agreement::b_only_correct)) == 8.3);

    const std::vector<Label> truth{Label::healthy, Label::unhealthy, Label::unhealthy};
    const std::vector<Label> flipped{Label::unhealthy, Label::healthy, Label::healthy};
    auto c = concordance(truth, truth, truth);
    CHECK(*c.fraction(Agreement::both_correct) == 1.0);
    c = concordance(truth, flipped, truth);
    CHECK(*c.fraction(Agreement::a_only_correct) == 1.0);
    c = concordance(flipped, truth, truth);
    CHECK(c.count(Agreement::b_only_correct) == 3);
    CHECK(c.per_sample[0] == Agreement::b_only_correct);

    const auto empty = concordance(std::vector<Label>{}, std::vector<Label>{}, std::vector<Label>{});
    CHECK_FALSE(empty.fraction(Agreement::both_correct).has_value());
    CHECK_THROWS_AS(concordance(truth, truth, std::vector<Label>{Label::healthy}), EvalError);
    CHECK(to_string(Agreement::a_only_correct) == "a_only_correct");
}

TEST_CASE("concordance categories partition the samples") {
    std::mt19937_64 rng(10);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = rng() % 80;
        std::vector<Label> a(n), b(n), t(n);
        for (std::size_t i = 0; i < n; ++i) {
            a[i] = rng() % 2 ? Label::unhealthy : Label::healthy;
            b[i] = rng() % 2 ? Label::unhealthy : Label::healthy;
            t[i] = rng() % 2 ? Label::unhealthy : Label::healthy;
        }
        const auto c = concordance(a, b, t);
        CHECK(c.n() == n);
        CHECK(c.per_sample.size() == n);
        if (n > 0) {
            double total = 0;
            for (const auto g : {Agreement::both_correct, Agreement::both_wrong, Agreement::a_only_correct,
                                 Agreement::b_only_correct}) {
                total += *c.fraction(g);
            }
            CHECK(total == Approx(1.0));
        }
    }
}

TEST_CASE("Shapley enumeration examples") {
    const ModelFn sum = [](std::span<const double> x) { return x[0] + x[1]; };
    const auto phi = shapley_brute(sum, std::vector<double>{1, 2}, std::vector<double>{0, 0});
    CHECK(phi[0] == Approx(1.0));
    CHECK(phi[1] == Approx(2.0));

    const ModelFn constant = [](std::span<const double>) { return 4.2; };
    for (const double v : shapley_brute(constant, std::vector<double>{1, 2, 3}, std::vector<double>{0, 5, 9})) {
        CHECK(v == 0.0);
    }

    const ModelFn square = [](std::span<const double> x) { return x[0] * x[0]; };
    CHECK(shapley_brute(square, std::vector<double>{3}, std::vector<double>{1})[0] == Approx(8.0));

    CHECK_THROWS_AS(shapley_brute(sum, std::vector<double>(9, 0.0), std::vector<double>(9, 0.0)), EvalError);
}

TEST_CASE("Shapley values are efficient and match additive attributions") {
    std::mt19937_64 rng(21);
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t n = 1 + rng() % 6;
        std::vector<double> coef(n), x(n), means(n);
        for (std::size_t i = 0; i < n; ++i) {
            coef[i] = laiml::testing::uniform(rng, -2, 2);
            x[i] = laiml::testing::uniform(rng, -3, 3);
            means[i] = laiml::testing::uniform(rng, -1, 1);
        }
        const ModelFn additive = [&](std::span<const double> p) {
            double s = 0.5;
            for (std::size_t i = 0; i < n; ++i) s += coef[i] * std::sin(p[i]);
            return s;
        };
        const auto phi = shapley_brute(additive, x, means);
        for (std::size_t i = 0; i < n; ++i) {
            CHECK(phi[i] == Approx(coef[i] * (std::sin(x[i]) - std::sin(means[i]))).epsilon(1e-9).scale(1e-9));
        }

        // Efficiency holds for any model, including interactions.
        const ModelFn interacting = [&](std::span<const double> p) {
            double s = 0.0;
            for (std::size_t i = 0; i < n; ++i) s += coef[i] * p[i] * p[(i + 1) % n];
            return std::tanh(s);
        };
        const auto psi = shapley_brute(interacting, x, means);
        CHECK(std::accumulate(psi.begin(), psi.end(), 0.0) ==
              Approx(interacting(x) - interacting(means)).epsilon(1e-9).scale(1e-9));
    }
}

TEST_CASE("synthetic attributions equal exact Shapley values of the margin") {
    const auto config = tiny_config();
    const auto matrix = synth_generate(config, 60);
    const auto background = full_background(config);
    const ModelFn margin = [&](std::span<const double> p) {
        double s = config.intercept;
        for (std::size_t j = 0; j < config.features.size(); ++j) {
            s += synthetic_effect(config.features[j], p[j], config.grid);
        }
        return s;
    };
    double expected_base = 0.0;
    for (const auto& row : background) {
        expected_base += margin(row) / static_cast<double>(background.size());
    }
    CHECK(matrix.base_value == Approx(expected_base).epsilon(1e-12));

    for (const auto& row : matrix.rows) {
        const auto phi = shapley_brute(margin, row.values, background);
        for (std::size_t j = 0; j < phi.size(); ++j) {
            CHECK((*row.shap)[j] == Approx(phi[j]).epsilon(1e-9).scale(1e-9));
        }
        const double total = std::accumulate(row.shap->begin(), row.shap->end(), matrix.base_value);
        CHECK(*row.teacher_prob == Approx(cacs::sigmoid(total)).epsilon(1e-12));
        CHECK((*row.label == Label::unhealthy) == (*row.teacher_prob >= 0.5));
    }
}

TEST_CASE("synthetic generator properties") {
    const auto config = default_synthetic_config();
    CHECK(config.features.size() == 15);
    CHECK(config.schema().size() == 15);
    const auto a = synth_generate(config, 200);
    const auto b = synth_generate(config, 200);
    CHECK(a == b);
    CHECK(a.rows.front().sample_id == "s000");

    auto reseeded = config;
    reseeded.seed = 2;
    CHECK_FALSE(synth_generate(reseeded, 200) == a);

    for (const auto& row : a.rows) {
        for (std::size_t j = 0; j < 15; ++j) {
            const auto& f = config.features[j];
            const double mid = haga::assign_interval(row.values[j], f.spec.kind, config.grid);
            const double index = f.spec.kind == FeatureKind::integer ? mid : mid / config.grid.step;
            CHECK(index >= f.first_index);
            CHECK(index < f.first_index + static_cast<double>(f.effects.size()));
            CHECK(std::abs((*row.shap)[j]) <= 0.3 + 1e-12);
        }
        CHECK(*row.teacher_prob > 0.0);
        CHECK(*row.teacher_prob < 1.0);
    }

    auto zero = config;
    zero.intercept = 0.4;
    for (auto& f : zero.features) {
        std::fill(f.effects.begin(), f.effects.end(), 0.0);
    }
    for (const auto& row : synth_generate(zero, 30).rows) {
        CHECK(*row.teacher_prob == cacs::sigmoid(0.4));
    }

    CHECK(SyntheticTeacherConfig::from_json(config.to_json()) == config);
    CHECK(synth_generate(config, 0).rows.empty());
}

TEST_CASE("synthetic config validation") {
    auto c = tiny_config();
    c.features[1].effects.clear();
    CHECK_THROWS_AS(c.validate(), EvalError);
    c = tiny_config();
    CHECK_THROWS_AS(synthetic_effect(c.features[0], 50.0, c.grid), EvalError);
    CHECK(synthetic_effect(c.features[0], -0.5, c.grid) == 0.3);
    CHECK(synthetic_effect(c.features[1], 1.0, c.grid) == 0.5);
}
