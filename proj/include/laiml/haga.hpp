#pragma once

#include <span>
#include <stdexcept>
#include <vector>

#include "laiml/schema.hpp"

namespace laiml::haga {

class HagaError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Midpoint grid for continuous features. Midpoints sit at `step * m` for
// integer m; each owns the half-open interval [mid - half_width, mid + half_width).
// half_width must equal step / 2 so the intervals tile the line.
struct Grid {
    double step = 0.5;
    double half_width = 0.25;

    void validate() const;
    static Grid with_step(double step) { return Grid{step, step / 2.0}; }

    friend bool operator==(const Grid&, const Grid&) = default;
};

// Midpoint owning `value`. Integer features map to the value itself.
double assign_interval(double value, FeatureKind kind, const Grid& grid = {});

// True when `value` lies in the half-open interval around `midpoint`.
bool in_interval(double value, double midpoint, const Grid& grid = {});

struct IntervalStat {
    double midpoint = 0.0;
    double mean_shap = 0.0;
    std::size_t count = 0;

    friend bool operator==(const IntervalStat&, const IntervalStat&) = default;
};

// Per feature: intervals sorted by strictly increasing midpoint, count >= 1.
struct ShapKnowledgeBase {
    Grid grid;
    std::vector<std::vector<IntervalStat>> features;

    friend bool operator==(const ShapKnowledgeBase&, const ShapKnowledgeBase&) = default;
};

ShapKnowledgeBase build_knowledge_base(const FeatureShapMatrix& matrix, const Grid& grid = {});

// Index into `midpoints` (sorted ascending) of the element nearest `value`.
// Ties go to the smaller midpoint.
std::size_t nearest_index(double value, std::span<const double> midpoints);

double nearest_midpoint(double value, std::size_t feature_index, const ShapKnowledgeBase& skb);

}  // namespace laiml::haga
