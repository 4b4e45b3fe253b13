#include "laiml/haga.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <string>

#include "laiml/text_io.hpp"

namespace laiml::haga {

void Grid::validate() const {
    if (!(step > 0.0) || !std::isfinite(step)) {
        throw HagaError("grid step must be a positive finite number");
    }
    if (half_width * 2.0 != step) {
        throw HagaError("grid half-width must be exactly half the step (got step " + io::format_double(step) +
                        ", half-width " + io::format_double(half_width) + ")");
    }
}

bool in_interval(double value, double midpoint, const Grid& grid) {
    return midpoint - grid.half_width <= value && value < midpoint + grid.half_width;
}

double assign_interval(double value, FeatureKind kind, const Grid& grid) {
    if (!std::isfinite(value)) {
        throw HagaError("cannot assign a non-finite value to an interval");
    }
    if (kind == FeatureKind::integer) {
        if (std::floor(value) != value) {
            throw HagaError("integer feature holds fractional value " + io::format_double(value));
        }
        return value;
    }
    // Nearest grid index, then correct against the exact boundary test so that
    // rounding in the division never disagrees with membership.
    double m = std::floor(value / grid.step + 0.5);
    for (int guard = 0; guard < 4; ++guard) {
        const double mid = m * grid.step;
        if (value < mid - grid.half_width) {
            m -= 1.0;
        } else if (!(value < mid + grid.half_width)) {
            m += 1.0;
        } else {
            // Normalise -0.0 so midpoints compare and print consistently.
            return mid == 0.0 ? 0.0 : mid;
        }
    }
    throw HagaError("interval assignment did not converge for " + io::format_double(value));
}

ShapKnowledgeBase build_knowledge_base(const FeatureShapMatrix& matrix, const Grid& grid) {
    grid.validate();
    if (matrix.rows.empty()) {
        throw HagaError("cannot build intervals from an empty matrix");
    }
    const auto& schema = matrix.schema;
    ShapKnowledgeBase skb;
    skb.grid = grid;
    skb.features.resize(schema.size());

    for (std::size_t j = 0; j < schema.size(); ++j) {
        const auto kind = schema.feature(j).kind;
        // Accumulate per midpoint. Summation runs in sorted-value order so the
        // result does not depend on row order.
        std::map<double, std::vector<std::pair<double, double>>> groups;
        for (const auto& row : matrix.rows) {
            if (!row.shap) {
                throw HagaError("row '" + row.sample_id + "' has no attributions");
            }
            groups[assign_interval(row.values[j], kind, grid)].emplace_back(row.values[j], (*row.shap)[j]);
        }
        auto& out = skb.features[j];
        out.reserve(groups.size());
        for (auto& [midpoint, members] : groups) {
            std::sort(members.begin(), members.end());
            double sum = 0.0;
            for (const auto& [value, shap] : members) {
                sum += shap;
            }
            out.push_back({midpoint, sum / static_cast<double>(members.size()), members.size()});
        }
    }
    return skb;
}

std::size_t nearest_index(double value, std::span<const double> midpoints) {
    if (midpoints.empty()) {
        throw HagaError("feature sub-base is empty");
    }
    const auto upper = std::lower_bound(midpoints.begin(), midpoints.end(), value);
    if (upper == midpoints.begin()) {
        return 0;
    }
    if (upper == midpoints.end()) {
        return midpoints.size() - 1;
    }
    const auto lower = upper - 1;
    // `<=` keeps ties on the smaller midpoint.
    return (value - *lower <= *upper - value) ? static_cast<std::size_t>(lower - midpoints.begin())
                                              : static_cast<std::size_t>(upper - midpoints.begin());
}

double nearest_midpoint(double value, std::size_t feature_index, const ShapKnowledgeBase& skb) {
    if (feature_index >= skb.features.size()) {
        throw HagaError("feature index " + std::to_string(feature_index) + " out of range");
    }
    const auto& stats = skb.features[feature_index];
    std::vector<double> midpoints;
    midpoints.reserve(stats.size());
    for (const auto& s : stats) {
        midpoints.push_back(s.midpoint);
    }
    return midpoints[nearest_index(value, midpoints)];
}

}  // namespace laiml::haga
