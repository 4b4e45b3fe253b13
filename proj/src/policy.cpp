#include "laiml/policy.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "laiml/text_io.hpp"

namespace laiml::policy {
namespace {

std::string fixed(double value, int precision = 4) {
    char buffer[64];
    std::snprintf(buffer, sizeof buffer, "%.*f", precision, value);
    return buffer;
}

std::string signed_fixed(double value, int precision = 4) {
    return (value >= 0.0 ? "+" : "") + fixed(value, precision);
}

// Names the three features with the largest |c_i * w_i|.
std::string top_drivers(const cacs::PatientFeatureTable& table, const WeightSet& weights,
                        std::span<const FeatureSpec> features) {
    std::vector<std::size_t> order(table.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto product = [&](std::size_t i) { return table.entries[i].contribution_prob * weights[i]; };
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return std::abs(product(a)) > std::abs(product(b)); });
    std::string out;
    std::size_t listed = 0;
    for (const auto i : order) {
        if (listed == 3 || product(i) == 0.0) {
            break;
        }
        out += listed == 0 ? "" : ", ";
        const auto name = i < features.size() ? features[i].name : "feature_" + std::to_string(i);
        out += name + " (" + signed_fixed(product(i)) + ")";
        ++listed;
    }
    return listed == 0 ? "no feature carries a nonzero contribution" : "largest weighted contributions: " + out;
}

int sign(double v) { return (v > 0.0) - (v < 0.0); }

}  // namespace

std::string StubPolicy::id() const {
    return "stub(damping=" + io::format_double(config_.damping) + ",weight_max=" + io::format_double(config_.weight_max) +
           ")";
}

PolicyResponse stub_propose(const PolicyRequest& request, const StubConfig& config) {
    const auto& state = request.state;
    PolicyResponse response;
    response.weights = state.weights;

    const double teacher = request.teacher_prob;
    const double current = state.infer_prob;
    const double boundary = calibration::kDecisionBoundary;

    if (request.mode == RequestMode::guidance_only) {
        response.guidance = "Inferred probability " + fixed(current) + " agrees with the teacher probability " +
                            fixed(teacher) + "; weights kept at the cold start. " +
                            top_drivers(state.table, response.weights, request.features) + ".";
        return response;
    }

    const double aligned = (teacher - boundary) * (current - boundary);
    if (aligned > 0.0 && std::abs(current - boundary) > 1e-9) {
        const double scale = 1.0 + config.damping * ((teacher - boundary) / (current - boundary) - 1.0);
        for (auto& w : response.weights.values()) {
            w *= scale;
        }
        const auto clamped = response.weights.clamp(config.weight_max);
        response.guidance = "Scaled all weights by " + fixed(scale) + " to move the inferred probability " +
                            fixed(current) + " toward the teacher probability " + fixed(teacher) +
                            (clamped ? " (" + std::to_string(clamped) + " weights clamped)" : std::string()) + "; " +
                            top_drivers(state.table, response.weights, request.features) + ".";
        return response;
    }

    const int wanted = sign(teacher - boundary);
    std::size_t reduced = 0;
    if (wanted != 0) {
        for (std::size_t i = 0; i < state.table.size(); ++i) {
            auto& w = response.weights.values()[i];
            if (sign(state.table.entries[i].contribution_prob) == -wanted && w > 0.0) {
                w *= 1.0 - config.damping;
                ++reduced;
            }
        }
    }
    if (reduced == 0) {
        response.guidance = "No actionable signal: no feature contribution can move the inferred probability " +
                            fixed(current) + " toward the teacher probability " + fixed(teacher) +
                            "; weights unchanged.";
    } else {
        response.guidance = "Prediction falls on the wrong side of 0.5; reduced the weights of " +
                            std::to_string(reduced) + " features pushing " + (wanted > 0 ? "below" : "above") +
                            " 0.5 by a factor " + fixed(1.0 - config.damping) + "; " +
                            top_drivers(state.table, response.weights, request.features) + ".";
    }
    return response;
}

PolicyResponse stub_predict(const PredictionRequest& request, const StubConfig& config) {
    const std::size_t n = request.table.size();
    PolicyResponse response;
    const double initial = calibration::infer_probability(request.table, WeightSet::uniform(n));

    if (request.precedents.empty()) {
        response.weights = WeightSet::uniform(n);
        response.hypothesis = "Initial assessment from contribution probabilities: " + fixed(initial) +
                              ". No precedent cases available; hypothesis kept.";
        response.guidance = "No comparable stored cases; weights kept at the cold start. " +
                            top_drivers(request.table, response.weights, request.features) + ".";
        return response;
    }

    std::vector<double> mix(request.precedents.size());
    double total = 0.0;
    for (std::size_t p = 0; p < request.precedents.size(); ++p) {
        if (request.precedents[p].weights.size() != n) {
            throw calibration::CalibrationError("precedent " + std::to_string(request.precedents[p].entry_id) +
                                                " carries a weight set of the wrong size");
        }
        mix[p] = std::max(request.precedents[p].similarity, 0.0);
        total += mix[p];
    }
    if (!(total > 0.0)) {
        std::fill(mix.begin(), mix.end(), 1.0);
        total = static_cast<double>(mix.size());
    }
    for (auto& m : mix) {
        m /= total;
    }
    std::vector<double> weights(n, 0.0);
    for (std::size_t p = 0; p < request.precedents.size(); ++p) {
        const auto& w = request.precedents[p].weights;
        for (std::size_t i = 0; i < n; ++i) {
            weights[i] += mix[p] * w[i];
        }
    }
    response.weights = WeightSet(std::move(weights));
    response.weights.clamp(config.weight_max);

    const auto best = std::max_element(request.precedents.begin(), request.precedents.end(),
                                       [](const Precedent& a, const Precedent& b) { return a.similarity < b.similarity; });
    const double refined = calibration::infer_probability(request.table, response.weights);
    response.hypothesis = "Initial assessment from contribution probabilities: " + fixed(initial) + ". Refined with " +
                          std::to_string(request.precedents.size()) + " precedent case(s) (" + request.support_tier +
                          " support): " + fixed(refined) + ".";
    response.guidance = "Weights taken as the similarity-weighted mean of the precedents; closest case #" +
                        std::to_string(best->entry_id) + " (similarity " + fixed(best->similarity) +
                        "): " + best->guidance;
    return response;
}

ParseResult parse_response(std::string_view raw, std::span<const FeatureSpec> features, double weight_max) {
    ParseResult result;
    std::vector<std::string_view> lines;
    for (std::size_t start = 0; start <= raw.size();) {
        auto end = raw.find('\n', start);
        if (end == std::string_view::npos) {
            end = raw.size();
        }
        lines.push_back(raw.substr(start, end - start));
        start = end + 1;
    }

    auto find_line = [&](std::size_t from, std::string_view wanted) -> std::optional<std::size_t> {
        for (std::size_t i = from; i < lines.size(); ++i) {
            if (io::trim(lines[i]) == wanted) {
                return i;
            }
        }
        return std::nullopt;
    };

    const auto weights_open = find_line(0, kWeightsFence);
    if (!weights_open) {
        result.error = "no WEIGHTS block found";
        return result;
    }
    const auto weights_close = find_line(*weights_open + 1, kCloseFence);
    if (!weights_close) {
        result.error = "WEIGHTS block is not closed";
        return result;
    }

    std::unordered_map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < features.size(); ++i) {
        index.emplace(features[i].name, i);
    }
    std::vector<std::optional<double>> parsed(features.size());
    for (std::size_t i = *weights_open + 1; i < *weights_close; ++i) {
        const auto line = io::trim(lines[i]);
        if (line.empty()) {
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) {
            result.error = "malformed weight line '" + std::string(line) + "'";
            return result;
        }
        const std::string name(io::trim(line.substr(0, eq)));
        const auto value_text = io::trim(line.substr(eq + 1));
        const auto it = index.find(name);
        if (it == index.end()) {
            result.error = "unknown feature '" + name + "' in WEIGHTS block";
            return result;
        }
        if (parsed[it->second]) {
            result.error = "feature '" + name + "' listed twice";
            return result;
        }
        const auto value = io::parse_double(value_text);
        if (!value) {
            result.error = "weight for '" + name + "' is not a number ('" + std::string(value_text) + "')";
            return result;
        }
        parsed[it->second] = *value;
    }
    std::string missing;
    for (std::size_t i = 0; i < features.size(); ++i) {
        if (!parsed[i]) {
            missing += (missing.empty() ? "" : ", ") + features[i].name;
        }
    }
    if (!missing.empty()) {
        result.error = "WEIGHTS block is missing: " + missing;
        return result;
    }

    const auto guidance_open = find_line(*weights_close + 1, kGuidanceFence);
    if (!guidance_open) {
        result.error = "no GUIDANCE block after WEIGHTS";
        return result;
    }
    const auto guidance_close = find_line(*guidance_open + 1, kCloseFence);
    if (!guidance_close) {
        result.error = "GUIDANCE block is not closed";
        return result;
    }
    std::string guidance;
    for (std::size_t i = *guidance_open + 1; i < *guidance_close; ++i) {
        guidance += lines[i];
        guidance += '\n';
    }
    guidance = std::string(io::trim(guidance));
    if (guidance.empty()) {
        result.error = "GUIDANCE block is empty";
        return result;
    }

    PolicyResponse response;
    std::vector<double> weights;
    for (std::size_t i = 0; i < features.size(); ++i) {
        double w = *parsed[i];
        if (w < 0.0 || w > weight_max) {
            const double clamped = std::clamp(w, 0.0, weight_max);
            result.notices.push_back("weight for '" + features[i].name + "' = " + io::format_double(w) +
                                     " clamped to " + io::format_double(clamped));
            w = clamped;
        }
        weights.push_back(w);
    }
    response.weights = WeightSet(std::move(weights));
    response.guidance = std::move(guidance);
    std::string preamble;
    for (std::size_t i = 0; i < *weights_open; ++i) {
        preamble += lines[i];
        preamble += '\n';
    }
    response.hypothesis = std::string(io::trim(preamble));
    response.notices = result.notices;
    result.response = std::move(response);
    return result;
}

std::string render_response(const PolicyResponse& response, std::span<const FeatureSpec> features) {
    std::string out;
    if (!response.hypothesis.empty()) {
        out += response.hypothesis + "\n\n";
    }
    out += std::string(kWeightsFence) + "\n";
    for (std::size_t i = 0; i < features.size(); ++i) {
        out += features[i].name + " = " + io::format_double(response.weights[i]) + "\n";
    }
    out += std::string(kCloseFence) + "\n";
    out += std::string(kGuidanceFence) + "\n" + response.guidance + "\n" + std::string(kCloseFence) + "\n";
    return out;
}

std::string system_prompt() {
    return "You are a diagnostic reasoning assistant. A teacher model's knowledge has been converted into "
           "per-feature contribution probabilities. The inferred probability of the unhealthy class is\n"
           "  0.5 + sum_i(contribution_i * weight_i)\n"
           "and you control the weights (each between 0 and 10). Reason about the features using the "
           "descriptions provided, then answer with exactly one WEIGHTS block and one GUIDANCE block in the "
           "format requested. Prompt version: " +
           std::string(kPromptVersion) + ".";
}

namespace {

void render_feature_table(std::ostringstream& ss, const cacs::PatientFeatureTable& table,
                          std::span<const FeatureSpec> features, const WeightSet* weights) {
    ss << "| feature | description | value | interval midpoint | mean attribution | contribution |"
       << (weights ? " weight |" : "") << "\n";
    for (std::size_t i = 0; i < table.size(); ++i) {
        const auto& e = table.entries[i];
        ss << "| " << features[i].name << " | " << features[i].description << " | " << io::format_double(e.raw_value)
           << " | " << io::format_double(e.matched_midpoint) << " | " << signed_fixed(e.mean_shap, 5) << " | "
           << signed_fixed(e.contribution_prob, 5) << " |";
        if (weights) {
            ss << " " << fixed((*weights)[i]) << " |";
        }
        ss << "\n";
    }
}

void render_reply_format(std::ostringstream& ss, std::span<const FeatureSpec> features) {
    ss << "\nReply format (first the reasoning, then both blocks exactly as shown):\n";
    ss << kWeightsFence << "\n";
    for (const auto& f : features) {
        ss << f.name << " = <decimal>\n";
    }
    ss << kCloseFence << "\n" << kGuidanceFence << "\n<one paragraph of diagnosis guidance>\n" << kCloseFence << "\n";
}

}  // namespace

std::string render_calibration_prompt(const PolicyRequest& request) {
    std::ostringstream ss;
    ss << "## Patient feature table\n";
    render_feature_table(ss, request.state.table, request.features, &request.state.weights);
    ss << "\nCurrent inferred probability: " << fixed(request.state.infer_prob) << "\n";
    ss << "Teacher probability: " << fixed(request.teacher_prob) << "\n";
    if (request.mode == RequestMode::guidance_only) {
        ss << "\nThe inferred probability already agrees with the teacher. Keep every weight unchanged and "
              "write the diagnosis guidance explaining which features drive the result.\n";
        render_reply_format(ss, request.features);
        return ss.str();
    }
    ss << "\n## Reward feedback\n";
    ss << "Relative deviation: " << fixed(request.reward.diff) << "\n";
    ss << "Score: " << fixed(request.reward.score, 3) << " (10 is the best)\n";
    ss << "Direction guidance: " << request.reward.guidance << "\n";
    if (!request.failures.empty()) {
        ss << "\n## Recent failed attempts (oldest first)\n";
        for (const auto& failure : request.failures) {
            ss << "- iteration " << failure.iteration << ": inferred " << fixed(failure.infer_prob) << ", deviation "
               << fixed(failure.diff) << ", weights [";
            for (std::size_t i = 0; i < failure.weights.size(); ++i) {
                ss << (i ? ", " : "") << fixed(failure.weights[i], 3);
            }
            ss << "]\n";
        }
    }
    ss << "\nAdjust the weights so that the inferred probability moves toward the teacher probability, "
          "using clinical knowledge of the features to decide which weights to change.\n";
    render_reply_format(ss, request.features);
    return ss.str();
}

std::string render_prediction_prompt(const PredictionRequest& request) {
    std::ostringstream ss;
    ss << "## New case\n";
    render_feature_table(ss, request.table, request.features, nullptr);
    ss << "\n## Similar stored cases (" << request.support_tier << " support)\n";
    if (request.precedents.empty()) {
        ss << "none\n";
    }
    for (const auto& p : request.precedents) {
        ss << "- case #" << p.entry_id << ", similarity " << fixed(p.similarity) << ", teacher probability "
           << fixed(p.teacher_prob);
        if (p.label) {
            ss << ", label " << (*p.label == Label::unhealthy ? "unhealthy" : "healthy");
        }
        ss << "\n  weights [";
        for (std::size_t i = 0; i < p.weights.size(); ++i) {
            ss << (i ? ", " : "") << fixed(p.weights[i], 3);
        }
        ss << "]\n  guidance: " << p.guidance << "\n";
    }
    ss << "\nFirst state an initial assessment of the new case, refine it using the similar cases, then "
          "assign personalised weights.\n";
    render_reply_format(ss, request.features);
    return ss.str();
}

}  // namespace laiml::policy
