#include "laiml/calibration.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <thread>

#include "laiml/policy.hpp"

namespace laiml::calibration {

PolicyFailure::PolicyFailure(std::string sample_id, std::size_t iteration, const std::string& what)
    : std::runtime_error("policy failed for sample '" + sample_id + "' at iteration " + std::to_string(iteration) +
                         ": " + what),
      sample_id_(std::move(sample_id)),
      iteration_(iteration) {}

std::size_t WeightSet::clamp(double max_weight) {
    std::size_t changed = 0;
    for (auto& w : values_) {
        double fixed = std::isfinite(w) ? std::clamp(w, 0.0, max_weight) : 0.0;
        if (fixed != w) {
            ++changed;
            w = fixed;
        }
    }
    return changed;
}

double raw_infer_probability(const cacs::PatientFeatureTable& table, const WeightSet& weights) {
    if (table.size() != weights.size()) {
        throw CalibrationError("feature table has " + std::to_string(table.size()) + " entries but weight set has " +
                               std::to_string(weights.size()));
    }
    double sum = kBaseProbability;
    for (std::size_t i = 0; i < table.size(); ++i) {
        sum += table.entries[i].contribution_prob * weights[i];
    }
    return sum;
}

double infer_probability(const cacs::PatientFeatureTable& table, const WeightSet& weights) {
    return std::clamp(raw_infer_probability(table, weights), 0.0, 1.0);
}

double alignment(double teacher_prob, double infer_prob, bool literal) {
    const double teacher_side = teacher_prob - kDecisionBoundary;
    return literal ? teacher_side * infer_prob : teacher_side * (infer_prob - kDecisionBoundary);
}

std::string_view guidance_text(double teacher_prob, double infer_prob, double diff, double alignment_value) {
    if (!(alignment_value > 0.0)) {
        return kGuidanceWarn;
    }
    if (diff <= kAcceptableDeviation) {
        return kGuidanceOk;
    }
    return infer_prob > teacher_prob ? kGuidanceOver : kGuidanceUnder;
}

RewardSignal compute_reward(double teacher_prob, double infer_prob, bool literal_alignment) {
    if (!(teacher_prob > 0.0 && teacher_prob < 1.0)) {
        throw CalibrationError("teacher probability must lie in (0, 1)");
    }
    RewardSignal reward;
    const double gap = std::abs(teacher_prob - infer_prob);
    reward.diff = gap / teacher_prob;
    reward.alignment = alignment(teacher_prob, infer_prob, literal_alignment);
    if (!(reward.alignment > 0.0)) {
        reward.score = 0.0;
    } else if (reward.diff <= kAcceptableDeviation) {
        reward.score = kMaxScore;
    } else {
        reward.score = teacher_prob / gap;
    }
    reward.guidance = guidance_text(teacher_prob, infer_prob, reward.diff, reward.alignment);
    return reward;
}

void FailureCaseBase::push(FailureCase failure) {
    if (!(failure.diff > kAcceptableDeviation)) {
        throw CalibrationError("failure cases need diff > 0.05");
    }
    if (cases_.size() == kFailureCapacity) {
        cases_.pop_front();
    }
    cases_.push_back(std::move(failure));
}

FailureCaseBase push_failure(FailureCaseBase base, FailureCase failure) {
    base.push(std::move(failure));
    return base;
}

nlohmann::json DistillConfig::to_json() const {
    return {{"epsilon", epsilon},
            {"max_iters", max_iters},
            {"weight_max", weight_max},
            {"literal_alignment", literal_alignment},
            {"include_unconverged", include_unconverged}};
}

namespace {

policy::PolicyRequest make_request(policy::RequestMode mode, const DiagnosticState& state, const RewardSignal& reward,
                                   const FailureCaseBase& failures, const cacs::Acpb& acpb, double teacher_prob,
                                   std::size_t iteration) {
    policy::PolicyRequest request;
    request.mode = mode;
    request.state = state;
    request.reward = reward;
    request.failures = failures.contents();
    request.features = acpb.schema.features();
    request.teacher_prob = teacher_prob;
    request.iteration = iteration;
    return request;
}

}  // namespace

DistillationOutcome distill_record(const SampleRecord& record, const cacs::Acpb& acpb, const policy::Policy& policy,
                                   const DistillConfig& config) {
    if (!record.teacher_prob) {
        throw CalibrationError("record '" + record.sample_id + "' has no teacher probability");
    }
    const double teacher = *record.teacher_prob;

    DistillationOutcome outcome;
    outcome.sample_id = record.sample_id;
    outcome.teacher_prob = teacher;
    outcome.label = record.label;

    auto& state = outcome.state;
    state.table = cacs::match_record(record, acpb);
    state.weights = WeightSet::uniform(state.table.size());
    state.infer_prob = infer_probability(state.table, state.weights);
    outcome.reward = compute_reward(teacher, state.infer_prob, config.literal_alignment);
    outcome.trajectory.push_back({0, state.infer_prob, outcome.reward.diff, outcome.reward.score});

    auto call_policy = [&](const policy::PolicyRequest& request) {
        try {
            return policy.propose(request);
        } catch (const std::exception& ex) {
            throw PolicyFailure(record.sample_id, request.iteration, ex.what());
        }
    };

    if (outcome.reward.diff <= config.epsilon) {
        // Weights stay at the cold start; the policy only writes the guidance.
        FailureCaseBase none;
        const auto response = call_policy(make_request(policy::RequestMode::guidance_only, state, outcome.reward, none,
                                                       acpb, teacher, 0));
        state.guidance = response.guidance;
        outcome.converged = true;
        return outcome;
    }

    FailureCaseBase failures;
    if (outcome.reward.diff > kAcceptableDeviation) {
        failures.push({state.weights, state.infer_prob, teacher, outcome.reward.diff, 0});
    }

    for (std::size_t iteration = 1; iteration <= config.max_iters; ++iteration) {
        auto response = call_policy(
            make_request(policy::RequestMode::calibrate, state, outcome.reward, failures, acpb, teacher, iteration));
        if (response.weights.size() != state.table.size()) {
            throw PolicyFailure(record.sample_id, iteration,
                                "policy returned " + std::to_string(response.weights.size()) + " weights for " +
                                    std::to_string(state.table.size()) + " features");
        }
        if (response.fell_back) {
            ++outcome.policy_fallbacks;
        }
        response.weights.clamp(config.weight_max);
        state.weights = std::move(response.weights);
        state.guidance = std::move(response.guidance);
        state.infer_prob = infer_probability(state.table, state.weights);
        outcome.reward = compute_reward(teacher, state.infer_prob, config.literal_alignment);
        outcome.iterations = iteration;
        outcome.trajectory.push_back({iteration, state.infer_prob, outcome.reward.diff, outcome.reward.score});

        if (outcome.reward.diff <= config.epsilon) {
            outcome.converged = true;
            break;
        }
        if (outcome.reward.diff > kAcceptableDeviation) {
            failures.push({state.weights, state.infer_prob, teacher, outcome.reward.diff, iteration});
        }
    }
    return outcome;
}

std::vector<std::string> DistillationSummary::unconverged_ids() const {
    std::vector<std::string> ids;
    for (const auto& r : records) {
        if (!r.converged) {
            ids.push_back(r.sample_id);
        }
    }
    return ids;
}

nlohmann::json DistillationSummary::to_json() const {
    nlohmann::json doc;
    doc["records"] = nlohmann::json::array();
    for (const auto& r : records) {
        nlohmann::json row = {{"sample_id", r.sample_id},
                              {"converged", r.converged},
                              {"iterations", r.iterations},
                              {"final_diff", r.final_diff},
                              {"final_score", r.final_score}};
        row["entry_id"] = r.entry_id ? nlohmann::json(*r.entry_id) : nlohmann::json(nullptr);
        doc["records"].push_back(std::move(row));
    }
    doc["counts"] = {{"total", records.size()}, {"converged", converged}, {"unconverged", unconverged}, {"saved", saved}};
    doc["unconverged"] = unconverged_ids();
    return doc;
}

DistillationSummary distill_cohort(const FeatureShapMatrix& matrix, const cacs::Acpb& acpb,
                                   const policy::Policy& policy, const DistillConfig& config, OutcomeSink& sink,
                                   std::vector<DistillationOutcome>* outcomes_out) {
    const std::size_t n = matrix.rows.size();
    std::vector<DistillationOutcome> outcomes(n);
    std::vector<std::exception_ptr> errors(n);

    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < n; i = next++) {
            try {
                outcomes[i] = distill_record(matrix.rows[i], acpb, policy, config);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const std::size_t thread_count = std::clamp<std::size_t>(config.threads, 1, std::max<std::size_t>(n, 1));
    if (thread_count == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        pool.reserve(thread_count);
        for (std::size_t t = 0; t < thread_count; ++t) {
            pool.emplace_back(worker);
        }
    }
    const auto first_error = static_cast<std::size_t>(
        std::find_if(errors.begin(), errors.end(), [](const std::exception_ptr& e) { return e != nullptr; }) -
        errors.begin());

    DistillationSummary summary;
    summary.records.reserve(n);
    for (std::size_t i = 0; i < first_error; ++i) {
        const auto& outcome = outcomes[i];
        RecordSummary row{outcome.sample_id, outcome.converged, outcome.iterations, outcome.reward.diff,
                          outcome.reward.score, std::nullopt};
        outcome.converged ? ++summary.converged : ++summary.unconverged;
        if (outcome.converged || config.include_unconverged) {
            row.entry_id = sink.save(outcome, config.include_unconverged);
            ++summary.saved;
        }
        summary.records.push_back(std::move(row));
    }
    if (first_error < n) {
        std::string what = "unknown error";
        try {
            std::rethrow_exception(errors[first_error]);
        } catch (const std::exception& ex) {
            what = ex.what();
        } catch (...) {
        }
        throw CohortError("distillation stopped at sample '" + matrix.rows[first_error].sample_id + "': " + what,
                          std::move(summary));
    }
    if (outcomes_out) {
        *outcomes_out = std::move(outcomes);
    }
    return summary;
}

nlohmann::json to_json(const WeightSet& weights) { return weights.values(); }

WeightSet weights_from_json(const nlohmann::json& doc) {
    if (!doc.is_array()) {
        throw CalibrationError("weight set must be an array");
    }
    std::vector<double> values;
    for (const auto& w : doc) {
        if (!w.is_number()) {
            throw CalibrationError("weights must be numbers");
        }
        values.push_back(w.get<double>());
    }
    return WeightSet(std::move(values));
}

}  // namespace laiml::calibration
