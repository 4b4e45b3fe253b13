#pragma once

#include <cstddef>
#include <deque>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "laiml/cacs.hpp"
#include "laiml/schema.hpp"

namespace laiml::policy {
class Policy;
}

namespace laiml::calibration {

// Reward constants fixed by the method; the convergence threshold of the loop
// is separately configurable (DistillConfig::epsilon).
constexpr double kBaseProbability = 0.5;
constexpr double kDecisionBoundary = 0.5;
constexpr double kAcceptableDeviation = 0.05;
constexpr double kMaxScore = 10.0;
constexpr std::size_t kFailureCapacity = 3;

inline constexpr std::string_view kGuidanceOver =
    "Your inferred probability is significantly higher than actual levels";
inline constexpr std::string_view kGuidanceUnder =
    "Your inferred probability is significantly lower than actual levels";
inline constexpr std::string_view kGuidanceOk = "Prediction direction correct with acceptable deviation";
inline constexpr std::string_view kGuidanceWarn =
    "Warning: Prediction contradicts factual direction. Re-examine decision basis";

class CalibrationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Raised when the policy fails mid-loop; `iteration` is the loop step that failed.
class PolicyFailure : public std::runtime_error {
public:
    PolicyFailure(std::string sample_id, std::size_t iteration, const std::string& what);
    const std::string& sample_id() const { return sample_id_; }
    std::size_t iteration() const { return iteration_; }

private:
    std::string sample_id_;
    std::size_t iteration_;
};

class WeightSet {
public:
    WeightSet() = default;
    explicit WeightSet(std::vector<double> values) : values_(std::move(values)) {}

    static WeightSet uniform(std::size_t n, double value = 1.0) { return WeightSet(std::vector<double>(n, value)); }

    const std::vector<double>& values() const { return values_; }
    std::vector<double>& values() { return values_; }
    std::size_t size() const { return values_.size(); }
    double operator[](std::size_t i) const { return values_[i]; }

    // Clamp every weight into [0, max_weight]; non-finite weights become 0.
    // Returns how many weights were changed.
    std::size_t clamp(double max_weight);

    friend bool operator==(const WeightSet&, const WeightSet&) = default;

private:
    std::vector<double> values_;
};

// 0.5 + sum(c_i * w_i), before clamping.
double raw_infer_probability(const cacs::PatientFeatureTable& table, const WeightSet& weights);
// Same, clamped into [0, 1].
double infer_probability(const cacs::PatientFeatureTable& table, const WeightSet& weights);

struct RewardSignal {
    double diff = 0.0;
    double alignment = 0.0;  // value of S; only its sign matters downstream
    double score = 0.0;
    std::string guidance;

    int alignment_sign() const { return (alignment > 0.0) - (alignment < 0.0); }
    friend bool operator==(const RewardSignal&, const RewardSignal&) = default;
};

// S as used by the reward. The centred form is (t - 0.5)(p - 0.5); the literal
// form (t - 0.5) * p is kept for comparison runs.
double alignment(double teacher_prob, double infer_prob, bool literal = false);

std::string_view guidance_text(double teacher_prob, double infer_prob, double diff, double alignment);

RewardSignal compute_reward(double teacher_prob, double infer_prob, bool literal_alignment = false);

struct DiagnosticState {
    cacs::PatientFeatureTable table;
    WeightSet weights;
    double infer_prob = kBaseProbability;
    std::string guidance;

    friend bool operator==(const DiagnosticState&, const DiagnosticState&) = default;
};

struct FailureCase {
    WeightSet weights;
    double infer_prob = 0.0;
    double teacher_prob = 0.0;
    double diff = 0.0;
    std::size_t iteration = 0;

    friend bool operator==(const FailureCase&, const FailureCase&) = default;
};

// FIFO buffer of the most recent high-deviation attempts.
class FailureCaseBase {
public:
    void push(FailureCase failure);
    std::size_t size() const { return cases_.size(); }
    bool empty() const { return cases_.empty(); }
    const FailureCase& operator[](std::size_t i) const { return cases_[i]; }
    std::vector<FailureCase> contents() const { return {cases_.begin(), cases_.end()}; }

private:
    std::deque<FailureCase> cases_;
};

FailureCaseBase push_failure(FailureCaseBase base, FailureCase failure);

struct DistillConfig {
    double epsilon = 0.05;
    std::size_t max_iters = 20;
    double weight_max = 10.0;
    bool literal_alignment = false;
    bool include_unconverged = false;
    std::size_t threads = 1;

    nlohmann::json to_json() const;
};

struct TrajectoryPoint {
    std::size_t iteration = 0;
    double infer_prob = 0.0;
    double diff = 0.0;
    double score = 0.0;

    friend bool operator==(const TrajectoryPoint&, const TrajectoryPoint&) = default;
};

struct DistillationOutcome {
    std::string sample_id;
    double teacher_prob = 0.0;
    std::optional<Label> label;
    bool converged = false;
    DiagnosticState state;
    RewardSignal reward;
    std::size_t iterations = 0;  // policy weight updates performed
    std::vector<TrajectoryPoint> trajectory;
    std::size_t policy_fallbacks = 0;

    friend bool operator==(const DistillationOutcome&, const DistillationOutcome&) = default;
};

DistillationOutcome distill_record(const SampleRecord& record, const cacs::Acpb& acpb, const policy::Policy& policy,
                                   const DistillConfig& config = {});

// Receives outcomes selected for persistence, in cohort row order.
class OutcomeSink {
public:
    virtual ~OutcomeSink() = default;
    virtual std::size_t save(const DistillationOutcome& outcome, bool allow_unconverged) = 0;
};

struct RecordSummary {
    std::string sample_id;
    bool converged = false;
    std::size_t iterations = 0;
    double final_diff = 0.0;
    double final_score = 0.0;
    std::optional<std::size_t> entry_id;
};

struct DistillationSummary {
    std::vector<RecordSummary> records;
    std::size_t converged = 0;
    std::size_t unconverged = 0;
    std::size_t saved = 0;

    std::vector<std::string> unconverged_ids() const;
    nlohmann::json to_json() const;
};

// Raised by distill_cohort when a record fails. The summary covers the rows
// before the failing one, which have already been handed to the sink.
class CohortError : public std::runtime_error {
public:
    CohortError(const std::string& what, DistillationSummary partial)
        : std::runtime_error(what), partial_(std::move(partial)) {}
    const DistillationSummary& partial() const { return partial_; }

private:
    DistillationSummary partial_;
};

// Runs every row, possibly on several threads, then hands outcomes to the
// sink sequentially in row order so entry ids are deterministic.
DistillationSummary distill_cohort(const FeatureShapMatrix& matrix, const cacs::Acpb& acpb,
                                   const policy::Policy& policy, const DistillConfig& config, OutcomeSink& sink,
                                   std::vector<DistillationOutcome>* outcomes = nullptr);

nlohmann::json to_json(const WeightSet& weights);
WeightSet weights_from_json(const nlohmann::json& doc);

}  // namespace laiml::calibration
