#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "laiml/cacs.hpp"
#include "laiml/calibration.hpp"
#include "laiml/knowledge_base.hpp"
#include "laiml/policy.hpp"
#include "laiml/schema.hpp"

namespace laiml::prediction {

class PredictionError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct PredictConfig {
    kb::RetrievalConfig retrieval;
    std::size_t runs = 3;
    std::size_t threads = 1;  // voting runs executed concurrently when > 1

    nlohmann::json to_json() const;
};

// Probabilities of exactly 0.5 count as unhealthy.
Label classify(double probability);

struct PredictionRun {
    std::size_t run_index = 0;
    kb::RetrievalResult retrieved;
    std::string hypothesis;
    std::string guidance;
    calibration::WeightSet weights;
    double raw_probability = 0.5;  // before clamping
    double probability = 0.5;
    Label classification = Label::unhealthy;
    bool fell_back = false;
    std::vector<std::string> notices;
};

// Raised when a voting run fails; carries the runs that completed.
class VoteError : public PredictionError {
public:
    VoteError(const std::string& what, std::size_t failed_run, std::vector<PredictionRun> partial)
        : PredictionError(what), failed_run_(failed_run), partial_(std::move(partial)) {}
    std::size_t failed_run() const { return failed_run_; }
    const std::vector<PredictionRun>& partial() const { return partial_; }

private:
    std::size_t failed_run_;
    std::vector<PredictionRun> partial_;
};

std::vector<policy::Precedent> build_precedents(const kb::KnowledgeBase& store, const kb::RetrievalResult& retrieved);

PredictionRun predict_once(const SampleRecord& sample, const cacs::Acpb& acpb, const kb::KnowledgeBase& store,
                           const policy::Policy& policy, const PredictConfig& config, std::size_t run_index = 0);

struct VoteResult {
    Label classification = Label::unhealthy;
    double probability = 0.5;  // mean over the majority-class runs
    std::size_t unhealthy_votes = 0;
    std::size_t healthy_votes = 0;
    std::size_t representative = 0;  // first majority-class run
    std::vector<PredictionRun> runs;
};

// Majority vote over an odd number of runs; independent of run order except
// for the choice of representative.
VoteResult tally(std::vector<PredictionRun> runs);

VoteResult predict_voted(const SampleRecord& sample, const cacs::Acpb& acpb, const kb::KnowledgeBase& store,
                         const policy::Policy& policy, const PredictConfig& config = {});

struct RankedContribution {
    std::string feature;
    double raw_value = 0.0;
    double contribution_prob = 0.0;
    double weight = 0.0;
    double product = 0.0;  // contribution_prob * weight
};

struct PrecedentRef {
    std::size_t entry_id = 0;
    std::string sample_id;
    double mean_similarity = 0.0;
    std::array<double, kGroupCount> group_similarity{};
    std::optional<Label> label;
};

struct DiagnosisReport {
    std::string sample_id;
    double probability = 0.5;
    Label classification = Label::unhealthy;
    double raw_probability = 0.5;
    std::size_t unhealthy_votes = 0;
    std::size_t healthy_votes = 0;
    std::vector<RankedContribution> contributions;  // by |product| descending
    std::string support_tier;
    std::vector<PrecedentRef> precedents;
    bool non_strict_support = false;  // precedents did not agree in all groups
    bool out_of_support = false;      // no precedent at all
    std::string hypothesis;
    std::string guidance;
    std::string policy_id;
    std::string config_fingerprint;
};

DiagnosisReport generate_report(const std::string& sample_id, const VoteResult& vote,
                                const cacs::PatientFeatureTable& table, const kb::KnowledgeBase& store,
                                const std::string& policy_id, const std::string& config_fingerprint);

nlohmann::json to_json(const DiagnosisReport& report);
std::string render_text(const DiagnosisReport& report);

}  // namespace laiml::prediction
