#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "laiml/cacs.hpp"
#include "laiml/calibration.hpp"
#include "laiml/schema.hpp"

namespace laiml::policy {

using calibration::DiagnosticState;
using calibration::FailureCase;
using calibration::RewardSignal;
using calibration::WeightSet;

enum class RequestMode {
    calibrate,      // propose new weights for the loop
    guidance_only,  // already within tolerance; write guidance, keep weights
};

// Complete snapshot for one calibration step.
struct PolicyRequest {
    RequestMode mode = RequestMode::calibrate;
    DiagnosticState state;
    RewardSignal reward;
    std::vector<FailureCase> failures;
    std::vector<FeatureSpec> features;
    double teacher_prob = 0.5;
    std::size_t iteration = 0;
};

// A stored case offered to the policy during prediction.
struct Precedent {
    std::size_t entry_id = 0;
    double similarity = 0.0;
    WeightSet weights;
    std::string guidance;
    double teacher_prob = 0.5;
    std::optional<Label> label;
};

struct PredictionRequest {
    cacs::PatientFeatureTable table;
    std::vector<FeatureSpec> features;
    std::vector<Precedent> precedents;
    std::string support_tier;
    std::size_t run_index = 0;
};

struct PolicyResponse {
    WeightSet weights;
    std::string guidance;
    std::string hypothesis;
    std::vector<std::string> notices;
    std::size_t transport_retries = 0;
    bool fell_back = false;
};

// Policies are shared across records and threads; implementations must not
// keep per-request mutable state.
class Policy {
public:
    virtual ~Policy() = default;
    virtual PolicyResponse propose(const PolicyRequest& request) const = 0;
    virtual PolicyResponse predict(const PredictionRequest& request) const = 0;
    virtual std::string id() const = 0;
};

struct StubConfig {
    double damping = 0.7;
    double weight_max = 10.0;
};

// Deterministic surrogate for the language model.
//  * aligned (S > 0): rescale every weight by 1 + damping * (target/current - 1),
//    where target and current are distances from 0.5;
//  * misaligned: shrink weights of features pushing against the teacher's side
//    of 0.5 by a factor (1 - damping).
PolicyResponse stub_propose(const PolicyRequest& request, const StubConfig& config = {});

// Similarity-weighted mean of precedent weight sets, all-ones without precedents.
PolicyResponse stub_predict(const PredictionRequest& request, const StubConfig& config = {});

class StubPolicy final : public Policy {
public:
    explicit StubPolicy(StubConfig config = {}) : config_(config) {}
    PolicyResponse propose(const PolicyRequest& request) const override { return stub_propose(request, config_); }
    PolicyResponse predict(const PredictionRequest& request) const override { return stub_predict(request, config_); }
    std::string id() const override;

private:
    StubConfig config_;
};

// ---- reply block grammar --------------------------------------------------
//
//   <free text, taken as the hypothesis>
//   ```WEIGHTS
//   <feature name> = <decimal>      (one line per feature)
//   ```
//   ```GUIDANCE
//   <paragraph>
//   ```

inline constexpr std::string_view kWeightsFence = "```WEIGHTS";
inline constexpr std::string_view kGuidanceFence = "```GUIDANCE";
inline constexpr std::string_view kCloseFence = "```";

struct ParseResult {
    std::optional<PolicyResponse> response;
    std::string error;  // set when response is empty
    std::vector<std::string> notices;

    bool ok() const { return response.has_value(); }
};

ParseResult parse_response(std::string_view raw, std::span<const FeatureSpec> features, double weight_max = 10.0);

std::string render_response(const PolicyResponse& response, std::span<const FeatureSpec> features);

// ---- prompt rendering ------------------------------------------------------

inline constexpr std::string_view kPromptVersion = "laiml-policy-prompt/1";

std::string system_prompt();
std::string render_calibration_prompt(const PolicyRequest& request);
std::string render_prediction_prompt(const PredictionRequest& request);

}  // namespace laiml::policy
