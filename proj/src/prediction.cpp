#include "laiml/prediction.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <sstream>
#include <thread>

namespace laiml::prediction {
namespace {

std::string fixed(double value, int digits = 4) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, value);
    return buf;
}

std::string signed_fixed(double value) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%+.4f", value);
    return buf;
}

std::string_view label_name(Label label) { return label == Label::unhealthy ? "unhealthy" : "healthy"; }

nlohmann::json label_json(const std::optional<Label>& label) {
    return label ? nlohmann::json(std::string(label_name(*label))) : nlohmann::json(nullptr);
}

}  // namespace

nlohmann::json PredictConfig::to_json() const {
    return {{"retrieval", retrieval.to_json()}, {"runs", runs}};
}

Label classify(double probability) { return probability >= 0.5 ? Label::unhealthy : Label::healthy; }

std::vector<policy::Precedent> build_precedents(const kb::KnowledgeBase& store, const kb::RetrievalResult& retrieved) {
    const auto entries = store.snapshot();
    std::vector<policy::Precedent> precedents;
    precedents.reserve(retrieved.selected.size());
    for (const auto& selected : retrieved.selected) {
        if (selected.entry_id >= entries->size()) {
            throw PredictionError("retrieval returned unknown entry " + std::to_string(selected.entry_id));
        }
        const auto& e = (*entries)[selected.entry_id];
        precedents.push_back({e.entry_id, selected.mean_similarity, e.weights, e.guidance, e.teacher_prob, e.label});
    }
    return precedents;
}

PredictionRun predict_once(const SampleRecord& sample, const cacs::Acpb& acpb, const kb::KnowledgeBase& store,
                           const policy::Policy& policy, const PredictConfig& config, std::size_t run_index) {
    if (!(store.schema() == acpb.schema)) {
        throw PredictionError("knowledge base schema does not match the contribution base schema");
    }
    PredictionRun run;
    run.run_index = run_index;
    const auto table = cacs::match_record(sample, acpb);
    run.retrieved = kb::fgmr_retrieve(store, table, config.retrieval);

    policy::PredictionRequest request;
    request.table = table;
    request.features = acpb.schema.features();
    request.precedents = build_precedents(store, run.retrieved);
    request.support_tier = std::string(kb::to_string(run.retrieved.tier));
    request.run_index = run_index;

    auto response = policy.predict(request);
    if (response.weights.size() != table.size()) {
        throw PredictionError("policy returned " + std::to_string(response.weights.size()) + " weights for " +
                              std::to_string(table.size()) + " features");
    }
    run.hypothesis = std::move(response.hypothesis);
    run.guidance = std::move(response.guidance);
    run.weights = std::move(response.weights);
    run.fell_back = response.fell_back;
    run.notices = std::move(response.notices);
    run.raw_probability = calibration::raw_infer_probability(table, run.weights);
    run.probability = calibration::infer_probability(table, run.weights);
    run.classification = classify(run.probability);
    return run;
}

VoteResult tally(std::vector<PredictionRun> runs) {
    if (runs.empty() || runs.size() % 2 == 0) {
        throw PredictionError("majority vote needs an odd number of runs, got " + std::to_string(runs.size()));
    }
    std::sort(runs.begin(), runs.end(),
              [](const PredictionRun& a, const PredictionRun& b) { return a.run_index < b.run_index; });
    VoteResult vote;
    for (const auto& run : runs) {
        (run.classification == Label::unhealthy ? vote.unhealthy_votes : vote.healthy_votes) += 1;
    }
    vote.classification = vote.unhealthy_votes > vote.healthy_votes ? Label::unhealthy : Label::healthy;

    std::vector<double> majority;
    bool have_representative = false;
    for (std::size_t i = 0; i < runs.size(); ++i) {
        if (runs[i].classification != vote.classification) {
            continue;
        }
        majority.push_back(runs[i].probability);
        if (!have_representative) {
            vote.representative = i;
            have_representative = true;
        }
    }
    std::sort(majority.begin(), majority.end());
    double sum = 0.0;
    for (const double p : majority) {
        sum += p;
    }
    vote.probability = sum / static_cast<double>(majority.size());
    vote.runs = std::move(runs);
    return vote;
}

VoteResult predict_voted(const SampleRecord& sample, const cacs::Acpb& acpb, const kb::KnowledgeBase& store,
                         const policy::Policy& policy, const PredictConfig& config) {
    if (config.runs == 0 || config.runs % 2 == 0) {
        throw PredictionError("voting runs must be odd, got " + std::to_string(config.runs));
    }
    std::vector<std::optional<PredictionRun>> slots(config.runs);
    std::vector<std::exception_ptr> errors(config.runs);

    auto execute = [&](std::size_t i) {
        try {
            slots[i] = predict_once(sample, acpb, store, policy, config, i);
        } catch (...) {
            errors[i] = std::current_exception();
        }
    };
    if (config.threads > 1) {
        std::vector<std::jthread> workers;
        workers.reserve(config.runs);
        for (std::size_t i = 0; i < config.runs; ++i) {
            workers.emplace_back(execute, i);
        }
    } else {
        for (std::size_t i = 0; i < config.runs; ++i) {
            execute(i);
            if (errors[i]) {
                break;
            }
        }
    }

    std::vector<PredictionRun> completed;
    for (auto& slot : slots) {
        if (slot) {
            completed.push_back(std::move(*slot));
        }
    }
    for (std::size_t i = 0; i < config.runs; ++i) {
        if (!errors[i]) {
            continue;
        }
        std::string what = "unknown error";
        try {
            std::rethrow_exception(errors[i]);
        } catch (const std::exception& ex) {
            what = ex.what();
        } catch (...) {
        }
        throw VoteError("prediction run " + std::to_string(i + 1) + " of " + std::to_string(config.runs) +
                            " failed: " + what,
                        i, std::move(completed));
    }
    return tally(std::move(completed));
}

DiagnosisReport generate_report(const std::string& sample_id, const VoteResult& vote,
                                const cacs::PatientFeatureTable& table, const kb::KnowledgeBase& store,
                                const std::string& policy_id, const std::string& config_fingerprint) {
    const auto& run = vote.runs.at(vote.representative);
    const auto& schema = store.schema();
    if (run.weights.size() != table.size() || table.size() != schema.size()) {
        throw PredictionError("report inputs disagree on the number of features");
    }

    DiagnosisReport report;
    report.sample_id = sample_id;
    report.probability = vote.probability;
    report.classification = vote.classification;
    report.raw_probability = run.raw_probability;
    report.unhealthy_votes = vote.unhealthy_votes;
    report.healthy_votes = vote.healthy_votes;
    report.hypothesis = run.hypothesis;
    report.guidance = run.guidance;
    report.policy_id = policy_id;
    report.config_fingerprint = config_fingerprint;

    for (std::size_t i = 0; i < table.size(); ++i) {
        const auto& m = table.entries[i];
        report.contributions.push_back(
            {schema.feature(i).name, m.raw_value, m.contribution_prob, run.weights[i], m.contribution_prob * run.weights[i]});
    }
    std::stable_sort(report.contributions.begin(), report.contributions.end(),
                     [](const RankedContribution& a, const RankedContribution& b) {
                         return std::abs(a.product) > std::abs(b.product);
                     });

    report.support_tier = std::string(kb::to_string(run.retrieved.tier));
    const auto entries = store.snapshot();
    for (const auto& selected : run.retrieved.selected) {
        const auto& e = entries->at(selected.entry_id);
        report.precedents.push_back(
            {selected.entry_id, e.sample_id, selected.mean_similarity, selected.group_similarity, e.label});
    }
    report.out_of_support = report.precedents.empty();
    report.non_strict_support = run.retrieved.tier != kb::Tier::intersection;
    return report;
}

nlohmann::json to_json(const DiagnosisReport& report) {
    nlohmann::json doc;
    doc["format"] = "laiml-report";
    doc["version"] = 1;
    doc["sample_id"] = report.sample_id;
    doc["probability"] = report.probability;
    doc["classification"] = std::string(label_name(report.classification));
    doc["raw_probability"] = report.raw_probability;
    doc["votes"] = {{"unhealthy", report.unhealthy_votes}, {"healthy", report.healthy_votes}};
    doc["contributions"] = nlohmann::json::array();
    for (const auto& c : report.contributions) {
        doc["contributions"].push_back({{"feature", c.feature},
                                        {"raw_value", c.raw_value},
                                        {"contribution_prob", c.contribution_prob},
                                        {"weight", c.weight},
                                        {"product", c.product}});
    }
    doc["support"] = {{"tier", report.support_tier},
                      {"non_strict", report.non_strict_support},
                      {"out_of_support", report.out_of_support}};
    doc["precedents"] = nlohmann::json::array();
    for (const auto& p : report.precedents) {
        doc["precedents"].push_back({{"entry_id", p.entry_id},
                                     {"sample_id", p.sample_id},
                                     {"mean_similarity", p.mean_similarity},
                                     {"group_similarity", p.group_similarity},
                                     {"label", label_json(p.label)}});
    }
    doc["hypothesis"] = report.hypothesis;
    doc["guidance"] = report.guidance;
    doc["policy"] = report.policy_id;
    doc["config_fingerprint"] = report.config_fingerprint;
    return doc;
}

std::string render_text(const DiagnosisReport& report) {
    std::ostringstream out;
    out << "Diagnosis report for sample " << report.sample_id << "\n\n";
    out << "Classification:    " << label_name(report.classification) << "\n";
    out << "Probability:       " << fixed(report.probability) << "\n";
    out << "Raw probability:   " << fixed(report.raw_probability) << " (0.5 + sum of contributions)\n";
    out << "Votes:             " << report.unhealthy_votes << " unhealthy / " << report.healthy_votes
        << " healthy\n\n";

    out << "Feature contributions (contribution x weight, largest first):\n";
    std::size_t width = 7;
    for (const auto& c : report.contributions) {
        width = std::max(width, c.feature.size());
    }
    char line[256];
    std::snprintf(line, sizeof line, "  %-*s %12s %12s %10s %12s\n", static_cast<int>(width), "feature", "value",
                  "contrib", "weight", "product");
    out << line;
    for (const auto& c : report.contributions) {
        std::snprintf(line, sizeof line, "  %-*s %12s %12s %10s %12s\n", static_cast<int>(width), c.feature.c_str(),
                      fixed(c.raw_value).c_str(), signed_fixed(c.contribution_prob).c_str(),
                      fixed(c.weight).c_str(), signed_fixed(c.product).c_str());
        out << line;
    }

    out << "\nPrecedent support: " << report.support_tier;
    if (report.out_of_support) {
        out << " (out of support: no comparable stored case)";
    } else if (report.non_strict_support) {
        out << " (non-strict: precedents did not match in every feature group)";
    }
    out << "\n";
    for (const auto& p : report.precedents) {
        out << "  #" << p.entry_id << " " << p.sample_id << "  similarity " << fixed(p.mean_similarity) << " ["
            << fixed(p.group_similarity[0]) << ", " << fixed(p.group_similarity[1]) << ", "
            << fixed(p.group_similarity[2]) << "]";
        if (p.label) {
            out << "  " << label_name(*p.label);
        }
        out << "\n";
    }

    out << "\nHypothesis:\n  " << report.hypothesis << "\n";
    out << "\nGuidance:\n  " << report.guidance << "\n";
    out << "\nPolicy: " << report.policy_id << "\n";
    out << "Config fingerprint: " << report.config_fingerprint << "\n";
    return out.str();
}

}  // namespace laiml::prediction
