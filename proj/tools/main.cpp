#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "commands.hpp"

namespace {

// Flags given on the command line override the config file.
struct ConfigFlags {
    std::optional<std::string> config_path;
    std::optional<double> epsilon;
    std::optional<std::size_t> max_iters;
    std::optional<double> weight_max;
    std::optional<double> damping;
    std::optional<std::size_t> k;
    std::optional<double> threshold;
    std::optional<std::size_t> runs;
    std::optional<std::size_t> threads;
    std::optional<std::string> policy;
    std::optional<std::string> base_url;
    std::optional<std::string> model;
    bool include_unconverged = false;
    bool literal_alignment = false;
    bool no_global_fallback = false;

    void add_common(CLI::App* cmd) {
        cmd->add_option("--config", config_path, "Pipeline config JSON");
        cmd->add_option("--policy", policy, "Policy: stub or remote")->check(CLI::IsMember({"stub", "remote"}));
        cmd->add_option("--endpoint", base_url, "Remote policy base URL");
        cmd->add_option("--model", model, "Remote policy model name");
        cmd->add_option("--weight-max", weight_max, "Upper bound for weights");
        cmd->add_option("--damping", damping, "Stub policy damping");
        cmd->add_option("--k", k, "Top-k per feature group");
        cmd->add_option("--threshold", threshold, "Cosine similarity threshold");
        cmd->add_flag("--no-global-fallback", no_global_fallback, "Disable the global retrieval fallback");
        cmd->add_option("--threads", threads, "Worker threads");
    }

    laiml::cli::PipelineConfig resolve() const {
        auto config = config_path ? laiml::cli::PipelineConfig::load(*config_path) : laiml::cli::PipelineConfig{};
        if (epsilon) config.distill.epsilon = *epsilon;
        if (max_iters) config.distill.max_iters = *max_iters;
        if (weight_max) config.distill.weight_max = *weight_max;
        if (damping) config.damping = *damping;
        if (k) config.retrieval.k = *k;
        if (threshold) config.retrieval.threshold = *threshold;
        if (runs) config.runs = *runs;
        if (threads) {
            config.distill.threads = *threads;
            config.predict_threads = *threads;
        }
        if (policy) config.policy = *policy;
        if (base_url) config.remote.base_url = *base_url;
        if (model) config.remote.model = *model;
        if (include_unconverged) config.distill.include_unconverged = true;
        if (literal_alignment) config.distill.literal_alignment = true;
        if (no_global_fallback) config.retrieval.allow_global_fallback = false;
        config.validate();
        return config;
    }
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"laiml: distil a tabular teacher's attributions into calibrated, case-based predictions"};
    app.require_subcommand(1);

    laiml::cli::SynthOptions synth;
    auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic additive-teacher matrix");
    synth_cmd->add_option("--config", synth.config, "Synthetic teacher config JSON (default: built-in)");
    synth_cmd->add_option("--n", synth.n, "Number of rows")->capture_default_str();
    synth_cmd->add_option("--seed", synth.seed, "Sampling seed (overrides the config)");
    synth_cmd->add_option("--out", synth.out, "Output matrix CSV")->required();
    synth_cmd->add_option("--schema-out", synth.schema_out, "Also write the feature schema JSON");
    synth_cmd->add_option("--config-out", synth.config_out, "Also write the teacher config used");

    laiml::cli::ExtractOptions extract;
    std::optional<std::string> extract_config;
    auto* extract_cmd = app.add_subcommand("extract", "Build the contribution base from a matrix");
    extract_cmd->add_option("--schema", extract.schema, "Feature schema JSON")->required();
    extract_cmd->add_option("--matrix", extract.matrix, "Feature/attribution matrix CSV")->required();
    extract_cmd->add_option("--out", extract.out, "Output contribution base JSON")->required();
    extract_cmd->add_option("--step", extract.step, "Grid step (half width is step/2)");
    extract_cmd->add_option("--config", extract_config, "Pipeline config JSON (grid_step)");

    laiml::cli::DistillOptions distill;
    ConfigFlags distill_flags;
    auto* distill_cmd = app.add_subcommand("distill", "Calibrate weights per record and build the knowledge base");
    distill_cmd->add_option("--acpb", distill.acpb, "Contribution base JSON")->required();
    distill_cmd->add_option("--matrix", distill.matrix, "Training matrix CSV")->required();
    distill_cmd->add_option("--out-store", distill.out_store, "Output knowledge base file")->required();
    distill_cmd->add_option("--summary", distill.summary, "Output summary JSON")->required();
    distill_cmd->add_option("--epsilon", distill_flags.epsilon, "Convergence threshold on relative deviation");
    distill_cmd->add_option("--max-iters", distill_flags.max_iters, "Iteration cap per record");
    distill_cmd->add_flag("--include-unconverged", distill_flags.include_unconverged,
                          "Also store records that did not converge (flagged)");
    distill_cmd->add_flag("--literal-alignment", distill_flags.literal_alignment,
                          "Use the uncentred alignment term (t - 0.5) * p");
    distill_flags.add_common(distill_cmd);

    laiml::cli::PredictOptions predict;
    ConfigFlags predict_flags;
    auto* predict_cmd = app.add_subcommand("predict", "Predict new cases against the knowledge base");
    predict_cmd->add_option("--acpb", predict.acpb, "Contribution base JSON")->required();
    predict_cmd->add_option("--store", predict.store, "Knowledge base file")->required();
    predict_cmd->add_option("--case", predict.case_file, "Case CSV with exactly one row");
    predict_cmd->add_option("--report-text", predict.report_text, "Text report output");
    predict_cmd->add_option("--report-json", predict.report_json, "JSON report output");
    predict_cmd->add_option("--cases", predict.cases_file, "Case CSV with many rows (batch mode)");
    predict_cmd->add_option("--predictions", predict.predictions, "Batch predictions CSV output");
    predict_cmd->add_option("--runs", predict_flags.runs, "Voting runs (odd)");
    predict_flags.add_common(predict_cmd);

    laiml::cli::EvaluateOptions evaluate;
    auto* evaluate_cmd = app.add_subcommand("evaluate", "Classification metrics, concordance and bias statistics");
    evaluate_cmd->add_option("--pred-a", evaluate.pred_a, "Predictions CSV (sample_id,label)");
    evaluate_cmd->add_option("--pred-b", evaluate.pred_b, "Second predictions CSV for concordance");
    evaluate_cmd->add_option("--truth", evaluate.truth, "Ground-truth CSV (sample_id,label)");
    evaluate_cmd->add_option("--teacher-probs", evaluate.teacher_probs, "Teacher probabilities CSV");
    evaluate_cmd->add_option("--infer-probs", evaluate.infer_probs, "Inferred probabilities CSV");
    evaluate_cmd->add_option("--out-json", evaluate.out_json, "Metrics JSON output");
    evaluate_cmd->add_option("--out-text", evaluate.out_text, "Metrics text output");
    evaluate_cmd->add_option("--categories", evaluate.categories, "Per-sample concordance categories CSV");

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth_cmd->parsed()) {
            return laiml::cli::cmd_synth(synth, std::cout, std::cerr);
        }
        if (extract_cmd->parsed()) {
            if (!extract.step) {
                const auto config = extract_config ? laiml::cli::PipelineConfig::load(*extract_config)
                                                   : laiml::cli::PipelineConfig{};
                extract.step = config.grid_step;
            }
            return laiml::cli::cmd_extract(extract, std::cout, std::cerr);
        }
        if (distill_cmd->parsed()) {
            return laiml::cli::cmd_distill(distill, distill_flags.resolve(), std::cout, std::cerr);
        }
        if (predict_cmd->parsed()) {
            return laiml::cli::cmd_predict(predict, predict_flags.resolve(), std::cout, std::cerr);
        }
        if (evaluate_cmd->parsed()) {
            return laiml::cli::cmd_evaluate(evaluate, std::cout, std::cerr);
        }
    } catch (const std::exception& ex) {
        std::cerr << "laiml: " << ex.what() << "\n";
        return 1;
    }
    return 1;
}
