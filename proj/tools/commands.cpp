#include "commands.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <memory>
#include <ostream>
#include <set>
#include <sstream>
#include <unordered_map>

#include "laiml/cacs.hpp"
#include "laiml/evaluation.hpp"
#include "laiml/prediction.hpp"
#include "laiml/text_io.hpp"

namespace laiml::cli {
namespace {

void reject_unknown_keys(const nlohmann::json& doc, const std::set<std::string>& known, std::string_view where) {
    if (!doc.is_object()) {
        throw ConfigError(std::string(where) + " must be a JSON object");
    }
    for (const auto& [key, value] : doc.items()) {
        if (!known.contains(key)) {
            throw ConfigError("unknown key '" + key + "' in " + std::string(where));
        }
    }
}

std::shared_ptr<const policy::Policy> make_policy(const PipelineConfig& config) {
    if (config.policy == "stub") {
        return std::make_shared<policy::StubPolicy>(policy::StubConfig{config.damping, config.distill.weight_max});
    }
    auto remote = config.remote;
    remote.weight_max = config.distill.weight_max;
    if (remote.base_url.empty() || remote.model.empty()) {
        throw ConfigError("remote policy needs remote.base_url and remote.model");
    }
    auto transport = std::make_shared<policy::HttpChatTransport>(remote);
    return std::make_shared<policy::RemotePolicy>(remote, std::move(transport));
}

std::string fixed3(const std::optional<double>& v) {
    if (!v) {
        return "undefined";
    }
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", *v);
    return buf;
}

std::string fixed6(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

std::string percent(const std::optional<double>& v) {
    if (!v) {
        return "undefined";
    }
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.1f%%", *v * 100.0);
    return buf;
}

// ---- evaluation inputs -----------------------------------------------------

struct Column {
    std::vector<std::string> ids;
    std::vector<std::string> values;
};

Column read_column(const std::filesystem::path& path, const std::string& column) {
    const auto table = io::parse_delimited(io::read_file(path));
    std::optional<std::size_t> id_col;
    std::optional<std::size_t> value_col;
    for (std::size_t i = 0; i < table.header.size(); ++i) {
        if (table.header[i] == "sample_id") {
            id_col = i;
        } else if (table.header[i] == column) {
            value_col = i;
        }
    }
    if (!id_col || !value_col) {
        throw IngestError(path.string() + ": needs columns 'sample_id' and '" + column + "'");
    }
    Column result;
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& row = table.rows[r];
        if (row.size() != table.header.size()) {
            throw IngestError(path.string() + ": line " + std::to_string(table.line_numbers[r]) + " has " +
                              std::to_string(row.size()) + " fields, expected " +
                              std::to_string(table.header.size()));
        }
        result.ids.push_back(std::string(io::trim(row[*id_col])));
        result.values.push_back(std::string(io::trim(row[*value_col])));
    }
    return result;
}

Label parse_label(const std::string& text, const std::filesystem::path& path, std::size_t row) {
    if (text == "1" || text == "unhealthy") {
        return Label::unhealthy;
    }
    if (text == "0" || text == "healthy") {
        return Label::healthy;
    }
    throw IngestError(path.string() + ": row " + std::to_string(row + 1) + " has label '" + text +
                      "' (expected 0, 1, healthy or unhealthy)");
}

struct LabelFile {
    std::vector<std::string> ids;
    std::vector<Label> labels;
};

LabelFile read_labels(const std::filesystem::path& path) {
    auto column = read_column(path, "label");
    LabelFile file{std::move(column.ids), {}};
    for (std::size_t i = 0; i < column.values.size(); ++i) {
        file.labels.push_back(parse_label(column.values[i], path, i));
    }
    return file;
}

struct ProbabilityFile {
    std::vector<std::string> ids;
    std::vector<double> values;
};

// Accepts prediction files ("probability") and matrix files ("teacher_prob").
ProbabilityFile read_probabilities(const std::filesystem::path& path) {
    const auto header = io::parse_delimited(io::read_file(path)).header;
    const bool matrix_style = std::find(header.begin(), header.end(), "teacher_prob") != header.end() &&
                              std::find(header.begin(), header.end(), "probability") == header.end();
    auto column = read_column(path, matrix_style ? "teacher_prob" : "probability");
    ProbabilityFile file{std::move(column.ids), {}};
    for (std::size_t i = 0; i < column.values.size(); ++i) {
        const auto v = io::parse_double(column.values[i]);
        if (!v) {
            throw IngestError(path.string() + ": row " + std::to_string(i + 1) + " has probability '" +
                              column.values[i] + "'");
        }
        file.values.push_back(*v);
    }
    return file;
}

// Reorders `values` (keyed by `ids`) into the order of `reference`. Both files
// must name the same samples exactly once.
template <typename T>
std::vector<T> align_to(const std::vector<std::string>& reference, const std::filesystem::path& reference_path,
                        const std::vector<std::string>& ids, const std::vector<T>& values,
                        const std::filesystem::path& path) {
    if (ids.size() != reference.size()) {
        throw eval::EvalError("misaligned inputs: " + path.string() + " has " + std::to_string(ids.size()) +
                              " rows, " + reference_path.string() + " has " + std::to_string(reference.size()));
    }
    std::unordered_map<std::string, std::size_t> position;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (!position.emplace(ids[i], i).second) {
            throw eval::EvalError(path.string() + ": duplicate sample_id '" + ids[i] + "'");
        }
    }
    std::vector<T> aligned;
    aligned.reserve(reference.size());
    for (const auto& id : reference) {
        const auto it = position.find(id);
        if (it == position.end()) {
            throw eval::EvalError("misaligned inputs: sample '" + id + "' from " + reference_path.string() +
                                  " is missing in " + path.string());
        }
        aligned.push_back(values[it->second]);
    }
    return aligned;
}

std::string metrics_table(const std::string& title, const eval::ConfusionMatrix& cm,
                          const eval::MetricReport& report) {
    std::ostringstream out;
    out << title << "\n";
    out << "  confusion: tn=" << cm.tn << " fp=" << cm.fp << " fn=" << cm.fn << " tp=" << cm.tp << "\n";
    char line[160];
    std::snprintf(line, sizeof line, "  %-10s %10s %10s %10s %8s\n", "class", "precision", "recall", "f1", "support");
    out << line;
    for (const auto& [name, m] : {std::pair{"healthy", report.healthy}, std::pair{"unhealthy", report.unhealthy}}) {
        std::snprintf(line, sizeof line, "  %-10s %10s %10s %10s %8zu\n", name, fixed3(m.precision).c_str(),
                      fixed3(m.recall).c_str(), fixed3(m.f1).c_str(), m.support);
        out << line;
    }
    out << "  accuracy: " << fixed3(report.accuracy) << "\n";
    return out.str();
}

}  // namespace

// ---- config ----------------------------------------------------------------

void PipelineConfig::validate() const {
    if (!(distill.epsilon >= 0.0) || distill.max_iters == 0 || !(distill.weight_max > 0.0)) {
        throw ConfigError("distill settings need epsilon >= 0, max_iters >= 1 and weight_max > 0");
    }
    if (!(grid_step > 0.0)) {
        throw ConfigError("grid_step must be positive");
    }
    if (retrieval.k == 0 || !(retrieval.threshold >= -1.0 && retrieval.threshold <= 1.0)) {
        throw ConfigError("retrieval needs k >= 1 and a threshold in [-1, 1]");
    }
    if (runs == 0 || runs % 2 == 0) {
        throw ConfigError("runs must be odd, got " + std::to_string(runs));
    }
    if (policy != "stub" && policy != "remote") {
        throw ConfigError("policy must be 'stub' or 'remote', got '" + policy + "'");
    }
    if (!(damping > 0.0 && damping <= 1.0)) {
        throw ConfigError("damping must lie in (0, 1]");
    }
    if (embedder != kb::StandardizedValueEmbedder::kId) {
        throw ConfigError("unsupported embedder '" + embedder + "'");
    }
}

nlohmann::json PipelineConfig::to_json() const {
    nlohmann::json doc;
    doc["seed"] = seed;
    doc["grid_step"] = grid_step;
    doc["distill"] = distill.to_json();
    doc["retrieval"] = retrieval.to_json();
    doc["runs"] = runs;
    doc["policy"] = policy;
    doc["damping"] = damping;
    doc["remote"] = remote.to_json();
    doc["embedder"] = embedder;
    return doc;
}

PipelineConfig PipelineConfig::from_json(const nlohmann::json& doc) {
    reject_unknown_keys(doc,
                        {"seed", "grid_step", "distill", "retrieval", "runs", "predict_threads", "policy", "damping",
                         "remote", "embedder"},
                        "pipeline config");
    PipelineConfig c;
    try {
        c.seed = doc.value("seed", c.seed);
        c.grid_step = doc.value("grid_step", c.grid_step);
        if (doc.contains("distill")) {
            const auto& d = doc["distill"];
            reject_unknown_keys(d,
                                {"epsilon", "max_iters", "weight_max", "literal_alignment", "include_unconverged",
                                 "threads"},
                                "distill config");
            c.distill.epsilon = d.value("epsilon", c.distill.epsilon);
            c.distill.max_iters = d.value("max_iters", c.distill.max_iters);
            c.distill.weight_max = d.value("weight_max", c.distill.weight_max);
            c.distill.literal_alignment = d.value("literal_alignment", c.distill.literal_alignment);
            c.distill.include_unconverged = d.value("include_unconverged", c.distill.include_unconverged);
            c.distill.threads = d.value("threads", c.distill.threads);
        }
        if (doc.contains("retrieval")) {
            const auto& r = doc["retrieval"];
            reject_unknown_keys(r, {"k", "threshold", "allow_global_fallback"}, "retrieval config");
            c.retrieval.k = r.value("k", c.retrieval.k);
            c.retrieval.threshold = r.value("threshold", c.retrieval.threshold);
            c.retrieval.allow_global_fallback = r.value("allow_global_fallback", c.retrieval.allow_global_fallback);
        }
        c.runs = doc.value("runs", c.runs);
        c.predict_threads = doc.value("predict_threads", c.predict_threads);
        c.policy = doc.value("policy", c.policy);
        c.damping = doc.value("damping", c.damping);
        if (doc.contains("remote")) {
            reject_unknown_keys(doc["remote"],
                                {"base_url", "model", "token_env", "timeout_seconds", "retries", "reparse_attempts",
                                 "temperature", "vote_temperature", "max_in_flight", "backoff_initial_seconds",
                                 "weight_max"},
                                "remote config");
            c.remote = policy::RemoteEndpointConfig::from_json(doc["remote"]);
        }
        c.embedder = doc.value("embedder", c.embedder);
    } catch (const nlohmann::json::exception& ex) {
        throw ConfigError(std::string("pipeline config: ") + ex.what());
    }
    c.validate();
    return c;
}

PipelineConfig PipelineConfig::load(const std::filesystem::path& path) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(io::read_file(path));
    } catch (const nlohmann::json::exception& ex) {
        throw ConfigError(path.string() + ": " + ex.what());
    }
    try {
        return from_json(doc);
    } catch (const ConfigError& ex) {
        throw ConfigError(path.string() + ": " + ex.what());
    }
}

std::string PipelineConfig::fingerprint() const { return "crc32:" + io::hex32(io::crc32(to_json().dump())); }

// ---- commands --------------------------------------------------------------

int cmd_synth(const SynthOptions& options, std::ostream& out, std::ostream& err) {
    try {
        auto config = options.config
                          ? eval::SyntheticTeacherConfig::from_json(nlohmann::json::parse(io::read_file(*options.config)))
                          : eval::default_synthetic_config();
        if (options.seed) {
            config.seed = *options.seed;
        }
        const auto matrix = eval::synth_generate(config, options.n);
        write_matrix(options.out, matrix);
        if (options.schema_out) {
            write_schema(*options.schema_out, matrix.schema);
        }
        if (options.config_out) {
            io::write_file(*options.config_out, config.to_json().dump(2) + "\n");
        }
        out << "wrote " << matrix.rows.size() << " synthetic rows (" << matrix.schema.size()
            << " features, seed " << config.seed << ") to " << options.out.string() << "\n";
        return 0;
    } catch (const std::exception& ex) {
        err << "synth: " << ex.what() << "\n";
        return 1;
    }
}

int cmd_extract(const ExtractOptions& options, std::ostream& out, std::ostream& err) {
    try {
        const auto schema = load_schema(options.schema);
        const auto matrix = load_matrix(options.matrix, schema);
        const auto grid = haga::Grid::with_step(options.step.value_or(0.5));
        const auto acpb = cacs::extract(matrix, grid);
        cacs::write_acpb(options.out, acpb);
        out << "contribution base from " << matrix.rows.size() << " rows, step " << io::format_double(grid.step)
            << "\n";
        for (std::size_t j = 0; j < schema.size(); ++j) {
            out << "  " << schema.feature(j).name << ": " << acpb.features[j].size() << " intervals\n";
        }
        return 0;
    } catch (const std::exception& ex) {
        err << "extract: " << ex.what() << "\n";
        return 1;
    }
}

int cmd_distill(const DistillOptions& options, const PipelineConfig& config, std::ostream& out, std::ostream& err) {
    auto summary_doc = [&](const calibration::DistillationSummary& summary, const std::string& policy_id) {
        auto doc = summary.to_json();
        doc["config"] = config.to_json();
        doc["config_fingerprint"] = config.fingerprint();
        doc["policy"] = policy_id;
        return doc;
    };
    std::string policy_id = config.policy;
    try {
        config.validate();
        const auto acpb = cacs::load_acpb(options.acpb);
        const auto matrix = load_matrix(options.matrix, acpb.schema);
        const auto policy = make_policy(config);
        policy_id = policy->id();

        auto embedder = std::make_shared<kb::StandardizedValueEmbedder>(kb::Standardization::from_matrix(matrix));
        kb::KnowledgeBase store(acpb.schema, std::move(embedder), config.retrieval);
        calibration::DistillationSummary summary;
        try {
            summary = calibration::distill_cohort(matrix, acpb, *policy, config.distill, store);
        } catch (const calibration::CohortError& ex) {
            auto doc = summary_doc(ex.partial(), policy_id);
            doc["error"] = ex.what();
            io::write_file(options.summary, doc.dump(2) + "\n");
            err << "distill: " << ex.what() << "\n";
            err << "distill: partial summary (" << ex.partial().records.size() << " records) written to "
                << options.summary.string() << "; store not written\n";
            return 1;
        }
        store.persist(options.out_store);
        io::write_file(options.summary, summary_doc(summary, policy_id).dump(2) + "\n");

        const auto total = summary.records.size();
        out << "distilled " << total << " records with policy " << policy_id << ": " << summary.converged
            << " converged";
        if (total > 0) {
            out << " (" << percent(static_cast<double>(summary.converged) / static_cast<double>(total)) << ")";
        }
        out << ", " << summary.unconverged << " unconverged, " << summary.saved << " saved\n";
        for (const auto& id : summary.unconverged_ids()) {
            out << "  unconverged: " << id << "\n";
        }
        return 0;
    } catch (const std::exception& ex) {
        err << "distill: " << ex.what() << "\n";
        return 1;
    }
}

int cmd_predict(const PredictOptions& options, const PipelineConfig& config, std::ostream& out, std::ostream& err) {
    try {
        config.validate();
        if (options.case_file.has_value() == options.cases_file.has_value()) {
            throw ConfigError("give exactly one of --case or --cases");
        }
        if (options.cases_file && !options.predictions) {
            throw ConfigError("--cases needs --predictions");
        }
        const auto acpb = cacs::load_acpb(options.acpb);
        const auto store = kb::KnowledgeBase::open(options.store);
        const auto policy = make_policy(config);
        prediction::PredictConfig predict_config;
        predict_config.retrieval = config.retrieval;
        predict_config.runs = config.runs;
        predict_config.threads = config.predict_threads;

        if (options.case_file) {
            const auto sample = load_case(*options.case_file, acpb.schema);
            const auto vote = prediction::predict_voted(sample, acpb, store, *policy, predict_config);
            const auto table = cacs::match_record(sample, acpb);
            const auto report =
                prediction::generate_report(sample.sample_id, vote, table, store, policy->id(), config.fingerprint());
            if (options.report_text) {
                io::write_file(*options.report_text, prediction::render_text(report));
            }
            if (options.report_json) {
                io::write_file(*options.report_json, prediction::to_json(report).dump(2) + "\n");
            }
            out << sample.sample_id << ": "
                << (report.classification == Label::unhealthy ? "unhealthy" : "healthy") << " (probability "
                << fixed6(report.probability) << ", votes " << report.unhealthy_votes << "/"
                << report.unhealthy_votes + report.healthy_votes << " unhealthy, support " << report.support_tier
                << ")\n";
            return 0;
        }

        const auto samples = load_cases(*options.cases_file, acpb.schema);
        std::string csv = "sample_id,probability,label,tier\n";
        for (const auto& sample : samples) {
            const auto vote = prediction::predict_voted(sample, acpb, store, *policy, predict_config);
            const auto& run = vote.runs[vote.representative];
            csv += sample.sample_id + "," + io::format_double(vote.probability) + "," +
                   (vote.classification == Label::unhealthy ? "1" : "0") + "," +
                   std::string(kb::to_string(run.retrieved.tier)) + "\n";
        }
        io::write_file(*options.predictions, csv);
        out << "predicted " << samples.size() << " cases to " << options.predictions->string() << "\n";
        return 0;
    } catch (const std::exception& ex) {
        err << "predict: " << ex.what() << "\n";
        return 1;
    }
}

int cmd_evaluate(const EvaluateOptions& options, std::ostream& out, std::ostream& err) {
    try {
        nlohmann::json doc = nlohmann::json::object();
        std::ostringstream text;
        bool did_something = false;

        std::optional<LabelFile> truth;
        if (options.truth) {
            truth = read_labels(*options.truth);
        }
        std::optional<LabelFile> a;
        std::optional<LabelFile> b;
        for (auto [path, slot, key] : {std::tuple{&options.pred_a, &a, "a"}, std::tuple{&options.pred_b, &b, "b"}}) {
            if (!*path) {
                continue;
            }
            if (!truth) {
                throw ConfigError("prediction metrics need --truth");
            }
            auto labels = read_labels(**path);
            labels.labels = align_to(truth->ids, *options.truth, labels.ids, labels.labels, **path);
            labels.ids = truth->ids;
            *slot = std::move(labels);
            const auto cm = eval::ConfusionMatrix::from_labels((*slot)->labels, truth->labels);
            const auto report = eval::class_metrics(cm);
            doc["predictions_" + std::string(key)] = {{"confusion", eval::to_json(cm)},
                                                      {"metrics", eval::to_json(report)}};
            text << metrics_table("Predictions " + std::string(key) + " (" + (*path)->filename().string() + ")", cm,
                                  report)
                 << "\n";
            did_something = true;
        }
        if (a && b) {
            const auto breakdown = eval::concordance(a->labels, b->labels, truth->labels);
            doc["concordance"] = eval::to_json(breakdown);
            text << "Concordance (n=" << breakdown.n() << ")\n";
            for (const auto g : {eval::Agreement::both_correct, eval::Agreement::both_wrong,
                                 eval::Agreement::a_only_correct, eval::Agreement::b_only_correct}) {
                char line[96];
                std::snprintf(line, sizeof line, "  %-16s %5zu  %s\n", std::string(eval::to_string(g)).c_str(),
                              breakdown.count(g), percent(breakdown.fraction(g)).c_str());
                text << line;
            }
            text << "\n";
            if (options.categories) {
                std::string csv = "sample_id,category\n";
                for (std::size_t i = 0; i < breakdown.per_sample.size(); ++i) {
                    csv += truth->ids[i] + "," + std::string(eval::to_string(breakdown.per_sample[i])) + "\n";
                }
                io::write_file(*options.categories, csv);
            }
        } else if (options.categories) {
            throw ConfigError("--categories needs --pred-a, --pred-b and --truth");
        }

        if (options.teacher_probs.has_value() != options.infer_probs.has_value()) {
            throw ConfigError("bias statistics need both --teacher-probs and --infer-probs");
        }
        if (options.teacher_probs) {
            const auto teacher = read_probabilities(*options.teacher_probs);
            const auto infer = read_probabilities(*options.infer_probs);
            const auto infer_values =
                align_to(teacher.ids, *options.teacher_probs, infer.ids, infer.values, *options.infer_probs);
            const auto stats = eval::bias_stats(teacher.values, infer_values);
            doc["bias"] = eval::to_json(stats);
            text << "Absolute deviation (n=" << stats.n << ")\n"
                 << "  mean   " << fixed6(stats.mean) << "\n"
                 << "  std    " << fixed6(stats.stddev) << "\n"
                 << "  median " << fixed6(stats.median) << "\n"
                 << "  min    " << fixed6(stats.min) << "\n"
                 << "  max    " << fixed6(stats.max) << "\n\n";
            did_something = true;
        }
        if (!did_something) {
            throw ConfigError("nothing to evaluate: give --pred-a/--truth and/or --teacher-probs/--infer-probs");
        }
        if (options.out_json) {
            io::write_file(*options.out_json, doc.dump(2) + "\n");
        }
        if (options.out_text) {
            io::write_file(*options.out_text, text.str());
        }
        out << text.str();
        return 0;
    } catch (const std::exception& ex) {
        err << "evaluate: " << ex.what() << "\n";
        return 1;
    }
}

}  // namespace laiml::cli
