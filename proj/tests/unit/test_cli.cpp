#include <doctest.h>

#include <sstream>

#include "commands.hpp"
#include "fixtures.hpp"
#include "laiml/cacs.hpp"
#include "laiml/evaluation.hpp"
#include "laiml/text_io.hpp"

using namespace laiml;
using namespace laiml::cli;
using laiml::testing::TempDir;

namespace {

struct Captured {
    int code = 0;
    std::string out;
    std::string err;
};

template <typename Fn>
Captured capture(Fn&& fn) {
    std::ostringstream out;
    std::ostringstream err;
    Captured c;
    c.code = fn(out, err);
    c.out = out.str();
    c.err = err.str();
    return c;
}

// Synthetic cohort plus its contribution base inside `dir`.
void prepare(const TempDir& dir, std::size_t n) {
    SynthOptions synth;
    synth.n = n;
    synth.out = dir / "matrix.csv";
    synth.schema_out = dir / "schema.json";
    REQUIRE(capture([&](auto& o, auto& e) { return cmd_synth(synth, o, e); }).code == 0);
    ExtractOptions extract{dir / "schema.json", dir / "matrix.csv", dir / "acpb.json", std::nullopt};
    REQUIRE(capture([&](auto& o, auto& e) { return cmd_extract(extract, o, e); }).code == 0);
}

Captured distill(const TempDir& dir, const PipelineConfig& config, const std::string& tag) {
    DistillOptions options{dir / "acpb.json", dir / "matrix.csv", dir / (tag + ".dkb"), dir / (tag + ".json")};
    return capture([&](auto& o, auto& e) { return cmd_distill(options, config, o, e); });
}

}  // namespace

TEST_CASE("extract reports a missing column by name") {
    TempDir dir;
    write_schema(dir / "schema.json", laiml::testing::continuous_schema(3));
    io::write_file(dir / "matrix.csv",
                   "# base_value=0\nsample_id,v_f0,v_f1,v_f2,s_f0,s_f2,teacher_prob,label\nr1,1,2,3,0.1,0.2,0.6,1\n");
    ExtractOptions options{dir / "schema.json", dir / "matrix.csv", dir / "acpb.json", std::nullopt};
    const auto result = capture([&](auto& o, auto& e) { return cmd_extract(options, o, e); });
    CHECK(result.code != 0);
    CHECK(result.err.find("s_f1") != std::string::npos);
    CHECK_FALSE(std::filesystem::exists(dir / "acpb.json"));
}

TEST_CASE("extract honours the grid step override") {
    TempDir dir;
    prepare(dir, 50);
    ExtractOptions options{dir / "schema.json", dir / "matrix.csv", dir / "wide.json", 1.0};
    const auto result = capture([&](auto& o, auto& e) { return cmd_extract(options, o, e); });
    REQUIRE(result.code == 0);
    const auto acpb = cacs::load_acpb(dir / "wide.json");
    CHECK(acpb.grid.step == 1.0);
    CHECK(acpb.grid.half_width == 0.5);
    CHECK(result.out.find("step 1") != std::string::npos);
}

TEST_CASE("synthetic cohorts of size zero cannot be extracted") {
    TempDir dir;
    SynthOptions synth;
    synth.n = 0;
    synth.out = dir / "matrix.csv";
    synth.schema_out = dir / "schema.json";
    REQUIRE(capture([&](auto& o, auto& e) { return cmd_synth(synth, o, e); }).code == 0);
    ExtractOptions extract{dir / "schema.json", dir / "matrix.csv", dir / "acpb.json", std::nullopt};
    const auto result = capture([&](auto& o, auto& e) { return cmd_extract(extract, o, e); });
    CHECK(result.code != 0);
    CHECK(result.err.find("empty") != std::string::npos);
}

TEST_CASE("synthetic config round-trips through the CLI") {
    TempDir dir;
    SynthOptions synth;
    synth.n = 20;
    synth.seed = 9;
    synth.out = dir / "a.csv";
    synth.config_out = dir / "teacher.json";
    REQUIRE(capture([&](auto& o, auto& e) { return cmd_synth(synth, o, e); }).code == 0);
    SynthOptions again;
    again.n = 20;
    again.config = dir / "teacher.json";
    again.out = dir / "b.csv";
    REQUIRE(capture([&](auto& o, auto& e) { return cmd_synth(again, o, e); }).code == 0);
    CHECK(io::read_file(dir / "a.csv") == io::read_file(dir / "b.csv"));
}

TEST_CASE("distill is deterministic and prints the convergence rate") {
    TempDir dir;
    prepare(dir, 80);
    PipelineConfig config;
    const auto first = distill(dir, config, "one");
    REQUIRE(first.code == 0);
    CHECK(first.out.find("converged") != std::string::npos);
    CHECK(first.out.find("%") != std::string::npos);
    const auto second = distill(dir, config, "two");
    REQUIRE(second.code == 0);
    CHECK(io::read_file(dir / "one.json") == io::read_file(dir / "two.json"));
    CHECK(io::read_file(dir / "one.dkb") == io::read_file(dir / "two.dkb"));

    config.distill.threads = 4;
    REQUIRE(distill(dir, config, "threaded").code == 0);
    CHECK(io::read_file(dir / "one.dkb") == io::read_file(dir / "threaded.dkb"));
    CHECK(io::read_file(dir / "one.json") == io::read_file(dir / "threaded.json"));

    const auto summary = nlohmann::json::parse(io::read_file(dir / "one.json"));
    CHECK(summary["config_fingerprint"] == config.fingerprint());
    CHECK(summary["counts"]["total"] == 80);
}

TEST_CASE("include-unconverged stores flagged entries") {
    TempDir dir;
    prepare(dir, 60);
    PipelineConfig config;
    config.distill.epsilon = 1e-4;
    config.distill.max_iters = 1;
    REQUIRE(distill(dir, config, "strict").code == 0);
    const auto strict = nlohmann::json::parse(io::read_file(dir / "strict.json"));
    const std::size_t unconverged = strict["counts"]["unconverged"];
    REQUIRE(unconverged > 0);
    CHECK(kb::KnowledgeBase::open(dir / "strict.dkb").size() == 60 - unconverged);

    config.distill.include_unconverged = true;
    REQUIRE(distill(dir, config, "all").code == 0);
    const auto store = kb::KnowledgeBase::open(dir / "all.dkb");
    CHECK(store.size() == 60);
    std::size_t flagged = 0;
    for (const auto& e : *store.snapshot()) {
        flagged += e.converged ? 0 : 1;
    }
    CHECK(flagged == unconverged);
}

TEST_CASE("unreachable policy endpoint leaves a partial summary and no store") {
    TempDir dir;
    prepare(dir, 10);
    PipelineConfig config;
    config.policy = "remote";
    config.remote.base_url = "http://127.0.0.1:1/v1";
    config.remote.model = "none";
    config.remote.retries = 0;
    config.remote.timeout_seconds = 2;
    const auto result = distill(dir, config, "remote");
    CHECK(result.code != 0);
    CHECK(result.err.find("partial summary") != std::string::npos);
    CHECK_FALSE(std::filesystem::exists(dir / "remote.dkb"));
    const auto summary = nlohmann::json::parse(io::read_file(dir / "remote.json"));
    CHECK(summary.contains("error"));
}

TEST_CASE("predict replays a stored case and votes") {
    TempDir dir;
    prepare(dir, 60);
    PipelineConfig config;
    REQUIRE(distill(dir, config, "kb").code == 0);

    const auto acpb = cacs::load_acpb(dir / "acpb.json");
    const auto matrix = load_matrix(dir / "matrix.csv", acpb.schema);
    const auto store = kb::KnowledgeBase::open(dir / "kb.dkb");
    // Pick a stored case far from the decision boundary.
    const kb::DkbEntry* chosen = nullptr;
    for (const auto& e : *store.snapshot()) {
        if (std::abs(e.teacher_prob - 0.5) > 0.1) {
            chosen = &e;
            break;
        }
    }
    REQUIRE(chosen != nullptr);
    const auto row = std::find_if(matrix.rows.begin(), matrix.rows.end(),
                                  [&](const SampleRecord& r) { return r.sample_id == chosen->sample_id; });
    REQUIRE(row != matrix.rows.end());
    SampleRecord replay = *row;
    replay.shap.reset();
    replay.teacher_prob.reset();
    replay.label.reset();
    io::write_file(dir / "case.csv", render_cases(acpb.schema, {replay}));

    config.retrieval.k = 1;
    PredictOptions options;
    options.acpb = dir / "acpb.json";
    options.store = dir / "kb.dkb";
    options.case_file = dir / "case.csv";
    options.report_text = dir / "report.txt";
    options.report_json = dir / "report.json";
    auto result = capture([&](auto& o, auto& e) { return cmd_predict(options, config, o, e); });
    REQUIRE(result.code == 0);
    const auto report = nlohmann::json::parse(io::read_file(dir / "report.json"));
    REQUIRE(report["precedents"].size() == 1);
    CHECK(report["precedents"][0]["sample_id"] == chosen->sample_id);
    const std::string expected = *chosen->label == Label::unhealthy ? "unhealthy" : "healthy";
    CHECK(report["classification"] == expected);
    CHECK(report["votes"]["unhealthy"].get<int>() + report["votes"]["healthy"].get<int>() == 3);
    CHECK(io::read_file(dir / "report.txt").find(chosen->sample_id) != std::string::npos);

    config.runs = 5;
    result = capture([&](auto& o, auto& e) { return cmd_predict(options, config, o, e); });
    REQUIRE(result.code == 0);
    const auto five = nlohmann::json::parse(io::read_file(dir / "report.json"));
    CHECK(five["votes"]["unhealthy"].get<int>() + five["votes"]["healthy"].get<int>() == 5);

    io::write_file(dir / "bad.csv", "sample_id,nonsense\nx,1\n");
    options.case_file = dir / "bad.csv";
    result = capture([&](auto& o, auto& e) { return cmd_predict(options, config, o, e); });
    CHECK(result.code != 0);
    CHECK_FALSE(result.err.empty());

    PredictOptions batch;
    batch.acpb = dir / "acpb.json";
    batch.store = dir / "kb.dkb";
    batch.cases_file = dir / "matrix_cases.csv";
    batch.predictions = dir / "predictions.csv";
    std::vector<SampleRecord> cases(matrix.rows.begin(), matrix.rows.begin() + 10);
    io::write_file(*batch.cases_file, render_cases(acpb.schema, cases));
    config.runs = 3;
    result = capture([&](auto& o, auto& e) { return cmd_predict(batch, config, o, e); });
    REQUIRE(result.code == 0);
    const auto lines = io::parse_delimited(io::read_file(*batch.predictions));
    CHECK(lines.header == std::vector<std::string>{"sample_id", "probability", "label", "tier"});
    CHECK(lines.rows.size() == 10);
}

TEST_CASE("evaluate computes metrics, concordance and bias") {
    TempDir dir;
    io::write_file(dir / "truth.csv", "sample_id,label\na,1\nb,0\nc,1\nd,0\n");
    io::write_file(dir / "pa.csv", "sample_id,label\nb,0\na,1\nc,0\nd,0\n");
    io::write_file(dir / "pb.csv", "sample_id,label\na,unhealthy\nb,unhealthy\nc,healthy\nd,healthy\n");
    io::write_file(dir / "teacher.csv", "sample_id,probability\na,0.8\nb,0.3\nc,0.6\nd,0.2\n");
    io::write_file(dir / "infer.csv", "sample_id,probability\na,0.81\nb,0.32\nc,0.63\nd,0.24\n");

    EvaluateOptions options;
    options.pred_a = dir / "pa.csv";
    options.pred_b = dir / "pb.csv";
    options.truth = dir / "truth.csv";
    options.teacher_probs = dir / "teacher.csv";
    options.infer_probs = dir / "infer.csv";
    options.out_json = dir / "metrics.json";
    options.categories = dir / "categories.csv";
    const auto result = capture([&](auto& o, auto& e) { return cmd_evaluate(options, o, e); });
    REQUIRE(result.code == 0);
    const auto doc = nlohmann::json::parse(io::read_file(dir / "metrics.json"));
    CHECK(doc["predictions_a"]["metrics"]["accuracy"].get<double>() == doctest::Approx(0.75));
    CHECK(doc["predictions_b"]["metrics"]["accuracy"].get<double>() == doctest::Approx(0.5));
    CHECK(doc["concordance"]["counts"]["both_correct"] == 2);
    CHECK(doc["concordance"]["counts"]["both_wrong"] == 1);
    CHECK(doc["concordance"]["counts"]["a_only_correct"] == 1);
    CHECK(doc["bias"]["mean"].get<double>() == doctest::Approx(0.025));
    CHECK(io::read_file(dir / "categories.csv").find("b,a_only_correct") != std::string::npos);

    io::write_file(dir / "short.csv", "sample_id,label\na,1\n");
    options.pred_b = dir / "short.csv";
    CHECK(capture([&](auto& o, auto& e) { return cmd_evaluate(options, o, e); }).code != 0);
    io::write_file(dir / "badlabel.csv", "sample_id,label\na,yes\nb,0\nc,1\nd,0\n");
    options.pred_b = dir / "badlabel.csv";
    const auto bad = capture([&](auto& o, auto& e) { return cmd_evaluate(options, o, e); });
    CHECK(bad.code != 0);
    CHECK(bad.err.find("yes") != std::string::npos);
}

TEST_CASE("pipeline config round-trip and fingerprint") {
    PipelineConfig config;
    config.retrieval.k = 5;
    config.damping = 0.4;
    config.remote.base_url = "http://localhost:1234/v1";
    const auto loaded = PipelineConfig::from_json(config.to_json());
    CHECK(loaded.to_json() == config.to_json());
    CHECK(loaded.fingerprint() == config.fingerprint());
    CHECK(config.fingerprint().rfind("crc32:", 0) == 0);

    auto threaded = config;
    threaded.distill.threads = 8;
    threaded.predict_threads = 8;
    CHECK(threaded.fingerprint() == config.fingerprint());
    auto changed = config;
    changed.retrieval.threshold = 0.71;
    CHECK(changed.fingerprint() != config.fingerprint());

    auto doc = config.to_json();
    doc["surprise"] = 1;
    CHECK_THROWS_AS(PipelineConfig::from_json(doc), ConfigError);
    doc = config.to_json();
    doc["retrieval"]["kk"] = 1;
    CHECK_THROWS_AS(PipelineConfig::from_json(doc), ConfigError);

    PipelineConfig even;
    even.runs = 4;
    CHECK_THROWS_AS(even.validate(), ConfigError);
    PipelineConfig bad_policy;
    bad_policy.policy = "oracle";
    CHECK_THROWS_AS(bad_policy.validate(), ConfigError);
}
