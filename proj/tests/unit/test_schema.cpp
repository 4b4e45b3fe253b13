#include <doctest.h>

#include <cmath>
#include <random>

#include "fixtures.hpp"
#include "laiml/schema.hpp"
#include "laiml/text_io.hpp"

using namespace laiml;
using laiml::testing::TempDir;

namespace {

FeatureSchema mixed_schema() {
    return FeatureSchema({{"age", FeatureKind::continuous, "age in decades"},
                          {"grip", FeatureKind::continuous, ""},
                          {"steps", FeatureKind::integer, "stairs climbed"}});
}

std::string matrix_text(const std::string& row) {
    return "# base_value=-0.25\n"
           "sample_id,v_age,v_grip,v_steps,s_age,s_grip,s_steps,teacher_prob,label\n" +
           row + "\n";
}

}  // namespace

TEST_CASE("format_double round-trips exactly") {
    std::mt19937_64 rng(7);
    for (int i = 0; i < 2000; ++i) {
        const double v = laiml::testing::uniform(rng, -1e6, 1e6) * std::pow(10.0, static_cast<int>(rng() % 20) - 10);
        const auto parsed = io::parse_double(io::format_double(v));
        REQUIRE(parsed.has_value());
        CHECK(*parsed == v);
    }
    CHECK(io::format_double(0.5) == "0.5");
    CHECK(io::format_double(-0.0) == "-0");
}

TEST_CASE("parse_double is strict") {
    CHECK(io::parse_double("1.25") == 1.25);
    CHECK(io::parse_double("+3") == 3.0);
    CHECK(io::parse_double(" 2 ") == 2.0);
    CHECK_FALSE(io::parse_double("").has_value());
    CHECK_FALSE(io::parse_double("NaN").has_value());
    CHECK_FALSE(io::parse_double("inf").has_value());
    CHECK_FALSE(io::parse_double("1.5x").has_value());
    CHECK_FALSE(io::parse_double("abc").has_value());
}

TEST_CASE("crc32 matches the reference check value") {
    CHECK(io::crc32("123456789") == 0xCBF43926u);
    CHECK(io::hex32(0xCBF43926u) == "cbf43926");
}

TEST_CASE("default grouping is contiguous thirds") {
    const auto schema = laiml::testing::continuous_schema(15);
    CHECK(schema.groups()[0] == std::vector<std::size_t>{0, 1, 2, 3, 4});
    CHECK(schema.groups()[1] == std::vector<std::size_t>{5, 6, 7, 8, 9});
    CHECK(schema.groups()[2] == std::vector<std::size_t>{10, 11, 12, 13, 14});
}

TEST_CASE("explicit groups are kept as given") {
    std::vector<FeatureSpec> specs;
    for (int i = 0; i < 15; ++i) {
        specs.push_back({"f" + std::to_string(i), FeatureKind::continuous, ""});
    }
    FeatureGroups groups{std::vector<std::size_t>{14, 0, 3, 6, 9}, std::vector<std::size_t>{1, 4, 7, 10, 13},
                         std::vector<std::size_t>{2, 5, 8, 11, 12}};
    const FeatureSchema schema(specs, groups);
    CHECK(schema.groups() == groups);
}

TEST_CASE("schema rejects bad partitions and names") {
    CHECK_THROWS_AS(laiml::testing::continuous_schema(14), IngestError);
    CHECK_THROWS_AS(FeatureSchema({{"a", FeatureKind::continuous, ""}, {"a", FeatureKind::continuous, ""},
                                   {"b", FeatureKind::continuous, ""}}),
                    IngestError);
    CHECK_THROWS_AS(FeatureSchema({{"a b", FeatureKind::continuous, ""}, {"c", FeatureKind::continuous, ""},
                                   {"d", FeatureKind::continuous, ""}}),
                    IngestError);
    std::vector<FeatureSpec> specs{{"a", FeatureKind::continuous, ""}, {"b", FeatureKind::continuous, ""},
                                   {"c", FeatureKind::continuous, ""}};
    CHECK_THROWS_AS(FeatureSchema(specs, FeatureGroups{std::vector<std::size_t>{0}, std::vector<std::size_t>{0},
                                                       std::vector<std::size_t>{2}}),
                    IngestError);
    CHECK_THROWS_AS(FeatureSchema(specs, FeatureGroups{std::vector<std::size_t>{0, 1}, std::vector<std::size_t>{2},
                                                       std::vector<std::size_t>{}}),
                    IngestError);
}

TEST_CASE("schema file round-trip and hash") {
    TempDir dir;
    const auto schema = mixed_schema();
    write_schema(dir / "schema.json", schema);
    const auto loaded = load_schema(dir / "schema.json");
    CHECK(loaded == schema);
    CHECK(loaded.hash() == schema.hash());
    CHECK(loaded.feature(0).description == "age in decades");

    const FeatureSchema other({{"age", FeatureKind::continuous, ""},
                               {"grip", FeatureKind::continuous, ""},
                               {"steps", FeatureKind::continuous, ""}});
    CHECK(other.hash() != schema.hash());
}

TEST_CASE("schema file with names in groups") {
    TempDir dir;
    io::write_file(dir / "s.json", R"({"features":[{"name":"a","kind":"continuous"},{"name":"b","kind":"integer"},
        {"name":"c"}],"groups":[["c"],["a"],["b"]]})");
    const auto schema = load_schema(dir / "s.json");
    CHECK(schema.groups()[0] == std::vector<std::size_t>{2});
    CHECK(schema.feature(1).kind == FeatureKind::integer);
    CHECK(schema.feature(2).kind == FeatureKind::continuous);

    io::write_file(dir / "bad.json", R"({"features":[{"name":"a"}],"groups":[["a"],["zz"],["a"]]})");
    CHECK_THROWS_AS(load_schema(dir / "bad.json"), IngestError);
    io::write_file(dir / "broken.json", "{not json");
    CHECK_THROWS_AS(load_schema(dir / "broken.json"), IngestError);
}

TEST_CASE("well-formed matrix loads") {
    const auto m = parse_matrix(matrix_text("p1,0.6,1.25,3,0.1,-0.2,0.05,0.7,1"), mixed_schema());
    CHECK(m.base_value == -0.25);
    REQUIRE(m.rows.size() == 1);
    CHECK(m.rows[0].sample_id == "p1");
    CHECK(m.rows[0].values == std::vector<double>{0.6, 1.25, 3});
    CHECK(*m.rows[0].shap == std::vector<double>{0.1, -0.2, 0.05});
    CHECK(*m.rows[0].teacher_prob == 0.7);
    CHECK(*m.rows[0].label == Label::unhealthy);
}

TEST_CASE("matrix columns are matched by name, label may be empty") {
    const std::string text =
        "# base_value=0\n"
        "label,teacher_prob,s_steps,s_grip,s_age,v_steps,v_grip,v_age,sample_id\n"
        ",0.4,0.3,0.2,0.1,2,1.5,0.5,q\n";
    const auto m = parse_matrix(text, mixed_schema());
    CHECK(m.rows[0].values == std::vector<double>{0.5, 1.5, 2});
    CHECK(*m.rows[0].shap == std::vector<double>{0.1, 0.2, 0.3});
    CHECK_FALSE(m.rows[0].label.has_value());
}

TEST_CASE("matrix rejections name the offending row or column") {
    const auto schema = mixed_schema();
    auto message_of = [&](const std::string& text) {
        try {
            parse_matrix(text, schema, "cohort.csv");
        } catch (const IngestError& ex) {
            return std::string(ex.what());
        }
        return std::string("no error");
    };

    auto msg = message_of(matrix_text("p1,0.6,1.25,3,0.1,-0.2,0.05,1.0,1"));
    CHECK(msg.find("p1") != std::string::npos);
    CHECK(msg.find("teacher_prob") != std::string::npos);
    CHECK(message_of(matrix_text("p1,0.6,1.25,3,0.1,-0.2,0.05,0,1")).find("teacher_prob") != std::string::npos);

    msg = message_of(matrix_text("p2,0.6,1.25,2.5,0.1,-0.2,0.05,0.7,1"));
    CHECK(msg.find("p2") != std::string::npos);
    CHECK(msg.find("steps") != std::string::npos);

    msg = message_of(matrix_text("p3,0.6,abc,3,0.1,-0.2,0.05,0.7,1"));
    CHECK(msg.find("v_grip") != std::string::npos);
    CHECK(msg.find("line 3") != std::string::npos);

    CHECK(message_of(matrix_text("p4,0.6,NaN,3,0.1,-0.2,0.05,0.7,1")).find("v_grip") != std::string::npos);
    CHECK(message_of(matrix_text("p5,0.6,1,3,0.1,-0.2,0.05,0.7")).find("p5") != std::string::npos);
    CHECK(message_of(matrix_text("p6,0.6,1,3,0.1,-0.2,0.05,0.7,2")).find("label") != std::string::npos);

    msg = message_of("# base_value=0\nsample_id,v_age,v_grip,s_age,s_grip,s_steps,teacher_prob,label\n");
    CHECK(msg.find("v_steps") != std::string::npos);
    msg = message_of(
        "# base_value=0\nsample_id,v_age,v_grip,v_steps,s_age,s_grip,s_steps,teacher_prob,label,extra\n");
    CHECK(msg.find("extra") != std::string::npos);
    CHECK(message_of("sample_id,v_age,v_grip,v_steps,s_age,s_grip,s_steps,teacher_prob,label\n")
              .find("base_value") != std::string::npos);

    const std::string dup = matrix_text("p1,0.6,1,3,0.1,-0.2,0.05,0.7,1") + "p1,0.6,1,3,0.1,-0.2,0.05,0.7,1\n";
    CHECK(message_of(dup).find("duplicate") != std::string::npos);
}

TEST_CASE("matrix write/load round-trip preserves rows and order exactly") {
    TempDir dir;
    const auto schema = mixed_schema();
    FeatureShapMatrix m;
    m.schema = schema;
    m.base_value = -0.123456789012345;
    std::mt19937_64 rng(11);
    for (int r = 0; r < 50; ++r) {
        SampleRecord row;
        row.sample_id = "row" + std::to_string(49 - r);
        row.values = {laiml::testing::uniform(rng, -5, 5), laiml::testing::uniform(rng, -1e-7, 1e-7),
                      static_cast<double>(static_cast<int>(rng() % 9) - 4)};
        row.shap = std::vector<double>{laiml::testing::uniform(rng, -1, 1), laiml::testing::uniform(rng, -1, 1),
                                       laiml::testing::uniform(rng, -1, 1)};
        row.teacher_prob = laiml::testing::uniform(rng, 0.01, 0.99);
        if (r % 3 != 0) {
            row.label = r % 2 ? Label::unhealthy : Label::healthy;
        }
        m.rows.push_back(row);
    }
    write_matrix(dir / "m.csv", m);
    const auto loaded = load_matrix(dir / "m.csv", schema);
    CHECK(loaded == m);
    CHECK(render_matrix(loaded) == render_matrix(m));
}

TEST_CASE("case files") {
    const auto schema = mixed_schema();
    const auto cases = parse_cases("sample_id,v_age,v_grip,v_steps\nnew1,0.6,1.1,4\n", schema);
    REQUIRE(cases.size() == 1);
    CHECK_FALSE(cases[0].shap.has_value());
    CHECK_FALSE(cases[0].teacher_prob.has_value());
    CHECK(cases[0].values == std::vector<double>{0.6, 1.1, 4});

    CHECK_THROWS_AS(parse_cases("sample_id,v_age,v_grip,v_steps\nnew1,0.6,1.1,4,9\n", schema), IngestError);
    CHECK_THROWS_AS(parse_cases("sample_id,v_age,v_grip,v_steps\nnew1,0.6,NaN,4\n", schema), IngestError);
    CHECK_THROWS_AS(parse_cases("sample_id,v_age,v_grip\nnew1,0.6,1\n", schema), IngestError);

    TempDir dir;
    io::write_file(dir / "two.csv", "sample_id,v_age,v_grip,v_steps\na,1,1,1\nb,2,2,2\n");
    CHECK_THROWS_AS(load_case(dir / "two.csv", schema), IngestError);
    io::write_file(dir / "one.csv", render_cases(schema, {cases[0]}));
    CHECK(load_case(dir / "one.csv", schema) == cases[0]);
}

TEST_CASE("fifteen-feature schema accepts a 324-row matrix") {
    const auto schema = laiml::testing::continuous_schema(15);
    FeatureShapMatrix m;
    m.schema = schema;
    for (int r = 0; r < 324; ++r) {
        SampleRecord row;
        row.sample_id = "r" + std::to_string(r);
        row.values.assign(15, 0.5 * r);
        row.shap = std::vector<double>(15, 0.01);
        row.teacher_prob = 0.5;
        row.label = Label::healthy;
        m.rows.push_back(row);
    }
    CHECK(parse_matrix(render_matrix(m), schema).rows.size() == 324);
}
