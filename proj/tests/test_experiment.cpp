#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "hope/errors.hpp"
#include "hope/experiment.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace hope;
namespace fs = std::filesystem;

namespace {

ExperimentConfig small_config() {
    ExperimentConfig c;
    c.n_trajectories = 300;
    c.bootstrap_b = 10;
    c.rand_repetitions = 3;
    c.seed = 3;
    return c;
}

fs::path scratch(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("hope_test_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace

TEST_CASE("config round-trip") {
    ExperimentConfig c = small_config();
    c.h_mode = HMode::fixed;
    c.h = 0.25;
    c.estimators = {"wis", "hope"};
    c.reward_channels = {{"wis", "hope"}};
    c.sim.mask = sepsis::ObservationMask::none();
    c.reward_fit.solver = Solver::iterative;
    const auto j = c.to_json();
    const auto back = ExperimentConfig::from_json(nlohmann::json::parse(j.dump()));
    CHECK(back.to_json() == j);
    CHECK(back.sim == c.sim);
}

TEST_CASE("config errors name the field") {
    auto expect_field = [](const nlohmann::json& j, const std::string& field) {
        try {
            ExperimentConfig::from_json(j).validate();
            FAIL("expected a config error for " << field);
        } catch (const ConfigError& e) {
            CHECK(e.field() == field);
        }
    };
    expect_field(nlohmann::json{{"seed", 1}}, "schema_version");
    expect_field(nlohmann::json{{"schema_version", 99}}, "schema_version");
    expect_field(nlohmann::json{{"schema_version", 1}, {"n_trajectories", 10}, {"k", 10}}, "k");
    expect_field(nlohmann::json{{"schema_version", 1}, {"estimators", {"magic"}}}, "estimators");
    expect_field(nlohmann::json{{"schema_version", 1}, {"policies", {"nope"}}}, "policies");
    CHECK_THROWS_AS(ExperimentConfig::from_json(nlohmann::json{{"schema_version", 1}, {"bogus", 1}}), ConfigError);
    CHECK_THROWS_AS(
        ExperimentConfig::from_json(nlohmann::json{{"schema_version", 1}, {"sim", {{"transition", {{"typo", 0.1}}}}}}),
        ConfigError);
    CHECK_NOTHROW(ExperimentConfig::from_json(nlohmann::json{{"schema_version", 1}}).validate());
}

TEST_CASE("sha-256 known answer") {
    CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST_CASE("reconstruction channels") {
    auto c = small_config();
    const auto policies = build_policies(c);
    CHECK(policies.names.size() == 3);
    const Dataset d = simulate(c, policies, 2);
    std::ostringstream log;

    c.h_mode = HMode::none;
    auto rec = reconstruct_rewards(d, c, 2, log);
    CHECK(rec.channels.at("hope") == rec.channels.at("rtilde"));
    CHECK(rec.critical.size() == 0);

    c.h_mode = HMode::all_critical;
    rec = reconstruct_rewards(d, c, 2, log);
    CHECK(rec.channels.at("soft_hope") == rec.channels.at("hope"));
    for (const auto& name : reconstructed_channels()) CHECK(rec.channels.count(name) == 1);

    c.h_mode = HMode::elbow;
    rec = reconstruct_rewards(d, c, 1, log);
    REQUIRE(rec.elbow.has_value());
    for (int o : rec.critical.members()) CHECK(q_gap(rec.q, o) > rec.critical.threshold());
}

TEST_CASE("rhat file round-trip") {
    const fs::path dir = scratch("rhat");
    const std::map<std::string, EventRewards> channels{{"hope", {{0.5, -0.25}, {1.0}}}, {"rtilde", {{0.1, 0.2}, {0.3}}}};
    save_rhat((dir / "rhat.jsonl").string(), channels, 2);
    CHECK(load_rhat((dir / "rhat.jsonl").string()) == channels);
}

TEST_CASE("evaluation report covers every estimator") {
    const auto c = small_config();
    const auto policies = build_policies(c);
    const Dataset d = simulate(c, policies, 1);
    std::ostringstream log;
    const auto rec = reconstruct_rewards(d, c, 1, log);
    const auto report = evaluate(d, rec.channels, c, policies, true, 2);
    CHECK(report.policies.size() == 3);
    for (const auto& name : c.estimators) {
        const auto* s = report.summary(name);
        REQUIRE(s != nullptr);
        CHECK(s->channel == default_channel(name));
        CHECK(s->aae.has_value());
    }
    for (const auto& p : report.policies) {
        REQUIRE(p.true_value.has_value());
        for (const auto& [name, est] : p.estimates) {
            REQUIRE(est.bootstrap_samples.has_value());
            CHECK(est.bootstrap_samples->size() + est.bootstrap_failures == c.bootstrap_b);
        }
    }
}

TEST_CASE("staged file pipeline equals the one-shot benchmark") {
    const auto c = small_config();
    const fs::path staged = scratch("staged");
    const fs::path oneshot = scratch("oneshot");
    std::ostringstream log;
    cmd_simulate(c, staged.string(), log);
    cmd_reconstruct(c, (staged / "dataset.jsonl").string(), staged.string(), log);
    cmd_evaluate(c, (staged / "dataset.jsonl").string(), (staged / "rhat.jsonl").string(),
                 (staged / "ground_truth.jsonl").string(), staged.string(), log);
    const auto outcome = cmd_benchmark(c, oneshot.string(), log);
    CHECK(outcome.checks.size() == 2);
    for (const char* name : {"dataset.jsonl", "ground_truth.jsonl", "rhat.jsonl", "neighbors.json", "critical_set.json",
                             "metrics.csv", "metrics.json", "bootstrap.csv", "significance.csv"}) {
        CHECK_MESSAGE(slurp(staged / name) == slurp(oneshot / name), name);
    }
    std::ostringstream md;
    cmd_report(oneshot.string(), md);
    CHECK(md.str().find("hope") != std::string::npos);
}

TEST_CASE("a missing input file raises a stage error") {
    const fs::path dir = scratch("missing");
    std::ostringstream log;
    CHECK_THROWS_AS(cmd_reconstruct(small_config(), (dir / "absent.jsonl").string(), dir.string(), log), StageError);
}
