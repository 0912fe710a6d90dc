#include <doctest.h>

#include <cmath>
#include <string>

#include "kllab/config.hpp"
#include "kllab/errors.hpp"
#include "kllab/harness.hpp"

using namespace kllab;

namespace {

ConfigError parse_error(const std::string& text) {
    try {
        interpret(ConfigDocument::parse(text));
    } catch (const ConfigError& e) {
        return e;
    }
    FAIL("expected ConfigError for: " << text);
    return ConfigError(0, 0, "");
}

}  // namespace

TEST_CASE("values of every kind parse") {
    const auto doc = ConfigDocument::parse(
        "# comment\n"
        "a = 1.5e-2\n"
        "b = word   # trailing comment\n"
        "c = [1, 2, 3]\n"
        "d = shape(x = 1, y = -2)\n"
        "mara.tau = 0.5\n");
    REQUIRE(doc.entries().size() == 5);
    CHECK(doc.find("a")->value.as_number() == doctest::Approx(0.015));
    CHECK(doc.find("b")->value.as_word() == "word");
    CHECK(doc.find("c")->value.as_numbers() == std::vector<double>{1, 2, 3});
    const auto& d = doc.find("d")->value;
    CHECK(d.kind == ConfigValue::Kind::Shape);
    CHECK(d.text == "shape");
    REQUIRE(d.args.size() == 2);
    CHECK(d.args[1].key == "y");
    CHECK(d.args[1].value == -2.0);
    CHECK(doc.has("mara.tau"));
    CHECK_FALSE(doc.has("z"));
}

TEST_CASE("parse errors report line and column") {
    try {
        ConfigDocument::parse("a = 1\nb = [1, 2\n");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(e.line() == 2);
        CHECK(std::string(e.what()).rfind("2:", 0) == 0);
    }
    try {
        ConfigDocument::parse("a = 1\n\n  a = 2\n");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(e.line() == 3);
        CHECK(e.column() == 3);
    }
    CHECK_THROWS_AS(ConfigDocument::parse("a = 1 2\n"), ConfigError);
    CHECK_THROWS_AS(ConfigDocument::parse("a = 1.2.3\n"), ConfigError);
    CHECK_THROWS_AS(ConfigDocument::parse("= 3\n"), ConfigError);
}

TEST_CASE("schema errors point at the offending entry") {
    CHECK(parse_error("beta = 0.1\nflavour = strong\n").line() == 2);
    CHECK(parse_error("objectives = [reverse, sideways]\n").line() == 1);
    CHECK(parse_error("steps = many\n").line() == 1);
    CHECK(parse_error("seeds = [1, -1]\n").line() == 1);
    CHECK(parse_error("n = 3\nreference = [0.5, 0.5]\nrewards = [0, 1, 2]\n").line() == 2);
}

TEST_CASE("interpret fills the run settings") {
    const auto cfg = interpret(ConfigDocument::parse(
        "scenario = two_point\n"
        "objectives = [forward, matching]\n"
        "betas = [0.2]\n"
        "seeds = [4, 5]\n"
        "mode = monte_carlo\n"
        "steps = 10\n"
        "lr = 0.01\n"
        "batch = 8\n"
        "baseline = leave_one_out\n"
        "mara.percentile = 0.75\n"
        "mara.tiebreak = highest_reward\n"));
    CHECK(cfg.scenario_ref == "two_point");
    CHECK(cfg.objectives == std::vector<ObjectiveKind>{ObjectiveKind::ForwardKL, ObjectiveKind::TargetMatching});
    CHECK(cfg.betas == std::vector<double>{0.2});
    CHECK(cfg.seeds == std::vector<std::uint64_t>{4, 5});
    CHECK(cfg.train.mode == GradientMode::MonteCarlo);
    CHECK(cfg.train.steps == 10);
    CHECK(cfg.train.learning_rate == 0.01);
    CHECK(cfg.train.batch == 8);
    CHECK(cfg.train.baseline == Baseline::LeaveOneOut);
    REQUIRE(cfg.mara_threshold);
    CHECK(std::get<BatchPercentile>(*cfg.mara_threshold).q == 0.75);
    CHECK(cfg.mara_tiebreak == AnchorTiebreak::HighestReward);
}

TEST_CASE("inline scenario with explicit lists") {
    const auto s = scenario_from_config(ConfigDocument::parse(
        "name = tiny\nn = 3\nreference = [1, 1, 2]\nrewards = [0, 0.5, 1]\nthreshold = 0.4\n"));
    CHECK(s.name == "tiny");
    CHECK(s.reference.mass(2) == doctest::Approx(0.5));
    CHECK(s.rewards[1] == 0.5);
    CHECK(s.threshold == 0.4);
}

TEST_CASE("reference shapes") {
    const auto uni = reference_from_value(ConfigDocument::parse("r = uniform()\n").find("r")->value, 4);
    for (std::size_t i = 0; i < 4; ++i) CHECK(uni.mass(i) == doctest::Approx(0.25));
    const auto half = reference_from_value(ConfigDocument::parse("r = half_support(slope = 0)\n").find("r")->value, 10);
    CHECK(half.support_size() == 5);
    for (std::size_t i = 0; i < 5; ++i) CHECK(half.mass(i) == doctest::Approx(0.2));
    CHECK_THROWS_AS(reference_from_value(ConfigDocument::parse("r = blob()\n").find("r")->value, 4), ConfigError);
}

TEST_CASE("two_mode rewards and derived modes") {
    const auto doc = ConfigDocument::parse("r = two_mode(c1 = 5, w1 = 1, h1 = 1, c2 = 14, w2 = 1, h2 = 0.5)\n");
    const auto& v = doc.find("r")->value;
    const auto r = rewards_from_value(v, 20);
    CHECK(r[5] == doctest::Approx(1.0));
    CHECK(r[14] == doctest::Approx(0.5));
    CHECK(r[0] < 0.01);
    const auto modes = derived_modes(v, r);
    REQUIRE(modes.size() == 2);
    CHECK(modes[0].contains(5));
    CHECK(modes[1].contains(14));
    CHECK_FALSE(modes[0].contains(9));
}

TEST_CASE("shipped scenarios load and validate") {
    for (const auto& s : builtin_scenarios()) {
        CHECK(s.size() == 100);
        CHECK_FALSE(s.modes.empty());
        double total = 0.0;
        for (double m : s.reference.masses()) total += m;
        CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    }
}
