#include <doctest.h>

#include <cmath>
#include <vector>

#include "kllab/errors.hpp"
#include "kllab/harness.hpp"
#include "kllab/mara.hpp"
#include "kllab/targets.hpp"
#include "kllab/trainer.hpp"

using namespace kllab;

namespace {

// Qualifying tokens at tau = 0.8 are 0, 1 and 3; token 0 has the largest reference mass.
Scenario small() {
    const std::vector<double> ref{0.4, 0.1, 0.3, 0.2};
    return make_scenario("small", Categorical::from_masses(ref), RewardVector({1.0, 0.9, 0.2, 0.95}), {}, 0.8);
}

MaraConfig constant(double tau, double beta) {
    MaraConfig cfg;
    cfg.threshold = ConstantThreshold{tau};
    cfg.beta = beta;
    return cfg;
}

}  // namespace

TEST_CASE("quantile_linear interpolates between order statistics") {
    const std::vector<double> v{4.0, 1.0, 3.0, 2.0};
    CHECK(quantile_linear(v, 0.5) == doctest::Approx(2.5));
    CHECK(quantile_linear(v, 0.0) == doctest::Approx(1.0));
    CHECK(quantile_linear(v, 1.0) == doctest::Approx(4.0));
    CHECK(quantile_linear(v, 0.9) == doctest::Approx(1.0 + 0.9 * 3.0));
    CHECK_THROWS_AS(quantile_linear(std::vector<double>{}, 0.5), PreconditionViolation);
}

TEST_CASE("anchor is the qualifying sample with the highest reference mass") {
    const auto s = small();
    const std::vector<std::size_t> batch{2, 1, 3, 1, 0};
    const auto pos = select_anchor(batch, s, 0.8, AnchorTiebreak::LowestIndex);
    REQUIRE(pos);
    CHECK(*pos == 4);
    const std::vector<std::size_t> none{2, 2};
    CHECK_FALSE(select_anchor(none, s, 0.8, AnchorTiebreak::LowestIndex));
}

TEST_CASE("anchor tie-breaks keep the first position or prefer higher reward") {
    const std::vector<double> ref{0.25, 0.25, 0.25, 0.25};
    const auto s = make_scenario("tie", Categorical::from_masses(ref), RewardVector({0.9, 1.0, 0.0, 0.95}));
    const std::vector<std::size_t> batch{0, 3, 1};
    CHECK(*select_anchor(batch, s, 0.8, AnchorTiebreak::LowestIndex) == 0);
    CHECK(*select_anchor(batch, s, 0.8, AnchorTiebreak::HighestReward) == 2);
    CHECK(*global_anchor(s, 0.8, AnchorTiebreak::LowestIndex) == 0);
    CHECK(*global_anchor(s, 0.8, AnchorTiebreak::HighestReward) == 1);
}

TEST_CASE("reward view shifts qualifying rewards by the reference log ratio") {
    const auto s = small();
    const double beta = 0.2;
    const std::vector<std::size_t> batch{1, 2, 0, 3};
    const auto out = augment_rewards(batch, s, constant(0.8, beta));
    REQUIRE(out.anchor_index);
    CHECK(*out.anchor_index == 0);
    CHECK(out.augmented_rewards[0] == doctest::Approx(1.0 + beta * std::log(0.4 / 0.1)));
    CHECK(out.augmented_rewards[1] == 0.2);
    CHECK(out.augmented_rewards[2] == doctest::Approx(1.0));
    CHECK(out.augmented_rewards[3] == doctest::Approx(1.0 + beta * std::log(0.4 / 0.2)));
    CHECK(out.raw_rewards[0] == 0.9);
}

TEST_CASE("reference view copies the anchor's reward and reference log-prob") {
    const auto s = small();
    const std::vector<std::size_t> batch{1, 2, 0};
    const auto out = augment_ref_view(batch, s, constant(0.8, 0.2));
    CHECK(out.augmented_rewards[0] == 1.0);
    CHECK(out.augmented_ref_logprobs[0] == doctest::Approx(std::log(0.4)));
    CHECK(out.augmented_rewards[1] == 0.2);
    CHECK(out.augmented_ref_logprobs[1] == doctest::Approx(std::log(0.3)));
}

TEST_CASE("batch without a qualifying sample is left unchanged") {
    const auto s = small();
    const std::vector<std::size_t> batch{2, 2, 2};
    const auto out = augment_rewards(batch, s, constant(0.8, 0.2));
    CHECK_FALSE(out.anchor_index);
    CHECK(out.augmented_rewards == out.raw_rewards);
}

TEST_CASE("percentile threshold is taken over the batch rewards") {
    const auto s = small();
    MaraConfig cfg;
    cfg.threshold = BatchPercentile{0.5};
    cfg.beta = 0.2;
    const std::vector<std::size_t> batch{2, 1, 3, 0};
    const auto out = augment_rewards(batch, s, cfg);
    CHECK(out.threshold_used == doctest::Approx((0.9 + 0.95) / 2.0));
    CHECK(*out.anchor_index == 0);
}

TEST_CASE("augmented reward makes the reverse optimum uniform above threshold") {
    const auto s = small();
    const double beta = 0.2;
    const auto p = augment_support(s, constant(0.8, beta), MaraView::Reward);
    // Oracle: pi_ref(y) exp(r(y)/beta) by direct evaluation.
    std::vector<double> w(s.size());
    double z = 0.0;
    for (std::size_t y = 0; y < s.size(); ++y) {
        w[y] = s.reference.mass(y) * std::exp(p.rewards[y] / beta);
        z += w[y];
    }
    const auto g = mara_target(s, beta, 0.8, 0);
    for (std::size_t y = 0; y < s.size(); ++y) CHECK(g.mass(y) == doctest::Approx(w[y] / z).epsilon(1e-12));
    CHECK(g.mass(0) == doctest::Approx(g.mass(1)).epsilon(1e-12));
    CHECK(g.mass(0) == doctest::Approx(g.mass(3)).epsilon(1e-12));
}

TEST_CASE("reference view makes the forward optimum uniform above threshold") {
    const auto s = small();
    MaraConfig cfg = constant(0.8, 0.2);
    const auto p = augment_support(s, cfg, MaraView::RewardAndReference);
    Objective obj{ObjectiveKind::ForwardKL, 0.2, 0.0};
    const auto g = problem_target(RegularizedProblem::from(p), obj);
    CHECK(g.mass(0) == doctest::Approx(g.mass(1)).epsilon(1e-10));
    CHECK(g.mass(0) == doctest::Approx(g.mass(3)).epsilon(1e-10));
    CHECK(g.mass(2) < g.mass(0));
}

TEST_CASE("mara_target rejects invalid anchors") {
    const auto s = small();
    CHECK_THROWS_AS(mara_target(s, 0.2, 0.8, 2), InvalidAnchor);
    CHECK_THROWS_AS(mara_target(s, 0.2, 0.8, 9), InvalidAnchor);
    CHECK_THROWS_AS(mara_target(s, 0.0, 0.8, 0), InvalidCoefficient);
}

TEST_CASE("reward view refuses qualifying tokens outside the reference support") {
    const std::vector<double> ref{0.5, 0.5, 0.0};
    const auto s = make_scenario("off", Categorical::from_masses(ref), RewardVector({1.0, 0.0, 1.0}));
    CHECK_THROWS_AS(augment_support(s, constant(0.5, 0.1), MaraView::Reward), InfiniteDivergence);
    const std::vector<std::size_t> batch{2, 0};
    CHECK_THROWS_AS(augment_rewards(batch, s, constant(0.5, 0.1)), InfiniteDivergence);
}

TEST_CASE("config validation and description") {
    CHECK(constant(0.5, 0.1).describe().rfind("const:", 0) == 0);
    MaraConfig pct;
    pct.threshold = BatchPercentile{1.5};
    CHECK_THROWS(pct.validate());
    const auto s = scenario_by_name("mara_toy");
    CHECK_THROWS(constant(5.0, 0.1).validate_for(s));
    CHECK_NOTHROW(constant(0.5, 0.1).validate_for(s));
}

TEST_CASE("mara toy target is flat over the above-threshold tokens") {
    const auto s = scenario_by_name("mara_toy");
    const double beta = 0.1;
    const auto z = global_anchor(s, s.threshold, AnchorTiebreak::LowestIndex);
    REQUIRE(z);
    const auto g = mara_target(s, beta, s.threshold, *z);
    double hi = 0.0, lo = 1.0;
    for (std::size_t y = 0; y < s.size(); ++y) {
        if (s.rewards[y] < s.threshold) continue;
        hi = std::max(hi, g.mass(y));
        lo = std::min(lo, g.mass(y));
    }
    CHECK(hi - lo < 1e-12);
}
