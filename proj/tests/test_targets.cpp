#include <doctest.h>

#include <cmath>
#include <vector>

#include "kllab/errors.hpp"
#include "kllab/harness.hpp"
#include "kllab/targets.hpp"

using namespace kllab;

namespace {

Scenario two_point() { return scenario_by_name("two_point"); }

// Reverse target by direct exponentiation in linear space.
std::vector<double> tilt_oracle(const Scenario& s, double beta) {
    std::vector<double> w(s.size());
    double z = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        w[i] = s.reference.mass(i) * std::exp(s.rewards[i] / beta);
        z += w[i];
    }
    for (auto& x : w) x /= z;
    return w;
}

}  // namespace

TEST_CASE("two-point reverse target") {
    const auto g = reverse_kl_target(two_point(), 1.0);
    const double e = std::exp(1.0);
    CHECK(g.mass(0) == doctest::Approx(1.0 / (1.0 + e)).epsilon(1e-14));
    CHECK(g.mass(1) == doctest::Approx(e / (1.0 + e)).epsilon(1e-14));
}

TEST_CASE("reverse target matches a linear-space oracle on a built-in scenario") {
    const auto s = scenario_by_name("equal_reference");
    for (double beta : {0.1, 0.5, 2.0}) {
        const auto g = reverse_kl_target(s, beta);
        const auto oracle = tilt_oracle(s, beta);
        for (std::size_t i = 0; i < s.size(); ++i) CHECK(g.mass(i) == doctest::Approx(oracle[i]).epsilon(1e-12));
    }
}

TEST_CASE("reverse target keeps the reference support") {
    const auto s = scenario_by_name("on_off_support");
    const auto g = reverse_kl_target(s, 0.1);
    for (std::size_t i = 0; i < s.size(); ++i) CHECK(g.in_support(i) == s.reference.in_support(i));
}

TEST_CASE("generalized target reduces to reverse at eta zero") {
    const auto s = scenario_by_name("fig2_two_mode");
    const auto a = generalized_target(s, 0.2, 0.0);
    const auto b = reverse_kl_target(s, 0.2);
    CHECK(tv_distance(a, b) < 1e-14);
}

TEST_CASE("generalized target at beta zero is softmax of R over eta on every token") {
    const auto s = scenario_by_name("on_off_support");
    const double eta = 0.3;
    const auto g = generalized_target(s, 0.0, eta);
    double z = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) z += std::exp(s.rewards[i] / eta);
    for (std::size_t i = 0; i < s.size(); ++i)
        CHECK(g.mass(i) == doctest::Approx(std::exp(s.rewards[i] / eta) / z).epsilon(1e-12));
}

TEST_CASE("generalized target equals a reverse target at the combined temperature with a tempered reference") {
    const auto s = scenario_by_name("fig2_two_mode");
    const double beta = 0.1, eta = 0.05;
    const auto g = generalized_target(s, beta, eta);
    std::vector<double> w(s.size());
    double z = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (!s.reference.in_support(i)) continue;
        w[i] = std::pow(s.reference.mass(i), beta / (beta + eta)) * std::exp(s.rewards[i] / (beta + eta));
        z += w[i];
    }
    for (std::size_t i = 0; i < s.size(); ++i) CHECK(g.mass(i) == doctest::Approx(w[i] / z).epsilon(1e-10));
}

TEST_CASE("coefficient validation") {
    const auto s = two_point();
    CHECK_THROWS_AS(reverse_kl_target(s, 0.0), InvalidCoefficient);
    CHECK_THROWS_AS(reverse_kl_target(s, -1.0), InvalidCoefficient);
    CHECK_THROWS_AS(forward_kl_target(s, 0.0), InvalidCoefficient);
    CHECK_THROWS_AS(generalized_target(s, 0.0, 0.0), InvalidCoefficient);
    CHECK_THROWS_AS(generalized_target(s, 0.1, -0.1), InvalidCoefficient);
    CHECK_THROWS_AS(reverse_kl_target(s, std::nan("")), InvalidCoefficient);
}

TEST_CASE("two-point forward target matches the quadratic closed form") {
    const auto s = two_point();
    for (double beta : {0.05, 0.3, 1.0, 4.0}) {
        // beta/2 (1/L + 1/(L-1)) = 1  <=>  L^2 - (1+beta) L + beta/2 = 0, larger root.
        const double lambda = ((1.0 + beta) + std::sqrt((1.0 + beta) * (1.0 + beta) - 2.0 * beta)) / 2.0;
        const auto sol = forward_kl_target(s, beta);
        CHECK_FALSE(sol.boundary_case);
        CHECK(sol.lambda == doctest::Approx(lambda).epsilon(1e-10));
        CHECK(sol.distribution.mass(0) == doctest::Approx(beta * 0.5 / lambda).epsilon(1e-9));
        CHECK(sol.distribution.mass(1) == doctest::Approx(beta * 0.5 / (lambda - 1.0)).epsilon(1e-9));
    }
}

TEST_CASE("forward target leftover mass goes to off-support maximizers") {
    // Reference on tokens 0..1 only, token 2 has the largest reward.
    const std::vector<double> ref{0.5, 0.5, 0.0};
    const std::vector<double> r{0.0, 0.5, 1.0};
    const auto reference = Categorical::from_masses(ref);
    const double beta = 0.1;
    const auto sol = forward_kl_target(reference, r, beta);
    // With Lambda pinned at max R = 1 the on-support mass is beta/2 (1 + 2) = 0.15.
    CHECK(sol.boundary_case);
    CHECK(sol.lambda == doctest::Approx(1.0));
    CHECK(sol.off_support_mass == doctest::Approx(1.0 - 0.15).epsilon(1e-12));
    CHECK(sol.distribution.mass(2) == doctest::Approx(0.85).epsilon(1e-12));
    CHECK(sol.distribution.mass(0) == doctest::Approx(0.05).epsilon(1e-12));
}

TEST_CASE("forward normalizer is decreasing and the solution is stationary") {
    const auto s = scenario_by_name("fig2_two_mode");
    const auto sol = forward_kl_target(s, 0.1);
    const auto r = s.rewards.values();
    CHECK(forward_normalizer(s.reference, r, 0.1, sol.lambda + 0.1) < forward_normalizer(s.reference, r, 0.1, sol.lambda + 0.01));
    CHECK(forward_stationarity_residual(s.reference, r, 0.1, sol) < 1e-8);
}

TEST_CASE("log_prob_ratio closed form and support errors") {
    const auto s = scenario_by_name("fig2_two_mode");
    const std::size_t i = 19, j = 44;
    const double beta = 0.2;
    const double expected = std::log(s.reference.mass(i) / s.reference.mass(j)) + (s.rewards[i] - s.rewards[j]) / beta;
    CHECK(log_prob_ratio(s, beta, i, j) == doctest::Approx(expected).epsilon(1e-12));
    const auto g = reverse_kl_target(s, beta);
    CHECK(g.log_mass(i) - g.log_mass(j) == doctest::Approx(expected).epsilon(1e-10));
    CHECK_THROWS_AS(log_prob_ratio(s, beta, i, 99), UndefinedRatio);
}

TEST_CASE("flip_beta solves the equal-mass condition") {
    const auto s = scenario_by_name("fig2_two_mode");
    const double oracle = (s.rewards[44] - s.rewards[19]) / std::log(s.reference.mass(19) / s.reference.mass(44));
    const double b = flip_beta(s, 19, 44);
    CHECK(b == doctest::Approx(oracle).epsilon(1e-12));
    CHECK(b == doctest::Approx(0.1316).epsilon(5e-4));
    CHECK(std::abs(log_prob_ratio(s, b, 19, 44)) < 1e-9);
}

TEST_CASE("flip_beta reports each failure reason") {
    const auto eq = scenario_by_name("equal_reference");
    try {
        flip_beta(eq, 25, 75);
        FAIL("expected NoFiniteFlip");
    } catch (const NoFiniteFlip& e) {
        CHECK(e.reason() == NoFiniteFlip::Reason::EqualReference);
    }
    try {
        flip_beta(eq, 3, 3);
        FAIL("expected NoFiniteFlip");
    } catch (const NoFiniteFlip& e) {
        CHECK(e.reason() == NoFiniteFlip::Reason::SameIndex);
    }
    // Higher reference and higher reward on the same token never flips.
    const std::vector<double> ref{0.6, 0.4};
    const auto dominant = make_scenario("dominant", Categorical::from_masses(ref), RewardVector({1.0, 0.0}));
    try {
        flip_beta(dominant, 0, 1);
        FAIL("expected NoFiniteFlip");
    } catch (const NoFiniteFlip& e) {
        CHECK(e.reason() == NoFiniteFlip::Reason::NonPositive);
    }
}

TEST_CASE("target_for dispatches on kind") {
    const auto s = two_point();
    CHECK(tv_distance(target_for(s, {TargetKind::ReverseKL, 1.0, 0.0}), reverse_kl_target(s, 1.0)) == 0.0);
    CHECK(tv_distance(target_for(s, {TargetKind::ForwardKL, 1.0, 0.0}), forward_kl_target(s, 1.0).distribution) == 0.0);
    CHECK(parse_target_kind("generalized") == TargetKind::Generalized);
    CHECK_THROWS(parse_target_kind("sideways"));
}
