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

// Random scenario: n in [2, 12], some tokens off the reference support, rewards in [0, 1].
Scenario random_scenario(Rng& rng) {
    const std::size_t n = 2 + rng.next() % 11;
    std::vector<double> ref(n), r(n);
    for (std::size_t i = 0; i < n; ++i) {
        ref[i] = rng.uniform() < 0.2 ? 0.0 : 0.01 + rng.uniform();
        r[i] = rng.uniform();
    }
    ref[rng.next() % n] = 0.5;
    return make_scenario("random", Categorical::from_masses(ref), RewardVector(r));
}

double random_beta(Rng& rng) { return std::exp(std::log(0.01) + rng.uniform() * std::log(500.0)); }

}  // namespace

TEST_CASE("reverse target closed-form ratio holds on random scenarios") {
    Rng rng(100);
    for (int t = 0; t < 200; ++t) {
        const auto s = random_scenario(rng);
        const double beta = random_beta(rng);
        const auto g = reverse_kl_target(s, beta);
        for (std::size_t i = 0; i < s.size(); ++i) {
            CHECK(g.in_support(i) == s.reference.in_support(i));
            for (std::size_t j = 0; j < s.size(); ++j) {
                if (!g.in_support(i) || !g.in_support(j)) continue;
                const double expected = s.reference.log_mass(i) - s.reference.log_mass(j) + (s.rewards[i] - s.rewards[j]) / beta;
                CHECK(g.log_mass(i) - g.log_mass(j) == doctest::Approx(expected).epsilon(1e-9).scale(1.0));
            }
        }
    }
}

TEST_CASE("forward target is normalized, stationary and ordered by reward") {
    Rng rng(200);
    for (int t = 0; t < 200; ++t) {
        const auto s = random_scenario(rng);
        const double beta = random_beta(rng);
        const auto sol = forward_kl_target(s, beta);
        double total = 0.0;
        for (double m : sol.distribution.masses()) total += m;
        CHECK(total == doctest::Approx(1.0).epsilon(1e-10));
        CHECK(sol.lambda >= s.rewards.max() - 1e-12);
        if (!sol.boundary_case) {
            CHECK(sol.off_support_mass == 0.0);
            CHECK(forward_stationarity_residual(s.reference, s.rewards.values(), beta, sol) < 1e-7);
        }
        // G / pi_ref grows with reward on the support.
        for (std::size_t i = 0; i < s.size(); ++i)
            for (std::size_t j = 0; j < s.size(); ++j)
                if (s.reference.in_support(i) && s.reference.in_support(j) && s.rewards[i] > s.rewards[j])
                    CHECK(sol.distribution.mass(i) / s.reference.mass(i) >=
                          sol.distribution.mass(j) / s.reference.mass(j) * (1.0 - 1e-9));
    }
}

TEST_CASE("exact gradients sum to zero and vanish on inactive tokens") {
    Rng rng(300);
    for (int t = 0; t < 100; ++t) {
        const auto s = random_scenario(rng);
        const double beta = random_beta(rng);
        for (auto kind : {ObjectiveKind::ReverseKL, ObjectiveKind::ForwardKL, ObjectiveKind::TargetMatching}) {
            const Objective obj{kind, beta, 0.0};
            const auto policy = obj.needs_reference_support() ? SoftmaxPolicy::restricted_to(s.reference)
                                                              : SoftmaxPolicy(s.size());
            const auto g = exact_gradient(policy, s, obj);
            double sum = 0.0;
            for (std::size_t i = 0; i < s.size(); ++i) {
                sum += g[i];
                if (!policy.active(i)) CHECK(g[i] == 0.0);
            }
            CHECK(std::abs(sum) < 1e-9 * (1.0 + 1.0 / beta));
        }
    }
}

TEST_CASE("mara makes every above-threshold token share the anchor's mass") {
    Rng rng(400);
    for (int t = 0; t < 200; ++t) {
        const auto s = random_scenario(rng);
        const double beta = random_beta(rng);
        const double tau = rng.uniform();
        const auto z = global_anchor(s, tau, AnchorTiebreak::LowestIndex);
        if (!z) continue;
        const auto g = mara_target(s, beta, tau, *z);
        for (std::size_t y = 0; y < s.size(); ++y) {
            if (!s.reference.in_support(y)) {
                CHECK(g.mass(y) == 0.0);
            } else if (s.rewards[y] >= tau) {
                CHECK(g.log_mass(y) == doctest::Approx(g.log_mass(*z)).epsilon(1e-12));
            }
        }
    }
}

TEST_CASE("batch anchor always qualifies and has maximal reference mass") {
    Rng rng(500);
    for (int t = 0; t < 200; ++t) {
        const auto s = random_scenario(rng);
        const double tau = rng.uniform();
        const auto batch = sample(s.reference, rng.next(), 1 + rng.next() % 20);
        const auto pos = select_anchor(batch, s, tau, AnchorTiebreak::LowestIndex);
        bool any = false;
        for (auto y : batch) any = any || s.rewards[y] >= tau;
        CHECK(pos.has_value() == any);
        if (!pos) continue;
        CHECK(s.rewards[batch[*pos]] >= tau);
        for (auto y : batch)
            if (s.rewards[y] >= tau) CHECK(s.reference.mass(y) <= s.reference.mass(batch[*pos]));
    }
}

TEST_CASE("flip beta, when it exists, equalizes the two target masses") {
    Rng rng(600);
    int found = 0;
    for (int t = 0; t < 300; ++t) {
        const auto s = random_scenario(rng);
        const std::size_t i = rng.next() % s.size(), j = rng.next() % s.size();
        double b = 0.0;
        try {
            b = flip_beta(s, i, j);
        } catch (const NoFiniteFlip&) {
            continue;
        } catch (const UndefinedRatio&) {
            continue;
        }
        ++found;
        CHECK(b > 0.0);
        const auto g = reverse_kl_target(s, b);
        CHECK(g.log_mass(i) == doctest::Approx(g.log_mass(j)).epsilon(1e-9));
    }
    CHECK(found > 20);
}
