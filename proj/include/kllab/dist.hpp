#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kllab/rng.hpp"

namespace kllab {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// log(sum(exp(x))) over the finite entries; -inf when there are none.
double log_sum_exp(std::span<const double> x);

// Probability vector over a finite token support, stored as natural-log masses.
// Indices outside the support hold kNegInf and are never sampled.
class Categorical {
public:
    // Normalizes by log-sum-exp. Throws InvalidDistribution if no entry is
    // finite or any entry is NaN / +inf.
    static Categorical from_log_weights(std::span<const double> log_weights);
    // Nonnegative (not necessarily normalized) weights; zeros become masked.
    static Categorical from_masses(std::span<const double> masses);
    static Categorical uniform(std::size_t n);

    std::size_t size() const noexcept { return log_mass_.size(); }
    double log_mass(std::size_t i) const { return log_mass_.at(i); }
    double mass(std::size_t i) const;
    bool in_support(std::size_t i) const { return log_mass_.at(i) != kNegInf; }

    std::span<const double> log_masses() const noexcept { return log_mass_; }
    std::vector<double> masses() const;
    std::vector<bool> support_mask() const;
    std::size_t support_size() const;

private:
    explicit Categorical(std::vector<double> log_mass) : log_mass_(std::move(log_mass)) {}

    std::vector<double> log_mass_;
};

inline Categorical normalize(std::span<const double> log_weights) {
    return Categorical::from_log_weights(log_weights);
}

class RewardVector {
public:
    RewardVector() = default;
    // Throws InvalidDistribution on any non-finite entry.
    explicit RewardVector(std::vector<double> values);

    std::size_t size() const noexcept { return values_.size(); }
    double operator[](std::size_t i) const { return values_[i]; }
    std::span<const double> values() const noexcept { return values_; }
    double max() const;
    double min() const;

private:
    std::vector<double> values_;
};

// Inclusive token range [first, last].
struct ModeRange {
    std::size_t first = 0;
    std::size_t last = 0;

    bool contains(std::size_t i) const noexcept { return i >= first && i <= last; }
    std::size_t width() const noexcept { return last - first + 1; }
    friend bool operator==(const ModeRange&, const ModeRange&) = default;
};

struct Scenario {
    std::string name;
    Categorical reference = Categorical::uniform(1);
    RewardVector rewards;
    // Named high-reward regions used by the per-mode metrics. May be empty.
    std::vector<ModeRange> modes;
    // Threshold defining "above-threshold mass" in traces and the MARA toy.
    double threshold = 0.0;

    std::size_t size() const noexcept { return reference.size(); }
};

// Validates lengths and mode ranges; throws InvalidDistribution.
Scenario make_scenario(std::string name, Categorical reference, RewardVector rewards,
                       std::vector<ModeRange> modes = {},
                       std::optional<double> threshold = std::nullopt);

double entropy(const Categorical& p);

// KL(p || q) = sum p (log p - log q) with 0 log 0 = 0. Throws
// InfiniteDivergence when p has mass outside supp(q).
double kl(const Categorical& p, const Categorical& q);

double tv_distance(const Categorical& p, const Categorical& q);
double tv_distance(std::span<const double> p, std::span<const double> q);

std::vector<std::size_t> sample(const Categorical& p, std::uint64_t seed, std::size_t count);
std::vector<std::size_t> sample(const Categorical& p, Rng& rng, std::size_t count);

// Inverse-CDF sampler over precomputed cumulative masses. Never returns an
// index with zero mass.
class CdfSampler {
public:
    explicit CdfSampler(std::span<const double> masses);
    std::size_t operator()(Rng& rng) const;

private:
    std::vector<double> cdf_;
    std::size_t last_positive_ = 0;
};

double mode_mass(std::span<const double> masses, const ModeRange& mode);

}  // namespace kllab
