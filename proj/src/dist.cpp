#include "kllab/dist.hpp"

#include <algorithm>
#include <cmath>

#include "kllab/errors.hpp"

namespace kllab {

double log_sum_exp(std::span<const double> x) {
    double hi = kNegInf;
    for (double v : x) hi = std::max(hi, v);
    if (hi == kNegInf) return kNegInf;
    double sum = 0.0;
    for (double v : x) {
        if (v != kNegInf) sum += std::exp(v - hi);
    }
    return hi + std::log(sum);
}

Categorical Categorical::from_log_weights(std::span<const double> log_weights) {
    if (log_weights.empty()) throw InvalidDistribution("empty support");
    for (double v : log_weights) {
        if (std::isnan(v) || v == std::numeric_limits<double>::infinity())
            throw InvalidDistribution("log-weight is NaN or +inf");
    }
    const double lse = log_sum_exp(log_weights);
    if (lse == kNegInf) throw InvalidDistribution("no finite log-weight");

    std::vector<double> out(log_weights.begin(), log_weights.end());
    for (double& v : out) {
        if (v != kNegInf) v -= lse;
    }
    return Categorical(std::move(out));
}

Categorical Categorical::from_masses(std::span<const double> masses) {
    std::vector<double> logs(masses.size());
    for (std::size_t i = 0; i < masses.size(); ++i) {
        const double m = masses[i];
        if (!(m >= 0.0) || !std::isfinite(m)) throw InvalidDistribution("mass must be finite and >= 0");
        logs[i] = m > 0.0 ? std::log(m) : kNegInf;
    }
    return from_log_weights(logs);
}

Categorical Categorical::uniform(std::size_t n) {
    if (n == 0) throw InvalidDistribution("empty support");
    return Categorical(std::vector<double>(n, -std::log(static_cast<double>(n))));
}

double Categorical::mass(std::size_t i) const {
    const double l = log_mass_.at(i);
    return l == kNegInf ? 0.0 : std::exp(l);
}

std::vector<double> Categorical::masses() const {
    std::vector<double> out(size());
    for (std::size_t i = 0; i < size(); ++i) out[i] = mass(i);
    return out;
}

std::vector<bool> Categorical::support_mask() const {
    std::vector<bool> out(size());
    for (std::size_t i = 0; i < size(); ++i) out[i] = in_support(i);
    return out;
}

std::size_t Categorical::support_size() const {
    return static_cast<std::size_t>(
        std::count_if(log_mass_.begin(), log_mass_.end(), [](double v) { return v != kNegInf; }));
}

RewardVector::RewardVector(std::vector<double> values) : values_(std::move(values)) {
    for (double v : values_) {
        if (!std::isfinite(v)) throw InvalidDistribution("rewards must be finite");
    }
}

double RewardVector::max() const { return *std::max_element(values_.begin(), values_.end()); }
double RewardVector::min() const { return *std::min_element(values_.begin(), values_.end()); }

Scenario make_scenario(std::string name, Categorical reference, RewardVector rewards,
                       std::vector<ModeRange> modes, std::optional<double> threshold) {
    if (rewards.size() != reference.size())
        throw InvalidDistribution("scenario '" + name + "': reward length " + std::to_string(rewards.size()) +
                                  " != reference length " + std::to_string(reference.size()));
    for (const auto& m : modes) {
        if (m.first > m.last || m.last >= reference.size())
            throw InvalidDistribution("scenario '" + name + "': mode range out of bounds");
    }
    Scenario s;
    s.name = std::move(name);
    s.reference = std::move(reference);
    s.rewards = std::move(rewards);
    s.modes = std::move(modes);
    s.threshold = threshold.value_or(0.5 * (s.rewards.min() + s.rewards.max()));
    return s;
}

double entropy(const Categorical& p) {
    double h = 0.0;
    for (double l : p.log_masses()) {
        if (l != kNegInf) h -= std::exp(l) * l;
    }
    return h;
}

double kl(const Categorical& p, const Categorical& q) {
    if (p.size() != q.size()) throw InvalidDistribution("kl: length mismatch");
    double d = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double lp = p.log_mass(i);
        if (lp == kNegInf) continue;
        const double lq = q.log_mass(i);
        if (lq == kNegInf)
            throw InfiniteDivergence("kl: p has mass at index " + std::to_string(i) + " outside supp(q)");
        d += std::exp(lp) * (lp - lq);
    }
    return d;
}

double tv_distance(std::span<const double> p, std::span<const double> q) {
    if (p.size() != q.size()) throw InvalidDistribution("tv_distance: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - q[i]);
    return 0.5 * s;
}

double tv_distance(const Categorical& p, const Categorical& q) {
    return tv_distance(p.masses(), q.masses());
}

CdfSampler::CdfSampler(std::span<const double> masses) : cdf_(masses.size()) {
    double acc = 0.0;
    for (std::size_t i = 0; i < masses.size(); ++i) {
        acc += masses[i];
        cdf_[i] = acc;
        if (masses[i] > 0.0) last_positive_ = i;
    }
    if (!(acc > 0.0)) throw InvalidDistribution("sampler: no positive mass");
}

std::size_t CdfSampler::operator()(Rng& rng) const {
    const double u = rng.uniform() * cdf_.back();
    // First index with cdf > u. A zero-mass index repeats its predecessor's
    // cdf value and so can never be the first one to exceed u.
    const auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
    const auto i = static_cast<std::size_t>(it - cdf_.begin());
    return std::min(i, last_positive_);
}

std::vector<std::size_t> sample(const Categorical& p, Rng& rng, std::size_t count) {
    const CdfSampler draw(p.masses());
    std::vector<std::size_t> out(count);
    for (auto& i : out) i = draw(rng);
    return out;
}

std::vector<std::size_t> sample(const Categorical& p, std::uint64_t seed, std::size_t count) {
    Rng rng(seed);
    return sample(p, rng, count);
}

double mode_mass(std::span<const double> masses, const ModeRange& mode) {
    double s = 0.0;
    for (std::size_t i = mode.first; i <= mode.last && i < masses.size(); ++i) s += masses[i];
    return s;
}

}  // namespace kllab
