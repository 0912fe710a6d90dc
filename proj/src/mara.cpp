#include "kllab/mara.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "kllab/errors.hpp"

namespace kllab {

void MaraConfig::validate() const {
    if (!(beta > 0.0) || !std::isfinite(beta)) throw InvalidCoefficient("MARA beta must be > 0");
    if (const auto* pct = std::get_if<BatchPercentile>(&threshold)) {
        if (!(pct->q > 0.0 && pct->q < 1.0)) throw InvalidCoefficient("MARA percentile must be in (0, 1)");
    } else if (!std::isfinite(std::get<ConstantThreshold>(threshold).tau)) {
        throw InvalidCoefficient("MARA tau must be finite");
    }
}

void MaraConfig::validate_for(const Scenario& s) const {
    validate();
    if (const auto* c = std::get_if<ConstantThreshold>(&threshold)) {
        if (c->tau > s.rewards.max())
            throw InvalidCoefficient("MARA tau " + std::to_string(c->tau) + " exceeds the max reward of '" + s.name +
                                     "'");
    }
}

std::string MaraConfig::describe() const {
    std::ostringstream os;
    if (const auto* c = std::get_if<ConstantThreshold>(&threshold)) {
        os << "const:" << c->tau;
    } else {
        os << "pct:" << std::get<BatchPercentile>(threshold).q;
    }
    return os.str();
}

double quantile_linear(std::span<const double> values, double q) {
    if (values.empty()) throw PreconditionViolation("quantile of an empty set");
    std::vector<double> sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end());
    const double h = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    if (lo + 1 >= sorted.size()) return sorted.back();
    const double frac = h - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

double resolve_threshold(const ThresholdRule& rule, std::span<const double> raw_rewards) {
    if (const auto* c = std::get_if<ConstantThreshold>(&rule)) return c->tau;
    return quantile_linear(raw_rewards, std::get<BatchPercentile>(rule).q);
}

namespace {

// True when candidate token `a` should replace incumbent `b` as anchor.
bool better_anchor(const Scenario& s, std::size_t a, std::size_t b, AnchorTiebreak tiebreak) {
    const double la = s.reference.log_mass(a);
    const double lb = s.reference.log_mass(b);
    if (la != lb) return la > lb;
    if (tiebreak == AnchorTiebreak::HighestReward) return s.rewards[a] > s.rewards[b];
    return false;
}

std::vector<double> raw_rewards_of(std::span<const std::size_t> batch, const Scenario& s) {
    std::vector<double> out(batch.size());
    for (std::size_t k = 0; k < batch.size(); ++k) out[k] = s.rewards[batch[k]];
    return out;
}

}  // namespace

std::optional<std::size_t> select_anchor(std::span<const std::size_t> batch, const Scenario& s, double threshold,
                                         AnchorTiebreak tiebreak) {
    if (batch.empty()) throw PreconditionViolation("select_anchor: empty batch");
    std::optional<std::size_t> best;
    for (std::size_t k = 0; k < batch.size(); ++k) {
        const std::size_t y = batch[k];
        if (s.rewards[y] < threshold || !s.reference.in_support(y)) continue;
        if (!best || better_anchor(s, y, batch[*best], tiebreak)) best = k;
    }
    return best;
}

AugmentedBatch augment(std::span<const std::size_t> batch, const Scenario& s, const MaraConfig& cfg, MaraView view) {
    if (batch.empty()) throw PreconditionViolation("augment: empty batch");
    AugmentedBatch out;
    out.indices.assign(batch.begin(), batch.end());
    out.raw_rewards = raw_rewards_of(batch, s);
    out.augmented_rewards = out.raw_rewards;
    out.augmented_ref_logprobs.resize(batch.size());
    for (std::size_t k = 0; k < batch.size(); ++k) out.augmented_ref_logprobs[k] = s.reference.log_mass(batch[k]);

    out.threshold_used = resolve_threshold(cfg.threshold, out.raw_rewards);
    out.anchor_position = select_anchor(batch, s, out.threshold_used, cfg.tiebreak);
    if (!out.anchor_position) return out;

    const std::size_t z = batch[*out.anchor_position];
    out.anchor_index = z;
    const double reward_z = s.rewards[z];
    const double log_ref_z = s.reference.log_mass(z);

    for (std::size_t k = 0; k < batch.size(); ++k) {
        if (out.raw_rewards[k] < out.threshold_used) continue;
        const std::size_t y = batch[k];
        if (view == MaraView::Reward) {
            const double log_ref_y = s.reference.log_mass(y);
            if (log_ref_y == kNegInf)
                throw InfiniteDivergence("MARA: qualifying sample " + std::to_string(y) +
                                         " is outside supp(pi_ref); reward shift is infinite");
            out.augmented_rewards[k] = reward_z + cfg.beta * (log_ref_z - log_ref_y);
        } else {
            out.augmented_rewards[k] = reward_z;
            out.augmented_ref_logprobs[k] = log_ref_z;
        }
    }
    return out;
}

AugmentedBatch augment_rewards(std::span<const std::size_t> batch, const Scenario& s, const MaraConfig& cfg) {
    return augment(batch, s, cfg, MaraView::Reward);
}

AugmentedBatch augment_ref_view(std::span<const std::size_t> batch, const Scenario& s, const MaraConfig& cfg) {
    return augment(batch, s, cfg, MaraView::RewardAndReference);
}

std::optional<std::size_t> global_anchor(const Scenario& s, double tau, AnchorTiebreak tiebreak) {
    std::optional<std::size_t> best;
    for (std::size_t y = 0; y < s.size(); ++y) {
        if (s.rewards[y] < tau || !s.reference.in_support(y)) continue;
        if (!best || better_anchor(s, y, *best, tiebreak)) best = y;
    }
    return best;
}

Categorical mara_target(const Scenario& s, double beta, double tau, std::size_t anchor) {
    if (!(beta > 0.0)) throw InvalidCoefficient("beta must be > 0");
    if (anchor >= s.size()) throw InvalidAnchor("anchor out of range");
    if (s.rewards[anchor] < tau) throw InvalidAnchor("anchor reward is below the threshold");
    if (!s.reference.in_support(anchor)) throw InvalidAnchor("anchor is outside supp(pi_ref)");

    const double anchored = s.reference.log_mass(anchor) + s.rewards[anchor] / beta;
    std::vector<double> lw(s.size());
    for (std::size_t y = 0; y < s.size(); ++y) {
        const double lr = s.reference.log_mass(y);
        if (lr == kNegInf) {
            lw[y] = kNegInf;
        } else {
            lw[y] = s.rewards[y] < tau ? lr + s.rewards[y] / beta : anchored;
        }
    }
    return Categorical::from_log_weights(lw);
}

double support_threshold(const Scenario& s, const ThresholdRule& rule) {
    if (const auto* c = std::get_if<ConstantThreshold>(&rule)) return c->tau;
    std::vector<double> on;
    for (std::size_t y = 0; y < s.size(); ++y) {
        if (s.reference.in_support(y)) on.push_back(s.rewards[y]);
    }
    return quantile_linear(on, std::get<BatchPercentile>(rule).q);
}

AugmentedProblem augment_support(const Scenario& s, const MaraConfig& cfg, MaraView view) {
    cfg.validate();
    AugmentedProblem p;
    p.rewards.assign(s.rewards.values().begin(), s.rewards.values().end());
    p.ref_log_weights.assign(s.reference.log_masses().begin(), s.reference.log_masses().end());
    p.threshold = support_threshold(s, cfg.threshold);
    p.anchor = global_anchor(s, p.threshold, cfg.tiebreak);
    if (!p.anchor) return p;

    const std::size_t z = *p.anchor;
    const double reward_z = s.rewards[z];
    const double log_ref_z = s.reference.log_mass(z);
    for (std::size_t y = 0; y < s.size(); ++y) {
        if (s.rewards[y] < p.threshold) continue;
        if (view == MaraView::Reward) {
            const double log_ref_y = s.reference.log_mass(y);
            if (log_ref_y == kNegInf)
                throw InfiniteDivergence("MARA: above-threshold token " + std::to_string(y) +
                                         " is outside supp(pi_ref); reward shift is infinite");
            p.rewards[y] = reward_z + cfg.beta * (log_ref_z - log_ref_y);
        } else {
            p.rewards[y] = reward_z;
            p.ref_log_weights[y] = log_ref_z;
        }
    }
    return p;
}

}  // namespace kllab
