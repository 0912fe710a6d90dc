#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "kllab/dist.hpp"

namespace kllab {

// Mode Anchored Reward Augmentation.
//
// Above-threshold samples get r = R(z) + beta (log pi_ref(z) - log pi_ref(y))
// relative to an anchor z, the qualifying sample with the highest reference
// probability. Under reverse-KL regularization this makes every
// above-threshold token share the anchor's target mass.

enum class AnchorTiebreak { LowestIndex, HighestReward };

struct ConstantThreshold {
    double tau = 0.0;
};

struct BatchPercentile {
    double q = 0.9;  // in (0, 1)
};

using ThresholdRule = std::variant<ConstantThreshold, BatchPercentile>;

struct MaraConfig {
    ThresholdRule threshold = ConstantThreshold{};
    double beta = 0.1;
    AnchorTiebreak tiebreak = AnchorTiebreak::LowestIndex;

    void validate() const;
    // Also checks a constant tau against the scenario's max reward.
    void validate_for(const Scenario& s) const;
    // "const:<tau>" or "pct:<q>", as written to records.csv.
    std::string describe() const;
};

// Which quantities the augmentation rewrites for qualifying samples.
enum class MaraView {
    Reward,              // reward-only rewrite (reference log-prob unchanged)
    RewardAndReference,  // reward := R(z), reference log-prob := log pi_ref(z)
};

struct AugmentedBatch {
    std::vector<std::size_t> indices;
    std::vector<double> raw_rewards;
    std::vector<double> augmented_rewards;
    std::optional<std::size_t> anchor_index;     // token id of the anchor
    std::optional<std::size_t> anchor_position;  // position of the anchor in the batch
    double threshold_used = 0.0;
    std::vector<double> augmented_ref_logprobs;
};

// Empirical q-quantile with linear interpolation between order statistics.
double quantile_linear(std::span<const double> values, double q);

double resolve_threshold(const ThresholdRule& rule, std::span<const double> raw_rewards);

// Position (within `batch`) of the argmax-pi_ref sample among those with
// R >= threshold; nullopt when none qualifies.
std::optional<std::size_t> select_anchor(std::span<const std::size_t> batch, const Scenario& s, double threshold,
                                         AnchorTiebreak tiebreak);

// Reward-only rewrite. Throws InfiniteDivergence if a qualifying sample lies
// outside supp(pi_ref).
AugmentedBatch augment_rewards(std::span<const std::size_t> batch, const Scenario& s, const MaraConfig& cfg);

// Reward-and-reference rewrite: qualifying samples carry (R(z), log pi_ref(z)).
AugmentedBatch augment_ref_view(std::span<const std::size_t> batch, const Scenario& s, const MaraConfig& cfg);

AugmentedBatch augment(std::span<const std::size_t> batch, const Scenario& s, const MaraConfig& cfg, MaraView view);

// Anchor over the whole support: argmax pi_ref among tokens with R >= tau.
std::optional<std::size_t> global_anchor(const Scenario& s, double tau, AnchorTiebreak tiebreak);

// Analytic reverse-KL optimum under the augmented reward with a fixed anchor.
// Tokens outside supp(pi_ref) stay masked.
Categorical mara_target(const Scenario& s, double beta, double tau, std::size_t anchor);

// Whole-support augmentation used by exact-gradient training. Reference
// weights in the RewardAndReference view are unnormalized.
struct AugmentedProblem {
    std::vector<double> rewards;
    std::vector<double> ref_log_weights;
    std::optional<std::size_t> anchor;
    double threshold = 0.0;
};

// Threshold over the whole support: tau for a constant rule, otherwise the
// q-quantile of rewards over supp(pi_ref).
double support_threshold(const Scenario& s, const ThresholdRule& rule);

AugmentedProblem augment_support(const Scenario& s, const MaraConfig& cfg, MaraView view);

}  // namespace kllab
