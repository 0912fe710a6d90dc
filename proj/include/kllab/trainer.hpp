#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "kllab/dist.hpp"
#include "kllab/mara.hpp"
#include "kllab/rng.hpp"

namespace kllab {

enum class ObjectiveKind {
    ReverseKL,       // E[R] - beta KL(pi || ref)
    ForwardKL,       // E[R] - beta KL(ref || pi)
    Generalized,     // E[R] - beta KL(pi || ref) + eta H(pi)
    TargetMatching,  // -KL(G_beta || pi), fitted by maximum likelihood on target samples
};

std::string_view to_string(ObjectiveKind kind);
ObjectiveKind parse_objective_kind(std::string_view text);  // reverse | forward | generalized | matching

struct Objective {
    ObjectiveKind kind = ObjectiveKind::ReverseKL;
    double beta = 0.1;
    double eta = 0.0;

    void validate() const;
    // Reverse-type regularizers are infinite unless pi stays inside supp(ref).
    bool needs_reference_support() const noexcept;
};

// Rewards and reference log-weights an objective is evaluated against. The
// weights need not be normalized (the MARA reward-and-reference view is not).
struct RegularizedProblem {
    std::vector<double> rewards;
    std::vector<double> ref_log_weights;

    static RegularizedProblem from(const Scenario& s);
    static RegularizedProblem from(const AugmentedProblem& p);
    std::size_t size() const noexcept { return rewards.size(); }
};

// Categorical policy pi = softmax(logits) over its active tokens. Inactive
// tokens have zero probability and never receive updates.
class SoftmaxPolicy {
public:
    explicit SoftmaxPolicy(std::size_t n);
    explicit SoftmaxPolicy(std::vector<double> logits, std::vector<bool> active = {});

    // All-zero logits over supp(support), inactive elsewhere.
    static SoftmaxPolicy restricted_to(const Categorical& support);
    static SoftmaxPolicy from_distribution(const Categorical& p);

    std::size_t size() const noexcept { return logits_.size(); }
    std::span<const double> logits() const noexcept { return logits_; }
    std::span<double> logits() noexcept { return logits_; }
    bool active(std::size_t i) const { return active_.at(i); }
    const std::vector<bool>& active_mask() const noexcept { return active_; }

    Categorical distribution() const;

private:
    std::vector<double> logits_;
    std::vector<bool> active_;
};

// Full-sum objective value. Throws InfiniteDivergence when the regularizer is
// infinite (reverse-type KL with policy mass outside supp(ref), or
// forward KL with ref mass outside supp(pi)).
double exact_objective(const SoftmaxPolicy& policy, const Scenario& s, const Objective& objective);
double exact_objective(const SoftmaxPolicy& policy, const RegularizedProblem& problem, const Objective& objective);

// dJ/dlogits by enumeration over the support.
std::vector<double> exact_gradient(const SoftmaxPolicy& policy, const Scenario& s, const Objective& objective);
std::vector<double> exact_gradient(const SoftmaxPolicy& policy, const RegularizedProblem& problem,
                                   const Objective& objective);

// d KL(pi || target) / dlogits.
std::vector<double> reverse_kl_gradient(const SoftmaxPolicy& policy, const Categorical& target);

// Analytic optimum of `objective` on `problem`.
Categorical problem_target(const RegularizedProblem& problem, const Objective& objective);

enum class Baseline { None, BatchMean, LeaveOneOut };
enum class ForwardRegularizer { Exact, Sampled };

std::string_view to_string(Baseline b);
Baseline parse_baseline(std::string_view text);  // none | batch_mean | leave_one_out

// Per-sample score-function coefficient reward - beta (log pi(y) - log ref(y)) - eta log pi(y).
double tilted_coefficient(double reward, double ref_logprob, double policy_logprob, double beta, double eta = 0.0);

// (1/N) sum_i (c_i - b_i) grad log pi(y_i). BatchMean subtracts the batch mean
// and rescales by N/(N-1), which removes the self-inclusion bias and makes it
// algebraically equal to LeaveOneOut.
std::vector<double> score_function_gradient(std::span<const double> policy_masses, std::span<const std::size_t> samples,
                                            std::span<const double> coefficients, Baseline baseline);

std::vector<double> mc_gradient_reverse(const SoftmaxPolicy& policy, const Scenario& s, double beta, std::size_t batch,
                                        Baseline baseline, Rng& rng);
std::vector<double> mc_gradient_reverse(const SoftmaxPolicy& policy, const Scenario& s, double beta, std::size_t batch,
                                        Baseline baseline, std::uint64_t seed);

// Reward term from policy samples; the regularizer beta (ref - pi) is exact by
// default, or estimated from reference samples with ForwardRegularizer::Sampled.
std::vector<double> mc_gradient_forward(const SoftmaxPolicy& policy, const Scenario& s, double beta, std::size_t batch,
                                        Rng& rng, ForwardRegularizer reg = ForwardRegularizer::Exact,
                                        Baseline baseline = Baseline::None);
std::vector<double> mc_gradient_forward(const SoftmaxPolicy& policy, const Scenario& s, double beta, std::size_t batch,
                                        std::uint64_t seed, ForwardRegularizer reg = ForwardRegularizer::Exact,
                                        Baseline baseline = Baseline::None);

// Gradient of KL(target || pi): -mean over target samples of grad log pi(y).
std::vector<double> matching_step_sft(const SoftmaxPolicy& policy, const Categorical& target, std::size_t batch,
                                      Rng& rng);
std::vector<double> matching_step_sft(const SoftmaxPolicy& policy, const Categorical& target, std::size_t batch,
                                      std::uint64_t seed);

struct AdamParams {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct AdamState {
    std::vector<double> params;
    std::vector<double> m;
    std::vector<double> v;
    std::size_t step = 0;

    AdamState() = default;
    explicit AdamState(std::vector<double> initial)
        : params(std::move(initial)), m(params.size(), 0.0), v(params.size(), 0.0) {}
};

// One bias-corrected Adam update that descends `gradient`. Throws
// NonFiniteGradient on NaN/inf input.
AdamState adam_step(AdamState state, std::span<const double> gradient, double lr, const AdamParams& params);

enum class GradientMode { Exact, MonteCarlo };

struct TrainConfig {
    Objective objective;
    GradientMode mode = GradientMode::Exact;
    std::size_t batch = 32;
    Baseline baseline = Baseline::BatchMean;
    ForwardRegularizer forward_regularizer = ForwardRegularizer::Exact;
    std::optional<MaraConfig> mara;
    // Defaults to Reward for reverse-type objectives and RewardAndReference for
    // forward KL, where only the latter yields a uniform above-threshold target.
    std::optional<MaraView> mara_view;
    std::size_t steps = 3000;
    double learning_rate = 5e-3;
    AdamParams adam;
    std::uint64_t seed = 0;

    void validate() const;
    MaraView effective_mara_view() const;
};

struct TraceRecord {
    double objective = 0.0;
    double tv_to_target = 0.0;
    double entropy = 0.0;
    double above_threshold_mass = 0.0;
};

struct TrainResult {
    Categorical final_policy = Categorical::uniform(1);
    Categorical target = Categorical::uniform(1);
    std::vector<TraceRecord> trace;
    std::vector<std::optional<std::size_t>> anchor_history;  // per step, MARA only
    std::size_t anchor_churn = 0;
};

// The distribution `train` converges to: the analytic optimum of the
// objective, on the MARA-augmented problem (global anchor) when MARA is on.
Categorical analytic_target(const Scenario& s, const TrainConfig& cfg);

TrainResult train(const Scenario& s, const TrainConfig& cfg);

// Number of changes between consecutive present anchors.
std::size_t count_anchor_churn(std::span<const std::optional<std::size_t>> history);

}  // namespace kllab
