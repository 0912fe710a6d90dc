#include "kllab/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "kllab/errors.hpp"
#include "kllab/targets.hpp"

namespace kllab {

std::string_view to_string(ObjectiveKind kind) {
    switch (kind) {
        case ObjectiveKind::ReverseKL: return "reverse";
        case ObjectiveKind::ForwardKL: return "forward";
        case ObjectiveKind::Generalized: return "generalized";
        case ObjectiveKind::TargetMatching: return "matching";
    }
    return "?";
}

ObjectiveKind parse_objective_kind(std::string_view text) {
    if (text == "reverse") return ObjectiveKind::ReverseKL;
    if (text == "forward") return ObjectiveKind::ForwardKL;
    if (text == "generalized") return ObjectiveKind::Generalized;
    if (text == "matching") return ObjectiveKind::TargetMatching;
    throw PreconditionViolation("unknown objective '" + std::string(text) + "'");
}

std::string_view to_string(Baseline b) {
    switch (b) {
        case Baseline::None: return "none";
        case Baseline::BatchMean: return "batch_mean";
        case Baseline::LeaveOneOut: return "leave_one_out";
    }
    return "?";
}

Baseline parse_baseline(std::string_view text) {
    if (text == "none") return Baseline::None;
    if (text == "batch_mean") return Baseline::BatchMean;
    if (text == "leave_one_out") return Baseline::LeaveOneOut;
    throw PreconditionViolation("unknown baseline '" + std::string(text) + "'");
}

void Objective::validate() const {
    if (!std::isfinite(beta) || !std::isfinite(eta)) throw InvalidCoefficient("coefficients must be finite");
    if (kind == ObjectiveKind::Generalized) {
        if (beta < 0.0 || eta < 0.0) throw InvalidCoefficient("beta and eta must be >= 0");
        if (!(beta + eta > 0.0)) throw InvalidCoefficient("beta + eta must be > 0");
        return;
    }
    if (!(beta > 0.0)) throw InvalidCoefficient("beta must be > 0, got " + std::to_string(beta));
}

bool Objective::needs_reference_support() const noexcept {
    return kind == ObjectiveKind::ReverseKL || (kind == ObjectiveKind::Generalized && beta > 0.0);
}

RegularizedProblem RegularizedProblem::from(const Scenario& s) {
    RegularizedProblem p;
    p.rewards.assign(s.rewards.values().begin(), s.rewards.values().end());
    p.ref_log_weights.assign(s.reference.log_masses().begin(), s.reference.log_masses().end());
    return p;
}

RegularizedProblem RegularizedProblem::from(const AugmentedProblem& a) {
    return RegularizedProblem{a.rewards, a.ref_log_weights};
}

SoftmaxPolicy::SoftmaxPolicy(std::size_t n) : logits_(n, 0.0), active_(n, true) {
    if (n == 0) throw InvalidDistribution("policy needs at least one token");
}

SoftmaxPolicy::SoftmaxPolicy(std::vector<double> logits, std::vector<bool> active)
    : logits_(std::move(logits)), active_(std::move(active)) {
    if (logits_.empty()) throw InvalidDistribution("policy needs at least one token");
    if (active_.empty()) active_.assign(logits_.size(), true);
    if (active_.size() != logits_.size()) throw InvalidDistribution("policy mask length mismatch");
    if (std::none_of(active_.begin(), active_.end(), [](bool b) { return b; }))
        throw InvalidDistribution("policy has no active token");
    for (double x : logits_) {
        if (!std::isfinite(x)) throw InvalidDistribution("policy logits must be finite");
    }
}

SoftmaxPolicy SoftmaxPolicy::restricted_to(const Categorical& support) {
    return SoftmaxPolicy(std::vector<double>(support.size(), 0.0), support.support_mask());
}

SoftmaxPolicy SoftmaxPolicy::from_distribution(const Categorical& p) {
    std::vector<double> logits(p.size(), 0.0);
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p.in_support(i)) logits[i] = p.log_mass(i);
    }
    return SoftmaxPolicy(std::move(logits), p.support_mask());
}

Categorical SoftmaxPolicy::distribution() const {
    std::vector<double> lw(logits_.size());
    for (std::size_t i = 0; i < lw.size(); ++i) lw[i] = active_[i] ? logits_[i] : kNegInf;
    return Categorical::from_log_weights(lw);
}

namespace {

void check_sizes(const SoftmaxPolicy& policy, const RegularizedProblem& problem) {
    if (problem.rewards.size() != policy.size() || problem.ref_log_weights.size() != policy.size())
        throw PreconditionViolation("policy and problem sizes differ");
}

Categorical reverse_problem_target(const RegularizedProblem& problem, double beta) {
    std::vector<double> lw(problem.size());
    for (std::size_t i = 0; i < lw.size(); ++i) {
        const double w = problem.ref_log_weights[i];
        lw[i] = w == kNegInf ? kNegInf : w + problem.rewards[i] / beta;
    }
    return Categorical::from_log_weights(lw);
}

std::vector<double> weights_of(std::span<const double> log_weights) {
    std::vector<double> w(log_weights.size());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::exp(log_weights[i]);
    return w;
}

double sum_of(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s;
}

// E_pi[R] and the reverse-type penalty terms share this loop.
double reverse_type_objective(const Categorical& pi, const RegularizedProblem& problem, double beta, double eta) {
    double value = 0.0;
    for (std::size_t k = 0; k < pi.size(); ++k) {
        if (!pi.in_support(k)) continue;
        const double p = pi.mass(k);
        const double lp = pi.log_mass(k);
        double a = problem.rewards[k] - eta * lp;
        if (beta > 0.0) {
            const double w = problem.ref_log_weights[k];
            if (w == kNegInf) throw InfiniteDivergence("policy puts mass on token " + std::to_string(k) +
                                                       " outside supp(pi_ref)");
            a -= beta * (lp - w);
        }
        value += p * a;
    }
    return value;
}

}  // namespace

Categorical problem_target(const RegularizedProblem& problem, const Objective& objective) {
    objective.validate();
    switch (objective.kind) {
        case ObjectiveKind::ReverseKL:
        case ObjectiveKind::TargetMatching: return reverse_problem_target(problem, objective.beta);
        case ObjectiveKind::ForwardKL: {
            const double log_total = log_sum_exp(problem.ref_log_weights);
            const Categorical ref = Categorical::from_log_weights(problem.ref_log_weights);
            return forward_kl_target(ref, problem.rewards, objective.beta * std::exp(log_total)).distribution;
        }
        case ObjectiveKind::Generalized: {
            const double total = objective.beta + objective.eta;
            std::vector<double> lw(problem.size());
            for (std::size_t i = 0; i < lw.size(); ++i) {
                const double w = problem.ref_log_weights[i];
                if (objective.beta == 0.0) {
                    lw[i] = problem.rewards[i] / total;
                } else {
                    lw[i] = w == kNegInf ? kNegInf : (objective.beta / total) * w + problem.rewards[i] / total;
                }
            }
            return Categorical::from_log_weights(lw);
        }
    }
    throw PreconditionViolation("unknown objective");
}

double exact_objective(const SoftmaxPolicy& policy, const RegularizedProblem& problem, const Objective& objective) {
    objective.validate();
    check_sizes(policy, problem);
    const Categorical pi = policy.distribution();
    switch (objective.kind) {
        case ObjectiveKind::ReverseKL: return reverse_type_objective(pi, problem, objective.beta, 0.0);
        case ObjectiveKind::Generalized: return reverse_type_objective(pi, problem, objective.beta, objective.eta);
        case ObjectiveKind::ForwardKL: {
            double value = 0.0;
            for (std::size_t k = 0; k < pi.size(); ++k) value += pi.mass(k) * problem.rewards[k];
            double penalty = 0.0;
            for (std::size_t k = 0; k < pi.size(); ++k) {
                const double w = problem.ref_log_weights[k];
                if (w == kNegInf) continue;
                if (!pi.in_support(k))
                    throw InfiniteDivergence("pi_ref has mass on token " + std::to_string(k) + " outside supp(pi)");
                penalty += std::exp(w) * (w - pi.log_mass(k));
            }
            return value - objective.beta * penalty;
        }
        case ObjectiveKind::TargetMatching:
            return -kl(problem_target(problem, objective), pi);
    }
    throw PreconditionViolation("unknown objective");
}

double exact_objective(const SoftmaxPolicy& policy, const Scenario& s, const Objective& objective) {
    return exact_objective(policy, RegularizedProblem::from(s), objective);
}

std::vector<double> exact_gradient(const SoftmaxPolicy& policy, const RegularizedProblem& problem,
                                   const Objective& objective) {
    objective.validate();
    check_sizes(policy, problem);
    const Categorical pi = policy.distribution();
    const std::size_t n = pi.size();
    std::vector<double> g(n, 0.0);

    switch (objective.kind) {
        case ObjectiveKind::ReverseKL:
        case ObjectiveKind::Generalized: {
            const double beta = objective.beta;
            const double eta = objective.kind == ObjectiveKind::Generalized ? objective.eta : 0.0;
            std::vector<double> a(n, 0.0);
            double mean = 0.0;
            for (std::size_t k = 0; k < n; ++k) {
                if (!pi.in_support(k)) continue;
                const double lp = pi.log_mass(k);
                a[k] = problem.rewards[k] - eta * lp;
                if (beta > 0.0) {
                    const double w = problem.ref_log_weights[k];
                    if (w == kNegInf)
                        throw InfiniteDivergence("policy puts mass on token " + std::to_string(k) +
                                                 " outside supp(pi_ref)");
                    a[k] -= beta * (lp - w);
                }
                mean += pi.mass(k) * a[k];
            }
            for (std::size_t k = 0; k < n; ++k) {
                if (pi.in_support(k)) g[k] = pi.mass(k) * (a[k] - mean);
            }
            break;
        }
        case ObjectiveKind::ForwardKL: {
            const std::vector<double> w = weights_of(problem.ref_log_weights);
            double total = 0.0;
            double mean_reward = 0.0;
            for (std::size_t k = 0; k < n; ++k) {
                if (w[k] > 0.0 && !pi.in_support(k))
                    throw InfiniteDivergence("pi_ref has mass on token " + std::to_string(k) + " outside supp(pi)");
                total += w[k];
                mean_reward += pi.mass(k) * problem.rewards[k];
            }
            for (std::size_t k = 0; k < n; ++k) {
                if (!pi.in_support(k)) continue;
                const double p = pi.mass(k);
                g[k] = p * (problem.rewards[k] - mean_reward) + objective.beta * (w[k] - p * total);
            }
            break;
        }
        case ObjectiveKind::TargetMatching: {
            const Categorical target = problem_target(problem, objective);
            for (std::size_t k = 0; k < n; ++k) {
                if (target.in_support(k) && !pi.in_support(k))
                    throw InfiniteDivergence("target has mass on token " + std::to_string(k) + " outside supp(pi)");
                if (pi.in_support(k)) g[k] = target.mass(k) - pi.mass(k);
            }
            break;
        }
    }
    return g;
}

std::vector<double> exact_gradient(const SoftmaxPolicy& policy, const Scenario& s, const Objective& objective) {
    return exact_gradient(policy, RegularizedProblem::from(s), objective);
}

std::vector<double> reverse_kl_gradient(const SoftmaxPolicy& policy, const Categorical& target) {
    if (target.size() != policy.size()) throw PreconditionViolation("policy and target sizes differ");
    const Categorical pi = policy.distribution();
    const double divergence = kl(pi, target);
    std::vector<double> g(pi.size(), 0.0);
    for (std::size_t k = 0; k < pi.size(); ++k) {
        if (!pi.in_support(k)) continue;
        g[k] = pi.mass(k) * (pi.log_mass(k) - target.log_mass(k) - divergence);
    }
    return g;
}

double tilted_coefficient(double reward, double ref_logprob, double policy_logprob, double beta, double eta) {
    double c = reward - eta * policy_logprob;
    if (beta > 0.0) {
        if (ref_logprob == kNegInf) throw InfiniteDivergence("sample outside supp(pi_ref)");
        c -= beta * (policy_logprob - ref_logprob);
    }
    return c;
}

std::vector<double> score_function_gradient(std::span<const double> policy_masses, std::span<const std::size_t> samples,
                                            std::span<const double> coefficients, Baseline baseline) {
    const std::size_t n = samples.size();
    if (n == 0) throw PreconditionViolation("empty batch");
    if (coefficients.size() != n) throw PreconditionViolation("one coefficient per sample required");
    if (baseline == Baseline::LeaveOneOut && n < 2) throw PreconditionViolation("leave-one-out needs batch >= 2");

    const double count = static_cast<double>(n);
    const double total = sum_of(coefficients);
    std::vector<double> advantage(coefficients.begin(), coefficients.end());
    switch (baseline) {
        case Baseline::None: break;
        case Baseline::BatchMean: {
            const double mean = total / count;
            const double scale = n > 1 ? count / (count - 1.0) : 1.0;
            for (double& a : advantage) a = scale * (a - mean);
            break;
        }
        case Baseline::LeaveOneOut:
            for (double& a : advantage) a -= (total - a) / (count - 1.0);
            break;
    }

    std::vector<double> g(policy_masses.size(), 0.0);
    double advantage_sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        g.at(samples[i]) += advantage[i];
        advantage_sum += advantage[i];
    }
    for (std::size_t k = 0; k < g.size(); ++k) g[k] = (g[k] - policy_masses[k] * advantage_sum) / count;
    return g;
}

namespace {

struct MarkedBatch {
    std::vector<std::size_t> samples;
    std::vector<double> rewards;
    std::vector<double> ref_logprobs;
    std::optional<std::size_t> anchor;
    double threshold = 0.0;
};

MarkedBatch draw_batch(const Categorical& pi, const std::vector<double>& masses, const Scenario& s, std::size_t batch,
                       const std::optional<MaraConfig>& mara, MaraView view, Rng& rng) {
    if (batch == 0) throw PreconditionViolation("batch must be >= 1");
    if (pi.size() != s.size()) throw PreconditionViolation("policy and scenario sizes differ");
    const CdfSampler sampler(masses);
    MarkedBatch b;
    b.samples.resize(batch);
    for (auto& y : b.samples) y = sampler(rng);
    if (mara) {
        AugmentedBatch a = augment(b.samples, s, *mara, view);
        b.rewards = std::move(a.augmented_rewards);
        b.ref_logprobs = std::move(a.augmented_ref_logprobs);
        b.anchor = a.anchor_index;
        b.threshold = a.threshold_used;
    } else {
        b.rewards.resize(batch);
        b.ref_logprobs.resize(batch);
        for (std::size_t i = 0; i < batch; ++i) {
            b.rewards[i] = s.rewards[b.samples[i]];
            b.ref_logprobs[i] = s.reference.log_mass(b.samples[i]);
        }
    }
    return b;
}

std::vector<double> reverse_type_step(const Categorical& pi, const Scenario& s, double beta, double eta,
                                      std::size_t batch, Baseline baseline, const std::optional<MaraConfig>& mara,
                                      MaraView view, Rng& rng, std::optional<std::size_t>* anchor) {
    const std::vector<double> masses = pi.masses();
    const MarkedBatch b = draw_batch(pi, masses, s, batch, mara, view, rng);
    if (anchor) *anchor = b.anchor;
    std::vector<double> c(batch);
    for (std::size_t i = 0; i < batch; ++i) {
        const std::size_t y = b.samples[i];
        if (beta > 0.0 && b.ref_logprobs[i] == kNegInf)
            throw InfiniteDivergence("sampled token " + std::to_string(y) + " is outside supp(pi_ref)");
        c[i] = tilted_coefficient(b.rewards[i], b.ref_logprobs[i], pi.log_mass(y), beta, eta);
    }
    return score_function_gradient(masses, b.samples, c, baseline);
}

std::vector<double> forward_step(const Categorical& pi, const Scenario& s, double beta, std::size_t batch,
                                 Baseline baseline, ForwardRegularizer reg, const std::optional<MaraConfig>& mara,
                                 MaraView view, Rng& rng, std::optional<std::size_t>* anchor) {
    const std::vector<double> masses = pi.masses();
    const MarkedBatch b = draw_batch(pi, masses, s, batch, mara, view, rng);
    if (anchor) *anchor = b.anchor;
    std::vector<double> g = score_function_gradient(masses, b.samples, b.rewards, baseline);
    if (beta == 0.0) return g;

    // Reference weights seen by the regularizer. In the reward-and-reference
    // view every above-threshold token carries the batch anchor's probability.
    std::vector<double> w = s.reference.masses();
    if (mara && view == MaraView::RewardAndReference && b.anchor) {
        const double anchored = s.reference.mass(*b.anchor);
        for (std::size_t y = 0; y < w.size(); ++y) {
            if (s.rewards[y] >= b.threshold) w[y] = anchored;
        }
    }
    const double total = sum_of(w);

    if (reg == ForwardRegularizer::Exact) {
        for (std::size_t k = 0; k < g.size(); ++k) g[k] += beta * (w[k] - masses[k] * total);
        return g;
    }
    const CdfSampler ref_sampler(w);
    std::vector<double> counts(g.size(), 0.0);
    for (std::size_t i = 0; i < batch; ++i) counts[ref_sampler(rng)] += 1.0;
    const double inv = 1.0 / static_cast<double>(batch);
    for (std::size_t k = 0; k < g.size(); ++k) g[k] += beta * total * (counts[k] * inv - masses[k]);
    return g;
}

std::vector<double> sft_ascent(const Categorical& pi, const Categorical& target, std::size_t batch, Rng& rng) {
    if (batch == 0) throw PreconditionViolation("batch must be >= 1");
    if (target.size() != pi.size()) throw PreconditionViolation("policy and target sizes differ");
    const CdfSampler sampler(target.masses());
    std::vector<double> g(pi.size(), 0.0);
    const double inv = 1.0 / static_cast<double>(batch);
    for (std::size_t i = 0; i < batch; ++i) {
        const std::size_t y = sampler(rng);
        if (!pi.in_support(y)) throw InfiniteDivergence("target sample " + std::to_string(y) + " outside supp(pi)");
        g[y] += inv;
    }
    for (std::size_t k = 0; k < g.size(); ++k) g[k] -= pi.mass(k);
    return g;
}

}  // namespace

std::vector<double> mc_gradient_reverse(const SoftmaxPolicy& policy, const Scenario& s, double beta, std::size_t batch,
                                        Baseline baseline, Rng& rng) {
    if (!(beta > 0.0)) throw InvalidCoefficient("beta must be > 0");
    return reverse_type_step(policy.distribution(), s, beta, 0.0, batch, baseline, std::nullopt, MaraView::Reward, rng,
                             nullptr);
}

std::vector<double> mc_gradient_reverse(const SoftmaxPolicy& policy, const Scenario& s, double beta, std::size_t batch,
                                        Baseline baseline, std::uint64_t seed) {
    Rng rng(seed);
    return mc_gradient_reverse(policy, s, beta, batch, baseline, rng);
}

std::vector<double> mc_gradient_forward(const SoftmaxPolicy& policy, const Scenario& s, double beta, std::size_t batch,
                                        Rng& rng, ForwardRegularizer reg, Baseline baseline) {
    if (beta < 0.0 || !std::isfinite(beta)) throw InvalidCoefficient("beta must be >= 0");
    return forward_step(policy.distribution(), s, beta, batch, baseline, reg, std::nullopt, MaraView::Reward, rng,
                        nullptr);
}

std::vector<double> mc_gradient_forward(const SoftmaxPolicy& policy, const Scenario& s, double beta, std::size_t batch,
                                        std::uint64_t seed, ForwardRegularizer reg, Baseline baseline) {
    Rng rng(seed);
    return mc_gradient_forward(policy, s, beta, batch, rng, reg, baseline);
}

std::vector<double> matching_step_sft(const SoftmaxPolicy& policy, const Categorical& target, std::size_t batch,
                                      Rng& rng) {
    std::vector<double> g = sft_ascent(policy.distribution(), target, batch, rng);
    for (double& x : g) x = -x;
    return g;
}

std::vector<double> matching_step_sft(const SoftmaxPolicy& policy, const Categorical& target, std::size_t batch,
                                      std::uint64_t seed) {
    Rng rng(seed);
    return matching_step_sft(policy, target, batch, rng);
}

AdamState adam_step(AdamState state, std::span<const double> gradient, double lr, const AdamParams& params) {
    const std::size_t n = state.params.size();
    if (gradient.size() != n || state.m.size() != n || state.v.size() != n)
        throw PreconditionViolation("Adam state and gradient dimensions differ");
    for (std::size_t i = 0; i < n; ++i) {
        if (!std::isfinite(gradient[i]))
            throw NonFiniteGradient("non-finite gradient at coordinate " + std::to_string(i) + " on step " +
                                    std::to_string(state.step + 1));
    }
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(params.beta1, t);
    const double c2 = 1.0 - std::pow(params.beta2, t);
    for (std::size_t i = 0; i < n; ++i) {
        state.m[i] = params.beta1 * state.m[i] + (1.0 - params.beta1) * gradient[i];
        state.v[i] = params.beta2 * state.v[i] + (1.0 - params.beta2) * gradient[i] * gradient[i];
        const double m_hat = state.m[i] / c1;
        const double v_hat = state.v[i] / c2;
        state.params[i] -= lr * m_hat / (std::sqrt(v_hat) + params.epsilon);
    }
    return state;
}

void TrainConfig::validate() const {
    objective.validate();
    if (steps == 0) throw PreconditionViolation("steps must be >= 1");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
        throw InvalidCoefficient("learning rate must be finite and > 0");
    if (mode == GradientMode::MonteCarlo) {
        if (batch == 0) throw PreconditionViolation("batch must be >= 1");
        if (baseline == Baseline::LeaveOneOut && batch < 2)
            throw PreconditionViolation("leave-one-out baseline needs batch >= 2");
    }
    if (mara) {
        mara->validate();
        if (objective.kind == ObjectiveKind::TargetMatching)
            throw PreconditionViolation("MARA does not apply to target matching");
        if (mara->beta != objective.beta)
            throw InvalidCoefficient("MARA beta must equal the objective beta");
    }
}

MaraView TrainConfig::effective_mara_view() const {
    if (mara_view) return *mara_view;
    return objective.kind == ObjectiveKind::ForwardKL ? MaraView::RewardAndReference : MaraView::Reward;
}

namespace {

RegularizedProblem training_problem(const Scenario& s, const TrainConfig& cfg) {
    if (!cfg.mara) return RegularizedProblem::from(s);
    return RegularizedProblem::from(augment_support(s, *cfg.mara, cfg.effective_mara_view()));
}

SoftmaxPolicy initial_policy(const Scenario& s, const Objective& objective) {
    if (objective.needs_reference_support()) return SoftmaxPolicy::restricted_to(s.reference);
    return SoftmaxPolicy(s.size());
}

}  // namespace

Categorical analytic_target(const Scenario& s, const TrainConfig& cfg) {
    cfg.validate();
    return problem_target(training_problem(s, cfg), cfg.objective);
}

std::size_t count_anchor_churn(std::span<const std::optional<std::size_t>> history) {
    std::size_t churn = 0;
    std::optional<std::size_t> last;
    for (const auto& a : history) {
        if (!a) continue;
        if (last && *last != *a) ++churn;
        last = a;
    }
    return churn;
}

TrainResult train(const Scenario& s, const TrainConfig& cfg) {
    cfg.validate();
    if (cfg.mara) cfg.mara->validate_for(s);
    const Objective& obj = cfg.objective;
    const MaraView view = cfg.effective_mara_view();
    const RegularizedProblem problem = training_problem(s, cfg);

    TrainResult result;
    result.target = problem_target(problem, obj);
    const double trace_threshold = cfg.mara ? support_threshold(s, cfg.mara->threshold) : s.threshold;

    SoftmaxPolicy policy = initial_policy(s, obj);
    AdamState adam(std::vector<double>(policy.logits().begin(), policy.logits().end()));
    Rng rng(cfg.seed);
    result.trace.reserve(cfg.steps);

    for (std::size_t step = 0; step < cfg.steps; ++step) {
        const Categorical pi = policy.distribution();
        std::vector<double> g;
        std::optional<std::size_t> anchor;
        if (cfg.mode == GradientMode::Exact) {
            g = exact_gradient(policy, problem, obj);
        } else {
            switch (obj.kind) {
                case ObjectiveKind::ReverseKL:
                case ObjectiveKind::Generalized: {
                    const double eta = obj.kind == ObjectiveKind::Generalized ? obj.eta : 0.0;
                    g = reverse_type_step(pi, s, obj.beta, eta, cfg.batch, cfg.baseline, cfg.mara, view, rng, &anchor);
                    break;
                }
                case ObjectiveKind::ForwardKL:
                    g = forward_step(pi, s, obj.beta, cfg.batch, cfg.baseline, cfg.forward_regularizer, cfg.mara,
                                     view, rng, &anchor);
                    break;
                case ObjectiveKind::TargetMatching:
                    g = sft_ascent(pi, result.target, cfg.batch, rng);
                    break;
            }
        }
        if (cfg.mara) {
            if (cfg.mode == GradientMode::Exact) {
                // Exact mode augments the whole support once; its anchor is global.
                anchor = global_anchor(s, trace_threshold, cfg.mara->tiebreak);
            }
            result.anchor_history.push_back(anchor);
        }

        for (double& x : g) x = -x;
        adam = adam_step(std::move(adam), g, cfg.learning_rate, cfg.adam);
        std::copy(adam.params.begin(), adam.params.end(), policy.logits().begin());

        const Categorical next = policy.distribution();
        TraceRecord rec;
        rec.objective = exact_objective(policy, problem, obj);
        rec.tv_to_target = tv_distance(next, result.target);
        rec.entropy = entropy(next);
        for (std::size_t y = 0; y < next.size(); ++y) {
            if (s.rewards[y] >= trace_threshold) rec.above_threshold_mass += next.mass(y);
        }
        result.trace.push_back(rec);
    }

    result.final_policy = policy.distribution();
    result.anchor_churn = count_anchor_churn(result.anchor_history);
    return result;
}

}  // namespace kllab
