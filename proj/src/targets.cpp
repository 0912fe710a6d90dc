#include "kllab/targets.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "kllab/errors.hpp"

namespace kllab {

std::string_view to_string(TargetKind kind) {
    switch (kind) {
        case TargetKind::ReverseKL: return "reverse";
        case TargetKind::ForwardKL: return "forward";
        case TargetKind::Generalized: return "generalized";
    }
    return "?";
}

TargetKind parse_target_kind(std::string_view text) {
    if (text == "reverse") return TargetKind::ReverseKL;
    if (text == "forward") return TargetKind::ForwardKL;
    if (text == "generalized") return TargetKind::Generalized;
    throw PreconditionViolation("unknown target kind '" + std::string(text) + "'");
}

void TargetSpec::validate() const {
    if (!std::isfinite(beta) || !std::isfinite(eta)) throw InvalidCoefficient("coefficients must be finite");
    switch (kind) {
        case TargetKind::ReverseKL:
        case TargetKind::ForwardKL:
            if (!(beta > 0.0)) throw InvalidCoefficient("beta must be > 0, got " + std::to_string(beta));
            break;
        case TargetKind::Generalized:
            if (beta < 0.0 || eta < 0.0) throw InvalidCoefficient("beta and eta must be >= 0");
            if (!(beta + eta > 0.0)) throw InvalidCoefficient("beta + eta must be > 0");
            break;
    }
}

Categorical reverse_kl_target(const Scenario& s, double beta) {
    TargetSpec{TargetKind::ReverseKL, beta, 0.0}.validate();
    std::vector<double> lw(s.size());
    for (std::size_t i = 0; i < lw.size(); ++i) {
        const double lr = s.reference.log_mass(i);
        lw[i] = lr == kNegInf ? kNegInf : lr + s.rewards[i] / beta;
    }
    return Categorical::from_log_weights(lw);
}

Categorical generalized_target(const Scenario& s, double beta, double eta) {
    TargetSpec{TargetKind::Generalized, beta, eta}.validate();
    const double total = beta + eta;
    const double ref_power = beta / total;
    std::vector<double> lw(s.size());
    for (std::size_t i = 0; i < lw.size(); ++i) {
        const double lr = s.reference.log_mass(i);
        if (beta == 0.0) {
            lw[i] = s.rewards[i] / total;
        } else {
            lw[i] = lr == kNegInf ? kNegInf : ref_power * lr + s.rewards[i] / total;
        }
    }
    return Categorical::from_log_weights(lw);
}

double forward_normalizer(const Categorical& reference, std::span<const double> rewards, double beta, double c) {
    double z = 0.0;
    for (std::size_t i = 0; i < reference.size(); ++i) {
        if (!reference.in_support(i)) continue;
        z += beta * reference.mass(i) / (c - rewards[i]);
    }
    return z;
}

namespace {

constexpr int kMaxExpansions = 200;
constexpr int kMaxBisections = 4000;

// Root of Z(c) = 1 for c in (lo_limit, inf), where Z is strictly decreasing.
// If `closed_lo` is set, lo_limit itself is admissible (Z(lo_limit) >= 1 is
// already known to hold there).
double solve_lambda(const Categorical& ref, std::span<const double> rewards, double beta, double lo_limit,
                    bool closed_lo) {
    auto z = [&](double c) { return forward_normalizer(ref, rewards, beta, c); };

    double p_min = 1.0;
    for (std::size_t i = 0; i < ref.size(); ++i) {
        if (ref.in_support(i)) p_min = std::min(p_min, ref.mass(i));
    }
    const double n = static_cast<double>(ref.support_size());

    double lo = lo_limit;
    if (!closed_lo) {
        double eps = 1e-12 * std::max(1.0, std::abs(lo_limit));
        lo = lo_limit + eps;
        int shrink = 0;
        while (z(lo) < 1.0) {
            eps *= 0.5;
            const double next = lo_limit + eps;
            if (next <= lo_limit || ++shrink > kMaxExpansions)
                throw SolverFailure("forward-KL: lower bracket not found above R_max");
            lo = next;
        }
    }

    double width = beta * n / p_min + 1.0;
    double hi = lo_limit + width;
    int grow = 0;
    while (z(hi) > 1.0) {
        width *= 2.0;
        hi = lo_limit + width;
        if (++grow > kMaxExpansions || !std::isfinite(hi))
            throw SolverFailure("forward-KL: upper bracket not found");
    }

    for (int it = 0; it < kMaxBisections; ++it) {
        const double mid = lo + 0.5 * (hi - lo);
        if (mid <= lo || mid >= hi) break;
        if (z(mid) > 1.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    return std::abs(z(lo) - 1.0) <= std::abs(z(hi) - 1.0) ? lo : hi;
}

}  // namespace

ForwardSolution forward_kl_target(const Categorical& ref, std::span<const double> rewards, double beta) {
    TargetSpec{TargetKind::ForwardKL, beta, 0.0}.validate();
    if (rewards.size() != ref.size()) throw InvalidDistribution("forward-KL: reward length mismatch");

    double r_in = kNegInf;
    double r_out = kNegInf;
    for (std::size_t i = 0; i < ref.size(); ++i) {
        if (!std::isfinite(rewards[i])) throw InvalidDistribution("forward-KL: rewards must be finite");
        if (ref.in_support(i)) {
            r_in = std::max(r_in, rewards[i]);
        } else {
            r_out = std::max(r_out, rewards[i]);
        }
    }

    ForwardSolution sol;
    std::vector<double> mass(ref.size(), 0.0);
    auto fill_on_support = [&](double lambda) {
        for (std::size_t i = 0; i < ref.size(); ++i) {
            if (ref.in_support(i)) mass[i] = beta * ref.mass(i) / (lambda - rewards[i]);
        }
    };

    if (r_out > r_in) {
        const double z_out = forward_normalizer(ref, rewards, beta, r_out);
        if (z_out < 1.0) {
            sol.lambda = r_out;
            sol.boundary_case = true;
            sol.off_support_mass = 1.0 - z_out;
            fill_on_support(r_out);
            std::size_t argmax_count = 0;
            for (std::size_t i = 0; i < ref.size(); ++i) {
                if (!ref.in_support(i) && rewards[i] == r_out) ++argmax_count;
            }
            const double share = sol.off_support_mass / static_cast<double>(argmax_count);
            for (std::size_t i = 0; i < ref.size(); ++i) {
                if (!ref.in_support(i) && rewards[i] == r_out) mass[i] = share;
            }
        } else if (z_out == 1.0) {
            sol.lambda = r_out;
            fill_on_support(r_out);
        } else {
            sol.lambda = solve_lambda(ref, rewards, beta, r_out, true);
            fill_on_support(sol.lambda);
        }
    } else {
        sol.lambda = solve_lambda(ref, rewards, beta, r_in, false);
        fill_on_support(sol.lambda);
    }

    sol.distribution = Categorical::from_masses(mass);
    return sol;
}

ForwardSolution forward_kl_target(const Scenario& s, double beta) {
    return forward_kl_target(s.reference, s.rewards.values(), beta);
}

double forward_stationarity_residual(const Categorical& ref, std::span<const double> rewards, double beta,
                                     const ForwardSolution& sol) {
    double worst = 0.0;
    for (std::size_t i = 0; i < ref.size(); ++i) {
        if (!ref.in_support(i)) continue;
        const double g = sol.distribution.mass(i);
        const double value = rewards[i] + beta * ref.mass(i) / g;
        worst = std::max(worst, std::abs(value - sol.lambda));
    }
    return worst;
}

Categorical target_for(const Scenario& s, const TargetSpec& spec) {
    switch (spec.kind) {
        case TargetKind::ReverseKL: return reverse_kl_target(s, spec.beta);
        case TargetKind::ForwardKL: return forward_kl_target(s, spec.beta).distribution;
        case TargetKind::Generalized: return generalized_target(s, spec.beta, spec.eta);
    }
    throw PreconditionViolation("unknown target kind");
}

double log_prob_ratio(const Scenario& s, double beta, std::size_t i, std::size_t j) {
    if (!(beta > 0.0)) throw InvalidCoefficient("beta must be > 0");
    if (i >= s.size() || j >= s.size()) throw UndefinedRatio("index out of range");
    if (!s.reference.in_support(i) || !s.reference.in_support(j))
        throw UndefinedRatio("ratio undefined: index outside supp(pi_ref)");
    return (s.reference.log_mass(i) - s.reference.log_mass(j)) + (s.rewards[i] - s.rewards[j]) / beta;
}

double flip_beta(const Scenario& s, std::size_t i, std::size_t j) {
    if (i >= s.size() || j >= s.size()) throw UndefinedRatio("index out of range");
    if (!s.reference.in_support(i) || !s.reference.in_support(j))
        throw UndefinedRatio("flip undefined: index outside supp(pi_ref)");
    if (i == j) throw NoFiniteFlip(NoFiniteFlip::Reason::SameIndex, "i and j are the same token");
    const double log_ref_gap = s.reference.log_mass(i) - s.reference.log_mass(j);
    const double reward_gap = s.rewards[j] - s.rewards[i];
    if (log_ref_gap == 0.0)
        throw NoFiniteFlip(NoFiniteFlip::Reason::EqualReference,
                           "equal reference probabilities: no beta changes the ratio");
    const double beta = reward_gap / log_ref_gap;
    if (!(beta > 0.0) || !std::isfinite(beta))
        throw NoFiniteFlip(NoFiniteFlip::Reason::NonPositive,
                           "one token dominates: its reward is at least as high and its reference probability higher");
    return beta;
}

}  // namespace kllab
