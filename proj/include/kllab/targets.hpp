#pragma once

#include <cstddef>
#include <span>
#include <string_view>

#include "kllab/dist.hpp"

namespace kllab {

enum class TargetKind { ReverseKL, ForwardKL, Generalized };

std::string_view to_string(TargetKind kind);
TargetKind parse_target_kind(std::string_view text);  // "reverse" | "forward" | "generalized"

struct TargetSpec {
    TargetKind kind = TargetKind::ReverseKL;
    double beta = 1.0;
    double eta = 0.0;

    // Throws InvalidCoefficient.
    void validate() const;
};

// Optimum of the forward-KL regularized objective.
struct ForwardSolution {
    Categorical distribution = Categorical::uniform(1);
    double lambda = 0.0;
    double off_support_mass = 0.0;
    bool boundary_case = false;
};

// G(y) proportional to pi_ref(y) exp(R(y) / beta).
Categorical reverse_kl_target(const Scenario& s, double beta);

// G(y) proportional to pi_ref(y)^(beta/(beta+eta)) exp(R(y)/(beta+eta)).
// At beta == 0 the reference exponent is zero everywhere, including where
// pi_ref is zero, so the result is softmax(R/eta) over all tokens.
Categorical generalized_target(const Scenario& s, double beta, double eta);

// G(y) = beta pi_ref(y) / (Lambda - R(y)) with the normalizing Lambda found by
// bisection. Handles the off-support leftover-mass regime.
ForwardSolution forward_kl_target(const Scenario& s, double beta);
ForwardSolution forward_kl_target(const Categorical& reference, std::span<const double> rewards, double beta);

// Z(c) = sum over supp(pi_ref) of beta pi_ref / (c - R).
double forward_normalizer(const Categorical& reference, std::span<const double> rewards, double beta, double c);

// max over on-support y of |R(y) + beta pi_ref(y) / G(y) - Lambda|.
double forward_stationarity_residual(const Categorical& reference, std::span<const double> rewards, double beta,
                                     const ForwardSolution& sol);

Categorical target_for(const Scenario& s, const TargetSpec& spec);

// log G_beta(i) - log G_beta(j) in closed form. Throws UndefinedRatio when
// either index is outside supp(pi_ref).
double log_prob_ratio(const Scenario& s, double beta, std::size_t i, std::size_t j);

// The beta at which tokens i and j have equal target probability. Throws
// NoFiniteFlip when no positive finite beta exists.
double flip_beta(const Scenario& s, std::size_t i, std::size_t j);

}  // namespace kllab
