#pragma once

#include <vector>

#include "kllab/harness.hpp"

namespace kllab::acceptance {

// Every numeric tolerance the acceptance checks use.
namespace tol {
inline constexpr double kFlipExpected = 0.1316;
inline constexpr double kFlip = 0.0005;
inline constexpr double kExtremeRatio = 1e-9;
inline constexpr double kAnalyticRatio = 1e-9;
inline constexpr double kTrainedRatio = 0.10;
inline constexpr double kExactTv = 0.05;
inline constexpr double kMonteCarloTv = 0.15;
inline constexpr double kLambdaClosedForm = 1e-10;
inline constexpr double kStationarity = 1e-8;
inline constexpr double kLeftover = 1e-12;
inline constexpr double kGradientIdentity = 1e-9;
inline constexpr double kFiniteDifference = 1e-6;
inline constexpr double kFiniteDifferenceStep = 1e-5;
inline constexpr double kMaraUniform = 1e-9;
inline constexpr double kMaraTrained = 0.10;
inline constexpr double kVanillaImbalance = 3.0;
inline constexpr double kEstimatorEquivalence = 1e-12;
inline constexpr double kStandardErrors = 3.0;
}  // namespace tol

// Sizes of the randomized and sampled checks.
inline constexpr int kForwardScenarios = 100;
inline constexpr int kGradientTriples = 50;
inline constexpr int kQualifyingSamples = 10000;
inline constexpr std::size_t kUnbiasedBatches = 100000;
inline constexpr std::size_t kBatchSize = 32;
inline constexpr std::size_t kEqualRewardSteps = 10000;

CriterionResult flip_beta_reproduction();
CriterionResult extreme_ratio();
CriterionResult equal_reward_invariance(int workers, std::vector<RunRecord>* records = nullptr);
CriterionResult target_family_convergence(int workers, std::vector<RunRecord>* records = nullptr);
CriterionResult forward_solver_correctness();
CriterionResult gradient_identity();
CriterionResult mara_uniformity(int workers, std::vector<RunRecord>* records = nullptr);
CriterionResult estimator_equivalence();
CriterionResult unbiasedness(int workers);

struct Report {
    std::vector<CriterionResult> criteria;
    std::vector<RunRecord> records;

    bool all_pass() const;
};

// All nine checks in order, collecting the sweep records they train.
Report run_all(int workers);

}  // namespace kllab::acceptance
