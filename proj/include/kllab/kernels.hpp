#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "kllab/rng.hpp"
#include "kllab/trainer.hpp"

namespace kllab {

// Writes one stochastic gradient draw into `out` using `rng`.
using BatchEstimator = std::function<void(Rng& rng, std::span<double> out)>;

struct GradientEstimate {
    std::vector<double> mean;
    std::vector<double> standard_error;
    std::size_t batches = 0;
};

// Mean and standard error of `batches` draws; draw b uses Rng(seed).split(b).
// Plain Welford loop, kept as the reference implementation.
GradientEstimate average_estimator_serial(std::size_t dim, std::size_t batches, std::uint64_t seed,
                                          const BatchEstimator& draw);

// OpenMP version. Draws are grouped into fixed-size chunks whose partial
// moments are merged in chunk order, so the result does not depend on the
// thread count. threads <= 0 uses the OpenMP default.
GradientEstimate average_estimator(std::size_t dim, std::size_t batches, std::uint64_t seed,
                                   const BatchEstimator& draw, int threads = 0);

inline constexpr std::size_t kEstimatorChunk = 1024;

// Convenience wrappers over mc_gradient_reverse.
GradientEstimate average_mc_gradient_reverse_serial(const SoftmaxPolicy& policy, const Scenario& s, double beta,
                                                    std::size_t batch, Baseline baseline, std::uint64_t seed,
                                                    std::size_t batches);
GradientEstimate average_mc_gradient_reverse(const SoftmaxPolicy& policy, const Scenario& s, double beta,
                                             std::size_t batch, Baseline baseline, std::uint64_t seed,
                                             std::size_t batches, int threads = 0);

}  // namespace kllab
