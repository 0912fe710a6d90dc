#include "kllab/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <exception>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "kllab/errors.hpp"

namespace kllab {

namespace {

// Running first and second moments per coordinate (Welford / Chan).
struct Moments {
    double count = 0.0;
    std::vector<double> mean;
    std::vector<double> m2;

    explicit Moments(std::size_t dim) : mean(dim, 0.0), m2(dim, 0.0) {}

    void add(std::span<const double> x) {
        count += 1.0;
        for (std::size_t k = 0; k < mean.size(); ++k) {
            const double delta = x[k] - mean[k];
            mean[k] += delta / count;
            m2[k] += delta * (x[k] - mean[k]);
        }
    }

    void merge(const Moments& o) {
        if (o.count == 0.0) return;
        const double total = count + o.count;
        for (std::size_t k = 0; k < mean.size(); ++k) {
            const double delta = o.mean[k] - mean[k];
            mean[k] += delta * o.count / total;
            m2[k] += o.m2[k] + delta * delta * count * o.count / total;
        }
        count = total;
    }

    GradientEstimate finish() const {
        GradientEstimate e;
        e.batches = static_cast<std::size_t>(count);
        e.mean = mean;
        e.standard_error.assign(mean.size(), 0.0);
        if (count > 1.0) {
            for (std::size_t k = 0; k < mean.size(); ++k)
                e.standard_error[k] = std::sqrt(m2[k] / (count - 1.0) / count);
        }
        return e;
    }
};

void check_args(std::size_t dim, std::size_t batches) {
    if (dim == 0) throw PreconditionViolation("estimator dimension must be >= 1");
    if (batches == 0) throw PreconditionViolation("need at least one batch");
}

}  // namespace

GradientEstimate average_estimator_serial(std::size_t dim, std::size_t batches, std::uint64_t seed,
                                          const BatchEstimator& draw) {
    check_args(dim, batches);
    const Rng root(seed);
    Moments acc(dim);
    std::vector<double> g(dim);
    for (std::size_t b = 0; b < batches; ++b) {
        Rng rng = root.split(b);
        std::fill(g.begin(), g.end(), 0.0);
        draw(rng, g);
        acc.add(g);
    }
    return acc.finish();
}

GradientEstimate average_estimator(std::size_t dim, std::size_t batches, std::uint64_t seed,
                                   const BatchEstimator& draw, int threads) {
    check_args(dim, batches);
    const Rng root(seed);
    const std::size_t chunks = (batches + kEstimatorChunk - 1) / kEstimatorChunk;
    std::vector<Moments> partial(chunks, Moments(dim));
    const auto n_chunks = static_cast<std::ptrdiff_t>(chunks);

#ifdef _OPENMP
    const int team = threads > 0 ? threads : omp_get_max_threads();
#else
    (void)threads;
#endif
    std::exception_ptr error;

#pragma omp parallel for schedule(dynamic, 1) num_threads(team)
    for (std::ptrdiff_t c = 0; c < n_chunks; ++c) {
        try {
            std::vector<double> g(dim);
            const std::size_t first = static_cast<std::size_t>(c) * kEstimatorChunk;
            const std::size_t last = std::min(batches, first + kEstimatorChunk);
            for (std::size_t b = first; b < last; ++b) {
                Rng rng = root.split(b);
                std::fill(g.begin(), g.end(), 0.0);
                draw(rng, g);
                partial[static_cast<std::size_t>(c)].add(g);
            }
        } catch (...) {
#pragma omp critical(kllab_estimator_error)
            {
                if (!error) error = std::current_exception();
            }
        }
    }
    if (error) std::rethrow_exception(error);

    Moments acc(dim);
    for (const auto& p : partial) acc.merge(p);
    return acc.finish();
}

namespace {

BatchEstimator reverse_draw(const SoftmaxPolicy& policy, const Scenario& s, double beta, std::size_t batch,
                            Baseline baseline) {
    return [&policy, &s, beta, batch, baseline](Rng& rng, std::span<double> out) {
        const std::vector<double> g = mc_gradient_reverse(policy, s, beta, batch, baseline, rng);
        std::copy(g.begin(), g.end(), out.begin());
    };
}

}  // namespace

GradientEstimate average_mc_gradient_reverse_serial(const SoftmaxPolicy& policy, const Scenario& s, double beta,
                                                    std::size_t batch, Baseline baseline, std::uint64_t seed,
                                                    std::size_t batches) {
    return average_estimator_serial(policy.size(), batches, seed, reverse_draw(policy, s, beta, batch, baseline));
}

GradientEstimate average_mc_gradient_reverse(const SoftmaxPolicy& policy, const Scenario& s, double beta,
                                             std::size_t batch, Baseline baseline, std::uint64_t seed,
                                             std::size_t batches, int threads) {
    return average_estimator(policy.size(), batches, seed, reverse_draw(policy, s, beta, batch, baseline), threads);
}

}  // namespace kllab
