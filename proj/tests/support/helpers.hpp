#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "lns/tensor.hpp"

// Shared helpers for the test suites: a deterministic uniform sampler and a
// guarded relative-error comparison for gradient checks.

namespace lnstest {

inline double uniform_unit(std::mt19937_64& rng) {
    // 53 uniform mantissa bits; avoids the implementation-defined
    // std::uniform_real_distribution so expected values stay frozen.
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
    return lo + (hi - lo) * uniform_unit(rng);
}

inline lns::Tensor random_tensor(std::mt19937_64& rng, std::vector<int> shape, double lo = -1.0,
                                 double hi = 1.0) {
    lns::Tensor t(std::move(shape));
    for (auto& v : t.data) v = uniform(rng, lo, hi);
    return t;
}

/// |a-b| / max(|a|, |b|, floor). The floor absorbs the cancellation noise of
/// central differences on near-zero gradients.
inline double rel_err(double a, double b, double floor = 1e-6) {
    const double denom = std::max({std::fabs(a), std::fabs(b), floor});
    return std::fabs(a - b) / denom;
}

/// Central finite difference of a scalar function at x[i].
inline double central_diff(const std::function<double(double)>& f_of_xi, double xi,
                           double step = 1e-5) {
    return (f_of_xi(xi + step) - f_of_xi(xi - step)) / (2.0 * step);
}

/// Central-difference gradient of `loss` with respect to every element of
/// `subject`, where `loss` re-reads `subject` on each call.
inline std::vector<double> fd_gradient(lns::Tensor& subject,
                                       const std::function<double()>& loss,
                                       double step = 1e-5) {
    std::vector<double> g(subject.size());
    for (std::size_t i = 0; i < subject.size(); ++i) {
        const double saved = subject[i];
        subject[i] = saved + step;
        const double up = loss();
        subject[i] = saved - step;
        const double down = loss();
        subject[i] = saved;
        g[i] = (up - down) / (2.0 * step);
    }
    return g;
}

}  // namespace lnstest
