// SPDX-License-Identifier: Apache-2.0
//
// Small helpers shared by the unit tests.

#pragma once

#include "regformer/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

namespace regformer::testing {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0,
                            bool requires_grad = true) {
    std::uniform_real_distribution<double> d(lo, hi);
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) x = d(rng);
    return Tensor(std::move(shape), std::move(v), requires_grad);
}

/// Weighted sum with fixed random weights so every output element matters.
inline Tensor probe(const Tensor& y, std::uint64_t seed = 99) {
    std::mt19937_64 rng(seed);
    return sum_all(y * random_tensor(y.shape(), rng, -1.0, 1.0, false));
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return a.size() == b.size() ? m : 1e300;
}

/// Central-difference check of d loss / d param for a parameter captured by
/// `loss`. At most `max_coords` evenly strided coordinates are probed. Returns
/// max |analytic - numeric| / max(1, |numeric|), +inf on non-finite values.
inline double fd_check_parameter(Tensor param, const std::function<Tensor()>& loss, std::size_t max_coords = 64,
                                 double step = 1e-5) {
    param.zero_grad();
    loss().backward();
    const std::vector<double> analytic(param.grad().begin(), param.grad().end());
    param.zero_grad();
    NoGradGuard guard;
    auto values = param.mutable_values();
    const std::size_t n = values.size();
    const std::size_t stride = std::max<std::size_t>(1, n / std::max<std::size_t>(1, max_coords));
    double worst = 0.0;
    for (std::size_t i = 0; i < n; i += stride) {
        const double base = values[i];
        values[i] = base + step;
        const double fp = loss().item();
        values[i] = base - step;
        const double fm = loss().item();
        values[i] = base;
        const double numeric = (fp - fm) / (2.0 * step);
        const double a = analytic.empty() ? 0.0 : analytic[i];
        const double err = std::abs(a - numeric) / std::max(1.0, std::abs(numeric));
        if (!std::isfinite(err)) return INFINITY;
        worst = std::max(worst, err);
    }
    return worst;
}

}  // namespace regformer::testing
