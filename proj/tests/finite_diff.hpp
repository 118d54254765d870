#pragma once

// Central finite-difference gradient oracle, independent of the tape's
// reverse rules. Used across the test suites.

#include <cmath>
#include <functional>
#include <vector>

#include "bioadapt/autodiff.hpp"

namespace testutil {

inline constexpr double kFdStep = 1e-5;
inline constexpr double kFdTol = 1e-4;

// f evaluates the scalar objective from scratch (fresh tape) given the
// current values of every input tensor. Inputs are perturbed in place.
inline std::vector<std::vector<double>> finite_difference_grads(
    const std::function<double()>& f, std::vector<bioadapt::ad::Tensor>& inputs,
    double step = kFdStep) {
    std::vector<std::vector<double>> grads;
    grads.reserve(inputs.size());
    for (auto& in : inputs) {
        std::vector<double> g(in.size(), 0.0);
        for (std::size_t i = 0; i < in.size(); ++i) {
            const double saved = in.at(i);
            in.at(i) = saved + step;
            const double fp = f();
            in.at(i) = saved - step;
            const double fm = f();
            in.at(i) = saved;
            g[i] = (fp - fm) / (2.0 * step);
        }
        grads.push_back(std::move(g));
    }
    return grads;
}

// Relative agreement with an absolute floor for near-zero entries.
inline bool grads_close(const std::vector<double>& analytic, const std::vector<double>& numeric,
                        double tol = kFdTol) {
    if (analytic.size() != numeric.size()) return false;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        const double diff = std::fabs(analytic[i] - numeric[i]);
        const double scale = std::max({1.0, std::fabs(analytic[i]), std::fabs(numeric[i])});
        if (diff > tol * scale) return false;
    }
    return true;
}

inline double max_rel_err(const std::vector<double>& analytic,
                          const std::vector<double>& numeric) {
    double worst = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        const double diff = std::fabs(analytic[i] - numeric[i]);
        const double scale = std::max({1.0, std::fabs(analytic[i]), std::fabs(numeric[i])});
        worst = std::max(worst, diff / scale);
    }
    return worst;
}

inline bioadapt::ad::Tensor random_tensor(bioadapt::ad::Shape shape, bioadapt::Rng& rng,
                                          double scale = 1.0, bool requires_grad = true) {
    auto t = bioadapt::ad::Tensor::zeros(std::move(shape), requires_grad);
    for (auto& v : t.values()) v = rng.normal(0.0, scale);
    return t;
}

}  // namespace testutil
