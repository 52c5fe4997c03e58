#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "flowguide/numeric.hpp"
#include "flowguide/rng.hpp"
#include "flowguide/tensor.hpp"

namespace fgtest {

using flowguide::Rng;
using flowguide::Tensor;

inline double rel_err(double got, double want, double floor = 1e-12) {
    return std::abs(got - want) / std::max(std::abs(want), floor);
}

inline double rel_l2(std::span<const double> got, std::span<const double> want) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < got.size(); ++i) {
        num += (got[i] - want[i]) * (got[i] - want[i]);
        den += want[i] * want[i];
    }
    return std::sqrt(num / std::max(den, 1e-24));
}

// central finite differences of a scalar function
inline std::vector<double> fd_grad(const std::function<double(std::span<const double>)>& f,
                                   std::vector<double> x, double h = 1e-5) {
    std::vector<double> g(x.size());
    for (std::size_t j = 0; j < x.size(); ++j) {
        const double orig = x[j];
        x[j] = orig + h;
        const double fp = f(x);
        x[j] = orig - h;
        const double fm = f(x);
        x[j] = orig;
        g[j] = (fp - fm) / (2.0 * h);
    }
    return g;
}

// Subsampled two-sample energy distance 2 E|X-Y| - E|X-X'| - E|Y-Y'|; the
// same pair budget must be used for calibration and test runs.
inline double energy_distance(const Tensor& a, const Tensor& b, Rng& rng,
                              std::size_t pairs = 200000) {
    auto mean_cross = [&](const Tensor& u, const Tensor& v) {
        double s = 0.0;
        for (std::size_t p = 0; p < pairs; ++p) {
            const std::size_t i = rng.below(u.shape()[0]);
            const std::size_t j = rng.below(v.shape()[0]);
            s += std::sqrt(flowguide::squared_distance(u.row(i), v.row(j)));
        }
        return s / static_cast<double>(pairs);
    };
    return 2.0 * mean_cross(a, b) - mean_cross(a, a) - mean_cross(b, b);
}

}  // namespace fgtest
