#include "flowguide/linalg.hpp"

#include <cmath>

#include "flowguide/errors.hpp"

namespace flowguide {

Tensor cholesky(const Tensor& a) {
    if (a.rank() != 2 || a.shape()[0] != a.shape()[1])
        throw DimensionError("cholesky: square matrix required");
    const std::size_t n = a.shape()[0];
    Tensor l({n, n});
    for (std::size_t j = 0; j < n; ++j) {
        double d = a.at(j, j);
        for (std::size_t k = 0; k < j; ++k) d -= l.at(j, k) * l.at(j, k);
        if (!(d > 0.0) || !std::isfinite(d))
            throw NumericalError("cholesky: matrix is not positive definite");
        const double ljj = std::sqrt(d);
        l.at(j, j) = ljj;
        for (std::size_t i = j + 1; i < n; ++i) {
            double s = a.at(i, j);
            for (std::size_t k = 0; k < j; ++k) s -= l.at(i, k) * l.at(j, k);
            l.at(i, j) = s / ljj;
        }
    }
    return l;
}

void cholesky_solve_into(const Tensor& l, std::span<const double> b, std::span<double> x) {
    const std::size_t n = l.shape()[0];
    // forward: L y = b
    for (std::size_t i = 0; i < n; ++i) {
        double s = b[i];
        for (std::size_t k = 0; k < i; ++k) s -= l.at(i, k) * x[k];
        x[i] = s / l.at(i, i);
    }
    // backward: L^T x = y
    for (std::size_t ii = n; ii-- > 0;) {
        double s = x[ii];
        for (std::size_t k = ii + 1; k < n; ++k) s -= l.at(k, ii) * x[k];
        x[ii] = s / l.at(ii, ii);
    }
}

Tensor cholesky_solve(const Tensor& l, const Tensor& b) {
    Tensor x({b.size()});
    cholesky_solve_into(l, b.span(), x.span());
    return x;
}

Tensor cholesky_solve_matrix(const Tensor& l, const Tensor& b) {
    const std::size_t n = b.shape()[0], m = b.shape()[1];
    Tensor x({n, m});
    std::vector<double> col(n), sol(n);
    for (std::size_t j = 0; j < m; ++j) {
        for (std::size_t i = 0; i < n; ++i) col[i] = b.at(i, j);
        cholesky_solve_into(l, col, sol);
        for (std::size_t i = 0; i < n; ++i) x.at(i, j) = sol[i];
    }
    return x;
}

Tensor spd_inverse(const Tensor& a) {
    const Tensor l = cholesky(a);
    return cholesky_solve_matrix(l, Tensor::identity(a.shape()[0]));
}

double spd_log_det(const Tensor& l_factor) {
    double s = 0.0;
    for (std::size_t i = 0; i < l_factor.shape()[0]; ++i)
        s += std::log(l_factor.at(i, i));
    return 2.0 * s;
}

SymmetricEigen eigen_symmetric(const Tensor& a) {
    if (a.rank() != 2 || a.shape()[0] != a.shape()[1])
        throw DimensionError("eigen_symmetric: square matrix required");
    const std::size_t n = a.shape()[0];
    Tensor m = a;
    Tensor v = Tensor::identity(n);

    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) off += m.at(i, j) * m.at(i, j);
        if (off < 1e-26) break;
        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = m.at(p, q);
                if (std::abs(apq) < 1e-300) continue;
                const double app = m.at(p, p), aqq = m.at(q, q);
                const double theta = 0.5 * (aqq - app) / apq;
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double mkp = m.at(k, p), mkq = m.at(k, q);
                    m.at(k, p) = c * mkp - s * mkq;
                    m.at(k, q) = s * mkp + c * mkq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double mpk = m.at(p, k), mqk = m.at(q, k);
                    m.at(p, k) = c * mpk - s * mqk;
                    m.at(q, k) = s * mpk + c * mqk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = v.at(k, p), vkq = v.at(k, q);
                    v.at(k, p) = c * vkp - s * vkq;
                    v.at(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }

    // sort ascending by eigenvalue
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t i, std::size_t j) { return m.at(i, i) < m.at(j, j); });
    SymmetricEigen out{Tensor({n}), Tensor({n, n})};
    for (std::size_t i = 0; i < n; ++i) {
        out.values[i] = m.at(order[i], order[i]);
        for (std::size_t k = 0; k < n; ++k) out.vectors.at(k, i) = v.at(k, order[i]);
    }
    return out;
}

std::pair<Tensor, double> psd_project(const Tensor& a, double floor) {
    const std::size_t n = a.shape()[0];
    // symmetrize first
    Tensor sym({n, n});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            sym.at(i, j) = 0.5 * (a.at(i, j) + a.at(j, i));
    SymmetricEigen eig = eigen_symmetric(sym);
    double clamped = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (eig.values[i] < floor) {
            clamped = std::max(clamped, floor - eig.values[i]);
            eig.values[i] = floor;
        }
    }
    Tensor out({n, n});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < n; ++k)
                s += eig.vectors.at(i, k) * eig.values[k] * eig.vectors.at(j, k);
            out.at(i, j) = s;
        }
    return {out, clamped};
}

void affine_sample(const Tensor& l, std::span<const double> mean,
                   std::span<const double> z, std::span<double> out) {
    const std::size_t n = l.shape()[0];
    for (std::size_t i = 0; i < n; ++i) {
        double s = mean[i];
        for (std::size_t k = 0; k <= i; ++k) s += l.at(i, k) * z[k];
        out[i] = s;
    }
}

}  // namespace flowguide
