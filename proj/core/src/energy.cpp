#include "flowguide/energy.hpp"

#include <algorithm>
#include <cmath>

#include "flowguide/errors.hpp"
#include "flowguide/linalg.hpp"

namespace flowguide {

EnergyFn EnergyFn::quadratic(Tensor a, Tensor b, double scale) {
    if (a.rank() != 1 || b.rank() != 2 || b.shape()[0] != a.size() || b.shape()[1] != a.size())
        throw ValidationError("quadratic energy: a must be a d-vector and B a d x d matrix");
    if (!(scale > 0.0)) throw ValidationError("energy scale must be positive");
    const std::size_t d = a.size();
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = i + 1; j < d; ++j)
            if (std::abs(b.at(i, j) - b.at(j, i)) > 1e-12)
                throw ValidationError("quadratic energy: B must be symmetric");
    SymmetricEigen eig = eigen_symmetric(b);
    if (eig.values[0] < -1e-10)
        throw ValidationError("quadratic energy: B must be positive semi-definite");
    EnergyFn e(Kind::Quadratic, scale);
    e.dim_ = d;
    e.a_ = std::move(a);
    e.b_ = std::move(b);
    return e;
}

EnergyFn EnergyFn::linear(Tensor c, double scale) {
    if (c.rank() != 1) throw ValidationError("linear energy: c must be a vector");
    if (!(scale > 0.0)) throw ValidationError("energy scale must be positive");
    EnergyFn e(Kind::Linear, scale);
    e.dim_ = c.size();
    e.c_ = std::move(c);
    return e;
}

EnergyFn EnergyFn::measurement(Tensor h, Tensor y, double sigma_y, double scale) {
    if (h.rank() != 2 || y.rank() != 1 || h.shape()[0] != y.size())
        throw ValidationError("measurement energy: H (m x d) and y (m) required");
    if (!(sigma_y > 0.0)) throw ValidationError("measurement energy: sigma_y must be positive");
    if (!(scale > 0.0)) throw ValidationError("energy scale must be positive");
    EnergyFn e(Kind::Measurement, scale);
    e.dim_ = h.shape()[1];
    e.h_ = std::move(h);
    e.y_ = std::move(y);
    e.sigma_y_ = sigma_y;
    return e;
}

EnergyFn EnergyFn::custom_grid(double x0, double y0, double dx, double dy,
                               Tensor values, double scale) {
    if (values.rank() != 2 || values.shape()[0] < 2 || values.shape()[1] < 2)
        throw ValidationError("custom_grid energy: values must be at least 2 x 2");
    if (!(dx > 0.0) || !(dy > 0.0))
        throw ValidationError("custom_grid energy: dx, dy must be positive");
    if (!tensor_all_finite(values))
        throw ValidationError("custom_grid energy: values must be finite");
    EnergyFn e(Kind::CustomGrid, scale);
    e.dim_ = 2;
    e.gx0_ = x0;
    e.gy0_ = y0;
    e.gdx_ = dx;
    e.gdy_ = dy;
    e.grid_ = std::move(values);
    return e;
}

namespace {

struct GridCell {
    std::size_t ix, iy;
    double fx, fy;
};

GridCell locate(double x0, double dx, std::size_t nx, double y0, double dy,
                std::size_t ny, double px, double py) {
    double gx = (px - x0) / dx;
    double gy = (py - y0) / dy;
    gx = std::clamp(gx, 0.0, static_cast<double>(nx - 1));
    gy = std::clamp(gy, 0.0, static_cast<double>(ny - 1));
    GridCell c;
    c.ix = std::min(static_cast<std::size_t>(gx), nx - 2);
    c.iy = std::min(static_cast<std::size_t>(gy), ny - 2);
    c.fx = gx - static_cast<double>(c.ix);
    c.fy = gy - static_cast<double>(c.iy);
    return c;
}

}  // namespace

double EnergyFn::value(std::span<const double> x) const {
    return offset_ + base_value(x);
}

double EnergyFn::base_value(std::span<const double> x) const {
    switch (kind_) {
        case Kind::Quadratic: {
            double s = 0.0;
            const std::size_t d = dim_;
            for (std::size_t i = 0; i < d; ++i) {
                double row = 0.0;
                for (std::size_t j = 0; j < d; ++j)
                    row += b_.at(i, j) * (x[j] - a_[j]);
                s += (x[i] - a_[i]) * row;
            }
            return 0.5 * scale_ * s;
        }
        case Kind::Linear: {
            double s = 0.0;
            for (std::size_t i = 0; i < dim_; ++i) s += c_[i] * x[i];
            return scale_ * s;
        }
        case Kind::Measurement: {
            const std::size_t m = h_.shape()[0], d = dim_;
            double s = 0.0;
            for (std::size_t i = 0; i < m; ++i) {
                double hx = 0.0;
                for (std::size_t j = 0; j < d; ++j) hx += h_.at(i, j) * x[j];
                const double r = y_[i] - hx;
                s += r * r;
            }
            return 0.5 * scale_ * s / (sigma_y_ * sigma_y_);
        }
        case Kind::CustomGrid: {
            const std::size_t ny = grid_.shape()[0], nx = grid_.shape()[1];
            const GridCell c = locate(gx0_, gdx_, nx, gy0_, gdy_, ny, x[0], x[1]);
            const double v00 = grid_.at(c.iy, c.ix), v01 = grid_.at(c.iy, c.ix + 1);
            const double v10 = grid_.at(c.iy + 1, c.ix), v11 = grid_.at(c.iy + 1, c.ix + 1);
            const double v = (1 - c.fy) * ((1 - c.fx) * v00 + c.fx * v01) +
                             c.fy * ((1 - c.fx) * v10 + c.fx * v11);
            return scale_ * v;
        }
    }
    return 0.0;
}

void EnergyFn::grad(std::span<const double> x, std::span<double> out) const {
    switch (kind_) {
        case Kind::Quadratic: {
            const std::size_t d = dim_;
            for (std::size_t i = 0; i < d; ++i) {
                double s = 0.0;
                for (std::size_t j = 0; j < d; ++j) s += b_.at(i, j) * (x[j] - a_[j]);
                out[i] = scale_ * s;
            }
            break;
        }
        case Kind::Linear:
            for (std::size_t i = 0; i < dim_; ++i) out[i] = scale_ * c_[i];
            break;
        case Kind::Measurement: {
            // grad = -scale H^T (y - Hx) / sigma^2
            const std::size_t m = h_.shape()[0], d = dim_;
            std::vector<double> resid(m);
            for (std::size_t i = 0; i < m; ++i) {
                double hx = 0.0;
                for (std::size_t j = 0; j < d; ++j) hx += h_.at(i, j) * x[j];
                resid[i] = y_[i] - hx;
            }
            const double inv_var = scale_ / (sigma_y_ * sigma_y_);
            for (std::size_t j = 0; j < d; ++j) {
                double s = 0.0;
                for (std::size_t i = 0; i < m; ++i) s += h_.at(i, j) * resid[i];
                out[j] = -inv_var * s;
            }
            break;
        }
        case Kind::CustomGrid: {
            const std::size_t ny = grid_.shape()[0], nx = grid_.shape()[1];
            const GridCell c = locate(gx0_, gdx_, nx, gy0_, gdy_, ny, x[0], x[1]);
            const double v00 = grid_.at(c.iy, c.ix), v01 = grid_.at(c.iy, c.ix + 1);
            const double v10 = grid_.at(c.iy + 1, c.ix), v11 = grid_.at(c.iy + 1, c.ix + 1);
            out[0] = scale_ * ((1 - c.fy) * (v01 - v00) + c.fy * (v11 - v10)) / gdx_;
            out[1] = scale_ * ((1 - c.fx) * (v10 - v00) + c.fx * (v11 - v01)) / gdy_;
            break;
        }
    }
}

Tensor EnergyFn::grad(std::span<const double> x) const {
    Tensor g({dim_});
    grad(x, g.span());
    return g;
}

std::optional<QuadForm> EnergyFn::quadratic_form() const {
    const std::size_t d = dim_;
    QuadForm f;
    f.p = Tensor({d, d});
    f.q = Tensor({d});
    switch (kind_) {
        case Kind::Quadratic: {
            // 0.5 s (x-a)^T B (x-a) = 0.5 x^T (sB) x - (sBa)^T x + 0.5 s a^T B a
            for (std::size_t i = 0; i < d; ++i)
                for (std::size_t j = 0; j < d; ++j) f.p.at(i, j) = scale_ * b_.at(i, j);
            Tensor ba = matvec(b_, a_);
            for (std::size_t i = 0; i < d; ++i) f.q[i] = -scale_ * ba[i];
            double aba = 0.0;
            for (std::size_t i = 0; i < d; ++i) aba += a_[i] * ba[i];
            f.r = 0.5 * scale_ * aba + offset_;
            return f;
        }
        case Kind::Linear:
            for (std::size_t i = 0; i < d; ++i) f.q[i] = scale_ * c_[i];
            f.r = offset_;
            return f;
        case Kind::Measurement: {
            const double inv_var = scale_ / (sigma_y_ * sigma_y_);
            const std::size_t m = h_.shape()[0];
            for (std::size_t i = 0; i < d; ++i)
                for (std::size_t j = 0; j < d; ++j) {
                    double s = 0.0;
                    for (std::size_t k = 0; k < m; ++k) s += h_.at(k, i) * h_.at(k, j);
                    f.p.at(i, j) = inv_var * s;
                }
            for (std::size_t j = 0; j < d; ++j) {
                double s = 0.0;
                for (std::size_t k = 0; k < m; ++k) s += h_.at(k, j) * y_[k];
                f.q[j] = -inv_var * s;
            }
            double yy = 0.0;
            for (std::size_t k = 0; k < m; ++k) yy += y_[k] * y_[k];
            f.r = 0.5 * inv_var * yy + offset_;
            return f;
        }
        case Kind::CustomGrid:
            return std::nullopt;
    }
    return std::nullopt;
}

std::string energy_kind_to_string(EnergyFn::Kind kind) {
    switch (kind) {
        case EnergyFn::Kind::Quadratic: return "quadratic";
        case EnergyFn::Kind::Linear: return "linear";
        case EnergyFn::Kind::Measurement: return "measurement";
        case EnergyFn::Kind::CustomGrid: return "custom_grid";
    }
    return "unknown";
}

}  // namespace flowguide
