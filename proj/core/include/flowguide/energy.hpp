#pragma once

#include <optional>
#include <string>

#include "flowguide/tensor.hpp"

namespace flowguide {

// Canonical quadratic form J(x) = 0.5 x^T P x + q^T x + r. Energies exposing
// one admit closed-form Gaussian tilting in the oracle.
struct QuadForm {
    Tensor p;  // d x d, symmetric PSD
    Tensor q;  // d
    double r = 0.0;
};

// Guidance energy J. Lower J means more likely under the tilted distribution
// p(x) e^{-J(x)} / Z.
class EnergyFn {
public:
    enum class Kind { Quadratic, Linear, Measurement, CustomGrid };

    // scale * 0.5 (x-a)^T B (x-a)
    static EnergyFn quadratic(Tensor a, Tensor b, double scale = 1.0);
    // scale * c^T x
    static EnergyFn linear(Tensor c, double scale = 1.0);
    // scale * ||y - Hx||^2 / (2 sigma_y^2)
    static EnergyFn measurement(Tensor h, Tensor y, double sigma_y, double scale = 1.0);
    // scale * bilinear interpolation of a tabulated 2-D energy (clamped at the
    // grid edge)
    static EnergyFn custom_grid(double x0, double y0, double dx, double dy,
                                Tensor values, double scale = 1.0);

    Kind kind() const { return kind_; }
    double scale() const { return scale_; }
    std::size_t dim() const { return dim_; }

    // J + c; the gradient is unchanged and self-normalized estimators must be
    // invariant under it.
    EnergyFn with_offset(double c) const {
        EnergyFn e = *this;
        e.offset_ += c;
        return e;
    }
    double offset() const { return offset_; }

    double value(std::span<const double> x) const;
    void grad(std::span<const double> x, std::span<double> out) const;
    Tensor grad(std::span<const double> x) const;

    // Present for quadratic/linear/measurement kinds (scale folded in).
    std::optional<QuadForm> quadratic_form() const;

    // measurement accessors used by the inverse-problem guidance
    const Tensor& h() const { return h_; }
    const Tensor& y() const { return y_; }
    double sigma_y() const { return sigma_y_; }

private:
    EnergyFn(Kind kind, double scale) : kind_(kind), scale_(scale) {}
    double base_value(std::span<const double> x) const;

    Kind kind_;
    double scale_;
    double offset_ = 0.0;
    std::size_t dim_ = 2;
    Tensor a_, b_;           // quadratic
    Tensor c_;               // linear
    Tensor h_, y_;           // measurement
    double sigma_y_ = 1.0;
    double gx0_ = 0.0, gy0_ = 0.0, gdx_ = 1.0, gdy_ = 1.0;  // grid
    Tensor grid_;            // (ny x nx)
};

std::string energy_kind_to_string(EnergyFn::Kind kind);

}  // namespace flowguide
