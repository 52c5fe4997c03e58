#pragma once

#include <array>
#include <string>
#include <vector>

#include "flowguide/rng.hpp"
#include "flowguide/tensor.hpp"

namespace flowguide {

// Synthetic 2-D source/target distributions. Analytic log-densities exist for
// the Gaussian family and the uniform box; moons / s_curve / circle_ring are
// sampler-only.
class Density2D {
public:
    enum class Kind {
        Gaussian,
        GaussianMixture,
        UniformBox,
        CircleRing,
        Moons,
        SCurve,
        EightGaussians
    };

    Density2D() : Density2D(standard_gaussian()) {}

    static Density2D gaussian(std::array<double, 2> mean, std::array<double, 4> cov);
    static Density2D standard_gaussian();
    static Density2D gaussian_mixture(std::vector<double> weights,
                                      std::vector<std::array<double, 2>> means,
                                      std::vector<std::array<double, 4>> covs);
    static Density2D uniform_box(std::array<double, 2> lo, std::array<double, 2> hi);
    static Density2D circle_ring(double radius, double thickness);
    static Density2D moons(double noise);
    static Density2D s_curve(double noise);
    static Density2D eight_gaussians(double radius = 2.0, double sigma = 0.1);

    Kind kind() const { return kind_; }
    std::string describe() const;

    void sample_point(Rng& rng, std::span<double> out) const;
    Tensor sample(std::size_t n, Rng& rng) const;

    // Gaussian family and uniform box only; outside-support box points give
    // -inf. Throws ContractError for sampler-only kinds.
    bool has_log_density() const;
    double log_density(std::span<const double> x) const;

    struct Component {
        double weight;
        std::array<double, 2> mean;
        std::array<double, 4> cov;   // row-major 2x2
        std::array<double, 3> chol;  // l00, l10, l11
        double log_norm;             // -log(2*pi) - log(det L)
    };

    const std::vector<Component>& components() const { return components_; }

private:
    explicit Density2D(Kind kind) : kind_(kind) {}
    static Component make_component(double w, std::array<double, 2> mean,
                                    std::array<double, 4> cov);

    Kind kind_;
    std::vector<Component> components_;     // gaussian kinds
    std::array<double, 2> lo_{0.0, 0.0};    // uniform box
    std::array<double, 2> hi_{1.0, 1.0};
    double radius_ = 1.0;                   // circle ring / eight gaussians
    double thickness_ = 0.1;
    double noise_ = 0.05;                   // moons / s_curve
};

std::string density_kind_to_string(Density2D::Kind kind);

}  // namespace flowguide
