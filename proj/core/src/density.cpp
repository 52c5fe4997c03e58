#include "flowguide/density.hpp"

#include <cmath>
#include <sstream>

#include "flowguide/errors.hpp"
#include "flowguide/numeric.hpp"

namespace flowguide {

namespace {
constexpr double kPi = 3.14159265358979323846;
constexpr double kLog2Pi = 1.8378770664093454836;
}  // namespace

Density2D::Component Density2D::make_component(double w, std::array<double, 2> mean,
                                               std::array<double, 4> cov) {
    if (std::abs(cov[1] - cov[2]) > 1e-12)
        throw ValidationError("gaussian covariance must be symmetric");
    const double l00 = std::sqrt(cov[0]);
    if (!(cov[0] > 0.0)) throw ValidationError("gaussian covariance must be positive definite");
    const double l10 = cov[2] / l00;
    const double d = cov[3] - l10 * l10;
    if (!(d > 0.0)) throw ValidationError("gaussian covariance must be positive definite");
    const double l11 = std::sqrt(d);
    Component c;
    c.weight = w;
    c.mean = mean;
    c.cov = cov;
    c.chol = {l00, l10, l11};
    c.log_norm = -kLog2Pi - std::log(l00 * l11);
    return c;
}

Density2D Density2D::gaussian(std::array<double, 2> mean, std::array<double, 4> cov) {
    Density2D d(Kind::Gaussian);
    d.components_.push_back(make_component(1.0, mean, cov));
    return d;
}

Density2D Density2D::standard_gaussian() {
    return gaussian({0.0, 0.0}, {1.0, 0.0, 0.0, 1.0});
}

Density2D Density2D::gaussian_mixture(std::vector<double> weights,
                                      std::vector<std::array<double, 2>> means,
                                      std::vector<std::array<double, 4>> covs) {
    if (weights.empty() || weights.size() != means.size() || weights.size() != covs.size())
        throw ValidationError("gaussian_mixture: weights/means/covs must have equal length");
    double total = 0.0;
    for (double w : weights) {
        if (!(w > 0.0)) throw ValidationError("gaussian_mixture: weights must be positive");
        total += w;
    }
    if (std::abs(total - 1.0) > 1e-9)
        throw ValidationError("gaussian_mixture: weights must sum to 1");
    Density2D d(Kind::GaussianMixture);
    for (std::size_t k = 0; k < weights.size(); ++k)
        d.components_.push_back(make_component(weights[k], means[k], covs[k]));
    return d;
}

Density2D Density2D::uniform_box(std::array<double, 2> lo, std::array<double, 2> hi) {
    if (!(hi[0] > lo[0]) || !(hi[1] > lo[1]))
        throw ValidationError("uniform_box: hi must exceed lo");
    Density2D d(Kind::UniformBox);
    d.lo_ = lo;
    d.hi_ = hi;
    return d;
}

Density2D Density2D::circle_ring(double radius, double thickness) {
    if (!(radius > 0.0) || !(thickness > 0.0))
        throw ValidationError("circle_ring: radius and thickness must be positive");
    Density2D d(Kind::CircleRing);
    d.radius_ = radius;
    d.thickness_ = thickness;
    return d;
}

Density2D Density2D::moons(double noise) {
    Density2D d(Kind::Moons);
    d.noise_ = noise;
    return d;
}

Density2D Density2D::s_curve(double noise) {
    Density2D d(Kind::SCurve);
    d.noise_ = noise;
    return d;
}

Density2D Density2D::eight_gaussians(double radius, double sigma) {
    Density2D d(Kind::EightGaussians);
    d.radius_ = radius;
    for (int k = 0; k < 8; ++k) {
        const double a = kPi * 0.25 * k;
        d.components_.push_back(make_component(
            0.125, {radius * std::cos(a), radius * std::sin(a)},
            {sigma * sigma, 0.0, 0.0, sigma * sigma}));
    }
    return d;
}

std::string density_kind_to_string(Density2D::Kind kind) {
    switch (kind) {
        case Density2D::Kind::Gaussian: return "gaussian";
        case Density2D::Kind::GaussianMixture: return "gaussian_mixture";
        case Density2D::Kind::UniformBox: return "uniform_box";
        case Density2D::Kind::CircleRing: return "circle_ring";
        case Density2D::Kind::Moons: return "moons";
        case Density2D::Kind::SCurve: return "s_curve";
        case Density2D::Kind::EightGaussians: return "eight_gaussians";
    }
    return "unknown";
}

std::string Density2D::describe() const {
    std::ostringstream os;
    os << density_kind_to_string(kind_);
    switch (kind_) {
        case Kind::Gaussian:
        case Kind::GaussianMixture:
            for (const auto& c : components_)
                os << ";" << c.weight << "," << c.mean[0] << "," << c.mean[1] << ","
                   << c.cov[0] << "," << c.cov[1] << "," << c.cov[3];
            break;
        case Kind::UniformBox:
            os << ";" << lo_[0] << "," << lo_[1] << "," << hi_[0] << "," << hi_[1];
            break;
        case Kind::CircleRing:
            os << ";" << radius_ << "," << thickness_;
            break;
        case Kind::Moons:
        case Kind::SCurve:
            os << ";" << noise_;
            break;
        case Kind::EightGaussians:
            os << ";" << radius_ << "," << components_.front().chol[0];
            break;
    }
    return os.str();
}

void Density2D::sample_point(Rng& rng, std::span<double> out) const {
    switch (kind_) {
        case Kind::Gaussian:
        case Kind::GaussianMixture:
        case Kind::EightGaussians: {
            std::size_t k = 0;
            if (components_.size() > 1) {
                const double u = rng.uniform();
                double acc = 0.0;
                for (; k + 1 < components_.size(); ++k) {
                    acc += components_[k].weight;
                    if (u < acc) break;
                }
            }
            const Component& c = components_[k];
            const auto [z0, z1] = rng.normal2();
            out[0] = c.mean[0] + c.chol[0] * z0;
            out[1] = c.mean[1] + c.chol[1] * z0 + c.chol[2] * z1;
            break;
        }
        case Kind::UniformBox:
            out[0] = rng.uniform(lo_[0], hi_[0]);
            out[1] = rng.uniform(lo_[1], hi_[1]);
            break;
        case Kind::CircleRing: {
            const double a = rng.uniform(0.0, 2.0 * kPi);
            const double rho = radius_ + thickness_ * (rng.uniform() - 0.5);
            out[0] = rho * std::cos(a);
            out[1] = rho * std::sin(a);
            break;
        }
        case Kind::Moons: {
            const bool outer = rng.uniform() < 0.5;
            const double a = kPi * rng.uniform();
            double x, y;
            if (outer) {
                x = std::cos(a);
                y = std::sin(a);
            } else {
                x = 1.0 - std::cos(a);
                y = 0.5 - std::sin(a);
            }
            const auto [n0, n1] = rng.normal2();
            out[0] = x + noise_ * n0;
            out[1] = y + noise_ * n1;
            break;
        }
        case Kind::SCurve: {
            const double a = rng.uniform(-1.5 * kPi, 1.5 * kPi);
            const double s = a >= 0.0 ? 1.0 : -1.0;
            const auto [n0, n1] = rng.normal2();
            out[0] = std::sin(a) + noise_ * n0;
            out[1] = s * (std::cos(a) - 1.0) + noise_ * n1;
            break;
        }
    }
}

Tensor Density2D::sample(std::size_t n, Rng& rng) const {
    Tensor out({n, 2});
    for (std::size_t i = 0; i < n; ++i) sample_point(rng, out.row(i));
    return out;
}

bool Density2D::has_log_density() const {
    switch (kind_) {
        case Kind::Gaussian:
        case Kind::GaussianMixture:
        case Kind::UniformBox:
        case Kind::EightGaussians:
            return true;
        default:
            return false;
    }
}

double Density2D::log_density(std::span<const double> x) const {
    switch (kind_) {
        case Kind::Gaussian:
        case Kind::GaussianMixture:
        case Kind::EightGaussians: {
            double best = kNegInf;
            std::vector<double> terms;
            terms.reserve(components_.size());
            for (const auto& c : components_) {
                // solve L z = x - mean
                const double d0 = x[0] - c.mean[0];
                const double d1 = x[1] - c.mean[1];
                const double z0 = d0 / c.chol[0];
                const double z1 = (d1 - c.chol[1] * z0) / c.chol[2];
                const double lp = std::log(c.weight) + c.log_norm - 0.5 * (z0 * z0 + z1 * z1);
                terms.push_back(lp);
                best = std::max(best, lp);
            }
            if (components_.size() == 1) return terms[0];
            (void)best;
            return log_sum_exp(terms);
        }
        case Kind::UniformBox: {
            const bool inside = x[0] >= lo_[0] && x[0] <= hi_[0] &&
                                x[1] >= lo_[1] && x[1] <= hi_[1];
            if (!inside) return kNegInf;
            return -std::log((hi_[0] - lo_[0]) * (hi_[1] - lo_[1]));
        }
        default:
            throw ContractError("log_density unsupported for kind '" +
                                density_kind_to_string(kind_) + "'");
    }
}

}  // namespace flowguide
