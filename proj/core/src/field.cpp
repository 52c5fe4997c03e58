#include "flowguide/field.hpp"

#include <vector>

#include "flowguide/errors.hpp"

namespace flowguide {

void VectorField::vjp(std::span<const double> x, double t,
                      std::span<const double> cotangent, std::span<double> out) const {
    // central differences column by column: out_j = sum_i u_i d f_i / d x_j
    const std::size_t d = dim();
    const double h = 1e-6;
    std::vector<double> xp(x.begin(), x.end());
    std::vector<double> fp(d), fm(d);
    for (std::size_t j = 0; j < x.size(); ++j) {
        const double orig = xp[j];
        xp[j] = orig + h;
        eval(xp, t, fp);
        xp[j] = orig - h;
        eval(xp, t, fm);
        xp[j] = orig;
        double s = 0.0;
        for (std::size_t i = 0; i < d; ++i) s += cotangent[i] * (fp[i] - fm[i]);
        out[j] = s / (2.0 * h);
    }
}

Tensor VectorField::jacobian(std::span<const double> x, double t, std::size_t cap) const {
    const std::size_t d = dim();
    if (d > cap || x.size() > cap)
        throw ContractError("field jacobian: dimension exceeds dense cap " +
                            std::to_string(cap));
    Tensor jac({d, x.size()});
    std::vector<double> e(d, 0.0);
    std::vector<double> row(x.size());
    for (std::size_t i = 0; i < d; ++i) {
        e[i] = 1.0;
        vjp(x, t, e, row);
        for (std::size_t j = 0; j < x.size(); ++j) jac.at(i, j) = row[j];
        e[i] = 0.0;
    }
    return jac;
}

void MlpVectorField::eval(std::span<const double> x, double t, std::span<double> out) const {
    Tensor y = mlp_forward(*model_, x, t);
    for (std::size_t i = 0; i < y.size(); ++i) out[i] = y[i];
}

void MlpVectorField::vjp(std::span<const double> x, double t,
                         std::span<const double> cotangent, std::span<double> out) const {
    Tensor g = mlp_vjp(*model_, x, t, cotangent);
    for (std::size_t i = 0; i < g.size(); ++i) out[i] = g[i];
}

}  // namespace flowguide
