#pragma once

#include <functional>

#include "flowguide/mlp.hpp"
#include "flowguide/tensor.hpp"

namespace flowguide {

// A time-dependent vector field on R^d. eval must be pure given (x, t);
// batch consumers evaluate it concurrently.
class VectorField {
public:
    virtual ~VectorField() = default;
    virtual std::size_t dim() const = 0;
    virtual void eval(std::span<const double> x, double t, std::span<double> out) const = 0;

    // cotangent^T d(eval)/dx. The default is central finite differences;
    // model-backed and analytic fields override with exact pullbacks.
    virtual void vjp(std::span<const double> x, double t,
                     std::span<const double> cotangent, std::span<double> out) const;

    // Dense Jacobian stacked from vjp calls with basis cotangents.
    Tensor jacobian(std::span<const double> x, double t,
                    std::size_t cap = kDenseJacobianCap) const;

    Tensor eval(std::span<const double> x, double t) const {
        Tensor out({dim()});
        eval(x, t, out.span());
        return out;
    }
};

// Learned velocity model as a field.
class MlpVectorField : public VectorField {
public:
    explicit MlpVectorField(const MlpModel* model) : model_(model) {}
    using VectorField::eval;
    std::size_t dim() const override { return model_->output_dim(); }
    void eval(std::span<const double> x, double t, std::span<double> out) const override;
    void vjp(std::span<const double> x, double t,
             std::span<const double> cotangent, std::span<double> out) const override;

private:
    const MlpModel* model_;
};

// Field from a plain callable; vjp falls back to finite differences unless a
// pullback callable is supplied.
class FunctionField : public VectorField {
public:
    using EvalFn = std::function<void(std::span<const double>, double, std::span<double>)>;
    using VjpFn =
        std::function<void(std::span<const double>, double, std::span<const double>, std::span<double>)>;

    FunctionField(std::size_t dim, EvalFn eval_fn, VjpFn vjp_fn = nullptr)
        : dim_(dim), eval_(std::move(eval_fn)), vjp_(std::move(vjp_fn)) {}

    using VectorField::eval;

    std::size_t dim() const override { return dim_; }
    void eval(std::span<const double> x, double t, std::span<double> out) const override {
        eval_(x, t, out);
    }
    void vjp(std::span<const double> x, double t,
             std::span<const double> cotangent, std::span<double> out) const override {
        if (vjp_) vjp_(x, t, cotangent, out);
        else VectorField::vjp(x, t, cotangent, out);
    }

private:
    std::size_t dim_;
    EvalFn eval_;
    VjpFn vjp_;
};

}  // namespace flowguide
