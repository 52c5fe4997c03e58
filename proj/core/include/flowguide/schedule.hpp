#pragma once

#include <string>

namespace flowguide {

struct ScheduleEval {
    double alpha, beta, sigma;
    double dalpha, dbeta, dsigma;
};

// Affine-path coefficients x_t = alpha_t x1 + beta_t x0 + sigma_t eps with
// boundary conditions alpha_0 = 0, alpha_1 = 1, beta_0 = 1, beta_1 = 0.
class Schedule {
public:
    enum class Id { Linear, LinearSigma };

    Schedule() = default;
    static Schedule linear() { return Schedule(Id::Linear, 0.0); }
    static Schedule linear_sigma(double sigma_const);
    static Schedule from_string(const std::string& id, double sigma_const = 0.0);

    ScheduleEval eval(double t) const {
        ScheduleEval e;
        e.alpha = t;
        e.beta = 1.0 - t;
        e.dalpha = 1.0;
        e.dbeta = -1.0;
        e.sigma = sigma_const_;
        e.dsigma = 0.0;
        return e;
    }

    Id id() const { return id_; }
    double sigma_const() const { return sigma_const_; }
    std::string id_string() const {
        return id_ == Id::Linear ? "linear" : "linear_sigma";
    }

    // alpha_dot * beta - beta_dot * alpha; the x1-parameterization denominator
    double denom(double t) const {
        const ScheduleEval e = eval(t);
        return e.dalpha * e.beta - e.dbeta * e.alpha;
    }

private:
    Schedule(Id id, double sigma_const) : id_(id), sigma_const_(sigma_const) {}

    Id id_ = Id::Linear;
    double sigma_const_ = 0.0;
};

}  // namespace flowguide
