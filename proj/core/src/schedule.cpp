#include "flowguide/schedule.hpp"

#include "flowguide/errors.hpp"

namespace flowguide {

Schedule Schedule::linear_sigma(double sigma_const) {
    if (sigma_const < 0.0)
        throw ValidationError("linear_sigma schedule: sigma_const must be >= 0");
    return Schedule(Id::LinearSigma, sigma_const);
}

Schedule Schedule::from_string(const std::string& id, double sigma_const) {
    if (id == "linear") return linear();
    if (id == "linear_sigma") return linear_sigma(sigma_const);
    throw ValidationError("unknown schedule '" + id + "' (expected linear|linear_sigma)");
}

}  // namespace flowguide
