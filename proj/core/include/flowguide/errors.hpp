#pragma once

#include <stdexcept>
#include <string>

namespace flowguide {

// Error taxonomy shared by every module. The CLI maps these onto exit codes:
// validation -> 2, numerical/training -> 3, io -> 4.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Shape or width mismatch between tensors / models.
class DimensionError : public Error {
public:
    using Error::Error;
};

// An operation was called outside its contract (non-scalar grad output,
// sigma <= 0, unsupported density kind, ...).
class ContractError : public Error {
public:
    using Error::Error;
};

// Bad user-facing input: malformed config, unknown keys, bad CLI values.
class ValidationError : public Error {
public:
    using Error::Error;
};

// Training diverged or produced non-finite quantities.
class TrainingError : public Error {
public:
    explicit TrainingError(const std::string& what, long step = -1)
        : Error(what), step(step) {}
    long step;
};

// Numerical failure at inference time: ODE blow-up, singular system,
// degenerate Monte-Carlo estimate.
class NumericalError : public Error {
public:
    explicit NumericalError(const std::string& what, long step = -1)
        : Error(what), step(step) {}
    long step;
};

// Every Monte-Carlo importance weight underflowed; callers may fall back to
// zero guidance.
class DegenerateEstimateError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace flowguide
