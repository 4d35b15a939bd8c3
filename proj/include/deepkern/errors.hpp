#pragma once

#include <limits>
#include <stdexcept>
#include <string>

namespace deepkern {

/// Objective value standing in for J = infinity (collapsed images, coth pole).
/// Finite so that line searches can compare against it and retreat.
inline constexpr double kSentinel = 1e12;

inline bool is_sentinel(double value) { return !(value < kSentinel); }

/// Bad shapes, non-finite inputs, invalid parameters.
class ArgumentError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Gram matrix could not be factored within the jitter policy.
class SingularityError : public std::runtime_error {
public:
    SingularityError(const std::string& what, double condition_estimate)
        : std::runtime_error(what), condition_(condition_estimate) {}

    double condition_estimate() const noexcept { return condition_; }

private:
    double condition_;
};

/// No optimizer restart produced a usable objective value.
class OptimizationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed configuration, CSV or model files.
class InputError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace deepkern
