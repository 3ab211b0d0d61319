#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>

namespace extremal {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Input dimensions disagree with the problem's state/control dimensions.
struct DimensionMismatch : Error {
    using Error::Error;
};

/// An iterative solver hit its iteration cap without meeting its tolerance.
struct NonConvergence : Error {
    using Error::Error;
};

/// The control Hessian of the running cost lost positive definiteness at a
/// probe point, so the pointwise minimization is ill posed there.
struct SingularLuu : Error {
    using Error::Error;
};

/// The adaptive integrator drove the step size below the representable
/// minimum.  Signals stiffness, not blow-up.
struct StepSizeUnderflow : Error {
    using Error::Error;
};

/// An operation that requires a backward solution on the whole horizon was
/// asked to work on an arc that left the escape ball before t = 0.
struct ArcEscaped : Error {
    using Error::Error;
};

/// A finite-difference probe point left the set of complete backward
/// solutions, so the requested derivative cannot be formed.
struct EscapedNeighborhood : Error {
    using Error::Error;
};

/// A retry budget was exhausted before the requested condition was met.
struct BudgetExhausted : Error {
    using Error::Error;
};

/// Malformed or inconsistent run configuration.
struct ConfigError : Error {
    using Error::Error;
};

} // namespace extremal
