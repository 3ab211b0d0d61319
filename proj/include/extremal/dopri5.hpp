#pragma once

#include <functional>
#include <vector>

#include "extremal/types.hpp"

namespace extremal {

/// Explicit embedded Runge-Kutta 5(4) (Dormand-Prince coefficients) with the
/// standard fourth-order continuous extension.  Integrates in an increasing
/// independent variable s; callers map their own time direction onto s.

struct OdeOptions {
    double rtol = 1e-9;
    double atol = 1e-12;
    double max_step = 0.0;     // 0 means the full interval
    double initial_step = 0.0; // 0 means automatic
    long max_steps = 2000000;
};

/// Dense coefficients for one accepted step [s0, s0+h]:
/// y(s0 + theta h) = r1 + theta (r2 + (1-theta)(r3 + theta (r4 + (1-theta) r5))).
struct DensePiece {
    double s0 = 0.0;
    double h = 0.0;
    Vector r1, r2, r3, r4, r5;

    Vector eval(double s) const;
    /// dy/ds of the interpolant.
    Vector deriv(double s) const;
};

class DenseOutput {
  public:
    std::vector<DensePiece> pieces; // contiguous, ascending s0

    double s_min() const { return pieces.empty() ? 0.0 : pieces.front().s0; }
    double s_max() const {
        return pieces.empty() ? 0.0 : pieces.back().s0 + pieces.back().h;
    }
    const DensePiece& piece_at(double s) const;
    Vector eval(double s) const { return piece_at(s).eval(s); }
    Vector deriv(double s) const { return piece_at(s).deriv(s); }
};

using OdeRhs = std::function<void(double, const Vector&, Vector&)>;
/// Checked on the state at the end of each accepted step.
using StopCondition = std::function<bool(double, const Vector&)>;

struct OdeResult {
    bool stopped = false; // stop condition fired
    double s_end = 0.0;   // last accepted s
    Vector y_end;
    std::vector<double> step_points; // accepted s values including s0
    DenseOutput dense;
    long n_accepted = 0;
    long n_rejected = 0;
};

OdeResult dopri5_integrate(const OdeRhs& rhs, const Vector& y0, double s0, double s1,
                           const OdeOptions& opts = {}, const StopCondition& stop = nullptr);

} // namespace extremal
