#pragma once

#include <string>
#include <vector>

#include "extremal/dopri5.hpp"
#include "extremal/problem.hpp"
#include "extremal/types.hpp"

namespace extremal {

// ---------------------------------------------------------------------------
// Backward extremal flow: xdot = H_p, pdot = -H_x, x(T) = z, p(T) = grad psi(z)
// ---------------------------------------------------------------------------

struct FlowOptions {
    double rtol = 1e-9;
    double atol = 1e-12;
    double escape_radius = 1e3; // stop once |x| + |p| >= this
    int samples = 512;          // equally spaced samples merged with step points
    double max_step = 0.0;
};

enum class ArcStatus { Complete, Escaped };

struct ArcSample {
    double t;
    Vector x, p, u;
    double H;
};

/// Dense backward solution reparametrized to forward time t in [t_min, T].
/// State layout is the raw ODE state; the arc wrappers slice (x, p) out.
class TimeDense {
  public:
    DenseOutput inner; // in s = T - t
    double T = 0.0;

    double t_min() const { return T - inner.s_max(); }
    double t_max() const { return T - inner.s_min(); }
    Vector eval(double t) const { return inner.eval(T - t); }
    /// d state / dt (sign-corrected).
    Vector deriv(double t) const { return Vector(-inner.deriv(T - t)); }
};

struct ExtremalArc {
    Vector z;
    ArcStatus status = ArcStatus::Complete;
    double escape_time = 0.0; // tau = t_min of the data for Escaped arcs
    double horizon = 0.0;
    int state_dim = 0;
    int control_dim = 0;
    double terminal_H = 0.0; // H(z, grad psi(z))
    std::vector<ArcSample> samples; // ascending t
    TimeDense dense;

    double t_min() const { return dense.t_min(); }
    Vector x_at(double t) const { return dense.eval(t).head(state_dim); }
    Vector p_at(double t) const { return dense.eval(t).segment(state_dim, state_dim); }
};

ExtremalArc integrate_backward(const ProblemSpec& prob, const TerminalCost& psi,
                               const Vector& z, const FlowOptions& opts = {});

/// Low-level restart: integrate the extremal ODE backward from state
/// (x1, p1) at time t_from down to t_to.  Used by the semigroup checks.
ExtremalArc integrate_backward_from(const ProblemSpec& prob, const Vector& x1,
                                    const Vector& p1, double t_from, double t_to,
                                    const FlowOptions& opts = {});

/// max_k | H(x_k, p_k) - H(x(T), p(T)) | over the arc samples.
double hamiltonian_drift(const ProblemSpec& prob, const ExtremalArc& arc);

/// Defect of the dense interpolant against the re-evaluated RHS, probed at
/// step midpoints (endpoints match exactly by construction), accumulated
/// over the step and scaled by (atol + rtol * |state|): the result is in
/// units of the per-step error budget, so values of order one mean the
/// interpolant is as accurate as the step controller promises.
double ode_residual(const ProblemSpec& prob, const ExtremalArc& arc,
                    const FlowOptions& opts = {});

// ---------------------------------------------------------------------------
// Variational bundle: X = x_z, Y = p_z along the arc
// ---------------------------------------------------------------------------

struct VariationalBundle {
    ExtremalArc arc;
    std::vector<Matrix> X, Y; // at arc.samples times
    Matrix X0, Y0;            // values at t = 0
    TimeDense dense;          // augmented state (x, p, X, Y) column-major

    Matrix X_at(double t) const;
    Matrix Y_at(double t) const;
};

/// Integrates the linearized flow with terminal data X(T) = I,
/// Y(T) = Hess psi(z).  Escaped base arcs are refused.
VariationalBundle integrate_variational(const ProblemSpec& prob, const TerminalCost& psi,
                                        const Vector& z, const FlowOptions& opts = {});

/// Full 2n x 2n Jacobian of (x(0), p(0)) with respect to the terminal state,
/// from the 2n canonical terminal directions.
Matrix flow_jacobian(const ProblemSpec& prob, const TerminalCost& psi, const Vector& z,
                     const FlowOptions& opts = {});

// ---------------------------------------------------------------------------
// Second variation along a direction v
// ---------------------------------------------------------------------------

enum class SecondVariationMethod { CentralFD, DirectionalODE };

struct SecondVariation {
    Vector xi0; // x_zz(0,z)(v,v)
    Vector pi0; // p_zz(0,z)(v,v)
    SecondVariationMethod method = SecondVariationMethod::CentralFD;
};

/// CentralFD: second difference of the variational bundle at z +/- h v and
/// z +/- 2 h v with one Richardson extrapolation step (h = 1e-4 (1+|z|)).
/// DirectionalODE: integrates the differentiated variational system; needs
/// third-order terminal data and Hessian directional derivatives.
SecondVariation second_variation_along(const ProblemSpec& prob, const TerminalCost& psi,
                                       const Vector& z, const Vector& v,
                                       SecondVariationMethod method =
                                           SecondVariationMethod::CentralFD,
                                       const FlowOptions& opts = {});

// ---------------------------------------------------------------------------
// Artifact export
// ---------------------------------------------------------------------------

/// CSV rows t, x1..xn, p1..pn, u1..um, H with a leading config-hash comment.
void write_arc_csv(const std::string& path, const ExtremalArc& arc,
                   const std::string& config_hash);
/// JSON sidecar: status, escape time, terminal point, sample count, hash.
void write_arc_sidecar(const std::string& path, const ExtremalArc& arc,
                       const std::string& config_hash);

} // namespace extremal
