#pragma once

#include <array>
#include <functional>
#include <string>
#include <vector>

#include "extremal/types.hpp"

namespace extremal {

// ---------------------------------------------------------------------------
// Control-affine dynamics  f(x,u) = f0(x) + sum_i u_i f_i(x)
// ---------------------------------------------------------------------------

/// One vector field together with its first two spatial derivatives.
/// hessian returns n matrices; the l-th entry is the Hessian of the l-th
/// component.  A null hessian oracle means the field is affine in x.
struct VectorField {
    std::function<Vector(const Vector&)> value;
    std::function<Matrix(const Vector&)> jacobian;
    std::function<std::vector<Matrix>(const Vector&)> hessian;
};

struct ControlAffineDynamics {
    int state_dim = 0;
    int control_dim = 0;
    VectorField drift;                // f0
    std::vector<VectorField> fields;  // f1..fm

    Vector eval(const Vector& x, const Vector& u) const;
    /// d f(x,u) / dx at fixed u.
    Matrix jac_x(const Vector& x, const Vector& u) const;
    /// n x m matrix whose columns are f_1(x)..f_m(x).
    Matrix input_matrix(const Vector& x) const;
    /// sum_l p_l * Hess_x f^(l)(x,u), an n x n symmetric matrix.
    Matrix weighted_hessian(const Vector& x, const Vector& u, const Vector& p) const;
};

// ---------------------------------------------------------------------------
// Running cost L(x,u) with the derivatives the flow needs
// ---------------------------------------------------------------------------

struct RunningCost {
    std::function<double(const Vector&, const Vector&)> value;
    std::function<Vector(const Vector&, const Vector&)> grad_x;
    std::function<Vector(const Vector&, const Vector&)> grad_u;
    std::function<Matrix(const Vector&, const Vector&)> hess_uu;
    /// m x n block d^2 L / du dx.
    std::function<Matrix(const Vector&, const Vector&)> hess_ux;
    std::function<Matrix(const Vector&, const Vector&)> hess_xx;
};

// ---------------------------------------------------------------------------
// Terminal cost psi(z)
// ---------------------------------------------------------------------------

/// third_dir(z, v) = D^3 psi(z)(v, v, .), a vector.  Optional: a null oracle
/// disables the ODE-based second variation for this terminal cost.
struct TerminalCost {
    std::string family;
    std::function<double(const Vector&)> value;
    std::function<Vector(const Vector&)> grad;
    std::function<Matrix(const Vector&)> hess;
    std::function<Vector(const Vector&, const Vector&)> third_dir;

    bool has_third() const { return static_cast<bool>(third_dir); }
};

// ---------------------------------------------------------------------------
// Problem = dynamics + running cost + growth/coercivity constants
// ---------------------------------------------------------------------------

struct ProblemSpec {
    std::string label;
    ControlAffineDynamics dynamics;
    RunningCost cost;
    double horizon = 0.0;          // T
    double growth_c1 = 0.0;        // |f_i(x)| <= c1 (|x|+1)
    double coercivity_c2 = 0.0;    // L(x,u) >= c2 (|u|^2 - 1)
    double convexity_margin = 0.0; // L_uu >= margin * I
    /// ell(s) with |L_x(x,u)| <= ell(|x|) (1 + |u|^2); null means ell == 0.
    std::function<double(double)> grad_bound_ell;
    /// Closed-form argmin of w -> L(x,w) + p.f(x,w), when the problem has one.
    std::function<Vector(const Vector&, const Vector&)> exact_minimizer;
    /// Directional derivative of the Hamiltonian Hessian blocks along
    /// (dx, dp): returns {dHxx, dHxp, dHpp} with Hxp(i,j) = d2H/dx_i dp_j.
    /// Null means callers fall back to finite differences of the blocks.
    std::function<std::array<Matrix, 3>(const Vector&, const Vector&, const Vector&,
                                        const Vector&)>
        hessian_directional;

    int state_dim() const { return dynamics.state_dim; }
    int control_dim() const { return dynamics.control_dim; }
};

// ---------------------------------------------------------------------------
// Pointwise minimization and the resulting Hamiltonian
// ---------------------------------------------------------------------------

struct MinimizerOptions {
    double tol = 1e-12; // stationarity |grad|_inf <= tol * (1 + |p|)
    int max_iter = 50;
    bool force_newton = false; // ignore the problem's closed form
};

/// argmin_w { L(x,w) + p . f(x,w) } by damped Newton from w = 0, or the
/// problem's closed form when present and not overridden.
Vector pointwise_minimizer(const ProblemSpec& prob, const Vector& x, const Vector& p,
                           const MinimizerOptions& opts = {});

/// H(x,p) = min_w { L(x,w) + p . f(x,w) }.
double hamiltonian(const ProblemSpec& prob, const Vector& x, const Vector& p);

/// Value, minimizer, and first derivatives only (cheap path for the flow).
struct HamiltonianFirst {
    double value = 0.0;
    Vector u;
    Vector hx, hp;
};
HamiltonianFirst hamiltonian_first(const ProblemSpec& prob, const Vector& x,
                                   const Vector& p);

/// Full evaluation including the Hessian blocks.  Convention:
/// hxp(i,j) = d^2 H / dx_i dp_j, so d(H_p)/dx = hxp^T.
struct HamiltonianEval {
    double value = 0.0;
    Vector u;
    Vector hx, hp;
    Matrix hxx, hxp, hpp;
};
HamiltonianEval hamiltonian_derivatives(const ProblemSpec& prob, const Vector& x,
                                        const Vector& p);

/// Directional derivative of the Hessian blocks along (dx, dp), using the
/// problem oracle when present and a central difference of
/// hamiltonian_derivatives otherwise.
std::array<Matrix, 3> hessian_blocks_directional(const ProblemSpec& prob, const Vector& x,
                                                 const Vector& p, const Vector& dx,
                                                 const Vector& dp);

} // namespace extremal
