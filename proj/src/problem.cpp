#include "extremal/problem.hpp"

#include <cmath>

namespace extremal {

namespace {

void check_dims(const ControlAffineDynamics& dyn, const Vector& x, const Vector& u) {
    if (x.size() != dyn.state_dim)
        throw DimensionMismatch("state vector has size " + std::to_string(x.size()) +
                                ", expected " + std::to_string(dyn.state_dim));
    if (u.size() != dyn.control_dim)
        throw DimensionMismatch("control vector has size " + std::to_string(u.size()) +
                                ", expected " + std::to_string(dyn.control_dim));
}

} // namespace

Vector ControlAffineDynamics::eval(const Vector& x, const Vector& u) const {
    check_dims(*this, x, u);
    Vector f = drift.value(x);
    for (int i = 0; i < control_dim; ++i) f += u[i] * fields[static_cast<size_t>(i)].value(x);
    return f;
}

Matrix ControlAffineDynamics::jac_x(const Vector& x, const Vector& u) const {
    check_dims(*this, x, u);
    Matrix J = drift.jacobian(x);
    for (int i = 0; i < control_dim; ++i) J += u[i] * fields[static_cast<size_t>(i)].jacobian(x);
    return J;
}

Matrix ControlAffineDynamics::input_matrix(const Vector& x) const {
    Matrix B(state_dim, control_dim);
    for (int i = 0; i < control_dim; ++i) B.col(i) = fields[static_cast<size_t>(i)].value(x);
    return B;
}

Matrix ControlAffineDynamics::weighted_hessian(const Vector& x, const Vector& u,
                                               const Vector& p) const {
    Matrix W = Matrix::Zero(state_dim, state_dim);
    auto add = [&](const VectorField& fld, double weight) {
        if (!fld.hessian) return;
        std::vector<Matrix> H = fld.hessian(x);
        for (int l = 0; l < state_dim; ++l) W += weight * p[l] * H[static_cast<size_t>(l)];
    };
    add(drift, 1.0);
    for (int i = 0; i < control_dim; ++i) add(fields[static_cast<size_t>(i)], u[i]);
    return W;
}

// ---------------------------------------------------------------------------

Vector pointwise_minimizer(const ProblemSpec& prob, const Vector& x, const Vector& p,
                           const MinimizerOptions& opts) {
    if (x.size() != prob.state_dim() || p.size() != prob.state_dim())
        throw DimensionMismatch("pointwise_minimizer: bad (x,p) dimensions");
    if (prob.exact_minimizer && !opts.force_newton) return prob.exact_minimizer(x, p);

    const int m = prob.control_dim();
    const Matrix B = prob.dynamics.input_matrix(x);
    const Vector Btp = B.transpose() * p;
    auto objective = [&](const Vector& w) { return prob.cost.value(x, w) + p.dot(prob.dynamics.eval(x, w)); };

    Vector w = Vector::Zero(m);
    double fw = objective(w);
    const double gtol = opts.tol * (1.0 + p.norm());
    for (int it = 0; it < opts.max_iter; ++it) {
        Vector grad = prob.cost.grad_u(x, w) + Btp;
        if (grad.lpNorm<Eigen::Infinity>() <= gtol) return w;

        Matrix Luu = prob.cost.hess_uu(x, w);
        Eigen::LDLT<Matrix> ldlt(Luu);
        if (ldlt.info() != Eigen::Success || !ldlt.isPositive())
            throw SingularLuu("control Hessian not positive definite at probe point");
        Vector step = ldlt.solve(-grad);

        // Backtrack until the objective decreases; the Newton direction is a
        // descent direction because Luu is positive definite.
        double lambda = 1.0;
        bool moved = false;
        for (int bt = 0; bt < 40; ++bt) {
            Vector cand = w + lambda * step;
            double fc = objective(cand);
            if (fc <= fw) {
                w = cand;
                fw = fc;
                moved = true;
                break;
            }
            lambda *= 0.5;
        }
        if (!moved)
            throw NonConvergence("pointwise_minimizer: line search stalled");
    }
    Vector grad = prob.cost.grad_u(x, w) + Btp;
    if (grad.lpNorm<Eigen::Infinity>() <= gtol) return w;
    throw NonConvergence("pointwise_minimizer: no stationary point within iteration cap");
}

double hamiltonian(const ProblemSpec& prob, const Vector& x, const Vector& p) {
    Vector u = pointwise_minimizer(prob, x, p);
    return prob.cost.value(x, u) + p.dot(prob.dynamics.eval(x, u));
}

HamiltonianFirst hamiltonian_first(const ProblemSpec& prob, const Vector& x, const Vector& p) {
    HamiltonianFirst out;
    out.u = pointwise_minimizer(prob, x, p);
    // Envelope identity: the u-gradient vanishes at the minimizer, so the
    // partial derivatives in (x,p) ignore the u-dependence.
    out.value = prob.cost.value(x, out.u) + p.dot(prob.dynamics.eval(x, out.u));
    out.hp = prob.dynamics.eval(x, out.u);
    out.hx = prob.cost.grad_x(x, out.u) + prob.dynamics.jac_x(x, out.u).transpose() * p;
    return out;
}

HamiltonianEval hamiltonian_derivatives(const ProblemSpec& prob, const Vector& x,
                                        const Vector& p) {
    HamiltonianEval ev;
    const int n = prob.state_dim();
    const int m = prob.control_dim();

    ev.u = pointwise_minimizer(prob, x, p);
    const Vector f = prob.dynamics.eval(x, ev.u);
    const Matrix fx = prob.dynamics.jac_x(x, ev.u);
    const Matrix B = prob.dynamics.input_matrix(x);

    ev.value = prob.cost.value(x, ev.u) + p.dot(f);
    ev.hp = f;
    ev.hx = prob.cost.grad_x(x, ev.u) + fx.transpose() * p;

    // Stationarity G(x,p,u*) = L_u + B(x)^T p = 0 differentiated implicitly:
    //   u*_x = -Luu^{-1} Gx,  u*_p = -Luu^{-1} B^T,
    // where Gx = L_ux + [rows (d f_i/dx)^T p].
    Matrix Gx = prob.cost.hess_ux(x, ev.u);
    for (int i = 0; i < m; ++i) {
        Vector Pi = prob.dynamics.fields[static_cast<size_t>(i)].jacobian(x).transpose() * p;
        Gx.row(i) += Pi.transpose();
    }
    Matrix Luu = prob.cost.hess_uu(x, ev.u);
    Eigen::LDLT<Matrix> ldlt(Luu);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive())
        throw SingularLuu("control Hessian not positive definite at probe point");
    const Matrix LinvBt = ldlt.solve(B.transpose()); // m x n
    const Matrix LinvGx = ldlt.solve(Gx);            // m x n

    ev.hpp = -B * LinvBt;
    ev.hxp = fx.transpose() - Gx.transpose() * LinvBt;
    ev.hxx = prob.cost.hess_xx(x, ev.u) + prob.dynamics.weighted_hessian(x, ev.u, p) -
             Gx.transpose() * LinvGx;
    ev.hpp = 0.5 * (ev.hpp + ev.hpp.transpose()).eval();
    ev.hxx = 0.5 * (ev.hxx + ev.hxx.transpose()).eval();
    (void)n;
    return ev;
}

std::array<Matrix, 3> hessian_blocks_directional(const ProblemSpec& prob, const Vector& x,
                                                 const Vector& p, const Vector& dx,
                                                 const Vector& dp) {
    if (prob.hessian_directional) return prob.hessian_directional(x, p, dx, dp);
    const double h = 1e-5 * (1.0 + x.norm() + p.norm());
    HamiltonianEval plus = hamiltonian_derivatives(prob, x + h * dx, p + h * dp);
    HamiltonianEval minus = hamiltonian_derivatives(prob, x - h * dx, p - h * dp);
    const double s = 1.0 / (2.0 * h);
    return {s * (plus.hxx - minus.hxx), s * (plus.hxp - minus.hxp),
            s * (plus.hpp - minus.hpp)};
}

} // namespace extremal
