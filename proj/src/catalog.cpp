#include "extremal/catalog.hpp"

#include <algorithm>
#include <cmath>

namespace extremal {

namespace {

double param(const ParamMap& params, const std::string& key, double fallback) {
    auto it = params.find(key);
    return it == params.end() ? fallback : it->second;
}

void reject_unknown(const ParamMap& params, const std::vector<std::string>& allowed,
                    const std::string& context) {
    for (const auto& [key, value] : params) {
        (void)value;
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
            throw ConfigError("unknown parameter '" + key + "' for " + context);
    }
}

VectorField constant_field(const Vector& v) {
    const int n = static_cast<int>(v.size());
    VectorField f;
    f.value = [v](const Vector&) { return v; };
    f.jacobian = [n](const Vector&) { return Matrix::Zero(n, n); };
    return f;
}

/// L(x,u) = |u|^2 / 2.
RunningCost quadratic_control_cost(int n, int m) {
    RunningCost c;
    c.value = [](const Vector&, const Vector& u) { return 0.5 * u.squaredNorm(); };
    c.grad_x = [n](const Vector&, const Vector&) { return Vector::Zero(n); };
    c.grad_u = [](const Vector&, const Vector& u) { return u; };
    c.hess_uu = [m](const Vector&, const Vector&) { return Matrix::Identity(m, m); };
    c.hess_ux = [n, m](const Vector&, const Vector&) { return Matrix::Zero(m, n); };
    c.hess_xx = [n](const Vector&, const Vector&) { return Matrix::Zero(n, n); };
    return c;
}

} // namespace

// ---------------------------------------------------------------------------
// Terminal families
// ---------------------------------------------------------------------------

TerminalCost terminal_zero(int n) {
    TerminalCost t;
    t.family = "zero";
    t.value = [](const Vector&) { return 0.0; };
    t.grad = [n](const Vector&) { return Vector::Zero(n); };
    t.hess = [n](const Vector&) { return Matrix::Zero(n, n); };
    t.third_dir = [n](const Vector&, const Vector&) { return Vector::Zero(n); };
    return t;
}

TerminalCost terminal_quadratic(const Matrix& Q, const Vector& g, double c) {
    const int n = static_cast<int>(g.size());
    Matrix Qs = 0.5 * (Q + Q.transpose());
    TerminalCost t;
    t.family = "quadratic";
    t.value = [Qs, g, c](const Vector& z) { return 0.5 * z.dot(Qs * z) + g.dot(z) + c; };
    t.grad = [Qs, g](const Vector& z) { return Vector(Qs * z + g); };
    t.hess = [Qs](const Vector&) { return Qs; };
    t.third_dir = [n](const Vector&, const Vector&) { return Vector::Zero(n); };
    return t;
}

TerminalCost terminal_cosine(int n, double amp, double phase) {
    TerminalCost t;
    t.family = "cosine";
    t.value = [amp, phase](const Vector& z) { return amp * std::cos(z.sum() + phase); };
    t.grad = [n, amp, phase](const Vector& z) {
        return Vector(-amp * std::sin(z.sum() + phase) * Vector::Ones(n));
    };
    t.hess = [n, amp, phase](const Vector& z) {
        return Matrix(-amp * std::cos(z.sum() + phase) * Matrix::Ones(n, n));
    };
    t.third_dir = [n, amp, phase](const Vector& z, const Vector& v) {
        const double s = v.sum();
        return Vector(amp * std::sin(z.sum() + phase) * s * s * Vector::Ones(n));
    };
    return t;
}

TerminalCost terminal_exp(int n, double amp, double shift) {
    TerminalCost t;
    t.family = "exp_affine";
    t.value = [amp, shift](const Vector& z) { return amp * std::exp(z.sum() + shift); };
    t.grad = [n, amp, shift](const Vector& z) {
        return Vector(amp * std::exp(z.sum() + shift) * Vector::Ones(n));
    };
    t.hess = [n, amp, shift](const Vector& z) {
        return Matrix(amp * std::exp(z.sum() + shift) * Matrix::Ones(n, n));
    };
    t.third_dir = [n, amp, shift](const Vector& z, const Vector& v) {
        const double s = v.sum();
        return Vector(amp * std::exp(z.sum() + shift) * s * s * Vector::Ones(n));
    };
    return t;
}

TerminalCost make_terminal(const std::string& family, const ParamMap& params, int n) {
    if (family == "zero") {
        reject_unknown(params, {}, "terminal family 'zero'");
        return terminal_zero(n);
    }
    if (family == "quadratic") {
        std::vector<std::string> allowed{"c"};
        if (n == 1) {
            allowed.push_back("q");
            allowed.push_back("g");
        } else {
            for (int i = 0; i < n; ++i) {
                for (int j = i; j < n; ++j)
                    allowed.push_back("q" + std::to_string(i + 1) + std::to_string(j + 1));
                allowed.push_back("g" + std::to_string(i + 1));
            }
        }
        reject_unknown(params, allowed, "terminal family 'quadratic'");
        Matrix Q(n, n);
        if (n == 1) {
            Q(0, 0) = param(params, "q", 1.0);
        } else {
            for (int i = 0; i < n; ++i)
                for (int j = i; j < n; ++j) {
                    const std::string key =
                        "q" + std::to_string(i + 1) + std::to_string(j + 1);
                    Q(i, j) = Q(j, i) = param(params, key, i == j ? 1.0 : 0.0);
                }
        }
        Vector g(n);
        for (int i = 0; i < n; ++i)
            g[i] = param(params, n == 1 ? std::string("g") : "g" + std::to_string(i + 1), 0.0);
        return terminal_quadratic(Q, g, param(params, "c", 0.0));
    }
    if (family == "cosine") {
        reject_unknown(params, {"amp", "phase"}, "terminal family 'cosine'");
        return terminal_cosine(n, param(params, "amp", 1.0), param(params, "phase", 0.0));
    }
    if (family == "exp_affine") {
        reject_unknown(params, {"amp", "shift"}, "terminal family 'exp_affine'");
        return terminal_exp(n, param(params, "amp", 2.0), param(params, "shift", 1.0));
    }
    throw ConfigError("unknown terminal cost family '" + family + "'");
}

// ---------------------------------------------------------------------------
// Catalog problems
// ---------------------------------------------------------------------------

std::vector<std::string> catalog_labels() {
    return {"example21", "single_integrator_cos", "single_integrator_quad", "planar_lq"};
}

namespace {

/// xdot = 1 + x u, L = u^2/2.  Closed forms: u*(x,p) = -p x,
/// H = p - p^2 x^2 / 2.
CatalogProblem make_example21(const ParamMap& params) {
    CatalogProblem cp;
    ProblemSpec& ps = cp.problem;
    ps.label = "example21";
    ps.dynamics.state_dim = 1;
    ps.dynamics.control_dim = 1;
    ps.dynamics.drift = constant_field(Vector::Ones(1));
    VectorField f1;
    f1.value = [](const Vector& x) { return x; };
    f1.jacobian = [](const Vector&) { return Matrix::Identity(1, 1); };
    ps.dynamics.fields = {f1};
    ps.cost = quadratic_control_cost(1, 1);
    ps.horizon = 2.0;
    ps.growth_c1 = 1.0;
    ps.coercivity_c2 = 0.25;
    ps.convexity_margin = 0.5;
    ps.exact_minimizer = [](const Vector& x, const Vector& p) {
        return Vector(-p[0] * x[0] * Vector::Ones(1));
    };
    ps.hessian_directional = [](const Vector& x, const Vector& p, const Vector& dx,
                                const Vector& dp) -> std::array<Matrix, 3> {
        Matrix dhxx(1, 1), dhxp(1, 1), dhpp(1, 1);
        dhxx(0, 0) = -2.0 * p[0] * dp[0];
        dhxp(0, 0) = -2.0 * (x[0] * dp[0] + p[0] * dx[0]);
        dhpp(0, 0) = -2.0 * x[0] * dx[0];
        return {dhxx, dhxp, dhpp};
    };
    cp.terminal = terminal_exp(1, param(params, "amp", 2.0), param(params, "shift", 1.0));
    return cp;
}

std::array<Matrix, 3> zero_hessian_directional(int n) {
    return {Matrix::Zero(n, n), Matrix::Zero(n, n), Matrix::Zero(n, n)};
}

/// xdot = u, L = u^2/2 shared by both single_integrator entries.
ProblemSpec single_integrator_base(const std::string& label) {
    ProblemSpec ps;
    ps.label = label;
    ps.dynamics.state_dim = 1;
    ps.dynamics.control_dim = 1;
    ps.dynamics.drift = constant_field(Vector::Zero(1));
    ps.dynamics.fields = {constant_field(Vector::Ones(1))};
    ps.cost = quadratic_control_cost(1, 1);
    ps.horizon = 2.0;
    ps.growth_c1 = 1.0;
    ps.coercivity_c2 = 0.25;
    ps.convexity_margin = 0.5;
    ps.exact_minimizer = [](const Vector&, const Vector& p) { return Vector(-p); };
    ps.hessian_directional = [](const Vector&, const Vector&, const Vector&,
                                const Vector&) { return zero_hessian_directional(1); };
    return ps;
}

/// xdot = (drift * x2, 0) + u on R^2, L = |u|^2/2.
CatalogProblem make_planar_lq(const ParamMap& params) {
    const double a = param(params, "drift", 0.0);
    CatalogProblem cp;
    ProblemSpec& ps = cp.problem;
    ps.label = "planar_lq";
    ps.dynamics.state_dim = 2;
    ps.dynamics.control_dim = 2;
    VectorField f0;
    f0.value = [a](const Vector& x) {
        Vector v(2);
        v << a * x[1], 0.0;
        return v;
    };
    f0.jacobian = [a](const Vector&) {
        Matrix J = Matrix::Zero(2, 2);
        J(0, 1) = a;
        return J;
    };
    ps.dynamics.drift = f0;
    ps.dynamics.fields = {constant_field(Vector::Unit(2, 0)), constant_field(Vector::Unit(2, 1))};
    ps.cost = quadratic_control_cost(2, 2);
    ps.horizon = 2.0;
    ps.growth_c1 = std::max(1.0, std::abs(a));
    ps.coercivity_c2 = 0.25;
    ps.convexity_margin = 0.5;
    ps.exact_minimizer = [](const Vector&, const Vector& p) { return Vector(-p); };
    ps.hessian_directional = [](const Vector&, const Vector&, const Vector&,
                                const Vector&) { return zero_hessian_directional(2); };

    Matrix Q(2, 2);
    Q(0, 0) = param(params, "q11", 0.5);
    Q(1, 1) = param(params, "q22", 0.5);
    Q(0, 1) = Q(1, 0) = param(params, "q12", 0.0);
    Vector g(2);
    g << param(params, "g1", 0.0), param(params, "g2", 0.0);
    cp.terminal = terminal_quadratic(Q, g, param(params, "c", 0.0));
    return cp;
}

} // namespace

CatalogProblem make_problem(const std::string& label, const ParamMap& params) {
    if (label == "example21") {
        reject_unknown(params, {"amp", "shift"}, "problem 'example21'");
        return make_example21(params);
    }
    if (label == "single_integrator_cos") {
        reject_unknown(params, {"amp", "phase"}, "problem 'single_integrator_cos'");
        CatalogProblem cp;
        cp.problem = single_integrator_base(label);
        cp.terminal =
            terminal_cosine(1, param(params, "amp", 1.0), param(params, "phase", 0.0));
        return cp;
    }
    if (label == "single_integrator_quad") {
        reject_unknown(params, {"q", "g", "c"}, "problem 'single_integrator_quad'");
        CatalogProblem cp;
        cp.problem = single_integrator_base(label);
        Matrix Q(1, 1);
        Q(0, 0) = param(params, "q", 1.0);
        Vector g(1);
        g << param(params, "g", 0.0);
        cp.terminal = terminal_quadratic(Q, g, param(params, "c", 0.0));
        return cp;
    }
    if (label == "planar_lq") {
        reject_unknown(params, {"drift", "q11", "q12", "q22", "g1", "g2", "c"},
                       "problem 'planar_lq'");
        return make_planar_lq(params);
    }
    throw ConfigError("unknown catalog label '" + label + "'");
}

} // namespace extremal
