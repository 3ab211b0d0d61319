#include "extremal/flow.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "extremal/csv.hpp"

namespace extremal {

namespace {

/// Merge an equally spaced grid on [t_lo, T] with the adaptive step points.
std::vector<double> sample_times(double t_lo, double T, int samples,
                                 const std::vector<double>& step_points_s) {
    std::vector<double> ts;
    const int k = std::max(samples, 2);
    ts.reserve(static_cast<size_t>(k) + step_points_s.size());
    for (int i = 0; i < k; ++i)
        ts.push_back(t_lo + (T - t_lo) * static_cast<double>(i) / (k - 1));
    for (double s : step_points_s) ts.push_back(T - s);
    std::sort(ts.begin(), ts.end());
    const double tol = 1e-12 * std::max(1.0, std::abs(T));
    std::vector<double> out;
    for (double t : ts) {
        if (t < t_lo - tol || t > T + tol) continue;
        if (out.empty() || t - out.back() > tol) out.push_back(std::clamp(t, t_lo, T));
    }
    if (!out.empty()) out.back() = T;
    return out;
}

struct RawIntegration {
    OdeResult ode;
    double T = 0.0;      // forward time at s = 0
    double t_stop = 0.0; // forward time where integration ended
};

/// Backward extremal ODE in s = t_from - t for any ODE state whose first 2n
/// entries are (x, p).  extra_rhs appends the derivative of the trailing
/// state entries.
RawIntegration integrate_pmp_state(
    const ProblemSpec& prob, const Vector& y_terminal, double t_from, double t_to,
    const FlowOptions& opts,
    const std::function<void(double, const Vector&, const HamiltonianEval&, Vector&)>&
        extra_rhs = nullptr,
    bool need_full_derivatives = false) {
    const int n = prob.state_dim();
    OdeRhs rhs = [&, n](double s, const Vector& y, Vector& dy) {
        (void)s;
        const Vector x = y.head(n);
        const Vector p = y.segment(n, n);
        if (need_full_derivatives) {
            HamiltonianEval ev = hamiltonian_derivatives(prob, x, p);
            dy.head(n) = -ev.hp;
            dy.segment(n, n) = ev.hx;
            extra_rhs(s, y, ev, dy);
        } else {
            HamiltonianFirst ev = hamiltonian_first(prob, x, p);
            dy.head(n) = -ev.hp;
            dy.segment(n, n) = ev.hx;
        }
    };
    StopCondition stop = [&, n](double, const Vector& y) {
        return y.head(n).norm() + y.segment(n, n).norm() >= opts.escape_radius;
    };
    OdeOptions oo;
    oo.rtol = opts.rtol;
    oo.atol = opts.atol;
    oo.max_step = opts.max_step;
    RawIntegration raw;
    raw.ode = dopri5_integrate(rhs, y_terminal, 0.0, t_from - t_to, oo, stop);
    raw.T = t_from;
    raw.t_stop = t_from - raw.ode.s_end;
    return raw;
}

void fill_samples(const ProblemSpec& prob, ExtremalArc& arc, const RawIntegration& raw,
                  const FlowOptions& opts) {
    const int n = prob.state_dim();
    const double t_lo = arc.t_min();
    for (double t : sample_times(t_lo, arc.horizon, opts.samples, raw.ode.step_points)) {
        ArcSample smp;
        smp.t = t;
        const Vector state = arc.dense.eval(t);
        smp.x = state.head(n);
        smp.p = state.segment(n, n);
        smp.u = pointwise_minimizer(prob, smp.x, smp.p);
        smp.H = prob.cost.value(smp.x, smp.u) + smp.p.dot(prob.dynamics.eval(smp.x, smp.u));
        arc.samples.push_back(std::move(smp));
    }
}

} // namespace

ExtremalArc integrate_backward(const ProblemSpec& prob, const TerminalCost& psi,
                               const Vector& z, const FlowOptions& opts) {
    const int n = prob.state_dim();
    if (z.size() != n) throw DimensionMismatch("integrate_backward: z has wrong size");

    ExtremalArc arc;
    arc.z = z;
    arc.horizon = prob.horizon;
    arc.state_dim = n;
    arc.control_dim = prob.control_dim();
    const Vector pT = psi.grad(z);
    arc.terminal_H = hamiltonian(prob, z, pT);

    if (z.norm() + pT.norm() >= opts.escape_radius) {
        arc.status = ArcStatus::Escaped;
        arc.escape_time = prob.horizon;
        ArcSample smp;
        smp.t = prob.horizon;
        smp.x = z;
        smp.p = pT;
        smp.u = pointwise_minimizer(prob, z, pT);
        smp.H = arc.terminal_H;
        arc.samples.push_back(std::move(smp));
        arc.dense.T = prob.horizon;
        return arc;
    }

    Vector y0(2 * n);
    y0.head(n) = z;
    y0.segment(n, n) = pT;
    RawIntegration raw = integrate_pmp_state(prob, y0, prob.horizon, 0.0, opts);
    arc.dense.inner = std::move(raw.ode.dense);
    arc.dense.T = prob.horizon;
    if (raw.ode.stopped) {
        arc.status = ArcStatus::Escaped;
        arc.escape_time = raw.t_stop;
    }
    fill_samples(prob, arc, raw, opts);
    return arc;
}

ExtremalArc integrate_backward_from(const ProblemSpec& prob, const Vector& x1,
                                    const Vector& p1, double t_from, double t_to,
                                    const FlowOptions& opts) {
    const int n = prob.state_dim();
    ExtremalArc arc;
    arc.z = x1;
    arc.horizon = t_from;
    arc.state_dim = n;
    arc.control_dim = prob.control_dim();
    arc.terminal_H = hamiltonian(prob, x1, p1);

    Vector y0(2 * n);
    y0.head(n) = x1;
    y0.segment(n, n) = p1;
    RawIntegration raw = integrate_pmp_state(prob, y0, t_from, t_to, opts);
    arc.dense.inner = std::move(raw.ode.dense);
    arc.dense.T = t_from;
    if (raw.ode.stopped) {
        arc.status = ArcStatus::Escaped;
        arc.escape_time = raw.t_stop;
    }
    fill_samples(prob, arc, raw, opts);
    return arc;
}

double hamiltonian_drift(const ProblemSpec& prob, const ExtremalArc& arc) {
    (void)prob;
    double drift = 0.0;
    for (const ArcSample& smp : arc.samples)
        drift = std::max(drift, std::abs(smp.H - arc.terminal_H));
    return drift;
}

double ode_residual(const ProblemSpec& prob, const ExtremalArc& arc,
                    const FlowOptions& opts) {
    const int n = prob.state_dim();
    double worst = 0.0;
    Vector f(2 * n);
    for (const DensePiece& piece : arc.dense.inner.pieces) {
        const double s_mid = piece.s0 + 0.5 * piece.h;
        const Vector y = piece.eval(s_mid);
        const Vector dy = piece.deriv(s_mid);
        HamiltonianFirst ev = hamiltonian_first(prob, y.head(n), y.segment(n, n));
        f.head(n) = -ev.hp;
        f.segment(n, n) = ev.hx;
        // Accumulate the pointwise defect over the step and measure it in the
        // same scaled RMS norm the step controller enforces, so the result is
        // in units of the per-step error budget.
        double acc = 0.0;
        for (int i = 0; i < 2 * n; ++i) {
            const double sc = opts.atol + opts.rtol * std::abs(y[i]);
            const double q = piece.h * (dy[i] - f[i]) / sc;
            acc += q * q;
        }
        worst = std::max(worst, std::sqrt(acc / (2.0 * n)));
    }
    return worst;
}

// ---------------------------------------------------------------------------
// Variational bundle
// ---------------------------------------------------------------------------

namespace {

Matrix unpack(const Vector& y, int offset, int n) {
    return Eigen::Map<const Matrix>(y.data() + offset, n, n);
}

} // namespace

Matrix VariationalBundle::X_at(double t) const {
    const int n = arc.state_dim;
    return unpack(dense.eval(t), 2 * n, n);
}

Matrix VariationalBundle::Y_at(double t) const {
    const int n = arc.state_dim;
    return unpack(dense.eval(t), 2 * n + n * n, n);
}

VariationalBundle integrate_variational(const ProblemSpec& prob, const TerminalCost& psi,
                                        const Vector& z, const FlowOptions& opts) {
    const int n = prob.state_dim();
    if (z.size() != n) throw DimensionMismatch("integrate_variational: z has wrong size");
    const Vector pT = psi.grad(z);
    if (z.norm() + pT.norm() >= opts.escape_radius)
        throw ArcEscaped("integrate_variational: terminal point outside the escape ball");

    Vector y0(2 * n + 2 * n * n);
    y0.head(n) = z;
    y0.segment(n, n) = pT;
    Eigen::Map<Matrix>(y0.data() + 2 * n, n, n) = Matrix::Identity(n, n);
    Eigen::Map<Matrix>(y0.data() + 2 * n + n * n, n, n) = psi.hess(z);

    auto extra = [n](double, const Vector& y, const HamiltonianEval& ev, Vector& dy) {
        const Matrix X = unpack(y, 2 * n, n);
        const Matrix Y = unpack(y, 2 * n + n * n, n);
        // Forward time: Xdot = Hxp^T X + Hpp Y, Ydot = -Hxx X - Hxp Y;
        // the integration runs in s = T - t, hence the sign flip.
        Eigen::Map<Matrix>(dy.data() + 2 * n, n, n) = -(ev.hxp.transpose() * X + ev.hpp * Y);
        Eigen::Map<Matrix>(dy.data() + 2 * n + n * n, n, n) = ev.hxx * X + ev.hxp * Y;
    };
    RawIntegration raw = integrate_pmp_state(prob, y0, prob.horizon, 0.0, opts, extra, true);
    if (raw.ode.stopped)
        throw ArcEscaped("integrate_variational: arc escaped at t = " +
                         std::to_string(raw.t_stop));

    VariationalBundle vb;
    vb.arc.z = z;
    vb.arc.horizon = prob.horizon;
    vb.arc.state_dim = n;
    vb.arc.control_dim = prob.control_dim();
    vb.arc.terminal_H = hamiltonian(prob, z, pT);
    vb.dense.inner = std::move(raw.ode.dense);
    vb.dense.T = prob.horizon;
    // Arc view of the leading (x,p) block shares the same dense data.
    vb.arc.dense = vb.dense;
    fill_samples(prob, vb.arc, raw, opts);
    for (const ArcSample& smp : vb.arc.samples) {
        const Vector state = vb.dense.eval(smp.t);
        vb.X.push_back(unpack(state, 2 * n, n));
        vb.Y.push_back(unpack(state, 2 * n + n * n, n));
    }
    vb.X0 = vb.X.front();
    vb.Y0 = vb.Y.front();
    return vb;
}

Matrix flow_jacobian(const ProblemSpec& prob, const TerminalCost& psi, const Vector& z,
                     const FlowOptions& opts) {
    const int n = prob.state_dim();
    const Vector pT = psi.grad(z);
    if (z.norm() + pT.norm() >= opts.escape_radius)
        throw ArcEscaped("flow_jacobian: terminal point outside the escape ball");
    const int n2 = 2 * n;

    Vector y0(n2 + n2 * n2);
    y0.head(n) = z;
    y0.segment(n, n) = pT;
    Eigen::Map<Matrix>(y0.data() + n2, n2, n2) = Matrix::Identity(n2, n2);

    auto extra = [n, n2](double, const Vector& y, const HamiltonianEval& ev, Vector& dy) {
        Matrix K(n2, n2);
        K.topLeftCorner(n, n) = ev.hxp.transpose();
        K.topRightCorner(n, n) = ev.hpp;
        K.bottomLeftCorner(n, n) = -ev.hxx;
        K.bottomRightCorner(n, n) = -ev.hxp;
        const Matrix Phi = Eigen::Map<const Matrix>(y.data() + n2, n2, n2);
        Eigen::Map<Matrix>(dy.data() + n2, n2, n2) = -(K * Phi);
    };
    RawIntegration raw = integrate_pmp_state(prob, y0, prob.horizon, 0.0, opts, extra, true);
    if (raw.ode.stopped)
        throw ArcEscaped("flow_jacobian: arc escaped at t = " + std::to_string(raw.t_stop));
    return Eigen::Map<const Matrix>(raw.ode.y_end.data() + n2, n2, n2);
}

// ---------------------------------------------------------------------------
// Second variation
// ---------------------------------------------------------------------------

SecondVariation second_variation_along(const ProblemSpec& prob, const TerminalCost& psi,
                                       const Vector& z, const Vector& v,
                                       SecondVariationMethod method,
                                       const FlowOptions& opts) {
    const int n = prob.state_dim();
    if (v.size() != n) throw DimensionMismatch("second_variation_along: v has wrong size");

    if (method == SecondVariationMethod::CentralFD) {
        const double h = 1e-4 * (1.0 + z.norm());
        auto probe = [&](double step) {
            try {
                return integrate_variational(prob, psi, z + step * v, opts);
            } catch (const ArcEscaped&) {
                throw EscapedNeighborhood(
                    "second_variation_along: probe point escaped during central difference");
            }
        };
        VariationalBundle p1 = probe(h), m1 = probe(-h), p2 = probe(2 * h), m2 = probe(-2 * h);
        const Vector d1x = (p1.X0 * v - m1.X0 * v) / (2 * h);
        const Vector d2x = (p2.X0 * v - m2.X0 * v) / (4 * h);
        const Vector d1y = (p1.Y0 * v - m1.Y0 * v) / (2 * h);
        const Vector d2y = (p2.Y0 * v - m2.Y0 * v) / (4 * h);
        SecondVariation sv;
        sv.method = method;
        sv.xi0 = (4.0 * d1x - d2x) / 3.0;
        sv.pi0 = (4.0 * d1y - d2y) / 3.0;
        return sv;
    }

    if (!psi.has_third())
        throw Error("second_variation_along: terminal cost lacks third-order data "
                    "required by the directional method");
    const Vector pT = psi.grad(z);
    if (z.norm() + pT.norm() >= opts.escape_radius)
        throw ArcEscaped("second_variation_along: terminal point outside the escape ball");

    Vector y0(6 * n);
    y0.head(n) = z;
    y0.segment(n, n) = pT;
    y0.segment(2 * n, n) = v;
    y0.segment(3 * n, n) = psi.hess(z) * v;
    y0.segment(4 * n, n).setZero();
    y0.segment(5 * n, n) = psi.third_dir(z, v);

    auto extra = [&prob, n](double, const Vector& y, const HamiltonianEval& ev, Vector& dy) {
        const Vector x = y.head(n), p = y.segment(n, n);
        const Vector xi = y.segment(2 * n, n), pi = y.segment(3 * n, n);
        const Vector Xi = y.segment(4 * n, n), Pi = y.segment(5 * n, n);
        auto blocks = hessian_blocks_directional(prob, x, p, xi, pi);
        const Matrix& dhxx = blocks[0];
        const Matrix& dhxp = blocks[1];
        const Matrix& dhpp = blocks[2];
        // Forward-time equations, negated for the backward parameter.
        dy.segment(2 * n, n) = -(ev.hxp.transpose() * xi + ev.hpp * pi);
        dy.segment(3 * n, n) = ev.hxx * xi + ev.hxp * pi;
        dy.segment(4 * n, n) = -(ev.hxp.transpose() * Xi + ev.hpp * Pi +
                                 dhxp.transpose() * xi + dhpp * pi);
        dy.segment(5 * n, n) = ev.hxx * Xi + ev.hxp * Pi + dhxx * xi + dhxp * pi;
    };
    RawIntegration raw = integrate_pmp_state(prob, y0, prob.horizon, 0.0, opts, extra, true);
    if (raw.ode.stopped)
        throw ArcEscaped("second_variation_along: arc escaped at t = " +
                         std::to_string(raw.t_stop));
    SecondVariation sv;
    sv.method = method;
    sv.xi0 = raw.ode.y_end.segment(4 * n, n);
    sv.pi0 = raw.ode.y_end.segment(5 * n, n);
    return sv;
}

// ---------------------------------------------------------------------------
// Export
// ---------------------------------------------------------------------------

void write_arc_csv(const std::string& path, const ExtremalArc& arc,
                   const std::string& config_hash) {
    std::ofstream f = open_output(path);
    f << "# config_hash=" << config_hash << "\n";
    std::vector<std::string> header{"t"};
    for (const auto& name : indexed_names("x", arc.state_dim)) header.push_back(name);
    for (const auto& name : indexed_names("p", arc.state_dim)) header.push_back(name);
    for (const auto& name : indexed_names("u", arc.control_dim)) header.push_back(name);
    header.push_back("H");
    f << join_csv(header) << "\n";
    for (const ArcSample& smp : arc.samples) {
        std::vector<std::string> row{fmt_double(smp.t)};
        for (int i = 0; i < arc.state_dim; ++i) row.push_back(fmt_double(smp.x[i]));
        for (int i = 0; i < arc.state_dim; ++i) row.push_back(fmt_double(smp.p[i]));
        for (int i = 0; i < arc.control_dim; ++i) row.push_back(fmt_double(smp.u[i]));
        row.push_back(fmt_double(smp.H));
        f << join_csv(row) << "\n";
    }
}

void write_arc_sidecar(const std::string& path, const ExtremalArc& arc,
                       const std::string& config_hash) {
    nlohmann::json j;
    j["config_hash"] = config_hash;
    j["status"] = arc.status == ArcStatus::Complete ? "complete" : "escaped";
    j["escape_time"] = arc.status == ArcStatus::Escaped ? fmt_double(arc.escape_time) : "";
    j["horizon"] = arc.horizon;
    j["terminal_H"] = arc.terminal_H;
    j["samples"] = arc.samples.size();
    std::vector<double> zv(arc.z.data(), arc.z.data() + arc.z.size());
    j["z"] = zv;
    std::ofstream f = open_output(path);
    f << j.dump(2) << "\n";
}

} // namespace extremal
