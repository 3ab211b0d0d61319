#include "extremal/dopri5.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace extremal {

namespace {

// Dormand-Prince 5(4) tableau.
constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                 a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                 a64 = 49.0 / 176, a65 = -5103.0 / 18656;
constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192,
                 b5 = -2187.0 / 6784, b6 = 11.0 / 84;
// Difference b - bhat used for the embedded error estimate.
constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                 e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;
// Continuous-extension weights.
constexpr double d1 = -12715105075.0 / 11282082432.0, d3 = 87487479700.0 / 32700410799.0,
                 d4 = -10690763975.0 / 1880347072.0, d5 = 701980252875.0 / 199316789632.0,
                 d6 = -1453857185.0 / 822651844.0, d7 = 69997945.0 / 29380423.0;

bool all_finite(const Vector& v) { return v.allFinite(); }

} // namespace

Vector DensePiece::eval(double s) const {
    const double theta = (s - s0) / h;
    const double theta1 = 1.0 - theta;
    return r1 + theta * (r2 + theta1 * (r3 + theta * (r4 + theta1 * r5)));
}

Vector DensePiece::deriv(double s) const {
    const double th = (s - s0) / h;
    // Expansion of the nested form: P = r1 + r2 th + r3 (th - th^2)
    // + r4 (th^2 - th^3) + r5 (th^2 - 2 th^3 + th^4).
    Vector d = r2 + (1.0 - 2.0 * th) * r3 + (2.0 * th - 3.0 * th * th) * r4 +
               (2.0 * th - 6.0 * th * th + 4.0 * th * th * th) * r5;
    return d / h;
}

const DensePiece& DenseOutput::piece_at(double s) const {
    if (pieces.empty()) throw Error("dense output is empty");
    const double lo = s_min(), hi = s_max();
    const double slack = 1e-9 * (1.0 + std::abs(hi - lo));
    if (s < lo - slack || s > hi + slack)
        throw Error("dense output evaluated outside its support");
    s = std::clamp(s, lo, hi);
    // Binary search for the piece with s0 <= s < s0 + h.
    size_t a = 0, b = pieces.size() - 1;
    while (a < b) {
        const size_t mid = (a + b + 1) / 2;
        if (pieces[mid].s0 <= s)
            a = mid;
        else
            b = mid - 1;
    }
    return pieces[a];
}

OdeResult dopri5_integrate(const OdeRhs& rhs, const Vector& y0, double s0, double s1,
                           const OdeOptions& opts, const StopCondition& stop) {
    const auto n = y0.size();
    const double span = s1 - s0;
    if (span <= 0.0) throw Error("dopri5_integrate: need s1 > s0");

    auto error_norm = [&](const Vector& err, const Vector& ya, const Vector& yb) {
        double acc = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            const double sc = opts.atol + opts.rtol * std::max(std::abs(ya[i]), std::abs(yb[i]));
            const double q = err[i] / sc;
            acc += q * q;
        }
        return std::sqrt(acc / static_cast<double>(n));
    };

    OdeResult out;
    out.step_points.push_back(s0);

    Vector y = y0;
    double s = s0;
    Vector k1(n), k2(n), k3(n), k4(n), k5(n), k6(n), k7(n), ytmp(n), ynew(n), yerr(n);
    rhs(s, y, k1);
    if (!all_finite(k1)) throw Error("dopri5_integrate: RHS not finite at the initial state");

    const double hmax = opts.max_step > 0.0 ? std::min(opts.max_step, span) : span;
    double h;
    if (opts.initial_step > 0.0) {
        h = std::min(opts.initial_step, hmax);
    } else {
        // Scale-based guess refined by one explicit Euler probe.
        double d0 = 0.0, d1n = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            const double sc = opts.atol + opts.rtol * std::abs(y[i]);
            d0 += (y[i] / sc) * (y[i] / sc);
            d1n += (k1[i] / sc) * (k1[i] / sc);
        }
        d0 = std::sqrt(d0 / static_cast<double>(n));
        d1n = std::sqrt(d1n / static_cast<double>(n));
        double h0 = (d0 < 1e-5 || d1n < 1e-5) ? 1e-6 : 0.01 * d0 / d1n;
        h0 = std::min(h0, hmax);
        ytmp = y + h0 * k1;
        rhs(s + h0, ytmp, k2);
        double d2 = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            const double sc = opts.atol + opts.rtol * std::abs(y[i]);
            const double q = (k2[i] - k1[i]) / sc;
            d2 += q * q;
        }
        d2 = std::sqrt(d2 / static_cast<double>(n)) / h0;
        const double dm = std::max(d1n, d2);
        const double h1 = dm <= 1e-15 ? std::max(1e-6, h0 * 1e-3)
                                      : std::pow(0.01 / dm, 0.2);
        h = std::min({100.0 * h0, h1, hmax});
    }

    const double eps = std::numeric_limits<double>::epsilon();
    long steps = 0;
    bool last = false;
    while (true) {
        if (++steps > opts.max_steps)
            throw NonConvergence("dopri5_integrate: step budget exhausted");
        if (s + h >= s1 - 1e-14 * span) {
            h = s1 - s;
            last = true;
        } else {
            last = false;
        }
        if (h < 16.0 * eps * std::max(std::abs(s), 1.0))
            throw StepSizeUnderflow("dopri5_integrate: step size underflow at s = " +
                                    std::to_string(s));

        ytmp = y + h * (a21 * k1);
        rhs(s + c2 * h, ytmp, k2);
        ytmp = y + h * (a31 * k1 + a32 * k2);
        rhs(s + c3 * h, ytmp, k3);
        ytmp = y + h * (a41 * k1 + a42 * k2 + a43 * k3);
        rhs(s + c4 * h, ytmp, k4);
        ytmp = y + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4);
        rhs(s + c5 * h, ytmp, k5);
        ytmp = y + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5);
        rhs(s + h, ytmp, k6);
        ynew = y + h * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
        rhs(s + h, ynew, k7); // FSAL stage
        yerr = h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);

        double err = std::numeric_limits<double>::infinity();
        if (all_finite(ynew) && all_finite(yerr) && all_finite(k7))
            err = error_norm(yerr, y, ynew);

        if (err <= 1.0) {
            DensePiece piece;
            piece.s0 = s;
            piece.h = h;
            const Vector ydiff = ynew - y;
            piece.r1 = y;
            piece.r2 = ydiff;
            piece.r3 = h * k1 - ydiff;
            piece.r4 = ydiff - h * k7 - piece.r3;
            piece.r5 = h * (d1 * k1 + d3 * k3 + d4 * k4 + d5 * k5 + d6 * k6 + d7 * k7);
            out.dense.pieces.push_back(std::move(piece));

            s += h;
            y = ynew;
            k1 = k7;
            ++out.n_accepted;
            out.step_points.push_back(s);

            if (stop && stop(s, y)) {
                out.stopped = true;
                break;
            }
            if (last) break;

            const double fac =
                std::clamp(0.9 * std::pow(std::max(err, 1e-10), -0.2), 0.2, 5.0);
            h = std::min(h * fac, hmax);
        } else {
            ++out.n_rejected;
            const double fac = std::isfinite(err)
                                   ? std::clamp(0.9 * std::pow(err, -0.2), 0.1, 0.9)
                                   : 0.1;
            h *= fac;
        }
    }

    out.s_end = s;
    out.y_end = y;
    return out;
}

} // namespace extremal
