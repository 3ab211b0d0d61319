#pragma once

#include <array>
#include <cmath>

namespace extremal {

/// Scalar value with derivatives up to order 4 with respect to one underlying
/// parameter.  Arithmetic propagates the derivatives exactly (Leibniz and
/// chain rules), which gives smooth-cutoff derivatives without finite
/// differencing.
struct Jet4 {
    std::array<double, 5> d{}; // d[k] = k-th derivative

    static Jet4 constant(double c) {
        Jet4 j;
        j.d[0] = c;
        return j;
    }
    static Jet4 variable(double x) {
        Jet4 j;
        j.d[0] = x;
        j.d[1] = 1.0;
        return j;
    }
};

namespace jet_detail {
constexpr double kBinom[5][5] = {{1, 0, 0, 0, 0},
                                 {1, 1, 0, 0, 0},
                                 {1, 2, 1, 0, 0},
                                 {1, 3, 3, 1, 0},
                                 {1, 4, 6, 4, 1}};
} // namespace jet_detail

inline Jet4 operator+(const Jet4& a, const Jet4& b) {
    Jet4 r;
    for (int k = 0; k < 5; ++k) r.d[k] = a.d[k] + b.d[k];
    return r;
}

inline Jet4 operator-(const Jet4& a, const Jet4& b) {
    Jet4 r;
    for (int k = 0; k < 5; ++k) r.d[k] = a.d[k] - b.d[k];
    return r;
}

inline Jet4 operator-(const Jet4& a) {
    Jet4 r;
    for (int k = 0; k < 5; ++k) r.d[k] = -a.d[k];
    return r;
}

inline Jet4 operator*(const Jet4& a, const Jet4& b) {
    Jet4 r;
    for (int k = 0; k < 5; ++k) {
        double s = 0.0;
        for (int j = 0; j <= k; ++j) s += jet_detail::kBinom[k][j] * a.d[j] * b.d[k - j];
        r.d[k] = s;
    }
    return r;
}

inline Jet4 operator*(double c, const Jet4& a) {
    Jet4 r;
    for (int k = 0; k < 5; ++k) r.d[k] = c * a.d[k];
    return r;
}

/// g = 1/a from the Leibniz expansion of a * g == 1 solved triangularly.
inline Jet4 recip(const Jet4& a) {
    Jet4 g;
    g.d[0] = 1.0 / a.d[0];
    for (int k = 1; k < 5; ++k) {
        double s = 0.0;
        for (int j = 1; j <= k; ++j) s += jet_detail::kBinom[k][j] * a.d[j] * g.d[k - j];
        g.d[k] = -s / a.d[0];
    }
    return g;
}

inline Jet4 operator/(const Jet4& a, const Jet4& b) { return a * recip(b); }

/// e = exp(a) from e' = a' e applied repeatedly.
inline Jet4 jexp(const Jet4& a) {
    Jet4 e;
    e.d[0] = std::exp(a.d[0]);
    for (int k = 0; k < 4; ++k) {
        double s = 0.0;
        for (int j = 0; j <= k; ++j) s += jet_detail::kBinom[k][j] * a.d[j + 1] * e.d[k - j];
        e.d[k + 1] = s;
    }
    return e;
}

} // namespace extremal
