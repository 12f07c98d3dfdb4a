#pragma once

#include <cmath>

namespace winq {

// First-order dual number: value plus directional derivative (tangent).
// Running the whole forward+reverse pass in Dual arithmetic with parameter
// tangents seeded to v yields the tangent of the gradient, i.e. an exact
// Hessian-vector product.
struct Dual {
    double v = 0.0;  // value
    double t = 0.0;  // tangent

    Dual() = default;
    Dual(double value) : v(value), t(0.0) {}
    Dual(double value, double tangent) : v(value), t(tangent) {}

    Dual& operator+=(const Dual& o) {
        v += o.v;
        t += o.t;
        return *this;
    }
    Dual& operator-=(const Dual& o) {
        v -= o.v;
        t -= o.t;
        return *this;
    }
    Dual& operator*=(const Dual& o) {
        t = t * o.v + v * o.t;
        v *= o.v;
        return *this;
    }
};

inline Dual operator+(Dual a, const Dual& b) { return a += b; }
inline Dual operator-(Dual a, const Dual& b) { return a -= b; }
inline Dual operator-(const Dual& a) { return {-a.v, -a.t}; }
inline Dual operator*(const Dual& a, const Dual& b) { return {a.v * b.v, a.t * b.v + a.v * b.t}; }
inline Dual operator/(const Dual& a, const Dual& b) {
    double inv = 1.0 / b.v;
    double q = a.v * inv;
    return {q, (a.t - q * b.t) * inv};
}

inline bool operator<(const Dual& a, const Dual& b) { return a.v < b.v; }
inline bool operator>(const Dual& a, const Dual& b) { return a.v > b.v; }

inline Dual exp(const Dual& x) {
    double e = std::exp(x.v);
    return {e, e * x.t};
}
inline Dual log(const Dual& x) { return {std::log(x.v), x.t / x.v}; }
inline Dual sqrt(const Dual& x) {
    double s = std::sqrt(x.v);
    return {s, 0.5 * x.t / s};
}
inline Dual erf(const Dual& x) {
    constexpr double two_over_sqrt_pi = 1.1283791670955126;
    return {std::erf(x.v), two_over_sqrt_pi * std::exp(-x.v * x.v) * x.t};
}

// Scalar-access helpers so templated kernels can treat double and Dual alike.
inline double value_of(double x) { return x; }
inline double value_of(const Dual& x) { return x.v; }

}  // namespace winq
