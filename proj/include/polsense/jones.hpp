#pragma once

// Minimal 2x2 complex matrix algebra. Everything in this library acts on
// Jones matrices, so the handful of operations we need (products, adjoints,
// Frobenius norms, closed-form singular values / dominant singular vector)
// are implemented directly instead of pulling in a general linear-algebra
// dependency.

#include <array>
#include <cmath>
#include <complex>
#include <ostream>
#include <utility>

namespace polsense {

using cplx = std::complex<double>;

struct Jones {
    cplx a11{}, a12{}, a21{}, a22{};

    static Jones identity() { return {cplx{1.0}, cplx{0.0}, cplx{0.0}, cplx{1.0}}; }
    static Jones zero() { return {}; }

    Jones operator+(const Jones& o) const {
        return {a11 + o.a11, a12 + o.a12, a21 + o.a21, a22 + o.a22};
    }
    Jones operator-(const Jones& o) const {
        return {a11 - o.a11, a12 - o.a12, a21 - o.a21, a22 - o.a22};
    }
    Jones operator-() const { return {-a11, -a12, -a21, -a22}; }
    Jones operator*(const Jones& o) const {
        return {a11 * o.a11 + a12 * o.a21, a11 * o.a12 + a12 * o.a22,
                a21 * o.a11 + a22 * o.a21, a21 * o.a12 + a22 * o.a22};
    }
    Jones& operator+=(const Jones& o) {
        a11 += o.a11; a12 += o.a12; a21 += o.a21; a22 += o.a22;
        return *this;
    }

    Jones adjoint() const {
        return {std::conj(a11), std::conj(a21), std::conj(a12), std::conj(a22)};
    }
    cplx det() const { return a11 * a22 - a12 * a21; }
    cplx trace() const { return a11 + a22; }

    // Frobenius norm (squared); zero iff all entries are zero.
    double norm_sq() const {
        return std::norm(a11) + std::norm(a12) + std::norm(a21) + std::norm(a22);
    }
    double norm() const { return std::sqrt(norm_sq()); }

    // Inverse via the adjugate; the caller is responsible for nonsingularity
    // (section matrices always have |det| = 1).
    Jones inverse() const {
        const cplx d = det();
        return {a22 / d, -a12 / d, -a21 / d, a11 / d};
    }

    bool is_finite() const {
        auto ok = [](const cplx& c) {
            return std::isfinite(c.real()) && std::isfinite(c.imag());
        };
        return ok(a11) && ok(a12) && ok(a21) && ok(a22);
    }

    bool operator==(const Jones& o) const = default;
};

inline Jones operator*(const cplx& s, const Jones& m) {
    return {s * m.a11, s * m.a12, s * m.a21, s * m.a22};
}
inline Jones operator*(double s, const Jones& m) { return cplx{s} * m; }

// Singular values as (largest, smallest). sigma^2 are the eigenvalues of
// A^H A: lambda_max = (t + sqrt(t^2 - 4d))/2 with t = ||A||_F^2 and
// d = |det A|^2; lambda_min = d / lambda_max for accuracy.
inline std::pair<double, double> singular_values(const Jones& m) {
    const double t = m.norm_sq();
    const double d = std::norm(m.det());
    const double disc = std::sqrt(std::max(t * t - 4.0 * d, 0.0));
    const double lmax = 0.5 * (t + disc);
    const double lmin = lmax > 0.0 ? d / lmax : 0.0;
    return {std::sqrt(lmax), std::sqrt(lmin)};
}

// Dominant left singular vector, i.e. the dominant eigenvector of the
// Hermitian matrix M = A A^H. Both closed-form eigenvector candidates are
// formed and the better-conditioned one kept.
inline std::array<cplx, 2> dominant_left_singular_vector(const Jones& m) {
    const Jones g = m * m.adjoint();
    const double p = g.a11.real();
    const double r = g.a22.real();
    const cplx q = g.a12;
    const double disc = std::sqrt(0.25 * (p - r) * (p - r) + std::norm(q));
    const double lmax = 0.5 * (p + r) + disc;

    std::array<cplx, 2> v1{q, cplx{lmax - p}};
    std::array<cplx, 2> v2{cplx{lmax - r}, std::conj(q)};
    const double n1 = std::norm(v1[0]) + std::norm(v1[1]);
    const double n2 = std::norm(v2[0]) + std::norm(v2[1]);
    std::array<cplx, 2> v = n1 >= n2 ? v1 : v2;
    double n = std::sqrt(std::max(n1, n2));
    if (n == 0.0) {
        // M proportional to the identity; any direction is dominant.
        return {cplx{1.0}, cplx{0.0}};
    }
    return {v[0] / n, v[1] / n};
}

inline std::ostream& operator<<(std::ostream& os, const Jones& m) {
    return os << "[[" << m.a11 << ", " << m.a12 << "], [" << m.a21 << ", "
              << m.a22 << "]]";
}

}  // namespace polsense
