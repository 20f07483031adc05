#pragma once

// Self-contained numerical kernels: seeded Gaussian sampling, a dense
// symmetric eigensolver, the Gauss error function, and small vector
// helpers. No external linear-algebra dependency.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace craf {

inline constexpr std::uint64_t kGolden64 = 0x9e3779b97f4a7c15ull;

/// SplitMix64 finalizer. Statistically strong mixing of a 64-bit word.
inline constexpr std::uint64_t mix64(std::uint64_t x) {
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

/// Counter-based random stream: output i is mix64(seed + i*golden), so the
/// sequence is a pure function of (seed, counter) and trivially splittable
/// across trials. Identical seed gives an identical sequence on every
/// platform and thread schedule.
class RngStream {
public:
    RngStream() = default;
    explicit RngStream(std::uint64_t seed) : seed_(seed) {}

    std::uint64_t seed() const { return seed_; }

    std::uint64_t next_u64() { return mix64(seed_ + (++counter_) * kGolden64); }

    /// Uniform on [0, 1), 53-bit resolution.
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform on (0, 1]; safe as a log() argument.
    double uniform01_positive() {
        return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
    }

    /// Uniform integer in [0, bound). bound must be positive.
    std::uint64_t uniform_below(std::uint64_t bound) {
        return static_cast<std::uint64_t>(
            (static_cast<unsigned __int128>(next_u64()) * bound) >> 64);
    }

    /// Standard normal draw (Box-Muller; the second value of each pair is
    /// cached, so consumption of the underlying stream stays deterministic).
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = uniform01_positive();
        const double u2 = uniform01();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

private:
    std::uint64_t seed_ = 0;
    std::uint64_t counter_ = 0;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

inline std::vector<double> sample_standard_normal(RngStream& rng, std::size_t count) {
    std::vector<double> out(count);
    for (auto& v : out) v = rng.normal();
    return out;
}

// ---------------------------------------------------------------------------
// erf
// ---------------------------------------------------------------------------

namespace detail {

// Maclaurin series; converges quickly for |x| <= 2.
inline double erf_series(double x) {
    const double x2 = x * x;
    double term = x;       // x^(2n+1)/n!
    double sum = x;        // running sum of term/(2n+1) with alternating sign
    for (int n = 1; n < 200; ++n) {
        term *= -x2 / n;
        const double contrib = term / (2 * n + 1);
        sum += contrib;
        if (std::abs(contrib) < 1e-18 * std::abs(sum)) break;
    }
    return sum * (2.0 / std::sqrt(std::numbers::pi));
}

// Continued fraction for erfc(x), x >= 2 (A&S 7.1.14), modified Lentz.
inline double erfc_cf(double x) {
    const double tiny = 1e-300;
    double f = tiny, c = f, d = 0.0;
    for (int n = 1; n < 300; ++n) {
        const double a = (n == 1) ? 1.0 : (n - 1) / 2.0;
        d = x + a * d;
        if (d == 0.0) d = tiny;
        c = x + a / c;
        if (c == 0.0) c = tiny;
        d = 1.0 / d;
        const double delta = c * d;
        f *= delta;
        if (std::abs(delta - 1.0) < 1e-17) break;
    }
    return std::exp(-x * x) / std::sqrt(std::numbers::pi) * f;
}

}  // namespace detail

/// Gauss error function, (1/sqrt(pi)) * integral of exp(-t^2) over [-x, x].
/// Absolute error below 1e-14.
inline double erf(double x) {
    if (!std::isfinite(x)) throw std::invalid_argument("erf: non-finite argument");
    const double ax = std::abs(x);
    double r;
    if (ax < 2.0) {
        r = detail::erf_series(ax);
    } else {
        r = 1.0 - detail::erfc_cf(ax);
    }
    return x < 0 ? -r : r;
}

// ---------------------------------------------------------------------------
// Vector helpers
// ---------------------------------------------------------------------------

inline double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double squared_norm(std::span<const double> v) { return dot(v, v); }

inline double norm2(std::span<const double> v) { return std::sqrt(squared_norm(v)); }

// ---------------------------------------------------------------------------
// Symmetric eigensolver
// ---------------------------------------------------------------------------

/// Dense symmetric matrix, full storage, mirrored on write.
class SymMatrix {
public:
    explicit SymMatrix(int order) : d_(order), a_(static_cast<std::size_t>(order) * order, 0.0) {
        if (order < 0) throw std::invalid_argument("SymMatrix: negative order");
    }

    int order() const { return d_; }

    double operator()(int i, int j) const { return a_[idx(i, j)]; }

    void set(int i, int j, double v) {
        a_[idx(i, j)] = v;
        a_[idx(j, i)] = v;
    }

    const std::vector<double>& data() const { return a_; }

    double frobenius_norm() const { return norm2(a_); }

private:
    std::size_t idx(int i, int j) const {
        return static_cast<std::size_t>(i) * d_ + j;
    }
    int d_;
    std::vector<double> a_;
};

struct EigenPair {
    double value = 0.0;
    std::vector<double> vector;
};

/// Full spectrum, eigenvalues sorted descending; vectors[i] pairs values[i].
struct EigenDecomposition {
    std::vector<double> values;
    std::vector<std::vector<double>> vectors;
};

/// Flip v so that its largest-magnitude entry is positive; magnitude ties go
/// to the lowest index. Makes eigenvector output deterministic.
inline void fix_eigenvector_sign(std::vector<double>& v) {
    std::size_t best = 0;
    double mag = std::abs(v[0]);
    for (std::size_t i = 1; i < v.size(); ++i) {
        if (std::abs(v[i]) > mag) {
            mag = std::abs(v[i]);
            best = i;
        }
    }
    if (v[best] < 0.0) {
        for (auto& e : v) e = -e;
    }
}

/// Cyclic Jacobi eigendecomposition. Robust for indefinite matrices (the
/// weighted initialization matrix has most of its spectrum negative, so
/// magnitude-based methods such as plain power iteration are not usable).
/// Off-diagonal Frobenius tolerance 1e-12 relative to the input scale,
/// at most 100 sweeps.
inline EigenDecomposition jacobi_eigen(const SymMatrix& M) {
    const int d = M.order();
    if (d == 0) throw std::invalid_argument("jacobi_eigen: order 0");
    for (double e : M.data()) {
        if (!std::isfinite(e)) throw std::invalid_argument("jacobi_eigen: non-finite entry");
    }

    std::vector<double> a(M.data());
    std::vector<double> V(static_cast<std::size_t>(d) * d, 0.0);
    for (int i = 0; i < d; ++i) V[static_cast<std::size_t>(i) * d + i] = 1.0;

    auto at = [&](int i, int j) -> double& { return a[static_cast<std::size_t>(i) * d + j]; };
    const double tol = 1e-12 * std::max(M.frobenius_norm(), 1e-300);

    for (int sweep = 0; sweep < 100; ++sweep) {
        double off2 = 0.0;
        for (int p = 0; p < d; ++p)
            for (int q = p + 1; q < d; ++q) off2 += 2.0 * at(p, q) * at(p, q);
        if (std::sqrt(off2) <= tol) break;

        for (int p = 0; p < d - 1; ++p) {
            for (int q = p + 1; q < d; ++q) {
                const double apq = at(p, q);
                if (apq == 0.0) continue;
                const double theta = (at(q, q) - at(p, p)) / (2.0 * apq);
                double t;
                if (std::abs(theta) > 1e150) {
                    t = 1.0 / (2.0 * theta);
                } else {
                    t = 1.0 / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                    if (theta < 0.0) t = -t;
                }
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;

                const double app = at(p, p), aqq = at(q, q);
                at(p, p) = app - t * apq;
                at(q, q) = aqq + t * apq;
                at(p, q) = 0.0;
                at(q, p) = 0.0;
                for (int r = 0; r < d; ++r) {
                    if (r == p || r == q) continue;
                    const double arp = at(r, p), arq = at(r, q);
                    at(r, p) = c * arp - s * arq;
                    at(p, r) = at(r, p);
                    at(r, q) = s * arp + c * arq;
                    at(q, r) = at(r, q);
                }
                for (int r = 0; r < d; ++r) {
                    const std::size_t rp = static_cast<std::size_t>(r) * d + p;
                    const std::size_t rq = static_cast<std::size_t>(r) * d + q;
                    const double vrp = V[rp], vrq = V[rq];
                    V[rp] = c * vrp - s * vrq;
                    V[rq] = s * vrp + c * vrq;
                }
            }
        }
    }

    std::vector<int> order(d);
    for (int i = 0; i < d; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](int i, int j) {
        if (at(i, i) != at(j, j)) return at(i, i) > at(j, j);
        return i < j;
    });

    EigenDecomposition out;
    out.values.resize(d);
    out.vectors.assign(d, std::vector<double>(d));
    for (int r = 0; r < d; ++r) {
        const int col = order[r];
        out.values[r] = at(col, col);
        for (int i = 0; i < d; ++i) out.vectors[r][i] = V[static_cast<std::size_t>(i) * d + col];
    }
    return out;
}

/// Eigenpair of the algebraically largest eigenvalue (the Rayleigh-quotient
/// maximizer), unit-norm vector with deterministic sign.
inline EigenPair top_eigenpair(const SymMatrix& M) {
    EigenDecomposition full = jacobi_eigen(M);
    EigenPair out;
    out.value = full.values.front();
    out.vector = std::move(full.vectors.front());
    const double nrm = norm2(out.vector);
    if (nrm > 0.0) {
        for (auto& e : out.vector) e /= nrm;
    }
    fix_eigenvector_sign(out.vector);
    return out;
}

}  // namespace craf
