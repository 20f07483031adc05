#pragma once

// Self-check battery: fast, seeded sanity checks of the statistical claims
// the algorithms rely on. The CLI `verify` subcommand runs them at desk
// scale; the acceptance suite reuses them at full scale.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "craf/init.hpp"
#include "craf/model.hpp"
#include "craf/refine.hpp"

namespace craf::verify {

struct Check {
    std::string name;
    bool pass = false;
    std::string detail;
    double seconds = 0.0;
};

namespace detail {

inline std::string fmt(const char* pattern, ...) {
    char buf[512];
    va_list args;
    va_start(args, pattern);
    std::vsnprintf(buf, sizeof buf, pattern, args);
    va_end(args);
    return buf;
}

template <typename Fn>
Check timed(const std::string& name, Fn&& fn) {
    Check c;
    c.name = name;
    const auto t0 = std::chrono::steady_clock::now();
    fn(c);
    const auto t1 = std::chrono::steady_clock::now();
    c.seconds = std::chrono::duration<double>(t1 - t0).count();
    return c;
}

}  // namespace detail

/// Monte Carlo estimate of E[g^2 | g^2 >= tau] must dominate lemma1_bound(tau)
/// for every tau, and clear ref_min at tau_ref. Tolerance is the Monte Carlo
/// standard error of each conditional mean.
inline Check lemma1_mc(std::uint64_t seed, long long draws, const std::vector<double>& taus,
                       double tau_ref, double ref_min) {
    return detail::timed("lemma1 Monte Carlo", [&](Check& c) {
        RngStream rng(seed);
        std::vector<double> s1(taus.size(), 0.0), s2(taus.size(), 0.0);
        std::vector<long long> cnt(taus.size(), 0);
        for (long long i = 0; i < draws; ++i) {
            const double g = rng.normal();
            const double g2 = g * g;
            for (std::size_t t = 0; t < taus.size(); ++t) {
                if (g2 >= taus[t]) {
                    s1[t] += g2;
                    s2[t] += g2 * g2;
                    ++cnt[t];
                }
            }
        }
        c.pass = true;
        for (std::size_t t = 0; t < taus.size(); ++t) {
            const double mean = s1[t] / cnt[t];
            const double var = s2[t] / cnt[t] - mean * mean;
            const double se = std::sqrt(var / cnt[t]);
            const double bound = lemma1_bound(taus[t]);
            const bool ok = mean + se >= bound && (taus[t] != tau_ref || mean >= ref_min);
            if (!ok) c.pass = false;
            c.detail += detail::fmt("tau=%.2g mc=%.4f bound=%.4f se=%.1e%s", taus[t], mean,
                                    bound, se, t + 1 < taus.size() ? "; " : "");
        }
    });
}

/// Empirical mean of the fourth-moment statistic (1/m) sum (psi^2 a_j^2)^2 on
/// the support of x = e1 vs off it; the population ratio is 105/9.
inline Check marginal_separation(std::uint64_t seed, int n, int m, int trials,
                                 double min_factor) {
    return detail::timed("marginal moment separation", [&](Check& c) {
        double on_mean = 0.0, off_mean = 0.0;
        for (int trial = 0; trial < trials; ++trial) {
            RngStream rng(mix64(seed + trial));
            double on = 0.0, off = 0.0;
            for (int i = 0; i < m; ++i) {
                const double a1 = rng.normal();
                const double psi2 = a1 * a1;  // x = e1
                on += psi2 * psi2 * a1 * a1 * a1 * a1 / m;
                for (int j = 1; j < n; ++j) {
                    const double aj = rng.normal();
                    const double z = psi2 * aj * aj;
                    off += z * z / m;
                }
            }
            on_mean += on;
            off_mean += off / (n - 1);
        }
        on_mean /= trials;
        off_mean /= trials;
        const double factor = on_mean / off_mean;
        c.pass = factor >= min_factor;
        c.detail = detail::fmt("on=%.2f off=%.3f factor=%.2f (need >= %.1f)", on_mean, off_mean,
                               factor, min_factor);
    });
}

/// amplitude_gradient against central finite differences at smooth points
/// (all |a_i^T z| > 1e-3).
inline Check gradient_fd(std::uint64_t seed, int n, int m, int points, double tol) {
    return detail::timed("gradient vs finite differences", [&](Check& c) {
        RngStream rng(seed);
        const auto inst = generate_instance(n, m, std::max(1, n / 10), make_blocks(n, 1), 0.0, rng);
        double worst = 0.0;
        int found = 0;
        while (found < points) {
            auto z = sample_standard_normal(rng, n);
            double lo = 1e300;
            for (int i = 0; i < m; ++i) lo = std::min(lo, std::abs(dot(inst.row(i), z)));
            if (lo <= 1e-3) continue;
            ++found;
            const auto g = amplitude_gradient(inst, z);
            const double h = 1e-6;
            std::vector<double> diff(n);
            std::vector<double> zp(z);
            for (int j = 0; j < n; ++j) {
                zp[j] = z[j] + h;
                const double up = loss(inst, zp);
                zp[j] = z[j] - h;
                const double dn = loss(inst, zp);
                zp[j] = z[j];
                diff[j] = (up - dn) / (2.0 * h) - g[j];
            }
            worst = std::max(worst, norm2(diff) / norm2(g));
        }
        c.pass = worst <= tol;
        c.detail = detail::fmt("%d points, worst rel err %.2e (tol %.0e)", points, worst, tol);
    });
}

/// H_k^B distance optimality against brute-force support enumeration.
/// fixed_nb/fixed_k pin the shape; 0 draws them per case.
inline Check hard_threshold_opt(std::uint64_t seed, int cases, int max_blocks, int max_k,
                                int max_blen, int fixed_nb = 0, int fixed_k = 0) {
    return detail::timed("hard threshold optimality", [&](Check& c) {
        if (fixed_nb > 0 && fixed_k > fixed_nb)
            throw std::invalid_argument("hard_threshold_opt: k exceeds block count");
        RngStream rng(seed);
        int ok = 0;
        for (int rep = 0; rep < cases; ++rep) {
            const int bl = 1 + static_cast<int>(rng.uniform_below(max_blen));
            const int nb =
                fixed_nb > 0 ? fixed_nb : 2 + static_cast<int>(rng.uniform_below(max_blocks - 1));
            const int k = fixed_k > 0
                              ? fixed_k
                              : 1 + static_cast<int>(rng.uniform_below(std::min(nb, max_k)));
            const BlockStructure blocks{bl, nb};
            auto u = sample_standard_normal(rng, blocks.dim());
            if (rep % 7 == 0 && nb >= 3) {
                for (int j = 0; j < bl; ++j) u[bl + j] = -u[j];  // exact energy tie
            }

            std::vector<double> energy(nb, 0.0);
            for (int b = 0; b < nb; ++b)
                for (int j = b * bl; j < (b + 1) * bl; ++j) energy[b] += u[j] * u[j];

            // brute force best k-subset energy == minimal squared distance
            double best = -1.0;
            std::vector<int> pick;
            std::function<void(int, double)> rec = [&](int from, double acc) {
                if (static_cast<int>(pick.size()) == k) {
                    best = std::max(best, acc);
                    return;
                }
                for (int b = from; b < nb; ++b) {
                    pick.push_back(b);
                    rec(b + 1, acc + energy[b]);
                    pick.pop_back();
                }
            };
            rec(0, 0.0);

            const auto est = block_hard_threshold(u, k, blocks);
            double kept = 0.0;
            for (int b : est.support_blocks) kept += energy[b];
            // exact ties allowed: the kept energy must match the optimum
            if (std::abs(kept - best) <= 1e-12 * std::max(1.0, best)) ++ok;
        }
        c.pass = ok == cases;
        c.detail = detail::fmt("%d/%d cases optimal", ok, cases);
    });
}

/// Desk-scale battery for the CLI: a few seconds end to end.
inline std::vector<Check> run_all(std::uint64_t seed) {
    std::vector<Check> out;
    out.push_back(lemma1_mc(seed, 1000000, {0.1, 0.5, 1.0, 2.0}, 0.5, 1.42));
    out.push_back(marginal_separation(seed + 1, 40, 2000, 10, 5.0));
    out.push_back(gradient_fd(seed + 2, 40, 120, 5, 1e-4));
    out.push_back(hard_threshold_opt(seed + 3, 60, 8, 4, 3));
    return out;
}

}  // namespace craf::verify
