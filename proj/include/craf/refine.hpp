#pragma once

// Stage 2: iterative refinement of the spectral initialization. CRAF takes
// reweighted amplitude-flow gradient steps followed by the block hard-
// thresholding projection; the SPARTA baseline replaces the smooth weights
// with a hard truncation of small-ratio samples.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "craf/init.hpp"
#include "craf/model.hpp"
#include "craf/numerics.hpp"

namespace craf {

struct CrafParams {
    double mu = 1.0;       // step size
    double beta = 0.6;     // weighting parameter, applied uniformly per sample
    double tau_w = 0.1;    // weight floor
    int max_iters = 1000;
    double early_stop_tol = 1e-14;  // relative iterate change; 0 disables
    InitParams init;

    void validate() const {
        if (!(mu > 0.0)) throw std::invalid_argument("CrafParams: mu must be positive");
        if (!(beta > 0.0)) throw std::invalid_argument("CrafParams: beta must be positive");
        if (!(tau_w > 0.0 && tau_w <= 1.0)) throw std::invalid_argument("CrafParams: tau_w not in (0,1]");
        if (max_iters < 0) throw std::invalid_argument("CrafParams: negative max_iters");
        if (early_stop_tol < 0.0) throw std::invalid_argument("CrafParams: negative early_stop_tol");
        init.validate();
    }
};

struct SpartaParams {
    double mu = 1.0;
    double tau_g = 0.7;    // truncation threshold on |a^T z| / psi
    int max_iters = 1000;
    double early_stop_tol = 1e-14;
    InitParams init;       // support step shares the CRAF thresholds

    void validate() const {
        if (!(mu > 0.0)) throw std::invalid_argument("SpartaParams: mu must be positive");
        // tau_g = 0 keeps every sample: plain magnitude-IHT
        if (tau_g < 0.0) throw std::invalid_argument("SpartaParams: negative tau_g");
        if (max_iters < 0) throw std::invalid_argument("SpartaParams: negative max_iters");
        if (early_stop_tol < 0.0) throw std::invalid_argument("SpartaParams: negative early_stop_tol");
    }
};

struct TraceRecord {
    int iter = 0;
    double rel_error = std::numeric_limits<double>::quiet_NaN();  // NaN without truth
    double loss = 0.0;
    int floored_weight_count = 0;  // CRAF: weights at the tau_w floor; SPARTA: truncated samples
};

struct SolveTrace {
    std::vector<TraceRecord> records;  // one per visited iterate, including iterate 0
    SignalEstimate final_estimate;
    int iterations = 0;  // gradient steps actually taken
    InitDiagnostics init_diag;
    bool own_init = false;  // init_diag is meaningful only when the solver initialized itself
};

namespace detail {

inline std::vector<double> inner_products(const ProblemInstance& inst, std::span<const double> z) {
    std::vector<double> p(inst.m);
    for (int i = 0; i < inst.m; ++i) p[i] = dot(inst.row(i), z);
    return p;
}

// p_i = a_i^T z using only the entries where z can be nonzero.
inline void inner_products_on_support(const ProblemInstance& inst, std::span<const double> z,
                                      const std::vector<int>& entries, std::vector<double>& p) {
    for (int i = 0; i < inst.m; ++i) {
        const double* row = inst.A.data() + static_cast<std::size_t>(i) * inst.n;
        double s = 0.0;
        for (int e : entries) s += row[e] * z[e];
        p[i] = s;
    }
}

// g = (1/m) A^T c, skipping rows with zero coefficient.
inline std::vector<double> gradient_from_coeffs(const ProblemInstance& inst,
                                                std::span<const double> c) {
    std::vector<double> g(inst.n, 0.0);
    for (int i = 0; i < inst.m; ++i) {
        const double ci = c[i];
        if (ci == 0.0) continue;
        const double* row = inst.A.data() + static_cast<std::size_t>(i) * inst.n;
        for (int j = 0; j < inst.n; ++j) g[j] += ci * row[j];
    }
    const double inv_m = 1.0 / inst.m;
    for (auto& v : g) v *= inv_m;
    return g;
}

// w_i = max(tau_w, |p_i| / (|p_i| + beta_i * psi_i)); a 0/0 ratio means the
// sample contributes nothing and is given weight 1 rather than a floor hit.
inline double craf_weight(double p_abs, double psi, double beta, double tau_w, bool& floored) {
    const double den = p_abs + beta * psi;
    if (den == 0.0) {
        floored = false;
        return 1.0;
    }
    const double ratio = p_abs / den;
    floored = ratio <= tau_w;
    return floored ? tau_w : ratio;
}

}  // namespace detail

/// Plain amplitude-flow gradient (1/m) sum (a^T z - psi * sgn(a^T z)) a.
inline std::vector<double> amplitude_gradient(const ProblemInstance& inst,
                                              std::span<const double> z) {
    if (static_cast<int>(z.size()) != inst.n)
        throw std::invalid_argument("amplitude_gradient: size mismatch");
    const std::vector<double> p = detail::inner_products(inst, z);
    std::vector<double> c(inst.m);
    for (int i = 0; i < inst.m; ++i) c[i] = p[i] - inst.psi[i] * sign_or_zero(p[i]);
    return detail::gradient_from_coeffs(inst, c);
}

/// Reweighted gradient with per-sample weighting parameters beta_i.
inline std::vector<double> reweighted_gradient(const ProblemInstance& inst,
                                               std::span<const double> z,
                                               std::span<const double> beta, double tau_w,
                                               int* floored_count = nullptr) {
    if (static_cast<int>(z.size()) != inst.n)
        throw std::invalid_argument("reweighted_gradient: size mismatch");
    if (static_cast<int>(beta.size()) != inst.m)
        throw std::invalid_argument("reweighted_gradient: beta size mismatch");
    if (!(tau_w > 0.0 && tau_w <= 1.0))
        throw std::invalid_argument("reweighted_gradient: tau_w not in (0,1]");
    const std::vector<double> p = detail::inner_products(inst, z);
    std::vector<double> c(inst.m);
    int floored = 0;
    for (int i = 0; i < inst.m; ++i) {
        bool hit = false;
        const double w = detail::craf_weight(std::abs(p[i]), inst.psi[i], beta[i], tau_w, hit);
        floored += hit;
        c[i] = w * (p[i] - inst.psi[i] * sign_or_zero(p[i]));
    }
    if (floored_count) *floored_count = floored;
    return detail::gradient_from_coeffs(inst, c);
}

inline std::vector<double> reweighted_gradient(const ProblemInstance& inst,
                                               std::span<const double> z, double beta,
                                               double tau_w, int* floored_count = nullptr) {
    const std::vector<double> b(inst.m, beta);
    return reweighted_gradient(inst, z, b, tau_w, floored_count);
}

/// SPARTA truncated gradient: samples with |a^T z| < tau_g * psi are dropped;
/// psi_i = 0 samples always pass the test.
inline std::vector<double> truncated_gradient(const ProblemInstance& inst,
                                              std::span<const double> z, double tau_g,
                                              int* excluded_count = nullptr) {
    if (static_cast<int>(z.size()) != inst.n)
        throw std::invalid_argument("truncated_gradient: size mismatch");
    if (tau_g < 0.0) throw std::invalid_argument("truncated_gradient: negative tau_g");
    const std::vector<double> p = detail::inner_products(inst, z);
    std::vector<double> c(inst.m, 0.0);
    int excluded = 0;
    for (int i = 0; i < inst.m; ++i) {
        if (std::abs(p[i]) >= tau_g * inst.psi[i]) {
            c[i] = p[i] - inst.psi[i] * sign_or_zero(p[i]);
        } else {
            ++excluded;
        }
    }
    if (excluded_count) *excluded_count = excluded;
    return detail::gradient_from_coeffs(inst, c);
}

namespace detail {

// Shared iteration driver. CoeffFn maps the inner products p to gradient
// coefficients c and returns the trace count for the current iterate.
template <typename CoeffFn>
SolveTrace run_solver(const ProblemInstance& inst, int k, double mu, int max_iters,
                      double early_stop_tol, SignalEstimate start,
                      const std::vector<double>* truth, CoeffFn&& coeffs) {
    SolveTrace trace;
    std::vector<double> z = std::move(start.z);
    std::vector<int> blocks_live = std::move(start.support_blocks);
    if (blocks_live.empty()) {
        const int bl = inst.blocks.block_len;
        for (int b = 0; b < inst.blocks.num_blocks; ++b)
            for (int j = b * bl; j < (b + 1) * bl; ++j)
                if (z[j] != 0.0) {
                    blocks_live.push_back(b);
                    break;
                }
    }
    auto entries_of = [&](const std::vector<int>& bs) {
        std::vector<int> out;
        out.reserve(bs.size() * inst.blocks.block_len);
        for (int b : bs)
            for (int j = b * inst.blocks.block_len; j < (b + 1) * inst.blocks.block_len; ++j)
                out.push_back(j);
        return out;
    };
    std::vector<int> entries = entries_of(blocks_live);

    std::vector<double> p(inst.m), c(inst.m);
    const double truth_norm = truth ? norm2(*truth) : 0.0;
    trace.records.reserve(max_iters + 1);

    int t = 0;
    bool last = false;
    while (true) {
        inner_products_on_support(inst, z, entries, p);

        double l = 0.0;
        for (int i = 0; i < inst.m; ++i) {
            const double r = inst.psi[i] - std::abs(p[i]);
            l += r * r;
        }
        l /= 2.0 * inst.m;

        const int count = coeffs(p, c);

        TraceRecord rec;
        rec.iter = t;
        rec.loss = l;
        rec.floored_weight_count = count;
        if (truth) rec.rel_error = dist(z, *truth) / truth_norm;
        trace.records.push_back(rec);

        if (last || t == max_iters) break;

        const std::vector<double> g = gradient_from_coeffs(inst, c);
        std::vector<double> v(inst.n);
        for (int j = 0; j < inst.n; ++j) v[j] = z[j] - mu * g[j];
        SignalEstimate next = block_hard_threshold(v, k, inst.blocks);

        double diff2 = 0.0;
        for (int j = 0; j < inst.n; ++j) {
            const double dv = next.z[j] - z[j];
            diff2 += dv * dv;
        }
        const double rel_change = std::sqrt(diff2) / std::max(norm2(z), 1e-300);

        z = std::move(next.z);
        blocks_live = std::move(next.support_blocks);
        entries = entries_of(blocks_live);
        ++t;
        if (early_stop_tol > 0.0 && rel_change < early_stop_tol) last = true;
    }

    trace.final_estimate.support_blocks = std::move(blocks_live);
    trace.final_estimate.z = std::move(z);
    trace.iterations = t;
    return trace;
}

}  // namespace detail

/// CRAF: weighted spectral initialization (unless z0 overrides it) followed
/// by reweighted-gradient steps with the H_k^B projection. When truth is
/// supplied, per-iteration relative errors are recorded; the solve path never
/// reads it otherwise.
inline SolveTrace craf_solve(const ProblemInstance& inst, int k, const CrafParams& params,
                             const std::vector<double>* truth = nullptr,
                             const std::vector<double>* z0 = nullptr) {
    params.validate();
    if (k < 1 || k > inst.blocks.num_blocks) throw std::invalid_argument("craf_solve: k out of range");

    InitDiagnostics diag;
    SignalEstimate start;
    bool own_init = false;
    if (z0) {
        if (static_cast<int>(z0->size()) != inst.n)
            throw std::invalid_argument("craf_solve: z0 size mismatch");
        start.z = *z0;
    } else {
        start = initialize(inst, k, params.init, &diag);
        own_init = true;
    }

    const double beta = params.beta, tau_w = params.tau_w;
    const auto& psi = inst.psi;
    SolveTrace trace = detail::run_solver(
        inst, k, params.mu, params.max_iters, params.early_stop_tol, std::move(start), truth,
        [&](const std::vector<double>& p, std::vector<double>& c) {
            int floored = 0;
            for (std::size_t i = 0; i < p.size(); ++i) {
                bool hit = false;
                const double w = detail::craf_weight(std::abs(p[i]), psi[i], beta, tau_w, hit);
                floored += hit;
                c[i] = w * (p[i] - psi[i] * sign_or_zero(p[i]));
            }
            return floored;
        });
    trace.init_diag = diag;
    trace.own_init = own_init;
    return trace;
}

/// SPARTA baseline: same support + spectral-scale skeleton, hard truncation
/// instead of smooth weights. The trace count column holds the number of
/// truncated samples.
inline SolveTrace sparta_solve(const ProblemInstance& inst, int k, const SpartaParams& params,
                               const std::vector<double>* truth = nullptr,
                               const std::vector<double>* z0 = nullptr) {
    params.validate();
    if (k < 1 || k > inst.blocks.num_blocks)
        throw std::invalid_argument("sparta_solve: k out of range");

    InitDiagnostics diag;
    SignalEstimate start;
    bool own_init = false;
    if (z0) {
        if (static_cast<int>(z0->size()) != inst.n)
            throw std::invalid_argument("sparta_solve: z0 size mismatch");
        start.z = *z0;
    } else {
        start = sparta_initialize(inst, k, &diag);
        own_init = true;
    }

    const double tau_g = params.tau_g;
    const auto& psi = inst.psi;
    SolveTrace trace = detail::run_solver(
        inst, k, params.mu, params.max_iters, params.early_stop_tol, std::move(start), truth,
        [&](const std::vector<double>& p, std::vector<double>& c) {
            int excluded = 0;
            for (std::size_t i = 0; i < p.size(); ++i) {
                if (std::abs(p[i]) >= tau_g * psi[i]) {
                    c[i] = p[i] - psi[i] * sign_or_zero(p[i]);
                } else {
                    c[i] = 0.0;
                    ++excluded;
                }
            }
            return excluded;
        });
    trace.init_diag = diag;
    trace.own_init = own_init;
    return trace;
}

/// Per-iteration trace as CSV. rel_error is empty when no truth was supplied.
inline void write_trace_csv(const SolveTrace& trace, const std::filesystem::path& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("write_trace_csv: cannot open " + path.string());
    os << "iter,rel_error,loss,floored_weight_count\n";
    for (const auto& r : trace.records) {
        os << r.iter << ',';
        if (!std::isnan(r.rel_error)) os << format_double(r.rel_error);
        os << ',' << format_double(r.loss) << ',' << r.floored_weight_count << '\n';
    }
    if (!os) throw std::runtime_error("write_trace_csv: write failed");
}

}  // namespace craf
