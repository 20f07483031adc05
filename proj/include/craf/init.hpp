#pragma once

// Stage 1 of both solvers: estimate the block support from the measurement
// marginals, then run a spectral method on the dimension-reduced sensing
// matrix. CRAF uses the weighted covariance with a negative weight on
// small-magnitude samples; the SPARTA baseline uses the orthogonality-
// promoting selection of the largest-magnitude samples.

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "craf/model.hpp"
#include "craf/numerics.hpp"

namespace craf {

struct InitParams {
    double lambda_minus = -3.0;  // weight on small-magnitude samples
    double lambda_plus = 1.0;    // weight on large-magnitude samples
    double tau1 = 0.5;           // lower selector: psi^2 <= tau1 * r_hat^2
    double tau2 = 0.5;           // upper selector: psi^2 >= tau2 * r_hat^2

    void validate() const {
        if (!(lambda_minus < 0.0)) throw std::invalid_argument("InitParams: lambda_minus must be negative");
        if (!(lambda_plus > 0.0)) throw std::invalid_argument("InitParams: lambda_plus must be positive");
        if (!(tau1 > 0.0) || !(tau2 > 0.0)) throw std::invalid_argument("InitParams: thresholds must be positive");
        if (tau1 > tau2) throw std::invalid_argument("InitParams: tau1 > tau2 leaves samples double-counted");
    }
};

/// r_hat = sqrt((1/m) sum psi_i^2), a consistent estimate of ||x||.
inline double norm_estimate(std::span<const double> psi) {
    if (psi.empty()) throw std::invalid_argument("norm_estimate: empty input");
    return std::sqrt(squared_norm(psi) / static_cast<double>(psi.size()));
}

struct SamplePartition {
    std::vector<int> lower;  // psi^2 <= tau1 * r_hat^2
    std::vector<int> upper;  // psi^2 >= tau2 * r_hat^2
};

/// Both comparisons are inclusive, so with tau1 == tau2 a boundary sample
/// lands in both sets.
inline SamplePartition partition_samples(std::span<const double> psi, double r_hat,
                                         const InitParams& p) {
    SamplePartition out;
    const double lo = p.tau1 * r_hat * r_hat;
    const double hi = p.tau2 * r_hat * r_hat;
    for (int i = 0; i < static_cast<int>(psi.size()); ++i) {
        const double s = psi[i] * psi[i];
        if (s <= lo) out.lower.push_back(i);
        if (s >= hi) out.upper.push_back(i);
    }
    return out;
}

/// Certified gap of the weighted spectral matrix at threshold tau
/// (tau1 = tau2 = tau): (6 - tau*erf(sqrt(tau))) / (6 - 3*erf(sqrt(tau))).
/// The expected top eigenvalue direction dominates the bulk whenever this
/// exceeds 1; at tau = 0.5 it is about 1.43.
inline double lemma1_bound(double tau) {
    if (!(tau > 0.0)) throw std::invalid_argument("lemma1_bound: tau must be positive");
    const double e = erf(std::sqrt(tau));
    return (6.0 - tau * e) / (6.0 - 3.0 * e);
}

struct SpectralInfo {
    double r_hat = 0.0;
    std::size_t lower_count = 0;
    std::size_t upper_count = 0;
    double eig_top = 0.0;
    double eig_second = 0.0;
};

/// Unit top eigenvector (algebraically largest eigenvalue) of
///   M = (lambda_minus/|I-|) sum_{I-} a a^T + (lambda_plus/|I+|) sum_{I+} a a^T
/// over the m x d submatrix a_sub (row-major). An empty index set simply
/// drops its term. The matrix is indefinite by construction.
inline std::vector<double> spectral_direction(std::span<const double> a_sub, int m, int d,
                                              std::span<const double> psi, const InitParams& p,
                                              SpectralInfo* info = nullptr) {
    p.validate();
    if (m < 1 || d < 1) throw std::invalid_argument("spectral_direction: empty matrix");
    if (static_cast<int>(a_sub.size()) != m * d || static_cast<int>(psi.size()) != m)
        throw std::invalid_argument("spectral_direction: size mismatch");

    const double r_hat = norm_estimate(psi);
    const SamplePartition part = partition_samples(psi, r_hat, p);

    std::vector<double> acc(static_cast<std::size_t>(d) * d, 0.0);
    auto accumulate = [&](const std::vector<int>& idx, double weight) {
        if (idx.empty()) return;
        const double w = weight / static_cast<double>(idx.size());
        for (int i : idx) {
            const double* row = a_sub.data() + static_cast<std::size_t>(i) * d;
            for (int r = 0; r < d; ++r) {
                const double wr = w * row[r];
                for (int c = r; c < d; ++c) acc[static_cast<std::size_t>(r) * d + c] += wr * row[c];
            }
        }
    };
    accumulate(part.lower, p.lambda_minus);
    accumulate(part.upper, p.lambda_plus);

    SymMatrix M(d);
    for (int r = 0; r < d; ++r)
        for (int c = r; c < d; ++c) M.set(r, c, acc[static_cast<std::size_t>(r) * d + c]);

    EigenDecomposition full = jacobi_eigen(M);
    std::vector<double> v = std::move(full.vectors.front());
    const double nrm = norm2(v);
    if (nrm > 0.0)
        for (auto& e : v) e /= nrm;
    fix_eigenvector_sign(v);

    if (info) {
        info->r_hat = r_hat;
        info->lower_count = part.lower.size();
        info->upper_count = part.upper.size();
        info->eig_top = full.values[0];
        info->eig_second = d > 1 ? full.values[1] : full.values[0];
    }
    return v;
}

/// Support scores zeta_b = sum_{j in block b} ((1/m) sum_i psi_i^2 A_ij^2)^2.
/// In expectation the per-entry inner sum is ||x||^2 + 2 x_j^2, so blocks
/// carrying signal energy score higher.
inline std::vector<double> block_marginals(std::span<const double> A, int m,
                                           std::span<const double> psi,
                                           const BlockStructure& blocks) {
    blocks.validate();
    const int n = blocks.dim();
    if (static_cast<int>(A.size()) != m * n || static_cast<int>(psi.size()) != m)
        throw std::invalid_argument("block_marginals: size mismatch");

    std::vector<double> entry(n, 0.0);
    for (int i = 0; i < m; ++i) {
        const double w = psi[i] * psi[i];
        const double* row = A.data() + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) entry[j] += w * row[j] * row[j];
    }
    for (auto& e : entry) e /= static_cast<double>(m);

    std::vector<double> zeta(blocks.num_blocks, 0.0);
    for (int j = 0; j < n; ++j) zeta[blocks.block_of(j)] += entry[j] * entry[j];
    return zeta;
}

inline std::vector<double> block_marginals(const ProblemInstance& inst) {
    return block_marginals(inst.A, inst.m, inst.psi, inst.blocks);
}

struct SupportEstimate {
    std::vector<int> block_support;  // ascending, size k
    std::vector<int> entry_support;  // ascending, size k * block_len
};

/// Top-k blocks by marginal score; ties go to the lower block index.
inline SupportEstimate estimate_support(std::span<const double> marginals, int k,
                                        const BlockStructure& blocks) {
    blocks.validate();
    if (static_cast<int>(marginals.size()) != blocks.num_blocks)
        throw std::invalid_argument("estimate_support: size mismatch");
    if (k < 1 || k > blocks.num_blocks)
        throw std::invalid_argument("estimate_support: k out of range");

    std::vector<int> order(blocks.num_blocks);
    for (int b = 0; b < blocks.num_blocks; ++b) order[b] = b;
    std::sort(order.begin(), order.end(), [&](int i, int j) {
        if (marginals[i] != marginals[j]) return marginals[i] > marginals[j];
        return i < j;
    });

    SupportEstimate out;
    out.block_support.assign(order.begin(), order.begin() + k);
    std::sort(out.block_support.begin(), out.block_support.end());
    out.entry_support.reserve(static_cast<std::size_t>(k) * blocks.block_len);
    for (int b : out.block_support)
        for (int j = b * blocks.block_len; j < (b + 1) * blocks.block_len; ++j)
            out.entry_support.push_back(j);
    return out;
}

struct InitDiagnostics {
    double r_hat = 0.0;
    std::size_t lower_count = 0;   // |I-| (CRAF) or |I0| (SPARTA)
    std::size_t upper_count = 0;   // |I+| (CRAF only)
    double eig_top = 0.0;
    double eig_second = 0.0;
    int support_overlap = 0;       // estimated blocks also in the true support
};

namespace detail {

inline std::vector<double> gather_columns(const ProblemInstance& inst,
                                          const std::vector<int>& cols) {
    const int d = static_cast<int>(cols.size());
    std::vector<double> sub(static_cast<std::size_t>(inst.m) * d);
    for (int i = 0; i < inst.m; ++i) {
        const double* row = inst.A.data() + static_cast<std::size_t>(i) * inst.n;
        double* dst = sub.data() + static_cast<std::size_t>(i) * d;
        for (int c = 0; c < d; ++c) dst[c] = row[cols[c]];
    }
    return sub;
}

inline int overlap_with_truth(const ProblemInstance& inst, const std::vector<int>& est) {
    const std::vector<int> truth = true_support_blocks(inst);
    std::vector<int> both;
    std::set_intersection(est.begin(), est.end(), truth.begin(), truth.end(),
                          std::back_inserter(both));
    return static_cast<int>(both.size());
}

inline SignalEstimate embed_and_scale(const ProblemInstance& inst, const SupportEstimate& sup,
                                      std::span<const double> v, double r_hat) {
    SignalEstimate out;
    out.z.assign(inst.n, 0.0);
    for (std::size_t c = 0; c < sup.entry_support.size(); ++c)
        out.z[sup.entry_support[c]] = r_hat * v[c];
    out.support_blocks = sup.block_support;
    return out;
}

}  // namespace detail

/// Full CRAF initialization: marginal support estimate, weighted spectral
/// direction on the restricted columns, zero-padding, and scaling to the
/// norm estimate r_hat.
inline SignalEstimate initialize(const ProblemInstance& inst, int k, const InitParams& p,
                                 InitDiagnostics* diag = nullptr) {
    p.validate();
    const std::vector<double> zeta = block_marginals(inst);
    const SupportEstimate sup = estimate_support(zeta, k, inst.blocks);
    const std::vector<double> sub = detail::gather_columns(inst, sup.entry_support);

    SpectralInfo info;
    const std::vector<double> v =
        spectral_direction(sub, inst.m, static_cast<int>(sup.entry_support.size()), inst.psi, p,
                           &info);

    if (diag) {
        diag->r_hat = info.r_hat;
        diag->lower_count = info.lower_count;
        diag->upper_count = info.upper_count;
        diag->eig_top = info.eig_top;
        diag->eig_second = info.eig_second;
        diag->support_overlap = detail::overlap_with_truth(inst, sup.block_support);
    }
    return detail::embed_and_scale(inst, sup, v, info.r_hat);
}

/// SPARTA baseline initialization: same support step, then the principal
/// eigenvector of the covariance of the ceil(m/6) largest-magnitude samples
/// (magnitude ties keep the lower sample index), scaled by the same r_hat.
inline SignalEstimate sparta_initialize(const ProblemInstance& inst, int k,
                                        InitDiagnostics* diag = nullptr) {
    const std::vector<double> zeta = block_marginals(inst);
    const SupportEstimate sup = estimate_support(zeta, k, inst.blocks);
    const std::vector<double> sub = detail::gather_columns(inst, sup.entry_support);
    const int d = static_cast<int>(sup.entry_support.size());

    const int keep = (inst.m + 5) / 6;
    std::vector<int> order(inst.m);
    for (int i = 0; i < inst.m; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](int i, int j) {
        if (inst.psi[i] != inst.psi[j]) return inst.psi[i] > inst.psi[j];
        return i < j;
    });

    std::vector<double> acc(static_cast<std::size_t>(d) * d, 0.0);
    for (int r = 0; r < keep; ++r) {
        const double* row = sub.data() + static_cast<std::size_t>(order[r]) * d;
        for (int a = 0; a < d; ++a) {
            const double ra = row[a];
            for (int c = a; c < d; ++c) acc[static_cast<std::size_t>(a) * d + c] += ra * row[c];
        }
    }
    SymMatrix M(d);
    for (int a = 0; a < d; ++a)
        for (int c = a; c < d; ++c)
            M.set(a, c, acc[static_cast<std::size_t>(a) * d + c] / static_cast<double>(keep));

    EigenDecomposition full = jacobi_eigen(M);
    std::vector<double> v = std::move(full.vectors.front());
    const double nrm = norm2(v);
    if (nrm > 0.0)
        for (auto& e : v) e /= nrm;
    fix_eigenvector_sign(v);

    const double r_hat = norm_estimate(inst.psi);
    if (diag) {
        diag->r_hat = r_hat;
        diag->lower_count = static_cast<std::size_t>(keep);
        diag->upper_count = 0;
        diag->eig_top = full.values[0];
        diag->eig_second = d > 1 ? full.values[1] : full.values[0];
        diag->support_overlap = detail::overlap_with_truth(inst, sup.block_support);
    }
    return detail::embed_and_scale(inst, sup, v, r_hat);
}

}  // namespace craf
