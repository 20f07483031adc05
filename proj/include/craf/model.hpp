#pragma once

// Measurement model for sparse phase retrieval: psi_i = |<a_i, x>| (+ noise),
// a_i ~ N(0, I_n), with x block-sparse. Instance generation, the amplitude
// least-squares loss, the sign-invariant distance, the block hard-thresholding
// projection, and instance (de)serialization.

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "craf/numerics.hpp"

namespace craf {

static_assert(std::endian::native == std::endian::little,
              "instance files are little-endian; big-endian hosts unsupported");

/// Partition of {0,...,n-1} into num_blocks contiguous blocks of block_len
/// entries each. block_len == 1 recovers plain entrywise sparsity.
struct BlockStructure {
    int block_len = 1;
    int num_blocks = 0;

    int dim() const { return block_len * num_blocks; }
    int block_of(int j) const { return j / block_len; }

    void validate() const {
        if (block_len < 1) throw std::invalid_argument("BlockStructure: block_len < 1");
        if (num_blocks < 1) throw std::invalid_argument("BlockStructure: num_blocks < 1");
    }
};

inline BlockStructure make_blocks(int n, int block_len) {
    if (block_len < 1 || n < 1 || n % block_len != 0)
        throw std::invalid_argument("make_blocks: block_len must divide n");
    return BlockStructure{block_len, n / block_len};
}

struct ProblemInstance {
    int n = 0;
    int m = 0;
    int k = 0;  // number of active blocks in x
    BlockStructure blocks;
    double noise_sigma = 0.0;
    std::uint64_t seed = 0;
    std::vector<double> A;    // m x n, row-major
    std::vector<double> x;    // ground-truth signal, unit 2-norm
    std::vector<double> psi;  // observed magnitudes, >= 0

    std::span<const double> row(int i) const {
        return {A.data() + static_cast<std::size_t>(i) * n, static_cast<std::size_t>(n)};
    }
};

/// sgn with sgn(0) = 0.
inline double sign_or_zero(double v) { return (v > 0.0) - (v < 0.0); }

/// dist(z, x) = min(||z - x||, ||z + x||): the model only identifies x up to
/// global sign.
inline double dist(std::span<const double> z, std::span<const double> x) {
    if (z.size() != x.size()) throw std::invalid_argument("dist: size mismatch");
    double dm = 0.0, dp = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        const double a = z[i] - x[i];
        const double b = z[i] + x[i];
        dm += a * a;
        dp += b * b;
    }
    return std::sqrt(std::min(dm, dp));
}

inline double relative_error(std::span<const double> z, std::span<const double> x) {
    const double nx = norm2(x);
    if (nx == 0.0) throw std::invalid_argument("relative_error: zero truth");
    return dist(z, x) / nx;
}

/// Draw order is fixed and documented so instances are reproducible from the
/// seed alone: (1) support blocks via partial Fisher-Yates over block indices,
/// (2) nonzero entries of x in ascending index order, then normalization,
/// (3) A row-major, (4) noise terms when noise_sigma > 0.
inline ProblemInstance generate_instance(int n, int m, int k, const BlockStructure& blocks,
                                         double noise_sigma, RngStream& rng) {
    blocks.validate();
    if (blocks.dim() != n) throw std::invalid_argument("generate_instance: blocks do not tile n");
    if (k < 1 || k > blocks.num_blocks)
        throw std::invalid_argument("generate_instance: k out of range");
    if (m < 1) throw std::invalid_argument("generate_instance: m < 1");
    if (noise_sigma < 0.0) throw std::invalid_argument("generate_instance: negative noise_sigma");

    ProblemInstance inst;
    inst.n = n;
    inst.m = m;
    inst.k = k;
    inst.blocks = blocks;
    inst.noise_sigma = noise_sigma;
    inst.seed = rng.seed();

    std::vector<int> idx(blocks.num_blocks);
    for (int b = 0; b < blocks.num_blocks; ++b) idx[b] = b;
    for (int b = 0; b < k; ++b) {
        const int j = b + static_cast<int>(rng.uniform_below(blocks.num_blocks - b));
        std::swap(idx[b], idx[j]);
    }
    std::vector<int> support(idx.begin(), idx.begin() + k);
    std::sort(support.begin(), support.end());

    inst.x.assign(n, 0.0);
    for (int b : support) {
        for (int j = b * blocks.block_len; j < (b + 1) * blocks.block_len; ++j)
            inst.x[j] = rng.normal();
    }
    const double nx = norm2(inst.x);
    if (nx == 0.0) throw std::runtime_error("generate_instance: degenerate zero draw");
    for (auto& v : inst.x) v /= nx;

    inst.A = sample_standard_normal(rng, static_cast<std::size_t>(m) * n);

    inst.psi.resize(m);
    for (int i = 0; i < m; ++i) inst.psi[i] = std::abs(dot(inst.row(i), inst.x));
    if (noise_sigma > 0.0) {
        for (int i = 0; i < m; ++i)
            inst.psi[i] = std::max(0.0, inst.psi[i] + noise_sigma * rng.normal());
    }
    return inst;
}

/// Amplitude least-squares loss, (1/2m) sum (psi_i - |a_i^T z|)^2.
inline double loss(const ProblemInstance& inst, std::span<const double> z) {
    if (static_cast<int>(z.size()) != inst.n) throw std::invalid_argument("loss: size mismatch");
    double s = 0.0;
    for (int i = 0; i < inst.m; ++i) {
        const double r = inst.psi[i] - std::abs(dot(inst.row(i), z));
        s += r * r;
    }
    return s / (2.0 * inst.m);
}

struct SignalEstimate {
    std::vector<double> z;
    std::vector<int> support_blocks;  // ascending
};

/// H_k^B: keep the k blocks of largest 2-norm, zero the rest. Norm ties are
/// broken toward the lower block index.
inline SignalEstimate block_hard_threshold(std::span<const double> u, int k,
                                           const BlockStructure& blocks) {
    blocks.validate();
    if (static_cast<int>(u.size()) != blocks.dim())
        throw std::invalid_argument("block_hard_threshold: size mismatch");
    if (k < 0 || k > blocks.num_blocks)
        throw std::invalid_argument("block_hard_threshold: k out of range");

    const int nb = blocks.num_blocks, bl = blocks.block_len;
    std::vector<double> energy(nb, 0.0);
    for (int b = 0; b < nb; ++b) {
        double e = 0.0;
        for (int j = b * bl; j < (b + 1) * bl; ++j) e += u[j] * u[j];
        energy[b] = e;
    }
    std::vector<int> order(nb);
    for (int b = 0; b < nb; ++b) order[b] = b;
    std::sort(order.begin(), order.end(), [&](int i, int j) {
        if (energy[i] != energy[j]) return energy[i] > energy[j];
        return i < j;
    });

    SignalEstimate out;
    out.support_blocks.assign(order.begin(), order.begin() + k);
    std::sort(out.support_blocks.begin(), out.support_blocks.end());
    out.z.assign(u.size(), 0.0);
    for (int b : out.support_blocks) {
        for (int j = b * bl; j < (b + 1) * bl; ++j) out.z[j] = u[j];
    }
    return out;
}

/// Blocks on which x is not identically zero, ascending.
inline std::vector<int> true_support_blocks(const ProblemInstance& inst) {
    std::vector<int> out;
    const int bl = inst.blocks.block_len;
    for (int b = 0; b < inst.blocks.num_blocks; ++b) {
        bool live = false;
        for (int j = b * bl; j < (b + 1) * bl && !live; ++j) live = inst.x[j] != 0.0;
        if (live) out.push_back(b);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Serialization. Little-endian binary layout (all integers uint64, all reals
// float64):
//   n, m, k, B, noise_sigma, seed, A (m*n, row-major), x (n), psi (m)
// ---------------------------------------------------------------------------

namespace detail {

inline void put_u64(std::ofstream& os, std::uint64_t v) {
    os.write(reinterpret_cast<const char*>(&v), 8);
}

inline void put_f64(std::ofstream& os, double v) {
    os.write(reinterpret_cast<const char*>(&v), 8);
}

inline std::uint64_t get_u64(std::ifstream& is) {
    std::uint64_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 8);
    return v;
}

inline double get_f64(std::ifstream& is) {
    double v = 0;
    is.read(reinterpret_cast<char*>(&v), 8);
    return v;
}

}  // namespace detail

inline void save_instance(const ProblemInstance& inst, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("save_instance: cannot open " + path.string());
    detail::put_u64(os, static_cast<std::uint64_t>(inst.n));
    detail::put_u64(os, static_cast<std::uint64_t>(inst.m));
    detail::put_u64(os, static_cast<std::uint64_t>(inst.k));
    detail::put_u64(os, static_cast<std::uint64_t>(inst.blocks.block_len));
    detail::put_f64(os, inst.noise_sigma);
    detail::put_u64(os, inst.seed);
    os.write(reinterpret_cast<const char*>(inst.A.data()),
             static_cast<std::streamsize>(inst.A.size() * 8));
    os.write(reinterpret_cast<const char*>(inst.x.data()),
             static_cast<std::streamsize>(inst.x.size() * 8));
    os.write(reinterpret_cast<const char*>(inst.psi.data()),
             static_cast<std::streamsize>(inst.psi.size() * 8));
    if (!os) throw std::runtime_error("save_instance: write failed");
}

inline ProblemInstance load_instance(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_instance: cannot open " + path.string());
    ProblemInstance inst;
    inst.n = static_cast<int>(detail::get_u64(is));
    inst.m = static_cast<int>(detail::get_u64(is));
    inst.k = static_cast<int>(detail::get_u64(is));
    const int bl = static_cast<int>(detail::get_u64(is));
    inst.noise_sigma = detail::get_f64(is);
    inst.seed = detail::get_u64(is);
    if (!is || inst.n < 1 || inst.m < 1 || bl < 1 || inst.n % bl != 0)
        throw std::runtime_error("load_instance: bad header");
    inst.blocks = make_blocks(inst.n, bl);
    inst.A.resize(static_cast<std::size_t>(inst.m) * inst.n);
    inst.x.resize(inst.n);
    inst.psi.resize(inst.m);
    is.read(reinterpret_cast<char*>(inst.A.data()), static_cast<std::streamsize>(inst.A.size() * 8));
    is.read(reinterpret_cast<char*>(inst.x.data()), static_cast<std::streamsize>(inst.x.size() * 8));
    is.read(reinterpret_cast<char*>(inst.psi.data()),
            static_cast<std::streamsize>(inst.psi.size() * 8));
    if (!is) throw std::runtime_error("load_instance: truncated file");
    is.peek();
    if (!is.eof()) throw std::runtime_error("load_instance: trailing bytes");
    return inst;
}

/// Shortest decimal round-trip formatting for CSV output.
inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    double back = 0.0;
    std::sscanf(buf, "%lf", &back);
    if (back == v) {
        for (int prec = 1; prec < 17; ++prec) {
            char shorter[32];
            std::snprintf(shorter, sizeof shorter, "%.*g", prec, v);
            std::sscanf(shorter, "%lf", &back);
            if (back == v) return shorter;
        }
    }
    return buf;
}

/// Human-readable companion to the binary format: kind,index,value rows for
/// the signal and the measured magnitudes.
inline void export_instance_csv(const ProblemInstance& inst, const std::filesystem::path& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("export_instance_csv: cannot open " + path.string());
    os << "kind,index,value\n";
    for (int j = 0; j < inst.n; ++j) os << "x," << j << ',' << format_double(inst.x[j]) << '\n';
    for (int i = 0; i < inst.m; ++i) os << "psi," << i << ',' << format_double(inst.psi[i]) << '\n';
    if (!os) throw std::runtime_error("export_instance_csv: write failed");
}

}  // namespace craf
