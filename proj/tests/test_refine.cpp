#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <vector>

#include "craf/refine.hpp"

namespace {

craf::ProblemInstance random_instance(int n, int m, int k, int block_len, std::uint64_t seed,
                                      double noise = 0.0) {
    craf::RngStream rng(seed);
    return craf::generate_instance(n, m, k, craf::make_blocks(n, block_len), noise, rng);
}

// central finite differences of the amplitude loss
std::vector<double> fd_gradient(const craf::ProblemInstance& inst, const std::vector<double>& z,
                                double h) {
    std::vector<double> g(inst.n);
    std::vector<double> zp(z), zm(z);
    for (int j = 0; j < inst.n; ++j) {
        zp[j] = z[j] + h;
        zm[j] = z[j] - h;
        g[j] = (craf::loss(inst, zp) - craf::loss(inst, zm)) / (2.0 * h);
        zp[j] = z[j];
        zm[j] = z[j];
    }
    return g;
}

// a probe point where the loss is differentiable: all |a_i^T z| well away
// from the kink at zero
std::vector<double> smooth_probe(const craf::ProblemInstance& inst, std::uint64_t seed) {
    craf::RngStream rng(seed);
    for (int attempt = 0; attempt < 100; ++attempt) {
        auto z = craf::sample_standard_normal(rng, inst.n);
        double lo = 1e300;
        for (int i = 0; i < inst.m; ++i) lo = std::min(lo, std::abs(craf::dot(inst.row(i), z)));
        if (lo > 1e-3) return z;
    }
    throw std::runtime_error("no smooth probe found");
}

double rel_vec_error(const std::vector<double>& a, const std::vector<double>& b) {
    std::vector<double> d(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
    return craf::norm2(d) / craf::norm2(b);
}

}  // namespace

TEST_CASE("amplitude gradient matches finite differences", "[refine]") {
    const auto inst = random_instance(30, 90, 4, 1, 301);
    for (std::uint64_t s = 0; s < 5; ++s) {
        const auto z = smooth_probe(inst, 400 + s);
        const auto g = craf::amplitude_gradient(inst, z);
        const auto fd = fd_gradient(inst, z, 1e-6);
        REQUIRE(rel_vec_error(fd, g) < 1e-6);
    }
}

TEST_CASE("reweighted gradient matches finite differences of the weighted loss", "[refine]") {
    // with weights frozen at the probe point, the reweighted gradient is the
    // gradient of sum w_i (psi_i - |a_i^T z|)^2 / 2m; verify against the
    // unweighted FD via the chain: compare coefficient-level assembly instead
    const auto inst = random_instance(20, 60, 3, 1, 302);
    const auto z = smooth_probe(inst, 500);
    int floored = -1;
    const auto g = craf::reweighted_gradient(inst, z, 0.6, 0.1, &floored);
    REQUIRE(floored >= 0);
    REQUIRE(floored <= inst.m);

    // direct test-side assembly
    std::vector<double> want(inst.n, 0.0);
    int want_floored = 0;
    for (int i = 0; i < inst.m; ++i) {
        const double p = craf::dot(inst.row(i), z);
        const double den = std::abs(p) + 0.6 * inst.psi[i];
        double w = den == 0.0 ? 1.0 : std::abs(p) / den;
        if (den != 0.0 && w <= 0.1) {
            w = 0.1;
            ++want_floored;
        }
        const double c = w * (p - inst.psi[i] * craf::sign_or_zero(p));
        for (int j = 0; j < inst.n; ++j) want[j] += c * inst.row(i)[j] / inst.m;
    }
    REQUIRE(floored == want_floored);
    for (int j = 0; j < inst.n; ++j) REQUIRE(g[j] == Catch::Approx(want[j]).margin(1e-12));
}

TEST_CASE("weights stay within [tau_w, 1]", "[refine]") {
    // beta -> 0 makes every weight 1, so the reweighted gradient collapses to
    // the amplitude gradient bitwise
    const auto inst = random_instance(15, 45, 3, 1, 303);
    const auto z = smooth_probe(inst, 600);
    const auto plain = craf::amplitude_gradient(inst, z);
    const auto tiny_beta = craf::reweighted_gradient(inst, z, 1e-300, 0.1);
    REQUIRE(plain == tiny_beta);

    // beta huge floors every weight with psi > 0
    int floored = 0;
    craf::reweighted_gradient(inst, z, 1e12, 0.1, &floored);
    int positive_psi = 0;
    for (double p : inst.psi) positive_psi += p > 0.0;
    REQUIRE(floored == positive_psi);
}

TEST_CASE("per-sample beta overload honors individual parameters", "[refine]") {
    const auto inst = random_instance(10, 20, 2, 1, 304);
    const auto z = smooth_probe(inst, 700);
    std::vector<double> beta(inst.m, 0.6);
    beta[3] = 1e-300;  // this sample gets weight 1
    const auto g_mixed = craf::reweighted_gradient(inst, z, beta, 0.1);
    const auto g_uniform = craf::reweighted_gradient(inst, z, 0.6, 0.1);
    REQUIRE(g_mixed != g_uniform);
    REQUIRE_THROWS_AS(craf::reweighted_gradient(inst, z, std::vector<double>(3, 0.5), 0.1),
                      std::invalid_argument);
    REQUIRE_THROWS_AS(craf::reweighted_gradient(inst, z, 0.6, 0.0), std::invalid_argument);
    REQUIRE_THROWS_AS(craf::reweighted_gradient(inst, z, 0.6, 1.5), std::invalid_argument);
}

TEST_CASE("zero-psi zero-product samples get weight one, not a floor hit", "[refine]") {
    craf::ProblemInstance inst;
    inst.n = 2;
    inst.m = 2;
    inst.k = 1;
    inst.blocks = craf::make_blocks(2, 1);
    inst.A = {1.0, 0.0, 0.0, 1.0};
    inst.x = {0.0, 1.0};
    inst.psi = {0.0, 1.0};
    const std::vector<double> z{0.0, 2.0};  // row 0: p = 0, psi = 0
    int floored = -1;
    const auto g = craf::reweighted_gradient(inst, z, 0.6, 0.1, &floored);
    REQUIRE(floored == 0);
    // row 1: w = 2/(2+0.6), c = w*(2-1); g = c/m * e2
    const double w = 2.0 / 2.6;
    REQUIRE(g[0] == 0.0);
    REQUIRE(g[1] == Catch::Approx(w * 1.0 / 2.0).margin(1e-15));
}

TEST_CASE("truncated gradient drops small-ratio samples and matches hand assembly", "[refine]") {
    const auto inst = random_instance(20, 60, 3, 1, 305);
    const auto z = smooth_probe(inst, 800);
    int excluded = -1;
    const auto g = craf::truncated_gradient(inst, z, 0.7, &excluded);

    std::vector<double> want(inst.n, 0.0);
    int want_excluded = 0;
    for (int i = 0; i < inst.m; ++i) {
        const double p = craf::dot(inst.row(i), z);
        if (std::abs(p) >= 0.7 * inst.psi[i]) {
            const double c = p - inst.psi[i] * craf::sign_or_zero(p);
            for (int j = 0; j < inst.n; ++j) want[j] += c * inst.row(i)[j] / inst.m;
        } else {
            ++want_excluded;
        }
    }
    REQUIRE(excluded == want_excluded);
    REQUIRE(excluded > 0);  // a random probe always trips some truncation
    for (int j = 0; j < inst.n; ++j) REQUIRE(g[j] == Catch::Approx(want[j]).margin(1e-12));

    // tau_g = 0 includes everything: plain M-IHT, equal to the amplitude
    // gradient bitwise
    const auto all = craf::truncated_gradient(inst, z, 0.0);
    REQUIRE(all == craf::amplitude_gradient(inst, z));
}

TEST_CASE("psi = 0 samples always pass the truncation test", "[refine]") {
    craf::ProblemInstance inst;
    inst.n = 1;
    inst.m = 2;
    inst.k = 1;
    inst.blocks = craf::make_blocks(1, 1);
    inst.A = {1.0, 1.0};
    inst.x = {1.0};
    inst.psi = {0.0, 1.0};  // row 0 pretends a zero measurement
    const std::vector<double> z{0.5};
    int excluded = -1;
    const auto g = craf::truncated_gradient(inst, z, 0.7, &excluded);
    // row 0: |0.5| >= 0 -> included, c = 0.5; row 1: 0.5 < 0.7 -> excluded
    REQUIRE(excluded == 1);
    REQUIRE(g[0] == Catch::Approx(0.25).margin(1e-15));
}

TEST_CASE("truth is a bitwise fixed point of both solvers", "[refine]") {
    const auto inst = random_instance(60, 240, 5, 1, 306);
    craf::CrafParams cp;
    cp.max_iters = 10;
    cp.early_stop_tol = 0.0;  // force all 10 steps
    const auto craf_trace = craf::craf_solve(inst, 5, cp, &inst.x, &inst.x);
    REQUIRE(craf_trace.iterations == 10);
    REQUIRE(craf_trace.records.size() == 11);
    REQUIRE(craf_trace.final_estimate.z == inst.x);
    for (const auto& r : craf_trace.records) {
        REQUIRE(r.rel_error == 0.0);
        REQUIRE(r.loss == 0.0);
    }

    // negated truth is the same phase-retrieval solution
    std::vector<double> neg(inst.x);
    for (auto& v : neg) v = -v;
    craf::SpartaParams sp;
    sp.max_iters = 10;
    sp.early_stop_tol = 0.0;
    const auto sparta_trace = craf::sparta_solve(inst, 5, sp, &inst.x, &neg);
    REQUIRE(sparta_trace.final_estimate.z == neg);
    for (const auto& r : sparta_trace.records) REQUIRE(r.rel_error == 0.0);

    // with early stopping enabled the fixed point is detected immediately
    cp.early_stop_tol = 1e-14;
    const auto quick = craf::craf_solve(inst, 5, cp, &inst.x, &inst.x);
    REQUIRE(quick.iterations == 1);
    REQUIRE(quick.final_estimate.z == inst.x);
}

TEST_CASE("solvers converge from their own initialization", "[refine]") {
    const auto inst = random_instance(100, 700, 5, 1, 307);
    craf::CrafParams cp;
    const auto ct = craf::craf_solve(inst, 5, cp, &inst.x);
    REQUIRE(ct.own_init);
    REQUIRE(ct.init_diag.support_overlap >= 3);
    REQUIRE(ct.records.back().rel_error < 1e-7);
    REQUIRE(ct.iterations < cp.max_iters);
    REQUIRE(ct.records.front().rel_error > ct.records.back().rel_error);
    // loss decreases overall
    REQUIRE(ct.records.back().loss < ct.records.front().loss);
    // final support matches the truth
    REQUIRE(ct.final_estimate.support_blocks == craf::true_support_blocks(inst));

    craf::SpartaParams sp;
    const auto st = craf::sparta_solve(inst, 5, sp, &inst.x);
    REQUIRE(st.records.back().rel_error < 1e-7);
}

TEST_CASE("iterates scale exactly with the measurements", "[refine]") {
    // scaling psi by a power of two scales every float operation exactly, so
    // the whole trajectory must scale bitwise
    const auto inst = random_instance(40, 200, 4, 2, 308);
    craf::ProblemInstance scaled = inst;
    for (auto& p : scaled.psi) p *= 4.0;
    for (auto& v : scaled.x) v *= 4.0;

    craf::CrafParams cp;
    cp.max_iters = 25;
    cp.early_stop_tol = 0.0;
    const auto base = craf::craf_solve(inst, 4, cp, &inst.x);
    const auto big = craf::craf_solve(scaled, 4, cp, &scaled.x);
    REQUIRE(base.final_estimate.z.size() == big.final_estimate.z.size());
    for (std::size_t j = 0; j < base.final_estimate.z.size(); ++j)
        REQUIRE(4.0 * base.final_estimate.z[j] == big.final_estimate.z[j]);

    craf::SpartaParams sp;
    sp.max_iters = 25;
    sp.early_stop_tol = 0.0;
    const auto sbase = craf::sparta_solve(inst, 4, sp, &inst.x);
    const auto sbig = craf::sparta_solve(scaled, 4, sp, &scaled.x);
    for (std::size_t j = 0; j < sbase.final_estimate.z.size(); ++j)
        REQUIRE(4.0 * sbase.final_estimate.z[j] == sbig.final_estimate.z[j]);
}

TEST_CASE("early stopping freezes the converged iterate", "[refine]") {
    const auto inst = random_instance(80, 560, 4, 1, 309);
    craf::CrafParams with_stop;
    const auto stopped = craf::craf_solve(inst, 4, with_stop, &inst.x);
    REQUIRE(stopped.iterations < with_stop.max_iters);

    craf::CrafParams no_stop;
    no_stop.early_stop_tol = 0.0;
    const auto full = craf::craf_solve(inst, 4, no_stop, &inst.x);
    REQUIRE(full.iterations == no_stop.max_iters);
    // past convergence the iterate can only jitter at machine precision, so
    // running the full budget lands on the same solution
    REQUIRE(craf::dist(full.final_estimate.z, stopped.final_estimate.z) < 1e-12);
    REQUIRE(stopped.records.size() < full.records.size());
}

TEST_CASE("zero max_iters returns the initialization", "[refine]") {
    const auto inst = random_instance(30, 150, 3, 1, 310);
    craf::CrafParams cp;
    cp.max_iters = 0;
    const std::vector<double> z0 = {inst.x.begin(), inst.x.end()};
    const auto trace = craf::craf_solve(inst, 3, cp, &inst.x, &z0);
    REQUIRE(trace.iterations == 0);
    REQUIRE(trace.records.size() == 1);
    REQUIRE(trace.final_estimate.z == z0);
    REQUIRE(trace.final_estimate.support_blocks == craf::true_support_blocks(inst));
    REQUIRE_FALSE(trace.own_init);
    REQUIRE(trace.records[0].loss == craf::loss(inst, z0));
}

TEST_CASE("solver trace counts floored weights and truncated samples", "[refine]") {
    const auto inst = random_instance(50, 300, 4, 1, 311);
    craf::RngStream rng(312);
    auto z0 = craf::sample_standard_normal(rng, 50);

    craf::CrafParams cp;
    cp.max_iters = 3;
    cp.early_stop_tol = 0.0;
    const auto ct = craf::craf_solve(inst, 4, cp, nullptr, &z0);
    int floored_at_z0 = -1;
    craf::reweighted_gradient(inst, z0, cp.beta, cp.tau_w, &floored_at_z0);
    REQUIRE(ct.records[0].floored_weight_count == floored_at_z0);
    // no truth supplied: rel_error stays unset
    for (const auto& r : ct.records) REQUIRE(std::isnan(r.rel_error));

    craf::SpartaParams sp;
    sp.max_iters = 3;
    sp.early_stop_tol = 0.0;
    const auto st = craf::sparta_solve(inst, 4, sp, nullptr, &z0);
    int excluded_at_z0 = -1;
    craf::truncated_gradient(inst, z0, sp.tau_g, &excluded_at_z0);
    REQUIRE(st.records[0].floored_weight_count == excluded_at_z0);
}

TEST_CASE("solver parameter validation", "[refine]") {
    const auto inst = random_instance(10, 30, 2, 1, 313);
    craf::CrafParams cp;
    cp.mu = 0.0;
    REQUIRE_THROWS_AS(craf::craf_solve(inst, 2, cp), std::invalid_argument);
    cp = {};
    cp.tau_w = 1.5;
    REQUIRE_THROWS_AS(craf::craf_solve(inst, 2, cp), std::invalid_argument);
    cp = {};
    REQUIRE_THROWS_AS(craf::craf_solve(inst, 0, cp), std::invalid_argument);
    REQUIRE_THROWS_AS(craf::craf_solve(inst, 11, cp), std::invalid_argument);
    const std::vector<double> short_z0(5, 0.0);
    REQUIRE_THROWS_AS(craf::craf_solve(inst, 2, cp, nullptr, &short_z0), std::invalid_argument);

    craf::SpartaParams sp;
    sp.tau_g = -0.1;
    REQUIRE_THROWS_AS(craf::sparta_solve(inst, 2, sp), std::invalid_argument);
}

TEST_CASE("trace CSV round trip", "[refine][io]") {
    const auto inst = random_instance(30, 180, 3, 1, 314);
    craf::CrafParams cp;
    cp.max_iters = 5;
    cp.early_stop_tol = 0.0;
    const auto trace = craf::craf_solve(inst, 3, cp, &inst.x);
    const auto path = std::filesystem::temp_directory_path() / "craf_trace.csv";
    craf::write_trace_csv(trace, path);

    std::ifstream is(path);
    std::string line;
    std::getline(is, line);
    REQUIRE(line == "iter,rel_error,loss,floored_weight_count");
    int rows = 0;
    while (std::getline(is, line)) ++rows;
    REQUIRE(rows == static_cast<int>(trace.records.size()));
    std::filesystem::remove(path);

    // without truth the rel_error column is empty
    const auto untraced = craf::craf_solve(inst, 3, cp);
    craf::write_trace_csv(untraced, path);
    std::ifstream is2(path);
    std::getline(is2, line);
    std::getline(is2, line);
    REQUIRE(line.substr(0, 3) == "0,,");
    std::filesystem::remove(path);
}
