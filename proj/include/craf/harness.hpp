#pragma once

// Monte Carlo experiment harness. Every trial's instance is a pure function
// of (base_seed, grid key, trial index), and both algorithms of a trial see
// the same instance, so curves are paired and results are bit-for-bit
// reproducible at any worker-pool size.

#include <atomic>
#include <bit>
#include <chrono>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "craf/init.hpp"
#include "craf/model.hpp"
#include "craf/refine.hpp"

namespace craf {

enum class ExperimentKind { init_bench, success_curve, noise_curve };
enum class Algorithm { craf, sparta };

inline const char* to_string(ExperimentKind k) {
    switch (k) {
        case ExperimentKind::init_bench: return "init_bench";
        case ExperimentKind::success_curve: return "success_curve";
        case ExperimentKind::noise_curve: return "noise_curve";
    }
    return "?";
}

inline const char* to_string(Algorithm a) {
    return a == Algorithm::craf ? "craf" : "sparta";
}

struct ExperimentConfig {
    ExperimentKind kind = ExperimentKind::success_curve;
    int n = 3000;
    int B = 1;
    int k_true = 30;
    int k_hat = -1;  // -1: use k_true
    std::vector<int> m_grid;        // success_curve
    std::vector<int> k_grid;        // init_bench
    std::vector<double> sigma2_grid;  // noise_curve
    int m_over_k = 30;              // init_bench: m = m_over_k * k
    int m = 1600;                   // noise_curve
    double sigma2 = 0.0;            // noise variance outside noise_curve
    int trials = 100;
    std::uint64_t base_seed = 1;
    std::vector<Algorithm> algorithms = {Algorithm::craf, Algorithm::sparta};
    double success_tol = 1e-5;
    bool keep_raw = false;
    int threads = 1;  // 0: hardware concurrency
    CrafParams craf;
    SpartaParams sparta;

    int resolved_k_hat() const { return k_hat > 0 ? k_hat : k_true; }

    void validate() const {
        if (n < 1 || B < 1 || n % B != 0)
            throw std::invalid_argument("ExperimentConfig: B must divide n");
        const int nb = n / B;
        if (k_true < 1 || k_true > nb) throw std::invalid_argument("ExperimentConfig: k out of range");
        if (resolved_k_hat() < 1 || resolved_k_hat() > nb)
            throw std::invalid_argument("ExperimentConfig: k_hat out of range");
        if (trials < 1) throw std::invalid_argument("ExperimentConfig: trials < 1");
        if (!(success_tol > 0.0)) throw std::invalid_argument("ExperimentConfig: success_tol <= 0");
        if (algorithms.empty()) throw std::invalid_argument("ExperimentConfig: no algorithms");
        if (sigma2 < 0.0) throw std::invalid_argument("ExperimentConfig: negative sigma2");
        switch (kind) {
            case ExperimentKind::init_bench:
                if (k_grid.empty()) throw std::invalid_argument("ExperimentConfig: empty k_grid");
                if (m_over_k < 1) throw std::invalid_argument("ExperimentConfig: m_over_k < 1");
                for (int k : k_grid)
                    if (k < 1 || k > nb) throw std::invalid_argument("ExperimentConfig: k_grid entry out of range");
                break;
            case ExperimentKind::success_curve:
                if (m_grid.empty()) throw std::invalid_argument("ExperimentConfig: empty m_grid");
                for (int mm : m_grid)
                    if (mm < 1) throw std::invalid_argument("ExperimentConfig: m_grid entry < 1");
                break;
            case ExperimentKind::noise_curve:
                if (sigma2_grid.empty())
                    throw std::invalid_argument("ExperimentConfig: empty sigma2_grid");
                for (double s : sigma2_grid)
                    if (s < 0.0) throw std::invalid_argument("ExperimentConfig: negative sigma2_grid entry");
                if (m < 1) throw std::invalid_argument("ExperimentConfig: m < 1");
                break;
        }
        craf.validate();
        sparta.validate();
    }
};

/// Seed for one trial. Mixing the grid key and trial index keeps streams
/// disjoint across the grid while remaining independent of worker order.
inline std::uint64_t trial_seed(std::uint64_t base_seed, std::uint64_t grid_key, int trial) {
    return base_seed ^ mix64(grid_key * kGolden64 + mix64(static_cast<std::uint64_t>(trial) + 1));
}

struct TrialRow {
    Algorithm alg = Algorithm::craf;
    int m = 0;
    int k_true = 0;
    int k_hat = 0;
    double sigma2 = 0.0;
    int trial = 0;
    std::uint64_t seed = 0;
    double rel_error = 0.0;
    bool success = false;
    int iters = 0;
    double ms = 0.0;
    InitDiagnostics diag;
};

struct PointSummary {
    Algorithm alg = Algorithm::craf;
    int m = 0;
    int k_true = 0;
    int k_hat = 0;
    double sigma2 = 0.0;
    int trials = 0;
    double success_rate = 0.0;
    double mean_rel_error = 0.0;
    double mean_iters = 0.0;
    double mean_ms = 0.0;
};

struct ExperimentResult {
    ExperimentConfig config;
    std::vector<PointSummary> summaries;  // grid-major, algorithm-minor
    std::vector<TrialRow> raw;            // populated when config.keep_raw
};

namespace detail {

struct GridPoint {
    int m = 0;
    int k_true = 0;
    int k_hat = 0;
    double sigma2 = 0.0;
    std::uint64_t key = 0;
};

inline std::vector<GridPoint> expand_grid(const ExperimentConfig& cfg) {
    std::vector<GridPoint> pts;
    switch (cfg.kind) {
        case ExperimentKind::init_bench:
            for (int k : cfg.k_grid)
                pts.push_back({cfg.m_over_k * k, k, k, cfg.sigma2, static_cast<std::uint64_t>(k)});
            break;
        case ExperimentKind::success_curve:
            for (int m : cfg.m_grid)
                pts.push_back(
                    {m, cfg.k_true, cfg.resolved_k_hat(), cfg.sigma2, static_cast<std::uint64_t>(m)});
            break;
        case ExperimentKind::noise_curve:
            for (double s : cfg.sigma2_grid)
                pts.push_back(
                    {cfg.m, cfg.k_true, cfg.resolved_k_hat(), s, std::bit_cast<std::uint64_t>(s)});
            break;
    }
    return pts;
}

/// Runs fn(0..count-1) on a bounded pool. Work is pulled from a shared
/// counter; output slots are preallocated by the caller, so the schedule
/// cannot affect results.
inline void parallel_for(std::size_t count, int threads, const std::function<void(std::size_t)>& fn) {
    if (threads <= 0) {
        const unsigned hc = std::thread::hardware_concurrency();
        threads = hc ? static_cast<int>(hc) : 1;
    }
    if (static_cast<std::size_t>(threads) > count) threads = static_cast<int>(count);
    if (threads <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }

    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mu;
    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= count) return;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard lock(error_mu);
                if (!error) error = std::current_exception();
                return;
            }
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
}

}  // namespace detail

inline ExperimentResult run_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    const std::vector<detail::GridPoint> pts = detail::expand_grid(cfg);
    const std::size_t n_alg = cfg.algorithms.size();
    const std::size_t n_jobs = pts.size() * static_cast<std::size_t>(cfg.trials);

    std::vector<TrialRow> rows(n_jobs * n_alg);

    detail::parallel_for(n_jobs, cfg.threads, [&](std::size_t job) {
        const std::size_t pi = job / cfg.trials;
        const int trial = static_cast<int>(job % cfg.trials);
        const detail::GridPoint& pt = pts[pi];

        RngStream rng(trial_seed(cfg.base_seed, pt.key, trial));
        const BlockStructure blocks = make_blocks(cfg.n, cfg.B);
        // grids carry the variance sigma^2; the generator wants the std dev
        const ProblemInstance inst =
            generate_instance(cfg.n, pt.m, pt.k_true, blocks, std::sqrt(pt.sigma2), rng);

        for (std::size_t ai = 0; ai < n_alg; ++ai) {
            TrialRow& row = rows[job * n_alg + ai];
            row.alg = cfg.algorithms[ai];
            row.m = pt.m;
            row.k_true = pt.k_true;
            row.k_hat = pt.k_hat;
            row.sigma2 = pt.sigma2;
            row.trial = trial;
            row.seed = inst.seed;

            const auto t0 = std::chrono::steady_clock::now();
            if (cfg.kind == ExperimentKind::init_bench) {
                SignalEstimate est = row.alg == Algorithm::craf
                                         ? initialize(inst, pt.k_hat, cfg.craf.init, &row.diag)
                                         : sparta_initialize(inst, pt.k_hat, &row.diag);
                row.rel_error = relative_error(est.z, inst.x);
                row.iters = 0;
            } else {
                SolveTrace trace = row.alg == Algorithm::craf
                                       ? craf_solve(inst, pt.k_hat, cfg.craf, &inst.x)
                                       : sparta_solve(inst, pt.k_hat, cfg.sparta, &inst.x);
                row.rel_error = relative_error(trace.final_estimate.z, inst.x);
                row.iters = trace.iterations;
                row.diag = trace.init_diag;
            }
            const auto t1 = std::chrono::steady_clock::now();
            row.ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
            row.success = row.rel_error < cfg.success_tol;
        }
    });

    ExperimentResult result;
    result.config = cfg;
    result.summaries.reserve(pts.size() * n_alg);
    for (std::size_t pi = 0; pi < pts.size(); ++pi) {
        for (std::size_t ai = 0; ai < n_alg; ++ai) {
            PointSummary s;
            s.alg = cfg.algorithms[ai];
            s.m = pts[pi].m;
            s.k_true = pts[pi].k_true;
            s.k_hat = pts[pi].k_hat;
            s.sigma2 = pts[pi].sigma2;
            s.trials = cfg.trials;
            double successes = 0.0, err = 0.0, iters = 0.0, ms = 0.0;
            for (int trial = 0; trial < cfg.trials; ++trial) {
                const TrialRow& row =
                    rows[(pi * cfg.trials + static_cast<std::size_t>(trial)) * n_alg + ai];
                successes += row.success ? 1.0 : 0.0;
                err += row.rel_error;
                iters += row.iters;
                ms += row.ms;
            }
            s.success_rate = successes / cfg.trials;
            s.mean_rel_error = err / cfg.trials;
            s.mean_iters = iters / cfg.trials;
            s.mean_ms = ms / cfg.trials;
            result.summaries.push_back(s);
        }
    }
    if (cfg.keep_raw) result.raw = std::move(rows);
    return result;
}

/// Sweep with a deliberately wrong sparsity level passed to the solvers;
/// instances still carry k_true active blocks and success is judged against
/// the true signal.
inline ExperimentResult misspecified_k_experiment(const ExperimentConfig& cfg) {
    if (cfg.k_hat <= 0) throw std::invalid_argument("misspecified_k_experiment: k_hat not set");
    return run_experiment(cfg);
}

// ---------------------------------------------------------------------------
// CSV output
// ---------------------------------------------------------------------------

inline void write_summary_csv(const ExperimentResult& result, std::ostream& os) {
    os << "experiment,algorithm,n,m,B,k_true,k_hat,sigma2,trials,success_rate,"
          "mean_rel_error,mean_iters,mean_ms\n";
    for (const auto& s : result.summaries) {
        os << to_string(result.config.kind) << ',' << to_string(s.alg) << ',' << result.config.n
           << ',' << s.m << ',' << result.config.B << ',' << s.k_true << ',' << s.k_hat << ','
           << format_double(s.sigma2) << ',' << s.trials << ',' << format_double(s.success_rate)
           << ',' << format_double(s.mean_rel_error) << ',' << format_double(s.mean_iters) << ','
           << format_double(s.mean_ms) << '\n';
    }
}

inline void write_summary_csv(const ExperimentResult& result, const std::filesystem::path& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("write_summary_csv: cannot open " + path.string());
    write_summary_csv(result, os);
    if (!os) throw std::runtime_error("write_summary_csv: write failed");
}

inline void write_raw_csv(const ExperimentResult& result, const std::filesystem::path& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("write_raw_csv: cannot open " + path.string());
    os << "experiment,algorithm,n,m,B,k_true,k_hat,sigma2,trial,seed,rel_error,success,iters,ms,"
          "r_hat,lower_count,upper_count,eig_top,eig_second,support_overlap\n";
    for (const auto& r : result.raw) {
        os << to_string(result.config.kind) << ',' << to_string(r.alg) << ',' << result.config.n
           << ',' << r.m << ',' << result.config.B << ',' << r.k_true << ',' << r.k_hat << ','
           << format_double(r.sigma2) << ',' << r.trial << ',' << r.seed << ','
           << format_double(r.rel_error) << ',' << (r.success ? 1 : 0) << ',' << r.iters << ','
           << format_double(r.ms) << ',' << format_double(r.diag.r_hat) << ',' << r.diag.lower_count
           << ',' << r.diag.upper_count << ',' << format_double(r.diag.eig_top) << ','
           << format_double(r.diag.eig_second) << ',' << r.diag.support_overlap << '\n';
    }
    if (!os) throw std::runtime_error("write_raw_csv: write failed");
}

// ---------------------------------------------------------------------------
// Config files: flat `key = value` lines, `#` comments, unknown keys rejected.
// ---------------------------------------------------------------------------

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline long long parse_int(const std::string& s) {
    std::size_t used = 0;
    long long v;
    try {
        v = std::stoll(s, &used);
    } catch (const std::exception&) {
        throw std::invalid_argument("not an integer: '" + s + "'");
    }
    if (used != s.size()) throw std::invalid_argument("not an integer: '" + s + "'");
    return v;
}

inline double parse_real(const std::string& s) {
    std::size_t used = 0;
    double v;
    try {
        v = std::stod(s, &used);
    } catch (const std::exception&) {
        throw std::invalid_argument("not a number: '" + s + "'");
    }
    if (used != s.size()) throw std::invalid_argument("not a number: '" + s + "'");
    return v;
}

inline std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, sep)) out.push_back(trim(item));
    if (!s.empty() && s.back() == sep) out.push_back("");
    return out;
}

}  // namespace detail

/// Integer grid: either `a,b,c` or an inclusive range `start:step:stop`.
inline std::vector<int> parse_int_grid(const std::string& text) {
    std::vector<int> out;
    if (text.find(':') != std::string::npos) {
        const auto parts = detail::split(text, ':');
        if (parts.size() != 3) throw std::invalid_argument("grid range needs start:step:stop");
        const long long start = detail::parse_int(parts[0]);
        const long long step = detail::parse_int(parts[1]);
        const long long stop = detail::parse_int(parts[2]);
        if (step <= 0) throw std::invalid_argument("grid step must be positive");
        for (long long v = start; v <= stop; v += step) out.push_back(static_cast<int>(v));
    } else {
        for (const auto& p : detail::split(text, ','))
            out.push_back(static_cast<int>(detail::parse_int(p)));
    }
    if (out.empty()) throw std::invalid_argument("empty grid: '" + text + "'");
    return out;
}

/// Real grid: `a,b,c` or `start:step:stop` (stop included up to rounding).
inline std::vector<double> parse_real_grid(const std::string& text) {
    std::vector<double> out;
    if (text.find(':') != std::string::npos) {
        const auto parts = detail::split(text, ':');
        if (parts.size() != 3) throw std::invalid_argument("grid range needs start:step:stop");
        const double start = detail::parse_real(parts[0]);
        const double step = detail::parse_real(parts[1]);
        const double stop = detail::parse_real(parts[2]);
        if (!(step > 0.0)) throw std::invalid_argument("grid step must be positive");
        const double slack = 1e-9 * std::max(1.0, std::abs(stop));
        for (int i = 0;; ++i) {
            const double v = start + i * step;
            if (v > stop + slack) break;
            out.push_back(v);
        }
    } else {
        for (const auto& p : detail::split(text, ','))
            out.push_back(detail::parse_real(p));
    }
    if (out.empty()) throw std::invalid_argument("empty grid: '" + text + "'");
    return out;
}

/// Applies one key/value pair to the config. Throws on unknown keys or
/// malformed values.
inline void apply_config_entry(ExperimentConfig& cfg, const std::string& key,
                               const std::string& value) {
    auto as_int = [&] { return static_cast<int>(detail::parse_int(value)); };
    auto as_real = [&] { return detail::parse_real(value); };

    if (key == "experiment") {
        if (value == "init_bench") cfg.kind = ExperimentKind::init_bench;
        else if (value == "success_curve") cfg.kind = ExperimentKind::success_curve;
        else if (value == "noise_curve") cfg.kind = ExperimentKind::noise_curve;
        else throw std::invalid_argument("unknown experiment '" + value + "'");
    } else if (key == "n") cfg.n = as_int();
    else if (key == "B") cfg.B = as_int();
    else if (key == "k") cfg.k_true = as_int();
    else if (key == "k_hat") cfg.k_hat = as_int();
    else if (key == "m") cfg.m = as_int();
    else if (key == "m_grid") cfg.m_grid = parse_int_grid(value);
    else if (key == "k_grid") cfg.k_grid = parse_int_grid(value);
    else if (key == "sigma2_grid") cfg.sigma2_grid = parse_real_grid(value);
    else if (key == "m_over_k") cfg.m_over_k = as_int();
    else if (key == "sigma2") cfg.sigma2 = as_real();
    else if (key == "trials") cfg.trials = as_int();
    else if (key == "base_seed") cfg.base_seed = static_cast<std::uint64_t>(detail::parse_int(value));
    else if (key == "threads") cfg.threads = as_int();
    else if (key == "success_tol") cfg.success_tol = as_real();
    else if (key == "keep_raw") {
        if (value == "true" || value == "1") cfg.keep_raw = true;
        else if (value == "false" || value == "0") cfg.keep_raw = false;
        else throw std::invalid_argument("keep_raw expects true/false");
    } else if (key == "algorithms") {
        cfg.algorithms.clear();
        for (const auto& a : detail::split(value, ',')) {
            if (a == "craf") cfg.algorithms.push_back(Algorithm::craf);
            else if (a == "sparta") cfg.algorithms.push_back(Algorithm::sparta);
            else throw std::invalid_argument("unknown algorithm '" + a + "'");
        }
        if (cfg.algorithms.empty()) throw std::invalid_argument("algorithms list empty");
    } else if (key == "mu") {
        cfg.craf.mu = as_real();
        cfg.sparta.mu = cfg.craf.mu;
    } else if (key == "T") {
        cfg.craf.max_iters = as_int();
        cfg.sparta.max_iters = cfg.craf.max_iters;
    } else if (key == "early_stop_tol") {
        cfg.craf.early_stop_tol = as_real();
        cfg.sparta.early_stop_tol = cfg.craf.early_stop_tol;
    } else if (key == "beta") cfg.craf.beta = as_real();
    else if (key == "tau_w") cfg.craf.tau_w = as_real();
    else if (key == "tau_g") cfg.sparta.tau_g = as_real();
    else if (key == "lambda_minus") {
        cfg.craf.init.lambda_minus = as_real();
        cfg.sparta.init.lambda_minus = cfg.craf.init.lambda_minus;
    } else if (key == "lambda_plus") {
        cfg.craf.init.lambda_plus = as_real();
        cfg.sparta.init.lambda_plus = cfg.craf.init.lambda_plus;
    } else if (key == "tau1") {
        cfg.craf.init.tau1 = as_real();
        cfg.sparta.init.tau1 = cfg.craf.init.tau1;
    } else if (key == "tau2") {
        cfg.craf.init.tau2 = as_real();
        cfg.sparta.init.tau2 = cfg.craf.init.tau2;
    } else {
        throw std::invalid_argument("unknown config key '" + key + "'");
    }
}

inline ExperimentConfig load_config(std::istream& is, ExperimentConfig base = {}) {
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const std::string body = detail::trim(line);
        if (body.empty()) continue;
        const auto eq = body.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config line " + std::to_string(lineno) +
                                        ": expected key = value");
        const std::string key = detail::trim(body.substr(0, eq));
        const std::string value = detail::trim(body.substr(eq + 1));
        if (key.empty() || value.empty())
            throw std::invalid_argument("config line " + std::to_string(lineno) +
                                        ": empty key or value");
        try {
            apply_config_entry(base, key, value);
        } catch (const std::invalid_argument& e) {
            throw std::invalid_argument("config line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return base;
}

inline ExperimentConfig load_config_file(const std::filesystem::path& path,
                                         ExperimentConfig base = {}) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("load_config_file: cannot open " + path.string());
    return load_config(is, std::move(base));
}

}  // namespace craf
