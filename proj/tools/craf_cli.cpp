// Command line front end: single solves, the three experiment sweeps, and
// the built-in self checks. Experiment subcommands read an optional config
// file first; explicit flags override individual keys.

#include <cstdio>
#include <iostream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "craf/harness.hpp"
#include "craf/verify.hpp"

namespace {

// Options funneled through craf::apply_config_entry so flags and config
// files share one parser and one set of error messages.
struct ExperimentOptions {
    std::string config;
    std::string out = "-";
    std::string raw;
    std::map<std::string, std::string> values;
    std::vector<std::pair<std::string, CLI::Option*>> tracked;

    CLI::Option* add(CLI::App& cmd, const std::string& flag, const std::string& key,
                     const std::string& help) {
        auto* opt = cmd.add_option(flag, values[key], help);
        tracked.emplace_back(key, opt);
        return opt;
    }
};

void add_common_experiment_options(CLI::App& cmd, ExperimentOptions& o) {
    cmd.add_option("--config", o.config, "config file (key = value lines)")
        ->check(CLI::ExistingFile);
    cmd.add_option("--out", o.out, "summary CSV path ('-' for stdout)");
    cmd.add_option("--raw", o.raw, "also write per-trial rows to this CSV");

    o.add(cmd, "--n", "n", "signal dimension (default 3000)");
    o.add(cmd, "--B,--block-len", "B", "block length B (default 1)");
    o.add(cmd, "--k", "k", "true block sparsity (default 30)");
    o.add(cmd, "--k-hat", "k_hat", "sparsity passed to the solvers (default: true k)");
    o.add(cmd, "--trials", "trials", "Monte Carlo trials per grid point (default 100)");
    o.add(cmd, "--base-seed", "base_seed", "base seed for the trial streams (default 1)");
    o.add(cmd, "--threads", "threads", "worker threads, 0 = all cores (default 1)");
    o.add(cmd, "--algorithms", "algorithms", "comma list from {craf,sparta} (default both)");
    o.add(cmd, "--success-tol", "success_tol", "relative error counted as success (default 1e-5)");
    o.add(cmd, "--sigma2", "sigma2", "noise variance outside noise sweeps (default 0)");
    o.add(cmd, "--mu", "mu", "step size for both solvers (default 1)");
    o.add(cmd, "--T", "T", "max iterations for both solvers (default 1000)");
    o.add(cmd, "--early-stop-tol", "early_stop_tol",
          "iterate-change stop, 0 disables (default 1e-14)");
    o.add(cmd, "--beta", "beta", "CRAF weight parameter beta (default 0.6)");
    o.add(cmd, "--tau-w", "tau_w", "CRAF weight floor tau_w (default 0.1)");
    o.add(cmd, "--tau-g", "tau_g", "SPARTA truncation threshold tau_g (default 0.7)");
    o.add(cmd, "--lambda-minus", "lambda_minus", "init weight on small samples (default -3)");
    o.add(cmd, "--lambda-plus", "lambda_plus", "init weight on large samples (default 1)");
    o.add(cmd, "--tau1", "tau1", "init lower quantile threshold (default 0.5)");
    o.add(cmd, "--tau2", "tau2", "init upper quantile threshold (default 0.5)");
}

craf::ExperimentConfig build_config(const ExperimentOptions& o, craf::ExperimentKind kind) {
    craf::ExperimentConfig cfg;
    cfg.kind = kind;
    if (!o.config.empty()) {
        cfg = craf::load_config_file(o.config, cfg);
        if (cfg.kind != kind)
            throw std::invalid_argument(std::string("config file selects experiment '") +
                                        craf::to_string(cfg.kind) + "' but the subcommand is '" +
                                        craf::to_string(kind) + "'");
    }
    for (const auto& [key, opt] : o.tracked)
        if (opt->count() > 0) craf::apply_config_entry(cfg, key, o.values.at(key));
    if (!o.raw.empty()) cfg.keep_raw = true;
    return cfg;
}

int run_experiment_command(const ExperimentOptions& o, craf::ExperimentKind kind) {
    const craf::ExperimentConfig cfg = build_config(o, kind);
    const craf::ExperimentResult result = craf::run_experiment(cfg);
    if (o.out == "-") {
        craf::write_summary_csv(result, std::cout);
    } else {
        craf::write_summary_csv(result, o.out);
        std::fprintf(stderr, "wrote %zu summary rows to %s\n", result.summaries.size(),
                     o.out.c_str());
    }
    if (!o.raw.empty()) {
        craf::write_raw_csv(result, o.raw);
        std::fprintf(stderr, "wrote %zu trial rows to %s\n", result.raw.size(), o.raw.c_str());
    }
    return 0;
}

struct SolveOptions {
    int n = 3000, m = 1600, k = 30, block_len = 1;
    double sigma2 = 0.0;
    std::uint64_t seed = 1;
    std::string load, algorithm = "craf";
    int k_hat = -1;
    craf::CrafParams craf_params;
    craf::SpartaParams sparta_params;
    double success_tol = 1e-5;
    std::string out, save_instance, export_csv;
    bool quiet = false;
};

int run_solve(const SolveOptions& o) {
    craf::ProblemInstance inst = [&] {
        if (!o.load.empty()) return craf::load_instance(o.load);
        craf::RngStream rng(o.seed);
        return craf::generate_instance(o.n, o.m, o.k, craf::make_blocks(o.n, o.block_len),
                                       std::sqrt(o.sigma2), rng);
    }();
    if (!o.save_instance.empty()) craf::save_instance(inst, o.save_instance);
    if (!o.export_csv.empty()) craf::export_instance_csv(inst, o.export_csv);

    const int k_hat = o.k_hat > 0 ? o.k_hat : inst.k;
    craf::SolveTrace trace;
    if (o.algorithm == "craf") {
        trace = craf::craf_solve(inst, k_hat, o.craf_params, &inst.x);
    } else if (o.algorithm == "sparta") {
        trace = craf::sparta_solve(inst, k_hat, o.sparta_params, &inst.x);
    } else {
        throw std::invalid_argument("unknown algorithm '" + o.algorithm + "'");
    }
    if (!o.out.empty()) craf::write_trace_csv(trace, o.out);

    const double rel = craf::relative_error(trace.final_estimate.z, inst.x);
    const bool success = rel < o.success_tol;
    if (!o.quiet) {
        const auto& d = trace.init_diag;
        std::printf("algorithm  %s\n", o.algorithm.c_str());
        std::printf("instance   n=%d m=%d B=%d k=%d sigma=%s seed=%llu\n", inst.n, inst.m,
                    inst.blocks.block_len, inst.k, craf::format_double(inst.noise_sigma).c_str(),
                    static_cast<unsigned long long>(inst.seed));
        if (trace.own_init)
            std::printf("init       r_hat=%.6g lower=%zu upper=%zu eig=%.4g/%.4g overlap=%d/%zu\n",
                        d.r_hat, d.lower_count, d.upper_count, d.eig_top, d.eig_second,
                        d.support_overlap, craf::true_support_blocks(inst).size());
        std::printf("result     iters=%d rel_error=%.6e loss=%.6e success=%s\n", trace.iterations,
                    rel, trace.records.back().loss, success ? "yes" : "no");
    }
    return success ? 0 : 2;
}

struct VerifyOptions {
    std::uint64_t seed = 7;
    std::string check;  // empty: the whole battery
    double tau = 0.5;
    int nb = 6, k = 3;
};

int run_verify(const VerifyOptions& o) {
    std::vector<craf::verify::Check> checks;
    if (o.check.empty()) {
        checks = craf::verify::run_all(o.seed);
    } else if (o.check == "lemma1") {
        checks.push_back(craf::verify::lemma1_mc(o.seed, 1000000, {o.tau}, 0.5, 1.42));
    } else if (o.check == "separation") {
        checks.push_back(craf::verify::marginal_separation(o.seed, 40, 2000, 10, 5.0));
    } else if (o.check == "gradient") {
        checks.push_back(craf::verify::gradient_fd(o.seed, 40, 120, 5, 1e-4));
    } else if (o.check == "hkb") {
        checks.push_back(craf::verify::hard_threshold_opt(o.seed, 60, 8, 4, 3, o.nb, o.k));
    } else {
        throw std::invalid_argument("unknown check '" + o.check +
                                    "' (lemma1|separation|gradient|hkb)");
    }
    bool all = true;
    for (const auto& c : checks) {
        all = all && c.pass;
        std::printf("[%s] %-32s %s (%.2f s)\n", c.pass ? "PASS" : "FAIL", c.name.c_str(),
                    c.detail.c_str(), c.seconds);
    }
    return all ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"sparse phase retrieval: CRAF solver, SPARTA baseline, experiment harness"};
    app.require_subcommand(1);

    // solve
    SolveOptions so;
    auto* solve = app.add_subcommand("solve", "recover one signal and report the outcome");
    auto* gen_n = solve->add_option("--n", so.n, "signal dimension")->capture_default_str();
    solve->add_option("--m", so.m, "number of measurements")->capture_default_str();
    solve->add_option("--k", so.k, "true block sparsity")->capture_default_str();
    solve->add_option("--B,--block-len", so.block_len, "block length B")->capture_default_str();
    solve->add_option("--sigma2", so.sigma2, "noise variance")->capture_default_str();
    solve->add_option("--seed", so.seed, "instance seed")->capture_default_str();
    solve->add_option("--load", so.load, "load a saved binary instance instead of generating")
        ->check(CLI::ExistingFile)
        ->excludes(gen_n);
    solve->add_option("--alg,--algorithm", so.algorithm, "craf or sparta")->capture_default_str();
    solve->add_option("--k-hat", so.k_hat, "sparsity passed to the solver (default: true k)");
    solve->add_option("--mu", so.craf_params.mu, "step size")->capture_default_str();
    solve->add_option("--T", so.craf_params.max_iters, "max iterations")->capture_default_str();
    solve->add_option("--early-stop-tol", so.craf_params.early_stop_tol,
                      "iterate-change stop (0 disables)")
        ->capture_default_str();
    solve->add_option("--beta", so.craf_params.beta, "CRAF beta")->capture_default_str();
    solve->add_option("--tau-w", so.craf_params.tau_w, "CRAF weight floor")->capture_default_str();
    solve->add_option("--tau-g", so.sparta_params.tau_g, "SPARTA truncation threshold")
        ->capture_default_str();
    solve->add_option("--lambda-minus", so.craf_params.init.lambda_minus, "init lower weight")
        ->capture_default_str();
    solve->add_option("--lambda-plus", so.craf_params.init.lambda_plus, "init upper weight")
        ->capture_default_str();
    solve->add_option("--tau1", so.craf_params.init.tau1, "init lower threshold")
        ->capture_default_str();
    solve->add_option("--tau2", so.craf_params.init.tau2, "init upper threshold")
        ->capture_default_str();
    solve->add_option("--success-tol", so.success_tol, "relative error counted as success")
        ->capture_default_str();
    solve->add_option("--out", so.out, "write the per-iteration trace CSV here");
    solve->add_option("--save-instance", so.save_instance, "save the instance (binary)");
    solve->add_option("--export-csv", so.export_csv, "export the instance as CSV");
    solve->add_flag("--quiet", so.quiet, "suppress the report (exit code only)");

    // experiments
    ExperimentOptions init_o, success_o, noise_o;
    auto* init_bench =
        app.add_subcommand("init-bench", "initialization accuracy sweep over sparsity k");
    add_common_experiment_options(*init_bench, init_o);
    init_o.add(*init_bench, "--k-grid", "k_grid", "sparsity grid, 'a,b,c' or start:step:stop");
    init_o.add(*init_bench, "--m-over-k", "m_over_k", "measurements per sparsity unit");

    auto* success_curve =
        app.add_subcommand("success-curve", "exact recovery rate sweep over sample count m");
    add_common_experiment_options(*success_curve, success_o);
    success_o.add(*success_curve, "--m-grid", "m_grid", "m grid, 'a,b,c' or start:step:stop");

    auto* noise_curve =
        app.add_subcommand("noise-curve", "relative error sweep over noise variance");
    add_common_experiment_options(*noise_curve, noise_o);
    noise_o.add(*noise_curve, "--sigma2-grid", "sigma2_grid",
                "variance grid, 'a,b,c' or start:step:stop");
    noise_o.add(*noise_curve, "--m", "m", "measurements per trial");

    // verify
    VerifyOptions vo;
    auto* verify = app.add_subcommand("verify", "run the built-in self checks");
    verify->add_option("--seed", vo.seed, "seed for the checks")->capture_default_str();
    verify->add_option("--check", vo.check, "run one check: lemma1|separation|gradient|hkb");
    verify->add_option("--tau", vo.tau, "threshold for --check lemma1")->capture_default_str();
    verify->add_option("--nb", vo.nb, "block count for --check hkb")->capture_default_str();
    verify->add_option("--k", vo.k, "kept blocks for --check hkb")->capture_default_str();

    CLI11_PARSE(app, argc, argv);

    try {
        if (solve->parsed()) {
            so.sparta_params.mu = so.craf_params.mu;
            so.sparta_params.max_iters = so.craf_params.max_iters;
            so.sparta_params.early_stop_tol = so.craf_params.early_stop_tol;
            so.sparta_params.init = so.craf_params.init;
            return run_solve(so);
        }
        if (init_bench->parsed())
            return run_experiment_command(init_o, craf::ExperimentKind::init_bench);
        if (success_curve->parsed())
            return run_experiment_command(success_o, craf::ExperimentKind::success_curve);
        if (noise_curve->parsed())
            return run_experiment_command(noise_o, craf::ExperimentKind::noise_curve);
        if (verify->parsed()) return run_verify(vo);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 1;
}
