#pragma once

#include <filesystem>
#include <fstream>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "mfgweak/mfgweak.hpp"

namespace mfgweak::runner {

using json = nlohmann::ordered_json;

// Exit codes of the batch front door.
enum ExitCode : int {
    kOk = 0,
    kConfigError = 1,
    kModelContractError = 2,
    kNotConverged = 3,
    kInternalError = 4,
};

inline void check_keys(const json& obj, const std::set<std::string>& allowed,
                       const std::string& context) {
    if (!obj.is_object()) throw ConfigError("cli::config: " + context + " must be an object");
    for (const auto& [key, value] : obj.items()) {
        (void)value;
        if (!allowed.count(key))
            throw ConfigError("cli::config: unknown key '" + key + "' in " + context);
    }
}

inline InitialLaw parse_initial_law(const json& j, int dim) {
    check_keys(j, {"kind", "x", "mean", "variance", "cov", "points"}, "initial law");
    std::string kind = j.value("kind", "point");
    if (kind == "point") {
        std::vector<double> x = j.value("x", std::vector<double>(static_cast<std::size_t>(dim), 0.0));
        return InitialLaw::point(std::move(x));
    }
    if (kind == "gaussian") {
        std::vector<double> mean =
            j.value("mean", std::vector<double>(static_cast<std::size_t>(dim), 0.0));
        if (j.contains("cov")) {
            std::vector<double> cov;
            for (const auto& row : j.at("cov"))
                for (const auto& v : row) cov.push_back(v.get<double>());
            return InitialLaw::gaussian(std::move(mean), std::move(cov));
        }
        double var = j.value("variance", 1.0);
        std::vector<double> cov(static_cast<std::size_t>(dim) * dim, 0.0);
        for (int i = 0; i < dim; ++i) cov[static_cast<std::size_t>(i) * dim + i] = var;
        return InitialLaw::gaussian(std::move(mean), std::move(cov));
    }
    if (kind == "empirical") {
        std::vector<std::vector<double>> pts;
        for (const auto& row : j.at("points")) pts.push_back(row.get<std::vector<double>>());
        return InitialLaw::empirical(std::move(pts));
    }
    throw ConfigError("cli::config: unknown initial law kind '" + kind + "'");
}

// Model registry: models are referenced by name with a parameter block.
inline std::unique_ptr<ModelSpec> make_model(const std::string& name, const json& params) {
    using namespace models;
    try {
        if (name == "price_impact") {
            check_keys(params,
                       {"gamma", "sigma", "a_min", "a_max", "agency_quad", "agency_abs",
                        "terminal_penalty", "initial", "psi_rate"},
                       "price_impact params");
            PriceImpactModel::Params p;
            p.gamma = params.value("gamma", p.gamma);
            p.sigma = params.value("sigma", p.sigma);
            p.a_min = params.value("a_min", p.a_min);
            p.a_max = params.value("a_max", p.a_max);
            p.agency_quad = params.value("agency_quad", p.agency_quad);
            p.agency_abs = params.value("agency_abs", p.agency_abs);
            p.terminal_penalty = params.value("terminal_penalty", p.terminal_penalty);
            p.psi_rate = params.value("psi_rate", p.psi_rate);
            if (params.contains("initial")) p.initial = parse_initial_law(params.at("initial"), 1);
            return std::make_unique<PriceImpactModel>(std::move(p));
        }
        if (name == "clipped_lq") {
            check_keys(params,
                       {"sigma", "control_cost", "a_min", "a_max", "terminal_const",
                        "terminal_lin", "terminal_quad", "initial"},
                       "clipped_lq params");
            ClippedLqModel::Params p;
            p.sigma = params.value("sigma", p.sigma);
            p.control_cost = params.value("control_cost", p.control_cost);
            p.a_min = params.value("a_min", p.a_min);
            p.a_max = params.value("a_max", p.a_max);
            p.terminal_const = params.value("terminal_const", p.terminal_const);
            p.terminal_lin = params.value("terminal_lin", p.terminal_lin);
            p.terminal_quad = params.value("terminal_quad", p.terminal_quad);
            if (params.contains("initial")) p.initial = parse_initial_law(params.at("initial"), 1);
            return std::make_unique<ClippedLqModel>(std::move(p));
        }
        if (name == "flocking_cs" || name == "flocking_nn" || name == "flocking_knn") {
            check_keys(params,
                       {"dim", "c", "beta", "radius", "eta", "sigma", "a_min", "a_max", "R", "Q",
                        "initial"},
                       name + " params");
            FlockingModel::Params p;
            p.dim = params.value("dim", 1);
            if (name == "flocking_cs") p.kind = FlockingModel::WeightKind::CuckerSmale;
            if (name == "flocking_nn") p.kind = FlockingModel::WeightKind::NearestNeighbor;
            if (name == "flocking_knn") p.kind = FlockingModel::WeightKind::KNearest;
            p.cs_c = params.value("c", p.cs_c);
            p.cs_beta = params.value("beta", p.cs_beta);
            p.nn_radius = params.value("radius", p.nn_radius);
            p.knn_eta = params.value("eta", p.knn_eta);
            p.sigma = params.value("sigma", p.sigma);
            p.a_min = params.value("a_min", p.a_min);
            p.a_max = params.value("a_max", p.a_max);
            if (params.contains("R")) p.R = params.at("R").get<std::vector<double>>();
            if (params.contains("Q")) p.Q = params.at("Q").get<std::vector<double>>();
            if (params.contains("initial"))
                p.initial = parse_initial_law(params.at("initial"), p.dim);
            else if (p.dim > 1) {
                std::vector<double> mean(static_cast<std::size_t>(p.dim), 0.0);
                std::vector<double> cov(static_cast<std::size_t>(p.dim) * p.dim, 0.0);
                for (int i = 0; i < p.dim; ++i) cov[static_cast<std::size_t>(i) * p.dim + i] = 1.0;
                p.initial = InitialLaw::gaussian(std::move(mean), std::move(cov));
            }
            return std::make_unique<FlockingModel>(std::move(p));
        }
        if (name == "rank") {
            check_keys(params,
                       {"sigma", "control_cost", "amplitude", "a_min", "a_max", "initial"},
                       "rank params");
            RankModel::Params p;
            p.sigma = params.value("sigma", p.sigma);
            p.control_cost = params.value("control_cost", p.control_cost);
            p.amplitude = params.value("amplitude", p.amplitude);
            p.a_min = params.value("a_min", p.a_min);
            p.a_max = params.value("a_max", p.a_max);
            if (params.contains("initial")) p.initial = parse_initial_law(params.at("initial"), 1);
            return std::make_unique<RankModel>(std::move(p));
        }
        if (name == "gbm") {
            check_keys(params,
                       {"sigma_hat", "control_cost", "a_min", "a_max", "terminal_lin", "initial"},
                       "gbm params");
            GbmModel::Params p;
            p.sigma_hat = params.value("sigma_hat", p.sigma_hat);
            p.control_cost = params.value("control_cost", p.control_cost);
            p.a_min = params.value("a_min", p.a_min);
            p.a_max = params.value("a_max", p.a_max);
            p.terminal_lin = params.value("terminal_lin", p.terminal_lin);
            if (params.contains("initial")) p.initial = parse_initial_law(params.at("initial"), 1);
            return std::make_unique<GbmModel>(std::move(p));
        }
    } catch (const UsageError& e) {
        throw ConfigError(std::string("cli::config: ") + e.what());
    }
    throw ConfigError("cli::config: unknown model '" + name + "'");
}

struct RunConfig {
    std::string command;
    std::string model_name;
    json model_params = json::object();
    MfgSolveConfig solve;
    int nplayer_n = 64;
    std::vector<int> n_list{8, 16, 32, 64, 128};
    int rollouts = 32;
    int br_paths = 2000;
    int mono_pairs = 20;
    std::string output_dir = "out";
    std::uint64_t seed = 1;
    int threads = 0;
    bool dump_ensemble = false;
    json echo;  // the validated input, embedded in every report
};

inline RunConfig parse_config(const json& j) {
    check_keys(j,
               {"command", "model", "solve", "nplayer", "output", "seed", "threads",
                "dump_ensemble", "mono_pairs"},
               "top level");
    RunConfig cfg;
    if (!j.contains("command")) throw ConfigError("cli::config: missing 'command'");
    cfg.command = j.at("command").get<std::string>();
    const std::set<std::string> commands{"solve", "nplayer", "rate-sweep", "check-mono",
                                         "selftest"};
    if (!commands.count(cfg.command))
        throw ConfigError("cli::config: unknown command '" + cfg.command + "'");

    if (cfg.command != "selftest") {
        if (!j.contains("model")) throw ConfigError("cli::config: missing 'model'");
        const json& jm = j.at("model");
        check_keys(jm, {"name", "params"}, "model");
        cfg.model_name = jm.at("name").get<std::string>();
        cfg.model_params = jm.value("params", json::object());
    }

    if (j.contains("solve")) {
        const json& js = j.at("solve");
        check_keys(js,
                   {"paths", "steps", "horizon", "max_iters", "damping", "tol_moment",
                    "tol_sliced_w1", "tol_control_flow", "basis_degree", "ridge_scale",
                    "marginal_steps", "projections", "pilot_checks"},
                   "solve");
        cfg.solve.num_paths = js.value("paths", cfg.solve.num_paths);
        cfg.solve.num_steps = js.value("steps", cfg.solve.num_steps);
        cfg.solve.horizon = js.value("horizon", cfg.solve.horizon);
        cfg.solve.max_iters = js.value("max_iters", cfg.solve.max_iters);
        cfg.solve.damping = js.value("damping", cfg.solve.damping);
        cfg.solve.tol.moment_residual = js.value("tol_moment", cfg.solve.tol.moment_residual);
        cfg.solve.tol.sliced_w1 = js.value("tol_sliced_w1", cfg.solve.tol.sliced_w1);
        cfg.solve.tol.control_flow_residual =
            js.value("tol_control_flow", cfg.solve.tol.control_flow_residual);
        cfg.solve.basis.degree = js.value("basis_degree", cfg.solve.basis.degree);
        cfg.solve.basis.ridge_scale = js.value("ridge_scale", cfg.solve.basis.ridge_scale);
        if (js.contains("marginal_steps"))
            cfg.solve.discrepancy_cfg.marginal_steps =
                js.at("marginal_steps").get<std::vector<int>>();
        cfg.solve.discrepancy_cfg.projections =
            js.value("projections", cfg.solve.discrepancy_cfg.projections);
        cfg.solve.run_pilot_checks = js.value("pilot_checks", cfg.solve.run_pilot_checks);
    }

    if (j.contains("nplayer")) {
        const json& jn = j.at("nplayer");
        check_keys(jn, {"n", "n_list", "rollouts", "br_paths"}, "nplayer");
        cfg.nplayer_n = jn.value("n", cfg.nplayer_n);
        if (jn.contains("n_list")) cfg.n_list = jn.at("n_list").get<std::vector<int>>();
        cfg.rollouts = jn.value("rollouts", cfg.rollouts);
        cfg.br_paths = jn.value("br_paths", cfg.br_paths);
    }

    cfg.output_dir = j.value("output", cfg.output_dir);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.threads = j.value("threads", cfg.threads);
    cfg.dump_ensemble = j.value("dump_ensemble", cfg.dump_ensemble);
    cfg.mono_pairs = j.value("mono_pairs", cfg.mono_pairs);
    cfg.solve.seed = cfg.seed;
    cfg.echo = j;
    try {
        cfg.solve.validate();
    } catch (const UsageError& e) {
        throw ConfigError(std::string("cli::config: ") + e.what());
    }
    return cfg;
}

inline json discrepancy_to_json(const MeasureDiscrepancy& d) {
    return json{{"moment", d.moment_residual},
                {"sliced_w1", d.sliced_w1},
                {"control_flow", d.control_flow_residual}};
}

inline json diagnostics_to_json(const MfgDiagnostics& d) {
    return json{{"weight_second_moment", d.weight_second_moment},
                {"psi_second_moment", d.psi_second_moment},
                {"growth_ratio", d.growth_ratio},
                {"prenorm_weight_mean", d.prenorm_weight_mean},
                {"prenorm_weight_se", d.prenorm_weight_se},
                {"bsde_value", d.bsde_value},
                {"z_clip_hits", d.z_clip_hits},
                {"argmax_diameter_max", d.argmax_diameter_max},
                {"argmax_diameter_flag", d.argmax_diameter_flag}};
}

inline void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cli::run: cannot write " + path);
    out << text;
}

inline void write_residuals_csv(const std::string& path,
                                const std::vector<MeasureDiscrepancy>& hist) {
    std::string text = "iter,moment,sliced_w1,control_flow\n";
    char buf[160];
    for (std::size_t i = 0; i < hist.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%zu,%.12g,%.12g,%.12g\n", i + 1,
                      hist[i].moment_residual, hist[i].sliced_w1,
                      hist[i].control_flow_residual);
        text += buf;
    }
    write_text(path, text);
}

// Random bounded reweightings of the driftless law, for the monotonicity
// checker: w proportional to exp of a small random combination of squashed
// marginals, so the weights stay positive and bounded.
inline WeightedMeasure random_measure(const PathEnsemble& e, std::uint64_t seed) {
    Rng rng = make_rng(seed);
    std::uniform_real_distribution<double> unif(-0.8, 0.8);
    std::uniform_int_distribution<int> pick_k(1, e.grid().num_steps);
    const int k1 = pick_k(rng), k2 = pick_k(rng);
    const double a1 = unif(rng), a2 = unif(rng);
    WeightedMeasure mu;
    mu.ensemble = &e;
    mu.weights.resize(static_cast<std::size_t>(e.num_paths()));
    double mean = 0.0;
    for (int m = 0; m < e.num_paths(); ++m) {
        double x1 = e.paths().state(m, k1)[0];
        double x2 = e.paths().state(m, k2)[0];
        double w = std::exp(a1 * std::tanh(x1) + a2 * std::tanh(x2));
        mu.weights[static_cast<std::size_t>(m)] = w;
        mean += w;
    }
    mean /= static_cast<double>(e.num_paths());
    for (double& w : mu.weights) w /= mean;
    return mu;
}

int run_selftest(std::ostream& log);  // defined below

// Execute one command; returns the process exit code. All artifacts land in
// cfg.output_dir.
inline int run(const RunConfig& cfg, std::ostream& log) {
    namespace fs = std::filesystem;
    if (cfg.threads > 0) set_thread_count(cfg.threads);
    fs::create_directories(cfg.output_dir);
    auto out_path = [&](const char* name) { return (fs::path(cfg.output_dir) / name).string(); };

    if (cfg.command == "selftest") return run_selftest(log);

    std::unique_ptr<ModelSpec> model = make_model(cfg.model_name, cfg.model_params);

    if (cfg.command == "check-mono") {
        PathEnsemble ensemble =
            simulate_driftless(*model, cfg.solve.grid(), cfg.solve.num_paths, cfg.seed);
        std::vector<WeightedMeasure> measures;
        measures.reserve(static_cast<std::size_t>(2 * cfg.mono_pairs));
        for (int p = 0; p < cfg.mono_pairs; ++p) {
            measures.push_back(random_measure(ensemble, derive_seed(cfg.seed, 0x6d6f6e6fULL,
                                                                    static_cast<std::uint64_t>(p), 1)));
            measures.push_back(random_measure(ensemble, derive_seed(cfg.seed, 0x6d6f6e6fULL,
                                                                    static_cast<std::uint64_t>(p), 2)));
        }
        std::vector<std::pair<const WeightedMeasure*, const WeightedMeasure*>> pairs;
        for (int p = 0; p < cfg.mono_pairs; ++p)
            pairs.emplace_back(&measures[static_cast<std::size_t>(2 * p)],
                               &measures[static_cast<std::size_t>(2 * p + 1)]);
        auto results = check_monotonicity(*model, pairs);
        json report;
        report["config"] = cfg.echo;
        report["pairs"] = json::array();
        int violations = 0;
        for (const auto& r : results) {
            report["pairs"].push_back(
                json{{"estimate", r.estimate}, {"stderr", r.stderr_}, {"violated", r.violated}});
            violations += r.violated ? 1 : 0;
        }
        report["violations"] = violations;
        write_text(out_path("mono_report.json"), report.dump(2) + "\n");
        log << "check-mono: " << violations << " violation(s) across " << results.size()
            << " pair(s)\n";
        return kOk;
    }

    // The remaining commands all need an equilibrium solve first.
    MfgSolution sol = solve_mfg(*model, cfg.solve);
    MeasureDiscrepancy cert;
    if (sol.converged) cert = fixed_point_residual_certificate(sol, *model, cfg.solve);

    if (cfg.dump_ensemble) dump_ensemble_csv(*sol.ensemble, out_path("ensemble.csv"));

    json solve_report;
    solve_report["config"] = cfg.echo;
    solve_report["model"] = model->name();
    solve_report["converged"] = sol.converged;
    solve_report["iterations"] = sol.residual_history.size();
    solve_report["value"] = sol.value;
    solve_report["residual_history"] = json::array();
    for (const auto& r : sol.residual_history)
        solve_report["residual_history"].push_back(discrepancy_to_json(r));
    solve_report["residual_certificate"] =
        sol.converged ? json(discrepancy_to_json(cert)) : json(nullptr);
    solve_report["diagnostics"] = diagnostics_to_json(sol.diagnostics);
    write_text(out_path("solve_report.json"), solve_report.dump(2) + "\n");
    write_residuals_csv(out_path("residuals.csv"), sol.residual_history);
    {
        DiscrepancyConfig disc = cfg.solve.discrepancy(sol.ensemble->grid());
        export_marginal_histograms(sol.mu_hat, disc.marginal_steps, 40, out_path("marginals.csv"),
                                   &sol.nu_hat);
    }
    log << "solve: converged=" << (sol.converged ? "true" : "false")
        << " iterations=" << sol.residual_history.size() << " value=" << sol.value << "\n";

    if (cfg.command == "solve") return sol.converged ? kOk : kNotConverged;
    if (!sol.converged) {
        log << "cli::run: equilibrium solve did not converge; no finite-player run\n";
        return kNotConverged;
    }

    BestResponseConfig br;
    br.num_paths = cfg.br_paths;
    br.basis = cfg.solve.basis;
    br.maxopt = cfg.solve.maxopt;
    br.seed = cfg.seed;
    EquilibriumRefs eq_refs{&sol.policy_hat, sol.mu_hat.view(), &sol.nu_hat};

    auto gap_to_json = [](int n, const EpsilonGapEstimate& gap) {
        return json{{"n", n},
                    {"epsilon_hat", gap.epsilon_hat},
                    {"stderr", gap.se_epsilon},
                    {"j_eq", gap.j_eq},
                    {"se_eq", gap.se_eq},
                    {"j_br", gap.j_br},
                    {"se_br", gap.se_br},
                    {"j_eq_frozen", gap.j_eq_frozen},
                    {"gap_naive", gap.gap},
                    {"se_gap_naive", gap.se_gap},
                    {"reopt_gain", gap.reopt_gain},
                    {"se_reopt_gain", gap.se_reopt},
                    {"j_br_bsde", gap.j_br_bsde}};
    };

    if (cfg.command == "nplayer") {
        auto runs = simulate_nplayer(*model, sol.policy_hat, cfg.nplayer_n, cfg.rollouts,
                                     sol.ensemble->grid(), cfg.seed);
        EpsilonGapEstimate gap = best_response_gap(*model, runs, eq_refs, br);
        json report;
        report["config"] = cfg.echo;
        report["rollouts"] = cfg.rollouts;
        report["estimate"] = gap_to_json(cfg.nplayer_n, gap);
        report["mfg_value"] = sol.value;
        write_text(out_path("nplayer_report.json"), report.dump(2) + "\n");
        log << "nplayer: n=" << cfg.nplayer_n << " epsilon_hat=" << gap.epsilon_hat << " (se "
            << gap.se_epsilon << ")\n";
        return kOk;
    }

    if (cfg.command == "rate-sweep") {
        RateReport report = rate_sweep(*model, eq_refs, cfg.n_list, cfg.rollouts,
                                       sol.ensemble->grid(), br, cfg.seed);
        std::string csv = "n,epsilon_hat,stderr,j_eq,j_br\n";
        char buf[200];
        for (const RatePoint& pt : report.points) {
            std::snprintf(buf, sizeof(buf), "%d,%.12g,%.12g,%.12g,%.12g\n", pt.n,
                          pt.gap.epsilon_hat, pt.gap.se_epsilon, pt.gap.j_eq, pt.gap.j_br);
            csv += buf;
        }
        write_text(out_path("rate.csv"), csv);
        json jr;
        jr["config"] = cfg.echo;
        jr["points"] = json::array();
        for (const RatePoint& pt : report.points)
            jr["points"].push_back(gap_to_json(pt.n, pt.gap));
        jr["adjacent_drops"] = json::array();
        for (const auto& [drop, se] : report.adjacent_drops)
            jr["adjacent_drops"].push_back(json{{"drop", drop}, {"stderr", se}});
        jr["slope"] = report.slope;
        jr["slope_se"] = report.slope_se;
        jr["slope_ci"] = json::array({report.slope_ci_lo, report.slope_ci_hi});
        jr["slope_meaningful"] = report.slope_meaningful;
        write_text(out_path("rate_report.json"), jr.dump(2) + "\n");
        log << "rate-sweep: slope=" << report.slope
            << (report.slope_meaningful ? "" : " (not meaningful)") << "\n";
        return kOk;
    }

    throw ConfigError("cli::run: unhandled command '" + cfg.command + "'");
}

inline int run_file(const std::string& config_path, std::ostream& log,
                    const std::string& output_override = "", std::int64_t seed_override = -1,
                    int threads_override = 0) {
    try {
        std::ifstream in(config_path);
        if (!in) throw ConfigError("cli::run: cannot read config " + config_path);
        json j = json::parse(in, nullptr, true, true);  // allow comments
        RunConfig cfg = parse_config(j);
        if (!output_override.empty()) cfg.output_dir = output_override;
        if (seed_override >= 0) {
            cfg.seed = static_cast<std::uint64_t>(seed_override);
            cfg.solve.seed = cfg.seed;
            cfg.echo["seed"] = cfg.seed;
        }
        if (threads_override > 0) cfg.threads = threads_override;
        return run(cfg, log);
    } catch (const ConfigError& e) {
        log << "error: " << e.what() << "\n";
        return kConfigError;
    } catch (const ModelContractViolation& e) {
        log << "error: " << e.what() << "\n";
        return kModelContractError;
    } catch (const UsageError& e) {
        log << "error: " << e.what() << "\n";
        return kConfigError;
    } catch (const std::exception& e) {
        log << "error: " << e.what() << "\n";
        return kInternalError;
    }
}

// A handful of closed-form checks runnable without any configuration; used by
// the `selftest` command as a quick smoke screen of the numerical core.
inline int run_selftest(std::ostream& log) {
    int failures = 0;
    auto check = [&](const char* name, bool ok) {
        log << (ok ? "[PASS] " : "[FAIL] ") << name << "\n";
        if (!ok) ++failures;
    };

    using namespace models;
    // Single Euler step from a point mass reproduces the increment.
    {
        ClippedLqModel::Params p;
        p.terminal_lin = 1.0;
        ClippedLqModel model(p);
        PathEnsemble e = simulate_driftless(model, TimeGrid(1.0, 1), 64, 7);
        bool ok = true;
        for (int m = 0; m < e.num_paths(); ++m)
            ok = ok && e.paths().state(m, 1)[0] == e.increment(m, 0)[0];
        check("one-step paths equal their increments", ok);
    }
    // Path integral of a constant path.
    {
        ClippedLqModel model({});
        PathEnsemble e = simulate_driftless(model, TimeGrid(1.0, 4), 4, 3);
        PathArray flat(TimeGrid(1.0, 4), 1, 1);
        for (int k = 0; k <= 4; ++k) flat.mutable_state(0, k)[0] = 2.0;
        flat.build_iota();
        PathSlice s(flat, 0, 4);
        auto v = path_functional_iota(s, 2, flat.grid());
        check("path integral of constant 2 over half the horizon is 1",
              std::abs(v[0] - 1.0) < 1e-15);
    }
    // Zero drift keeps unit weights.
    {
        ClippedLqModel model({});
        PathEnsemble e = simulate_driftless(model, TimeGrid(1.0, 16), 128, 11);
        WeightedMeasure mu = WeightedMeasure::driftless(e);
        auto w = girsanov_weights(e, model, ClosedLoopPolicy::constant({0.0}), mu.view());
        bool ok = true;
        for (double wi : w.weights) ok = ok && wi == 1.0;
        check("zero drift gives unit importance weights", ok);
    }
    // Interior maximizer of the quadratic Hamiltonian.
    {
        ClippedLqModel model({});
        PathEnsemble e = simulate_driftless(model, TimeGrid(1.0, 2), 32, 5);
        WeightedMeasure mu = WeightedMeasure::driftless(e);
        double z = 0.6;
        auto [a, value] = maximize_control_part(model, 0, e.slice(0, 0), mu.view(), {&z, 1});
        check("quadratic Hamiltonian maximizer is z/2",
              std::abs(a[0] - 0.3) < 1e-12 && std::abs(value - 0.09) < 1e-12);
    }
    // Quantile radius on a three-point cloud.
    {
        std::vector<double> pts{0.0, 1.0, 2.0};
        double x = 0.0;
        double r = quantile_radius(pts, 1, nullptr, {&x, 1}, 0.5);
        check("quantile radius of {0,1,2} at mass 1/2 is 1", r == 1.0);
    }
    // Constant-terminal backward solve is exact.
    {
        ClippedLqModel::Params p;
        p.terminal_const = 7.0;
        p.control_cost = 0.0;
        ClippedLqModel model(p);
        // A zero-reward bang-bang model has H(z) = |z|; kill the drift part by
        // restricting controls to {0}.
        ClippedLqModel::Params p2 = p;
        p2.a_min = 0.0;
        p2.a_max = 0.0;
        ClippedLqModel model2(p2);
        PathEnsemble e = simulate_driftless(model2, TimeGrid(1.0, 8), 256, 13);
        WeightedMeasure mu = WeightedMeasure::driftless(e);
        ControlLawFlow nu = ControlLawFlow::empty(e.grid(), 1, e.num_paths());
        nu.rebuild_feature_means(model2);
        RegressionBasis basis;
        BsdeSolution sol = solve_bsde(e, model2, mu.view(), nu, basis);
        bool ok = std::abs(sol.value_estimate - 7.0) < 1e-9;
        for (int m = 0; m < e.num_paths(); ++m) ok = ok && sol.y_at(m, 8) == 7.0;
        check("constant terminal with zero driver stays constant", ok);
    }
    log << (failures == 0 ? "selftest passed\n" : "selftest FAILED\n");
    return failures == 0 ? kOk : kInternalError;
}

}  // namespace mfgweak::runner
