#pragma once

// Command implementations behind the `coxsub` executable. Argument parsing
// lives in tools/; everything here takes a resolved RunConfig.

#include "coxsub/cox_core.hpp"
#include "coxsub/csv.hpp"
#include "coxsub/parallel.hpp"
#include "coxsub/serialize.hpp"
#include "coxsub/simulation.hpp"
#include "coxsub/subsampling.hpp"
#include "coxsub/weighted_cox.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace coxsub::cli {

inline constexpr const char* kVersion = "1.0.0";

enum ExitCode : int { kSuccess = 0, kFailure = 1, kUsage = 2 };

/// Bad flag values detected after parsing; maps to exit code 2.
struct UsageError : Error {
    using Error::Error;
};

struct RunConfig {
    std::string command;
    // data input
    std::string input;
    std::string time_col = "time";
    std::string status_col = "status";
    std::vector<std::string> covariates;   // "name" or "name:cat"; empty = all other columns
    std::vector<std::string> median_fill;  // columns whose missing cells take the median
    // simulation
    std::vector<int> cases;
    std::optional<Index> n;
    std::string baseline = "constant";
    double censoring = 0.3;
    // subsampling
    std::vector<Index> r_grid{500};
    int b = 1000;
    std::vector<Method> methods{Method::FullOpt};
    std::uint64_t seed = 42;
    double level = 0.95;
    bool lambda_variance = false;
    MeatForm meat = MeatForm::Events;
    std::string out = ".";
    unsigned threads = 1;
};

/// "500", "100..500:100" or "100..500" (step 100) into a list of sizes.
inline std::vector<Index> parse_r_grid(const std::string& s) {
    auto to_index = [&](const std::string& v) {
        std::size_t pos = 0;
        long long x = 0;
        try {
            x = std::stoll(v, &pos);
        } catch (const std::exception&) {
            throw UsageError("invalid --r value '" + s + "'");
        }
        if (pos != v.size() || x < 1) throw UsageError("invalid --r value '" + s + "'");
        return static_cast<Index>(x);
    };
    const auto dots = s.find("..");
    if (dots == std::string::npos) return {to_index(s)};
    const auto colon = s.find(':', dots);
    const Index start = to_index(s.substr(0, dots));
    const Index end = to_index(s.substr(dots + 2, colon == std::string::npos ? std::string::npos : colon - dots - 2));
    const Index step = colon == std::string::npos ? 100 : to_index(s.substr(colon + 1));
    if (end < start) throw UsageError("invalid --r range '" + s + "'");
    std::vector<Index> out;
    for (Index r = start; r <= end; r += step) out.push_back(r);
    return out;
}

inline std::vector<Method> parse_methods(const std::string& s) {
    if (s == "all") return {Method::Uniform, Method::FullOpt, Method::CenOpt};
    std::vector<Method> out;
    std::stringstream ss(s);
    for (std::string tok; std::getline(ss, tok, ',');) {
        try {
            const Method m = parse_method(tok);
            if (std::find(out.begin(), out.end(), m) == out.end()) out.push_back(m);
        } catch (const Error& e) {
            throw UsageError(e.what());
        }
    }
    if (out.empty()) throw UsageError("--method is empty");
    return out;
}

/// Schema from flags. Without --covariates every column other than time
/// and status is a numeric covariate.
inline CsvSchema resolve_schema(const RunConfig& cfg) {
    CsvSchema schema{cfg.time_col, cfg.status_col, {}};
    std::vector<std::string> cols = cfg.covariates;
    if (cols.empty()) {
        std::ifstream in(cfg.input);
        if (!in) throw DataError("cannot open '" + cfg.input + "'");
        std::string header;
        std::getline(in, header);
        if (header.size() >= 3 && header.compare(0, 3, "\xEF\xBB\xBF") == 0) header.erase(0, 3);
        for (auto& f : coxsub::detail::split_csv_line(header, 1)) {
            const std::string name(coxsub::detail::trim(f));
            if (name != cfg.time_col && name != cfg.status_col) cols.push_back(name);
        }
    }
    for (const auto& c : cols) {
        CovariateSpec spec;
        const auto colon = c.rfind(':');
        if (colon != std::string::npos && c.substr(colon + 1) == "cat") {
            spec.column = c.substr(0, colon);
            spec.categorical = true;
        } else {
            spec.column = c;
        }
        for (const auto& m : cfg.median_fill)
            if (m == spec.column) spec.median_fill = true;
        schema.covariates.push_back(spec);
    }
    return schema;
}

namespace detail {

inline std::vector<std::string> method_names(const std::vector<Method>& ms) {
    std::vector<std::string> out;
    for (Method m : ms) out.emplace_back(to_string(m));
    return out;
}

inline Json config_json(const RunConfig& cfg) {
    Json j{{"command", cfg.command}, {"seed", cfg.seed}};
    if (!cfg.input.empty()) {
        j["input"] = cfg.input;
        j["time_col"] = cfg.time_col;
        j["status_col"] = cfg.status_col;
        j["covariates"] = cfg.covariates;
        j["median_fill"] = cfg.median_fill;
    }
    if (cfg.command == "simulate" || cfg.command == "generate") {
        j["cases"] = cfg.cases;
        if (cfg.n) j["n"] = *cfg.n;
        if (cfg.cases.empty()) {
            j["baseline"] = cfg.baseline;
            j["censoring"] = cfg.censoring;
        }
    }
    if (cfg.command == "simulate" || cfg.command == "analyze") {
        j["r"] = cfg.r_grid;
        j["b"] = cfg.b;
        j["methods"] = method_names(cfg.methods);
        j["level"] = cfg.level;
        j["meat"] = cfg.meat == MeatForm::Events ? "events" : "influence";
    }
    if (cfg.command == "fit") j["lambda_variance"] = cfg.lambda_variance;
    return j;
}

inline std::filesystem::path out_dir(const RunConfig& cfg) {
    std::filesystem::path dir(cfg.out);
    std::filesystem::create_directories(dir);
    return dir;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("cannot write '" + path.string() + "'");
    f << text;
}

inline void write_json(const std::filesystem::path& path, const Json& j) { write_text(path, j.dump(2) + "\n"); }

/// Wall-clock and worker count go in a separate file so the manifest stays
/// byte-identical across reruns.
inline void write_timing(const std::filesystem::path& dir, double seconds, unsigned threads) {
    write_json(dir / "timing.json", Json{{"wall_clock_seconds", seconds}, {"threads", threads}});
}

inline Json manifest(const RunConfig& cfg) {
    return Json{{"artifact", "coxsub"}, {"version", kVersion}, {"config", config_json(cfg)}};
}

inline sim::ScenarioConfig scenario_for(const RunConfig& cfg, int case_id) {
    sim::ScenarioConfig sc;
    if (case_id != 0) {
        if (case_id < 1 || case_id > 4) throw UsageError("--case must be 1, 2, 3 or 4");
        sc = sim::case_config(case_id);
    } else {
        if (cfg.baseline == "constant") sc.baseline = sim::Baseline::Constant;
        else if (cfg.baseline == "linear") sc.baseline = sim::Baseline::Linear;
        else throw UsageError("--baseline must be constant or linear");
        if (!(cfg.censoring > 0.0 && cfg.censoring < 1.0)) throw UsageError("--censoring must lie in (0, 1)");
        sc.target_censoring = cfg.censoring;
    }
    if (cfg.n) sc.n = *cfg.n;
    sc.r_grid = cfg.r_grid;
    sc.b = cfg.b;
    sc.methods = cfg.methods;
    sc.master_seed = cfg.seed;
    sc.level = cfg.level;
    sc.meat = cfg.meat;
    sc.threads = cfg.threads;
    return sc;
}

inline void check_common(const RunConfig& cfg) {
    if (cfg.b < 1) throw UsageError("--b must be at least 1");
    if (!(cfg.level > 0.0 && cfg.level < 1.0)) throw UsageError("--level must lie in (0, 1)");
    if (cfg.r_grid.empty()) throw UsageError("--r is empty");
}

using Clock = std::chrono::steady_clock;

inline double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

}  // namespace detail

/// Runs the synthetic experiment for each requested case; writes
/// metrics.csv, mse.csv, manifest.json and timing.json.
inline int cmd_simulate(const RunConfig& cfg, std::ostream& log = std::cerr) {
    const auto t0 = detail::Clock::now();
    detail::check_common(cfg);
    std::vector<int> cases = cfg.cases.empty() ? std::vector<int>{0} : cfg.cases;
    std::vector<sim::ScenarioConfig> scenarios;
    for (int c : cases) {
        scenarios.push_back(detail::scenario_for(cfg, c));
        try {
            scenarios.back().validate();
        } catch (const Error& e) {
            throw UsageError(e.what());
        }
    }

    const auto dir = detail::out_dir(cfg);
    std::vector<sim::MetricsTable> tables;
    Json man = detail::manifest(cfg);
    Json runs = Json::array();
    for (const auto& sc : scenarios) {
        const auto res = sim::run_scenario(sc);
        for (const auto& w : res.warnings) log << "warning: case " << sc.case_id << ": " << w << '\n';
        Json failures = Json::array();
        for (const auto& cell : res.metrics.cells) {
            failures.push_back(
                {{"method", std::string(to_string(cell.method))}, {"r", cell.r}, {"failures", cell.failures}});
        }
        runs.push_back({{"case", sc.case_id},
                        {"n", sc.n},
                        {"baseline", std::string(sim::to_string(sc.baseline))},
                        {"target_censoring", sc.target_censoring},
                        {"censoring_upper", res.calibration.c},
                        {"calibrated_rate", res.calibration.achieved},
                        {"total_failures", res.total_failures},
                        {"failures", failures},
                        {"warnings", res.warnings}});
        tables.push_back(res.metrics);
    }
    man["scenarios"] = runs;

    std::ostringstream metrics, mse;
    sim::write_metrics_csv(metrics, tables);
    sim::write_mse_csv(mse, tables);
    detail::write_text(dir / "metrics.csv", metrics.str());
    detail::write_text(dir / "mse.csv", mse.str());
    detail::write_json(dir / "manifest.json", man);
    detail::write_timing(dir, detail::seconds_since(t0), cfg.threads);
    return kSuccess;
}

/**
 * Full-data fit with Breslow baseline. Standard errors come from the
 * sandwich H^-1 V H^-1 evaluated on the whole cohort with pi_i = 1/N.
 */
inline int cmd_fit(const RunConfig& cfg, std::ostream& log = std::cerr) {
    const auto t0 = detail::Clock::now();
    if (cfg.input.empty()) throw UsageError("fit requires --input");
    const SortedCohort cohort(load_csv(cfg.input, resolve_schema(cfg)));
    if (cohort.num_events() == 0) throw FitError("zero events");
    const CoxFit fit = newton_solve(cohort);
    if (!fit.converged) log << "warning: Newton iterations did not converge\n";

    Subsample all;
    all.r = cohort.size();
    all.source_n = cohort.size();
    all.indices.resize(static_cast<std::size_t>(cohort.size()));
    for (Index i = 0; i < cohort.size(); ++i) all.indices[static_cast<std::size_t>(i)] = i;
    all.probs_at_draw.assign(all.indices.size(), 1.0 / static_cast<double>(cohort.size()));
    const RiskTable t = subsample_table(all, cohort);
    WeightedFit wf;
    wf.beta = fit.beta;
    wf.h_tilde = fit.hessian;
    auto sw = sandwich_variance(t, fit.beta, fit.hessian);
    wf.sigma = sw.sigma;
    wf.v_tilde = sw.v_tilde;

    const Json names = cohort.base().names;
    Json j{{"covariates", names}, {"n", cohort.size()}, {"events", cohort.num_events()}};
    j["fit"] = to_json(fit);
    j["se"] = coxsub::detail::vec(wf.se());
    j["sigma"] = coxsub::detail::mat(wf.sigma);
    j["baseline"] = to_json(breslow(cohort, fit.beta));
    if (cfg.lambda_variance) {
        j["baseline"]["variance"] =
            coxsub::detail::vec(lambda_variance(t, fit.beta, wf.sigma, wf.h_tilde).variance);
    }

    const auto dir = detail::out_dir(cfg);
    detail::write_json(dir / "fit.json", j);
    detail::write_json(dir / "manifest.json", detail::manifest(cfg));
    detail::write_timing(dir, detail::seconds_since(t0), 1);
    return kSuccess;
}

/**
 * Repeated-subsampling analysis of a CSV: one full-data fit, then B draws
 * per (method, r). Per coordinate: Mean, SSE, mean ESE and
 * MSE = (1/B) sum_b (beta-tilde_j - beta-hat_j)^2 against the full fit.
 */
inline int cmd_analyze(const RunConfig& cfg, std::ostream& log = std::cerr) {
    const auto t0 = detail::Clock::now();
    if (cfg.input.empty()) throw UsageError("analyze requires --input");
    detail::check_common(cfg);
    const SortedCohort cohort(load_csv(cfg.input, resolve_schema(cfg)));
    if (cohort.num_events() == 0) throw FitError("zero events");
    const CoxFit full = newton_solve(cohort);
    const Index p = cohort.dim();

    std::vector<std::pair<Method, Index>> cells;
    for (Method m : cfg.methods)
        for (Index r : cfg.r_grid) cells.emplace_back(m, r);
    std::vector<std::vector<sim::ReplicateEstimate>> reps(cells.size(),
                                                          std::vector<sim::ReplicateEstimate>(cfg.b));
    std::vector<std::vector<std::string>> cell_warnings(cells.size());
    std::mutex warn_mutex;
    const Rng master(cfg.seed);
    parallel_for(static_cast<std::size_t>(cfg.b), cfg.threads, [&](std::size_t b) {
        const Rng rep = master.split(b);
        for (std::size_t c = 0; c < cells.size(); ++c) {
            auto& est = reps[c][b];
            try {
                Algorithm1Options opts;
                opts.method = cells[c].first;
                opts.r = cells[c].second;
                opts.meat = cfg.meat;
                const auto res = run_algorithm1(cohort, opts, rep.split(1 + c));
                est.beta = res.fit.beta;
                est.se = res.fit.se();
                est.ok = est.beta.allFinite() && est.se.allFinite();
                if (b == 0 && !res.warnings.empty()) {
                    std::lock_guard lock(warn_mutex);
                    cell_warnings[c] = res.warnings;
                }
            } catch (const Error& e) {
                est.error = e.what();
            }
        }
    });

    std::ostringstream csv;
    csv << "method,r,coord,covariate,full_beta,mean,sse,ese,mse,mse_se,successes,failures\n";
    Json results = Json::array();
    for (std::size_t c = 0; c < cells.size(); ++c) {
        const auto& cell = reps[c];
        std::vector<const sim::ReplicateEstimate*> good;
        for (const auto& e : cell)
            if (e.ok) good.push_back(&e);
        const int failures = cfg.b - static_cast<int>(good.size());
        const std::string method(to_string(cells[c].first));
        for (const auto& w : cell_warnings[c]) log << "warning: " << method << ": " << w << '\n';
        if (failures > 0.02 * cfg.b)
            log << "warning: " << method << " r=" << cells[c].second << ": " << failures << " of " << cfg.b
                << " replicates failed\n";
        Eigen::VectorXd mean_v(p), sse_v(p), ese_v(p), mse_v(p), mse_se_v(p);
        std::vector<double> col(good.size()), se(good.size()), sq(good.size());
        for (Index j = 0; j < p; ++j) {
            for (std::size_t k = 0; k < good.size(); ++k) {
                col[k] = good[k]->beta(j);
                se[k] = good[k]->se(j);
                sq[k] = (col[k] - full.beta(j)) * (col[k] - full.beta(j));
            }
            mean_v(j) = mean(col);
            sse_v(j) = sample_sd(col);
            ese_v(j) = mean(se);
            mse_v(j) = mean(sq);
            mse_se_v(j) = sample_sd(sq) / std::sqrt(static_cast<double>(sq.size()));
            csv << method << ',' << cells[c].second << ",beta" << (j + 1) << ','
                << cohort.base().names[static_cast<std::size_t>(j)] << ',' << sim::detail::fmt(full.beta(j)) << ','
                << sim::detail::fmt(mean_v(j)) << ',' << sim::detail::fmt(sse_v(j)) << ','
                << sim::detail::fmt(ese_v(j)) << ',' << sim::detail::fmt(mse_v(j)) << ','
                << sim::detail::fmt(mse_se_v(j)) << ',' << good.size() << ','
                << failures << '\n';
        }
        results.push_back({{"method", method},
                           {"r", cells[c].second},
                           {"mean", coxsub::detail::vec(mean_v)},
                           {"sse", coxsub::detail::vec(sse_v)},
                           {"ese", coxsub::detail::vec(ese_v)},
                           {"mse", coxsub::detail::vec(mse_v)},
                           {"mse_se", coxsub::detail::vec(mse_se_v)},
                           {"successes", good.size()},
                           {"failures", failures},
                           {"warnings", cell_warnings[c]}});
    }

    Json j{{"covariates", cohort.base().names}, {"n", cohort.size()}, {"events", cohort.num_events()}};
    j["full_fit"] = to_json(full);
    j["results"] = results;

    const auto dir = detail::out_dir(cfg);
    detail::write_text(dir / "analysis.csv", csv.str());
    detail::write_json(dir / "analysis.json", j);
    detail::write_json(dir / "manifest.json", detail::manifest(cfg));
    detail::write_timing(dir, detail::seconds_since(t0), cfg.threads);
    return kSuccess;
}

/// Writes one synthetic cohort (first --case, or the custom scenario) to
/// <out>/cohort.csv using the calibrated censoring bound.
inline int cmd_generate(const RunConfig& cfg, std::ostream& /*log*/ = std::cerr) {
    const int case_id = cfg.cases.empty() ? 0 : cfg.cases.front();
    sim::ScenarioConfig sc = detail::scenario_for(cfg, case_id);
    if (sc.n < 1) throw UsageError("--n must be positive");
    const auto cal = sim::calibrate_censoring(sc.beta0, sc.baseline, sc.target_censoring);
    Rng rng(cfg.seed);
    const Cohort cohort = sim::generate_cohort(sc.n, sc.beta0, sc.baseline, cal.c, rng);
    const auto dir = detail::out_dir(cfg);
    write_csv((dir / "cohort.csv").string(), cohort);
    Json man = detail::manifest(cfg);
    man["censoring_upper"] = cal.c;
    man["calibrated_rate"] = cal.achieved;
    detail::write_json(dir / "manifest.json", man);
    return kSuccess;
}

/// Dispatches and maps exceptions onto the exit-code contract.
inline int run(const RunConfig& cfg, std::ostream& log = std::cerr) {
    try {
        if (cfg.command == "simulate") return cmd_simulate(cfg, log);
        if (cfg.command == "fit") return cmd_fit(cfg, log);
        if (cfg.command == "analyze") return cmd_analyze(cfg, log);
        if (cfg.command == "generate") return cmd_generate(cfg, log);
        log << "error: unknown command '" << cfg.command << "'\n";
        return kUsage;
    } catch (const UsageError& e) {
        log << "error: " << e.what() << '\n';
        return kUsage;
    } catch (const std::exception& e) {
        log << "error: " << e.what() << '\n';
        return kFailure;
    }
}

}  // namespace coxsub::cli
