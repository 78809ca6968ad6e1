#pragma once

// Monte Carlo harness: synthetic Cox data with six covariates, censoring
// calibration, replicate runs of the subsampling estimators, and the
// Bias / SSE / ESE / CP / MSE summaries.

#include "coxsub/parallel.hpp"
#include "coxsub/rng.hpp"
#include "coxsub/stats.hpp"
#include "coxsub/subsampling.hpp"
#include "coxsub/survival_data.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace coxsub::sim {

enum class Baseline { Constant, Linear };  // lambda0(t) = 0.5 or lambda0(t) = t

inline std::string_view to_string(Baseline b) { return b == Baseline::Constant ? "constant" : "linear"; }

inline Eigen::VectorXd default_beta0() {
    Eigen::VectorXd b(6);
    b << 0.5, 1.0, -0.3, -0.7, 0.4, 0.6;
    return b;
}

struct ScenarioConfig {
    int case_id = 0;  // 1..4 for the standard cases, 0 for custom
    Index n = 20000;
    Eigen::VectorXd beta0 = default_beta0();
    Baseline baseline = Baseline::Constant;
    double target_censoring = 0.3;
    std::vector<Index> r_grid{100, 200, 300, 400, 500};
    int b = 1000;
    std::vector<Method> methods{Method::Uniform, Method::FullOpt, Method::CenOpt};
    std::uint64_t master_seed = 42;
    double level = 0.95;
    MeatForm meat = MeatForm::Events;
    unsigned threads = 1;

    void validate() const {
        if (b < 1) throw Error("replicate count must be at least 1");
        if (!(target_censoring > 0.0 && target_censoring < 1.0)) throw Error("target censoring must lie in (0, 1)");
        if (r_grid.empty()) throw Error("empty subsample-size grid");
        if (methods.empty()) throw Error("no methods selected");
        if (beta0.size() != 6) throw Error("beta0 must have 6 entries");
        const Index rmax = *std::max_element(r_grid.begin(), r_grid.end());
        if (n < 10 * rmax) throw Error("cohort size must be at least 10 * max(r)");
    }
};

/// Cases 1-4: {constant, linear} baseline x {30%, 50%} censoring.
inline ScenarioConfig case_config(int case_id) {
    if (case_id < 1 || case_id > 4) throw Error("case must be 1, 2, 3 or 4");
    ScenarioConfig c;
    c.case_id = case_id;
    c.baseline = case_id <= 2 ? Baseline::Constant : Baseline::Linear;
    c.target_censoring = case_id % 2 == 1 ? 0.3 : 0.5;
    return c;
}

/**
 * n x 6 covariates: (Z1, Z2, Z3) ~ N(0, Sigma0) with Sigma0_ij = 0.5^|i-j|,
 * Z4 ~ Gamma(2, 1) as a sum of two unit exponentials, Z5 ~ Bernoulli(0.5),
 * Z6 ~ Bernoulli(0.3).
 */
inline RowMatrix gen_covariates(Index n, Rng& rng) {
    Eigen::Matrix3d sigma0;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) sigma0(i, j) = std::pow(0.5, std::abs(i - j));
    const Eigen::Matrix3d l = sigma0.llt().matrixL();
    RowMatrix z(n, 6);
    Eigen::Vector3d g;
    for (Index i = 0; i < n; ++i) {
        g << rng.normal(), rng.normal(), rng.normal();
        z.row(i).head<3>() = (l * g).transpose();
        z(i, 3) = rng.exponential() + rng.exponential();
        z(i, 4) = rng.bernoulli(0.5) ? 1.0 : 0.0;
        z(i, 5) = rng.bernoulli(0.3) ? 1.0 : 0.0;
    }
    return z;
}

/// Inverse of Lambda0(T) exp(eta) = -log(u).
inline double event_time_from_uniform(double u, double eta, Baseline baseline) {
    const double h = -std::log(u) * std::exp(-eta);
    return baseline == Baseline::Constant ? 2.0 * h : std::sqrt(2.0 * h);
}

inline Eigen::VectorXd gen_event_times(const RowMatrix& z, const Eigen::VectorXd& beta0, Baseline baseline, Rng& rng) {
    const Eigen::VectorXd eta = z * beta0;
    Eigen::VectorXd t(z.rows());
    for (Index i = 0; i < z.rows(); ++i) t(i) = event_time_from_uniform(rng.uniform_open(), eta(i), baseline);
    return t;
}

struct CalibrationOptions {
    Index n = 1'000'000;
    std::uint64_t seed = 20240101;
    double tolerance = 0.002;
    int max_iter = 200;
};

struct Calibration {
    double c = 0.0;
    double achieved = 0.0;
};

/**
 * Monte Carlo censoring rate P(C < T) for C ~ U(0, c) over a fixed draw of
 * event times, conditioning on each T: P(C < T | T) = min(T / c, 1).
 */
inline double censoring_rate_for(const Eigen::VectorXd& times, double c) {
    long double acc = 0.0L;
    for (Index i = 0; i < times.size(); ++i) acc += std::min(times(i) / c, 1.0);
    return static_cast<double>(acc / static_cast<long double>(times.size()));
}

/// Event times drawn with the fixed calibration seed.
inline Eigen::VectorXd calibration_sample(const Eigen::VectorXd& beta0, Baseline baseline, const CalibrationOptions& opts) {
    Rng rng(opts.seed);
    Rng zr = rng.split(0), tr = rng.split(1);
    const RowMatrix z = gen_covariates(opts.n, zr);
    return gen_event_times(z, beta0, baseline, tr);
}

/**
 * Bisection (on log c) for the upper limit c of U(0, c) censoring that
 * yields the target censoring rate. The rate is decreasing in c.
 */
inline Calibration calibrate_censoring(const Eigen::VectorXd& beta0, Baseline baseline, double target,
                                       const CalibrationOptions& opts = {}) {
    if (!(target > 0.0 && target < 1.0)) throw Error("target censoring must lie in (0, 1)");
    const Eigen::VectorXd times = calibration_sample(beta0, baseline, opts);
    double lo = 1e-6, hi = 1e6;
    const double rate_lo = censoring_rate_for(times, lo);
    const double rate_hi = censoring_rate_for(times, hi);
    if (!(rate_lo >= target && rate_hi <= target)) throw Error("censoring calibration: bracket not found in [1e-6, 1e6]");
    Calibration out{};
    for (int it = 0; it < opts.max_iter; ++it) {
        const double mid = std::sqrt(lo * hi);
        const double rate = censoring_rate_for(times, mid);
        out = {mid, rate};
        if (std::abs(rate - target) <= opts.tolerance) break;
        (rate > target ? lo : hi) = mid;
    }
    return out;
}

/// One synthetic cohort with U(0, c) censoring.
inline Cohort generate_cohort(Index n, const Eigen::VectorXd& beta0, Baseline baseline, double c, Rng& rng) {
    RowMatrix z = gen_covariates(n, rng);
    const Eigen::VectorXd t = gen_event_times(z, beta0, baseline, rng);
    Eigen::VectorXd x(n);
    std::vector<std::uint8_t> status(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) {
        const double ci = c * rng.uniform();
        const bool event = t(i) <= ci;
        x(i) = event ? t(i) : ci;
        status[static_cast<std::size_t>(i)] = event ? 1 : 0;
    }
    return Cohort::make(std::move(z), std::move(x), std::move(status));
}

/// Outcome of one Algorithm-1 run inside a replicate.
struct ReplicateEstimate {
    bool ok = false;
    Eigen::VectorXd beta;
    Eigen::VectorXd se;
    Eigen::VectorXd lower;
    Eigen::VectorXd upper;
    std::string error;
};

/// Summary for one (method, r) cell.
struct MetricsCell {
    Method method = Method::Uniform;
    Index r = 0;
    Eigen::VectorXd bias, sse, ese, cp;  // per coordinate; sse is NaN when fewer than 2 successes
    double mse = 0.0;
    double mse_se = 0.0;  // Monte Carlo standard error of mse
    int successes = 0;
    int failures = 0;
};

struct MetricsTable {
    int case_id = 0;
    std::vector<MetricsCell> cells;
    std::map<Index, double> relative_efficiency;  // MSE(uniform) / MSE(fullopt) by r

    const MetricsCell& cell(Method m, Index r) const {
        for (const auto& c : cells)
            if (c.method == m && c.r == r) return c;
        throw Error("no metrics for requested method and r");
    }
};

/**
 * Bias_j = mean(beta_j) - beta0_j, SSE_j = sample SD (B - 1 denominator),
 * ESE_j = mean reported SE, CP_j = coverage of beta0_j,
 * MSE = (1/B) sum_b |beta^(b) - beta0|^2. Failed replicates are counted
 * and excluded.
 */
inline MetricsCell compute_metrics(std::span<const ReplicateEstimate> reps, const Eigen::VectorXd& beta0) {
    MetricsCell cell;
    const Index p = beta0.size();
    std::vector<const ReplicateEstimate*> good;
    for (const auto& r : reps) {
        if (r.ok) good.push_back(&r);
        else ++cell.failures;
    }
    cell.successes = static_cast<int>(good.size());
    cell.bias = Eigen::VectorXd::Constant(p, std::nan(""));
    cell.sse = cell.bias;
    cell.ese = cell.bias;
    cell.cp = cell.bias;
    if (good.empty()) {
        cell.mse = cell.mse_se = std::nan("");
        return cell;
    }
    std::vector<double> col(good.size()), se(good.size());
    for (Index j = 0; j < p; ++j) {
        int covered = 0;
        for (std::size_t b = 0; b < good.size(); ++b) {
            col[b] = good[b]->beta(j);
            se[b] = good[b]->se(j);
            if (good[b]->lower(j) <= beta0(j) && beta0(j) <= good[b]->upper(j)) ++covered;
        }
        cell.bias(j) = mean(col) - beta0(j);
        cell.sse(j) = sample_sd(col);
        cell.ese(j) = mean(se);
        cell.cp(j) = static_cast<double>(covered) / static_cast<double>(good.size());
    }
    std::vector<double> sq(good.size());
    for (std::size_t b = 0; b < good.size(); ++b) sq[b] = (good[b]->beta - beta0).squaredNorm();
    cell.mse = mean(sq);
    cell.mse_se = good.size() > 1 ? sample_sd(sq) / std::sqrt(static_cast<double>(good.size())) : std::nan("");
    return cell;
}

struct ScenarioResult {
    ScenarioConfig config;
    Calibration calibration;
    MetricsTable metrics;
    // replicates[cell][b], cells ordered as metrics.cells
    std::vector<std::vector<ReplicateEstimate>> replicates;
    std::vector<std::string> warnings;
    int total_failures = 0;
};

/// Cell layout: methods outer, r inner.
inline std::vector<std::pair<Method, Index>> scenario_cells(const ScenarioConfig& cfg) {
    std::vector<std::pair<Method, Index>> cells;
    for (Method m : cfg.methods)
        for (Index r : cfg.r_grid) cells.emplace_back(m, r);
    return cells;
}

inline ReplicateEstimate estimate_once(const SortedCohort& cohort, Method method, Index r, double level, const Rng& rng,
                                       MeatForm meat = MeatForm::Events) {
    ReplicateEstimate est;
    try {
        Algorithm1Options opts;
        opts.meat = meat;
        opts.r = r;
        opts.method = method;
        const auto res = run_algorithm1(cohort, opts, rng);
        est.beta = res.fit.beta;
        est.se = res.fit.se();
        const auto ci = confidence_intervals(res.fit, level);
        est.lower.resize(est.beta.size());
        est.upper.resize(est.beta.size());
        for (Index j = 0; j < est.beta.size(); ++j) {
            est.lower(j) = ci[static_cast<std::size_t>(j)].lower;
            est.upper(j) = ci[static_cast<std::size_t>(j)].upper;
        }
        est.ok = est.beta.allFinite() && est.se.allFinite();
        if (!est.ok) est.error = "non-finite estimate";
    } catch (const Error& e) {
        est.error = e.what();
    }
    return est;
}

/**
 * Runs B replicates. Replicate b draws a fresh cohort from substream b of
 * the master seed and runs every (method, r) cell on it with its own
 * derived substream, so results do not depend on the thread count.
 */
inline ScenarioResult run_scenario(const ScenarioConfig& cfg, const CalibrationOptions& cal_opts = {}) {
    cfg.validate();
    ScenarioResult out;
    out.config = cfg;
    out.calibration = calibrate_censoring(cfg.beta0, cfg.baseline, cfg.target_censoring, cal_opts);
    const auto cells = scenario_cells(cfg);
    out.replicates.assign(cells.size(), std::vector<ReplicateEstimate>(static_cast<std::size_t>(cfg.b)));

    const Rng master(cfg.master_seed);
    parallel_for(static_cast<std::size_t>(cfg.b), cfg.threads, [&](std::size_t b) {
        const Rng rep = master.split(b);
        Rng data_rng = rep.split(0);
        const SortedCohort cohort(generate_cohort(cfg.n, cfg.beta0, cfg.baseline, out.calibration.c, data_rng));
        for (std::size_t c = 0; c < cells.size(); ++c) {
            out.replicates[c][b] = estimate_once(cohort, cells[c].first, cells[c].second, cfg.level, rep.split(1 + c), cfg.meat);
        }
    });

    out.metrics.case_id = cfg.case_id;
    for (std::size_t c = 0; c < cells.size(); ++c) {
        MetricsCell cell = compute_metrics(out.replicates[c], cfg.beta0);
        cell.method = cells[c].first;
        cell.r = cells[c].second;
        out.total_failures += cell.failures;
        if (cell.failures > 0.02 * cfg.b) {
            out.warnings.push_back(std::string(to_string(cell.method)) + " r=" + std::to_string(cell.r) + ": " +
                                   std::to_string(cell.failures) + " of " + std::to_string(cfg.b) +
                                   " replicates failed");
        }
        out.metrics.cells.push_back(std::move(cell));
    }
    const bool has_u = std::find(cfg.methods.begin(), cfg.methods.end(), Method::Uniform) != cfg.methods.end();
    const bool has_f = std::find(cfg.methods.begin(), cfg.methods.end(), Method::FullOpt) != cfg.methods.end();
    if (has_u && has_f) {
        for (Index r : cfg.r_grid) {
            out.metrics.relative_efficiency[r] =
                out.metrics.cell(Method::Uniform, r).mse / out.metrics.cell(Method::FullOpt, r).mse;
        }
    }
    return out;
}

namespace detail {
inline std::string fmt(double v) {
    if (std::isnan(v)) return "NA";
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}
}  // namespace detail

/// Tidy per-coordinate table: case,method,r,coord,bias,sse,ese,cp.
inline void write_metrics_csv(std::ostream& out, std::span<const MetricsTable> tables, bool header = true) {
    if (header) out << "case,method,r,coord,bias,sse,ese,cp\n";
    for (const auto& t : tables) {
        for (const auto& c : t.cells) {
            for (Index j = 0; j < c.bias.size(); ++j) {
                out << t.case_id << ',' << to_string(c.method) << ',' << c.r << ",beta" << (j + 1) << ','
                    << detail::fmt(c.bias(j)) << ',' << detail::fmt(c.sse(j)) << ',' << detail::fmt(c.ese(j)) << ','
                    << detail::fmt(c.cp(j)) << '\n';
            }
        }
    }
}

/// Per-cell table: case,method,r,mse,mse_se,successes,failures,relative_efficiency.
inline void write_mse_csv(std::ostream& out, std::span<const MetricsTable> tables, bool header = true) {
    if (header) out << "case,method,r,mse,mse_se,successes,failures,relative_efficiency\n";
    for (const auto& t : tables) {
        for (const auto& c : t.cells) {
            auto it = t.relative_efficiency.find(c.r);
            const double re = it == t.relative_efficiency.end() ? std::nan("") : it->second;
            out << t.case_id << ',' << to_string(c.method) << ',' << c.r << ',' << detail::fmt(c.mse) << ','
                << detail::fmt(c.mse_se) << ',' << c.successes << ',' << c.failures << ',' << detail::fmt(re) << '\n';
        }
    }
}

}  // namespace coxsub::sim
