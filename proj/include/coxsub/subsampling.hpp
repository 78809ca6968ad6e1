#pragma once

// Subsampling probabilities (uniform, censored-stratum optimal, fully
// optimal), influence scores q_i, the uniform pilot stage, and the
// two-stage optimal subsampling driver.

#include "coxsub/cox_core.hpp"
#include "coxsub/sampling.hpp"
#include "coxsub/weighted_cox.hpp"

#include <Eigen/Core>

#include <cmath>
#include <string>
#include <vector>

namespace coxsub {

/**
 * Per-record influence vectors
 *
 *   q_i = int (Z_i - Zbar(t)) Y_i(t) e^{beta'Z_i} / S0(t) dNbar(t),
 *
 * with Nbar the average counting process. Row i of `q` belongs to original
 * record i. `event_residual_norms(i)` is |Z_i - Zbar(X_i)| for failures and
 * 0 for censored records; it enters the failure-stratum probabilities.
 */
struct QScores {
    RowMatrix q;
    Eigen::VectorXd norms;
    Eigen::VectorXd event_residual_norms;
};

inline QScores q_scores(const SortedCohort& cohort, const Eigen::VectorXd& beta) {
    const RiskTable& t = cohort.table();
    const auto sums = risk_set_sums(t, beta, false);
    const RowMatrix q_sorted = table_q_scores(t, beta, sums);
    const Index n = t.size();

    QScores out;
    out.q.resize(n, t.dim());
    out.norms.resize(n);
    out.event_residual_norms.setZero(n);
    const auto& order = cohort.order();
    for (Index pos = 0; pos < n; ++pos) {
        const Index i = order[static_cast<std::size_t>(pos)];
        out.q.row(i) = q_sorted.row(pos);
        out.norms(i) = q_sorted.row(pos).norm();
        if (t.status[static_cast<std::size_t>(pos)]) {
            // An event at X_i sits exactly on an event time.
            const Index k = t.last_event_at_or_before(t.time(pos));
            out.event_residual_norms(i) = (t.z.row(pos).transpose() - sums.zbar(k)).norm();
        }
    }
    return out;
}

namespace detail {

inline SubsamplingPlan plan_skeleton(const SortedCohort& cohort, Method method) {
    SubsamplingPlan plan;
    plan.method = method;
    plan.event_rate = cohort.event_rate();
    plan.s0 = cohort.s0_index();
    plan.s1 = cohort.s1_index();
    plan.probs.setZero(cohort.size());
    return plan;
}

/// Assigns mass * w_i / sum(w) over `members`. Returns false if sum(w) == 0.
inline bool spread_mass(Eigen::VectorXd& probs, const std::vector<Index>& members, const Eigen::VectorXd& w, double mass) {
    long double total = 0.0L;
    for (Index i : members) total += w(i);
    if (!(total > 0.0L)) return false;
    for (Index i : members) probs(i) = static_cast<double>(static_cast<long double>(mass) * w(i) / total);
    return true;
}

inline SubsamplingPlan optimal_plan(const SortedCohort& cohort, const Eigen::VectorXd& beta, Method method) {
    if (cohort.num_events() == 0) throw FitError("zero events");
    if (!beta.allFinite()) throw FitError("pilot estimate is not finite");
    SubsamplingPlan plan = plan_skeleton(cohort, method);
    plan.stratified = true;
    const QScores qs = q_scores(cohort, beta);
    const double delta = plan.event_rate;

    if (plan.s0.empty()) {
        plan.warnings.push_back("censored stratum is empty; its mass is assigned to the failure stratum");
    } else if (!spread_mass(plan.probs, plan.s0, qs.norms, 1.0 - delta)) {
        throw FitError("degenerate censored stratum");
    }

    if (method == Method::CenOpt) {
        for (Index i : plan.s1) plan.probs(i) = delta / static_cast<double>(plan.s1.size());
    } else {
        Eigen::VectorXd w = Eigen::VectorXd::Zero(cohort.size());
        for (Index i : plan.s1) w(i) = std::hypot(qs.event_residual_norms(i), qs.norms(i));
        if (!spread_mass(plan.probs, plan.s1, w, delta)) throw FitError("degenerate failure stratum");
    }
    return plan;
}

}  // namespace detail

/// pi_i = 1/N for every record; not stratified.
inline SubsamplingPlan uniform_probs(const SortedCohort& cohort) {
    SubsamplingPlan plan = detail::plan_skeleton(cohort, Method::Uniform);
    plan.probs.setConstant(1.0 / static_cast<double>(cohort.size()));
    return plan;
}

/// Censored stratum proportional to |q_i| with mass 1 - delta-bar; failures
/// uniform within their stratum (pi_i = 1/N).
inline SubsamplingPlan cenopt_probs(const SortedCohort& cohort, const Eigen::VectorXd& beta_pilot) {
    return detail::optimal_plan(cohort, beta_pilot, Method::CenOpt);
}

/// Censored stratum proportional to |q_i|; failures proportional to
/// sqrt(|Z_i - Zbar(X_i)|^2 + |q_i|^2). Stratum masses 1 - delta-bar and delta-bar.
inline SubsamplingPlan fullopt_probs(const SortedCohort& cohort, const Eigen::VectorXd& beta_pilot) {
    return detail::optimal_plan(cohort, beta_pilot, Method::FullOpt);
}

inline SubsamplingPlan make_plan(const SortedCohort& cohort, Method method, const Eigen::VectorXd& beta_pilot) {
    switch (method) {
        case Method::Uniform: return uniform_probs(cohort);
        case Method::CenOpt: return cenopt_probs(cohort, beta_pilot);
        case Method::FullOpt: return fullopt_probs(cohort, beta_pilot);
    }
    throw Error("unknown method");
}

struct PilotResult {
    Eigen::VectorXd beta;
    Subsample subsample;
    int attempts = 0;
};

/**
 * Stratified uniform pilot: round(r * delta-bar) failures and the rest
 * censored records, each drawn uniformly within its stratum and weighted
 * with pi_i = 1/N. Solved from beta = 0; a failed fit is redrawn from a
 * fresh substream, up to 5 attempts.
 */
inline PilotResult pilot_stage(const SortedCohort& cohort, Index r, const Rng& rng, const SolverOptions& opts = {}) {
    if (cohort.num_events() == 0) throw FitError("pilot failed: cohort has no events");
    if (r < 2 * (cohort.dim() + 1))
        throw Error("pilot subsample size must be at least 2(p+1) = " + std::to_string(2 * (cohort.dim() + 1)));
    SubsamplingPlan plan = uniform_probs(cohort);
    plan.stratified = true;

    std::string last_error;
    constexpr int max_attempts = 5;
    for (int attempt = 0; attempt < max_attempts; ++attempt) {
        Rng sub_rng = rng.split(static_cast<std::uint64_t>(attempt));
        Subsample sub = draw_subsample(plan, r, sub_rng);
        try {
            const RiskTable t = subsample_table(sub, cohort);
            CoxFit fit = newton_solve(t, Eigen::VectorXd::Zero(cohort.dim()), opts);
            return {std::move(fit.beta), std::move(sub), attempt + 1};
        } catch (const FitError& e) {
            last_error = e.what();
        }
    }
    throw FitError("pilot failed after 5 attempts: " + last_error);
}

struct Algorithm1Options {
    Index r = 500;
    Method method = Method::FullOpt;
    bool lambda_variance = false;
    MeatForm meat = MeatForm::Events;
    SolverOptions solver{};
};

struct Algorithm1Result {
    WeightedFit fit;
    WeightedBaseline baseline;
    Subsample subsample;
    Subsample pilot_subsample;
    std::vector<std::string> warnings;
};

/**
 * Two-stage optimal subsampling: pilot, probabilities from the pilot
 * estimate, a size-r draw, the weighted Newton fit started at the pilot,
 * sandwich covariance and the weighted Breslow estimator. Errors carry the
 * failing stage in their message.
 */
inline Algorithm1Result run_algorithm1(const SortedCohort& cohort, const Algorithm1Options& opts, const Rng& rng) {
    auto staged = [](const char* stage, auto&& fn) {
        try {
            return fn();
        } catch (const ConvergenceError& e) {
            throw ConvergenceError(std::string(stage) + ": " + e.what(), e.last_beta(), e.iterations());
        } catch (const FitError& e) {
            throw FitError(std::string(stage) + ": " + e.what());
        }
    };

    Algorithm1Result out;
    PilotResult pilot = staged("pilot", [&] { return pilot_stage(cohort, opts.r, rng.split(1), opts.solver); });
    const SubsamplingPlan plan = staged("probabilities", [&] { return make_plan(cohort, opts.method, pilot.beta); });
    out.warnings = plan.warnings;
    Rng draw_rng = rng.split(2);
    out.subsample = draw_subsample(plan, opts.r, draw_rng);
    const RiskTable t = staged("subsample", [&] { return subsample_table(out.subsample, cohort); });
    out.fit = staged("fit", [&] { return weighted_newton(t, pilot.beta, opts.solver, opts.meat); });
    out.fit.pilot_beta = pilot.beta;
    out.baseline = staged("baseline", [&] { return weighted_breslow(t, out.fit, opts.lambda_variance); });
    out.pilot_subsample = std::move(pilot.subsample);
    return out;
}

}  // namespace coxsub
