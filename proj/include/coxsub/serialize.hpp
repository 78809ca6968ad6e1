#pragma once

// JSON views of fits, baselines, plans and subsamples.

#include "coxsub/cox_core.hpp"
#include "coxsub/sampling.hpp"
#include "coxsub/weighted_cox.hpp"

#include <Eigen/Core>
#include "json.hpp"

#include <cmath>
#include <vector>

namespace coxsub {

using Json = nlohmann::ordered_json;

namespace detail {

/// NaN and infinities become null.
inline Json num(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

inline Json vec(const Eigen::VectorXd& v) {
    Json a = Json::array();
    for (Index i = 0; i < v.size(); ++i) a.push_back(num(v(i)));
    return a;
}

inline Json vec(const std::vector<double>& v) {
    Json a = Json::array();
    for (double x : v) a.push_back(num(x));
    return a;
}

/// Row-major nested arrays.
inline Json mat(const Eigen::MatrixXd& m) {
    Json a = Json::array();
    for (Index i = 0; i < m.rows(); ++i) a.push_back(vec(Eigen::VectorXd(m.row(i).transpose())));
    return a;
}

}  // namespace detail

inline Json to_json(const CoxFit& fit) {
    return {{"beta", detail::vec(fit.beta)},
            {"loglik", detail::num(fit.loglik)},
            {"score_norm", detail::num(fit.score_norm)},
            {"hessian", detail::mat(fit.hessian)},
            {"iterations", fit.iterations},
            {"converged", fit.converged}};
}

inline Json to_json(const BaselineHazard& h) {
    return {{"times", detail::vec(h.times)}, {"increments", detail::vec(h.increments)},
            {"cumulative", detail::vec(h.cumulative)}};
}

inline Json to_json(const SubsamplingPlan& plan) {
    Json j{{"method", std::string(to_string(plan.method))},
           {"stratified", plan.stratified},
           {"event_rate", detail::num(plan.event_rate)},
           {"probs", detail::vec(plan.probs)}};
    if (!plan.warnings.empty()) j["warnings"] = plan.warnings;
    return j;
}

inline Json to_json(const Subsample& sub) {
    return {{"r", sub.r}, {"source_n", sub.source_n}, {"seed", sub.seed}, {"indices", sub.indices},
            {"probs", detail::vec(sub.probs_at_draw)}};
}

/// Weighted fit with Wald intervals, provenance and the Breslow curve.
inline Json to_json(const WeightedFit& fit, const WeightedBaseline& baseline, Method method, Index r,
                    std::uint64_t seed, double level) {
    const auto ci = confidence_intervals(fit, level);
    Eigen::VectorXd lo(fit.beta.size()), hi(fit.beta.size());
    for (Index j = 0; j < fit.beta.size(); ++j) {
        lo(j) = ci[static_cast<std::size_t>(j)].lower;
        hi(j) = ci[static_cast<std::size_t>(j)].upper;
    }
    Json j{{"beta", detail::vec(fit.beta)},
           {"sigma", detail::mat(fit.sigma)},
           {"se", detail::vec(fit.se())},
           {"ci_lower", detail::vec(lo)},
           {"ci_upper", detail::vec(hi)},
           {"level", level},
           {"method", std::string(to_string(method))},
           {"r", r},
           {"seed", seed},
           {"pilot_beta", detail::vec(fit.pilot_beta)},
           {"iterations", fit.iterations},
           {"converged", fit.converged},
           {"breslow", {{"times", detail::vec(baseline.hazard.times)},
                        {"cumulative", detail::vec(baseline.hazard.cumulative)}}}};
    if (baseline.lambda_variance) j["breslow"]["variance"] = detail::vec(baseline.lambda_variance->variance);
    return j;
}

}  // namespace coxsub
