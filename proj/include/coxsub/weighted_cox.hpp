#pragma once

// Inverse-probability-weighted Cox estimation on a drawn subsample:
// weighted estimating equation, sandwich covariance, weighted Breslow
// estimator with its variance, and Wald intervals.

#include "coxsub/cox_core.hpp"
#include "coxsub/sampling.hpp"
#include "coxsub/stats.hpp"

#include <Eigen/Core>

#include <cmath>
#include <optional>
#include <vector>

namespace coxsub {

using WeightedRiskSums = RiskSetSums;

struct WeightedFit {
    Eigen::VectorXd beta;
    Eigen::MatrixXd sigma;    // H^-1 V H^-1, already on the variance scale of beta-tilde
    Eigen::MatrixXd h_tilde;
    Eigen::MatrixXd v_tilde;
    double score_norm = 0.0;
    int iterations = 0;
    bool converged = false;
    Eigen::VectorXd pilot_beta;

    Eigen::VectorXd se() const { return sigma.diagonal().cwiseMax(0.0).cwiseSqrt(); }
};

/// Cumulative-hazard variance pieces at each jump time of the weighted
/// Breslow estimator.
struct LambdaVariance {
    Eigen::MatrixXd gamma;     // p x K
    Eigen::VectorXd psi;       // K
    Eigen::VectorXd phi;       // p
    Eigen::VectorXd variance;  // K: gamma' Sigma gamma + psi + gamma' H^-1 phi
};

struct WeightedBaseline {
    BaselineHazard hazard;
    std::optional<LambdaVariance> lambda_variance;

    double operator()(double t) const { return hazard(t); }

    /// Variance estimate of the cumulative hazard at t (0 before the first jump).
    double variance_at(double t) const {
        if (!lambda_variance) throw Error("baseline variance was not computed");
        auto it = std::upper_bound(hazard.times.begin(), hazard.times.end(), t);
        if (it == hazard.times.begin()) return 0.0;
        return lambda_variance->variance(static_cast<Index>(it - hazard.times.begin()) - 1);
    }
};

struct Interval {
    double lower = 0.0;
    double upper = 0.0;
};

/**
 * Gathers the drawn records into a sorted risk table with weights
 * 1/pi*_i and prefactor 1/(N r). The inner log-likelihood scale 1/r makes
 * the weighted log-likelihood coincide with the full-data one when the
 * subsample enumerates the cohort once with pi = 1/N; it only shifts the
 * objective by a constant.
 */
inline RiskTable subsample_table(const Subsample& sub, const SortedCohort& cohort) {
    if (sub.indices.empty()) throw Error("empty subsample");
    if (sub.source_n != cohort.size()) throw DataError("subsample was drawn from a cohort of a different size");
    const auto r = static_cast<Index>(sub.indices.size());
    const Cohort& base = cohort.base();
    RowMatrix z(r, base.dim());
    Eigen::VectorXd time(r), weight(r);
    std::vector<std::uint8_t> status(static_cast<std::size_t>(r));
    for (Index k = 0; k < r; ++k) {
        const Index i = sub.indices[static_cast<std::size_t>(k)];
        const double pi = sub.probs_at_draw[static_cast<std::size_t>(k)];
        if (i < 0 || i >= base.size()) throw Error("subsample index out of range");
        if (!(pi > 0.0)) throw Error("subsample probability must be positive");
        z.row(k) = base.z.row(i);
        time(k) = base.time(i);
        status[static_cast<std::size_t>(k)] = base.status[static_cast<std::size_t>(i)];
        weight(k) = 1.0 / pi;
    }
    const double n = static_cast<double>(cohort.size());
    RiskTable t = make_risk_table(z, time, status, weight, 1.0 / (n * static_cast<double>(r)),
                                  1.0 / static_cast<double>(r));
    if (t.num_event_times() == 0) throw FitError("subsample has no events");
    return t;
}

inline WeightedRiskSums weighted_risk_sums(const Subsample& sub, const SortedCohort& cohort, const Eigen::VectorXd& beta) {
    return risk_set_sums(subsample_table(sub, cohort), beta, true);
}

inline ScoreHessian weighted_score_hessian(const Subsample& sub, const SortedCohort& cohort, const Eigen::VectorXd& beta) {
    return score_and_hessian(subsample_table(sub, cohort), beta);
}

inline double weighted_log_likelihood(const Subsample& sub, const SortedCohort& cohort, const Eigen::VectorXd& beta) {
    return log_partial_likelihood(subsample_table(sub, cohort), beta);
}

/**
 * Which middle matrix the sandwich uses.
 *
 * `Events`: V-tilde = (1/(N r)^2) sum_i pi*_i^-2 delta*_i (Z*_i - Zbar*(X*_i))^{(x)2}.
 * `Influence`: the same sum over every drawn record of the full influence
 * psi*_i = delta*_i (Z*_i - Zbar*(X*_i)) - q*_i, with q*_i the risk-set
 * influence recomputed on the weighted subsample.
 */
enum class MeatForm { Events, Influence };

inline Eigen::MatrixXd weighted_meat(const RiskTable& t, const Eigen::VectorXd& beta, MeatForm form = MeatForm::Events) {
    const auto sums = risk_set_sums(t, beta, false);
    const Index p = t.dim();
    Eigen::MatrixXd v = Eigen::MatrixXd::Zero(p, p);
    Eigen::VectorXd dev(p);
    if (form == MeatForm::Events) {
        for (Index k = 0; k < sums.size(); ++k) {
            const Eigen::VectorXd zbar = sums.zbar(k);
            for (Index i = t.risk_begin[static_cast<std::size_t>(k)]; i < t.event_end[static_cast<std::size_t>(k)]; ++i) {
                const double w = t.w(i);
                dev = t.z.row(i).transpose() - zbar;
                v.noalias() += (w * w) * dev * dev.transpose();
            }
        }
    } else {
        const RowMatrix q = table_q_scores(t, beta, sums);
        for (Index i = 0; i < t.size(); ++i) {
            dev = -q.row(i).transpose();
            if (t.status[static_cast<std::size_t>(i)]) {
                dev += t.z.row(i).transpose() - sums.zbar(t.last_event_at_or_before(t.time(i)));
            }
            const double w = t.w(i);
            v.noalias() += (w * w) * dev * dev.transpose();
        }
    }
    return (t.scale * t.scale) * v;
}

struct Sandwich {
    Eigen::MatrixXd sigma;
    Eigen::MatrixXd v_tilde;
};

inline Sandwich sandwich_variance(const RiskTable& t, const Eigen::VectorXd& beta, const Eigen::MatrixXd& h_tilde,
                                  MeatForm form = MeatForm::Events) {
    Sandwich out;
    out.v_tilde = weighted_meat(t, beta, form);
    const Eigen::MatrixXd hinv = detail::inverse_spd(h_tilde);
    out.sigma = hinv * out.v_tilde * hinv;
    out.sigma = 0.5 * (out.sigma + out.sigma.transpose());
    return out;
}

inline Sandwich sandwich_variance(const Subsample& sub, const SortedCohort& cohort, const Eigen::VectorXd& beta,
                                  const Eigen::MatrixXd& h_tilde, MeatForm form = MeatForm::Events) {
    return sandwich_variance(subsample_table(sub, cohort), beta, h_tilde, form);
}

/// Weighted Newton fit; also fills H-tilde and the sandwich covariance.
inline WeightedFit weighted_newton(const RiskTable& t, const Eigen::VectorXd& beta_init, const SolverOptions& opts = {},
                                   MeatForm form = MeatForm::Events) {
    const CoxFit cf = newton_solve(t, beta_init, opts);
    WeightedFit fit;
    fit.beta = cf.beta;
    fit.h_tilde = cf.hessian;
    fit.score_norm = cf.score_norm;
    fit.iterations = cf.iterations;
    fit.converged = cf.converged;
    auto sw = sandwich_variance(t, fit.beta, fit.h_tilde, form);
    fit.sigma = std::move(sw.sigma);
    fit.v_tilde = std::move(sw.v_tilde);
    return fit;
}

inline WeightedFit weighted_newton(const Subsample& sub, const SortedCohort& cohort, const Eigen::VectorXd& beta_init,
                                   const SolverOptions& opts = {}, MeatForm form = MeatForm::Events) {
    return weighted_newton(subsample_table(sub, cohort), beta_init, opts, form);
}

/**
 * Variance of the weighted Breslow estimator at each of its jump times,
 * from subsample plug-ins of Gamma, Psi and Phi: population sums weighted
 * by 1/pi_i become draw sums weighted by 1/(r pi*_i) * 1/pi*_i, the same
 * pattern that turns V into V-tilde.
 */
inline LambdaVariance lambda_variance(const RiskTable& t, const Eigen::VectorXd& beta, const Eigen::MatrixXd& sigma,
                                      const Eigen::MatrixXd& h_tilde) {
    const auto sums = risk_set_sums(t, beta, false);
    const Index nk = sums.size();
    const Index p = t.dim();
    const Index n = t.size();
    const double m = sums.log_scale;
    const double s = t.scale;
    const Eigen::VectorXd eta = t.z * beta;

    LambdaVariance out;
    out.gamma.resize(p, nk);
    out.psi.resize(nk);
    out.phi = Eigen::VectorXd::Zero(p);
    out.variance.resize(nk);

    // True S^(0) at t_k is sums.s0(k) * e^m.
    Eigen::VectorXd s0_true(nk), g(nk), psi_events(nk);
    Eigen::VectorXd gamma_acc = Eigen::VectorXd::Zero(p);
    double g_acc = 0.0;
    double psi1_acc = 0.0;
    for (Index k = 0; k < nk; ++k) {
        s0_true(k) = sums.s0(k) * std::exp(m);
        const double dnbar = s * t.event_weight(k);
        const Eigen::VectorXd zbar = sums.zbar(k);
        gamma_acc += zbar * (dnbar / s0_true(k));
        out.gamma.col(k) = gamma_acc;
        g_acc += dnbar / (s0_true(k) * s0_true(k));
        g(k) = g_acc;  // G(t_k) = sum_{l <= k} dNbar_l / S0_l^2
        double w2 = 0.0;
        for (Index i = t.risk_begin[static_cast<std::size_t>(k)]; i < t.event_end[static_cast<std::size_t>(k)]; ++i) {
            const double w = t.w(i);
            w2 += w * w;
            out.phi += (w * w) * (t.z.row(i).transpose() - zbar) / s0_true(k);
        }
        psi1_acc += s * s * w2 / (s0_true(k) * s0_true(k));
        psi_events(k) = psi1_acc;
    }
    out.phi *= s * s;

    // Second Psi term: sum_i w_i^2 [e^{eta_i} G(min(t, X_i))]^2.
    // Records with X_i >= t_k contribute G(t_k)^2 * w^2 e^{2 eta}; earlier
    // ones contribute their own frozen value.
    Eigen::VectorXd frozen(n), suffix_e2(n + 1);
    suffix_e2(n) = 0.0;
    for (Index i = n - 1; i >= 0; --i) {
        const double w = t.w(i);
        suffix_e2(i) = suffix_e2(i + 1) + w * w * std::exp(2.0 * eta(i));
    }
    {
        Index k = -1;
        for (Index i = 0; i < n; ++i) {
            while (k + 1 < nk && t.event_times[static_cast<std::size_t>(k + 1)] <= t.time(i)) ++k;
            const double gi = k >= 0 ? g(k) : 0.0;
            const double w = t.w(i);
            const double c = std::exp(eta(i)) * gi;
            frozen(i) = w * w * c * c;
        }
    }
    Eigen::VectorXd prefix_frozen(n + 1);
    prefix_frozen(0) = 0.0;
    for (Index i = 0; i < n; ++i) prefix_frozen(i + 1) = prefix_frozen(i) + frozen(i);

    const Eigen::MatrixXd hinv = detail::inverse_spd(h_tilde);
    const Eigen::VectorXd hinv_phi = hinv * out.phi;
    for (Index k = 0; k < nk; ++k) {
        const Index begin = t.risk_begin[static_cast<std::size_t>(k)];
        const double psi2 = g(k) * g(k) * suffix_e2(begin) + prefix_frozen(begin);
        out.psi(k) = psi_events(k) + s * s * psi2;
        const Eigen::VectorXd gk = out.gamma.col(k);
        out.variance(k) = gk.dot(sigma * gk) + out.psi(k) + gk.dot(hinv_phi);
    }
    return out;
}

inline WeightedBaseline weighted_breslow(const RiskTable& t, const WeightedFit& fit, bool with_variance) {
    WeightedBaseline out;
    out.hazard = breslow(t, fit.beta);
    if (with_variance) out.lambda_variance = lambda_variance(t, fit.beta, fit.sigma, fit.h_tilde);
    return out;
}

inline WeightedBaseline weighted_breslow(const Subsample& sub, const SortedCohort& cohort, const WeightedFit& fit,
                                         bool with_variance) {
    return weighted_breslow(subsample_table(sub, cohort), fit, with_variance);
}

inline WeightedBaseline weighted_breslow(const Subsample& sub, const SortedCohort& cohort, const Eigen::VectorXd& beta) {
    WeightedBaseline out;
    out.hazard = breslow(subsample_table(sub, cohort), beta);
    return out;
}

/// Wald intervals beta_j +- z_{(1+level)/2} sqrt(Sigma_jj).
inline std::vector<Interval> confidence_intervals(const WeightedFit& fit, double level) {
    if (!(level > 0.0 && level < 1.0)) throw Error("confidence level must lie in (0, 1)");
    const double z = normal_quantile(0.5 * (1.0 + level));
    const Eigen::VectorXd se = fit.se();
    std::vector<Interval> out(static_cast<std::size_t>(fit.beta.size()));
    for (Index j = 0; j < fit.beta.size(); ++j) {
        out[static_cast<std::size_t>(j)] = {fit.beta(j) - z * se(j), fit.beta(j) + z * se(j)};
    }
    return out;
}

}  // namespace coxsub
