#pragma once

// Cox partial-likelihood machinery on a sorted risk table: risk-set sums,
// log-likelihood, score, Hessian, Newton solver and the Breslow cumulative
// baseline hazard.
//
// Every routine here works on a RiskTable, so the same code serves the full
// cohort (unit weights, scale 1/N) and inverse-probability-weighted
// subsamples (weights 1/pi*, scale 1/(N r)). Ties follow the Breslow
// convention: all events at t_k share the risk set {j : X_j >= t_k}.

#include "coxsub/errors.hpp"
#include "coxsub/survival_data.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace coxsub {

struct LinearPredictor {
    Eigen::VectorXd eta;  // beta^T Z_i
    double max_eta = 0.0;
};

/**
 * S^(k)(beta, t_k) for k = 0, 1, 2 at every distinct event time.
 *
 * Values are stored divided by exp(log_scale); the true sums are
 * s0(k) * exp(log_scale) etc. Every ratio used downstream (Zbar, S2/S0)
 * is unaffected by the factor.
 */
struct RiskSetSums {
    Eigen::VectorXd s0;               // K
    Eigen::MatrixXd s1;               // p x K
    std::vector<Eigen::MatrixXd> s2;  // K matrices p x p; empty unless requested
    double log_scale = 0.0;

    Index size() const noexcept { return s0.size(); }
    Eigen::VectorXd zbar(Index k) const { return s1.col(k) / s0(k); }
};

/// Partial-likelihood value and derivatives at one coefficient vector.
struct PartialLikelihood {
    double loglik = 0.0;
    Eigen::VectorXd score;          // U(beta)
    Eigen::MatrixXd hessian;        // H(beta) = -dU/dbeta^T
    Eigen::VectorXd moment_diag;    // diagonal of the uncentered S2/S0 average; scale for singularity tests
};

struct CoxFit {
    Eigen::VectorXd beta;
    double loglik = 0.0;
    Eigen::VectorXd score;
    double score_norm = 0.0;  // max |U_j|
    Eigen::MatrixXd hessian;
    int iterations = 0;
    bool converged = false;
    std::vector<double> loglik_trace;
};

/// Right-continuous step function Lambda(t).
struct BaselineHazard {
    std::vector<double> times;
    std::vector<double> increments;
    std::vector<double> cumulative;

    double operator()(double t) const {
        auto it = std::upper_bound(times.begin(), times.end(), t);
        if (it == times.begin()) return 0.0;
        return cumulative[static_cast<std::size_t>(it - times.begin()) - 1];
    }
};

struct SolverOptions {
    int max_iter = 50;
    double tolerance = 1e-8;       // on max |U_j|
    double step_tolerance = 1e-10; // on max |step_j|
    int max_halvings = 20;
    double max_standardized_coef = 25.0;  // |beta_j| * sd(Z_j) beyond this signals a monotone likelihood
};

namespace detail {

inline double max_abs(const Eigen::VectorXd& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

inline void require_dim(const RiskTable& t, const Eigen::VectorXd& beta) {
    if (beta.size() != t.dim())
        throw DataError("coefficient length " + std::to_string(beta.size()) + " does not match covariate dimension " +
                        std::to_string(t.dim()));
}

inline void require_events(const RiskTable& t) {
    if (t.num_event_times() == 0) throw FitError("zero events");
}

inline LinearPredictor table_eta(const RiskTable& t, const Eigen::VectorXd& beta) {
    require_dim(t, beta);
    LinearPredictor lp;
    lp.eta = t.z * beta;
    if (!lp.eta.allFinite()) throw FitError("non-finite linear predictor");
    lp.max_eta = lp.eta.size() ? lp.eta.maxCoeff() : 0.0;
    return lp;
}

/// Weighted, stabilized exponentials w_i * exp(eta_i - max_eta).
inline Eigen::VectorXd stabilized_exp(const RiskTable& t, const LinearPredictor& lp) {
    Eigen::VectorXd e = (lp.eta.array() - lp.max_eta).exp();
    if (t.weighted()) e.array() *= t.weight.array();
    return e;
}

/**
 * Solves H x = b for symmetric positive-definite H. Throws FitError
 * "Hessian singular" when the Cholesky factorization fails, when a
 * diagonal entry is negligible next to the matching uncentered second
 * moment (a covariate constant on every risk set), or when a pivot
 * collapses relative to its diagonal (collinear covariates).
 */
inline Eigen::VectorXd solve_spd(const Eigen::MatrixXd& h, const Eigen::VectorXd& b,
                                 const Eigen::VectorXd& moment_diag = {}) {
    const Index p = h.rows();
    for (Index j = 0; j < p; ++j) {
        const double ref = moment_diag.size() ? moment_diag(j) : 0.0;
        if (!(h(j, j) > 0.0) || h(j, j) <= 1e-10 * ref) throw FitError("Hessian singular");
    }
    // Factor the correlation form so the pivot test is scale free.
    const Eigen::VectorXd d = h.diagonal().cwiseSqrt().cwiseInverse();
    const Eigen::MatrixXd c = d.asDiagonal() * h * d.asDiagonal();
    Eigen::LLT<Eigen::MatrixXd> llt(c);
    if (llt.info() != Eigen::Success) throw FitError("Hessian singular");
    const auto& l = llt.matrixLLT();
    for (Index j = 0; j < p; ++j) {
        if (!(l(j, j) * l(j, j) > 1e-12)) throw FitError("Hessian singular");
    }
    Eigen::VectorXd x = d.asDiagonal() * llt.solve(d.asDiagonal() * b);
    if (!x.allFinite()) throw FitError("Hessian singular");
    return x;
}

inline Eigen::MatrixXd inverse_spd(const Eigen::MatrixXd& h) {
    const Index p = h.rows();
    Eigen::MatrixXd inv(p, p);
    for (Index j = 0; j < p; ++j) inv.col(j) = solve_spd(h, Eigen::VectorXd::Unit(p, j));
    return 0.5 * (inv + inv.transpose());
}

}  // namespace detail

/// Linear predictors in original record order plus their maximum.
inline LinearPredictor linear_predictors(const SortedCohort& cohort, const Eigen::VectorXd& beta) {
    detail::require_dim(cohort.table(), beta);
    LinearPredictor lp;
    lp.eta = cohort.base().z * beta;
    if (!lp.eta.allFinite()) throw FitError("non-finite linear predictor");
    lp.max_eta = lp.eta.maxCoeff();
    return lp;
}

/**
 * One reverse pass over the sorted table accumulating suffix sums of
 * w e^{eta} Z^{(x)k}; the sums are read off at the start of each event
 * time's risk set.
 */
inline RiskSetSums risk_set_sums(const RiskTable& t, const Eigen::VectorXd& beta, bool with_s2 = true) {
    detail::require_events(t);
    const auto lp = detail::table_eta(t, beta);
    const Eigen::VectorXd e = detail::stabilized_exp(t, lp);
    const Index n = t.size();
    const Index p = t.dim();
    const Index nk = t.num_event_times();

    RiskSetSums out;
    out.log_scale = lp.max_eta;
    out.s0.resize(nk);
    out.s1.resize(p, nk);
    if (with_s2) out.s2.assign(static_cast<std::size_t>(nk), Eigen::MatrixXd(p, p));

    double a0 = 0.0;
    Eigen::VectorXd a1 = Eigen::VectorXd::Zero(p);
    Eigen::MatrixXd a2 = Eigen::MatrixXd::Zero(p, p);
    Index k = nk - 1;
    for (Index i = n - 1; i >= 0 && k >= 0; --i) {
        const double ei = e(i);
        const double* zi = t.z.row(i).data();
        a0 += ei;
        for (Index a = 0; a < p; ++a) a1(a) += ei * zi[a];
        if (with_s2) {
            for (Index b = 0; b < p; ++b)
                for (Index a = b; a < p; ++a) a2(a, b) += ei * zi[a] * zi[b];
        }
        while (k >= 0 && t.risk_begin[static_cast<std::size_t>(k)] == i) {
            if (!(a0 > 0.0)) throw FitError("empty risk set at event time");
            out.s0(k) = t.scale * a0;
            out.s1.col(k) = t.scale * a1;
            if (with_s2) {
                auto& s2 = out.s2[static_cast<std::size_t>(k)];
                s2 = t.scale * a2.selfadjointView<Eigen::Lower>();
            }
            --k;
        }
    }
    return out;
}

inline RiskSetSums risk_set_sums(const SortedCohort& c, const Eigen::VectorXd& beta, bool with_s2 = true) {
    return risk_set_sums(c.table(), beta, with_s2);
}

/**
 * Log partial likelihood, score and Hessian in a single pass without
 * materializing per-event-time sums. `order` selects how much to compute:
 * 0 = log-likelihood only, 1 = plus score, 2 = plus Hessian.
 */
inline PartialLikelihood evaluate_partial_likelihood(const RiskTable& t, const Eigen::VectorXd& beta, int order = 2) {
    detail::require_events(t);
    const auto lp = detail::table_eta(t, beta);
    const Eigen::VectorXd e = detail::stabilized_exp(t, lp);
    const Index n = t.size();
    const Index p = t.dim();
    const Index nk = t.num_event_times();

    PartialLikelihood out;
    out.score = Eigen::VectorXd::Zero(p);
    out.hessian = Eigen::MatrixXd::Zero(p, p);
    out.moment_diag = Eigen::VectorXd::Zero(p);

    double a0 = 0.0;
    Eigen::VectorXd a1 = Eigen::VectorXd::Zero(p);
    Eigen::MatrixXd a2 = Eigen::MatrixXd::Zero(p, p);
    Eigen::VectorXd zbar(p);
    double loglik = 0.0;
    Index k = nk - 1;
    for (Index i = n - 1; i >= 0; --i) {
        const double ei = e(i);
        const double* zi = t.z.row(i).data();
        a0 += ei;
        if (order >= 1) {
            for (Index a = 0; a < p; ++a) a1(a) += ei * zi[a];
        }
        if (order >= 2) {
            for (Index b = 0; b < p; ++b)
                for (Index a = b; a < p; ++a) a2(a, b) += ei * zi[a] * zi[b];
        }
        if (t.status[static_cast<std::size_t>(i)]) {
            const double wi = t.w(i);
            loglik += wi * lp.eta(i);
            if (order >= 1) {
                for (Index a = 0; a < p; ++a) out.score(a) += wi * zi[a];
            }
        }
        while (k >= 0 && t.risk_begin[static_cast<std::size_t>(k)] == i) {
            if (!(a0 > 0.0)) throw FitError("empty risk set at event time");
            const double d = t.event_weight(k);
            loglik -= d * (std::log(t.inner_scale * a0) + lp.max_eta);
            if (order >= 1) {
                zbar = a1 / a0;
                out.score.noalias() -= d * zbar;
            }
            if (order >= 2) {
                for (Index b = 0; b < p; ++b) {
                    for (Index a = b; a < p; ++a) out.hessian(a, b) += d * (a2(a, b) / a0 - zbar(a) * zbar(b));
                    out.moment_diag(b) += d * a2(b, b) / a0;
                }
            }
            --k;
        }
    }
    out.loglik = t.scale * loglik;
    out.score *= t.scale;
    out.hessian = (t.scale * out.hessian).selfadjointView<Eigen::Lower>();
    out.moment_diag *= t.scale;
    if (!std::isfinite(out.loglik)) throw FitError("non-finite log partial likelihood");
    return out;
}

/// l(beta) = (1/N) sum_i delta_i [beta^T Z_i - log sum_j Y_j(X_i) exp(beta^T Z_j)].
inline double log_partial_likelihood(const RiskTable& t, const Eigen::VectorXd& beta) {
    detail::require_dim(t, beta);
    if (t.num_event_times() == 0) return 0.0;
    return evaluate_partial_likelihood(t, beta, 0).loglik;
}

inline double log_partial_likelihood(const SortedCohort& c, const Eigen::VectorXd& beta) {
    return log_partial_likelihood(c.table(), beta);
}

struct ScoreHessian {
    Eigen::VectorXd score;
    Eigen::MatrixXd hessian;
};

inline ScoreHessian score_and_hessian(const RiskTable& t, const Eigen::VectorXd& beta) {
    auto pl = evaluate_partial_likelihood(t, beta, 2);
    return {std::move(pl.score), std::move(pl.hessian)};
}

inline ScoreHessian score_and_hessian(const SortedCohort& c, const Eigen::VectorXd& beta) {
    return score_and_hessian(c.table(), beta);
}

namespace detail {

/// Throws when a coefficient runs off towards infinity (separated data):
/// the likelihood keeps rising while the score flattens out.
inline void check_divergence(const RiskTable& t, const Eigen::VectorXd& beta, int iter, const SolverOptions& opts) {
    const Index n = t.size();
    long double wsum = 0.0L;
    for (Index i = 0; i < n; ++i) wsum += t.w(i);
    for (Index j = 0; j < t.dim(); ++j) {
        long double m = 0.0L, m2 = 0.0L;
        for (Index i = 0; i < n; ++i) {
            m += t.w(i) * t.z(i, j);
            m2 += t.w(i) * t.z(i, j) * t.z(i, j);
        }
        m /= wsum;
        const double sd = std::sqrt(std::max(0.0L, m2 / wsum - m * m));
        if (std::abs(beta(j)) * sd > opts.max_standardized_coef)
            throw ConvergenceError("coefficient " + std::to_string(j + 1) + " diverges (monotone likelihood)", beta,
                                   iter);
    }
}

}  // namespace detail

/**
 * Newton-Raphson with step halving on the log partial likelihood.
 *
 * A step is accepted once the log-likelihood does not decrease beyond
 * rounding; up to `max_halvings` halvings are tried. Stops when the step falls below
 * `step_tolerance`, or one polishing step after max|U| <= tolerance.
 */
inline CoxFit newton_solve(const RiskTable& t, const Eigen::VectorXd& beta_init, const SolverOptions& opts = {}) {
    detail::require_dim(t, beta_init);
    detail::require_events(t);

    CoxFit fit;
    Eigen::VectorXd beta = beta_init;
    PartialLikelihood cur = evaluate_partial_likelihood(t, beta, 2);
    fit.loglik_trace.push_back(cur.loglik);

    int iter = 0;
    bool polish = detail::max_abs(cur.score) <= opts.tolerance;
    for (bool done = false; !done;) {
        if (iter >= opts.max_iter)
            throw ConvergenceError("no convergence after " + std::to_string(opts.max_iter) + " iterations", beta, iter);
        Eigen::VectorXd step = detail::solve_spd(cur.hessian, cur.score, cur.moment_diag);
        bool accepted = false;
        for (int h = 0; h <= opts.max_halvings; ++h) {
            if (detail::max_abs(step) <= opts.step_tolerance) {
                done = true;
                break;
            }
            const Eigen::VectorXd cand = beta + step;
            double ll = -std::numeric_limits<double>::infinity();
            try {
                ll = evaluate_partial_likelihood(t, cand, 0).loglik;
            } catch (const FitError&) {
                // non-finite candidate: treat as a decrease and halve
            }
            // Changes below rounding level in the log-likelihood count as ascent.
            const double slack = 64 * std::numeric_limits<double>::epsilon() * (1.0 + std::abs(cur.loglik));
            if (ll >= cur.loglik - slack) {
                beta = cand;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (done) break;
        if (!accepted) {
            // Near the optimum rounding can defeat the ascent test.
            if (polish) break;
            throw ConvergenceError("step halving failed to increase the log-likelihood", beta, iter);
        }
        ++iter;
        cur = evaluate_partial_likelihood(t, beta, 2);
        fit.loglik_trace.push_back(cur.loglik);
        if (polish || detail::max_abs(step) <= opts.step_tolerance) break;
        polish = detail::max_abs(cur.score) <= opts.tolerance;
    }
    detail::check_divergence(t, beta, iter, opts);
    // The Hessian returned must be usable for inference.
    (void)detail::solve_spd(cur.hessian, cur.score, cur.moment_diag);

    fit.beta = std::move(beta);
    fit.loglik = cur.loglik;
    fit.score = cur.score;
    fit.score_norm = detail::max_abs(cur.score);
    fit.hessian = cur.hessian;
    fit.iterations = iter;
    fit.converged = true;
    return fit;
}

inline CoxFit newton_solve(const SortedCohort& c, const Eigen::VectorXd& beta_init, const SolverOptions& opts = {}) {
    return newton_solve(c.table(), beta_init, opts);
}

inline CoxFit newton_solve(const SortedCohort& c, const SolverOptions& opts = {}) {
    return newton_solve(c.table(), Eigen::VectorXd::Zero(c.dim()), opts);
}

/**
 * Breslow estimator: jump at t_k equals the (weighted) number of events at
 * t_k divided by the (weighted) risk-set sum of exp(beta^T Z_j). For an
 * inverse-probability-weighted table this is the subsample estimator of
 * the cumulative baseline hazard.
 */
inline BaselineHazard breslow(const RiskTable& t, const Eigen::VectorXd& beta) {
    detail::require_dim(t, beta);
    BaselineHazard out;
    if (t.num_event_times() == 0) return out;
    const auto sums = risk_set_sums(t, beta, false);
    const Index nk = sums.size();
    out.times = t.event_times;
    out.increments.resize(static_cast<std::size_t>(nk));
    out.cumulative.resize(static_cast<std::size_t>(nk));
    const double shift = std::exp(-sums.log_scale);
    double acc = 0.0;
    for (Index k = 0; k < nk; ++k) {
        // sums.s0 carries t.scale; the raw weighted risk sum is s0 / scale.
        const double inc = t.event_weight(k) * t.scale / sums.s0(k) * shift;
        out.increments[static_cast<std::size_t>(k)] = inc;
        acc += inc;
        out.cumulative[static_cast<std::size_t>(k)] = acc;
    }
    return out;
}

inline BaselineHazard breslow(const SortedCohort& c, const Eigen::VectorXd& beta) { return breslow(c.table(), beta); }

/**
 * Risk-set influence vectors in table (sorted) order:
 *
 *   q_i = e^{eta_i} sum_{t_k <= X_i} (Z_i - Zbar_k) dNbar_k / S0_k,
 *
 * where dNbar_k = scale * (weighted events at t_k). One forward pass with
 * running sums of dNbar_k / S0_k and Zbar_k dNbar_k / S0_k.
 */
inline RowMatrix table_q_scores(const RiskTable& t, const Eigen::VectorXd& beta, const RiskSetSums& sums) {
    const Index n = t.size();
    const Index p = t.dim();
    const Index nk = sums.size();
    const Eigen::VectorXd eta = t.z * beta;
    RowMatrix q = RowMatrix::Zero(n, p);
    double a = 0.0;
    Eigen::VectorXd b = Eigen::VectorXd::Zero(p);
    Index k = -1;
    for (Index i = 0; i < n; ++i) {
        while (k + 1 < nk && t.event_times[static_cast<std::size_t>(k + 1)] <= t.time(i)) {
            ++k;
            const double c = t.scale * t.event_weight(k) / sums.s0(k);
            a += c;
            b += c * sums.s1.col(k) / sums.s0(k);
        }
        if (k < 0) continue;
        const double e = std::exp(eta(i) - sums.log_scale);
        q.row(i) = (e * (a * t.z.row(i).transpose() - b)).transpose();
    }
    return q;
}

}  // namespace coxsub
