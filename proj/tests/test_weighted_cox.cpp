#include "helpers.hpp"

#include <Eigen/LU>
#include <gtest/gtest.h>

using namespace coxsub;
using testing_util::close;

namespace {

struct Drawn {
    oracle::Sample full;
    SortedCohort cohort;
    Subsample sub;
    oracle::Sample gathered;
};

Drawn draw(std::uint64_t seed, int n, int p, Index r, Method method) {
    std::mt19937_64 gen(seed);
    auto full = oracle::random_sample(gen, n, p);
    SortedCohort cohort(testing_util::to_cohort(full));
    const auto plan = make_plan(cohort, method, Eigen::VectorXd::Constant(p, 0.2));
    Rng rng(seed);
    Subsample sub = draw_subsample(plan, r, rng);
    auto gathered = testing_util::gather(full, sub);
    return {std::move(full), std::move(cohort), std::move(sub), std::move(gathered)};
}

}  // namespace

TEST(WeightedSums, MatchDirectSums) {
    for (int rep = 0; rep < 20; ++rep) {
        const auto d = draw(100 + rep, 150, 3, 60, rep % 2 ? Method::FullOpt : Method::CenOpt);
        Eigen::VectorXd beta(3);
        beta << 0.1, -0.3, 0.5;
        const auto sums = weighted_risk_sums(d.sub, d.cohort, beta);
        const auto times = oracle::event_times(d.gathered);
        ASSERT_EQ(static_cast<std::size_t>(sums.size()), times.size());
        const double f = std::exp(sums.log_scale);
        for (std::size_t k = 0; k < times.size(); ++k) {
            const auto m = oracle::moments_at(d.gathered, beta, times[k]);
            EXPECT_NEAR(sums.s0(static_cast<Index>(k)) * f, m.s0, 1e-12 * m.s0);
            EXPECT_TRUE(close(Eigen::VectorXd(sums.s1.col(static_cast<Index>(k)) * f), m.s1, 1e-12));
        }
        const auto sh = weighted_score_hessian(d.sub, d.cohort, beta);
        EXPECT_TRUE(close(sh.score, oracle::score(d.gathered, beta), 1e-12));
        EXPECT_TRUE(close(sh.hessian, oracle::hessian(d.gathered, beta), 1e-12));
    }
}

TEST(WeightedLikelihood, DiffersFromUnscaledFormOnlyByConstant) {
    const auto d = draw(7, 200, 3, 80, Method::FullOpt);
    const double r = 80;
    Eigen::VectorXd b1(3), b2(3);
    b1 << 0.1, 0.2, 0.3;
    b2 << -0.4, 0.0, 0.9;
    const double ours1 = weighted_log_likelihood(d.sub, d.cohort, b1);
    const double ours2 = weighted_log_likelihood(d.sub, d.cohort, b2);
    EXPECT_NEAR(ours1, oracle::loglik(d.gathered, b1, 1.0 / r), 1e-12);
    const double shift1 = ours1 - oracle::loglik(d.gathered, b1);
    const double shift2 = ours2 - oracle::loglik(d.gathered, b2);
    EXPECT_NEAR(shift1, shift2, 1e-12);
}

TEST(WeightedLikelihood, ScoreMatchesFiniteDifferences) {
    for (int rep = 0; rep < 10; ++rep) {
        const auto d = draw(300 + rep, 200, 3, 100, Method::FullOpt);
        const Eigen::Vector3d beta(0.2, -0.1, 0.3);
        const auto sh = weighted_score_hessian(d.sub, d.cohort, beta);
        const double h = 1e-5;
        for (Index j = 0; j < 3; ++j) {
            Eigen::VectorXd bp = beta, bm = beta;
            bp(j) += h;
            bm(j) -= h;
            const double fd =
                (weighted_log_likelihood(d.sub, d.cohort, bp) - weighted_log_likelihood(d.sub, d.cohort, bm)) / (2 * h);
            EXPECT_NEAR(sh.score(j), fd, 1e-6 * std::max(1.0, std::abs(fd)));
        }
    }
}

TEST(WeightedFit, IdentitySubsampleCollapsesToFullData) {
    std::mt19937_64 gen(55);
    for (int rep = 0; rep < 10; ++rep) {
        const auto d = oracle::random_sample(gen, 200, 3);
        const SortedCohort c(testing_util::to_cohort(d));
        const auto full = newton_solve(c);
        const auto sub = testing_util::identity_subsample(c.size());
        const auto wf = weighted_newton(sub, c, Eigen::VectorXd::Zero(3));
        EXPECT_TRUE(close(wf.beta, full.beta, 1e-10));
        EXPECT_TRUE(close(wf.h_tilde, full.hessian, 1e-10));
        EXPECT_NEAR(weighted_log_likelihood(sub, c, full.beta), full.loglik, 1e-12);
        const auto wb = weighted_breslow(sub, c, full.beta);
        const auto fb = breslow(c, full.beta);
        for (std::size_t k = 0; k < fb.cumulative.size(); ++k)
            EXPECT_NEAR(wb.hazard.cumulative[k], fb.cumulative[k], 1e-12 * fb.cumulative[k]);
    }
}

TEST(Sandwich, EventsMeatMatchesDirectSum) {
    const auto d = draw(9, 180, 3, 90, Method::FullOpt);
    const Eigen::Vector3d beta(0.3, 0.1, -0.2);
    const RiskTable t = subsample_table(d.sub, d.cohort);
    EXPECT_TRUE(close(weighted_meat(t, beta), oracle::meat_events(d.gathered, beta), 1e-12));
}

TEST(Sandwich, InfluenceMeatMatchesDirectSum) {
    const auto d = draw(10, 180, 3, 90, Method::FullOpt);
    const Eigen::Vector3d beta(0.3, 0.1, -0.2);
    const RiskTable t = subsample_table(d.sub, d.cohort);
    const auto& g = d.gathered;
    const Eigen::MatrixXd q = oracle::q_scores(g, beta);
    Eigen::MatrixXd v = Eigen::MatrixXd::Zero(3, 3);
    for (int i = 0; i < g.n(); ++i) {
        Eigen::VectorXd psi = -q.row(i).transpose();
        if (g.status[i]) {
            const auto m = oracle::moments_at(g, beta, g.time(i));
            psi += g.z.row(i).transpose() - m.s1 / m.s0;
        }
        v += g.w(i) * g.w(i) * psi * psi.transpose();
    }
    v *= g.scale * g.scale;
    EXPECT_TRUE(close(weighted_meat(t, beta, MeatForm::Influence), v, 1e-12));
}

TEST(Sandwich, SigmaIsHinvVHinv) {
    const auto d = draw(12, 400, 3, 150, Method::Uniform);
    const auto fit = weighted_newton(d.sub, d.cohort, Eigen::VectorXd::Zero(3));
    const Eigen::MatrixXd hinv = fit.h_tilde.inverse();
    EXPECT_TRUE(close(fit.sigma, Eigen::MatrixXd(hinv * fit.v_tilde * hinv), 1e-10));
    EXPECT_TRUE(close(fit.v_tilde, oracle::meat_events(d.gathered, fit.beta), 1e-12));
}

TEST(BaselineVariance, MatchesDirectFormulas) {
    const auto d = draw(14, 200, 2, 120, Method::FullOpt);
    const auto fit = weighted_newton(d.sub, d.cohort, Eigen::VectorXd::Zero(2));
    const auto wb = weighted_breslow(d.sub, d.cohort, fit, true);
    ASSERT_TRUE(wb.lambda_variance.has_value());
    const auto& g = d.gathered;
    const auto times = oracle::event_times(g);
    const Eigen::VectorXd& beta = fit.beta;
    const Eigen::MatrixXd hinv = fit.h_tilde.inverse();
    const double s = g.scale;

    Eigen::VectorXd phi = Eigen::VectorXd::Zero(2);
    for (int i = 0; i < g.n(); ++i) {
        if (!g.status[i]) continue;
        const auto m = oracle::moments_at(g, beta, g.time(i));
        phi += g.w(i) * g.w(i) * (g.z.row(i).transpose() - m.s1 / m.s0) / m.s0;
    }
    phi *= s * s;
    EXPECT_TRUE(close(wb.lambda_variance->phi, phi, 1e-12));

    for (std::size_t k = 0; k < times.size(); ++k) {
        const double tk = times[k];
        Eigen::VectorXd gamma = Eigen::VectorXd::Zero(2);
        double psi1 = 0, psi2 = 0;
        std::vector<double> inner(static_cast<std::size_t>(g.n()), 0.0);
        for (double tl : times) {
            if (tl > tk) break;
            const auto m = oracle::moments_at(g, beta, tl);
            double dn = 0;
            for (int j = 0; j < g.n(); ++j)
                if (g.status[j] && g.time(j) == tl) dn += g.w(j);
            const double dnbar = s * dn;
            gamma += m.s1 / (m.s0 * m.s0) * dnbar;
            psi1 += s * s * [&] {
                double w2 = 0;
                for (int j = 0; j < g.n(); ++j)
                    if (g.status[j] && g.time(j) == tl) w2 += g.w(j) * g.w(j);
                return w2;
            }() / (m.s0 * m.s0);
            for (int i = 0; i < g.n(); ++i)
                if (g.time(i) >= tl)
                    inner[static_cast<std::size_t>(i)] +=
                        std::exp(beta.dot(g.z.row(i).transpose())) / (m.s0 * m.s0) * dnbar;
        }
        for (int i = 0; i < g.n(); ++i) psi2 += g.w(i) * g.w(i) * inner[i] * inner[i];
        const double psi = psi1 + s * s * psi2;
        const double var = gamma.dot(fit.sigma * gamma) + psi + gamma.dot(hinv * phi);
        const auto kk = static_cast<Index>(k);
        EXPECT_TRUE(close(Eigen::VectorXd(wb.lambda_variance->gamma.col(kk)), gamma, 1e-12));
        EXPECT_NEAR(wb.lambda_variance->psi(kk), psi, 1e-12 * psi);
        EXPECT_NEAR(wb.lambda_variance->variance(kk), var, 1e-10 * std::abs(var));
        EXPECT_DOUBLE_EQ(wb.variance_at(tk), wb.lambda_variance->variance(kk));
    }
    EXPECT_EQ(wb.variance_at(-1.0), 0.0);
}

TEST(Intervals, WaldIntervals) {
    WeightedFit fit;
    fit.beta = Eigen::Vector2d(1.0, -2.0);
    fit.sigma = Eigen::Matrix2d::Identity() * 0.04;
    const auto ci = confidence_intervals(fit, 0.95);
    EXPECT_NEAR(ci[0].lower, 1.0 - 1.959963984540054 * 0.2, 1e-12);
    EXPECT_NEAR(ci[1].upper, -2.0 + 1.959963984540054 * 0.2, 1e-12);
    EXPECT_THROW(confidence_intervals(fit, 1.0), Error);
    EXPECT_THROW(confidence_intervals(fit, 0.0), Error);
}

TEST(SubsampleTable, RejectsEventFreeDraws) {
    std::mt19937_64 gen(1);
    const auto full = oracle::random_sample(gen, 50, 2);
    const SortedCohort c(testing_util::to_cohort(full));
    Subsample sub;
    sub.source_n = 50;
    sub.r = 2;
    for (Index i = 0; i < 50 && sub.indices.size() < 2; ++i) {
        if (!full.status[static_cast<std::size_t>(i)]) {
            sub.indices.push_back(i);
            sub.probs_at_draw.push_back(0.02);
        }
    }
    ASSERT_EQ(sub.indices.size(), 2u);
    EXPECT_THROW(subsample_table(sub, c), FitError);
}
