#include "helpers.hpp"

#include <gtest/gtest.h>

using namespace coxsub;
using testing_util::close;

TEST(QScores, MatchDirectSums) {
    std::mt19937_64 gen(31);
    for (int rep = 0; rep < 30; ++rep) {
        const auto d = oracle::random_sample(gen, 15 + 4 * rep, 3);
        const SortedCohort c(testing_util::to_cohort(d));
        Eigen::VectorXd beta(3);
        beta << 0.3, -0.5, 0.2;
        const auto qs = q_scores(c, beta);
        const auto q = oracle::q_scores(d, beta);
        EXPECT_TRUE(close(Eigen::MatrixXd(qs.q), q, 1e-12));
        for (Index i = 0; i < c.size(); ++i) EXPECT_NEAR(qs.norms(i), q.row(i).norm(), 1e-12);
    }
}

TEST(QScores, SumToZeroAtAnyBeta) {
    // sum_i q_i = sum_k dNbar_k * sum_j Y_j e^{eta_j}(Z_j - Zbar_k) / S0_k = 0.
    std::mt19937_64 gen(4);
    const auto d = oracle::random_sample(gen, 120, 3);
    const SortedCohort c(testing_util::to_cohort(d));
    const auto qs = q_scores(c, Eigen::Vector3d(0.2, 0.1, -0.4));
    EXPECT_LT(Eigen::VectorXd(qs.q.colwise().sum().transpose()).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Probabilities, MatchDirectFormulas) {
    std::mt19937_64 gen(41);
    for (int rep = 0; rep < 30; ++rep) {
        const auto d = oracle::random_sample(gen, 20 + 5 * rep, 3);
        const SortedCohort c(testing_util::to_cohort(d));
        Eigen::VectorXd beta(3);
        beta << -0.2, 0.6, 0.1;
        const std::vector<Method> methods{Method::Uniform, Method::CenOpt, Method::FullOpt};
        for (int m = 0; m < 3; ++m) {
            const auto plan = make_plan(c, methods[static_cast<std::size_t>(m)], beta);
            const auto expect = oracle::probabilities(d, beta, m);
            EXPECT_TRUE(close(plan.probs, expect, 1e-12)) << "method " << m;
            EXPECT_NEAR(plan.probs.sum(), 1.0, 1e-12);
        }
    }
}

TEST(Probabilities, StratumMassesEqualEventRate) {
    std::mt19937_64 gen(8);
    const auto d = oracle::random_sample(gen, 300, 4);
    const SortedCohort c(testing_util::to_cohort(d));
    const auto plan = fullopt_probs(c, Eigen::VectorXd::Constant(4, 0.1));
    double m1 = 0;
    for (Index i : plan.s1) m1 += plan.probs(i);
    EXPECT_NEAR(m1, c.event_rate(), 1e-12);
    EXPECT_TRUE(plan.stratified);
    EXPECT_FALSE(uniform_probs(c).stratified);
}

TEST(Probabilities, NoCensoringWarnsAndUsesFailuresOnly) {
    std::mt19937_64 gen(9);
    auto d = oracle::random_sample(gen, 80, 2);
    std::fill(d.status.begin(), d.status.end(), 1);
    const SortedCohort c(testing_util::to_cohort(d));
    const auto plan = cenopt_probs(c, Eigen::Vector2d(0.1, 0.1));
    EXPECT_FALSE(plan.warnings.empty());
    EXPECT_NEAR(plan.probs.sum(), 1.0, 1e-12);
}

TEST(Probabilities, DegenerateCensoredStratumThrows) {
    // Every censored record precedes the first event, so all q_i there are 0.
    RowMatrix z(4, 1);
    z << 1, 2, 3, 4;
    Eigen::VectorXd t(4);
    t << 0.5, 0.6, 1.0, 2.0;
    const SortedCohort c(Cohort::make(z, t, {0, 0, 1, 1}));
    EXPECT_THROW(fullopt_probs(c, Eigen::VectorXd::Zero(1)), FitError);
}

TEST(Pilot, RequiresEnoughDrawsAndEvents) {
    std::mt19937_64 gen(12);
    const auto d = oracle::random_sample(gen, 500, 3);
    const SortedCohort c(testing_util::to_cohort(d));
    EXPECT_THROW(pilot_stage(c, 7, Rng(1)), Error);
    const auto pilot = pilot_stage(c, 200, Rng(1));
    EXPECT_EQ(pilot.subsample.indices.size(), 200u);
    EXPECT_GE(pilot.attempts, 1);
    for (double p : pilot.subsample.probs_at_draw) EXPECT_DOUBLE_EQ(p, 1.0 / 500);

    auto none = d;
    std::fill(none.status.begin(), none.status.end(), 0);
    const SortedCohort empty(testing_util::to_cohort(none));
    EXPECT_THROW(pilot_stage(empty, 200, Rng(1)), FitError);
}

TEST(Algorithm, RunsEveryMethodDeterministically) {
    std::mt19937_64 gen(19);
    const auto d = oracle::random_sample(gen, 3000, 3);
    const SortedCohort c(testing_util::to_cohort(d));
    for (Method m : {Method::Uniform, Method::CenOpt, Method::FullOpt}) {
        Algorithm1Options opts;
        opts.r = 400;
        opts.method = m;
        const auto a = run_algorithm1(c, opts, Rng(5));
        const auto b = run_algorithm1(c, opts, Rng(5));
        EXPECT_EQ(a.fit.beta, b.fit.beta);
        EXPECT_EQ(a.subsample.indices, b.subsample.indices);
        EXPECT_TRUE(a.fit.converged);
        EXPECT_EQ(a.fit.pilot_beta.size(), 3);
        EXPECT_GT(a.fit.se().minCoeff(), 0.0);
        EXPECT_FALSE(a.baseline.hazard.times.empty());
    }
}
