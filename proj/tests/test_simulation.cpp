#include "coxsub/simulation.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace coxsub;
using namespace coxsub::sim;

TEST(Covariates, MomentsMatchTheDesign) {
    Rng rng(123);
    const Index n = 1'000'000;
    const RowMatrix z = gen_covariates(n, rng);
    const Eigen::RowVectorXd m = z.colwise().mean();
    const Eigen::MatrixXd centered = z.rowwise() - m;
    const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(n - 1);
    for (int i = 0; i < 3; ++i) {
        EXPECT_NEAR(m(i), 0.0, 0.005);
        for (int j = 0; j < 3; ++j) EXPECT_NEAR(cov(i, j), std::pow(0.5, std::abs(i - j)), 0.01);
    }
    EXPECT_NEAR(m(3), 2.0, 0.01);
    EXPECT_NEAR(cov(3, 3), 2.0, 0.02);
    EXPECT_NEAR(m(4), 0.5, 3 * std::sqrt(0.25 / n));
    EXPECT_NEAR(m(5), 0.3, 3 * std::sqrt(0.21 / n));
    for (Index i = 0; i < n; i += 997) {
        EXPECT_TRUE(z(i, 4) == 0.0 || z(i, 4) == 1.0);
        EXPECT_GT(z(i, 3), 0.0);
    }
}

TEST(EventTimes, InverseTransform) {
    EXPECT_DOUBLE_EQ(event_time_from_uniform(std::exp(-1.0), 0.0, Baseline::Constant), 2.0);
    EXPECT_DOUBLE_EQ(event_time_from_uniform(std::exp(-1.0), 0.0, Baseline::Linear), std::sqrt(2.0));

    Rng rng(9);
    const Index n = 1'000'000;
    RowMatrix z = RowMatrix::Zero(n, 6);
    const Eigen::VectorXd tc = gen_event_times(z, default_beta0(), Baseline::Constant, rng);
    EXPECT_NEAR(tc.mean(), 2.0, 0.01);
    const Eigen::VectorXd tl = gen_event_times(z, default_beta0(), Baseline::Linear, rng);
    const double below1 = (tl.array() <= 1.0).cast<double>().mean();
    EXPECT_NEAR(below1, 1.0 - std::exp(-0.5), 0.002);
}

TEST(Calibration, RateIsMonotoneInUpperLimit) {
    CalibrationOptions opts;
    opts.n = 100'000;
    const Eigen::VectorXd t = calibration_sample(default_beta0(), Baseline::Constant, opts);
    double prev = 1.0;
    for (double c : {0.1, 0.5, 1.0, 2.0, 5.0, 10.0, 50.0, 200.0}) {
        const double rate = censoring_rate_for(t, c);
        EXPECT_LE(rate, prev);
        prev = rate;
    }
    EXPECT_THROW(calibrate_censoring(default_beta0(), Baseline::Constant, 1.0, opts), Error);
}

TEST(Calibration, RealizedRatesOnFreshCohorts) {
    for (int case_id : {1, 4}) {
        const auto cfg = case_config(case_id);
        const auto cal = calibrate_censoring(cfg.beta0, cfg.baseline, cfg.target_censoring);
        EXPECT_NEAR(cal.achieved, cfg.target_censoring, 0.002);
        Rng rng(1000 + case_id);
        double total = 0;
        const int reps = 5;
        for (int k = 0; k < reps; ++k) {
            const Cohort c = generate_cohort(20000, cfg.beta0, cfg.baseline, cal.c, rng);
            double cens = 0;
            for (auto s : c.status) cens += s == 0;
            total += cens / 20000.0;
        }
        EXPECT_NEAR(total / reps, cfg.target_censoring, 0.01) << "case " << case_id;
    }
}

TEST(Metrics, HandBuiltFixture) {
    const Eigen::Vector2d beta0(1.0, -1.0);
    std::vector<ReplicateEstimate> reps(3);
    const double b1[] = {1.1, 0.8, 1.3};
    const double b2[] = {-1.0, -0.7, -1.6};
    for (int k = 0; k < 3; ++k) {
        reps[k].ok = true;
        reps[k].beta = Eigen::Vector2d(b1[k], b2[k]);
        reps[k].se = Eigen::Vector2d(0.1 * (k + 1), 0.2);
        reps[k].lower = reps[k].beta - Eigen::Vector2d(0.15, 0.35);
        reps[k].upper = reps[k].beta + Eigen::Vector2d(0.15, 0.35);
    }
    const auto m = compute_metrics(reps, beta0);
    // beta1: mean 16/15, deviations from mean 1/30, -8/30, 7/30.
    EXPECT_NEAR(m.bias(0), 1.0666666666666667 - 1.0, 1e-12);
    EXPECT_NEAR(m.sse(0), std::sqrt((1.0 + 64.0 + 49.0) / 900.0 / 2.0), 1e-12);
    EXPECT_NEAR(m.bias(1), -1.1 + 1.0, 1e-12);
    EXPECT_NEAR(m.sse(1), std::sqrt((0.01 + 0.16 + 0.25) / 2.0), 1e-12);
    EXPECT_NEAR(m.ese(0), 0.2, 1e-12);
    // coverage: |beta1 - 1| <= 0.15 for 1.1 only; |beta2 + 1| <= 0.35 for -1.0, -0.7
    EXPECT_NEAR(m.cp(0), 1.0 / 3.0, 1e-12);
    EXPECT_NEAR(m.cp(1), 2.0 / 3.0, 1e-12);
    // squared errors: 0.01 + 0, 0.04 + 0.09, 0.09 + 0.36
    EXPECT_NEAR(m.mse, (0.01 + 0.13 + 0.45) / 3.0, 1e-12);
    EXPECT_EQ(m.successes, 3);
}

TEST(Metrics, ExactAndDegenerateCases) {
    const Eigen::Vector2d beta0(0.5, 0.5);
    ReplicateEstimate exact;
    exact.ok = true;
    exact.beta = beta0;
    exact.se = Eigen::Vector2d(0.1, 0.1);
    exact.lower = beta0.array() - 1.0;
    exact.upper = beta0.array() + 1.0;
    std::vector<ReplicateEstimate> two{exact, exact};
    const auto m2 = compute_metrics(two, beta0);
    EXPECT_EQ(m2.bias, Eigen::Vector2d::Zero());
    EXPECT_EQ(m2.sse, Eigen::Vector2d::Zero());
    EXPECT_EQ(m2.mse, 0.0);
    EXPECT_EQ(m2.cp, Eigen::Vector2d::Ones());

    auto off = exact;
    off.beta = Eigen::Vector2d(0.7, 0.4);
    ReplicateEstimate failed;
    failed.error = "boom";
    std::vector<ReplicateEstimate> one{off, failed};
    const auto m1 = compute_metrics(one, beta0);
    EXPECT_NEAR(m1.bias(0), 0.2, 1e-15);
    EXPECT_TRUE(std::isnan(m1.sse(0)));
    EXPECT_EQ(m1.failures, 1);
    EXPECT_EQ(m1.successes, 1);
}

TEST(Scenario, ConfigValidation) {
    EXPECT_THROW(case_config(9), Error);
    auto cfg = case_config(1);
    cfg.n = 1000;  // below 10 * max(r)
    EXPECT_THROW(cfg.validate(), Error);
    cfg = case_config(1);
    cfg.b = 0;
    EXPECT_THROW(cfg.validate(), Error);
}

TEST(Scenario, DeterministicAcrossThreadCounts) {
    auto cfg = case_config(2);
    cfg.n = 3000;
    cfg.r_grid = {100, 300};
    cfg.b = 6;
    CalibrationOptions cal;
    cal.n = 50'000;
    cfg.threads = 1;
    const auto a = run_scenario(cfg, cal);
    cfg.threads = 3;
    const auto b = run_scenario(cfg, cal);
    std::ostringstream sa, sb;
    write_metrics_csv(sa, std::span(&a.metrics, 1));
    write_mse_csv(sa, std::span(&a.metrics, 1));
    write_metrics_csv(sb, std::span(&b.metrics, 1));
    write_mse_csv(sb, std::span(&b.metrics, 1));
    EXPECT_EQ(sa.str(), sb.str());
    EXPECT_EQ(a.metrics.cells.size(), 6u);
    EXPECT_EQ(a.metrics.relative_efficiency.size(), 2u);
}
