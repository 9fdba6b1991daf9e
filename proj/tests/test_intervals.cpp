#include "mortfts/intervals.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

using namespace mortfts;

namespace {

/// Tries every grid value directly.
double brute_force_xi(const Matrix& e, double alpha) {
    const Eigen::Index M = e.rows();
    Vector gamma(e.cols());
    for (Eigen::Index u = 0; u < e.cols(); ++u) {
        const double mean = e.col(u).mean();
        double ss = 0.0;
        for (Eigen::Index m = 0; m < M; ++m) ss += (e(m, u) - mean) * (e(m, u) - mean);
        gamma(u) = std::sqrt(ss / static_cast<double>(M - 1));
    }
    double best_xi = 0.0, best_gap = INFINITY;
    for (int i = 0; i <= 500; ++i) {
        const double xi = i / 100.0;
        int hit = 0;
        for (Eigen::Index m = 0; m < M; ++m)
            for (Eigen::Index u = 0; u < e.cols(); ++u) hit += std::abs(e(m, u)) <= xi * gamma(u) ? 1 : 0;
        const double gap = std::abs(static_cast<double>(hit) / static_cast<double>(e.size()) - (1.0 - alpha));
        if (gap < best_gap) {
            best_gap = gap;
            best_xi = xi;
        }
    }
    return best_xi;
}

ResidualBank bank_of(Matrix e) { return ResidualBank{1, std::move(e)}; }

}  // namespace

TEST(CalibrateSd, AgreesWithGridSearch) {
    std::mt19937_64 rng(12);
    std::uniform_int_distribution<int> rows(2, 12), cols(1, 25);
    for (int trial = 0; trial < 200; ++trial) {
        const Matrix e = testutil::random_matrix(rng, rows(rng), cols(rng), 3.0);
        for (double alpha : {0.2, 0.05, 0.5}) {
            const auto cal = calibrate_sd(bank_of(e), alpha);
            EXPECT_DOUBLE_EQ(cal.xi, brute_force_xi(e, alpha)) << "trial " << trial << " alpha " << alpha;
            EXPECT_FALSE(cal.degenerate);
        }
    }
}

TEST(CalibrateSd, AlphaZeroCoversEverythingOnTheGrid) {
    std::mt19937_64 rng(13);
    const Matrix e = testutil::random_matrix(rng, 10, 20);
    const auto cal = calibrate_sd(bank_of(e), 0.0);
    EXPECT_DOUBLE_EQ(cal.validation_coverage, 1.0);
    EXPECT_EQ(sd_coverage(e, cal.gamma, cal.xi - 0.01) < 1.0, true);
}

TEST(CalibrateSd, GaussianResidualsGiveNormalQuantile) {
    std::mt19937_64 rng(14);
    const Matrix e = testutil::random_matrix(rng, 400, 100);
    EXPECT_NEAR(calibrate_sd(bank_of(e), 0.2).xi, 1.2816, 0.1);
    EXPECT_NEAR(calibrate_sd(bank_of(e), 0.05).xi, 1.96, 0.1);
}

TEST(CalibrateSd, DegenerateAndInvalidInputs) {
    const auto cal = calibrate_sd(bank_of(Matrix::Constant(4, 3, 2.0)), 0.2);
    EXPECT_TRUE(cal.degenerate);
    EXPECT_EQ(cal.xi, 0.0);
    EXPECT_THROW(calibrate_sd(bank_of(Matrix::Zero(1, 3)), 0.2), Error);
    EXPECT_THROW(calibrate_sd(bank_of(Matrix::Zero(3, 3)), 1.0), Error);
    EXPECT_THROW(calibrate_sd(bank_of(Matrix::Zero(3, 3)), -0.1), Error);
}

TEST(CalibrateConformal, HandExamples) {
    Matrix e(5, 1);
    e << 1, -2, 3, -4, 5;
    EXPECT_NEAR(calibrate_conformal(bank_of(e), 0.2).q(0), 4.2, 1e-12);
    Matrix one(1, 2);
    one << -3, 0.5;
    const auto c1 = calibrate_conformal(bank_of(one), 0.05);
    EXPECT_EQ(c1.q(0), 3.0);
    EXPECT_EQ(c1.q(1), 0.5);
    EXPECT_EQ(calibrate_conformal(bank_of(Matrix::Zero(6, 4)), 0.2).q, Vector::Zero(4));
}

TEST(CalibrateConformal, CoversTheRequiredNumberOfResiduals) {
    std::mt19937_64 rng(15);
    std::uniform_int_distribution<int> rows(1, 60);
    for (int trial = 0; trial < 300; ++trial) {
        const int M = rows(rng);
        const Matrix e = testutil::random_matrix(rng, M, 5);
        for (double alpha : {0.2, 0.05, 0.5}) {
            const auto cal = calibrate_conformal(bank_of(e), alpha);
            const double p = 1.0 - alpha;
            for (Eigen::Index u = 0; u < 5; ++u) {
                int covered = 0;
                for (Eigen::Index m = 0; m < M; ++m) covered += std::abs(e(m, u)) <= cal.q(u) ? 1 : 0;
                EXPECT_GE(covered, static_cast<int>(std::floor((M - 1) * p)) + 1);
            }
        }
    }
}

TEST(CalibrateConformal, WidthsShrinkAsAlphaGrows) {
    std::mt19937_64 rng(16);
    const Matrix e = testutil::random_matrix(rng, 30, 10);
    Vector prev = Vector::Constant(10, INFINITY);
    for (double alpha : {0.01, 0.05, 0.1, 0.2, 0.5, 0.9}) {
        const Vector q = calibrate_conformal(bank_of(e), alpha).q;
        EXPECT_TRUE((q.array() <= prev.array()).all());
        prev = q;
    }
}

TEST(QuantileType7, Endpoints) {
    EXPECT_EQ(quantile_type7({3, 1, 2}, 0.0), 1.0);
    EXPECT_EQ(quantile_type7({3, 1, 2}, 1.0), 3.0);
    EXPECT_EQ(quantile_type7({3, 1, 2}, 0.5), 2.0);
    EXPECT_THROW(quantile_type7({}, 0.5), Error);
}

TEST(BuildInterval, SymmetricAndClampedAtZero) {
    Vector point(3), width(3);
    point << 10, 1, 0;
    width << 2, 3, 0;
    const auto f = build_interval(point, width, IntervalMethod::Conformal, 0.2, 1);
    EXPECT_EQ(f.lower(0), 8.0);
    EXPECT_EQ(f.upper(0), 12.0);
    EXPECT_EQ(f.lower(1), 0.0);
    EXPECT_EQ(f.upper(1), 4.0);
    EXPECT_EQ(f.lower(2), 0.0);
    EXPECT_EQ(f.upper(2), 0.0);
    EXPECT_THROW(build_interval(point, Vector::Zero(2), IntervalMethod::Sd, 0.2, 1), Error);

    SdCalibration cal;
    cal.gamma = Vector::Constant(3, 2.0);
    cal.xi = 1.5;
    const auto g = build_interval(point, cal);
    EXPECT_EQ(g.upper(0), 13.0);
    EXPECT_EQ(g.method, IntervalMethod::Sd);
}

TEST(IntervalMethod, Parses) {
    EXPECT_EQ(parse_interval_method("sd"), IntervalMethod::Sd);
    EXPECT_EQ(parse_interval_method("conformal"), IntervalMethod::Conformal);
    EXPECT_THROW(parse_interval_method("bootstrap"), Error);
}
