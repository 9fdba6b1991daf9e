#include "mortfts/ets.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace mortfts;

namespace {

Vector series(std::initializer_list<double> v) {
    Vector out(static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (double x : v) out(i++) = x;
    return out;
}

EtsFit fitted_state(EtsKind kind, double level, double trend, double phi = 1.0) {
    EtsFit f;
    f.kind = kind;
    f.level = level;
    f.trend = trend;
    f.phi = phi;
    return f;
}

}  // namespace

TEST(EtsForecast, HandExamples) {
    EXPECT_EQ(forecast_ets(fitted_state(EtsKind::ANN, 5, 0), 3), series({5, 5, 5}));
    EXPECT_EQ(forecast_ets(fitted_state(EtsKind::AAN, 10, 2), 3), series({12, 14, 16}));
    const Vector d = forecast_ets(fitted_state(EtsKind::AAdN, 10, 2, 0.9), 3);
    EXPECT_NEAR(d(0), 11.8, 1e-12);
    EXPECT_NEAR(d(1), 13.42, 1e-12);
    EXPECT_NEAR(d(2), 14.878, 1e-12);
    EXPECT_THROW(forecast_ets(fitted_state(EtsKind::ANN, 0, 0), 0), Error);
}

TEST(FitEts, ConstantSeries) {
    const EtsFit f = fit_ets(Vector::Constant(15, 3.0));
    const Vector p = forecast_ets(f, 4);
    for (Eigen::Index h = 0; h < 4; ++h) EXPECT_NEAR(p(h), 3.0, 1e-9);
}

TEST(FitEts, LinearSeriesExtrapolates) {
    const Vector y = Vector::LinSpaced(20, 1.0, 20.0);
    const EtsFit f = fit_ets(y);
    EXPECT_NE(f.kind, EtsKind::ANN);
    const Vector p = forecast_ets(f, 5);
    if (f.kind == EtsKind::AAN)
        for (int h = 1; h <= 5; ++h) EXPECT_NEAR(p(h - 1), 20.0 + h, 1e-3);
    else
        EXPECT_NEAR(p(0), 21.0, 1e-3);
}

TEST(FitEts, WhiteNoiseUsuallySelectsLevelOnly) {
    std::mt19937_64 rng(21);
    std::normal_distribution<double> z;
    int level_only = 0;
    const int reps = 500;
    for (int r = 0; r < reps; ++r) {
        Vector y(30);
        for (auto& v : y) v = z(rng);
        level_only += fit_ets(y).kind == EtsKind::ANN ? 1 : 0;
    }
    EXPECT_GE(level_only, reps * 9 / 10);
}

TEST(FitEts, ShiftAndScaleEquivariance) {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> z;
    for (int r = 0; r < 20; ++r) {
        Vector y(25);
        double walk = 0.0;
        for (auto& v : y) v = walk += 0.3 + z(rng);
        const EtsFit a = fit_ets(y);
        const EtsFit b = fit_ets((y.array() * 7.5 + 100.0).matrix());
        ASSERT_EQ(a.kind, b.kind);
        const Vector pa = forecast_ets(a, 6), pb = forecast_ets(b, 6);
        EXPECT_LT(((pa.array() * 7.5 + 100.0) - pb.array()).abs().maxCoeff(), 1e-6 * 7.5 * (1.0 + pa.cwiseAbs().maxCoeff()));
    }
}

TEST(FitEts, SelectsMinimumAiccAndStaysInBounds) {
    std::mt19937_64 rng(9);
    std::normal_distribution<double> z;
    for (int r = 0; r < 30; ++r) {
        Vector y(18);
        double l = 0, b = 0.5;
        for (auto& v : y) {
            b = 0.9 * b + 0.1 * z(rng);
            l += b;
            v = l + 0.5 * z(rng);
        }
        const auto candidates = fit_ets_candidates(y);
        const EtsFit best = fit_ets(y);
        for (const auto& c : candidates) {
            EXPECT_LE(best.aicc, c.aicc);
            EXPECT_GE(c.alpha, ets_detail::kAlphaLo);
            EXPECT_LE(c.alpha, ets_detail::kAlphaHi);
            if (c.kind != EtsKind::ANN) {
                EXPECT_GE(c.beta, ets_detail::kBetaLo);
                EXPECT_LE(c.beta, c.alpha + 1e-15);
            }
            if (c.kind == EtsKind::AAdN) {
                EXPECT_GE(c.phi, ets_detail::kPhiLo);
                EXPECT_LE(c.phi, ets_detail::kPhiHi);
            }
            EXPECT_NEAR(c.sigma2, c.residuals.squaredNorm() / static_cast<double>(y.size()), 1e-12 * (1 + c.sigma2));
            const Vector e = one_step_residuals(c, y);
            EXPECT_LT((e - c.residuals).cwiseAbs().maxCoeff(), 1e-8 * (1 + y.cwiseAbs().maxCoeff()));
        }
    }
}

TEST(FitEts, ShortSeriesFallBack) {
    const EtsFit f = fit_ets(series({1, 2, 3, 4}));
    EXPECT_TRUE(f.fallback);
    EXPECT_EQ(describe(f), "ANN*");
    EXPECT_EQ(forecast_ets(f, 2).size(), 2);
    EXPECT_FALSE(fit_ets(Vector::LinSpaced(6, 0, 5)).fallback);
}

TEST(FitEts, RejectsNonFinite) {
    EXPECT_THROW(fit_ets(series({1, NAN, 3, 4, 5, 6})), Error);
    EXPECT_THROW(fit_ets_member(series({1, 2, INFINITY}), EtsKind::ANN), Error);
}

TEST(DriftForecaster, StraightLine) {
    const auto f = drift_forecaster()(series({1, 3, 5}), 2);
    EXPECT_EQ(f.values, series({7, 9}));
    EXPECT_EQ(f.description, "RWD");
}
