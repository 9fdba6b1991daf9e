#include "mortfts/backtest.hpp"
#include "mortfts/parallel.hpp"
#include "mortfts/simulate.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

using namespace mortfts;

namespace {

DeathDensityPanel small_panel(int years, int groups = 2) {
    SimulationOptions so;
    so.groups = groups;
    so.years = years;
    so.last_age = 30;
    return simulate_panel(so);
}

ModelSpec ufts() {
    ModelSpec s;
    s.kind = ModelKind::Ufts;
    return s;
}

}  // namespace

TEST(BacktestPlan, FiveYearTriangle) {
    const BacktestPlan plan{3, 5, 2};
    plan.validate(5);
    EXPECT_EQ(plan.origins(), (std::vector<int>{3, 4}));
    EXPECT_EQ(plan.horizon_at(3), 2);
    EXPECT_EQ(plan.horizon_at(4), 1);
    EXPECT_EQ(plan.count_at(1), 2);
    EXPECT_EQ(plan.count_at(2), 1);
    EXPECT_EQ(plan.count_at(3), 0);
}

TEST(BacktestPlan, CountsFillTheTriangle) {
    for (int H = 1; H <= 20; ++H) {
        const BacktestPlan plan{10, 10 + H, H};
        int total = 0;
        for (int h = 1; h <= H; ++h) total += plan.count_at(h);
        EXPECT_EQ(total, H * (H + 1) / 2);
        int by_origin = 0;
        for (int o : plan.origins()) by_origin += plan.horizon_at(o);
        EXPECT_EQ(by_origin, total);
    }
}

TEST(BacktestPlan, Validation) {
    EXPECT_THROW((BacktestPlan{1, 5, 1}.validate(5)), Error);
    EXPECT_THROW((BacktestPlan{3, 3, 1}.validate(5)), Error);
    EXPECT_THROW((BacktestPlan{3, 6, 1}.validate(5)), Error);
    EXPECT_THROW((BacktestPlan{3, 5, 0}.validate(5)), Error);
}

TEST(RunExpandingWindow, FortyEightYearsGiveSeventeenMinusH) {
    const auto panel = small_panel(48, 1);
    const BacktestPlan plan{32, 48, 16};
    const auto bt = run_expanding_window(panel, plan, ufts(), serial_for, drift_forecaster());
    ASSERT_EQ(bt.origins.size(), 16u);
    for (const auto& r : bt.origins) EXPECT_TRUE(r.error.empty()) << r.error;
    for (const auto& [key, cube] : bt.cubes)
        for (int h = 1; h <= 16; ++h) EXPECT_EQ(cube.count_at(h), 17 - h) << to_string(key) << " h=" << h;
    const auto pairs = horizon_pairs(bt, panel, SeriesKey{"01", Sex::Female}, 3, 48);
    EXPECT_EQ(pairs.actual.rows(), 14);
    EXPECT_EQ(pairs.target_years.front(), panel.years[34]);
    EXPECT_EQ(pairs.target_years.back(), panel.years[47]);
    EXPECT_EQ(pairs.actual.row(0), panel.at("01", Sex::Female).values.row(34));
}

TEST(RunExpandingWindow, ConstantPanelForecastsItself) {
    auto panel = small_panel(8, 1);
    for (auto& [k, s] : panel.series)
        for (Eigen::Index t = 1; t < s.values.rows(); ++t) s.values.row(t) = s.values.row(0);
    const auto bt = run_expanding_window(panel, BacktestPlan{4, 8, 3}, ufts());
    for (const auto& [key, cube] : bt.cubes) {
        const Vector first = panel.at(key.group, key.sex).values.row(0).transpose();
        for (const auto& cell : cube.cells)
            if (cell) {
                EXPECT_LT((*cell - first).cwiseAbs().maxCoeff(), 1e-6);
            }
    }
}

TEST(RunExpandingWindow, FailingOriginIsRecorded) {
    const auto panel = small_panel(10, 1);
    ScoreForecaster flaky = [](const Vector& y, int h) {
        if (y.size() == 6) throw Error("boom");
        return drift_forecaster()(y, h);
    };
    const auto bt = run_expanding_window(panel, BacktestPlan{4, 10, 3}, ufts(), serial_for, flaky);
    for (const auto& r : bt.origins) {
        if (r.origin == 6)
            EXPECT_EQ(r.error, "boom");
        else
            EXPECT_TRUE(r.error.empty());
    }
    for (const auto& [key, cube] : bt.cubes) {
        EXPECT_FALSE(cube.at(6, 1).has_value());
        EXPECT_TRUE(cube.at(5, 1).has_value());
        EXPECT_EQ(cube.count_at(1), 5);
    }
    const auto pairs = horizon_pairs(bt, panel, SeriesKey{"01", Sex::Male}, 1, 10);
    EXPECT_EQ(pairs.actual.rows(), 5);
}

TEST(RunExpandingWindow, ThreadedMatchesSerial) {
    const auto panel = small_panel(14, 2);
    ModelSpec spec = ufts();
    spec.kind = ModelKind::Mlfts;
    const BacktestPlan plan{7, 14, 4};
    const auto a = run_expanding_window(panel, plan, spec, serial_for);
    const auto b = run_expanding_window(panel, plan, spec, thread_for(3));
    for (const auto& [key, cube] : a.cubes) {
        const auto& other = b.cubes.at(key);
        ASSERT_EQ(cube.cells.size(), other.cells.size());
        for (std::size_t i = 0; i < cube.cells.size(); ++i) {
            ASSERT_EQ(cube.cells[i].has_value(), other.cells[i].has_value());
            if (cube.cells[i]) {
                EXPECT_EQ(*cube.cells[i], *other.cells[i]);
            }
        }
    }
}

TEST(HorizonPairs, RespectsLastTarget) {
    const auto panel = small_panel(10, 1);
    const auto bt = run_expanding_window(panel, BacktestPlan{4, 10, 3}, ufts(), serial_for, drift_forecaster());
    const auto p = horizon_pairs(bt, panel, SeriesKey{"01", Sex::Female}, 2, 8);
    // origins 4..6 reach target counts 6..8
    EXPECT_EQ(p.target_years, (std::vector<int>{panel.years[5], panel.years[6], panel.years[7]}));
}

TEST(ThreadFor, RethrowsLowestIndex) {
    auto pf = thread_for(4);
    std::vector<int> out(50, 0);
    pf(50, [&](std::size_t i) { out[i] = static_cast<int>(i) * 2; });
    for (std::size_t i = 0; i < 50; ++i) EXPECT_EQ(out[i], static_cast<int>(i) * 2);
    try {
        pf(20, [](std::size_t i) {
            if (i == 7 || i == 13) throw Error("at " + std::to_string(i));
        });
        FAIL();
    } catch (const Error& e) {
        EXPECT_STREQ(e.what(), "at 7");
    }
}
