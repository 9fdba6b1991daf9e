#include "mortfts/panel_data.hpp"
#include "mortfts/panel_io.hpp"
#include "mortfts/simulate.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cstring>
#include <random>
#include <sstream>

using namespace mortfts;

namespace {

std::string long_csv(const std::vector<std::string>& rows) {
    std::string s = "group,sex,year,age,deaths\n";
    for (const auto& r : rows) s += r + "\n";
    return s;
}

DeathDensityPanel load_string(const std::string& text, LoadOptions opts = {}, LoadReport* rep = nullptr) {
    std::istringstream in(text);
    return load_panel(in, opts, rep);
}

std::string full_grid_csv(int drop_year = -1, int drop_age = -1) {
    std::ostringstream os;
    os << "group,sex,year,age,deaths\n";
    for (int y : {2000, 2001})
        for (int a = 0; a <= 110; ++a) {
            if (y == drop_year && a == drop_age) continue;
            os << "13,F," << y << ',' << a << ',' << (a == 0 ? 100000.0 - 110.0 : 1.0) << '\n';
        }
    return os.str();
}

}  // namespace

TEST(LoadPanel, PreservesValuesThatAlreadySumToRadix) {
    auto p = load_string(long_csv({"A,F,2000,0,20000", "A,F,2000,1,30000", "A,F,2000,2,50000", "A,F,2001,0,10000",
                                   "A,F,2001,1,10000", "A,F,2001,2,80000"}));
    ASSERT_EQ(p.series.size(), 1u);
    const auto& s = p.at("A", Sex::Female);
    EXPECT_EQ(s.years, (std::vector<int>{2000, 2001}));
    EXPECT_EQ(p.grid.ages(), (std::vector<int>{0, 1, 2}));
    EXPECT_DOUBLE_EQ(s.values(0, 0), 20000);
    EXPECT_DOUBLE_EQ(s.values(0, 2), 50000);
    EXPECT_DOUBLE_EQ(s.values(1, 2), 80000);
}

TEST(LoadPanel, RescalesRowsToRadix) {
    LoadReport rep;
    auto p = load_string(long_csv({"A,M,2000,0,19800", "A,M,2000,1,29700", "A,M,2000,2,49500"}), {}, &rep);
    const auto& v = p.at("A", Sex::Male).values;
    EXPECT_NEAR(v.row(0).sum(), 1e5, 1e-6);
    EXPECT_NEAR(v(0, 0), 19800 * 1e5 / 99000, 1e-9);
    EXPECT_EQ(rep.warnings.size(), 1u);  // 1% off, above the 0.5% tolerance
}

TEST(LoadPanel, SmallRoundingIsRescaledSilently) {
    LoadReport rep;
    auto p = load_string(long_csv({"A,M,2000,0,20000", "A,M,2000,1,30000", "A,M,2000,2,50001"}), {}, &rep);
    EXPECT_NEAR(p.at("A", Sex::Male).values.row(0).sum(), 1e5, 1e-9);
    EXPECT_TRUE(rep.warnings.empty());
}

TEST(LoadPanel, MissingCellIsNamed) {
    try {
        load_string(full_grid_csv(2001, 110));
        FAIL() << "expected an error";
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("(13, F, 2001, 110)"), std::string::npos) << e.what();
    }
}

TEST(LoadPanel, RejectsNegativeCountWithLine) {
    try {
        load_string(long_csv({"A,F,2000,0,5", "A,F,2000,1,-1", "A,F,2000,2,5"}));
        FAIL() << "expected an error";
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
    }
}

TEST(LoadPanel, RejectsGapsAndDuplicates) {
    EXPECT_THROW(load_string(long_csv({"A,F,2000,0,1", "A,F,2000,1,1", "A,F,2000,2,1", "A,F,2002,0,1", "A,F,2002,1,1",
                                       "A,F,2002,2,1"})),
                 Error);
    EXPECT_THROW(load_string(long_csv({"A,F,2000,0,1", "A,F,2000,1,1", "A,F,2000,3,1"})), Error);
    EXPECT_THROW(load_string(long_csv({"A,F,2000,0,1", "A,F,2000,1,1", "A,F,2000,2,1", "A,F,2000,2,1"})), Error);
    EXPECT_THROW(load_string(long_csv({"A,F,2000,0,0", "A,F,2000,1,0", "A,F,2000,2,0"})), Error);
    EXPECT_THROW(load_string("group,sex,year,age\n"), Error);
}

TEST(LoadPanel, CustomColumnsAndTabs) {
    LoadOptions o;
    o.schema.group = "pref";
    o.schema.deaths = "dx";
    o.schema.year = "Year";
    o.schema.sex = "Sex";
    o.schema.age = "Age";
    auto p = load_string("Year\tpref\tSex\tAge\tdx\n2000\t01\tf\t0\t1\n2000\t01\tf\t1\t1\n2000\t01\tf\t2\t2\n", o);
    EXPECT_NEAR(p.at("01", Sex::Female).values(0, 2), 50000, 1e-9);
}

TEST(LoadPanel, RowOrderDoesNotMatter) {
    SimulationOptions so;
    so.groups = 3;
    so.years = 6;
    so.last_age = 10;
    std::ostringstream os;
    write_long_csv(simulate_panel(so), os);
    std::istringstream is(os.str());
    std::string header, line;
    std::getline(is, header);
    std::vector<std::string> rows;
    while (std::getline(is, line)) rows.push_back(line);
    LoadOptions lo;
    lo.national = "00";
    const auto a = load_string(os.str(), lo);
    std::mt19937_64 rng(5);
    std::shuffle(rows.begin(), rows.end(), rng);
    std::string shuffled = header + "\n";
    for (auto& r : rows) shuffled += r + "\n";
    const auto b = load_string(shuffled, lo);
    EXPECT_EQ(a.groups, b.groups);
    EXPECT_EQ(a.years, b.years);
    ASSERT_EQ(a.series.size(), b.series.size());
    for (const auto& [k, s] : a.series) {
        const auto& t = b.series.at(k).values;
        ASSERT_EQ(s.values.rows(), t.rows());
        EXPECT_EQ(std::memcmp(s.values.data(), t.data(), sizeof(double) * static_cast<std::size_t>(t.size())), 0);
    }
}

TEST(LoadPanel, DeclaredGroupOrderComesFirst) {
    LoadOptions o;
    o.group_order = {"B", "Z"};
    auto p = load_string(long_csv({"A,F,2000,0,1", "A,F,2000,1,1", "A,F,2000,2,1", "B,F,2000,0,1", "B,F,2000,1,1",
                                   "B,F,2000,2,1"}),
                         o);
    EXPECT_EQ(p.groups, (std::vector<std::string>{"B", "A"}));
    o.national = "Q";
    EXPECT_THROW(load_string(long_csv({"A,F,2000,0,1", "A,F,2000,1,1", "A,F,2000,2,1"}), o), Error);
}

TEST(NormalizeToProbability, DividesByRadix) {
    DeathDensitySeries s;
    s.grid = AgeGrid::range(0, 2);
    s.years = {2000, 2001};
    s.values.resize(2, 3);
    s.values << 20000, 30000, 50000, 100000, 0, 0;
    const Matrix p = normalize_to_probability(s);
    EXPECT_DOUBLE_EQ(p(0, 0), 0.2);
    EXPECT_DOUBLE_EQ(p(0, 1), 0.3);
    EXPECT_DOUBLE_EQ(p(0, 2), 0.5);
    EXPECT_DOUBLE_EQ(p(1, 0), 1.0);
    EXPECT_DOUBLE_EQ(p(1, 1), 0.0);
    s.values.row(1).setZero();
    EXPECT_THROW(normalize_to_probability(s), Error);
}

TEST(NormalizeToProbability, InvertsRadixScaling) {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(0.01, 1.0);
    DeathDensitySeries s;
    s.grid = AgeGrid::range(0, 30);
    s.values.resize(5, 31);
    Matrix p(5, 31);
    for (Eigen::Index t = 0; t < 5; ++t) {
        for (Eigen::Index a = 0; a < 31; ++a) p(t, a) = u(rng);
        p.row(t) /= p.row(t).sum();
    }
    s.values = p * s.radix;
    EXPECT_LT((normalize_to_probability(s) - p).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(SplitYears, ProportionalThirds) {
    std::vector<int> years48, years6, years2;
    for (int y = 1975; y < 2023; ++y) years48.push_back(y);
    for (int y = 0; y < 6; ++y) years6.push_back(y);
    years2 = {1, 2};
    const std::array<double, 3> thirds{1.0 / 3, 1.0 / 3, 1.0 / 3};
    auto s = split_years(years48, thirds);
    EXPECT_EQ(s.train_years.size(), 16u);
    EXPECT_EQ(s.validation_years.size(), 16u);
    EXPECT_EQ(s.test_years.size(), 16u);
    EXPECT_EQ(s.train_years.back(), 1990);
    EXPECT_EQ(s.validation_years.front(), 1991);
    EXPECT_EQ(s.test_years.back(), 2022);
    s = split_years(years6, thirds);
    EXPECT_EQ(s.train_years.size(), 2u);
    EXPECT_EQ(s.validation_years.size(), 2u);
    EXPECT_EQ(s.test_years.size(), 2u);
    EXPECT_THROW(split_years(years2, thirds), Error);
    EXPECT_THROW(split_years(years48, {0.5, 0.5, 0.5}), Error);
}

TEST(AgeGrid, Invariants) {
    EXPECT_THROW(AgeGrid({0, 1}), Error);
    EXPECT_THROW(AgeGrid({0, 1, 3}), Error);
    EXPECT_EQ(AgeGrid::range(0, 110).size(), 111u);
}

TEST(PanelIo, CanonicalDirectoryRoundTrip) {
    SimulationOptions so;
    so.groups = 2;
    so.years = 4;
    so.last_age = 6;
    const auto panel = simulate_panel(so);
    const auto dir = std::filesystem::temp_directory_path() / "mortfts_panel_io_test";
    std::filesystem::remove_all(dir);
    write_panel(panel, dir);
    const auto back = read_panel(dir);
    EXPECT_EQ(back.groups, panel.groups);
    EXPECT_EQ(back.national, panel.national);
    EXPECT_EQ(back.years, panel.years);
    for (const auto& [k, s] : panel.series) EXPECT_EQ(back.series.at(k).values, s.values);
    std::filesystem::remove_all(dir);
}
