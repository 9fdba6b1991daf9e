#include "mortfts/io.hpp"
#include "mortfts/parallel.hpp"
#include "mortfts/pipeline.hpp"
#include "mortfts/simulate.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

using namespace mortfts;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("mortfts_pipeline_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

/// Writes a small simulated panel and returns a config that runs on it.
nlohmann::json small_config(const fs::path& dir) {
    SimulationOptions so;
    so.groups = 2;
    so.years = 12;
    so.last_age = 20;
    std::ofstream out(dir / "panel.csv");
    write_long_csv(simulate_panel(so), out);
    return nlohmann::json{{"data", {{"path", "panel.csv"}, {"national", "00"}}},
                          {"models", {"ufts", "mfts"}},
                          {"selection", {"evr"}},
                          {"output", "out"}};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
    std::vector<std::vector<std::string>> rows;
    std::istringstream in(slurp(p));
    std::string line;
    while (std::getline(in, line)) {
        std::vector<std::string> cells;
        std::stringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        rows.push_back(cells);
    }
    return rows;
}

RunConfig config_at(const fs::path& dir, nlohmann::json j, const std::string& out) {
    RunConfig c = parse_config(j, dir);
    c.output = (dir / out).string();
    return c;
}

}  // namespace

TEST(ParseConfig, RejectsBadInput) {
    const nlohmann::json base{{"data", {{"path", "x.csv"}}}};
    EXPECT_NO_THROW(parse_config(base, "."));
    auto j = base;
    j["models"] = {"ufts", "arima"};
    EXPECT_THROW(parse_config(j, "."), ConfigError);
    j = base;
    j["colour"] = 1;
    EXPECT_THROW(parse_config(j, "."), ConfigError);
    j = base;
    j["intervals"] = {{"alphas", {0.2, 1.5}}};
    EXPECT_THROW(parse_config(j, "."), ConfigError);
    j = base;
    j["selection"] = {"evr", "k0"};
    EXPECT_THROW(parse_config(j, "."), ConfigError);
    j = base;
    j["hdfpca"] = {{"p0", 2}, {"r", 3}};
    EXPECT_THROW(parse_config(j, "."), ConfigError);
    EXPECT_THROW(parse_config(nlohmann::json{{"models", {"ufts"}}}, "."), ConfigError);
}

TEST(ParseConfig, DefaultsAndSelections) {
    const RunConfig c = parse_config(nlohmann::json{{"data", {{"path", "x.csv"}}}, {"selection", {"evr", "6", "k3"}}}, "/base");
    EXPECT_EQ(c.models.size(), 5u);
    ASSERT_EQ(c.selections.size(), 3u);
    EXPECT_EQ(c.selections[1].label(), "k6");
    EXPECT_EQ(c.selections[2].fixed_k, 3);
    EXPECT_EQ(c.alphas, (std::vector<double>{0.2, 0.05}));
    EXPECT_EQ(c.resolve("x.csv"), fs::path("/base/x.csv"));
    EXPECT_EQ(c.specs().size(), 15u);
}

TEST(Run, DeterministicAcrossWorkerCounts) {
    const fs::path dir = scratch_dir("determinism");
    const auto j = small_config(dir);
    const auto a = run(config_at(dir, j, "a"), {}, serial_for);
    const auto b = run(config_at(dir, j, "b"), {}, thread_for(3));
    EXPECT_EQ(a.failed_origins, 0u);
    EXPECT_EQ(a.files, b.files);
    std::size_t compared = 0;
    for (const auto& e : fs::recursive_directory_iterator(dir / "a")) {
        if (!e.is_regular_file()) continue;
        const fs::path rel = fs::relative(e.path(), dir / "a");
        ASSERT_TRUE(fs::exists(dir / "b" / rel)) << rel;
        EXPECT_EQ(slurp(e.path()), slurp(dir / "b" / rel)) << rel;
        ++compared;
    }
    EXPECT_EQ(compared, a.files);
    fs::remove_all(dir);
}

TEST(Run, LayoutAndManifest) {
    const fs::path dir = scratch_dir("layout");
    const auto summary = run(config_at(dir, small_config(dir), "out"));
    const fs::path out = dir / "out";
    EXPECT_FALSE(fs::exists(dir / "out.partial"));
    for (const char* f : {"forecasts/ufts_evr/01_F.csv", "forecasts/mfts_evr/02_M.csv",
                          "intervals/ufts_evr/sd_a0.2/01_F_lower.csv", "intervals/mfts_evr/conformal_a0.05/02_M_upper.csv",
                          "metrics/point_evr.csv", "metrics/interval_evr_sd.csv", "metrics/interval_evr_conformal.csv",
                          "metrics/point_by_group.csv", "metrics/interval_by_group.csv", "heatmaps/point_evr_KLD_F.csv",
                          "heatmaps/interval_evr_conformal_a0.2_score_M.csv", "diagnostics/kld_by_year_F.csv",
                          "diagnostics/kld_by_age_M.csv", "diagnostics/ccf_F.csv", "manifest.json"})
        EXPECT_TRUE(fs::exists(out / f)) << f;

    const auto manifest = nlohmann::json::parse(slurp(out / "manifest.json"));
    for (const char* k : {"config", "data", "split", "plans", "decisions", "specs", "failed_origins", "files"})
        EXPECT_TRUE(manifest.contains(k)) << k;
    EXPECT_EQ(manifest["files"].size() + 1, summary.files);
    EXPECT_EQ(manifest["split"]["train"], nlohmann::json({1975, 1978}));
    EXPECT_EQ(manifest["specs"].size(), 2u);

    // forecast files: header year + 21 ages, one row per test year, rows sum to the radix
    const auto fc = read_csv(out / "forecasts/ufts_evr/01_F.csv");
    ASSERT_EQ(fc.size(), 5u);
    EXPECT_EQ(fc[0].size(), 22u);
    EXPECT_EQ(fc[0][0], "year");
    EXPECT_EQ(fc[1][0], "1987");
    double sum = 0.0;
    for (std::size_t i = 1; i < fc[1].size(); ++i) sum += std::stod(fc[1][i]);
    EXPECT_NEAR(sum, 1e5, 1e-6);

    const auto pm = read_csv(out / "metrics/point_evr.csv");
    EXPECT_EQ(pm[0], (std::vector<std::string>{"metric", "sex", "h", "ufts", "mfts"}));
    fs::remove_all(dir);
}

TEST(Run, FailureLeavesNoOutput) {
    const fs::path dir = scratch_dir("failure");
    auto j = small_config(dir);
    j["models"] = {"ufts", "hdfpca"};
    j["hdfpca"] = {{"p0", 4}, {"r", 3}};  // more factors than groups
    EXPECT_THROW(run(config_at(dir, j, "out")), Error);
    EXPECT_FALSE(fs::exists(dir / "out"));
    EXPECT_FALSE(fs::exists(dir / "out.partial"));

    j = small_config(dir);
    j["data"]["path"] = "missing.csv";
    EXPECT_THROW(run(config_at(dir, j, "out")), Error);
    EXPECT_FALSE(fs::exists(dir / "out.partial"));
    fs::remove_all(dir);
}

TEST(Run, DemoMetricsMatchGolden) {
    const fs::path src = MORTFTS_SOURCE_DIR;
    const fs::path out = fs::temp_directory_path() / "mortfts_pipeline_golden";
    RunConfig c = load_config(src / "demo/demo_config.json");
    c.output = out.string();
    run(c);
    for (const char* name : {"point_evr.csv", "point_k6.csv", "interval_evr_sd.csv", "interval_k6_conformal.csv"}) {
        const auto got = read_csv(out / "metrics" / name);
        const auto want = read_csv(src / "tests/golden" / name);
        ASSERT_EQ(got.size(), want.size()) << name;
        for (std::size_t r = 0; r < want.size(); ++r) {
            ASSERT_EQ(got[r].size(), want[r].size()) << name << " row " << r;
            for (std::size_t k = 0; k < want[r].size(); ++k) {
                char* end = nullptr;
                const double w = std::strtod(want[r][k].c_str(), &end);
                if (end == want[r][k].c_str() || *end != '\0') {
                    EXPECT_EQ(got[r][k], want[r][k]);
                    continue;
                }
                const double g = std::strtod(got[r][k].c_str(), nullptr);
                if (std::isnan(w)) {
                    EXPECT_TRUE(std::isnan(g)) << name << " row " << r << " col " << k;
                    continue;
                }
                EXPECT_NEAR(g, w, 1e-8 * std::max(1.0, std::abs(w))) << name << " row " << r << " col " << k;
            }
        }
    }
    fs::remove_all(out);
}
