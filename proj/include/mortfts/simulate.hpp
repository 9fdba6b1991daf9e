#pragma once

// Synthetic life-table death-count panels. Each group has a modal age of death that drifts upward
// over time with AR(1) shocks shared by both sexes, plus an infant-mortality component and
// lognormal cell noise.

#include "mortfts/panel_data.hpp"

#include <cmath>
#include <cstdint>
#include <iomanip>
#include <ostream>
#include <random>
#include <string>

namespace mortfts {

struct SimulationOptions {
    int groups = 2;
    int first_year = 1975;
    int years = 30;
    int first_age = 0;
    int last_age = 110;
    double radix = 1e5;
    double noise = 0.03;       // sd of the log cell noise
    double shock_sd = 0.6;     // sd of the AR(1) modal-age shocks, in years of age
    double shock_ar = 0.7;
    bool national = true;      // add group "00" holding the average of all groups
    std::uint64_t seed = 20240101;
};

inline std::string simulated_group_id(int g) {
    std::string s = std::to_string(g);
    return s.size() < 2 ? "0" + s : s;
}

inline DeathDensityPanel simulate_panel(const SimulationOptions& o) {
    if (o.groups < 1 || o.years < 2) throw Error("simulation needs at least one group and two years");
    std::mt19937_64 rng(o.seed);
    std::normal_distribution<double> normal(0.0, 1.0);

    DeathDensityPanel panel;
    panel.grid = AgeGrid::range(o.first_age, o.last_age);
    panel.radix = o.radix;
    for (int t = 0; t < o.years; ++t) panel.years.push_back(o.first_year + t);
    if (o.national) {
        panel.national = "00";
        panel.groups.push_back("00");
    }
    const auto n = static_cast<Eigen::Index>(o.years);
    const auto A = static_cast<Eigen::Index>(panel.grid.size());
    const double span = static_cast<double>(o.last_age - o.first_age);

    std::map<Sex, Matrix> national_sum;
    for (Sex s : {Sex::Female, Sex::Male}) national_sum[s] = Matrix::Zero(n, A);

    for (int g = 1; g <= o.groups; ++g) {
        const std::string id = simulated_group_id(g);
        panel.groups.push_back(id);
        const double offset = 1.5 * normal(rng);
        const double slope = 0.22 + 0.04 * normal(rng);
        Vector shock(n);
        double z = 0.0;
        for (Eigen::Index t = 0; t < n; ++t) {
            z = o.shock_ar * z + o.shock_sd * normal(rng);
            shock(t) = z;
        }
        for (Sex s : {Sex::Female, Sex::Male}) {
            const double sex_shift = s == Sex::Female ? 5.0 : 0.0;
            DeathDensitySeries series;
            series.grid = panel.grid;
            series.years = panel.years;
            series.radix = o.radix;
            series.values.resize(n, A);
            for (Eigen::Index t = 0; t < n; ++t) {
                const double tt = static_cast<double>(t);
                const double mode = o.first_age + span * (0.68 + (offset + sex_shift + slope * tt + shock(t)) / span);
                const double spread = span * (0.105 - 0.0004 * tt);
                const double infant = 0.02 * std::exp(-0.05 * tt);
                for (Eigen::Index a = 0; a < A; ++a) {
                    const double u = static_cast<double>(a);
                    const double d = (u + o.first_age - mode) / spread;
                    const double adult = std::exp(-0.5 * d * d);
                    const double young = std::exp(-u / 1.5);
                    const double base = (1.0 - infant) * adult + infant * young * 20.0 + 2e-4;
                    series.values(t, a) = base * std::exp(o.noise * normal(rng));
                }
                series.values.row(t) *= o.radix / series.values.row(t).sum();
            }
            national_sum[s] += series.values;
            panel.series.emplace(SeriesKey{id, s}, std::move(series));
        }
    }
    if (o.national) {
        for (Sex s : {Sex::Female, Sex::Male}) {
            DeathDensitySeries nat;
            nat.grid = panel.grid;
            nat.years = panel.years;
            nat.radix = o.radix;
            nat.values = national_sum[s] / static_cast<double>(o.groups);
            panel.series.emplace(SeriesKey{"00", s}, std::move(nat));
        }
    }
    return panel;
}

/// Long-format CSV (group,sex,year,age,deaths), the layout load_panel reads.
inline void write_long_csv(const DeathDensityPanel& panel, std::ostream& out) {
    out << "group,sex,year,age,deaths\n";
    out << std::setprecision(17);
    const auto& ages = panel.grid.ages();
    for (const auto& g : panel.groups)
        for (Sex s : {Sex::Female, Sex::Male}) {
            if (!panel.has(g, s)) continue;
            const auto& series = panel.at(g, s);
            for (std::size_t t = 0; t < series.years.size(); ++t)
                for (std::size_t a = 0; a < ages.size(); ++a)
                    out << g << ',' << to_string(s) << ',' << series.years[t] << ',' << ages[a] << ','
                        << series.values(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(a)) << '\n';
        }
}

}  // namespace mortfts
