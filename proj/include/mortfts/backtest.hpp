#pragma once

// Expanding-window backtests: refit at every origin, forecast 1..H steps, keep every forecast.

#include "mortfts/cdf_transform.hpp"
#include "mortfts/models.hpp"
#include "mortfts/panel_data.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace mortfts {

/// Origins are counts of training years: origin o trains on the first o years of the panel.
struct BacktestPlan {
    int initial_end = 0;  // first origin
    int final_end = 0;    // last year (count) that can be a forecast target
    int max_horizon = 1;

    void validate(int n_years) const {
        if (initial_end < 2) throw Error("backtest needs at least two training years");
        if (final_end <= initial_end) throw Error("backtest final year must come after the first origin");
        if (final_end > n_years) throw Error("backtest runs past the end of the panel");
        if (max_horizon < 1) throw Error("backtest horizon must be at least 1");
    }

    [[nodiscard]] std::vector<int> origins() const {
        std::vector<int> o;
        for (int t = initial_end; t < final_end; ++t) o.push_back(t);
        return o;
    }

    [[nodiscard]] int horizon_at(int origin) const { return std::min(max_horizon, final_end - origin); }

    /// Number of horizon-h forecasts in the triangle.
    [[nodiscard]] int count_at(int h) const {
        if (h < 1 || h > max_horizon) return 0;
        return std::max(0, final_end - initial_end - h + 1);
    }
};

struct ForecastCube {
    int first_origin = 0;
    int max_horizon = 0;
    std::vector<std::optional<Vector>> cells;  // [(origin - first_origin) * max_horizon + h - 1]

    [[nodiscard]] const std::optional<Vector>& at(int origin, int h) const {
        return cells.at(static_cast<std::size_t>((origin - first_origin) * max_horizon + h - 1));
    }
    std::optional<Vector>& at(int origin, int h) {
        return cells.at(static_cast<std::size_t>((origin - first_origin) * max_horizon + h - 1));
    }

    [[nodiscard]] int count_at(int h) const {
        int c = 0;
        const int origins = max_horizon ? static_cast<int>(cells.size()) / max_horizon : 0;
        for (int o = 0; o < origins; ++o)
            if (at(first_origin + o, h)) ++c;
        return c;
    }
};

struct OriginRecord {
    int origin = 0;
    std::string error;  // empty when the fit succeeded
    std::vector<FitNote> notes;
    std::size_t rows_rearranged = 0;
};

struct BacktestResult {
    BacktestPlan plan;
    ModelSpec spec;
    std::map<SeriesKey, ForecastCube> cubes;
    std::vector<OriginRecord> origins;
};

/// Logit-CDF curves of every modelled (group, sex) over the full year range.
inline LogitPanel logit_panel(const DeathDensityPanel& panel, double clip_epsilon = kDefaultClipEpsilon) {
    LogitPanel lp;
    lp.groups = panel.modelled_groups();
    for (const auto& g : lp.groups)
        for (Sex s : {Sex::Female, Sex::Male})
            if (panel.has(g, s)) lp.series[SeriesKey{g, s}] = to_logit(panel.at(g, s), clip_epsilon).values;
    return lp;
}

inline LogitPanel head_years(const LogitPanel& full, int years) {
    LogitPanel lp;
    lp.groups = full.groups;
    for (const auto& [k, m] : full.series) lp.series[k] = m.topRows(years);
    return lp;
}

struct OriginForecast {
    std::map<SeriesKey, Matrix> densities;  // horizon x A
    OriginRecord record;
};

/// One fit on the first `origin` years, densities for steps 1..horizon.
inline OriginForecast forecast_from_origin(const LogitPanel& full, double radix, int origin, int horizon, const ModelSpec& spec,
                                           const ScoreForecaster& forecaster) {
    OriginForecast out;
    out.record.origin = origin;
    PanelForecast pf = forecast_panel(head_years(full, origin), spec, horizon, forecaster);
    InverseReport rep;
    for (auto& [key, logit] : pf.logit) out.densities[key] = forecast_density(logit, radix, &rep);
    out.record.notes = std::move(pf.notes);
    out.record.rows_rearranged = rep.rows_rearranged;
    return out;
}

inline BacktestResult run_expanding_window(const DeathDensityPanel& panel, const BacktestPlan& plan, const ModelSpec& spec,
                                           const ParallelFor& parallel = serial_for,
                                           const ScoreForecaster& forecaster = ets_forecaster(),
                                           const LogitPanel* precomputed = nullptr) {
    plan.validate(static_cast<int>(panel.years.size()));
    spec.validate();
    LogitPanel local;
    if (!precomputed) local = logit_panel(panel);
    const LogitPanel& full = precomputed ? *precomputed : local;

    const std::vector<int> origins = plan.origins();
    std::vector<OriginForecast> slots(origins.size());
    parallel(origins.size(), [&](std::size_t i) {
        const int o = origins[i];
        try {
            slots[i] = forecast_from_origin(full, panel.radix, o, plan.horizon_at(o), spec, forecaster);
        } catch (const std::exception& e) {
            slots[i] = OriginForecast{};
            slots[i].record.origin = o;
            slots[i].record.error = e.what();
        }
    });

    BacktestResult result;
    result.plan = plan;
    result.spec = spec;
    for (const auto& [key, m] : full.series) {
        ForecastCube cube;
        cube.first_origin = plan.initial_end;
        cube.max_horizon = plan.max_horizon;
        cube.cells.assign(origins.size() * static_cast<std::size_t>(plan.max_horizon), std::nullopt);
        result.cubes.emplace(key, std::move(cube));
    }
    for (std::size_t i = 0; i < origins.size(); ++i) {
        for (auto& [key, dens] : slots[i].densities) {
            auto& cube = result.cubes.at(key);
            for (Eigen::Index h = 1; h <= dens.rows(); ++h) cube.at(origins[i], static_cast<int>(h)) = dens.row(h - 1).transpose();
        }
        result.origins.push_back(std::move(slots[i].record));
    }
    return result;
}

/// Holdout/forecast pairs at horizon h whose target year count is at most `last_target`.
struct HorizonPairs {
    Matrix actual, forecast;  // J x A
    std::vector<int> target_years;
};

inline HorizonPairs horizon_pairs(const BacktestResult& bt, const DeathDensityPanel& panel, const SeriesKey& key, int h,
                                  int last_target) {
    const ForecastCube& cube = bt.cubes.at(key);
    const DeathDensitySeries& s = panel.at(key.group, key.sex);
    std::vector<int> rows;
    std::vector<const Vector*> fc;
    for (int o : bt.plan.origins()) {
        if (h > bt.plan.horizon_at(o) || o + h > last_target) continue;
        const auto& cell = cube.at(o, h);
        if (!cell) continue;
        rows.push_back(o + h - 1);
        fc.push_back(&*cell);
    }
    HorizonPairs p;
    p.actual.resize(static_cast<Eigen::Index>(rows.size()), s.values.cols());
    p.forecast.resize(static_cast<Eigen::Index>(rows.size()), s.values.cols());
    for (std::size_t j = 0; j < rows.size(); ++j) {
        p.actual.row(static_cast<Eigen::Index>(j)) = s.values.row(rows[j]);
        p.forecast.row(static_cast<Eigen::Index>(j)) = fc[j]->transpose();
        p.target_years.push_back(s.years[static_cast<std::size_t>(rows[j])]);
    }
    return p;
}

}  // namespace mortfts
