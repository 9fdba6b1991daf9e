#pragma once

// Point and interval forecast accuracy measures for density-valued forecasts. Inputs are J x A
// matrices whose rows are (holdout year, forecast) pairs at one horizon.

#include "mortfts/common.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace mortfts {

/// Floor applied to normalised densities before taking logarithms.
inline constexpr double kDensityFloor = 1e-12;

inline Vector to_floored_probability(const Eigen::Ref<const Vector>& density) {
    const double total = density.sum();
    if (!(total > 0.0)) throw Error("density has no mass");
    return (density / total).cwiseMax(kDensityFloor);
}

/// p (ln p - ln q) + q (ln q - ln p) for one cell.
inline double jeffrey_term(double p, double q) {
    const double lp = std::log(p), lq = std::log(q);
    return p * (lp - lq) + q * (lq - lp);
}

namespace detail {
inline void check_pairs(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) throw Error("metric inputs differ in shape");
    if (a.rows() == 0 || a.cols() == 0) throw Error("metric inputs are empty");
}
}  // namespace detail

/// Symmetric Kullback-Leibler (Jeffrey) divergence averaged over all pairs and ages.
inline double kld_sym(const Matrix& actual, const Matrix& forecast) {
    detail::check_pairs(actual, forecast);
    double sum = 0.0;
    for (Eigen::Index j = 0; j < actual.rows(); ++j) {
        const Vector p = to_floored_probability(actual.row(j).transpose());
        const Vector q = to_floored_probability(forecast.row(j).transpose());
        for (Eigen::Index u = 0; u < p.size(); ++u) sum += jeffrey_term(p(u), q(u));
    }
    return sum / static_cast<double>(actual.size());
}

/// Jensen-Shannon divergence against the pointwise geometric mean, age-averaged per pair,
/// square-rooted, then averaged over pairs.
inline double jsd_root(const Matrix& actual, const Matrix& forecast) {
    detail::check_pairs(actual, forecast);
    double total = 0.0;
    for (Eigen::Index j = 0; j < actual.rows(); ++j) {
        const Vector p = to_floored_probability(actual.row(j).transpose());
        const Vector q = to_floored_probability(forecast.row(j).transpose());
        double jsd = 0.0;
        for (Eigen::Index u = 0; u < p.size(); ++u) {
            const double lp = std::log(p(u)), lq = std::log(q(u));
            const double ld = 0.5 * (lp + lq);
            jsd += 0.5 * p(u) * (lp - ld) + 0.5 * q(u) * (lq - ld);
        }
        total += std::sqrt(std::max(0.0, jsd / static_cast<double>(p.size())));
    }
    return total / static_cast<double>(actual.rows());
}

struct CoverageResult {
    double ecp = 0.0;          // fraction of cells inside [lower, upper]
    double noncoverage = 0.0;  // fraction outside
    double cpd = 0.0;          // |noncoverage - alpha|
};

inline CoverageResult ecp_cpd(const Matrix& actual, const Matrix& lower, const Matrix& upper, double alpha) {
    detail::check_pairs(actual, lower);
    detail::check_pairs(actual, upper);
    std::size_t inside = 0, outside = 0;
    for (Eigen::Index j = 0; j < actual.rows(); ++j)
        for (Eigen::Index u = 0; u < actual.cols(); ++u) {
            const double d = actual(j, u);
            if (d > upper(j, u) || d < lower(j, u))
                ++outside;
            else
                ++inside;
        }
    const double n = static_cast<double>(actual.size());
    CoverageResult r;
    r.ecp = static_cast<double>(inside) / n;
    r.noncoverage = static_cast<double>(outside) / n;
    r.cpd = std::abs(r.noncoverage - alpha);
    return r;
}

inline double interval_score_cell(double lower, double upper, double actual, double alpha) {
    double s = upper - lower;
    if (actual < lower) s += 2.0 / alpha * (lower - actual);
    if (actual > upper) s += 2.0 / alpha * (actual - upper);
    return s;
}

/// Mean interval score over all pairs and ages.
inline double interval_score(const Matrix& actual, const Matrix& lower, const Matrix& upper, double alpha) {
    detail::check_pairs(actual, lower);
    detail::check_pairs(actual, upper);
    if (!(alpha > 0.0)) throw Error("interval score needs alpha > 0");
    double sum = 0.0;
    for (Eigen::Index j = 0; j < actual.rows(); ++j)
        for (Eigen::Index u = 0; u < actual.cols(); ++u) sum += interval_score_cell(lower(j, u), upper(j, u), actual(j, u), alpha);
    return sum / static_cast<double>(actual.size());
}

struct HorizonSummary {
    double mean = 0.0;
    double median = 0.0;
};

/// Mean and median of per-horizon values.
inline HorizonSummary summarize_horizons(std::vector<double> values) {
    if (values.empty()) return {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
    HorizonSummary s;
    for (double v : values) s.mean += v;
    s.mean /= static_cast<double>(values.size());
    std::sort(values.begin(), values.end());
    const std::size_t k = values.size() / 2;
    s.median = values.size() % 2 ? values[k] : 0.5 * (values[k - 1] + values[k]);
    return s;
}

/// Per horizon, number of groups for which each model has the smallest error.
struct HeatmapCounts {
    std::vector<std::string> models;      // tie-break order
    std::vector<std::vector<int>> counts;  // [horizon][model]
};

/// errors[model][group][horizon]; non-finite errors never win. Ties go to the earlier model.
inline HeatmapCounts best_method_counts(const std::vector<std::string>& models,
                                        const std::vector<std::vector<std::vector<double>>>& errors) {
    if (models.size() != errors.size() || models.empty()) throw Error("best_method_counts: one error table per model required");
    const std::size_t groups = errors.front().size();
    const std::size_t horizons = groups ? errors.front().front().size() : 0;
    for (const auto& table : errors) {
        if (table.size() != groups) throw Error("best_method_counts: models cover different groups");
        for (const auto& row : table)
            if (row.size() != horizons) throw Error("best_method_counts: models cover different horizons");
    }
    HeatmapCounts out;
    out.models = models;
    out.counts.assign(horizons, std::vector<int>(models.size(), 0));
    for (std::size_t h = 0; h < horizons; ++h)
        for (std::size_t g = 0; g < groups; ++g) {
            std::size_t winner = models.size();
            double best = std::numeric_limits<double>::infinity();
            for (std::size_t m = 0; m < models.size(); ++m) {
                const double v = errors[m][g][h];
                if (std::isfinite(v) && v < best) {
                    best = v;
                    winner = m;
                }
            }
            if (winner == models.size()) winner = 0;
            ++out.counts[h][winner];
        }
    return out;
}

}  // namespace mortfts
