#pragma once

// Pointwise prediction intervals calibrated on out-of-sample validation residuals.

#include "mortfts/common.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace mortfts {

/// Density-scale residuals (actual - forecast) of M validation forecasts at one horizon.
struct ResidualBank {
    int horizon = 1;
    Matrix residuals;  // M x A

    [[nodiscard]] Eigen::Index size() const { return residuals.rows(); }
};

/// Rows of `actuals` and `forecasts` are paired validation years.
inline ResidualBank collect_residuals(const Matrix& actuals, const Matrix& forecasts, int horizon) {
    if (actuals.rows() != forecasts.rows() || actuals.cols() != forecasts.cols())
        throw Error("collect_residuals: actuals and forecasts differ in shape");
    if (actuals.rows() < 1) throw Error("collect_residuals: no validation forecasts at horizon " + std::to_string(horizon));
    return ResidualBank{horizon, actuals - forecasts};
}

enum class IntervalMethod { Sd, Conformal };

inline std::string to_string(IntervalMethod m) { return m == IntervalMethod::Sd ? "sd" : "conformal"; }

inline IntervalMethod parse_interval_method(std::string_view s) {
    if (s == "sd") return IntervalMethod::Sd;
    if (s == "conformal") return IntervalMethod::Conformal;
    throw Error("unknown interval method '" + std::string(s) + "' (expected sd or conformal)");
}

struct SdCalibration {
    Vector gamma;  // pointwise standard deviation of the residuals
    double xi = 0.0;
    double alpha = 0.2;
    int horizon = 1;
    double validation_coverage = 0.0;
    bool degenerate = false;  // gamma identically zero
};

struct ConformalCalibration {
    Vector q;
    double alpha = 0.2;
    int horizon = 1;
};

inline constexpr int kXiGridSteps = 500;  // xi = 0.00, 0.01, ..., 5.00

inline double xi_grid_value(int i) { return static_cast<double>(i) / 100.0; }

/// Pointwise sample standard deviation (divisor M - 1).
inline Vector residual_sd(const Matrix& residuals) {
    const Eigen::Index M = residuals.rows();
    if (M < 2) throw Error("standard deviation needs at least two residuals");
    const Vector mean = residuals.colwise().mean().transpose();
    return ((residuals.rowwise() - mean.transpose()).array().square().colwise().sum() / static_cast<double>(M - 1))
        .sqrt()
        .transpose();
}

/// Fraction of (m, u) cells with -xi gamma(u) <= e_m(u) <= xi gamma(u).
inline double sd_coverage(const Matrix& residuals, const Vector& gamma, double xi) {
    std::size_t hit = 0;
    for (Eigen::Index m = 0; m < residuals.rows(); ++m)
        for (Eigen::Index u = 0; u < residuals.cols(); ++u)
            if (std::abs(residuals(m, u)) <= xi * gamma(u)) ++hit;
    return static_cast<double>(hit) / static_cast<double>(residuals.size());
}

/// Smallest grid xi minimising |validation coverage - (1 - alpha)|.
inline SdCalibration calibrate_sd(const ResidualBank& bank, double alpha) {
    if (alpha < 0.0 || alpha >= 1.0) throw Error("alpha must lie in [0, 1)");
    SdCalibration cal;
    cal.alpha = alpha;
    cal.horizon = bank.horizon;
    cal.gamma = residual_sd(bank.residuals);
    if ((cal.gamma.array() == 0.0).all()) {
        cal.degenerate = true;
        cal.xi = 0.0;
        cal.validation_coverage = sd_coverage(bank.residuals, cal.gamma, 0.0);
        return cal;
    }
    // first grid index at which each cell is covered; coverage is monotone in xi
    std::vector<std::size_t> first_covered(kXiGridSteps + 2, 0);
    for (Eigen::Index m = 0; m < bank.residuals.rows(); ++m) {
        for (Eigen::Index u = 0; u < bank.residuals.cols(); ++u) {
            const double e = std::abs(bank.residuals(m, u)), g = cal.gamma(u);
            int lo = 0, hi = kXiGridSteps + 1;  // hi means never covered on the grid
            while (lo < hi) {
                const int mid = (lo + hi) / 2;
                if (e <= xi_grid_value(mid) * g)
                    hi = mid;
                else
                    lo = mid + 1;
            }
            ++first_covered[static_cast<std::size_t>(lo)];
        }
    }
    const double total = static_cast<double>(bank.residuals.size());
    std::size_t covered = 0;
    double best = std::numeric_limits<double>::infinity();
    for (int i = 0; i <= kXiGridSteps; ++i) {
        covered += first_covered[static_cast<std::size_t>(i)];
        const double cov = static_cast<double>(covered) / total;
        const double gap = std::abs(cov - (1.0 - alpha));
        if (gap < best) {
            best = gap;
            cal.xi = xi_grid_value(i);
            cal.validation_coverage = cov;
        }
    }
    return cal;
}

/// Linear interpolation between order statistics at probability p (type 7).
inline double quantile_type7(std::vector<double> values, double p) {
    if (values.empty()) throw Error("quantile of an empty sample");
    std::sort(values.begin(), values.end());
    const double h = (static_cast<double>(values.size()) - 1.0) * p;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

inline ConformalCalibration calibrate_conformal(const ResidualBank& bank, double alpha) {
    if (alpha < 0.0 || alpha >= 1.0) throw Error("alpha must lie in [0, 1)");
    if (bank.size() < 1) throw Error("conformal calibration needs at least one residual");
    ConformalCalibration cal;
    cal.alpha = alpha;
    cal.horizon = bank.horizon;
    cal.q.resize(bank.residuals.cols());
    std::vector<double> column(static_cast<std::size_t>(bank.size()));
    for (Eigen::Index u = 0; u < bank.residuals.cols(); ++u) {
        for (Eigen::Index m = 0; m < bank.size(); ++m) column[static_cast<std::size_t>(m)] = std::abs(bank.residuals(m, u));
        cal.q(u) = quantile_type7(column, 1.0 - alpha);
    }
    return cal;
}

struct IntervalForecast {
    Vector lower, upper;
    IntervalMethod method = IntervalMethod::Sd;
    double alpha = 0.2;
    int horizon = 1;
};

/// point -/+ width, lower bound clamped at zero.
inline IntervalForecast build_interval(const Vector& point, const Vector& width, IntervalMethod method, double alpha, int horizon) {
    if (point.size() != width.size()) throw Error("interval width and point forecast differ in length");
    IntervalForecast f;
    f.method = method;
    f.alpha = alpha;
    f.horizon = horizon;
    f.lower = (point - width).cwiseMax(0.0);
    f.upper = point + width;
    return f;
}

inline IntervalForecast build_interval(const Vector& point, const SdCalibration& cal) {
    return build_interval(point, cal.xi * cal.gamma, IntervalMethod::Sd, cal.alpha, cal.horizon);
}

inline IntervalForecast build_interval(const Vector& point, const ConformalCalibration& cal) {
    return build_interval(point, cal.q, IntervalMethod::Conformal, cal.alpha, cal.horizon);
}

}  // namespace mortfts
