#pragma once

// Death densities <-> unconstrained logit-CDF curves.

#include "mortfts/panel_data.hpp"

#include <algorithm>
#include <cmath>

namespace mortfts {

inline constexpr double kDefaultClipEpsilon = 1e-10;

struct CdfSeries {
    AgeGrid grid;
    std::vector<int> years;
    Matrix values;  // n x A, last column exactly 1
};

/// Logit of the CDF on the first A-1 ages. `grid` is the full age grid of the source densities.
struct LogitCdfSeries {
    AgeGrid grid;
    std::vector<int> years;
    Matrix values;  // n x (A-1)
    double clip_epsilon = kDefaultClipEpsilon;
};

inline Matrix to_cdf(const Matrix& probabilities) {
    Matrix D(probabilities.rows(), probabilities.cols());
    for (Eigen::Index t = 0; t < probabilities.rows(); ++t) {
        double acc = 0.0;
        for (Eigen::Index x = 0; x < probabilities.cols(); ++x) {
            acc += probabilities(t, x);
            D(t, x) = std::clamp(acc, 0.0, 1.0);
        }
        D(t, probabilities.cols() - 1) = 1.0;
    }
    return D;
}

inline CdfSeries to_cdf(const DeathDensitySeries& series) {
    return CdfSeries{series.grid, series.years, to_cdf(normalize_to_probability(series))};
}

inline double logit(double p) { return std::log(p / (1.0 - p)); }

inline double inverse_logit(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

/// Drops the last (identically one) column and maps the rest through the logit after clipping
/// into [eps, 1 - eps].
inline Matrix to_logit(const Matrix& cdf, double clip_epsilon = kDefaultClipEpsilon) {
    const Eigen::Index m = cdf.cols() - 1;
    Matrix X(cdf.rows(), m);
    for (Eigen::Index t = 0; t < cdf.rows(); ++t)
        for (Eigen::Index x = 0; x < m; ++x)
            X(t, x) = logit(std::clamp(cdf(t, x), clip_epsilon, 1.0 - clip_epsilon));
    return X;
}

inline LogitCdfSeries to_logit(const CdfSeries& cdf, double clip_epsilon = kDefaultClipEpsilon) {
    return LogitCdfSeries{cdf.grid, cdf.years, to_logit(cdf.values, clip_epsilon), clip_epsilon};
}

inline LogitCdfSeries to_logit(const DeathDensitySeries& series, double clip_epsilon = kDefaultClipEpsilon) {
    return to_logit(to_cdf(series), clip_epsilon);
}

struct InverseReport {
    std::size_t rows_rearranged = 0;
};

/// Inverse logit, a trailing column of ones, monotone rearrangement of each CDF row, then first
/// differences scaled by the radix. Rows of the result are nonnegative and sum to the radix.
inline Matrix from_logit(const Matrix& logits, double radix = 1e5, InverseReport* report = nullptr) {
    const Eigen::Index m = logits.cols();
    Matrix d(logits.rows(), m + 1);
    std::vector<double> D(static_cast<std::size_t>(m) + 1);
    for (Eigen::Index t = 0; t < logits.rows(); ++t) {
        for (Eigen::Index x = 0; x < m; ++x) {
            if (!std::isfinite(logits(t, x))) throw Error("non-finite logit value in row " + std::to_string(t));
            D[static_cast<std::size_t>(x)] = inverse_logit(logits(t, x));
        }
        D.back() = 1.0;
        if (!std::is_sorted(D.begin(), D.end())) {
            std::sort(D.begin(), D.end());
            if (report) ++report->rows_rearranged;
        }
        double prev = 0.0;
        for (Eigen::Index x = 0; x <= m; ++x) {
            d(t, x) = (D[static_cast<std::size_t>(x)] - prev) * radix;
            prev = D[static_cast<std::size_t>(x)];
        }
    }
    return d;
}

inline DeathDensitySeries from_logit(const LogitCdfSeries& x, double radix = 1e5, InverseReport* report = nullptr) {
    return DeathDensitySeries{x.grid, x.years, from_logit(x.values, radix, report), radix};
}

}  // namespace mortfts
