#pragma once

// Exploratory diagnostics of a panel against its national aggregate.

#include "mortfts/metrics.hpp"
#include "mortfts/panel_data.hpp"

#include <string>
#include <vector>

namespace mortfts {

struct KlMatrices {
    std::vector<std::string> groups;
    std::vector<int> years;
    std::vector<int> ages;
    Matrix by_year;  // groups x years, averaged over ages
    Matrix by_age;   // groups x ages, averaged over years
};

/// Symmetric KLD of each group's yearly density against the national density of the same year.
inline KlMatrices diagnostics_klmatrix(const DeathDensityPanel& panel, Sex sex) {
    if (!panel.national || !panel.has(*panel.national, sex))
        throw Error("KLD diagnostics need a national series for sex " + std::string(to_string(sex)));
    const DeathDensitySeries& nat = panel.at(*panel.national, sex);
    KlMatrices out;
    out.years = panel.years;
    out.ages = panel.grid.ages();
    for (const auto& g : panel.modelled_groups())
        if (panel.has(g, sex)) out.groups.push_back(g);
    const auto G = static_cast<Eigen::Index>(out.groups.size());
    const Eigen::Index n = nat.values.rows(), A = nat.values.cols();
    out.by_year = Matrix::Zero(G, n);
    out.by_age = Matrix::Zero(G, A);
    for (Eigen::Index g = 0; g < G; ++g) {
        const DeathDensitySeries& s = panel.at(out.groups[static_cast<std::size_t>(g)], sex);
        for (Eigen::Index t = 0; t < n; ++t) {
            const Vector p = to_floored_probability(s.values.row(t).transpose());
            const Vector q = to_floored_probability(nat.values.row(t).transpose());
            for (Eigen::Index u = 0; u < A; ++u) {
                const double term = jeffrey_term(p(u), q(u));
                out.by_year(g, t) += term;
                out.by_age(g, u) += term;
            }
        }
        out.by_year.row(g) /= static_cast<double>(A);
        out.by_age.row(g) /= static_cast<double>(n);
    }
    return out;
}

/// Functional cross-correlation at lags 0..max_lag: Hilbert-Schmidt norm of the lag-h
/// cross-covariance surface over the square root of the product of the two lag-0 traces.
inline Vector functional_ccf(const Matrix& x, const Matrix& y, int max_lag) {
    if (x.rows() != y.rows() || x.cols() != y.cols()) throw Error("functional_ccf: series differ in shape");
    const Eigen::Index n = x.rows();
    if (max_lag < 0 || n <= max_lag + 2) throw Error("functional_ccf: need more than max_lag + 2 observations");
    const Matrix xc = x.rowwise() - x.colwise().mean();
    const Matrix yc = y.rowwise() - y.colwise().mean();
    const double dn = static_cast<double>(n);
    const double trace_x = xc.squaredNorm() / dn;
    const double trace_y = yc.squaredNorm() / dn;
    if (!(trace_x > 0.0) || !(trace_y > 0.0)) throw Error("functional_ccf: series has zero variance");
    const double denom = std::sqrt(trace_x) * std::sqrt(trace_y);
    Vector rho(max_lag + 1);
    for (int h = 0; h <= max_lag; ++h) {
        const Matrix c = xc.topRows(n - h).transpose() * yc.bottomRows(n - h) / dn;
        rho(h) = c.norm() / denom;
    }
    return rho;
}

inline Vector functional_acf(const Matrix& x, int max_lag) { return functional_ccf(x, x, max_lag); }

}  // namespace mortfts
