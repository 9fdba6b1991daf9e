#pragma once

#include "mortfts/common.hpp"

#include <algorithm>
#include <numeric>
#include <vector>

namespace mortfts {

struct NelderMeadOptions {
    double ftol = 1e-8;       // spread of objective values across the simplex
    double xtol = 1e-7;       // largest vertex distance from the best vertex
    double initial_step = 0.5;
    int max_iterations = 4000;
};

struct NelderMeadResult {
    Vector x;
    double value = 0.0;
    int iterations = 0;
    bool converged = false;
};

/// Unconstrained derivative-free minimisation (standard reflection/expansion/contraction/shrink).
template <typename Objective>
NelderMeadResult nelder_mead(Objective&& f, const Vector& start, const NelderMeadOptions& opts = {}) {
    const Eigen::Index d = start.size();
    std::vector<Vector> pts(static_cast<std::size_t>(d) + 1, start);
    std::vector<double> vals(static_cast<std::size_t>(d) + 1);
    for (Eigen::Index i = 0; i < d; ++i) pts[static_cast<std::size_t>(i) + 1](i) += opts.initial_step;
    for (std::size_t i = 0; i < pts.size(); ++i) vals[i] = f(pts[i]);

    std::vector<std::size_t> order(pts.size());
    NelderMeadResult res;
    for (res.iterations = 0; res.iterations < opts.max_iterations; ++res.iterations) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return vals[a] < vals[b]; });
        const std::size_t best = order.front(), worst = order.back(), second = order[order.size() - 2];

        const double spread = vals[worst] - vals[best];
        double size = 0.0;
        for (const auto& p : pts) size = std::max(size, (p - pts[best]).cwiseAbs().maxCoeff());
        if (spread == 0.0 || (spread <= opts.ftol && size <= opts.xtol)) {
            res.converged = true;
            break;
        }

        Vector centroid = Vector::Zero(d);
        for (std::size_t i = 0; i < pts.size(); ++i)
            if (i != worst) centroid += pts[i];
        centroid /= static_cast<double>(d);

        Vector xr = centroid + (centroid - pts[worst]);
        const double fr = f(xr);
        if (fr < vals[best]) {
            Vector xe = centroid + 2.0 * (centroid - pts[worst]);
            const double fe = f(xe);
            if (fe < fr) {
                pts[worst] = xe;
                vals[worst] = fe;
            } else {
                pts[worst] = xr;
                vals[worst] = fr;
            }
            continue;
        }
        if (fr < vals[second]) {
            pts[worst] = xr;
            vals[worst] = fr;
            continue;
        }
        const bool outside = fr < vals[worst];
        Vector xc = outside ? Vector(centroid + 0.5 * (xr - centroid)) : Vector(centroid + 0.5 * (pts[worst] - centroid));
        const double fc = f(xc);
        if (fc <= (outside ? fr : vals[worst])) {
            pts[worst] = xc;
            vals[worst] = fc;
            continue;
        }
        for (std::size_t i = 0; i < pts.size(); ++i) {
            if (i == best) continue;
            pts[i] = pts[best] + 0.5 * (pts[i] - pts[best]);
            vals[i] = f(pts[i]);
        }
    }
    const auto it = std::min_element(vals.begin(), vals.end());
    res.x = pts[static_cast<std::size_t>(it - vals.begin())];
    res.value = *it;
    return res;
}

}  // namespace mortfts
