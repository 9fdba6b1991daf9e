#pragma once

#include "mortfts/common.hpp"

#include <random>

namespace mortfts::testutil {

inline Matrix random_matrix(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double sd = 1.0) {
    std::normal_distribution<double> z(0.0, sd);
    Matrix m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = z(rng);
    return m;
}

/// Strictly positive density row summing to `total`.
inline Vector random_density(std::mt19937_64& rng, Eigen::Index A, double total = 1.0, double floor = 1e-3) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Vector d(A);
    for (Eigen::Index a = 0; a < A; ++a) d(a) = u(rng) + floor;
    return d * (total / d.sum());
}

inline double max_abs(const Matrix& m) { return m.size() ? m.cwiseAbs().maxCoeff() : 0.0; }

}  // namespace mortfts::testutil
