#pragma once

// Functional principal component analysis of a discretised functional time series
// (rows = time, columns = grid points) and selection of the retained component count.

#include "mortfts/common.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

namespace mortfts {

/// Karhunen-Loeve fit. Component k lives in eigenvalues(k), eigenfunctions.row(k), scores.col(k).
struct FpcaModel {
    Vector mean;            // length m
    Vector eigenvalues;     // descending, strictly positive
    Matrix eigenfunctions;  // K x m, orthonormal rows under unit weights
    Matrix scores;          // n x K
    Matrix residuals;       // n x m, what the retained components leave behind
    double total_variance = 0.0;

    [[nodiscard]] Eigen::Index components() const { return eigenvalues.size(); }
    [[nodiscard]] Eigen::Index observations() const { return scores.rows(); }
    [[nodiscard]] Eigen::Index grid_size() const { return mean.size(); }

    /// mean + first K components for every observed row.
    [[nodiscard]] Matrix reconstruct(Eigen::Index K) const {
        K = std::min(K, components());
        Matrix out = (scores.leftCols(K) * eigenfunctions.topRows(K)).eval();
        out.rowwise() += mean.transpose();
        return out;
    }

    [[nodiscard]] Vector explained_variance_ratio() const {
        if (total_variance <= 0.0) return Vector::Zero(components());
        return eigenvalues / total_variance;
    }
};

struct FpcaOptions {
    /// Magnitude of the data the fit belongs to. Components whose variance is below
    /// (1e-10 * reference_scale)^2 are rounding noise. Zero means the RMS of the input itself.
    double reference_scale = 0.0;
    /// Eigenvalues below this multiple of the leading eigenvalue are treated as zero.
    double relative_cutoff = 1e-12;
};

namespace detail {

/// Sum of coordinates nonnegative; if that sum is zero, the first nonzero coordinate is positive.
template <typename Row>
void fix_sign(Row&& v) {
    const double total = v.sum();
    const double scale = v.cwiseAbs().sum();
    bool flip = false;
    if (std::abs(total) > 1e-12 * scale) {
        flip = total < 0.0;
    } else {
        for (Eigen::Index i = 0; i < v.size(); ++i) {
            if (std::abs(v(i)) > 1e-12 * scale) {
                flip = v(i) < 0.0;
                break;
            }
        }
    }
    if (flip) v = -v;
}

}  // namespace detail

inline FpcaModel fit_fpca(const Matrix& data, const FpcaOptions& opts = {}) {
    const Eigen::Index n = data.rows(), m = data.cols();
    if (n < 2) throw Error("fit_fpca needs at least two observations");
    if (m < 1) throw Error("fit_fpca needs a nonempty grid");
    if (!data.allFinite()) throw Error("fit_fpca input has non-finite entries");

    FpcaModel model;
    model.mean = data.colwise().mean().transpose();
    Matrix centered = data.rowwise() - model.mean.transpose();
    model.total_variance = centered.squaredNorm() / static_cast<double>(n - 1);

    Eigen::JacobiSVD<Matrix> svd(centered, Eigen::ComputeThinV);
    const Vector sv = svd.singularValues();
    const double ref = opts.reference_scale > 0.0 ? opts.reference_scale : rms(data);
    const double noise_floor = (1e-10 * ref) * (1e-10 * ref);

    Eigen::Index keep = 0;
    const double lead = sv.size() ? sv(0) * sv(0) / static_cast<double>(n - 1) : 0.0;
    for (Eigen::Index k = 0; k < sv.size() && k < n - 1; ++k) {
        const double lambda = sv(k) * sv(k) / static_cast<double>(n - 1);
        if (lambda <= noise_floor || lambda <= opts.relative_cutoff * lead) break;
        ++keep;
    }

    model.eigenvalues.resize(keep);
    model.eigenfunctions.resize(keep, m);
    for (Eigen::Index k = 0; k < keep; ++k) {
        model.eigenvalues(k) = sv(k) * sv(k) / static_cast<double>(n - 1);
        model.eigenfunctions.row(k) = svd.matrixV().col(k).transpose();
        detail::fix_sign(model.eigenfunctions.row(k));
    }
    model.scores = centered * model.eigenfunctions.transpose();
    model.residuals = centered - model.scores * model.eigenfunctions;
    return model;
}

enum class SelectionMethod { Evr, Fixed };

struct ComponentSelection {
    SelectionMethod method = SelectionMethod::Evr;
    int K = 0;
    int k_max = 0;
    double eta = 0.0;
    bool clamped = false;  // fixed K exceeded the available components
};

/// Value minimised by the eigenvalue-ratio rule at (1-based) k. Eigenvalues past the end of the
/// list are zero.
inline double evr_objective(std::span<const double> lambda, int k, double eta) {
    const double lk = lambda[static_cast<std::size_t>(k - 1)];
    const double next = static_cast<std::size_t>(k) < lambda.size() ? lambda[static_cast<std::size_t>(k)] : 0.0;
    if (lk / lambda[0] >= eta) return next / lk;
    return 1.0;
}

/// Eigenvalue-ratio selection. k_max counts eigenvalues at least the mean of the supplied list.
inline ComponentSelection select_k_evr(std::span<const double> eigenvalues, int n) {
    if (eigenvalues.empty() || !(eigenvalues[0] > 0.0)) throw Error("select_k_evr needs a positive leading eigenvalue");
    ComponentSelection sel;
    sel.method = SelectionMethod::Evr;
    sel.eta = 1.0 / std::log(std::max(eigenvalues[0], static_cast<double>(n)));
    double mean = 0.0;
    for (double l : eigenvalues) mean += l;
    mean /= static_cast<double>(eigenvalues.size());
    int k_max = 0;
    for (double l : eigenvalues)
        if (l >= mean) ++k_max;
    k_max = std::max(1, std::min(k_max, std::max(n, 1)));
    sel.k_max = k_max;
    int best = 1;
    double best_value = evr_objective(eigenvalues, 1, sel.eta);
    for (int k = 2; k <= k_max; ++k) {
        const double v = evr_objective(eigenvalues, k, sel.eta);
        if (v < best_value) {
            best_value = v;
            best = k;
        }
    }
    sel.K = best;
    return sel;
}

inline ComponentSelection select_k_evr(const Vector& eigenvalues, int n) {
    return select_k_evr(std::span<const double>(eigenvalues.data(), static_cast<std::size_t>(eigenvalues.size())), n);
}

inline ComponentSelection select_k_fixed(int K, int available) {
    if (K < 1) throw Error("fixed component count must be positive");
    ComponentSelection sel;
    sel.method = SelectionMethod::Fixed;
    sel.k_max = available;
    sel.K = std::min(K, available);
    sel.clamped = K > available;
    return sel;
}

/// How a model picks K for each of its decompositions.
struct SelectionPolicy {
    SelectionMethod method = SelectionMethod::Evr;
    int fixed_k = 6;

    [[nodiscard]] std::string label() const {
        return method == SelectionMethod::Evr ? "evr" : "k" + std::to_string(fixed_k);
    }

    [[nodiscard]] ComponentSelection choose(const FpcaModel& model) const {
        const auto available = static_cast<int>(model.components());
        if (available == 0) {
            ComponentSelection none;
            none.method = method;
            return none;
        }
        if (method == SelectionMethod::Fixed) return select_k_fixed(fixed_k, available);
        return select_k_evr(model.eigenvalues, static_cast<int>(model.observations()));
    }
};

/// One score path forecast plus a human-readable description of the model that produced it.
struct ScoreForecast {
    Vector values;
    std::string description;
};

using ScoreForecaster = std::function<ScoreForecast(const Vector& history, int horizon)>;

struct ComponentForecast {
    Matrix curves;  // horizon x m
    Matrix scores;  // horizon x K
    std::vector<std::string> score_models;
};

/// mean + sum_k forecast score_k * eigenfunction_k for steps 1..horizon.
inline ComponentForecast forecast_components(const FpcaModel& model, int K, int horizon, const ScoreForecaster& forecaster) {
    if (horizon < 1) throw Error("forecast horizon must be at least 1");
    K = std::clamp(K, 0, static_cast<int>(model.components()));
    ComponentForecast out;
    out.scores.resize(horizon, K);
    for (int k = 0; k < K; ++k) {
        ScoreForecast f = forecaster(model.scores.col(k), horizon);
        if (f.values.size() != horizon) throw Error("score forecaster returned the wrong number of steps");
        out.scores.col(k) = f.values;
        out.score_models.push_back(std::move(f.description));
    }
    out.curves = out.scores * model.eigenfunctions.topRows(K);
    out.curves.rowwise() += model.mean.transpose();
    return out;
}

}  // namespace mortfts
