#pragma once

// Additive-error exponential smoothing (simple, Holt, damped Holt) with AICc model choice.
// Used to extrapolate principal-component scores and factor series.

#include "mortfts/fpca.hpp"
#include "mortfts/nelder_mead.hpp"

#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

namespace mortfts {

enum class EtsKind { ANN, AAN, AAdN };

inline std::string to_string(EtsKind k) {
    switch (k) {
        case EtsKind::ANN: return "ANN";
        case EtsKind::AAN: return "AAN";
        case EtsKind::AAdN: return "AAdN";
    }
    return "?";
}

struct EtsFit {
    EtsKind kind = EtsKind::ANN;
    double alpha = 0.5;
    double beta = 0.0;
    double phi = 1.0;
    double level0 = 0.0;
    double trend0 = 0.0;
    double level = 0.0;  // state after the last observation
    double trend = 0.0;
    double sigma2 = 0.0;  // mean squared one-step residual
    double log_likelihood = 0.0;
    double aicc = std::numeric_limits<double>::infinity();
    int n_obs = 0;
    int n_params = 0;
    Vector residuals;
    bool fallback = false;  // series too short for likelihood-based selection
};

namespace ets_detail {

inline constexpr double kAlphaLo = 1e-4;
inline constexpr double kAlphaHi = 0.9999;
inline constexpr double kBetaLo = 1e-4;
inline constexpr double kPhiLo = 0.8;
inline constexpr double kPhiHi = 0.98;
inline constexpr double kVarianceFloor = 1e-24;  // in units of the series variance

inline double sigmoid(double u) { return 1.0 / (1.0 + std::exp(-u)); }
inline double logit_of(double p) { return std::log(p / (1.0 - p)); }

inline int state_count(EtsKind k) { return k == EtsKind::ANN ? 1 : 2; }
inline int smoothing_count(EtsKind k) { return k == EtsKind::ANN ? 1 : (k == EtsKind::AAN ? 2 : 3); }
inline int parameter_count(EtsKind k) { return smoothing_count(k) + state_count(k) + 1; }

struct Smoothing {
    double alpha, beta, phi;
};

inline Smoothing decode(EtsKind k, const Vector& u) {
    Smoothing s{kAlphaLo + (kAlphaHi - kAlphaLo) * sigmoid(u(0)), 0.0, 1.0};
    if (k != EtsKind::ANN) s.beta = kBetaLo + (s.alpha - kBetaLo) * sigmoid(u(1));
    if (k == EtsKind::AAdN) s.phi = kPhiLo + (kPhiHi - kPhiLo) * sigmoid(u(2));
    return s;
}

/// One-step errors of the state recursion; returns final (level, trend).
inline std::pair<double, double> filter(EtsKind k, const Smoothing& s, const double* y, Eigen::Index n, double l, double b,
                                        double* err) {
    const double phi = k == EtsKind::AAdN ? s.phi : 1.0;
    const bool trended = k != EtsKind::ANN;
    for (Eigen::Index t = 0; t < n; ++t) {
        const double damped = trended ? phi * b : 0.0;
        const double e = (y ? y[t] : 0.0) - (l + damped);
        err[t] = e;
        l = l + damped + s.alpha * e;
        if (trended) b = damped + s.beta * e;
    }
    return {l, trended ? b : 0.0};
}

struct Profiled {
    double sse;
    double l0, b0;
};

/// For fixed smoothing parameters the one-step errors are affine in the initial states, so the
/// least-squares initial states are solved exactly.
inline Profiled profile_states(EtsKind k, const Smoothing& s, const Vector& y) {
    const Eigen::Index n = y.size();
    const int ns = state_count(k);
    Vector e0(n);
    filter(k, s, y.data(), n, 0.0, 0.0, e0.data());
    Matrix J(n, ns);
    filter(k, s, nullptr, n, 1.0, 0.0, J.col(0).data());
    if (ns == 2) filter(k, s, nullptr, n, 0.0, 1.0, J.col(1).data());
    Profiled p{0.0, 0.0, 0.0};
    const double a11 = J.col(0).squaredNorm(), r1 = -J.col(0).dot(e0);
    if (ns == 1) {
        p.l0 = a11 > 0.0 ? r1 / a11 : 0.0;
    } else {
        const double a22 = J.col(1).squaredNorm(), a12 = J.col(0).dot(J.col(1)), r2 = -J.col(1).dot(e0);
        const double det = a11 * a22 - a12 * a12;
        if (det > 1e-12 * a11 * a22) {
            p.l0 = (a22 * r1 - a12 * r2) / det;
            p.b0 = (a11 * r2 - a12 * r1) / det;
        } else {
            Eigen::Vector2d theta = J.colPivHouseholderQr().solve(-e0);
            p.l0 = theta(0);
            p.b0 = theta(1);
        }
    }
    Vector e(n);
    filter(k, s, y.data(), n, p.l0, p.b0, e.data());
    p.sse = e.squaredNorm();
    return p;
}

/// Fits one family member to a standardised series (mean 0, variance 1 unless constant).
inline EtsFit fit_member_standardised(EtsKind k, const Vector& z) {
    const Eigen::Index n = z.size();
    auto objective = [&](const Vector& u) {
        Profiled p = profile_states(k, decode(k, u), z);
        return static_cast<double>(n) * std::log(std::max(p.sse / static_cast<double>(n), kVarianceFloor));
    };
    const int d = smoothing_count(k);
    // fixed restart points: (alpha, beta share of alpha, phi share of its box)
    const std::array<std::array<double, 3>, 3> starts{{{0.5, 0.1, 0.5}, {0.2, 0.5, 0.8}, {0.9, 0.05, 0.2}}};
    NelderMeadResult best;
    best.value = std::numeric_limits<double>::infinity();
    for (const auto& st : starts) {
        Vector u(d);
        u(0) = logit_of((st[0] - kAlphaLo) / (kAlphaHi - kAlphaLo));
        if (d > 1) u(1) = logit_of(st[1]);
        if (d > 2) u(2) = logit_of(st[2]);
        NelderMeadResult r = nelder_mead(objective, u);
        NelderMeadResult again = nelder_mead(objective, r.x);
        if (again.value <= r.value) r = again;
        if (r.value < best.value) best = r;
    }
    const Smoothing s = decode(k, best.x);
    const Profiled p = profile_states(k, s, z);
    EtsFit fit;
    fit.kind = k;
    fit.alpha = s.alpha;
    fit.beta = s.beta;
    fit.phi = s.phi;
    fit.level0 = p.l0;
    fit.trend0 = p.b0;
    fit.residuals.resize(n);
    auto [l, b] = filter(k, s, z.data(), n, p.l0, p.b0, fit.residuals.data());
    fit.level = l;
    fit.trend = b;
    fit.n_obs = static_cast<int>(n);
    fit.n_params = parameter_count(k);
    return fit;
}

inline void finish_in_original_scale(EtsFit& fit, double center, double scale) {
    fit.level0 = center + scale * fit.level0;
    fit.level = center + scale * fit.level;
    fit.trend0 *= scale;
    fit.trend *= scale;
    fit.residuals *= scale;
    const double n = fit.n_obs;
    fit.sigma2 = fit.residuals.squaredNorm() / n;
    const double var = std::max(fit.sigma2, kVarianceFloor * scale * scale);
    fit.log_likelihood = -0.5 * n * (std::log(2.0 * std::numbers::pi * var) + 1.0);
    const double p = fit.n_params;
    fit.aicc = n - p - 1.0 > 0.0 ? -2.0 * fit.log_likelihood + 2.0 * p * n / (n - p - 1.0)
                                 : std::numeric_limits<double>::infinity();
}

inline std::pair<double, double> standardisation(const Vector& y) {
    const double center = y.mean();
    double scale = 0.0;
    if (y.size() > 1) scale = std::sqrt((y.array() - center).square().sum() / static_cast<double>(y.size() - 1));
    if (!(scale > 0.0) || !std::isfinite(scale)) scale = 1.0;
    return {center, scale};
}

}  // namespace ets_detail

/// Fits a single family member by maximum likelihood.
inline EtsFit fit_ets_member(const Vector& y, EtsKind kind) {
    if (!y.allFinite()) throw Error("fit_ets: series has non-finite values");
    if (y.size() < 2) throw Error("fit_ets: need at least two observations");
    auto [center, scale] = ets_detail::standardisation(y);
    Vector z = (y.array() - center) / scale;
    EtsFit fit = ets_detail::fit_member_standardised(kind, z);
    ets_detail::finish_in_original_scale(fit, center, scale);
    return fit;
}

/// Every family member with enough observations for a finite AICc.
inline std::vector<EtsFit> fit_ets_candidates(const Vector& y) {
    std::vector<EtsFit> out;
    for (EtsKind k : {EtsKind::ANN, EtsKind::AAN, EtsKind::AAdN})
        if (y.size() - ets_detail::parameter_count(k) - 1 > 0) out.push_back(fit_ets_member(y, k));
    return out;
}

/// Smallest-AICc member; ties go to the simpler model. Series too short for any member get simple
/// smoothing with alpha = 0.5 and `fallback` set.
inline EtsFit fit_ets(const Vector& y) {
    if (!y.allFinite()) throw Error("fit_ets: series has non-finite values");
    auto candidates = fit_ets_candidates(y);
    if (candidates.empty()) {
        if (y.size() < 1) throw Error("fit_ets: empty series");
        EtsFit fit;
        fit.kind = EtsKind::ANN;
        fit.alpha = 0.5;
        fit.level0 = y(0);
        fit.n_obs = static_cast<int>(y.size());
        fit.n_params = ets_detail::parameter_count(EtsKind::ANN);
        fit.residuals.resize(y.size());
        auto [l, b] = ets_detail::filter(EtsKind::ANN, {0.5, 0.0, 1.0}, y.data(), y.size(), fit.level0, 0.0, fit.residuals.data());
        fit.level = l;
        fit.sigma2 = fit.residuals.squaredNorm() / static_cast<double>(y.size());
        fit.fallback = true;
        return fit;
    }
    std::size_t best = 0;
    for (std::size_t i = 1; i < candidates.size(); ++i)
        if (candidates[i].aicc < candidates[best].aicc) best = i;
    return candidates[best];
}

inline Vector forecast_ets(const EtsFit& fit, int horizon) {
    if (horizon < 1) throw Error("forecast_ets: horizon must be at least 1");
    Vector out(horizon);
    double damp_sum = 0.0, damp = 1.0;
    for (int h = 1; h <= horizon; ++h) {
        switch (fit.kind) {
            case EtsKind::ANN: out(h - 1) = fit.level; break;
            case EtsKind::AAN: out(h - 1) = fit.level + h * fit.trend; break;
            case EtsKind::AAdN:
                damp *= fit.phi;
                damp_sum += damp;
                out(h - 1) = fit.level + damp_sum * fit.trend;
                break;
        }
    }
    return out;
}

/// Re-runs the state recursion from the fitted initial states over `y`.
inline Vector one_step_residuals(const EtsFit& fit, const Vector& y) {
    Vector e(y.size());
    ets_detail::filter(fit.kind, {fit.alpha, fit.beta, fit.phi}, y.data(), y.size(), fit.level0, fit.trend0, e.data());
    return e;
}

inline std::string describe(const EtsFit& fit) {
    std::string s = to_string(fit.kind);
    if (fit.fallback) s += "*";
    return s;
}

inline ScoreForecaster ets_forecaster() {
    return [](const Vector& history, int horizon) {
        EtsFit fit = fit_ets(history);
        return ScoreForecast{forecast_ets(fit, horizon), describe(fit)};
    };
}

/// Random walk with drift. Linear in the history, so it commutes with rotations of a score panel.
inline ScoreForecaster drift_forecaster() {
    return [](const Vector& history, int horizon) {
        const Eigen::Index n = history.size();
        const double slope = n > 1 ? (history(n - 1) - history(0)) / static_cast<double>(n - 1) : 0.0;
        Vector out(horizon);
        for (int h = 1; h <= horizon; ++h) out(h - 1) = history(n - 1) + h * slope;
        return ScoreForecast{out, "RWD"};
    };
}

}  // namespace mortfts
