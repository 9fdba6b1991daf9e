#pragma once

// The five functional time-series forecasting strategies. Each decomposes logit-CDF curves,
// extrapolates the resulting scores or factors, and rebuilds forecast curves.

#include "mortfts/cdf_transform.hpp"
#include "mortfts/ets.hpp"
#include "mortfts/fpca.hpp"

#include <Eigen/Eigenvalues>

#include <array>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace mortfts {

enum class ModelKind { Ufts, Mfts, Mlfts, Fanova, Hdfpca };

/// Column order of the comparison tables; also the tie-break order for best-method counts.
inline constexpr std::array<ModelKind, 5> kCanonicalModelOrder{ModelKind::Ufts, ModelKind::Mfts, ModelKind::Mlfts,
                                                               ModelKind::Fanova, ModelKind::Hdfpca};

inline std::string to_string(ModelKind k) {
    switch (k) {
        case ModelKind::Ufts: return "ufts";
        case ModelKind::Mfts: return "mfts";
        case ModelKind::Mlfts: return "mlfts";
        case ModelKind::Fanova: return "fanova";
        case ModelKind::Hdfpca: return "hdfpca";
    }
    return "?";
}

inline ModelKind parse_model_kind(std::string_view s) {
    for (ModelKind k : kCanonicalModelOrder)
        if (to_string(k) == s) return k;
    throw Error("unknown model '" + std::string(s) + "' (expected ufts, mfts, mlfts, fanova or hdfpca)");
}

inline int canonical_rank(ModelKind k) {
    for (std::size_t i = 0; i < kCanonicalModelOrder.size(); ++i)
        if (kCanonicalModelOrder[i] == k) return static_cast<int>(i);
    return static_cast<int>(kCanonicalModelOrder.size());
}

struct ModelSpec {
    ModelKind kind = ModelKind::Ufts;
    SelectionPolicy selection;
    int p0 = 6;  // first-stage components per series (HDFPCA)
    int r = 2;   // factors per score index (HDFPCA)

    void validate() const {
        if (p0 < 1 || r < 1 || r > p0) throw Error("HDFPCA needs p0 >= r >= 1");
        if (selection.method == SelectionMethod::Fixed && selection.fixed_k < 1) throw Error("fixed K must be positive");
    }

    [[nodiscard]] std::string label() const { return to_string(kind) + "_" + selection.label(); }
};

/// Metadata about one decomposition inside a model fit.
struct FitNote {
    std::string scope;  // series or group the decomposition belongs to
    std::string stage;  // which decomposition (e.g. "joint", "common", "specific")
    int components = 0;
    std::vector<std::string> score_models;
    std::optional<double> within_cluster_variability;
};

// --- UFTS ---------------------------------------------------------------------------------

struct SeriesForecast {
    Matrix logit;  // horizon x grid
    FitNote note;
};

inline SeriesForecast fit_forecast_ufts(const Matrix& x, const ModelSpec& spec, int horizon,
                                        const ScoreForecaster& forecaster = ets_forecaster()) {
    const FpcaModel model = fit_fpca(x);
    const ComponentSelection sel = spec.selection.choose(model);
    ComponentForecast f = forecast_components(model, sel.K, horizon, forecaster);
    return SeriesForecast{std::move(f.curves), FitNote{"", "ufts", sel.K, std::move(f.score_models), std::nullopt}};
}

// --- MFTS ---------------------------------------------------------------------------------

struct MftsModel {
    Eigen::Index grid = 0;  // points per sex
    FpcaModel joint;        // over female || male, mean = (female mean, male mean)
    ComponentSelection selection;

    [[nodiscard]] Vector mean_female() const { return joint.mean.head(grid); }
    [[nodiscard]] Vector mean_male() const { return joint.mean.tail(grid); }
};

struct PairForecast {
    Matrix female, male;
    std::vector<FitNote> notes;
};

inline MftsModel fit_mfts(const Matrix& female, const Matrix& male, const SelectionPolicy& policy, double reference_scale = 0.0) {
    if (female.rows() != male.rows() || female.cols() != male.cols())
        throw Error("MFTS needs female and male series over the same years and grid");
    Matrix stacked(female.rows(), female.cols() * 2);
    stacked << female, male;
    MftsModel m;
    m.grid = female.cols();
    m.joint = fit_fpca(stacked, FpcaOptions{reference_scale});
    m.selection = policy.choose(m.joint);
    return m;
}

inline PairForecast forecast_mfts(const MftsModel& m, int horizon, const ScoreForecaster& forecaster) {
    ComponentForecast f = forecast_components(m.joint, m.selection.K, horizon, forecaster);
    PairForecast out;
    out.female = f.curves.leftCols(m.grid);
    out.male = f.curves.rightCols(m.grid);
    out.notes.push_back(FitNote{"", "joint", m.selection.K, std::move(f.score_models), std::nullopt});
    return out;
}

inline PairForecast fit_forecast_mfts(const Matrix& female, const Matrix& male, const ModelSpec& spec, int horizon,
                                      const ScoreForecaster& forecaster = ets_forecaster()) {
    return forecast_mfts(fit_mfts(female, male, spec.selection), horizon, forecaster);
}

// --- MLFTS --------------------------------------------------------------------------------

struct MlftsModel {
    Vector mean_female, mean_male;
    FpcaModel common;  // on the average of the two centred series
    ComponentSelection common_selection;
    Matrix common_fitted;  // common reconstruction with the selected K
    FpcaModel specific_female, specific_male;  // on centred series minus common_fitted
    ComponentSelection specific_selection_female, specific_selection_male;
    double within_cluster_female = 1.0;
    double within_cluster_male = 1.0;
};

/// Share of the retained variance carried by the common decomposition. Defined as 1 when neither
/// decomposition retains anything.
inline double within_cluster_variability(const FpcaModel& common, int K, const FpcaModel& specific, int L) {
    const double c = common.eigenvalues.head(K).sum();
    const double s = specific.eigenvalues.head(L).sum();
    return c + s > 0.0 ? c / (c + s) : 1.0;
}

inline MlftsModel fit_mlfts(const Matrix& female, const Matrix& male, const SelectionPolicy& policy, double reference_scale = 0.0) {
    if (female.rows() != male.rows() || female.cols() != male.cols())
        throw Error("MLFTS needs female and male series over the same years and grid");
    if (reference_scale <= 0.0) reference_scale = std::max(rms(female), rms(male));
    MlftsModel m;
    m.mean_female = female.colwise().mean().transpose();
    m.mean_male = male.colwise().mean().transpose();
    const Matrix cf = female.rowwise() - m.mean_female.transpose();
    const Matrix cm = male.rowwise() - m.mean_male.transpose();
    const Matrix common = 0.5 * (cf + cm);
    m.common = fit_fpca(common, FpcaOptions{reference_scale});
    m.common_selection = policy.choose(m.common);
    m.common_fitted = m.common.reconstruct(m.common_selection.K);
    m.specific_female = fit_fpca(cf - m.common_fitted, FpcaOptions{reference_scale});
    m.specific_male = fit_fpca(cm - m.common_fitted, FpcaOptions{reference_scale});
    m.specific_selection_female = policy.choose(m.specific_female);
    m.specific_selection_male = policy.choose(m.specific_male);
    m.within_cluster_female = within_cluster_variability(m.common, m.common_selection.K, m.specific_female,
                                                         m.specific_selection_female.K);
    m.within_cluster_male =
        within_cluster_variability(m.common, m.common_selection.K, m.specific_male, m.specific_selection_male.K);
    return m;
}

inline PairForecast forecast_mlfts(const MlftsModel& m, int horizon, const ScoreForecaster& forecaster) {
    ComponentForecast common = forecast_components(m.common, m.common_selection.K, horizon, forecaster);
    ComponentForecast sf = forecast_components(m.specific_female, m.specific_selection_female.K, horizon, forecaster);
    ComponentForecast sm = forecast_components(m.specific_male, m.specific_selection_male.K, horizon, forecaster);
    PairForecast out;
    out.female = common.curves + sf.curves;
    out.female.rowwise() += m.mean_female.transpose();
    out.male = common.curves + sm.curves;
    out.male.rowwise() += m.mean_male.transpose();
    out.notes.push_back(FitNote{"", "common", m.common_selection.K, std::move(common.score_models), std::nullopt});
    out.notes.push_back(
        FitNote{"", "specific:F", m.specific_selection_female.K, std::move(sf.score_models), m.within_cluster_female});
    out.notes.push_back(
        FitNote{"", "specific:M", m.specific_selection_male.K, std::move(sm.score_models), m.within_cluster_male});
    return out;
}

inline PairForecast fit_forecast_mlfts(const Matrix& female, const Matrix& male, const ModelSpec& spec, int horizon,
                                       const ScoreForecaster& forecaster = ets_forecaster()) {
    return forecast_mlfts(fit_mlfts(female, male, spec.selection), horizon, forecaster);
}

// --- panels -------------------------------------------------------------------------------

/// Logit-CDF curves for every (group, sex) being modelled, in a fixed group order.
struct LogitPanel {
    std::vector<std::string> groups;
    std::map<SeriesKey, Matrix> series;

    [[nodiscard]] const Matrix& at(const std::string& g, Sex s) const {
        auto it = series.find(SeriesKey{g, s});
        if (it == series.end()) throw Error("logit panel is missing series " + g + "/" + std::string(to_string(s)));
        return it->second;
    }

    void require_complete() const {
        std::string missing;
        for (const auto& g : groups)
            for (Sex s : {Sex::Female, Sex::Male})
                if (!series.count(SeriesKey{g, s})) missing += (missing.empty() ? "" : ", ") + g + "/" + std::string(to_string(s));
        if (!missing.empty()) throw Error("panel is incomplete; missing series: " + missing);
    }

    [[nodiscard]] double scale() const {
        double ss = 0.0, count = 0.0;
        for (const auto& [k, m] : series) {
            ss += m.squaredNorm();
            count += static_cast<double>(m.size());
        }
        return count > 0.0 ? std::sqrt(ss / count) : 0.0;
    }
};

struct PanelForecast {
    std::map<SeriesKey, Matrix> logit;  // horizon x grid per series
    std::vector<FitNote> notes;
};

// --- FANOVA -------------------------------------------------------------------------------

struct FanovaDecomposition {
    Vector grand;                     // mu(u)
    std::vector<Vector> row_effects;  // alpha_s(u), one per group
    Vector column_female, column_male;  // beta^g(u)
    std::vector<Matrix> residual_female, residual_male;  // epsilon_{t,s}^g(u)
};

inline FanovaDecomposition fanova_decompose(const LogitPanel& panel) {
    panel.require_complete();
    const std::size_t S = panel.groups.size();
    if (S == 0) throw Error("FANOVA needs at least one group");
    const Matrix& first = panel.at(panel.groups[0], Sex::Female);
    const Eigen::Index n = first.rows(), m = first.cols();
    FanovaDecomposition d;
    Vector sum_female = Vector::Zero(m), sum_male = Vector::Zero(m);
    std::vector<Vector> group_sum(S);
    for (std::size_t s = 0; s < S; ++s) {
        const Matrix& f = panel.at(panel.groups[s], Sex::Female);
        const Matrix& mm = panel.at(panel.groups[s], Sex::Male);
        if (f.rows() != n || f.cols() != m || mm.rows() != n || mm.cols() != m)
            throw Error("FANOVA needs every series over the same years and grid");
        const Vector fs = f.colwise().sum().transpose(), ms = mm.colwise().sum().transpose();
        sum_female += fs;
        sum_male += ms;
        group_sum[s] = fs + ms;
    }
    const double dn = static_cast<double>(n), dS = static_cast<double>(S);
    d.grand = (sum_female + sum_male) / (dS * 2.0 * dn);
    d.column_female = sum_female / (dS * dn) - d.grand;
    d.column_male = sum_male / (dS * dn) - d.grand;
    for (std::size_t s = 0; s < S; ++s) {
        d.row_effects.push_back(group_sum[s] / (2.0 * dn) - d.grand);
        Vector base_f = d.grand + d.row_effects[s] + d.column_female;
        Vector base_m = d.grand + d.row_effects[s] + d.column_male;
        d.residual_female.push_back(panel.at(panel.groups[s], Sex::Female).rowwise() - base_f.transpose());
        d.residual_male.push_back(panel.at(panel.groups[s], Sex::Male).rowwise() - base_m.transpose());
    }
    return d;
}

/// Time-constant effects plus MFTS forecasts of each group's residual pair.
inline PanelForecast fit_forecast_fanova(const LogitPanel& panel, const ModelSpec& spec, int horizon,
                                         const ScoreForecaster& forecaster = ets_forecaster()) {
    const FanovaDecomposition d = fanova_decompose(panel);
    const double ref = panel.scale();
    PanelForecast out;
    for (std::size_t s = 0; s < panel.groups.size(); ++s) {
        const MftsModel rm = fit_mfts(d.residual_female[s], d.residual_male[s], spec.selection, ref);
        PairForecast pf = forecast_mfts(rm, horizon, forecaster);
        Vector base_f = d.grand + d.row_effects[s] + d.column_female;
        Vector base_m = d.grand + d.row_effects[s] + d.column_male;
        pf.female.rowwise() += base_f.transpose();
        pf.male.rowwise() += base_m.transpose();
        out.logit[SeriesKey{panel.groups[s], Sex::Female}] = std::move(pf.female);
        out.logit[SeriesKey{panel.groups[s], Sex::Male}] = std::move(pf.male);
        for (auto& note : pf.notes) {
            note.scope = panel.groups[s];
            note.stage = "residual-joint";
            out.notes.push_back(std::move(note));
        }
    }
    return out;
}

// --- HDFPCA -------------------------------------------------------------------------------

/// Principal-component factor model of an n x P score panel.
struct FactorModel {
    Vector center;          // P column means
    Matrix loadings;        // P x r, orthonormal columns
    Matrix factors;         // n x r
    Matrix idiosyncratic;   // n x P
    Vector eigenvalues;     // r leading covariance eigenvalues
};

inline FactorModel fit_factor_model(const Matrix& scores, int r) {
    const Eigen::Index n = scores.rows(), P = scores.cols();
    if (r < 1) throw Error("factor model needs r >= 1");
    if (r > P) throw Error("factor count r = " + std::to_string(r) + " exceeds panel width P = " + std::to_string(P));
    if (n < 2) throw Error("factor model needs at least two observations");
    FactorModel fm;
    fm.center = scores.colwise().mean().transpose();
    const Matrix centered = scores.rowwise() - fm.center.transpose();
    const Matrix cov = centered.transpose() * centered / static_cast<double>(n - 1);
    Eigen::SelfAdjointEigenSolver<Matrix> es(cov);
    if (es.info() != Eigen::Success) throw Error("factor model eigendecomposition failed");
    fm.loadings.resize(P, r);
    fm.eigenvalues.resize(r);
    for (int j = 0; j < r; ++j) {
        fm.loadings.col(j) = es.eigenvectors().col(P - 1 - j);
        fm.eigenvalues(j) = std::max(0.0, es.eigenvalues()(P - 1 - j));
        detail::fix_sign(fm.loadings.col(j));
    }
    fm.factors = centered * fm.loadings;
    fm.idiosyncratic = centered - fm.factors * fm.loadings.transpose();
    return fm;
}

/// Forecast of the score panel: center + loadings * factor forecasts, horizon x P.
inline Matrix forecast_factor_scores(const FactorModel& fm, int horizon, const ScoreForecaster& forecaster,
                                     std::vector<std::string>* models = nullptr) {
    Matrix f(horizon, fm.factors.cols());
    for (Eigen::Index j = 0; j < fm.factors.cols(); ++j) {
        ScoreForecast sf = forecaster(fm.factors.col(j), horizon);
        f.col(j) = sf.values;
        if (models) models->push_back(std::move(sf.description));
    }
    Matrix out = f * fm.loadings.transpose();
    out.rowwise() += fm.center.transpose();
    return out;
}

struct HdfpcaModel {
    std::vector<FpcaModel> stage1;  // one per group
    int p0 = 0;                     // components carried into stage 2 (after clamping)
    std::vector<FactorModel> stage2;  // one per score index
    bool p0_clamped = false;

    /// n x P panel of the j-th scores across groups.
    [[nodiscard]] Matrix score_panel(int j) const {
        Matrix s(stage1.front().observations(), static_cast<Eigen::Index>(stage1.size()));
        for (std::size_t g = 0; g < stage1.size(); ++g) s.col(static_cast<Eigen::Index>(g)) = stage1[g].scores.col(j);
        return s;
    }
};

inline HdfpcaModel fit_hdfpca(const std::vector<Matrix>& series, int p0, int r, double reference_scale = 0.0) {
    const auto P = static_cast<int>(series.size());
    if (P < 2) throw Error("HDFPCA needs at least two series");
    if (r > P) throw Error("factor count r = " + std::to_string(r) + " exceeds number of series P = " + std::to_string(P));
    HdfpcaModel m;
    int available = p0;
    for (const auto& x : series) {
        m.stage1.push_back(fit_fpca(x, FpcaOptions{reference_scale}));
        available = std::min(available, static_cast<int>(m.stage1.back().components()));
    }
    m.p0 = available;
    m.p0_clamped = available < p0;
    for (int j = 0; j < m.p0; ++j) m.stage2.push_back(fit_factor_model(m.score_panel(j), r));
    return m;
}

/// Stage-2 score forecasts per score index (each horizon x P).
inline std::vector<Matrix> hdfpca_score_forecasts(const HdfpcaModel& m, int horizon, const ScoreForecaster& forecaster,
                                                  std::vector<std::string>* models = nullptr) {
    std::vector<Matrix> out;
    for (const auto& fm : m.stage2) out.push_back(forecast_factor_scores(fm, horizon, forecaster, models));
    return out;
}

/// Stage-1 score forecasts: each group's j-th scores extrapolated on their own.
inline std::vector<Matrix> stage1_score_forecasts(const HdfpcaModel& m, int horizon, const ScoreForecaster& forecaster) {
    std::vector<Matrix> out;
    for (int j = 0; j < m.p0; ++j) {
        Matrix s(horizon, static_cast<Eigen::Index>(m.stage1.size()));
        for (std::size_t g = 0; g < m.stage1.size(); ++g)
            s.col(static_cast<Eigen::Index>(g)) = forecaster(m.stage1[g].scores.col(j), horizon).values;
        out.push_back(std::move(s));
    }
    return out;
}

inline std::vector<Matrix> forecast_hdfpca(const HdfpcaModel& m, int horizon, const ScoreForecaster& forecaster,
                                           std::vector<std::string>* models = nullptr) {
    const std::vector<Matrix> scores = hdfpca_score_forecasts(m, horizon, forecaster, models);
    std::vector<Matrix> out;
    for (std::size_t g = 0; g < m.stage1.size(); ++g) {
        const FpcaModel& f = m.stage1[g];
        Matrix curves = Matrix::Zero(horizon, f.grid_size());
        for (int j = 0; j < m.p0; ++j)
            curves += scores[static_cast<std::size_t>(j)].col(static_cast<Eigen::Index>(g)) * f.eigenfunctions.row(j);
        curves.rowwise() += f.mean.transpose();
        out.push_back(std::move(curves));
    }
    return out;
}

/// HDFPCA run separately for each sex across all groups.
inline PanelForecast fit_forecast_hdfpca(const LogitPanel& panel, const ModelSpec& spec, int horizon,
                                         const ScoreForecaster& forecaster = ets_forecaster()) {
    spec.validate();
    PanelForecast out;
    const double ref = panel.scale();
    for (Sex sex : {Sex::Female, Sex::Male}) {
        std::vector<std::string> groups;
        std::vector<Matrix> series;
        for (const auto& g : panel.groups) {
            auto it = panel.series.find(SeriesKey{g, sex});
            if (it == panel.series.end()) continue;
            groups.push_back(g);
            series.push_back(it->second);
        }
        if (groups.empty()) continue;
        const HdfpcaModel m = fit_hdfpca(series, spec.p0, spec.r, ref);
        FitNote note{std::string(to_string(sex)), "factors", m.p0, {}, std::nullopt};
        std::vector<Matrix> curves = forecast_hdfpca(m, horizon, forecaster, &note.score_models);
        for (std::size_t g = 0; g < groups.size(); ++g) out.logit[SeriesKey{groups[g], sex}] = std::move(curves[g]);
        out.notes.push_back(std::move(note));
    }
    return out;
}

// --- dispatch -----------------------------------------------------------------------------

inline PanelForecast forecast_panel(const LogitPanel& panel, const ModelSpec& spec, int horizon,
                                    const ScoreForecaster& forecaster = ets_forecaster()) {
    spec.validate();
    if (horizon < 1) throw Error("forecast horizon must be at least 1");
    PanelForecast out;
    switch (spec.kind) {
        case ModelKind::Ufts:
            for (const auto& [key, x] : panel.series) {
                SeriesForecast f = fit_forecast_ufts(x, spec, horizon, forecaster);
                f.note.scope = to_string(key);
                out.logit[key] = std::move(f.logit);
                out.notes.push_back(std::move(f.note));
            }
            break;
        case ModelKind::Mfts:
        case ModelKind::Mlfts:
            panel.require_complete();
            for (const auto& g : panel.groups) {
                const Matrix& f = panel.at(g, Sex::Female);
                const Matrix& m = panel.at(g, Sex::Male);
                PairForecast pf = spec.kind == ModelKind::Mfts ? fit_forecast_mfts(f, m, spec, horizon, forecaster)
                                                               : fit_forecast_mlfts(f, m, spec, horizon, forecaster);
                out.logit[SeriesKey{g, Sex::Female}] = std::move(pf.female);
                out.logit[SeriesKey{g, Sex::Male}] = std::move(pf.male);
                for (auto& note : pf.notes) {
                    note.scope = g;
                    out.notes.push_back(std::move(note));
                }
            }
            break;
        case ModelKind::Fanova: return fit_forecast_fanova(panel, spec, horizon, forecaster);
        case ModelKind::Hdfpca: return fit_forecast_hdfpca(panel, spec, horizon, forecaster);
    }
    return out;
}

/// Logit forecasts back to death densities that sum to the radix.
inline Matrix forecast_density(const Matrix& logit_forecast, double radix = 1e5, InverseReport* report = nullptr) {
    return from_logit(logit_forecast, radix, report);
}

}  // namespace mortfts
