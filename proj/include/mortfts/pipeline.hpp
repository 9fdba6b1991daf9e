#pragma once

// Batch run: load -> transform -> backtests per model -> intervals -> metric tables, heatmaps,
// diagnostics and a manifest. Output bytes depend only on the config and the data.

#include "mortfts/backtest.hpp"
#include "mortfts/diagnostics.hpp"
#include "mortfts/intervals.hpp"
#include "mortfts/io.hpp"
#include "mortfts/metrics.hpp"
#include "mortfts/panel_io.hpp"

#include <json.hpp>

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace mortfts {

/// Invalid configuration or command-line usage (as opposed to a failure while running).
struct ConfigError : Error {
    using Error::Error;
};

struct RunConfig {
    std::filesystem::path base_dir;  // relative paths in the config resolve against this
    std::string data_path;
    ColumnSchema schema;
    std::optional<std::string> national;
    std::vector<std::string> group_order;
    double radix = 1e5;
    std::vector<ModelKind> models{kCanonicalModelOrder.begin(), kCanonicalModelOrder.end()};
    std::vector<SelectionPolicy> selections{SelectionPolicy{SelectionMethod::Evr, 6}, SelectionPolicy{SelectionMethod::Fixed, 6}};
    int p0 = 6;
    int r = 2;
    std::vector<double> alphas{0.2, 0.05};
    std::vector<IntervalMethod> interval_methods{IntervalMethod::Sd, IntervalMethod::Conformal};
    std::array<double, 3> split{1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};
    std::optional<int> max_horizon;       // point backtest; default: number of test years
    std::optional<int> interval_horizon;  // calibration backtest; default: validation years - 1
    std::optional<int> forecast_horizon;  // final forecasts; default: number of test years
    int max_lag = 5;
    double clip_epsilon = kDefaultClipEpsilon;
    std::string output;
    std::uint64_t seed = 0;
    unsigned workers = 1;

    [[nodiscard]] std::filesystem::path resolve(const std::string& p) const {
        std::filesystem::path path(p);
        return path.is_absolute() ? path : base_dir / path;
    }

    [[nodiscard]] std::vector<ModelSpec> specs() const {
        std::vector<ModelSpec> out;
        for (const auto& sel : selections)
            for (ModelKind k : models) out.push_back(ModelSpec{k, sel, p0, r});
        return out;
    }

    void validate() const {
        if (data_path.empty()) throw ConfigError("config: data.path is required");
        if (models.empty()) throw ConfigError("config: at least one model is required");
        if (selections.empty()) throw ConfigError("config: at least one selection policy is required");
        if (p0 < 1 || r < 1 || r > p0) throw ConfigError("config: hdfpca needs p0 >= r >= 1");
        for (double a : alphas)
            if (!(a > 0.0 && a < 1.0)) throw ConfigError("config: alphas must lie in (0, 1)");
        if (max_lag < 0) throw ConfigError("config: diagnostics.max_lag must be >= 0");
        if (!(clip_epsilon > 0.0 && clip_epsilon < 0.5)) throw ConfigError("config: clip_epsilon must lie in (0, 0.5)");
        if (!(radix > 0.0)) throw ConfigError("config: radix must be positive");
        for (auto h : {max_horizon, interval_horizon, forecast_horizon})
            if (h && *h < 1) throw ConfigError("config: horizons must be at least 1");
    }
};

inline SelectionPolicy parse_selection(const std::string& s) {
    if (s == "evr") return SelectionPolicy{SelectionMethod::Evr, 6};
    std::string digits = s.size() > 1 && (s[0] == 'k' || s[0] == 'K') ? s.substr(1) : s;
    int k = 0;
    auto [p, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), k);
    if (ec != std::errc() || p != digits.data() + digits.size() || k < 1)
        throw ConfigError("unknown selection '" + s + "' (expected evr or a positive K such as 6)");
    return SelectionPolicy{SelectionMethod::Fixed, k};
}

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& obj, const std::set<std::string>& allowed, const std::string& where) {
    if (!obj.is_object()) throw ConfigError("config: " + where + " must be an object");
    for (const auto& [k, v] : obj.items())
        if (!allowed.count(k)) throw ConfigError("config: unknown key '" + k + "' in " + where);
}

template <typename T>
T json_get(const nlohmann::json& obj, const std::string& key, const std::string& where) {
    try {
        return obj.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config: bad value for " + where + "." + key + ": " + e.what());
    }
}

}  // namespace detail

inline RunConfig parse_config(const nlohmann::json& j, const std::filesystem::path& base_dir) {
    using detail::json_get;
    detail::reject_unknown_keys(j, {"data", "models", "selection", "hdfpca", "intervals", "split", "backtest", "forecast_horizon",
                                    "diagnostics", "transform", "output", "seed", "workers"},
                                "config");
    RunConfig c;
    c.base_dir = base_dir;
    if (!j.contains("data")) throw ConfigError("config: missing 'data' section");
    const auto& d = j.at("data");
    detail::reject_unknown_keys(d, {"path", "columns", "national", "group_order", "radix", "delimiter"}, "data");
    c.data_path = json_get<std::string>(d, "path", "data");
    if (d.contains("columns")) {
        const auto& cols = d.at("columns");
        detail::reject_unknown_keys(cols, {"group", "sex", "year", "age", "deaths"}, "data.columns");
        if (cols.contains("group")) c.schema.group = json_get<std::string>(cols, "group", "data.columns");
        if (cols.contains("sex")) c.schema.sex = json_get<std::string>(cols, "sex", "data.columns");
        if (cols.contains("year")) c.schema.year = json_get<std::string>(cols, "year", "data.columns");
        if (cols.contains("age")) c.schema.age = json_get<std::string>(cols, "age", "data.columns");
        if (cols.contains("deaths")) c.schema.deaths = json_get<std::string>(cols, "deaths", "data.columns");
    }
    if (d.contains("delimiter")) {
        const auto delim = json_get<std::string>(d, "delimiter", "data");
        if (delim == "tab" || delim == "\t")
            c.schema.delimiter = '\t';
        else if (delim == "comma" || delim == ",")
            c.schema.delimiter = ',';
        else if (delim != "auto")
            throw ConfigError("config: data.delimiter must be auto, comma or tab");
    }
    if (d.contains("national") && !d.at("national").is_null()) c.national = json_get<std::string>(d, "national", "data");
    if (d.contains("group_order")) c.group_order = json_get<std::vector<std::string>>(d, "group_order", "data");
    if (d.contains("radix")) c.radix = json_get<double>(d, "radix", "data");

    if (j.contains("models")) {
        c.models.clear();
        for (const auto& name : json_get<std::vector<std::string>>(j, "models", "config")) {
            try {
                c.models.push_back(parse_model_kind(name));
            } catch (const Error& e) {
                throw ConfigError(std::string("config: ") + e.what());
            }
        }
    }
    if (j.contains("selection")) {
        c.selections.clear();
        for (const auto& s : j.at("selection")) c.selections.push_back(parse_selection(s.is_number() ? s.dump() : s.get<std::string>()));
    }
    if (j.contains("hdfpca")) {
        const auto& h = j.at("hdfpca");
        detail::reject_unknown_keys(h, {"p0", "r"}, "hdfpca");
        if (h.contains("p0")) c.p0 = json_get<int>(h, "p0", "hdfpca");
        if (h.contains("r")) c.r = json_get<int>(h, "r", "hdfpca");
    }
    if (j.contains("intervals")) {
        const auto& iv = j.at("intervals");
        detail::reject_unknown_keys(iv, {"alphas", "methods"}, "intervals");
        if (iv.contains("alphas")) c.alphas = json_get<std::vector<double>>(iv, "alphas", "intervals");
        if (iv.contains("methods")) {
            c.interval_methods.clear();
            for (const auto& m : json_get<std::vector<std::string>>(iv, "methods", "intervals")) {
                try {
                    c.interval_methods.push_back(parse_interval_method(m));
                } catch (const Error& e) {
                    throw ConfigError(std::string("config: ") + e.what());
                }
            }
        }
    }
    if (j.contains("split")) {
        auto s = json_get<std::vector<double>>(j, "split", "config");
        if (s.size() != 3) throw ConfigError("config: split needs three proportions");
        c.split = {s[0], s[1], s[2]};
    }
    auto optional_int = [](const nlohmann::json& obj, const std::string& key, const std::string& where) -> std::optional<int> {
        if (!obj.contains(key) || obj.at(key).is_null()) return std::nullopt;
        return detail::json_get<int>(obj, key, where);
    };
    if (j.contains("backtest")) {
        const auto& b = j.at("backtest");
        detail::reject_unknown_keys(b, {"max_horizon", "interval_horizon"}, "backtest");
        c.max_horizon = optional_int(b, "max_horizon", "backtest");
        c.interval_horizon = optional_int(b, "interval_horizon", "backtest");
    }
    c.forecast_horizon = optional_int(j, "forecast_horizon", "config");
    if (j.contains("diagnostics")) {
        const auto& dg = j.at("diagnostics");
        detail::reject_unknown_keys(dg, {"max_lag"}, "diagnostics");
        if (dg.contains("max_lag")) c.max_lag = json_get<int>(dg, "max_lag", "diagnostics");
    }
    if (j.contains("transform")) {
        const auto& t = j.at("transform");
        detail::reject_unknown_keys(t, {"clip_epsilon"}, "transform");
        if (t.contains("clip_epsilon")) c.clip_epsilon = json_get<double>(t, "clip_epsilon", "transform");
    }
    if (j.contains("output")) c.output = json_get<std::string>(j, "output", "config");
    if (j.contains("seed")) c.seed = json_get<std::uint64_t>(j, "seed", "config");
    if (j.contains("workers")) c.workers = json_get<unsigned>(j, "workers", "config");
    c.validate();
    return c;
}

inline RunConfig load_config(const std::filesystem::path& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(io::read_text(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
    }
    return parse_config(j, path.parent_path());
}

/// Everything that influences results, in a fixed key order.
inline nlohmann::ordered_json config_echo(const RunConfig& c) {
    nlohmann::ordered_json j;
    j["data"] = {{"path", c.data_path},
                 {"columns",
                  {{"group", c.schema.group}, {"sex", c.schema.sex}, {"year", c.schema.year}, {"age", c.schema.age},
                   {"deaths", c.schema.deaths}}},
                 {"national", c.national ? nlohmann::ordered_json(*c.national) : nlohmann::ordered_json(nullptr)},
                 {"group_order", c.group_order},
                 {"radix", c.radix}};
    std::vector<std::string> models, selections, methods;
    for (auto m : c.models) models.push_back(to_string(m));
    for (const auto& s : c.selections) selections.push_back(s.label());
    for (auto m : c.interval_methods) methods.push_back(to_string(m));
    j["models"] = models;
    j["selection"] = selections;
    j["hdfpca"] = {{"p0", c.p0}, {"r", c.r}};
    j["intervals"] = {{"alphas", c.alphas}, {"methods", methods}};
    j["split"] = c.split;
    auto opt = [](const std::optional<int>& v) { return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr); };
    j["backtest"] = {{"max_horizon", opt(c.max_horizon)}, {"interval_horizon", opt(c.interval_horizon)}};
    j["forecast_horizon"] = opt(c.forecast_horizon);
    j["diagnostics"] = {{"max_lag", c.max_lag}};
    j["transform"] = {{"clip_epsilon", c.clip_epsilon}};
    j["seed"] = c.seed;
    return j;
}

/// Fixed choices the results depend on. Written verbatim into every manifest.
inline nlohmann::ordered_json design_decisions(const RunConfig& c) {
    nlohmann::ordered_json d;
    d["panel"] = {{"zero_cells", "preserved"},
                  {"row_sum_policy", "rescale to radix"},
                  {"rescale_warning_tolerance", 0.005},
                  {"group_order", c.group_order.empty() ? "sorted identifiers" : "declared order, then remaining sorted"},
                  {"age_integration", "unit-weight sums over the integer age grid"}};
    d["transform"] = {{"clip_epsilon", c.clip_epsilon},
                      {"non_monotone_forecast_repair", "monotone rearrangement (sort) of the inverse-logit CDF row"},
                      {"rowwise", true}};
    d["fpca"] = {{"covariance_divisor", "n-1"},
                 {"inner_product_weights", 1},
                 {"method", "SVD of the centred data"},
                 {"eigenvector_sign", "sum of coordinates >= 0, first nonzero coordinate positive on ties"},
                 {"relative_eigenvalue_cutoff", 1e-12},
                 {"absolute_eigenvalue_cutoff", "(1e-10 * RMS of the decomposed data's source)^2"},
                 {"evr_kmax_mean", "mean of the retained positive eigenvalues"},
                 {"evr_ties", "smallest k"},
                 {"fixed_k_above_available", "clamped"}};
    d["score_forecaster"] = {{"family", {"ANN", "AAN", "AAdN"}},
                             {"selection", "AICc"},
                             {"aicc_parameter_count", "smoothing parameters + initial states + variance"},
                             {"initial_states", "profiled by least squares"},
                             {"optimizer", "Nelder-Mead on logit-scaled smoothing parameters, 3 fixed starts each restarted once"},
                             {"tolerance", 1e-8},
                             {"alpha_box", {1e-4, 0.9999}},
                             {"beta_box", "(1e-4, alpha)"},
                             {"phi_box", {0.8, 0.98}},
                             {"standardise_before_fit", true},
                             {"short_series_fallback", "n <= 4: ANN with alpha 0.5"}};
    d["models"] = {{"mfts", "joint FPCA of the stacked female and male curves"},
                   {"mlfts", "common FPCA on the sex average of centred curves, specific FPCA on the remainder"},
                   {"within_cluster_variability_empty", 1.0},
                   {"fanova", "grand, group and sex effects constant in time; residuals forecast by MFTS per group"},
                   {"hdfpca_scope", "per sex across groups"},
                   {"hdfpca_p0", c.p0},
                   {"hdfpca_r", c.r},
                   {"hdfpca_p0_above_available", "clamped to the smallest available count"}};
    d["intervals"] = {{"sd_xi_grid", {0.0, 5.0, 0.01}},
                      {"sd_objective", "|validation coverage - (1 - alpha)|, ties to the smaller xi"},
                      {"sd_symmetric", true},
                      {"conformal_quantile", "type 7 (linear interpolation)"},
                      {"lower_bound_clamp", 0.0},
                      {"calibration_scope", "per group, sex and horizon"}};
    d["evaluation"] = {{"density_floor", kDensityFloor},
                       {"cpd", "|non-coverage - alpha|; non-coverage emitted alongside"},
                       {"jsd_reference", "pointwise geometric mean"},
                       {"jsd_root", "square root per pair, then mean over pairs"},
                       {"interval_test_last_target", "second-to-last year (16 - h pairs at paper scale)"},
                       {"point_test_last_target", "last year (17 - h pairs at paper scale)"},
                       {"heatmap_tie_break", {"ufts", "mfts", "mlfts", "fanova", "hdfpca"}},
                       {"ccf_norm", "Hilbert-Schmidt (square root of the double sum of squares)"},
                       {"ccf_divisor", "n"},
                       {"fit_reuse", "one fit per origin, all horizons from it"}};
    d["output"] = {{"number_format", "shortest round-trip decimal"}, {"layout", {"forecasts", "intervals", "metrics", "heatmaps", "diagnostics"}}};
    return d;
}

struct RunStages {
    bool forecasts = true;
    bool intervals = true;
    bool evaluation = true;
    bool diagnostics = true;
};

struct RunSummary {
    std::filesystem::path output;
    std::size_t files = 0;
    std::size_t failed_origins = 0;
    std::vector<std::string> warnings;
};

/// Year-count layout of a run.
struct RunLayout {
    int n = 0, n_train = 0, n_val = 0, n_test = 0;
    BacktestPlan point, calibration;
    int interval_eval_horizon = 0;  // horizons with both calibration residuals and test pairs
    int interval_last_target = 0;
    int forecast_horizon = 0;
};

inline RunLayout make_layout(const RunConfig& c, const DeathDensityPanel& panel) {
    const SampleSplit split = split_years(panel, c.split);
    RunLayout L;
    L.n = static_cast<int>(panel.years.size());
    L.n_train = static_cast<int>(split.train_years.size());
    L.n_val = static_cast<int>(split.validation_years.size());
    L.n_test = static_cast<int>(split.test_years.size());
    if (L.n_train < 2) throw Error("training set needs at least two years");
    L.point = BacktestPlan{L.n_train + L.n_val, L.n, c.max_horizon.value_or(L.n_test)};
    L.calibration = BacktestPlan{L.n_train, L.n_train + L.n_val, c.interval_horizon.value_or(std::max(1, L.n_val - 1))};
    L.interval_last_target = L.n - 1;
    L.interval_eval_horizon = std::min({L.calibration.max_horizon, L.point.max_horizon, L.n_test - 1});
    L.forecast_horizon = c.forecast_horizon.value_or(L.n_test);
    return L;
}

namespace detail {

inline std::string alpha_tag(double a) { return "a" + io::format_double(a); }

inline std::vector<std::string> year_labels(int first, int count) {
    std::vector<std::string> out;
    for (int i = 0; i < count; ++i) out.push_back(std::to_string(first + i));
    return out;
}

inline std::vector<std::string> age_header(const AgeGrid& grid, const std::string& first) {
    std::vector<std::string> h{first};
    for (int a : grid.ages()) h.push_back(std::to_string(a));
    return h;
}

inline double finite_mean(const std::vector<double>& v) {
    double s = 0.0;
    int n = 0;
    for (double x : v)
        if (std::isfinite(x)) {
            s += x;
            ++n;
        }
    return n ? s / n : std::numeric_limits<double>::quiet_NaN();
}

inline nlohmann::ordered_json note_json(const FitNote& n, bool with_models) {
    nlohmann::ordered_json j;
    j["scope"] = n.scope;
    j["stage"] = n.stage;
    j["K"] = n.components;
    if (with_models) j["score_models"] = n.score_models;
    if (n.within_cluster_variability) j["within_cluster_variability"] = *n.within_cluster_variability;
    return j;
}

/// Writes files below a root and remembers their hashes for the manifest.
class OutputTree {
public:
    explicit OutputTree(std::filesystem::path root) : root_(std::move(root)) {}

    void write(const std::string& rel, const std::string& text) {
        io::write_text(root_ / rel, text);
        hashes_[rel] = io::hex64(io::fnv1a(text));
    }

    [[nodiscard]] const std::map<std::string, std::string>& hashes() const { return hashes_; }
    [[nodiscard]] const std::filesystem::path& root() const { return root_; }

private:
    std::filesystem::path root_;
    std::map<std::string, std::string> hashes_;
};

}  // namespace detail

/// Per-(spec, series, horizon) accuracy.
struct PointScore {
    double kld = std::numeric_limits<double>::quiet_NaN();
    double jsd = std::numeric_limits<double>::quiet_NaN();
    int pairs = 0;
};

struct IntervalScore {
    double ecp = std::numeric_limits<double>::quiet_NaN();
    double noncoverage = std::numeric_limits<double>::quiet_NaN();
    double cpd = std::numeric_limits<double>::quiet_NaN();
    double score = std::numeric_limits<double>::quiet_NaN();
    int calibration = 0;
    int pairs = 0;
};

/// Residual bank at horizon h from a calibration backtest; nullopt if there are no pairs.
inline std::optional<ResidualBank> calibration_bank(const BacktestResult& calib, const DeathDensityPanel& panel,
                                                    const SeriesKey& key, int h) {
    if (h > calib.plan.max_horizon) return std::nullopt;
    HorizonPairs p = horizon_pairs(calib, panel, key, h, calib.plan.final_end);
    if (p.actual.rows() == 0) return std::nullopt;
    return collect_residuals(p.actual, p.forecast, h);
}

/// Interval half-widths for one (bank, method, alpha); nullopt when the method cannot calibrate.
inline std::optional<Vector> interval_width(const ResidualBank& bank, IntervalMethod method, double alpha) {
    if (method == IntervalMethod::Sd) {
        if (bank.size() < 2) return std::nullopt;
        const SdCalibration cal = calibrate_sd(bank, alpha);
        return Vector(cal.xi * cal.gamma);
    }
    return calibrate_conformal(bank, alpha).q;
}

inline RunSummary run(const RunConfig& config, const RunStages& stages = {}, const ParallelFor& parallel = serial_for) {
    config.validate();
    if (config.output.empty()) throw ConfigError("no output directory given");
    const std::filesystem::path out_dir = config.output;
    std::filesystem::path partial = out_dir;
    partial += ".partial";
    std::filesystem::remove_all(partial);

    RunSummary summary;
    summary.output = out_dir;
    try {
        LoadOptions lo;
        lo.schema = config.schema;
        lo.radix = config.radix;
        lo.group_order = config.group_order;
        lo.national = config.national;
        LoadReport report;
        std::ifstream in(config.resolve(config.data_path), std::ios::binary);
        if (!in) throw Error("cannot open data file " + config.resolve(config.data_path).string());
        const DeathDensityPanel panel = load_panel(in, lo, &report);
        summary.warnings = report.warnings;
        const RunLayout L = make_layout(config, panel);
        const LogitPanel logits = logit_panel(panel, config.clip_epsilon);
        const std::vector<ModelSpec> specs = config.specs();
        const std::vector<SeriesKey> keys = [&] {
            std::vector<SeriesKey> k;
            for (const auto& g : logits.groups)
                for (Sex s : {Sex::Female, Sex::Male})
                    if (logits.series.count(SeriesKey{g, s})) k.push_back(SeriesKey{g, s});
            return k;
        }();
        const bool need_point = stages.evaluation;
        const bool need_calibration = stages.evaluation || stages.intervals;

        detail::OutputTree tree(partial);
        nlohmann::ordered_json manifest;
        manifest["config"] = config_echo(config);
        manifest["data"] = {{"groups", panel.groups},
                            {"modelled_groups", logits.groups},
                            {"national", panel.national ? nlohmann::ordered_json(*panel.national) : nlohmann::ordered_json(nullptr)},
                            {"years", {panel.years.front(), panel.years.back()}},
                            {"ages", {panel.grid.front(), panel.grid.back()}},
                            {"radix", panel.radix},
                            {"load_warnings", report.warnings}};
        manifest["split"] = {{"train", {panel.years[0], panel.years[static_cast<std::size_t>(L.n_train - 1)]}},
                             {"validation",
                              {panel.years[static_cast<std::size_t>(L.n_train)],
                               panel.years[static_cast<std::size_t>(L.n_train + L.n_val - 1)]}},
                             {"test", {panel.years[static_cast<std::size_t>(L.n_train + L.n_val)], panel.years.back()}}};
        auto plan_json = [&](const BacktestPlan& p) {
            return nlohmann::ordered_json{{"first_origin_last_year", panel.years[static_cast<std::size_t>(p.initial_end - 1)]},
                                          {"last_target_year", panel.years[static_cast<std::size_t>(p.final_end - 1)]},
                                          {"max_horizon", p.max_horizon}};
        };
        manifest["plans"] = nlohmann::ordered_json::object();
        if (need_point) manifest["plans"]["point"] = plan_json(L.point);
        if (need_calibration) manifest["plans"]["calibration"] = plan_json(L.calibration);
        if (stages.evaluation)
            manifest["plans"]["interval_test"] = {{"last_target_year", panel.years[static_cast<std::size_t>(L.interval_last_target - 1)]},
                                                  {"max_horizon", L.interval_eval_horizon}};
        manifest["decisions"] = design_decisions(config);

        const std::vector<std::string> ages_header = detail::age_header(panel.grid, "year");
        std::vector<BacktestResult> point_runs(specs.size()), calib_runs(specs.size());
        auto record_backtest = [&](const BacktestResult& bt, nlohmann::ordered_json& list) {
            for (const auto& o : bt.origins) {
                nlohmann::ordered_json e;
                e["origin_last_year"] = panel.years[static_cast<std::size_t>(o.origin - 1)];
                if (!o.error.empty()) {
                    e["error"] = o.error;
                    ++summary.failed_origins;
                } else {
                    auto ks = nlohmann::ordered_json::array();
                    for (const auto& n : o.notes) ks.push_back(detail::note_json(n, false));
                    e["fits"] = ks;
                    e["rows_rearranged"] = o.rows_rearranged;
                }
                list.push_back(e);
            }
        };

        nlohmann::ordered_json spec_manifest = nlohmann::ordered_json::array();
        for (std::size_t si = 0; si < specs.size(); ++si) {
            const ModelSpec& spec = specs[si];
            nlohmann::ordered_json sj;
            sj["label"] = spec.label();
            sj["model"] = to_string(spec.kind);
            sj["selection"] = spec.selection.label();
            if (need_point) {
                point_runs[si] = run_expanding_window(panel, L.point, spec, parallel, ets_forecaster(), &logits);
                record_backtest(point_runs[si], sj["point_backtest"]);
            }
            if (need_calibration) {
                calib_runs[si] = run_expanding_window(panel, L.calibration, spec, parallel, ets_forecaster(), &logits);
                record_backtest(calib_runs[si], sj["calibration_backtest"]);
            }
            if (stages.forecasts || stages.intervals) {
                const int H = L.forecast_horizon;
                OriginForecast f = forecast_from_origin(logits, panel.radix, L.n, H, spec, ets_forecaster());
                auto fits = nlohmann::ordered_json::array();
                for (const auto& n : f.record.notes) fits.push_back(detail::note_json(n, true));
                sj["final_fit"] = {{"fits", fits}, {"rows_rearranged", f.record.rows_rearranged}};
                const auto labels = detail::year_labels(panel.years.back() + 1, H);
                for (const auto& key : keys) {
                    const Matrix& dens = f.densities.at(key);
                    if (stages.forecasts)
                        tree.write("forecasts/" + spec.label() + "/" + series_file_name(key), io::matrix_csv(dens, ages_header, labels));
                    if (!stages.intervals) continue;
                    for (IntervalMethod method : config.interval_methods)
                        for (double alpha : config.alphas) {
                            std::vector<Vector> lo_rows, hi_rows;
                            for (int h = 1; h <= H; ++h) {
                                auto bank = calibration_bank(calib_runs[si], panel, key, h);
                                if (!bank) break;
                                auto width = interval_width(*bank, method, alpha);
                                if (!width) break;
                                IntervalForecast iv = build_interval(dens.row(h - 1).transpose(), *width, method, alpha, h);
                                lo_rows.push_back(iv.lower);
                                hi_rows.push_back(iv.upper);
                            }
                            Matrix lo(static_cast<Eigen::Index>(lo_rows.size()), dens.cols()), hi(lo.rows(), dens.cols());
                            for (std::size_t i = 0; i < lo_rows.size(); ++i) {
                                lo.row(static_cast<Eigen::Index>(i)) = lo_rows[i].transpose();
                                hi.row(static_cast<Eigen::Index>(i)) = hi_rows[i].transpose();
                            }
                            const auto rows = detail::year_labels(panel.years.back() + 1, static_cast<int>(lo.rows()));
                            const std::string base = "intervals/" + spec.label() + "/" + to_string(method) + "_" +
                                                     detail::alpha_tag(alpha) + "/" + series_file_name(key);
                            const std::string stem = base.substr(0, base.size() - 4);
                            tree.write(stem + "_lower.csv", io::matrix_csv(lo, ages_header, rows));
                            tree.write(stem + "_upper.csv", io::matrix_csv(hi, ages_header, rows));
                        }
                }
            }
            spec_manifest.push_back(sj);
        }
        manifest["specs"] = spec_manifest;

        if (stages.evaluation) {
            const int H = L.point.max_horizon;
            const int Hi = L.interval_eval_horizon;
            // point[spec][key index][h-1]
            std::vector<std::vector<std::vector<PointScore>>> point(specs.size());
            // interval[spec][method][alpha][key][h-1]
            std::vector<std::vector<std::vector<std::vector<std::vector<IntervalScore>>>>> interval(specs.size());
            for (std::size_t si = 0; si < specs.size(); ++si) {
                point[si].assign(keys.size(), std::vector<PointScore>(static_cast<std::size_t>(H)));
                interval[si].assign(config.interval_methods.size(),
                                    std::vector<std::vector<std::vector<IntervalScore>>>(
                                        config.alphas.size(), std::vector<std::vector<IntervalScore>>(
                                                                  keys.size(), std::vector<IntervalScore>(static_cast<std::size_t>(std::max(Hi, 0))))));
            }
            parallel(specs.size() * keys.size(), [&](std::size_t task) {
                const std::size_t si = task / keys.size(), ki = task % keys.size();
                const SeriesKey& key = keys[ki];
                for (int h = 1; h <= H; ++h) {
                    HorizonPairs p = horizon_pairs(point_runs[si], panel, key, h, L.n);
                    PointScore& ps = point[si][ki][static_cast<std::size_t>(h - 1)];
                    ps.pairs = static_cast<int>(p.actual.rows());
                    if (ps.pairs == 0) continue;
                    ps.kld = kld_sym(p.actual, p.forecast);
                    ps.jsd = jsd_root(p.actual, p.forecast);
                }
                for (int h = 1; h <= Hi; ++h) {
                    auto bank = calibration_bank(calib_runs[si], panel, key, h);
                    HorizonPairs p = horizon_pairs(point_runs[si], panel, key, h, L.interval_last_target);
                    if (!bank || p.actual.rows() == 0) continue;
                    for (std::size_t mi = 0; mi < config.interval_methods.size(); ++mi)
                        for (std::size_t ai = 0; ai < config.alphas.size(); ++ai) {
                            const double alpha = config.alphas[ai];
                            auto width = interval_width(*bank, config.interval_methods[mi], alpha);
                            if (!width) continue;
                            Matrix lo(p.actual.rows(), p.actual.cols()), hi(lo.rows(), lo.cols());
                            for (Eigen::Index j = 0; j < p.actual.rows(); ++j) {
                                IntervalForecast iv =
                                    build_interval(p.forecast.row(j).transpose(), *width, config.interval_methods[mi], alpha, h);
                                lo.row(j) = iv.lower.transpose();
                                hi.row(j) = iv.upper.transpose();
                            }
                            IntervalScore& is = interval[si][mi][ai][ki][static_cast<std::size_t>(h - 1)];
                            const CoverageResult cov = ecp_cpd(p.actual, lo, hi, alpha);
                            is.ecp = cov.ecp;
                            is.noncoverage = cov.noncoverage;
                            is.cpd = cov.cpd;
                            is.score = interval_score(p.actual, lo, hi, alpha);
                            is.calibration = static_cast<int>(bank->size());
                            is.pairs = static_cast<int>(p.actual.rows());
                        }
                }
            });

            // long tables
            std::string by_group = "model,selection,group,sex,h,pairs,kld,jsd\n";
            for (std::size_t si = 0; si < specs.size(); ++si)
                for (std::size_t ki = 0; ki < keys.size(); ++ki)
                    for (int h = 1; h <= H; ++h) {
                        const PointScore& ps = point[si][ki][static_cast<std::size_t>(h - 1)];
                        by_group += io::join({to_string(specs[si].kind), specs[si].selection.label(), keys[ki].group,
                                              std::string(to_string(keys[ki].sex)), std::to_string(h), std::to_string(ps.pairs),
                                              io::format_double(ps.kld), io::format_double(ps.jsd)}) +
                                    "\n";
                    }
            tree.write("metrics/point_by_group.csv", by_group);
            std::string iv_group = "model,selection,method,alpha,group,sex,h,calibration,pairs,ecp,noncoverage,cpd,score\n";
            for (std::size_t si = 0; si < specs.size(); ++si)
                for (std::size_t mi = 0; mi < config.interval_methods.size(); ++mi)
                    for (std::size_t ai = 0; ai < config.alphas.size(); ++ai)
                        for (std::size_t ki = 0; ki < keys.size(); ++ki)
                            for (int h = 1; h <= Hi; ++h) {
                                const IntervalScore& is = interval[si][mi][ai][ki][static_cast<std::size_t>(h - 1)];
                                iv_group += io::join({to_string(specs[si].kind), specs[si].selection.label(),
                                                      to_string(config.interval_methods[mi]), io::format_double(config.alphas[ai]),
                                                      keys[ki].group, std::string(to_string(keys[ki].sex)), std::to_string(h),
                                                      std::to_string(is.calibration), std::to_string(is.pairs),
                                                      io::format_double(is.ecp), io::format_double(is.noncoverage),
                                                      io::format_double(is.cpd), io::format_double(is.score)}) +
                                            "\n";
                            }
            tree.write("metrics/interval_by_group.csv", iv_group);

            // group-averaged tables, one per selection policy, models as columns
            for (const auto& sel : config.selections) {
                std::vector<std::size_t> cols;
                std::vector<std::string> names;
                for (ModelKind k : kCanonicalModelOrder)
                    for (std::size_t si = 0; si < specs.size(); ++si)
                        if (specs[si].kind == k && specs[si].selection.label() == sel.label()) {
                            cols.push_back(si);
                            names.push_back(to_string(k));
                        }
                auto table_rows = [&](const std::vector<std::string>& prefix, const std::function<double(std::size_t, std::size_t, int)>& value,
                                      int horizons, std::string& out) {
                    std::vector<std::vector<double>> per_model(cols.size());
                    for (int h = 1; h <= horizons; ++h) {
                        std::vector<std::string> f = prefix;
                        f.push_back(std::to_string(h));
                        for (std::size_t c = 0; c < cols.size(); ++c) {
                            std::vector<double> over_groups;
                            for (std::size_t ki = 0; ki < keys.size(); ++ki) over_groups.push_back(value(cols[c], ki, h));
                            const double v = detail::finite_mean(over_groups);
                            per_model[c].push_back(v);
                            f.push_back(io::format_double(v));
                        }
                        out += io::join(f) + "\n";
                    }
                    for (const char* agg : {"mean", "median"}) {
                        std::vector<std::string> f = prefix;
                        f.push_back(agg);
                        for (std::size_t c = 0; c < cols.size(); ++c) {
                            std::vector<double> finite;
                            for (double v : per_model[c])
                                if (std::isfinite(v)) finite.push_back(v);
                            const HorizonSummary s = summarize_horizons(finite);
                            f.push_back(io::format_double(std::string(agg) == "mean" ? s.mean : s.median));
                        }
                        out += io::join(f) + "\n";
                    }
                };
                std::vector<std::string> header{"metric", "sex", "h"};
                header.insert(header.end(), names.begin(), names.end());
                std::string pt = io::join(header) + "\n";
                for (const char* metric : {"KLD", "JSD"})
                    for (Sex sex : {Sex::Female, Sex::Male})
                        table_rows(
                            {metric, std::string(to_string(sex))},
                            [&](std::size_t si, std::size_t ki, int h) {
                                if (keys[ki].sex != sex) return std::numeric_limits<double>::quiet_NaN();
                                const PointScore& ps = point[si][ki][static_cast<std::size_t>(h - 1)];
                                return std::string(metric) == "KLD" ? ps.kld : ps.jsd;
                            },
                            H, pt);
                tree.write("metrics/point_" + sel.label() + ".csv", pt);

                std::vector<std::string> iheader{"metric", "alpha", "sex", "h"};
                iheader.insert(iheader.end(), names.begin(), names.end());
                for (std::size_t mi = 0; mi < config.interval_methods.size(); ++mi) {
                    std::string it = io::join(iheader) + "\n";
                    for (const char* metric : {"ECP", "noncoverage", "CPD", "score"})
                        for (std::size_t ai = 0; ai < config.alphas.size(); ++ai)
                            for (Sex sex : {Sex::Female, Sex::Male})
                                table_rows(
                                    {metric, io::format_double(config.alphas[ai]), std::string(to_string(sex))},
                                    [&](std::size_t si, std::size_t ki, int h) {
                                        if (keys[ki].sex != sex) return std::numeric_limits<double>::quiet_NaN();
                                        const IntervalScore& is = interval[si][mi][ai][ki][static_cast<std::size_t>(h - 1)];
                                        const std::string m = metric;
                                        return m == "ECP" ? is.ecp : m == "noncoverage" ? is.noncoverage : m == "CPD" ? is.cpd : is.score;
                                    },
                                    Hi, it);
                    tree.write("metrics/interval_" + sel.label() + "_" + to_string(config.interval_methods[mi]) + ".csv", it);
                }

                // heatmaps: per horizon, how many groups each model wins
                auto write_heatmap = [&](const std::string& rel, int horizons,
                                         const std::function<double(std::size_t, std::size_t, int)>& value, Sex sex) {
                    std::vector<std::size_t> group_keys;
                    for (std::size_t ki = 0; ki < keys.size(); ++ki)
                        if (keys[ki].sex == sex) group_keys.push_back(ki);
                    std::vector<std::vector<std::vector<double>>> errors(cols.size());
                    for (std::size_t c = 0; c < cols.size(); ++c)
                        for (std::size_t ki : group_keys) {
                            std::vector<double> row;
                            for (int h = 1; h <= horizons; ++h) row.push_back(value(cols[c], ki, h));
                            errors[c].push_back(row);
                        }
                    const HeatmapCounts hc = best_method_counts(names, errors);
                    std::vector<std::string> hh{"h"};
                    hh.insert(hh.end(), names.begin(), names.end());
                    std::string text = io::join(hh) + "\n";
                    for (std::size_t h = 0; h < hc.counts.size(); ++h) {
                        std::vector<std::string> f{std::to_string(h + 1)};
                        for (int v : hc.counts[h]) f.push_back(std::to_string(v));
                        text += io::join(f) + "\n";
                    }
                    tree.write(rel, text);
                };
                for (Sex sex : {Sex::Female, Sex::Male}) {
                    const std::string s(to_string(sex));
                    write_heatmap("heatmaps/point_" + sel.label() + "_KLD_" + s + ".csv", H,
                                  [&](std::size_t si, std::size_t ki, int h) { return point[si][ki][static_cast<std::size_t>(h - 1)].kld; }, sex);
                    write_heatmap("heatmaps/point_" + sel.label() + "_JSD_" + s + ".csv", H,
                                  [&](std::size_t si, std::size_t ki, int h) { return point[si][ki][static_cast<std::size_t>(h - 1)].jsd; }, sex);
                    if (Hi < 1) continue;
                    for (std::size_t mi = 0; mi < config.interval_methods.size(); ++mi)
                        for (std::size_t ai = 0; ai < config.alphas.size(); ++ai)
                            write_heatmap("heatmaps/interval_" + sel.label() + "_" + to_string(config.interval_methods[mi]) + "_" +
                                              detail::alpha_tag(config.alphas[ai]) + "_score_" + s + ".csv",
                                          Hi,
                                          [&](std::size_t si, std::size_t ki, int h) {
                                              return interval[si][mi][ai][ki][static_cast<std::size_t>(h - 1)].score;
                                          },
                                          sex);
                }
            }
        }

        if (stages.diagnostics && panel.national) {
            const std::string nat = *panel.national;
            for (Sex sex : {Sex::Female, Sex::Male}) {
                if (!panel.has(nat, sex)) continue;
                const std::string s(to_string(sex));
                const KlMatrices kl = diagnostics_klmatrix(panel, sex);
                std::vector<std::string> yh{"group"}, ah{"group"};
                for (int y : kl.years) yh.push_back(std::to_string(y));
                for (int a : kl.ages) ah.push_back(std::to_string(a));
                tree.write("diagnostics/kld_by_year_" + s + ".csv", io::matrix_csv(kl.by_year, yh, kl.groups));
                tree.write("diagnostics/kld_by_age_" + s + ".csv", io::matrix_csv(kl.by_age, ah, kl.groups));
                const int lag = std::min(config.max_lag, L.n - 3);
                if (lag < 0) continue;
                std::vector<std::string> lh{"group"};
                for (int h = 0; h <= lag; ++h) lh.push_back(std::to_string(h));
                const Matrix& natv = panel.at(nat, sex).values;
                Matrix ccf(static_cast<Eigen::Index>(kl.groups.size()) + 1, lag + 1);
                std::vector<std::string> rows;
                for (std::size_t g = 0; g < kl.groups.size(); ++g) {
                    ccf.row(static_cast<Eigen::Index>(g)) = functional_ccf(panel.at(kl.groups[g], sex).values, natv, lag).transpose();
                    rows.push_back(kl.groups[g]);
                }
                ccf.row(ccf.rows() - 1) = functional_acf(natv, lag).transpose();
                rows.push_back(nat);
                tree.write("diagnostics/ccf_" + s + ".csv", io::matrix_csv(ccf, lh, rows));
            }
        }

        manifest["failed_origins"] = summary.failed_origins;
        manifest["files"] = tree.hashes();
        io::write_text(partial / "manifest.json", manifest.dump(2) + "\n");
        summary.files = tree.hashes().size() + 1;

        std::filesystem::remove_all(out_dir);
        if (out_dir.has_parent_path()) std::filesystem::create_directories(out_dir.parent_path());
        std::filesystem::rename(partial, out_dir);
    } catch (...) {
        std::error_code ec;
        std::filesystem::remove_all(partial, ec);
        throw;
    }
    return summary;
}

}  // namespace mortfts
