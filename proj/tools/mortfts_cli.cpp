// mortfts: command-line front end for the density forecasting pipeline.

#include "mortfts/parallel.hpp"
#include "mortfts/pipeline.hpp"
#include "mortfts/simulate.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

using namespace mortfts;

namespace {

/// Flags shared by every subcommand that reads a panel.
struct DataFlags {
    std::string config;
    std::string input;
    std::string national;
    std::vector<std::string> group_order;
    std::optional<double> radix;
};

void add_data_flags(CLI::App* cmd, DataFlags& f) {
    cmd->add_option("--config,-c", f.config, "JSON run config (data section and defaults)");
    cmd->add_option("--input,-i", f.input, "long-format CSV/TSV: group, sex, year, age, deaths");
    cmd->add_option("--national", f.national, "identifier of the national aggregate group");
    cmd->add_option("--group-order", f.group_order, "group identifiers in display order")->delimiter(',');
    cmd->add_option("--radix", f.radix, "life-table radix (default 100000)");
}

RunConfig base_config(const DataFlags& f) {
    RunConfig c;
    if (!f.config.empty()) c = load_config(f.config);
    if (!f.input.empty()) {
        c.data_path = std::filesystem::absolute(f.input).string();
        c.base_dir.clear();
    }
    if (!f.national.empty()) c.national = f.national;
    if (!f.group_order.empty()) c.group_order = f.group_order;
    if (f.radix) c.radix = *f.radix;
    if (c.data_path.empty()) throw ConfigError("give --input or a --config with data.path");
    return c;
}

DeathDensityPanel load(const RunConfig& c) {
    LoadOptions lo;
    lo.schema = c.schema;
    lo.radix = c.radix;
    lo.group_order = c.group_order;
    lo.national = c.national;
    LoadReport report;
    std::ifstream in(c.resolve(c.data_path), std::ios::binary);
    if (!in) throw Error("cannot open data file " + c.resolve(c.data_path).string());
    DeathDensityPanel p = load_panel(in, lo, &report);
    for (const auto& w : report.warnings) std::cerr << "warning: " << w << "\n";
    return p;
}

void emit(const std::string& path, const std::string& text) {
    if (path.empty() || path == "-")
        std::cout << text;
    else
        io::write_text(path, text);
}

unsigned worker_count(unsigned from_config, const std::optional<unsigned>& flag) {
    if (flag) return *flag;
    if (const char* env = std::getenv("MORTFTS_WORKERS")) {
        try {
            const int v = std::stoi(env);
            if (v < 1) throw std::invalid_argument("");
            return static_cast<unsigned>(v);
        } catch (const std::exception&) {
            throw ConfigError(std::string("MORTFTS_WORKERS must be a positive integer, got '") + env + "'");
        }
    }
    return std::max(1u, from_config);
}

int fail(const std::string& kind, const std::string& message, int code) {
    nlohmann::ordered_json j{{"status", "error"}, {"kind", kind}, {"message", message}};
    std::cerr << j.dump() << "\n";
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Forecast age-at-death distributions with functional time-series models"};
    app.require_subcommand(1);

    // simulate
    SimulationOptions sim;
    std::string sim_out;
    bool sim_no_national = false;
    auto* c_sim = app.add_subcommand("simulate", "write a synthetic panel as long-format CSV");
    c_sim->add_option("--groups", sim.groups, "number of groups")->capture_default_str();
    c_sim->add_option("--years", sim.years, "number of years")->capture_default_str();
    c_sim->add_option("--first-year", sim.first_year, "first calendar year")->capture_default_str();
    c_sim->add_option("--last-age", sim.last_age, "oldest age (ages start at 0)")->capture_default_str();
    c_sim->add_option("--noise", sim.noise, "sd of log cell noise")->capture_default_str();
    c_sim->add_option("--seed", sim.seed, "random seed")->capture_default_str();
    c_sim->add_flag("--no-national", sim_no_national, "omit the national aggregate group 00");
    c_sim->add_option("--out,-o", sim_out, "output CSV (default stdout)");

    // ingest
    DataFlags ingest_data;
    std::string ingest_out;
    auto* c_ingest = app.add_subcommand("ingest", "validate a panel and write its canonical directory form");
    add_data_flags(c_ingest, ingest_data);
    c_ingest->add_option("--out,-o", ingest_out, "output directory")->required();

    // transform
    DataFlags tr_data;
    std::string tr_group, tr_sex = "F", tr_out;
    double tr_eps = kDefaultClipEpsilon;
    auto* c_tr = app.add_subcommand("transform", "logit-CDF matrix of one series as CSV");
    add_data_flags(c_tr, tr_data);
    c_tr->add_option("--group,-g", tr_group, "group identifier")->required();
    c_tr->add_option("--sex,-s", tr_sex, "F or M")->capture_default_str();
    c_tr->add_option("--clip-epsilon", tr_eps, "CDF clipping before the logit")->capture_default_str();
    c_tr->add_option("--out,-o", tr_out, "output CSV (default stdout)");

    // fpca
    DataFlags fp_data;
    std::string fp_group, fp_sex = "F", fp_k = "evr", fp_out;
    auto* c_fp = app.add_subcommand("fpca", "eigenvalues, selected K, scores and explained variance of one series (JSON)");
    add_data_flags(c_fp, fp_data);
    c_fp->add_option("--group,-g", fp_group, "group identifier")->required();
    c_fp->add_option("--sex,-s", fp_sex, "F or M")->capture_default_str();
    c_fp->add_option("--k", fp_k, "evr or a fixed K")->capture_default_str();
    c_fp->add_option("--out,-o", fp_out, "output JSON (default stdout)");

    // scores
    DataFlags sc_data;
    std::string sc_group, sc_sex = "F", sc_k = "evr", sc_out;
    bool sc_dump = false;
    auto* c_sc = app.add_subcommand("scores", "exponential-smoothing fits of the retained scores of one series");
    add_data_flags(c_sc, sc_data);
    c_sc->add_option("--group,-g", sc_group, "group identifier")->required();
    c_sc->add_option("--sex,-s", sc_sex, "F or M")->capture_default_str();
    c_sc->add_option("--k", sc_k, "evr or a fixed K")->capture_default_str();
    c_sc->add_flag("--dump", sc_dump, "print the selected member and parameters per component");
    c_sc->add_option("--out,-o", sc_out, "output JSON (default stdout)");

    // pipeline subcommands
    struct PipelineFlags {
        DataFlags data;
        std::vector<std::string> models, k, methods;
        std::vector<double> alphas;
        std::optional<int> horizon;
        std::string out;
        std::optional<unsigned> workers;
    };
    PipelineFlags pf_forecast, pf_interval, pf_evaluate, pf_run;
    auto add_pipeline = [&](const std::string& name, const std::string& help, PipelineFlags& f, bool models, bool intervals,
                            bool horizon) {
        auto* cmd = app.add_subcommand(name, help);
        add_data_flags(cmd, f.data);
        if (models) {
            cmd->add_option("--model,-m", f.models, "ufts, mfts, mlfts, fanova, hdfpca (repeat or comma-separate)")->delimiter(',');
            cmd->add_option("--k", f.k, "evr and/or fixed K, e.g. evr,6")->delimiter(',');
        }
        if (intervals) {
            cmd->add_option("--method", f.methods, "sd and/or conformal")->delimiter(',');
            cmd->add_option("--alpha", f.alphas, "nominal significance levels, e.g. 0.2,0.05")->delimiter(',');
        }
        if (horizon) cmd->add_option("--horizon", f.horizon, "forecast steps from the last observed year");
        cmd->add_option("--out,-o", f.out, "output directory (overrides the config)");
        cmd->add_option("--workers,-j", f.workers, "worker threads (overrides MORTFTS_WORKERS and the config)");
        return cmd;
    };
    auto* c_forecast = add_pipeline("forecast", "point forecasts from the full sample", pf_forecast, true, false, true);
    auto* c_interval = add_pipeline("interval", "validation-calibrated prediction intervals", pf_interval, true, true, true);
    auto* c_evaluate = add_pipeline("evaluate", "expanding-window backtests, metric tables, heatmaps and diagnostics", pf_evaluate,
                                    true, true, false);
    add_pipeline("run", "the whole pipeline: forecasts, intervals, evaluation and diagnostics", pf_run, true, true,
                               true);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return fail("usage", e.what(), 2);
    }

    try {
        if (c_sim->parsed()) {
            sim.national = !sim_no_national;
            std::ostringstream os;
            write_long_csv(simulate_panel(sim), os);
            emit(sim_out, os.str());
            return 0;
        }
        if (c_ingest->parsed()) {
            const DeathDensityPanel p = load(base_config(ingest_data));
            write_panel(p, ingest_out);
            return 0;
        }
        if (c_tr->parsed()) {
            const DeathDensityPanel p = load(base_config(tr_data));
            const auto& s = p.at(tr_group, parse_sex(tr_sex));
            const LogitCdfSeries x = to_logit(s, tr_eps);
            std::vector<std::string> header{"year"};
            for (std::size_t a = 0; a + 1 < s.grid.size(); ++a) header.push_back(std::to_string(s.grid.ages()[a]));
            std::vector<std::string> rows;
            for (int y : s.years) rows.push_back(std::to_string(y));
            emit(tr_out, io::matrix_csv(x.values, header, rows));
            return 0;
        }
        if (c_fp->parsed() || c_sc->parsed()) {
            const bool fp = c_fp->parsed();
            const DeathDensityPanel p = load(base_config(fp ? fp_data : sc_data));
            const auto& s = p.at(fp ? fp_group : sc_group, parse_sex(fp ? fp_sex : sc_sex));
            const Matrix x = to_logit(s).values;
            const FpcaModel model = fit_fpca(x);
            const ComponentSelection sel = parse_selection(fp ? fp_k : sc_k).choose(model);
            nlohmann::ordered_json j;
            j["group"] = fp ? fp_group : sc_group;
            j["sex"] = fp ? fp_sex : sc_sex;
            j["method"] = sel.method == SelectionMethod::Evr ? "evr" : "fixed";
            j["K"] = sel.K;
            j["k_max"] = sel.k_max;
            j["eta"] = sel.eta;
            j["clamped"] = sel.clamped;
            std::vector<double> ev(model.eigenvalues.data(), model.eigenvalues.data() + model.eigenvalues.size());
            const Vector evr = model.explained_variance_ratio();
            j["eigenvalues"] = ev;
            j["explained_variance_ratio"] = std::vector<double>(evr.data(), evr.data() + evr.size());
            if (fp) {
                auto scores = nlohmann::ordered_json::array();
                for (Eigen::Index t = 0; t < model.scores.rows(); ++t) {
                    std::vector<double> row;
                    for (Eigen::Index k = 0; k < sel.K; ++k) row.push_back(model.scores(t, k));
                    scores.push_back({{"year", s.years[static_cast<std::size_t>(t)]}, {"scores", row}});
                }
                j["scores"] = scores;
            } else {
                if (!sc_dump) throw ConfigError("scores: nothing to do without --dump");
                auto comps = nlohmann::ordered_json::array();
                for (Eigen::Index k = 0; k < sel.K; ++k) {
                    const EtsFit f = fit_ets(model.scores.col(k));
                    nlohmann::ordered_json c{{"component", k + 1},   {"model", describe(f)}, {"alpha", f.alpha},
                                             {"beta", f.beta},       {"phi", f.phi},         {"level0", f.level0},
                                             {"trend0", f.trend0},   {"sigma2", f.sigma2},   {"aicc", f.aicc},
                                             {"n_obs", f.n_obs},     {"fallback", f.fallback}};
                    if (f.kind == EtsKind::ANN) {
                        c.erase("beta");
                        c.erase("trend0");
                    }
                    if (f.kind != EtsKind::AAdN) c.erase("phi");
                    comps.push_back(c);
                }
                j["components"] = comps;
            }
            emit(fp ? fp_out : sc_out, j.dump(2) + "\n");
            return 0;
        }

        PipelineFlags* f = nullptr;
        RunStages stages;
        if (c_forecast->parsed()) {
            f = &pf_forecast;
            stages = RunStages{true, false, false, false};
        } else if (c_interval->parsed()) {
            f = &pf_interval;
            stages = RunStages{false, true, false, false};
        } else if (c_evaluate->parsed()) {
            f = &pf_evaluate;
            stages = RunStages{false, false, true, true};
        } else {
            f = &pf_run;
        }
        RunConfig cfg = base_config(f->data);
        if (!f->models.empty()) {
            cfg.models.clear();
            for (const auto& m : f->models) {
                try {
                    cfg.models.push_back(parse_model_kind(m));
                } catch (const Error& e) {
                    throw ConfigError(e.what());
                }
            }
        }
        if (!f->k.empty()) {
            cfg.selections.clear();
            for (const auto& k : f->k) cfg.selections.push_back(parse_selection(k));
        }
        if (!f->methods.empty()) {
            cfg.interval_methods.clear();
            for (const auto& m : f->methods) {
                try {
                    cfg.interval_methods.push_back(parse_interval_method(m));
                } catch (const Error& e) {
                    throw ConfigError(e.what());
                }
            }
        }
        if (!f->alphas.empty()) cfg.alphas = f->alphas;
        if (f->horizon) cfg.forecast_horizon = *f->horizon;
        if (!f->out.empty())
            cfg.output = f->out;
        else if (!cfg.output.empty())
            cfg.output = cfg.resolve(cfg.output).string();
        const unsigned workers = worker_count(cfg.workers, f->workers);
        const RunSummary s = run(cfg, stages, thread_for(workers));
        for (const auto& w : s.warnings) std::cerr << "warning: " << w << "\n";
        nlohmann::ordered_json j{{"status", "ok"}, {"output", s.output.string()}, {"files", s.files}, {"failed_origins", s.failed_origins}};
        std::cout << j.dump() << "\n";
        return 0;
    } catch (const ConfigError& e) {
        return fail("config", e.what(), 2);
    } catch (const std::exception& e) {
        return fail("runtime", e.what(), 1);
    }
}
