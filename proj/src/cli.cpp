#include "rrl/cli.hpp"

#include <CLI11.hpp>
#include <cctype>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "json.hpp"
#include "rrl/domain.hpp"
#include "rrl/io.hpp"
#include "rrl/macrorisk.hpp"
#include "rrl/onefactor.hpp"
#include "rrl/simlab.hpp"
#include "rrl/version.hpp"

namespace rrl::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

// Collects warnings/info for the structured log; numeric outputs never
// depend on anything recorded here.
struct Logger {
    std::vector<std::pair<std::string, std::string>> entries;  // level, message

    void warn(const std::string& msg) {
        entries.emplace_back("warning", msg);
        std::cerr << "warning: " << msg << '\n';
    }
    void info(const std::string& msg) { entries.emplace_back("info", msg); }
    int warning_count() const {
        int n = 0;
        for (const auto& [level, _] : entries) n += (level == "warning");
        return n;
    }
    void flush(const fs::path& out_dir) const {
        if (entries.empty()) return;
        std::ofstream out(out_dir / "run_log.jsonl", std::ios::binary);
        for (const auto& [level, message] : entries) {
            ordered_json line;
            line["level"] = level;
            line["message"] = message;
            out << line.dump() << '\n';
        }
    }
};

struct RunContext {
    std::string command;
    fs::path out_dir;
    ordered_json options;  // fully resolved; replay re-runs from this alone
    std::uint64_t seed = 0;
    std::vector<std::pair<std::string, std::string>> inputs;  // path, digest
    std::vector<std::string> outputs;
    Logger log;

    void add_input(const fs::path& p) {
        inputs.emplace_back(p.string(), io::file_digest(p));
    }
    void note_output(const std::string& name) { outputs.push_back(name); }

    ordered_json manifest() const {
        ordered_json m;
        m["command"] = command;
        m["version"] = kVersion;
        m["seed"] = seed;
        ordered_json in = ordered_json::array();
        for (const auto& [path, digest] : inputs) {
            ordered_json e;
            e["path"] = path;
            e["fnv1a64"] = digest;
            in.push_back(std::move(e));
        }
        m["inputs"] = std::move(in);
        m["options"] = options;
        m["outputs"] = outputs;
        return m;
    }

    void finish() {
        std::ofstream out(out_dir / "run_manifest.json", std::ios::binary);
        out << manifest().dump(2) << '\n';
        log.flush(out_dir);
    }
};

void write_json_file(const fs::path& path, const ordered_json& doc) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
    out << doc.dump(2) << '\n';
}

ordered_json read_json_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
    ordered_json doc;
    in >> doc;
    return doc;
}

std::string sanitize_filename(const std::string& s) {
    std::string out = s;
    for (char& c : out)
        if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '.') c = '_';
    return out;
}

io::Units units_from_string(const std::string& s) {
    if (s == "auto") return io::Units::auto_detect;
    if (s == "percent") return io::Units::percent;
    if (s == "fraction") return io::Units::fraction;
    throw CLI::ValidationError("--units must be auto, percent or fraction");
}

// Loads a panel from the recorded input list: a single long-format file or a
// set of per-period matrix files.
TransitionPanel load_panel(RunContext& ctx) {
    std::vector<fs::path> paths;
    for (const auto& p : ctx.options.at("inputs")) paths.emplace_back(p.get<std::string>());
    if (paths.empty()) throw std::invalid_argument("no input files given");
    for (const auto& p : paths) ctx.add_input(p);

    const auto units = units_from_string(ctx.options.value("units", "auto"));
    const auto grades = ctx.options.value("grades", std::vector<std::string>{});
    if (paths.size() == 1 && io::looks_like_long_panel(paths.front()))
        return io::read_long_panel(paths.front(), grades);
    return io::read_period_matrix_files(paths, units);
}

ordered_json validation_json(const ValidationReport& report) {
    ordered_json doc;
    ordered_json unobserved = ordered_json::array();
    for (const auto& r : report.unobserved_rows) {
        ordered_json e;
        e["period"] = r.period;
        e["grade"] = r.grade;
        unobserved.push_back(std::move(e));
    }
    doc["unobserved_rows"] = std::move(unobserved);
    doc["zero_cells"] = report.zero_cells;
    ordered_json defects = ordered_json::array();
    for (const auto& d : report.rounding_defects) {
        ordered_json e;
        e["period"] = d.period;
        e["grade"] = d.grade;
        e["row_sum"] = d.row_sum;
        defects.push_back(std::move(e));
    }
    doc["rounding_defects"] = std::move(defects);
    ordered_json clip = ordered_json::array();
    for (const auto& r : report.rows_requiring_clip) {
        ordered_json e;
        e["period"] = r.period;
        e["grade"] = r.grade;
        clip.push_back(std::move(e));
    }
    doc["rows_requiring_clip"] = std::move(clip);
    return doc;
}

// --- command runners; each consumes fully resolved options -----------------

void run_estimate(RunContext& ctx) {
    const TransitionPanel panel = load_panel(ctx);
    const ClipPolicy policy(ctx.options.value("epsilon", 1e-6));

    for (const auto& obs : panel.observations) {
        const std::string name = "empirical_" + sanitize_filename(obs.period) + ".csv";
        io::write_period_matrix_csv(ctx.out_dir / name, panel.scale, obs.empirical);
        ctx.note_output(name);
    }
    const auto report = validate_panel(panel, policy);
    write_json_file(ctx.out_dir / "validation.json", validation_json(report));
    ctx.note_output("validation.json");
    ctx.log.info("validated " + std::to_string(panel.periods()) + " periods: " +
                 std::to_string(report.unobserved_rows.size()) + " unobserved rows, " +
                 std::to_string(report.zero_cells) + " zero cells");
}

void run_fit_onefactor(RunContext& ctx) {
    const TransitionPanel panel = load_panel(ctx);
    const ClipPolicy policy(ctx.options.value("epsilon", 1e-6));
    const std::string mode = ctx.options.at("rho_mode").get<std::string>();

    ordered_json rho_extra;
    const onefactor::OneFactorFit fit = [&]() -> onefactor::OneFactorFit {
        if (mode == "search") return onefactor::calibrate_rho_variance(panel, policy);
        if (mode == "fixed")
            return onefactor::fit_onefactor(
                panel, ctx.options.at("rho_value").get<double>(), policy);
        if (mode != "basel") throw std::invalid_argument("unknown rho mode '" + mode + "'");

        const Eigen::MatrixXd avg = average_matrix(panel);
        const int live = panel.scale.live_grades();
        Eigen::VectorXd pd(live);
        if (ctx.options.value("pd", std::string()) == "history") {
            pd = avg.col(live);
        } else {
            const auto values = ctx.options.at("pd_values").get<std::vector<double>>();
            if (static_cast<int>(values.size()) != live)
                throw std::invalid_argument("--pd needs one value per live grade (" +
                                            std::to_string(live) + ")");
            pd = Eigen::Map<const Eigen::VectorXd>(values.data(), values.size());
        }
        double sum = 0.0;
        int n = 0;
        ordered_json by_grade;
        for (int i = 0; i < live; ++i) {
            if (!panel.row_ever_observed(i)) {
                by_grade[panel.scale.label(i)] = nullptr;
                continue;
            }
            const double r = onefactor::basel_rho(pd(i));
            by_grade[panel.scale.label(i)] = r;
            sum += r;
            ++n;
        }
        if (n == 0) throw std::invalid_argument("no observed grades to apply basel curve");
        rho_extra["rho_by_grade"] = std::move(by_grade);
        // The one-factor model carries a single correlation; the per-grade
        // curve values are averaged into it and reported alongside.
        return onefactor::fit_onefactor(panel, sum / n, policy);
    }();
    for (const auto& w : fit.warnings) ctx.log.warn(w);

    ordered_json doc = io::onefactor_fit_json(panel.scale, fit);
    for (auto& [k, v] : rho_extra.items()) doc["coefficients"][k] = v;
    doc["manifest"] = ctx.manifest();
    write_json_file(ctx.out_dir / "fit.json", doc);
    ctx.note_output("fit.json");

    std::vector<std::vector<std::string>> rows;
    rows.push_back({"period", "z", "objective"});
    for (std::size_t t = 0; t < fit.periods.size(); ++t)
        rows.push_back({fit.periods[t], io::format_double(fit.z_series(t)),
                        io::format_double(fit.objective_values(t))});
    io::write_csv(ctx.out_dir / "z_series.csv", rows);
    ctx.note_output("z_series.csv");
}

void run_fit_macrorisk(RunContext& ctx) {
    const TransitionPanel panel = load_panel(ctx);
    const ClipPolicy policy(ctx.options.value("epsilon", 1e-6));
    const fs::path macro_path = ctx.options.at("macro").get<std::string>();
    ctx.add_input(macro_path);
    const MacroSeries macro = io::read_macro_csv(macro_path);
    if (macro.periods != panel.period_labels())
        throw std::invalid_argument(
            "macro file periods must match the panel periods exactly");

    macrorisk::ProbitOptions popt;
    if (ctx.options.value("zero_cells", "clip") == "continuity")
        popt.zero_cells = macrorisk::ZeroCellRule::continuity_correction;
    const auto probit = macrorisk::probit_transform(panel, policy, popt);

    long masked_clipped = 0, masked_unobserved = 0;
    for (const auto& f : probit.flags) {
        masked_clipped +=
            (f.array() == static_cast<std::uint8_t>(macrorisk::ProbitFlag::clipped)).count();
        masked_unobserved +=
            (f.array() == static_cast<std::uint8_t>(macrorisk::ProbitFlag::unobserved))
                .count();
    }
    ctx.log.info("probit transform masked " + std::to_string(masked_unobserved) +
                 " unobserved-row entries and " + std::to_string(masked_clipped) +
                 " endpoint entries");

    macrorisk::FitOptions fopt;
    fopt.allow_unobserved_grades = true;
    auto fit = macrorisk::fit_regression(probit, macro, fopt);
    fit.clip_epsilon = policy.epsilon;
    for (const auto& w : fit.warnings) ctx.log.warn(w);

    ordered_json doc = io::macrorisk_fit_json(panel.scale, fit);
    doc["manifest"] = ctx.manifest();
    write_json_file(ctx.out_dir / "fit.json", doc);
    ctx.note_output("fit.json");

    std::vector<std::string> predict_warnings;
    for (int t = 0; t < panel.periods(); ++t) {
        const Eigen::MatrixXd m = macrorisk::predict_matrix(
            fit, macro.values.row(t).transpose(), &predict_warnings);
        const std::string name =
            "fitted_" + sanitize_filename(panel.observations[t].period) + ".csv";
        io::write_period_matrix_csv(ctx.out_dir / name, panel.scale, m);
        ctx.note_output(name);
    }
    for (const auto& w : predict_warnings) ctx.log.warn(w);
}

void run_forecast(RunContext& ctx) {
    const fs::path fit_path = ctx.options.at("fit").get<std::string>();
    const fs::path scenario_path = ctx.options.at("scenario").get<std::string>();
    ctx.add_input(fit_path);
    ctx.add_input(scenario_path);

    const auto [scale, fit] = io::macrorisk_fit_from_json(read_json_file(fit_path));
    const auto scenario = io::read_scenario_csv(scenario_path);
    const auto result = macrorisk::forecast_pd(fit, scenario);
    for (const auto& w : result.warnings) ctx.log.warn(w);

    std::vector<std::vector<std::string>> rows;
    rows.push_back({"period", "grade", "pd"});
    for (std::size_t t = 0; t < result.periods.size(); ++t)
        for (Eigen::Index g = 0; g < result.pd.cols(); ++g) {
            if (!fit.grades[g].active) continue;
            rows.push_back({result.periods[t], scale.label(static_cast<int>(g)),
                            io::format_double(result.pd(t, g))});
        }
    io::write_csv(ctx.out_dir / "pd_forecast.csv", rows);
    ctx.note_output("pd_forecast.csv");
}

void run_simulate(RunContext& ctx) {
    const TransitionPanel panel = load_panel(ctx);
    const auto cfg = io::simulation_config_from_json(ctx.options.at("config"));
    ctx.seed = cfg.seed;

    std::optional<MacroSeries> macro;
    if (ctx.options.contains("macro")) {
        const fs::path macro_path = ctx.options.at("macro").get<std::string>();
        ctx.add_input(macro_path);
        macro = io::read_macro_csv(macro_path);
    }
    const auto report = simlab::run_comparison(panel, macro, cfg);
    for (const auto& w : report.warnings) ctx.log.warn(w);

    io::write_comparison_report(ctx.out_dir, report, cfg);
    ctx.note_output("pd_trace.csv");
    ctx.note_output("mse_by_period.csv");
    ctx.note_output("summary.json");
}

void dispatch(RunContext& ctx) {
    fs::create_directories(ctx.out_dir);
    if (ctx.command == "estimate")
        run_estimate(ctx);
    else if (ctx.command == "fit-onefactor")
        run_fit_onefactor(ctx);
    else if (ctx.command == "fit-macrorisk")
        run_fit_macrorisk(ctx);
    else if (ctx.command == "forecast")
        run_forecast(ctx);
    else if (ctx.command == "simulate")
        run_simulate(ctx);
    else
        throw std::invalid_argument("unknown command '" + ctx.command + "'");
    ctx.finish();
}

std::optional<std::uint64_t> env_seed() {
    const char* v = std::getenv("RRL_SEED");
    if (!v || !*v) return std::nullopt;
    return std::strtoull(v, nullptr, 10);
}

}  // namespace

int run(int argc, const char* const* argv) {
    CLI::App app{"rating transition risk toolkit"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(kVersion));

    std::string out_dir = "out";
    bool strict = false;
    app.add_option("-o,--out", out_dir, "output directory")->capture_default_str();
    app.add_flag("--strict", strict, "treat warnings as errors (exit 3)");

    // shared ingestion options
    std::vector<std::string> inputs;
    std::string units = "auto";
    std::vector<std::string> grades;
    double epsilon = 1e-6;
    const auto add_panel_options = [&](CLI::App* cmd) {
        cmd->add_option("inputs", inputs,
                        "panel input: one long-format CSV or per-period matrix CSVs")
            ->required();
        cmd->add_option("--units", units, "matrix units: auto|percent|fraction")
            ->capture_default_str();
        cmd->add_option("--grades", grades,
                        "ordered grade labels (needed for non-numeric long format)")
            ->delimiter(',');
        cmd->add_option("--epsilon", epsilon, "clip width for inverse-CDF calls")
            ->capture_default_str();
    };
    const auto panel_options_json = [&]() {
        ordered_json o;
        o["inputs"] = inputs;
        o["units"] = units;
        if (!grades.empty()) o["grades"] = grades;
        o["epsilon"] = epsilon;
        return o;
    };

    auto* estimate = app.add_subcommand(
        "estimate", "empirical transition matrices plus a data-quality report");
    estimate->fallthrough();
    add_panel_options(estimate);

    auto* fit_of = app.add_subcommand(
        "fit-onefactor", "one-factor credit-cycle fit: thresholds, rho, factor series");
    fit_of->fallthrough();
    add_panel_options(fit_of);
    std::string rho_mode;
    double rho_value = 0.12;
    bool pd_from_history = false;
    std::vector<double> pd_values;
    fit_of->add_option("--rho", rho_mode, "rho source: search|basel|fixed")->required();
    fit_of->add_option("--rho-value", rho_value, "rho for --rho fixed");
    fit_of->add_flag("--pd-from-history", pd_from_history,
                     "basel curve input: historical average default column");
    fit_of->add_option("--pd", pd_values, "basel curve input: explicit PD per live grade")
        ->delimiter(',');

    auto* fit_mr = app.add_subcommand(
        "fit-macrorisk", "macro-risk regression fit on probit-transformed rates");
    fit_mr->fallthrough();
    add_panel_options(fit_mr);
    std::string macro_path;
    std::string zero_cells = "clip";
    fit_mr->add_option("--macro", macro_path, "macro series CSV")->required();
    fit_mr->add_option("--zero-cells", zero_cells,
                       "zero-tail handling: clip|continuity")
        ->capture_default_str();

    auto* forecast = app.add_subcommand("forecast", "PD forecast under a macro scenario");
    forecast->fallthrough();
    std::string fit_path, scenario_path;
    forecast->add_option("--fit", fit_path, "macro-risk fit JSON")->required();
    forecast->add_option("--scenario", scenario_path, "scenario CSV")->required();

    auto* simulate = app.add_subcommand(
        "simulate", "estimator comparison study on perturbed replicates");
    simulate->fallthrough();
    add_panel_options(simulate);
    std::string sim_macro_path, config_path;
    int replicates = -1, threads = -1, trace_replicate = -1;
    double noise_scale = -1.0;
    std::uint64_t seed_flag = 0;
    bool seed_given = false;
    simulate->add_option("--macro", sim_macro_path,
                         "macro series CSV (sets macro mode 'provided')");
    simulate->add_option("--config", config_path, "simulation config JSON");
    simulate->add_option("--replicates", replicates, "override replicate count");
    simulate->add_option("--noise-scale", noise_scale, "override perturbation scale");
    simulate->add_option("--threads", threads, "worker threads (0 = hardware)");
    simulate->add_option("--trace-replicate", trace_replicate,
                         "replicate whose PD path is traced");
    simulate->add_option("--seed", seed_flag, "override RNG seed")
        ->each([&](const std::string&) { seed_given = true; });

    auto* replay = app.add_subcommand("replay", "re-run a recorded manifest");
    replay->fallthrough();
    std::string manifest_path;
    replay->add_option("manifest", manifest_path, "run_manifest.json of a prior run")
        ->required();

    try {
        app.parse(argc, const_cast<char**>(argv));
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        RunContext ctx;
        ctx.out_dir = out_dir;

        if (replay->parsed()) {
            const ordered_json m = read_json_file(manifest_path);
            ctx.command = m.at("command").get<std::string>();
            ctx.options = m.at("options");
            for (const auto& rec : m.at("inputs")) {
                const fs::path p = rec.at("path").get<std::string>();
                const auto digest = io::file_digest(p);
                if (digest != rec.at("fnv1a64").get<std::string>())
                    throw std::runtime_error("replay: input '" + p.string() +
                                             "' no longer matches its recorded digest");
            }
            ctx.inputs.clear();  // re-recorded by the command runner
        } else if (estimate->parsed()) {
            ctx.command = "estimate";
            ctx.options = panel_options_json();
        } else if (fit_of->parsed()) {
            ctx.command = "fit-onefactor";
            ctx.options = panel_options_json();
            ctx.options["rho_mode"] = rho_mode;
            if (rho_mode == "fixed") {
                if (!fit_of->count("--rho-value"))
                    throw CLI::ValidationError("--rho fixed requires --rho-value");
                ctx.options["rho_value"] = rho_value;
            } else if (rho_mode == "basel") {
                if (!pd_values.empty())
                    ctx.options["pd_values"] = pd_values;
                else if (pd_from_history)
                    ctx.options["pd"] = "history";
                else
                    throw CLI::ValidationError(
                        "--rho basel requires --pd-from-history or --pd");
            } else if (rho_mode != "search") {
                throw CLI::ValidationError("--rho must be search, basel or fixed");
            }
        } else if (fit_mr->parsed()) {
            ctx.command = "fit-macrorisk";
            ctx.options = panel_options_json();
            ctx.options["macro"] = macro_path;
            if (zero_cells != "clip" && zero_cells != "continuity")
                throw CLI::ValidationError("--zero-cells must be clip or continuity");
            ctx.options["zero_cells"] = zero_cells;
        } else if (forecast->parsed()) {
            ctx.command = "forecast";
            ctx.options["fit"] = fit_path;
            ctx.options["scenario"] = scenario_path;
        } else if (simulate->parsed()) {
            ctx.command = "simulate";
            ctx.options = panel_options_json();
            ordered_json cfg_json;
            if (!config_path.empty()) cfg_json = read_json_file(config_path);
            // precedence: flags > RRL_SEED > config file > defaults
            if (const auto env = env_seed(); env && !seed_given) cfg_json["seed"] = *env;
            if (seed_given) cfg_json["seed"] = seed_flag;
            if (replicates >= 0) cfg_json["replicates"] = replicates;
            if (noise_scale >= 0.0) cfg_json["noise_scale"] = noise_scale;
            if (threads >= 0) cfg_json["threads"] = threads;
            if (trace_replicate >= 0) cfg_json["trace_replicate"] = trace_replicate;
            if (!sim_macro_path.empty()) {
                const std::string mode =
                    cfg_json.contains("macro") ? cfg_json["macro"].value("mode", "provided")
                                               : "provided";
                if (mode != "provided")
                    throw CLI::ValidationError(
                        "--macro conflicts with config macro mode '" + mode + "'");
                cfg_json["macro"]["mode"] = "provided";
                ctx.options["macro"] = sim_macro_path;
            }
            // normalize through the config type so the manifest records the
            // fully resolved settings
            ctx.options["config"] =
                io::simulation_config_json(io::simulation_config_from_json(cfg_json));
        }

        dispatch(ctx);

        if (strict && ctx.log.warning_count() > 0) {
            std::cerr << "error: --strict with " << ctx.log.warning_count()
                      << " warning(s)\n";
            return 3;
        }
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}

int run(const std::vector<std::string>& args) {
    std::vector<std::string> full;
    full.reserve(args.size() + 1);
    full.push_back("rrl");
    full.insert(full.end(), args.begin(), args.end());
    std::vector<const char*> argv;
    argv.reserve(full.size());
    for (const auto& a : full) argv.push_back(a.c_str());
    return run(static_cast<int>(argv.size()), argv.data());
}

}  // namespace rrl::cli
