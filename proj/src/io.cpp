#include "rrl/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

namespace rrl::io {

namespace {

using nlohmann::ordered_json;

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

double parse_double(const std::string& s, const std::string& context) {
    const std::string t = trim(s);
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc{} || ptr != t.data() + t.size())
        throw std::invalid_argument(context + ": cannot parse number '" + s + "'");
    return v;
}

double parse_count(const std::string& s, const std::string& context) {
    const double v = parse_double(s, context);
    if (v < 0.0 || v != std::floor(v))
        throw std::invalid_argument(context + ": count must be a nonnegative integer, got '" +
                                    s + "'");
    return v;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    field += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                field += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(trim(field));
            field.clear();
        } else {
            field += c;
        }
    }
    fields.push_back(trim(field));
    return fields;
}

bool all_numeric(const std::vector<std::string>& labels) {
    for (const auto& l : labels) {
        if (l.empty()) return false;
        long v = 0;
        const auto [ptr, ec] = std::from_chars(l.data(), l.data() + l.size(), v);
        if (ec != std::errc{} || ptr != l.data() + l.size()) return false;
    }
    return true;
}

}  // namespace

std::string format_double(double v) {
    char buf[40];
    const auto [ptr, ec] =
        std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 12);
    if (ec != std::errc{}) throw std::runtime_error("format_double failed");
    return std::string(buf, ptr);
}

std::string file_digest(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
    std::uint64_t h = 0xcbf29ce484222325ULL;
    char c;
    while (in.get(c)) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        rows.push_back(split_csv_line(line));
    }
    return rows;
}

void write_csv(const std::filesystem::path& path,
               const std::vector<std::vector<std::string>>& rows) {
    std::ofstream out(path, std::ios::binary);  // binary: no CRLF translation
    if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
    for (const auto& row : rows) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (i) out << ',';
            out << row[i];
        }
        out << '\n';
    }
}

bool looks_like_long_panel(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) return false;
    std::string line;
    if (!std::getline(in, line)) return false;
    const auto header = split_csv_line(line);
    return header.size() == 4 && header[0] == "period" && header[1] == "from" &&
           header[2] == "to" && header[3] == "count";
}

TransitionPanel read_long_panel(const std::filesystem::path& path,
                                const std::vector<std::string>& grades) {
    const auto rows = read_csv(path);
    if (rows.empty()) throw std::invalid_argument("empty panel file '" + path.string() + "'");
    const auto& header = rows.front();
    if (header.size() != 4 || header[0] != "period" || header[1] != "from" ||
        header[2] != "to" || header[3] != "count")
        throw std::invalid_argument("long panel '" + path.string() +
                                    "': header must be period,from,to,count");
    if (rows.size() < 2)
        throw std::invalid_argument("panel file '" + path.string() + "' has no data rows");

    std::vector<std::string> labels = grades;
    if (labels.empty()) {
        std::set<std::string> seen;
        for (std::size_t r = 1; r < rows.size(); ++r) {
            if (rows[r].size() != 4)
                throw std::invalid_argument("long panel: malformed row " + std::to_string(r + 1));
            seen.insert(rows[r][1]);
            seen.insert(rows[r][2]);
        }
        labels.assign(seen.begin(), seen.end());
        if (all_numeric(labels)) {
            std::sort(labels.begin(), labels.end(), [](const auto& a, const auto& b) {
                return std::stol(a) < std::stol(b);
            });
        } else {
            throw std::invalid_argument(
                "long panel: grade order cannot be inferred from non-numeric labels; "
                "pass the ordered grade list explicitly");
        }
    }
    const RatingScale scale(labels);
    const int live = scale.live_grades();
    const int cols = scale.grade_count();

    // Periods keep their order of first appearance.
    std::vector<std::string> period_order;
    std::map<std::string, Eigen::MatrixXd> counts;
    for (std::size_t r = 1; r < rows.size(); ++r) {
        const auto& row = rows[r];
        if (row.size() != 4)
            throw std::invalid_argument("long panel: malformed row " + std::to_string(r + 1));
        const auto& period = row[0];
        const int from = scale.index_of(row[1]);
        const int to = scale.index_of(row[2]);
        if (from == scale.default_index())
            throw std::invalid_argument("long panel: default grade '" + row[1] +
                                        "' cannot be an initial grade (row " +
                                        std::to_string(r + 1) + ")");
        auto [it, inserted] = counts.try_emplace(period, Eigen::MatrixXd::Zero(live, cols));
        if (inserted) period_order.push_back(period);
        it->second(from, to) += parse_count(row[3], "long panel row " + std::to_string(r + 1));
    }

    std::vector<TransitionObservation> observations;
    observations.reserve(period_order.size());
    for (const auto& period : period_order)
        observations.push_back(estimate_cohort(counts.at(period), period));
    return TransitionPanel(scale, std::move(observations));
}

namespace {

Units detect_units(const std::vector<double>& row_sums) {
    int near_one = 0, near_hundred = 0;
    for (double s : row_sums) {
        if (s == 0.0) continue;
        if (s > 0.5 && s < 2.0) ++near_one;
        if (s > 50.0 && s < 200.0) ++near_hundred;
    }
    if (near_one > 0 && near_hundred == 0) return Units::fraction;
    if (near_hundred > 0 && near_one == 0) return Units::percent;
    throw std::invalid_argument(
        "cannot detect units: row sums sit near neither 1 nor 100; pass --units");
}

}  // namespace

TransitionPanel read_period_matrix_files(const std::vector<std::filesystem::path>& paths,
                                         Units units) {
    if (paths.empty()) throw std::invalid_argument("no period matrix files given");

    std::optional<RatingScale> scale;
    std::vector<TransitionObservation> observations;
    for (const auto& path : paths) {
        const auto rows = read_csv(path);
        if (rows.size() < 2)
            throw std::invalid_argument("period matrix '" + path.string() +
                                        "' needs a header and at least one row");
        const auto& header = rows.front();
        if (header.size() < 3 || header[0] != "from")
            throw std::invalid_argument("period matrix '" + path.string() +
                                        "': header must be from,<grade...>");
        std::vector<std::string> labels(header.begin() + 1, header.end());
        if (!scale) {
            scale.emplace(labels);
        } else if (scale->labels() != labels) {
            throw std::invalid_argument("period matrix '" + path.string() +
                                        "': grade columns differ from earlier files");
        }
        const int live = scale->live_grades();
        const int cols = scale->grade_count();

        Eigen::MatrixXd values = Eigen::MatrixXd::Zero(live, cols);
        std::vector<double> row_sums(live, 0.0);
        std::set<int> filled;
        for (std::size_t r = 1; r < rows.size(); ++r) {
            const auto& row = rows[r];
            if (static_cast<int>(row.size()) != cols + 1)
                throw std::invalid_argument("period matrix '" + path.string() + "' row " +
                                            std::to_string(r + 1) + ": expected " +
                                            std::to_string(cols + 1) + " fields");
            const int i = scale->index_of(row[0]);
            if (i == scale->default_index())
                throw std::invalid_argument("period matrix '" + path.string() +
                                            "': default grade has no outgoing row");
            if (!filled.insert(i).second)
                throw std::invalid_argument("period matrix '" + path.string() +
                                            "': duplicate row for grade '" + row[0] + "'");
            for (int j = 0; j < cols; ++j)
                values(i, j) = parse_double(row[j + 1], "period matrix '" + path.string() +
                                                            "' row " + std::to_string(r + 1));
            row_sums[i] = values.row(i).sum();
        }

        Units effective = units;
        if (effective == Units::auto_detect) effective = detect_units(row_sums);
        if (effective == Units::percent) values /= 100.0;
        if ((values.array() < 0.0).any() || (values.array() > 1.0).any())
            throw std::invalid_argument("period matrix '" + path.string() +
                                        "': entries outside [0,1] after unit scaling");

        observations.push_back(
            TransitionObservation::from_rates(path.stem().string(), values));
    }
    return TransitionPanel(*scale, std::move(observations));
}

void write_period_matrix_csv(const std::filesystem::path& path, const RatingScale& scale,
                             const Eigen::MatrixXd& matrix) {
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> header{"from"};
    for (const auto& l : scale.labels()) header.push_back(l);
    rows.push_back(std::move(header));
    for (int i = 0; i < scale.live_grades(); ++i) {
        std::vector<std::string> row{scale.label(i)};
        for (int j = 0; j < scale.grade_count(); ++j)
            row.push_back(format_double(matrix(i, j)));
        rows.push_back(std::move(row));
    }
    write_csv(path, rows);
}

MacroSeries read_macro_csv(const std::filesystem::path& path) {
    const auto rows = read_csv(path);
    if (rows.size() < 2)
        throw std::invalid_argument("macro file '" + path.string() +
                                    "' needs a header and at least one row");
    const auto& header = rows.front();
    if (header.size() < 2 || header[0] != "period")
        throw std::invalid_argument("macro file '" + path.string() +
                                    "': header must be period,<variable...>");
    std::vector<std::string> names(header.begin() + 1, header.end());
    const int n = static_cast<int>(names.size());

    std::vector<std::string> periods;
    Eigen::MatrixXd values(rows.size() - 1, n);
    for (std::size_t r = 1; r < rows.size(); ++r) {
        const auto& row = rows[r];
        if (static_cast<int>(row.size()) != n + 1)
            throw std::invalid_argument("macro file '" + path.string() + "' row " +
                                        std::to_string(r + 1) + ": expected " +
                                        std::to_string(n + 1) + " fields");
        periods.push_back(row[0]);
        for (int v = 0; v < n; ++v)
            values(r - 1, v) =
                parse_double(row[v + 1], "macro file row " + std::to_string(r + 1));
    }
    return MacroSeries(std::move(names), std::move(periods), std::move(values));
}

macrorisk::MacroScenario read_scenario_csv(const std::filesystem::path& path) {
    MacroSeries series = read_macro_csv(path);
    macrorisk::MacroScenario scenario;
    scenario.periods = std::move(series.periods);
    scenario.variable_names = std::move(series.variable_names);
    scenario.values = std::move(series.values);
    return scenario;
}

void write_macro_csv(const std::filesystem::path& path, const MacroSeries& macro) {
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> header{"period"};
    for (const auto& n : macro.variable_names) header.push_back(n);
    rows.push_back(std::move(header));
    for (std::size_t t = 0; t < macro.periods.size(); ++t) {
        std::vector<std::string> row{macro.periods[t]};
        for (int v = 0; v < macro.variable_count(); ++v)
            row.push_back(format_double(macro.values(t, v)));
        rows.push_back(std::move(row));
    }
    write_csv(path, rows);
}

void write_long_panel_csv(const std::filesystem::path& path, const TransitionPanel& panel) {
    std::vector<std::vector<std::string>> rows;
    rows.push_back({"period", "from", "to", "count"});
    for (const auto& obs : panel.observations) {
        if (!obs.has_counts())
            throw std::invalid_argument(
                "write_long_panel_csv: observation '" + obs.period +
                "' carries rates, not counts; long format needs counts");
        for (int i = 0; i < panel.scale.live_grades(); ++i)
            for (int j = 0; j < panel.scale.grade_count(); ++j) {
                if (obs.counts(i, j) == 0.0) continue;
                rows.push_back({obs.period, panel.scale.label(i), panel.scale.label(j),
                                format_double(obs.counts(i, j))});
            }
    }
    write_csv(path, rows);
}

namespace {

ordered_json scale_json(const RatingScale& scale) {
    ordered_json j;
    j["labels"] = scale.labels();
    j["default"] = scale.label(scale.default_index());
    return j;
}

}  // namespace

ordered_json onefactor_fit_json(const RatingScale& scale,
                                const onefactor::OneFactorFit& fit) {
    ordered_json doc;
    doc["model"] = "onefactor";
    doc["scale"] = scale_json(scale);
    ordered_json coeffs;
    coeffs["rho"] = fit.rho;
    ordered_json z = ordered_json::array();
    for (std::size_t t = 0; t < fit.periods.size(); ++t) {
        ordered_json entry;
        entry["period"] = fit.periods[t];
        entry["z"] = fit.z_series(t);
        entry["objective"] = fit.objective_values(t);
        z.push_back(entry);
    }
    coeffs["z_series"] = std::move(z);
    doc["coefficients"] = std::move(coeffs);
    ordered_json thresholds;
    for (int i = 0; i < fit.thresholds.live_grades(); ++i) {
        if (fit.thresholds.active(i))
            thresholds[scale.label(i)] = fit.thresholds.cuts(i);
        else
            thresholds[scale.label(i)] = nullptr;
    }
    doc["thresholds"] = std::move(thresholds);
    doc["warnings"] = fit.warnings;
    return doc;
}

ordered_json macrorisk_fit_json(const RatingScale& scale,
                                const macrorisk::MacroRiskFit& fit) {
    ordered_json doc;
    doc["model"] = "macrorisk";
    doc["scale"] = scale_json(scale);
    ordered_json coeffs;
    coeffs["variables"] = fit.variable_names;
    coeffs["clip_epsilon"] = fit.clip_epsilon;
    ordered_json grades;
    ordered_json thresholds;
    for (std::size_t i = 0; i < fit.grades.size(); ++i) {
        const auto& g = fit.grades[i];
        const auto& label = scale.label(static_cast<int>(i));
        if (!g.active) {
            grades[label] = nullptr;
            thresholds[label] = nullptr;
            continue;
        }
        ordered_json gj;
        gj["beta"] = std::vector<double>(g.beta.begin(), g.beta.end());
        gj["beta_se"] = std::vector<double>(g.beta_se.begin(), g.beta_se.end());
        gj["intercept_se"] =
            std::vector<double>(g.intercept_se.begin(), g.intercept_se.end());
        gj["residual_variance"] = g.residual_variance;
        grades[label] = std::move(gj);
        thresholds[label] =
            std::vector<double>(g.intercepts.begin(), g.intercepts.end());
    }
    coeffs["grades"] = std::move(grades);
    doc["coefficients"] = std::move(coeffs);
    doc["thresholds"] = std::move(thresholds);
    doc["warnings"] = fit.warnings;
    return doc;
}

std::pair<RatingScale, macrorisk::MacroRiskFit> macrorisk_fit_from_json(
    const ordered_json& doc) {
    if (doc.value("model", "") != "macrorisk")
        throw std::invalid_argument("fit file: expected model 'macrorisk', got '" +
                                    doc.value("model", "<missing>") + "'");
    RatingScale scale(doc.at("scale").at("labels").get<std::vector<std::string>>());
    macrorisk::MacroRiskFit fit;
    const auto& coeffs = doc.at("coefficients");
    fit.variable_names = coeffs.at("variables").get<std::vector<std::string>>();
    fit.clip_epsilon = coeffs.value("clip_epsilon", 1e-6);
    fit.grades.resize(scale.live_grades());
    for (int i = 0; i < scale.live_grades(); ++i) {
        const auto& label = scale.label(i);
        const auto& gj = coeffs.at("grades").at(label);
        if (gj.is_null()) continue;
        auto& g = fit.grades[i];
        g.active = true;
        const auto beta = gj.at("beta").get<std::vector<double>>();
        g.beta = Eigen::Map<const Eigen::VectorXd>(beta.data(), beta.size());
        const auto beta_se = gj.at("beta_se").get<std::vector<double>>();
        g.beta_se = Eigen::Map<const Eigen::VectorXd>(beta_se.data(), beta_se.size());
        const auto ise = gj.at("intercept_se").get<std::vector<double>>();
        g.intercept_se = Eigen::Map<const Eigen::VectorXd>(ise.data(), ise.size());
        g.residual_variance = gj.value("residual_variance", 0.0);
        const auto cuts = doc.at("thresholds").at(label).get<std::vector<double>>();
        g.intercepts = Eigen::Map<const Eigen::VectorXd>(cuts.data(), cuts.size());
    }
    if (doc.contains("warnings"))
        fit.warnings = doc.at("warnings").get<std::vector<std::string>>();
    return {std::move(scale), std::move(fit)};
}

namespace {

simlab::RhoSource rho_source_from_string(const std::string& s) {
    if (s == "basel") return simlab::RhoSource::basel;
    if (s == "variance_search") return simlab::RhoSource::variance_search;
    if (s == "fixed") return simlab::RhoSource::fixed;
    throw std::invalid_argument("unknown rho_source '" + s + "'");
}

std::string rho_source_to_string(simlab::RhoSource s) {
    switch (s) {
        case simlab::RhoSource::basel: return "basel";
        case simlab::RhoSource::variance_search: return "variance_search";
        case simlab::RhoSource::fixed: return "fixed";
    }
    return "basel";
}

}  // namespace

simlab::SimulationConfig simulation_config_from_json(const ordered_json& doc) {
    simlab::SimulationConfig cfg;
    cfg.noise_scale = doc.value("noise_scale", cfg.noise_scale);
    cfg.replicates = doc.value("replicates", cfg.replicates);
    cfg.seed = doc.value("seed", cfg.seed);
    if (doc.contains("rho_source"))
        cfg.rho_source = rho_source_from_string(doc.at("rho_source").get<std::string>());
    cfg.fixed_rho = doc.value("fixed_rho", cfg.fixed_rho);
    if (doc.contains("count_sampling")) {
        const auto s = doc.at("count_sampling").get<std::string>();
        if (s == "deterministic")
            cfg.count_sampling = simlab::CountSampling::deterministic;
        else if (s == "multinomial")
            cfg.count_sampling = simlab::CountSampling::multinomial;
        else
            throw std::invalid_argument("unknown count_sampling '" + s + "'");
    }
    if (doc.contains("clip_epsilon")) cfg.clip = ClipPolicy(doc.at("clip_epsilon").get<double>());
    if (doc.contains("macro")) {
        const auto& m = doc.at("macro");
        const auto mode = m.value("mode", std::string("readout"));
        if (mode == "readout")
            cfg.macro_mode = simlab::MacroMode::readout;
        else if (mode == "independent")
            cfg.macro_mode = simlab::MacroMode::independent;
        else if (mode == "provided")
            cfg.macro_mode = simlab::MacroMode::provided;
        else
            throw std::invalid_argument("unknown macro mode '" + mode + "'");
        if (m.contains("variables")) {
            cfg.macro_variables.clear();
            for (const auto& v : m.at("variables")) {
                simlab::MacroVariableSpec spec;
                spec.name = v.at("name").get<std::string>();
                spec.loading = v.value("loading", spec.loading);
                spec.noise_std = v.value("noise_std", spec.noise_std);
                cfg.macro_variables.push_back(std::move(spec));
            }
        }
    }
    cfg.trace_replicate = doc.value("trace_replicate", cfg.trace_replicate);
    cfg.threads = doc.value("threads", cfg.threads);
    cfg.validate();
    return cfg;
}

ordered_json simulation_config_json(const simlab::SimulationConfig& cfg) {
    ordered_json doc;
    doc["noise_scale"] = cfg.noise_scale;
    doc["replicates"] = cfg.replicates;
    doc["seed"] = cfg.seed;
    doc["rho_source"] = rho_source_to_string(cfg.rho_source);
    if (cfg.rho_source == simlab::RhoSource::fixed) doc["fixed_rho"] = cfg.fixed_rho;
    doc["count_sampling"] = cfg.count_sampling == simlab::CountSampling::deterministic
                                ? "deterministic"
                                : "multinomial";
    doc["clip_epsilon"] = cfg.clip.epsilon;
    ordered_json macro;
    switch (cfg.macro_mode) {
        case simlab::MacroMode::readout: macro["mode"] = "readout"; break;
        case simlab::MacroMode::independent: macro["mode"] = "independent"; break;
        case simlab::MacroMode::provided: macro["mode"] = "provided"; break;
    }
    if (cfg.macro_mode != simlab::MacroMode::provided) {
        ordered_json vars = ordered_json::array();
        for (const auto& v : cfg.macro_variables) {
            ordered_json vj;
            vj["name"] = v.name;
            vj["loading"] = v.loading;
            vj["noise_std"] = v.noise_std;
            vars.push_back(std::move(vj));
        }
        macro["variables"] = std::move(vars);
    }
    doc["macro"] = std::move(macro);
    doc["trace_replicate"] = cfg.trace_replicate;
    // threads is an execution detail: results are thread-count invariant, so
    // the echoed config (and with it every report file) stays byte-identical
    // across serial and parallel runs
    return doc;
}

void write_comparison_report(const std::filesystem::path& out_dir,
                             const simlab::ComparisonReport& report,
                             const simlab::SimulationConfig& cfg) {
    {
        std::vector<std::vector<std::string>> rows;
        rows.push_back({"period", "grade", "pd_true", "pd_onefactor", "pd_new"});
        for (std::size_t t = 0; t < report.periods.size(); ++t)
            for (std::size_t g = 0; g < report.grades.size(); ++g)
                rows.push_back({report.periods[t], std::to_string(report.grades[g]),
                                format_double(report.pd_true(t, g)),
                                format_double(report.trace_onefactor(t, g)),
                                format_double(report.trace_new(t, g))});
        write_csv(out_dir / "pd_trace.csv", rows);
    }
    {
        std::vector<std::vector<std::string>> rows;
        rows.push_back({"period", "grade", "mse_onefactor", "mse_new"});
        for (std::size_t t = 0; t < report.periods.size(); ++t)
            for (std::size_t g = 0; g < report.grades.size(); ++g)
                rows.push_back({report.periods[t], std::to_string(report.grades[g]),
                                format_double(report.mse_onefactor(t, g)),
                                format_double(report.mse_new(t, g))});
        write_csv(out_dir / "mse_by_period.csv", rows);
    }
    {
        ordered_json summary;
        summary["config"] = simulation_config_json(cfg);
        summary["replicates_run"] = report.replicates_run;
        summary["replicates_failed"] = report.replicates_failed;
        ordered_json per_grade = ordered_json::array();
        for (std::size_t g = 0; g < report.grades.size(); ++g) {
            ordered_json gj;
            gj["grade"] = report.grades[g];
            gj["mean_mse_onefactor"] = report.mse_onefactor.col(g).mean();
            gj["mean_mse_new"] = report.mse_new.col(g).mean();
            per_grade.push_back(std::move(gj));
        }
        summary["mean_mse_by_grade"] = std::move(per_grade);
        summary["warnings"] = report.warnings;
        std::ofstream out(out_dir / "summary.json", std::ios::binary);
        out << summary.dump(2) << '\n';
    }
}

}  // namespace rrl::io
