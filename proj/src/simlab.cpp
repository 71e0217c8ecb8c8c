#include "rrl/simlab.hpp"

#include <cmath>
#include <stdexcept>
#include <thread>

#include "rrl/random.hpp"

namespace rrl::simlab {

namespace {

// Stream purpose tags; distinct tags separate the key spaces.
constexpr std::uint64_t kPerturbationTag = 1;
constexpr std::uint64_t kMacroTag = 2;
constexpr std::uint64_t kSyntheticTag = 3;

}  // namespace

std::vector<MacroVariableSpec> SimulationConfig::default_macro_variables() {
    return {{"m1", 1.0, 0.20}, {"m2", -0.70, 0.25}, {"m3", 0.50, 0.30}};
}

void SimulationConfig::validate() const {
    if (!(noise_scale >= 0.0))
        throw std::invalid_argument("SimulationConfig: noise_scale must be >= 0");
    if (replicates < 1)
        throw std::invalid_argument("SimulationConfig: replicates must be >= 1");
    if (rho_source == RhoSource::fixed && !(fixed_rho > 0.0 && fixed_rho < 1.0))
        throw std::invalid_argument("SimulationConfig: fixed_rho must lie in (0,1)");
    if (macro_mode != MacroMode::provided && macro_variables.empty())
        throw std::invalid_argument("SimulationConfig: no macro variables configured");
    if (trace_replicate < 0 || trace_replicate >= replicates)
        throw std::invalid_argument("SimulationConfig: trace_replicate out of range");
}

TruthSet make_truth(const TransitionPanel& panel, const SimulationConfig& cfg) {
    cfg.validate();
    const int live = panel.scale.live_grades();

    const Eigen::MatrixXd avg = average_matrix(panel);
    onefactor::ThresholdSet thresholds = onefactor::calibrate_thresholds(avg, cfg.clip);

    double rho = 0.0;
    switch (cfg.rho_source) {
        case RhoSource::fixed:
            rho = cfg.fixed_rho;
            break;
        case RhoSource::variance_search:
            rho = onefactor::calibrate_rho_variance(panel, cfg.clip).rho;
            break;
        case RhoSource::basel: {
            // Basel curve evaluated at the historical average default rate of
            // each live grade, averaged into the model's single correlation.
            double sum = 0.0;
            int n = 0;
            for (int i = 0; i < live; ++i) {
                if (!thresholds.active(i)) continue;
                sum += onefactor::basel_rho(avg(i, live));
                ++n;
            }
            if (n == 0) throw std::invalid_argument("make_truth: no active grades");
            rho = sum / n;
            break;
        }
    }

    const int t_count = panel.periods();
    TruthSet truth{panel.scale,
                   std::move(thresholds),
                   rho,
                   panel.period_labels(),
                   Eigen::VectorXd(t_count),
                   {},
                   Eigen::MatrixXd::Zero(t_count, live),
                   Eigen::MatrixXd::Zero(t_count, live),
                   std::vector<bool>(live, false)};
    for (int i = 0; i < live; ++i) truth.grade_active[i] = truth.thresholds.active(i);

    truth.matrices.reserve(t_count);
    for (int t = 0; t < t_count; ++t) {
        const auto& obs = panel.observations[t];
        truth.z(t) = onefactor::extract_z(obs, truth.thresholds, rho, cfg.clip).z;
        truth.matrices.push_back(onefactor::conditional_matrix(truth.thresholds, rho,
                                                               truth.z(t)));
        truth.pd.row(t) = onefactor::pd_from_matrix(truth.matrices.back()).transpose();
        truth.row_totals.row(t) = obs.row_totals.transpose();
    }
    return truth;
}

TransitionPanel generate_replicate(const TruthSet& truth, const SimulationConfig& cfg,
                                   int replicate_index) {
    const int live = truth.scale.live_grades();
    const int cols = truth.scale.grade_count();
    std::vector<TransitionObservation> observations;
    observations.reserve(truth.periods.size());

    for (std::size_t t = 0; t < truth.periods.size(); ++t) {
        RandomStream stream(RandomStream::key_of(cfg.seed, kPerturbationTag,
                                                 static_cast<std::uint64_t>(replicate_index),
                                                 static_cast<std::uint64_t>(t)));
        const double z_jittered = truth.z(static_cast<Eigen::Index>(t)) +
                                  cfg.noise_scale * stream.normal();
        const Eigen::MatrixXd matrix =
            onefactor::conditional_matrix(truth.thresholds, truth.rho, z_jittered);

        if (cfg.count_sampling == CountSampling::multinomial) {
            Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(live, cols);
            for (int i = 0; i < live; ++i) {
                const long n = std::lround(truth.row_totals(t, i));
                if (!truth.grade_active[i] || n < 1) continue;
                // CDF walk per trial; exact and stream-deterministic.
                Eigen::VectorXd cdf(cols);
                double acc = 0.0;
                for (int j = 0; j < cols; ++j) {
                    acc += matrix(i, j);
                    cdf(j) = acc;
                }
                cdf(cols - 1) = 1.0;
                for (long trial = 0; trial < n; ++trial) {
                    const double u = stream.uniform();
                    int j = 0;
                    while (u > cdf(j)) ++j;
                    counts(i, j) += 1.0;
                }
            }
            auto obs = estimate_cohort(counts, truth.periods[t]);
            observations.push_back(std::move(obs));
        } else {
            Eigen::VectorXd totals = truth.row_totals.row(t).transpose();
            observations.push_back(
                TransitionObservation::from_rates(truth.periods[t], matrix, totals));
        }
    }
    return TransitionPanel(truth.scale, std::move(observations));
}

MacroSeries synthesize_macro(const TruthSet& truth, const SimulationConfig& cfg) {
    if (cfg.macro_mode == MacroMode::provided)
        throw std::logic_error("synthesize_macro: config expects a provided series");
    const int t_count = static_cast<int>(truth.periods.size());
    const int n_vars = static_cast<int>(cfg.macro_variables.size());

    std::vector<std::string> names;
    names.reserve(n_vars);
    Eigen::MatrixXd values(t_count, n_vars);
    for (int v = 0; v < n_vars; ++v) {
        const auto& spec = cfg.macro_variables[v];
        names.push_back(spec.name);
        for (int t = 0; t < t_count; ++t) {
            RandomStream stream(RandomStream::key_of(cfg.seed, kMacroTag,
                                                     static_cast<std::uint64_t>(v),
                                                     static_cast<std::uint64_t>(t)));
            const double noise = spec.noise_std * stream.normal();
            values(t, v) = (cfg.macro_mode == MacroMode::readout)
                               ? spec.loading * truth.z(t) + noise
                               : spec.loading * stream.normal() + noise;
        }
    }
    return MacroSeries(std::move(names), truth.periods, std::move(values));
}

EstimateBothResult estimate_both(const TransitionPanel& replicate,
                                 const onefactor::ThresholdSet& thresholds, double rho,
                                 const MacroSeries& macro, const ClipPolicy& policy) {
    if (macro.periods != replicate.period_labels())
        throw std::invalid_argument(
            "estimate_both: macro series must cover exactly the replicate periods");

    const int t_count = replicate.periods();
    const int live = replicate.scale.live_grades();

    EstimateBothResult result;
    result.pd_onefactor = Eigen::MatrixXd::Zero(t_count, live);
    result.pd_new = Eigen::MatrixXd::Zero(t_count, live);

    // One-factor route: per-period factor extraction, then matrix rebuild.
    for (int t = 0; t < t_count; ++t) {
        const auto ext =
            onefactor::extract_z(replicate.observations[t], thresholds, rho, policy);
        const Eigen::MatrixXd m = onefactor::conditional_matrix(thresholds, rho, ext.z);
        result.pd_onefactor.row(t) = onefactor::pd_from_matrix(m).transpose();
    }

    // Macro-risk route: probit panel, pooled regression, per-period
    // reconstruction at the observed macro values.
    const auto probit = macrorisk::probit_transform(replicate, policy);
    macrorisk::FitOptions fit_options;
    fit_options.allow_unobserved_grades = true;
    const auto fit = macrorisk::fit_regression(probit, macro, fit_options);
    for (int t = 0; t < t_count; ++t) {
        const Eigen::MatrixXd m = macrorisk::predict_matrix(
            fit, macro.values.row(t).transpose(), &result.warnings);
        result.pd_new.row(t) = onefactor::pd_from_matrix(m).transpose();
    }
    for (const auto& w : fit.warnings) result.warnings.push_back(w);
    return result;
}

ComparisonReport run_comparison(const TransitionPanel& panel,
                                const std::optional<MacroSeries>& macro,
                                const SimulationConfig& cfg) {
    cfg.validate();
    if ((cfg.macro_mode == MacroMode::provided) != macro.has_value())
        throw std::invalid_argument(
            "run_comparison: a macro series is required exactly when macro_mode is "
            "'provided'");

    const TruthSet truth = make_truth(panel, cfg);
    const MacroSeries macro_series =
        macro.has_value() ? *macro : synthesize_macro(truth, cfg);

    const int t_count = static_cast<int>(truth.periods.size());
    const int live = truth.scale.live_grades();
    const int r_count = cfg.replicates;

    struct Slot {
        Eigen::MatrixXd sq_onefactor;
        Eigen::MatrixXd sq_new;
        Eigen::MatrixXd trace_onefactor;
        Eigen::MatrixXd trace_new;
        bool failed = false;
        std::string failure;
        std::vector<std::string> warnings;
    };
    std::vector<Slot> slots(r_count);

    const auto run_one = [&](int k) {
        Slot& slot = slots[k];
        try {
            const TransitionPanel replicate = generate_replicate(truth, cfg, k);
            auto est = estimate_both(replicate, truth.thresholds, truth.rho, macro_series,
                                     cfg.clip);
            slot.sq_onefactor = (est.pd_onefactor - truth.pd).array().square();
            slot.sq_new = (est.pd_new - truth.pd).array().square();
            if (k == cfg.trace_replicate) {
                slot.trace_onefactor = std::move(est.pd_onefactor);
                slot.trace_new = std::move(est.pd_new);
            }
            slot.warnings = std::move(est.warnings);
        } catch (const std::exception& e) {
            slot.failed = true;
            slot.failure = e.what();
        }
    };

    int threads = cfg.threads > 0 ? cfg.threads
                                  : static_cast<int>(std::thread::hardware_concurrency());
    if (threads < 1) threads = 1;
    if (threads == 1 || r_count == 1) {
        for (int k = 0; k < r_count; ++k) run_one(k);
    } else {
        std::vector<std::thread> pool;
        pool.reserve(threads);
        for (int w = 0; w < threads; ++w)
            pool.emplace_back([&, w] {
                for (int k = w; k < r_count; k += threads) run_one(k);
            });
        for (auto& th : pool) th.join();
    }

    // Scored grades: active ones only.
    std::vector<int> grades;
    for (int i = 0; i < live; ++i)
        if (truth.grade_active[i]) grades.push_back(i + 1);
    const int g_count = static_cast<int>(grades.size());

    ComparisonReport report;
    report.periods = truth.periods;
    report.grades = grades;
    report.replicates_run = r_count;

    Eigen::MatrixXd acc_z = Eigen::MatrixXd::Zero(t_count, live);
    Eigen::MatrixXd acc_new = Eigen::MatrixXd::Zero(t_count, live);
    int ok = 0;
    // Reduction in replicate order keeps the report bit-identical whatever
    // the thread count was.
    for (int k = 0; k < r_count; ++k) {
        auto& slot = slots[k];
        if (slot.failed) {
            ++report.replicates_failed;
            report.warnings.push_back("replicate " + std::to_string(k) +
                                      " failed: " + slot.failure);
            continue;
        }
        acc_z += slot.sq_onefactor;
        acc_new += slot.sq_new;
        ++ok;
        if (report.warnings.size() < 50)
            for (const auto& w : slot.warnings)
                report.warnings.push_back("replicate " + std::to_string(k) + ": " + w);
    }
    if (ok == 0) throw std::runtime_error("run_comparison: every replicate failed");
    acc_z /= static_cast<double>(ok);
    acc_new /= static_cast<double>(ok);

    const auto select_grades = [&](const Eigen::MatrixXd& full) {
        Eigen::MatrixXd out(t_count, g_count);
        for (int g = 0; g < g_count; ++g) out.col(g) = full.col(grades[g] - 1);
        return out;
    };
    report.pd_true = select_grades(truth.pd);
    report.mse_onefactor = select_grades(acc_z);
    report.mse_new = select_grades(acc_new);

    const Slot& trace = slots[cfg.trace_replicate];
    if (!trace.failed) {
        report.trace_onefactor = select_grades(trace.trace_onefactor);
        report.trace_new = select_grades(trace.trace_new);
    } else {
        report.trace_onefactor = Eigen::MatrixXd::Zero(t_count, g_count);
        report.trace_new = Eigen::MatrixXd::Zero(t_count, g_count);
        report.warnings.push_back("trace replicate failed; PD trace left at zero");
    }
    return report;
}

Eigen::MatrixXd synthetic_base_matrix(int grade_count) {
    if (grade_count < 3)
        throw std::invalid_argument("synthetic_base_matrix: need at least 3 grades");
    const int live = grade_count - 1;
    Eigen::MatrixXd base(live, grade_count);

    // Default rates rise roughly geometrically toward the worst grade,
    // spanning investment-grade (bps) to deeply speculative (double digits).
    Eigen::VectorXd pd(live);
    for (int i = 0; i < live; ++i) {
        const double frac = live > 1 ? static_cast<double>(i) / (live - 1) : 0.0;
        pd(i) = 2e-4 * std::pow(900.0, frac);  // 0.02% .. 18%
    }
    constexpr double decay = 1.6;  // migration mass falls off with distance
    for (int i = 0; i < live; ++i) {
        Eigen::VectorXd w(live);
        for (int j = 0; j < live; ++j) w(j) = std::exp(-decay * std::abs(j - i));
        w *= (1.0 - pd(i)) / w.sum();
        base.row(i).head(live) = w.transpose();
        base(i, live) = pd(i);
    }
    return base;
}

TransitionPanel synthetic_panel(const SyntheticPanelSpec& spec) {
    if (spec.periods < 1)
        throw std::invalid_argument("synthetic_panel: need at least one period");
    const RatingScale scale = RatingScale::numbered(spec.grade_count);
    const auto thresholds =
        onefactor::calibrate_thresholds(synthetic_base_matrix(spec.grade_count));

    Eigen::VectorXd z(spec.periods);
    for (int t = 0; t < spec.periods; ++t) {
        RandomStream stream(RandomStream::key_of(spec.seed, kSyntheticTag, 0,
                                                 static_cast<std::uint64_t>(t)));
        z(t) = stream.normal();
    }
    if (spec.standardize_z && spec.periods > 1) {
        const double mean = z.mean();
        const double sd = std::sqrt((z.array() - mean).square().sum() / (z.size() - 1));
        if (sd > 0.0) z = (z.array() - mean) / sd + mean;
    }

    const int live = scale.live_grades();
    const int cols = scale.grade_count();
    std::vector<TransitionObservation> observations;
    observations.reserve(spec.periods);
    for (int t = 0; t < spec.periods; ++t) {
        // Quarterly-style labels purely for readability.
        const std::string period =
            std::to_string(1990 + t / 4) + "Q" + std::to_string(t % 4 + 1);
        const Eigen::MatrixXd m =
            onefactor::conditional_matrix(thresholds, spec.rho, z(t));
        if (spec.multinomial) {
            RandomStream stream(RandomStream::key_of(spec.seed, kSyntheticTag, 1,
                                                     static_cast<std::uint64_t>(t)));
            Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(live, cols);
            const long n = std::lround(spec.cohort_size);
            for (int i = 0; i < live; ++i) {
                Eigen::VectorXd cdf(cols);
                double acc = 0.0;
                for (int j = 0; j < cols; ++j) {
                    acc += m(i, j);
                    cdf(j) = acc;
                }
                cdf(cols - 1) = 1.0;
                for (long trial = 0; trial < n; ++trial) {
                    const double u = stream.uniform();
                    int j = 0;
                    while (u > cdf(j)) ++j;
                    counts(i, j) += 1.0;
                }
            }
            observations.push_back(estimate_cohort(counts, period));
        } else {
            const Eigen::VectorXd totals =
                Eigen::VectorXd::Constant(live, spec.cohort_size);
            observations.push_back(TransitionObservation::from_rates(period, m, totals));
        }
    }
    return TransitionPanel(scale, std::move(observations));
}

}  // namespace rrl::simlab
