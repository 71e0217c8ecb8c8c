#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "rrl/domain.hpp"
#include "rrl/macrorisk.hpp"
#include "rrl/onefactor.hpp"

namespace rrl::simlab {

enum class RhoSource { basel, variance_search, fixed };
enum class CountSampling { deterministic, multinomial };
enum class MacroMode { readout, independent, provided };

struct MacroVariableSpec {
    std::string name;
    double loading = 1.0;    // readout coefficient on the true factor
    double noise_std = 0.2;  // independent observation noise
};

struct SimulationConfig {
    double noise_scale = 0.5;  // a: perturbation scale on the true factor
    int replicates = 1000;
    std::uint64_t seed = 42;
    RhoSource rho_source = RhoSource::basel;
    double fixed_rho = 0.12;  // used when rho_source == fixed
    CountSampling count_sampling = CountSampling::deterministic;
    ClipPolicy clip;
    MacroMode macro_mode = MacroMode::readout;
    std::vector<MacroVariableSpec> macro_variables = default_macro_variables();
    int trace_replicate = 0;  // replicate whose PD path the report carries
    int threads = 0;          // 0 = hardware concurrency

    static std::vector<MacroVariableSpec> default_macro_variables();
    void validate() const;
};

// Ground truth fixed before any replicate is drawn: thresholds and rho from
// the historical panel, the extracted factor series, and the implied
// transition matrices and PD paths. Used only to generate observations and
// to score estimates, never inside the estimators.
struct TruthSet {
    RatingScale scale;
    onefactor::ThresholdSet thresholds;
    double rho = 0.0;
    std::vector<std::string> periods;
    Eigen::VectorXd z;                      // length T
    std::vector<Eigen::MatrixXd> matrices;  // per period, (K-1) x K
    Eigen::MatrixXd pd;                     // T x (K-1)
    Eigen::MatrixXd row_totals;             // T x (K-1) historical cohort sizes
    std::vector<bool> grade_active;         // live grades with any data
};

TruthSet make_truth(const TransitionPanel& panel, const SimulationConfig& cfg);

// One replicate panel: the true factor path is jittered by noise_scale *
// standard normal (one independent draw per period, streamed by
// (seed, replicate, period)), matrices rebuilt, and optionally re-sampled as
// multinomial cohort counts of the historical sizes.
TransitionPanel generate_replicate(const TruthSet& truth, const SimulationConfig& cfg,
                                   int replicate_index);

// Synthesizes the macro series the new estimator regresses on, per
// cfg.macro_mode: noisy linear readouts of the true factor, or a series
// independent of it (the null case).
MacroSeries synthesize_macro(const TruthSet& truth, const SimulationConfig& cfg);

struct EstimateBothResult {
    Eigen::MatrixXd pd_onefactor;  // T x (K-1)
    Eigen::MatrixXd pd_new;        // T x (K-1)
    std::vector<std::string> warnings;
};

// Runs both estimators on one replicate panel. The one-factor path extracts
// the factor per period with the given thresholds and rho and rebuilds the
// matrix; the new path fits the macro-risk regression and predicts at each
// period's macro values.
EstimateBothResult estimate_both(const TransitionPanel& replicate,
                                 const onefactor::ThresholdSet& thresholds, double rho,
                                 const MacroSeries& macro, const ClipPolicy& policy);

struct ComparisonReport {
    std::vector<std::string> periods;
    std::vector<int> grades;  // 1-based live grades that were scored
    Eigen::MatrixXd pd_true;  // T x G
    Eigen::MatrixXd mse_onefactor;
    Eigen::MatrixXd mse_new;
    // PD paths of the designated trace replicate
    Eigen::MatrixXd trace_onefactor;
    Eigen::MatrixXd trace_new;
    int replicates_run = 0;
    int replicates_failed = 0;
    std::vector<std::string> warnings;
};

// Full study: truth once, then R independent replicate/estimate cycles with
// per-(period, grade) squared-error accumulation for both estimators.
// Replicates run in parallel but accumulate in index order, so results are
// identical under any thread count. A macro series must be supplied exactly
// when cfg.macro_mode == provided.
ComparisonReport run_comparison(const TransitionPanel& panel,
                                const std::optional<MacroSeries>& macro,
                                const SimulationConfig& cfg);

// Synthetic "historical" panel for studies and examples: a smooth
// fully-supported base matrix drives a one-factor world with an i.i.d.
// standard normal factor path.
struct SyntheticPanelSpec {
    int grade_count = 9;
    int periods = 40;
    double rho = 0.2;
    std::uint64_t seed = 7;
    double cohort_size = 2000.0;  // per live grade
    bool multinomial = false;     // sample integer counts instead of exact rates
    bool standardize_z = false;   // rescale the factor path to sample variance 1
};

Eigen::MatrixXd synthetic_base_matrix(int grade_count);
TransitionPanel synthetic_panel(const SyntheticPanelSpec& spec);

}  // namespace rrl::simlab
