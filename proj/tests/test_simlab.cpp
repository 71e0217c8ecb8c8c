#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <random>

#include "rrl/domain.hpp"
#include "rrl/onefactor.hpp"
#include "rrl/simlab.hpp"

using namespace rrl;
using namespace rrl::simlab;

namespace {

// Simulation config kept exact for round-trip checks: one macro variable
// reading the factor without noise, so the regression route is noiseless.
SimulationConfig exact_config() {
    SimulationConfig cfg;
    cfg.noise_scale = 0.0;
    cfg.replicates = 1;
    cfg.seed = 11;
    cfg.rho_source = RhoSource::fixed;
    cfg.fixed_rho = 0.2;
    cfg.macro_variables = {{"m1", 1.0, 0.0}};
    cfg.clip = ClipPolicy(1e-9);  // far below any synthetic tail, so no distortion
    return cfg;
}

TransitionPanel small_panel(int periods = 8, std::uint64_t seed = 3) {
    SyntheticPanelSpec spec;
    spec.grade_count = 4;
    spec.periods = periods;
    spec.rho = 0.2;
    spec.seed = seed;
    spec.cohort_size = 500.0;
    return synthetic_panel(spec);
}

double max_abs_diff(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    return (a - b).cwiseAbs().maxCoeff();
}

}  // namespace

TEST_CASE("synthetic base matrix is fully supported and ordered") {
    const auto base = synthetic_base_matrix(9);
    REQUIRE(base.rows() == 8);
    REQUIRE(base.cols() == 9);
    for (int i = 0; i < 8; ++i) {
        CHECK(std::abs(base.row(i).sum() - 1.0) < 1e-12);
        for (int j = 0; j < 9; ++j) CHECK(base(i, j) > 0.0);
        if (i > 0) CHECK(base(i, 8) > base(i - 1, 8));  // PD rises with worse grades
    }
}

TEST_CASE("synthetic_panel is deterministic and well formed") {
    const auto a = small_panel();
    const auto b = small_panel();
    REQUIRE(a.periods() == 8);
    CHECK(a.observations[0].period == "1990Q1");
    CHECK(a.observations[7].period == "1991Q4");
    for (int t = 0; t < 8; ++t)
        CHECK(max_abs_diff(a.observations[t].empirical, b.observations[t].empirical) == 0.0);

    SyntheticPanelSpec counted;
    counted.grade_count = 3;
    counted.periods = 2;
    counted.multinomial = true;
    counted.cohort_size = 300.0;
    const auto c = synthetic_panel(counted);
    for (const auto& obs : c.observations) {
        REQUIRE(obs.has_counts());
        for (int i = 0; i < 2; ++i) CHECK(obs.row_totals(i) == 300.0);
    }
}

TEST_CASE("make_truth pins its own invariants") {
    const auto panel = small_panel();
    const auto truth = make_truth(panel, exact_config());
    REQUIRE(truth.periods.size() == 8);
    for (int t = 0; t < 8; ++t) {
        // matrices are exactly the conditional matrices at the stored factor
        const auto rebuilt =
            onefactor::conditional_matrix(truth.thresholds, truth.rho, truth.z(t));
        CHECK(max_abs_diff(truth.matrices[t], rebuilt) == 0.0);
        CHECK((truth.pd.row(t).transpose() -
               onefactor::pd_from_matrix(truth.matrices[t])).cwiseAbs().maxCoeff() == 0.0);
    }
    // factor path tracks the generator of the synthetic panel statistically;
    // thresholds are recalibrated from the finite-sample average, so the
    // match is close rather than exact
    SyntheticPanelSpec spec;
    spec.grade_count = 4;
    spec.periods = 8;
    spec.rho = 0.2;
    spec.seed = 3;
    CHECK(truth.z.size() == 8);
    CHECK(std::abs(truth.z.mean()) < 1.0);
}

TEST_CASE("make_truth single-period edge") {
    const auto panel = small_panel(1);
    const auto truth = make_truth(panel, exact_config());
    CHECK(truth.matrices.size() == 1);
    CHECK(truth.pd.rows() == 1);
}

TEST_CASE("make_truth basel source with zero default rates gives rho 0.24") {
    Eigen::MatrixXd rates(2, 3);
    rates << 0.7, 0.3, 0.0, 0.4, 0.6, 0.0;  // nobody defaults
    std::vector<TransitionObservation> obs;
    for (int t = 0; t < 3; ++t)
        obs.push_back(TransitionObservation::from_rates("t" + std::to_string(t), rates));
    const TransitionPanel panel(RatingScale::numbered(3), std::move(obs));

    auto cfg = exact_config();
    cfg.rho_source = RhoSource::basel;
    const auto truth = make_truth(panel, cfg);
    CHECK(truth.rho == 0.24);
}

TEST_CASE("generate_replicate at a=0 reproduces the truth exactly") {
    const auto truth = make_truth(small_panel(), exact_config());
    const auto replicate = generate_replicate(truth, exact_config(), 0);
    for (int t = 0; t < 8; ++t)
        CHECK(max_abs_diff(replicate.observations[t].empirical, truth.matrices[t]) == 0.0);
}

TEST_CASE("generate_replicate is byte-stable per (seed, replicate)") {
    auto cfg = exact_config();
    cfg.noise_scale = 0.4;
    const auto truth = make_truth(small_panel(), cfg);
    const auto a = generate_replicate(truth, cfg, 7);
    const auto b = generate_replicate(truth, cfg, 7);
    const auto other = generate_replicate(truth, cfg, 8);
    double delta_other = 0.0;
    for (int t = 0; t < 8; ++t) {
        CHECK(max_abs_diff(a.observations[t].empirical, b.observations[t].empirical) == 0.0);
        delta_other =
            std::max(delta_other, max_abs_diff(a.observations[t].empirical,
                                               other.observations[t].empirical));
    }
    CHECK(delta_other > 0.0);  // different replicate index, different draw

    cfg.count_sampling = CountSampling::multinomial;
    const auto c = generate_replicate(truth, cfg, 7);
    const auto d = generate_replicate(truth, cfg, 7);
    for (int t = 0; t < 8; ++t) {
        REQUIRE(c.observations[t].has_counts());
        CHECK(max_abs_diff(c.observations[t].counts, d.observations[t].counts) == 0.0);
        // cohort sizes carried over from the source panel
        CHECK(c.observations[t].row_totals(0) == truth.row_totals(t, 0));
    }
}

TEST_CASE("perturbation scale is the configured noise level") {
    auto cfg = exact_config();
    cfg.noise_scale = 0.5;
    const auto panel = small_panel(2, 5);
    const auto truth = make_truth(panel, cfg);

    // deterministic sampling makes extraction recover the jittered factor
    // exactly, exposing the perturbation law
    const int reps = 1000;
    for (int t = 0; t < 2; ++t) {
        double sum = 0.0, sumsq = 0.0;
        for (int k = 0; k < reps; ++k) {
            const auto replicate = generate_replicate(truth, cfg, k);
            const double z = onefactor::extract_z(replicate.observations[t],
                                                  truth.thresholds, truth.rho)
                                 .z;
            const double d = z - truth.z(t);
            sum += d;
            sumsq += d * d;
        }
        const double mean = sum / reps;
        const double sd = std::sqrt((sumsq - reps * mean * mean) / (reps - 1));
        CHECK(std::abs(sd - 0.5) < 0.03);
    }
}

TEST_CASE("estimate_both is exact on a noiseless replicate with an exact macro readout") {
    const auto cfg = exact_config();
    const auto truth = make_truth(small_panel(), cfg);
    const auto macro = synthesize_macro(truth, cfg);
    REQUIRE(macro.variable_names == std::vector<std::string>{"m1"});
    for (int t = 0; t < 8; ++t) CHECK(macro.values(t, 0) == truth.z(t));  // zero noise

    const auto replicate = generate_replicate(truth, cfg, 0);
    const auto est = estimate_both(replicate, truth.thresholds, truth.rho, macro,
                                   cfg.clip);
    CHECK(max_abs_diff(est.pd_onefactor, truth.pd) < 1e-6);
    CHECK(max_abs_diff(est.pd_new, truth.pd) < 1e-6);
}

TEST_CASE("null macro relation: slopes collapse and PD is flat") {
    // constant factor path: every period identical, macro carries no signal
    Eigen::MatrixXd rates(2, 3);
    rates << 0.8, 0.15, 0.05, 0.2, 0.65, 0.15;
    std::vector<TransitionObservation> obs;
    for (int t = 0; t < 6; ++t)
        obs.push_back(TransitionObservation::from_rates("t" + std::to_string(t), rates));
    const TransitionPanel panel(RatingScale::numbered(3), std::move(obs));

    auto cfg = exact_config();
    cfg.macro_mode = MacroMode::independent;
    cfg.macro_variables = {{"noise", 1.0, 0.5}};
    const auto truth = make_truth(panel, cfg);
    const auto macro = synthesize_macro(truth, cfg);
    const auto replicate = generate_replicate(truth, cfg, 0);
    const auto est = estimate_both(replicate, truth.thresholds, truth.rho, macro,
                                   cfg.clip);
    for (int t = 1; t < 6; ++t)
        CHECK((est.pd_new.row(t) - est.pd_new.row(0)).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("estimate_both requires aligned macro periods") {
    const auto cfg = exact_config();
    const auto truth = make_truth(small_panel(), cfg);
    auto macro = synthesize_macro(truth, cfg);
    macro.periods.back() = "someday";
    const auto replicate = generate_replicate(truth, cfg, 0);
    CHECK_THROWS_AS(
        estimate_both(replicate, truth.thresholds, truth.rho, macro, cfg.clip),
        std::invalid_argument);
}

TEST_CASE("run_comparison with one replicate equals the single squared error") {
    auto cfg = exact_config();
    cfg.noise_scale = 0.3;
    cfg.replicates = 1;
    const auto panel = small_panel();
    const auto report = run_comparison(panel, std::nullopt, cfg);

    const auto truth = make_truth(panel, cfg);
    const auto macro = synthesize_macro(truth, cfg);
    const auto est = estimate_both(generate_replicate(truth, cfg, 0), truth.thresholds,
                                   truth.rho, macro, cfg.clip);
    for (std::size_t t = 0; t < report.periods.size(); ++t)
        for (std::size_t g = 0; g < report.grades.size(); ++g) {
            const int i = report.grades[g] - 1;
            const double e_z = est.pd_onefactor(t, i) - truth.pd(t, i);
            const double e_n = est.pd_new(t, i) - truth.pd(t, i);
            CHECK(report.mse_onefactor(t, g) == e_z * e_z);
            CHECK(report.mse_new(t, g) == e_n * e_n);
            // trace replicate 0 carries exactly these paths
            CHECK(report.trace_onefactor(t, g) == est.pd_onefactor(t, i));
            CHECK(report.trace_new(t, g) == est.pd_new(t, i));
        }
}

TEST_CASE("run_comparison at a=0 leaves both MSE curves at numerical zero") {
    auto cfg = exact_config();
    cfg.replicates = 5;
    const auto report = run_comparison(small_panel(), std::nullopt, cfg);
    CHECK(report.mse_onefactor.maxCoeff() < 1e-10);
    CHECK(report.mse_new.maxCoeff() < 1e-10);
}

TEST_CASE("run_comparison is deterministic and thread-count independent") {
    auto cfg = exact_config();
    cfg.noise_scale = 0.5;
    cfg.replicates = 24;
    cfg.macro_variables = {{"m1", 1.0, 0.2}, {"m2", -0.7, 0.25}};
    cfg.threads = 1;
    const auto serial = run_comparison(small_panel(), std::nullopt, cfg);
    cfg.threads = 4;
    const auto parallel = run_comparison(small_panel(), std::nullopt, cfg);
    CHECK(max_abs_diff(serial.mse_onefactor, parallel.mse_onefactor) == 0.0);
    CHECK(max_abs_diff(serial.mse_new, parallel.mse_new) == 0.0);
    CHECK(max_abs_diff(serial.trace_new, parallel.trace_new) == 0.0);
    CHECK(serial.warnings == parallel.warnings);
}

TEST_CASE("mean one-factor MSE grows with the perturbation scale") {
    auto cfg = exact_config();
    cfg.replicates = 200;
    cfg.macro_variables = {{"m1", 1.0, 0.2}};
    cfg.noise_scale = 0.25;
    const auto small = run_comparison(small_panel(), std::nullopt, cfg);
    cfg.noise_scale = 0.5;
    const auto large = run_comparison(small_panel(), std::nullopt, cfg);
    CHECK(large.mse_onefactor.mean() > small.mse_onefactor.mean());
}

TEST_CASE("run_comparison validates the macro mode against the supplied series") {
    auto cfg = exact_config();
    CHECK_THROWS_AS(run_comparison(small_panel(),
                                   MacroSeries({"m"}, {"1990Q1"}, Eigen::MatrixXd::Zero(1, 1)),
                                   cfg),
                    std::invalid_argument);
    cfg.macro_mode = MacroMode::provided;
    CHECK_THROWS_AS(run_comparison(small_panel(), std::nullopt, cfg), std::invalid_argument);
}

TEST_CASE("inactive grades are excluded from scoring") {
    // grade 2 never observed anywhere
    Eigen::MatrixXd rates(3, 4);
    rates << 0.80, 0.13, 0.05, 0.02,
             0.00, 0.00, 0.00, 0.00,
             0.02, 0.08, 0.80, 0.10;
    std::vector<TransitionObservation> obs;
    for (int t = 0; t < 5; ++t)
        obs.push_back(TransitionObservation::from_rates("t" + std::to_string(t), rates));
    const TransitionPanel panel(RatingScale::numbered(4), std::move(obs));
    auto cfg = exact_config();
    cfg.replicates = 2;
    // the constant panel makes a noiseless readout collinear with the
    // intercepts; keep observation noise on the macro variable
    cfg.macro_variables = {{"m1", 1.0, 0.3}};
    const auto report = run_comparison(panel, std::nullopt, cfg);
    CHECK(report.grades == std::vector<int>{1, 3});
}

TEST_CASE("SimulationConfig validation") {
    SimulationConfig cfg;
    cfg.noise_scale = -0.1;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = SimulationConfig{};
    cfg.replicates = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = SimulationConfig{};
    cfg.trace_replicate = cfg.replicates;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = SimulationConfig{};
    cfg.rho_source = RhoSource::fixed;
    cfg.fixed_rho = 1.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}
