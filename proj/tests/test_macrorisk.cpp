#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <random>

#include "rrl/domain.hpp"
#include "rrl/macrorisk.hpp"
#include "rrl/numerics.hpp"
#include "support/reference.hpp"
#include "support/sample_data.hpp"

using namespace rrl;
using namespace rrl::macrorisk;

namespace {

// Exact data-generating process of the model: rows are successive
// differences of right-tail masses at the linear predictor.
Eigen::MatrixXd matrix_from_linear(const Eigen::MatrixXd& intercepts,  // (K-1) x (K-1)
                                   const Eigen::MatrixXd& beta,        // (K-1) x n
                                   const Eigen::VectorXd& m) {
    const int live = static_cast<int>(intercepts.rows());
    Eigen::MatrixXd out(live, live + 1);
    for (int i = 0; i < live; ++i) {
        double prev = 1.0;
        const double shift = beta.row(i).dot(m);
        for (int j = 0; j < live; ++j) {
            const double tail = norm_sf(intercepts(i, j) - shift);
            out(i, j) = prev - tail;
            prev = tail;
        }
        out(i, live) = prev;
    }
    return out;
}

struct LinearWorld {
    Eigen::MatrixXd intercepts;  // per grade, strictly increasing across j
    Eigen::MatrixXd beta;        // per grade slopes
    MacroSeries macro;
    TransitionPanel panel;
};

LinearWorld make_linear_world(int live, int n_vars, int t_count, std::uint64_t seed,
                              double noise_std = 0.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);

    Eigen::MatrixXd intercepts(live, live);
    for (int i = 0; i < live; ++i)
        for (int j = 0; j < live; ++j) intercepts(i, j) = -1.0 + 1.1 * j + 0.1 * i;
    Eigen::MatrixXd beta(live, n_vars);
    for (int i = 0; i < live; ++i)
        for (int v = 0; v < n_vars; ++v) beta(i, v) = 0.3 + 0.2 * v + 0.05 * i;

    std::vector<std::string> names;
    for (int v = 0; v < n_vars; ++v) names.push_back("m" + std::to_string(v + 1));
    std::vector<std::string> periods;
    Eigen::MatrixXd values(t_count, n_vars);
    for (int t = 0; t < t_count; ++t) {
        periods.push_back("t" + std::to_string(t));
        for (int v = 0; v < n_vars; ++v) values(t, v) = 0.8 * gauss(rng);
    }
    MacroSeries macro(names, periods, values);

    std::vector<TransitionObservation> obs;
    for (int t = 0; t < t_count; ++t) {
        Eigen::MatrixXd m;
        if (noise_std == 0.0) {
            m = matrix_from_linear(intercepts, beta, values.row(t).transpose());
        } else {
            // noise enters on the probit scale, the model's own error term
            Eigen::MatrixXd shifted = intercepts;
            for (int i = 0; i < live; ++i)
                for (int j = 0; j < live; ++j) shifted(i, j) += noise_std * gauss(rng);
            m = matrix_from_linear(shifted, beta, values.row(t).transpose());
        }
        obs.push_back(TransitionObservation::from_rates("t" + std::to_string(t), m));
    }
    TransitionPanel panel(RatingScale::numbered(live + 1), std::move(obs));
    return {intercepts, beta, std::move(macro), std::move(panel)};
}

}  // namespace

TEST_CASE("probit_transform pinned values") {
    Eigen::MatrixXd even(1, 2);
    even << 0.5, 0.5;
    std::vector<TransitionObservation> obs{TransitionObservation::from_rates("t0", even)};
    const TransitionPanel panel(RatingScale::numbered(2), std::move(obs));
    const auto probit = probit_transform(panel);
    CHECK(probit.u[0](0, 0) == 0.0);
    CHECK(probit.valid(0, 0, 0));
}

TEST_CASE("probit_transform on the quarterly sample matrix") {
    const auto probit = probit_transform(testdata::quarterly_1990q1_panel());
    // grade 7, destination cut j=7: tail mass 0.1389
    CHECK(probit.u[0](6, 6) == doctest::Approx(1.0852747177665769).epsilon(1e-4));
    CHECK(probit.u[0](6, 6) ==
          doctest::Approx(testref::normal_inv_sf(0.1389)).epsilon(1e-9));
    CHECK(probit.valid(0, 6, 6));
    // grade 8 row is unobserved, grade 1 pins its tail at zero beyond grade 2
    for (int j = 0; j < 8; ++j)
        CHECK(probit.flags[0](7, j) == static_cast<std::uint8_t>(ProbitFlag::unobserved));
    CHECK(probit.flags[0](0, 1) == static_cast<std::uint8_t>(ProbitFlag::clipped));
}

TEST_CASE("probit values increase strictly in j on full-support rows") {
    std::mt19937_64 rng(61);
    std::uniform_real_distribution<double> u(0.05, 1.0);
    for (int rep = 0; rep < 30; ++rep) {
        Eigen::MatrixXd m(3, 4);
        for (int i = 0; i < 3; ++i) {
            double sum = 0.0;
            for (int j = 0; j < 4; ++j) {
                m(i, j) = u(rng);
                sum += m(i, j);
            }
            m.row(i) /= sum;
        }
        std::vector<TransitionObservation> obs{TransitionObservation::from_rates("t0", m)};
        const TransitionPanel panel(RatingScale::numbered(4), std::move(obs));
        const auto probit = probit_transform(panel);
        for (int i = 0; i < 3; ++i)
            for (int j = 1; j < 3; ++j) CHECK(probit.u[0](i, j) > probit.u[0](i, j - 1));
    }
}

TEST_CASE("continuity correction keeps zero tails usable when the cohort is known") {
    Eigen::MatrixXd counts(1, 2);
    counts << 200, 0;  // zero default tail, cohort of 200
    const auto obs = estimate_cohort(counts, "t0");
    const TransitionPanel panel(RatingScale::numbered(2), {obs});

    const auto masked = probit_transform(panel);
    CHECK(masked.flags[0](0, 0) == static_cast<std::uint8_t>(ProbitFlag::clipped));

    ProbitOptions options;
    options.zero_cells = ZeroCellRule::continuity_correction;
    const auto corrected = probit_transform(panel, ClipPolicy{}, options);
    CHECK(corrected.valid(0, 0, 0));
    CHECK(corrected.u[0](0, 0) == doctest::Approx(norm_inv_sf(1.0 / 400.0)).epsilon(1e-12));
}

TEST_CASE("fit_regression recovers a noiseless single-variable system exactly") {
    // K=4, every grade built from intercepts (-1, 0.5, 2) and slope 0.8, T=40
    Eigen::MatrixXd intercepts(3, 3);
    intercepts << -1.0, 0.5, 2.0, -1.0, 0.5, 2.0, -1.0, 0.5, 2.0;
    Eigen::MatrixXd beta = Eigen::MatrixXd::Constant(3, 1, 0.8);

    std::vector<std::string> periods;
    Eigen::MatrixXd values(40, 1);
    for (int t = 0; t < 40; ++t) {
        periods.push_back("t" + std::to_string(t));
        values(t, 0) = -2.0 + 4.0 * t / 39.0;
    }
    const MacroSeries macro({"m1"}, periods, values);

    std::vector<TransitionObservation> obs;
    for (int t = 0; t < 40; ++t)
        obs.push_back(TransitionObservation::from_rates(
            periods[t], matrix_from_linear(intercepts, beta, values.row(t).transpose())));
    const TransitionPanel panel(RatingScale::numbered(4), std::move(obs));

    const auto fit = fit_regression(probit_transform(panel), macro);
    REQUIRE(fit.grades[0].active);
    CHECK(fit.grades[0].beta(0) == doctest::Approx(0.8).epsilon(1e-8));
    for (int j = 0; j < 3; ++j)
        CHECK(fit.grades[0].intercepts(j) == doctest::Approx(intercepts(0, j)).epsilon(1e-8));
    CHECK(fit.warnings.empty());

    // composition of exact inverses: predictions reproduce the generator
    for (int t = 0; t < 40; t += 7) {
        const auto predicted = predict_matrix(fit, values.row(t).transpose());
        const auto truth = matrix_from_linear(intercepts, beta, values.row(t).transpose());
        CHECK((predicted - truth).cwiseAbs().maxCoeff() < 1e-8);
    }
}

TEST_CASE("fit_regression recovers multi-grade multi-variable systems to 1e-8") {
    const auto world = make_linear_world(3, 3, 40, 67);
    const auto fit = fit_regression(probit_transform(world.panel), world.macro);
    for (int i = 0; i < 3; ++i) {
        REQUIRE(fit.grades[i].active);
        CHECK((fit.grades[i].beta - world.beta.row(i).transpose()).cwiseAbs().maxCoeff() <
              1e-8);
        CHECK((fit.grades[i].intercepts - world.intercepts.row(i).transpose())
                  .cwiseAbs()
                  .maxCoeff() < 1e-8);
        CHECK(fit.grades[i].residual_variance < 1e-16);
    }
}

TEST_CASE("null model: zero slopes give per-destination means") {
    Eigen::MatrixXd intercepts(2, 2);
    intercepts << -0.4, 1.1, -0.3, 0.9;
    Eigen::MatrixXd beta = Eigen::MatrixXd::Zero(2, 1);

    std::vector<std::string> periods;
    Eigen::MatrixXd values(30, 1);
    std::mt19937_64 rng(71);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (int t = 0; t < 30; ++t) {
        periods.push_back("t" + std::to_string(t));
        values(t, 0) = gauss(rng);
    }
    const MacroSeries macro({"m1"}, periods, values);
    std::vector<TransitionObservation> obs;
    for (int t = 0; t < 30; ++t)
        obs.push_back(TransitionObservation::from_rates(
            periods[t], matrix_from_linear(intercepts, beta, values.row(t).transpose())));
    const TransitionPanel panel(RatingScale::numbered(3), std::move(obs));
    REQUIRE(panel.scale.live_grades() == 2);

    const auto probit = probit_transform(panel);
    const auto fit = fit_regression(probit, macro);
    CHECK(std::abs(fit.grades[0].beta(0)) < 1e-10);
    // intercepts equal the per-j means of U
    for (int j = 0; j < 2; ++j) {
        double mean = 0.0;
        for (int t = 0; t < 30; ++t) mean += probit.u[t](0, j);
        mean /= 30.0;
        CHECK(fit.grades[0].intercepts(j) == doctest::Approx(mean).epsilon(1e-10));
    }
}

TEST_CASE("noisy fit lands inside three standard errors, residuals orthogonal") {
    const auto world = make_linear_world(2, 3, 60, 73, 0.1);
    const auto probit = probit_transform(world.panel);
    const auto fit = fit_regression(probit, world.macro);
    for (int i = 0; i < 2; ++i) {
        const auto& g = fit.grades[i];
        for (int v = 0; v < 3; ++v)
            CHECK(std::abs(g.beta(v) - world.beta(i, v)) < 3.0 * g.beta_se(v) + 1e-12);
        // residuals orthogonal to every design column
        Eigen::VectorXd dot_macro = Eigen::VectorXd::Zero(3);
        Eigen::VectorXd dot_ind = Eigen::VectorXd::Zero(2);
        double norm = 0.0;
        for (const auto& r : g.residuals) {
            dot_macro += r.value * world.macro.values.row(r.period).transpose();
            dot_ind(r.destination - 1) += r.value;
            norm += r.value * r.value;
        }
        const double scale = std::sqrt(norm) + 1e-30;
        for (int v = 0; v < 3; ++v) CHECK(std::abs(dot_macro(v)) / scale < 1e-8);
        for (int j = 0; j < 2; ++j) CHECK(std::abs(dot_ind(j)) / scale < 1e-8);
    }
}

TEST_CASE("fit_regression rejects collinear macro columns naming them") {
    const auto world = make_linear_world(1, 1, 30, 79);
    Eigen::MatrixXd doubled(world.macro.values.rows(), 2);
    doubled.col(0) = world.macro.values.col(0);
    doubled.col(1) = 2.0 * world.macro.values.col(0);
    const MacroSeries macro({"gdp", "gdp_twice"}, world.macro.periods, doubled);
    try {
        fit_regression(probit_transform(world.panel), macro);
        FAIL("expected rank deficiency");
    } catch (const std::invalid_argument& e) {
        const std::string msg = e.what();
        CHECK(msg.find("rank deficient") != std::string::npos);
        CHECK(msg.find("gdp") != std::string::npos);
    }
}

TEST_CASE("unobserved grades: error by default, inactive with the option") {
    Eigen::MatrixXd m(2, 3);
    m << 0.7, 0.2, 0.1, 0, 0, 0;  // grade 2 never observed
    std::vector<TransitionObservation> obs;
    for (int t = 0; t < 6; ++t)
        obs.push_back(TransitionObservation::from_rates("t" + std::to_string(t), m));
    const TransitionPanel panel(RatingScale::numbered(3), std::move(obs));
    Eigen::MatrixXd values(6, 1);
    values << -1, -0.5, 0, 0.5, 1, 1.5;
    const MacroSeries macro({"m1"}, panel.period_labels(), values);

    const auto probit = probit_transform(panel);
    CHECK_THROWS_AS(fit_regression(probit, macro), std::invalid_argument);

    FitOptions options;
    options.allow_unobserved_grades = true;
    const auto fit = fit_regression(probit, macro, options);
    CHECK(fit.grades[0].active);
    CHECK_FALSE(fit.grades[1].active);
    REQUIRE(fit.warnings.size() == 1);

    const auto predicted = predict_matrix(fit, values.row(0).transpose());
    CHECK(predicted.row(1).sum() == 0.0);  // inactive grade row stays zero
}

TEST_CASE("masked entries never influence the coefficients") {
    const auto world = make_linear_world(1, 2, 25, 83, 0.05);
    auto probit = probit_transform(world.panel);
    // mask a third of the entries, then compare against a panel where those
    // entries are removed outright
    std::mt19937_64 rng(5);
    std::uniform_int_distribution<int> coin(0, 2);
    auto masked = probit;
    auto deleted = probit;
    for (std::size_t t = 0; t < probit.u.size(); ++t)
        for (int j = 0; j < 3; ++j)
            if (coin(rng) == 0) {
                masked.flags[t](0, j) = static_cast<std::uint8_t>(ProbitFlag::clipped);
                deleted.flags[t](0, j) = static_cast<std::uint8_t>(ProbitFlag::unobserved);
                deleted.u[t](0, j) = -123.0;  // value must not matter once excluded
            }
    FitOptions options;
    options.allow_unobserved_grades = true;
    const auto fit_masked = fit_regression(masked, world.macro, options);
    const auto fit_deleted = fit_regression(deleted, world.macro, options);
    CHECK(fit_masked.grades[0].beta == fit_deleted.grades[0].beta);
    CHECK(fit_masked.grades[0].intercepts == fit_deleted.grades[0].intercepts);
}

TEST_CASE("predict_matrix with zero slopes reproduces the calibrated row") {
    Eigen::MatrixXd nine(1, 2);
    nine << 0.9, 0.1;
    const auto th = onefactor::calibrate_thresholds(nine);
    MacroRiskFit fit;
    fit.variable_names = {"m1"};
    fit.grades.resize(1);
    fit.grades[0].active = true;
    fit.grades[0].beta = Eigen::VectorXd::Zero(1);
    fit.grades[0].intercepts = Eigen::VectorXd::Constant(1, th.cuts(0)[0]);
    fit.grades[0].beta_se = Eigen::VectorXd::Zero(1);
    fit.grades[0].intercept_se = Eigen::VectorXd::Zero(1);
    for (double m : {-3.0, 0.0, 2.5}) {
        const auto p = predict_matrix(fit, Eigen::VectorXd::Constant(1, m));
        CHECK(p(0, 0) == doctest::Approx(0.9).epsilon(1e-12));
        CHECK(p(0, 1) == doctest::Approx(0.1).epsilon(1e-12));
    }
}

TEST_CASE("predict_matrix rows are stochastic over random fits") {
    std::mt19937_64 rng(89);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (int rep = 0; rep < 500; ++rep) {
        MacroRiskFit fit;
        fit.variable_names = {"a", "b"};
        fit.grades.resize(2);
        for (int i = 0; i < 2; ++i) {
            auto& g = fit.grades[i];
            g.active = true;
            g.beta = Eigen::VectorXd::NullaryExpr(2, [&](Eigen::Index) { return gauss(rng); });
            Eigen::VectorXd cuts(2);
            cuts << gauss(rng), gauss(rng);
            std::sort(cuts.begin(), cuts.end());
            g.intercepts = cuts;
            g.beta_se = Eigen::VectorXd::Zero(2);
            g.intercept_se = Eigen::VectorXd::Zero(2);
        }
        const Eigen::VectorXd m =
            Eigen::VectorXd::NullaryExpr(2, [&](Eigen::Index) { return gauss(rng); });
        const auto p = predict_matrix(fit, m);
        for (int i = 0; i < 2; ++i) {
            CHECK(std::abs(p.row(i).sum() - 1.0) < 1e-12);
            for (int j = 0; j < 3; ++j) {
                CHECK(p(i, j) >= 0.0);
                CHECK(p(i, j) <= 1.0);
            }
        }
    }
}

TEST_CASE("predict_matrix repairs non-monotone intercepts and warns") {
    MacroRiskFit fit;
    fit.variable_names = {};
    fit.grades.resize(2);
    auto& g = fit.grades[0];
    g.active = true;
    g.beta = Eigen::VectorXd(0);
    g.intercepts = Eigen::VectorXd(2);
    g.intercepts << 0.5, -0.5;  // inverted ordering forces negative mass
    g.beta_se = Eigen::VectorXd(0);
    g.intercept_se = Eigen::VectorXd::Zero(2);
    std::vector<std::string> warnings;
    const auto p = predict_matrix(fit, Eigen::VectorXd(0), &warnings);
    CHECK(warnings.size() == 1);
    CHECK(std::abs(p.row(0).sum() - 1.0) < 1e-12);
    for (int j = 0; j < 3; ++j) CHECK(p(0, j) >= 0.0);

    // mismatched intercept count is rejected rather than mis-shaped
    auto bad = fit;
    bad.grades[0].intercepts = Eigen::VectorXd::Zero(3);
    CHECK_THROWS_AS(predict_matrix(bad, Eigen::VectorXd(0)), std::invalid_argument);
}

TEST_CASE("a unit shift in one macro variable moves the linear predictor by -beta") {
    const auto world = make_linear_world(1, 1, 30, 97);
    const auto fit = fit_regression(probit_transform(world.panel), world.macro);
    const double beta = fit.grades[0].beta(0);
    auto shifted = fit;
    shifted.grades[0].intercepts.array() -= beta;  // absorb the +1 shift
    const Eigen::VectorXd m = Eigen::VectorXd::Constant(1, 0.4);
    const Eigen::VectorXd m1 = Eigen::VectorXd::Constant(1, 1.4);
    CHECK((predict_matrix(fit, m1) - predict_matrix(shifted, m)).cwiseAbs().maxCoeff() <
          1e-12);
}

TEST_CASE("re-centering a regressor leaves predictions unchanged") {
    const auto world = make_linear_world(2, 3, 40, 101, 0.05);
    const auto fit = fit_regression(probit_transform(world.panel), world.macro);

    MacroSeries recentered = world.macro;
    recentered.values.col(1).array() += 2.75;
    const auto fit2 = fit_regression(probit_transform(world.panel), recentered);
    for (int t = 0; t < 40; t += 9) {
        const auto p1 = predict_matrix(fit, world.macro.values.row(t).transpose());
        const auto p2 = predict_matrix(fit2, recentered.values.row(t).transpose());
        CHECK((p1 - p2).cwiseAbs().maxCoeff() < 1e-8);
    }
}

TEST_CASE("forecast_pd: zero slopes are scenario-invariant; directions follow -beta") {
    const auto world = make_linear_world(1, 2, 30, 103);
    const auto fit = fit_regression(probit_transform(world.panel), world.macro);

    MacroScenario baseline;
    baseline.periods = {"f1"};
    baseline.variable_names = {"m1", "m2"};
    baseline.values = Eigen::MatrixXd::Zero(1, 2);
    MacroScenario stressed = baseline;
    stressed.values(0, 0) = 1.5;

    auto zero_fit = fit;
    zero_fit.grades[0].beta.setZero();
    const auto pd_a = forecast_pd(zero_fit, baseline);
    const auto pd_b = forecast_pd(zero_fit, stressed);
    CHECK(pd_a.pd(0, 0) == doctest::Approx(pd_b.pd(0, 0)).epsilon(1e-14));

    // generator betas are positive: raising the variable lowers the linear
    // predictor, fattening the default tail
    const auto base_pd = forecast_pd(fit, baseline);
    const auto stress_pd = forecast_pd(fit, stressed);
    CHECK(fit.grades[0].beta(0) > 0.0);
    CHECK(stress_pd.pd(0, 0) >= base_pd.pd(0, 0));

    auto flipped = fit;
    flipped.grades[0].beta = -fit.grades[0].beta;
    const auto base_flip = forecast_pd(flipped, baseline);
    const auto stress_flip = forecast_pd(flipped, stressed);
    CHECK(stress_flip.pd(0, 0) <= base_flip.pd(0, 0));
}

TEST_CASE("forecast_pd requires every fitted variable in the scenario") {
    const auto world = make_linear_world(1, 2, 20, 107);
    const auto fit = fit_regression(probit_transform(world.panel), world.macro);
    MacroScenario missing;
    missing.periods = {"f1"};
    missing.variable_names = {"m1"};
    missing.values = Eigen::MatrixXd::Zero(1, 1);
    CHECK_THROWS_AS(forecast_pd(fit, missing), std::invalid_argument);

    // extra columns are fine and get reordered by name
    MacroScenario reordered;
    reordered.periods = {"f1"};
    reordered.variable_names = {"extra", "m2", "m1"};
    reordered.values = Eigen::MatrixXd::Zero(1, 3);
    reordered.values << 9.0, 0.25, -0.5;
    MacroScenario direct;
    direct.periods = {"f1"};
    direct.variable_names = {"m1", "m2"};
    direct.values = Eigen::MatrixXd(1, 2);
    direct.values << -0.5, 0.25;
    CHECK(forecast_pd(fit, reordered).pd(0, 0) ==
          doctest::Approx(forecast_pd(fit, direct).pd(0, 0)).epsilon(1e-15));
}

TEST_CASE("round trip on noiseless data reproduces the generating PD exactly") {
    const auto world = make_linear_world(2, 2, 35, 109);
    const auto fit = fit_regression(probit_transform(world.panel), world.macro);
    MacroScenario scenario;
    scenario.periods = world.macro.periods;
    scenario.variable_names = world.macro.variable_names;
    scenario.values = world.macro.values;
    const auto forecast = forecast_pd(fit, scenario);
    for (int t = 0; t < 35; ++t)
        for (int i = 0; i < 2; ++i)
            CHECK(forecast.pd(t, i) ==
                  doctest::Approx(world.panel.observations[t].empirical(i, 2)).epsilon(1e-8));
}
