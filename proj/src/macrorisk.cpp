#include "rrl/macrorisk.hpp"

#include <cmath>
#include <stdexcept>

namespace rrl::macrorisk {

namespace {

using FlagMatrix = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;

std::uint8_t raw(ProbitFlag f) { return static_cast<std::uint8_t>(f); }

}  // namespace

ProbitPanel probit_transform(const TransitionPanel& panel, const ClipPolicy& policy,
                             const ProbitOptions& options) {
    const int rows = panel.scale.live_grades();
    const int cols = panel.scale.grade_count();

    ProbitPanel out;
    out.periods = panel.period_labels();
    out.grade_count = cols;
    out.u.reserve(panel.periods());
    out.flags.reserve(panel.periods());

    for (const auto& obs : panel.observations) {
        Eigen::MatrixXd u = Eigen::MatrixXd::Zero(rows, rows);
        FlagMatrix flags = FlagMatrix::Constant(rows, rows, raw(ProbitFlag::valid));
        for (int i = 0; i < rows; ++i) {
            if (!obs.row_observed(i)) {
                flags.row(i).setConstant(raw(ProbitFlag::unobserved));
                continue;
            }
            // Tail sums accumulated from the default column leftwards keep
            // small tails exact instead of as differences of near-ones.
            double tail = 0.0;
            std::vector<double> tails(rows);
            for (int j = rows - 1; j >= 0; --j) {
                tail += obs.empirical(i, j + 1);
                tails[j] = tail;
            }
            for (int j = 0; j < rows; ++j) {
                double p = tails[j];
                if (p <= 0.0 || p >= 1.0) {
                    const double n = obs.row_totals(i);
                    if (options.zero_cells == ZeroCellRule::continuity_correction &&
                        n >= 2.0) {
                        p = (p <= 0.0) ? 0.5 / n : 1.0 - 0.5 / n;
                    } else {
                        flags(i, j) = raw(ProbitFlag::clipped);
                    }
                }
                u(i, j) = norm_inv_sf(policy.clip(p));
            }
        }
        out.u.push_back(std::move(u));
        out.flags.push_back(std::move(flags));
    }
    return out;
}

MacroRiskFit fit_regression(const ProbitPanel& probit, const MacroSeries& macro,
                            const FitOptions& options) {
    const int t_count = static_cast<int>(probit.periods.size());
    if (t_count == 0) throw std::invalid_argument("fit_regression: empty probit panel");
    if (macro.periods != probit.periods)
        throw std::invalid_argument(
            "fit_regression: macro series periods do not match the panel");

    const int live = probit.grade_count - 1;
    const int n_vars = macro.variable_count();
    const int n_cols = live + n_vars;  // destination intercepts + macro slopes

    MacroRiskFit fit;
    fit.variable_names = macro.variable_names;
    fit.periods = probit.periods;
    fit.grades.resize(live);

    for (int i = 0; i < live; ++i) {
        // Gather unmasked (j,t) rows for this initial grade.
        std::vector<std::pair<int, int>> keys;  // (t, j)
        bool any_entry = false;
        for (int t = 0; t < t_count; ++t) {
            for (int j = 0; j < live; ++j) {
                const auto f = probit.flags[t](i, j);
                if (f != raw(ProbitFlag::unobserved)) any_entry = true;
                if (f == raw(ProbitFlag::valid)) keys.emplace_back(t, j);
            }
        }
        if (keys.empty()) {
            if (!any_entry && options.allow_unobserved_grades) {
                fit.warnings.push_back("grade " + std::to_string(i + 1) +
                                       ": no observed cohort in any period; skipped");
                continue;  // inactive GradeFit
            }
            throw std::invalid_argument("fit_regression: grade " + std::to_string(i + 1) +
                                        " has no usable probit entries");
        }

        const int m_rows = static_cast<int>(keys.size());
        Eigen::MatrixXd design = Eigen::MatrixXd::Zero(m_rows, n_cols);
        Eigen::VectorXd y(m_rows);
        for (int r = 0; r < m_rows; ++r) {
            const auto [t, j] = keys[r];
            design(r, j) = 1.0;
            design.row(r).tail(n_vars) = macro.values.row(t);
            y(r) = probit.u[t](i, j);
        }

        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
        if (qr.rank() < n_cols) {
            // Columns past the rank in pivot order are the dependent ones.
            std::string names;
            const auto perm = qr.colsPermutation().indices();
            for (int c = qr.rank(); c < n_cols; ++c) {
                const int col = perm(c);
                if (!names.empty()) names += ", ";
                names += (col < live) ? ("intercept j=" + std::to_string(col + 1))
                                      : macro.variable_names[col - live];
            }
            throw std::invalid_argument("fit_regression: grade " + std::to_string(i + 1) +
                                        " design is rank deficient (" + names + ")");
        }

        const Eigen::VectorXd theta = qr.solve(y);
        const Eigen::VectorXd resid = y - design * theta;
        const int dof = m_rows - n_cols;
        const double sigma2 = dof > 0 ? resid.squaredNorm() / dof : 0.0;

        const Eigen::MatrixXd xtx_inv =
            (design.transpose() * design)
                .ldlt()
                .solve(Eigen::MatrixXd::Identity(n_cols, n_cols));

        GradeFit g;
        g.active = true;
        g.intercepts = theta.head(live);
        g.beta = -theta.tail(n_vars);  // model carries -beta in the design
        g.residual_variance = sigma2;
        g.intercept_se = (sigma2 * xtx_inv.diagonal().head(live).array()).sqrt();
        g.beta_se = (sigma2 * xtx_inv.diagonal().tail(n_vars).array()).sqrt();
        g.residuals.reserve(keys.size());
        for (int r = 0; r < m_rows; ++r)
            g.residuals.push_back({keys[r].first, keys[r].second + 1, resid(r)});

        for (int j = 1; j < live; ++j) {
            if (!(g.intercepts(j) > g.intercepts(j - 1))) {
                fit.warnings.push_back("grade " + std::to_string(i + 1) +
                                       ": fitted intercepts not strictly increasing at j=" +
                                       std::to_string(j + 1));
                break;
            }
        }
        fit.grades[i] = std::move(g);
    }
    return fit;
}

Eigen::MatrixXd predict_matrix(const MacroRiskFit& fit, const Eigen::VectorXd& m,
                               std::vector<std::string>* warnings) {
    if (m.size() != fit.variable_count())
        throw std::invalid_argument("predict_matrix: macro vector has " +
                                    std::to_string(m.size()) + " entries, fit expects " +
                                    std::to_string(fit.variable_count()));

    const int live = static_cast<int>(fit.grades.size());
    const int cols = live + 1;
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(live, cols);

    for (int i = 0; i < live; ++i) {
        const auto& g = fit.grades[i];
        if (!g.active) continue;
        if (g.intercepts.size() != live)
            throw std::invalid_argument("predict_matrix: grade " + std::to_string(i + 1) +
                                        " carries " + std::to_string(g.intercepts.size()) +
                                        " intercepts for " + std::to_string(live) +
                                        " destination cuts");
        const double shift = m.dot(g.beta);

        // survival(j) = fitted tail mass beyond destination j
        Eigen::VectorXd survival(cols + 1);
        survival(0) = 1.0;
        for (int j = 0; j < live; ++j) survival(j + 1) = norm_sf(g.intercepts(j) - shift);
        survival(cols) = 0.0;

        bool floored = false;
        double row_sum = 0.0;
        for (int j = 0; j < cols; ++j) {
            double p = survival(j) - survival(j + 1);
            if (p < 0.0) {
                p = 0.0;
                floored = true;
            }
            out(i, j) = p;
            row_sum += p;
        }
        if (floored) {
            if (row_sum > 0.0) out.row(i) /= row_sum;
            if (warnings)
                warnings->push_back("grade " + std::to_string(i + 1) +
                                    ": non-monotone intercepts produced negative mass; "
                                    "row floored and renormalized");
        }
    }
    return out;
}

Eigen::MatrixXd MacroScenario::aligned_values(const MacroRiskFit& fit) const {
    Eigen::MatrixXd out(values.rows(), fit.variable_count());
    for (int v = 0; v < fit.variable_count(); ++v) {
        const auto& name = fit.variable_names[v];
        int found = -1;
        for (std::size_t s = 0; s < variable_names.size(); ++s)
            if (variable_names[s] == name) {
                found = static_cast<int>(s);
                break;
            }
        if (found < 0)
            throw std::invalid_argument("scenario is missing macro variable '" + name +
                                        "'");
        out.col(v) = values.col(found);
    }
    return out;
}

ForecastResult forecast_pd(const MacroRiskFit& fit, const MacroScenario& scenario) {
    const Eigen::MatrixXd m = scenario.aligned_values(fit);
    ForecastResult result;
    result.periods = scenario.periods;
    result.pd.resize(m.rows(), fit.grades.size());
    for (Eigen::Index t = 0; t < m.rows(); ++t) {
        const Eigen::MatrixXd matrix =
            predict_matrix(fit, m.row(t).transpose(), &result.warnings);
        result.pd.row(t) = onefactor::pd_from_matrix(matrix).transpose();
    }
    return result;
}

}  // namespace rrl::macrorisk
