#include "rrl/onefactor.hpp"

#include <cmath>
#include <stdexcept>

namespace rrl::onefactor {

ThresholdSet::ThresholdSet(std::vector<std::vector<double>> cuts) : cuts_(std::move(cuts)) {
    if (cuts_.empty()) throw std::invalid_argument("ThresholdSet: no grades");
    const std::size_t expected = cuts_.size();  // K-1 cuts for K-1 live grades
    for (std::size_t i = 0; i < cuts_.size(); ++i) {
        const auto& row = cuts_[i];
        if (row.empty()) continue;  // inactive grade
        if (row.size() != expected)
            throw std::invalid_argument("ThresholdSet: grade " + std::to_string(i + 1) +
                                        " has the wrong number of cuts");
        for (std::size_t j = 0; j < row.size(); ++j) {
            if (!std::isfinite(row[j]))
                throw std::invalid_argument("ThresholdSet: non-finite cut");
            if (j > 0 && !(row[j] > row[j - 1]))
                throw std::invalid_argument("ThresholdSet: cuts of grade " +
                                            std::to_string(i + 1) +
                                            " must increase strictly");
        }
    }
}

ThresholdSet calibrate_thresholds(const Eigen::MatrixXd& avg, const ClipPolicy& policy) {
    if (avg.rows() < 1 || avg.cols() != avg.rows() + 1)
        throw std::invalid_argument("calibrate_thresholds: expected a (K-1) x K matrix");
    if ((avg.array() < 0.0).any())
        throw std::invalid_argument("calibrate_thresholds: negative entries");

    const int rows = static_cast<int>(avg.rows());
    const int cols = static_cast<int>(avg.cols());
    std::vector<std::vector<double>> cuts(rows);
    for (int i = 0; i < rows; ++i) {
        const double sum = avg.row(i).sum();
        if (sum == 0.0) continue;  // grade never observed: inactive
        if (std::abs(sum - 1.0) > 5e-3)
            throw std::invalid_argument("calibrate_thresholds: row " +
                                        std::to_string(i + 1) + " sums to " +
                                        std::to_string(sum) + ", not 1");
        std::vector<double> row;
        row.reserve(cols - 1);
        double cum = 0.0;
        for (int j = 0; j + 1 < cols; ++j) {
            cum += avg(i, j);
            const double x = norm_inv_cdf(policy.clip(cum));
            if (!row.empty() && !(x > row.back()))
                throw std::domain_error(
                    "calibrate_thresholds: degenerate row " + std::to_string(i + 1) +
                    " (cumulative sums not strictly increasing after clipping)");
            row.push_back(x);
        }
        cuts[i] = std::move(row);
    }
    return ThresholdSet(std::move(cuts));
}

Eigen::MatrixXd conditional_matrix(const ThresholdSet& thresholds, double rho, double z) {
    if (!(rho >= 0.0 && rho < 1.0))
        throw std::invalid_argument("conditional_matrix: rho must lie in [0,1)");

    const int rows = thresholds.live_grades();
    const int cols = thresholds.grade_count();
    const double shift = std::sqrt(rho) * z;
    const double scale = 1.0 / std::sqrt(1.0 - rho);

    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(rows, cols);
    for (int i = 0; i < rows; ++i) {
        if (!thresholds.active(i)) continue;
        const auto& cuts = thresholds.cuts(i);
        double prev_cdf = 0.0;  // Phi at the implicit -inf cut
        for (int j = 0; j + 1 < cols; ++j) {
            const double cdf = norm_cdf((cuts[j] - shift) * scale);
            out(i, j) = std::max(0.0, cdf - prev_cdf);
            prev_cdf = cdf;
        }
        // Default column straight from the survival function so the far
        // right tail keeps full precision.
        out(i, cols - 1) = norm_sf((cuts[cols - 2] - shift) * scale);
    }
    return out;
}

namespace {

double extraction_objective(const TransitionObservation& obs,
                            const ThresholdSet& thresholds, double rho, double z,
                            const ClipPolicy& policy) {
    const Eigen::MatrixXd fitted = conditional_matrix(thresholds, rho, z);
    double total = 0.0;
    for (int i = 0; i < fitted.rows(); ++i) {
        if (!thresholds.active(i) || !obs.row_observed(i)) continue;
        const double n = obs.row_totals(i);
        for (int j = 0; j < fitted.cols(); ++j) {
            const double p = fitted(i, j);
            const double d = policy.clip(p);
            const double r = obs.empirical(i, j) - p;
            total += n * r * r / (d * (1.0 - d));
        }
    }
    return total;
}

}  // namespace

ZExtraction extract_z(const TransitionObservation& obs, const ThresholdSet& thresholds,
                      double rho, const ClipPolicy& policy,
                      const ZExtractionOptions& options) {
    if (!(rho > 0.0 && rho < 1.0))
        throw std::invalid_argument("extract_z: rho must lie in (0,1)");
    if (obs.empirical.rows() != thresholds.live_grades())
        throw std::invalid_argument("extract_z: observation does not match thresholds");

    bool any = false;
    for (int i = 0; i < thresholds.live_grades(); ++i)
        any = any || (thresholds.active(i) && obs.row_observed(i));
    if (!any)
        throw std::invalid_argument("extract_z: no observed cohort row to fit (period '" +
                                    obs.period + "')");

    const auto result = minimize_scalar(
        [&](double z) { return extraction_objective(obs, thresholds, rho, z, policy); },
        options.bracket_lo, options.bracket_hi, options.tol, options.max_iter,
        options.grid_points);
    if (!result.converged)
        throw std::runtime_error("extract_z: minimization did not converge (period '" +
                                 obs.period + "')");
    return {result.x, result.fx, result.evaluations};
}

namespace {

struct SeriesExtraction {
    Eigen::VectorXd z;
    Eigen::VectorXd objective;
};

SeriesExtraction extract_series(const TransitionPanel& panel,
                                const ThresholdSet& thresholds, double rho,
                                const ClipPolicy& policy) {
    const int t_count = panel.periods();
    SeriesExtraction out{Eigen::VectorXd(t_count), Eigen::VectorXd(t_count)};
    for (int t = 0; t < t_count; ++t) {
        const auto ext = extract_z(panel.observations[t], thresholds, rho, policy);
        out.z(t) = ext.z;
        out.objective(t) = ext.objective;
    }
    return out;
}

double sample_variance(const Eigen::VectorXd& v) {
    const Eigen::Index n = v.size();
    const double mean = v.mean();
    double ss = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) ss += (v(i) - mean) * (v(i) - mean);
    return ss / static_cast<double>(n - 1);  // T-1 denominator
}

}  // namespace

OneFactorFit fit_onefactor(const TransitionPanel& panel, double rho,
                           const ClipPolicy& policy) {
    ThresholdSet thresholds = calibrate_thresholds(average_matrix(panel), policy);
    auto series = extract_series(panel, thresholds, rho, policy);
    OneFactorFit fit{rho, std::move(thresholds), panel.period_labels(),
                     std::move(series.z), std::move(series.objective), {}};
    return fit;
}

OneFactorFit calibrate_rho_variance(const TransitionPanel& panel,
                                    const ClipPolicy& policy) {
    if (panel.periods() < 3)
        throw std::invalid_argument(
            "calibrate_rho_variance: need at least three periods");

    const ThresholdSet thresholds = calibrate_thresholds(average_matrix(panel), policy);
    const auto variance_at = [&](double rho) {
        return sample_variance(extract_series(panel, thresholds, rho, policy).z);
    };

    constexpr double rho_lo = 0.01;
    constexpr double rho_hi = 0.99;
    constexpr int scan_points = 25;

    std::vector<std::string> warnings;
    double chosen = rho_hi;
    bool found = false;

    // var(Z(rho)) falls as rho grows, so scan upward for the sign change of
    // var - 1 and bisect inside the first bracketing cell.
    double prev_rho = rho_lo;
    double prev_g = variance_at(prev_rho) - 1.0;
    if (std::abs(prev_g) < 1e-3) {
        chosen = prev_rho;
        found = true;
    }
    for (int k = 1; k < scan_points && !found; ++k) {
        const double rho = rho_lo + (rho_hi - rho_lo) * k / (scan_points - 1);
        const double g = variance_at(rho) - 1.0;
        if (std::abs(g) < 1e-3) {
            chosen = rho;
            found = true;
            break;
        }
        if (prev_g * g < 0.0) {
            double a = prev_rho, b = rho, ga = prev_g;
            for (int it = 0; it < 100; ++it) {
                const double mid = 0.5 * (a + b);
                const double gm = variance_at(mid) - 1.0;
                if (std::abs(gm) < 1e-3 || (b - a) < 1e-9) {
                    chosen = mid;
                    break;
                }
                if (ga * gm < 0.0) {
                    b = mid;
                } else {
                    a = mid;
                    ga = gm;
                }
                chosen = mid;
            }
            found = true;
            break;
        }
        prev_rho = rho;
        prev_g = g;
    }

    if (!found) {
        // No crossing: variance stays on one side of 1 over the whole range.
        const double g_lo = variance_at(rho_lo) - 1.0;
        const double g_hi = variance_at(rho_hi) - 1.0;
        chosen = std::abs(g_lo) <= std::abs(g_hi) ? rho_lo : rho_hi;
        warnings.push_back(
            "rho search: var(Z) - 1 has no sign change on (0.01, 0.99); "
            "returning boundary rho = " +
            std::to_string(chosen));
    }

    auto series = extract_series(panel, thresholds, chosen, policy);
    OneFactorFit fit{chosen, thresholds, panel.period_labels(), std::move(series.z),
                     std::move(series.objective), std::move(warnings)};
    return fit;
}

double basel_rho(Probability pd) {
    if (!(pd >= 0.0 && pd <= 1.0))
        throw std::invalid_argument("basel_rho: pd must lie in [0,1]");
    return 0.12 + 0.12 * std::exp(-50.0 * pd);
}

PdVector pd_from_matrix(const Eigen::MatrixXd& m) {
    if (m.cols() < 2) throw std::invalid_argument("pd_from_matrix: too few columns");
    return m.col(m.cols() - 1);
}

}  // namespace rrl::onefactor
