#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "rrl/domain.hpp"
#include "rrl/numerics.hpp"
#include "rrl/onefactor.hpp"  // PdVector

namespace rrl::macrorisk {

enum class ProbitFlag : std::uint8_t {
    valid = 0,       // enters the regression
    clipped = 1,     // tail sum was exactly 0 or 1; value kept, excluded from fits
    unobserved = 2,  // grade row had no cohort this period
};

// Right-tail probit transform of the panel: entry (i,j) of period t holds
// the normal quantile of the tail mass beyond destination j. Companion flags
// mark entries that cannot enter the regression.
struct ProbitPanel {
    std::vector<std::string> periods;
    int grade_count = 0;  // K
    std::vector<Eigen::MatrixXd> u;  // per period: (K-1) x (K-1)
    std::vector<Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>> flags;

    bool valid(int t, int i, int j) const {
        return flags[t](i, j) == static_cast<std::uint8_t>(ProbitFlag::valid);
    }
};

enum class ZeroCellRule {
    clip_and_mask,          // endpoint tails transformed at epsilon, then masked
    continuity_correction,  // zero tail replaced by 1/(2 N_i) and kept
};

struct ProbitOptions {
    ZeroCellRule zero_cells = ZeroCellRule::clip_and_mask;
};

ProbitPanel probit_transform(const TransitionPanel& panel,
                             const ClipPolicy& policy = ClipPolicy{},
                             const ProbitOptions& options = {});

struct Residual {
    int period = 0;       // index into fit periods
    int destination = 0;  // 1-based destination grade j
    double value = 0.0;
};

// Per-initial-grade regression result: one slope vector shared across
// destination grades plus destination-specific intercepts on the probit
// scale (the macro-conditional thresholds).
struct GradeFit {
    bool active = false;
    Eigen::VectorXd beta;          // macro slopes (length n)
    Eigen::VectorXd intercepts;    // x_j, j = 1..K-1
    Eigen::VectorXd beta_se;       // OLS standard errors
    Eigen::VectorXd intercept_se;
    double residual_variance = 0.0;
    std::vector<Residual> residuals;
};

struct MacroRiskFit {
    std::vector<std::string> variable_names;
    std::vector<std::string> periods;  // sample the fit was run on
    double clip_epsilon = 1e-6;
    std::vector<GradeFit> grades;  // K-1 entries
    std::vector<std::string> warnings;

    int grade_count() const { return static_cast<int>(grades.size()) + 1; }
    int variable_count() const { return static_cast<int>(variable_names.size()); }
};

struct FitOptions {
    // A grade whose rows are unobserved in every period becomes an inactive
    // GradeFit instead of an error; grades with data that all got masked
    // still throw.
    bool allow_unobserved_grades = false;
};

// Ordinary least squares per initial grade on the stacked system
// U_{ij,t} = x_j - M_t' beta + eps over all unmasked (j,t). The design has
// one indicator column per destination grade plus the macro columns; rank
// deficiency throws with the offending columns named.
MacroRiskFit fit_regression(const ProbitPanel& probit, const MacroSeries& macro,
                            const FitOptions& options = {});

// Reconstructs the transition matrix at macro values m (ordered as
// fit.variable_names): survival levels are norm_sf(x_j - m' beta) and row
// entries are their successive differences. Negative cells from non-monotone
// fitted intercepts are floored at zero and the row renormalized; when that
// happens a note lands in *warnings. Inactive grades give zero rows.
Eigen::MatrixXd predict_matrix(const MacroRiskFit& fit, const Eigen::VectorXd& m,
                               std::vector<std::string>* warnings = nullptr);

struct MacroScenario {
    std::vector<std::string> periods;
    std::vector<std::string> variable_names;
    Eigen::MatrixXd values;  // periods x variables

    // Columns reordered to the fit's variable order; throws if any fitted
    // variable is missing from the scenario.
    Eigen::MatrixXd aligned_values(const MacroRiskFit& fit) const;
};

struct ForecastResult {
    std::vector<std::string> periods;
    Eigen::MatrixXd pd;  // periods x (K-1)
    std::vector<std::string> warnings;
};

ForecastResult forecast_pd(const MacroRiskFit& fit, const MacroScenario& scenario);

}  // namespace rrl::macrorisk
