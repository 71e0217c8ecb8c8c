#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "rrl/domain.hpp"
#include "rrl/numerics.hpp"

namespace rrl::onefactor {

// Default-column probabilities per initial grade, as fractions.
using PdVector = Eigen::VectorXd;

// Per-initial-grade cut points on the latent creditworthiness axis. Each
// active grade carries K-1 strictly increasing interior thresholds; the
// outer cuts at -inf/+inf stay implicit. Grades without usable data (a
// cohort never observed) have no cuts and are inactive.
class ThresholdSet {
public:
    explicit ThresholdSet(std::vector<std::vector<double>> cuts);

    int live_grades() const { return static_cast<int>(cuts_.size()); }
    int grade_count() const { return live_grades() + 1; }  // K
    bool active(int i) const { return !cuts_[i].empty(); }
    const std::vector<double>& cuts(int i) const { return cuts_[i]; }

private:
    std::vector<std::vector<double>> cuts_;  // per grade: K-1 values or empty
};

// Inverts the average transition matrix into thresholds: cut j of grade i is
// the normal quantile of the clipped cumulative sum through destination j.
// All-zero rows (grades with no cohort anywhere) become inactive; rows whose
// clipped cumulative sums fail to increase strictly are degenerate and throw.
ThresholdSet calibrate_thresholds(const Eigen::MatrixXd& avg,
                                  const ClipPolicy& policy = ClipPolicy{});

// Transition matrix conditional on the systematic factor taking value z:
// entry (i,j) is the normal mass of ((x_{j-1} - sqrt(rho) z) / sqrt(1-rho),
// (x_j - sqrt(rho) z) / sqrt(1-rho)]. Rows of inactive grades are zero.
// Requires 0 <= rho < 1; at rho = 0 the result is unconditional.
Eigen::MatrixXd conditional_matrix(const ThresholdSet& thresholds, double rho, double z);

struct ZExtraction {
    double z = 0.0;
    double objective = 0.0;
    int evaluations = 0;
};

struct ZExtractionOptions {
    double bracket_lo = -8.0;  // |z| beyond 8 is numerically pure tail
    double bracket_hi = 8.0;
    double tol = 1e-8;
    int max_iter = 200;
    int grid_points = 33;
};

// Extracts the systematic factor for one period by minimizing the
// cohort-weighted chi-square-style distance between observed and fitted
// rates. Fitted probabilities are clipped only inside the variance weight
// P(1-P), so an exact-fit objective still reaches zero. Rows without cohort
// weight or thresholds contribute nothing; if no row contributes, throws.
ZExtraction extract_z(const TransitionObservation& obs, const ThresholdSet& thresholds,
                      double rho, const ClipPolicy& policy = ClipPolicy{},
                      const ZExtractionOptions& options = {});

struct OneFactorFit {
    double rho = 0.0;
    ThresholdSet thresholds;
    std::vector<std::string> periods;
    Eigen::VectorXd z_series;          // extracted systematic factor per period
    Eigen::VectorXd objective_values;  // minimized objective per period
    std::vector<std::string> warnings;
};

// Calibrates thresholds from the panel average and extracts the factor
// series at a fixed asset correlation.
OneFactorFit fit_onefactor(const TransitionPanel& panel, double rho,
                           const ClipPolicy& policy = ClipPolicy{});

// Variance-matching calibration: scan rho over (0.01, 0.99) for a
// sign change of var(Z(rho)) - 1, then bisect until the sample variance is
// within 1e-3 of one. Without a crossing the nearer boundary is returned and
// a warning recorded on the fit.
OneFactorFit calibrate_rho_variance(const TransitionPanel& panel,
                                    const ClipPolicy& policy = ClipPolicy{});

// Regulatory asset-correlation curve 0.12 + 0.12 * exp(-50 * pd).
double basel_rho(Probability pd);

// Default column of a row-stochastic (K-1) x K matrix.
PdVector pd_from_matrix(const Eigen::MatrixXd& m);

}  // namespace rrl::onefactor
