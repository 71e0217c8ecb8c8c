#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "rrl/numerics.hpp"

namespace rrl {

// Ordered grade set. The last grade is the absorbing default state: it has a
// destination column but no outgoing row, so transition matrices are
// (K-1) x K throughout.
class RatingScale {
public:
    explicit RatingScale(std::vector<std::string> labels);

    static RatingScale numbered(int grade_count);  // labels "1".."K"

    int grade_count() const { return static_cast<int>(labels_.size()); }  // K
    int live_grades() const { return grade_count() - 1; }
    int default_index() const { return grade_count() - 1; }
    const std::vector<std::string>& labels() const { return labels_; }
    const std::string& label(int idx) const { return labels_.at(idx); }
    int index_of(const std::string& label) const;  // throws on unknown label

private:
    std::vector<std::string> labels_;
};

// One period's cohort: integer counts (when known), beginning-of-period row
// totals, and the derived row-stochastic empirical matrix. A zero row total
// marks the grade as unobserved that period; its empirical row stays all
// zero and carries no weight downstream.
struct TransitionObservation {
    std::string period;
    Eigen::MatrixXd counts;      // (K-1) x K; size 0 when only rates were ingested
    Eigen::VectorXd row_totals;  // cohort size n_i per initial grade
    Eigen::MatrixXd empirical;   // (K-1) x K

    bool has_counts() const { return counts.size() > 0; }
    bool row_observed(int i) const { return row_totals(i) > 0.0; }

    // Builds an observation from a rate matrix (entries already in [0,1]).
    // Rows of all zeros are marked unobserved; other rows get unit weight
    // unless explicit cohort sizes are supplied.
    static TransitionObservation from_rates(std::string period,
                                            const Eigen::MatrixXd& rates,
                                            const Eigen::VectorXd& row_totals =
                                                Eigen::VectorXd());
};

// Cohort estimator: empirical row i is counts row i divided by its total.
// Rows with an empty cohort are carried as all-zero and flagged unobserved.
TransitionObservation estimate_cohort(const Eigen::MatrixXd& counts,
                                      std::string period = {});

struct TransitionPanel {
    RatingScale scale;
    std::vector<TransitionObservation> observations;  // time order

    TransitionPanel(RatingScale s, std::vector<TransitionObservation> obs);

    int periods() const { return static_cast<int>(observations.size()); }
    std::vector<std::string> period_labels() const;

    // True when grade row i carries data in at least one period.
    bool row_ever_observed(int i) const;
};

// Entrywise mean of the empirical matrices. Each row averages over the
// periods where that grade was observed, so sparsely observed grades are not
// diluted with structural zeros; a row observed nowhere stays zero.
Eigen::MatrixXd average_matrix(const TransitionPanel& panel);

struct MacroSeries {
    std::vector<std::string> variable_names;
    std::vector<std::string> periods;
    Eigen::MatrixXd values;  // T x n

    MacroSeries() = default;
    MacroSeries(std::vector<std::string> names, std::vector<std::string> periods,
                Eigen::MatrixXd values);

    int variable_count() const { return static_cast<int>(variable_names.size()); }
    int index_of(const std::string& name) const;  // throws on unknown variable
};

// Total, order-preserving map from agency rating labels to modeled bins.
class RebinMap {
public:
    // entries in agency order, best grade first; bins must be nondecreasing
    RebinMap(std::vector<std::pair<std::string, int>> entries);

    // The 22-notch agency scale folded to 9 bins (bin 9 = default).
    static const RebinMap& standard();

    int bin_of(const std::string& agency_label) const;  // throws on unknown
    int bin_count() const { return bin_count_; }
    const std::vector<std::pair<std::string, int>>& entries() const { return entries_; }

private:
    std::vector<std::pair<std::string, int>> entries_;
    int bin_count_ = 0;
};

int rebin_label(const std::string& agency_label, const RebinMap& map);

// Report-only data quality scan; nothing here throws.
struct ValidationReport {
    struct RowRef {
        std::string period;
        int grade = 0;  // 1-based initial grade
    };
    struct RowSumDefect {
        std::string period;
        int grade = 0;
        double row_sum = 0.0;
    };

    std::vector<RowRef> unobserved_rows;
    long zero_cells = 0;  // zero entries across all rows, unobserved included
    std::vector<RowSumDefect> rounding_defects;   // row sums off by > 5e-4
    std::vector<RowRef> rows_requiring_clip;      // an interior cumulative sum is 0 or 1

    bool clean() const {
        return unobserved_rows.empty() && zero_cells == 0 &&
               rounding_defects.empty() && rows_requiring_clip.empty();
    }
};

ValidationReport validate_panel(const TransitionPanel& panel,
                                const ClipPolicy& policy = ClipPolicy{});

}  // namespace rrl
