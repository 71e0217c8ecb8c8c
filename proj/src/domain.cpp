#include "rrl/domain.hpp"

#include <cmath>
#include <set>
#include <stdexcept>

namespace rrl {

namespace {

void check_shape(const Eigen::MatrixXd& m, const char* what) {
    if (m.rows() < 1 || m.cols() != m.rows() + 1)
        throw std::invalid_argument(std::string(what) +
                                    ": expected a (K-1) x K matrix with K >= 2");
}

}  // namespace

RatingScale::RatingScale(std::vector<std::string> labels) : labels_(std::move(labels)) {
    if (labels_.size() < 2)
        throw std::invalid_argument("RatingScale: need at least two grades");
    std::set<std::string> seen(labels_.begin(), labels_.end());
    if (seen.size() != labels_.size())
        throw std::invalid_argument("RatingScale: grade labels must be unique");
}

RatingScale RatingScale::numbered(int grade_count) {
    std::vector<std::string> labels;
    labels.reserve(grade_count);
    for (int g = 1; g <= grade_count; ++g) labels.push_back(std::to_string(g));
    return RatingScale(std::move(labels));
}

int RatingScale::index_of(const std::string& label) const {
    for (std::size_t i = 0; i < labels_.size(); ++i)
        if (labels_[i] == label) return static_cast<int>(i);
    throw std::invalid_argument("RatingScale: unknown grade label '" + label + "'");
}

TransitionObservation TransitionObservation::from_rates(std::string period,
                                                        const Eigen::MatrixXd& rates,
                                                        const Eigen::VectorXd& row_totals) {
    check_shape(rates, "TransitionObservation::from_rates");
    if ((rates.array() < 0.0).any() || (rates.array() > 1.0).any())
        throw std::invalid_argument("from_rates: entries must lie in [0,1]");

    TransitionObservation obs;
    obs.period = std::move(period);
    obs.empirical = rates;
    if (row_totals.size() > 0) {
        if (row_totals.size() != rates.rows())
            throw std::invalid_argument("from_rates: row_totals length mismatch");
        obs.row_totals = row_totals;
    } else {
        obs.row_totals = Eigen::VectorXd::Zero(rates.rows());
        for (Eigen::Index i = 0; i < rates.rows(); ++i)
            obs.row_totals(i) = rates.row(i).sum() > 0.0 ? 1.0 : 0.0;
    }
    return obs;
}

TransitionObservation estimate_cohort(const Eigen::MatrixXd& counts, std::string period) {
    check_shape(counts, "estimate_cohort");
    if ((counts.array() < 0.0).any())
        throw std::invalid_argument("estimate_cohort: counts must be nonnegative");

    TransitionObservation obs;
    obs.period = std::move(period);
    obs.counts = counts;
    obs.row_totals = counts.rowwise().sum();
    obs.empirical = Eigen::MatrixXd::Zero(counts.rows(), counts.cols());
    for (Eigen::Index i = 0; i < counts.rows(); ++i) {
        if (obs.row_totals(i) > 0.0)
            obs.empirical.row(i) = counts.row(i) / obs.row_totals(i);
        // zero cohort: row stays zero and is flagged via row_totals
    }
    return obs;
}

TransitionPanel::TransitionPanel(RatingScale s, std::vector<TransitionObservation> obs)
    : scale(std::move(s)), observations(std::move(obs)) {
    const int rows = scale.live_grades();
    const int cols = scale.grade_count();
    std::set<std::string> seen;
    for (const auto& o : observations) {
        if (o.empirical.rows() != rows || o.empirical.cols() != cols)
            throw std::invalid_argument("TransitionPanel: observation '" + o.period +
                                        "' does not match the rating scale");
        if (!seen.insert(o.period).second)
            throw std::invalid_argument("TransitionPanel: duplicate period '" + o.period +
                                        "'");
    }
}

std::vector<std::string> TransitionPanel::period_labels() const {
    std::vector<std::string> out;
    out.reserve(observations.size());
    for (const auto& o : observations) out.push_back(o.period);
    return out;
}

bool TransitionPanel::row_ever_observed(int i) const {
    for (const auto& o : observations)
        if (o.row_observed(i)) return true;
    return false;
}

Eigen::MatrixXd average_matrix(const TransitionPanel& panel) {
    if (panel.observations.empty())
        throw std::invalid_argument("average_matrix: empty panel");
    const int rows = panel.scale.live_grades();
    const int cols = panel.scale.grade_count();
    Eigen::MatrixXd avg = Eigen::MatrixXd::Zero(rows, cols);
    for (int i = 0; i < rows; ++i) {
        int n = 0;
        for (const auto& o : panel.observations) {
            if (!o.row_observed(i)) continue;
            avg.row(i) += o.empirical.row(i);
            ++n;
        }
        if (n > 0) avg.row(i) /= static_cast<double>(n);
    }
    return avg;
}

MacroSeries::MacroSeries(std::vector<std::string> names, std::vector<std::string> periods,
                         Eigen::MatrixXd values)
    : variable_names(std::move(names)), periods(std::move(periods)),
      values(std::move(values)) {
    if (this->values.rows() != static_cast<Eigen::Index>(this->periods.size()) ||
        this->values.cols() != static_cast<Eigen::Index>(this->variable_names.size()))
        throw std::invalid_argument("MacroSeries: shape does not match labels");
    if (!this->values.allFinite())
        throw std::invalid_argument("MacroSeries: missing or non-finite values");
}

int MacroSeries::index_of(const std::string& name) const {
    for (std::size_t i = 0; i < variable_names.size(); ++i)
        if (variable_names[i] == name) return static_cast<int>(i);
    throw std::invalid_argument("MacroSeries: unknown variable '" + name + "'");
}

RebinMap::RebinMap(std::vector<std::pair<std::string, int>> entries)
    : entries_(std::move(entries)) {
    if (entries_.empty()) throw std::invalid_argument("RebinMap: empty map");
    int prev = entries_.front().second;
    std::set<std::string> seen;
    std::set<int> bins;
    for (const auto& [label, bin] : entries_) {
        if (bin < 1) throw std::invalid_argument("RebinMap: bins are 1-based");
        if (bin < prev)
            throw std::invalid_argument("RebinMap: bin order must follow agency order");
        if (!seen.insert(label).second)
            throw std::invalid_argument("RebinMap: duplicate agency label '" + label + "'");
        bins.insert(bin);
        prev = bin;
    }
    bin_count_ = *bins.rbegin();
    if (static_cast<int>(bins.size()) != bin_count_)
        throw std::invalid_argument("RebinMap: bins must cover 1..max without gaps");
}

const RebinMap& RebinMap::standard() {
    static const RebinMap map{{
        {"AAA", 1}, {"AA+", 1}, {"AA", 1},   {"AA-", 1},  {"A+", 1},  {"A", 1},
        {"A-", 1},  {"BBB+", 2}, {"BBB", 2}, {"BBB-", 2}, {"BB+", 3}, {"BB", 3},
        {"BB-", 4}, {"B+", 5},  {"B", 6},    {"B-", 6},   {"CCC+", 7}, {"CCC", 7},
        {"CCC-", 7}, {"CC", 8}, {"C", 8},    {"D", 9},
    }};
    return map;
}

int RebinMap::bin_of(const std::string& agency_label) const {
    for (const auto& [label, bin] : entries_)
        if (label == agency_label) return bin;
    throw std::invalid_argument("RebinMap: unknown agency label '" + agency_label + "'");
}

int rebin_label(const std::string& agency_label, const RebinMap& map) {
    return map.bin_of(agency_label);
}

ValidationReport validate_panel(const TransitionPanel& panel, const ClipPolicy&) {
    ValidationReport report;
    const int rows = panel.scale.live_grades();
    const int cols = panel.scale.grade_count();
    for (const auto& obs : panel.observations) {
        for (int i = 0; i < rows; ++i) {
            for (int j = 0; j < cols; ++j)
                if (obs.empirical(i, j) == 0.0) ++report.zero_cells;

            if (!obs.row_observed(i)) {
                report.unobserved_rows.push_back({obs.period, i + 1});
                continue;
            }
            const double sum = obs.empirical.row(i).sum();
            if (std::abs(sum - 1.0) > 5e-4)
                report.rounding_defects.push_back({obs.period, i + 1, sum});

            // Any interior cumulative sum pinned at 0 or 1 would hand
            // norm_inv_cdf an endpoint without clipping.
            double cum = 0.0;
            bool needs_clip = false;
            for (int j = 0; j < cols - 1; ++j) {
                cum += obs.empirical(i, j);
                if (cum <= 0.0 || cum >= 1.0) {
                    needs_clip = true;
                    break;
                }
            }
            if (needs_clip) report.rows_requiring_clip.push_back({obs.period, i + 1});
        }
    }
    return report;
}

}  // namespace rrl
