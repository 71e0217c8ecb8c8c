#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "rrl/domain.hpp"
#include "rrl/macrorisk.hpp"
#include "rrl/onefactor.hpp"
#include "rrl/simlab.hpp"

namespace rrl::io {

enum class Units { auto_detect, percent, fraction };

// Locale-independent double formatting at 12 significant digits (CSV files);
// integers print without an exponent.
std::string format_double(double v);

// FNV-1a 64-bit digest of a file's bytes, as 16 hex characters.
std::string file_digest(const std::filesystem::path& path);

// --- CSV primitives ------------------------------------------------------

std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path);
void write_csv(const std::filesystem::path& path,
               const std::vector<std::vector<std::string>>& rows);

// --- panel ingestion ------------------------------------------------------

// Long format: header `period,from,to,count`; counts accumulate per cell.
// Grade order comes from `grades` when given, otherwise inferred (numeric
// labels sort numerically; anything else needs the explicit list).
TransitionPanel read_long_panel(const std::filesystem::path& path,
                                const std::vector<std::string>& grades = {});

// Per-period matrices: header `from,<grade1>,...,<gradeK>`; one file per
// period, period label taken from the file stem. Percent vs fraction units
// are detected from row sums unless forced.
TransitionPanel read_period_matrix_files(const std::vector<std::filesystem::path>& paths,
                                         Units units = Units::auto_detect);

bool looks_like_long_panel(const std::filesystem::path& path);

void write_period_matrix_csv(const std::filesystem::path& path, const RatingScale& scale,
                             const Eigen::MatrixXd& matrix);

// --- macro / scenario -----------------------------------------------------

MacroSeries read_macro_csv(const std::filesystem::path& path);
macrorisk::MacroScenario read_scenario_csv(const std::filesystem::path& path);
void write_macro_csv(const std::filesystem::path& path, const MacroSeries& macro);

// --- panel emission (long format) ------------------------------------------

void write_long_panel_csv(const std::filesystem::path& path,
                          const TransitionPanel& panel);

// --- model fit JSON ---------------------------------------------------------

nlohmann::ordered_json onefactor_fit_json(const RatingScale& scale,
                                          const onefactor::OneFactorFit& fit);
nlohmann::ordered_json macrorisk_fit_json(const RatingScale& scale,
                                          const macrorisk::MacroRiskFit& fit);
// Rebuilds a macro-risk fit from its JSON export (residual series is not
// serialized and comes back empty).
std::pair<RatingScale, macrorisk::MacroRiskFit> macrorisk_fit_from_json(
    const nlohmann::ordered_json& doc);

// --- simulation config / report ---------------------------------------------

simlab::SimulationConfig simulation_config_from_json(const nlohmann::ordered_json& doc);
nlohmann::ordered_json simulation_config_json(const simlab::SimulationConfig& cfg);

void write_comparison_report(const std::filesystem::path& out_dir,
                             const simlab::ComparisonReport& report,
                             const simlab::SimulationConfig& cfg);

}  // namespace rrl::io
