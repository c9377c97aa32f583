#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"
#include "trd/pipeline.hpp"

namespace trd {

/// `estimate(lo-hi)` at three decimals, e.g. `0.913(0.906-0.919)`; `NA` when undefined.
std::string format_estimate(std::optional<double> value, std::optional<Interval> ci);

/// One row per method: AUC, sensitivity, specificity, PPV, NPV and F1.
std::string discrimination_table_csv(const EvaluationReport& report);
/// cNRI and IDI of the DBN against each baseline.
std::string reclassification_table_csv(const EvaluationReport& report);
/// Alpha, beta, U and p-value per method.
std::string calibration_table_csv(const EvaluationReport& report);
nlohmann::json report_json(const EvaluationReport& report);

/// Writes `roc.csv`, `calibration.csv` and `riskdist.csv` into `dir`.
void emit_plot_data(const EvaluationReport& report, const std::filesystem::path& dir, int calibration_bins = 10);
std::string roc_csv(const EvaluationReport& report);
std::string reliability_csv(const EvaluationReport& report, int bins = 10);
std::string riskdist_csv(const EvaluationReport& report);

/// Metric rows against one column per slice count.
std::string ablation_table_csv(const AblationReport& report);
nlohmann::json ablation_json(const AblationReport& report);

std::string online_table_csv(const OnlineReport& report);
nlohmann::json online_json(const OnlineReport& report);

}  // namespace trd
