#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "trd/calibration.hpp"
#include "trd/cohort.hpp"
#include "trd/dbn.hpp"
#include "trd/metrics.hpp"
#include "trd/scores.hpp"
#include "trd/slicer.hpp"

namespace trd {

/// `stay_id,age,admission_type,chronic` with `;`-separated chronic conditions.
std::map<std::string, PatientContext> read_demographics_csv(std::istream& in);
std::map<std::string, PatientContext> read_demographics_csv(const std::filesystem::path& path);

/// Chronological evidence matrix: continuous nodes take transformed slice values, `m<Var>`
/// nodes the missingness indicator of `Var` and treatment nodes their flags.
Evidence series_to_evidence(const SliceSeries& series, const NetworkTemplate& tmpl, const VariableCatalog& catalog);
TrainingSet to_training_set(std::span<const SliceSeries> series, const NetworkTemplate& tmpl,
                            const VariableCatalog& catalog);

/// Per-series score values; SOFA on the earliest and the worst slice, the others on the worst slice.
struct BaselineScores {
    std::vector<double> sofa_first, sofa_max, qsofa, mews, sapsii;
    std::vector<std::string> warnings;
};

BaselineScores baseline_scores(std::span<const SliceSeries> series, const ScoreTables& tables,
                               const std::map<std::string, PatientContext>& demographics);

struct MethodEvaluation {
    std::string name;
    std::vector<double> probability;  // out-of-fold predicted probability of death
    std::vector<double> score;        // ranked for ROC and thresholded (raw score for qSOFA)
    double cutoff = 0.5;
    AucCI auc;
    Spread fold_auc;
    ConfusionMetrics confusion;
    std::optional<CoxCalibration> cox;
    std::vector<RocPoint> roc;
};

struct EvaluationConfig {
    int folds = 10;
    std::uint64_t seed = 0;
    double cutoff = 0.5;  // probability cutoff; qSOFA always uses its cut-point of 2
    std::vector<std::string> baselines = {"sofa", "qsofa", "mews", "sapsii"};
    /// Fit the score baselines once on the whole cohort instead of inside each training fold.
    bool global_baselines = false;
    EmConfig em;
    bool calibrate = true;
    TrendCalibrationConfig calibration;
    ReclassOptions reclass;
};

struct EvaluationReport {
    std::vector<std::string> stay_ids;
    std::vector<int> labels;
    std::vector<int> folds;
    std::vector<MethodEvaluation> methods;
    /// DBN against each baseline, keyed by baseline name.
    std::vector<std::pair<std::string, ReclassStats>> reclassification;
    std::vector<std::string> warnings;

    std::size_t deaths() const;
    const MethodEvaluation* method(std::string_view name) const;
};

/// Pooled out-of-fold predictions of a DBN refitted by EM in every patient-grouped fold.
std::vector<double> dbn_cross_validated(const TrainingSet& data, std::span<const int> folds, int k,
                                        const NetworkTemplate& tmpl, const EmConfig& em,
                                        std::vector<std::string>* warnings = nullptr,
                                        const TrendCalibrationConfig* calibration = nullptr,
                                        std::vector<double>* calibrated = nullptr);

/// Scores every method with the same fold assignment and cutoff.
MethodEvaluation evaluate_method(std::string name, std::vector<double> probability, std::vector<double> score,
                                 double cutoff, std::span<const int> labels, std::span<const int> folds);

EvaluationReport evaluate_cohort(std::span<const SliceSeries> series, const NetworkTemplate& tmpl,
                                 const VariableCatalog& catalog, const ScoreTables* tables,
                                 const std::map<std::string, PatientContext>& demographics,
                                 const EvaluationConfig& config);

struct AblationReport {
    std::vector<int> slice_counts;
    std::vector<AucCI> auc;
    std::vector<Spread> fold_auc;
    std::vector<std::size_t> n;
};

/// DBN cross-validated AUC for each slice count, sharing one fold assignment.
AblationReport run_ablation(std::span<const PatientStay> stays, const VariableCatalog& catalog,
                            const NetworkTemplate& tmpl, const SliceConfig& base, std::span<const int> slice_counts,
                            const EvaluationConfig& config);

struct OnlineResult {
    std::string name;
    int horizon_hours = 0;
    std::size_t n = 0, deaths = 0;
    std::optional<double> auc;
    std::optional<Interval> ci;
    std::vector<double> predictions;
    std::vector<int> labels;
};

struct OnlineReport {
    std::vector<OnlineResult> sets;
    std::size_t training_size = 0;
    std::vector<std::string> warnings;
};

/// Trains on rolled-back series of the stays not held out, then predicts each validation set:
/// clockwise sets look ahead by the horizon, post-discharge sets use the rolled-back slices.
OnlineReport run_online_validation(std::span<const PatientStay> stays, const VariableCatalog& catalog,
                                   const NetworkTemplate& tmpl, const SliceConfig& config, std::uint64_t seed,
                                   const EmConfig& em);

}  // namespace trd
