#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace trd {

struct Interval {
    double lo = 0;
    double hi = 0;
};

struct RocPoint {
    double fpr = 0;
    double tpr = 0;
    double threshold = 0;  // +inf for the (0, 0) corner
};

/// Threshold sweep from +inf down to the minimum score; both coordinates non-decreasing.
std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const int> labels);

/// Mann-Whitney AUC with ties counted one half. Throws ValidationError unless both classes occur.
double roc_auc(std::span<const double> scores, std::span<const int> labels);

struct AucCI {
    double auc = 0;  // mean of per-fold AUCs
    double se = 0;
    Interval ci;
    bool degenerate = false;  // zero influence, zero-width interval
    std::vector<int> skipped_folds;
    std::vector<std::string> warnings;
};

/// Cross-validated AUC with a Wald 95% interval from the empirical influence curve of the
/// rank statistic; folds holding a single class are skipped.
AucCI auc_ci(std::span<const double> scores, std::span<const int> labels, std::span<const int> folds);

struct ConfusionMetrics {
    double cutoff = 0;
    std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
    /// Absent when the denominator is zero.
    std::optional<double> sensitivity, specificity, ppv, npv, f1;
    /// Wilson 95% intervals for the four proportions.
    std::optional<Interval> sensitivity_ci, specificity_ci, ppv_ci, npv_ci;
};

/// A case is predicted positive when its score is at least `cutoff`.
ConfusionMetrics confusion_metrics(std::span<const double> scores, std::span<const int> labels, double cutoff);

std::optional<Interval> wilson_interval(std::size_t successes, std::size_t trials, double z = 1.959963984540054);

/// Mean of per-fold values with a 95% interval from their standard error, clamped to [lo, hi].
struct Spread {
    double mean = 0;
    Interval ci;
};
Spread fold_spread(std::span<const double> values, double lo = 0, double hi = 1);

struct ReclassStats {
    double cnri = 0;
    Interval cnri_ci;
    double idi = 0;
    Interval idi_ci;
    bool bootstrap = false;
    std::vector<std::string> warnings;
};

struct ReclassOptions {
    bool bootstrap = false;
    int replicates = 1000;
    std::uint64_t seed = 0;
};

double cnri(std::span<const double> p_initial, std::span<const double> p_updated, std::span<const int> labels);
double idi(std::span<const double> p_initial, std::span<const double> p_updated, std::span<const int> labels);

/// cNRI and IDI with asymptotic normal intervals, or percentile bootstrap when requested.
ReclassStats reclassification(std::span<const double> p_initial, std::span<const double> p_updated,
                              std::span<const int> labels, const ReclassOptions& options = {});

}  // namespace trd
