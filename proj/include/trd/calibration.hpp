#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace trd {

/// Piecewise-linear score-to-probability map; flat beyond the end knots, clamped to [0, 1].
struct CalibrationMap {
    std::vector<double> knots;   // strictly increasing scores in [0, 1]
    std::vector<double> values;  // calibrated probability at each knot
    double lambda = 0;
    int ensemble_size = 1;
    bool identity_fallback = false;
    std::vector<std::string> warnings;

    static CalibrationMap identity();
    nlohmann::json to_json() const;
    static CalibrationMap from_json(const nlohmann::json& j);
};

double apply_calibration(const CalibrationMap& map, double score);
std::vector<double> apply_calibration(const CalibrationMap& map, std::span<const double> scores);

struct TrendFilterResult {
    std::vector<double> x;
    double objective = 0;
    double duality_gap = 0;
    int iterations = 0;
};

/// Minimizes `0.5*|y - x|^2 + lambda * sum |x[i+1] - 2x[i] + x[i-1]|` by ADMM on the
/// second-difference operator, until the duality gap drops below `gap_tol`.
TrendFilterResult l1_trend_filter(std::span<const double> y, double lambda, double gap_tol = 1e-8,
                                  int max_iter = 200000);

struct TrendCalibrationConfig {
    std::vector<double> lambda_grid = {0, 1e-3, 3e-3, 1e-2, 3e-2, 0.1, 0.3, 1};
    int bins = 50;
    int ensemble = 10;
    int cv_folds = 5;
    std::uint64_t seed = 0;
};

/// Ensemble of trend-filtered reliability curves over equal-frequency bins with jittered edges;
/// lambda is chosen by held-out log-loss. Falls back to the identity map if the fit would
/// worsen log-loss on the fitting data.
CalibrationMap l1_trend_calibrate(std::span<const double> scores, std::span<const int> labels,
                                  const TrendCalibrationConfig& config = {});

/// Equal-frequency bins whose edges never split tied scores: `x` bin mean score, `y` event rate.
struct Binned {
    std::vector<double> x, y, count;
};
Binned bin_scores(std::span<const double> scores, std::span<const int> labels, int bins, double offset,
                  std::vector<std::string>* warnings = nullptr);

inline constexpr double kProbClamp = 1e-6;
double clamp_probability(double p);

/// Mean negative log-likelihood with predictions clamped to [1e-6, 1 - 1e-6].
double log_loss(std::span<const double> p, std::span<const int> labels);

/// Expected calibration error over equal-width bins.
double expected_calibration_error(std::span<const double> p, std::span<const int> labels, int bins = 10);

struct CoxCalibration {
    double alpha = 0;
    double beta = 1;
    double chi2 = 0;  // likelihood ratio against (alpha, beta) = (0, 1)
    double U = 0;     // (chi2 - 2) / n
    double p_value = 1;
    bool separation = false;
    std::size_t n = 0;
};

/// Logistic regression of outcomes on predicted log-odds.
CoxCalibration cox_calibration(std::span<const double> p, std::span<const int> labels);

}  // namespace trd
