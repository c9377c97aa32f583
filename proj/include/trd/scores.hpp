#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "trd/common.hpp"

namespace trd {

struct TimeSlice;

/// Raw (catalog-unit) inputs keyed by variable name; absent keys are missing.
using ScoreInputs = std::map<std::string, double>;

/// Half-open band; `closed_right` selects `(lo, hi]` instead of `[lo, hi)`.
struct Band {
    double lo = 0;
    double hi = 0;
    int points = 0;
};

/// A scalar fed into the bands: `scale * numerator / denominator`.
struct ScoreInput {
    std::string numerator;
    std::optional<std::string> denominator;
    double scale = 1.0;

    std::optional<double> evaluate(const ScoreInputs& inputs) const;
    std::string describe() const;
};

struct Criterion {
    ScoreInput input;
    bool closed_right = false;
    std::vector<Band> bands;

    int points_for(double x) const;
    int max_points() const;
};

/// An organ-system or physiologic item; scores the worst (max) of its criteria.
struct ScoreComponent {
    std::string name;
    std::vector<Criterion> criteria;
};

/// Categorical item such as SAPS-II admission type; multiple keys score their maximum.
struct CategoricalComponent {
    std::string name;
    std::map<std::string, int> points;
    int max_points() const;
};

struct ScoreTable {
    std::string name;
    std::string version;
    std::vector<ScoreComponent> components;
    std::vector<CategoricalComponent> categorical;

    static ScoreTable load(const std::filesystem::path& path);
    static ScoreTable from_json(const nlohmann::json& j);
    /// Fails fast on any gap, overlap, unsorted band, or negative points.
    void audit() const;
    int max_score() const;
};

struct ScoreTables {
    ScoreTable sofa, qsofa, mews, sapsii;
    static ScoreTables load(const std::filesystem::path& dir = tables_dir());
};

struct ScoreResult {
    std::string stay_id;
    std::string qualifier;  // slice index, "first" or "max"
    int score = 0;
    std::map<std::string, int> components;
    /// Components with no usable input; they contribute 0 points (normal assumed).
    std::set<std::string> missing;
    std::optional<bool> positive;  // qSOFA only

    bool any_missing() const { return !missing.empty(); }
};

/// Categorical inputs for SAPS-II.
struct PatientContext {
    std::optional<double> age;
    std::optional<std::string> admission_type;  // scheduled_surgical | medical | unscheduled_surgical
    std::set<std::string> chronic;              // metastatic_cancer | hematologic_malignancy | aids
};

ScoreResult compute_score(const ScoreTable& table, const ScoreInputs& inputs,
                          const std::map<std::string, std::set<std::string>>& categorical = {});

ScoreResult sofa_score(const ScoreTable& table, const ScoreInputs& inputs);
/// Positive iff the score reaches the recommended cut-point of 2.
ScoreResult qsofa_score(const ScoreTable& table, const ScoreInputs& inputs);
ScoreResult mews_score(const ScoreTable& table, const ScoreInputs& inputs);
ScoreResult sapsii_score(const ScoreTable& table, const ScoreInputs& inputs, const PatientContext& patient);

inline constexpr int kQsofaCutPoint = 2;

/// Raw slice values plus treatment flags (0/1) as score inputs.
ScoreInputs score_inputs(const TimeSlice& slice);

/// SAPS-II probability of death; `log` is the natural logarithm.
double sapsii_mortality(int score);

struct LogisticBaseline {
    double intercept = 0;
    double slope = 0;
    std::string fitted_on;
    int iterations = 0;
    double log_likelihood = 0;
    bool converged = false;
};

class SeparationError : public NumericalError {
    using NumericalError::NumericalError;
};

/// Maximum-likelihood fit by IRLS; stops when the log-likelihood moves by < 1e-10 or after
/// 100 iterations. Throws SeparationError on complete or quasi-complete separation.
LogisticBaseline fit_univariate_logistic(std::span<const double> x, std::span<const int> y,
                                         std::string fitted_on = {});
double predict_logistic(const LogisticBaseline& model, double x);

double logistic(double z);
double logit(double p);

}  // namespace trd
