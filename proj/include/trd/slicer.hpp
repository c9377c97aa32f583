#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "trd/cohort.hpp"

namespace trd {

enum class Anchoring { rolled_back, clockwise };

std::string to_string(Anchoring a);
Anchoring anchoring_from_string(std::string_view s);

/// Windowing parameters. Every slice owns a vitals window `[end - interval, end)` and a lab
/// window `[end - (labs_loopback - vitals_loopback), end)`. Rolled-back slice k ends at
/// `discharge - vitals_loopback - k*interval`; clockwise slice k ends at `admit + (k+1)*interval`.
struct SliceConfig {
    int interval_hours = 4;
    int n_slices = 3;
    int vitals_loopback_hours = 4;
    int labs_loopback_hours = 16;
    Anchoring anchoring = Anchoring::rolled_back;

    void validate() const;
    /// Non-fatal remarks, e.g. an interval outside {4, 8, 12}.
    std::vector<std::string> warnings() const;
};

/// Variables that receive a missingness indicator column.
inline const std::array<std::string, 4> kIndicatorVariables = {"Lactate", "PaO2", "FiO2", "PaCO2"};

/// Horizons (hours) for which outcome labels are derived.
inline constexpr std::array<int, 2> kLabelHorizons = {12, 24};

struct TimeSlice {
    int index = 0;
    Timestamp vitals_start = 0, vitals_end = 0;
    Timestamp labs_start = 0, labs_end = 0;
    /// Raw values in catalog units; transforms are applied when building network evidence.
    std::map<std::string, std::optional<double>> values;
    std::map<std::string, bool> missing_indicators;
    std::map<std::string, bool> treatments;

    std::optional<double> value(const std::string& name) const;
    bool operator==(const TimeSlice&) const = default;
};

struct HorizonLabels {
    bool icu_death_12h = false;
    bool icu_death_24h = false;
    bool post_discharge_death_12h = false;
    bool post_discharge_death_24h = false;
    /// In-ICU death before the end of the last (chronological) slice.
    bool died_before_prediction = false;

    bool icu_death_within(int hours) const;
    bool post_discharge_death_within(int hours) const;
    bool operator==(const HorizonLabels&) const = default;
};

/// Slices are indexed as built: rolled-back index 0 is nearest discharge (so later indices are
/// earlier in time); clockwise index 0 starts at admission.
struct SliceSeries {
    std::string stay_id;
    std::string patient_id;
    Anchoring anchoring = Anchoring::rolled_back;
    Timestamp anchor_ts = 0;
    std::vector<TimeSlice> slices;
    bool label = false;
    HorizonLabels horizon;
    /// Some window reaches outside the stay, so early slices may be all-missing.
    bool truncated = false;

    /// Slices ordered earliest first, regardless of anchoring.
    std::vector<const TimeSlice*> chronological() const;
    bool operator==(const SliceSeries&) const = default;
};

/// Mean of non-suspect measurements of `variable` in `[start, end)`; absent when none.
std::optional<double> aggregate_window(const PatientStay& stay, std::string_view variable, Timestamp start,
                                       Timestamp end);

SliceSeries build_rolled_back_series(const PatientStay& stay, const VariableCatalog& catalog,
                                     const SliceConfig& config);
SliceSeries build_clockwise_series(const PatientStay& stay, const VariableCatalog& catalog,
                                   const SliceConfig& config);
SliceSeries build_series(const PatientStay& stay, const VariableCatalog& catalog, const SliceConfig& config);
std::vector<SliceSeries> build_all_series(std::span<const PatientStay> stays, const VariableCatalog& catalog,
                                          const SliceConfig& config);

/// Throws DomainError naming `variable` for non-positive input to a log-type transform.
double apply_transform(double value, const Transform& transform, std::string_view variable = {});
double invert_transform(double value, const Transform& transform);

/// Maximum-likelihood Box-Cox lambda on the grid -2.0, -1.9, ..., 2.0.
double fit_boxcox_lambda(std::span<const double> positive_values);
/// Refits lambda for every boxcox catalog entry using the stays' in-range values.
void fit_boxcox_transforms(VariableCatalog& catalog, std::span<const PatientStay> stays);

struct ValidationSet {
    std::string name;
    int horizon_hours = 12;
    std::vector<SliceSeries> series;
    std::vector<int> labels;
};

/// Set 1: clockwise series, in-ICU death within 12h/24h after the last slice.
/// Set 2: rolled-back series, death within 12h/24h after discharge.
/// Each set pairs its deaths with the same seeded 10% sample of survivors.
struct OnlineValidation {
    ValidationSet icu_12h, icu_24h, post_12h, post_24h;
    std::set<std::string> excluded_patients;
    std::set<std::string> excluded_stays;

    bool excludes(const PatientStay& stay) const;
    std::vector<const ValidationSet*> sets() const { return {&icu_12h, &icu_24h, &post_12h, &post_24h}; }
};

/// Indices of a seeded `fraction` sample of `n` items (rounded to nearest, ascending order).
std::vector<std::size_t> sample_fraction(std::size_t n, double fraction, std::uint64_t seed);

OnlineValidation build_online_validation_sets(std::span<const PatientStay> stays, const VariableCatalog& catalog,
                                              const SliceConfig& config, std::uint64_t seed);

std::string slices_to_csv(std::span<const SliceSeries> series, const VariableCatalog& catalog);
std::vector<SliceSeries> read_slices_csv(std::istream& in, const VariableCatalog& catalog);

}  // namespace trd
