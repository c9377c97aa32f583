#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"

#include "trd/common.hpp"

namespace trd {

enum class VariableKind { vital, lab, blood_gas, scale, treatment_indicator };
enum class LoopbackClass { vitals, labs };

std::string to_string(VariableKind kind);
VariableKind variable_kind_from_string(std::string_view s);

/// Normalizing transform applied before a value enters the network.
struct Transform {
    enum class Kind { none, log10, boxcox };
    Kind kind = Kind::none;
    double lambda = 1.0;

    static Transform parse(std::string_view s);  // "none" | "log10" | "boxcox(<lambda>)"
    std::string to_string() const;
    bool operator==(const Transform&) const = default;
};

struct VariableSpec {
    std::string name;
    VariableKind kind = VariableKind::vital;
    std::string unit;
    double lo = 0;
    double hi = 0;
    Transform transform;
    LoopbackClass loopback = LoopbackClass::vitals;
    std::vector<std::string> aliases;

    bool in_range(double v) const { return v >= lo && v <= hi; }
    bool is_treatment() const { return kind == VariableKind::treatment_indicator; }
    bool operator==(const VariableSpec&) const = default;
};

/// Network node names that every catalog must define exactly once.
const std::vector<std::string>& required_catalog_variables();

class VariableCatalog {
public:
    VariableCatalog() = default;
    explicit VariableCatalog(std::vector<VariableSpec> entries);
    /// Skips the required-network-variable check; for small fixtures.
    static VariableCatalog partial(std::vector<VariableSpec> entries);

    static VariableCatalog load(const std::filesystem::path& path);
    static VariableCatalog from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;

    /// Lookup by canonical name or alias.
    const VariableSpec* find(std::string_view name) const;
    const VariableSpec& at(std::string_view name) const;
    const std::vector<VariableSpec>& entries() const { return entries_; }
    /// Non-treatment variables in catalog order.
    std::vector<std::string> measurement_names() const;
    std::vector<std::string> treatment_names() const;

    void set_transform(std::string_view name, Transform t);

private:
    void validate(bool require_network_variables) const;
    void reindex();

    std::vector<VariableSpec> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

struct ObservationEvent {
    std::string stay_id;
    std::string patient_id;
    Timestamp timestamp = 0;
    std::string variable;  // canonical catalog key
    double value = 0;
    VariableKind kind = VariableKind::vital;
    bool suspect = false;  // outside the catalog's plausible range; retained

    bool operator==(const ObservationEvent&) const = default;
};

struct PatientStay {
    std::string stay_id;
    std::string patient_id;
    Timestamp admit_ts = 0;
    Timestamp discharge_ts = 0;
    bool died_in_icu = false;
    std::optional<Timestamp> death_ts;
    std::vector<ObservationEvent> observations;  // sorted by timestamp

    bool operator==(const PatientStay&) const = default;
};

struct RejectedRow {
    std::size_t line = 0;
    std::string reason;
    bool operator==(const RejectedRow&) const = default;
};

struct IngestResult {
    std::vector<PatientStay> stays;  // outcomes-file order
    std::vector<RejectedRow> rejected;
    std::size_t rows_read = 0;
    std::size_t rows_accepted = 0;
    std::size_t suspect_count = 0;

    bool operator==(const IngestResult&) const = default;
};

/// Reads the observations and outcomes CSVs and joins them by stay.
IngestResult ingest_observations(std::istream& observations, std::istream& outcomes,
                                 const VariableCatalog& catalog);
IngestResult ingest_observations(const std::filesystem::path& observations,
                                 const std::filesystem::path& outcomes, const VariableCatalog& catalog);

std::vector<PatientStay> read_outcomes(std::istream& outcomes);

/// Type-7 (linear interpolation between closest ranks) sample quantile.
double quantile_type7(std::span<const double> sorted, double p);

struct MedianIqr {
    std::size_t n = 0;
    double median = 0;
    double q1 = 0;
    double q3 = 0;
};

MedianIqr median_iqr(std::vector<double> values);
/// Renders as `median(q1, q3)`, e.g. `1.3(1, 1.8)`.
std::string format_median_iqr(const MedianIqr& s);

struct CohortSummary {
    std::size_t survivors = 0;
    std::size_t non_survivors = 0;
    std::size_t total() const { return survivors + non_survivors; }
    struct Row {
        std::string variable;
        std::optional<MedianIqr> survivor, non_survivor, total;
    };
    std::vector<Row> rows;

    std::string to_csv() const;
};

/// Per-variable median and IQR by survivorship at the slice closest to discharge.
CohortSummary summarize_cohort(std::span<const PatientStay> stays, const VariableCatalog& catalog);

}  // namespace trd
