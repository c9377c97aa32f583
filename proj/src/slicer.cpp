#include "trd/slicer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_map>

namespace trd {

std::string to_string(Anchoring a) { return a == Anchoring::rolled_back ? "rolled-back" : "clockwise"; }

Anchoring anchoring_from_string(std::string_view s) {
    if (s == "rolled-back" || s == "rolled_back") return Anchoring::rolled_back;
    if (s == "clockwise") return Anchoring::clockwise;
    throw ValidationError("unknown anchoring '" + std::string(s) + "'");
}

void SliceConfig::validate() const {
    if (interval_hours <= 0) throw ValidationError("interval_hours must be positive");
    if (n_slices <= 0) throw ValidationError("n_slices must be positive");
    if (vitals_loopback_hours <= 0) throw ValidationError("vitals loopback must be positive");
    if (labs_loopback_hours <= vitals_loopback_hours)
        throw ValidationError("labs loopback must exceed vitals loopback");
}

std::vector<std::string> SliceConfig::warnings() const {
    std::vector<std::string> out;
    if (interval_hours != 4 && interval_hours != 8 && interval_hours != 12)
        out.push_back("interval of " + std::to_string(interval_hours) +
                      "h is outside the evaluated 4/8/12-hour settings");
    return out;
}

std::optional<double> TimeSlice::value(const std::string& name) const {
    auto it = values.find(name);
    return it == values.end() ? std::nullopt : it->second;
}

bool HorizonLabels::icu_death_within(int hours) const {
    if (hours == 12) return icu_death_12h;
    if (hours == 24) return icu_death_24h;
    throw ValidationError("unsupported horizon " + std::to_string(hours));
}

bool HorizonLabels::post_discharge_death_within(int hours) const {
    if (hours == 12) return post_discharge_death_12h;
    if (hours == 24) return post_discharge_death_24h;
    throw ValidationError("unsupported horizon " + std::to_string(hours));
}

std::vector<const TimeSlice*> SliceSeries::chronological() const {
    std::vector<const TimeSlice*> out;
    for (const auto& s : slices) out.push_back(&s);
    if (anchoring == Anchoring::rolled_back) std::reverse(out.begin(), out.end());
    return out;
}

std::optional<double> aggregate_window(const PatientStay& stay, std::string_view variable, Timestamp start,
                                       Timestamp end) {
    const auto& obs = stay.observations;
    auto it = std::lower_bound(obs.begin(), obs.end(), start,
                               [](const ObservationEvent& e, Timestamp t) { return e.timestamp < t; });
    double sum = 0;
    std::size_t n = 0;
    for (; it != obs.end() && it->timestamp < end; ++it) {
        if (it->variable != variable || it->suspect) continue;
        sum += it->value;
        ++n;
    }
    if (n == 0) return std::nullopt;
    return n == 1 ? sum : sum / static_cast<double>(n);
}

namespace {

bool any_treatment(const PatientStay& stay, const std::string& variable, Timestamp start, Timestamp end) {
    const auto& obs = stay.observations;
    auto it = std::lower_bound(obs.begin(), obs.end(), start,
                               [](const ObservationEvent& e, Timestamp t) { return e.timestamp < t; });
    for (; it != obs.end() && it->timestamp < end; ++it)
        if (it->variable == variable && it->value > 0) return true;
    return false;
}

TimeSlice make_slice(const PatientStay& stay, const VariableCatalog& catalog, const SliceConfig& config,
                     int index, Timestamp end) {
    TimeSlice s;
    s.index = index;
    s.vitals_end = s.labs_end = end;
    s.vitals_start = end - static_cast<Timestamp>(config.interval_hours) * kSecondsPerHour;
    s.labs_start =
        end - static_cast<Timestamp>(config.labs_loopback_hours - config.vitals_loopback_hours) * kSecondsPerHour;
    for (const auto& spec : catalog.entries()) {
        if (spec.is_treatment()) {
            s.treatments[spec.name] = any_treatment(stay, spec.name, s.vitals_start, s.vitals_end);
            continue;
        }
        const bool lab = spec.loopback == LoopbackClass::labs;
        s.values[spec.name] = aggregate_window(stay, spec.name, lab ? s.labs_start : s.vitals_start,
                                               lab ? s.labs_end : s.vitals_end);
    }
    for (const auto& v : kIndicatorVariables)
        if (catalog.find(v)) s.missing_indicators[v] = !s.value(v).has_value();
    return s;
}

void assign_labels(SliceSeries& series, const PatientStay& stay, Timestamp prediction_point) {
    series.label = stay.died_in_icu;
    auto& h = series.horizon;
    if (stay.died_in_icu && stay.death_ts) {
        const Timestamp d = *stay.death_ts;
        h.died_before_prediction = d < prediction_point;
        h.icu_death_12h = d >= prediction_point && d - prediction_point <= 12 * kSecondsPerHour;
        h.icu_death_24h = d >= prediction_point && d - prediction_point <= 24 * kSecondsPerHour;
    }
    if (!stay.died_in_icu && stay.death_ts && *stay.death_ts > stay.discharge_ts) {
        const Timestamp after = *stay.death_ts - stay.discharge_ts;
        h.post_discharge_death_12h = after <= 12 * kSecondsPerHour;
        h.post_discharge_death_24h = after <= 24 * kSecondsPerHour;
    }
}

}  // namespace

SliceSeries build_rolled_back_series(const PatientStay& stay, const VariableCatalog& catalog,
                                     const SliceConfig& config) {
    config.validate();
    SliceSeries series;
    series.stay_id = stay.stay_id;
    series.patient_id = stay.patient_id;
    series.anchoring = Anchoring::rolled_back;
    series.anchor_ts = stay.discharge_ts;
    const Timestamp lead = static_cast<Timestamp>(config.vitals_loopback_hours) * kSecondsPerHour;
    const Timestamp step = static_cast<Timestamp>(config.interval_hours) * kSecondsPerHour;
    for (int k = 0; k < config.n_slices; ++k) {
        series.slices.push_back(make_slice(stay, catalog, config, k, stay.discharge_ts - lead - k * step));
        const auto& s = series.slices.back();
        if (std::min(s.vitals_start, s.labs_start) < stay.admit_ts) series.truncated = true;
    }
    assign_labels(series, stay, series.slices.front().vitals_end);
    return series;
}

SliceSeries build_clockwise_series(const PatientStay& stay, const VariableCatalog& catalog,
                                   const SliceConfig& config) {
    config.validate();
    SliceSeries series;
    series.stay_id = stay.stay_id;
    series.patient_id = stay.patient_id;
    series.anchoring = Anchoring::clockwise;
    series.anchor_ts = stay.admit_ts;
    const Timestamp step = static_cast<Timestamp>(config.interval_hours) * kSecondsPerHour;
    for (int k = 0; k < config.n_slices; ++k) {
        series.slices.push_back(make_slice(stay, catalog, config, k, stay.admit_ts + (k + 1) * step));
        if (series.slices.back().vitals_end > stay.discharge_ts) series.truncated = true;
    }
    assign_labels(series, stay, series.slices.back().vitals_end);
    return series;
}

SliceSeries build_series(const PatientStay& stay, const VariableCatalog& catalog, const SliceConfig& config) {
    return config.anchoring == Anchoring::rolled_back ? build_rolled_back_series(stay, catalog, config)
                                                      : build_clockwise_series(stay, catalog, config);
}

std::vector<SliceSeries> build_all_series(std::span<const PatientStay> stays, const VariableCatalog& catalog,
                                          const SliceConfig& config) {
    std::vector<SliceSeries> out;
    out.reserve(stays.size());
    for (const auto& s : stays) out.push_back(build_series(s, catalog, config));
    return out;
}

double apply_transform(double value, const Transform& transform, std::string_view variable) {
    switch (transform.kind) {
    case Transform::Kind::none: return value;
    case Transform::Kind::log10:
        if (!(value > 0))
            throw DomainError("log10 transform of non-positive value " + format_double(value) + " for '" +
                              std::string(variable) + "'");
        return std::log10(value);
    case Transform::Kind::boxcox:
        if (!(value > 0))
            throw DomainError("boxcox transform of non-positive value " + format_double(value) + " for '" +
                              std::string(variable) + "'");
        if (transform.lambda == 0.0) return std::log(value);
        return (std::pow(value, transform.lambda) - 1.0) / transform.lambda;
    }
    return value;
}

double invert_transform(double value, const Transform& transform) {
    switch (transform.kind) {
    case Transform::Kind::none: return value;
    case Transform::Kind::log10: return std::pow(10.0, value);
    case Transform::Kind::boxcox:
        if (transform.lambda == 0.0) return std::exp(value);
        return std::pow(transform.lambda * value + 1.0, 1.0 / transform.lambda);
    }
    return value;
}

double fit_boxcox_lambda(std::span<const double> values) {
    if (values.size() < 2) throw ValidationError("boxcox fit needs at least two values");
    double sum_log = 0;
    for (double v : values) {
        if (!(v > 0)) throw DomainError("boxcox fit requires positive values");
        sum_log += std::log(v);
    }
    const double n = static_cast<double>(values.size());
    double best_lambda = 1.0;
    double best_ll = -std::numeric_limits<double>::infinity();
    for (int k = -20; k <= 20; ++k) {
        const Transform t{Transform::Kind::boxcox, k / 10.0};
        double mean = 0;
        for (double v : values) mean += apply_transform(v, t);
        mean /= n;
        double var = 0;
        for (double v : values) {
            const double d = apply_transform(v, t) - mean;
            var += d * d;
        }
        var /= n;
        if (!(var > 0)) continue;
        const double ll = -0.5 * n * std::log(var) + (t.lambda - 1.0) * sum_log;
        if (ll > best_ll) {
            best_ll = ll;
            best_lambda = t.lambda;
        }
    }
    return best_lambda;
}

void fit_boxcox_transforms(VariableCatalog& catalog, std::span<const PatientStay> stays) {
    for (const auto& spec : std::vector<VariableSpec>(catalog.entries())) {
        if (spec.transform.kind != Transform::Kind::boxcox) continue;
        std::vector<double> values;
        for (const auto& stay : stays)
            for (const auto& ev : stay.observations)
                if (ev.variable == spec.name && !ev.suspect && ev.value > 0) values.push_back(ev.value);
        if (values.size() < 2) continue;
        catalog.set_transform(spec.name, {Transform::Kind::boxcox, fit_boxcox_lambda(values)});
    }
}

bool OnlineValidation::excludes(const PatientStay& stay) const {
    return excluded_patients.contains(stay.patient_id) || excluded_stays.contains(stay.stay_id);
}

std::vector<std::size_t> sample_fraction(std::size_t n, double fraction, std::uint64_t seed) {
    const auto k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::mt19937_64 rng(seed);
    // Partial Fisher-Yates; std::shuffle's draw pattern is not pinned by the standard.
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng() % (n - i));
        std::swap(idx[i], idx[j]);
    }
    idx.resize(k);
    std::sort(idx.begin(), idx.end());
    return idx;
}

OnlineValidation build_online_validation_sets(std::span<const PatientStay> stays, const VariableCatalog& catalog,
                                              const SliceConfig& config, std::uint64_t seed) {
    if (stays.empty()) throw ValidationError("online validation needs a non-empty cohort");
    SliceConfig clockwise = config;
    clockwise.anchoring = Anchoring::clockwise;
    SliceConfig rolled = config;
    rolled.anchoring = Anchoring::rolled_back;

    std::vector<std::size_t> survivors;
    for (std::size_t i = 0; i < stays.size(); ++i)
        if (!stays[i].died_in_icu && !stays[i].death_ts) survivors.push_back(i);
    std::vector<std::size_t> chosen;
    for (auto k : sample_fraction(survivors.size(), 0.10, seed)) chosen.push_back(survivors[k]);

    OnlineValidation out;
    out.icu_12h = {"in-icu-12h", 12, {}, {}};
    out.icu_24h = {"in-icu-24h", 24, {}, {}};
    out.post_12h = {"after-discharge-12h", 12, {}, {}};
    out.post_24h = {"after-discharge-24h", 24, {}, {}};

    for (std::size_t i = 0; i < stays.size(); ++i) {
        const auto& stay = stays[i];
        if (stay.died_in_icu) {
            auto s = build_clockwise_series(stay, catalog, clockwise);
            for (auto* set : {&out.icu_12h, &out.icu_24h})
                if (s.horizon.icu_death_within(set->horizon_hours)) {
                    set->series.push_back(s);
                    set->labels.push_back(1);
                }
        } else if (stay.death_ts) {
            auto s = build_rolled_back_series(stay, catalog, rolled);
            for (auto* set : {&out.post_12h, &out.post_24h})
                if (s.horizon.post_discharge_death_within(set->horizon_hours)) {
                    set->series.push_back(s);
                    set->labels.push_back(1);
                }
        }
    }
    for (auto i : chosen) {
        const auto cw = build_clockwise_series(stays[i], catalog, clockwise);
        const auto rb = build_rolled_back_series(stays[i], catalog, rolled);
        for (auto* set : {&out.icu_12h, &out.icu_24h}) {
            set->series.push_back(cw);
            set->labels.push_back(0);
        }
        for (auto* set : {&out.post_12h, &out.post_24h}) {
            set->series.push_back(rb);
            set->labels.push_back(0);
        }
    }
    for (const auto* set : out.sets()) {
        if (std::find(set->labels.begin(), set->labels.end(), 1) == set->labels.end())
            throw ValidationError("validation set " + set->name + " contains no deaths in its window");
        for (const auto& s : set->series) {
            out.excluded_patients.insert(s.patient_id);
            out.excluded_stays.insert(s.stay_id);
        }
    }
    return out;
}

namespace {

std::string bool_cell(bool b) { return b ? "1" : "0"; }

}  // namespace

std::string slices_to_csv(std::span<const SliceSeries> series, const VariableCatalog& catalog) {
    const auto measures = catalog.measurement_names();
    const auto treatments = catalog.treatment_names();
    std::vector<std::string> indicators;
    for (const auto& v : kIndicatorVariables)
        if (catalog.find(v)) indicators.push_back(v);

    std::ostringstream out;
    std::vector<std::string> header = {"stay_id", "patient_id", "anchor", "anchor_ts", "slice_index",
                                       "window_start", "window_end"};
    header.insert(header.end(), measures.begin(), measures.end());
    for (const auto& v : indicators) header.push_back("m_" + v);
    header.insert(header.end(), treatments.begin(), treatments.end());
    for (auto h : {"label", "icu_death_12h", "icu_death_24h", "post_discharge_death_12h",
                   "post_discharge_death_24h", "truncated"})
        header.push_back(h);
    out << csv_join(header) << '\n';

    for (const auto& s : series) {
        for (const auto& slice : s.slices) {
            std::vector<std::string> row = {s.stay_id,
                                            s.patient_id,
                                            to_string(s.anchoring),
                                            format_timestamp(s.anchor_ts),
                                            std::to_string(slice.index),
                                            format_timestamp(slice.vitals_start),
                                            format_timestamp(slice.vitals_end)};
            for (const auto& m : measures) {
                const auto v = slice.value(m);
                row.push_back(v ? format_double(*v) : std::string());
            }
            for (const auto& v : indicators) row.push_back(bool_cell(slice.missing_indicators.at(v)));
            for (const auto& t : treatments) row.push_back(bool_cell(slice.treatments.at(t)));
            row.push_back(bool_cell(s.label));
            row.push_back(bool_cell(s.horizon.icu_death_12h));
            row.push_back(bool_cell(s.horizon.icu_death_24h));
            row.push_back(bool_cell(s.horizon.post_discharge_death_12h));
            row.push_back(bool_cell(s.horizon.post_discharge_death_24h));
            row.push_back(bool_cell(s.truncated));
            out << csv_join(row) << '\n';
        }
    }
    return out.str();
}

std::vector<SliceSeries> read_slices_csv(std::istream& in, const VariableCatalog& catalog) {
    CsvReader reader(in);
    const auto col = [&](std::string_view n) { return reader.column(n); };
    const auto c_stay = col("stay_id"), c_patient = col("patient_id"), c_anchor = col("anchor"),
               c_anchor_ts = col("anchor_ts"), c_index = col("slice_index"), c_ws = col("window_start"),
               c_we = col("window_end"), c_label = col("label");
    const auto c_i12 = col("icu_death_12h"), c_i24 = col("icu_death_24h"), c_p12 = col("post_discharge_death_12h"),
               c_p24 = col("post_discharge_death_24h"), c_trunc = col("truncated");

    std::vector<std::pair<std::string, std::size_t>> measures, treatments, indicators;
    for (const auto& m : catalog.measurement_names())
        if (auto c = reader.find_column(m)) measures.emplace_back(m, *c);
    for (const auto& t : catalog.treatment_names())
        if (auto c = reader.find_column(t)) treatments.emplace_back(t, *c);
    for (const auto& v : kIndicatorVariables)
        if (auto c = reader.find_column("m_" + v)) indicators.emplace_back(v, *c);

    std::vector<SliceSeries> out;
    std::unordered_map<std::string, std::size_t> by_stay;
    CsvRow row;
    const std::size_t width = reader.header().size();
    while (reader.next(row)) {
        if (row.fields.size() != width) throw ParseError("wrong field count in slice CSV", row.line);
        const auto& f = row.fields;
        const auto flag = [&](std::size_t c) { return trim(f[c]) == "1"; };
        auto [it, inserted] = by_stay.emplace(f[c_stay], out.size());
        if (inserted) {
            SliceSeries s;
            s.stay_id = f[c_stay];
            s.patient_id = f[c_patient];
            s.anchoring = anchoring_from_string(trim(f[c_anchor]));
            s.anchor_ts = parse_timestamp(f[c_anchor_ts]);
            s.label = flag(c_label);
            s.horizon.icu_death_12h = flag(c_i12);
            s.horizon.icu_death_24h = flag(c_i24);
            s.horizon.post_discharge_death_12h = flag(c_p12);
            s.horizon.post_discharge_death_24h = flag(c_p24);
            s.truncated = flag(c_trunc);
            out.push_back(std::move(s));
        }
        auto& series = out[it->second];
        TimeSlice slice;
        const auto idx = parse_double(f[c_index]);
        if (!idx) throw ParseError("bad slice_index", row.line);
        slice.index = static_cast<int>(*idx);
        slice.vitals_start = parse_timestamp(f[c_ws]);
        slice.vitals_end = parse_timestamp(f[c_we]);
        for (const auto& [name, c] : measures) {
            if (trim(f[c]).empty()) {
                slice.values[name] = std::nullopt;
                continue;
            }
            const auto v = parse_double(f[c]);
            if (!v) throw ParseError("bad value for " + name, row.line);
            slice.values[name] = *v;
        }
        for (const auto& [name, c] : indicators) slice.missing_indicators[name] = flag(c);
        for (const auto& [name, c] : treatments) slice.treatments[name] = flag(c);
        series.slices.push_back(std::move(slice));
    }
    for (auto& s : out)
        std::sort(s.slices.begin(), s.slices.end(),
                  [](const TimeSlice& a, const TimeSlice& b) { return a.index < b.index; });
    return out;
}

}  // namespace trd
