#include "trd/cohort.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include "trd/slicer.hpp"

namespace trd {

using nlohmann::json;

std::string to_string(VariableKind kind) {
    switch (kind) {
    case VariableKind::vital: return "vital";
    case VariableKind::lab: return "lab";
    case VariableKind::blood_gas: return "blood_gas";
    case VariableKind::scale: return "scale";
    case VariableKind::treatment_indicator: return "treatment_indicator";
    }
    return "?";
}

VariableKind variable_kind_from_string(std::string_view s) {
    if (s == "vital") return VariableKind::vital;
    if (s == "lab") return VariableKind::lab;
    if (s == "blood_gas") return VariableKind::blood_gas;
    if (s == "scale") return VariableKind::scale;
    if (s == "treatment_indicator") return VariableKind::treatment_indicator;
    throw ValidationError("unknown variable kind '" + std::string(s) + "'");
}

Transform Transform::parse(std::string_view s) {
    const std::string t = to_lower(trim(s));
    if (t.empty() || t == "none") return {};
    if (t == "log10") return {Kind::log10, 1.0};
    if (t.starts_with("boxcox(") && t.ends_with(")")) {
        auto lam = parse_double(std::string_view(t).substr(7, t.size() - 8));
        if (!lam || !std::isfinite(*lam)) throw ValidationError("bad boxcox lambda in '" + t + "'");
        return {Kind::boxcox, *lam};
    }
    throw ValidationError("unknown transform '" + std::string(s) + "'");
}

std::string Transform::to_string() const {
    switch (kind) {
    case Kind::none: return "none";
    case Kind::log10: return "log10";
    case Kind::boxcox: return "boxcox(" + format_double(lambda) + ")";
    }
    return "none";
}

const std::vector<std::string>& required_catalog_variables() {
    static const std::vector<std::string> names = {
        "HR",          "RR",         "Temp",    "SBP",        "DBP",         "MAP",    "SpO2",  "Uout",
        "WBC",         "ALT",        "AST",     "Bilirubin",  "PlateletCnt", "Hemoglobin", "Lactate",
        "Creatinine",  "Bicarbonate", "PaO2",   "FiO2",       "PaCO2",       "INR",    "GCS",
        "antibiotics", "vasopressor"};
    return names;
}

VariableCatalog::VariableCatalog(std::vector<VariableSpec> entries) : entries_(std::move(entries)) {
    validate(true);
    reindex();
}

VariableCatalog VariableCatalog::partial(std::vector<VariableSpec> entries) {
    VariableCatalog c;
    c.entries_ = std::move(entries);
    c.validate(false);
    c.reindex();
    return c;
}

void VariableCatalog::validate(bool require_network_variables) const {
    std::unordered_set<std::string> seen;
    for (const auto& e : entries_) {
        if (e.name.empty()) throw ValidationError("catalog entry with empty name");
        if (!(e.lo < e.hi)) throw ValidationError("catalog entry '" + e.name + "': range lo must be < hi");
        if (e.transform.kind == Transform::Kind::boxcox && !std::isfinite(e.transform.lambda))
            throw ValidationError("catalog entry '" + e.name + "': non-finite boxcox lambda");
        if (!seen.insert(e.name).second) throw ValidationError("duplicate catalog entry '" + e.name + "'");
        for (const auto& a : e.aliases)
            if (!seen.insert(a).second) throw ValidationError("duplicate catalog key or alias '" + a + "'");
    }
    if (require_network_variables) {
        for (const auto& req : required_catalog_variables()) {
            const auto n = std::count_if(entries_.begin(), entries_.end(),
                                         [&](const VariableSpec& e) { return e.name == req; });
            if (n != 1) throw ValidationError("catalog must define '" + req + "' exactly once");
        }
    }
}

void VariableCatalog::reindex() {
    index_.clear();
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        index_.emplace(entries_[i].name, i);
        for (const auto& a : entries_[i].aliases) index_.emplace(a, i);
    }
}

VariableCatalog VariableCatalog::load(const std::filesystem::path& path) {
    json j;
    try {
        j = json::parse(read_text_file(path));
    } catch (const json::parse_error& e) {
        throw ParseError("catalog '" + path.string() + "': " + e.what());
    }
    return from_json(j);
}

VariableCatalog VariableCatalog::from_json(const json& j) {
    std::vector<VariableSpec> out;
    try {
        for (const auto& v : j.at("variables")) {
            VariableSpec s;
            s.name = v.at("name").get<std::string>();
            s.kind = variable_kind_from_string(v.at("kind").get<std::string>());
            s.unit = v.value("unit", "");
            const auto& range = v.at("range");
            s.lo = range.at(0).get<double>();
            s.hi = range.at(1).get<double>();
            s.transform = Transform::parse(v.value("transform", "none"));
            const std::string lb = v.value("loopback", "vitals");
            if (lb == "vitals")
                s.loopback = LoopbackClass::vitals;
            else if (lb == "labs")
                s.loopback = LoopbackClass::labs;
            else
                throw ValidationError("unknown loopback class '" + lb + "'");
            if (v.contains("aliases")) s.aliases = v.at("aliases").get<std::vector<std::string>>();
            out.push_back(std::move(s));
        }
    } catch (const json::exception& e) {
        throw ParseError(std::string("catalog: ") + e.what());
    }
    const bool partial = j.value("partial", false);
    return partial ? VariableCatalog::partial(std::move(out)) : VariableCatalog(std::move(out));
}

json VariableCatalog::to_json() const {
    json vars = json::array();
    for (const auto& e : entries_) {
        json v;
        v["name"] = e.name;
        if (!e.aliases.empty()) v["aliases"] = e.aliases;
        v["kind"] = trd::to_string(e.kind);
        v["unit"] = e.unit;
        v["range"] = {e.lo, e.hi};
        v["transform"] = e.transform.to_string();
        v["loopback"] = e.loopback == LoopbackClass::vitals ? "vitals" : "labs";
        vars.push_back(std::move(v));
    }
    return json{{"variables", vars}};
}

const VariableSpec* VariableCatalog::find(std::string_view name) const {
    auto it = index_.find(std::string(name));
    return it == index_.end() ? nullptr : &entries_[it->second];
}

const VariableSpec& VariableCatalog::at(std::string_view name) const {
    if (const auto* s = find(name)) return *s;
    throw ValidationError("variable '" + std::string(name) + "' not in catalog");
}

std::vector<std::string> VariableCatalog::measurement_names() const {
    std::vector<std::string> out;
    for (const auto& e : entries_)
        if (!e.is_treatment()) out.push_back(e.name);
    return out;
}

std::vector<std::string> VariableCatalog::treatment_names() const {
    std::vector<std::string> out;
    for (const auto& e : entries_)
        if (e.is_treatment()) out.push_back(e.name);
    return out;
}

void VariableCatalog::set_transform(std::string_view name, Transform t) {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) throw ValidationError("variable '" + std::string(name) + "' not in catalog");
    entries_[it->second].transform = t;
}

namespace {

bool parse_bool(const std::string& s, std::size_t line) {
    const std::string t = to_lower(trim(s));
    if (t == "1" || t == "true" || t == "yes") return true;
    if (t == "0" || t == "false" || t == "no") return false;
    throw ParseError("bad boolean '" + s + "'", line);
}

}  // namespace

std::vector<PatientStay> read_outcomes(std::istream& outcomes) {
    CsvReader reader(outcomes);
    const auto c_stay = reader.column("stay_id");
    const auto c_patient = reader.column("patient_id");
    const auto c_admit = reader.column("admit_ts");
    const auto c_discharge = reader.column("discharge_ts");
    const auto c_died = reader.column("died_in_icu");
    const auto c_death = reader.column("death_ts");
    const std::size_t width = reader.header().size();

    std::vector<PatientStay> stays;
    std::unordered_set<std::string> seen;
    CsvRow row;
    while (reader.next(row)) {
        if (row.fields.size() != width)
            throw ParseError("expected " + std::to_string(width) + " fields, got " +
                                 std::to_string(row.fields.size()),
                             row.line);
        PatientStay s;
        s.stay_id = trim(row.fields[c_stay]);
        s.patient_id = trim(row.fields[c_patient]);
        try {
            s.admit_ts = parse_timestamp(row.fields[c_admit]);
            s.discharge_ts = parse_timestamp(row.fields[c_discharge]);
            if (!trim(row.fields[c_death]).empty()) s.death_ts = parse_timestamp(row.fields[c_death]);
        } catch (const ParseError& e) {
            throw ParseError(e.what(), row.line);
        }
        s.died_in_icu = parse_bool(row.fields[c_died], row.line);
        if (s.stay_id.empty()) throw ParseError("empty stay_id", row.line);
        if (!(s.admit_ts < s.discharge_ts))
            throw ValidationError("stay " + s.stay_id + ": admit_ts must precede discharge_ts");
        if (s.death_ts && *s.death_ts < s.admit_ts)
            throw ValidationError("stay " + s.stay_id + ": death_ts precedes admit_ts");
        if (s.died_in_icu && !s.death_ts)
            throw ValidationError("stay " + s.stay_id + ": died_in_icu without death_ts");
        if (!seen.insert(s.stay_id).second) throw ValidationError("duplicate stay " + s.stay_id);
        stays.push_back(std::move(s));
    }
    return stays;
}

IngestResult ingest_observations(std::istream& observations, std::istream& outcomes,
                                 const VariableCatalog& catalog) {
    IngestResult result;
    result.stays = read_outcomes(outcomes);
    std::unordered_map<std::string, std::size_t> by_stay;
    for (std::size_t i = 0; i < result.stays.size(); ++i) by_stay.emplace(result.stays[i].stay_id, i);

    CsvReader reader(observations);
    const auto c_stay = reader.column("stay_id");
    const auto c_patient = reader.column("patient_id");
    const auto c_ts = reader.column("timestamp");
    const auto c_var = reader.column("variable");
    const auto c_val = reader.column("value");
    const std::size_t width = reader.header().size();

    CsvRow row;
    while (reader.next(row)) {
        ++result.rows_read;
        if (row.fields.size() != width)
            throw ParseError("expected " + std::to_string(width) + " fields, got " +
                                 std::to_string(row.fields.size()),
                             row.line);
        ObservationEvent ev;
        ev.stay_id = trim(row.fields[c_stay]);
        ev.patient_id = trim(row.fields[c_patient]);
        try {
            ev.timestamp = parse_timestamp(row.fields[c_ts]);
        } catch (const ParseError& e) {
            throw ParseError(e.what(), row.line);
        }
        const std::string raw_value = trim(row.fields[c_val]);
        const auto value = parse_double(raw_value);
        if (!value) throw ParseError("bad value '" + raw_value + "'", row.line);

        const std::string var = trim(row.fields[c_var]);
        const VariableSpec* spec = catalog.find(var);
        if (!spec) {
            result.rejected.push_back({row.line, "unknown variable '" + var + "'"});
            continue;
        }
        if (!std::isfinite(*value)) {
            result.rejected.push_back({row.line, "non-finite value for '" + var + "'"});
            continue;
        }
        auto it = by_stay.find(ev.stay_id);
        if (it == by_stay.end())
            throw ValidationError("line " + std::to_string(row.line) + ": stay " + ev.stay_id +
                                  " not present in outcomes");
        auto& stay = result.stays[it->second];
        if (ev.patient_id != stay.patient_id)
            throw ValidationError("line " + std::to_string(row.line) + ": patient " + ev.patient_id +
                                  " does not match outcomes for stay " + ev.stay_id);
        ev.variable = spec->name;
        ev.kind = spec->kind;
        ev.value = *value;
        ev.suspect = !spec->in_range(*value);
        if (ev.suspect) ++result.suspect_count;
        stay.observations.push_back(std::move(ev));
        ++result.rows_accepted;
    }
    for (auto& s : result.stays)
        std::stable_sort(s.observations.begin(), s.observations.end(),
                         [](const ObservationEvent& a, const ObservationEvent& b) {
                             return a.timestamp < b.timestamp;
                         });
    return result;
}

IngestResult ingest_observations(const std::filesystem::path& observations,
                                 const std::filesystem::path& outcomes, const VariableCatalog& catalog) {
    std::ifstream obs(observations, std::ios::binary);
    if (!obs) throw std::runtime_error("cannot open '" + observations.string() + "'");
    std::ifstream out(outcomes, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open '" + outcomes.string() + "'");
    return ingest_observations(obs, out, catalog);
}

double quantile_type7(std::span<const double> sorted, double p) {
    if (sorted.empty()) throw ValidationError("quantile of empty sample");
    const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

MedianIqr median_iqr(std::vector<double> values) {
    std::sort(values.begin(), values.end());
    return {values.size(), quantile_type7(values, 0.5), quantile_type7(values, 0.25),
            quantile_type7(values, 0.75)};
}

std::string format_median_iqr(const MedianIqr& s) {
    return format_compact(s.median, 6) + "(" + format_compact(s.q1, 6) + ", " + format_compact(s.q3, 6) + ")";
}

std::string CohortSummary::to_csv() const {
    std::ostringstream out;
    out << "variable,survivor,non_survivor,total\n";
    auto cell = [](const std::optional<MedianIqr>& m) { return m ? format_median_iqr(*m) : std::string(); };
    for (const auto& r : rows)
        out << csv_join({r.variable, cell(r.survivor), cell(r.non_survivor), cell(r.total)}) << '\n';
    out << csv_join({"n", std::to_string(survivors), std::to_string(non_survivors), std::to_string(total())})
        << '\n';
    return out.str();
}

CohortSummary summarize_cohort(std::span<const PatientStay> stays, const VariableCatalog& catalog) {
    if (stays.empty()) throw ValidationError("cannot summarize an empty cohort");
    SliceConfig config;
    config.n_slices = 1;
    const auto names = catalog.measurement_names();
    std::vector<std::vector<double>> surv(names.size()), dead(names.size());

    CohortSummary summary;
    for (const auto& stay : stays) {
        const auto series = build_rolled_back_series(stay, catalog, config);
        const auto& slice = series.slices.front();
        auto& bucket = stay.died_in_icu ? dead : surv;
        (stay.died_in_icu ? summary.non_survivors : summary.survivors)++;
        for (std::size_t i = 0; i < names.size(); ++i)
            if (auto v = slice.value(names[i])) bucket[i].push_back(*v);
    }
    for (std::size_t i = 0; i < names.size(); ++i) {
        CohortSummary::Row row;
        row.variable = names[i];
        if (!surv[i].empty()) row.survivor = median_iqr(surv[i]);
        if (!dead[i].empty()) row.non_survivor = median_iqr(dead[i]);
        std::vector<double> all = surv[i];
        all.insert(all.end(), dead[i].begin(), dead[i].end());
        if (!all.empty()) row.total = median_iqr(all);
        summary.rows.push_back(std::move(row));
    }
    return summary;
}

}  // namespace trd
