#include "trd/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

namespace trd {

namespace {

enum class Schedule { hourly, four_hourly, labs, gas };

// Response of one variable to severity s: value = f(base + coef*(s + frailty) + offset + noise),
// with f = exp when `log_scale`.
struct VarModel {
    const char* name;
    Schedule schedule;
    double base;
    double coef;
    double sd_stay;
    double sd_noise;
    bool log_scale;
    double p_measured;
    int decimals;
};

const VarModel kModels[] = {
    {"HR", Schedule::hourly, 85, 14, 8, 7, false, 0.95, 0},
    {"RR", Schedule::hourly, 18, 4, 2.5, 2.5, false, 0.9, 0},
    {"Temp", Schedule::four_hourly, 37.0, 0.5, 0.3, 0.35, false, 0.9, 1},
    {"SBP", Schedule::hourly, 122, -14, 10, 9, false, 0.95, 0},
    {"DBP", Schedule::hourly, 62, -7, 6, 6, false, 0.95, 0},
    {"MAP", Schedule::hourly, 80, -9, 7, 6, false, 0.95, 0},
    {"SpO2", Schedule::hourly, 97, -2.0, 1.2, 1.3, false, 0.9, 0},
    {"Uout", Schedule::hourly, std::log(90.0), -0.45, 0.3, 0.45, true, 0.8, 0},
    {"GCS", Schedule::four_hourly, 14.2, -2.2, 1.2, 1.0, false, 0.85, 0},
    {"WBC", Schedule::labs, std::log(10.5), 0.2, 0.25, 0.12, true, 0.85, 1},
    {"ALT", Schedule::labs, std::log(28.0), 0.35, 0.5, 0.2, true, 0.5, 0},
    {"AST", Schedule::labs, std::log(32.0), 0.4, 0.5, 0.2, true, 0.5, 0},
    {"Bilirubin", Schedule::labs, std::log(0.7), 0.35, 0.5, 0.15, true, 0.5, 1},
    {"PlateletCnt", Schedule::labs, std::log(210.0), -0.25, 0.35, 0.1, true, 0.85, 0},
    {"Hemoglobin", Schedule::labs, 10.8, -0.5, 1.2, 0.5, false, 0.85, 1},
    {"Creatinine", Schedule::labs, std::log(0.95), 0.3, 0.35, 0.1, true, 0.85, 2},
    {"Bicarbonate", Schedule::labs, 25, -2.5, 2, 1.5, false, 0.85, 0},
    {"INR", Schedule::labs, std::log(1.25), 0.15, 0.2, 0.08, true, 0.5, 2},
    {"BUN", Schedule::labs, std::log(20.0), 0.3, 0.4, 0.12, true, 0.85, 0},
    {"Potassium", Schedule::labs, 4.1, 0.2, 0.3, 0.3, false, 0.85, 1},
    {"Sodium", Schedule::labs, 139, 0.5, 3, 2, false, 0.85, 0},
    {"Lactate", Schedule::gas, std::log(1.4), 0.45, 0.25, 0.2, true, 1.0, 1},
    {"PaO2", Schedule::gas, std::log(105.0), -0.2, 0.2, 0.2, true, 1.0, 0},
    {"FiO2", Schedule::gas, 0.42, 0.1, 0.06, 0.05, false, 1.0, 2},
    {"PaCO2", Schedule::gas, std::log(40.0), 0.08, 0.1, 0.1, true, 1.0, 0},
};

const char* kAntibiotics[] = {"vancomycin", "piperacillin-tazobactam", "cefepime", "ceftriaxone",
                              "meropenem",  "levofloxacin",            "ciprofloxacin", "metronidazole"};
const char* kSources[] = {"pneumonia", "uti", "line infection", "abdominal sepsis", "cellulitis"};

double round_to(double v, int decimals) {
    const double f = std::pow(10.0, decimals);
    return std::round(v * f) / f;
}

constexpr Timestamp kEpoch = 4102444800;  // 2100-01-01T00:00:00Z

}  // namespace

SimulatedCohort simulate_cohort(const VariableCatalog& catalog, const SimulationConfig& config) {
    if (config.n_stays == 0) throw ValidationError("simulation needs at least one stay");
    if (config.icu_death_rate < 0 || config.post_discharge_death_rate < 0 ||
        config.icu_death_rate + config.post_discharge_death_rate >= 1)
        throw ValidationError("death rates must be non-negative and sum below 1");
    if (!(config.tau_hours > 0)) throw ValidationError("tau must be positive");

    std::mt19937_64 rng(config.seed);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);
    auto U = [&](double a, double b) { return a + (b - a) * unif(rng); };
    const double H = static_cast<double>(kSecondsPerHour);

    SimulatedCohort cohort;
    std::size_t n_patients = 0;
    for (std::size_t s = 0; s < config.n_stays; ++s) {
        PatientStay stay;
        stay.stay_id = "S" + std::to_string(100000 + s);
        if (n_patients > 0 && unif(rng) < 0.2) {
            const auto p = static_cast<std::size_t>(unif(rng) * static_cast<double>(n_patients));
            stay.patient_id = "P" + std::to_string(100000 + std::min(p, n_patients - 1));
        } else {
            stay.patient_id = "P" + std::to_string(100000 + n_patients++);
        }
        const double los_h = std::min(4.0 + std::exp(std::log(36.0) + 0.8 * gauss(rng)), 30 * 24.0);
        stay.admit_ts = kEpoch + static_cast<Timestamp>(U(0, 3 * 365 * 24)) * 3600 + 60 * static_cast<Timestamp>(U(0, 60));
        stay.discharge_ts = stay.admit_ts + static_cast<Timestamp>(los_h * 60) * 60;

        const double u = unif(rng);
        const bool icu_death = u < config.icu_death_rate;
        const bool post_death = !icu_death && u < config.icu_death_rate + config.post_discharge_death_rate;
        if (icu_death) {
            stay.died_in_icu = true;
            stay.death_ts = stay.discharge_ts;
        } else if (post_death) {
            stay.death_ts = stay.discharge_ts + static_cast<Timestamp>(U(0.5, 48) * 60) * 60;
        }

        const double peak = U(1.5, 3.0);
        const double admission_severity = U(0.0, 1.5);
        const double frailty = 0.3 * gauss(rng) + (icu_death || post_death ? 0.25 : 0.0);
        const double post_scale = 0.8;
        auto severity = [&](Timestamp t) {
            if (stay.death_ts) {
                const double dt = static_cast<double>(*stay.death_ts - t) / H;
                return (icu_death ? 1.0 : post_scale) * peak * std::exp(-dt / config.tau_hours);
            }
            const double since = static_cast<double>(t - stay.admit_ts) / H;
            return admission_severity * std::exp(-since / 24.0);
        };

        const bool infected = unif(rng) < (icu_death || post_death ? 0.7 : 0.4);
        std::vector<ObservationEvent> events;
        auto emit = [&](const std::string& var, Timestamp ts, double value) {
            if (ts < stay.admit_ts || ts >= stay.discharge_ts) return;
            const auto& spec = catalog.at(var);
            value = std::clamp(value, spec.lo, spec.hi);
            events.push_back({stay.stay_id, stay.patient_id, ts, spec.name, value, spec.kind, false});
        };

        for (const auto& m : kModels) {
            if (!catalog.find(m.name)) continue;
            const double offset = m.sd_stay * gauss(rng);
            std::vector<Timestamp> times;
            switch (m.schedule) {
                case Schedule::hourly:
                case Schedule::four_hourly: {
                    const double step = m.schedule == Schedule::hourly ? 1.0 : 4.0;
                    for (double h = U(0, step); h < los_h; h += step) times.push_back(stay.admit_ts + static_cast<Timestamp>((h + U(-0.15, 0.15)) * 60) * 60);
                    break;
                }
                case Schedule::labs:
                    for (double h = U(0.5, 4); h < los_h; h += U(8, 12))
                        times.push_back(stay.admit_ts + static_cast<Timestamp>(h * 60) * 60);
                    break;
                case Schedule::gas:
                    for (double h = U(0.5, 6); h < los_h; h += 6) times.push_back(stay.admit_ts + static_cast<Timestamp>(h * 60) * 60);
                    break;
            }
            for (auto ts : times) {
                const double sev = severity(ts);
                double p = m.p_measured;
                if (m.schedule == Schedule::gas) p = 1.0 / (1.0 + std::exp(-(-1.8 + 1.6 * config.signal * sev)));
                if (unif(rng) >= p) continue;
                double z = m.base + config.signal * m.coef * (sev + frailty) + offset + m.sd_noise * gauss(rng);
                if (m.log_scale) z = std::exp(z);
                emit(m.name, ts, round_to(z, m.decimals));
            }
        }

        // Treatments: antibiotics for infected stays, vasopressors while severely hypotensive.
        std::string abx = kAntibiotics[static_cast<std::size_t>(unif(rng) * 8) % 8];
        if (infected)
            for (double h = U(0, 6); h < los_h; h += U(6, 12))
                emit("antibiotics", stay.admit_ts + static_cast<Timestamp>(h * 60) * 60, 1);
        for (double h = 0.5; h < los_h; h += 1.0) {
            const Timestamp ts = stay.admit_ts + static_cast<Timestamp>(h * 60) * 60;
            const double sev = config.signal * severity(ts);
            if (sev > 1.2 && unif(rng) < 0.7) {
                emit("vasopressor", ts, 1);
                if (catalog.find("NorepiDose")) emit("NorepiDose", ts, round_to(0.06 * sev, 3));
            }
        }
        std::stable_sort(events.begin(), events.end(),
                         [](const ObservationEvent& a, const ObservationEvent& b) { return a.timestamp < b.timestamp; });
        stay.observations = std::move(events);

        Demographics d;
        d.stay_id = stay.stay_id;
        d.age = std::clamp(std::round(62 + (icu_death || post_death ? 8 : 0) + 15 * gauss(rng)), 18.0, 95.0);
        const double a = unif(rng);
        d.admission_type = a < 0.55 ? "medical" : (a < 0.8 ? "scheduled_surgical" : "unscheduled_surgical");
        if (unif(rng) < 0.05) d.chronic.insert("metastatic_cancer");
        if (unif(rng) < 0.03) d.chronic.insert("hematologic_malignancy");
        if (unif(rng) < 0.01) d.chronic.insert("aids");
        cohort.demographics.push_back(d);

        const std::string src = kSources[static_cast<std::size_t>(unif(rng) * 5) % 5];
        std::vector<std::string> texts;
        if (infected) {
            texts.push_back("Pt started on " + abx + " for " + src + ". Will follow cultures.");
            texts.push_back("Continues on " + abx + ", afebrile overnight.");
        } else if (d.admission_type == "scheduled_surgical") {
            texts.push_back("Received cefazolin for surgical prophylaxis. Stable post op.");
        } else if (unif(rng) < 0.3) {
            texts.push_back("Possible " + src + ", consider ciprofloxacin if febrile.");
        } else {
            texts.push_back("No need for levofloxacin at this time. Hemodynamically stable.");
        }
        for (std::size_t k = 0; k < texts.size(); ++k)
            cohort.notes.push_back({stay.stay_id + "-N" + std::to_string(k + 1), stay.stay_id,
                                    stay.admit_ts + static_cast<Timestamp>(k + 1) * 3600, texts[k]});
        if (infected) {
            cohort.criteria.push_back({stay.stay_id, "antibiotic", abx});
            cohort.criteria.push_back({stay.stay_id, "icd9", src == "uti" ? "599.0" : "038.9"});
        } else {
            cohort.criteria.push_back({stay.stay_id, "icd9", "428.0"});
        }
        cohort.stays.push_back(std::move(stay));
    }
    return cohort;
}

std::string SimulatedCohort::observations_csv() const {
    std::ostringstream out;
    out << "stay_id,patient_id,timestamp,variable,value\n";
    for (const auto& s : stays)
        for (const auto& e : s.observations)
            out << csv_join({e.stay_id, e.patient_id, format_timestamp(e.timestamp), e.variable,
                             format_double(e.value)})
                << "\n";
    return out.str();
}

std::string SimulatedCohort::outcomes_csv() const {
    std::ostringstream out;
    out << "stay_id,patient_id,admit_ts,discharge_ts,died_in_icu,death_ts\n";
    for (const auto& s : stays)
        out << csv_join({s.stay_id, s.patient_id, format_timestamp(s.admit_ts), format_timestamp(s.discharge_ts),
                         s.died_in_icu ? "1" : "0", s.death_ts ? format_timestamp(*s.death_ts) : ""})
            << "\n";
    return out.str();
}

std::string SimulatedCohort::demographics_csv() const {
    std::ostringstream out;
    out << "stay_id,age,admission_type,chronic\n";
    for (const auto& d : demographics) {
        std::string chronic;
        for (const auto& c : d.chronic) chronic += (chronic.empty() ? "" : ";") + c;
        out << csv_join({d.stay_id, format_double(d.age), d.admission_type, chronic}) << "\n";
    }
    return out.str();
}

std::string SimulatedCohort::notes_csv() const {
    std::ostringstream out;
    out << "note_id,stay_id,timestamp,text\n";
    for (const auto& n : notes)
        out << csv_join({n.note_id, n.stay_id, format_timestamp(n.timestamp), n.text}) << "\n";
    return out.str();
}

std::string SimulatedCohort::criteria_csv() const {
    std::ostringstream out;
    out << "stay_id,criterion,value\n";
    for (const auto& c : criteria) out << csv_join({c.stay_id, c.criterion, c.value}) << "\n";
    return out.str();
}

}  // namespace trd
