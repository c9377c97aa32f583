#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "trd/cohort.hpp"
#include "trd/nlp.hpp"

namespace trd {

struct SimulationConfig {
    std::size_t n_stays = 1000;
    std::uint64_t seed = 0;
    double icu_death_rate = 0.14;
    double post_discharge_death_rate = 0.05;  // deaths within 48h of discharge
    double tau_hours = 12;  // time constant of the pre-death deterioration
    double signal = 1.0;    // scales every variable's response to severity
};

struct Demographics {
    std::string stay_id;
    double age = 0;
    std::string admission_type;  // scheduled_surgical | medical | unscheduled_surgical
    std::set<std::string> chronic;
};

struct CriteriaRow {
    std::string stay_id, criterion, value;
};

/// Synthetic ICU cohort: a latent severity drives every variable, rising towards death as
/// `exp(-(death - t) / tau)`; survivors carry an admission severity that resolves.
struct SimulatedCohort {
    std::vector<PatientStay> stays;
    std::vector<Demographics> demographics;
    std::vector<Note> notes;
    std::vector<CriteriaRow> criteria;

    std::string observations_csv() const;
    std::string outcomes_csv() const;
    std::string demographics_csv() const;
    std::string notes_csv() const;
    std::string criteria_csv() const;
};

SimulatedCohort simulate_cohort(const VariableCatalog& catalog, const SimulationConfig& config);

}  // namespace trd
