#include <algorithm>
#include <random>
#include <sstream>

#include "doctest.h"
#include "trd/cohort.hpp"

using namespace trd;

namespace {

const VariableCatalog& catalog() {
    static const VariableCatalog c = VariableCatalog::load(data_dir() / "catalog.json");
    return c;
}

const char* kOutcomes =
    "stay_id,patient_id,admit_ts,discharge_ts,died_in_icu,death_ts\n"
    "S1,P1,2008-01-01T00:00,2008-01-02T00:00,0,\n"
    "S2,P2,2008-01-01T00:00,2008-01-01T20:00,1,2008-01-01T20:00\n";

IngestResult ingest(const std::string& obs, const std::string& outcomes = kOutcomes) {
    std::istringstream o(obs), c(outcomes);
    return ingest_observations(o, c, catalog());
}

}  // namespace

TEST_CASE("shipped catalog covers the network variables") {
    for (const auto& v : required_catalog_variables()) CHECK(catalog().find(v) != nullptr);
    CHECK(catalog().at("HeartRate").name == "HR");
    CHECK(catalog().at("HR").hi == 300);
}

TEST_CASE("catalog validation") {
    VariableSpec bad;
    bad.name = "X";
    bad.kind = VariableKind::lab;
    bad.unit = "u";
    bad.lo = 5;
    bad.hi = 1;
    CHECK_THROWS_AS(VariableCatalog::partial({bad}), ValidationError);
    auto a = bad;
    a.lo = 0;
    CHECK_THROWS_AS(VariableCatalog::partial({a, a}), ValidationError);
    CHECK_THROWS_AS(VariableCatalog({a}), ValidationError);  // network variables missing
    CHECK(Transform::parse("boxcox(0.5)").lambda == 0.5);
    CHECK_THROWS(Transform::parse("boxcox(nan)"));
    CHECK(VariableCatalog::from_json(catalog().to_json()).entries() == catalog().entries());
}

TEST_CASE("ingest sorts shuffled events within a stay") {
    const auto r = ingest(
        "stay_id,patient_id,timestamp,variable,value\n"
        "S1,P1,2008-01-01T03:00,HR,90\n"
        "S1,P1,2008-01-01T01:00,HR,80\n"
        "S1,P1,2008-01-01T02:00,HR,85\n");
    REQUIRE(r.stays.size() == 2);
    const auto& obs = r.stays[0].observations;
    REQUIRE(obs.size() == 3);
    CHECK(obs[0].value == 80);
    CHECK(obs[1].value == 85);
    CHECK(obs[2].value == 90);
}

TEST_CASE("out-of-range values are retained as suspect") {
    const auto r = ingest(
        "stay_id,patient_id,timestamp,variable,value\n"
        "S1,P1,2008-01-01T03:00,HeartRate,420\n");
    REQUIRE(r.stays[0].observations.size() == 1);
    const auto& ev = r.stays[0].observations[0];
    CHECK(ev.variable == "HR");
    CHECK(ev.suspect);
    CHECK(ev.kind == VariableKind::vital);
    CHECK(r.suspect_count == 1);
}

TEST_CASE("unknown variables are rejected and ingest continues") {
    const auto r = ingest(
        "stay_id,patient_id,timestamp,variable,value\n"
        "S1,P1,2008-01-01T03:00,Unobtainium,1\n"
        "S1,P1,2008-01-01T04:00,HR,70\n");
    REQUIRE(r.rejected.size() == 1);
    CHECK(r.rejected[0].line == 2);
    CHECK(r.rows_accepted == 1);
    CHECK(r.rows_read == r.rows_accepted + r.rejected.size());
}

TEST_CASE("ingest errors") {
    SUBCASE("malformed row carries its line") {
        try {
            ingest("stay_id,patient_id,timestamp,variable,value\nS1,P1,2008-01-01T03:00,HR\n");
            FAIL("expected ParseError");
        } catch (const ParseError& e) {
            CHECK(e.line() == 2);
        }
    }
    SUBCASE("bad value") {
        CHECK_THROWS_AS(ingest("stay_id,patient_id,timestamp,variable,value\nS1,P1,2008-01-01T03:00,HR,abc\n"),
                        ParseError);
    }
    SUBCASE("stay missing from outcomes") {
        CHECK_THROWS_AS(ingest("stay_id,patient_id,timestamp,variable,value\nS9,P9,2008-01-01T03:00,HR,1\n"),
                        ValidationError);
    }
    SUBCASE("discharge before admission") {
        CHECK_THROWS_AS(ingest("stay_id,patient_id,timestamp,variable,value\n",
                               "stay_id,patient_id,admit_ts,discharge_ts,died_in_icu,death_ts\n"
                               "S1,P1,2008-01-02T00:00,2008-01-01T00:00,0,\n"),
                        ValidationError);
    }
}

TEST_CASE("ingest properties on random inputs") {
    std::mt19937_64 rng(11);
    const std::vector<std::string> vars = {"HR", "RR", "Lactate", "Unobtainium", "SBP"};
    for (int trial = 0; trial < 20; ++trial) {
        std::ostringstream obs;
        obs << "stay_id,patient_id,timestamp,variable,value\n";
        const int rows = 1 + static_cast<int>(rng() % 60);
        for (int i = 0; i < rows; ++i) {
            const bool first = rng() % 2;
            obs << (first ? "S1,P1," : "S2,P2,") << "2008-01-01T" << (10 + rng() % 10) << ":" << (10 + rng() % 50)
                << "," << vars[rng() % vars.size()] << "," << static_cast<int>(rng() % 500) << "\n";
        }
        const auto a = ingest(obs.str());
        const auto b = ingest(obs.str());
        CHECK(a == b);  // idempotent
        CHECK(a.rows_read == static_cast<std::size_t>(rows));
        CHECK(a.rows_accepted + a.rejected.size() == a.rows_read);  // conservation
        for (const auto& s : a.stays)
            CHECK(std::is_sorted(s.observations.begin(), s.observations.end(),
                                 [](const auto& x, const auto& y) { return x.timestamp < y.timestamp; }));
    }
}

TEST_CASE("type-7 quantiles") {
    const auto s = median_iqr({1, 2, 3, 4});
    CHECK(s.median == doctest::Approx(2.5));
    CHECK(s.q1 == doctest::Approx(1.75));
    CHECK(s.q3 == doctest::Approx(3.25));
    const auto one = median_iqr({1.3});
    CHECK(one.median == 1.3);
    CHECK(one.q1 == 1.3);
    CHECK(one.q3 == 1.3);
    CHECK(format_median_iqr({3, 1.3, 1, 1.8}) == "1.3(1, 1.8)");
    CHECK_THROWS_AS(median_iqr({}), ValidationError);
}

TEST_CASE("cohort summary uses the slice nearest discharge") {
    const auto r = ingest(
        "stay_id,patient_id,timestamp,variable,value\n"
        "S1,P1,2008-01-01T16:00,Lactate,1.3\n"  // discharge-8h: inside the lab window
        "S1,P1,2008-01-01T22:00,Lactate,9.9\n"  // discharge-2h: after the window
        "S2,P2,2008-01-01T10:00,Lactate,4.0\n");
    const auto summary = summarize_cohort(r.stays, catalog());
    CHECK(summary.survivors == 1);
    CHECK(summary.non_survivors == 1);
    CHECK(summary.total() == r.stays.size());
    const auto row = std::find_if(summary.rows.begin(), summary.rows.end(),
                                  [](const auto& x) { return x.variable == "Lactate"; });
    REQUIRE(row != summary.rows.end());
    CHECK(row->survivor->median == 1.3);
    CHECK(row->non_survivor->median == 4.0);
    CHECK(row->total->median == doctest::Approx(2.65));
    CHECK_THROWS_AS(summarize_cohort(std::span<const PatientStay>{}, catalog()), ValidationError);
}
