#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"
#include "json.hpp"
#include "trd/common.hpp"

namespace fs = std::filesystem;

namespace {

struct Outcome {
    int status = -1;
    std::string out;  // stdout and stderr interleaved unless redirected
};

Outcome run(const std::string& args, bool capture_stderr_only = false) {
    const std::string cmd = std::string(TRD_CLI_PATH) + " " + args + (capture_stderr_only ? " 2>&1 >/dev/null" : " 2>&1");
    Outcome o;
    FILE* p = popen(cmd.c_str(), "r");
    REQUIRE(p);
    std::array<char, 4096> buf{};
    std::size_t n;
    while ((n = fread(buf.data(), 1, buf.size(), p)) > 0) o.out.append(buf.data(), n);
    const int st = pclose(p);
    o.status = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
    return o;
}

fs::path scratch(const std::string& name) {
    const auto d = fs::temp_directory_path() / ("trd_cli_test_" + name);
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

std::string first_line(const fs::path& f) {
    std::ifstream in(f);
    std::string l;
    std::getline(in, l);
    return l;
}

}  // namespace

TEST_CASE("simulate is byte-identical under a seed") {
    const auto a = scratch("sim_a"), b = scratch("sim_b");
    REQUIRE(run("simulate --n 40 --seed 7 -q --out " + a.string()).status == 0);
    REQUIRE(run("simulate --n 40 --seed 7 -q --out " + b.string()).status == 0);
    for (const char* f : {"observations.csv", "outcomes.csv", "demographics.csv", "notes.csv", "criteria.csv"})
        CHECK_MESSAGE(trd::read_text_file(a / f) == trd::read_text_file(b / f), f);
    const auto m = nlohmann::json::parse(trd::read_text_file(a / "manifest.json"));
    CHECK(m["format"] == "trd-manifest/1");
    CHECK(m["config"]["root_seed"] == 7);
}

TEST_CASE("exit codes") {
    CHECK(run("simulate --bogus-flag --out /tmp/x").status == 2);
    CHECK(run("").status == 2);
    const auto d = scratch("bad");
    std::ofstream(d / "obs.csv") << "stay_id,timestamp,variable,value\nS1,2100-01-01T00:00,HeartRate,80\n";
    std::ofstream(d / "out.csv") << "stay_id,patient_id,admit_ts,discharge_ts,died_in_icu,death_ts\n"
                                    "S1,P1,2100-01-02T00:00,2100-01-01T00:00,0,\n";
    const auto o = run("ingest -q --observations " + (d / "obs.csv").string() + " --outcomes " +
                           (d / "out.csv").string() + " --out " + (d / "o").string(),
                       true);
    CHECK(o.status == 1);
    const auto j = nlohmann::json::parse(o.out.substr(o.out.find('{')));
    CHECK(j.contains("error"));
    CHECK(j.contains("message"));
}

TEST_CASE("score, evaluate and rerun") {
    const auto d = scratch("pipe");
    REQUIRE(run("simulate --n 120 --seed 3 --icu-death-rate 0.25 -q --out " + (d / "sim").string()).status == 0);
    const std::string raw = " --observations " + (d / "sim/observations.csv").string() + " --outcomes " +
                            (d / "sim/outcomes.csv").string();
    const std::string demo = " --demographics " + (d / "sim/demographics.csv").string();

    REQUIRE(run("score -q" + raw + demo + " --which sofa,qsofa --agg max --out " + (d / "score").string()).status ==
            0);
    CHECK(first_line(d / "score/scores.csv").starts_with("stay_id,slice,sofa,qsofa,qsofa_positive"));
    CHECK(run("score -q" + raw + " --which sofa,apache --out " + (d / "score2").string()).status == 1);
    CHECK(run("score -q" + raw + " --agg median --out " + (d / "score3").string()).status == 2);

    REQUIRE(run("evaluate -q --seed 5 --folds 3 --max-iter 10" + raw + demo + " --out " + (d / "eval").string())
                .status == 0);
    CHECK(first_line(d / "eval/table3.csv") == "method,AUC,Sensitivity,Specificity,PPV,NPV,F1,cutoff");
    for (const char* f : {"table6.csv", "cox_calibration.csv", "roc.csv", "calibration.csv", "riskdist.csv",
                          "report.json", "manifest.json"})
        CHECK_MESSAGE(fs::exists(d / "eval" / f), f);

    const auto r = run("rerun --manifest " + (d / "eval/manifest.json").string() + " --out " + (d / "again").string());
    CHECK_MESSAGE(r.status == 0, r.out);
    CHECK(trd::read_text_file(d / "eval/table3.csv") == trd::read_text_file(d / "again/table3.csv"));
}
