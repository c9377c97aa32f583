// trd: command-line entry point for the mortality-risk pipeline.
//
// Every subcommand collects its artifacts in memory, writes each one atomically and then
// writes manifest.json with the resolved configuration and SHA-256 digests of inputs and
// outputs. `trd rerun --manifest F` replays a run and checks the digests.

#include <openssl/evp.h>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "trd/calibration.hpp"
#include "trd/cohort.hpp"
#include "trd/crossval.hpp"
#include "trd/dbn.hpp"
#include "trd/metrics.hpp"
#include "trd/nlp.hpp"
#include "trd/pipeline.hpp"
#include "trd/report.hpp"
#include "trd/scores.hpp"
#include "trd/simulate.hpp"
#include "trd/slicer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace trd;

namespace {

int g_verbosity = 1;

void log(const std::string& msg, int level = 1) {
    if (g_verbosity >= level) std::cerr << "trd: " << msg << "\n";
}

std::string sha256_hex(std::string_view data) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr);
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned i = 0; i < len; ++i) {
        out += hex[md[i] >> 4];
        out += hex[md[i] & 15];
    }
    return out;
}

struct Run {
    std::string subcommand;
    std::vector<std::string> argv;
    json config = json::object();
    std::map<std::string, std::string> inputs;     // path -> digest
    std::map<std::string, std::string> artifacts;  // file name -> content
    fs::path out;

    void input(const fs::path& p) {
        if (!p.empty()) inputs[p.string()] = sha256_hex(read_text_file(p));
    }
    void add(const std::string& name, std::string content) { artifacts[name] = std::move(content); }

    void commit() const {
        fs::create_directories(out);
        json manifest;
        manifest["format"] = "trd-manifest/1";
        manifest["subcommand"] = subcommand;
        manifest["argv"] = argv;
        manifest["config"] = config;
        manifest["inputs"] = inputs;
        json digests = json::object();
        for (const auto& [name, content] : artifacts) {
            write_file_atomic(out / name, content);
            digests[name] = sha256_hex(content);
        }
        manifest["artifacts"] = digests;
        write_file_atomic(out / "manifest.json", manifest.dump(2) + "\n");
        log("wrote " + std::to_string(artifacts.size()) + " artifacts to " + out.string());
    }
};

// Resolved option values, defaults included.
json resolved_options(const CLI::App* app) {
    json j = json::object();
    for (const auto* opt : app->get_options()) {
        const auto name = opt->get_single_name();
        if (name.empty() || name == "help") continue;
        if (opt->count() > 0) {
            const auto& r = opt->results();
            if (opt->get_type_size() == 0 || r.empty())
                j[name] = true;
            else if (r.size() == 1)
                j[name] = r.front();
            else
                j[name] = r;
        } else if (opt->get_type_size() == 0) {
            j[name] = false;
        } else {
            j[name] = opt->get_default_str();
        }
    }
    return j;
}

// Options shared by every command that reads a raw cohort or a slices file.
struct CohortOptions {
    std::string observations, outcomes, slices_file;
    std::string catalog = (data_dir() / "catalog.json").string();
    SliceConfig slice;
    std::string anchor = "rolled-back";

    void add_raw(CLI::App* app) {
        app->add_option("--observations", observations, "observations CSV")->check(CLI::ExistingFile);
        app->add_option("--outcomes", outcomes, "outcomes CSV")->check(CLI::ExistingFile);
        app->add_option("--catalog", catalog, "variable catalog JSON")->check(CLI::ExistingFile)->capture_default_str();
        add_slice_flags(app);
    }
    void add_slices_file(CLI::App* app) {
        app->add_option("--slices-file", slices_file, "slices CSV written by `trd slice`")->check(CLI::ExistingFile);
    }
    void add_slice_flags(CLI::App* app) {
        app->add_option("--interval-hours", slice.interval_hours)->capture_default_str();
        app->add_option("--slices", slice.n_slices, "number of time slices")->capture_default_str();
        app->add_option("--vitals-loopback", slice.vitals_loopback_hours)->capture_default_str();
        app->add_option("--labs-loopback", slice.labs_loopback_hours)->capture_default_str();
        app->add_option("--anchor", anchor)->check(CLI::IsMember({"rolled-back", "clockwise"}))->capture_default_str();
    }

    SliceConfig resolved_slice() const {
        SliceConfig c = slice;
        c.anchoring = anchoring_from_string(anchor);
        c.validate();
        for (const auto& w : c.warnings()) log("warning: " + w);
        return c;
    }

    bool has_raw() const { return !observations.empty() || !outcomes.empty(); }

    std::vector<PatientStay> stays(Run& run, const VariableCatalog& cat) const {
        if (observations.empty() || outcomes.empty())
            throw ValidationError("--observations and --outcomes are both required");
        run.input(observations);
        run.input(outcomes);
        auto r = ingest_observations(fs::path(observations), fs::path(outcomes), cat);
        log("ingested " + std::to_string(r.rows_accepted) + " of " + std::to_string(r.rows_read) + " rows, " +
            std::to_string(r.stays.size()) + " stays");
        if (!r.rejected.empty()) log("warning: " + std::to_string(r.rejected.size()) + " rows rejected");
        return std::move(r.stays);
    }

    VariableCatalog load_catalog(Run& run) const {
        run.input(catalog);
        return VariableCatalog::load(catalog);
    }

    std::vector<SliceSeries> series(Run& run, const VariableCatalog& cat) const {
        if (!slices_file.empty()) {
            if (has_raw()) throw ValidationError("give either --slices-file or a raw cohort, not both");
            run.input(slices_file);
            std::ifstream in(slices_file);
            return read_slices_csv(in, cat);
        }
        const auto s = stays(run, cat);
        return build_all_series(s, cat, resolved_slice());
    }
};

std::vector<int> parse_int_list(const std::string& s) {
    std::vector<int> out;
    for (const auto& part : split(s, ',')) {
        const auto v = parse_double(trim(part));
        if (!v || *v != static_cast<int>(*v)) throw ValidationError("expected integers, got '" + s + "'");
        out.push_back(static_cast<int>(*v));
    }
    return out;
}

std::vector<double> parse_double_list(const std::string& s) {
    std::vector<double> out;
    for (const auto& part : split(s, ',')) {
        const auto v = parse_double(trim(part));
        if (!v) throw ValidationError("expected numbers, got '" + s + "'");
        out.push_back(*v);
    }
    return out;
}

std::vector<std::string> parse_word_list(const std::string& s) {
    std::vector<std::string> out;
    for (const auto& part : split(s, ','))
        if (!trim(part).empty()) out.push_back(to_lower(trim(part)));
    return out;
}

ScoreTables load_tables(Run& run, const std::string& dir) {
    const fs::path d = dir.empty() ? tables_dir() : fs::path(dir);
    for (const char* f : {"sofa.json", "qsofa.json", "mews.json", "sapsii.json"}) run.input(d / f);
    return ScoreTables::load(d);
}

std::string join(const std::vector<std::string>& v, const std::string& sep) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? sep : "") + v[i];
    return out;
}

std::string predictions_csv(const std::vector<SliceSeries>& series, const std::vector<double>& p,
                            const std::vector<double>* calibrated) {
    std::ostringstream out;
    out << "stay_id,patient_id,label,probability" << (calibrated ? ",calibrated" : "") << "\n";
    for (std::size_t i = 0; i < series.size(); ++i) {
        std::vector<std::string> row = {series[i].stay_id, series[i].patient_id, series[i].label ? "1" : "0",
                                        format_double(p[i])};
        if (calibrated) row.push_back(format_double((*calibrated)[i]));
        out << csv_join(row) << "\n";
    }
    return out.str();
}

// Reads `column` and `label` from a predictions CSV.
void read_predictions(const fs::path& path, const std::string& column, std::vector<double>& p, std::vector<int>& y) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open '" + path.string() + "'");
    CsvReader reader(in);
    const auto c_p = reader.column(column), c_y = reader.column("label");
    CsvRow row;
    while (reader.next(row)) {
        const auto v = parse_double(row.fields[c_p]);
        if (!v) throw ParseError("bad probability '" + row.fields[c_p] + "'", row.line);
        const auto lab = trim(row.fields[c_y]);
        if (lab != "0" && lab != "1") throw ParseError("label must be 0 or 1", row.line);
        p.push_back(*v);
        y.push_back(lab == "1");
    }
}

// ---- subcommands ------------------------------------------------------------------------

struct SimulateCmd {
    SimulationConfig cfg;
    std::string catalog = (data_dir() / "catalog.json").string();

    void add(CLI::App* app) {
        app->add_option("--n", cfg.n_stays, "number of ICU stays")->capture_default_str();
        app->add_option("--icu-death-rate", cfg.icu_death_rate)->capture_default_str();
        app->add_option("--post-death-rate", cfg.post_discharge_death_rate)->capture_default_str();
        app->add_option("--tau-hours", cfg.tau_hours, "deterioration time constant")->capture_default_str();
        app->add_option("--signal", cfg.signal, "severity effect multiplier")->capture_default_str();
        app->add_option("--catalog", catalog)->check(CLI::ExistingFile)->capture_default_str();
    }
    void run(Run& r, std::uint64_t seed) {
        r.input(catalog);
        const auto cat = VariableCatalog::load(catalog);
        cfg.seed = derive_seed(seed, "simulate");
        const auto cohort = simulate_cohort(cat, cfg);
        r.add("observations.csv", cohort.observations_csv());
        r.add("outcomes.csv", cohort.outcomes_csv());
        r.add("demographics.csv", cohort.demographics_csv());
        r.add("notes.csv", cohort.notes_csv());
        r.add("criteria.csv", cohort.criteria_csv());
    }
};

struct IngestCmd {
    CohortOptions cohort;
    void add(CLI::App* app) {
        app->add_option("--observations", cohort.observations)->required()->check(CLI::ExistingFile);
        app->add_option("--outcomes", cohort.outcomes)->required()->check(CLI::ExistingFile);
        app->add_option("--catalog", cohort.catalog)->check(CLI::ExistingFile)->capture_default_str();
    }
    void run(Run& r) {
        const auto cat = cohort.load_catalog(r);
        r.input(cohort.observations);
        r.input(cohort.outcomes);
        const auto res = ingest_observations(fs::path(cohort.observations), fs::path(cohort.outcomes), cat);
        std::ostringstream rej;
        rej << "line,reason\n";
        for (const auto& x : res.rejected) rej << csv_join({std::to_string(x.line), x.reason}) << "\n";
        json summary = {{"rows_read", res.rows_read},
                        {"rows_accepted", res.rows_accepted},
                        {"rows_rejected", res.rejected.size()},
                        {"suspect_values", res.suspect_count},
                        {"stays", res.stays.size()}};
        r.add("ingest.json", summary.dump(2) + "\n");
        r.add("rejected.csv", rej.str());
        r.add("cohort_summary.csv", summarize_cohort(res.stays, cat).to_csv());
    }
};

struct SliceCmd {
    CohortOptions cohort;
    bool fit_boxcox = false;
    void add(CLI::App* app) {
        cohort.add_raw(app);
        app->add_flag("--fit-boxcox", fit_boxcox, "refit Box-Cox lambdas on this cohort");
    }
    void run(Run& r) {
        auto cat = cohort.load_catalog(r);
        const auto stays = cohort.stays(r, cat);
        if (fit_boxcox) fit_boxcox_transforms(cat, stays);
        const auto series = build_all_series(stays, cat, cohort.resolved_slice());
        std::size_t truncated = 0;
        for (const auto& s : series) truncated += s.truncated;
        if (truncated) log(std::to_string(truncated) + " series reach outside their stay (early slices may be empty)");
        r.add("slices.csv", slices_to_csv(series, cat));
        r.add("catalog.json", cat.to_json().dump(2) + "\n");
    }
};

struct ScoreCmd {
    CohortOptions cohort;
    std::string demographics, tables;
    std::string which = "sofa,qsofa,mews,sapsii";
    std::string agg = "per-slice";
    void add(CLI::App* app) {
        cohort.add_raw(app);
        cohort.add_slices_file(app);
        app->add_option("--demographics", demographics, "stay_id,age,admission_type,chronic")
            ->check(CLI::ExistingFile);
        app->add_option("--tables", tables, "score table directory (default $TRD_TABLES_DIR or tables/)");
        app->add_option("--which", which, "comma list of sofa,qsofa,mews,sapsii")->capture_default_str();
        app->add_option("--agg", agg, "one row per slice, or the first or worst slice per stay")
            ->check(CLI::IsMember({"per-slice", "first", "max"}))
            ->capture_default_str();
    }

    // Scores of one slice, in `which` order.
    std::vector<ScoreResult> score_slice(const ScoreTables& t, const TimeSlice& slice, const PatientContext& ctx,
                                         const std::vector<std::string>& names) const {
        const auto in = score_inputs(slice);
        std::vector<ScoreResult> out;
        for (const auto& n : names) {
            if (n == "sofa") out.push_back(sofa_score(t.sofa, in));
            else if (n == "qsofa") out.push_back(qsofa_score(t.qsofa, in));
            else if (n == "mews") out.push_back(mews_score(t.mews, in));
            else out.push_back(sapsii_score(t.sapsii, in, ctx));
        }
        return out;
    }

    void run(Run& r) {
        const auto names = parse_word_list(which);
        if (names.empty()) throw ValidationError("--which names no score");
        for (const auto& n : names)
            if (n != "sofa" && n != "qsofa" && n != "mews" && n != "sapsii")
                throw ValidationError("unknown score '" + n + "'");
        const auto cat = cohort.load_catalog(r);
        const auto series = cohort.series(r, cat);
        const auto t = load_tables(r, tables);
        std::map<std::string, PatientContext> demo;
        if (!demographics.empty()) {
            r.input(demographics);
            demo = read_demographics_csv(fs::path(demographics));
        }

        std::vector<std::string> header = {"stay_id", "slice"};
        for (const auto& n : names) {
            header.push_back(n);
            if (n == "qsofa") header.push_back("qsofa_positive");
            if (n == "sapsii") header.push_back("sapsii_mortality");
        }
        header.push_back("missing");
        std::ostringstream out;
        out << csv_join(header) << "\n";
        const auto emit = [&](const std::string& stay, const std::string& qualifier,
                              const std::vector<ScoreResult>& res) {
            std::vector<std::string> row = {stay, qualifier};
            std::set<std::string> missing;
            for (std::size_t i = 0; i < names.size(); ++i) {
                row.push_back(std::to_string(res[i].score));
                if (names[i] == "qsofa") row.push_back(res[i].score >= kQsofaCutPoint ? "1" : "0");
                if (names[i] == "sapsii") row.push_back(format_double(sapsii_mortality(res[i].score)));
                for (const auto& m : res[i].missing) missing.insert(names[i] + ":" + m);
            }
            row.push_back(join({missing.begin(), missing.end()}, ";"));
            out << csv_join(row) << "\n";
        };

        const PatientContext empty;
        for (const auto& s : series) {
            if (s.slices.empty()) continue;
            const auto it = demo.find(s.stay_id);
            const auto& ctx = it == demo.end() ? empty : it->second;
            if (agg == "per-slice") {
                for (const auto& slice : s.slices)
                    emit(s.stay_id, std::to_string(slice.index), score_slice(t, slice, ctx, names));
            } else if (agg == "first") {
                emit(s.stay_id, "first", score_slice(t, *s.chronological().front(), ctx, names));
            } else {
                // Each score takes its own worst slice; missing flags come from that slice.
                std::vector<ScoreResult> worst;
                for (const auto& slice : s.slices) {
                    auto res = score_slice(t, slice, ctx, names);
                    if (worst.empty()) {
                        worst = std::move(res);
                        continue;
                    }
                    for (std::size_t i = 0; i < res.size(); ++i)
                        if (res[i].score > worst[i].score) worst[i] = std::move(res[i]);
                }
                emit(s.stay_id, "max", worst);
            }
        }

        const auto base = baseline_scores(series, t, demo);
        for (const auto& w : base.warnings) log("warning: " + w);
        std::ostringstream summary;
        summary << "stay_id,label,sofa_first,sofa_max,qsofa_max,mews_max,sapsii_max\n";
        for (std::size_t i = 0; i < series.size(); ++i)
            summary << csv_join({series[i].stay_id, series[i].label ? "1" : "0", format_double(base.sofa_first[i]),
                                 format_double(base.sofa_max[i]), format_double(base.qsofa[i]),
                                 format_double(base.mews[i]), format_double(base.sapsii[i])})
                    << "\n";
        r.add("scores.csv", out.str());
        r.add("score_summary.csv", summary.str());
    }
};

struct EmOptions {
    EmConfig em;
    double class_prior = -1;  // negative: use the empirical prevalence
    std::string template_path = (data_dir() / "fig2_template.json").string();

    void add(CLI::App* app) {
        app->add_option("--template", template_path, "network template JSON")
            ->check(CLI::ExistingFile)
            ->capture_default_str();
        app->add_option("--max-iter", em.max_iter)->capture_default_str();
        app->add_option("--tol", em.tol, "relative log-likelihood tolerance")->capture_default_str();
        app->add_option("--threads", em.threads, "E-step worker threads")->capture_default_str();
        app->add_option("--class-prior", class_prior, "override the empirical death prevalence")
            ->check(CLI::Range(0.0, 1.0));
    }
    NetworkTemplate load(Run& r) const {
        r.input(template_path);
        return NetworkTemplate::load(template_path);
    }
    EmConfig resolved() const {
        EmConfig c = em;
        if (class_prior >= 0) c.class_prior = class_prior;
        return c;
    }
};

struct TrainCmd {
    CohortOptions cohort;
    EmOptions em;
    int folds = 0;
    void add(CLI::App* app) {
        cohort.add_raw(app);
        cohort.add_slices_file(app);
        em.add(app);
        app->add_option("--folds", folds, "also report a cross-validated AUC (0 = skip)")->capture_default_str();
    }
    void run(Run& r, std::uint64_t seed) {
        const auto cat = cohort.load_catalog(r);
        const auto tmpl = em.load(r);
        const auto series = cohort.series(r, cat);
        const auto data = to_training_set(series, tmpl, cat);
        auto cfg = em.resolved();
        cfg.seed = derive_seed(seed, "em");
        log("training on " + std::to_string(data.size()) + " series");
        const auto model = em_fit(tmpl, data, cfg);
        for (const auto& w : model.info.warnings) log("warning: " + w);
        std::vector<double> fitted;
        for (const auto& x : data.evidence) fitted.push_back(predict_mortality(model, x));
        json rep;
        rep["format"] = "trd-train/1";
        rep["n"] = data.size();
        rep["deaths"] = std::count(data.labels.begin(), data.labels.end(), 1);
        rep["slices"] = series.empty() ? 0 : series.front().slices.size();
        rep["iterations"] = model.info.iterations;
        rep["log_likelihood"] = model.info.log_likelihood;
        rep["converged"] = model.info.converged;
        rep["warnings"] = model.info.warnings;
        const auto deaths = std::count(data.labels.begin(), data.labels.end(), 1);
        if (deaths > 0 && deaths < static_cast<long>(data.size())) rep["training_auc"] = roc_auc(fitted, data.labels);
        if (folds > 0) {
            std::vector<std::string> patients;
            for (const auto& s : series) patients.push_back(s.patient_id);
            const auto f = assign_folds(patients, folds, derive_seed(seed, "folds"));
            const auto pred = dbn_cross_validated(data, f, folds, tmpl, cfg);
            const auto ci = auc_ci(pred, data.labels, f);
            rep["cv"] = {{"folds", folds}, {"auc", ci.auc}, {"auc_ci", {ci.ci.lo, ci.ci.hi}}};
        }
        r.add("model.json", model.to_json().dump(1) + "\n");
        r.add("train_report.json", rep.dump(2) + "\n");
    }
};

struct PredictCmd {
    CohortOptions cohort;
    std::string model_path, calibration_path;
    int lookahead = 0;
    void add(CLI::App* app) {
        cohort.add_raw(app);
        cohort.add_slices_file(app);
        app->add_option("--model", model_path)->required()->check(CLI::ExistingFile);
        app->add_option("--lookahead", lookahead, "future slices to marginalize")->capture_default_str();
        app->add_option("--calibration", calibration_path, "calibration map JSON")->check(CLI::ExistingFile);
    }
    void run(Run& r) {
        const auto cat = cohort.load_catalog(r);
        r.input(model_path);
        const auto model = TrainedDBN::load(model_path);
        const auto series = cohort.series(r, cat);
        std::vector<double> p;
        for (const auto& s : series) p.push_back(forward_predict(model, series_to_evidence(s, model.tmpl, cat), lookahead));
        if (calibration_path.empty()) {
            r.add("predictions.csv", predictions_csv(series, p, nullptr));
            return;
        }
        r.input(calibration_path);
        const auto map = CalibrationMap::from_json(json::parse(read_text_file(calibration_path)));
        const auto cal = apply_calibration(map, p);
        r.add("predictions.csv", predictions_csv(series, p, &cal));
    }
};

struct EvaluateCmd {
    CohortOptions cohort;
    EmOptions em;
    EvaluationConfig cfg;
    std::string demographics, tables, baselines = "sofa,qsofa,mews,sapsii", ablation, baseline_fit = "per-fold";
    bool no_calibrate = false, online = false;
    void add(CLI::App* app) {
        cohort.add_raw(app);
        cohort.add_slices_file(app);
        em.add(app);
        app->add_option("--demographics", demographics)->check(CLI::ExistingFile);
        app->add_option("--tables", tables, "score table directory");
        app->add_option("--folds", cfg.folds)->capture_default_str();
        app->add_option("--cutoff", cfg.cutoff, "probability cutoff for confusion metrics")->capture_default_str();
        app->add_option("--baselines", baselines, "comma list of sofa,qsofa,mews,sapsii (empty for none)")
            ->capture_default_str();
        app->add_option("--baseline-fit", baseline_fit, "fit the score baselines per training fold or once globally")
            ->check(CLI::IsMember({"per-fold", "global"}))
            ->capture_default_str();
        app->add_flag("--no-calibrate", no_calibrate, "skip the trend-filter calibrated DBN row");
        app->add_flag("--bootstrap", cfg.reclass.bootstrap, "bootstrap cNRI/IDI intervals");
        app->add_option("--ablation", ablation, "slice counts for the ablation table, e.g. 2,3,4");
        app->add_flag("--online", online, "build online validation sets and report their AUCs");
    }
    void run(Run& r, std::uint64_t seed) {
        const auto cat = cohort.load_catalog(r);
        const auto tmpl = em.load(r);
        cfg.seed = seed;
        cfg.em = em.resolved();
        cfg.calibrate = !no_calibrate;
        cfg.baselines = parse_word_list(baselines);
        cfg.global_baselines = baseline_fit == "global";
        std::vector<PatientStay> stays;
        std::vector<SliceSeries> series;
        if (cohort.slices_file.empty()) {
            stays = cohort.stays(r, cat);
            series = build_all_series(stays, cat, cohort.resolved_slice());
        } else {
            series = cohort.series(r, cat);
        }
        std::map<std::string, PatientContext> demo;
        if (!demographics.empty()) {
            r.input(demographics);
            demo = read_demographics_csv(fs::path(demographics));
        }
        std::optional<ScoreTables> t;
        if (!cfg.baselines.empty()) t = load_tables(r, tables);
        log("evaluating " + std::to_string(series.size()) + " series with " + std::to_string(cfg.folds) + " folds");
        const auto report = evaluate_cohort(series, tmpl, cat, t ? &*t : nullptr, demo, cfg);
        for (const auto& w : report.warnings) log("warning: " + w, 2);
        r.add("report.json", report_json(report).dump(2) + "\n");
        r.add("table3.csv", discrimination_table_csv(report));
        r.add("table6.csv", reclassification_table_csv(report));
        r.add("cox_calibration.csv", calibration_table_csv(report));
        r.add("roc.csv", roc_csv(report));
        r.add("calibration.csv", reliability_csv(report));
        r.add("riskdist.csv", riskdist_csv(report));
        if (!ablation.empty() || online) {
            if (stays.empty()) throw ValidationError("--ablation and --online need a raw cohort, not --slices-file");
        }
        if (!ablation.empty()) {
            const auto counts = parse_int_list(ablation);
            log("ablation over " + ablation + " slices");
            const auto a = run_ablation(stays, cat, tmpl, cohort.resolved_slice(), counts, cfg);
            r.add("ablation.csv", ablation_table_csv(a));
            r.add("ablation.json", ablation_json(a).dump(2) + "\n");
        }
        if (online) {
            log("online validation");
            const auto o = run_online_validation(stays, cat, tmpl, cohort.resolved_slice(), seed, cfg.em);
            r.add("table4.csv", online_table_csv(o));
            r.add("online.json", online_json(o).dump(2) + "\n");
        }
    }
};

struct CalibrateCmd {
    std::string predictions, column = "probability", lambda_grid;
    TrendCalibrationConfig cfg;
    void add(CLI::App* app) {
        app->add_option("--predictions", predictions, "CSV with a label column")->required()->check(CLI::ExistingFile);
        app->add_option("--column", column, "probability column")->capture_default_str();
        app->add_option("--lambda-grid", lambda_grid, "comma list of trend-filter weights");
        app->add_option("--bins", cfg.bins)->capture_default_str();
        app->add_option("--ensemble", cfg.ensemble)->capture_default_str();
        app->add_option("--cv-folds", cfg.cv_folds)->capture_default_str();
    }
    void run(Run& r, std::uint64_t seed) {
        r.input(predictions);
        std::vector<double> p;
        std::vector<int> y;
        read_predictions(predictions, column, p, y);
        if (!lambda_grid.empty()) cfg.lambda_grid = parse_double_list(lambda_grid);
        cfg.seed = derive_seed(seed, "calibration");
        const auto map = l1_trend_calibrate(p, y, cfg);
        for (const auto& w : map.warnings) log("warning: " + w);
        const auto cal = apply_calibration(map, p);
        auto cox_json = [](const std::vector<double>& q, const std::vector<int>& lab) {
            const auto c = cox_calibration(q, lab);
            return json{{"alpha", c.alpha}, {"beta", c.beta}, {"U", c.U}, {"p_value", c.p_value},
                        {"separation", c.separation}};
        };
        json summary = {{"n", p.size()},
                        {"log_loss_before", log_loss(p, y)},
                        {"log_loss_after", log_loss(cal, y)},
                        {"ece_before", expected_calibration_error(p, y)},
                        {"ece_after", expected_calibration_error(cal, y)},
                        {"cox_before", cox_json(p, y)},
                        {"cox_after", cox_json(cal, y)}};
        std::ostringstream out;
        out << "probability,label,calibrated\n";
        for (std::size_t i = 0; i < p.size(); ++i)
            out << csv_join({format_double(p[i]), std::to_string(y[i]), format_double(cal[i])}) << "\n";
        r.add("calibration.json", map.to_json().dump(2) + "\n");
        r.add("calibration_summary.json", summary.dump(2) + "\n");
        r.add("calibrated.csv", out.str());
    }
};

struct NlpFiles {
    std::string lexicon = (data_dir() / "lexicon.txt").string();
    std::string rules = (data_dir() / "triggers.txt").string();
    void add(CLI::App* app) {
        app->add_option("--lexicon", lexicon)->check(CLI::ExistingFile)->capture_default_str();
        app->add_option("--rules", rules, "trigger rules")->check(CLI::ExistingFile)->capture_default_str();
    }
};

std::vector<Note> load_notes(Run& r, const std::string& path) {
    r.input(path);
    std::ifstream in(path);
    return read_notes_csv(in);
}

struct NlpLabelCmd {
    std::string notes;
    NlpFiles files;
    void add(CLI::App* app) {
        app->add_option("--notes", notes)->required()->check(CLI::ExistingFile);
        files.add(app);
    }
    void run(Run& r) {
        const auto ns = load_notes(r, notes);
        r.input(files.lexicon);
        r.input(files.rules);
        const auto lex = Lexicon::load(files.lexicon);
        const auto rules = TriggerRuleSet::load(files.rules);
        std::ostringstream out;
        out << "note_id,stay_id,assertion,rationale\n";
        for (const auto& n : ns) {
            const auto l = heuristic_label(n.text, lex, rules, n.note_id);
            out << csv_join({n.note_id, n.stay_id, to_string(l.assertion), join(l.rationale, "|")}) << "\n";
        }
        r.add("note_labels.csv", out.str());
    }
};

std::map<std::string, NoteAssertion> read_note_labels(Run& r, const std::string& path) {
    r.input(path);
    std::ifstream in(path);
    CsvReader reader(in);
    const auto c_id = reader.column("note_id"), c_a = reader.column("assertion");
    std::map<std::string, NoteAssertion> out;
    CsvRow row;
    while (reader.next(row)) out[row.fields[c_id]] = note_assertion_from_string(row.fields[c_a]);
    return out;
}

struct NlpTrainCmd {
    std::string notes, labels, possible = "exclude";
    TextModelConfig cfg;
    void add(CLI::App* app) {
        app->add_option("--notes", notes)->required()->check(CLI::ExistingFile);
        app->add_option("--labels", labels, "note_labels.csv from `nlp label`")->required()->check(CLI::ExistingFile);
        app->add_option("--possible", possible, "how to treat possible_infection labels")
            ->check(CLI::IsMember({"exclude", "positive", "negative"}))
            ->capture_default_str();
        app->add_option("--epochs", cfg.epochs)->capture_default_str();
        app->add_option("--lambda", cfg.lambda, "L2 weight")->capture_default_str();
    }
    void run(Run& r, std::uint64_t seed) {
        const auto ns = load_notes(r, notes);
        const auto lab = read_note_labels(r, labels);
        std::vector<std::string> texts;
        std::vector<NoteAssertion> y;
        for (const auto& n : ns) {
            const auto it = lab.find(n.note_id);
            if (it == lab.end()) throw ValidationError("note " + n.note_id + " has no label");
            texts.push_back(n.text);
            y.push_back(it->second);
        }
        cfg.possible = possible == "positive"   ? PossiblePolicy::positive
                       : possible == "negative" ? PossiblePolicy::negative
                                                : PossiblePolicy::exclude;
        cfg.seed = derive_seed(seed, "text-classifier");
        const auto model = train_text_classifier(texts, y, cfg);
        r.add("text_model.json", model.to_json().dump(1) + "\n");
    }
};

struct NlpPredictCmd {
    std::string notes, model;
    void add(CLI::App* app) {
        app->add_option("--notes", notes)->required()->check(CLI::ExistingFile);
        app->add_option("--model", model)->required()->check(CLI::ExistingFile);
    }
    void run(Run& r) {
        const auto ns = load_notes(r, notes);
        r.input(model);
        const auto m = LinearTextModel::from_json(json::parse(read_text_file(model)));
        std::ostringstream out;
        out << "note_id,stay_id,infection,score\n";
        for (const auto& n : ns) {
            const auto p = predict_note(m, n.text);
            out << csv_join({n.note_id, n.stay_id, p.infection ? "1" : "0", format_double(p.score)}) << "\n";
        }
        r.add("note_predictions.csv", out.str());
    }
};

struct NlpIncludeCmd {
    std::string criteria, note_file, outcomes;
    std::string icd9 = (data_dir() / "icd9_infection.txt").string();
    void add(CLI::App* app) {
        app->add_option("--criteria", criteria, "stay_id,criterion,value")->required()->check(CLI::ExistingFile);
        app->add_option("--notes-labels", note_file, "note_labels.csv or note_predictions.csv")
            ->check(CLI::ExistingFile);
        app->add_option("--icd9", icd9, "infection code prefixes")->check(CLI::ExistingFile)->capture_default_str();
        app->add_option("--outcomes", outcomes, "outcomes CSV listing every stay")->check(CLI::ExistingFile);
    }
    void run(Run& r) {
        r.input(criteria);
        r.input(icd9);
        std::ifstream cin_(criteria);
        const auto crit = StructuredCriteria::read_csv(cin_);
        const auto prefixes = load_icd9_prefixes(icd9);
        std::map<std::string, std::vector<bool>> infected;
        std::set<std::string> stay_set;
        if (!note_file.empty()) {
            r.input(note_file);
            std::ifstream in(note_file);
            CsvReader reader(in);
            const auto c_stay = reader.column("stay_id");
            const auto c_inf = reader.find_column("infection");
            const auto c_a = reader.find_column("assertion");
            if (!c_inf && !c_a) throw ValidationError("note file needs an infection or assertion column");
            CsvRow row;
            while (reader.next(row)) {
                const bool pos = c_inf ? trim(row.fields[*c_inf]) == "1"
                                       : note_assertion_from_string(row.fields[*c_a]) == NoteAssertion::infection;
                infected[row.fields[c_stay]].push_back(pos);
                stay_set.insert(row.fields[c_stay]);
            }
        }
        if (!outcomes.empty()) {
            r.input(outcomes);
            std::ifstream in(outcomes);
            for (const auto& s : read_outcomes(in)) stay_set.insert(s.stay_id);
        }
        for (const auto& [s, v] : crit.orders) stay_set.insert(s);
        for (const auto& [s, v] : crit.icd9_codes) stay_set.insert(s);
        const std::vector<std::string> stays(stay_set.begin(), stay_set.end());
        std::ostringstream out;
        out << "stay_id,included,rationale\n";
        std::size_t n_in = 0;
        for (const auto& d : flag_stays(stays, crit, prefixes, infected)) {
            n_in += d.included;
            out << csv_join({d.stay_id, d.included ? "1" : "0", join(d.rationale, "|")}) << "\n";
        }
        log(std::to_string(n_in) + " of " + std::to_string(stays.size()) + " stays included");
        r.add("inclusion.csv", out.str());
    }
};

int run_cli(std::vector<std::string> args);

int rerun(const std::string& manifest_path, const std::string& out_override) {
    const auto m = json::parse(read_text_file(manifest_path));
    if (m.value("format", "") != "trd-manifest/1") throw ValidationError("not a trd manifest: " + manifest_path);
    auto argv = m.at("argv").get<std::vector<std::string>>();
    std::string out_dir;
    for (std::size_t i = 0; i < argv.size(); ++i) {
        if (argv[i] == "--out" && i + 1 < argv.size()) {
            if (!out_override.empty()) argv[i + 1] = out_override;
            out_dir = argv[i + 1];
        } else if (argv[i].rfind("--out=", 0) == 0) {
            if (!out_override.empty()) argv[i] = "--out=" + out_override;
            out_dir = argv[i].substr(6);
        }
    }
    for (const auto& [path, digest] : m.at("inputs").items()) {
        if (!fs::exists(path) || sha256_hex(read_text_file(path)) != digest.get<std::string>())
            log("warning: input " + path + " differs from the recorded run");
    }
    const int status = run_cli(argv);
    if (status != 0) return status;
    std::size_t mismatched = 0;
    for (const auto& [name, digest] : m.at("artifacts").items()) {
        const auto p = fs::path(out_dir) / name;
        if (!fs::exists(p) || sha256_hex(read_text_file(p)) != digest.get<std::string>()) {
            std::cerr << "trd: artifact differs: " << name << "\n";
            ++mismatched;
        }
    }
    if (mismatched) {
        std::cerr << "trd: rerun reproduced " << m.at("artifacts").size() - mismatched << " of "
                  << m.at("artifacts").size() << " artifacts\n";
        return 1;
    }
    log("rerun reproduced all " + std::to_string(m.at("artifacts").size()) + " artifacts byte-identically");
    return 0;
}

int run_cli(std::vector<std::string> args) {
    CLI::App app{"Time-sliced ICU mortality risk: slicing, DBN training, baselines and evaluation", "trd"};
    app.require_subcommand(1);
    std::uint64_t seed = 0;
    std::string out;
    int verbose = 0;
    bool quiet = false;

    struct Entry {
        CLI::App* app;
        std::function<void(Run&)> run;
        bool writes = true;
    };
    std::vector<Entry> entries;
    auto common = [&](CLI::App* sub) {
        sub->add_option("--seed", seed, "root seed; every stage derives its own")->capture_default_str();
        sub->add_option("--out", out, "output directory")->required();
        sub->add_flag("-v,--verbose", verbose, "more progress output");
        sub->add_flag("-q,--quiet", quiet, "no progress output");
    };

    SimulateCmd simulate;
    IngestCmd ingest;
    SliceCmd slice;
    ScoreCmd score;
    TrainCmd train;
    PredictCmd predict;
    EvaluateCmd evaluate;
    CalibrateCmd calibrate;
    NlpLabelCmd nlp_label;
    NlpTrainCmd nlp_train;
    NlpPredictCmd nlp_predict;
    NlpIncludeCmd nlp_include;

    auto reg = [&](CLI::App* sub, auto& cmd, auto fn) {
        cmd.add(sub);
        common(sub);
        entries.push_back({sub, fn});
    };
    reg(app.add_subcommand("simulate", "write a synthetic cohort"), simulate,
        [&](Run& r) { simulate.run(r, seed); });
    reg(app.add_subcommand("ingest", "validate observations and summarize the cohort"), ingest,
        [&](Run& r) { ingest.run(r); });
    reg(app.add_subcommand("slice", "build time-slice series"), slice, [&](Run& r) { slice.run(r); });
    reg(app.add_subcommand("score", "SOFA, qSOFA, MEWS and SAPS-II per slice"), score, [&](Run& r) { score.run(r); });
    reg(app.add_subcommand("train", "fit the DBN by EM"), train, [&](Run& r) { train.run(r, seed); });
    reg(app.add_subcommand("predict", "predict mortality with a trained DBN"), predict,
        [&](Run& r) { predict.run(r); });
    reg(app.add_subcommand("evaluate", "cross-validated DBN against score baselines"), evaluate,
        [&](Run& r) { evaluate.run(r, seed); });
    reg(app.add_subcommand("calibrate", "trend-filter calibration of predicted probabilities"), calibrate,
        [&](Run& r) { calibrate.run(r, seed); });
    auto* nlp = app.add_subcommand("nlp", "infection tagging of clinical notes");
    nlp->require_subcommand(1);
    reg(nlp->add_subcommand("label", "heuristic assertion labels"), nlp_label, [&](Run& r) { nlp_label.run(r); });
    reg(nlp->add_subcommand("train", "train the bag-of-words classifier"), nlp_train,
        [&](Run& r) { nlp_train.run(r, seed); });
    reg(nlp->add_subcommand("predict", "classify notes"), nlp_predict, [&](Run& r) { nlp_predict.run(r); });
    reg(nlp->add_subcommand("include", "apply the three inclusion criteria"), nlp_include,
        [&](Run& r) { nlp_include.run(r); });

    std::string manifest, rerun_out;
    auto* rr = app.add_subcommand("rerun", "replay a manifest and verify artifact digests");
    rr->add_option("--manifest", manifest)->required()->check(CLI::ExistingFile);
    rr->add_option("--out", rerun_out, "write into this directory instead of the recorded one");

    std::vector<std::string> rev(args.rbegin(), args.rend() - 1);
    try {
        app.parse(rev);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "trd: usage error: " << e.what() << "\n\n" << app.help();
        return 2;
    }
    g_verbosity = quiet ? 0 : 1 + verbose;

    try {
        if (*rr) return rerun(manifest, rerun_out);
        for (auto& e : entries) {
            if (!*e.app) continue;
            Run run;
            run.subcommand = e.app->get_parent() == nlp ? "nlp " + e.app->get_name() : e.app->get_name();
            run.argv.assign(args.begin(), args.end());
            run.out = out;
            run.config = resolved_options(e.app);
            run.config["root_seed"] = seed;
            e.run(run);
            run.commit();
            return 0;
        }
    } catch (const ParseError& e) {
        std::cerr << json{{"error", "parse"}, {"message", e.what()}, {"line", e.line()}}.dump() << "\n";
        return 1;
    } catch (const ValidationError& e) {
        std::cerr << json{{"error", "validation"}, {"message", e.what()}}.dump() << "\n";
        return 1;
    } catch (const StructureError& e) {
        std::cerr << json{{"error", "structure"}, {"message", e.what()}}.dump() << "\n";
        return 1;
    } catch (const DomainError& e) {
        std::cerr << json{{"error", "domain"}, {"message", e.what()}}.dump() << "\n";
        return 1;
    } catch (const NumericalError& e) {
        std::cerr << json{{"error", "numerical"}, {"message", e.what()}}.dump() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << json{{"error", "io"}, {"message", e.what()}}.dump() << "\n";
        return 1;
    }
    return 2;
}

}  // namespace

int main(int argc, char** argv) { return run_cli(std::vector<std::string>(argv, argv + argc)); }
