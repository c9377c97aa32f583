// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit when any fails.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <boost/multiprecision/cpp_bin_float.hpp>

#include "oracles.hpp"
#include "trd/calibration.hpp"
#include "trd/crossval.hpp"
#include "trd/metrics.hpp"
#include "trd/nlp.hpp"
#include "trd/pipeline.hpp"
#include "trd/report.hpp"
#include "trd/scores.hpp"
#include "trd/simulate.hpp"
#include "trd/slicer.hpp"

using namespace trd;
namespace fs = std::filesystem;

namespace {

struct Verdict {
    bool pass = false;
    std::string detail;
};

class Stopwatch {
public:
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fmt(double v, int digits = 4) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*g", digits, v);
    return buf;
}

const VariableCatalog& catalog() {
    static const VariableCatalog c = VariableCatalog::load(data_dir() / "catalog.json");
    return c;
}

const NetworkTemplate& fig2() {
    static const NetworkTemplate t = NetworkTemplate::load(data_dir() / "fig2_template.json");
    return t;
}

// Every CPD row: intercept `shift * class` for shifted nodes, coefficient `ar` on each continuous
// parent, unit variance. Discrete nodes are absent from these templates.
TrainedDBN shifted_model(const NetworkTemplate& tmpl, const std::set<std::string>& shifted, double shift, double ar,
                         double prior) {
    TrainedDBN m;
    m.tmpl = tmpl;
    m.class_prior = prior;
    m.gaussian.resize(tmpl.nodes.size());
    m.discrete.resize(tmpl.nodes.size());
    for (std::size_t node : tmpl.slice_nodes())
        for (int tie : {kInitial, kTransition}) {
            const auto& fam = tmpl.family(node, static_cast<Tie>(tie));
            for (std::size_t k = 0; k < fam.n_configs(); ++k) {
                LinearGaussianCPD::Row row;
                const bool has_class = !fam.discrete.empty() && fam.discrete[0].node == tmpl.class_index();
                row.intercept = has_class && (k & 1) && shifted.contains(tmpl.nodes[node].name) ? shift : 0.0;
                row.coefficients = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(fam.continuous.size()), ar);
                row.variance = 1.0;
                m.gaussian[node][tie].rows.push_back(row);
            }
        }
    return m;
}

// ---------------------------------------------------------------------------------------------

Verdict ac1_inference_exactness() {
    Stopwatch w;
    std::mt19937_64 rng(20240101);
    double worst = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const auto tmpl = NetworkTemplate::from_json(oracle::random_template_json(rng, 5));
        const auto model = oracle::random_model(tmpl, rng);
        const auto x = oracle::random_evidence(tmpl, 2, 0.7, rng);
        worst = std::max(worst, std::abs(predict_mortality(model, x) - oracle::posterior(model, x)));
    }
    const double t = w.seconds();
    return {worst <= 1e-9 && t < 10, "max |diff| " + fmt(worst) + ", " + fmt(t, 3) + " s"};
}

Verdict ac2_em_recovery() {
    Stopwatch w;
    const auto tmpl = NetworkTemplate::from_json(nlohmann::json{
        {"version", "truth-6"},
        {"class_node", "y"},
        {"nodes",
         {{{"name", "y"}, {"kind", "discrete"}},
          {{"name", "A"}},
          {{"name", "B"}},
          {{"name", "C"}},
          {{"name", "D"}},
          {{"name", "E"}}}},
        {"within_edges", oracle::edges({{"A", "B"}, {"B", "C"}, {"A", "D"}, {"D", "E"}})},
        {"temporal_edges", oracle::edges({{"A", "A"}, {"B", "B"}, {"C", "C"}, {"D", "D"}, {"E", "E"}, {"C", "E"}})},
        {"class_children", {"A", "C", "E"}}});
    std::mt19937_64 rng(77);
    auto truth = oracle::random_model(tmpl, rng);
    truth.class_prior = 0.3;
    auto data = sample(truth, 4, 5000, 5);
    std::uniform_real_distribution<double> u(0, 1);
    for (auto& x : data.evidence)
        for (Eigen::Index i = 0; i < x.rows(); ++i)
            for (Eigen::Index c = 0; c < x.cols(); ++c)
                if (u(rng) < 0.2) x(i, c) = std::nan("");
    EmConfig cfg;
    cfg.seed = 3;
    const auto fit = em_fit(tmpl, data, cfg);

    double worst_beta = 0, worst_var = 0;
    for (std::size_t node : tmpl.slice_nodes())
        for (int tie : {kInitial, kTransition})
            for (std::size_t k = 0; k < truth.gaussian[node][tie].rows.size(); ++k) {
                const auto& a = truth.gaussian[node][tie].rows[k];
                const auto& b = fit.gaussian[node][tie].rows[k];
                for (Eigen::Index c = 0; c < a.coefficients.size(); ++c)
                    worst_beta = std::max(worst_beta, std::abs(a.coefficients(c) - b.coefficients(c)));
                worst_var = std::max(worst_var, std::abs(b.variance / a.variance - 1));
            }
    const auto& tr = fit.info.log_likelihood_trace;
    bool monotone = true;
    for (std::size_t i = 1; i < tr.size(); ++i)
        if (tr[i] < tr[i - 1] - 1e-9 * std::abs(tr[i - 1])) monotone = false;
    const double t = w.seconds();
    return {worst_beta <= 0.1 && worst_var <= 0.15 && monotone && t < 60,
            "max |beta err| " + fmt(worst_beta) + ", max var rel err " + fmt(worst_var) + ", " +
                std::to_string(tr.size()) + " iterations " + (monotone ? "monotone" : "NOT monotone") + ", " +
                fmt(t, 3) + " s"};
}

Verdict ac3_separation_ordering() {
    const auto tmpl = NetworkTemplate::from_json(nlohmann::json{
        {"version", "shift-3"},
        {"class_node", "y"},
        {"nodes",
         {{{"name", "y"}, {"kind", "discrete"}},
          {{"name", "X1"}},
          {{"name", "X2"}},
          {{"name", "X3"}},
          {{"name", "N1"}},
          {{"name", "N2"}}}},
        {"within_edges", nlohmann::json::array()},
        {"temporal_edges", oracle::edges({{"X1", "X1"}, {"X2", "X2"}, {"X3", "X3"}, {"N1", "N1"}, {"N2", "N2"}})},
        {"class_children", {"X1", "X2", "X3"}}});
    const auto truth = shifted_model(tmpl, {"X1", "X2", "X3"}, 0.4, 0.5, 0.3);
    const auto data = sample(truth, 3, 2000, 42);
    const std::size_t n = data.size();

    std::vector<std::string> ids;
    for (std::size_t i = 0; i < n; ++i) ids.push_back("P" + std::to_string(i));
    const int k = 10;
    const auto folds = assign_folds(ids, k, derive_seed(42, "folds"));

    EmConfig em;
    em.seed = 1;
    const auto dbn = dbn_cross_validated(data, folds, k, tmpl, em);
    const auto dbn_auc = auc_ci(dbn, data.labels, folds);

    double best_auc = 0;
    std::string best_name;
    std::vector<double> best_p;
    for (std::size_t c = 0; c < tmpl.slice_size(); ++c) {
        std::vector<double> x(n);
        for (std::size_t i = 0; i < n; ++i) x[i] = data.evidence[i].col(static_cast<Eigen::Index>(c)).mean();
        std::vector<double> p(n);
        for (int f = 0; f < k; ++f) {
            std::vector<double> xt;
            std::vector<int> yt;
            for (std::size_t i = 0; i < n; ++i)
                if (folds[i] != f) {
                    xt.push_back(x[i]);
                    yt.push_back(data.labels[i]);
                }
            const auto m = fit_univariate_logistic(xt, yt);
            for (std::size_t i = 0; i < n; ++i)
                if (folds[i] == f) p[i] = predict_logistic(m, x[i]);
        }
        const double a = auc_ci(p, data.labels, folds).auc;
        if (a > best_auc) {
            best_auc = a;
            best_name = tmpl.nodes[tmpl.slice_nodes()[c]].name;
            best_p = p;
        }
    }
    const auto r = reclassification(best_p, dbn, data.labels);
    const bool pass = dbn_auc.auc >= best_auc + 0.05 && r.cnri > 0 && r.cnri_ci.lo > 0 && r.idi > 0 && r.idi_ci.lo > 0;
    return {pass, "DBN AUC " + fmt(dbn_auc.auc) + " vs best univariate (" + best_name + ") " + fmt(best_auc) +
                      "; cNRI " + fmt(r.cnri) + " (" + fmt(r.cnri_ci.lo) + ", " + fmt(r.cnri_ci.hi) + "), IDI " +
                      fmt(r.idi) + " (" + fmt(r.idi_ci.lo) + ", " + fmt(r.idi_ci.hi) + ")"};
}

Verdict ac4_horizon_decay() {
    SimulationConfig sc;
    sc.n_stays = 1000;
    sc.seed = 2026;
    const auto cohort = simulate_cohort(catalog(), sc);
    Stopwatch w;
    EmConfig em;
    em.seed = derive_seed(sc.seed, "online-em");
    const auto r = run_online_validation(cohort.stays, catalog(), fig2(), SliceConfig{}, sc.seed, em);
    const double t = w.seconds();
    std::map<std::string, double> auc;
    std::string detail;
    for (const auto& s : r.sets) {
        auc[s.name] = s.auc.value_or(NAN);
        detail += s.name + " " + fmt(auc[s.name]) + " (n=" + std::to_string(s.n) + "), ";
    }
    const auto get = [&](const char* name) { return auc.contains(name) ? auc[name] : NAN; };
    const bool icu = get("in-icu-24h") <= get("in-icu-12h");
    const bool post = get("after-discharge-24h") <= get("after-discharge-12h");
    return {icu && post && t < 30, detail + fmt(t, 3) + " s"};
}

Verdict ac5_sapsii_equation() {
    using big = boost::multiprecision::cpp_bin_float_50;
    double worst = 0;
    for (int s = 0; s <= 160; ++s) {
        const big z = big("-7.7631") + big("0.0737") * s + big("0.9971") * log(big(1 + s));
        const double ref = static_cast<double>(1 / (1 + exp(-z)));
        worst = std::max(worst, std::abs(sapsii_mortality(s) - ref));
    }
    return {worst <= 1e-12, "max |diff| " + fmt(worst)};
}

Verdict ac6_metric_oracles() {
    std::mt19937_64 rng(606);
    double worst_auc = 0, worst_cnri = 0, worst_idi = 0;
    int cases = 0;
    while (cases < 1000) {
        const std::size_t n = 2 + rng() % 199;
        std::uniform_real_distribution<double> u(0, 1);
        const bool coarse = rng() % 2;  // coarse grids force ties
        std::vector<double> p0(n), p1(n);
        std::vector<int> y(n);
        for (std::size_t i = 0; i < n; ++i) {
            p0[i] = coarse ? std::round(u(rng) * 10) / 10 : u(rng);
            p1[i] = coarse ? std::round(u(rng) * 10) / 10 : u(rng);
            y[i] = u(rng) < 0.4;
        }
        const auto ev = std::count(y.begin(), y.end(), 1);
        if (ev == 0 || ev == static_cast<long>(n)) continue;
        ++cases;
        worst_auc = std::max(worst_auc, std::abs(roc_auc(p0, y) - oracle::auc(p0, y)));
        worst_cnri = std::max(worst_cnri, std::abs(cnri(p0, p1, y) - oracle::cnri(p0, p1, y)));
        worst_idi = std::max(worst_idi, std::abs(idi(p0, p1, y) - oracle::idi(p0, p1, y)));
    }
    const double tol = 1e-12;  // summation order differs from the pair-counting oracles
    return {worst_auc <= tol && worst_cnri <= tol && worst_idi <= tol,
            "1000 instances; max |diff| AUC " + fmt(worst_auc) + ", cNRI " + fmt(worst_cnri) + ", IDI " +
                fmt(worst_idi)};
}

Verdict ac7_calibration() {
    std::mt19937_64 rng(707);
    std::normal_distribution<double> z(0, 1);
    std::uniform_real_distribution<double> u(0, 1);
    const std::size_t n = 100000;
    std::vector<double> x(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
        x[i] = z(rng);
        y[i] = u(rng) < logistic(-1.2 + 0.9 * x[i]);
    }
    const auto fit = fit_univariate_logistic(x, y, "x");
    std::vector<double> p(n);
    for (std::size_t i = 0; i < n; ++i) p[i] = predict_logistic(fit, x[i]);
    const auto cox = cox_calibration(p, y);
    const bool fixed_point = std::abs(cox.alpha) <= 0.02 && std::abs(cox.beta - 1) <= 0.02;

    // overconfident and shifted scorer; the map is fitted on one half and judged on the other
    const std::size_t m = 20000;
    std::vector<double> fit_s, test_s;
    std::vector<int> fit_y, test_y;
    for (std::size_t i = 0; i < 2 * m; ++i) {
        const double truth = logistic(-1.0 + 1.0 * z(rng));
        const double shown = logistic(2.0 * logit(truth) + 0.8);
        const int label = u(rng) < truth;
        (i < m ? fit_s : test_s).push_back(shown);
        (i < m ? fit_y : test_y).push_back(label);
    }
    TrendCalibrationConfig cfg;
    cfg.seed = 7;
    const auto map = l1_trend_calibrate(fit_s, fit_y, cfg);
    const double before = expected_calibration_error(test_s, test_y);
    const double after = expected_calibration_error(apply_calibration(map, test_s), test_y);
    return {fixed_point && after <= 0.5 * before,
            "alpha " + fmt(cox.alpha) + ", beta " + fmt(cox.beta) + ", p " + fmt(cox.p_value) + "; held-out ECE " +
                fmt(before) + " -> " + fmt(after)};
}

std::string strip_comments(const std::string& text) {
    std::istringstream in(text);
    std::string out, line;
    while (std::getline(in, line))
        if (!line.starts_with("#")) out += line + "\n";
    return out;
}

Verdict ac8_slicer_golden() {
    const fs::path dir = fs::path(TRD_GOLDEN_DIR) / "slicer";
    const auto ingest = ingest_observations(dir / "observations.csv", dir / "outcomes.csv", catalog());
    std::map<std::string, SliceSeries> series;
    for (const auto& s : ingest.stays) series[s.stay_id] = build_series(s, catalog(), SliceConfig{});

    const std::string expected = strip_comments(read_text_file(dir / "expected.csv"));
    std::istringstream in(expected);
    std::string line, actual;
    std::getline(in, line);
    actual = line + "\n";
    std::size_t rows = 0;
    while (std::getline(in, line)) {
        const auto f = split(line, ',');
        const auto& slice = series.at(f[0]).slices.at(static_cast<std::size_t>(std::stoi(f[1])));
        std::string got;
        if (f[2].starts_with("missing:")) got = slice.missing_indicators.at(f[2].substr(8)) ? "1" : "0";
        else if (f[2].starts_with("treatment:")) got = slice.treatments.at(f[2].substr(10)) ? "1" : "0";
        else if (auto v = slice.value(f[2])) got = format_double(*v);
        else got = "NA";
        actual += csv_join({f[0], f[1], f[2], got}) + "\n";
        ++rows;
    }
    const bool pass = actual == expected;
    std::string detail = std::to_string(rows) + " golden cells" + (pass ? ", byte-identical" : "");
    if (!pass) {
        std::istringstream a(actual), e(expected);
        std::string la, le;
        while (std::getline(a, la) && std::getline(e, le))
            if (la != le) detail += "; got '" + la + "' want '" + le + "'";
    }
    return {pass, detail};
}

Verdict ac9_nlp() {
    // planted-token corpus: the label is carried by one rare token among shared filler words
    std::mt19937_64 rng(909);
    const std::vector<std::string> filler = {"patient", "resting", "stable", "vitals", "reviewed", "family",
                                             "updated", "plan",    "continue", "monitor", "overnight", "labs",
                                             "pending", "pain",    "controlled", "ambulating", "diet", "tolerated"};
    const auto note = [&](bool planted) {
        std::string s;
        const int len = 6 + static_cast<int>(rng() % 10);
        const int at = static_cast<int>(rng() % static_cast<unsigned>(len));
        for (int i = 0; i < len; ++i) {
            if (planted && i == at) s += "infxn ";
            s += filler[rng() % filler.size()] + " ";
        }
        return s;
    };
    std::vector<std::string> notes;
    std::vector<NoteAssertion> labels;
    for (int i = 0; i < 2000; ++i) {
        const bool pos = rng() % 3 == 0;
        notes.push_back(note(pos));
        labels.push_back(pos ? NoteAssertion::infection : NoteAssertion::no_infection);
    }
    const std::size_t split_at = 1600;
    TextModelConfig cfg;
    cfg.seed = derive_seed(909, "text-classifier");
    const auto model = train_text_classifier(std::span(notes).first(split_at), std::span(labels).first(split_at), cfg);
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = split_at; i < notes.size(); ++i) {
        const bool truth = labels[i] == NoteAssertion::infection;
        const bool pred = predict_note(model, notes[i]).infection;
        tp += truth && pred;
        fp += !truth && pred;
        fn += truth && !pred;
    }
    const double f1 = 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);

    const auto lexicon = Lexicon::load(data_dir() / "lexicon.txt");
    const auto rules = TriggerRuleSet::load(data_dir() / "triggers.txt");
    std::ifstream in(fs::path(TRD_GOLDEN_DIR) / "assertions" / "cases.tsv");
    std::string line, failures;
    int cases = 0, passed = 0;
    while (std::getline(in, line)) {
        if (line.empty() || line.starts_with("#")) continue;
        const auto f = split(line, '\t');
        ++cases;
        std::string got = "unmatched";
        const auto spans = match_antibiotics(f[0], lexicon);
        for (const auto& a : classify_assertion(f[0], spans, rules))
            if (a.span.term == f[1]) got = to_string(a.assertion);
        if (got == f[2]) ++passed;
        else failures += "; '" + f[0] + "' " + f[1] + ": got " + got + " want " + f[2];
    }
    return {f1 >= 0.95 && cases == 30 && passed == cases,
            "held-out F1 " + fmt(f1) + "; assertion suite " + std::to_string(passed) + "/" + std::to_string(cases) +
                failures};
}

// Each 4h window holds one fresh reading of six class-shifted vitals with independent noise,
// so every added slice contributes evidence the nearer slices do not carry.
std::vector<PatientStay> temporal_ground_truth(std::size_t n, std::uint64_t seed) {
    struct Vital {
        const char* name;
        double base, shift, sd;
    };
    const Vital vitals[] = {{"HR", 85, 6, 12},   {"RR", 18, 2, 4},       {"SBP", 120, -7.5, 15},
                            {"MAP", 80, -5, 10}, {"SpO2", 95, -1, 2},    {"Temp", 37, 0.25, 0.5}};
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> z(0, 1);
    std::uniform_real_distribution<double> u(0, 1);
    std::vector<PatientStay> stays;
    const Timestamp h = 3600, base = parse_timestamp("2100-01-01T00:00:00");
    for (std::size_t i = 0; i < n; ++i) {
        PatientStay s;
        s.stay_id = "T" + std::to_string(i);
        s.patient_id = "Q" + std::to_string(i);
        s.admit_ts = base + static_cast<Timestamp>(i) * 100 * h;
        s.discharge_ts = s.admit_ts + 40 * h;
        s.died_in_icu = u(rng) < 0.3;
        if (s.died_in_icu) s.death_ts = s.discharge_ts;
        for (int k = 0; k < 4; ++k) {
            const Timestamp mid = s.discharge_ts - 4 * h - 4 * h * k - 2 * h;
            for (const auto& v : vitals) {
                const auto& spec = catalog().at(v.name);
                const double value = std::clamp(v.base + v.shift * s.died_in_icu + v.sd * z(rng), spec.lo, spec.hi);
                s.observations.push_back({s.stay_id, s.patient_id, mid, v.name, value, spec.kind, false});
            }
        }
        std::stable_sort(s.observations.begin(), s.observations.end(),
                         [](const ObservationEvent& a, const ObservationEvent& b) { return a.timestamp < b.timestamp; });
        stays.push_back(std::move(s));
    }
    return stays;
}

Verdict ac10_ablation() {
    const std::vector<int> counts = {2, 3, 4};
    EvaluationConfig cfg;
    cfg.folds = 5;
    cfg.em.max_iter = 50;

    // end to end on the simulated cohort
    SimulationConfig sc;
    sc.n_stays = 800;
    sc.seed = 1010;
    sc.signal = 0.3;
    sc.icu_death_rate = 0.2;
    cfg.seed = sc.seed;
    const auto sim = run_ablation(simulate_cohort(catalog(), sc).stays, catalog(), fig2(), SliceConfig{}, counts, cfg);
    const bool three_columns = ablation_table_csv(sim).starts_with("metric,2 slices,3 slices,4 slices\n") &&
                               sim.auc.size() == 3;

    // ordering on a ground truth whose earlier slices carry independent evidence
    cfg.seed = 1011;
    const auto gt = run_ablation(temporal_ground_truth(600, 1011), catalog(), fig2(), SliceConfig{}, counts, cfg);
    std::string detail = "simulated cohort AUC";
    for (std::size_t i = 0; i < counts.size(); ++i)
        detail += " " + std::to_string(counts[i]) + ":" + fmt(sim.auc[i].auc);
    detail += three_columns ? " (three-column report)" : " (report header wrong)";
    detail += "; temporal ground truth AUC";
    for (std::size_t i = 0; i < counts.size(); ++i)
        detail += " " + std::to_string(counts[i]) + ":" + fmt(gt.auc[i].auc);
    return {three_columns && gt.auc[1].auc >= gt.auc[0].auc, detail};
}

}  // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
        {"AC1 inference exactness", ac1_inference_exactness},
        {"AC2 EM recovery", ac2_em_recovery},
        {"AC3 separation ordering", ac3_separation_ordering},
        {"AC4 horizon decay", ac4_horizon_decay},
        {"AC5 SAPS-II mortality equation", ac5_sapsii_equation},
        {"AC6 metric oracles", ac6_metric_oracles},
        {"AC7 calibration", ac7_calibration},
        {"AC8 slicer golden files", ac8_slicer_golden},
        {"AC9 infection tagging", ac9_nlp},
        {"AC10 ablation harness", ac10_ablation},
    };
    int failed = 0;
    for (const auto& [name, fn] : criteria) {
        Verdict v;
        try {
            v = fn();
        } catch (const std::exception& e) {
            v = {false, std::string("threw: ") + e.what()};
        }
        failed += !v.pass;
        std::cout << (v.pass ? "PASS " : "FAIL ") << name << ": " << v.detail << std::endl;
    }
    std::cout << (failed ? std::to_string(failed) + " criteria failed" : "all criteria passed") << std::endl;
    return failed ? 1 : 0;
}
