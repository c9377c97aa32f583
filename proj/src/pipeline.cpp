#include "trd/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "trd/crossval.hpp"

namespace trd {

std::map<std::string, PatientContext> read_demographics_csv(std::istream& in) {
    CsvReader reader(in);
    const auto c_stay = reader.column("stay_id");
    const auto c_age = reader.find_column("age");
    const auto c_type = reader.find_column("admission_type");
    const auto c_chronic = reader.find_column("chronic");
    std::map<std::string, PatientContext> out;
    CsvRow row;
    while (reader.next(row)) {
        PatientContext ctx;
        if (c_age && !trim(row.fields[*c_age]).empty()) {
            const auto v = parse_double(row.fields[*c_age]);
            if (!v) throw ParseError("bad age '" + row.fields[*c_age] + "'", row.line);
            ctx.age = *v;
        }
        if (c_type && !trim(row.fields[*c_type]).empty()) ctx.admission_type = trim(row.fields[*c_type]);
        if (c_chronic)
            for (const auto& c : split(row.fields[*c_chronic], ';'))
                if (!trim(c).empty()) ctx.chronic.insert(trim(c));
        if (!out.emplace(row.fields[c_stay], std::move(ctx)).second)
            throw ParseError("duplicate stay '" + row.fields[c_stay] + "'", row.line);
    }
    return out;
}

std::map<std::string, PatientContext> read_demographics_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
    return read_demographics_csv(in);
}

namespace {

struct ColumnBinding {
    enum class Source { value, indicator, treatment } source = Source::value;
    std::string variable;
    Transform transform;
};

std::vector<ColumnBinding> bind_columns(const NetworkTemplate& tmpl, const VariableCatalog& catalog) {
    std::vector<ColumnBinding> out(tmpl.slice_size());
    for (auto node : tmpl.slice_nodes()) {
        const auto& spec = tmpl.nodes[node];
        ColumnBinding b;
        if (tmpl.is_discrete(node)) {
            const auto* cat = catalog.find(spec.name);
            if (cat && cat->is_treatment()) {
                b.source = ColumnBinding::Source::treatment;
                b.variable = cat->name;
            } else if (spec.name.size() > 1 && spec.name[0] == 'm' &&
                       std::find(kIndicatorVariables.begin(), kIndicatorVariables.end(), spec.name.substr(1)) !=
                           kIndicatorVariables.end()) {
                b.source = ColumnBinding::Source::indicator;
                b.variable = spec.name.substr(1);
            } else {
                throw StructureError("discrete node '" + spec.name +
                                     "' is neither a treatment nor a missingness indicator");
            }
        } else {
            const auto* cat = catalog.find(spec.name);
            if (!cat) throw StructureError("node '" + spec.name + "' has no catalog entry");
            b.variable = cat->name;
            b.transform = spec.transform.value_or(cat->transform);
        }
        out[tmpl.column(node)] = std::move(b);
    }
    return out;
}

Evidence evidence_from(const SliceSeries& series, const std::vector<ColumnBinding>& binding,
                       const NetworkTemplate& tmpl) {
    const auto slices = series.chronological();
    Evidence x = empty_evidence(tmpl, static_cast<int>(slices.size()));
    for (std::size_t t = 0; t < slices.size(); ++t) {
        const auto& s = *slices[t];
        for (std::size_t c = 0; c < binding.size(); ++c) {
            const auto& b = binding[c];
            switch (b.source) {
                case ColumnBinding::Source::value:
                    if (auto v = s.value(b.variable)) x(t, c) = apply_transform(*v, b.transform, b.variable);
                    break;
                case ColumnBinding::Source::indicator: {
                    const auto it = s.missing_indicators.find(b.variable);
                    x(t, c) = it != s.missing_indicators.end() && it->second ? 1.0 : 0.0;
                    break;
                }
                case ColumnBinding::Source::treatment: {
                    const auto it = s.treatments.find(b.variable);
                    x(t, c) = it != s.treatments.end() && it->second ? 1.0 : 0.0;
                    break;
                }
            }
        }
    }
    return x;
}

double series_max(const std::vector<double>& v) { return *std::max_element(v.begin(), v.end()); }

std::vector<std::size_t> indices_in(std::span<const int> folds, int fold, bool equal) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < folds.size(); ++i)
        if ((folds[i] == fold) == equal) out.push_back(i);
    return out;
}

TrainingSet subset(const TrainingSet& data, const std::vector<std::size_t>& idx) {
    TrainingSet out;
    for (auto i : idx) {
        out.evidence.push_back(data.evidence[i]);
        out.labels.push_back(data.labels[i]);
    }
    return out;
}

// Univariate logistic fit on `train`, predicting `test`; a separated fit falls back to the training prevalence.
std::vector<double> logistic_fit_predict(const std::vector<double>& x, std::span<const int> labels,
                                         const std::vector<std::size_t>& train, const std::vector<std::size_t>& test,
                                         const std::string& name, std::vector<std::string>& warnings) {
    std::vector<double> xt;
    std::vector<int> yt;
    for (auto i : train) {
        xt.push_back(x[i]);
        yt.push_back(labels[i]);
    }
    std::vector<double> p;
    try {
        const auto m = fit_univariate_logistic(xt, yt, name);
        for (auto i : test) p.push_back(predict_logistic(m, x[i]));
    } catch (const NumericalError& e) {
        const double prev =
            static_cast<double>(std::count(yt.begin(), yt.end(), 1)) / static_cast<double>(yt.size());
        warnings.push_back(name + ": " + e.what() + "; predicting the training prevalence");
        p.assign(test.size(), prev);
    }
    return p;
}

std::vector<double> logistic_baseline(const std::vector<double>& x, std::span<const int> labels,
                                      std::span<const int> folds, int k, bool global, const std::string& name,
                                      std::vector<std::string>& warnings) {
    if (global) {
        std::vector<std::size_t> all(x.size());
        std::iota(all.begin(), all.end(), std::size_t{0});
        return logistic_fit_predict(x, labels, all, all, name, warnings);
    }
    return cross_validate(std::vector<int>(folds.begin(), folds.end()), k,
                          [&](const std::vector<std::size_t>& train, const std::vector<std::size_t>& test) {
                              return logistic_fit_predict(x, labels, train, test, name, warnings);
                          })
        .predictions;
}

}  // namespace

Evidence series_to_evidence(const SliceSeries& series, const NetworkTemplate& tmpl, const VariableCatalog& catalog) {
    return evidence_from(series, bind_columns(tmpl, catalog), tmpl);
}

TrainingSet to_training_set(std::span<const SliceSeries> series, const NetworkTemplate& tmpl,
                            const VariableCatalog& catalog) {
    const auto binding = bind_columns(tmpl, catalog);
    TrainingSet out;
    out.evidence.reserve(series.size());
    for (const auto& s : series) {
        out.evidence.push_back(evidence_from(s, binding, tmpl));
        out.labels.push_back(s.label ? 1 : 0);
    }
    return out;
}

BaselineScores baseline_scores(std::span<const SliceSeries> series, const ScoreTables& tables,
                               const std::map<std::string, PatientContext>& demographics) {
    BaselineScores out;
    std::map<std::string, std::size_t> incomplete;
    std::size_t no_context = 0;
    const PatientContext empty;
    for (const auto& s : series) {
        const auto slices = s.chronological();
        if (slices.empty()) throw ValidationError("series " + s.stay_id + " has no slices");
        const auto it = demographics.find(s.stay_id);
        if (it == demographics.end()) ++no_context;
        const auto& ctx = it == demographics.end() ? empty : it->second;
        std::vector<double> sofa, qsofa, mews, saps;
        std::set<std::string> missing_in;
        for (const auto* slice : slices) {
            const auto in = score_inputs(*slice);
            const auto r1 = sofa_score(tables.sofa, in);
            const auto r2 = qsofa_score(tables.qsofa, in);
            const auto r3 = mews_score(tables.mews, in);
            const auto r4 = sapsii_score(tables.sapsii, in, ctx);
            sofa.push_back(r1.score);
            qsofa.push_back(r2.score);
            mews.push_back(r3.score);
            saps.push_back(r4.score);
            if (r1.any_missing()) missing_in.insert("SOFA");
            if (r2.any_missing()) missing_in.insert("qSOFA");
            if (r3.any_missing()) missing_in.insert("MEWS");
            if (r4.any_missing()) missing_in.insert("SAPS-II");
        }
        for (const auto& m : missing_in) ++incomplete[m];
        out.sofa_first.push_back(sofa.front());
        out.sofa_max.push_back(series_max(sofa));
        out.qsofa.push_back(series_max(qsofa));
        out.mews.push_back(series_max(mews));
        out.sapsii.push_back(series_max(saps));
    }
    for (const auto& [name, n] : incomplete)
        out.warnings.push_back(name + ": " + std::to_string(n) + " of " + std::to_string(series.size()) +
                               " series had components without input, scored as normal");
    if (no_context > 0)
        out.warnings.push_back("SAPS-II: " + std::to_string(no_context) +
                               " series had no demographics; age and categorical items scored 0");
    return out;
}

std::size_t EvaluationReport::deaths() const { return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1)); }

const MethodEvaluation* EvaluationReport::method(std::string_view name) const {
    for (const auto& m : methods)
        if (m.name == name) return &m;
    return nullptr;
}

std::vector<double> dbn_cross_validated(const TrainingSet& data, std::span<const int> folds, int k,
                                        const NetworkTemplate& tmpl, const EmConfig& em,
                                        std::vector<std::string>* warnings,
                                        const TrendCalibrationConfig* calibration, std::vector<double>* calibrated) {
    if (folds.size() != data.size()) throw ValidationError("fold assignment does not match the training set");
    std::vector<double> pred(data.size(), std::numeric_limits<double>::quiet_NaN());
    if (calibrated) calibrated->assign(data.size(), std::numeric_limits<double>::quiet_NaN());
    for (int f = 0; f < k; ++f) {
        const auto test = indices_in(folds, f, true);
        if (test.empty()) continue;
        const auto train = indices_in(folds, f, false);
        const auto train_set = subset(data, train);
        EmConfig cfg = em;
        cfg.seed = derive_seed(em.seed, "dbn-fold-" + std::to_string(f));
        const auto model = em_fit(tmpl, train_set, cfg);
        if (warnings) {
            if (!model.info.converged)
                warnings->push_back("fold " + std::to_string(f) + ": EM stopped at max_iter without converging");
            for (const auto& w : model.info.warnings) warnings->push_back("fold " + std::to_string(f) + ": " + w);
        }
        for (auto i : test) pred[i] = predict_mortality(model, data.evidence[i]);
        if (calibration && calibrated) {
            std::vector<double> fitted;
            fitted.reserve(train.size());
            for (const auto& x : train_set.evidence) fitted.push_back(predict_mortality(model, x));
            auto ccfg = *calibration;
            ccfg.seed = derive_seed(calibration->seed, "calibration-fold-" + std::to_string(f));
            const auto map = l1_trend_calibrate(fitted, train_set.labels, ccfg);
            if (warnings)
                for (const auto& w : map.warnings) warnings->push_back("fold " + std::to_string(f) + ": " + w);
            for (auto i : test) (*calibrated)[i] = apply_calibration(map, pred[i]);
        }
    }
    return pred;
}

MethodEvaluation evaluate_method(std::string name, std::vector<double> probability, std::vector<double> score,
                                 double cutoff, std::span<const int> labels, std::span<const int> folds) {
    MethodEvaluation m;
    m.name = std::move(name);
    m.probability = std::move(probability);
    m.score = std::move(score);
    m.cutoff = cutoff;
    m.auc = auc_ci(m.score, labels, folds);
    std::vector<double> per_fold;
    const int k = folds.empty() ? 0 : *std::max_element(folds.begin(), folds.end()) + 1;
    for (int f = 0; f < k; ++f) {
        std::vector<double> s;
        std::vector<int> y;
        for (std::size_t i = 0; i < folds.size(); ++i)
            if (folds[i] == f) {
                s.push_back(m.score[i]);
                y.push_back(labels[i]);
            }
        const auto pos = std::count(y.begin(), y.end(), 1);
        if (pos == 0 || pos == static_cast<long>(y.size())) continue;
        per_fold.push_back(roc_auc(s, y));
    }
    if (!per_fold.empty()) m.fold_auc = fold_spread(per_fold);
    m.confusion = confusion_metrics(m.score, labels, cutoff);
    try {
        m.cox = cox_calibration(m.probability, labels);
    } catch (const std::runtime_error&) {
        m.cox.reset();
    }
    m.roc = roc_curve(m.score, labels);
    return m;
}

EvaluationReport evaluate_cohort(std::span<const SliceSeries> series, const NetworkTemplate& tmpl,
                                 const VariableCatalog& catalog, const ScoreTables* tables,
                                 const std::map<std::string, PatientContext>& demographics,
                                 const EvaluationConfig& config) {
    if (series.empty()) throw ValidationError("evaluation needs a non-empty cohort");
    EvaluationReport report;
    std::vector<std::string> patients;
    for (const auto& s : series) {
        report.stay_ids.push_back(s.stay_id);
        report.labels.push_back(s.label ? 1 : 0);
        patients.push_back(s.patient_id);
    }
    const auto deaths = report.deaths();
    if (deaths == 0 || deaths == series.size()) throw ValidationError("evaluation needs both survivors and deaths");
    report.folds = assign_folds(patients, config.folds, derive_seed(config.seed, "folds"));
    const auto& y = report.labels;
    const auto& folds = report.folds;

    const auto data = to_training_set(series, tmpl, catalog);
    EmConfig em = config.em;
    em.seed = derive_seed(config.seed, "em");
    auto calib = config.calibration;
    calib.seed = derive_seed(config.seed, "calibration");
    std::vector<double> calibrated;
    const auto dbn = dbn_cross_validated(data, folds, config.folds, tmpl, em, &report.warnings,
                                         config.calibrate ? &calib : nullptr, &calibrated);
    report.methods.push_back(evaluate_method("DBN", dbn, dbn, config.cutoff, y, folds));
    if (config.calibrate)
        report.methods.push_back(evaluate_method("DBN calibrated", calibrated, calibrated, config.cutoff, y, folds));

    if (!config.baselines.empty()) {
        if (!tables) throw ValidationError("score baselines requested without score tables");
        auto scores = baseline_scores(series, *tables, demographics);
        for (auto& w : scores.warnings) report.warnings.push_back(std::move(w));
        auto logistic_method = [&](const std::string& name, const std::vector<double>& x, bool raw_ranking,
                                   double cutoff) {
            auto p = logistic_baseline(x, y, folds, config.folds, config.global_baselines, name, report.warnings);
            auto s = raw_ranking ? x : p;
            report.methods.push_back(evaluate_method(name, std::move(p), std::move(s), cutoff, y, folds));
        };
        for (const auto& b : config.baselines) {
            if (b == "sofa") {
                logistic_method("SOFA first", scores.sofa_first, false, config.cutoff);
                logistic_method("SOFA max", scores.sofa_max, false, config.cutoff);
            } else if (b == "qsofa") {
                logistic_method("qSOFA", scores.qsofa, true, kQsofaCutPoint);
            } else if (b == "mews") {
                logistic_method("MEWS", scores.mews, false, config.cutoff);
            } else if (b == "sapsii") {
                std::vector<double> p;
                for (double s : scores.sapsii) p.push_back(sapsii_mortality(static_cast<int>(s)));
                report.methods.push_back(evaluate_method("SAPS-II", p, p, config.cutoff, y, folds));
            } else {
                throw ValidationError("unknown baseline '" + b + "' (expected sofa, qsofa, mews or sapsii)");
            }
        }
    }

    for (const auto& m : report.methods) {
        if (m.name.rfind("DBN", 0) == 0) continue;
        auto opts = config.reclass;
        opts.seed = derive_seed(config.seed, "reclass-" + m.name);
        report.reclassification.emplace_back(m.name, reclassification(m.probability, dbn, y, opts));
    }
    return report;
}

AblationReport run_ablation(std::span<const PatientStay> stays, const VariableCatalog& catalog,
                            const NetworkTemplate& tmpl, const SliceConfig& base, std::span<const int> slice_counts,
                            const EvaluationConfig& config) {
    if (slice_counts.empty()) throw ValidationError("ablation needs at least one slice count");
    std::vector<std::string> patients;
    std::vector<int> labels;
    for (const auto& s : stays) patients.push_back(s.patient_id);
    const auto folds = assign_folds(patients, config.folds, derive_seed(config.seed, "folds"));
    AblationReport out;
    for (int n : slice_counts) {
        SliceConfig cfg = base;
        cfg.n_slices = n;
        cfg.validate();
        const auto series = build_all_series(stays, catalog, cfg);
        const auto data = to_training_set(series, tmpl, catalog);
        EmConfig em = config.em;
        em.seed = derive_seed(config.seed, "em");
        const auto pred = dbn_cross_validated(data, folds, config.folds, tmpl, em);
        const auto m = evaluate_method(std::to_string(n) + " slices", pred, pred, config.cutoff, data.labels, folds);
        out.slice_counts.push_back(n);
        out.auc.push_back(m.auc);
        out.fold_auc.push_back(m.fold_auc);
        out.n.push_back(series.size());
    }
    return out;
}

OnlineReport run_online_validation(std::span<const PatientStay> stays, const VariableCatalog& catalog,
                                   const NetworkTemplate& tmpl, const SliceConfig& config, std::uint64_t seed,
                                   const EmConfig& em) {
    const auto sets = build_online_validation_sets(stays, catalog, config, derive_seed(seed, "online-sample"));
    std::vector<PatientStay> training;
    for (const auto& s : stays)
        if (!sets.excludes(s)) training.push_back(s);
    if (training.empty()) throw ValidationError("every stay is held out for online validation");
    SliceConfig rolled = config;
    rolled.anchoring = Anchoring::rolled_back;
    const auto train_series = build_all_series(training, catalog, rolled);
    EmConfig cfg = em;
    cfg.seed = derive_seed(seed, "online-em");
    const auto model = em_fit(tmpl, to_training_set(train_series, tmpl, catalog), cfg);

    OnlineReport out;
    out.training_size = training.size();
    out.warnings = model.info.warnings;
    const auto binding = bind_columns(tmpl, catalog);
    for (const auto* set : sets.sets()) {
        OnlineResult r;
        r.name = set->name;
        r.horizon_hours = set->horizon_hours;
        r.n = set->series.size();
        r.labels = set->labels;
        r.deaths = static_cast<std::size_t>(std::count(r.labels.begin(), r.labels.end(), 1));
        const bool clockwise_set = set == &sets.icu_12h || set == &sets.icu_24h;
        const int lookahead = (set->horizon_hours + config.interval_hours - 1) / config.interval_hours;
        for (std::size_t i = 0; i < set->series.size(); ++i) {
            const auto x = evidence_from(set->series[i], binding, tmpl);
            r.predictions.push_back(clockwise_set ? forward_predict(model, x, lookahead) : predict_mortality(model, x));
        }
        if (r.deaths > 0 && r.deaths < r.n) {
            r.auc = roc_auc(r.predictions, r.labels);
            const std::vector<int> one_fold(r.n, 0);
            r.ci = auc_ci(r.predictions, r.labels, one_fold).ci;
        } else {
            out.warnings.push_back(r.name + ": single class, AUC undefined");
        }
        out.sets.push_back(std::move(r));
    }
    return out;
}

}  // namespace trd
