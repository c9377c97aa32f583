#include "trd/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace trd {

namespace {

std::string fixed3(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3f", v);
    return buf;
}

nlohmann::json interval_json(const std::optional<Interval>& ci) {
    if (!ci) return nullptr;
    return {ci->lo, ci->hi};
}

nlohmann::json optional_json(const std::optional<double>& v) {
    if (!v) return nullptr;
    return *v;
}

nlohmann::json finite_json(double v) {
    if (!std::isfinite(v)) return nullptr;
    return v;
}

}  // namespace

std::string format_estimate(std::optional<double> value, std::optional<Interval> ci) {
    if (!value || !std::isfinite(*value)) return "NA";
    std::string out = fixed3(*value);
    if (ci) out += "(" + fixed3(ci->lo) + "-" + fixed3(ci->hi) + ")";
    return out;
}

std::string discrimination_table_csv(const EvaluationReport& report) {
    std::ostringstream out;
    out << "method,AUC,Sensitivity,Specificity,PPV,NPV,F1,cutoff\n";
    for (const auto& m : report.methods) {
        const auto& c = m.confusion;
        out << csv_join({m.name, format_estimate(m.auc.auc, m.auc.ci), format_estimate(c.sensitivity, c.sensitivity_ci),
                         format_estimate(c.specificity, c.specificity_ci), format_estimate(c.ppv, c.ppv_ci),
                         format_estimate(c.npv, c.npv_ci), format_estimate(c.f1, std::nullopt),
                         format_double(m.cutoff)})
            << "\n";
    }
    return out.str();
}

std::string reclassification_table_csv(const EvaluationReport& report) {
    std::ostringstream out;
    out << "comparison,cNRI,IDI\n";
    for (const auto& [name, r] : report.reclassification)
        out << csv_join({"DBN vs " + name, format_estimate(r.cnri, r.cnri_ci), format_estimate(r.idi, r.idi_ci)})
            << "\n";
    return out.str();
}

std::string calibration_table_csv(const EvaluationReport& report) {
    std::ostringstream out;
    out << "method,alpha,beta,U,p_value,separation\n";
    for (const auto& m : report.methods) {
        if (!m.cox) {
            out << csv_join({m.name, "NA", "NA", "NA", "NA", "NA"}) << "\n";
            continue;
        }
        const auto& c = *m.cox;
        out << csv_join({m.name, format_compact(c.alpha), format_compact(c.beta), format_compact(c.U),
                         format_compact(c.p_value), c.separation ? "1" : "0"})
            << "\n";
    }
    return out.str();
}

nlohmann::json report_json(const EvaluationReport& report) {
    nlohmann::json j;
    j["format"] = "trd-evaluation/1";
    j["n"] = report.labels.size();
    j["deaths"] = report.deaths();
    j["folds"] = report.folds.empty() ? 0 : *std::max_element(report.folds.begin(), report.folds.end()) + 1;
    auto& methods = j["methods"] = nlohmann::json::array();
    for (const auto& m : report.methods) {
        const auto& c = m.confusion;
        nlohmann::json mj;
        mj["name"] = m.name;
        mj["auc"] = {{"estimate", m.auc.auc},
                     {"se", m.auc.se},
                     {"ci", {m.auc.ci.lo, m.auc.ci.hi}},
                     {"degenerate", m.auc.degenerate},
                     {"skipped_folds", m.auc.skipped_folds},
                     {"fold_spread", {{"mean", m.fold_auc.mean}, {"ci", {m.fold_auc.ci.lo, m.fold_auc.ci.hi}}}}};
        mj["confusion"] = {{"cutoff", m.cutoff},
                           {"tp", c.tp},
                           {"fp", c.fp},
                           {"fn", c.fn},
                           {"tn", c.tn},
                           {"sensitivity", optional_json(c.sensitivity)},
                           {"sensitivity_ci", interval_json(c.sensitivity_ci)},
                           {"specificity", optional_json(c.specificity)},
                           {"specificity_ci", interval_json(c.specificity_ci)},
                           {"ppv", optional_json(c.ppv)},
                           {"ppv_ci", interval_json(c.ppv_ci)},
                           {"npv", optional_json(c.npv)},
                           {"npv_ci", interval_json(c.npv_ci)},
                           {"f1", optional_json(c.f1)}};
        if (m.cox)
            mj["cox_calibration"] = {{"alpha", finite_json(m.cox->alpha)}, {"beta", finite_json(m.cox->beta)},
                                     {"U", finite_json(m.cox->U)},         {"p_value", finite_json(m.cox->p_value)},
                                     {"chi2", finite_json(m.cox->chi2)},   {"separation", m.cox->separation}};
        else
            mj["cox_calibration"] = nullptr;
        methods.push_back(std::move(mj));
    }
    auto& rc = j["reclassification"] = nlohmann::json::array();
    for (const auto& [name, r] : report.reclassification)
        rc.push_back({{"baseline", name},
                      {"cnri", r.cnri},
                      {"cnri_ci", {r.cnri_ci.lo, r.cnri_ci.hi}},
                      {"idi", r.idi},
                      {"idi_ci", {r.idi_ci.lo, r.idi_ci.hi}},
                      {"bootstrap", r.bootstrap},
                      {"warnings", r.warnings}});
    j["warnings"] = report.warnings;
    return j;
}

std::string roc_csv(const EvaluationReport& report) {
    std::ostringstream out;
    out << "method,fpr,tpr,threshold\n";
    for (const auto& m : report.methods) {
        auto pts = m.roc;
        std::stable_sort(pts.begin(), pts.end(),
                         [](const RocPoint& a, const RocPoint& b) { return a.threshold > b.threshold; });
        for (const auto& p : pts)
            out << csv_join({m.name, format_double(p.fpr), format_double(p.tpr),
                             std::isinf(p.threshold) ? "inf" : format_double(p.threshold)})
                << "\n";
    }
    return out.str();
}

std::string reliability_csv(const EvaluationReport& report, int bins) {
    std::ostringstream out;
    out << "method,bin,lo,hi,count,mean_predicted,observed\n";
    for (const auto& m : report.methods) {
        std::vector<double> sum_p(bins, 0), sum_y(bins, 0);
        std::vector<std::size_t> count(bins, 0);
        for (std::size_t i = 0; i < m.probability.size(); ++i) {
            const double p = std::clamp(m.probability[i], 0.0, 1.0);
            const int b = std::min(bins - 1, static_cast<int>(p * bins));
            sum_p[b] += p;
            sum_y[b] += report.labels[i];
            ++count[b];
        }
        for (int b = 0; b < bins; ++b) {
            if (count[b] == 0) continue;
            const double n = static_cast<double>(count[b]);
            out << csv_join({m.name, std::to_string(b), format_double(static_cast<double>(b) / bins),
                             format_double(static_cast<double>(b + 1) / bins), std::to_string(count[b]),
                             format_double(sum_p[b] / n), format_double(sum_y[b] / n)})
                << "\n";
        }
    }
    return out.str();
}

std::string riskdist_csv(const EvaluationReport& report) {
    std::ostringstream out;
    out << "method,stay_id,predicted,survived\n";
    for (const auto& m : report.methods)
        for (std::size_t i = 0; i < m.probability.size(); ++i)
            out << csv_join({m.name, report.stay_ids[i], format_double(m.probability[i]),
                             report.labels[i] ? "0" : "1"})
                << "\n";
    return out.str();
}

void emit_plot_data(const EvaluationReport& report, const std::filesystem::path& dir, int calibration_bins) {
    write_file_atomic(dir / "roc.csv", roc_csv(report));
    write_file_atomic(dir / "calibration.csv", reliability_csv(report, calibration_bins));
    write_file_atomic(dir / "riskdist.csv", riskdist_csv(report));
}

std::string ablation_table_csv(const AblationReport& report) {
    std::ostringstream out;
    std::vector<std::string> header = {"metric"};
    for (int n : report.slice_counts) header.push_back(std::to_string(n) + " slices");
    out << csv_join(header) << "\n";
    std::vector<std::string> auc = {"AUC"}, spread = {"AUC fold mean"}, count = {"n"};
    for (std::size_t i = 0; i < report.slice_counts.size(); ++i) {
        auc.push_back(format_estimate(report.auc[i].auc, report.auc[i].ci));
        spread.push_back(format_estimate(report.fold_auc[i].mean, report.fold_auc[i].ci));
        count.push_back(std::to_string(report.n[i]));
    }
    out << csv_join(auc) << "\n" << csv_join(spread) << "\n" << csv_join(count) << "\n";
    return out.str();
}

nlohmann::json ablation_json(const AblationReport& report) {
    nlohmann::json j;
    j["format"] = "trd-ablation/1";
    auto& rows = j["slice_counts"] = nlohmann::json::array();
    for (std::size_t i = 0; i < report.slice_counts.size(); ++i)
        rows.push_back({{"slices", report.slice_counts[i]},
                        {"n", report.n[i]},
                        {"auc", report.auc[i].auc},
                        {"auc_ci", {report.auc[i].ci.lo, report.auc[i].ci.hi}},
                        {"fold_mean", report.fold_auc[i].mean}});
    return j;
}

std::string online_table_csv(const OnlineReport& report) {
    std::ostringstream out;
    out << "validation_set,horizon_hours,n,deaths,AUC\n";
    for (const auto& s : report.sets)
        out << csv_join({s.name, std::to_string(s.horizon_hours), std::to_string(s.n), std::to_string(s.deaths),
                         format_estimate(s.auc, s.ci)})
            << "\n";
    return out.str();
}

nlohmann::json online_json(const OnlineReport& report) {
    nlohmann::json j;
    j["format"] = "trd-online/1";
    j["training_size"] = report.training_size;
    auto& sets = j["sets"] = nlohmann::json::array();
    for (const auto& s : report.sets)
        sets.push_back({{"name", s.name},
                        {"horizon_hours", s.horizon_hours},
                        {"n", s.n},
                        {"deaths", s.deaths},
                        {"auc", optional_json(s.auc)},
                        {"auc_ci", interval_json(s.ci)}});
    j["warnings"] = report.warnings;
    return j;
}

}  // namespace trd
