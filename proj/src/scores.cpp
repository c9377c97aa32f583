#include "trd/scores.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Dense>

#include "trd/slicer.hpp"

namespace trd {

using nlohmann::json;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double bound_from_json(const json& j, double if_null) { return j.is_null() ? if_null : j.get<double>(); }

}  // namespace

std::optional<double> ScoreInput::evaluate(const ScoreInputs& inputs) const {
    auto num = inputs.find(numerator);
    if (num == inputs.end()) return std::nullopt;
    double x = num->second;
    if (denominator) {
        auto den = inputs.find(*denominator);
        if (den == inputs.end() || den->second == 0.0) return std::nullopt;
        x /= den->second;
    }
    return scale * x;
}

std::string ScoreInput::describe() const {
    std::string s = numerator;
    if (denominator) s += "/" + *denominator;
    if (scale != 1.0) s += "*" + format_double(scale);
    return s;
}

int Criterion::points_for(double x) const {
    for (const auto& b : bands) {
        const bool inside = closed_right ? (x > b.lo && x <= b.hi) : (x >= b.lo && x < b.hi);
        if (inside) return b.points;
    }
    // Unreachable for audited tables (bands cover the real line).
    throw ValidationError("value " + format_double(x) + " falls outside every band of " + input.describe());
}

int Criterion::max_points() const {
    int m = 0;
    for (const auto& b : bands) m = std::max(m, b.points);
    return m;
}

int CategoricalComponent::max_points() const {
    int m = 0;
    for (const auto& [k, p] : points) m = std::max(m, p);
    return m;
}

ScoreTable ScoreTable::from_json(const json& j) {
    ScoreTable t;
    try {
        t.name = j.at("name").get<std::string>();
        t.version = j.at("version").get<std::string>();
        for (const auto& c : j.at("components")) {
            ScoreComponent comp;
            comp.name = c.at("name").get<std::string>();
            for (const auto& cr : c.at("criteria")) {
                Criterion crit;
                const auto& in = cr.at("input");
                crit.input.numerator = in.at("numerator").get<std::string>();
                if (in.contains("denominator")) crit.input.denominator = in.at("denominator").get<std::string>();
                crit.input.scale = in.value("scale", 1.0);
                const std::string closed = cr.value("closed", "left");
                if (closed != "left" && closed != "right")
                    throw ValidationError("criterion closed must be left or right");
                crit.closed_right = closed == "right";
                for (const auto& b : cr.at("bands"))
                    crit.bands.push_back({bound_from_json(b.at("lo"), -kInf), bound_from_json(b.at("hi"), kInf),
                                          b.at("points").get<int>()});
                comp.criteria.push_back(std::move(crit));
            }
            t.components.push_back(std::move(comp));
        }
        if (j.contains("categorical")) {
            for (const auto& c : j.at("categorical")) {
                CategoricalComponent cat;
                cat.name = c.at("name").get<std::string>();
                cat.points = c.at("points").get<std::map<std::string, int>>();
                t.categorical.push_back(std::move(cat));
            }
        }
    } catch (const json::exception& e) {
        throw ParseError(std::string("score table: ") + e.what());
    }
    t.audit();
    return t;
}

ScoreTable ScoreTable::load(const std::filesystem::path& path) {
    json j;
    try {
        j = json::parse(read_text_file(path));
    } catch (const json::parse_error& e) {
        throw ParseError("score table '" + path.string() + "': " + e.what());
    }
    return from_json(j);
}

void ScoreTable::audit() const {
    for (const auto& comp : components) {
        if (comp.criteria.empty()) throw ValidationError(name + "/" + comp.name + ": no criteria");
        for (const auto& crit : comp.criteria) {
            const std::string where = name + "/" + comp.name + " (" + crit.input.describe() + ")";
            const auto& b = crit.bands;
            if (b.empty()) throw ValidationError(where + ": no bands");
            if (b.front().lo != -kInf) throw ValidationError(where + ": bands do not start at -inf");
            if (b.back().hi != kInf) throw ValidationError(where + ": bands do not end at +inf");
            for (std::size_t i = 0; i < b.size(); ++i) {
                if (!(b[i].lo < b[i].hi)) throw ValidationError(where + ": empty or inverted band");
                if (b[i].points < 0) throw ValidationError(where + ": negative points");
                if (i + 1 < b.size()) {
                    if (b[i].hi < b[i + 1].lo) throw ValidationError(where + ": gap at " + format_double(b[i].hi));
                    if (b[i].hi > b[i + 1].lo)
                        throw ValidationError(where + ": overlap at " + format_double(b[i + 1].lo));
                }
            }
        }
    }
    for (const auto& cat : categorical) {
        if (cat.points.empty()) throw ValidationError(name + "/" + cat.name + ": no categories");
        for (const auto& [k, p] : cat.points)
            if (p < 0) throw ValidationError(name + "/" + cat.name + ": negative points for " + k);
    }
}

int ScoreTable::max_score() const {
    int total = 0;
    for (const auto& comp : components) {
        int m = 0;
        for (const auto& c : comp.criteria) m = std::max(m, c.max_points());
        total += m;
    }
    for (const auto& cat : categorical) total += cat.max_points();
    return total;
}

ScoreTables ScoreTables::load(const std::filesystem::path& dir) {
    return {ScoreTable::load(dir / "sofa.json"), ScoreTable::load(dir / "qsofa.json"),
            ScoreTable::load(dir / "mews.json"), ScoreTable::load(dir / "sapsii.json")};
}

ScoreResult compute_score(const ScoreTable& table, const ScoreInputs& inputs,
                          const std::map<std::string, std::set<std::string>>& categorical) {
    ScoreResult r;
    for (const auto& comp : table.components) {
        std::optional<int> pts;
        for (const auto& crit : comp.criteria) {
            if (auto x = crit.input.evaluate(inputs)) {
                const int p = crit.points_for(*x);
                pts = pts ? std::max(*pts, p) : p;
            }
        }
        if (!pts) r.missing.insert(comp.name);
        r.components[comp.name] = pts.value_or(0);
        r.score += pts.value_or(0);
    }
    for (const auto& cat : table.categorical) {
        auto it = categorical.find(cat.name);
        if (it == categorical.end() || it->second.empty()) {
            r.missing.insert(cat.name);
            r.components[cat.name] = 0;
            continue;
        }
        int p = 0;
        for (const auto& key : it->second) {
            auto pt = cat.points.find(key);
            if (pt == cat.points.end())
                throw ValidationError(table.name + "/" + cat.name + ": unknown category '" + key + "'");
            p = std::max(p, pt->second);
        }
        r.components[cat.name] = p;
        r.score += p;
    }
    return r;
}

ScoreResult sofa_score(const ScoreTable& table, const ScoreInputs& inputs) { return compute_score(table, inputs); }

ScoreResult qsofa_score(const ScoreTable& table, const ScoreInputs& inputs) {
    auto r = compute_score(table, inputs);
    r.positive = r.score >= kQsofaCutPoint;
    return r;
}

ScoreResult mews_score(const ScoreTable& table, const ScoreInputs& inputs) { return compute_score(table, inputs); }

ScoreResult sapsii_score(const ScoreTable& table, const ScoreInputs& inputs, const PatientContext& patient) {
    ScoreInputs all = inputs;
    if (patient.age) all["Age"] = *patient.age;
    std::map<std::string, std::set<std::string>> cat;
    if (patient.admission_type) cat["admission_type"] = {*patient.admission_type};
    cat["chronic_disease"] = patient.chronic.empty() ? std::set<std::string>{"none"} : patient.chronic;
    return compute_score(table, all, cat);
}

ScoreInputs score_inputs(const TimeSlice& slice) {
    ScoreInputs in;
    for (const auto& [k, v] : slice.values)
        if (v) in[k] = *v;
    for (const auto& [k, on] : slice.treatments) in[k] = on ? 1.0 : 0.0;
    return in;
}

double logistic(double z) {
    if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

double logit(double p) { return std::log(p) - std::log1p(-p); }

double sapsii_mortality(int score) {
    if (score < 0) throw DomainError("SAPS-II score must be non-negative");
    const double s = score;
    return logistic(-7.7631 + 0.0737 * s + 0.9971 * std::log1p(s));
}

namespace {

double log_likelihood(std::span<const double> x, std::span<const int> y, double a, double b) {
    double ll = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double z = a + b * x[i];
        // log p = -log1p(exp(-z)), log(1-p) = -log1p(exp(z)), evaluated stably.
        const double softplus_pos = z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
        ll += y[i] ? z - softplus_pos : -softplus_pos;
    }
    return ll;
}

}  // namespace

LogisticBaseline fit_univariate_logistic(std::span<const double> x, std::span<const int> y, std::string fitted_on) {
    if (x.size() != y.size()) throw ValidationError("logistic fit: size mismatch");
    if (x.size() < 2) throw ValidationError("logistic fit needs n >= 2");
    double min0 = kInf, max0 = -kInf, min1 = kInf, max1 = -kInf;
    std::size_t n1 = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (!std::isfinite(x[i])) throw ValidationError("logistic fit: non-finite score");
        if (y[i]) {
            ++n1;
            min1 = std::min(min1, x[i]);
            max1 = std::max(max1, x[i]);
        } else {
            min0 = std::min(min0, x[i]);
            max0 = std::max(max0, x[i]);
        }
    }
    if (n1 == 0 || n1 == x.size()) throw ValidationError("logistic fit needs both classes");
    const bool constant = std::min(min0, min1) == std::max(max0, max1);
    if (!constant && (max0 <= min1 || max1 <= min0))
        throw SeparationError("complete separation: slope diverges for '" + fitted_on + "'");

    LogisticBaseline m;
    m.fitted_on = std::move(fitted_on);
    const double prevalence = static_cast<double>(n1) / static_cast<double>(x.size());
    double a = logit(prevalence), b = 0;
    double ll = log_likelihood(x, y, a, b);
    if (constant) {
        m.intercept = a;
        m.log_likelihood = ll;
        m.converged = true;
        return m;
    }
    for (int it = 1; it <= 100; ++it) {
        Eigen::Matrix2d h = Eigen::Matrix2d::Zero();
        Eigen::Vector2d g = Eigen::Vector2d::Zero();
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double p = logistic(a + b * x[i]);
            const double w = p * (1 - p);
            const Eigen::Vector2d z(1.0, x[i]);
            g += (y[i] - p) * z;
            h.noalias() += w * z * z.transpose();
        }
        const Eigen::Vector2d step = h.ldlt().solve(g);
        double t = 1.0;
        double a_new = a + step(0), b_new = b + step(1);
        double ll_new = log_likelihood(x, y, a_new, b_new);
        while (ll_new < ll && t > 1e-8) {
            t *= 0.5;
            a_new = a + t * step(0);
            b_new = b + t * step(1);
            ll_new = log_likelihood(x, y, a_new, b_new);
        }
        if (!std::isfinite(a_new) || !std::isfinite(b_new) || std::abs(b_new) > 1e8)
            throw SeparationError("logistic slope diverges for '" + m.fitted_on + "'");
        const double change = std::abs(ll_new - ll);
        a = a_new;
        b = b_new;
        ll = std::max(ll, ll_new);
        m.iterations = it;
        if (change < 1e-10) {
            m.converged = true;
            break;
        }
    }
    m.intercept = a;
    m.slope = b;
    m.log_likelihood = ll;
    return m;
}

double predict_logistic(const LogisticBaseline& model, double x) { return logistic(model.intercept + model.slope * x); }

}  // namespace trd
