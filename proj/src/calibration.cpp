#include "trd/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include <Eigen/Dense>

#include "trd/common.hpp"
#include "trd/scores.hpp"

namespace trd {

using nlohmann::json;

CalibrationMap CalibrationMap::identity() {
    CalibrationMap m;
    m.knots = {0.0, 1.0};
    m.values = {0.0, 1.0};
    return m;
}

json CalibrationMap::to_json() const {
    return {{"format", "trd-calibration/1"}, {"knots", knots},         {"values", values},
            {"lambda", lambda},              {"ensemble_size", ensemble_size},
            {"identity_fallback", identity_fallback}, {"warnings", warnings}};
}

CalibrationMap CalibrationMap::from_json(const json& j) {
    CalibrationMap m;
    try {
        m.knots = j.at("knots").get<std::vector<double>>();
        m.values = j.at("values").get<std::vector<double>>();
        m.lambda = j.value("lambda", 0.0);
        m.ensemble_size = j.value("ensemble_size", 1);
        m.identity_fallback = j.value("identity_fallback", false);
        m.warnings = j.value("warnings", std::vector<std::string>{});
    } catch (const json::exception& e) {
        throw ParseError(std::string("calibration map: ") + e.what());
    }
    if (m.knots.empty() || m.knots.size() != m.values.size())
        throw ValidationError("calibration map needs matching, non-empty knots and values");
    for (std::size_t i = 1; i < m.knots.size(); ++i)
        if (!(m.knots[i] > m.knots[i - 1])) throw ValidationError("calibration knots must increase strictly");
    return m;
}

double apply_calibration(const CalibrationMap& map, double score) {
    const auto& k = map.knots;
    const auto& v = map.values;
    double out;
    if (score <= k.front()) {
        out = v.front();
    } else if (score >= k.back()) {
        out = v.back();
    } else {
        const auto it = std::upper_bound(k.begin(), k.end(), score);
        const auto i = static_cast<std::size_t>(it - k.begin());
        const double t = (score - k[i - 1]) / (k[i] - k[i - 1]);
        out = v[i - 1] + t * (v[i] - v[i - 1]);
    }
    return std::clamp(out, 0.0, 1.0);
}

std::vector<double> apply_calibration(const CalibrationMap& map, std::span<const double> scores) {
    std::vector<double> out;
    out.reserve(scores.size());
    for (double s : scores) out.push_back(apply_calibration(map, s));
    return out;
}

TrendFilterResult l1_trend_filter(std::span<const double> y_in, double lambda, double gap_tol, int max_iter) {
    if (lambda < 0) throw DomainError("trend-filter lambda must be non-negative");
    const auto m = static_cast<Eigen::Index>(y_in.size());
    TrendFilterResult res;
    res.x.assign(y_in.begin(), y_in.end());
    if (m < 3 || lambda == 0) return res;

    const Eigen::Map<const Eigen::VectorXd> y(y_in.data(), m);
    Eigen::MatrixXd D = Eigen::MatrixXd::Zero(m - 2, m);
    for (Eigen::Index i = 0; i < m - 2; ++i) {
        D(i, i) = 1;
        D(i, i + 1) = -2;
        D(i, i + 2) = 1;
    }
    const Eigen::MatrixXd DtD = D.transpose() * D;
    const Eigen::VectorXd Dy = D * y;

    auto primal = [&](const Eigen::VectorXd& x) {
        return 0.5 * (y - x).squaredNorm() + lambda * (D * x).lpNorm<1>();
    };
    auto dual = [&](const Eigen::VectorXd& nu) {
        return nu.dot(Dy) - 0.5 * (D.transpose() * nu).squaredNorm();
    };

    double rho = lambda;
    Eigen::LLT<Eigen::MatrixXd> llt(Eigen::MatrixXd::Identity(m, m) + rho * DtD);
    Eigen::VectorXd x = y, z = D * y, u = Eigen::VectorXd::Zero(m - 2);
    Eigen::VectorXd best_x = x;
    double best_p = primal(x), gap = std::numeric_limits<double>::infinity();
    int it = 0;
    for (; it < max_iter; ++it) {
        x = llt.solve(y + rho * D.transpose() * (z - u));
        const Eigen::VectorXd Dx = D * x;
        const Eigen::VectorXd z_old = z;
        const Eigen::VectorXd v = Dx + u;
        const double thr = lambda / rho;
        z = v.unaryExpr([thr](double a) { return a > thr ? a - thr : (a < -thr ? a + thr : 0.0); });
        u += Dx - z;

        if (it % 10 == 9) {
            // The scaled multiplier gives a dual point; its induced primal point y - D'nu is
            // often better than the ADMM iterate near the optimum.
            const Eigen::VectorXd nu = (rho * u).cwiseMax(-lambda).cwiseMin(lambda);
            const Eigen::VectorXd x_dual = y - D.transpose() * nu;
            const double p_admm = primal(x), p_dual = primal(x_dual);
            if (p_admm < best_p) {
                best_p = p_admm;
                best_x = x;
            }
            if (p_dual < best_p) {
                best_p = p_dual;
                best_x = x_dual;
            }
            gap = best_p - dual(nu);
            if (gap < gap_tol) break;

            const double r_norm = (Dx - z).norm();
            const double s_norm = rho * (D.transpose() * (z - z_old)).norm();
            if (r_norm > 10 * s_norm || s_norm > 10 * r_norm) {
                const double f = r_norm > s_norm ? 2.0 : 0.5;
                rho *= f;
                u /= f;
                llt.compute(Eigen::MatrixXd::Identity(m, m) + rho * DtD);
            }
        }
    }
    res.x.assign(best_x.data(), best_x.data() + m);
    res.objective = best_p;
    res.duality_gap = gap;
    res.iterations = it;
    return res;
}

double clamp_probability(double p) { return std::clamp(p, kProbClamp, 1 - kProbClamp); }

double log_loss(std::span<const double> p, std::span<const int> labels) {
    if (p.size() != labels.size() || p.empty()) throw ValidationError("log_loss: misaligned or empty input");
    double s = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double q = clamp_probability(p[i]);
        s -= labels[i] ? std::log(q) : std::log1p(-q);
    }
    return s / static_cast<double>(p.size());
}

double expected_calibration_error(std::span<const double> p, std::span<const int> labels, int bins) {
    if (p.size() != labels.size() || p.empty()) throw ValidationError("ECE: misaligned or empty input");
    if (bins < 1) throw ValidationError("ECE needs at least one bin");
    std::vector<double> sp(bins, 0), sy(bins, 0), n(bins, 0);
    for (std::size_t i = 0; i < p.size(); ++i) {
        const int b = std::clamp(static_cast<int>(p[i] * bins), 0, bins - 1);
        sp[b] += p[i];
        sy[b] += labels[i];
        n[b] += 1;
    }
    double ece = 0;
    for (int b = 0; b < bins; ++b)
        if (n[b] > 0) ece += std::abs(sp[b] - sy[b]) / static_cast<double>(p.size());
    return ece;
}

Binned bin_scores(std::span<const double> scores, std::span<const int> labels, int bins, double offset,
                  std::vector<std::string>* warnings) {
    const std::size_t n = scores.size();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });

    std::vector<std::size_t> edges{0};
    for (int k = 0; k <= bins; ++k) {
        const double pos = static_cast<double>(n) * (static_cast<double>(k) + offset) / bins;
        auto e = static_cast<std::size_t>(std::clamp(std::llround(pos), 0LL, static_cast<long long>(n)));
        // Never split a run of tied scores across two bins.
        while (e > 0 && e < n && scores[idx[e]] == scores[idx[e - 1]]) ++e;
        if (e > edges.back()) edges.push_back(e);
    }
    if (edges.back() != n) edges.push_back(n);
    const std::size_t expected = static_cast<std::size_t>(bins) + (offset > 0 ? 1 : 0);
    if (warnings && edges.size() - 1 < expected)
        warnings->push_back("degenerate bins merged with neighbours (" + std::to_string(edges.size() - 1) + " of " +
                            std::to_string(expected) + " kept)");

    Binned out;
    for (std::size_t b = 0; b + 1 < edges.size(); ++b) {
        double sx = 0, sy = 0;
        for (std::size_t i = edges[b]; i < edges[b + 1]; ++i) {
            sx += scores[idx[i]];
            sy += labels[idx[i]];
        }
        const double c = static_cast<double>(edges[b + 1] - edges[b]);
        out.x.push_back(sx / c);
        out.y.push_back(sy / c);
        out.count.push_back(c);
    }
    return out;
}

namespace {

CalibrationMap fit_member(std::span<const double> scores, std::span<const int> labels, int bins, double offset,
                          double lambda, std::vector<std::string>* warnings) {
    const auto binned = bin_scores(scores, labels, bins, offset, warnings);
    const auto fit = l1_trend_filter(binned.y, lambda);
    CalibrationMap m;
    m.knots = binned.x;
    m.values = fit.x;
    for (auto& v : m.values) v = std::clamp(v, 0.0, 1.0);
    m.lambda = lambda;
    // Adjacent bin means can coincide in floating point even without shared scores.
    for (std::size_t i = 1; i < m.knots.size();) {
        if (m.knots[i] <= m.knots[i - 1]) {
            m.values[i - 1] = 0.5 * (m.values[i - 1] + m.values[i]);
            m.knots.erase(m.knots.begin() + static_cast<long>(i));
            m.values.erase(m.values.begin() + static_cast<long>(i));
        } else {
            ++i;
        }
    }
    return m;
}

CalibrationMap average_members(const std::vector<CalibrationMap>& members) {
    std::vector<double> knots;
    for (const auto& m : members) knots.insert(knots.end(), m.knots.begin(), m.knots.end());
    std::sort(knots.begin(), knots.end());
    knots.erase(std::unique(knots.begin(), knots.end()), knots.end());
    CalibrationMap out;
    out.knots = knots;
    for (double k : knots) {
        double s = 0;
        for (const auto& m : members) s += apply_calibration(m, k);
        out.values.push_back(s / static_cast<double>(members.size()));
    }
    return out;
}

}  // namespace

CalibrationMap l1_trend_calibrate(std::span<const double> scores, std::span<const int> labels,
                                  const TrendCalibrationConfig& config) {
    if (scores.size() != labels.size()) throw ValidationError("calibration: scores and labels differ in length");
    if (scores.size() < 20) throw ValidationError("calibration needs at least 20 cases");
    const auto n1 = std::count(labels.begin(), labels.end(), 1);
    if (n1 == 0 || n1 == static_cast<long>(labels.size())) throw ValidationError("calibration needs both classes");
    for (double s : scores)
        if (!(s >= 0 && s <= 1)) throw DomainError("calibration scores must lie in [0, 1]");
    if (config.bins < 2 || config.ensemble < 1 || config.cv_folds < 2 || config.lambda_grid.empty())
        throw ValidationError("invalid trend-calibration configuration");

    const std::size_t n = scores.size();
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::mt19937_64 rng(config.seed);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<int> fold(n);
    for (std::size_t i = 0; i < n; ++i) fold[perm[i]] = static_cast<int>(i % config.cv_folds);

    double best_lambda = config.lambda_grid.front(), best_loss = std::numeric_limits<double>::infinity();
    for (double lambda : config.lambda_grid) {
        double loss = 0;
        for (int f = 0; f < config.cv_folds; ++f) {
            std::vector<double> ts, hs;
            std::vector<int> ty, hy;
            for (std::size_t i = 0; i < n; ++i) {
                if (fold[i] == f) {
                    hs.push_back(scores[i]);
                    hy.push_back(labels[i]);
                } else {
                    ts.push_back(scores[i]);
                    ty.push_back(labels[i]);
                }
            }
            const auto member = fit_member(ts, ty, config.bins, 0.0, lambda, nullptr);
            loss += log_loss(apply_calibration(member, hs), hy) * static_cast<double>(hs.size());
        }
        if (loss < best_loss) {
            best_loss = loss;
            best_lambda = lambda;
        }
    }

    std::vector<std::string> warnings;
    std::vector<CalibrationMap> members;
    for (int e = 0; e < config.ensemble; ++e)
        members.push_back(fit_member(scores, labels, config.bins, static_cast<double>(e) / config.ensemble,
                                     best_lambda, e == 0 ? &warnings : nullptr));
    CalibrationMap map = average_members(members);
    map.lambda = best_lambda;
    map.ensemble_size = config.ensemble;
    map.warnings = std::move(warnings);

    const double before = log_loss(scores, labels);
    const double after = log_loss(apply_calibration(map, scores), labels);
    if (after > before + 1e-9) {
        auto id = CalibrationMap::identity();
        id.lambda = best_lambda;
        id.ensemble_size = config.ensemble;
        id.identity_fallback = true;
        id.warnings = map.warnings;
        id.warnings.push_back("calibrated log-loss " + format_compact(after) + " exceeds raw " +
                              format_compact(before) + "; identity map kept");
        return id;
    }
    return map;
}

CoxCalibration cox_calibration(std::span<const double> p, std::span<const int> labels) {
    if (p.size() != labels.size()) throw ValidationError("cox_calibration: misaligned input");
    CoxCalibration c;
    c.n = p.size();
    std::vector<double> z(p.size());
    double ll0 = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (std::isnan(p[i])) throw ValidationError("cox_calibration: NaN prediction");
        const double q = clamp_probability(p[i]);
        z[i] = logit(q);
        ll0 += labels[i] ? std::log(q) : std::log1p(-q);
    }
    try {
        const auto fit = fit_univariate_logistic(z, labels, "predicted log-odds");
        c.alpha = fit.intercept;
        c.beta = fit.slope;
        c.chi2 = std::max(0.0, 2 * (fit.log_likelihood - ll0));
    } catch (const SeparationError&) {
        c.separation = true;
        c.alpha = std::numeric_limits<double>::quiet_NaN();
        c.beta = std::numeric_limits<double>::quiet_NaN();
        c.chi2 = std::numeric_limits<double>::quiet_NaN();
        c.U = std::numeric_limits<double>::quiet_NaN();
        c.p_value = std::numeric_limits<double>::quiet_NaN();
        return c;
    }
    c.U = (c.chi2 - 2) / static_cast<double>(c.n);
    c.p_value = std::exp(-0.5 * c.chi2);  // chi-square tail with 2 degrees of freedom
    return c;
}

}  // namespace trd
