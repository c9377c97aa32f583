#include "trd/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "trd/common.hpp"

namespace trd {

namespace {

constexpr double kZ95 = 1.959963984540054;

void check_inputs(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) throw ValidationError("scores and labels differ in length");
    std::size_t n1 = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] != 0 && labels[i] != 1) throw ValidationError("labels must be 0 or 1");
        if (std::isnan(scores[i])) throw ValidationError("NaN score");
        n1 += labels[i];
    }
    if (n1 == 0 || n1 == labels.size()) throw ValidationError("both classes must be present");
}

std::vector<std::size_t> order_by_score(std::span<const double> scores) {
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });
    return idx;
}

// Twice the Mann-Whitney count: 2 per correctly ordered (event, nonevent) pair, 1 per tie.
std::uint64_t doubled_pair_count(std::span<const double> scores, std::span<const int> labels) {
    const auto idx = order_by_score(scores);
    std::uint64_t total = 0, neg_below = 0;
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        std::uint64_t pos = 0, neg = 0;
        while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
            (labels[idx[j]] ? pos : neg) += 1;
            ++j;
        }
        total += 2 * pos * neg_below + pos * neg;
        neg_below += neg;
        i = j;
    }
    return total;
}

Interval clamp(Interval v, double lo, double hi) {
    return {std::clamp(v.lo, lo, hi), std::clamp(v.hi, lo, hi)};
}

}  // namespace

std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const int> labels) {
    check_inputs(scores, labels);
    const auto idx = order_by_score(scores);
    const double n1 = static_cast<double>(std::count(labels.begin(), labels.end(), 1));
    const double n0 = static_cast<double>(labels.size()) - n1;
    std::vector<RocPoint> out{{0, 0, std::numeric_limits<double>::infinity()}};
    std::size_t tp = 0, fp = 0;
    for (std::size_t i = idx.size(); i > 0;) {
        const double s = scores[idx[i - 1]];
        while (i > 0 && scores[idx[i - 1]] == s) {
            (labels[idx[i - 1]] ? tp : fp) += 1;
            --i;
        }
        out.push_back({static_cast<double>(fp) / n0, static_cast<double>(tp) / n1, s});
    }
    return out;
}

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
    check_inputs(scores, labels);
    const auto n1 = static_cast<std::uint64_t>(std::count(labels.begin(), labels.end(), 1));
    const auto n0 = static_cast<std::uint64_t>(labels.size()) - n1;
    return static_cast<double>(doubled_pair_count(scores, labels)) / static_cast<double>(2 * n1 * n0);
}

AucCI auc_ci(std::span<const double> scores, std::span<const int> labels, std::span<const int> folds) {
    if (folds.size() != scores.size()) throw ValidationError("fold assignment length mismatch");
    check_inputs(scores, labels);
    AucCI out;
    std::vector<int> fold_ids(folds.begin(), folds.end());
    std::sort(fold_ids.begin(), fold_ids.end());
    fold_ids.erase(std::unique(fold_ids.begin(), fold_ids.end()), fold_ids.end());

    double auc_sum = 0, var_sum = 0;
    std::size_t used = 0, n_used = 0;
    for (int f : fold_ids) {
        std::vector<double> s;
        std::vector<int> y;
        for (std::size_t i = 0; i < scores.size(); ++i)
            if (folds[i] == f) {
                s.push_back(scores[i]);
                y.push_back(labels[i]);
            }
        const auto n1 = static_cast<std::size_t>(std::count(y.begin(), y.end(), 1));
        const std::size_t n0 = y.size() - n1;
        if (n1 == 0 || n0 == 0) {
            out.skipped_folds.push_back(f);
            out.warnings.push_back("fold " + std::to_string(f) + " holds a single class; skipped");
            continue;
        }
        const double auc = roc_auc(s, y);
        // Influence of each case: events use the share of nonevents ranked below them,
        // nonevents the share of events ranked above them (ties one half).
        std::vector<double> neg_sorted, pos_sorted;
        for (std::size_t i = 0; i < y.size(); ++i) (y[i] ? pos_sorted : neg_sorted).push_back(s[i]);
        std::sort(neg_sorted.begin(), neg_sorted.end());
        std::sort(pos_sorted.begin(), pos_sorted.end());
        const double n = static_cast<double>(y.size());
        const double w1 = n / static_cast<double>(n1), w0 = n / static_cast<double>(n0);
        double ic2 = 0;
        for (std::size_t i = 0; i < y.size(); ++i) {
            double ic;
            if (y[i]) {
                const auto lo = std::lower_bound(neg_sorted.begin(), neg_sorted.end(), s[i]);
                const auto hi = std::upper_bound(neg_sorted.begin(), neg_sorted.end(), s[i]);
                const double below = static_cast<double>(lo - neg_sorted.begin()) + 0.5 * static_cast<double>(hi - lo);
                ic = w1 * (below / static_cast<double>(n0) - auc);
            } else {
                const auto lo = std::lower_bound(pos_sorted.begin(), pos_sorted.end(), s[i]);
                const auto hi = std::upper_bound(pos_sorted.begin(), pos_sorted.end(), s[i]);
                const double above =
                    static_cast<double>(pos_sorted.end() - hi) + 0.5 * static_cast<double>(hi - lo);
                ic = w0 * (above / static_cast<double>(n1) - auc);
            }
            ic2 += ic * ic;
        }
        auc_sum += auc;
        var_sum += ic2 / n;
        ++used;
        n_used += y.size();
    }
    if (used == 0) throw ValidationError("no fold holds both classes");
    out.auc = auc_sum / static_cast<double>(used);
    const double sigma2 = var_sum / static_cast<double>(used);
    out.se = std::sqrt(sigma2 / static_cast<double>(n_used));
    out.ci = clamp({out.auc - kZ95 * out.se, out.auc + kZ95 * out.se}, 0, 1);
    if (out.se == 0) {
        out.degenerate = true;
        out.warnings.push_back("zero influence-curve variance; interval is degenerate");
    }
    return out;
}

std::optional<Interval> wilson_interval(std::size_t successes, std::size_t trials, double z) {
    if (trials == 0) return std::nullopt;
    const double n = static_cast<double>(trials);
    const double p = static_cast<double>(successes) / n;
    const double z2 = z * z;
    const double centre = (p + z2 / (2 * n)) / (1 + z2 / n);
    const double half = z * std::sqrt(p * (1 - p) / n + z2 / (4 * n * n)) / (1 + z2 / n);
    return clamp({centre - half, centre + half}, 0, 1);
}

ConfusionMetrics confusion_metrics(std::span<const double> scores, std::span<const int> labels, double cutoff) {
    if (scores.size() != labels.size()) throw ValidationError("scores and labels differ in length");
    ConfusionMetrics m;
    m.cutoff = cutoff;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const bool pred = scores[i] >= cutoff;
        if (labels[i]) (pred ? m.tp : m.fn) += 1;
        else (pred ? m.fp : m.tn) += 1;
    }
    auto ratio = [](std::size_t a, std::size_t b) -> std::optional<double> {
        if (b == 0) return std::nullopt;
        return static_cast<double>(a) / static_cast<double>(b);
    };
    m.sensitivity = ratio(m.tp, m.tp + m.fn);
    m.specificity = ratio(m.tn, m.tn + m.fp);
    m.ppv = ratio(m.tp, m.tp + m.fp);
    m.npv = ratio(m.tn, m.tn + m.fn);
    if (m.ppv && m.sensitivity && *m.ppv + *m.sensitivity > 0)
        m.f1 = 2 * *m.ppv * *m.sensitivity / (*m.ppv + *m.sensitivity);
    m.sensitivity_ci = wilson_interval(m.tp, m.tp + m.fn);
    m.specificity_ci = wilson_interval(m.tn, m.tn + m.fp);
    m.ppv_ci = wilson_interval(m.tp, m.tp + m.fp);
    m.npv_ci = wilson_interval(m.tn, m.tn + m.fn);
    return m;
}

Spread fold_spread(std::span<const double> values, double lo, double hi) {
    Spread s;
    if (values.empty()) return s;
    const double k = static_cast<double>(values.size());
    s.mean = std::accumulate(values.begin(), values.end(), 0.0) / k;
    double ss = 0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    const double se = values.size() > 1 ? std::sqrt(ss / (k - 1) / k) : 0.0;
    s.ci = clamp({s.mean - kZ95 * se, s.mean + kZ95 * se}, lo, hi);
    return s;
}

namespace {

void check_reclass(std::span<const double> a, std::span<const double> b, std::span<const int> labels) {
    if (a.size() != b.size() || a.size() != labels.size()) throw ValidationError("prediction vectors misaligned");
    check_inputs(a, labels);
}

struct ReclassCounts {
    double n_e = 0, n_ne = 0, up_e = 0, down_e = 0, up_ne = 0, down_ne = 0;
};

ReclassCounts count_moves(std::span<const double> a, std::span<const double> b, std::span<const int> labels) {
    ReclassCounts c;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const bool up = b[i] > a[i], down = b[i] < a[i];
        if (labels[i]) {
            c.n_e += 1;
            c.up_e += up;
            c.down_e += down;
        } else {
            c.n_ne += 1;
            c.up_ne += up;
            c.down_ne += down;
        }
    }
    return c;
}

double cnri_of(const ReclassCounts& c) {
    return (c.up_e - c.down_e) / c.n_e + (c.down_ne - c.up_ne) / c.n_ne;
}

double idi_of(std::span<const double> a, std::span<const double> b, std::span<const int> labels) {
    double se_b = 0, se_a = 0, sn_b = 0, sn_a = 0, ne = 0, nn = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (labels[i]) {
            se_b += b[i];
            se_a += a[i];
            ne += 1;
        } else {
            sn_b += b[i];
            sn_a += a[i];
            nn += 1;
        }
    }
    return (se_b / ne - se_a / ne) - (sn_b / nn - sn_a / nn);
}

double percentile(std::vector<double> v, double q) {
    std::sort(v.begin(), v.end());
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace

double cnri(std::span<const double> p_initial, std::span<const double> p_updated, std::span<const int> labels) {
    check_reclass(p_initial, p_updated, labels);
    return cnri_of(count_moves(p_initial, p_updated, labels));
}

double idi(std::span<const double> p_initial, std::span<const double> p_updated, std::span<const int> labels) {
    check_reclass(p_initial, p_updated, labels);
    return idi_of(p_initial, p_updated, labels);
}

ReclassStats reclassification(std::span<const double> p_initial, std::span<const double> p_updated,
                              std::span<const int> labels, const ReclassOptions& options) {
    check_reclass(p_initial, p_updated, labels);
    ReclassStats r;
    const auto c = count_moves(p_initial, p_updated, labels);
    r.cnri = cnri_of(c);
    r.idi = idi_of(p_initial, p_updated, labels);
    if (c.up_e + c.down_e + c.up_ne + c.down_ne == 0) r.warnings.push_back("all predictions tied; cNRI is 0");

    if (options.bootstrap) {
        r.bootstrap = true;
        std::mt19937_64 rng(options.seed);
        std::uniform_int_distribution<std::size_t> pick(0, labels.size() - 1);
        std::vector<double> nri_b, idi_b, a(labels.size()), b(labels.size());
        std::vector<int> y(labels.size());
        for (int rep = 0; rep < options.replicates; ++rep) {
            for (std::size_t i = 0; i < labels.size(); ++i) {
                const auto k = pick(rng);
                a[i] = p_initial[k];
                b[i] = p_updated[k];
                y[i] = labels[k];
            }
            const auto n1 = std::count(y.begin(), y.end(), 1);
            if (n1 == 0 || n1 == static_cast<long>(y.size())) continue;
            nri_b.push_back(cnri_of(count_moves(a, b, y)));
            idi_b.push_back(idi_of(a, b, y));
        }
        if (nri_b.size() < 2) throw NumericalError("bootstrap produced too few two-class replicates");
        r.cnri_ci = {percentile(nri_b, 0.025), percentile(nri_b, 0.975)};
        r.idi_ci = {percentile(idi_b, 0.025), percentile(idi_b, 0.975)};
        return r;
    }

    auto prop_var = [](double up, double down, double n) {
        const double pu = up / n, pd = down / n;
        return (pu + pd - (pu - pd) * (pu - pd)) / n;
    };
    const double nri_se = std::sqrt(prop_var(c.up_e, c.down_e, c.n_e) + prop_var(c.up_ne, c.down_ne, c.n_ne));
    r.cnri_ci = clamp({r.cnri - kZ95 * nri_se, r.cnri + kZ95 * nri_se}, -2, 2);

    double me = 0, mn = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) (labels[i] ? me : mn) += p_updated[i] - p_initial[i];
    me /= c.n_e;
    mn /= c.n_ne;
    double ve = 0, vn = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const double d = p_updated[i] - p_initial[i];
        if (labels[i]) ve += (d - me) * (d - me);
        else vn += (d - mn) * (d - mn);
    }
    ve = c.n_e > 1 ? ve / (c.n_e - 1) : 0;
    vn = c.n_ne > 1 ? vn / (c.n_ne - 1) : 0;
    const double idi_se = std::sqrt(ve / c.n_e + vn / c.n_ne);
    r.idi_ci = clamp({r.idi - kZ95 * idi_se, r.idi + kZ95 * idi_se}, -1, 1);
    return r;
}

}  // namespace trd
