#include <cmath>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "trd/common.hpp"
#include "trd/metrics.hpp"

using namespace trd;

TEST_CASE("AUC examples") {
    const std::vector<int> y = {0, 0, 1, 1};
    CHECK(roc_auc(std::vector<double>{0.1, 0.2, 0.8, 0.9}, y) == 1.0);
    CHECK(roc_auc(std::vector<double>{0.3, 0.3, 0.3, 0.3}, y) == 0.5);
    CHECK(roc_auc(std::vector<double>{0.1, 0.4, 0.35, 0.8}, y) == 0.75);
    CHECK_THROWS_AS(roc_auc(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1}), ValidationError);
}

TEST_CASE("AUC equals pair counting and the ROC curve is monotone") {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 2 + rng() % 199;
        std::vector<double> s(n);
        std::vector<int> y(n);
        for (std::size_t i = 0; i < n; ++i) {
            s[i] = static_cast<double>(rng() % 20) / 4.0;  // plenty of ties
            y[i] = static_cast<int>(rng() % 2);
        }
        y[0] = 0;
        y[1] = 1;
        CHECK(roc_auc(s, y) == oracle::auc(s, y));
        const auto roc = roc_curve(s, y);
        CHECK(std::isinf(roc.front().threshold));
        CHECK(roc.front().fpr == 0);
        CHECK(roc.back().tpr == 1);
        for (std::size_t i = 1; i < roc.size(); ++i) {
            CHECK(roc[i].fpr >= roc[i - 1].fpr);
            CHECK(roc[i].tpr >= roc[i - 1].tpr);
            CHECK(roc[i].threshold < roc[i - 1].threshold);
        }
    }
}

TEST_CASE("AUC interval") {
    std::mt19937_64 rng(6);
    std::normal_distribution<double> z(0, 1);
    std::vector<double> s;
    std::vector<int> y;
    for (int i = 0; i < 400; ++i) {
        y.push_back(i % 3 == 0);
        s.push_back(z(rng) + (y.back() ? 1.0 : 0.0));
    }
    const std::vector<int> single(s.size(), 0);
    const auto base = auc_ci(s, y, single);
    CHECK(base.ci.lo < base.auc);
    CHECK(base.ci.hi > base.auc);

    SUBCASE("close to the DeLong variance") {
        CHECK(base.se == doctest::Approx(std::sqrt(oracle::delong_variance(s, y))).epsilon(0.10));
    }
    SUBCASE("duplicating the data shrinks the width by about 1/sqrt(2)") {
        auto s2 = s;
        auto y2 = y;
        s2.insert(s2.end(), s.begin(), s.end());
        y2.insert(y2.end(), y.begin(), y.end());
        const auto dup = auc_ci(s2, y2, std::vector<int>(s2.size(), 0));
        const double ratio = (dup.ci.hi - dup.ci.lo) / (base.ci.hi - base.ci.lo);
        CHECK(ratio == doctest::Approx(1 / std::sqrt(2.0)).epsilon(0.02));
    }
    SUBCASE("perfect separation is degenerate") {
        std::vector<double> p(s.size());
        for (std::size_t i = 0; i < p.size(); ++i) p[i] = y[i] + 0.1 * (i % 7);
        std::vector<int> folds(s.size());
        for (std::size_t i = 0; i < folds.size(); ++i) folds[i] = static_cast<int>(i % 5);
        const auto r = auc_ci(p, y, folds);
        CHECK(r.degenerate);
        CHECK(r.auc == 1.0);
        CHECK(r.ci.lo == 1.0);
        CHECK(r.ci.hi == 1.0);
    }
    SUBCASE("single-class folds are skipped with a warning") {
        std::vector<int> folds(s.size(), 0);
        std::vector<double> s3 = s;
        std::vector<int> y3 = y;
        s3.push_back(0.5);
        y3.push_back(0);
        folds.push_back(1);
        const auto r = auc_ci(s3, y3, folds);
        REQUIRE(r.skipped_folds.size() == 1);
        CHECK(r.skipped_folds[0] == 1);
        CHECK_FALSE(r.warnings.empty());
    }
}

TEST_CASE("confusion metrics") {
    // TP=3 FP=1 FN=1 TN=5
    const std::vector<double> s = {0.9, 0.8, 0.7, 0.6, 0.2, 0.4, 0.3, 0.2, 0.1, 0.1};
    const std::vector<int> y = {1, 1, 1, 0, 1, 0, 0, 0, 0, 0};
    const auto c = confusion_metrics(s, y, 0.5);
    CHECK(c.tp == 3);
    CHECK(c.fp == 1);
    CHECK(c.fn == 1);
    CHECK(c.tn == 5);
    CHECK(*c.sensitivity == 0.75);
    CHECK(*c.specificity == doctest::Approx(5.0 / 6.0));
    CHECK(*c.ppv == 0.75);
    CHECK(*c.npv == doctest::Approx(5.0 / 6.0));
    CHECK(*c.f1 == doctest::Approx(0.75));
    CHECK(c.sensitivity_ci->lo < 0.75);

    const auto low = confusion_metrics(s, y, 0.0);
    CHECK(*low.sensitivity == 1);
    CHECK(*low.specificity == 0);
    const auto none = confusion_metrics(s, y, 2.0);
    CHECK_FALSE(none.ppv.has_value());
    CHECK_FALSE(none.ppv_ci.has_value());
    CHECK(*none.npv == doctest::Approx(6.0 / 10.0));
}

TEST_CASE("wilson interval") {
    const auto w = wilson_interval(8, 10).value();
    CHECK(w.lo == doctest::Approx(0.4901625).epsilon(1e-6));
    CHECK(w.hi == doctest::Approx(0.9433178).epsilon(1e-6));
    CHECK_FALSE(wilson_interval(0, 0).has_value());
}

TEST_CASE("cNRI and IDI examples") {
    const std::vector<double> p = {0.2, 0.4, 0.6, 0.8};
    const std::vector<int> y = {1, 1, 0, 0};
    CHECK(cnri(p, p, y) == 0);
    CHECK(idi(p, p, y) == 0);
    CHECK(cnri(p, std::vector<double>{0.3, 0.5, 0.5, 0.7}, y) == 2);
    CHECK(cnri(p, std::vector<double>{0.3, 0.3, 0.7, 0.9}, y) == -1);
    CHECK(idi(p, std::vector<double>{0.3, 0.5, 0.5, 0.7}, y) == doctest::Approx(0.2));
    CHECK(idi(p, std::vector<double>{0.2, 0.4, 0.7, 0.9}, y) == doctest::Approx(-0.1));
    const auto ties = reclassification(p, p, y);
    CHECK(ties.cnri == 0);
    CHECK_FALSE(ties.warnings.empty());
}

TEST_CASE("reclassification equals direct definitions and stays in range") {
    std::mt19937_64 rng(10);
    std::uniform_real_distribution<double> u(0, 1);
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t n = 4 + rng() % 197;
        std::vector<double> a(n), b(n);
        std::vector<int> y(n);
        for (std::size_t i = 0; i < n; ++i) {
            a[i] = u(rng);
            b[i] = rng() % 4 ? u(rng) : a[i];
            y[i] = static_cast<int>(rng() % 2);
        }
        y[0] = 0;
        y[1] = 1;
        CHECK(cnri(a, b, y) == doctest::Approx(oracle::cnri(a, b, y)).epsilon(1e-15));
        CHECK(idi(a, b, y) == doctest::Approx(oracle::idi(a, b, y)).epsilon(1e-12));
        const auto r = reclassification(a, b, y);
        CHECK(r.cnri >= -2);
        CHECK(r.cnri <= 2);
        CHECK(r.idi >= -1);
        CHECK(r.idi <= 1);
        CHECK(r.cnri_ci.lo <= r.cnri);
        CHECK(r.cnri_ci.hi >= r.cnri);
    }
}

TEST_CASE("bootstrap intervals are seeded") {
    std::mt19937_64 rng(12);
    std::uniform_real_distribution<double> u(0, 1);
    std::vector<double> a(200), b(200);
    std::vector<int> y(200);
    for (std::size_t i = 0; i < 200; ++i) {
        y[i] = i % 4 == 0;
        a[i] = u(rng);
        b[i] = std::clamp(a[i] + (y[i] ? 0.1 : -0.05) + 0.05 * (u(rng) - 0.5), 0.0, 1.0);
    }
    ReclassOptions o;
    o.bootstrap = true;
    o.replicates = 300;
    o.seed = 5;
    const auto r1 = reclassification(a, b, y, o);
    const auto r2 = reclassification(a, b, y, o);
    CHECK(r1.bootstrap);
    CHECK(r1.cnri_ci.lo == r2.cnri_ci.lo);
    CHECK(r1.idi_ci.hi == r2.idi_ci.hi);
    CHECK(r1.idi_ci.lo > 0);
}

TEST_CASE("fold spread") {
    const auto s = fold_spread(std::vector<double>{0.8, 0.9, 1.0});
    CHECK(s.mean == doctest::Approx(0.9));
    CHECK(s.ci.hi <= 1.0);
    CHECK(s.ci.lo < 0.9);
}
