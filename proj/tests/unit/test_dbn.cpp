#include <cmath>
#include <numbers>
#include <random>
#include <set>

#include "doctest.h"
#include "oracles.hpp"
#include "trd/dbn.hpp"

using namespace trd;
using nlohmann::json;

namespace {

NetworkTemplate tmpl_from(json j) {
    if (!j.contains("class_node")) j["class_node"] = "y";
    return NetworkTemplate::from_json(j);
}

// y -> A (class-conditional mean), no other edges.
NetworkTemplate single_node() {
    return tmpl_from({{"nodes", {{{"name", "y"}, {"kind", "discrete"}}, {{"name", "A"}, {"transform", "none"}}}},
                      {"class_children", {"A"}}});
}

TrainedDBN two_gaussians(double mu0, double mu1, double var, double prior) {
    TrainedDBN m;
    m.tmpl = single_node();
    m.class_prior = prior;
    m.gaussian.resize(2);
    m.discrete.resize(2);
    const auto a = m.tmpl.index("A");
    for (int tie = 0; tie < 2; ++tie)
        m.gaussian[a][tie].rows = {{mu0, Eigen::VectorXd(0), var}, {mu1, Eigen::VectorXd(0), var}};
    return m;
}

Evidence one(double v) {
    Evidence x(1, 1);
    x(0, 0) = v;
    return x;
}

// Two identical slices, so both ties have rows to fit.
Evidence twice(double v) { return Evidence::Constant(2, 1, v); }

}  // namespace

TEST_CASE("default template loads with the expected node set") {
    const auto t = NetworkTemplate::load(data_dir() / "fig2_template.json");
    const std::set<std::string> expected = {
        "HR",  "RR",  "Temp",      "SBP",        "DBP",        "MAP",       "SpO2",   "Uout",
        "WBC", "ALT", "AST",       "Bilirubin",  "PlateletCnt", "Hemoglobin", "Lactate", "Creatinine",
        "Bicarbonate", "PaO2", "FiO2", "PaCO2", "INR", "GCS", "antibiotics", "vasopressor",
        "mLactate", "mPaO2", "mFiO2", "mPaCO2"};
    const auto names = t.slice_node_names();
    CHECK(std::set<std::string>(names.begin(), names.end()) == expected);
    CHECK(t.class_node == "death");
    CHECK(t.version == "fig2-interpretation/1");
    CHECK(NetworkTemplate::from_json(t.to_json()).to_json() == t.to_json());
}

TEST_CASE("structural errors") {
    const json nodes = {{{"name", "y"}, {"kind", "discrete"}}, {{"name", "A"}}, {{"name", "B"}},
                        {{"name", "D"}, {"kind", "discrete"}}};
    CHECK_THROWS_AS(tmpl_from({{"nodes", nodes}, {"within_edges", oracle::edges({{"A", "B"}, {"B", "A"}})}}), StructureError);
    try {
        tmpl_from({{"nodes", nodes}, {"within_edges", oracle::edges({{"A", "B"}, {"B", "A"}})}});
    } catch (const StructureError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("A") != std::string::npos);
        CHECK(msg.find("B") != std::string::npos);
    }
    CHECK_THROWS_AS(tmpl_from({{"nodes", nodes}, {"temporal_edges", {{{"from", "A"}, {"to", "B"}, {"lag", 2}}}}}),
                    StructureError);
    CHECK_THROWS_AS(tmpl_from({{"nodes", nodes}, {"within_edges", oracle::edges({{"A", "D"}})}}), StructureError);
    CHECK_THROWS_AS(tmpl_from({{"nodes", nodes}, {"within_edges", oracle::edges({{"A", "y"}})}}), StructureError);
    CHECK_THROWS_AS(tmpl_from({{"nodes", nodes}, {"within_edges", oracle::edges({{"A", "Z"}})}}), StructureError);
    CHECK_NOTHROW(tmpl_from({{"nodes", nodes}, {"within_edges", oracle::edges({{"D", "A"}})}, {"temporal_edges", oracle::edges({{"B", "A"}})}}));
}

TEST_CASE("unroll counts") {
    const auto t = tmpl_from({{"nodes", {{{"name", "y"}, {"kind", "discrete"}}, {{"name", "A"}}, {{"name", "B"}}, {{"name", "C"}}}},
                              {"within_edges", oracle::edges({{"A", "B"}})},
                              {"temporal_edges", oracle::edges({{"A", "A"}, {"B", "C"}})},
                              {"class_children", {"A", "C"}}});
    const auto n1 = unroll(t, 1);
    CHECK(n1.temporal_edge_count == 0);
    CHECK(n1.nodes.size() == 1 + 3);
    const auto n3 = unroll(t, 3);
    CHECK(n3.temporal_edge_count == 2 * 2);
    CHECK(n3.within_edge_count == 3);
    CHECK(n3.class_edge_count == 3 * 2);
    CHECK(n3.nodes.size() == 1 + 3 * (t.nodes.size() - 1));
    CHECK_THROWS_AS(unroll(t, 0), DomainError);
}

TEST_CASE("class-conditional log-likelihood examples") {
    const auto m = two_gaussians(1.5, 1.5, 2.0, 0.5);
    CHECK(class_conditional_loglik(m, one(1.5), 0) == doctest::Approx(std::log(1 / std::sqrt(2 * std::numbers::pi * 2.0))));
    CHECK(class_conditional_loglik(m, empty_evidence(m.tmpl, 3), 1) == 0.0);

    // A -> B with B = 2A + noise, evidence on B only: B ~ N(2 muA + 1, 4 varA + varB)
    const auto t = tmpl_from({{"nodes", {{{"name", "y"}, {"kind", "discrete"}}, {{"name", "A"}}, {{"name", "B"}}}},
                              {"within_edges", oracle::edges({{"A", "B"}})}});
    TrainedDBN c;
    c.tmpl = t;
    c.gaussian.resize(3);
    c.discrete.resize(3);
    Eigen::VectorXd two(1);
    two << 2.0;
    for (int tie = 0; tie < 2; ++tie) {
        c.gaussian[t.index("A")][tie].rows = {{0.5, Eigen::VectorXd(0), 1.5}};
        c.gaussian[t.index("B")][tie].rows = {{1.0, two, 0.7}};
    }
    Evidence x = empty_evidence(t, 1);
    x(0, t.column(t.index("B"))) = 3.2;
    const double mean = 2 * 0.5 + 1, var = 4 * 1.5 + 0.7;
    const double expected = -0.5 * std::log(2 * std::numbers::pi * var) - 0.5 * (3.2 - mean) * (3.2 - mean) / var;
    CHECK(class_conditional_loglik(c, x, 0) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("predict_mortality examples") {
    const auto m = two_gaussians(0, 2, 1, 0.5);
    CHECK(predict_mortality(m, one(0)) == doctest::Approx(1 / (1 + std::exp(2.0))).epsilon(1e-12));
    CHECK(predict_mortality(m, one(0)) == doctest::Approx(0.119).epsilon(0.01));
    CHECK(predict_mortality(m, one(1)) == doctest::Approx(0.5).epsilon(1e-14));
    const auto p = two_gaussians(0, 2, 1, 0.14);
    CHECK(predict_mortality(p, empty_evidence(p.tmpl, 2)) == doctest::Approx(0.14).epsilon(1e-14));
    // far from both means the log-space posterior stays finite
    const double far = predict_mortality(m, one(1e6));
    CHECK(std::isfinite(far));
    CHECK(far == 1.0);
}

TEST_CASE("complete-data MLE examples") {
    const auto t = single_node();
    TrainingSet d;
    for (double v : {1.0, 2.0, 3.0}) {
        d.evidence.push_back(twice(v));
        d.labels.push_back(0);
    }
    d.evidence.push_back(twice(0));
    d.labels.push_back(1);
    const auto m = mle_complete_data(t, d);
    const auto& row = m.gaussian[t.index("A")][kInitial].rows[0];
    CHECK(row.intercept == doctest::Approx(2.0));
    CHECK(row.variance == doctest::Approx(2.0 / 3.0));

    // child = 3 parent + 1 exactly
    const auto r = tmpl_from({{"nodes", {{{"name", "y"}, {"kind", "discrete"}}, {{"name", "P"}}, {{"name", "C"}}}},
                              {"within_edges", oracle::edges({{"P", "C"}})}});
    TrainingSet e;
    for (int i = 0; i < 20; ++i) {
        Evidence x(2, 2);
        x.col(static_cast<Eigen::Index>(r.column(r.index("P")))).setConstant(i * 0.37 - 2);
        x.col(static_cast<Eigen::Index>(r.column(r.index("C")))).setConstant(3 * (i * 0.37 - 2) + 1);
        e.evidence.push_back(x);
        e.labels.push_back(i % 2);
    }
    const auto me = mle_complete_data(r, e);
    const auto& cr = me.gaussian[r.index("C")][kInitial].rows[0];
    CHECK(cr.coefficients(0) == doctest::Approx(3.0).epsilon(1e-9));
    CHECK(cr.intercept == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(cr.variance == kVarianceFloor);
    CHECK_FALSE(me.info.warnings.empty());

    // Laplace smoothing: n true values in class 1 gives (n + 1) / (n + 2)
    const auto dt = tmpl_from({{"nodes", {{{"name", "y"}, {"kind", "discrete"}}, {{"name", "D"}, {"kind", "discrete"}}}},
                               {"class_children", {"D"}}});
    TrainingSet f;
    for (int i = 0; i < 7; ++i) {
        f.evidence.push_back(one(1));
        f.labels.push_back(1);
    }
    f.evidence.push_back(one(0));
    f.labels.push_back(0);
    const auto md = mle_complete_data(dt, f);
    CHECK(md.discrete[dt.index("D")][kInitial].rows[1][1] == doctest::Approx(8.0 / 9.0));
    for (const auto& row2 : md.discrete[dt.index("D")][kInitial].rows)
        CHECK(std::abs(row2[0] + row2[1] - 1) <= 1e-12);
}

TEST_CASE("complete-data errors") {
    const auto r = tmpl_from({{"nodes", {{{"name", "y"}, {"kind", "discrete"}}, {{"name", "P"}}, {{"name", "Q"}}, {{"name", "C"}}}},
                              {"within_edges", oracle::edges({{"P", "C"}, {"Q", "C"}})}});
    TrainingSet e;
    for (int i = 0; i < 2; ++i) {
        e.evidence.push_back(Evidence::Constant(2, 3, i + 1.0));
        e.labels.push_back(i);
    }
    try {
        mle_complete_data(r, e);
        FAIL("expected NumericalError");
    } catch (const NumericalError& err) {
        CHECK(std::string(err.what()).find("'C'") != std::string::npos);
    }
    e.evidence[0](0, 0) = std::nan("");
    CHECK_THROWS_AS(mle_complete_data(r, e), ValidationError);
}

TEST_CASE("EM on complete data equals the complete-data MLE") {
    std::mt19937_64 rng(5);
    const auto t = NetworkTemplate::from_json(oracle::random_template_json(rng, 3));
    const auto truth = oracle::random_model(t, rng);
    const auto data = sample(truth, 3, 400, 9);
    const auto mle = mle_complete_data(t, data);
    EmConfig cfg;
    cfg.max_iter = 1;
    const auto em = em_fit(t, data, cfg);
    CHECK(em.to_json()["cpds"] == mle.to_json()["cpds"]);
}

TEST_CASE("EM log-likelihood is non-decreasing and temporal CPDs are tied") {
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 5; ++trial) {
        const auto t = NetworkTemplate::from_json(oracle::random_template_json(rng, 4));
        const auto truth = oracle::random_model(t, rng);
        auto data = sample(truth, 4, 300, 100 + trial);
        std::uniform_real_distribution<double> u(0, 1);
        for (auto& x : data.evidence)
            for (Eigen::Index i = 0; i < x.rows(); ++i)
                for (Eigen::Index c = 0; c < x.cols(); ++c)
                    if (!t.is_discrete(t.slice_nodes()[c]) && u(rng) < 0.3) x(i, c) = std::nan("");
        EmConfig cfg;
        cfg.max_iter = 40;
        cfg.tol = 0;
        const auto m = em_fit(t, data, cfg);
        const auto& tr = m.info.log_likelihood_trace;
        for (std::size_t i = 1; i < tr.size(); ++i) CHECK(tr[i] >= tr[i - 1] - 1e-9 * std::abs(tr[i - 1]));
        // one parameter set per tie: the model has no per-slice parameters to diverge
        for (auto n : t.slice_nodes())
            if (!t.is_discrete(n)) CHECK(m.gaussian[n][kTransition].rows.size() == t.family(n, kTransition).n_configs());
    }
}

TEST_CASE("EM threads do not change the result") {
    std::mt19937_64 rng(12);
    const auto t = NetworkTemplate::from_json(oracle::random_template_json(rng, 4));
    auto data = sample(oracle::random_model(t, rng), 3, 200, 3);
    for (auto& x : data.evidence) x(0, 0) = std::nan("");
    EmConfig a, b;
    a.max_iter = b.max_iter = 5;
    b.threads = 3;
    CHECK(em_fit(t, data, a).to_json() == em_fit(t, data, b).to_json());
}

TEST_CASE("sampling moments, prior and determinism") {
    const auto m = two_gaussians(0, 0, 1, 0.14);
    const auto d = sample(m, 1, 100000, 77);
    double s = 0, ss = 0, deaths = 0;
    for (std::size_t i = 0; i < d.size(); ++i) {
        s += d.evidence[i](0, 0);
        ss += d.evidence[i](0, 0) * d.evidence[i](0, 0);
        deaths += d.labels[i];
    }
    const double n = static_cast<double>(d.size());
    CHECK(std::abs(s / n) < 0.02);
    CHECK(std::abs(ss / n - (s / n) * (s / n) - 1) < 0.03);
    CHECK(std::abs(deaths / n - 0.14) < 0.01);
    const auto again = sample(m, 1, 100, 77);
    const auto first = sample(m, 1, 100, 77);
    for (std::size_t i = 0; i < 100; ++i) CHECK(again.evidence[i](0, 0) == first.evidence[i](0, 0));
}

TEST_CASE("inference matches the moment-form oracle on random templates") {
    std::mt19937_64 rng(2024);
    for (int trial = 0; trial < 60; ++trial) {
        const auto t = NetworkTemplate::from_json(oracle::random_template_json(rng));
        const auto m = oracle::random_model(t, rng);
        const int T = 1 + trial % 3;
        const auto x = oracle::random_evidence(t, T, 0.6, rng);
        for (int c : {0, 1})
            CHECK(class_conditional_loglik(m, x, c) == doctest::Approx(oracle::class_loglik(m, x, c)).epsilon(1e-10));
        const auto post = class_posterior(m, x);
        CHECK(std::abs(post[0] + post[1] - 1) <= 1e-12);
        CHECK(post[1] >= 0);
        CHECK(post[1] <= 1);
    }
}

TEST_CASE("chain rule: joint density is the sum of node terms") {
    std::mt19937_64 rng(99);
    for (int trial = 0; trial < 30; ++trial) {
        const auto t = NetworkTemplate::from_json(oracle::random_template_json(rng));
        const auto m = oracle::random_model(t, rng);
        const auto x = oracle::random_evidence(t, 3, 1.0, rng);
        for (int c : {0, 1}) {
            const double prior = c ? std::log(m.class_prior) : std::log1p(-m.class_prior);
            CHECK(joint_log_density(m, x, c) == doctest::Approx(prior + oracle::class_loglik(m, x, c)).epsilon(1e-10));
        }
    }
}

TEST_CASE("marginalization order invariance and forward prediction") {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 30; ++trial) {
        const auto t = NetworkTemplate::from_json(oracle::random_template_json(rng));
        const auto m = oracle::random_model(t, rng);
        auto x = oracle::random_evidence(t, 2, 0.7, rng);

        // lookahead 0 is plain prediction; lookahead 1 equals an explicitly padded unroll
        CHECK(forward_predict(m, x, 0) == predict_mortality(m, x));
        Evidence padded = empty_evidence(t, 3);
        padded.topRows(2) = x;
        CHECK(forward_predict(m, x, 1) == doctest::Approx(predict_mortality(m, padded)).epsilon(1e-12));

        // integrate out one more continuous cell then condition, against the oracle doing it jointly
        for (Eigen::Index c = 0; c < x.cols(); ++c)
            if (!t.is_discrete(t.slice_nodes()[c]) && !std::isnan(x(1, c))) {
                auto y = x;
                y(1, c) = std::nan("");
                CHECK(predict_mortality(m, y) == doctest::Approx(oracle::posterior(m, y)).epsilon(1e-9));
                break;
            }
    }
}

TEST_CASE("forward_predict errors") {
    const auto m = two_gaussians(0, 1, 1, 0.5);
    CHECK_THROWS_AS(forward_predict(m, one(0), -1), DomainError);
    CHECK_THROWS_AS(forward_predict(m, Evidence(0, 1), 1), DomainError);
}

TEST_CASE("model JSON round-trip is exact") {
    std::mt19937_64 rng(1);
    const auto t = NetworkTemplate::from_json(oracle::random_template_json(rng));
    const auto m = oracle::random_model(t, rng);
    const auto back = TrainedDBN::from_json(json::parse(m.to_json().dump()));
    CHECK(back.class_prior == m.class_prior);
    for (auto n : t.slice_nodes())
        for (int tie = 0; tie < 2; ++tie) {
            if (t.is_discrete(n)) {
                for (std::size_t k = 0; k < m.discrete[n][tie].rows.size(); ++k)
                    CHECK(back.discrete[n][tie].rows[k][1] == m.discrete[n][tie].rows[k][1]);
                continue;
            }
            for (std::size_t k = 0; k < m.gaussian[n][tie].rows.size(); ++k) {
                const auto &a = m.gaussian[n][tie].rows[k], &b = back.gaussian[n][tie].rows[k];
                CHECK(a.intercept == b.intercept);
                CHECK(a.variance == b.variance);
                CHECK(a.coefficients == b.coefficients);
            }
        }
    const auto x = oracle::random_evidence(t, 2, 0.8, rng);
    CHECK(predict_mortality(back, x) == predict_mortality(m, x));
}
