#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <thread>

#include "dbn_internal.hpp"

namespace trd {

using detail::tie_of;

namespace {

constexpr std::size_t kChunks = 16;

/// Expected sufficient statistics. A Gaussian family keeps E[z z'] with z = (1, parents, child).
struct Stats {
    std::vector<std::array<std::vector<Eigen::MatrixXd>, 2>> gauss;
    std::vector<std::array<std::vector<std::array<double, 2>>, 2>> disc;
    double loglik = 0;

    explicit Stats(const NetworkTemplate& tmpl) : gauss(tmpl.nodes.size()), disc(tmpl.nodes.size()) {
        for (auto n : tmpl.slice_nodes()) {
            for (int tie = 0; tie < 2; ++tie) {
                const Family& f = tmpl.family(n, static_cast<Tie>(tie));
                if (tmpl.is_discrete(n)) {
                    disc[n][tie].assign(f.n_configs(), {0.0, 0.0});
                } else {
                    const auto q = static_cast<Eigen::Index>(f.continuous.size() + 2);
                    gauss[n][tie].assign(f.n_configs(), Eigen::MatrixXd::Zero(q, q));
                }
            }
        }
    }

    void add(const Stats& o) {
        for (std::size_t n = 0; n < gauss.size(); ++n)
            for (int tie = 0; tie < 2; ++tie) {
                for (std::size_t k = 0; k < gauss[n][tie].size(); ++k) gauss[n][tie][k] += o.gauss[n][tie][k];
                for (std::size_t k = 0; k < disc[n][tie].size(); ++k) {
                    disc[n][tie][k][0] += o.disc[n][tie][k][0];
                    disc[n][tie][k][1] += o.disc[n][tie][k][1];
                }
            }
        loglik += o.loglik;
    }
};

void check_training_set(const NetworkTemplate& tmpl, const TrainingSet& data) {
    if (data.evidence.size() != data.labels.size()) throw ValidationError("evidence and labels differ in length");
    if (data.labels.empty()) throw ValidationError("empty training set");
    for (std::size_t s = 0; s < data.size(); ++s) {
        if (data.labels[s] != 0 && data.labels[s] != 1)
            throw ValidationError("class labels must be 0 or 1 (series " + std::to_string(s) + ")");
        detail::check_evidence(tmpl, data.evidence[s]);
    }
}

using NetCache = std::map<int, UnrolledNetwork>;

NetCache unroll_all(const NetworkTemplate& tmpl, const TrainingSet& data) {
    NetCache nets;
    for (const auto& x : data.evidence) {
        const int T = static_cast<int>(x.rows());
        if (!nets.count(T)) nets.emplace(T, unroll(tmpl, T));
    }
    return nets;
}

void accumulate_series(const TrainedDBN& model, const UnrolledNetwork& net, const Evidence& x, int c, Stats& st) {
    const auto& tmpl = model.tmpl;
    st.loglik += std::log(c ? model.class_prior : 1 - model.class_prior);
    for (std::size_t i = 1; i < net.nodes.size(); ++i) {
        const auto& u = net.nodes[i];
        if (!tmpl.is_discrete(u.node)) continue;
        const double v = x(u.slice, u.column);
        if (std::isnan(v))
            throw ValidationError("discrete node '" + tmpl.nodes[u.node].name +
                                  "' must be observed in training data");
        if (v != 0.0 && v != 1.0)
            throw ValidationError("discrete node '" + tmpl.nodes[u.node].name + "' must be 0 or 1");
        const auto k = discrete_config(net, u, x, c);
        const int b = static_cast<int>(v);
        st.disc[u.node][tie_of(u)][k][b] += 1;
        st.loglik += std::log(model.discrete[u.node][tie_of(u)].rows[k][b]);
    }

    const auto sys = gaussian_system(model, net, x, c);
    const auto n = static_cast<Eigen::Index>(sys.nodes.size());
    if (n == 0) return;
    Eigen::VectorXd values(n);
    std::vector<Eigen::Index> pos(net.nodes.size(), -1);
    for (Eigen::Index k = 0; k < n; ++k) {
        const auto& u = net.nodes[sys.nodes[k]];
        values(k) = x(u.slice, u.column);
        pos[sys.nodes[k]] = k;
    }
    const auto cond = detail::condition(sys, values, true);
    st.loglik += cond.loglik;
    std::vector<Eigen::Index> hpos(n, -1);
    for (std::size_t h = 0; h < cond.hidden.size(); ++h) hpos[cond.hidden[h]] = static_cast<Eigen::Index>(h);

    for (Eigen::Index k = 0; k < n; ++k) {
        const auto& u = net.nodes[sys.nodes[k]];
        std::vector<Eigen::Index> idx;  // positions in the system; -1 is the constant
        idx.push_back(-1);
        for (auto p : u.continuous_parents) idx.push_back(pos[p]);
        idx.push_back(k);
        const auto q = static_cast<Eigen::Index>(idx.size());
        Eigen::VectorXd m(q);
        for (Eigen::Index a = 0; a < q; ++a) m(a) = idx[a] < 0 ? 1.0 : cond.mean(idx[a]);
        Eigen::MatrixXd& S = st.gauss[u.node][tie_of(u)][discrete_config(net, u, x, c)];
        S.noalias() += m * m.transpose();
        for (Eigen::Index a = 1; a < q; ++a) {
            const auto ha = hpos[idx[a]];
            if (ha < 0) continue;
            for (Eigen::Index b = 1; b < q; ++b) {
                const auto hb = hpos[idx[b]];
                if (hb >= 0) S(a, b) += cond.hidden_cov(ha, hb);
            }
        }
    }
}

Stats e_step(const TrainedDBN& model, const NetCache& nets, const TrainingSet& data, int threads) {
    const std::size_t n = data.size();
    const std::size_t chunks = std::min(kChunks, n);
    std::vector<Stats> partial(chunks, Stats(model.tmpl));
    std::vector<std::exception_ptr> errors(chunks);
    auto run = [&](std::size_t ch) {
        try {
            const std::size_t lo = n * ch / chunks, hi = n * (ch + 1) / chunks;
            for (std::size_t s = lo; s < hi; ++s) {
                const auto& x = data.evidence[s];
                accumulate_series(model, nets.at(static_cast<int>(x.rows())), x, data.labels[s], partial[ch]);
            }
        } catch (...) {
            errors[ch] = std::current_exception();
        }
    };
    const auto workers = static_cast<std::size_t>(std::max(1, threads));
    if (workers == 1) {
        for (std::size_t ch = 0; ch < chunks; ++ch) run(ch);
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w)
            pool.emplace_back([&, w] {
                for (std::size_t ch = w; ch < chunks; ch += workers) run(ch);
            });
        for (auto& t : pool) t.join();
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    Stats total(model.tmpl);
    for (const auto& p : partial) total.add(p);  // fixed order keeps sums reproducible
    return total;
}

LinearGaussianCPD::Row regress(const Eigen::MatrixXd& S, const std::string& node, std::set<std::string>& warnings,
                               bool& ok) {
    const Eigen::Index q = S.rows();
    const Eigen::Index p1 = q - 1;  // intercept + parents
    LinearGaussianCPD::Row row;
    const double count = S(0, 0);
    ok = false;
    if (count < static_cast<double>(p1) || count <= 0) return row;
    const Eigen::MatrixXd Szz = S.topLeftCorner(p1, p1);
    const Eigen::VectorXd Szy = S.col(q - 1).head(p1);
    const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Szz);
    if (qr.rank() < p1) return row;
    const Eigen::VectorXd beta = qr.solve(Szy);
    row.intercept = beta(0);
    row.coefficients = beta.tail(p1 - 1);
    double var = (S(q - 1, q - 1) - beta.dot(Szy)) / count;
    if (!(var >= kVarianceFloor)) {
        warnings.insert("variance of '" + node + "' floored at 1e-8");
        var = kVarianceFloor;
    }
    row.variance = var;
    ok = true;
    return row;
}

void m_step(TrainedDBN& model, const Stats& st, std::set<std::string>& warnings) {
    const auto& tmpl = model.tmpl;
    for (auto n : tmpl.slice_nodes()) {
        const std::string& name = tmpl.nodes[n].name;
        for (int tie = 0; tie < 2; ++tie) {
            if (tmpl.is_discrete(n)) {
                auto& rows = model.discrete[n][tie].rows;
                rows.clear();
                for (const auto& c : st.disc[n][tie]) {
                    const double p = (c[1] + 1.0) / (c[0] + c[1] + 2.0);
                    rows.push_back({1 - p, p});
                }
                continue;
            }
            const auto& S = st.gauss[n][tie];
            auto& rows = model.gaussian[n][tie].rows;
            rows.assign(S.size(), {});
            std::optional<LinearGaussianCPD::Row> pooled;
            for (std::size_t k = 0; k < S.size(); ++k) {
                bool ok = false;
                rows[k] = regress(S[k], name, warnings, ok);
                if (ok) continue;
                if (!pooled) {
                    Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(S[k].rows(), S[k].cols());
                    for (const auto& s : S) sum += s;
                    pooled = regress(sum, name, warnings, ok);
                    if (!ok)
                        throw NumericalError("rank-deficient regression for node '" + name + "' (" +
                                             (tie == kInitial ? "initial" : "transition") + " slice): " +
                                             format_compact(sum(0, 0)) + " rows for " +
                                             std::to_string(sum.rows() - 1) + " coefficients");
                }
                warnings.insert("node '" + name + "' configuration " + std::to_string(k) + " (" +
                                (tie == kInitial ? "initial" : "transition") +
                                ") has too few rows; pooled across configurations");
                rows[k] = *pooled;
            }
        }
    }
}

TrainedDBN initial_model(const NetworkTemplate& tmpl, const TrainingSet& data, std::optional<double> prior) {
    TrainedDBN m;
    m.tmpl = tmpl;
    m.gaussian.assign(tmpl.nodes.size(), {});
    m.discrete.assign(tmpl.nodes.size(), {});
    double n1 = 0;
    for (int y : data.labels) n1 += y;
    const double n = static_cast<double>(data.size());
    m.class_prior = prior ? *prior : n1 / n;
    if (!(m.class_prior > 0 && m.class_prior < 1))
        throw ValidationError("class prior must lie in (0, 1); training data needs both classes");

    for (auto node : tmpl.slice_nodes()) {
        const auto c = static_cast<Eigen::Index>(tmpl.column(node));
        double s = 0, ss = 0, cnt = 0;
        for (const auto& x : data.evidence)
            for (Eigen::Index t = 0; t < x.rows(); ++t)
                if (!std::isnan(x(t, c))) {
                    s += x(t, c);
                    ss += x(t, c) * x(t, c);
                    cnt += 1;
                }
        const double mean = cnt > 0 ? s / cnt : 0.0;
        const double var = cnt > 1 ? std::max(ss / cnt - mean * mean, kVarianceFloor) : 1.0;
        for (int tie = 0; tie < 2; ++tie) {
            const Family& f = tmpl.family(node, static_cast<Tie>(tie));
            if (tmpl.is_discrete(node)) {
                const double p = (s + 1) / (cnt + 2);
                m.discrete[node][tie].rows.assign(f.n_configs(), {1 - p, p});
            } else {
                LinearGaussianCPD::Row row;
                row.intercept = mean;
                row.coefficients = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(f.continuous.size()));
                row.variance = var;
                m.gaussian[node][tie].rows.assign(f.n_configs(), row);
            }
        }
    }
    return m;
}

}  // namespace

TrainedDBN mle_complete_data(const NetworkTemplate& tmpl, const TrainingSet& data) {
    check_training_set(tmpl, data);
    for (const auto& x : data.evidence)
        if (x.hasNaN()) throw ValidationError("complete-data fit needs every value observed; use em_fit");
    const auto nets = unroll_all(tmpl, data);
    TrainedDBN model = initial_model(tmpl, data, std::nullopt);
    std::set<std::string> warnings;
    m_step(model, e_step(model, nets, data, 1), warnings);
    model.info.iterations = 1;
    model.info.log_likelihood = e_step(model, nets, data, 1).loglik;
    model.info.log_likelihood_trace = {model.info.log_likelihood};
    model.info.warnings.assign(warnings.begin(), warnings.end());
    return model;
}

TrainedDBN em_fit(const NetworkTemplate& tmpl, const TrainingSet& data, const EmConfig& config) {
    if (config.max_iter < 1) throw ValidationError("max_iter must be at least 1");
    if (!(config.tol >= 0)) throw ValidationError("tol must be non-negative");
    check_training_set(tmpl, data);
    const auto nets = unroll_all(tmpl, data);
    TrainedDBN model = initial_model(tmpl, data, config.class_prior);
    std::set<std::string> warnings;

    Stats st = e_step(model, nets, data, config.threads);
    double ll = st.loglik;
    std::vector<double> trace{ll};
    bool converged = false;
    int it = 0;
    while (it < config.max_iter) {
        ++it;
        TrainedDBN next = model;
        m_step(next, st, warnings);
        Stats next_st = e_step(next, nets, data, config.threads);
        const double next_ll = next_st.loglik;
        trace.push_back(next_ll);
        if (next_ll < ll - 1e-9 * std::max(1.0, std::abs(ll)))
            warnings.insert("log-likelihood decreased at iteration " + std::to_string(it));
        model = std::move(next);
        const double gain = next_ll - ll;
        ll = next_ll;
        st = std::move(next_st);
        if (gain <= config.tol * std::max(1.0, std::abs(ll))) {
            converged = true;
            break;
        }
    }
    if (!converged) warnings.insert("EM did not converge in " + std::to_string(config.max_iter) + " iterations");
    model.info.iterations = it;
    model.info.log_likelihood = ll;
    model.info.log_likelihood_trace = std::move(trace);
    model.info.seed = config.seed;
    model.info.converged = converged;
    model.info.warnings.assign(warnings.begin(), warnings.end());
    return model;
}

}  // namespace trd
