#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "dbn_internal.hpp"

namespace trd {

using nlohmann::json;

namespace {

using detail::kLog2Pi;
using detail::tie_of;

double observed_discrete(const Evidence& x, const UnrolledNetwork& net, std::size_t i, int class_value,
                         const NetworkTemplate& tmpl) {
    if (i == 0) return class_value;
    const auto& u = net.nodes[i];
    const double v = x(u.slice, u.column);
    if (std::isnan(v))
        throw ValidationError("discrete node '" + tmpl.nodes[u.node].name + "' unobserved at slice " +
                              std::to_string(u.slice));
    if (v != 0.0 && v != 1.0)
        throw ValidationError("discrete node '" + tmpl.nodes[u.node].name + "' must be 0 or 1, got " +
                              format_double(v));
    return v;
}

}  // namespace

Evidence empty_evidence(const NetworkTemplate& tmpl, int horizon) {
    return Evidence::Constant(horizon, tmpl.slice_size(), std::numeric_limits<double>::quiet_NaN());
}

std::size_t discrete_config(const UnrolledNetwork& net, const UnrolledNode& node, const Evidence& x,
                            int class_value) {
    std::size_t k = 0;
    for (std::size_t b = 0; b < node.discrete_parents.size(); ++b) {
        const auto p = node.discrete_parents[b];
        int v = class_value;
        if (p != 0) {
            const double d = x(net.nodes[p].slice, net.nodes[p].column);
            if (std::isnan(d)) throw ValidationError("unobserved discrete parent at slice " +
                                                     std::to_string(net.nodes[p].slice));
            v = d != 0.0;
        }
        k |= static_cast<std::size_t>(v) << b;
    }
    return k;
}

GaussianSystem gaussian_system(const TrainedDBN& model, const UnrolledNetwork& net, const Evidence& x,
                               int class_value, const std::vector<std::size_t>* subset) {
    GaussianSystem sys;
    if (subset) {
        sys.nodes = *subset;
    } else {
        for (std::size_t i = 1; i < net.nodes.size(); ++i)
            if (net.is_continuous(i, model.tmpl)) sys.nodes.push_back(i);
    }
    const auto n = static_cast<Eigen::Index>(sys.nodes.size());
    std::vector<Eigen::Index> pos(net.nodes.size(), -1);
    for (Eigen::Index k = 0; k < n; ++k) pos[sys.nodes[k]] = k;
    sys.b.resize(n);
    sys.B = Eigen::MatrixXd::Zero(n, n);
    sys.D.resize(n);
    for (Eigen::Index k = 0; k < n; ++k) {
        const auto& u = net.nodes[sys.nodes[k]];
        const auto& row = model.gaussian[u.node][tie_of(u)].rows[discrete_config(net, u, x, class_value)];
        sys.b(k) = row.intercept;
        sys.D(k) = row.variance;
        for (std::size_t p = 0; p < u.continuous_parents.size(); ++p) {
            const auto j = pos[u.continuous_parents[p]];
            if (j < 0) throw std::logic_error("gaussian_system: subset not closed under parents");
            sys.B(k, j) = row.coefficients(p);
        }
    }
    return sys;
}

double joint_log_density(const TrainedDBN& model, const Evidence& x, int class_value) {
    const auto net = unroll(model.tmpl, static_cast<int>(x.rows()));
    double ll = std::log(class_value ? model.class_prior : 1 - model.class_prior);
    for (std::size_t i = 1; i < net.nodes.size(); ++i) {
        const auto& u = net.nodes[i];
        const auto k = discrete_config(net, u, x, class_value);
        if (model.tmpl.is_discrete(u.node)) {
            const int v = static_cast<int>(observed_discrete(x, net, i, class_value, model.tmpl));
            ll += std::log(model.discrete[u.node][tie_of(u)].rows[k][v]);
            continue;
        }
        const auto& row = model.gaussian[u.node][tie_of(u)].rows[k];
        double mean = row.intercept;
        for (std::size_t p = 0; p < u.continuous_parents.size(); ++p) {
            const auto& pu = net.nodes[u.continuous_parents[p]];
            mean += row.coefficients(p) * x(pu.slice, pu.column);
        }
        const double v = x(u.slice, u.column);
        if (std::isnan(v) || std::isnan(mean))
            throw ValidationError("joint_log_density needs a fully observed assignment");
        ll += -0.5 * (kLog2Pi + std::log(row.variance)) - 0.5 * (v - mean) * (v - mean) / row.variance;
    }
    return ll;
}

json TrainedDBN::to_json() const {
    json j;
    j["format"] = "trd-dbn/1";
    j["template"] = tmpl.to_json();
    j["class_prior"] = class_prior;
    json cpds = json::array();
    for (auto n : tmpl.slice_nodes()) {
        json c{{"node", tmpl.nodes[n].name}};
        for (int tie = 0; tie < 2; ++tie) {
            json t;
            if (tmpl.is_discrete(n)) {
                json p = json::array();
                for (const auto& r : discrete[n][tie].rows) p.push_back(r[1]);
                t["p_true"] = p;
            } else {
                json rows = json::array();
                for (const auto& r : gaussian[n][tie].rows) {
                    json coef = json::array();
                    for (Eigen::Index i = 0; i < r.coefficients.size(); ++i) coef.push_back(r.coefficients(i));
                    rows.push_back({{"intercept", r.intercept}, {"coefficients", coef}, {"variance", r.variance}});
                }
                t["rows"] = rows;
            }
            c[tie == kInitial ? "initial" : "transition"] = t;
        }
        cpds.push_back(c);
    }
    j["cpds"] = cpds;
    j["training"] = {{"iterations", info.iterations},
                     {"log_likelihood", info.log_likelihood},
                     {"log_likelihood_trace", info.log_likelihood_trace},
                     {"seed", info.seed},
                     {"converged", info.converged},
                     {"warnings", info.warnings}};
    return j;
}

TrainedDBN TrainedDBN::from_json(const json& j) {
    TrainedDBN m;
    try {
        if (j.at("format").get<std::string>() != "trd-dbn/1")
            throw ParseError("unsupported model format '" + j.at("format").get<std::string>() + "'");
        m.tmpl = NetworkTemplate::from_json(j.at("template"));
        m.class_prior = j.at("class_prior").get<double>();
        if (!(m.class_prior > 0 && m.class_prior < 1)) throw ValidationError("class prior must lie in (0, 1)");
        m.gaussian.assign(m.tmpl.nodes.size(), {});
        m.discrete.assign(m.tmpl.nodes.size(), {});
        for (const auto& c : j.at("cpds")) {
            const auto n = m.tmpl.index(c.at("node").get<std::string>());
            for (int tie = 0; tie < 2; ++tie) {
                const auto& t = c.at(tie == kInitial ? "initial" : "transition");
                const Family& f = m.tmpl.family(n, static_cast<Tie>(tie));
                if (m.tmpl.is_discrete(n)) {
                    for (double p : t.at("p_true")) {
                        if (!(p >= 0 && p <= 1)) throw ValidationError("probability out of range");
                        m.discrete[n][tie].rows.push_back({1 - p, p});
                    }
                    if (m.discrete[n][tie].rows.size() != f.n_configs())
                        throw ValidationError("wrong CPT size for '" + m.tmpl.nodes[n].name + "'");
                } else {
                    for (const auto& r : t.at("rows")) {
                        LinearGaussianCPD::Row row;
                        row.intercept = r.at("intercept").get<double>();
                        row.variance = r.at("variance").get<double>();
                        const auto coef = r.at("coefficients").get<std::vector<double>>();
                        row.coefficients = Eigen::Map<const Eigen::VectorXd>(coef.data(), coef.size());
                        if (!(row.variance > 0)) throw ValidationError("variance must be positive");
                        if (coef.size() != f.continuous.size())
                            throw ValidationError("wrong coefficient count for '" + m.tmpl.nodes[n].name + "'");
                        m.gaussian[n][tie].rows.push_back(std::move(row));
                    }
                    if (m.gaussian[n][tie].rows.size() != f.n_configs())
                        throw ValidationError("wrong row count for '" + m.tmpl.nodes[n].name + "'");
                }
            }
        }
        for (auto n : m.tmpl.slice_nodes())
            if (m.gaussian[n][0].rows.empty() && m.discrete[n][0].rows.empty())
                throw ValidationError("missing parameters for '" + m.tmpl.nodes[n].name + "'");
        if (j.contains("training")) {
            const auto& t = j.at("training");
            m.info.iterations = t.value("iterations", 0);
            m.info.log_likelihood = t.value("log_likelihood", 0.0);
            m.info.log_likelihood_trace = t.value("log_likelihood_trace", std::vector<double>{});
            m.info.seed = t.value("seed", std::uint64_t{0});
            m.info.converged = t.value("converged", true);
            m.info.warnings = t.value("warnings", std::vector<std::string>{});
        }
    } catch (const json::exception& e) {
        throw ParseError(std::string("model: ") + e.what());
    }
    return m;
}

void TrainedDBN::save(const std::filesystem::path& path) const { write_file_atomic(path, to_json().dump(1) + "\n"); }

TrainedDBN TrainedDBN::load(const std::filesystem::path& path) {
    json j;
    try {
        j = json::parse(read_text_file(path));
    } catch (const json::parse_error& e) {
        throw ParseError("model '" + path.string() + "': " + e.what());
    }
    return from_json(j);
}

TrainingSet sample(const TrainedDBN& model, int horizon, std::size_t n, std::uint64_t seed) {
    const auto net = unroll(model.tmpl, horizon);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);
    TrainingSet out;
    out.evidence.reserve(n);
    out.labels.reserve(n);
    for (std::size_t s = 0; s < n; ++s) {
        const int c = unif(rng) < model.class_prior;
        Evidence x = empty_evidence(model.tmpl, horizon);
        for (std::size_t i = 1; i < net.nodes.size(); ++i) {
            const auto& u = net.nodes[i];
            const auto k = discrete_config(net, u, x, c);
            if (model.tmpl.is_discrete(u.node)) {
                x(u.slice, u.column) = unif(rng) < model.discrete[u.node][tie_of(u)].rows[k][1] ? 1.0 : 0.0;
                continue;
            }
            const auto& row = model.gaussian[u.node][tie_of(u)].rows[k];
            double mean = row.intercept;
            for (std::size_t p = 0; p < u.continuous_parents.size(); ++p) {
                const auto& pu = net.nodes[u.continuous_parents[p]];
                mean += row.coefficients(p) * x(pu.slice, pu.column);
            }
            x(u.slice, u.column) = mean + std::sqrt(row.variance) * gauss(rng);
        }
        out.evidence.push_back(std::move(x));
        out.labels.push_back(c);
    }
    return out;
}

}  // namespace trd
