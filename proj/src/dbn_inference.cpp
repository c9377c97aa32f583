#include <cmath>

#include "dbn_internal.hpp"

namespace trd {

namespace detail {

void check_evidence(const NetworkTemplate& tmpl, const Evidence& x) {
    if (x.rows() < 1) throw ValidationError("evidence needs at least one slice");
    if (static_cast<std::size_t>(x.cols()) != tmpl.slice_size())
        throw ValidationError("evidence has " + std::to_string(x.cols()) + " columns, template has " +
                              std::to_string(tmpl.slice_size()) + " slice nodes");
    for (Eigen::Index t = 0; t < x.rows(); ++t)
        for (Eigen::Index c = 0; c < x.cols(); ++c)
            if (std::isinf(x(t, c)))
                throw ValidationError("non-finite evidence for '" + tmpl.nodes[tmpl.slice_nodes()[c]].name + "'");
}

// With A = I - B and residual r = A x - b, the joint density is N(r; 0, diag(D)) and the
// hidden block has precision A_h' D^-1 A_h. The marginal of the observed block follows from
// evaluating the joint at the hidden posterior mode and adding the Gaussian volume term.
Conditioned condition(const GaussianSystem& sys, const Eigen::VectorXd& values, bool want_cov) {
    const Eigen::Index n = values.size();
    Conditioned out;
    out.mean = values;
    std::vector<Eigen::Index> observed;
    for (Eigen::Index i = 0; i < n; ++i) (std::isnan(values(i)) ? out.hidden : observed).push_back(i);

    const Eigen::MatrixXd A = Eigen::MatrixXd::Identity(n, n) - sys.B;
    const Eigen::VectorXd inv_sd = sys.D.cwiseSqrt().cwiseInverse();
    double volume = 0;
    if (!out.hidden.empty()) {
        const auto h = static_cast<Eigen::Index>(out.hidden.size());
        const Eigen::MatrixXd Ah = inv_sd.asDiagonal() * A(Eigen::all, out.hidden);
        Eigen::VectorXd base = sys.b;
        if (!observed.empty()) base.noalias() -= A(Eigen::all, observed) * values(observed);
        base = inv_sd.asDiagonal() * base;
        const Eigen::MatrixXd precision = Ah.transpose() * Ah;
        const Eigen::LLT<Eigen::MatrixXd> llt(precision);
        if (llt.info() != Eigen::Success) {
            const Eigen::VectorXd ev = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(precision).eigenvalues();
            throw NumericalError("singular conditional covariance: precision eigenvalues in [" +
                                 format_compact(ev.minCoeff()) + ", " + format_compact(ev.maxCoeff()) +
                                 "], variances in [" + format_compact(sys.D.minCoeff()) + ", " +
                                 format_compact(sys.D.maxCoeff()) + "]");
        }
        const Eigen::VectorXd mh = llt.solve(Ah.transpose() * base);
        out.mean(out.hidden) = mh;
        const Eigen::VectorXd diag = llt.matrixL().toDenseMatrix().diagonal();
        volume = 0.5 * static_cast<double>(h) * kLog2Pi - diag.array().log().sum();
        if (want_cov) out.hidden_cov = llt.solve(Eigen::MatrixXd::Identity(h, h));
    }
    const Eigen::VectorXd r = (A * out.mean - sys.b).cwiseProduct(inv_sd);
    out.loglik = -0.5 * (static_cast<double>(n) * kLog2Pi + sys.D.array().log().sum() + r.squaredNorm()) + volume;
    return out;
}

}  // namespace detail

using detail::tie_of;

double class_conditional_loglik(const TrainedDBN& model, const Evidence& x, int class_value) {
    detail::check_evidence(model.tmpl, x);
    const auto& tmpl = model.tmpl;
    const auto net = unroll(tmpl, static_cast<int>(x.rows()));
    const std::size_t N = net.nodes.size();

    // Barren-node pruning: keep observed nodes and their ancestors only.
    std::vector<char> keep(N, 0);
    for (std::size_t i = N; i-- > 1;) {
        const auto& u = net.nodes[i];
        if (!std::isnan(x(u.slice, u.column))) keep[i] = 1;
        if (!keep[i]) continue;
        for (auto p : u.discrete_parents) keep[p] = 1;
        for (auto p : u.continuous_parents) keep[p] = 1;
    }

    double ll = 0;
    std::vector<std::size_t> subset;
    Eigen::VectorXd values;
    std::vector<double> vals;
    for (std::size_t i = 1; i < N; ++i) {
        if (!keep[i]) continue;
        const auto& u = net.nodes[i];
        const double v = x(u.slice, u.column);
        if (tmpl.is_discrete(u.node)) {
            if (std::isnan(v))
                throw ValidationError("discrete node '" + tmpl.nodes[u.node].name + "' at slice " +
                                      std::to_string(u.slice) + " is unobserved but has observed descendants");
            if (v != 0.0 && v != 1.0)
                throw ValidationError("discrete node '" + tmpl.nodes[u.node].name + "' must be 0 or 1");
            const auto k = discrete_config(net, u, x, class_value);
            ll += std::log(model.discrete[u.node][tie_of(u)].rows[k][static_cast<int>(v)]);
        } else {
            subset.push_back(i);
            vals.push_back(v);
        }
    }
    if (subset.empty()) return ll;
    const auto sys = gaussian_system(model, net, x, class_value, &subset);
    values = Eigen::Map<const Eigen::VectorXd>(vals.data(), static_cast<Eigen::Index>(vals.size()));
    return ll + detail::condition(sys, values, false).loglik;
}

std::array<double, 2> class_posterior(const TrainedDBN& model, const Evidence& x) {
    const double l0 = std::log1p(-model.class_prior) + class_conditional_loglik(model, x, 0);
    const double l1 = std::log(model.class_prior) + class_conditional_loglik(model, x, 1);
    const double m = std::max(l0, l1);
    const double e0 = std::exp(l0 - m), e1 = std::exp(l1 - m);
    const double z = e0 + e1;
    return {e0 / z, e1 / z};
}

double predict_mortality(const TrainedDBN& model, const Evidence& x) { return class_posterior(model, x)[1]; }

double forward_predict(const TrainedDBN& model, const Evidence& x, int lookahead) {
    if (x.rows() < 1) throw DomainError("forward_predict needs at least one observed slice");
    if (lookahead < 0) throw DomainError("lookahead must be non-negative");
    Evidence full = empty_evidence(model.tmpl, static_cast<int>(x.rows()) + lookahead);
    full.topRows(x.rows()) = x;
    return predict_mortality(model, full);
}

}  // namespace trd
