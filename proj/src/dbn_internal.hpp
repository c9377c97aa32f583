#pragma once

#include "trd/dbn.hpp"

namespace trd::detail {

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;

inline Tie tie_of(const UnrolledNode& u) { return u.slice == 0 ? kInitial : kTransition; }

/// Result of conditioning a linear-Gaussian system on its observed entries.
struct Conditioned {
    double loglik = 0;                 // log density of the observed entries
    Eigen::VectorXd mean;              // observed values, hidden posterior means
    std::vector<Eigen::Index> hidden;  // positions of hidden entries
    Eigen::MatrixXd hidden_cov;        // posterior covariance over `hidden` (when requested)
};

/// `values` holds NaN for hidden entries.
Conditioned condition(const GaussianSystem& sys, const Eigen::VectorXd& values, bool want_cov);

/// Throws ValidationError when `x` has the wrong width or a non-finite observed value.
void check_evidence(const NetworkTemplate& tmpl, const Evidence& x);

}  // namespace trd::detail
