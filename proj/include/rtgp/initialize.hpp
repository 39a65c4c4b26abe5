#pragma once

// Deterministic warm start shared by the Gibbs sampler and CAVI: a ridge regression of y
// on the basis-projected design X B gives theta, the intercept and a residual variance;
// the remaining scales follow by moments.

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

#include "rtgp/errors.hpp"
#include "rtgp/model.hpp"

namespace rtgp {

struct RidgeStart {
    Eigen::VectorXd theta;
    Eigen::MatrixXd theta_cov;
    double beta0 = 0.0;
    double sigma_eps_sq = 1.0;
};

inline RidgeStart ridge_start(const Dataset& data, const BasisExpansion& basis, double penalty) {
    detail::require(penalty > 0.0, "ridge_start: penalty must be positive");
    const Eigen::Index n = data.subjects();
    const Eigen::Index l = basis.size();
    RidgeStart out;
    if (n == 0) {
        out.theta = Eigen::VectorXd::Zero(l);
        out.theta_cov = Eigen::MatrixXd::Identity(l, l);
        return out;
    }
    Eigen::MatrixXd z = data.x * basis.basis;
    const Eigen::RowVectorXd zbar = z.colwise().mean();
    const double ybar = data.y.mean();
    z.rowwise() -= zbar;
    const Eigen::VectorXd yc = data.y.array() - ybar;
    Eigen::MatrixXd a = z.transpose() * z;
    a.diagonal().array() += penalty;
    Eigen::LLT<Eigen::MatrixXd> llt(a);
    if (llt.info() != Eigen::Success) throw NumericalError("ridge_start: normal equations not positive definite");
    out.theta = llt.solve(z.transpose() * yc);
    out.beta0 = ybar - zbar.dot(out.theta);
    const double rss = (yc - z * out.theta).squaredNorm();
    const double floor = 1e-6 * std::max(yc.squaredNorm() / n, 1e-12);
    out.sigma_eps_sq = std::max(rss / n, floor);
    out.theta_cov = out.sigma_eps_sq * llt.solve(Eigen::MatrixXd::Identity(l, l));
    return out;
}

/// Full-parameter starting point for the sampler, built from the ridge start.
inline ModelState initial_state(const Dataset& data, const BasisExpansion& basis, const Hyperparameters& h,
                                double ridge_penalty) {
    const RidgeStart rs = ridge_start(data, basis, ridge_penalty);
    const auto grid = threshold_grid(h);
    ModelState s;
    s.theta = rs.theta;
    s.alpha = field_from_coeffs(basis, rs.theta);
    s.beta0 = rs.beta0;
    s.delta = grid[grid.size() / 2];
    s.sigma_eps_sq = rs.sigma_eps_sq;
    s.sigma_beta_sq = std::max(rs.theta.squaredNorm() / static_cast<double>(rs.theta.size()), 1e-6);
    const double field_var = (s.alpha.array() - s.alpha.mean()).square().mean();
    s.sigma_alpha_sq = std::max(field_var, 1e-6);
    auto aux = [](double var, double scale) { return 1.0 / (1.0 / (scale * scale) + 1.0 / var); };
    s.a_eps = aux(s.sigma_eps_sq, h.s_eps);
    s.a_beta = aux(s.sigma_beta_sq, h.s_beta);
    s.a_alpha = aux(s.sigma_alpha_sq, h.s_alpha);
    return s;
}

}  // namespace rtgp
