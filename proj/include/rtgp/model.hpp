#pragma once

// Shared model substrate: data, hyperparameters, the parameter state of the hierarchy,
// its log joint density, fitted summaries and prediction.
//
//   y_i | . ~ N(beta0 + sum_j beta_tilde_j I(|alpha_j| > delta) x_ij, sigma_eps^2)
//   beta_tilde = B theta,  theta_l ~ N(0, sigma_beta^2),  alpha_j ~ N(beta_tilde_j, sigma_alpha^2)
//   beta0 ~ N(0, sigma_beta0^2),  delta ~ uniform on an equally spaced grid
//   sigma_*^2 | a_* ~ IG(1/2, 1/a_*),  a_* ~ IG(1/2, 1/s_*^2)   (half-Cauchy(0, s_*) on sigma_*)

#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rtgp/distributions.hpp"
#include "rtgp/errors.hpp"
#include "rtgp/kernel_basis.hpp"
#include "rtgp/threshold.hpp"

namespace rtgp {

/// Outcomes y (N), image design X (N x M) and an optional confounder block (N x P).
/// N = 0 is allowed so that prior-only quantities can be evaluated.
struct Dataset {
    Eigen::VectorXd y;
    Eigen::MatrixXd x;
    std::optional<Eigen::MatrixXd> confounders;

    static Dataset make(Eigen::VectorXd y, Eigen::MatrixXd x, std::optional<Eigen::MatrixXd> confounders = {}) {
        detail::require(y.size() == x.rows(), "Dataset: y has " + std::to_string(y.size()) + " entries but X has " +
                                                  std::to_string(x.rows()) + " rows");
        detail::require(x.cols() >= 1, "Dataset: X needs at least one column");
        detail::require(y.allFinite() && x.allFinite(), "Dataset: non-finite entries");
        if (confounders) {
            detail::require(confounders->rows() == y.size(), "Dataset: confounder row count mismatch");
            detail::require(confounders->allFinite(), "Dataset: non-finite confounder entries");
        }
        return Dataset{std::move(y), std::move(x), std::move(confounders)};
    }

    Eigen::Index subjects() const noexcept { return y.size(); }
    Eigen::Index vertices() const noexcept { return x.cols(); }
};

struct Hyperparameters {
    double sigma_beta0_sq = 100.0;
    double s_beta = 1.0;
    double s_eps = 1.0;
    double s_alpha = 1.0;
    double t_min = 0.0;
    double t_max = 2.0;
    int n_delta = 21;

    void validate() const {
        detail::require(sigma_beta0_sq > 0.0 && s_beta > 0.0 && s_eps > 0.0 && s_alpha > 0.0,
                        "Hyperparameters: scales must be positive");
        detail::require(t_min >= 0.0 && t_min < t_max, "Hyperparameters: need 0 <= t_min < t_max");
        detail::require(n_delta >= 1, "Hyperparameters: n_delta must be >= 1");
    }
};

/// n_delta equally spaced thresholds from t_min to t_max inclusive.
inline std::vector<double> threshold_grid(const Hyperparameters& h) {
    h.validate();
    if (h.n_delta == 1) return {h.t_min};
    std::vector<double> g(static_cast<std::size_t>(h.n_delta));
    const double step = (h.t_max - h.t_min) / (h.n_delta - 1);
    for (int k = 0; k < h.n_delta; ++k) g[k] = h.t_min + step * k;
    g.back() = h.t_max;
    return g;
}

/// One point in the full parameter space.
struct ModelState {
    double beta0 = 0.0;
    Eigen::VectorXd theta;
    Eigen::VectorXd alpha;
    double delta = 0.0;
    double sigma_eps_sq = 1.0;
    double sigma_beta_sq = 1.0;
    double sigma_alpha_sq = 1.0;
    double a_eps = 1.0;
    double a_beta = 1.0;
    double a_alpha = 1.0;
};

/// Thresholded coefficient map beta_tilde * I(|alpha| > delta).
inline Eigen::VectorXd coefficient_map(const ModelState& s, const BasisExpansion& basis) {
    return apply_relaxed_field(field_from_coeffs(basis, s.theta), s.alpha, s.delta);
}

namespace detail {

inline double half_cauchy_mixture_log_density(double var, double aux, double scale) {
    const dist::InverseGamma var_given_aux{0.5, 1.0 / aux};
    const dist::InverseGamma aux_prior{0.5, 1.0 / (scale * scale)};
    return var_given_aux.log_pdf(var) + aux_prior.log_pdf(aux);
}

inline double grid_log_mass(double delta, const std::vector<double>& grid) {
    for (double g : grid)
        if (std::abs(delta - g) <= 1e-12 * (1.0 + std::abs(g))) return -std::log(static_cast<double>(grid.size()));
    return -dist::kInf;
}

}  // namespace detail

inline double log_likelihood(const ModelState& s, const Dataset& data, const BasisExpansion& basis) {
    const Eigen::Index n = data.subjects();
    if (n == 0) return 0.0;
    const Eigen::VectorXd resid = (data.y - data.x * coefficient_map(s, basis)).array() - s.beta0;
    return -0.5 * n * (dist::kLog2Pi + std::log(s.sigma_eps_sq)) - 0.5 * resid.squaredNorm() / s.sigma_eps_sq;
}

/// log p(y, Omega) for the full hierarchy.
inline double log_joint(const ModelState& s, const Dataset& data, const BasisExpansion& basis,
                        const Hyperparameters& h) {
    detail::require(s.sigma_eps_sq > 0.0 && s.sigma_beta_sq > 0.0 && s.sigma_alpha_sq > 0.0 && s.a_eps > 0.0 &&
                        s.a_beta > 0.0 && s.a_alpha > 0.0,
                    "log_joint: variances and auxiliaries must be positive");
    detail::require(s.theta.size() == basis.size() && s.alpha.size() == basis.vertices() &&
                        data.vertices() == basis.vertices(),
                    "log_joint: dimension mismatch between state, data and basis");
    double lp = log_likelihood(s, data, basis);
    for (Eigen::Index l = 0; l < s.theta.size(); ++l) lp += dist::log_normal_pdf(s.theta[l], 0.0, s.sigma_beta_sq);
    lp += dist::log_normal_pdf(s.beta0, 0.0, h.sigma_beta0_sq);
    const Eigen::VectorXd field = field_from_coeffs(basis, s.theta);
    for (Eigen::Index j = 0; j < s.alpha.size(); ++j)
        lp += dist::log_normal_pdf(s.alpha[j], field[j], s.sigma_alpha_sq);
    lp += detail::grid_log_mass(s.delta, threshold_grid(h));
    lp += detail::half_cauchy_mixture_log_density(s.sigma_eps_sq, s.a_eps, h.s_eps);
    lp += detail::half_cauchy_mixture_log_density(s.sigma_beta_sq, s.a_beta, h.s_beta);
    lp += detail::half_cauchy_mixture_log_density(s.sigma_alpha_sq, s.a_alpha, h.s_alpha);
    return lp;
}

/// Posterior summaries from either engine.
struct FitResult {
    std::string engine;  ///< "vi" or "gibbs"
    Eigen::VectorXd beta_tilde_mean;
    Eigen::VectorXd inclusion_prob;
    Eigen::VectorXd beta_map;
    double beta0_mean = 0.0;
    double sigma_eps_sq_mean = 0.0;
    std::vector<double> delta_grid;
    Eigen::VectorXd delta_prob;
    Eigen::VectorXd theta_mean;
    Eigen::MatrixXd theta_cov;
    /// Per vertex: P(alpha < -delta*), P(|alpha| <= delta*), P(alpha > delta*) at the modal threshold.
    Eigen::MatrixXd region_weights;
    double selection_threshold = 0.5;
    std::vector<double> elbo_trace;
    std::size_t chain_samples = 0;
    BasisManifest basis;
    Hyperparameters hyper;

    Eigen::Index vertices() const noexcept { return beta_map.size(); }
};

/// Structural invariants of a fit; used when loading from disk.
inline void validate(const FitResult& f) {
    const Eigen::Index m = f.beta_map.size();
    detail::require(m >= 1, "FitResult: empty coefficient map");
    detail::require(f.beta_tilde_mean.size() == m && f.inclusion_prob.size() == m && f.region_weights.rows() == m &&
                        f.region_weights.cols() == 3,
                    "FitResult: per-vertex arrays disagree in length");
    detail::require(f.beta_map.allFinite() && f.beta_tilde_mean.allFinite() && std::isfinite(f.beta0_mean),
                    "FitResult: non-finite coefficients");
    detail::require(f.sigma_eps_sq_mean > 0.0, "FitResult: noise variance must be positive");
    detail::require(f.selection_threshold >= 0.0 && f.selection_threshold <= 1.0,
                    "FitResult: selection threshold outside [0, 1]");
    for (Eigen::Index j = 0; j < m; ++j) {
        const double p = f.inclusion_prob[j];
        detail::require(p >= 0.0 && p <= 1.0, "FitResult: inclusion probability outside [0, 1] at vertex " +
                                                  std::to_string(j));
        const auto w = f.region_weights.row(j);
        detail::require((w.array() >= 0.0).all() && std::abs(w.sum() - 1.0) <= 1e-12,
                        "FitResult: region weights at vertex " + std::to_string(j) + " do not sum to 1");
        if (p < f.selection_threshold)
            detail::require(f.beta_map[j] == 0.0, "FitResult: nonzero coefficient at an excluded vertex");
    }
    detail::require(static_cast<Eigen::Index>(f.delta_grid.size()) == f.delta_prob.size() && f.delta_prob.size() >= 1,
                    "FitResult: threshold distribution does not match its grid");
    detail::require((f.delta_prob.array() >= 0.0).all() && std::abs(f.delta_prob.sum() - 1.0) <= 1e-9,
                    "FitResult: threshold probabilities do not sum to 1");
    const Eigen::Index l = f.theta_mean.size();
    detail::require(l >= 1 && f.theta_cov.rows() == l && f.theta_cov.cols() == l,
                    "FitResult: coefficient covariance has the wrong shape");
    detail::require((f.theta_cov - f.theta_cov.transpose()).cwiseAbs().maxCoeff() <=
                        1e-10 * (1.0 + f.theta_cov.cwiseAbs().maxCoeff()),
                    "FitResult: coefficient covariance is not symmetric");
    Eigen::LDLT<Eigen::MatrixXd> ldlt(f.theta_cov);
    detail::require(ldlt.info() == Eigen::Success && (ldlt.vectorD().array() >= -1e-12).all(),
                    "FitResult: coefficient covariance is not positive semidefinite");
}

/// y_hat = beta0 + X_new beta_map.
inline Eigen::VectorXd predict(const FitResult& fit, const Eigen::MatrixXd& x_new) {
    detail::require(x_new.cols() == fit.beta_map.size(), "predict: X has " + std::to_string(x_new.cols()) +
                                                             " columns, fit has " +
                                                             std::to_string(fit.beta_map.size()) + " vertices");
    Eigen::VectorXd out = x_new * fit.beta_map;
    out.array() += fit.beta0_mean;
    return out;
}

/// y replaced by OLS residuals on (1, confounders); the coefficients restore the original.
struct ConfounderAdjustment {
    Dataset data;
    Eigen::VectorXd coefficients;  ///< intercept first

    Eigen::VectorXd restore_y(const Eigen::MatrixXd& confounders) const {
        Eigen::MatrixXd design(confounders.rows(), confounders.cols() + 1);
        design << Eigen::VectorXd::Ones(confounders.rows()), confounders;
        return data.y + design * coefficients;
    }
};

inline ConfounderAdjustment residualize_confounders(const Dataset& data) {
    if (!data.confounders) return {data, Eigen::VectorXd()};
    const Eigen::MatrixXd& c = *data.confounders;
    Eigen::MatrixXd design(c.rows(), c.cols() + 1);
    design << Eigen::VectorXd::Ones(c.rows()), c;
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
    qr.setThreshold(1e-10);
    if (qr.rank() < design.cols())
        throw InvalidArgument("residualize_confounders: confounder block is rank deficient (rank " +
                              std::to_string(qr.rank()) + " of " + std::to_string(design.cols()) + ")");
    Eigen::VectorXd coef = qr.solve(data.y);
    Dataset out = data;
    out.y = data.y - design * coef;
    return {std::move(out), std::move(coef)};
}

}  // namespace rtgp
