#pragma once

#include <cmath>

#include <Eigen/Dense>

#include "rtgp/errors.hpp"

namespace rtgp {

// All three use the strict inequality |.| > delta; the boundary maps to zero.

inline double hard_threshold(double x, double delta) { return std::abs(x) > delta ? x : 0.0; }

inline double soft_threshold(double x, double delta) {
    if (!(std::abs(x) > delta)) return 0.0;
    return std::copysign(std::abs(x) - delta, x);
}

/// Keep x when the latent exceeds the threshold in magnitude.
inline double relaxed_threshold(double x, double x_latent, double delta) {
    return std::abs(x_latent) > delta ? x : 0.0;
}

inline Eigen::VectorXd apply_relaxed_field(const Eigen::VectorXd& beta_tilde, const Eigen::VectorXd& alpha,
                                           double delta) {
    detail::require(beta_tilde.size() == alpha.size(), "apply_relaxed_field: length mismatch");
    Eigen::VectorXd out(beta_tilde.size());
    for (Eigen::Index j = 0; j < out.size(); ++j) out[j] = relaxed_threshold(beta_tilde[j], alpha[j], delta);
    return out;
}

}  // namespace rtgp
