#pragma once

// Leading eigenpairs of a symmetric positive-semidefinite operator. The dense path wraps
// Eigen's tridiagonal QR; the iterative path is block subspace iteration with a
// Rayleigh-Ritz projection each step, so only products with the operator are needed.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>

#include <Eigen/Dense>

#include "rtgp/errors.hpp"

namespace rtgp {

struct Eigenpairs {
    Eigen::VectorXd values;   ///< descending
    Eigen::MatrixXd vectors;  ///< orthonormal columns, sign-normalized
    int iterations = 0;
    double max_residual = 0.0;
};

/// Flip each column so its largest-magnitude entry is positive (lowest index wins ties).
inline void normalize_signs(Eigen::MatrixXd& vecs) {
    for (Eigen::Index c = 0; c < vecs.cols(); ++c) {
        Eigen::Index best = 0;
        double mag = -1.0;
        for (Eigen::Index r = 0; r < vecs.rows(); ++r) {
            const double a = std::abs(vecs(r, c));
            if (a > mag) {
                mag = a;
                best = r;
            }
        }
        if (vecs(best, c) < 0.0) vecs.col(c) = -vecs.col(c);
    }
}

/// Full spectrum of a dense symmetric matrix, sorted descending.
inline Eigenpairs dense_eigenpairs(const Eigen::MatrixXd& k) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(k);
    if (es.info() != Eigen::Success) throw NumericalError("dense eigensolver did not converge");
    Eigenpairs out;
    out.values = es.eigenvalues().reverse();
    out.vectors = es.eigenvectors().rowwise().reverse();
    normalize_signs(out.vectors);
    return out;
}

struct SubspaceOptions {
    Eigen::Index oversample = 16;
    int max_iter = 3000;
    double tol = 1e-11;  ///< residual ||Kv - lambda v|| relative to lambda_1
    std::uint64_t seed = 0x5eed;
};

/// Top-`count` eigenpairs of the operator `apply(V, out)` computing out = K V for an
/// n x b block V.
template <class ApplyOp>
Eigenpairs subspace_eigenpairs(ApplyOp&& apply, Eigen::Index n, Eigen::Index count,
                               const SubspaceOptions& opt = {}) {
    using Eigen::MatrixXd;
    detail::require(count >= 1 && count <= n, "subspace_eigenpairs: invalid eigenpair count");
    const Eigen::Index b = std::min<Eigen::Index>(n, count + opt.oversample);

    std::mt19937_64 rng(opt.seed);
    std::normal_distribution<double> normal;
    MatrixXd v(n, b);
    for (Eigen::Index c = 0; c < b; ++c)
        for (Eigen::Index r = 0; r < n; ++r) v(r, c) = normal(rng);
    auto orthonormalize = [&](const MatrixXd& m) {
        Eigen::HouseholderQR<MatrixXd> qr(m);
        return MatrixXd(qr.householderQ() * MatrixXd::Identity(n, b));
    };
    v = orthonormalize(v);

    MatrixXd w(n, b);
    Eigenpairs out;
    for (int it = 1; it <= opt.max_iter; ++it) {
        apply(v, w);
        MatrixXd h = v.transpose() * w;
        h = 0.5 * (h + h.transpose()).eval();
        Eigen::SelfAdjointEigenSolver<MatrixXd> es(h);
        const Eigen::VectorXd theta = es.eigenvalues().reverse();
        const MatrixXd s = es.eigenvectors().rowwise().reverse();
        MatrixXd ritz = v * s;
        MatrixXd kritz = w * s;

        double worst = 0.0;
        for (Eigen::Index c = 0; c < count; ++c)
            worst = std::max(worst, (kritz.col(c) - theta[c] * ritz.col(c)).norm());
        const double scale = std::max(std::abs(theta[0]), 1e-300);
        out.iterations = it;
        out.max_residual = worst / scale;
        if (worst <= opt.tol * scale || it == opt.max_iter) {
            out.values = theta.head(count);
            out.vectors = ritz.leftCols(count);
            normalize_signs(out.vectors);
            if (worst > opt.tol * scale)
                throw NumericalError("subspace iteration did not converge: relative residual " +
                                     std::to_string(out.max_residual));
            return out;
        }
        v = orthonormalize(kritz);
    }
    return out;
}

}  // namespace rtgp
