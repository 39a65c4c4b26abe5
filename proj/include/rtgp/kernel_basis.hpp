#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <variant>

#include <Eigen/Dense>

#include "rtgp/eigensolver.hpp"
#include "rtgp/errors.hpp"
#include "rtgp/geometry.hpp"
#include "rtgp/rng.hpp"

namespace rtgp {

/// Exponential radial basis kernel C(d) = exp(-phi d^nu), phi > 0, 0 < nu <= 2.
struct KernelParams {
    double phi = 1.0;
    double nu = 2.0;

    void validate() const {
        detail::require(std::isfinite(phi) && phi > 0.0, "KernelParams: phi must be positive");
        detail::require(nu > 0.0 && nu <= 2.0, "KernelParams: nu must lie in (0, 2]");
    }
};

inline constexpr double kDefaultJitter = 1e-8;

inline double correlation(double d, const KernelParams& p) {
    if (!(d >= 0.0)) throw InvalidArgument("correlation: distance must be nonnegative");
    return std::exp(-p.phi * std::pow(d, p.nu));
}

inline Eigen::MatrixXd gram(const Eigen::MatrixXd& dist, const KernelParams& p, double jitter = kDefaultJitter) {
    p.validate();
    detail::require(dist.rows() == dist.cols(), "gram: distance matrix must be square");
    detail::require(jitter >= 0.0, "gram: jitter must be nonnegative");
    const double scale = 1.0 + dist.cwiseAbs().maxCoeff();
    detail::require(((dist - dist.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * scale),
                    "gram: distance matrix is not symmetric");
    const Eigen::Index m = dist.rows();
    Eigen::MatrixXd k(m, m);
    for (Eigen::Index c = 0; c < m; ++c)
        for (Eigen::Index r = 0; r < m; ++r) k(r, c) = correlation(dist(r, c), p);
    k.diagonal().array() += jitter;
    return k;
}

/// Gram matrix straight from the vertices, without materializing distances.
inline Eigen::MatrixXd gram(const VertexSet& v, const KernelParams& p, double jitter = kDefaultJitter) {
    p.validate();
    const Eigen::Index m = v.size();
    Eigen::MatrixXd k(m, m);
    for (Eigen::Index c = 0; c < m; ++c) {
        k(c, c) = 1.0 + jitter;
        for (Eigen::Index r = c + 1; r < m; ++r) {
            const double val = correlation(great_circle_distance(v.point(r), v.point(c), v.radius()), p);
            k(r, c) = val;
            k(c, r) = val;
        }
    }
    return k;
}

/// Choose L either to capture a fraction of total variation or as a fixed count.
struct KappaTarget {
    double kappa;
};
struct FixedCount {
    Eigen::Index count;
};
using BasisSelector = std::variant<KappaTarget, FixedCount>;

enum class EigenSolverKind { Auto, Dense, Iterative };

/// Dense solver up to this size, subspace iteration above.
inline constexpr Eigen::Index kDenseSolverLimit = 5000;
/// Eigenvalues below this fraction of the leading one are treated as numerically zero.
inline constexpr double kRankCutoff = 1e-10;

/// Truncated Karhunen-Loeve basis: Psi (orthonormal), lambda (descending) and
/// B = Psi diag(sqrt(lambda)).
struct BasisExpansion {
    Eigen::VectorXd eigenvalues;
    Eigen::MatrixXd eigenvectors;
    Eigen::MatrixXd basis;
    double total_variation = 0.0;  ///< trace of the Gram matrix
    double kappa_achieved = 0.0;

    Eigen::Index size() const noexcept { return eigenvalues.size(); }
    Eigen::Index vertices() const noexcept { return eigenvectors.rows(); }

    /// First `count` eigenpairs as a new expansion.
    BasisExpansion leading(Eigen::Index count) const;
};

/// Validating constructor for eigenpairs from any source (solver output, file).
inline BasisExpansion make_basis(Eigen::VectorXd eigenvalues, Eigen::MatrixXd eigenvectors, double total_variation) {
    detail::require(eigenvalues.size() >= 1, "basis: need at least one eigenpair");
    detail::require(eigenvectors.cols() == eigenvalues.size(), "basis: eigenvector/eigenvalue count mismatch");
    detail::require(total_variation > 0.0 && std::isfinite(total_variation), "basis: total variation must be positive");
    for (Eigen::Index l = 0; l < eigenvalues.size(); ++l) {
        detail::require(eigenvalues[l] > 0.0 && std::isfinite(eigenvalues[l]), "basis: eigenvalues must be positive");
        if (l > 0) detail::require(eigenvalues[l] <= eigenvalues[l - 1], "basis: eigenvalues must be nonincreasing");
    }
    const Eigen::MatrixXd gram_err =
        eigenvectors.transpose() * eigenvectors - Eigen::MatrixXd::Identity(eigenvalues.size(), eigenvalues.size());
    detail::require(gram_err.cwiseAbs().maxCoeff() <= 1e-8, "basis: eigenvectors are not orthonormal");
    BasisExpansion out;
    out.basis = eigenvectors * eigenvalues.cwiseSqrt().asDiagonal();
    out.kappa_achieved = std::min(1.0, eigenvalues.sum() / total_variation);
    out.eigenvalues = std::move(eigenvalues);
    out.eigenvectors = std::move(eigenvectors);
    out.total_variation = total_variation;
    return out;
}

inline BasisExpansion BasisExpansion::leading(Eigen::Index count) const {
    detail::require(count >= 1 && count <= size(), "basis: requested " + std::to_string(count) +
                                                       " eigenpairs but only " + std::to_string(size()) + " stored");
    return make_basis(eigenvalues.head(count), eigenvectors.leftCols(count), total_variation);
}

namespace detail {

inline Eigenpairs leading_eigenpairs(const Eigen::MatrixXd& k, Eigen::Index count, EigenSolverKind solver) {
    const Eigen::Index m = k.rows();
    const bool dense = solver == EigenSolverKind::Dense ||
                       (solver == EigenSolverKind::Auto && (m <= kDenseSolverLimit || count * 2 >= m));
    if (dense) {
        Eigenpairs all = dense_eigenpairs(k);
        all.values.conservativeResize(count);
        all.vectors.conservativeResize(Eigen::NoChange, count);
        return all;
    }
    auto apply = [&k](const Eigen::MatrixXd& v, Eigen::MatrixXd& out) { out.noalias() = k * v; };
    return subspace_eigenpairs(apply, m, count);
}

}  // namespace detail

/// Eigendecompose K and keep the leading pairs: the minimum L whose cumulative share of
/// trace(K) reaches kappa, or a fixed L.
inline BasisExpansion truncate_basis(const Eigen::MatrixXd& k, const BasisSelector& selector,
                                     EigenSolverKind solver = EigenSolverKind::Auto) {
    const Eigen::Index m = k.rows();
    detail::require(m >= 1 && k.cols() == m, "truncate_basis: Gram matrix must be square");
    if (const auto* kt = std::get_if<KappaTarget>(&selector))
        detail::require(kt->kappa > 0.0 && kt->kappa < 1.0, "truncate_basis: kappa must lie in (0, 1)");
    if (const auto* fc = std::get_if<FixedCount>(&selector))
        detail::require(fc->count >= 1 && fc->count <= m, "truncate_basis: L exceeds the matrix size");
    const double total = k.trace();
    detail::require(total > 0.0, "truncate_basis: Gram matrix has nonpositive trace");

    auto rank_of = [](const Eigen::VectorXd& vals) {
        Eigen::Index r = 0;
        while (r < vals.size() && vals[r] >= kRankCutoff * vals[0] && vals[r] > 0.0) ++r;
        return r;
    };

    Eigen::Index want;
    Eigenpairs pairs;
    if (const auto* fc = std::get_if<FixedCount>(&selector)) {
        want = fc->count;
        pairs = detail::leading_eigenpairs(k, want, solver);
        const Eigen::Index rank = rank_of(pairs.values);
        if (rank < want)
            throw InvalidArgument("truncate_basis: L=" + std::to_string(want) + " exceeds numerical rank " +
                                  std::to_string(rank));
    } else {
        const double kappa = std::get<KappaTarget>(selector).kappa;
        Eigen::Index trial = std::min<Eigen::Index>(m, 64);
        for (;;) {
            pairs = detail::leading_eigenpairs(k, trial, solver);
            const Eigen::Index rank = rank_of(pairs.values);
            double cum = 0.0;
            want = 0;
            for (Eigen::Index l = 0; l < rank; ++l) {
                cum += pairs.values[l];
                if (cum / total >= kappa) {
                    want = l + 1;
                    break;
                }
            }
            if (want > 0) break;
            if (trial == m || rank < trial)
                throw InvalidArgument("truncate_basis: kappa target not attainable above the rank cutoff");
            trial = std::min<Eigen::Index>(m, trial * 2);
        }
    }
    return make_basis(pairs.values.head(want), pairs.vectors.leftCols(want), total);
}

/// beta_tilde = B theta.
inline Eigen::VectorXd field_from_coeffs(const BasisExpansion& b, const Eigen::VectorXd& theta) {
    detail::require(theta.size() == b.size(), "field_from_coeffs: expected " + std::to_string(b.size()) +
                                                  " coefficients, got " + std::to_string(theta.size()));
    return b.basis * theta;
}

/// Draw theta_l ~ N(0, sigma_beta_sq) and return B theta.
inline Eigen::VectorXd sample_field(const BasisExpansion& b, double sigma_beta_sq, Rng& rng) {
    detail::require(sigma_beta_sq > 0.0 && std::isfinite(sigma_beta_sq), "sample_field: variance must be positive");
    std::normal_distribution<double> normal(0.0, std::sqrt(sigma_beta_sq));
    Eigen::VectorXd theta(b.size());
    for (Eigen::Index l = 0; l < theta.size(); ++l) theta[l] = normal(rng);
    return field_from_coeffs(b, theta);
}

inline Eigen::VectorXd sample_field(const BasisExpansion& b, double sigma_beta_sq, std::uint64_t seed) {
    Rng rng = make_stream(seed, "field");
    return sample_field(b, sigma_beta_sq, rng);
}

/// What produced a basis; persisted next to it.
struct BasisManifest {
    KernelParams kernel;
    double jitter = kDefaultJitter;
    std::optional<double> kappa_target;
    std::optional<Eigen::Index> fixed_count;
    Eigen::Index size = 0;
    double kappa_achieved = 0.0;
};

}  // namespace rtgp
