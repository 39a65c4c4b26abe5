#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <vector>

#include <Eigen/Dense>

#include "rtgp/errors.hpp"

namespace rtgp {

using Point3 = Eigen::Vector3d;
using PointMatrix = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;

/// Analysis locations on a sphere of known radius. Every row has norm R to 1e-9 R.
class VertexSet {
public:
    /// Accepts points within 1e-6 R of the sphere and projects them onto it; anything
    /// further off is rejected as not surface data.
    static VertexSet from_points(PointMatrix coords, double radius) {
        detail::require(std::isfinite(radius) && radius > 0.0, "VertexSet: radius must be positive and finite");
        detail::require(coords.rows() >= 1, "VertexSet: need at least one vertex");
        for (Eigen::Index j = 0; j < coords.rows(); ++j) {
            const double n = coords.row(j).norm();
            detail::require(coords.row(j).allFinite(), "VertexSet: non-finite coordinate at row " + std::to_string(j));
            if (std::abs(n - radius) > 1e-6 * radius)
                throw InvalidArgument("VertexSet: row " + std::to_string(j) + " has norm " + std::to_string(n) +
                                      ", off the sphere of radius " + std::to_string(radius));
            coords.row(j) *= radius / n;
        }
        return VertexSet(std::move(coords), radius);
    }

    const PointMatrix& coords() const noexcept { return coords_; }
    double radius() const noexcept { return radius_; }
    Eigen::Index size() const noexcept { return coords_.rows(); }
    Point3 point(Eigen::Index j) const { return coords_.row(j).transpose(); }

private:
    VertexSet(PointMatrix coords, double radius) : coords_(std::move(coords)), radius_(radius) {}

    PointMatrix coords_;
    double radius_;
};

/// Geodesic distance R * angle(a, b), using atan2(|a x b|, a . b) so that nearly
/// coincident and nearly antipodal pairs keep full precision.
inline double great_circle_distance(const Point3& a, const Point3& b, double radius) {
    if (!(std::isfinite(radius) && radius > 0.0))
        throw InvalidArgument("great_circle_distance: radius must be positive and finite");
    if (!a.allFinite() || !b.allFinite()) throw InvalidArgument("great_circle_distance: non-finite point");
    const double cross = a.cross(b).norm();
    const double dot = a.dot(b);
    return radius * std::atan2(cross, dot);
}

inline Eigen::MatrixXd pairwise_distance_matrix(const VertexSet& v) {
    const Eigen::Index m = v.size();
    Eigen::MatrixXd d = Eigen::MatrixXd::Zero(m, m);
    for (Eigen::Index j = 0; j < m; ++j) {
        const Point3 pj = v.point(j);
        for (Eigen::Index k = j + 1; k < m; ++k) {
            const double dist = great_circle_distance(pj, v.point(k), v.radius());
            d(j, k) = dist;
            d(k, j) = dist;
        }
    }
    return d;
}

/// Golden-angle spiral lattice: deterministic and close to uniform for any count.
inline VertexSet fibonacci_sphere(Eigen::Index count, double radius) {
    detail::require(count >= 1, "fibonacci_sphere: count must be >= 1");
    detail::require(std::isfinite(radius) && radius > 0.0, "fibonacci_sphere: radius must be positive");
    const double golden_angle = std::numbers::pi * (3.0 - std::sqrt(5.0));
    PointMatrix pts(count, 3);
    for (Eigen::Index i = 0; i < count; ++i) {
        const double z = 1.0 - (2.0 * static_cast<double>(i) + 1.0) / static_cast<double>(count);
        const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
        const double phi = golden_angle * static_cast<double>(i);
        pts.row(i) << r * std::cos(phi), r * std::sin(phi), z;
    }
    pts *= radius;
    return VertexSet::from_points(std::move(pts), radius);
}

/// Geodesic distance from each vertex to its nearest other vertex (O(M^2)).
inline Eigen::VectorXd nearest_neighbor_distances(const VertexSet& v) {
    const Eigen::Index m = v.size();
    Eigen::VectorXd nn = Eigen::VectorXd::Constant(m, std::numeric_limits<double>::infinity());
    for (Eigen::Index j = 0; j < m; ++j)
        for (Eigen::Index k = j + 1; k < m; ++k) {
            const double d = great_circle_distance(v.point(j), v.point(k), v.radius());
            nn[j] = std::min(nn[j], d);
            nn[k] = std::min(nn[k], d);
        }
    return nn;
}

}  // namespace rtgp
