#pragma once

// Scalar densities, tail-stable normal CDF arithmetic, truncated-normal moments and
// sampling, and the inverse-gamma family used by both inference engines.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/erf.hpp>

#include "rtgp/errors.hpp"
#include "rtgp/rng.hpp"

namespace rtgp::dist {

inline constexpr double kInf = std::numeric_limits<double>::infinity();
inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;
inline constexpr double kLogSqrt2PiE = 0.5 * (kLog2Pi + 1.0);

inline double log_norm_pdf(double z) { return -0.5 * (kLog2Pi + z * z); }
inline double norm_pdf(double z) { return std::exp(log_norm_pdf(z)); }
inline double norm_cdf(double z) { return 0.5 * std::erfc(-z * std::numbers::sqrt2 / 2.0); }

inline double log_normal_pdf(double x, double mean, double var) {
    const double d = x - mean;
    return -0.5 * (kLog2Pi + std::log(var) + d * d / var);
}

namespace detail {

// Mills ratio Q(z)/phi(z) by continued fraction; only used for z >= 20.
inline double mills_ratio_cf(double z) {
    double f = z;
    for (int k = 60; k >= 1; --k) f = z + k / f;
    return 1.0 / f;
}

}  // namespace detail

/// log(1 - Phi(z)), accurate far into the upper tail.
inline double log_upper_tail(double z) {
    if (z == kInf) return -kInf;
    if (z < 20.0) return std::log(0.5 * std::erfc(z * std::numbers::sqrt2 / 2.0));
    return log_norm_pdf(z) + std::log(detail::mills_ratio_cf(z));
}

inline double log_norm_cdf(double z) { return log_upper_tail(-z); }

/// log(Phi(b) - Phi(a)) for standardized bounds a <= b (either may be infinite).
inline double log_interval_mass(double a, double b) {
    if (!(b > a)) return -kInf;
    if (a >= 0.0) {
        const double la = log_upper_tail(a);
        const double lb = log_upper_tail(b);
        return la + std::log1p(-std::exp(lb - la));
    }
    if (b <= 0.0) return log_interval_mass(-b, -a);
    // Straddles zero: sum of two half-masses, each accurate near zero.
    const double ra = (a == -kInf) ? 0.5 : 0.5 * std::erf(-a * std::numbers::sqrt2 / 2.0);
    const double rb = (b == kInf) ? 0.5 : 0.5 * std::erf(b * std::numbers::sqrt2 / 2.0);
    return std::log(ra + rb);
}

/// Moments and entropy of Normal(mean, sd^2) truncated to (lo, hi).
struct TruncatedMoments {
    double log_mass = -kInf;  ///< log P(lo < X < hi) under the untruncated normal
    double mean = 0.0;
    double var = 0.0;
    double entropy = 0.0;
};

inline TruncatedMoments truncated_moments(double mean, double sd, double lo, double hi) {
    TruncatedMoments out;
    const double a = (lo - mean) / sd;
    const double b = (hi - mean) / sd;
    out.log_mass = log_interval_mass(a, b);
    if (out.log_mass == -kInf) {
        out.mean = std::clamp(mean, lo, hi);
        return out;
    }
    // phi(t)/Z and t*phi(t)/Z, with the infinite-bound limits taken as zero.
    auto ratio = [&](double t) { return std::isinf(t) ? 0.0 : std::exp(log_norm_pdf(t) - out.log_mass); };
    const double ra = ratio(a), rb = ratio(b);
    const double ta = std::isinf(a) ? 0.0 : a * ra;
    const double tb = std::isinf(b) ? 0.0 : b * rb;
    const double m = ra - rb;
    double v = 1.0 + ta - tb - m * m;
    v = std::max(v, 0.0);
    out.mean = std::clamp(mean + sd * m, lo, hi);
    out.var = sd * sd * v;
    out.entropy = kLogSqrt2PiE + std::log(sd) + out.log_mass + 0.5 * (ta - tb);
    return out;
}

/// Exact draw from Normal(mean, sd^2) restricted to (lower, upper). Inverse-CDF in the
/// central regime; Robert's rejection samplers once the interval sits 5 sd into a tail.
template <class URNG>
double sample_truncated_normal(double mean, double sd, double lower, double upper, URNG& rng) {
    if (!(sd > 0.0) || !std::isfinite(sd) || !std::isfinite(mean))
        throw InvalidArgument("sample_truncated_normal: sd must be positive and finite");
    if (!(lower < upper) || std::isnan(lower) || std::isnan(upper))
        throw InvalidArgument("sample_truncated_normal: degenerate interval");

    const double a = (lower - mean) / sd;
    const double b = (upper - mean) / sd;
    std::uniform_real_distribution<double> unif(0.0, 1.0);

    // Standardized draw on (lo, hi) with lo >= 5.
    auto tail = [&](double lo, double hi) {
        const double width = hi - lo;
        if (width * lo < 1.0) {
            for (;;) {
                const double z = lo + width * unif(rng);
                if (std::log(unif(rng)) <= 0.5 * (lo * lo - z * z)) return z;
            }
        }
        const double rate = 0.5 * (lo + std::sqrt(lo * lo + 4.0));
        std::exponential_distribution<double> expo(rate);
        for (;;) {
            const double z = lo + expo(rng);
            if (z >= hi) continue;
            const double d = z - rate;
            if (std::log(unif(rng)) <= -0.5 * d * d) return z;
        }
    };

    double z;
    if (a >= 5.0) {
        z = tail(a, b);
    } else if (b <= -5.0) {
        z = -tail(-b, -a);
    } else if (a >= 0.0) {
        // Upper half: invert the upper-tail probability to keep precision.
        const double qa = 0.5 * std::erfc(a / std::numbers::sqrt2);
        const double qb = (b == kInf) ? 0.0 : 0.5 * std::erfc(b / std::numbers::sqrt2);
        const double u = qb + (qa - qb) * unif(rng);
        z = (u <= 0.0) ? a : std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * u);
    } else if (b <= 0.0) {
        const double pa = (a == -kInf) ? 0.0 : 0.5 * std::erfc(-a / std::numbers::sqrt2);
        const double pb = 0.5 * std::erfc(-b / std::numbers::sqrt2);
        const double u = pa + (pb - pa) * unif(rng);
        z = (u <= 0.0) ? b : -std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * u);
    } else {
        const double pa = norm_cdf(a), pb = norm_cdf(b);
        const double u = pa + (pb - pa) * unif(rng);
        z = -std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * u);
    }
    z = std::clamp(z, a, b);
    double x = mean + sd * z;
    // Rounding can land exactly on a bound; the support is open.
    if (x <= lower) x = std::nextafter(lower, kInf);
    if (x >= upper) x = std::nextafter(upper, -kInf);
    return x;
}

/// Inverse-gamma in shape/rate form: density b^a / Gamma(a) x^{-a-1} exp(-b/x).
struct InverseGamma {
    double shape = 1.0;
    double rate = 1.0;

    double mean_inv() const { return shape / rate; }                              ///< E[1/x]
    double mean_log() const { return std::log(rate) - boost::math::digamma(shape); }  ///< E[log x]
    double mean() const { return shape > 1.0 ? rate / (shape - 1.0) : kInf; }
    double entropy() const {
        return shape + std::log(rate) + std::lgamma(shape) - (1.0 + shape) * boost::math::digamma(shape);
    }
    double log_pdf(double x) const {
        if (!(x > 0.0)) return -kInf;
        return shape * std::log(rate) - std::lgamma(shape) - (shape + 1.0) * std::log(x) - rate / x;
    }
    /// E_q[log IG(x; shape_p, rate_p)] where rate_p may itself be random: pass E[rate_p]
    /// and E[log rate_p].
    double expected_log_density(double shape_p, double mean_rate_p, double mean_log_rate_p) const {
        return shape_p * mean_log_rate_p - std::lgamma(shape_p) - (shape_p + 1.0) * mean_log() -
               mean_rate_p * mean_inv();
    }
    template <class URNG>
    double sample(URNG& rng) const {
        std::gamma_distribution<double> g(shape, 1.0 / rate);
        return 1.0 / g(rng);
    }
};

inline double log_sum_exp(const double* v, std::size_t n) {
    double mx = -kInf;
    for (std::size_t i = 0; i < n; ++i) mx = std::max(mx, v[i]);
    if (mx == -kInf) return -kInf;
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += std::exp(v[i] - mx);
    return mx + std::log(s);
}

}  // namespace rtgp::dist
