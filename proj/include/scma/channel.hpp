#pragma once

// User placement, Rayleigh/path-loss channel draws, Gauss-Markov channel
// aging, and the dBm/watt conversions used throughout the library.

#include <scma/rng.hpp>
#include <scma/system_model.hpp>

#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

namespace scma {

inline double dbm_to_watt(double dbm) { return std::pow(10.0, (dbm - 30.0) / 10.0); }
inline double watt_to_dbm(double w) { return 10.0 * std::log10(w) + 30.0; }

/// Thermal noise power in watts over `bandwidth_hz`.
inline double noise_power(double density_dbm_hz, double bandwidth_hz) {
    if (!(bandwidth_hz > 0)) throw parameter_error("bandwidth must be positive");
    return dbm_to_watt(density_dbm_hz) * bandwidth_hz;
}

inline double noise_power(const SystemConfig& cfg) {
    return noise_power(cfg.noise_density_dbm_hz, cfg.bandwidth_hz);
}

/// Per-user power budgets in watts.
inline std::vector<double> pmax_watts(const SystemConfig& cfg) {
    std::vector<double> out(static_cast<std::size_t>(cfg.J));
    for (int j = 0; j < cfg.J; ++j) out[static_cast<std::size_t>(j)] = dbm_to_watt(cfg.pmax_dbm_of(j));
    return out;
}

struct DopplerParams {
    double f_max_hz = 0.0;
    double T_s_s = 0.01;
    int period_T = 1;

    void validate() const {
        if (f_max_hz < 0 || !(T_s_s > 0) || period_T < 1) throw parameter_error("invalid Doppler parameters");
    }
};

/// Bessel function of the first kind, order zero.
inline double bessel_j0(double x) {
    x = std::abs(x);
    if (x <= 12.0) {
        // power series; alternating terms peak near 4e3 at x = 12
        const double q = 0.25 * x * x;
        double term = 1.0;
        double sum = 1.0;
        for (int m = 1; m < 200; ++m) {
            term *= -q / (static_cast<double>(m) * m);
            sum += term;
            if (std::abs(term) < 1e-18) break;
        }
        return sum;
    }
    // Hankel asymptotic expansion, truncated at its smallest term
    const double z8 = 8.0 * x;
    double p = 1.0;
    double q = 0.0;
    double term = 1.0;
    double last = std::numeric_limits<double>::infinity();
    for (int k = 1; k < 200; ++k) {
        const double odd = 2.0 * k - 1.0;
        term *= -odd * odd / (k * z8);
        if (std::abs(term) >= last) break;
        last = std::abs(term);
        // even k feeds P, odd k feeds Q, each with alternating sign
        if (k % 2 == 0) p += (k % 4 == 0 ? 1.0 : -1.0) * term;
        else q += (k % 4 == 1 ? 1.0 : -1.0) * term;
        if (last < 1e-18) break;
    }
    const double chi = x - std::numbers::pi / 4.0;
    return std::sqrt(2.0 / (std::numbers::pi * x)) * (p * std::cos(chi) - q * std::sin(chi));
}

/// Correlation between successive fading samples, J0(2 pi f_max T_s).
inline double doppler_correlation(const DopplerParams& params) {
    params.validate();
    return bessel_j0(2.0 * std::numbers::pi * params.f_max_hz * params.T_s_s);
}

/// Smallest f_max giving J0(2 pi f_max T_s)^2 = rho2, found by bisection on
/// the first lobe of J0 (where J0 decreases from 1 to 0).
inline double doppler_for_rho2(double rho2, double T_s_s) {
    if (!(rho2 >= 0 && rho2 <= 1)) throw parameter_error("rho^2 must lie in [0, 1]");
    if (!(T_s_s > 0)) throw parameter_error("T_s must be positive");
    double lo = 0.0;
    double hi = 2.404825557695773;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        const double j = bessel_j0(mid);
        if (j * j > rho2) lo = mid;
        else hi = mid;
    }
    return 0.5 * (lo + hi) / (2.0 * std::numbers::pi * T_s_s);
}

/// J radii uniform over a disk of radius R (density 2r / R^2).
inline Vector place_users(int J, double R, Rng& rng) {
    if (!(R > 0)) throw parameter_error("cell radius must be positive");
    Vector r(J);
    for (int j = 0; j < J; ++j) r(j) = R * std::sqrt(rng.uniform());
    return r;
}

inline Vector pathloss_amplitude(const Vector& distances, double alpha, double distance_scale = 1.0) {
    if (alpha < 0) throw parameter_error("path-loss exponent must be nonnegative");
    Vector a(distances.size());
    for (Eigen::Index j = 0; j < distances.size(); ++j)
        a(j) = 1.0 / std::sqrt(1.0 + std::pow(distance_scale * distances(j), alpha));
    return a;
}

inline void recompose(ChannelState& s) {
    s.H = s.small_scale;
    for (Eigen::Index j = 0; j < s.H.cols(); ++j) s.H.col(j) *= s.amplitude(j);
}

inline ChannelState draw_channel(const Vector& distances, double alpha, int K, Rng& rng,
                                 double distance_scale = 1.0) {
    ChannelState s;
    s.distances_m = distances;
    s.amplitude = pathloss_amplitude(distances, alpha, distance_scale);
    const auto J = distances.size();
    s.small_scale.resize(K, J);
    for (Eigen::Index j = 0; j < J; ++j)
        for (int k = 0; k < K; ++k) s.small_scale(k, j) = rng.complex_normal(1.0);
    recompose(s);
    return s;
}

/// One step of g' = rho g + w, w ~ CN(0, 1 - rho^2). Distances are unchanged.
inline ChannelState evolve_channel(const ChannelState& state, double rho, Rng& rng) {
    if (!(std::abs(rho) <= 1.0)) throw parameter_error("|rho| must not exceed 1");
    ChannelState next = state;
    const double innovation = 1.0 - rho * rho;
    for (Eigen::Index j = 0; j < next.small_scale.cols(); ++j) {
        for (Eigen::Index k = 0; k < next.small_scale.rows(); ++k) {
            const auto w = rng.complex_normal(1.0);
            next.small_scale(k, j) = rho * state.small_scale(k, j) + std::sqrt(innovation) * w;
        }
    }
    recompose(next);
    return next;
}

}  // namespace scma
