#pragma once

// Helpers shared by the unit tests and the acceptance runner.

#include <scma/scma.hpp>

#include <algorithm>
#include <cmath>
#include <functional>

namespace scma::testing {

/// Default system with a fresh channel from `seed`.
inline Matrix default_channel(const SystemConfig& cfg, std::uint64_t seed) {
    Rng rng(seed);
    const Vector r = place_users(cfg.J, cfg.cell_radius_m, rng);
    return draw_channel(r, cfg.pathloss_exp, cfg.K, rng, cfg.distance_scale).gain2();
}

/// Feasible relaxed point spread over the whole box (uniform F before scaling).
inline Allocation feasible_point(const SystemConfig& cfg, Rng& rng) {
    SystemConfig wide = cfg;
    wide.init_spread = 1.0;
    return random_initial_point(wide, rng);
}

/// Central-difference gradient of a scalar function of a matrix.
inline Matrix fd_gradient(const std::function<double(const Matrix&)>& f, const Matrix& X, double h) {
    Matrix g(X.rows(), X.cols());
    Matrix Y = X;
    for (Eigen::Index j = 0; j < X.cols(); ++j)
        for (Eigen::Index k = 0; k < X.rows(); ++k) {
            const double step = h * std::max(1.0, std::abs(X(k, j)));
            Y(k, j) = X(k, j) + step;
            const double up = f(Y);
            Y(k, j) = X(k, j) - step;
            const double down = f(Y);
            Y(k, j) = X(k, j);
            g(k, j) = (up - down) / (2.0 * step);
        }
    return g;
}

/// max |a - b| / max |b|, with a zero reference compared absolutely.
inline double relative_gap(const Matrix& a, const Matrix& b) {
    const double scale = b.cwiseAbs().maxCoeff();
    return (a - b).cwiseAbs().maxCoeff() / (scale > 0 ? scale : 1.0);
}

/// Worst excess over the relaxed constraints: column sums, row sums, the
/// budget with F and P as given, and the [0, 1] box.
inline double relaxed_excess(const Allocation& a, const SystemConfig& cfg) {
    const auto pmax = pmax_watts(cfg);
    double worst = 0.0;
    for (int j = 0; j < cfg.J; ++j) {
        worst = std::max(worst, a.F.col(j).sum() - cfg.N);
        worst = std::max(worst, (a.F.col(j).dot(a.P.col(j)) - pmax[static_cast<std::size_t>(j)]) / pmax[static_cast<std::size_t>(j)]);
    }
    for (int k = 0; k < cfg.K; ++k) worst = std::max(worst, a.F.row(k).sum() - cfg.d_f);
    worst = std::max({worst, -a.F.minCoeff(), a.F.maxCoeff() - 1.0, -a.P.minCoeff()});
    return worst;
}

}  // namespace scma::testing
