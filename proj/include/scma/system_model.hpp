#pragma once

// SCMA structural types and the rate formulas shared by every allocator.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace scma {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using ComplexMatrix = Eigen::MatrixXcd;

/// Raised for invalid dimensions, parameters, or permutations.
class parameter_error : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

/// Raised when a computation produces NaN or infinity.
class numerical_domain_error : public std::domain_error {
  public:
    using std::domain_error::domain_error;
};

inline long long binomial(int n, int k) {
    if (k < 0 || k > n) return 0;
    k = std::min(k, n - k);
    long long r = 1;
    for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
    return r;
}

/// How the block-ascent loop decides it has converged.
enum class StopRule {
    both_below,   ///< stop once both ||dF|| <= eps_F and ||dP|| <= eps_P
    either_below  ///< continue only while both norms exceed their tolerance
};

struct SystemConfig {
    int K = 4;  ///< subcarriers
    int J = 6;  ///< users
    int N = 2;  ///< subcarriers per user
    int d_f = 3;  ///< users per subcarrier

    double cell_radius_m = 300.0;
    double pathloss_exp = 4.0;
    /// Multiplies user distances before the path-loss formula is applied.
    double distance_scale = 1.0;
    double noise_density_dbm_hz = -174.0;
    double bandwidth_hz = 180e3;
    /// One entry broadcasts to every user; otherwise one entry per user.
    std::vector<double> p_max_dbm{10.0};

    double lambda_penalty = 20.0;
    double eps_F = 1e-3;
    /// Tolerance on ||dP||_F with each user's powers expressed as fractions of its budget.
    double eps_P = 1e-3;
    int max_cycles = 50;
    double solver_eps = 1e-6;
    StopRule stop_rule = StopRule::either_below;
    /// Relative spread of the random initial assignment around the uniform
    /// fractional point. 1 with N/K = 1/2 samples entries uniformly on [0, 1].
    double init_spread = 0.05;
    /// After rounding, switch on free entries that improve the objective.
    bool complete_assignment = true;
    std::uint64_t seed = 1;

    /// SIC order: decode_order[0] sees no interference. Empty means 0..J-1.
    std::vector<int> decode_order{};

    double pmax_dbm_of(int j) const {
        return p_max_dbm.size() == 1 ? p_max_dbm.front() : p_max_dbm.at(static_cast<std::size_t>(j));
    }

    std::vector<int> order() const {
        if (!decode_order.empty()) return decode_order;
        std::vector<int> o(static_cast<std::size_t>(J));
        std::iota(o.begin(), o.end(), 0);
        return o;
    }

    void validate() const {
        if (K < 1 || J < 1 || N < 1 || d_f < 1) throw parameter_error("K, J, N, d_f must be positive");
        if (N >= K) throw parameter_error("N must be smaller than K");
        if (J > binomial(K, N)) throw parameter_error("J exceeds binomial(K, N)");
        if (!(cell_radius_m > 0) || !(bandwidth_hz > 0) || !(distance_scale > 0))
            throw parameter_error("radius, bandwidth and distance scale must be positive");
        if (pathloss_exp < 0) throw parameter_error("path-loss exponent must be nonnegative");
        if (!(eps_F > 0) || !(eps_P > 0) || !(solver_eps > 0)) throw parameter_error("tolerances must be positive");
        if (max_cycles < 1) throw parameter_error("max_cycles must be at least 1");
        if (lambda_penalty < 0) throw parameter_error("penalty weight must be nonnegative");
        if (!(init_spread >= 0 && init_spread <= 1)) throw parameter_error("init_spread must lie in [0, 1]");
        if (p_max_dbm.empty() || (p_max_dbm.size() != 1 && p_max_dbm.size() != static_cast<std::size_t>(J)))
            throw parameter_error("p_max_dbm must hold 1 or J entries");
        if (!decode_order.empty()) check_permutation(decode_order, J);
    }

    static void check_permutation(const std::vector<int>& order, int J) {
        if (order.size() != static_cast<std::size_t>(J)) throw parameter_error("decode order has wrong length");
        std::vector<char> seen(static_cast<std::size_t>(J), 0);
        for (int u : order) {
            if (u < 0 || u >= J || seen[static_cast<std::size_t>(u)]) throw parameter_error("decode order is not a permutation");
            seen[static_cast<std::size_t>(u)] = 1;
        }
    }
};

/// Binary K x J incidence of subcarriers (rows) and users (columns).
struct FactorGraph {
    Matrix entries;

    int K() const { return static_cast<int>(entries.rows()); }
    int J() const { return static_cast<int>(entries.cols()); }
};

struct Allocation {
    Matrix F;  ///< subcarrier assignment, relaxed to [0,1] or binary
    Matrix P;  ///< transmit power in watts
};

/// Channel gains h = g / sqrt(1 + r^alpha).
struct ChannelState {
    ComplexMatrix H;           ///< K x J composite gains
    ComplexMatrix small_scale; ///< K x J fading g, E|g|^2 = 1
    Vector distances_m;        ///< length J
    Vector amplitude;          ///< length J, 1 / sqrt(1 + r^alpha)

    int K() const { return static_cast<int>(H.rows()); }
    int J() const { return static_cast<int>(H.cols()); }
    Matrix gain2() const { return H.cwiseAbs2(); }
};

struct RateBreakdown {
    Vector per_subcarrier;         ///< length K, nats
    Vector per_user;               ///< length J, nats
    Matrix per_user_per_subcarrier;///< K x J
    double total = 0.0;
};

/// All N-subsets of {0..K-1} as columns, in lexicographic order.
inline FactorGraph canonical_factor_graph(int K, int N) {
    if (N < 1 || N >= K) throw parameter_error("canonical factor graph needs 1 <= N < K");
    const auto J = binomial(K, N);
    if (J > 1'000'000) throw parameter_error("canonical factor graph too large");
    FactorGraph g{Matrix::Zero(K, J)};
    std::vector<int> subset(static_cast<std::size_t>(N));
    std::iota(subset.begin(), subset.end(), 0);
    for (Eigen::Index col = 0; col < J; ++col) {
        for (int k : subset) g.entries(k, col) = 1.0;
        // advance to the next subset in lexicographic order
        int i = N - 1;
        while (i >= 0 && subset[static_cast<std::size_t>(i)] == K - N + i) --i;
        if (i < 0) break;
        ++subset[static_cast<std::size_t>(i)];
        for (int m = i + 1; m < N; ++m) subset[static_cast<std::size_t>(m)] = subset[static_cast<std::size_t>(m - 1)] + 1;
    }
    return g;
}

namespace detail {

inline void check_dims(const Matrix& gain2, const Allocation& a) {
    if (a.F.rows() != gain2.rows() || a.F.cols() != gain2.cols() || a.P.rows() != gain2.rows() ||
        a.P.cols() != gain2.cols())
        throw parameter_error("allocation and channel dimensions disagree");
}

inline void check_sigma2(double sigma2) {
    if (!(sigma2 > 0)) throw parameter_error("noise power must be positive");
}

}  // namespace detail

/// Sum over subcarriers of ln(1 + sum_j |h|^2 f p / sigma2), in nats.
inline double sum_rate(const Matrix& gain2, const Allocation& alloc, double sigma2) {
    detail::check_dims(gain2, alloc);
    detail::check_sigma2(sigma2);
    double total = 0.0;
    for (Eigen::Index k = 0; k < gain2.rows(); ++k) {
        double rx = 0.0;
        for (Eigen::Index j = 0; j < gain2.cols(); ++j) rx += gain2(k, j) * alloc.F(k, j) * alloc.P(k, j);
        total += std::log1p(rx / sigma2);
    }
    return total;
}

inline double sum_rate(const ChannelState& ch, const Allocation& alloc, double sigma2) {
    return sum_rate(ch.gain2(), alloc, sigma2);
}

/// SIC decomposition of the sum rate. decode_order[0] is decoded free of
/// interference; each later user sees every earlier user as noise.
inline RateBreakdown per_user_rates(const Matrix& gain2, const Allocation& alloc, double sigma2,
                                    const std::vector<int>& decode_order) {
    detail::check_dims(gain2, alloc);
    detail::check_sigma2(sigma2);
    const auto K = gain2.rows();
    const auto J = gain2.cols();
    SystemConfig::check_permutation(decode_order, static_cast<int>(J));

    RateBreakdown out;
    out.per_user_per_subcarrier = Matrix::Zero(K, J);
    out.per_subcarrier = Vector::Zero(K);
    for (Eigen::Index k = 0; k < K; ++k) {
        double interference = 0.0;
        for (int j : decode_order) {
            const double s = gain2(k, j) * alloc.F(k, j) * alloc.P(k, j);
            out.per_user_per_subcarrier(k, j) = std::log1p(s / (sigma2 + interference));
            interference += s;
        }
        out.per_subcarrier(k) = std::log1p(interference / sigma2);
    }
    out.per_user = out.per_user_per_subcarrier.colwise().sum().transpose();
    out.total = out.per_subcarrier.sum();
    return out;
}

inline RateBreakdown per_user_rates(const Matrix& gain2, const Allocation& alloc, double sigma2) {
    std::vector<int> order(static_cast<std::size_t>(gain2.cols()));
    std::iota(order.begin(), order.end(), 0);
    return per_user_rates(gain2, alloc, sigma2, order);
}

enum class ConstraintKind {
    subcarriers_per_user,  ///< column sum <= N
    users_per_subcarrier,  ///< row sum <= d_f
    power_budget,          ///< sum_k f p <= P_max
    binary,                ///< f in {0,1}
    relaxed_bounds,        ///< 0 <= f <= 1
    negative_power,
    dimensions
};

inline const char* to_string(ConstraintKind k) {
    switch (k) {
        case ConstraintKind::subcarriers_per_user: return "subcarriers-per-user";
        case ConstraintKind::users_per_subcarrier: return "users-per-subcarrier";
        case ConstraintKind::power_budget: return "power-budget";
        case ConstraintKind::binary: return "binary";
        case ConstraintKind::relaxed_bounds: return "relaxed-bounds";
        case ConstraintKind::negative_power: return "negative-power";
        case ConstraintKind::dimensions: return "dimensions";
    }
    return "unknown";
}

struct Violation {
    ConstraintKind kind;
    int index;        ///< user, subcarrier, or flattened entry (k * J + j)
    double residual;  ///< amount by which the constraint is exceeded
};

/// Lists every violated constraint with its excess. `pmax_w` holds one budget
/// per user in watts. Empty result iff the allocation is feasible within `tol`
/// (absolute for counts and entries, relative to the budget for power).
inline std::vector<Violation> validate_allocation(const Allocation& a, const SystemConfig& cfg,
                                                  const std::vector<double>& pmax_w, bool binary_required,
                                                  double tol = 1e-9) {
    std::vector<Violation> out;
    if (a.F.rows() != cfg.K || a.F.cols() != cfg.J || a.P.rows() != cfg.K || a.P.cols() != cfg.J ||
        pmax_w.size() != static_cast<std::size_t>(cfg.J)) {
        out.push_back({ConstraintKind::dimensions, -1, 0.0});
        return out;
    }
    for (int j = 0; j < cfg.J; ++j) {
        const double cs = a.F.col(j).sum();
        if (cs > cfg.N + tol) out.push_back({ConstraintKind::subcarriers_per_user, j, cs - cfg.N});
        const double used = a.F.col(j).dot(a.P.col(j));
        const double budget = pmax_w[static_cast<std::size_t>(j)];
        if (used - budget > tol * budget) out.push_back({ConstraintKind::power_budget, j, used - budget});
    }
    for (int k = 0; k < cfg.K; ++k) {
        const double rs = a.F.row(k).sum();
        if (rs > cfg.d_f + tol) out.push_back({ConstraintKind::users_per_subcarrier, k, rs - cfg.d_f});
    }
    for (int k = 0; k < cfg.K; ++k) {
        for (int j = 0; j < cfg.J; ++j) {
            const double f = a.F(k, j);
            const int idx = k * cfg.J + j;
            if (f < -tol) out.push_back({ConstraintKind::relaxed_bounds, idx, -f});
            else if (f > 1.0 + tol) out.push_back({ConstraintKind::relaxed_bounds, idx, f - 1.0});
            if (binary_required) {
                const double d = std::min(std::abs(f), std::abs(f - 1.0));
                if (d > tol) out.push_back({ConstraintKind::binary, idx, d});
            }
            if (a.P(k, j) < -tol) out.push_back({ConstraintKind::negative_power, idx, -a.P(k, j)});
        }
    }
    return out;
}

}  // namespace scma
