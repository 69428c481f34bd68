#pragma once

// Greedy sorted-order allocators (random order, opportunistic order,
// proportional-fair order) and an exhaustive-search reference for tiny
// instances.

#include <scma/bslm.hpp>
#include <scma/channel.hpp>
#include <scma/rng.hpp>
#include <scma/system_model.hpp>

#include <algorithm>
#include <deque>
#include <functional>
#include <limits>
#include <numeric>
#include <vector>

namespace scma {

namespace detail {

/// True when every user in `pending` can still claim `need[j]` subcarriers it
/// does not already hold without pushing any subcarrier past d_f. Checked as
/// a max-flow from users to subcarriers.
inline bool completable(const Matrix& F, const std::vector<int>& load, int d_f, const std::vector<int>& need) {
    const int K = static_cast<int>(F.rows());
    const int J = static_cast<int>(F.cols());
    const int n = J + K + 2, src = J + K, dst = J + K + 1;
    std::vector<std::vector<int>> cap(static_cast<std::size_t>(n), std::vector<int>(static_cast<std::size_t>(n), 0));
    int demand = 0;
    for (int j = 0; j < J; ++j) {
        const int d = need[static_cast<std::size_t>(j)];
        if (d == 0) continue;
        demand += d;
        cap[src][j] = d;
        for (int k = 0; k < K; ++k)
            if (F(k, j) == 0.0) cap[j][J + k] = 1;
    }
    for (int k = 0; k < K; ++k) cap[J + k][dst] = std::max(0, d_f - load[static_cast<std::size_t>(k)]);

    int flow = 0;
    std::vector<int> prev(static_cast<std::size_t>(n));
    for (;;) {
        std::fill(prev.begin(), prev.end(), -1);
        prev[src] = src;
        std::vector<int> queue{src};
        for (std::size_t q = 0; q < queue.size() && prev[dst] < 0; ++q) {
            const int u = queue[q];
            for (int v = 0; v < n; ++v)
                if (prev[v] < 0 && cap[u][v] > 0) {
                    prev[v] = u;
                    queue.push_back(v);
                }
        }
        if (prev[dst] < 0) break;
        for (int v = dst; v != src; v = prev[v]) {
            --cap[prev[v]][v];
            ++cap[v][prev[v]];
        }
        ++flow;
    }
    return flow == demand;
}

}  // namespace detail

/// Users claim, in `order`, their N strongest subcarriers among those still
/// holding fewer than d_f users. A subcarrier is skipped when taking it would
/// leave some later user unable to claim N distinct subcarriers. Power is
/// split equally over claimed entries.
inline Allocation allocate_sorted(const Matrix& gain2, const SystemConfig& cfg, const std::vector<int>& order) {
    const int K = static_cast<int>(gain2.rows());
    const int J = static_cast<int>(gain2.cols());
    SystemConfig::check_permutation(order, J);
    const auto pmax = pmax_watts(cfg);
    Allocation a{Matrix::Zero(K, J), Matrix::Zero(K, J)};
    std::vector<int> load(static_cast<std::size_t>(K), 0);
    // without enough total capacity nobody can be protected; fall back to plain greedy
    const bool lookahead = static_cast<long long>(J) * cfg.N <= static_cast<long long>(K) * cfg.d_f;
    std::vector<int> need(static_cast<std::size_t>(J), lookahead ? cfg.N : 0);
    for (int j : order) {
        std::vector<int> sc(static_cast<std::size_t>(K));
        std::iota(sc.begin(), sc.end(), 0);
        std::stable_sort(sc.begin(), sc.end(), [&](int x, int y) { return gain2(x, j) > gain2(y, j); });
        int claimed = 0;
        for (int k : sc) {
            if (claimed == cfg.N) break;
            if (load[static_cast<std::size_t>(k)] >= cfg.d_f) continue;
            a.F(k, j) = 1.0;
            ++load[static_cast<std::size_t>(k)];
            if (lookahead) --need[static_cast<std::size_t>(j)];
            if (lookahead && !detail::completable(a.F, load, cfg.d_f, need)) {
                a.F(k, j) = 0.0;
                --load[static_cast<std::size_t>(k)];
                ++need[static_cast<std::size_t>(j)];
                continue;
            }
            ++claimed;
        }
        for (int k = 0; k < K; ++k)
            if (a.F(k, j) == 1.0) a.P(k, j) = pmax[static_cast<std::size_t>(j)] / claimed;
    }
    return a;
}

/// Fixed user order drawn uniformly at random.
inline Allocation fuo(const Matrix& gain2, const SystemConfig& cfg, Rng& rng) {
    std::vector<int> order(static_cast<std::size_t>(gain2.cols()));
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order.begin(), order.end());
    return allocate_sorted(gain2, cfg, order);
}

inline std::vector<int> descending_quality_order(const Vector& quality) {
    std::vector<int> order(static_cast<std::size_t>(quality.size()));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return quality(a) > quality(b); });
    return order;
}

/// Opportunistic allocation: strongest aggregate channel first.
inline Allocation oa(const Matrix& gain2, const SystemConfig& cfg) {
    return allocate_sorted(gain2, cfg, descending_quality_order(gain2.colwise().sum().transpose()));
}

/// History for the proportional-fair ordering. Quality is the per-user sum
/// of |h|^2 over subcarriers.
struct PfState {
    std::size_t window = 10;  ///< L
    double smoothing = 0.9;   ///< weight on the running metric
    std::vector<std::deque<double>> history;

    PfState() = default;
    PfState(int J, std::size_t L = 10, double alpha = 0.9) : window(L), smoothing(alpha), history(static_cast<std::size_t>(J)) {
        if (L < 1 || !(alpha > 0 && alpha <= 1)) throw parameter_error("invalid proportional-fair parameters");
    }

    void push(const Matrix& gain2) {
        if (history.size() != static_cast<std::size_t>(gain2.cols())) history.assign(static_cast<std::size_t>(gain2.cols()), {});
        for (Eigen::Index j = 0; j < gain2.cols(); ++j) {
            auto& h = history[static_cast<std::size_t>(j)];
            h.push_back(gain2.col(j).sum());
            while (h.size() > window) h.pop_front();
        }
    }

    /// Exponentially smoothed quality over the window, oldest sample first.
    Vector metric() const {
        Vector q = Vector::Zero(static_cast<Eigen::Index>(history.size()));
        for (std::size_t j = 0; j < history.size(); ++j) {
            const auto& h = history[j];
            if (h.empty()) continue;
            double m = h.front();
            for (std::size_t i = 1; i < h.size(); ++i) m = smoothing * m + (1.0 - smoothing) * h[i];
            q(static_cast<Eigen::Index>(j)) = m;
        }
        return q;
    }

    /// Least-served users first.
    std::vector<int> order() const {
        const Vector q = metric();
        std::vector<int> o(static_cast<std::size_t>(q.size()));
        std::iota(o.begin(), o.end(), 0);
        std::stable_sort(o.begin(), o.end(), [&](int a, int b) { return q(a) < q(b); });
        return o;
    }
};

/// Proportional-fair ordering. Records the current channel in `state`, then
/// serves users by ascending smoothed historical quality.
inline Allocation pf(const Matrix& gain2, const SystemConfig& cfg, PfState& state) {
    state.push(gain2);
    return allocate_sorted(gain2, cfg, state.order());
}

// ---------------------------------------------------------------------------
// Exhaustive reference
// ---------------------------------------------------------------------------

struct OracleResult {
    Allocation allocation;
    double objective = -std::numeric_limits<double>::infinity();
    long long assignments = 0;  ///< binary F enumerated
};

class enumeration_too_large : public std::length_error {
  public:
    using std::length_error::length_error;
};

namespace detail {

/// All binary K x J matrices with column sums <= N and row sums <= d_f.
inline std::vector<Matrix> feasible_assignments(const SystemConfig& cfg, long long limit) {
    const int K = cfg.K;
    const int J = cfg.J;
    std::vector<Matrix> out;
    // per-user subsets of size <= N
    std::vector<std::vector<int>> subsets;
    for (int mask = 0; mask < (1 << K); ++mask)
        if (__builtin_popcount(static_cast<unsigned>(mask)) <= cfg.N) subsets.push_back({mask});
    std::vector<int> load(static_cast<std::size_t>(K), 0);
    Matrix F = Matrix::Zero(K, J);
    std::function<void(int)> rec = [&](int j) {
        if (j == J) {
            out.push_back(F);
            if (static_cast<long long>(out.size()) > limit) throw enumeration_too_large("too many feasible assignments");
            return;
        }
        for (const auto& s : subsets) {
            const int mask = s.front();
            bool ok = true;
            for (int k = 0; k < K; ++k)
                if ((mask >> k) & 1 && load[static_cast<std::size_t>(k)] >= cfg.d_f) ok = false;
            if (!ok) continue;
            for (int k = 0; k < K; ++k)
                if ((mask >> k) & 1) { ++load[static_cast<std::size_t>(k)]; F(k, j) = 1.0; }
            rec(j + 1);
            for (int k = 0; k < K; ++k)
                if ((mask >> k) & 1) { --load[static_cast<std::size_t>(k)]; F(k, j) = 0.0; }
        }
    };
    rec(0);
    return out;
}

/// Grid points of {a >= 0, sum a <= 1} in `dims` dimensions, spacing h,
/// centered optionally on `center` within +/- radius steps.
inline void simplex_grid(int dims, int levels, std::vector<std::vector<double>>& out,
                         const std::vector<double>* center = nullptr, double radius = 0.0) {
    out.clear();
    if (dims == 0) {
        out.push_back({});
        return;
    }
    std::vector<double> a(static_cast<std::size_t>(dims));
    std::function<void(int, double)> rec = [&](int d, double used) {
        if (d == dims) {
            out.push_back(a);
            return;
        }
        for (int i = 0; i < levels; ++i) {
            double v;
            if (center) {
                const double lo = std::max(0.0, (*center)[static_cast<std::size_t>(d)] - radius);
                const double hi = std::min(1.0, (*center)[static_cast<std::size_t>(d)] + radius);
                v = levels == 1 ? lo : lo + (hi - lo) * i / (levels - 1);
            } else {
                v = levels == 1 ? 0.0 : static_cast<double>(i) / (levels - 1);
            }
            if (used + v > 1.0 + 1e-12) break;
            a[static_cast<std::size_t>(d)] = std::min(v, 1.0 - used);
            rec(d + 1, used + a[static_cast<std::size_t>(d)]);
        }
    };
    rec(0, 0.0);
}

}  // namespace detail

/// Exhaustive search over every feasible binary assignment, with per-user
/// power fractions on a simplex grid (`levels` points per claimed subcarrier)
/// refined once around the best cell. Guarded against runaway enumeration.
inline OracleResult brute_force_oracle(const Matrix& gain2, const SystemConfig& cfg, int levels = 11,
                                       Criterion criterion = Criterion::sum_rate, long long guard = 10'000'000) {
    cfg.validate();
    if (levels < 2) throw parameter_error("power grid needs at least 2 levels");
    if (gain2.rows() != cfg.K || gain2.cols() != cfg.J) throw parameter_error("channel dimensions disagree with config");
    const int K = cfg.K;
    const int J = cfg.J;
    const auto pmax = pmax_watts(cfg);
    const double sigma2 = noise_power(cfg);
    const auto order = cfg.order();
    const auto assignments = detail::feasible_assignments(cfg, guard);

    std::vector<std::vector<double>> grid;
    OracleResult best;
    best.assignments = static_cast<long long>(assignments.size());
    long long work = 0;

    for (const Matrix& F : assignments) {
        // claimed subcarriers per user
        std::vector<std::vector<int>> claimed(static_cast<std::size_t>(J));
        for (int j = 0; j < J; ++j)
            for (int k = 0; k < K; ++k)
                if (F(k, j) == 1.0) claimed[static_cast<std::size_t>(j)].push_back(k);

        std::vector<std::vector<std::vector<double>>> per_user(static_cast<std::size_t>(J));
        long long combos = 1;
        for (int j = 0; j < J; ++j) {
            detail::simplex_grid(static_cast<int>(claimed[static_cast<std::size_t>(j)].size()), levels, per_user[static_cast<std::size_t>(j)]);
            combos *= static_cast<long long>(per_user[static_cast<std::size_t>(j)].size());
        }
        work += combos;
        if (work > guard) throw enumeration_too_large("oracle enumeration exceeds guard");

        auto search = [&](const std::vector<std::vector<std::vector<double>>>& grids, Allocation& arg) {
            double local = -std::numeric_limits<double>::infinity();
            std::vector<std::size_t> idx(static_cast<std::size_t>(J), 0);
            Allocation a{F, Matrix::Zero(K, J)};
            for (;;) {
                for (int j = 0; j < J; ++j) {
                    const auto& frac = grids[static_cast<std::size_t>(j)][idx[static_cast<std::size_t>(j)]];
                    const auto& ks = claimed[static_cast<std::size_t>(j)];
                    for (std::size_t c = 0; c < ks.size(); ++c) a.P(ks[c], j) = frac[c] * pmax[static_cast<std::size_t>(j)];
                }
                const double v = criterion_value(criterion, gain2, a, sigma2, order);
                if (v > local) {
                    local = v;
                    arg = a;
                }
                int j = 0;
                for (; j < J; ++j) {
                    if (++idx[static_cast<std::size_t>(j)] < grids[static_cast<std::size_t>(j)].size()) break;
                    idx[static_cast<std::size_t>(j)] = 0;
                }
                if (j == J) break;
            }
            return local;
        };

        Allocation arg;
        double v = search(per_user, arg);
        // refine around the best cell
        std::vector<std::vector<std::vector<double>>> refined(static_cast<std::size_t>(J));
        const double h = 1.0 / (levels - 1);
        long long rcombos = 1;
        for (int j = 0; j < J; ++j) {
            const auto& ks = claimed[static_cast<std::size_t>(j)];
            std::vector<double> c(ks.size());
            for (std::size_t i = 0; i < ks.size(); ++i) c[i] = arg.P(ks[i], j) / pmax[static_cast<std::size_t>(j)];
            detail::simplex_grid(static_cast<int>(ks.size()), levels, refined[static_cast<std::size_t>(j)], &c, h);
            // keep the coarse optimum itself in the refined grid
            refined[static_cast<std::size_t>(j)].push_back(c);
            rcombos *= static_cast<long long>(refined[static_cast<std::size_t>(j)].size());
        }
        work += rcombos;
        if (work > guard) throw enumeration_too_large("oracle enumeration exceeds guard");
        Allocation arg2;
        const double v2 = search(refined, arg2);
        if (v2 > v) {
            v = v2;
            arg = arg2;
        }
        if (v > best.objective) {
            best.objective = v;
            best.allocation = arg;
        }
    }
    return best;
}

}  // namespace scma
