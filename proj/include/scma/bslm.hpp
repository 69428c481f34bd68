#pragma once

// Joint subcarrier/power allocation by block successive lower-bound
// maximization. The binary assignment is relaxed to [0,1] with a concave
// quadratic penalty lambda * sum(f^2 - f); each block update maximizes a
// concave minorant that is tangent to the penalized objective at the current
// iterate, so the penalized objective never decreases across cycles.

#include <scma/channel.hpp>
#include <scma/convex_kernel.hpp>
#include <scma/rng.hpp>
#include <scma/system_model.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace scma {

// ---------------------------------------------------------------------------
// Penalty
// ---------------------------------------------------------------------------

/// lambda * sum(f^2 - f): zero on binary F, negative otherwise.
inline double penalty(const Matrix& F, double lambda) {
    return lambda * (F.array().square() - F.array()).sum();
}

inline Matrix penalty_gradient(const Matrix& F, double lambda) {
    return (lambda * (2.0 * F.array() - 1.0)).matrix();
}

// ---------------------------------------------------------------------------
// Surrogate context and objectives
// ---------------------------------------------------------------------------

struct SurrogateContext {
    Matrix anchor_F;
    Matrix anchor_P;  ///< watts
    Matrix H_abs2;    ///< |h_{k,j}|^2
    double sigma2 = 1.0;
    double lambda_penalty = 20.0;
    std::vector<int> decode_order;  ///< empty means 0..J-1
    std::vector<double> pmax_w;     ///< per-user budget, watts

    int K() const { return static_cast<int>(H_abs2.rows()); }
    int J() const { return static_cast<int>(H_abs2.cols()); }

    std::vector<int> order() const {
        if (!decode_order.empty()) return decode_order;
        std::vector<int> o(static_cast<std::size_t>(J()));
        for (int j = 0; j < J(); ++j) o[static_cast<std::size_t>(j)] = j;
        return o;
    }

    /// rank[j] = position of user j in the decode order.
    std::vector<int> rank() const {
        const auto o = order();
        std::vector<int> r(o.size());
        for (std::size_t i = 0; i < o.size(); ++i) r[static_cast<std::size_t>(o[i])] = static_cast<int>(i);
        return r;
    }
};

inline SurrogateContext make_context(const Matrix& F, const Matrix& P, const Matrix& gain2, const SystemConfig& cfg) {
    SurrogateContext ctx;
    ctx.anchor_F = F;
    ctx.anchor_P = P;
    ctx.H_abs2 = gain2;
    ctx.sigma2 = noise_power(cfg);
    ctx.lambda_penalty = cfg.lambda_penalty;
    ctx.decode_order = cfg.order();
    ctx.pmax_w = pmax_watts(cfg);
    return ctx;
}

/// Sum rate plus penalty; the relaxed Max-SR objective.
inline double maxsr_penalized(const Matrix& F, const Matrix& P, const SurrogateContext& ctx) {
    return sum_rate(ctx.H_abs2, {F, P}, ctx.sigma2) + penalty(F, ctx.lambda_penalty);
}

/// Smallest SIC user rate plus penalty; the relaxed Max-Min objective.
inline double maxmin_penalized(const Matrix& F, const Matrix& P, const SurrogateContext& ctx) {
    const auto rates = per_user_rates(ctx.H_abs2, {F, P}, ctx.sigma2, ctx.order());
    return rates.per_user.minCoeff() + penalty(F, ctx.lambda_penalty);
}

/// F-block minorant for Max-SR: exact rate term with the anchor powers plus
/// the penalty linearized at the anchor assignment.
inline double maxsr_surrogate_value_grad(const Matrix& F, const SurrogateContext& ctx, Matrix* grad = nullptr) {
    const int K = ctx.K();
    const int J = ctx.J();
    const Matrix gpen = penalty_gradient(ctx.anchor_F, ctx.lambda_penalty);
    double value = penalty(ctx.anchor_F, ctx.lambda_penalty) + (gpen.array() * (F - ctx.anchor_F).array()).sum();
    if (grad) *grad = gpen;
    for (int k = 0; k < K; ++k) {
        double rx = 0.0;
        for (int j = 0; j < J; ++j) rx += ctx.H_abs2(k, j) * F(k, j) * ctx.anchor_P(k, j) / ctx.sigma2;
        value += std::log1p(rx);
        if (grad)
            for (int j = 0; j < J; ++j) (*grad)(k, j) += ctx.H_abs2(k, j) * ctx.anchor_P(k, j) / ctx.sigma2 / (1.0 + rx);
    }
    return value;
}

/// theta_j(F) = sum_k ln(sigma2 + sum over users decoded before j of |h|^2 f p),
/// with P taken from the anchor. Gradient is nonzero only in earlier columns.
inline double theta_value_grad_F(int j, const Matrix& F, const SurrogateContext& ctx, Matrix* grad = nullptr) {
    const int K = ctx.K();
    const int J = ctx.J();
    if (j < 0 || j >= J) throw parameter_error("user index out of range");
    const auto rank = ctx.rank();
    const int rj = rank[static_cast<std::size_t>(j)];
    if (grad) grad->setZero(K, J);
    double value = 0.0;
    for (int k = 0; k < K; ++k) {
        double s = 0.0;
        for (int i = 0; i < J; ++i)
            if (rank[static_cast<std::size_t>(i)] < rj) s += ctx.H_abs2(k, i) * F(k, i) * ctx.anchor_P(k, i);
        value += std::log(ctx.sigma2 + s);
        if (grad)
            for (int i = 0; i < J; ++i)
                if (rank[static_cast<std::size_t>(i)] < rj) (*grad)(k, i) = ctx.H_abs2(k, i) * ctx.anchor_P(k, i) / (ctx.sigma2 + s);
    }
    return value;
}

/// theta_j as a function of P with F taken from the anchor.
inline double theta_value_grad_P(int j, const Matrix& P, const SurrogateContext& ctx, Matrix* grad = nullptr) {
    const int K = ctx.K();
    const int J = ctx.J();
    if (j < 0 || j >= J) throw parameter_error("user index out of range");
    const auto rank = ctx.rank();
    const int rj = rank[static_cast<std::size_t>(j)];
    if (grad) grad->setZero(K, J);
    double value = 0.0;
    for (int k = 0; k < K; ++k) {
        double s = 0.0;
        for (int i = 0; i < J; ++i)
            if (rank[static_cast<std::size_t>(i)] < rj) s += ctx.H_abs2(k, i) * ctx.anchor_F(k, i) * P(k, i);
        value += std::log(ctx.sigma2 + s);
        if (grad)
            for (int i = 0; i < J; ++i)
                if (rank[static_cast<std::size_t>(i)] < rj) (*grad)(k, i) = ctx.H_abs2(k, i) * ctx.anchor_F(k, i) / (ctx.sigma2 + s);
    }
    return value;
}

namespace detail {

/// Per-user minorant terms of the Max-Min objective. `in_F` selects the
/// F block (P fixed at the anchor) or the P block (F fixed at the anchor).
/// Values are computed in SNR form to avoid cancelling the large ln(sigma2).
inline Vector maxmin_terms(const Matrix& X, const SurrogateContext& ctx, bool in_F) {
    const int K = ctx.K();
    const int J = ctx.J();
    const auto order = ctx.order();
    const Matrix& fixed = in_F ? ctx.anchor_P : ctx.anchor_F;
    const Matrix& anchor = in_F ? ctx.anchor_F : ctx.anchor_P;
    Vector terms = Vector::Zero(J);
    for (int k = 0; k < K; ++k) {
        double s_new = 0.0;     // interference-plus-signal at X, in SNR units
        double s_anchor = 0.0;  // interference at the anchor, users before j
        double lin = 0.0;       // gradient of theta_j at the anchor dotted with (X - anchor)
        for (int j : order) {
            const double w = ctx.H_abs2(k, j) * fixed(k, j) / ctx.sigma2;
            const double before = s_anchor;
            s_new += w * X(k, j);
            terms(j) += std::log1p(s_new) - std::log1p(before) - lin / (1.0 + before);
            s_anchor += w * anchor(k, j);
            lin += w * (X(k, j) - anchor(k, j));
        }
    }
    return terms;
}

}  // namespace detail

/// Max-Min F-block minorant: min over users of the linearized SIC rates, plus
/// the linearized penalty.
inline double maxmin_surrogate_F(const Matrix& F, const SurrogateContext& ctx) {
    const Matrix gpen = penalty_gradient(ctx.anchor_F, ctx.lambda_penalty);
    return detail::maxmin_terms(F, ctx, true).minCoeff() + penalty(ctx.anchor_F, ctx.lambda_penalty) +
           (gpen.array() * (F - ctx.anchor_F).array()).sum();
}

/// Max-Min P-block minorant. The penalty depends only on F and is constant here.
inline double maxmin_surrogate_P(const Matrix& P, const SurrogateContext& ctx) {
    return detail::maxmin_terms(P, ctx, false).minCoeff() + penalty(ctx.anchor_F, ctx.lambda_penalty);
}

// ---------------------------------------------------------------------------
// Block updates
// ---------------------------------------------------------------------------

struct BlockResult {
    Matrix value;  ///< new F or new P (watts)
    int iterations = 0;
    bool improved = false;  ///< false when the anchor was kept
    SolveStatus status = SolveStatus::converged;
};

/// Thrown when an inner solve cannot produce a point.
class block_update_error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

namespace detail {

inline Eigen::Index flat(int k, int j, int K) { return static_cast<Eigen::Index>(k) + static_cast<Eigen::Index>(K) * j; }

/// Linear constraints of the F block: column sums, row sums, and the power
/// budget with P fixed (normalized by each user's budget). `extra` appends
/// zero columns for auxiliary variables.
inline void f_block_constraints(const SurrogateContext& ctx, const SystemConfig& cfg, int extra, ConcaveProgram& prog) {
    const int K = ctx.K();
    const int J = ctx.J();
    const int n = K * J + extra;
    prog.ineq_A = Matrix::Zero(2 * J + K, n);
    prog.ineq_b = Vector::Zero(2 * J + K);
    for (int j = 0; j < J; ++j) {
        for (int k = 0; k < K; ++k) {
            prog.ineq_A(j, flat(k, j, K)) = 1.0;
            prog.ineq_A(J + K + j, flat(k, j, K)) = ctx.anchor_P(k, j) / ctx.pmax_w[static_cast<std::size_t>(j)];
        }
        prog.ineq_b(j) = cfg.N;
        prog.ineq_b(J + K + j) = 1.0;
    }
    for (int k = 0; k < K; ++k) {
        for (int j = 0; j < J; ++j) prog.ineq_A(J + k, flat(k, j, K)) = 1.0;
        prog.ineq_b(J + k) = cfg.d_f;
    }
    prog.lower = Vector::Zero(n);
    prog.upper = Vector::Ones(n);
    for (int e = K * J; e < n; ++e) {
        prog.lower(e) = -std::numeric_limits<double>::infinity();
        prog.upper(e) = std::numeric_limits<double>::infinity();
    }
}

/// Linear constraints of the P block in budget-normalized powers q = p / P_max.
inline void p_block_constraints(const SurrogateContext& ctx, int extra, ConcaveProgram& prog) {
    const int K = ctx.K();
    const int J = ctx.J();
    const int n = K * J + extra;
    prog.ineq_A = Matrix::Zero(J, n);
    prog.ineq_b = Vector::Ones(J);
    for (int j = 0; j < J; ++j)
        for (int k = 0; k < K; ++k) prog.ineq_A(j, flat(k, j, K)) = ctx.anchor_F(k, j);
    prog.lower = Vector::Zero(n);
    prog.upper = Vector::Ones(n);
    for (int e = K * J; e < n; ++e) {
        prog.lower(e) = -std::numeric_limits<double>::infinity();
        prog.upper(e) = std::numeric_limits<double>::infinity();
    }
}

/// Strictly interior warm start for the F block: pull the anchor toward a
/// small uniform assignment.
inline Vector f_block_start(const SurrogateContext& ctx, const SystemConfig& cfg) {
    const int K = ctx.K();
    const int J = ctx.J();
    const double c = 0.5 * std::min({static_cast<double>(cfg.N) / K, static_cast<double>(cfg.d_f) / J, 1.0 / K});
    Vector x(K * J);
    for (int j = 0; j < J; ++j)
        for (int k = 0; k < K; ++k) x(flat(k, j, K)) = 0.9 * std::clamp(ctx.anchor_F(k, j), 0.0, 1.0) + 0.1 * c;
    return x;
}

inline Vector p_block_start(const SurrogateContext& ctx) {
    const int K = ctx.K();
    const int J = ctx.J();
    Vector x(K * J);
    for (int j = 0; j < J; ++j)
        for (int k = 0; k < K; ++k) {
            const double q = ctx.anchor_P(k, j) / ctx.pmax_w[static_cast<std::size_t>(j)];
            x(flat(k, j, K)) = 0.9 * std::clamp(q, 0.0, 1.0) + 0.1 * 0.5 / K;
        }
    return x;
}

inline Matrix unflatten(const Vector& x, int K, int J) {
    return Eigen::Map<const Matrix>(x.data(), K, J);
}

/// Concave sum of logs: sum_k log1p(sum_j w_kj x_kj) over the first K*J
/// entries of the variable vector, with exact gradient and Hessian.
/// `mask` (K x J, 0/1) limits which users enter each subcarrier's sum.
inline double log_sum_value_grad(const Vector& x, const Matrix& w, const Matrix* mask, Vector& g) {
    const auto K = w.rows();
    const auto J = w.cols();
    g.setZero();
    double value = 0.0;
    for (Eigen::Index k = 0; k < K; ++k) {
        double r = 1.0;
        for (Eigen::Index j = 0; j < J; ++j)
            if (!mask || (*mask)(k, j) != 0.0) r += w(k, j) * x(k + K * j);
        value += std::log(r);
        for (Eigen::Index j = 0; j < J; ++j)
            if (!mask || (*mask)(k, j) != 0.0) g(k + K * j) = w(k, j) / r;
    }
    return value;
}

inline void log_sum_hessian(const Vector& x, const Matrix& w, const Matrix* mask, Matrix& h) {
    const auto K = w.rows();
    const auto J = w.cols();
    for (Eigen::Index k = 0; k < K; ++k) {
        double r = 1.0;
        for (Eigen::Index j = 0; j < J; ++j)
            if (!mask || (*mask)(k, j) != 0.0) r += w(k, j) * x(k + K * j);
        for (Eigen::Index a = 0; a < J; ++a) {
            if (mask && (*mask)(k, a) == 0.0) continue;
            for (Eigen::Index b = 0; b < J; ++b) {
                if (mask && (*mask)(k, b) == 0.0) continue;
                h(k + K * a, k + K * b) -= w(k, a) * w(k, b) / (r * r);
            }
        }
    }
}

/// Builds the J epigraph constraints term_j(X) - t >= 0 of a Max-Min block.
/// `w` holds SNR weights for the block variable; the constant and linear
/// parts come from linearizing theta_j at the anchor.
inline std::vector<SmoothFunction> maxmin_epigraph_constraints(const SurrogateContext& ctx, const Matrix& w,
                                                               const Matrix& anchor_x) {
    const int K = ctx.K();
    const int J = ctx.J();
    const auto rank = ctx.rank();
    const Eigen::Index n = static_cast<Eigen::Index>(K) * J + 1;
    std::vector<SmoothFunction> out;
    for (int j = 0; j < J; ++j) {
        const int rj = rank[static_cast<std::size_t>(j)];
        Matrix upto = Matrix::Zero(K, J);   // users decoded up to and including j
        Matrix before = Matrix::Zero(K, J); // users decoded before j
        for (int i = 0; i < J; ++i) {
            if (rank[static_cast<std::size_t>(i)] <= rj) upto.col(i).setOnes();
            if (rank[static_cast<std::size_t>(i)] < rj) before.col(i).setOnes();
        }
        // theta_j at the anchor (SNR form) and its gradient
        double theta0 = 0.0;
        Vector lin = Vector::Zero(n);
        Vector xa(n);
        xa.head(K * J) = Eigen::Map<const Vector>(anchor_x.data(), K * J);
        xa(n - 1) = 0.0;
        for (int k = 0; k < K; ++k) {
            double s = 0.0;
            for (int i = 0; i < J; ++i)
                if (before(k, i) != 0.0) s += w(k, i) * anchor_x(k, i);
            theta0 += std::log1p(s);
            for (int i = 0; i < J; ++i)
                if (before(k, i) != 0.0) lin(flat(k, i, K)) = w(k, i) / (1.0 + s);
        }
        const double offset = theta0 - lin.dot(xa);
        SmoothFunction c;
        c.value_grad = [w, upto, lin, offset, n](const Vector& z, Vector& g) {
            Vector gl(n);
            const double v = log_sum_value_grad(z, w, &upto, gl);
            g = gl - lin;
            g(n - 1) = -1.0;
            return v - offset - lin.dot(z) - z(n - 1);
        };
        c.hessian = [w, upto](const Vector& z, Matrix& h) { log_sum_hessian(z, w, &upto, h); };
        out.push_back(std::move(c));
    }
    return out;
}

inline void check_block_result(const SolveResult& r, const char* block) {
    if (r.status == SolveStatus::infeasible || r.x_opt.size() == 0)
        throw block_update_error(std::string(block) + " update: inner solver found no feasible point");
}

}  // namespace detail

/// Max-SR F block: maximize the Max-SR minorant over the relaxed assignment
/// polytope with P fixed at the anchor.
inline BlockResult update_F_maxsr(const SurrogateContext& ctx, const SystemConfig& cfg) {
    const int K = ctx.K();
    const int J = ctx.J();
    const Matrix w = (ctx.H_abs2.array() * ctx.anchor_P.array() / ctx.sigma2).matrix();
    const Matrix gpen = penalty_gradient(ctx.anchor_F, ctx.lambda_penalty);
    const Vector lin = Eigen::Map<const Vector>(gpen.data(), K * J);

    ConcaveProgram prog;
    prog.dim = K * J;
    detail::f_block_constraints(ctx, cfg, 0, prog);
    prog.objective.value_grad = [w, lin](const Vector& x, Vector& g) {
        const double v = detail::log_sum_value_grad(x, w, nullptr, g);
        g += lin;
        return v + lin.dot(x);
    };
    prog.objective.hessian = [w](const Vector& x, Matrix& h) { detail::log_sum_hessian(x, w, nullptr, h); };

    const SolveResult r = maximize(prog, cfg.solver_eps, detail::f_block_start(ctx, cfg));
    detail::check_block_result(r, "F");
    Matrix Fn = detail::unflatten(r.x_opt, K, J);
    BlockResult out{Fn, r.iterations, true, r.status};
    if (maxsr_surrogate_value_grad(Fn, ctx) < maxsr_surrogate_value_grad(ctx.anchor_F, ctx)) {
        out.value = ctx.anchor_F;
        out.improved = false;
    }
    return out;
}

/// Max-SR P block: water-filling style sum-rate maximization with F fixed.
/// The penalty is constant in this block.
inline BlockResult update_P_maxsr(const SurrogateContext& ctx, const SystemConfig& cfg) {
    const int K = ctx.K();
    const int J = ctx.J();
    Matrix w(K, J);
    for (int j = 0; j < J; ++j)
        for (int k = 0; k < K; ++k)
            w(k, j) = ctx.H_abs2(k, j) * ctx.anchor_F(k, j) * ctx.pmax_w[static_cast<std::size_t>(j)] / ctx.sigma2;

    ConcaveProgram prog;
    prog.dim = K * J;
    detail::p_block_constraints(ctx, 0, prog);
    prog.objective.value_grad = [w](const Vector& x, Vector& g) { return detail::log_sum_value_grad(x, w, nullptr, g); };
    prog.objective.hessian = [w](const Vector& x, Matrix& h) { detail::log_sum_hessian(x, w, nullptr, h); };

    const SolveResult r = maximize(prog, cfg.solver_eps, detail::p_block_start(ctx));
    detail::check_block_result(r, "P");
    Matrix Pn = detail::unflatten(r.x_opt, K, J);
    for (int j = 0; j < J; ++j) Pn.col(j) *= ctx.pmax_w[static_cast<std::size_t>(j)];
    BlockResult out{Pn, r.iterations, true, r.status};
    if (sum_rate(ctx.H_abs2, {ctx.anchor_F, Pn}, ctx.sigma2) < sum_rate(ctx.H_abs2, {ctx.anchor_F, ctx.anchor_P}, ctx.sigma2)) {
        out.value = ctx.anchor_P;
        out.improved = false;
    }
    return out;
}

/// Max-Min F block in epigraph form: maximize t + <grad penalty, F> subject
/// to t <= term_j(F) for every user and the relaxed assignment constraints.
inline BlockResult update_F_maxmin(const SurrogateContext& ctx, const SystemConfig& cfg) {
    const int K = ctx.K();
    const int J = ctx.J();
    const int n = K * J + 1;
    const Matrix w = (ctx.H_abs2.array() * ctx.anchor_P.array() / ctx.sigma2).matrix();
    const Matrix gpen = penalty_gradient(ctx.anchor_F, ctx.lambda_penalty);
    Vector lin = Vector::Zero(n);
    lin.head(K * J) = Eigen::Map<const Vector>(gpen.data(), K * J);
    lin(n - 1) = 1.0;

    ConcaveProgram prog;
    prog.dim = n;
    detail::f_block_constraints(ctx, cfg, 1, prog);
    prog.concave_ge0 = detail::maxmin_epigraph_constraints(ctx, w, ctx.anchor_F);
    prog.objective.value_grad = [lin](const Vector& x, Vector& g) {
        g = lin;
        return lin.dot(x);
    };
    prog.objective.hessian = [](const Vector&, Matrix&) {};

    Vector start(n);
    start.head(K * J) = detail::f_block_start(ctx, cfg);
    const Matrix F0 = detail::unflatten(start.head(K * J), K, J);
    const double t0 = detail::maxmin_terms(F0, ctx, true).minCoeff();
    // the optimum's t cannot fall below this: the linear part moves by at most sum|grad|
    const double t_floor = std::min(detail::maxmin_terms(ctx.anchor_F, ctx, true).minCoeff() - gpen.cwiseAbs().sum(), t0) - 2.0;
    prog.lower(n - 1) = t_floor;
    start(n - 1) = t0 - 1.0;

    const SolveResult r = maximize(prog, cfg.solver_eps, start);
    detail::check_block_result(r, "F");
    Matrix Fn = detail::unflatten(r.x_opt.head(K * J), K, J);
    BlockResult out{Fn, r.iterations, true, r.status};
    if (maxmin_surrogate_F(Fn, ctx) < maxmin_surrogate_F(ctx.anchor_F, ctx)) {
        out.value = ctx.anchor_F;
        out.improved = false;
    }
    return out;
}

/// Max-Min P block in epigraph form over budget-normalized powers.
inline BlockResult update_P_maxmin(const SurrogateContext& ctx, const SystemConfig& cfg) {
    const int K = ctx.K();
    const int J = ctx.J();
    const int n = K * J + 1;
    Matrix w(K, J);
    Matrix q_anchor(K, J);
    for (int j = 0; j < J; ++j) {
        const double pm = ctx.pmax_w[static_cast<std::size_t>(j)];
        for (int k = 0; k < K; ++k) {
            w(k, j) = ctx.H_abs2(k, j) * ctx.anchor_F(k, j) * pm / ctx.sigma2;
            q_anchor(k, j) = ctx.anchor_P(k, j) / pm;
        }
    }

    ConcaveProgram prog;
    prog.dim = n;
    detail::p_block_constraints(ctx, 1, prog);
    prog.concave_ge0 = detail::maxmin_epigraph_constraints(ctx, w, q_anchor);
    prog.objective.value_grad = [n](const Vector& x, Vector& g) {
        g.setZero();
        g(n - 1) = 1.0;
        return x(n - 1);
    };
    prog.objective.hessian = [](const Vector&, Matrix&) {};

    Vector start(n);
    start.head(K * J) = detail::p_block_start(ctx);
    Matrix P0 = detail::unflatten(start.head(K * J), K, J);
    for (int j = 0; j < J; ++j) P0.col(j) *= ctx.pmax_w[static_cast<std::size_t>(j)];
    const double t0 = detail::maxmin_terms(P0, ctx, false).minCoeff();
    const double t_floor = std::min(detail::maxmin_terms(ctx.anchor_P, ctx, false).minCoeff(), t0) - 2.0;
    prog.lower(n - 1) = t_floor;
    start(n - 1) = t0 - 1.0;

    const SolveResult r = maximize(prog, cfg.solver_eps, start);
    detail::check_block_result(r, "P");
    Matrix Pn = detail::unflatten(r.x_opt.head(K * J), K, J);
    for (int j = 0; j < J; ++j) Pn.col(j) *= ctx.pmax_w[static_cast<std::size_t>(j)];
    BlockResult out{Pn, r.iterations, true, r.status};
    if (maxmin_surrogate_P(Pn, ctx) < maxmin_surrogate_P(ctx.anchor_P, ctx)) {
        out.value = ctx.anchor_P;
        out.improved = false;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Rounding
// ---------------------------------------------------------------------------

enum class Criterion { sum_rate, min_rate };

inline const char* to_string(Criterion c) { return c == Criterion::sum_rate ? "sum-rate" : "min-rate"; }

inline double criterion_value(Criterion c, const Matrix& gain2, const Allocation& a, double sigma2,
                              const std::vector<int>& order) {
    if (c == Criterion::sum_rate) return sum_rate(gain2, a, sigma2);
    return per_user_rates(gain2, a, sigma2, order).per_user.minCoeff();
}

/// Thresholds F at 0.5, then clears entries of over-full columns and rows one
/// at a time, always choosing the entry whose removal costs the least
/// objective (ties broken by sum rate, then by smaller relaxed value).
inline FactorGraph binarize_and_repair(const Matrix& F_relaxed, const SystemConfig& cfg, const Matrix& gain2,
                                       const Matrix& P, Criterion criterion = Criterion::sum_rate) {
    const int K = static_cast<int>(F_relaxed.rows());
    const int J = static_cast<int>(F_relaxed.cols());
    Matrix B = (F_relaxed.array() >= 0.5).cast<double>().matrix();
    const double sigma2 = noise_power(cfg);
    const auto order = cfg.order();

    for (;;) {
        std::vector<std::pair<int, int>> candidates;
        for (int j = 0; j < J; ++j)
            if (B.col(j).sum() > cfg.N)
                for (int k = 0; k < K; ++k)
                    if (B(k, j) == 1.0) candidates.emplace_back(k, j);
        for (int k = 0; k < K; ++k)
            if (B.row(k).sum() > cfg.d_f)
                for (int j = 0; j < J; ++j)
                    if (B(k, j) == 1.0) candidates.emplace_back(k, j);
        if (candidates.empty()) break;

        const double base = criterion_value(criterion, gain2, {B, P}, sigma2, order);
        const double base_sr = sum_rate(gain2, {B, P}, sigma2);
        std::pair<int, int> best{-1, -1};
        double best_loss = std::numeric_limits<double>::infinity();
        double best_sr_loss = std::numeric_limits<double>::infinity();
        double best_f = std::numeric_limits<double>::infinity();
        for (auto [k, j] : candidates) {
            B(k, j) = 0.0;
            const double loss = base - criterion_value(criterion, gain2, {B, P}, sigma2, order);
            const double sr_loss = base_sr - sum_rate(gain2, {B, P}, sigma2);
            B(k, j) = 1.0;
            const double tol = 1e-12 * std::max(1.0, std::abs(base));
            bool better = loss < best_loss - tol;
            if (!better && std::abs(loss - best_loss) <= tol) {
                better = sr_loss < best_sr_loss - 1e-12 * std::max(1.0, base_sr) ||
                         (std::abs(sr_loss - best_sr_loss) <= 1e-12 * std::max(1.0, base_sr) && F_relaxed(k, j) < best_f);
            }
            if (better) {
                best = {k, j};
                best_loss = loss;
                best_sr_loss = sr_loss;
                best_f = F_relaxed(k, j);
            }
        }
        B(best.first, best.second) = 0.0;
    }
    return {B};
}

/// Zeroes powers on unassigned entries and scales any user whose budget is
/// exceeded back onto it.
inline Matrix fit_power_to_assignment(const Matrix& F, const Matrix& P, const std::vector<double>& pmax_w) {
    Matrix out = P.cwiseMax(0.0);
    for (Eigen::Index j = 0; j < F.cols(); ++j) {
        for (Eigen::Index k = 0; k < F.rows(); ++k)
            if (F(k, j) == 0.0) out(k, j) = 0.0;
        const double used = F.col(j).dot(out.col(j));
        const double budget = pmax_w[static_cast<std::size_t>(j)];
        if (used > budget) out.col(j) *= budget / used;
        // rounding can leave the scaled sum one ulp above the budget
        while (F.col(j).dot(out.col(j)) > budget) out.col(j) *= (1.0 - 1e-15);
    }
    return out;
}

/// Gives every assigned entry a share of its user's full budget: the
/// relaxed powers on assigned entries are rescaled to sum to P_max, or split
/// equally when they are all zero.
inline Matrix spread_budget(const Matrix& B, const Matrix& P, const std::vector<double>& pmax_w) {
    Matrix out = Matrix::Zero(B.rows(), B.cols());
    for (Eigen::Index j = 0; j < B.cols(); ++j) {
        const double n = B.col(j).sum();
        if (n == 0.0) continue;
        const double budget = pmax_w[static_cast<std::size_t>(j)];
        const Vector share = B.col(j).cwiseProduct(P.col(j).cwiseMax(0.0));
        const double used = share.sum();
        out.col(j) = used > 0.0 ? Vector(share * (budget / used)) : Vector(B.col(j) * (budget / n));
    }
    return fit_power_to_assignment(B, out, pmax_w);
}

/// Greedily switches on unassigned entries with spare row and column
/// capacity while doing so improves the criterion (sum rate breaks ties).
/// Penalized ascent can drive whole users to zero; this recovers them.
inline FactorGraph complete_assignment(const Matrix& B_in, const SystemConfig& cfg, const Matrix& gain2, const Matrix& P,
                                       Criterion criterion = Criterion::sum_rate) {
    Matrix B = B_in;
    const auto pmax = pmax_watts(cfg);
    const double sigma2 = noise_power(cfg);
    const auto order = cfg.order();
    auto score = [&](const Matrix& F) {
        const Allocation a{F, spread_budget(F, P, pmax)};
        return std::pair{criterion_value(criterion, gain2, a, sigma2, order), sum_rate(gain2, a, sigma2)};
    };
    auto cur = score(B);
    for (;;) {
        std::pair<int, int> best{-1, -1};
        auto best_score = cur;
        for (int j = 0; j < B.cols(); ++j) {
            if (B.col(j).sum() >= cfg.N) continue;
            for (int k = 0; k < B.rows(); ++k) {
                if (B(k, j) != 0.0 || B.row(k).sum() >= cfg.d_f) continue;
                B(k, j) = 1.0;
                const auto sc = score(B);
                B(k, j) = 0.0;
                const double tol = 1e-12 * std::max(1.0, std::abs(best_score.first));
                const bool better = sc.first > best_score.first + tol ||
                                    (sc.first >= best_score.first - tol && sc.second > best_score.second * (1.0 + 1e-12));
                if (better) {
                    best = {k, j};
                    best_score = sc;
                }
            }
        }
        if (best.first < 0) break;
        B(best.first, best.second) = 1.0;
        cur = best_score;
    }
    return {B};
}

// ---------------------------------------------------------------------------
// Full algorithms
// ---------------------------------------------------------------------------

struct CycleRecord {
    int cycle = 0;
    double penalized = 0.0;      ///< relaxed objective plus penalty at (F, P)
    double objective = 0.0;      ///< relaxed objective without penalty
    double binary_objective = 0.0;  ///< objective after rounding F and fitting P
    double dF = 0.0;             ///< ||F_t - F_{t-1}||_F
    double dP = 0.0;             ///< ||(P_t - P_{t-1}) / P_max||_F
    int inner_F = 0;
    int inner_P = 0;
};

struct BslmTrace {
    double initial_penalized = 0.0;
    std::vector<CycleRecord> cycles;
};

struct BslmResult {
    Allocation allocation;  ///< binary and feasible
    Allocation relaxed;     ///< last relaxed iterate
    BslmTrace trace;
    bool converged = false;
    int cycles = 0;
    double objective = 0.0;  ///< criterion value of `allocation`
    /// Every relaxed iterate, when requested.
    std::vector<Allocation> iterates;
};

struct BslmOptions {
    /// Overrides the random initial point.
    std::optional<Allocation> initial;
    bool keep_iterates = false;
};

/// Random feasible start. F entries are drawn around the uniform fractional
/// point fbar = min(N/K, d_f/J) with relative spread cfg.init_spread, then
/// scaled down per column and row until both cardinality limits hold. P is
/// uniform in [0, P_max] per entry, scaled per user to fit the budget.
inline Allocation random_initial_point(const SystemConfig& cfg, Rng& rng) {
    const int K = cfg.K;
    const int J = cfg.J;
    const double fbar = std::min(static_cast<double>(cfg.N) / K, static_cast<double>(cfg.d_f) / J);
    const double half_width = cfg.init_spread * std::min(fbar, 1.0 - fbar);
    Matrix F(K, J);
    for (int j = 0; j < J; ++j)
        for (int k = 0; k < K; ++k) F(k, j) = fbar + half_width * (2.0 * rng.uniform() - 1.0);
    for (int pass = 0; pass < 50; ++pass) {
        bool ok = true;
        for (int j = 0; j < J; ++j) {
            const double s = F.col(j).sum();
            if (s > cfg.N) { F.col(j) *= cfg.N / s; ok = false; }
        }
        for (int k = 0; k < K; ++k) {
            const double s = F.row(k).sum();
            if (s > cfg.d_f) { F.row(k) *= cfg.d_f / s; ok = false; }
        }
        if (ok) break;
    }
    const auto pmax = pmax_watts(cfg);
    Matrix P(K, J);
    for (int j = 0; j < J; ++j) {
        for (int k = 0; k < K; ++k) P(k, j) = rng.uniform() * pmax[static_cast<std::size_t>(j)];
        const double used = F.col(j).dot(P.col(j));
        if (used > pmax[static_cast<std::size_t>(j)]) P.col(j) *= pmax[static_cast<std::size_t>(j)] / used;
    }
    return {F, P};
}

namespace detail {

inline double normalized_power_change(const Matrix& a, const Matrix& b, const std::vector<double>& pmax) {
    double s = 0.0;
    for (Eigen::Index j = 0; j < a.cols(); ++j) s += ((a.col(j) - b.col(j)) / pmax[static_cast<std::size_t>(j)]).squaredNorm();
    return std::sqrt(s);
}

inline bool should_stop(const SystemConfig& cfg, double dF, double dP) {
    if (cfg.stop_rule == StopRule::both_below) return dF <= cfg.eps_F && dP <= cfg.eps_P;
    return dF <= cfg.eps_F || dP <= cfg.eps_P;
}

inline BslmResult run_bslm(const Matrix& gain2, const SystemConfig& cfg, Rng& rng, Criterion criterion,
                           const BslmOptions& opts) {
    cfg.validate();
    if (gain2.rows() != cfg.K || gain2.cols() != cfg.J) throw parameter_error("channel dimensions disagree with config");
    const auto pmax = pmax_watts(cfg);
    const bool sr = criterion == Criterion::sum_rate;

    Allocation cur = opts.initial ? *opts.initial : random_initial_point(cfg, rng);
    if (cur.F.rows() != cfg.K || cur.F.cols() != cfg.J || cur.P.rows() != cfg.K || cur.P.cols() != cfg.J)
        throw parameter_error("initial allocation dimensions disagree with config");
    const double sigma2 = noise_power(cfg);
    const auto order = cfg.order();

    auto penalized = [&](const Allocation& a) {
        const auto ctx = make_context(a.F, a.P, gain2, cfg);
        return sr ? maxsr_penalized(a.F, a.P, ctx) : maxmin_penalized(a.F, a.P, ctx);
    };
    auto binary_of = [&](const Allocation& a) {
        Matrix B = binarize_and_repair(a.F, cfg, gain2, a.P, criterion).entries;
        if (!cfg.complete_assignment) return Allocation{B, fit_power_to_assignment(B, a.P, pmax)};
        B = complete_assignment(B, cfg, gain2, a.P, criterion).entries;
        return Allocation{B, spread_budget(B, a.P, pmax)};
    };

    BslmResult res;
    res.trace.initial_penalized = penalized(cur);
    if (opts.keep_iterates) res.iterates.push_back(cur);

    for (int cycle = 1; cycle <= cfg.max_cycles; ++cycle) {
        CycleRecord rec;
        rec.cycle = cycle;
        try {
            const auto ctxF = make_context(cur.F, cur.P, gain2, cfg);
            const BlockResult bf = sr ? update_F_maxsr(ctxF, cfg) : update_F_maxmin(ctxF, cfg);
            const auto ctxP = make_context(bf.value, cur.P, gain2, cfg);
            const BlockResult bp = sr ? update_P_maxsr(ctxP, cfg) : update_P_maxmin(ctxP, cfg);
            rec.inner_F = bf.iterations;
            rec.inner_P = bp.iterations;
            rec.dF = (bf.value - cur.F).norm();
            rec.dP = normalized_power_change(bp.value, cur.P, pmax);
            cur = {bf.value, bp.value};
        } catch (const block_update_error& e) {
            throw block_update_error(std::string(e.what()) + " (cycle " + std::to_string(cycle) + ")");
        }
        rec.penalized = penalized(cur);
        rec.objective = criterion_value(criterion, gain2, cur, sigma2, order);
        rec.binary_objective = criterion_value(criterion, gain2, binary_of(cur), sigma2, order);
        res.trace.cycles.push_back(rec);
        if (opts.keep_iterates) res.iterates.push_back(cur);
        res.cycles = cycle;
        if (should_stop(cfg, rec.dF, rec.dP)) {
            res.converged = true;
            break;
        }
    }
    res.relaxed = cur;

    // round, then re-optimize power for the fixed binary assignment
    Allocation fin = binary_of(cur);
    double best = criterion_value(criterion, gain2, fin, sigma2, order);
    for (int it = 0; it < cfg.max_cycles; ++it) {
        const auto ctx = make_context(fin.F, fin.P, gain2, cfg);
        const BlockResult bp = sr ? update_P_maxsr(ctx, cfg) : update_P_maxmin(ctx, cfg);
        Allocation next{fin.F, fit_power_to_assignment(fin.F, bp.value, pmax)};
        const double v = criterion_value(criterion, gain2, next, sigma2, order);
        const double change = normalized_power_change(next.P, fin.P, pmax);
        if (v >= best) {
            fin = next;
            best = v;
        }
        if (sr || change <= cfg.eps_P || !bp.improved) break;
    }
    res.allocation = fin;
    res.objective = best;
    return res;
}

}  // namespace detail

/// Sum-rate maximization (F block then P block per cycle).
inline BslmResult run_max_sr(const Matrix& gain2, const SystemConfig& cfg, Rng& rng, const BslmOptions& opts = {}) {
    return detail::run_bslm(gain2, cfg, rng, Criterion::sum_rate, opts);
}

inline BslmResult run_max_sr(const ChannelState& ch, const SystemConfig& cfg, const BslmOptions& opts = {}) {
    Rng rng(cfg.seed);
    return run_max_sr(ch.gain2(), cfg, rng, opts);
}

/// Max-min rate fairness with the same block structure.
inline BslmResult run_max_min(const Matrix& gain2, const SystemConfig& cfg, Rng& rng, const BslmOptions& opts = {}) {
    return detail::run_bslm(gain2, cfg, rng, Criterion::min_rate, opts);
}

inline BslmResult run_max_min(const ChannelState& ch, const SystemConfig& cfg, const BslmOptions& opts = {}) {
    Rng rng(cfg.seed);
    return run_max_min(ch.gain2(), cfg, rng, opts);
}

}  // namespace scma
