#pragma once

// Primal log-barrier interior-point maximizer for smooth concave objectives
// over linear inequalities, box bounds, and (optionally) smooth concave
// inequality constraints g(x) >= 0. Newton inner steps with backtracking
// confined to the strict interior; the barrier weight grows geometrically
// until m / t falls below the requested gap.

#include <scma/system_model.hpp>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace scma {

/// A scalar function with gradient and, optionally, an exact Hessian.
struct SmoothFunction {
    /// Returns f(x) and writes the gradient into `grad` (already sized).
    std::function<double(const Vector& x, Vector& grad)> value_grad;
    /// Optional; writes the Hessian into `hess` (already sized, zeroed).
    std::function<void(const Vector& x, Matrix& hess)> hessian;
};

struct ConcaveProgram {
    int dim = 0;
    SmoothFunction objective;  ///< concave, maximized
    Matrix ineq_A;             ///< rows of A x <= b; may have zero rows
    Vector ineq_b;
    Vector lower;  ///< empty or size dim; -inf entries mean unbounded
    Vector upper;  ///< empty or size dim; +inf entries mean unbounded
    std::vector<SmoothFunction> concave_ge0;  ///< g(x) >= 0 with g concave

    int linear_rows() const { return static_cast<int>(ineq_A.rows()); }
    /// Total number of inequality constraints seen by the barrier.
    int constraint_count() const {
        int m = linear_rows() + static_cast<int>(concave_ge0.size());
        for (Eigen::Index i = 0; i < lower.size(); ++i) m += std::isfinite(lower(i)) ? 1 : 0;
        for (Eigen::Index i = 0; i < upper.size(); ++i) m += std::isfinite(upper(i)) ? 1 : 0;
        return m;
    }
};

enum class SolveStatus { converged, iteration_cap, infeasible };

inline const char* to_string(SolveStatus s) {
    switch (s) {
        case SolveStatus::converged: return "converged";
        case SolveStatus::iteration_cap: return "iteration-cap";
        case SolveStatus::infeasible: return "infeasible";
    }
    return "unknown";
}

struct SolveResult {
    Vector x_opt;
    double value = -std::numeric_limits<double>::infinity();
    int iterations = 0;  ///< Newton steps over all barrier stages
    int stages = 0;
    double eps_achieved = std::numeric_limits<double>::infinity();
    SolveStatus status = SolveStatus::infeasible;
};

/// One Newton step, reported to an optional trace sink.
struct KernelTraceRecord {
    int stage;
    int iteration;
    double value;
    double step;
    double gap_bound;
};

struct KernelOptions {
    double barrier_growth = 10.0;
    int max_newton_steps = 2000;
    /// Centering stops once lambda^2 / 2 drops below this.
    double centering_tol = 1e-10;
    std::function<void(const KernelTraceRecord&)> trace;
};

namespace detail {

/// Barrier evaluation state for one program.
class Barrier {
  public:
    explicit Barrier(const ConcaveProgram& p) : p_(p) {
        if (p.dim < 1) throw parameter_error("program dimension must be positive");
        if (p.ineq_A.rows() != p.ineq_b.size() || (p.ineq_A.rows() > 0 && p.ineq_A.cols() != p.dim))
            throw parameter_error("linear constraint dimensions disagree");
        if ((p.lower.size() != 0 && p.lower.size() != p.dim) || (p.upper.size() != 0 && p.upper.size() != p.dim))
            throw parameter_error("bound dimensions disagree");
        if (!p.objective.value_grad) throw parameter_error("objective callback missing");
    }

    /// Smallest residual over all constraints (positive iff strictly feasible).
    double min_slack(const Vector& x) const {
        double s = std::numeric_limits<double>::infinity();
        if (p_.linear_rows() > 0) s = std::min(s, (p_.ineq_b - p_.ineq_A * x).minCoeff());
        for (Eigen::Index i = 0; i < p_.lower.size(); ++i)
            if (std::isfinite(p_.lower(i))) s = std::min(s, x(i) - p_.lower(i));
        for (Eigen::Index i = 0; i < p_.upper.size(); ++i)
            if (std::isfinite(p_.upper(i))) s = std::min(s, p_.upper(i) - x(i));
        Vector g(p_.dim);
        for (const auto& c : p_.concave_ge0) s = std::min(s, c.value_grad(x, g));
        return s;
    }

    /// Largest step in (0, 1] keeping linear rows and bounds strictly feasible.
    double max_linear_step(const Vector& x, const Vector& dx) const {
        double a = 1.0;
        if (p_.linear_rows() > 0) {
            const Vector slack = p_.ineq_b - p_.ineq_A * x;
            const Vector rate = p_.ineq_A * dx;
            for (Eigen::Index i = 0; i < rate.size(); ++i)
                if (rate(i) > 0) a = std::min(a, 0.99 * slack(i) / rate(i));
        }
        for (Eigen::Index i = 0; i < p_.lower.size(); ++i)
            if (std::isfinite(p_.lower(i)) && dx(i) < 0) a = std::min(a, 0.99 * (x(i) - p_.lower(i)) / -dx(i));
        for (Eigen::Index i = 0; i < p_.upper.size(); ++i)
            if (std::isfinite(p_.upper(i)) && dx(i) > 0) a = std::min(a, 0.99 * (p_.upper(i) - x(i)) / dx(i));
        return a;
    }

    /// psi(x) = -t f(x) - sum log(slack). Returns +inf outside the interior.
    double psi(const Vector& x, double t, double* f_out = nullptr) const {
        if (min_linear_slack(x) <= 0) return std::numeric_limits<double>::infinity();
        double bar = linear_log_sum(x);
        Vector g(p_.dim);
        for (const auto& c : p_.concave_ge0) {
            const double v = c.value_grad(x, g);
            if (!(v > 0)) return std::numeric_limits<double>::infinity();
            bar += std::log(v);
        }
        const double f = p_.objective.value_grad(x, g);
        if (!std::isfinite(f)) throw_domain(x);
        if (f_out) *f_out = f;
        return -t * f - bar;
    }

    /// Gradient and Hessian of psi at a strictly feasible x.
    void derivatives(const Vector& x, double t, Vector& grad, Matrix& hess) const {
        const int n = p_.dim;
        grad.setZero(n);
        hess.setZero(n, n);
        Vector g(n);
        p_.objective.value_grad(x, g);
        if (!g.allFinite()) throw_domain(x);
        grad = -t * g;
        Matrix h = Matrix::Zero(n, n);
        objective_hessian(x, h);
        hess = -t * h;

        if (p_.linear_rows() > 0) {
            const Vector slack = p_.ineq_b - p_.ineq_A * x;
            const Vector inv = slack.cwiseInverse();
            grad += p_.ineq_A.transpose() * inv;
            const Matrix scaled = inv.asDiagonal() * p_.ineq_A;
            hess += scaled.transpose() * scaled;
        }
        for (Eigen::Index i = 0; i < p_.lower.size(); ++i) {
            if (!std::isfinite(p_.lower(i))) continue;
            const double s = x(i) - p_.lower(i);
            grad(i) -= 1.0 / s;
            hess(i, i) += 1.0 / (s * s);
        }
        for (Eigen::Index i = 0; i < p_.upper.size(); ++i) {
            if (!std::isfinite(p_.upper(i))) continue;
            const double s = p_.upper(i) - x(i);
            grad(i) += 1.0 / s;
            hess(i, i) += 1.0 / (s * s);
        }
        for (const auto& c : p_.concave_ge0) {
            Vector cg(n);
            const double v = c.value_grad(x, cg);
            grad -= cg / v;
            hess += cg * cg.transpose() / (v * v);
            Matrix ch = Matrix::Zero(n, n);
            if (c.hessian) c.hessian(x, ch);
            else fd_hessian(c, x, ch);
            hess -= ch / v;
        }
    }

    double objective(const Vector& x) const {
        Vector g(p_.dim);
        return p_.objective.value_grad(x, g);
    }

  private:
    double min_linear_slack(const Vector& x) const {
        double s = std::numeric_limits<double>::infinity();
        if (p_.linear_rows() > 0) s = std::min(s, (p_.ineq_b - p_.ineq_A * x).minCoeff());
        for (Eigen::Index i = 0; i < p_.lower.size(); ++i)
            if (std::isfinite(p_.lower(i))) s = std::min(s, x(i) - p_.lower(i));
        for (Eigen::Index i = 0; i < p_.upper.size(); ++i)
            if (std::isfinite(p_.upper(i))) s = std::min(s, p_.upper(i) - x(i));
        return s;
    }

    double linear_log_sum(const Vector& x) const {
        double bar = 0.0;
        if (p_.linear_rows() > 0) bar += (p_.ineq_b - p_.ineq_A * x).array().log().sum();
        for (Eigen::Index i = 0; i < p_.lower.size(); ++i)
            if (std::isfinite(p_.lower(i))) bar += std::log(x(i) - p_.lower(i));
        for (Eigen::Index i = 0; i < p_.upper.size(); ++i)
            if (std::isfinite(p_.upper(i))) bar += std::log(p_.upper(i) - x(i));
        return bar;
    }

    void objective_hessian(const Vector& x, Matrix& h) const {
        if (p_.objective.hessian) p_.objective.hessian(x, h);
        else fd_hessian(p_.objective, x, h);
        if (!h.allFinite()) throw_domain(x);
    }

    // central differences of the gradient, symmetrized
    static void fd_hessian(const SmoothFunction& fn, const Vector& x, Matrix& h) {
        const auto n = x.size();
        Vector gp(n), gm(n);
        Vector xp = x;
        for (Eigen::Index j = 0; j < n; ++j) {
            const double step = 1e-6 * std::max(1.0, std::abs(x(j)));
            xp(j) = x(j) + step;
            fn.value_grad(xp, gp);
            xp(j) = x(j) - step;
            fn.value_grad(xp, gm);
            xp(j) = x(j);
            h.col(j) = (gp - gm) / (2.0 * step);
        }
        h = 0.5 * (h + h.transpose()).eval();
    }

    [[noreturn]] static void throw_domain(const Vector& x) {
        std::ostringstream os;
        os << "objective is not finite at x = [";
        for (Eigen::Index i = 0; i < x.size(); ++i) os << (i ? ", " : "") << x(i);
        os << "]";
        throw numerical_domain_error(os.str());
    }

    const ConcaveProgram& p_;
};

inline Vector default_start(const ConcaveProgram& p) {
    Vector x = Vector::Zero(p.dim);
    for (int i = 0; i < p.dim; ++i) {
        const double lo = p.lower.size() ? p.lower(i) : -std::numeric_limits<double>::infinity();
        const double hi = p.upper.size() ? p.upper(i) : std::numeric_limits<double>::infinity();
        if (std::isfinite(lo) && std::isfinite(hi)) x(i) = 0.5 * (lo + hi);
        else if (std::isfinite(lo)) x(i) = lo + 1.0;
        else if (std::isfinite(hi)) x(i) = hi - 1.0;
    }
    return x;
}

/// Solves H dx = -g for a positive (semi)definite H, regularizing if needed.
inline Vector newton_direction(const Matrix& hess, const Vector& grad) {
    Eigen::LLT<Matrix> llt(hess);
    if (llt.info() == Eigen::Success) {
        Vector dx = llt.solve(-grad);
        if (dx.allFinite()) return dx;
    }
    const double scale = std::max(1.0, hess.diagonal().cwiseAbs().maxCoeff());
    for (double reg = 1e-12; reg < 1e6; reg *= 100.0) {
        Matrix h = hess;
        h.diagonal().array() += reg * scale;
        Eigen::LLT<Matrix> r(h);
        if (r.info() == Eigen::Success) return r.solve(-grad);
    }
    return -grad / scale;
}

/// Barrier path-following from a strictly feasible x. `stop_early` lets
/// phase-I quit as soon as it is satisfied.
inline SolveResult path_follow(const ConcaveProgram& prog, Vector x, double eps, const KernelOptions& opt,
                               const std::function<bool(const Vector&)>& stop_early = {}) {
    Barrier bar(prog);
    const int m = std::max(1, prog.constraint_count());
    SolveResult res;
    res.status = SolveStatus::iteration_cap;

    double f0 = bar.objective(x);
    double t = static_cast<double>(m) / std::max(1.0, std::abs(f0));
    Vector grad(prog.dim);
    Matrix hess(prog.dim, prog.dim);
    int newton = 0;
    double lambda2 = 0.0;

    for (int stage = 0;; ++stage) {
        // center
        for (;;) {
            if (newton >= opt.max_newton_steps) {
                res.x_opt = x;
                res.value = bar.objective(x);
                res.iterations = newton;
                res.stages = stage + 1;
                res.eps_achieved = static_cast<double>(m) / t;
                return res;
            }
            bar.derivatives(x, t, grad, hess);
            const Vector dx = newton_direction(hess, grad);
            lambda2 = -grad.dot(dx);
            if (!(lambda2 > 0) || lambda2 / 2.0 <= opt.centering_tol) break;

            double step = bar.max_linear_step(x, dx);
            const double psi0 = bar.psi(x, t);
            const double slope = grad.dot(dx);
            Vector trial = x + step * dx;
            double psi1 = bar.psi(trial, t);
            while (!(psi1 <= psi0 + 0.25 * step * slope) && step > 1e-16) {
                step *= 0.5;
                trial = x + step * dx;
                psi1 = bar.psi(trial, t);
            }
            ++newton;
            if (!(psi1 <= psi0)) break;  // no descent possible at working precision
            x = trial;
            // psi grows like t, so late stages resolve only ~1e-16 |psi|; stop
            // centering once a step no longer buys anything measurable
            const bool stalled = psi0 - psi1 <= 1e-13 * std::max(1.0, std::abs(psi0));
            if (opt.trace) opt.trace({stage, newton, bar.objective(x), step, static_cast<double>(m) / t});
            if (stop_early && stop_early(x)) {
                res.x_opt = x;
                res.value = bar.objective(x);
                res.iterations = newton;
                res.stages = stage + 1;
                res.eps_achieved = static_cast<double>(m) / t;
                res.status = SolveStatus::converged;
                return res;
            }
            if (stalled) break;
        }
        const double lam = std::sqrt(std::max(0.0, lambda2));
        const double gap = (m + (lam < 1.0 ? std::sqrt(static_cast<double>(m)) * lam / (1.0 - lam) : m)) / t;
        if (gap <= eps || (stop_early && stop_early(x))) {
            res.x_opt = x;
            res.value = bar.objective(x);
            res.iterations = newton;
            res.stages = stage + 1;
            res.eps_achieved = gap;
            res.status = SolveStatus::converged;
            return res;
        }
        t *= opt.barrier_growth;
    }
}

}  // namespace detail

struct FeasibilityResult {
    std::optional<Vector> point;  ///< strictly feasible when present
    int iterations = 0;
};

/// Phase I: maximize s subject to every constraint holding with margin s.
/// Any point with s > 0 is strictly feasible for the original program.
inline FeasibilityResult find_feasible(const ConcaveProgram& prog, const std::optional<Vector>& hint = std::nullopt,
                                       const KernelOptions& opt = {}) {
    detail::Barrier check(prog);
    Vector x0 = hint ? *hint : detail::default_start(prog);
    if (x0.size() != prog.dim) throw parameter_error("starting point has wrong dimension");
    if (check.min_slack(x0) > 0) return {x0, 0};

    const int n = prog.dim;
    // rows: original A with +1 on s, bounds as rows, cap s <= 1
    std::vector<std::pair<Vector, double>> rows;
    for (int i = 0; i < prog.linear_rows(); ++i) {
        Vector a = Vector::Zero(n + 1);
        a.head(n) = prog.ineq_A.row(i).transpose();
        a(n) = 1.0;
        rows.emplace_back(a, prog.ineq_b(i));
    }
    for (Eigen::Index i = 0; i < prog.lower.size(); ++i) {
        if (!std::isfinite(prog.lower(i))) continue;
        Vector a = Vector::Zero(n + 1);
        a(i) = -1.0;
        a(n) = 1.0;
        rows.emplace_back(a, -prog.lower(i));
    }
    for (Eigen::Index i = 0; i < prog.upper.size(); ++i) {
        if (!std::isfinite(prog.upper(i))) continue;
        Vector a = Vector::Zero(n + 1);
        a(i) = 1.0;
        a(n) = 1.0;
        rows.emplace_back(a, prog.upper(i));
    }
    ConcaveProgram aux;
    aux.dim = n + 1;
    aux.ineq_A.resize(static_cast<Eigen::Index>(rows.size()), n + 1);
    aux.ineq_b.resize(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
        aux.ineq_A.row(static_cast<Eigen::Index>(r)) = rows[r].first.transpose();
        aux.ineq_b(static_cast<Eigen::Index>(r)) = rows[r].second;
    }
    aux.upper = Vector::Constant(n + 1, std::numeric_limits<double>::infinity());
    aux.upper(n) = 1.0;
    for (const auto& c : prog.concave_ge0) {
        SmoothFunction shifted;
        shifted.value_grad = [c, n](const Vector& z, Vector& g) {
            Vector gx(n);
            const double v = c.value_grad(z.head(n), gx);
            g.head(n) = gx;
            g(n) = -1.0;
            return v - z(n);
        };
        if (c.hessian) {
            shifted.hessian = [c, n](const Vector& z, Matrix& h) {
                Matrix hx = Matrix::Zero(n, n);
                c.hessian(z.head(n), hx);
                h.topLeftCorner(n, n) = hx;
            };
        }
        aux.concave_ge0.push_back(std::move(shifted));
    }
    aux.objective.value_grad = [n](const Vector& z, Vector& g) {
        g.setZero();
        g(n) = 1.0;
        return z(n);
    };
    aux.objective.hessian = [](const Vector&, Matrix&) {};

    Vector z(n + 1);
    z.head(n) = x0;
    z(n) = std::min(0.0, check.min_slack(x0)) - 1.0;

    // quit once the margin is comfortably positive
    auto margin_ok = [n](const Vector& zz) { return zz(n) > 1e-3; };
    const SolveResult r = detail::path_follow(aux, z, 1e-9, opt, margin_ok);
    FeasibilityResult out;
    out.iterations = r.iterations;
    if (r.x_opt.size() == n + 1 && r.x_opt(n) > 0) {
        Vector x = r.x_opt.head(n);
        if (check.min_slack(x) > 0) out.point = x;
    }
    return out;
}

/// Maximizes the program to a certified optimality gap `eps`. `start`, if
/// strictly feasible, seeds the barrier path; otherwise phase I runs first.
inline SolveResult maximize(const ConcaveProgram& prog, double eps, const std::optional<Vector>& start = std::nullopt,
                            const KernelOptions& opt = {}) {
    if (!(eps > 0)) throw parameter_error("eps must be positive");
    detail::Barrier check(prog);
    std::optional<Vector> x0;
    int phase1_iters = 0;
    if (start && start->size() == prog.dim && check.min_slack(*start) > 0) {
        x0 = *start;
    } else {
        auto fr = find_feasible(prog, start, opt);
        phase1_iters = fr.iterations;
        x0 = fr.point;
    }
    if (!x0) {
        SolveResult r;
        r.status = SolveStatus::infeasible;
        r.iterations = phase1_iters;
        return r;
    }
    SolveResult r = detail::path_follow(prog, *x0, eps, opt);
    r.iterations += phase1_iters;
    return r;
}

}  // namespace scma
