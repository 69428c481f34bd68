#include <scma/convex_kernel.hpp>
#include <scma/rng.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

using namespace scma;

namespace {

constexpr double inf = std::numeric_limits<double>::infinity();

// maximize sum_i ln(1 + a_i x_i) s.t. sum x <= B, x >= 0
ConcaveProgram water_filling(const Vector& a, double B) {
    const int n = static_cast<int>(a.size());
    ConcaveProgram p;
    p.dim = n;
    p.objective.value_grad = [a](const Vector& x, Vector& g) {
        g = (a.array() / (1.0 + a.array() * x.array())).matrix();
        return (1.0 + a.array() * x.array()).log().sum();
    };
    p.objective.hessian = [a](const Vector& x, Matrix& h) {
        const Vector d = (a.array() / (1.0 + a.array() * x.array())).matrix();
        h.diagonal() = -d.array().square().matrix();
    };
    p.ineq_A = Matrix::Ones(1, n);
    p.ineq_b = Vector::Constant(1, B);
    p.lower = Vector::Zero(n);
    return p;
}

// Closed form: x_i = max(0, mu - 1/a_i) with mu found by bisection.
Vector water_level(const Vector& a, double B) {
    double lo = 0.0, hi = B + 1.0 / a.minCoeff() + 1.0;
    for (int it = 0; it < 200; ++it) {
        const double mu = 0.5 * (lo + hi);
        const double used = (mu - 1.0 / a.array()).max(0.0).sum();
        (used > B ? hi : lo) = mu;
    }
    return (0.5 * (lo + hi) - 1.0 / a.array()).max(0.0).matrix();
}

double worst_residual(const ConcaveProgram& p, const Vector& x) {
    double r = 0.0;
    if (p.ineq_A.rows() > 0) r = std::max(r, (p.ineq_A * x - p.ineq_b).maxCoeff());
    for (Eigen::Index i = 0; i < p.lower.size(); ++i) r = std::max(r, p.lower(i) - x(i));
    for (Eigen::Index i = 0; i < p.upper.size(); ++i) r = std::max(r, x(i) - p.upper(i));
    for (const auto& c : p.concave_ge0) {
        Vector g(p.dim);
        r = std::max(r, -c.value_grad(x, g));
    }
    return r;
}

}  // namespace

TEST(FindFeasible, BoxGivesInteriorPoint) {
    ConcaveProgram p;
    p.dim = 5;
    p.objective.value_grad = [](const Vector& x, Vector& g) { g.setZero(x.size()); return 0.0; };
    p.lower = Vector::Zero(5);
    p.upper = Vector::Ones(5);
    const auto r = find_feasible(p);
    ASSERT_TRUE(r.point);
    EXPECT_GT(r.point->minCoeff(), 0.0);
    EXPECT_LT(r.point->maxCoeff(), 1.0);
}

TEST(FindFeasible, ContradictionIsReported) {
    ConcaveProgram p;
    p.dim = 1;
    p.objective.value_grad = [](const Vector& x, Vector& g) { g.setZero(x.size()); return 0.0; };
    p.ineq_A.resize(2, 1);
    p.ineq_A << 1.0, -1.0;
    p.ineq_b.resize(2);
    p.ineq_b << 1.0, -2.0;
    EXPECT_FALSE(find_feasible(p).point);
    EXPECT_EQ(maximize(p, 1e-6).status, SolveStatus::infeasible);
}

TEST(FindFeasible, AssignmentPolytope) {
    // column sums <= N = 2, row sums <= d_f = 3, 0 <= f <= 1, started from a bad point
    const int K = 4, J = 6, n = K * J;
    ConcaveProgram p;
    p.dim = n;
    p.objective.value_grad = [](const Vector& x, Vector& g) { g.setZero(x.size()); return 0.0; };
    p.ineq_A = Matrix::Zero(K + J, n);
    for (int j = 0; j < J; ++j)
        for (int k = 0; k < K; ++k) {
            p.ineq_A(j, k + K * j) = 1.0;
            p.ineq_A(J + k, k + K * j) = 1.0;
        }
    p.ineq_b.resize(K + J);
    p.ineq_b << Vector::Constant(J, 2.0), Vector::Constant(K, 3.0);
    p.lower = Vector::Zero(n);
    p.upper = Vector::Ones(n);
    const auto r = find_feasible(p, Vector::Constant(n, 0.9));
    ASSERT_TRUE(r.point);
    EXPECT_GT((p.ineq_b - p.ineq_A * *r.point).minCoeff(), 0.0);
    EXPECT_GT(r.point->minCoeff(), 0.0);
    EXPECT_LT(r.point->maxCoeff(), 1.0);
}

TEST(Maximize, InteriorQuadratic) {
    Vector c(3);
    c << 0.2, -0.4, 0.7;
    ConcaveProgram p;
    p.dim = 3;
    p.objective.value_grad = [c](const Vector& x, Vector& g) {
        g = -2.0 * (x - c);
        return -(x - c).squaredNorm();
    };
    p.lower = Vector::Constant(3, -1.0);
    p.upper = Vector::Constant(3, 1.0);
    const auto r = maximize(p, 1e-8);
    ASSERT_EQ(r.status, SolveStatus::converged);
    EXPECT_NEAR(r.value, 0.0, 1e-8);
    EXPECT_LT((r.x_opt - c).norm(), 1e-3);
}

TEST(Maximize, SymmetricWaterFilling) {
    for (int n : {1, 3, 8}) {
        const auto p = water_filling(Vector::Ones(n), 2.0);
        const auto r = maximize(p, 1e-6);
        ASSERT_EQ(r.status, SolveStatus::converged);
        EXPECT_NEAR(r.value, n * std::log1p(2.0 / n), 1e-5);
        EXPECT_LT((r.x_opt.array() - 2.0 / n).abs().maxCoeff(), 1e-3);
    }
}

TEST(Maximize, TwoChannelKkt) {
    Vector a(2);
    a << 2.0, 1.0;
    const auto p = water_filling(a, 1.0);
    const auto r = maximize(p, 1e-9);
    ASSERT_EQ(r.status, SolveStatus::converged);
    EXPECT_NEAR(r.x_opt(0), 0.75, 1e-4);
    EXPECT_NEAR(r.x_opt(1), 0.25, 1e-4);
    const double exact = std::log(2.5) + std::log(1.25);
    EXPECT_NEAR(r.value, exact, 1e-9);
    // fine grid along the budget line agrees
    double best = -inf;
    for (int i = 0; i <= 100000; ++i) {
        const double x1 = i / 100000.0;
        best = std::max(best, std::log1p(2.0 * x1) + std::log1p(1.0 - x1));
    }
    EXPECT_NEAR(best, exact, 1e-9);
}

TEST(Maximize, WaterFillingFamily) {
    Rng rng(21);
    for (int trial = 0; trial < 100; ++trial) {
        const int n = 2 + static_cast<int>(rng.below(10));
        Vector a(n);
        for (int i = 0; i < n; ++i) a(i) = std::exp(4.0 * rng.uniform() - 2.0);
        const double B = 0.1 + 5.0 * rng.uniform();
        const auto p = water_filling(a, B);
        const double eps = 1e-6;
        const auto r = maximize(p, eps);
        ASSERT_EQ(r.status, SolveStatus::converged);
        EXPECT_LE(r.eps_achieved, eps);
        const Vector x = water_level(a, B);
        const double exact = (1.0 + a.array() * x.array()).log().sum();
        EXPECT_NEAR(r.value, exact, 1e-5);
        EXPECT_LE(r.value, exact + 1e-12);
        EXPECT_LE(worst_residual(p, r.x_opt), 1e-8);
    }
}

TEST(Maximize, SeparableQuadraticsAgainstKkt) {
    Rng rng(22);
    for (int trial = 0; trial < 50; ++trial) {
        const int n = 1 + static_cast<int>(rng.below(20));
        Vector w(n), c(n);
        for (int i = 0; i < n; ++i) {
            w(i) = 0.1 + rng.uniform();
            c(i) = 1.5 * rng.uniform() - 0.25;
        }
        const double B = 0.5 * n * rng.uniform() + 0.05;
        ConcaveProgram p;
        p.dim = n;
        p.objective.value_grad = [w, c](const Vector& x, Vector& g) {
            g = (-2.0 * w.array() * (x - c).array()).matrix();
            return -(w.array() * (x - c).array().square()).sum();
        };
        p.ineq_A = Matrix::Ones(1, n);
        p.ineq_b = Vector::Constant(1, B);
        p.lower = Vector::Zero(n);
        p.upper = Vector::Ones(n);
        // x_i(nu) = clip(c_i - nu / (2 w_i), 0, 1), nu >= 0 prices the budget
        auto at = [&](double nu) { return (c.array() - nu / (2.0 * w.array())).max(0.0).min(1.0).matrix().eval(); };
        double lo = 0.0, hi = 1e3;
        if (at(0.0).sum() <= B) hi = 0.0;
        for (int it = 0; it < 200; ++it) {
            const double mid = 0.5 * (lo + hi);
            (at(mid).sum() > B ? lo : hi) = mid;
        }
        const Vector x = at(hi);
        const double exact = -(w.array() * (x - c).array().square()).sum();
        const auto r = maximize(p, 1e-8);
        ASSERT_EQ(r.status, SolveStatus::converged);
        EXPECT_NEAR(r.value, exact, 1e-5);
        EXPECT_LE(worst_residual(p, r.x_opt), 1e-8);
    }
}

TEST(Maximize, ConcaveConstraint) {
    ConcaveProgram p;
    p.dim = 2;
    p.objective.value_grad = [](const Vector& x, Vector& g) {
        g = Vector::Ones(2);
        return x.sum();
    };
    SmoothFunction disk;
    disk.value_grad = [](const Vector& x, Vector& g) {
        g = -2.0 * x;
        return 1.0 - x.squaredNorm();
    };
    p.concave_ge0.push_back(disk);
    const auto r = maximize(p, 1e-8);
    ASSERT_EQ(r.status, SolveStatus::converged);
    EXPECT_NEAR(r.value, std::sqrt(2.0), 1e-7);
    EXPECT_LE(worst_residual(p, r.x_opt), 1e-8);
}

TEST(Maximize, TighterGapNeverLosesMoreThanOldGap) {
    Vector a(4);
    a << 3.0, 1.0, 0.5, 0.2;
    const auto p = water_filling(a, 1.5);
    double prev = -inf, prev_eps = 0.0;
    for (double eps = 1e-2; eps >= 1e-9; eps /= 2.0) {
        const auto r = maximize(p, eps);
        if (prev > -inf) {
            EXPECT_GE(r.value, prev - prev_eps);
        }
        prev = r.value;
        prev_eps = eps;
    }
}

TEST(Maximize, NonFiniteObjectiveNamesPoint) {
    ConcaveProgram p;
    p.dim = 1;
    p.objective.value_grad = [](const Vector& x, Vector& g) {
        g = Vector::Constant(1, std::nan(""));
        return std::nan("") + x(0);
    };
    p.lower = Vector::Zero(1);
    p.upper = Vector::Ones(1);
    try {
        maximize(p, 1e-6);
        FAIL() << "expected a domain error";
    } catch (const numerical_domain_error& e) {
        EXPECT_NE(std::string(e.what()).find("x = ["), std::string::npos);
    }
}

TEST(Maximize, TraceIsEmitted) {
    const auto p = water_filling(Vector::Ones(3), 1.0);
    KernelOptions opt;
    std::vector<KernelTraceRecord> records;
    opt.trace = [&](const KernelTraceRecord& r) { records.push_back(r); };
    const auto r = maximize(p, 1e-6, Vector::Constant(3, 0.1), opt);
    EXPECT_EQ(r.status, SolveStatus::converged);
    ASSERT_FALSE(records.empty());
    EXPECT_LT(records.back().gap_bound, records.front().gap_bound);
    EXPECT_EQ(records.back().iteration, r.iterations);
}

TEST(Maximize, RejectsBadEps) {
    const auto p = water_filling(Vector::Ones(2), 1.0);
    EXPECT_THROW(maximize(p, 0.0), parameter_error);
}
