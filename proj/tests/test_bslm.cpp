#include "support.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace scma;
using scma::testing::default_channel;
using scma::testing::fd_gradient;
using scma::testing::feasible_point;
using scma::testing::relative_gap;
using scma::testing::relaxed_excess;

namespace {

SystemConfig single_user(int K, int N) {
    SystemConfig cfg;
    cfg.K = K;
    cfg.J = 1;
    cfg.N = N;
    cfg.d_f = 1;
    return cfg;
}

}  // namespace

TEST(Penalty, Values) {
    EXPECT_EQ(penalty(canonical_factor_graph(4, 2).entries, 20.0), 0.0);
    EXPECT_DOUBLE_EQ(penalty(Matrix::Constant(4, 6, 0.5), 20.0), -120.0);
    EXPECT_TRUE(penalty_gradient(Matrix::Constant(4, 6, 0.5), 20.0).isZero(0.0));
    Matrix F(1, 2);
    F << 0.0, 1.0;
    const Matrix g = penalty_gradient(F, 20.0);
    EXPECT_EQ(g(0, 0), -20.0);
    EXPECT_EQ(g(0, 1), 20.0);
}

TEST(MaxSrSurrogate, TangentBoundingAndFirstOrder) {
    SystemConfig cfg;
    Rng rng(31);
    for (int a = 0; a < 10; ++a) {
        const Matrix g = default_channel(cfg, 100 + a);
        const Allocation anchor = feasible_point(cfg, rng);
        const auto ctx = make_context(anchor.F, anchor.P, g, cfg);
        const double exact = maxsr_penalized(anchor.F, anchor.P, ctx);
        Matrix grad;
        EXPECT_NEAR(maxsr_surrogate_value_grad(anchor.F, ctx, &grad), exact, 1e-12 * std::max(1.0, std::abs(exact)));
        for (int i = 0; i < 200; ++i) {
            const Matrix F = feasible_point(cfg, rng).F;
            EXPECT_LE(maxsr_surrogate_value_grad(F, ctx), maxsr_penalized(F, anchor.P, ctx) + 1e-9);
        }
        const Matrix fd = fd_gradient([&](const Matrix& F) { return maxsr_penalized(F, anchor.P, ctx); }, anchor.F, 1e-6);
        EXPECT_LE(relative_gap(grad, fd), 1e-5);
    }
}

TEST(Theta, FirstDecodedUserSeesOnlyNoise) {
    SystemConfig cfg;
    const Matrix g = default_channel(cfg, 1);
    Rng rng(2);
    const auto a = feasible_point(cfg, rng);
    const auto ctx = make_context(a.F, a.P, g, cfg);
    Matrix grad;
    EXPECT_NEAR(theta_value_grad_F(0, a.F, ctx, &grad), cfg.K * std::log(ctx.sigma2), 1e-12);
    EXPECT_TRUE(grad.isZero(0.0));
    EXPECT_NEAR(theta_value_grad_P(0, a.P, ctx, &grad), cfg.K * std::log(ctx.sigma2), 1e-12);
    EXPECT_TRUE(grad.isZero(0.0));
}

TEST(Theta, SecondUserOnOneSubcarrier) {
    SurrogateContext ctx;
    ctx.H_abs2 = Matrix::Constant(1, 2, 2.0);
    ctx.anchor_F = Matrix::Constant(1, 2, 0.5);
    ctx.anchor_P = Matrix::Constant(1, 2, 3.0);
    ctx.sigma2 = 0.5;
    Matrix grad;
    const double v = theta_value_grad_F(1, ctx.anchor_F, ctx, &grad);
    EXPECT_NEAR(v, std::log(0.5 + 2.0 * 0.5 * 3.0), 1e-15);
    EXPECT_NEAR(grad(0, 0), 2.0 * 3.0 / (0.5 + 3.0), 1e-15);
    EXPECT_EQ(grad(0, 1), 0.0);
}

TEST(Theta, GradientsMatchFiniteDifferences) {
    SystemConfig cfg;
    Rng rng(3);
    for (int t = 0; t < 5; ++t) {
        const Matrix g = default_channel(cfg, 40 + t);
        const auto a = feasible_point(cfg, rng);
        const auto ctx = make_context(a.F, a.P, g, cfg);
        for (int j = 1; j < cfg.J; ++j) {
            Matrix grad;
            theta_value_grad_F(j, a.F, ctx, &grad);
            const Matrix fd = fd_gradient([&](const Matrix& F) { return theta_value_grad_F(j, F, ctx); }, a.F, 1e-6);
            EXPECT_LE(relative_gap(grad, fd), 1e-5);
            theta_value_grad_P(j, a.P, ctx, &grad);
            const Matrix P0 = a.P;
            const double scale = dbm_to_watt(10.0);
            // differentiate in units of the budget so the step is meaningful
            const Matrix fdp = fd_gradient([&](const Matrix& X) { return theta_value_grad_P(j, X * scale, ctx); }, P0 / scale, 1e-6) / scale;
            EXPECT_LE(relative_gap(grad, fdp), 1e-5);
        }
    }
}

TEST(MaxMinSurrogate, TangentAndBounding) {
    SystemConfig cfg;
    Rng rng(32);
    for (int a = 0; a < 10; ++a) {
        const Matrix g = default_channel(cfg, 200 + a);
        const Allocation anchor = feasible_point(cfg, rng);
        const auto ctx = make_context(anchor.F, anchor.P, g, cfg);
        const double exact = maxmin_penalized(anchor.F, anchor.P, ctx);
        EXPECT_NEAR(maxmin_surrogate_F(anchor.F, ctx), exact, 1e-10 * std::max(1.0, std::abs(exact)));
        EXPECT_NEAR(maxmin_surrogate_P(anchor.P, ctx), exact, 1e-10 * std::max(1.0, std::abs(exact)));
        for (int i = 0; i < 200; ++i) {
            const auto x = feasible_point(cfg, rng);
            EXPECT_LE(maxmin_surrogate_F(x.F, ctx), maxmin_penalized(x.F, anchor.P, ctx) + 1e-9);
            EXPECT_LE(maxmin_surrogate_P(x.P, ctx), maxmin_penalized(anchor.F, x.P, ctx) + 1e-9);
        }
    }
}

TEST(MaxMinSurrogate, PerUserTermsShareFirstOrderBehaviour) {
    SystemConfig cfg;
    Rng rng(33);
    const Matrix g = default_channel(cfg, 7);
    const auto a = feasible_point(cfg, rng);
    const auto ctx = make_context(a.F, a.P, g, cfg);
    for (int j = 0; j < cfg.J; ++j) {
        auto term = [&](const Matrix& F) { return detail::maxmin_terms(F, ctx, true)(j); };
        auto rate = [&](const Matrix& F) { return per_user_rates(g, {F, a.P}, ctx.sigma2).per_user(j); };
        EXPECT_LE(relative_gap(fd_gradient(term, a.F, 1e-6), fd_gradient(rate, a.F, 1e-6)), 1e-5);
    }
}

TEST(UpdateF, SingleUserPrefersStrongerSubcarrier) {
    const SystemConfig cfg = single_user(2, 1);
    const double pmax = dbm_to_watt(10.0);
    Matrix g(2, 1);
    g << 1e-13, 1e-14;
    const auto ctx = make_context(Matrix::Constant(2, 1, 0.5), Matrix::Constant(2, 1, pmax), g, cfg);
    const auto r = update_F_maxsr(ctx, cfg);
    EXPECT_GT(r.value(0, 0), r.value(1, 0));
    Rng rng(1);
    const auto run = run_max_sr(g, cfg, rng);
    EXPECT_EQ(run.allocation.F(0, 0), 1.0);
    EXPECT_EQ(run.allocation.F(1, 0), 0.0);
    EXPECT_NEAR(run.objective, std::log1p(pmax * 1e-13 / noise_power(cfg)), 1e-9);
}

TEST(UpdateF, NoPenaltyNoPowerStaysFeasible) {
    SystemConfig cfg;
    cfg.lambda_penalty = 0.0;
    const Matrix g = default_channel(cfg, 3);
    Rng rng(4);
    const auto a = feasible_point(cfg, rng);
    const auto ctx = make_context(a.F, Matrix::Zero(4, 6), g, cfg);
    const auto r = update_F_maxsr(ctx, cfg);
    EXPECT_LE(relaxed_excess({r.value, Matrix::Zero(4, 6)}, cfg), 1e-8);
    EXPECT_EQ(maxsr_penalized(r.value, Matrix::Zero(4, 6), ctx), 0.0);
}

TEST(UpdateF, PenalizedObjectiveDoesNotDrop) {
    SystemConfig cfg;
    Rng rng(5);
    for (int t = 0; t < 10; ++t) {
        const Matrix g = default_channel(cfg, 300 + t);
        const auto a = random_initial_point(cfg, rng);
        const auto ctx = make_context(a.F, a.P, g, cfg);
        const auto sr = update_F_maxsr(ctx, cfg);
        EXPECT_GE(maxsr_penalized(sr.value, a.P, ctx), maxsr_penalized(a.F, a.P, ctx) - cfg.solver_eps);
        EXPECT_LE(relaxed_excess({sr.value, a.P}, cfg), 1e-8);
        const auto mm = update_F_maxmin(ctx, cfg);
        EXPECT_GE(maxmin_surrogate_F(mm.value, ctx), maxmin_surrogate_F(a.F, ctx) - cfg.solver_eps);
        EXPECT_LE(relaxed_excess({mm.value, a.P}, cfg), 1e-8);
    }
}

TEST(UpdateP, EqualChannelsSplitEvenly) {
    const SystemConfig cfg = single_user(3, 2);
    const double pmax = dbm_to_watt(10.0);
    Matrix F(3, 1), P(3, 1), g(3, 1);
    F << 1.0, 1.0, 0.0;
    P << 0.2 * pmax, 0.7 * pmax, 0.0;
    g << 1e-13, 1e-13, 5e-13;
    const auto r = update_P_maxsr(make_context(F, P, g, cfg), cfg);
    EXPECT_NEAR(r.value(0, 0) / pmax, 0.5, 1e-4);
    EXPECT_NEAR(r.value(1, 0) / pmax, 0.5, 1e-4);
}

TEST(UpdateP, TwoChannelWaterFilling) {
    const SystemConfig cfg = single_user(3, 2);
    const double pmax = dbm_to_watt(10.0);
    const double sigma2 = noise_power(cfg);
    Matrix F(3, 1), P(3, 1), g(3, 1);
    F << 1.0, 1.0, 0.0;
    P << 0.5 * pmax, 0.5 * pmax, 0.0;
    g << 2e-13, 1e-13, 0.0;
    // levels: p1 + 1/a1 = p2 + 1/a2 with p1 + p2 = pmax, both positive here
    const double a1 = g(0) / sigma2, a2 = g(1) / sigma2;
    const double mu = 0.5 * (pmax + 1.0 / a1 + 1.0 / a2);
    ASSERT_GT(mu - 1.0 / a2, 0.0);
    const double exact = std::log1p(a1 * (mu - 1.0 / a1)) + std::log1p(a2 * (mu - 1.0 / a2));
    const auto ctx = make_context(F, P, g, cfg);
    const auto r = update_P_maxsr(ctx, cfg);
    EXPECT_NEAR(sum_rate(g, {F, r.value}, sigma2), exact, 1e-5);
    EXPECT_NEAR(r.value(0, 0), mu - 1.0 / a1, 1e-3 * pmax);
}

TEST(UpdateP, NothingAssigned) {
    SystemConfig cfg;
    const Matrix g = default_channel(cfg, 8);
    const auto ctx = make_context(Matrix::Zero(4, 6), Matrix::Zero(4, 6), g, cfg);
    const auto r = update_P_maxsr(ctx, cfg);
    EXPECT_GE(r.value.minCoeff(), 0.0);
    EXPECT_EQ(sum_rate(g, {ctx.anchor_F, r.value}, ctx.sigma2), 0.0);
}

TEST(UpdateMaxMin, SingleUserMatchesSumRateBlocks) {
    const SystemConfig cfg = single_user(3, 2);
    const double pmax = dbm_to_watt(10.0);
    Matrix F(3, 1), P(3, 1), g(3, 1);
    F << 0.6, 0.5, 0.4;
    P << 0.3 * pmax, 0.3 * pmax, 0.3 * pmax;
    g << 2e-13, 1e-13, 5e-14;
    const auto ctx = make_context(F, P, g, cfg);
    const auto fa = update_F_maxsr(ctx, cfg), fb = update_F_maxmin(ctx, cfg);
    EXPECT_NEAR(maxsr_surrogate_value_grad(fa.value, ctx), maxsr_surrogate_value_grad(fb.value, ctx), 1e-5);
    const auto pa = update_P_maxsr(ctx, cfg), pb = update_P_maxmin(ctx, cfg);
    EXPECT_NEAR(sum_rate(g, {F, pa.value}, ctx.sigma2), sum_rate(g, {F, pb.value}, ctx.sigma2), 1e-5);
}

TEST(RunMaxMin, SymmetricUsersShareEqually) {
    SystemConfig cfg;
    cfg.K = 2;
    cfg.J = 2;
    cfg.N = 1;
    cfg.d_f = 2;
    const Matrix g = Matrix::Constant(2, 2, 1e-13);
    Rng rng(9);
    const auto res = run_max_min(g, cfg, rng);
    const Vector r = per_user_rates(g, res.allocation, noise_power(cfg)).per_user;
    EXPECT_NEAR(r(0), r(1), 1e-3);
    EXPECT_GE(jain_index(r), 0.999);
}

TEST(RunMaxMin, SingleUserSameAsMaxSr) {
    const SystemConfig cfg = single_user(3, 2);
    Matrix g(3, 1);
    g << 2e-13, 1e-13, 5e-14;
    Rng r1(10), r2(10);
    const auto a = run_max_sr(g, cfg, r1);
    const auto b = run_max_min(g, cfg, r2);
    EXPECT_TRUE(a.allocation.F.isApprox(b.allocation.F, 0.0));
    EXPECT_NEAR(a.objective, b.objective, 1e-5);
}

TEST(RunMaxMin, MinRateBeatsMaxSrOnFixedChannel) {
    SystemConfig cfg;
    const Matrix g = default_channel(cfg, 12);
    Rng r1(1), r2(1);
    const auto sr = run_max_sr(g, cfg, r1);
    const auto mm = run_max_min(g, cfg, r2);
    const double sigma2 = noise_power(cfg);
    EXPECT_GE(per_user_rates(g, mm.allocation, sigma2).per_user.minCoeff(),
              per_user_rates(g, sr.allocation, sigma2).per_user.minCoeff());
}

TEST(RunMaxSr, ZeroChannel) {
    SystemConfig cfg;
    Rng rng(11);
    const auto res = run_max_sr(Matrix::Zero(4, 6), cfg, rng);
    EXPECT_EQ(res.objective, 0.0);
    EXPECT_TRUE(res.converged);
    EXPECT_TRUE(validate_allocation(res.allocation, cfg, pmax_watts(cfg), true).empty());
}

TEST(RunBslm, AscentFeasibilityAndConvergence) {
    SystemConfig cfg;
    int within_ten = 0, runs = 0;
    for (int t = 0; t < 8; ++t) {
        const Matrix g = default_channel(cfg, 400 + t);
        for (bool sr : {true, false}) {
            Rng rng(static_cast<std::uint64_t>(t));
            BslmOptions opts;
            opts.keep_iterates = true;
            const auto res = sr ? run_max_sr(g, cfg, rng, opts) : run_max_min(g, cfg, rng, opts);
            ++runs;
            EXPECT_TRUE(res.converged);
            within_ten += res.cycles <= 10;
            double prev = res.trace.initial_penalized;
            for (const auto& c : res.trace.cycles) {
                EXPECT_GE(c.penalized, prev - 1e-6);
                prev = c.penalized;
            }
            for (const auto& it : res.iterates) EXPECT_LE(relaxed_excess(it, cfg), 1e-8);
            EXPECT_TRUE(validate_allocation(res.allocation, cfg, pmax_watts(cfg), true).empty());
        }
    }
    EXPECT_GE(within_ten, runs * 9 / 10);
}

TEST(RunBslm, RestartsLandClose) {
    SystemConfig cfg;
    const Matrix g = default_channel(cfg, 13);
    double lo = 1e300, hi = 0.0;
    for (int i = 0; i < 3; ++i) {
        Rng rng(50 + i);
        const auto res = run_max_sr(g, cfg, rng);
        EXPECT_LE(res.cycles, 10);
        lo = std::min(lo, res.objective);
        hi = std::max(hi, res.objective);
    }
    EXPECT_LE((hi - lo) / hi, 0.05);
}

TEST(RunBslm, Deterministic) {
    SystemConfig cfg;
    const Matrix g = default_channel(cfg, 14);
    Rng r1(3), r2(3);
    const auto a = run_max_min(g, cfg, r1);
    const auto b = run_max_min(g, cfg, r2);
    EXPECT_TRUE(a.allocation.P.isApprox(b.allocation.P, 0.0));
    EXPECT_EQ(a.cycles, b.cycles);
}

TEST(Binarize, BinaryFeasibleInputUnchanged) {
    SystemConfig cfg;
    const Matrix F = canonical_factor_graph(4, 2).entries;
    const Matrix g = default_channel(cfg, 15);
    const Matrix P = Matrix::Constant(4, 6, 0.001);
    EXPECT_TRUE(binarize_and_repair(F, cfg, g, P).entries.isApprox(F, 0.0));
}

TEST(Binarize, ThresholdKeepsLargerEntry) {
    const SystemConfig cfg = single_user(2, 1);
    Matrix F(2, 1);
    F << 0.9, 0.1;
    const Matrix out = binarize_and_repair(F, cfg, Matrix::Constant(2, 1, 1e-13), Matrix::Constant(2, 1, 0.005)).entries;
    EXPECT_EQ(out(0, 0), 1.0);
    EXPECT_EQ(out(1, 0), 0.0);
}

TEST(Binarize, OverfullColumnDropsCheapestEntry) {
    SystemConfig cfg = single_user(3, 2);
    Matrix F(3, 1), g(3, 1);
    F << 0.8, 0.8, 0.8;
    g << 3e-13, 1e-14, 2e-13;
    const Matrix P = Matrix::Constant(3, 1, 0.003);
    const double sigma2 = noise_power(cfg);
    // the entry whose removal loses least sum rate, by direct evaluation
    int expected = -1;
    double least = 1e300;
    for (int k = 0; k < 3; ++k) {
        Matrix B = Matrix::Ones(3, 1);
        B(k, 0) = 0.0;
        const double loss = sum_rate(g, {Matrix::Ones(3, 1), P}, sigma2) - sum_rate(g, {B, P}, sigma2);
        if (loss < least) {
            least = loss;
            expected = k;
        }
    }
    ASSERT_EQ(expected, 1);
    const Matrix out = binarize_and_repair(F, cfg, g, P).entries;
    EXPECT_EQ(out(expected, 0), 0.0);
    EXPECT_EQ(out.sum(), 2.0);
}

TEST(InitialPoint, FeasibleForAnySpread) {
    SystemConfig cfg;
    Rng rng(16);
    for (double spread : {0.0, 0.05, 0.5, 1.0}) {
        cfg.init_spread = spread;
        for (int i = 0; i < 50; ++i) EXPECT_LE(relaxed_excess(random_initial_point(cfg, rng), cfg), 1e-12);
    }
}
