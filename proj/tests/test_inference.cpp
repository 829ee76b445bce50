#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <thread>

#include "nnsd/inference.hpp"
#include "support.hpp"

using namespace nnsd;

namespace {

double log_normal_pdf(double x, double mean, double var) {
    return -0.5 * std::log(2.0 * M_PI * var) - (x - mean) * (x - mean) / (2.0 * var);
}

double log_invgamma_pdf(double x, double a, double b) {
    return a * std::log(b) - std::lgamma(a) - (a + 1.0) * std::log(x) - b / x;
}

// Independent term-by-term evaluation of the joint density.
double joint_oracle(const ModelState& s, const SpatialDomain& d, const Hyperparams& hp) {
    const Index n = d.size();
    double total = 0.0;
    for (Index i = 0; i < n; ++i) total += log_normal_pdf(d.y(i), s.mu(i), d.var_y(i));
    const Vector m = d.X * s.beta + s.eps;
    for (Index i = 0; i < n; ++i) total += log_normal_pdf(s.mu(i), m(i), s.sigma2_mu);

    const Matrix l = s.adjacency.laplacian();
    Eigen::SelfAdjointEigenSolver<Matrix> es(l);
    const double top = std::max(1.0, es.eigenvalues().maxCoeff());
    for (Index k = 0; k < n; ++k) {
        const double lam = es.eigenvalues()(k);
        if (lam <= 1e-8 * top) continue;
        const double c = es.eigenvectors().col(k).dot(s.eps);
        total += -0.5 * std::log(2.0 * M_PI * s.sigma2_eps) + 0.5 * std::log(lam) - lam * c * c / (2.0 * s.sigma2_eps);
    }
    for (Index c = 0; c < s.beta.size(); ++c) total += log_normal_pdf(s.beta(c), 0.0, hp.sigma2_beta);
    total += log_invgamma_pdf(s.sigma2_mu, hp.a_mu, hp.b_mu) + log_invgamma_pdf(s.sigma2_eps, hp.a_eps, hp.b_eps);
    if (hp.variant == Variant::ICAR) return total;

    for (Index i = 0; i < n; ++i)
        for (Index j = i + 1; j < n; ++j) {
            const double d2 = (s.positions.row(i) - s.positions.row(j)).norm();
            const double p = 1.0 / (1.0 + std::exp(-(s.nbr.alpha - s.nbr.gamma * d.d1(i, j) - (1.0 - s.nbr.gamma) * d2)));
            total += s.adjacency.has_edge(i, j) ? std::log(p) : std::log1p(-p);
        }
    total += log_normal_pdf(s.nbr.alpha, 0.0, hp.sigma2_alpha);
    for (Index i = 0; i < n; ++i) {
        const Eigen::Vector2d mean =
            d.S.empty() ? Eigen::Vector2d::Zero() : Eigen::Vector2d(d.S[static_cast<std::size_t>(i)] * s.nbr.delta);
        total += log_normal_pdf(s.positions(i, 0), mean(0), hp.sigma2_z) +
                 log_normal_pdf(s.positions(i, 1), mean(1), hp.sigma2_z);
        if (!d.S.empty()) total -= disk_log_normalizer(mean, hp.sigma2_z);
    }
    for (Index c = 0; c < s.nbr.delta.size(); ++c) total += log_normal_pdf(s.nbr.delta(c), 0.0, hp.sigma2_delta);
    return total;
}

// log density of r = mu - X beta with eps integrated out: N(0, s2mu I + s2eps L^+).
double collapsed_oracle(const ModelState& s, const SpatialDomain& d) {
    const Index n = d.size();
    const Matrix cov = s.sigma2_mu * Matrix::Identity(n, n) + s.sigma2_eps * testkit::laplacian_pinv(s.adjacency.laplacian());
    return testkit::gaussian_logpdf(s.mu - d.X * s.beta, cov);
}

std::pair<Index, Index> random_pair(Index n, Rng& rng) {
    std::uniform_int_distribution<Index> pick(0, n - 1);
    Index i = pick(rng), j = pick(rng);
    while (j == i) j = pick(rng);
    return {std::min(i, j), std::max(i, j)};
}

SpatialDomain p3_domain() {
    Matrix pts(3, 2);
    pts << 0.0, 0.0, 1.0, 0.3, 2.0, -0.2;
    return make_domain({"a", "b", "c"}, pts, Eigen::Vector3d(2.0, 1.4, 2.6), Vector::Constant(1, 0.05), Matrix(),
                       Matrix(), testkit::path_graph(3));
}

} // namespace

TEST(JointLogdensity, MatchesIndependentImplementation) {
    Rng rng(41);
    for (int t = 0; t < 10; ++t) {
        const SpatialDomain d = testkit::random_domain(6 + t, rng, true, t % 2 == 0 ? 1 : 0);
        Hyperparams hp;
        hp.variant = t % 3 == 0 ? Variant::ICAR : Variant::NNSD;
        const ModelState s = testkit::random_state(d, 0.3, rng);
        EXPECT_NEAR(joint_logdensity(s, d, hp), joint_oracle(s, d, hp), 1e-10);
    }
}

TEST(JointLogdensity, OnlyYTermChangesWithY) {
    Rng rng(42);
    SpatialDomain d = testkit::random_domain(7, rng);
    const Hyperparams hp;
    const ModelState s = testkit::random_state(d, 0.3, rng);
    const double before = joint_logdensity(s, d, hp);
    const Vector y_old = d.y;
    d.y(3) += 0.7;
    double expected = 0.0;
    for (Index i = 0; i < d.size(); ++i)
        expected += log_normal_pdf(d.y(i), s.mu(i), d.var_y(i)) - log_normal_pdf(y_old(i), s.mu(i), d.var_y(i));
    EXPECT_NEAR(joint_logdensity(s, d, hp) - before, expected, 1e-10);
}

TEST(JointLogdensity, SupportSentinels) {
    Rng rng(43);
    const SpatialDomain d = testkit::random_domain(5, rng);
    const Hyperparams hp;
    ModelState s = testkit::random_state(d, 0.4, rng);
    s.nbr.gamma = 1.2;
    EXPECT_EQ(joint_logdensity(s, d, hp), kNegInf);
    s.nbr.gamma = 0.5;
    s.positions(0, 0) = 1.01;
    s.positions(0, 1) = 0.0;
    EXPECT_EQ(joint_logdensity(s, d, hp), kNegInf);
    ModelState c = testkit::random_state(d, 0.9, rng);
    c.eps.array() += 0.5;
    if (c.adjacency.edge_count() > 0) EXPECT_EQ(joint_logdensity(c, d, hp), kNegInf);
}

TEST(LocationParams, MuFollowsDataAsVarianceVanishes) {
    Rng rng(44);
    SpatialDomain d = testkit::random_domain(6, rng);
    d.var_y.setConstant(1e-12);
    ModelState s = testkit::random_state(d, 0.3, rng);
    const Hyperparams hp;
    EXPECT_LT((mu_conditional(s, d).mean - d.y).cwiseAbs().maxCoeff(), 1e-9);
    UpdateSwitches only_mu;
    only_mu.beta = only_mu.delta = false;
    gibbs_update_location_params(s, d, hp, rng, only_mu);
    EXPECT_LT((s.mu - d.y).cwiseAbs().maxCoeff(), 1e-4);
}

TEST(LocationParams, InterceptOnlyBetaIsShrunkAverage) {
    Rng rng(45);
    Matrix pts = testkit::random_disk_points(5, 1.0, rng);
    const SpatialDomain d =
        make_domain({"a", "b", "c", "d", "e"}, pts, testkit::random_vector(5, 1.0, rng), Vector::Constant(1, 0.1), Matrix());
    ModelState s = testkit::random_state(d, 0.5, rng);
    Hyperparams hp;
    hp.sigma2_beta = 4.0;
    const double n = 5.0;
    const double prec = n / s.sigma2_mu + 1.0 / hp.sigma2_beta;
    const double mean = (s.mu - s.eps).sum() / s.sigma2_mu / prec;
    const GaussianConditional g = beta_conditional(s, d, hp);
    EXPECT_NEAR(g.mean(0), mean, 1e-12);
    EXPECT_NEAR(g.covariance(0, 0), 1.0 / prec, 1e-12);
}

TEST(LocationParams, MonteCarloMomentsMatchConditionals) {
    Rng rng(46);
    const SpatialDomain d = testkit::random_domain(6, rng);
    const Hyperparams hp;
    const ModelState base = testkit::random_state(d, 0.4, rng);
    const GaussianConditional gb = beta_conditional(base, d, hp);
    const GaussianConditional gm = mu_conditional(base, d);
    const int draws = 50000;
    Vector sb = Vector::Zero(gb.mean.size()), sm = Vector::Zero(d.size());
    Matrix ob = Matrix::Zero(gb.mean.size(), gb.mean.size());
    Vector om = Vector::Zero(d.size());
    UpdateSwitches which;
    which.delta = false;
    for (int t = 0; t < draws; ++t) {
        ModelState s = base;
        gibbs_update_location_params(s, d, hp, rng, which);
        sb += s.beta;
        ob += s.beta * s.beta.transpose();
        sm += s.mu;
        om += s.mu.cwiseAbs2();
    }
    const Vector mb = sb / draws;
    const Matrix cb = ob / draws - mb * mb.transpose();
    for (Index k = 0; k < mb.size(); ++k) {
        EXPECT_NEAR(mb(k), gb.mean(k), 0.02 * std::max(std::abs(gb.mean(k)), std::sqrt(gb.covariance(k, k))));
        EXPECT_NEAR(cb(k, k), gb.covariance(k, k), 0.02 * gb.covariance(k, k));
    }
    // Marginal of mu over beta: mean uses E[beta], variance adds X Cov(beta) X'.
    const Vector mu_mean = (gm.mean.array() + (d.X * (gb.mean - base.beta)).array() *
                                                  (gm.covariance.diagonal().array() / base.sigma2_mu)).matrix();
    const Matrix xcx = d.X * gb.covariance * d.X.transpose();
    const Vector mu_var = (gm.covariance.diagonal().array() +
                           xcx.diagonal().array() * (gm.covariance.diagonal().array() / base.sigma2_mu).square())
                              .matrix();
    const Vector emp_m = sm / draws;
    const Vector emp_v = om / draws - emp_m.cwiseAbs2();
    for (Index i = 0; i < d.size(); ++i) {
        EXPECT_NEAR(emp_m(i), mu_mean(i), 0.02 * std::max(std::abs(mu_mean(i)), std::sqrt(mu_var(i))));
        EXPECT_NEAR(emp_v(i), mu_var(i), 0.02 * mu_var(i));
    }
}

TEST(LocationParams, DeltaTargetsTruncatedConditional) {
    // Delta draws must match a numerical integral of the exact conditional.
    Rng rng(47);
    Matrix pts = testkit::random_disk_points(4, 1.0, rng);
    Matrix pos(4, 1);
    pos << 2.0, -1.0, 1.5, 0.5;
    const SpatialDomain d = make_domain({"a", "b", "c", "d"}, pts, Vector::Zero(4), Vector::Constant(1, 0.1), Matrix(), pos);
    Hyperparams hp;
    hp.sigma2_delta = 1.0;
    ModelState s = testkit::random_state(d, 0.3, rng);
    s.positions << 0.5, 0.2, -0.3, 0.1, 0.4, 0.6, 0.0, -0.2;

    // The disk normalizer couples the two coordinates; integrate on a grid.
    const int g = 161;
    const double lo = -3.0, hi = 3.0, h = (hi - lo) / (g - 1);
    double z = 0.0, m0 = 0.0, m1 = 0.0;
    for (int a = 0; a < g; ++a)
        for (int b = 0; b < g; ++b) {
            Vector delta(2);
            delta << lo + a * h, lo + b * h;
            ModelState t = s;
            t.nbr.delta = delta;
            const double w = std::exp(position_logprior(t.positions, d.S, delta, hp.sigma2_z) -
                                      position_log_normalizer(d.S, delta, hp.sigma2_z) +
                                      log_normal_pdf(delta(0), 0, 1) + log_normal_pdf(delta(1), 0, 1));
            z += w;
            m0 += w * delta(0);
            m1 += w * delta(1);
        }
    m0 /= z;
    m1 /= z;

    UpdateSwitches only_delta;
    only_delta.beta = only_delta.mu = false;
    const int draws = 200000;
    double e0 = 0.0, e1 = 0.0;
    for (int t = 0; t < draws; ++t) {
        gibbs_update_location_params(s, d, hp, rng, only_delta);
        e0 += s.nbr.delta(0);
        e1 += s.nbr.delta(1);
    }
    EXPECT_NEAR(e0 / draws, m0, 0.02);
    EXPECT_NEAR(e1 / draws, m1, 0.02);
}

TEST(Variances, ZeroResidualAndEmptyGraph) {
    Rng rng(48);
    const SpatialDomain d = testkit::random_domain(6, rng);
    const Hyperparams hp;
    ModelState s = testkit::random_state(d, 0.4, rng);
    s.mu = d.X * s.beta + s.eps;
    const InverseGammaParams mu = sigma2_mu_conditional(s, d, hp);
    EXPECT_EQ(mu.rate, hp.b_mu);
    EXPECT_EQ(mu.shape, hp.a_mu + 3.0);

    s.adjacency = AdjacencyState::empty(6);
    s.eps.setZero();
    const InverseGammaParams eps = sigma2_eps_conditional(s, hp);
    EXPECT_EQ(eps.shape, hp.a_eps);
    EXPECT_EQ(eps.rate, hp.b_eps);
}

TEST(Variances, MonteCarloMeans) {
    Rng rng(49);
    const SpatialDomain d = testkit::random_domain(8, rng);
    const Hyperparams hp;
    const ModelState base = testkit::random_state(d, 0.5, rng);
    const InverseGammaParams pm = sigma2_mu_conditional(base, d, hp);
    const InverseGammaParams pe = sigma2_eps_conditional(base, hp);
    const int draws = 50000;
    double sm = 0.0, se = 0.0;
    for (int t = 0; t < draws; ++t) {
        ModelState s = base;
        gibbs_update_variances(s, d, hp, rng);
        sm += s.sigma2_mu;
        se += s.sigma2_eps;
    }
    EXPECT_NEAR(sm / draws, pm.rate / (pm.shape - 1.0), 0.02 * pm.rate / (pm.shape - 1.0));
    EXPECT_NEAR(se / draws, pe.rate / (pe.shape - 1.0), 0.02 * pe.rate / (pe.shape - 1.0));
}

TEST(Epsilon, UpdateKeepsConstraint) {
    Rng rng(50);
    const SpatialDomain d = testkit::random_domain(12, rng);
    ModelState s = testkit::random_state(d, 0.15, rng);
    for (int t = 0; t < 50; ++t) {
        gibbs_update_epsilon(s, d, rng);
        EXPECT_LE(max_constraint_violation(s.eps, s.adjacency.component_labels()), kConstraintTolerance);
    }
}

TEST(AlphaGamma, RatioMatchesJointDifference) {
    Rng rng(51);
    std::normal_distribution<double> g(0.0, 0.3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int t = 0; t < 100; ++t) {
        const SpatialDomain d = testkit::random_domain(5 + t % 6, rng);
        const Hyperparams hp;
        const ModelState s = testkit::random_state(d, 0.3, rng);
        const double a_new = s.nbr.alpha + g(rng), g_new = u(rng);
        ModelState moved = s;
        moved.nbr.alpha = a_new;
        moved.nbr.gamma = g_new;
        EXPECT_NEAR(alpha_gamma_log_ratio(s, d, hp, a_new, g_new),
                    joint_logdensity(moved, d, hp) - joint_logdensity(s, d, hp), 1e-10);
        EXPECT_EQ(alpha_gamma_log_ratio(s, d, hp, s.nbr.alpha, s.nbr.gamma), 0.0);
    }
}

TEST(AlphaGamma, ReflectionStaysInUnitInterval) {
    Rng rng(52);
    std::normal_distribution<double> g(0.0, 3.0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int t = 0; t < 1000000; ++t) {
        const double r = reflect_unit_interval(u(rng) + g(rng));
        ASSERT_GE(r, 0.0);
        ASSERT_LE(r, 1.0);
    }
    EXPECT_NEAR(reflect_unit_interval(1.2), 0.8, 1e-15);
    EXPECT_NEAR(reflect_unit_interval(-0.3), 0.3, 1e-15);
    EXPECT_NEAR(reflect_unit_interval(2.25), 0.25, 1e-15);
}

TEST(AlphaGamma, PinnedVariantsLeaveGammaAlone) {
    Rng rng(53);
    const SpatialDomain d = testkit::random_domain(6, rng);
    for (Variant v : {Variant::NN, Variant::SD}) {
        Hyperparams hp;
        hp.variant = v;
        ModelState s = testkit::random_state(d, 0.3, rng);
        s.nbr.gamma = v == Variant::NN ? 1.0 : 0.0;
        for (int t = 0; t < 200; ++t) {
            const AlphaGammaResult r = mh_update_alpha_gamma(s, d, hp, rng, StepSizes{});
            EXPECT_FALSE(r.gamma_proposed);
        }
        EXPECT_EQ(s.nbr.gamma, v == Variant::NN ? 1.0 : 0.0);
    }
}

TEST(Positions, RatioMatchesJointDifference) {
    Rng rng(54);
    for (int t = 0; t < 100; ++t) {
        const SpatialDomain d = testkit::random_domain(5 + t % 6, rng, true, t % 2);
        const Hyperparams hp;
        const ModelState s = testkit::random_state(d, 0.3, rng);
        const Index i = t % d.size();
        const Eigen::Vector2d z_new = testkit::random_disk_points(1, 1.0, rng).row(0).transpose();
        ModelState moved = s;
        moved.positions.row(i) = z_new.transpose();
        EXPECT_NEAR(position_move_log_ratio(s, d, hp, i, z_new),
                    joint_logdensity(moved, d, hp) - joint_logdensity(s, d, hp), 1e-10);
    }
}

TEST(Positions, OutsideDiskRejectedAndGammaOneIsPriorOnly) {
    Rng rng(55);
    const SpatialDomain d = testkit::random_domain(6, rng);
    const Hyperparams hp;
    ModelState s = testkit::random_state(d, 0.4, rng);
    EXPECT_EQ(position_move_log_ratio(s, d, hp, 2, Eigen::Vector2d(1.0, 0.2)), kNegInf);

    s.nbr.gamma = 1.0;
    const Eigen::Vector2d z_new(0.1, -0.4);
    const Eigen::Vector2d z_old = s.positions.row(1).transpose();
    const double prior = -(z_new.squaredNorm() - z_old.squaredNorm()) / (2.0 * hp.sigma2_z);
    EXPECT_NEAR(position_move_log_ratio(s, d, hp, 1, z_new), prior, 1e-12);

    // A huge step proposes almost surely outside the disk; nothing moves.
    ModelState frozen = s;
    frozen.positions.setZero();
    frozen.positions(0, 0) = 0.999;
    const Matrix before = frozen.positions;
    const AcceptanceCounter c = mh_update_positions(frozen, d, hp, rng, 1e6);
    EXPECT_EQ(c.accepted, 0u);
    EXPECT_EQ(frozen.positions, before);
}

TEST(Positions, SkippedForNnAndIcar) {
    Rng rng(56);
    const SpatialDomain d = testkit::random_domain(6, rng);
    for (Variant v : {Variant::NN, Variant::ICAR}) {
        Hyperparams hp;
        hp.variant = v;
        ModelState s = testkit::random_state(d, 0.4, rng);
        const Matrix before = s.positions;
        EXPECT_EQ(mh_update_positions(s, d, hp, rng, 0.1).proposed, 0u);
        EXPECT_EQ(s.positions, before);
    }
}

TEST(EdgeFlips, WithinComponentRatioMatchesJointDifference) {
    Rng rng(57);
    int checked = 0;
    double worst = 0.0;
    while (checked < 1000) {
        const SpatialDomain d = testkit::random_domain(5 + checked % 10, rng);
        const Hyperparams hp;
        ModelState s = testkit::random_state(d, 0.5, rng);
        const auto [i, j] = random_pair(d.size(), rng);
        const FlipEvaluation e = evaluate_flip(s, d, hp, i, j);
        const AdjacencyState after = s.adjacency.flipped(i, j);
        EXPECT_EQ(e.partition_change, after.component_labels() != s.adjacency.component_labels());
        if (e.partition_change) continue;
        ModelState moved = s;
        moved.adjacency = after;
        worst = std::max(worst, std::abs(e.log_ratio - (joint_logdensity(moved, d, hp) - joint_logdensity(s, d, hp))));
        ++checked;
    }
    EXPECT_LT(worst, 1e-8);
}

TEST(EdgeFlips, PartitionChangeRatioMatchesCollapsedOracle) {
    Rng rng(58);
    int checked = 0;
    double worst = 0.0;
    while (checked < 300) {
        const SpatialDomain d = testkit::random_domain(4 + checked % 9, rng);
        const Hyperparams hp;
        ModelState s = testkit::random_state(d, 0.2, rng);
        const auto [i, j] = random_pair(d.size(), rng);
        const FlipEvaluation e = evaluate_flip(s, d, hp, i, j);
        if (!e.partition_change) continue;
        ModelState moved = s;
        moved.adjacency = s.adjacency.flipped(i, j);
        const double oracle = adjacency_logprob(moved.adjacency, s.nbr, s.positions, d.d1) -
                              adjacency_logprob(s.adjacency, s.nbr, s.positions, d.d1) + collapsed_oracle(moved, d) -
                              collapsed_oracle(s, d);
        worst = std::max(worst, std::abs(e.log_ratio - oracle));
        ++checked;
    }
    EXPECT_LT(worst, 1e-8);
}

TEST(EdgeFlips, StrongPriorBlocksRemovals) {
    Rng rng(59);
    const SpatialDomain d = testkit::random_domain(6, rng);
    const Hyperparams hp;
    ModelState s = testkit::random_state(d, 1.0, rng);
    s.nbr.alpha = 30.0;
    s.eps = sample_icar_prior(s.adjacency, s.sigma2_eps, rng);
    const Index before = s.adjacency.edge_count();
    ASSERT_EQ(before, 15);
    const FlipCounters c = mh_flip_edges(s, d, hp, rng, 2000);
    EXPECT_EQ(c.within.accepted + c.partition.accepted, 0u);
    EXPECT_EQ(s.adjacency.edge_count(), before);
}

TEST(EdgeFlips, CachesStayConsistentAcrossManyFlips) {
    Rng rng(60);
    const SpatialDomain d = testkit::random_domain(15, rng);
    const Hyperparams hp;
    ModelState s = testkit::random_state(d, 0.15, rng);
    s.nbr.alpha = -0.5;
    for (int sweep_no = 0; sweep_no < 40; ++sweep_no) {
        mh_flip_edges(s, d, hp, rng, 105);
        ASSERT_LE(max_constraint_violation(s.eps, s.adjacency.component_labels()), kConstraintTolerance);
        const AdjacencyState fresh(s.adjacency.matrix());
        EXPECT_NEAR(s.adjacency.pseudo_logdet(), fresh.pseudo_logdet(), 1e-8);
        EXPECT_EQ(s.adjacency.component_labels(), fresh.component_labels());
        EXPECT_TRUE(std::isfinite(joint_logdensity(s, d, hp)));
    }
}

TEST(EdgeFlips, RejectedForIcar) {
    Rng rng(61);
    const SpatialDomain d = testkit::random_domain(5, rng);
    Hyperparams hp;
    hp.variant = Variant::ICAR;
    ModelState s = testkit::random_state(d, 0.3, rng);
    EXPECT_THROW(evaluate_flip(s, d, hp, 0, 1), ConfigError);
    EXPECT_THROW(mh_flip_edges(s, d, hp, rng, 1), ConfigError);
}

TEST(RunChain, SameSeedSameTraces) {
    Rng rng(62);
    const SpatialDomain d = testkit::random_domain(8, rng);
    Hyperparams hp;
    ChainConfig cfg;
    cfg.iterations = 200;
    cfg.burn_in = 100;
    cfg.seed = 99;
    const ChainDraws a = run_chain(d, hp, cfg);
    const ChainDraws b = run_chain(d, hp, cfg);
    EXPECT_EQ(a.scalars, b.scalars);
    EXPECT_EQ(a.edge_inclusion, b.edge_inclusion);
    cfg.seed = 100;
    EXPECT_NE(run_chain(d, hp, cfg).scalars, a.scalars);
}

TEST(RunChain, RetainedDrawCount) {
    Rng rng(63);
    const SpatialDomain d = testkit::random_domain(5, rng);
    ChainConfig cfg;
    cfg.iterations = 53;
    cfg.burn_in = 50;
    cfg.thin = 3;
    EXPECT_EQ(run_chain(d, Hyperparams{}, cfg).n_draws(), 1);
    cfg.iterations = 80;
    cfg.burn_in = 20;
    cfg.thin = 7;
    const ChainDraws c = run_chain(d, Hyperparams{}, cfg);
    EXPECT_EQ(c.n_draws(), 60 / 7);
    EXPECT_EQ(static_cast<Index>(c.snapshots.size()), 60 / 7);
}

TEST(RunChain, ConfigValidation) {
    ChainConfig cfg;
    cfg.iterations = 100;
    cfg.burn_in = 100;
    try {
        cfg.validate();
        FAIL();
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("100"), std::string::npos);
        EXPECT_NE(msg.find("burn_in"), std::string::npos);
    }
    cfg.burn_in = 10;
    cfg.thin = 0;
    EXPECT_THROW(cfg.validate(), ConfigError);
    Hyperparams hp;
    hp.b_mu = -1.0;
    EXPECT_THROW(hp.validate(), ConfigError);
}

TEST(RunChain, IcarPathPosteriorMeanOfMu) {
    const SpatialDomain d = p3_domain();
    Hyperparams hp;
    hp.variant = Variant::ICAR;
    Rng rng(64);
    ModelState init = initial_state(d, hp, 0, rng);
    init.sigma2_mu = 0.3;
    init.sigma2_eps = 0.7;
    ChainConfig cfg;
    cfg.iterations = 22000;
    cfg.burn_in = 2000;
    cfg.seed = 5;
    cfg.switches.variances = false;
    const ChainDraws c = run_chain(d, hp, cfg, init);

    // Prior covariance of mu with beta and eps integrated out.
    const Index n = 3;
    const Matrix sigma = hp.sigma2_beta * d.X * d.X.transpose() +
                         0.7 * testkit::laplacian_pinv(AdjacencyState(*d.geo_adjacency).laplacian()) +
                         0.3 * Matrix::Identity(n, n);
    const Vector expected = sigma * (sigma + Matrix(d.var_y.asDiagonal())).ldlt().solve(d.y);
    const Vector got = c.mu_draws().colwise().mean().transpose();
    for (Index i = 0; i < n; ++i) EXPECT_NEAR(got(i), expected(i), 0.02 * std::abs(expected(i)));
}

TEST(RunChain, VariantConsistencyAndConstraint) {
    Rng rng(65);
    const SpatialDomain d = testkit::random_domain(8, rng);
    ChainConfig cfg;
    cfg.iterations = 150;
    cfg.burn_in = 50;
    for (Variant v : {Variant::NN, Variant::SD, Variant::ICAR, Variant::NNSD}) {
        Hyperparams hp;
        hp.variant = v;
        const ChainDraws c = run_chain(d, hp, cfg);
        for (const auto& snap : c.snapshots) {
            if (v == Variant::NN) EXPECT_EQ(snap.gamma, 1.0);
            if (v == Variant::SD) EXPECT_EQ(snap.gamma, 0.0);
            ASSERT_LE(max_constraint_violation(snap.eps, snap.component_labels), kConstraintTolerance);
        }
        if (v == Variant::ICAR) EXPECT_EQ(c.edge_inclusion, d.geo_adjacency->cast<double>());
        EXPECT_EQ(c.final_state.nbr.gamma, v == Variant::NN ? 1.0 : v == Variant::SD ? 0.0 : c.final_state.nbr.gamma);
    }
}

TEST(RunChain, IcarNeedsGeography) {
    Rng rng(66);
    const SpatialDomain d = testkit::random_domain(5, rng, false);
    Hyperparams hp;
    hp.variant = Variant::ICAR;
    ChainConfig cfg;
    cfg.iterations = 10;
    cfg.burn_in = 5;
    EXPECT_THROW(run_chain(d, hp, cfg), ConfigError);
}

TEST(RunChains, DeterministicWithDistinctSubSeeds) {
    Rng rng(67);
    const SpatialDomain d = testkit::random_domain(6, rng);
    ChainConfig cfg;
    cfg.iterations = 120;
    cfg.burn_in = 60;
    cfg.seed = 3;
    const auto a = run_chains(d, Hyperparams{}, cfg, 2, true);
    const auto b = run_chains(d, Hyperparams{}, cfg, 2, false);
    ASSERT_EQ(a.size(), 2u);
    EXPECT_EQ(a[0].scalars, b[0].scalars);
    EXPECT_EQ(a[1].scalars, b[1].scalars);
    EXPECT_NE(a[0].seed, a[1].seed);
    EXPECT_NE(chain_seed(3, 0), chain_seed(3, 1));
    EXPECT_NE(chain_seed(3, 0), chain_seed(4, 0));
}

TEST(RunChains, ParallelSpeedup) {
    if (std::thread::hardware_concurrency() < 2) GTEST_SKIP() << "needs at least two hardware threads";
    Rng rng(68);
    const SpatialDomain d = testkit::random_domain(25, rng);
    ChainConfig cfg;
    cfg.iterations = 400;
    cfg.burn_in = 200;
    auto time = [&](int chains, bool parallel) {
        const auto t0 = std::chrono::steady_clock::now();
        run_chains(d, Hyperparams{}, cfg, chains, parallel);
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    };
    const double one = time(1, false);
    const double two = time(2, true);
    EXPECT_LT(two, 1.7 * one);
}

TEST(InitialState, OverdispersedAndFinite) {
    Rng rng(69);
    const SpatialDomain d = testkit::random_domain(9, rng);
    const Hyperparams hp;
    std::vector<double> alphas;
    for (int c = 0; c < 4; ++c) {
        Rng r(1);
        const ModelState s = initial_state(d, hp, c, r);
        EXPECT_TRUE(std::isfinite(joint_logdensity(s, d, hp)));
        EXPECT_LE(s.positions.rowwise().norm().maxCoeff(), 1.0);
        alphas.push_back(s.nbr.alpha);
    }
    std::sort(alphas.begin(), alphas.end());
    EXPECT_TRUE(std::adjacent_find(alphas.begin(), alphas.end()) == alphas.end());
}
