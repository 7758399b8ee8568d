#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "otflow/divergence.hpp"
#include "otflow/map_family.hpp"
#include "otflow/oracles.hpp"
#include "otflow/rng.hpp"
#include "otflow/schemes.hpp"

using namespace otflow;

namespace {

Mat gaussian_cloud(Rng& rng, int n, int d) {
    Mat X(n, d);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) X(i, j) = rng.normal();
    return X;
}

TargetPotential flat_target() {
    TargetPotential t;
    t.grad_v = [](const Vec& x) { return Vec::Zero(x.size()); };
    t.value = [](const Vec&) { return 0.0; };
    t.label = "flat";
    return t;
}

// T_theta(x)_a = sum_k theta[a*p + k] * psi_k(x) with fixed random ridge
// features psi; linear in theta with m = d*p.
LinearFeatureMap random_feature_map(int d, int p, std::uint64_t seed) {
    Rng rng(seed, "features");
    Mat W(p, d);
    Vec b(p);
    for (int k = 0; k < p; ++k) {
        for (int j = 0; j < d; ++j) W(k, j) = rng.normal();
        b[k] = rng.normal();
    }
    return LinearFeatureMap(d, d * p, [d, p, W, b](const Vec& x) {
        Vec psi(p);
        for (int k = 0; k < p; ++k) psi[k] = std::sin(W.row(k).dot(x) + b[k]) + 0.2;
        Mat B = Mat::Zero(d, d * p);
        for (int a = 0; a < d; ++a)
            for (int k = 0; k < p; ++k) B(a, a * p + k) = psi[k];
        return B;
    });
}

Mat stack_jacobians(const std::vector<Mat>& J) {
    const int d = static_cast<int>(J[0].rows());
    Mat A(static_cast<int>(J.size()) * d, J[0].cols());
    for (std::size_t i = 0; i < J.size(); ++i) A.middleRows(static_cast<int>(i) * d, d) = J[i];
    return A;
}

}  // namespace

TEST_CASE("adam: zero gradient, determinism, constant-gradient sign limit") {
    Vec theta(3);
    theta << 1.0, -2.0, 0.5;
    AdamState st = AdamState::zero(3);
    auto [t1, st1] = adam_step(theta, st, Vec::Zero(3), 0.1);
    CHECK(t1 == theta);

    Vec g(3);
    g << 0.3, -4.0, 1e-4;
    auto [a1, sa1] = adam_step(theta, AdamState::zero(3), g, 0.1);
    auto [a2, sa2] = adam_step(theta, AdamState::zero(3), g, 0.1);
    CHECK(a1 == a2);
    CHECK(sa1.step_count == sa2.step_count);

    Vec cur = theta;
    AdamState state = AdamState::zero(3);
    Vec prev = cur;
    for (int i = 0; i < 1000; ++i) {
        prev = cur;
        auto [nx, ns] = adam_step(cur, std::move(state), g, 0.01);
        cur = std::move(nx);
        state = std::move(ns);
    }
    const Vec step = cur - prev;
    for (int i = 0; i < 3; ++i) {
        CHECK(std::fabs(step[i]) == doctest::Approx(0.01).epsilon(0.02));
        CHECK(step[i] * g[i] < 0.0);
    }
}

TEST_CASE("euclidean step: stationary at zero field, matches finite differences") {
    Rng rng(1, "euclid");
    const auto family = affine_line_map();
    const Mat X = gaussian_cloud(rng, 30, 1);
    Vec theta(2);
    theta << 1.4, -0.3;

    const PotentialEnergyModel flat(flat_target());
    CHECK(euclidean_step(family, flat, theta, X, 0.5) == theta);

    const PotentialEnergyModel quad(standard_gaussian_target());
    const double tau = 0.25;
    const Vec next = euclidean_step(family, quad, theta, X, tau);
    const Vec direction = (theta - next) / tau;  // = grad of the surrogate
    const Vec fd = oracles::finite_diff_gradient(
        [&](const Vec& p) {
            const Mat pushed = family.eval(p, X);
            return 0.5 * pushed.rowwise().squaredNorm().mean();
        },
        theta, 1e-6);
    CHECK((direction - fd).norm() / std::max(1.0, fd.norm()) <= 1e-4);

    // one small step decreases the surrogate on a fixed batch
    const double before = 0.5 * family.eval(theta, X).rowwise().squaredNorm().mean();
    const double after = 0.5 * family.eval(next, X).rowwise().squaredNorm().mean();
    CHECK(after < before);
}

TEST_CASE("euclidean step on the network matches finite differences of the surrogate") {
    const IcnnSpec spec{2, {4, 4}};
    const IcnnMap family(spec);
    Rng rng(2, "euclid-net");
    const Vec theta = init_params(spec, rng);
    const Mat X = gaussian_cloud(rng, 10, 2);
    const PotentialEnergyModel quad(standard_gaussian_target());
    const double tau = 0.1;
    const Vec next = euclidean_step(family, quad, theta, X, tau);
    const Vec direction = (theta - next) / tau;
    const Vec fd = oracles::finite_diff_gradient(
        [&](const Vec& p) {
            const Mat pushed = family.eval(p, X);
            return 0.5 * pushed.rowwise().squaredNorm().mean();
        },
        theta, 1e-5);
    CHECK((direction - fd).norm() / std::max(1.0, fd.norm()) <= 1e-4);
}

TEST_CASE("explicit step: zero field returns theta_k, objective never increases") {
    Rng rng(3, "explicit");
    const auto family = affine_line_map();
    const Mat X = gaussian_cloud(rng, 20, 1);
    Vec theta(2);
    theta << 0.8, 0.1;

    const PotentialEnergyModel flat(flat_target());
    const auto [next, diag] = explicit_constrained_step(family, flat, theta, X, 0.5, 50);
    CHECK(next == theta);
    CHECK(diag.map_displacement == 0.0);

    // with a quadratic target the accepted iterate improves on theta_k
    const PotentialEnergyModel quad(standard_gaussian_target());
    const auto [next2, diag2] =
        explicit_constrained_step(family, quad, theta, X, 0.5, 100, InnerOptimizer::adam, 0.05);
    const GradField field = quad.field(family.eval(theta, X));
    const Mat v = -field.vectors;
    const Mat anchor = family.eval(theta, X);
    auto objective = [&](const Vec& p) {
        return (v - (family.eval(p, X) - anchor) / 0.5).rowwise().squaredNorm().mean();
    };
    CHECK(objective(next2) <= objective(theta));
    CHECK(objective(next2) < objective(theta));  // strictly better here
}

TEST_CASE("explicit inner solution converges to the normal-equations solve") {
    Rng rng(4, "ne");
    const auto family = random_feature_map(1, 2, 7);  // m = 2, d = 1
    const Mat X = gaussian_cloud(rng, 25, 1);
    Vec theta(2);
    theta << 0.6, -0.2;
    const double tau = 0.5;

    const PotentialEnergyModel quad(standard_gaussian_target());
    const GradField field = quad.field(family.eval(theta, X));
    const Mat v = -field.vectors;

    // oracle: theta* = theta_k + tau * G^+ ((1/n) sum B_i^T v_i)
    const auto J = family.jacobians(theta, X);
    const int m = family.param_count();
    Mat G = Mat::Zero(m, m);
    Vec rhs = Vec::Zero(m);
    for (std::size_t i = 0; i < J.size(); ++i) {
        G += J[i].transpose() * J[i];
        rhs += J[i].transpose() * v.row(static_cast<int>(i)).transpose();
    }
    G /= static_cast<double>(X.rows());
    rhs /= static_cast<double>(X.rows());
    const Vec oracle = theta + tau * G.ldlt().solve(rhs);

    // gd inner loop on the quadratic converges geometrically
    const double L = 2.0 * Eigen::SelfAdjointEigenSolver<Mat>(G).eigenvalues().maxCoeff() /
                     (tau * tau);
    const auto [next, diag] = explicit_constrained_step(family, quad, theta, X, tau, 20000,
                                                        InnerOptimizer::gd, 1.0 / L);
    CHECK((next - oracle).norm() <= 1e-6);
}

TEST_CASE("implicit step matches the closed-form prox on a linear quadratic problem") {
    Rng rng(5, "prox");
    const auto family = affine_line_map();
    const Mat X = gaussian_cloud(rng, 30, 1);
    Vec theta(2);
    theta << 1.2, 0.7;
    const double tau = 0.8;

    // For V(y) = y^2/2 the prox of the surrogate in theta solves
    // G theta + (G/tau)(theta - theta_k) = 0, i.e. theta* = theta_k/(1+tau).
    const Vec oracle = theta / (1.0 + tau);

    const PotentialEnergyModel quad(standard_gaussian_target());
    const auto J = family.jacobians(theta, X);
    Mat G = Mat::Zero(2, 2);
    for (const auto& Ji : J) G += Ji.transpose() * Ji;
    G /= static_cast<double>(X.rows());
    const double lmax = Eigen::SelfAdjointEigenSolver<Mat>(G).eigenvalues().maxCoeff();
    const double L = lmax * (1.0 + 1.0 / tau);
    const auto [next, diag] = implicit_constrained_step(family, quad, theta, X, tau, 20000,
                                                        InnerOptimizer::gd, 1.0 / L);
    CHECK((next - oracle).norm() <= 1e-6);
    CHECK(diag.inexactness_delta.has_value());
}

TEST_CASE("prox inexactness certificate approaches 1/2 at an exact full-rank solve") {
    // With one 1d sample the affine family spans the whole map space, so the
    // ambient prox optimality grad F + dT/tau = 0 holds exactly and the
    // certificate tau * ||grad F + dT/(2 tau)|| / ||dT|| collapses to 1/2.
    const auto family = affine_line_map();
    Mat X(1, 1);
    X << 0.7;
    Vec theta(2);
    theta << 1.5, -0.4;
    const double tau = 0.6;
    const PotentialEnergyModel quad(standard_gaussian_target());
    const auto [next, diag] = implicit_constrained_step(family, quad, theta, X, tau, 30000,
                                                        InnerOptimizer::gd, 0.05);
    REQUIRE(diag.inexactness_delta.has_value());
    CHECK(*diag.inexactness_delta == doctest::Approx(0.5).epsilon(1e-5));
}

TEST_CASE("implicit step with a vanishing time step stays at theta_k") {
    Rng rng(6, "tau0");
    const auto family = affine_line_map();
    const Mat X = gaussian_cloud(rng, 15, 1);
    Vec theta(2);
    theta << 0.9, -0.1;
    const PotentialEnergyModel quad(standard_gaussian_target());
    const auto [next, diag] = implicit_constrained_step(family, quad, theta, X, 1e-9, 100,
                                                        InnerOptimizer::adam, 1e-2);
    CHECK(next == theta);  // proximity dominates; theta_k is the best iterate
}

TEST_CASE("prox descent inequality holds along the implicit sequence") {
    Rng rng(7, "descent");
    const auto family = random_feature_map(2, 6, 11);
    const Mat X = gaussian_cloud(rng, 40, 2);
    const PotentialEnergyModel quad(standard_gaussian_target());
    const double tau = 0.05;

    Vec theta = Vec::Zero(family.param_count());
    {
        Rng r2(8, "init");
        for (int i = 0; i < theta.size(); ++i) theta[i] = r2.normal();
    }
    auto objective = [&](const Vec& p) { return *quad.value(family.eval(p, X)); };

    const auto J = family.jacobians(theta, X);
    Mat G = Mat::Zero(family.param_count(), family.param_count());
    for (const auto& Ji : J) G += Ji.transpose() * Ji;
    G /= static_cast<double>(X.rows());
    const double lmax = Eigen::SelfAdjointEigenSolver<Mat>(G).eigenvalues().maxCoeff();
    const double lr = 1.0 / (lmax * (1.0 + 1.0 / tau));

    for (int k = 0; k < 50; ++k) {
        const double before = objective(theta);
        const auto [next, diag] =
            implicit_constrained_step(family, quad, theta, X, tau, 4000, InnerOptimizer::gd, lr);
        const double prox_term =
            (family.eval(next, X) - family.eval(theta, X)).rowwise().squaredNorm().mean() /
            (2.0 * tau);
        CHECK(objective(next) + prox_term <= before);
        theta = next;
    }
}

TEST_CASE("natural direction: consistency, stacked-QR oracle, reparameterization") {
    Rng rng(9, "natural");
    const auto family = random_feature_map(2, 8, 13);  // m = 16
    const int m = family.param_count();
    const Mat X = gaussian_cloud(rng, 30, 2);
    const Vec theta = Vec::Zero(m);

    // v = J u recovers u
    Vec u(m);
    for (int i = 0; i < m; ++i) u[i] = rng.normal();
    const auto J = family.jacobians(theta, X);
    Mat v(30, 2);
    for (int i = 0; i < 30; ++i) v.row(i) = (J[i] * u).transpose();
    CHECK((natural_direction_direct(family, theta, X, v) - u).norm() <= 1e-6);

    // random field: matches the dense stacked least-squares solve
    Mat w(30, 2);
    for (int i = 0; i < 60; ++i) w(i % 30, i / 30) = rng.normal();
    const Mat A = stack_jacobians(J);
    Vec b(60);
    for (int i = 0; i < 30; ++i) b.segment(2 * i, 2) = w.row(i).transpose();
    const Vec qr = A.colPivHouseholderQr().solve(b);
    const Vec direct = natural_direction_direct(family, theta, X, w);
    CHECK((direct - qr).norm() <= 1e-6 * (1.0 + qr.norm()));

    // invariance of J * dtheta under an invertible linear reparameterization;
    // the tiny Tikhonov term is not exactly invariant, so use a family whose
    // Gram matrix is well conditioned: orthonormalize the features over X
    const Eigen::HouseholderQR<Mat> qr_A(A);
    const Mat Rthin = qr_A.matrixQR().topRows(m).triangularView<Eigen::Upper>();
    const Mat Rinv = Rthin.inverse();
    const LinearFeatureMap ortho(2, m, [&family, Rinv](const Vec& x) {
        return Mat(family.basis(x) * Rinv);
    });
    Mat R(m, m);
    for (int i = 0; i < m * m; ++i) R(i / m, i % m) = 0.1 * rng.normal();
    R += Mat::Identity(m, m);
    const LinearFeatureMap reparam(2, m, [&ortho, R](const Vec& x) {
        return Mat(ortho.basis(x) * R);
    });
    const Vec base_dir = natural_direction_direct(ortho, Vec::Zero(m), X, w);
    const Vec reparam_dir = natural_direction_direct(reparam, Vec::Zero(m), X, w);
    const auto Jo = ortho.jacobians(Vec::Zero(m), X);
    const auto J2 = reparam.jacobians(Vec::Zero(m), X);
    for (int i = 0; i < 30; ++i)
        CHECK((Jo[i] * base_dir - J2[i] * reparam_dir).norm() <=
              1e-6 * (1.0 + (Jo[i] * base_dir).norm()));
}

TEST_CASE("explicit converged inner solution equals tau times the natural direction") {
    Rng rng(10, "equiv");
    const auto family = random_feature_map(2, 10, 17);  // m = 20 <= 50
    const Mat X = gaussian_cloud(rng, 25, 2);
    Vec theta(family.param_count());
    for (int i = 0; i < theta.size(); ++i) theta[i] = 0.3 * rng.normal();
    const double tau = 0.4;

    const PotentialEnergyModel quad(standard_gaussian_target());
    const GradField field = quad.field(family.eval(theta, X));
    const Vec natural = natural_direction_direct(family, theta, X, -field.vectors);

    const auto J = family.jacobians(theta, X);
    Mat G = Mat::Zero(theta.size(), theta.size());
    for (const auto& Ji : J) G += Ji.transpose() * Ji;
    G /= static_cast<double>(X.rows());
    const double lmax = Eigen::SelfAdjointEigenSolver<Mat>(G).eigenvalues().maxCoeff();
    const auto [next, diag] = explicit_constrained_step(family, quad, theta, X, tau, 30000,
                                                        InnerOptimizer::gd,
                                                        tau * tau / (2.0 * lmax));
    CHECK((next - (theta + tau * natural)).norm() <= 1e-4);
}

TEST_CASE("run_scheme: empty runs, determinism, divergence guard") {
    const auto family = affine_line_map();
    const PotentialEnergyModel quad(standard_gaussian_target());

    SchemeConfig cfg;
    cfg.kind = SchemeKind::euclidean;
    cfg.tau = 0.1;
    cfg.outer_steps = 0;
    cfg.batch_n = 10;
    Vec theta0(2);
    theta0 << 2.0, 1.0;
    Rng rng(11, "runs");
    const auto sampler = [&](int n) { return gaussian_cloud(rng, n, 1); };
    const SchemeRun r0 = run_scheme(family, quad, cfg, theta0, sampler);
    CHECK(r0.trace.empty());
    CHECK(r0.theta_final == theta0);
    CHECK(!r0.aborted);

    cfg.outer_steps = 20;
    auto make_run = [&](std::uint64_t seed) {
        Rng r(seed, "batches");
        return run_scheme(family, quad, cfg, theta0, [&r](int n) {
            Mat X(n, 1);
            for (int i = 0; i < n; ++i) X(i, 0) = r.normal();
            return X;
        });
    };
    const SchemeRun a = make_run(5);
    const SchemeRun b = make_run(5);
    CHECK(a.theta_final == b.theta_final);
    REQUIRE(a.trace.size() == b.trace.size());
    for (std::size_t i = 0; i < a.trace.size(); ++i)
        CHECK(a.trace[i].surrogate_loss == b.trace[i].surrogate_loss);

    // a destabilizing step size trips the guard and keeps the last good iterate
    cfg.tau = 1e5;
    const SchemeRun diverged = make_run(6);
    CHECK(diverged.aborted);
    CHECK(diverged.theta_final.allFinite());

    cfg.tau = -1.0;
    CHECK_THROWS_AS(run_scheme(family, quad, cfg, theta0, sampler), std::invalid_argument);
}
