#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "otflow/icnn.hpp"
#include "otflow/oracles.hpp"

using namespace otflow;

namespace {

Mat random_cloud(Rng& rng, int n, int d) {
    Mat X(n, d);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) X(i, j) = rng.normal();
    return X;
}

// Independent parameter enumeration: first layer dense + bias, later layers
// recurrent + input skip + bias, output layer weights on the last hidden
// state + bias.
int count_by_enumeration(int d, const std::vector<int>& widths) {
    int total = 0;
    for (std::size_t l = 0; l < widths.size(); ++l) {
        if (l > 0) total += widths[l] * widths[l - 1];
        total += widths[l] * d + widths[l];
    }
    total += widths.back() + 1;
    return total;
}

}  // namespace

TEST_CASE("parameter counts") {
    CHECK(param_count(IcnnSpec{2, {20, 20}}) == 541);
    CHECK(param_count(IcnnSpec{1, {1}}) == 4);
    CHECK(param_count(IcnnSpec{3, {5, 5}}) == 71);
    for (const int d : {1, 2, 3, 5})
        for (const std::vector<int>& widths : {std::vector<int>{4}, {3, 7}, {8, 8, 8}})
            CHECK(param_count(IcnnSpec{d, widths}) == count_by_enumeration(d, widths));
    CHECK_THROWS_AS(param_count(IcnnSpec{2, {20, 0}}), std::invalid_argument);
    CHECK_THROWS_AS(param_count(IcnnSpec{0, {20}}), std::invalid_argument);
}

TEST_CASE("initialization is deterministic per seed and bounded") {
    const IcnnSpec spec{2, {20, 20}};
    Rng r0(0, "theta0");
    Rng r0b(0, "theta0");
    Rng r1(1, "theta0");
    const Vec a = init_params(spec, r0);
    const Vec b = init_params(spec, r0b);
    const Vec c = init_params(spec, r1);
    CHECK(a.size() == 541);
    CHECK(a == b);
    CHECK(a != c);
    CHECK(a.allFinite());

    Rng points(7, "probe");
    const Mat X = random_cloud(points, 100, 2);
    const Mat T = transport_batch(spec, a, X).maps;
    CHECK(T.allFinite());
    CHECK(T.rowwise().norm().maxCoeff() <= 1e3);
}

TEST_CASE("zero input weights and biases give a constant potential and zero map") {
    const IcnnSpec spec{2, {4, 4}};
    const IcnnLayout lay = icnn_layout(spec);
    Rng rng(3, "theta0");
    Vec theta = init_params(spec, rng);
    for (std::size_t l = 0; l < lay.input.size(); ++l) {
        theta.segment(lay.input[l].offset, lay.input[l].size()).setZero();
        theta.segment(lay.bias[l].offset, lay.bias[l].size()).setZero();
    }
    Rng probe(4, "probe");
    const Mat X = random_cloud(probe, 20, 2);
    const auto eval = transport_batch(spec, theta, X);
    for (int i = 1; i < 20; ++i) CHECK(eval.potentials[i] == eval.potentials[0]);
    CHECK(eval.maps.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("sampled midpoint convexity and monotone map") {
    const IcnnSpec spec{2, {20, 20}};
    Rng rng(11, "convexity");
    for (int trial = 0; trial < 1000; ++trial) {
        const Vec theta = init_params(spec, rng);
        Vec x(2), y(2);
        x << 3.0 * rng.normal(), 3.0 * rng.normal();
        y << 3.0 * rng.normal(), 3.0 * rng.normal();
        const double px = potential(spec, theta, x);
        const double py = potential(spec, theta, y);
        for (const double t : {0.25, 0.5, 0.75}) {
            const Vec mid = t * x + (1.0 - t) * y;
            CHECK(potential(spec, theta, mid) <= t * px + (1.0 - t) * py + 1e-10);
        }
        Mat X(2, 2);
        X.row(0) = x.transpose();
        X.row(1) = y.transpose();
        const Mat T = transport_batch(spec, theta, X).maps;
        CHECK((T.row(0) - T.row(1)).dot((x - y).transpose()) >= -1e-10);
    }
}

TEST_CASE("transport map equals finite differences of the potential") {
    Rng rng(21, "fd");
    for (const auto& spec : {IcnnSpec{2, {20, 20}}, IcnnSpec{1, {3}}, IcnnSpec{3, {4, 5}}}) {
        for (int rep = 0; rep < 5; ++rep) {
            const Vec theta = init_params(spec, rng);
            const Mat X = random_cloud(rng, 4, spec.input_dim);
            const auto eval = transport_batch(spec, theta, X);
            for (int i = 0; i < X.rows(); ++i) {
                const Vec fd = oracles::finite_diff_gradient(
                    [&](const Vec& p) { return potential(spec, theta, p); }, X.row(i).transpose(),
                    1e-6);
                const double scale = std::max(1.0, fd.norm());
                CHECK((eval.maps.row(i).transpose() - fd).norm() / scale <= 1e-6);
            }
        }
    }
}

TEST_CASE("parameter jacobian matches finite differences") {
    const IcnnSpec spec{2, {4, 3}};
    Rng rng(31, "fd");
    const Vec theta = init_params(spec, rng);
    const Mat X = random_cloud(rng, 3, 2);
    const auto eval = transport_batch(spec, theta, X, true);
    const int m = param_count(spec);
    for (int i = 0; i < X.rows(); ++i) {
        for (int j = 0; j < 2; ++j) {
            const Vec fd = oracles::finite_diff_gradient(
                [&](const Vec& p) {
                    return transport_batch(spec, p, X.row(i)).maps(0, j);
                },
                theta, 1e-5);
            const Vec analytic = eval.param_jacobians[i].row(j).transpose();
            REQUIRE(analytic.size() == m);
            const double scale = std::max(1.0, fd.norm());
            CHECK((analytic - fd).norm() / scale <= 1e-4);
        }
    }
}

TEST_CASE("loss gradient: zero cotangents, two-path equality, finite differences") {
    const IcnnSpec spec{2, {6, 5}};
    Rng rng(41, "loss");
    const Vec theta = init_params(spec, rng);
    const Mat X = random_cloud(rng, 8, 2);

    CHECK(loss_param_gradient(spec, theta, X, Mat::Zero(8, 2)).cwiseAbs().maxCoeff() == 0.0);

    const Mat C = random_cloud(rng, 8, 2);
    const Vec g = loss_param_gradient(spec, theta, X, C);

    const auto eval = transport_batch(spec, theta, X, true);
    Vec g2 = Vec::Zero(g.size());
    for (int i = 0; i < 8; ++i) g2 += eval.param_jacobians[i].transpose() * C.row(i).transpose();
    g2 /= 8.0;
    CHECK((g - g2).cwiseAbs().maxCoeff() <= 1e-10 * (1.0 + g2.cwiseAbs().maxCoeff()));

    const Vec fd = oracles::finite_diff_gradient(
        [&](const Vec& p) {
            const Mat T = transport_batch(spec, p, X).maps;
            return (T.cwiseProduct(C)).sum() / 8.0;
        },
        theta, 1e-5);
    CHECK((g - fd).norm() / std::max(1.0, fd.norm()) <= 1e-4);

    CHECK_THROWS_AS(loss_param_gradient(spec, theta, X, Mat::Zero(7, 2)), std::invalid_argument);
}

TEST_CASE("evaluation is deterministic and rejects bad input") {
    const IcnnSpec spec{2, {5, 5}};
    Rng rng(51, "det");
    const Vec theta = init_params(spec, rng);
    const Mat X = random_cloud(rng, 10, 2);
    const auto e1 = transport_batch(spec, theta, X);
    const auto e2 = transport_batch(spec, theta, X);
    CHECK(e1.maps == e2.maps);
    CHECK(e1.potentials == e2.potentials);

    Vec bad(3);
    bad << 1.0, 2.0, 3.0;
    CHECK_THROWS_AS(potential(spec, theta, bad), std::invalid_argument);
    CHECK_THROWS_AS(transport_batch(spec, theta, Mat::Zero(0, 2)), std::invalid_argument);
    Vec short_theta = theta.head(10);
    CHECK_THROWS_AS(potential(spec, short_theta, Vec::Zero(2)), std::invalid_argument);
}

TEST_CASE("overflowing parameters report the offending layer") {
    const IcnnSpec spec{2, {3, 3}};
    const IcnnLayout lay = icnn_layout(spec);
    Rng rng(61, "overflow");
    Vec theta = init_params(spec, rng);
    theta.segment(lay.input[1].offset, lay.input[1].size()).setConstant(1e308);
    Mat X(1, 2);
    X << 1.0, 1.0;
    try {
        transport_batch(spec, theta, X);
        FAIL("expected an error naming the layer");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()).find("hidden layer 2") != std::string::npos);
    }
}
