#include "otflow/divergence.hpp"

#include <Eigen/Cholesky>
#include <cmath>
#include <stdexcept>

#include "otflow/sinkhorn.hpp"

namespace otflow {

TargetPotential standard_gaussian_target() {
    TargetPotential t;
    t.grad_v = [](const Vec& x) { return x; };
    t.value = [](const Vec& x) { return 0.5 * x.squaredNorm(); };
    t.label = "standard_gaussian";
    return t;
}

GradField entropy_grad_field(const Mat& pushed, const TargetPotential& target, double eps_rule) {
    if (pushed.rows() < 2) throw std::invalid_argument("entropy_grad_field needs at least two points");
    if (!pushed.allFinite()) throw std::invalid_argument("non-finite pushed point");
    const double eps = epsilon_from_rule(pushed, eps_rule);
    const SinkhornPotentials pot = sinkhorn_self(pushed, eps);
    GradField g;
    g.pushed_points = pushed;
    g.vectors = score_estimate(pot, pushed);
    for (int i = 0; i < pushed.rows(); ++i)
        g.vectors.row(i) += target.grad_v(pushed.row(i).transpose()).transpose();
    return g;
}

GradField potential_energy_grad_field(const Mat& pushed, const TargetPotential& target) {
    if (pushed.rows() == 0) throw std::invalid_argument("empty pushed cloud");
    GradField g;
    g.pushed_points = pushed;
    g.vectors.resize(pushed.rows(), pushed.cols());
    for (int i = 0; i < pushed.rows(); ++i)
        g.vectors.row(i) = target.grad_v(pushed.row(i).transpose()).transpose();
    return g;
}

double mmd_energy(const Mat& X, const Mat& Y) {
    const int n = static_cast<int>(X.rows());
    const int p = static_cast<int>(Y.rows());
    if (n == 0 || p == 0) throw std::invalid_argument("mmd_energy: empty cloud");
    if (X.cols() != Y.cols()) throw std::invalid_argument("mmd_energy: dimension mismatch");

    // Full double sums in a fixed order; with X == Y the three sums are
    // computed by identical arithmetic, so the result is exactly zero.
    auto cross_mean = [](const Mat& A, const Mat& B) {
        const int na = static_cast<int>(A.rows());
        const int nb = static_cast<int>(B.rows());
        double acc = 0.0;
        for (int i = 0; i < na; ++i) {
            double row = 0.0;
            for (int j = 0; j < nb; ++j) row -= (A.row(i) - B.row(j)).norm();
            acc += row;
        }
        return acc / (static_cast<double>(na) * static_cast<double>(nb));
    };
    return 0.5 * (cross_mean(X, X) + cross_mean(Y, Y) - 2.0 * cross_mean(X, Y));
}

double relative_entropy_gaussian(const Vec& mean, const Mat& cov) {
    const int d = static_cast<int>(mean.size());
    if (cov.rows() != d || cov.cols() != d) throw std::invalid_argument("covariance shape mismatch");
    if (!(cov - cov.transpose()).isZero(1e-10 * (1.0 + cov.norm())))
        throw std::invalid_argument("covariance must be symmetric");
    const Eigen::LLT<Mat> llt(cov);
    if (llt.info() != Eigen::Success) throw std::invalid_argument("covariance must be positive definite");
    double logdet = 0.0;
    for (int i = 0; i < d; ++i) {
        const double lii = llt.matrixL()(i, i);
        if (!(lii > 0.0)) throw std::invalid_argument("covariance must be positive definite");
        logdet += 2.0 * std::log(lii);
    }
    return 0.5 * (cov.trace() + mean.squaredNorm() - d - logdet);
}

std::optional<double> PotentialEnergyModel::value(const Mat& pushed) const {
    double acc = 0.0;
    for (int i = 0; i < pushed.rows(); ++i) acc += target_.value(pushed.row(i).transpose());
    return acc / static_cast<double>(pushed.rows());
}

}  // namespace otflow
