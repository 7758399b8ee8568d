#include "otflow/sinkhorn.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace otflow {

namespace {

// c_ij = 0.5 * ||y_i - y_j||^2, with exact zeros on the diagonal.
Mat half_sq_dist(const Mat& Y) {
    const Vec sq = Y.rowwise().squaredNorm();
    Mat C = -Y * Y.transpose();
    C.colwise() += 0.5 * sq;
    C.rowwise() += 0.5 * sq.transpose();
    C = C.cwiseMax(0.0);
    C.diagonal().setZero();
    return C;
}

}  // namespace

double median_sq_distance(const Mat& points) {
    const int n = static_cast<int>(points.rows());
    if (n < 2) throw std::invalid_argument("median_sq_distance needs at least two points");
    std::vector<double> d2;
    d2.reserve(static_cast<std::size_t>(n) * (n - 1) / 2);
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) d2.push_back((points.row(i) - points.row(j)).squaredNorm());
    const std::size_t mid = d2.size() / 2;
    std::nth_element(d2.begin(), d2.begin() + mid, d2.end());
    double med = d2[mid];
    if (d2.size() % 2 == 0) {
        const double lo = *std::max_element(d2.begin(), d2.begin() + mid);
        med = 0.5 * (med + lo);
    }
    return med;
}

double epsilon_from_rule(const Mat& points, double frac) {
    if (frac <= 0.0) throw std::invalid_argument("epsilon fraction must be positive");
    double scale = median_sq_distance(points);
    if (scale <= 0.0) {
        const int n = static_cast<int>(points.rows());
        double mean = 0.0;
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) mean += (points.row(i) - points.row(j)).squaredNorm();
        mean /= static_cast<double>(n) * (n - 1) / 2.0;
        scale = mean;
    }
    if (scale <= 0.0) throw std::invalid_argument("all points coincide; entropic scale undefined");
    return frac * scale;
}

SinkhornPotentials sinkhorn_self(const Mat& points, double epsilon, double tol, int max_iter) {
    const int n = static_cast<int>(points.rows());
    if (n < 2) throw std::invalid_argument("sinkhorn_self needs at least two points");
    if (epsilon <= 0.0) throw std::invalid_argument("epsilon must be positive");
    if (!points.allFinite()) throw std::invalid_argument("non-finite support point");

    const Mat C = half_sq_dist(points);
    const double logn = std::log(static_cast<double>(n));

    Vec f = Vec::Zero(n);
    Vec Sf(n), rowmax(n);
    Mat M(n, n);
    double residual = std::numeric_limits<double>::infinity();
    for (int it = 0; it < max_iter; ++it) {
        // S(f)_i = -eps * (logsumexp_j (f_j - C_ij)/eps - log n)
        M = ((-C).rowwise() + f.transpose()) / epsilon;
        rowmax = M.rowwise().maxCoeff();
        Sf = rowmax.array() + (M.colwise() - rowmax).array().exp().rowwise().sum().log();
        Sf = -epsilon * (Sf.array() - logn);
        residual = (f - Sf).cwiseAbs().maxCoeff();
        if (residual <= tol) return {points, f, epsilon, it, residual};
        f = 0.5 * (f + Sf);
    }
    throw SinkhornConvergenceError(residual, max_iter);
}

Vec barycentric_weights(const SinkhornPotentials& pot, const Eigen::Ref<const Vec>& query) {
    if (!query.allFinite()) throw std::invalid_argument("non-finite query point");
    const int n = static_cast<int>(pot.points.rows());
    Vec logits(n);
    for (int j = 0; j < n; ++j)
        logits[j] = (pot.f[j] - 0.5 * (query.transpose() - pot.points.row(j)).squaredNorm()) / pot.epsilon;
    const double mx = logits.maxCoeff();
    Vec w = (logits.array() - mx).exp();
    w /= w.sum();
    return w;
}

Mat score_estimate(const SinkhornPotentials& pot, const Mat& queries) {
    if (queries.cols() != pot.points.cols()) throw std::invalid_argument("query dimension mismatch");
    const int q = static_cast<int>(queries.rows());
    Mat out(q, queries.cols());
    for (int i = 0; i < q; ++i) {
        const Vec w = barycentric_weights(pot, queries.row(i).transpose());
        const Vec b = pot.points.transpose() * w;
        out.row(i) = (2.0 / pot.epsilon) * (b.transpose() - queries.row(i));
    }
    return out;
}

}  // namespace otflow
