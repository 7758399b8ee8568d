#pragma once

#include <Eigen/Core>
#include <functional>
#include <vector>

#include "otflow/icnn.hpp"

namespace otflow {
namespace oracles {

// x -> A x + b. For a Gaussian transport map A is symmetric PSD (gradient of
// a convex quadratic).
struct AffineMap {
    Mat matrix;
    Vec offset;
    Vec apply(const Eigen::Ref<const Vec>& x) const { return matrix * x + offset; }
    Mat apply_rows(const Mat& X) const {
        Mat out = X * matrix.transpose();
        out.rowwise() += offset.transpose();
        return out;
    }
};

// Symmetric PSD square root via eigendecomposition; eigenvalues below 1e-12
// are rejected rather than regularized.
Mat spd_sqrt(const Mat& S);

// Monge map from N(mu0, S0) to N(mu1, S1):
//   A = S0^{-1/2} (S0^{1/2} S1 S0^{1/2})^{1/2} S0^{-1/2},  b = mu1 - A mu0.
AffineMap gaussian_ot_map(const Vec& mu0, const Mat& S0, const Vec& mu1, const Mat& S1);

// Squared Bures-Wasserstein distance between Gaussians:
//   W2^2 = ||mu0 - mu1||^2 + tr(S0 + S1 - 2 (S0^{1/2} S1 S0^{1/2})^{1/2}).
double bures_w2_sq(const Vec& mu0, const Mat& S0, const Vec& mu1, const Mat& S1);

// grad log-density of N(mu, S): -S^{-1}(x - mu).
Vec gaussian_score(const Vec& mu, const Mat& S, const Eigen::Ref<const Vec>& x);

// Piecewise-linear monotone interpolation of the empirical quantile coupling
// (src_sorted[i] -> tgt_sorted[i]); extrapolates with the edge slopes.
double ot_map_1d(const std::vector<double>& src_sorted, const std::vector<double>& tgt_sorted,
                 double query);

// Central differences per coordinate.
Vec finite_diff_gradient(const std::function<double(const Vec&)>& f, const Vec& theta, double step);

}  // namespace oracles
}  // namespace otflow
