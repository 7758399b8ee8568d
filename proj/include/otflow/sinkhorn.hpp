#pragma once

#include <Eigen/Core>
#include <stdexcept>

#include "otflow/icnn.hpp"  // Vec/Mat aliases

namespace otflow {

// Symmetric entropic potentials of an empirical measure against itself,
// for the cost c(x, y) = 0.5 * ||x - y||^2.
struct SinkhornPotentials {
    Mat points;   // n x d support
    Vec f;        // n potential values
    double epsilon = 0.0;
    int iterations_used = 0;
    double final_residual = 0.0;
};

struct SinkhornConvergenceError : std::runtime_error {
    SinkhornConvergenceError(double residual, int iterations)
        : std::runtime_error("sinkhorn did not converge: residual " + std::to_string(residual) +
                             " after " + std::to_string(iterations) + " iterations"),
          final_residual(residual),
          iterations(iterations) {}
    double final_residual;
    int iterations;
};

// Median of the n(n-1)/2 off-diagonal pairwise squared Euclidean distances.
// Requires n >= 2.
double median_sq_distance(const Mat& points);

// epsilon = frac * median_sq_distance(points), falling back to the mean
// squared distance when the median vanishes; throws if all points coincide.
double epsilon_from_rule(const Mat& points, double frac);

// Solves the symmetric fixed point
//   f_i = -eps * log( (1/n) sum_j exp((f_j - c_ij)/eps) )
// by damped averaging f <- (f + S(f))/2 in the log domain. The returned f
// satisfies the fixed-point residual <= tol in sup norm.
SinkhornPotentials sinkhorn_self(const Mat& points, double epsilon, double tol = 1e-9,
                                 int max_iter = 10000);

// Score estimate s(x) = (2/eps) * (b(x) - x), where b is the barycentric
// projection of the conditional entropic plan:
//   b(x) = sum_j w_j(x) y_j,  w_j(x) = softmax_j((f_j - 0.5||x - y_j||^2)/eps).
Mat score_estimate(const SinkhornPotentials& pot, const Mat& queries);

// Softmax weights w_j(x) for one query; exposed for the invariant tests.
Vec barycentric_weights(const SinkhornPotentials& pot, const Eigen::Ref<const Vec>& query);

}  // namespace otflow
