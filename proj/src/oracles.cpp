#include "otflow/oracles.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace otflow {
namespace oracles {

namespace {

// S^p for symmetric positive definite S, p in {1/2, -1/2}.
Mat spd_power(const Mat& S, double p) {
    if (S.rows() != S.cols()) throw std::invalid_argument("matrix must be square");
    if (!(S - S.transpose()).isZero(1e-10 * (1.0 + S.norm())))
        throw std::invalid_argument("matrix must be symmetric");
    Eigen::SelfAdjointEigenSolver<Mat> es(S);
    if (es.info() != Eigen::Success) throw std::runtime_error("eigendecomposition failed");
    Vec lam = es.eigenvalues();
    for (int i = 0; i < lam.size(); ++i) {
        if (lam[i] < 1e-12) throw std::invalid_argument("matrix is not positive definite");
        lam[i] = std::pow(lam[i], p);
    }
    return es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

Mat spd_sqrt(const Mat& S) { return spd_power(S, 0.5); }

AffineMap gaussian_ot_map(const Vec& mu0, const Mat& S0, const Vec& mu1, const Mat& S1) {
    const Mat S0h = spd_power(S0, 0.5);
    const Mat S0hi = spd_power(S0, -0.5);
    const Mat mid = spd_sqrt(S0h * S1 * S0h);
    AffineMap map;
    map.matrix = S0hi * mid * S0hi;
    // symmetrize away the eigendecomposition round-off
    map.matrix = 0.5 * (map.matrix + map.matrix.transpose()).eval();
    map.offset = mu1 - map.matrix * mu0;
    return map;
}

double bures_w2_sq(const Vec& mu0, const Mat& S0, const Vec& mu1, const Mat& S1) {
    const Mat S0h = spd_sqrt(S0);
    const Mat mid = spd_sqrt(S0h * S1 * S0h);
    const double val = (mu0 - mu1).squaredNorm() + (S0 + S1 - 2.0 * mid).trace();
    return std::fmax(val, 0.0);
}

Vec gaussian_score(const Vec& mu, const Mat& S, const Eigen::Ref<const Vec>& x) {
    const Mat Si = spd_power(S, -0.5);
    return -(Si * (Si * (x - mu)));
}

double ot_map_1d(const std::vector<double>& src, const std::vector<double>& tgt, double query) {
    if (src.size() != tgt.size()) throw std::invalid_argument("ot_map_1d: length mismatch");
    if (src.empty()) throw std::invalid_argument("ot_map_1d: empty sample");
    if (!std::is_sorted(src.begin(), src.end()) || !std::is_sorted(tgt.begin(), tgt.end()))
        throw std::invalid_argument("ot_map_1d: inputs must be sorted");
    const std::size_t n = src.size();
    if (n == 1) return tgt[0] + (query - src[0]);

    // segment [i, i+1] with src[i] <= query, clamped so edge segments extrapolate
    std::size_t i = std::upper_bound(src.begin(), src.end(), query) - src.begin();
    i = (i == 0) ? 0 : i - 1;
    if (i >= n - 1) i = n - 2;
    const double ds = src[i + 1] - src[i];
    if (ds <= 0.0) return tgt[i + 1];  // tied source atoms: jump
    const double t = (query - src[i]) / ds;
    return tgt[i] + t * (tgt[i + 1] - tgt[i]);
}

Vec finite_diff_gradient(const std::function<double(const Vec&)>& f, const Vec& theta, double step) {
    if (!(step > 0.0)) throw std::invalid_argument("finite difference step must be positive");
    Vec g(theta.size());
    Vec probe = theta;
    for (int i = 0; i < theta.size(); ++i) {
        const double orig = probe[i];
        probe[i] = orig + step;
        const double fp = f(probe);
        probe[i] = orig - step;
        const double fm = f(probe);
        probe[i] = orig;
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw std::runtime_error("non-finite function value in finite differences");
        g[i] = (fp - fm) / (2.0 * step);
    }
    return g;
}

}  // namespace oracles
}  // namespace otflow
