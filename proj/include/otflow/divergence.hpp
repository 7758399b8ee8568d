#pragma once

#include <Eigen/Core>
#include <functional>
#include <optional>
#include <string>

#include "otflow/icnn.hpp"

namespace otflow {

// Log-concave target gamma ~ exp(-V), described by grad V (and V itself,
// used for diagnostics).
struct TargetPotential {
    std::function<Vec(const Vec&)> grad_v;
    std::function<double(const Vec&)> value;
    std::string label;
};

// V(x) = ||x||^2 / 2, grad V(x) = x.
TargetPotential standard_gaussian_target();

struct GradField {
    Mat vectors;        // n x d, g_i = Wasserstein gradient of D at the pushed points
    Mat pushed_points;  // n x d
};

// Gradient field of the relative entropy H(. | gamma) at the empirical
// pushed cloud: fits the self-entropic potentials on `pushed` with
// eps = eps_rule * median squared distance and returns
// g_i = s_hat(pushed_i) + grad V(pushed_i). Descent direction is -g_i.
GradField entropy_grad_field(const Mat& pushed, const TargetPotential& target,
                             double eps_rule = 0.05);

// Gradient field of the potential energy rho -> int V drho: g_i = grad V(pushed_i).
GradField potential_energy_grad_field(const Mat& pushed, const TargetPotential& target);

// Energy-distance MMD with kernel k(x, y) = -||x - y||, as the plug-in
// V-statistic (diagonal terms included):
//   D = 0.5 * [ mean k(x, x') + mean k(y, y') - 2 mean k(x, y) ].
double mmd_energy(const Mat& X, const Mat& Y);

// H(N(mean, cov) | N(0, I)) in closed form; test oracle.
double relative_entropy_gaussian(const Vec& mean, const Mat& cov);

// The divergence a descent scheme optimizes: a gradient field at a pushed
// cloud, and (when it exists) a computable objective value.
class DivergenceModel {
public:
    virtual ~DivergenceModel() = default;
    virtual GradField field(const Mat& pushed) const = 0;
    virtual std::optional<double> value(const Mat& pushed) const = 0;
    virtual const TargetPotential& target() const = 0;
};

// Relative entropy with score estimation; the objective value itself is not
// computable from samples, so value() is empty.
class RelativeEntropyModel final : public DivergenceModel {
public:
    RelativeEntropyModel(TargetPotential target, double eps_rule = 0.05)
        : target_(std::move(target)), eps_rule_(eps_rule) {}
    GradField field(const Mat& pushed) const override {
        return entropy_grad_field(pushed, target_, eps_rule_);
    }
    std::optional<double> value(const Mat&) const override { return std::nullopt; }
    const TargetPotential& target() const override { return target_; }
    double eps_rule() const { return eps_rule_; }

private:
    TargetPotential target_;
    double eps_rule_;
};

// Potential energy (1/n) sum V(pushed_i); smooth, with exact values. Used to
// exercise the schemes without score estimation.
class PotentialEnergyModel final : public DivergenceModel {
public:
    explicit PotentialEnergyModel(TargetPotential target) : target_(std::move(target)) {}
    GradField field(const Mat& pushed) const override {
        return potential_energy_grad_field(pushed, target_);
    }
    std::optional<double> value(const Mat& pushed) const override;
    const TargetPotential& target() const override { return target_; }

private:
    TargetPotential target_;
};

}  // namespace otflow
