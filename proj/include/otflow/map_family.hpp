#pragma once

#include <Eigen/Core>
#include <functional>
#include <utility>
#include <vector>

#include "otflow/icnn.hpp"

namespace otflow {

// A differentiable parameterization theta -> T_theta of maps R^d -> R^d.
// The descent schemes only need batch evaluation, the cotangent-contracted
// parameter gradient, and (for the direct natural-gradient solve) the full
// per-sample Jacobians.
class MapFamily {
public:
    virtual ~MapFamily() = default;
    virtual int input_dim() const = 0;
    virtual int param_count() const = 0;

    // Row i of the result is T_theta(X.row(i)).
    virtual Mat eval(const Vec& theta, const Mat& X) const = 0;

    // d/dtheta of (1/n) sum_i <cot_i, T_theta(x_i)>.
    virtual Vec grad_contract(const Vec& theta, const Mat& X, const Mat& cot) const = 0;

    // J_i = dT_theta(x_i)/dtheta, one d x m matrix per sample.
    virtual std::vector<Mat> jacobians(const Vec& theta, const Mat& X) const = 0;
};

// Gradient-of-convex-potential network map T_theta = grad phi_theta.
class IcnnMap final : public MapFamily {
public:
    explicit IcnnMap(IcnnSpec spec) : spec_(std::move(spec)), m_(otflow::param_count(spec_)) {}

    int input_dim() const override { return spec_.input_dim; }
    int param_count() const override { return m_; }
    Mat eval(const Vec& theta, const Mat& X) const override {
        return transport_batch(spec_, theta, X).maps;
    }
    Vec grad_contract(const Vec& theta, const Mat& X, const Mat& cot) const override {
        return loss_param_gradient(spec_, theta, X, cot);
    }
    std::vector<Mat> jacobians(const Vec& theta, const Mat& X) const override {
        return transport_batch(spec_, theta, X, true).param_jacobians;
    }
    const IcnnSpec& spec() const { return spec_; }

private:
    IcnnSpec spec_;
    int m_;
};

// T_theta(x) = B(x) theta for user-supplied features B : R^d -> R^{d x m}.
// Linear in theta, so inner problems have closed forms; used by the toy
// problems and the oracle cross-checks.
class LinearFeatureMap final : public MapFamily {
public:
    LinearFeatureMap(int dim, int m, std::function<Mat(const Vec&)> features)
        : dim_(dim), m_(m), features_(std::move(features)) {}

    int input_dim() const override { return dim_; }
    int param_count() const override { return m_; }

    Mat basis(const Eigen::Ref<const Vec>& x) const { return features_(x); }

    Mat eval(const Vec& theta, const Mat& X) const override {
        const int n = static_cast<int>(X.rows());
        Mat out(n, dim_);
        for (int i = 0; i < n; ++i) out.row(i) = (features_(X.row(i).transpose()) * theta).transpose();
        return out;
    }

    Vec grad_contract(const Vec& theta, const Mat& X, const Mat& cot) const override {
        (void)theta;
        const int n = static_cast<int>(X.rows());
        Vec g = Vec::Zero(m_);
        for (int i = 0; i < n; ++i)
            g += features_(X.row(i).transpose()).transpose() * cot.row(i).transpose();
        return g / static_cast<double>(n);
    }

    std::vector<Mat> jacobians(const Vec& theta, const Mat& X) const override {
        (void)theta;
        std::vector<Mat> J(X.rows());
        for (int i = 0; i < X.rows(); ++i) J[i] = features_(X.row(i).transpose());
        return J;
    }

private:
    int dim_;
    int m_;
    std::function<Mat(const Vec&)> features_;
};

// Affine map on the line, T_theta(x) = theta_0 x + theta_1.
LinearFeatureMap affine_line_map();

}  // namespace otflow
