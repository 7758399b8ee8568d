#pragma once

#include <Eigen/Core>
#include <vector>

#include "otflow/rng.hpp"

namespace otflow {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

enum class Activation { softplus };
enum class PositivityMap { softplus };

// Architecture of the convex potential network phi_theta : R^d -> R.
//
// Wiring: the first hidden layer is dense in the input; every later hidden
// layer combines a nonnegativity-constrained recurrent matrix on the previous
// hidden state with a dense skip from the input; the output layer applies
// nonnegativity-constrained weights to the last hidden state plus a bias (no
// input skip). Constrained weights are stored unconstrained and passed
// through the positivity map, so the parameter space is all of R^m and
// x -> phi_theta(x) is convex for every theta.
struct IcnnSpec {
    int input_dim = 2;
    std::vector<int> hidden_widths{20, 20};
    Activation activation = Activation::softplus;
    PositivityMap positivity_map = PositivityMap::softplus;
};

// Throws std::invalid_argument on nonpositive dimensions/widths.
void validate_spec(const IcnnSpec& spec);

// Flat length m of the parameter vector.
int param_count(const IcnnSpec& spec);

// Offsets of the blocks inside the flat parameter vector (column-major
// within each block). Exposed so tools and tests can hand-set parameters.
struct IcnnLayout {
    struct Block {
        int offset = 0;
        int rows = 0;
        int cols = 0;
        int size() const { return rows * cols; }
    };
    std::vector<Block> recurrent;  // raw (pre-positivity); rows=0 for layer 0
    std::vector<Block> input;      // dense input weights, width x d
    std::vector<Block> bias;       // width x 1
    Block output_weights;          // raw (pre-positivity), w_last x 1
    Block output_bias;             // 1 x 1
    int total = 0;
};
IcnnLayout icnn_layout(const IcnnSpec& spec);

// Dense weights ~ N(0, 1/fan_in); constrained weights initialized so the
// positivity map yields small positive values; biases zero. Same (spec, rng
// state) gives a bit-identical vector.
Vec init_params(const IcnnSpec& spec, Rng& rng);

// phi_theta(x).
double potential(const IcnnSpec& spec, const Vec& theta, const Eigen::Ref<const Vec>& x);

struct MapBatchEval {
    Vec potentials;                    // n values phi_theta(x_i)
    Mat maps;                          // n x d, row i = grad_x phi_theta(x_i)
    std::vector<Mat> param_jacobians;  // when requested: n matrices d x m
};

// Evaluates T_theta = grad_x phi_theta on every row of X with the exact
// layer-by-layer chain rule; optionally also the mixed second derivative
// d/dtheta of T_theta(x_i). Throws std::runtime_error naming the layer on a
// non-finite intermediate.
MapBatchEval transport_batch(const IcnnSpec& spec, const Vec& theta, const Mat& X,
                             bool want_jacobians = false);

// Gradient with respect to theta of (1/n) sum_i <cotangents_i, T_theta(x_i)>,
// i.e. (1/n) sum_i (d T_theta(x_i)/d theta)^T c_i, computed analytically.
Vec loss_param_gradient(const IcnnSpec& spec, const Vec& theta, const Mat& X,
                        const Mat& cotangents);

}  // namespace otflow
