#include "otflow/icnn.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace otflow {

namespace {

inline double softplus(double t) {
    return std::fmax(t, 0.0) + std::log1p(std::exp(-std::fabs(t)));
}

inline double logistic(double t) {
    if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
    const double e = std::exp(t);
    return e / (1.0 + e);
}

// d^2 softplus / dt^2
inline double logistic_prime(double t) {
    const double s = logistic(t);
    return s * (1.0 - s);
}

// Inverse of softplus; v must be positive.
inline double inv_softplus(double v) { return std::log(std::expm1(v)); }

// Materialized per-layer parameters for one theta. Positivity-mapped weights
// are evaluated once per batch call.
struct Unpacked {
    std::vector<Mat> rec;      // positive recurrent weights, layer l >= 1
    std::vector<Mat> rec_raw;  // raw coordinates (for the reparam chain)
    std::vector<Mat> in;       // dense input weights
    std::vector<Vec> bias;
    Vec out_w;      // positive output weights
    Vec out_w_raw;  // raw coordinates
    double out_b = 0.0;
};

Mat read_block(const Vec& theta, const IcnnLayout::Block& b) {
    return Eigen::Map<const Mat>(theta.data() + b.offset, b.rows, b.cols);
}

Unpacked unpack(const IcnnSpec& spec, const IcnnLayout& lay, const Vec& theta) {
    if (theta.size() != lay.total)
        throw std::invalid_argument("parameter vector has length " + std::to_string(theta.size()) +
                                    ", expected " + std::to_string(lay.total));
    const std::size_t L = spec.hidden_widths.size();
    Unpacked u;
    u.rec.resize(L);
    u.rec_raw.resize(L);
    u.in.resize(L);
    u.bias.resize(L);
    for (std::size_t l = 0; l < L; ++l) {
        if (l > 0) {
            u.rec_raw[l] = read_block(theta, lay.recurrent[l]);
            u.rec[l] = u.rec_raw[l].unaryExpr([](double t) { return softplus(t); });
        }
        u.in[l] = read_block(theta, lay.input[l]);
        u.bias[l] = read_block(theta, lay.bias[l]);
    }
    u.out_w_raw = read_block(theta, lay.output_weights);
    u.out_w = u.out_w_raw.unaryExpr([](double t) { return softplus(t); });
    u.out_b = theta[lay.output_bias.offset];
    return u;
}

struct Tape {
    std::vector<Vec> u;   // pre-activations
    std::vector<Vec> z;   // activations
    std::vector<Vec> du;  // logistic(u), cached
    double phi = 0.0;
};

void check_finite(const Vec& v, std::size_t layer) {
    if (!v.allFinite())
        throw std::runtime_error("non-finite activation in hidden layer " + std::to_string(layer + 1));
}

Tape forward(const Unpacked& p, const Eigen::Ref<const Vec>& x) {
    const std::size_t L = p.in.size();
    Tape t;
    t.u.resize(L);
    t.z.resize(L);
    t.du.resize(L);
    for (std::size_t l = 0; l < L; ++l) {
        t.u[l] = p.in[l] * x + p.bias[l];
        if (l > 0) t.u[l] += p.rec[l] * t.z[l - 1];
        check_finite(t.u[l], l);
        t.z[l] = t.u[l].unaryExpr([](double v) { return softplus(v); });
        t.du[l] = t.u[l].unaryExpr([](double v) { return logistic(v); });
    }
    t.phi = p.out_w.dot(t.z[L - 1]) + p.out_b;
    if (!std::isfinite(t.phi)) throw std::runtime_error("non-finite value in output layer");
    return t;
}

// T(x) = grad_x phi via the forward recurrence on G_l = dz_l/dx.
Vec map_from_tape(const Unpacked& p, const Tape& t) {
    const std::size_t L = p.in.size();
    Mat G = t.du[0].asDiagonal() * p.in[0];
    for (std::size_t l = 1; l < L; ++l) G = t.du[l].asDiagonal() * (p.rec[l] * G + p.in[l]);
    return G.transpose() * p.out_w;
}

void add_block(Vec& grad, const IcnnLayout::Block& b, const Mat& contribution) {
    Eigen::Map<Mat>(grad.data() + b.offset, b.rows, b.cols) += contribution;
}

// Accumulates weight * d<c, T(x)>/dtheta into grad. The directional
// derivative <c, T(x)> = out_w . s_L is computed by a tangent sweep
// (s_l = dz_l/dx . c), and the parameter gradient by reverse mode through
// that augmented forward pass.
void cotangent_backward(const Unpacked& p, const IcnnLayout& lay, const Tape& tp,
                        const Eigen::Ref<const Vec>& x, const Eigen::Ref<const Vec>& c,
                        double weight, Vec& grad) {
    const std::size_t L = p.in.size();

    // tangent sweep: t_l = du_l/dx.c, s_l = dz_l/dx.c
    std::vector<Vec> tn(L), s(L);
    for (std::size_t l = 0; l < L; ++l) {
        tn[l] = p.in[l] * c;
        if (l > 0) tn[l] += p.rec[l] * s[l - 1];
        s[l] = tp.du[l].cwiseProduct(tn[l]);
    }

    // output layer: value = out_w . s_{L-1}; out_b does not enter
    add_block(grad, lay.output_weights,
              (weight * s[L - 1]).cwiseProduct(p.out_w_raw.unaryExpr([](double t) { return logistic(t); })));

    Vec sbar = weight * p.out_w;
    Vec zbar = Vec::Zero(s[L - 1].size());
    for (std::size_t li = L; li-- > 0;) {
        const Vec sig2 = tp.u[li].unaryExpr([](double v) { return logistic_prime(v); });
        const Vec tbar = tp.du[li].cwiseProduct(sbar);
        const Vec ubar = sig2.cwiseProduct(tn[li]).cwiseProduct(sbar) + tp.du[li].cwiseProduct(zbar);

        if (li > 0) {
            const Mat abar = tbar * s[li - 1].transpose() + ubar * tp.z[li - 1].transpose();
            add_block(grad, lay.recurrent[li],
                      abar.cwiseProduct(p.rec_raw[li].unaryExpr([](double t) { return logistic(t); })));
            sbar = p.rec[li].transpose() * tbar;
            zbar = p.rec[li].transpose() * ubar;
        }
        add_block(grad, lay.input[li], tbar * c.transpose() + ubar * x.transpose());
        add_block(grad, lay.bias[li], ubar);
    }
}

}  // namespace

void validate_spec(const IcnnSpec& spec) {
    if (spec.input_dim < 1) throw std::invalid_argument("input_dim must be positive");
    if (spec.hidden_widths.empty()) throw std::invalid_argument("at least one hidden layer required");
    for (const int w : spec.hidden_widths)
        if (w < 1) throw std::invalid_argument("hidden widths must be positive");
}

IcnnLayout icnn_layout(const IcnnSpec& spec) {
    validate_spec(spec);
    const int d = spec.input_dim;
    IcnnLayout lay;
    int off = 0;
    auto push = [&off](int rows, int cols) {
        IcnnLayout::Block b{off, rows, cols};
        off += rows * cols;
        return b;
    };
    const std::size_t L = spec.hidden_widths.size();
    lay.recurrent.resize(L);
    lay.input.resize(L);
    lay.bias.resize(L);
    for (std::size_t l = 0; l < L; ++l) {
        const int w = spec.hidden_widths[l];
        if (l > 0) lay.recurrent[l] = push(w, spec.hidden_widths[l - 1]);
        lay.input[l] = push(w, d);
        lay.bias[l] = push(w, 1);
    }
    lay.output_weights = push(spec.hidden_widths.back(), 1);
    lay.output_bias = push(1, 1);
    lay.total = off;
    return lay;
}

int param_count(const IcnnSpec& spec) { return icnn_layout(spec).total; }

Vec init_params(const IcnnSpec& spec, Rng& rng) {
    const IcnnLayout lay = icnn_layout(spec);
    Vec theta = Vec::Zero(lay.total);
    const std::size_t L = spec.hidden_widths.size();
    const int d = spec.input_dim;

    auto fill_dense = [&](const IcnnLayout::Block& b, double scale) {
        for (int i = 0; i < b.size(); ++i) theta[b.offset + i] = scale * rng.normal();
    };
    auto fill_positive = [&](const IcnnLayout::Block& b, double scale) {
        for (int i = 0; i < b.size(); ++i) {
            const double v = std::fmax(scale * std::fabs(rng.normal()), 1e-8);
            theta[b.offset + i] = inv_softplus(v);
        }
    };

    for (std::size_t l = 0; l < L; ++l) {
        const int fan_in = d + (l > 0 ? spec.hidden_widths[l - 1] : 0);
        const double scale = 1.0 / std::sqrt(static_cast<double>(fan_in));
        if (l > 0) fill_positive(lay.recurrent[l], 0.5 * scale);
        fill_dense(lay.input[l], scale);
        // biases stay zero
    }
    fill_positive(lay.output_weights, 0.5 / std::sqrt(static_cast<double>(spec.hidden_widths.back())));
    return theta;
}

double potential(const IcnnSpec& spec, const Vec& theta, const Eigen::Ref<const Vec>& x) {
    const IcnnLayout lay = icnn_layout(spec);
    if (x.size() != spec.input_dim) throw std::invalid_argument("input dimension mismatch");
    if (!x.allFinite()) throw std::invalid_argument("non-finite input point");
    const Unpacked p = unpack(spec, lay, theta);
    return forward(p, x).phi;
}

MapBatchEval transport_batch(const IcnnSpec& spec, const Vec& theta, const Mat& X,
                             bool want_jacobians) {
    const IcnnLayout lay = icnn_layout(spec);
    if (X.cols() != spec.input_dim) throw std::invalid_argument("point cloud dimension mismatch");
    if (X.rows() == 0) throw std::invalid_argument("empty point cloud");
    if (!X.allFinite()) throw std::invalid_argument("non-finite input point");
    const Unpacked p = unpack(spec, lay, theta);

    const int n = static_cast<int>(X.rows());
    const int d = spec.input_dim;
    MapBatchEval out;
    out.potentials.resize(n);
    out.maps.resize(n, d);
    if (want_jacobians) out.param_jacobians.resize(n);

    Vec grad_row(lay.total);
    for (int i = 0; i < n; ++i) {
        const Vec x = X.row(i).transpose();
        const Tape tp = forward(p, x);
        out.potentials[i] = tp.phi;
        out.maps.row(i) = map_from_tape(p, tp).transpose();
        if (want_jacobians) {
            Mat J(d, lay.total);
            for (int j = 0; j < d; ++j) {
                grad_row.setZero();
                cotangent_backward(p, lay, tp, x, Vec::Unit(d, j), 1.0, grad_row);
                J.row(j) = grad_row.transpose();
            }
            out.param_jacobians[i] = std::move(J);
        }
    }
    return out;
}

Vec loss_param_gradient(const IcnnSpec& spec, const Vec& theta, const Mat& X,
                        const Mat& cotangents) {
    const IcnnLayout lay = icnn_layout(spec);
    if (X.cols() != spec.input_dim) throw std::invalid_argument("point cloud dimension mismatch");
    if (cotangents.rows() != X.rows() || cotangents.cols() != X.cols())
        throw std::invalid_argument("cotangent shape mismatch");
    if (!cotangents.allFinite()) throw std::invalid_argument("non-finite cotangents");
    const Unpacked p = unpack(spec, lay, theta);

    const int n = static_cast<int>(X.rows());
    const double w = 1.0 / static_cast<double>(n);
    Vec grad = Vec::Zero(lay.total);
    for (int i = 0; i < n; ++i) {
        const Vec x = X.row(i).transpose();
        const Tape tp = forward(p, x);
        cotangent_backward(p, lay, tp, x, cotangents.row(i).transpose(), w, grad);
    }
    return grad;
}

}  // namespace otflow
