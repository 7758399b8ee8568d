#include "otflow/schemes.hpp"

#include <Eigen/Cholesky>
#include <cmath>
#include <stdexcept>

namespace otflow {

namespace {

double rms_row_norm(const Mat& rows) {
    return std::sqrt(rows.rowwise().squaredNorm().mean());
}

double mean_potential(const TargetPotential& target, const Mat& pushed) {
    double acc = 0.0;
    for (int i = 0; i < pushed.rows(); ++i) acc += target.value(pushed.row(i).transpose());
    return acc / static_cast<double>(pushed.rows());
}

// Inner-loop optimizer state; gd is plain fixed-step descent.
struct InnerOpt {
    InnerOptimizer kind;
    double lr;
    AdamParams params;
    AdamState state;

    InnerOpt(InnerOptimizer kind, double lr, const AdamParams& params, int m)
        : kind(kind), lr(lr), params(params), state(AdamState::zero(m)) {}

    Vec update(const Vec& theta, const Vec& grad) {
        if (kind == InnerOptimizer::gd) return theta - lr * grad;
        auto [next, st] = adam_step(theta, std::move(state), grad, lr, params);
        state = std::move(st);
        return next;
    }
};

std::pair<Vec, StepDiagnostics> implicit_core(const MapFamily& map, const DivergenceModel& model,
                                              const Vec& theta, const std::function<Mat()>& batches,
                                              double tau, int inner_steps, InnerOptimizer opt_kind,
                                              double inner_lr, const AdamParams& adam_params,
                                              bool track_best) {
    InnerOpt opt(opt_kind, inner_lr, adam_params, map.param_count());
    Vec cur = theta;
    Vec best = theta;
    double best_obj = std::numeric_limits<double>::infinity();
    Mat last_X;

    auto prox_objective = [&](const Mat& pushed, const Mat& anchor) -> std::optional<double> {
        const auto val = model.value(pushed);
        if (!val) return std::nullopt;
        return *val + (pushed - anchor).rowwise().squaredNorm().mean() / (2.0 * tau);
    };

    for (int j = 0; j < inner_steps; ++j) {
        const Mat X = batches();
        const Mat anchor = map.eval(theta, X);
        const Mat pushed = map.eval(cur, X);
        if (track_best) {
            if (const auto obj = prox_objective(pushed, anchor); obj && *obj < best_obj) {
                best_obj = *obj;
                best = cur;
            }
        }
        const GradField field = model.field(pushed);
        const Mat cot = field.vectors + (pushed - anchor) / tau;
        const Vec grad = map.grad_contract(cur, X, cot);
        cur = opt.update(cur, grad);
        if (!cur.allFinite())
            throw std::runtime_error("implicit inner loop diverged at iterate " + std::to_string(j));
        last_X = X;
    }

    Vec accepted = cur;
    if (track_best && inner_steps > 0) {
        const Mat X = batches();
        const auto final_obj = prox_objective(map.eval(cur, X), map.eval(theta, X));
        if (final_obj && best_obj < *final_obj) accepted = best;
    }
    if (inner_steps == 0) last_X = batches();

    // Diagnostics on the last batch, including the prox inexactness
    // certificate delta = tau * ||ghat + dT/(2 tau)|| / ||dT||.
    const Mat anchor = map.eval(theta, last_X);
    const Mat pushed = map.eval(accepted, last_X);
    const GradField field = model.field(pushed);
    const Mat dT = pushed - anchor;
    StepDiagnostics diag;
    diag.map_displacement = rms_row_norm(dT);
    diag.grad_norm = rms_row_norm(field.vectors);
    diag.surrogate_loss = mean_potential(model.target(), pushed);
    if (diag.map_displacement > 0.0) {
        const double resid = rms_row_norm(field.vectors + dT / (2.0 * tau));
        diag.inexactness_delta = tau * resid / diag.map_displacement;
    } else {
        diag.inexactness_delta = 0.0;
    }
    return {accepted, diag};
}

}  // namespace

std::string to_string(SchemeKind kind) {
    switch (kind) {
        case SchemeKind::euclidean: return "euclidean";
        case SchemeKind::adam: return "adam";
        case SchemeKind::explicit_constrained: return "explicit";
        case SchemeKind::implicit_constrained: return "implicit";
    }
    throw std::logic_error("unknown scheme kind");
}

SchemeKind scheme_kind_from_string(const std::string& s) {
    if (s == "euclidean") return SchemeKind::euclidean;
    if (s == "adam") return SchemeKind::adam;
    if (s == "explicit" || s == "explicit_constrained") return SchemeKind::explicit_constrained;
    if (s == "implicit" || s == "implicit_constrained") return SchemeKind::implicit_constrained;
    throw std::invalid_argument("unknown scheme kind: " + s);
}

std::string to_string(InnerOptimizer opt) {
    return opt == InnerOptimizer::adam ? "adam" : "gd";
}

InnerOptimizer inner_optimizer_from_string(const std::string& s) {
    if (s == "adam") return InnerOptimizer::adam;
    if (s == "gd") return InnerOptimizer::gd;
    throw std::invalid_argument("unknown inner optimizer: " + s);
}

void SchemeConfig::validate() const {
    if (!(tau > 0.0)) throw std::invalid_argument("tau must be positive");
    if (outer_steps < 0) throw std::invalid_argument("outer_steps must be nonnegative");
    if (batch_n < 1) throw std::invalid_argument("batch_n must be positive");
    const bool constrained =
        kind == SchemeKind::explicit_constrained || kind == SchemeKind::implicit_constrained;
    if (constrained && inner_steps < 1)
        throw std::invalid_argument("inner_steps must be positive for constrained schemes");
    if (!(inner_lr > 0.0)) throw std::invalid_argument("inner_lr must be positive");
}

std::pair<Vec, AdamState> adam_step(const Vec& theta, AdamState state, const Vec& gradient,
                                    double lr, const AdamParams& p) {
    if (state.first_moment.size() == 0) state = AdamState::zero(static_cast<int>(theta.size()));
    if (state.first_moment.size() != theta.size() || gradient.size() != theta.size())
        throw std::invalid_argument("adam_step: shape mismatch");
    state.step_count += 1;
    state.first_moment = p.beta1 * state.first_moment + (1.0 - p.beta1) * gradient;
    state.second_moment =
        p.beta2 * state.second_moment + (1.0 - p.beta2) * gradient.cwiseProduct(gradient);
    const double c1 = 1.0 - std::pow(p.beta1, static_cast<double>(state.step_count));
    const double c2 = 1.0 - std::pow(p.beta2, static_cast<double>(state.step_count));
    const Vec m_hat = state.first_moment / c1;
    const Vec v_hat = state.second_moment / c2;
    const Vec denom = v_hat.cwiseSqrt() + Vec::Constant(theta.size(), p.delta);
    Vec next = theta - lr * m_hat.cwiseQuotient(denom);
    return {std::move(next), std::move(state)};
}

Vec euclidean_step(const MapFamily& map, const DivergenceModel& model, const Vec& theta,
                   const Mat& X, double tau) {
    const Mat pushed = map.eval(theta, X);
    const GradField field = model.field(pushed);
    return theta - tau * map.grad_contract(theta, X, field.vectors);
}

std::pair<Vec, StepDiagnostics> explicit_constrained_step(const MapFamily& map,
                                                          const DivergenceModel& model,
                                                          const Vec& theta, const Mat& X, double tau,
                                                          int inner_steps, InnerOptimizer opt_kind,
                                                          double inner_lr,
                                                          const AdamParams& adam_params) {
    const Mat anchor = map.eval(theta, X);
    const GradField field = model.field(anchor);
    const Mat v = -field.vectors;  // frozen descent field, a function of theta_k only
    const double n = static_cast<double>(X.rows());

    auto objective = [&](const Mat& pushed) {
        return (v - (pushed - anchor) / tau).rowwise().squaredNorm().sum() / n;
    };

    InnerOpt opt(opt_kind, inner_lr, adam_params, map.param_count());
    Vec cur = theta;
    Mat pushed = anchor;
    Vec best = theta;
    Mat best_pushed = anchor;
    double best_obj = objective(anchor);
    for (int j = 0; j < inner_steps; ++j) {
        const Mat cot = (2.0 / tau) * ((pushed - anchor) / tau - v);
        const Vec grad = map.grad_contract(cur, X, cot);
        cur = opt.update(cur, grad);
        if (!cur.allFinite())
            throw std::runtime_error("explicit inner loop diverged at iterate " + std::to_string(j));
        pushed = map.eval(cur, X);
        const double obj = objective(pushed);
        if (!std::isfinite(obj))
            throw std::runtime_error("explicit inner objective non-finite at iterate " +
                                     std::to_string(j));
        if (obj < best_obj) {
            best_obj = obj;
            best = cur;
            best_pushed = pushed;
        }
    }

    StepDiagnostics diag;
    diag.surrogate_loss = mean_potential(model.target(), best_pushed);
    diag.grad_norm = rms_row_norm(field.vectors);
    diag.map_displacement = rms_row_norm(best_pushed - anchor);
    return {std::move(best), diag};
}

std::pair<Vec, StepDiagnostics> implicit_constrained_step(const MapFamily& map,
                                                          const DivergenceModel& model,
                                                          const Vec& theta,
                                                          const std::function<Mat()>& batches,
                                                          double tau, int inner_steps,
                                                          InnerOptimizer opt, double inner_lr,
                                                          const AdamParams& adam_params) {
    // Stochastic batches: objective values on different batches are not
    // comparable, so the last iterate is returned.
    return implicit_core(map, model, theta, batches, tau, inner_steps, opt, inner_lr, adam_params,
                         false);
}

std::pair<Vec, StepDiagnostics> implicit_constrained_step(const MapFamily& map,
                                                          const DivergenceModel& model,
                                                          const Vec& theta, const Mat& X, double tau,
                                                          int inner_steps, InnerOptimizer opt,
                                                          double inner_lr,
                                                          const AdamParams& adam_params) {
    return implicit_core(
        map, model, theta, [&X] { return X; }, tau, inner_steps, opt, inner_lr, adam_params, true);
}

Vec natural_direction_direct(const MapFamily& map, const Vec& theta, const Mat& X, const Mat& v) {
    if (v.rows() != X.rows() || v.cols() != map.input_dim())
        throw std::invalid_argument("field shape mismatch");
    const auto J = map.jacobians(theta, X);
    const int m = map.param_count();
    const double n = static_cast<double>(X.rows());
    Mat G = Mat::Zero(m, m);
    Vec rhs = Vec::Zero(m);
    for (std::size_t i = 0; i < J.size(); ++i) {
        G.noalias() += J[i].transpose() * J[i];
        rhs.noalias() += J[i].transpose() * v.row(static_cast<int>(i)).transpose();
    }
    G /= n;
    rhs /= n;
    const double mu = 1e-8 * G.trace() / static_cast<double>(m);
    G.diagonal().array() += mu;
    const Eigen::LDLT<Mat> ldlt(G);
    if (ldlt.info() != Eigen::Success)
        throw std::runtime_error("natural gradient Gram matrix is singular");
    const Vec delta = ldlt.solve(rhs);
    if (!delta.allFinite())
        throw std::runtime_error("natural gradient solve produced non-finite direction");
    return delta;
}

SchemeRun run_scheme(const MapFamily& map, const DivergenceModel& model, const SchemeConfig& config,
                     const Vec& theta0, const std::function<Mat(int)>& sample) {
    config.validate();
    if (theta0.size() != map.param_count())
        throw std::invalid_argument("theta0 length does not match the map family");

    SchemeRun run;
    run.theta_init = theta0;
    Vec theta = theta0;
    AdamState adam_state = AdamState::zero(map.param_count());

    for (int k = 0; k < config.outer_steps; ++k) {
        Vec next;
        StepDiagnostics diag;
        try {
            switch (config.kind) {
                case SchemeKind::euclidean:
                case SchemeKind::adam: {
                    const Mat X = sample(config.batch_n);
                    const Mat pushed = map.eval(theta, X);
                    const GradField field = model.field(pushed);
                    const Vec grad = map.grad_contract(theta, X, field.vectors);
                    if (config.kind == SchemeKind::euclidean) {
                        next = theta - config.tau * grad;
                    } else {
                        auto [t, st] = adam_step(theta, std::move(adam_state), grad, config.tau,
                                                 config.adam_params);
                        next = std::move(t);
                        adam_state = std::move(st);
                    }
                    const Mat pushed_next = map.eval(next, X);
                    diag.grad_norm = rms_row_norm(field.vectors);
                    diag.map_displacement = rms_row_norm(pushed_next - pushed);
                    diag.surrogate_loss = mean_potential(model.target(), pushed_next);
                    break;
                }
                case SchemeKind::explicit_constrained: {
                    const Mat X = sample(config.batch_n);
                    std::tie(next, diag) = explicit_constrained_step(
                        map, model, theta, X, config.tau, config.inner_steps,
                        config.inner_optimizer, config.inner_lr, config.adam_params);
                    break;
                }
                case SchemeKind::implicit_constrained: {
                    std::tie(next, diag) = implicit_constrained_step(
                        map, model, theta, [&] { return sample(config.batch_n); }, config.tau,
                        config.inner_steps, config.inner_optimizer, config.inner_lr,
                        config.adam_params);
                    break;
                }
            }
        } catch (const std::exception& e) {
            run.aborted = true;
            run.abort_reason = e.what();
            break;
        }
        if (!next.allFinite()) {
            run.aborted = true;
            run.abort_reason = "non-finite parameters at outer step " + std::to_string(k);
            break;
        }
        if (!std::isfinite(diag.surrogate_loss) || diag.surrogate_loss > 1e6) {
            run.aborted = true;
            run.abort_reason = "surrogate exceeded divergence guard at outer step " + std::to_string(k);
            break;
        }
        theta = std::move(next);
        run.trace.push_back(diag);
    }
    run.theta_final = theta;
    return run;
}

}  // namespace otflow
