#pragma once

#include <Eigen/Core>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "otflow/divergence.hpp"
#include "otflow/map_family.hpp"

namespace otflow {

enum class SchemeKind { euclidean, adam, explicit_constrained, implicit_constrained };
enum class InnerOptimizer { adam, gd };

std::string to_string(SchemeKind kind);
SchemeKind scheme_kind_from_string(const std::string& s);
std::string to_string(InnerOptimizer opt);
InnerOptimizer inner_optimizer_from_string(const std::string& s);

struct AdamParams {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double delta = 1e-8;
};

struct SchemeConfig {
    SchemeKind kind = SchemeKind::implicit_constrained;
    double tau = 0.4;
    int outer_steps = 10;                                  // K
    int inner_steps = 100;                                 // K', constrained kinds only
    InnerOptimizer inner_optimizer = InnerOptimizer::adam;
    double inner_lr = 1e-2;
    AdamParams adam_params;
    int batch_n = 100;
    std::string label;  // defaults to to_string(kind)

    std::string effective_label() const { return label.empty() ? to_string(kind) : label; }
    void validate() const;
};

struct AdamState {
    Vec first_moment;
    Vec second_moment;
    long step_count = 0;

    static AdamState zero(int m) { return {Vec::Zero(m), Vec::Zero(m), 0}; }
};

struct StepDiagnostics {
    double surrogate_loss = 0.0;   // (1/n) sum V(T(x_i)) on the step's batch
    double grad_norm = 0.0;        // empirical L2 norm of the gradient field
    double map_displacement = 0.0; // ||T_{k+1} - T_k|| in empirical L2
    std::optional<double> inexactness_delta;  // prox inexactness certificate
};

// One bias-corrected Adam update; lr is the step size.
std::pair<Vec, AdamState> adam_step(const Vec& theta, AdamState state, const Vec& gradient,
                                    double lr, const AdamParams& params = {});

// theta - tau * grad_theta (1/n) sum_i <g_i, T_theta(x_i)> with g the
// divergence gradient field at the current pushforward.
Vec euclidean_step(const MapFamily& map, const DivergenceModel& model, const Vec& theta,
                   const Mat& X, double tau);

// Explicit constrained step: freezes the descent field
// v_i = -g_i at theta_k and approximately minimizes
//   (1/n) sum_i || v_i - (T_theta(x_i) - T_{theta_k}(x_i)) / tau ||^2
// over K' inner-optimizer steps from theta_k, returning the best iterate by
// inner objective.
std::pair<Vec, StepDiagnostics> explicit_constrained_step(
    const MapFamily& map, const DivergenceModel& model, const Vec& theta, const Mat& X,
    double tau, int inner_steps, InnerOptimizer opt = InnerOptimizer::adam, double inner_lr = 1e-2,
    const AdamParams& adam_params = {});

// Implicit (proximal) constrained step: approximately minimizes
//   D(T_theta # rho) + (1/(2 tau)) (1/n) sum_i ||T_theta(x_i) - T_{theta_k}(x_i)||^2
// over K' inner steps from theta_k. The divergence field is refit at the
// current pushforward each inner step; `batches` supplies the sample batch
// for each inner step (a fixed batch in the deterministic overload).
std::pair<Vec, StepDiagnostics> implicit_constrained_step(
    const MapFamily& map, const DivergenceModel& model, const Vec& theta,
    const std::function<Mat()>& batches, double tau, int inner_steps,
    InnerOptimizer opt = InnerOptimizer::adam, double inner_lr = 1e-2,
    const AdamParams& adam_params = {});

std::pair<Vec, StepDiagnostics> implicit_constrained_step(
    const MapFamily& map, const DivergenceModel& model, const Vec& theta, const Mat& X, double tau,
    int inner_steps, InnerOptimizer opt = InnerOptimizer::adam, double inner_lr = 1e-2,
    const AdamParams& adam_params = {});

// Direct natural-gradient direction: solves (G + mu I) dtheta = (1/n) sum J_i^T v_i
// with G = (1/n) sum J_i^T J_i and Tikhonov mu = 1e-8 tr(G)/m. Throws if the
// regularized system is singular.
Vec natural_direction_direct(const MapFamily& map, const Vec& theta, const Mat& X, const Mat& v);

struct SchemeRun {
    Vec theta_init;
    Vec theta_final;
    std::vector<StepDiagnostics> trace;
    bool aborted = false;
    std::string abort_reason;
};

// Runs K outer steps of the configured kind. `sample` draws a fresh n-point
// batch on every call; the implicit scheme draws one batch per inner step,
// the others one per outer step. Aborts (keeping the last good iterate) on
// non-finite parameters or a diverging surrogate.
SchemeRun run_scheme(const MapFamily& map, const DivergenceModel& model, const SchemeConfig& config,
                     const Vec& theta0, const std::function<Mat(int)>& sample);

}  // namespace otflow
