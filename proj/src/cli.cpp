#include "otflow/cli.hpp"

#include <CLI11.hpp>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "otflow/divergence.hpp"
#include "otflow/experiment.hpp"
#include "otflow/oracles.hpp"
#include "otflow/schemes.hpp"
#include "otflow/sinkhorn.hpp"

namespace otflow {

namespace {

void require(bool cond, const std::string& what) {
    if (!cond) throw std::runtime_error(what);
}

// Quick self-test battery behind the `check` subcommand.
std::vector<std::pair<std::string, std::function<void()>>> check_battery() {
    std::vector<std::pair<std::string, std::function<void()>>> checks;

    checks.emplace_back("rng known-answer block", [] {
        std::array<std::uint32_t, 4> out{};
        Rng::block_raw({0, 0, 0, 0}, 0, 0, out);
        require(out[0] == 0x6627e8d5u && out[1] == 0xe169c58du && out[2] == 0xbc57ac4cu &&
                    out[3] == 0x9b00dbd8u,
                "philox4x32-10 zero-vector mismatch");
    });

    checks.emplace_back("rng substreams", [] {
        Rng a(7, "alpha"), b(7, "alpha"), c(7, "beta");
        require(a.next_u64() == b.next_u64(), "same (seed, stream) must repeat");
        Rng a2(7, "alpha");
        require(a2.next_u64() != c.next_u64(), "streams must differ");
    });

    checks.emplace_back("network parameter count", [] {
        require(param_count(IcnnSpec{2, {20, 20}}) == 541, "expected 541 parameters");
        require(param_count(IcnnSpec{1, {1}}) == 4, "expected 4 parameters");
    });

    checks.emplace_back("map matches potential finite differences", [] {
        const IcnnSpec spec{2, {5, 5}};
        Rng rng(1, "check");
        const Vec theta = init_params(spec, rng);
        Vec x(2);
        x << 0.3, -0.7;
        const auto eval = transport_batch(spec, theta, x.transpose());
        const Vec fd = oracles::finite_diff_gradient(
            [&](const Vec& p) { return potential(spec, theta, p); }, x, 1e-6);
        require((eval.maps.row(0).transpose() - fd).norm() <= 1e-6 * (1.0 + fd.norm()),
                "input gradient mismatch");
    });

    checks.emplace_back("parameter gradient two-path equality", [] {
        const IcnnSpec spec{2, {4, 4}};
        Rng rng(2, "check");
        const Vec theta = init_params(spec, rng);
        Mat X(3, 2), C(3, 2);
        for (int i = 0; i < 6; ++i) {
            X(i % 3, i / 3) = rng.normal();
            C(i % 3, i / 3) = rng.normal();
        }
        const Vec g = loss_param_gradient(spec, theta, X, C);
        const auto eval = transport_batch(spec, theta, X, true);
        Vec g2 = Vec::Zero(theta.size());
        for (int i = 0; i < 3; ++i) g2 += eval.param_jacobians[i].transpose() * C.row(i).transpose();
        g2 /= 3.0;
        require((g - g2).norm() <= 1e-10 * (1.0 + g2.norm()), "gradient paths disagree");
    });

    checks.emplace_back("convexity and monotonicity probes", [] {
        const IcnnSpec spec{2, {5, 5}};
        Rng rng(3, "check");
        for (int trial = 0; trial < 200; ++trial) {
            Vec theta = init_params(spec, rng);
            Vec x(2), y(2);
            x << rng.normal(), rng.normal();
            y << rng.normal(), rng.normal();
            for (const double t : {0.25, 0.5, 0.75}) {
                const Vec mid = t * x + (1.0 - t) * y;
                require(potential(spec, theta, mid) <=
                            t * potential(spec, theta, x) + (1.0 - t) * potential(spec, theta, y) + 1e-10,
                        "midpoint convexity violated");
            }
            Mat X(2, 2);
            X.row(0) = x.transpose();
            X.row(1) = y.transpose();
            const Mat T = transport_batch(spec, theta, X).maps;
            require((T.row(0) - T.row(1)).dot(x.transpose() - y.transpose()) >= -1e-10,
                    "map monotonicity violated");
        }
    });

    checks.emplace_back("sinkhorn fixed point", [] {
        Rng rng(4, "check");
        Mat Y(40, 2);
        for (int i = 0; i < Y.size(); ++i) Y(i % 40, i / 40) = rng.normal();
        const double eps = epsilon_from_rule(Y, 0.05);
        const auto pot = sinkhorn_self(Y, eps, 1e-9, 10000);
        // independent residual evaluation
        double resid = 0.0;
        for (int i = 0; i < 40; ++i) {
            double lse = -std::numeric_limits<double>::infinity();
            Vec vals(40);
            for (int j = 0; j < 40; ++j) {
                vals[j] = (pot.f[j] - 0.5 * (Y.row(i) - Y.row(j)).squaredNorm()) / eps;
                lse = std::max(lse, vals[j]);
            }
            double s = 0.0;
            for (int j = 0; j < 40; ++j) s += std::exp(vals[j] - lse);
            resid = std::max(resid, std::fabs(pot.f[i] + eps * (lse + std::log(s / 40.0))));
        }
        require(resid <= 1e-9, "fixed-point residual above tolerance");
    });

    checks.emplace_back("score collapses to cluster pull", [] {
        Mat Y = Mat::Zero(5, 2);
        Y.rowwise() = Eigen::RowVector2d(1.0, -2.0);
        SinkhornPotentials pot{Y, Vec::Zero(5), 0.3, 0, 0.0};
        Mat q(1, 2);
        q << 0.0, 0.0;
        const Mat s = score_estimate(pot, q);
        require((s.row(0) - (2.0 / 0.3) * Eigen::RowVector2d(1.0, -2.0)).norm() <= 1e-12,
                "single-cluster score mismatch");
    });

    checks.emplace_back("mmd closed forms", [] {
        Mat X(1, 2), Y(1, 2);
        X << 0.0, 0.0;
        Y << 3.0, 4.0;
        require(std::fabs(mmd_energy(X, Y) - 5.0) <= 1e-12, "two-point value");
        require(mmd_energy(Y, Y) == 0.0, "identical clouds must give exactly zero");
    });

    checks.emplace_back("gaussian transport oracle", [] {
        const auto map = oracles::gaussian_ot_map(Vec::Constant(1, 2.0), Mat::Constant(1, 1, 4.0),
                                                  Vec::Zero(1), Mat::Identity(1, 1));
        require(std::fabs(map.matrix(0, 0) - 0.5) <= 1e-12 && std::fabs(map.offset[0] + 1.0) <= 1e-12,
                "1d map coefficients");
    });

    checks.emplace_back("adam sign-step limit", [] {
        Vec theta = Vec::Zero(3);
        AdamState st = AdamState::zero(3);
        Vec g(3);
        g << 2.0, -0.5, 1e-3;
        Vec prev = theta;
        for (int i = 0; i < 500; ++i) {
            auto [t, s] = adam_step(theta, std::move(st), g, 0.05);
            prev = theta;
            theta = std::move(t);
            st = std::move(s);
        }
        const Vec step = theta - prev;
        for (int i = 0; i < 3; ++i)
            require(std::fabs(std::fabs(step[i]) - 0.05) <= 1e-3, "per-coordinate step magnitude");
    });

    checks.emplace_back("natural direction consistency", [] {
        auto family = affine_line_map();
        Mat X(6, 1);
        X << -2, -1, -0.3, 0.4, 1.2, 2.5;
        Vec u(2);
        u << 0.7, -0.4;
        Mat v(6, 1);
        const auto J = family.jacobians(Vec::Zero(2), X);
        for (int i = 0; i < 6; ++i) v.row(i) = (J[i] * u).transpose();
        const Vec dtheta = natural_direction_direct(family, Vec::Zero(2), X, v);
        require((dtheta - u).norm() <= 1e-6, "J u field must recover u");
    });

    return checks;
}

int run_check(bool quiet) {
    int failures = 0;
    for (const auto& [name, fn] : check_battery()) {
        try {
            fn();
            if (!quiet) std::printf("ok   %s\n", name.c_str());
        } catch (const std::exception& e) {
            std::printf("FAIL %s: %s\n", name.c_str(), e.what());
            ++failures;
        }
    }
    if (!quiet) std::printf("%d checks failed\n", failures);
    return failures == 0 ? 0 : 2;
}

std::string resolve_out_dir(const std::string& out_flag, const std::string& config_dir) {
    if (!out_flag.empty()) return out_flag;
    if (const char* env = std::getenv("OTFLOW_OUT_DIR"); env && *env) return env;
    return config_dir;
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
    CLI::App app{"optimal transport map estimation via constrained gradient descent"};
    app.require_subcommand(1);
    bool quiet = false;
    app.add_flag("--quiet", quiet, "suppress progress output");

    std::string config_path, out_dir, method_label, record_path;
    std::uint64_t seed = 0;
    int jobs = 1;

    auto* run_cmd = app.add_subcommand("run", "run the full experiment suite");
    run_cmd->fallthrough();  // lets --quiet appear after the subcommand
    run_cmd->add_option("--config", config_path, "config file (JSON)");
    run_cmd->add_option("--out", out_dir, "output directory");
    run_cmd->add_option("--jobs", jobs, "parallel (method, seed) runs");

    auto* single_cmd = app.add_subcommand("single", "run one method for one seed");
    single_cmd->fallthrough();
    single_cmd->add_option("--config", config_path, "config file (JSON)");
    single_cmd->add_option("--method", method_label, "method label")->required();
    single_cmd->add_option("--seed", seed, "seed");
    single_cmd->add_option("--out", out_dir, "output directory");

    auto* eval_cmd = app.add_subcommand("eval", "recompute the MMD of a saved run record");
    eval_cmd->fallthrough();
    eval_cmd->add_option("record", record_path, "record file")->required();

    auto* check_cmd = app.add_subcommand("check", "run the oracle/invariant self-test battery");
    check_cmd->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() != 0) {
            std::fprintf(stderr, "%s\n", e.what());
            std::fprintf(stderr, "%s", app.help().c_str());
            return 1;
        }
        return 0;  // --help
    }

    try {
        if (app.got_subcommand("check")) return run_check(quiet);

        if (app.got_subcommand("run")) {
            ExperimentConfig config;
            try {
                config = config_path.empty() ? default_experiment_config() : load_config(config_path);
            } catch (const std::invalid_argument& e) {
                std::fprintf(stderr, "error: %s\n", e.what());
                return 1;
            }
            config.output_dir = resolve_out_dir(out_dir, config.output_dir);
            const SuiteSummary summary = run_suite(config, jobs, quiet);
            std::printf("%s", summary_csv(summary.methods).c_str());
            return 0;
        }

        if (app.got_subcommand("single")) {
            ExperimentConfig config;
            try {
                config = config_path.empty() ? default_experiment_config() : load_config(config_path);
            } catch (const std::invalid_argument& e) {
                std::fprintf(stderr, "error: %s\n", e.what());
                return 1;
            }
            config.output_dir = resolve_out_dir(out_dir, config.output_dir);
            const SchemeConfig* method = nullptr;
            for (const auto& m : config.methods)
                if (m.effective_label() == method_label) method = &m;
            if (!method) {
                std::fprintf(stderr, "error: no method labeled '%s' in the config\n",
                             method_label.c_str());
                return 1;
            }
            const RunRecord record = run_single(config, *method, seed);
            if (!quiet) {
                for (std::size_t k = 0; k < record.trace.size(); ++k) {
                    const auto& d = record.trace[k];
                    std::printf("step %3zu: surrogate %.6g  field norm %.6g  displacement %.6g",
                                k, d.surrogate_loss, d.grad_norm, d.map_displacement);
                    if (d.inexactness_delta) std::printf("  delta %.6g", *d.inexactness_delta);
                    std::printf("\n");
                }
            }
            std::filesystem::create_directories(config.output_dir);
            const std::string path = (std::filesystem::path(config.output_dir) /
                                      (record.method + "_seed" + std::to_string(record.seed) + ".json"))
                                         .string();
            save_run_record(record, path);
            std::printf("final mmd %.12g%s  (record: %s)\n", record.final_mmd,
                        record.aborted ? " [aborted]" : "", path.c_str());
            return 0;
        }

        if (app.got_subcommand("eval")) {
            RunRecord record;
            try {
                record = load_run_record(record_path);
            } catch (const std::invalid_argument& e) {
                std::fprintf(stderr, "error: %s\n", e.what());
                return 1;
            }
            const auto [mmd, map_error] = evaluate_record(record);
            std::printf("stored   mmd %.17g\n", record.final_mmd);
            std::printf("recomputed mmd %.17g\n", mmd);
            if (map_error) std::printf("recomputed map error %.17g\n", *map_error);
            std::printf("difference %.3g\n", std::fabs(mmd - record.final_mmd));
            return 0;
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "numerical failure: %s\n", e.what());
        return 2;
    }
    return 1;
}

}  // namespace otflow
