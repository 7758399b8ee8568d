#include "otflow/experiment.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <stdexcept>

#include "otflow/oracles.hpp"

namespace otflow {

namespace {

using nlohmann::json;

json vec_to_json(const Vec& v) {
    json a = json::array();
    for (int i = 0; i < v.size(); ++i) a.push_back(v[i]);
    return a;
}

Vec vec_from_json(const json& a) {
    Vec v(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) v[static_cast<int>(i)] = a[i].get<double>();
    return v;
}

json method_to_json(const SchemeConfig& m) {
    return json{{"label", m.effective_label()},
                {"kind", to_string(m.kind)},
                {"tau", m.tau},
                {"outer_steps", m.outer_steps},
                {"inner_steps", m.inner_steps},
                {"inner_optimizer", to_string(m.inner_optimizer)},
                {"inner_lr", m.inner_lr},
                {"batch_n", m.batch_n},
                {"adam_beta1", m.adam_params.beta1},
                {"adam_beta2", m.adam_params.beta2},
                {"adam_delta", m.adam_params.delta}};
}

SchemeConfig method_from_json(const json& j) {
    SchemeConfig m;
    m.kind = scheme_kind_from_string(j.at("kind").get<std::string>());
    m.label = j.value("label", std::string{});
    m.tau = j.value("tau", m.tau);
    m.outer_steps = j.value("outer_steps", m.outer_steps);
    m.inner_steps = j.value("inner_steps", m.inner_steps);
    if (j.contains("inner_optimizer"))
        m.inner_optimizer = inner_optimizer_from_string(j["inner_optimizer"].get<std::string>());
    m.inner_lr = j.value("inner_lr", m.inner_lr);
    m.batch_n = j.value("batch_n", 0);  // 0 -> resolved to n_train
    m.adam_params.beta1 = j.value("adam_beta1", m.adam_params.beta1);
    m.adam_params.beta2 = j.value("adam_beta2", m.adam_params.beta2);
    m.adam_params.delta = j.value("adam_delta", m.adam_params.delta);
    return m;
}

json diagnostics_to_json(const std::vector<StepDiagnostics>& trace) {
    json a = json::array();
    for (const auto& d : trace) {
        json row{{"surrogate_loss", d.surrogate_loss},
                 {"grad_norm", d.grad_norm},
                 {"map_displacement", d.map_displacement}};
        if (d.inexactness_delta) row["inexactness_delta"] = *d.inexactness_delta;
        a.push_back(std::move(row));
    }
    return a;
}

std::vector<StepDiagnostics> diagnostics_from_json(const json& a) {
    std::vector<StepDiagnostics> trace;
    trace.reserve(a.size());
    for (const auto& row : a) {
        StepDiagnostics d;
        d.surrogate_loss = row.at("surrogate_loss").get<double>();
        d.grad_norm = row.at("grad_norm").get<double>();
        d.map_displacement = row.at("map_displacement").get<double>();
        if (row.contains("inexactness_delta")) d.inexactness_delta = row["inexactness_delta"].get<double>();
        trace.push_back(d);
    }
    return trace;
}

TargetPotential target_from_config(const ExperimentConfig& config) {
    if (config.target == "standard_gaussian") return standard_gaussian_target();
    throw std::invalid_argument("unknown target measure: " + config.target);
}

std::string record_filename(const std::string& method, std::uint64_t seed) {
    return method + "_seed" + std::to_string(seed) + ".json";
}

std::string format_full(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

void ExperimentConfig::validate() const {
    if (dim < 1) throw std::invalid_argument("dim must be positive");
    if (n_train < 2) throw std::invalid_argument("n_train must be at least 2");
    if (n_eval < 1) throw std::invalid_argument("n_eval must be positive");
    if (!(eps_rule > 0.0)) throw std::invalid_argument("eps_rule must be positive");
    if (mixture.empty()) throw std::invalid_argument("mixture must not be empty");
    double wsum = 0.0;
    for (const auto& c : mixture) {
        if (!(c.weight > 0.0)) throw std::invalid_argument("mixture weights must be positive");
        if (c.mean.size() != dim) throw std::invalid_argument("mixture mean dimension mismatch");
        if (c.stddev < 0.0) throw std::invalid_argument("mixture stddev must be nonnegative");
        wsum += c.weight;
    }
    if (std::fabs(wsum - 1.0) > 1e-9) throw std::invalid_argument("mixture weights must sum to 1");
    if (methods.empty()) throw std::invalid_argument("no methods configured");
    for (const auto& m : methods) m.validate();
    if (seeds.empty()) throw std::invalid_argument("no seeds configured");
}

ExperimentConfig default_experiment_config() {
    ExperimentConfig c;
    c.dim = 2;
    for (const double sx : {1.0, -1.0})
        for (const double sy : {1.0, -1.0}) {
            MixtureComponent comp;
            comp.weight = 0.25;
            comp.mean = (Vec(2) << 2.0 * sx, 2.0 * sy).finished();
            comp.stddev = 0.4;
            c.mixture.push_back(std::move(comp));
        }

    SchemeConfig implicit;
    implicit.kind = SchemeKind::implicit_constrained;
    implicit.tau = 0.4;
    implicit.outer_steps = 10;
    implicit.inner_steps = 100;

    SchemeConfig expl = implicit;
    expl.kind = SchemeKind::explicit_constrained;

    SchemeConfig euclid;
    euclid.kind = SchemeKind::euclidean;
    euclid.tau = 0.001;
    euclid.outer_steps = 3000;

    SchemeConfig adam;
    adam.kind = SchemeKind::adam;
    adam.tau = 0.05;
    adam.outer_steps = 1000;

    c.methods = {implicit, expl, euclid, adam};
    for (auto& m : c.methods) m.batch_n = c.n_train;
    c.seeds.resize(100);
    for (std::uint64_t s = 0; s < 100; ++s) c.seeds[s] = s;
    return c;
}

ExperimentConfig config_from_json(const json& j) {
    ExperimentConfig c = default_experiment_config();
    c.dim = j.value("dim", c.dim);
    if (j.contains("mixture")) {
        c.mixture.clear();
        for (const auto& row : j["mixture"]) {
            MixtureComponent comp;
            comp.weight = row.at("weight").get<double>();
            comp.mean = vec_from_json(row.at("mean"));
            comp.stddev = row.at("stddev").get<double>();
            c.mixture.push_back(std::move(comp));
        }
    } else if (c.dim != 2) {
        throw std::invalid_argument("a mixture must be given explicitly when dim != 2");
    }
    c.target = j.value("target", c.target);
    c.n_train = j.value("n_train", c.n_train);
    c.n_eval = j.value("n_eval", c.n_eval);
    if (j.contains("methods")) {
        c.methods.clear();
        for (const auto& row : j["methods"]) c.methods.push_back(method_from_json(row));
    }
    if (j.contains("seeds")) {
        c.seeds.clear();
        for (const auto& s : j["seeds"]) c.seeds.push_back(s.get<std::uint64_t>());
    }
    c.eps_rule = j.value("eps_rule", c.eps_rule);
    c.output_dir = j.value("output_dir", c.output_dir);
    for (auto& m : c.methods)
        if (m.batch_n <= 0) m.batch_n = c.n_train;
    c.validate();
    return c;
}

json config_to_json(const ExperimentConfig& c) {
    json mixture = json::array();
    for (const auto& comp : c.mixture)
        mixture.push_back(json{{"weight", comp.weight}, {"mean", vec_to_json(comp.mean)}, {"stddev", comp.stddev}});
    json methods = json::array();
    for (const auto& m : c.methods) methods.push_back(method_to_json(m));
    return json{{"dim", c.dim},         {"mixture", mixture},   {"target", c.target},
                {"n_train", c.n_train}, {"n_eval", c.n_eval},   {"methods", methods},
                {"seeds", c.seeds},     {"eps_rule", c.eps_rule}, {"output_dir", c.output_dir}};
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot open config file: " + path);
    json j;
    in >> j;
    return config_from_json(j);
}

Mat sample_mixture(const ExperimentConfig& config, int n, Rng& rng) {
    if (n < 1) throw std::invalid_argument("sample count must be positive");
    config.validate();
    const int d = config.dim;
    const std::size_t k = config.mixture.size();
    std::vector<double> cdf(k);
    double acc = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
        acc += config.mixture[c].weight;
        cdf[c] = acc;
    }
    Mat X(n, d);
    for (int i = 0; i < n; ++i) {
        const double u = rng.uniform() * acc;
        std::size_t c = 0;
        while (c + 1 < k && u >= cdf[c]) ++c;
        const auto& comp = config.mixture[c];
        for (int j = 0; j < d; ++j) X(i, j) = comp.mean[j] + comp.stddev * rng.normal();
    }
    return X;
}

std::pair<double, std::optional<double>> evaluate_final(const MapFamily& map, const Vec& theta,
                                                        const ExperimentConfig& config, Rng& rng) {
    if (!theta.allFinite()) throw std::invalid_argument("non-finite parameters");
    const Mat X = sample_mixture(config, config.n_eval, rng);
    Mat Y(config.n_eval, config.dim);
    for (int i = 0; i < config.n_eval; ++i)
        for (int j = 0; j < config.dim; ++j) Y(i, j) = rng.normal();

    const Mat pushed = map.eval(theta, X);
    const double mmd = mmd_energy(pushed, Y);

    std::optional<double> map_error;
    if (config.mixture.size() == 1 && config.mixture[0].stddev > 0.0) {
        const auto& comp = config.mixture[0];
        const Mat S0 = comp.stddev * comp.stddev * Mat::Identity(config.dim, config.dim);
        const auto oracle = oracles::gaussian_ot_map(comp.mean, S0, Vec::Zero(config.dim),
                                                     Mat::Identity(config.dim, config.dim));
        const Mat ideal = oracle.apply_rows(X);
        map_error = std::sqrt((pushed - ideal).rowwise().squaredNorm().mean());
    }
    return {mmd, map_error};
}

void save_run_record(const RunRecord& r, const std::string& path) {
    json j{{"method", r.method},
           {"seed", r.seed},
           {"rng", r.rng_name},
           {"theta_init", vec_to_json(r.theta_init)},
           {"theta_final", vec_to_json(r.theta_final)},
           {"trace", diagnostics_to_json(r.trace)},
           {"final_mmd", r.final_mmd},
           {"wall_time_seconds", r.wall_time_seconds},
           {"aborted", r.aborted},
           {"abort_reason", r.abort_reason},
           {"config", r.config_snapshot}};
    if (r.final_map_error) j["final_map_error"] = *r.final_map_error;
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write record file: " + path);
    out << j.dump(2) << "\n";
}

RunRecord load_run_record(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot open record file: " + path);
    json j;
    in >> j;
    RunRecord r;
    r.method = j.at("method").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.rng_name = j.value("rng", std::string{});
    r.theta_init = vec_from_json(j.at("theta_init"));
    r.theta_final = vec_from_json(j.at("theta_final"));
    r.trace = diagnostics_from_json(j.at("trace"));
    r.final_mmd = j.at("final_mmd").get<double>();
    if (j.contains("final_map_error")) r.final_map_error = j["final_map_error"].get<double>();
    r.wall_time_seconds = j.at("wall_time_seconds").get<double>();
    r.aborted = j.value("aborted", false);
    r.abort_reason = j.value("abort_reason", std::string{});
    r.config_snapshot = j.at("config");
    return r;
}

RunRecord run_single(const ExperimentConfig& config, const SchemeConfig& method,
                     std::uint64_t seed) {
    config.validate();
    const IcnnMap map(config.network_spec());
    const RelativeEntropyModel model(target_from_config(config), config.eps_rule);
    const std::string label = method.effective_label();

    Rng theta_rng(seed, "theta0");
    const Vec theta0 = init_params(map.spec(), theta_rng);
    Rng batch_rng(seed, "batch/" + label);

    const auto t0 = std::chrono::steady_clock::now();
    const SchemeRun run = run_scheme(map, model, method, theta0,
                                     [&](int n) { return sample_mixture(config, n, batch_rng); });
    const auto t1 = std::chrono::steady_clock::now();

    RunRecord record;
    record.method = label;
    record.seed = seed;
    record.rng_name = Rng::name();
    record.theta_init = run.theta_init;
    record.theta_final = run.theta_final;
    record.trace = run.trace;
    record.aborted = run.aborted;
    record.abort_reason = run.abort_reason;
    record.wall_time_seconds = std::chrono::duration<double>(t1 - t0).count();
    record.config_snapshot = config_to_json(config);
    record.config_snapshot["methods"] = json::array({method_to_json(method)});

    Rng eval_rng(seed, "eval");
    const auto [mmd, map_error] = evaluate_final(map, run.theta_final, config, eval_rng);
    record.final_mmd = mmd;
    record.final_map_error = map_error;
    return record;
}

std::pair<double, std::optional<double>> evaluate_record(const RunRecord& record) {
    const ExperimentConfig config = config_from_json(record.config_snapshot);
    const IcnnMap map(config.network_spec());
    Rng eval_rng(record.seed, "eval");
    return evaluate_final(map, record.theta_final, config, eval_rng);
}

std::vector<MethodSummary> summarize_records(const std::vector<RunRecord>& records,
                                             const std::vector<std::string>& method_order) {
    std::vector<MethodSummary> rows;
    for (const auto& label : method_order) {
        MethodSummary row;
        row.method = label;
        std::vector<double> vals;
        double time_acc = 0.0;
        for (const auto& r : records) {
            if (r.method != label || !std::isfinite(r.final_mmd)) continue;
            vals.push_back(r.final_mmd);
            time_acc += r.wall_time_seconds;
        }
        row.n_seeds = static_cast<int>(vals.size());
        if (!vals.empty()) {
            double mean = 0.0;
            for (const double v : vals) mean += v;
            mean /= vals.size();
            double var = 0.0;
            for (const double v : vals) var += (v - mean) * (v - mean);
            var = vals.size() > 1 ? var / (vals.size() - 1) : 0.0;
            row.mmd_mean = mean;
            row.mmd_std = std::sqrt(var);
            row.mmd_min = *std::min_element(vals.begin(), vals.end());
            row.mmd_max = *std::max_element(vals.begin(), vals.end());
            row.mean_wall_time_s = time_acc / vals.size();
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

std::string summary_csv(const std::vector<MethodSummary>& rows) {
    std::string out = "method,n_seeds,mmd_mean,mmd_std,mmd_min,mmd_max,mean_wall_time_s\n";
    for (const auto& r : rows) {
        out += r.method + "," + std::to_string(r.n_seeds) + "," + format_full(r.mmd_mean) + "," +
               format_full(r.mmd_std) + "," + format_full(r.mmd_min) + "," + format_full(r.mmd_max) +
               "," + format_full(r.mean_wall_time_s) + "\n";
    }
    return out;
}

void save_summary(const std::vector<MethodSummary>& rows, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write summary file: " + path);
    out << summary_csv(rows);
}

SuiteSummary run_suite(const ExperimentConfig& config, int jobs, bool quiet) {
    config.validate();
    std::filesystem::create_directories(config.output_dir);

    struct Cell {
        SchemeConfig method;
        std::uint64_t seed;
    };
    std::vector<Cell> cells;
    for (const auto& seed : config.seeds)
        for (const auto& m : config.methods) cells.push_back({m, seed});

    std::vector<RunRecord> records(cells.size());
    std::vector<std::string> paths(cells.size());

    auto work = [&](std::size_t idx) {
        const auto& cell = cells[idx];
        RunRecord rec;
        try {
            rec = run_single(config, cell.method, cell.seed);
        } catch (const std::exception& e) {
            rec.method = cell.method.effective_label();
            rec.seed = cell.seed;
            rec.rng_name = Rng::name();
            rec.aborted = true;
            rec.abort_reason = e.what();
            rec.final_mmd = std::numeric_limits<double>::quiet_NaN();
            rec.config_snapshot = config_to_json(config);
        }
        const std::string path =
            (std::filesystem::path(config.output_dir) / record_filename(rec.method, rec.seed)).string();
        save_run_record(rec, path);
        records[idx] = std::move(rec);
        paths[idx] = path;
        if (!quiet)
            std::printf("done %s seed %llu: mmd %.6g%s\n", records[idx].method.c_str(),
                        static_cast<unsigned long long>(records[idx].seed), records[idx].final_mmd,
                        records[idx].aborted ? " (aborted)" : "");
    };

    if (jobs <= 1) {
        for (std::size_t i = 0; i < cells.size(); ++i) work(i);
    } else {
        std::size_t next = 0;
        while (next < cells.size()) {
            std::vector<std::future<void>> batch;
            for (int j = 0; j < jobs && next < cells.size(); ++j, ++next)
                batch.push_back(std::async(std::launch::async, work, next));
            for (auto& f : batch) f.get();
        }
    }

    SuiteSummary summary;
    std::vector<std::string> order;
    for (const auto& m : config.methods) order.push_back(m.effective_label());
    summary.methods = summarize_records(records, order);
    summary.record_paths = paths;
    save_summary(summary.methods, (std::filesystem::path(config.output_dir) / "summary.csv").string());
    return summary;
}

}  // namespace otflow
