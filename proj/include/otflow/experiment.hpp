#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "otflow/divergence.hpp"
#include "otflow/map_family.hpp"
#include "otflow/rng.hpp"
#include "otflow/schemes.hpp"

namespace otflow {

struct MixtureComponent {
    double weight = 1.0;
    Vec mean;
    double stddev = 1.0;
};

struct ExperimentConfig {
    int dim = 2;
    std::vector<MixtureComponent> mixture;  // empty -> default 4 modes at (+-2, +-2), std 0.4
    std::string target = "standard_gaussian";
    int n_train = 100;
    int n_eval = 10000;
    std::vector<SchemeConfig> methods;      // empty -> the four default methods
    std::vector<std::uint64_t> seeds;       // empty -> 0..99
    double eps_rule = 0.05;
    std::string output_dir = "runs";

    void validate() const;
    IcnnSpec network_spec() const { return IcnnSpec{dim, {20, 20}}; }
};

// Fully populated defaults for the four-mode mixture benchmark.
ExperimentConfig default_experiment_config();

// Config file round trip; unspecified keys keep their defaults.
ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const ExperimentConfig& config);
ExperimentConfig load_config(const std::string& path);

// Draws n points from the Gaussian mixture; the component index is drawn by
// weight, then an isotropic Gaussian around the component mean.
Mat sample_mixture(const ExperimentConfig& config, int n, Rng& rng);

// Fresh evaluation clouds X ~ rho_0 and Y ~ gamma (n_eval points each, drawn
// from `rng` in that order), returning mmd_energy(T(X), Y) and, when the
// source is a single Gaussian so the closed-form map is known, the L2(rho_0)
// map error against it.
std::pair<double, std::optional<double>> evaluate_final(const MapFamily& map, const Vec& theta,
                                                        const ExperimentConfig& config, Rng& rng);

struct RunRecord {
    std::string method;
    std::uint64_t seed = 0;
    Vec theta_init;
    Vec theta_final;
    std::vector<StepDiagnostics> trace;
    double final_mmd = 0.0;
    std::optional<double> final_map_error;
    double wall_time_seconds = 0.0;
    bool aborted = false;
    std::string abort_reason;
    std::string rng_name;
    nlohmann::json config_snapshot;
};

void save_run_record(const RunRecord& record, const std::string& path);
RunRecord load_run_record(const std::string& path);

// Runs one (method, seed) cell: theta_0 from the seed's shared substream,
// batches from the (seed, method)-specific substream, then final evaluation.
RunRecord run_single(const ExperimentConfig& config, const SchemeConfig& method,
                     std::uint64_t seed);

// Recomputes the final MMD of a stored record from its own config snapshot.
std::pair<double, std::optional<double>> evaluate_record(const RunRecord& record);

struct MethodSummary {
    std::string method;
    int n_seeds = 0;
    double mmd_mean = 0.0;
    double mmd_std = 0.0;
    double mmd_min = 0.0;
    double mmd_max = 0.0;
    double mean_wall_time_s = 0.0;
};

struct SuiteSummary {
    std::vector<MethodSummary> methods;
    std::vector<std::string> record_paths;
};

// Per-method statistics of final_mmd over the completed records.
std::vector<MethodSummary> summarize_records(const std::vector<RunRecord>& records,
                                             const std::vector<std::string>& method_order);

std::string summary_csv(const std::vector<MethodSummary>& rows);
void save_summary(const std::vector<MethodSummary>& rows, const std::string& path);

// Full seed sweep. Every method shares the per-seed theta_0; each run owns
// its RNG substreams and record file, so results do not depend on `jobs`.
SuiteSummary run_suite(const ExperimentConfig& config, int jobs = 1, bool quiet = false);

}  // namespace otflow
