#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace dualkit::cli {

// Exit codes. Every failing path prints a single line to stderr of the form
// "error: <kind>: <message>".
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;        // check failures, internal errors
inline constexpr int kExitUsage = 2;          // bad flags, configs, parse errors
inline constexpr int kExitNonConvergence = 3;
inline constexpr int kExitDivergence = 4;
inline constexpr int kExitIllConditioned = 5;

struct DualizeOptions {
    std::string input_path;
    std::string out_path;
    std::string atom = "linear";           // linear | embed
    std::string method = "newton_schulz";  // newton_schulz | inverse_root | svd_oracle
    double tolerance = 1e-6;
    int max_steps = 30;
};

/// Reads a matrix fixture, applies the requested duality map, writes the
/// result as a fixture. Prints the Frobenius residual against the exact-SVD
/// route when the method is not svd_oracle.
int cmd_dualize(const DualizeOptions& opts, std::ostream& out, std::ostream& err);

/// A training run: architecture file, synthetic dataset, update rule,
/// iteration schedule, output path. Identical configs produce byte-identical
/// metrics files.
struct ExperimentConfig {
    std::string architecture;  // path, resolved relative to the config file
    std::string generator = "gaussian_regression";
    int dataset_size = 64;
    std::uint64_t dataset_seed = 0;
    std::string update_mode = "fixed_step";  // fixed_step | sharpness_scaled
    double update_value = 0.1;               // eta or lambda
    std::vector<std::vector<double>> coefficients{{1.5, -0.5}};
    int ns_max_steps = 30;
    std::string normalization = "frobenius";  // frobenius | spectral_estimate
    double ns_tolerance = 1e-6;
    int steps = 100;
    std::uint64_t seed = 0;
    std::string out = "metrics.jsonl";

    bool operator==(const ExperimentConfig&) const = default;
};

ExperimentConfig parse_experiment_config(const std::string& text);
std::string serialize_experiment_config(const ExperimentConfig& config);

struct TrainOptions {
    std::string config_path;
    std::string out_override;  // empty: use the config's output path
    std::optional<std::uint64_t> seed_override;
};

int cmd_train(const TrainOptions& opts, std::ostream& out, std::ostream& err);

struct BenchOptions {
    std::string config_path;
    std::string out_path;  // CSV report
};

/// Orthogonalization benchmark: every (matrix family x schedule) pair gets
/// steps-to-tolerance and final residual in the CSV; wall-clock timings go
/// to stdout so the report file stays deterministic.
int cmd_bench_ns(const BenchOptions& opts, std::ostream& out, std::ostream& err);

/// Runs the invariant suite and prints one pass/fail line per property.
int cmd_check(std::ostream& out, std::ostream& err);

}  // namespace dualkit::cli
