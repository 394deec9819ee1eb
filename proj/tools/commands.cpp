#include "commands.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "dualkit/checks.hpp"
#include "dualkit/errors.hpp"
#include "dualkit/matrix_io.hpp"
#include "dualkit/newton_schulz.hpp"
#include "dualkit/optim.hpp"
#include "dualkit/svd.hpp"

namespace dualkit::cli {

namespace {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

int report_error(std::ostream& err, const std::string& kind, const std::string& message,
                 int code) {
    err << "error: " << kind << ": " << message << "\n";
    return code;
}

Normalization normalization_from_string(const std::string& s) {
    if (s == "frobenius") return Normalization::Frobenius;
    if (s == "spectral_estimate") return Normalization::SpectralEstimate;
    throw ParseError("unknown normalization '" + s + "'");
}

IterationSchedule schedule_from_config(const std::vector<std::vector<double>>& coefficients,
                                       int max_steps, const std::string& normalization,
                                       double tolerance) {
    return IterationSchedule(coefficients, max_steps, normalization_from_string(normalization),
                             tolerance);
}

std::string format_g17(double x) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

}  // namespace

// --------------------------------------------------------------- dualize

int cmd_dualize(const DualizeOptions& opts, std::ostream& out, std::ostream& err) {
    try {
        const Matrix g = read_matrix_file(opts.input_path);

        if (opts.atom != "linear" && opts.atom != "embed") {
            return report_error(err, "usage",
                                "unsupported atom '" + opts.atom +
                                    "' (matrix fixtures are 2-D; supported: linear, embed)",
                                kExitUsage);
        }

        Matrix result;
        Matrix reference;  // exact route for the residual report
        if (opts.atom == "embed") {
            result = embed_dualize(g);
            reference = result;
        } else {
            const double scale =
                std::sqrt(static_cast<double>(g.rows()) / static_cast<double>(g.cols()));
            reference = scaled(polar_factor(svd_oracle(g)), scale);
            if (opts.method == "svd_oracle") {
                result = reference;
            } else if (opts.method == "newton_schulz") {
                const IterationSchedule schedule({{1.5, -0.5}}, opts.max_steps,
                                                 Normalization::Frobenius, opts.tolerance);
                auto [polar, report] = orthogonalize(g, schedule);
                if (!report.converged) {
                    return report_error(err, "non-convergence",
                                        "newton_schulz residual " +
                                            std::to_string(report.residual) + " after " +
                                            std::to_string(report.steps) + " steps",
                                        kExitNonConvergence);
                }
                result = scaled(polar, scale);
            } else if (opts.method == "inverse_root") {
                result = scaled(inverse_root_dualize(g, opts.max_steps,
                                                     std::min(opts.tolerance, 1e-9)),
                                scale);
            } else {
                return report_error(err, "usage", "unknown method '" + opts.method + "'",
                                    kExitUsage);
            }
        }

        write_matrix_file(opts.out_path, result);
        if (opts.method != "svd_oracle") {
            out << "residual_vs_svd_oracle " << format_g17(frobenius_norm(subtract(result, reference)))
                << "\n";
        }
        out << "wrote " << result.rows() << "x" << result.cols() << " matrix to " << opts.out_path
            << "\n";
        return kExitOk;
    } catch (const ParseError& e) {
        return report_error(err, "parse", std::string(opts.input_path) + ": " + e.what(),
                            kExitUsage);
    } catch (const NonConvergenceError& e) {
        return report_error(err, "non-convergence", e.what(), kExitNonConvergence);
    } catch (const IllConditionedError& e) {
        return report_error(err, "ill-conditioned", e.what(), kExitIllConditioned);
    } catch (const std::exception& e) {
        return report_error(err, "internal", e.what(), kExitFailure);
    }
}

// ----------------------------------------------------------------- train

ExperimentConfig parse_experiment_config(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("config: ") + e.what());
    }
    try {
        ExperimentConfig config;
        config.architecture = j.at("architecture").get<std::string>();
        const json& dataset = j.at("dataset");
        config.generator = dataset.at("generator").get<std::string>();
        config.dataset_size = dataset.at("size").get<int>();
        config.dataset_seed = dataset.at("seed").get<std::uint64_t>();
        const json& update = j.at("update");
        config.update_mode = update.at("mode").get<std::string>();
        config.update_value = update.at("value").get<double>();
        const json& schedule = j.at("schedule");
        config.coefficients = schedule.at("coefficients").get<std::vector<std::vector<double>>>();
        config.ns_max_steps = schedule.at("max_steps").get<int>();
        config.normalization = schedule.at("normalization").get<std::string>();
        config.ns_tolerance = schedule.at("tolerance").get<double>();
        config.steps = j.at("steps").get<int>();
        config.seed = j.at("seed").get<std::uint64_t>();
        config.out = j.at("out").get<std::string>();
        return config;
    } catch (const json::exception& e) {
        throw ParseError(std::string("config: ") + e.what());
    }
}

std::string serialize_experiment_config(const ExperimentConfig& config) {
    ordered_json j;
    j["architecture"] = config.architecture;
    j["dataset"] = {{"generator", config.generator},
                    {"size", config.dataset_size},
                    {"seed", config.dataset_seed}};
    j["update"] = {{"mode", config.update_mode}, {"value", config.update_value}};
    j["schedule"] = {{"coefficients", config.coefficients},
                     {"max_steps", config.ns_max_steps},
                     {"normalization", config.normalization},
                     {"tolerance", config.ns_tolerance}};
    j["steps"] = config.steps;
    j["seed"] = config.seed;
    j["out"] = config.out;
    return j.dump(2) + "\n";
}

int cmd_train(const TrainOptions& opts, std::ostream& out, std::ostream& err) {
    try {
        std::ifstream in(opts.config_path);
        if (!in)
            return report_error(err, "usage", "cannot open config '" + opts.config_path + "'",
                                kExitUsage);
        std::ostringstream buf;
        buf << in.rdbuf();
        ExperimentConfig config = parse_experiment_config(buf.str());
        if (opts.seed_override) config.seed = *opts.seed_override;
        const std::string out_path = opts.out_override.empty() ? config.out : opts.out_override;

        const std::filesystem::path config_dir =
            std::filesystem::path(opts.config_path).parent_path();
        std::filesystem::path arch_path(config.architecture);
        if (arch_path.is_relative()) arch_path = config_dir / arch_path;
        const ModuleTree arch = load_architecture(arch_path.string());

        Dataset data;
        if (config.generator == "gaussian_regression" || config.generator == "synthetic_images") {
            data = make_teacher_regression(arch, config.dataset_size, config.dataset_seed);
        } else if (config.generator == "spiral_classification") {
            if (!(arch.input_space() == Space(VectorSpace{2})))
                return report_error(err, "config",
                                    "spiral_classification needs a 2-dimensional input space",
                                    kExitUsage);
            data = make_spiral_classification(config.dataset_size, config.dataset_seed);
        } else {
            return report_error(err, "config", "unknown generator '" + config.generator + "'",
                                kExitUsage);
        }

        if (config.update_mode != "fixed_step" && config.update_mode != "sharpness_scaled")
            return report_error(err, "config", "unknown update mode '" + config.update_mode + "'",
                                kExitUsage);
        const IterationSchedule schedule = schedule_from_config(
            config.coefficients, config.ns_max_steps, config.normalization, config.ns_tolerance);
        const UpdateRule rule = config.update_mode == "fixed_step"
                                    ? UpdateRule::fixed_step(config.update_value, schedule)
                                    : UpdateRule::sharpness_scaled(config.update_value, schedule);

        const TrainResult result = train(arch, data, rule, config.steps, config.seed);
        std::ofstream metrics(out_path, std::ios::binary);
        if (!metrics)
            return report_error(err, "usage", "cannot open '" + out_path + "' for writing",
                                kExitUsage);
        metrics << metrics_to_jsonl(result);
        metrics.close();

        out << "wrote " << result.records.size() << " records to " << out_path << "\n";
        if (result.diverged)
            return report_error(err, "divergence", "loss exceeded 1e6; metrics are partial",
                                kExitDivergence);
        out << "final_loss " << format_g17(result.records.back().loss) << "\n";
        return kExitOk;
    } catch (const ParseError& e) {
        return report_error(err, "parse", e.what(), kExitUsage);
    } catch (const NonConvergenceError& e) {
        return report_error(err, "non-convergence", e.what(), kExitNonConvergence);
    } catch (const DimensionError& e) {
        return report_error(err, "config", e.what(), kExitUsage);
    } catch (const std::exception& e) {
        return report_error(err, "internal", e.what(), kExitFailure);
    }
}

// -------------------------------------------------------------- bench-ns

namespace {

struct BenchFamily {
    std::string name;
    std::string generator;  // gaussian | conditioned | orthogonal | rank_deficient
    std::size_t rows = 0, cols = 0;
    int count = 1;
    double condition = 10.0;
    std::size_t rank = 1;
    std::uint64_t seed = 0;
};

struct BenchSchedule {
    std::string name;
    std::vector<std::vector<double>> coefficients;
    int max_steps = 30;
    std::string normalization = "frobenius";
    double tolerance = 1e-6;
};

Matrix make_family_matrix(const BenchFamily& family, std::mt19937_64& rng) {
    if (family.generator == "gaussian") return random_gaussian(family.rows, family.cols, rng);
    if (family.generator == "conditioned")
        return random_conditioned(family.rows, family.cols, family.condition, rng);
    if (family.generator == "rank_deficient")
        return random_rank_deficient(family.rows, family.cols, family.rank, family.condition, rng);
    if (family.generator == "orthogonal") {
        if (family.rows >= family.cols) return random_orthonormal(family.rows, family.cols, rng);
        return transpose(random_orthonormal(family.cols, family.rows, rng));
    }
    throw ParseError("unknown matrix family generator '" + family.generator + "'");
}

}  // namespace

int cmd_bench_ns(const BenchOptions& opts, std::ostream& out, std::ostream& err) {
    try {
        std::ifstream in(opts.config_path);
        if (!in)
            return report_error(err, "usage", "cannot open config '" + opts.config_path + "'",
                                kExitUsage);
        json j;
        try {
            j = json::parse(in);
        } catch (const json::parse_error& e) {
            return report_error(err, "parse", std::string("config: ") + e.what(), kExitUsage);
        }

        std::vector<BenchFamily> families;
        std::vector<BenchSchedule> schedules;
        try {
            for (const json& f : j.at("families")) {
                BenchFamily family;
                family.name = f.at("name").get<std::string>();
                family.generator = f.at("generator").get<std::string>();
                family.rows = f.at("rows").get<std::size_t>();
                family.cols = f.at("cols").get<std::size_t>();
                family.count = f.at("count").get<int>();
                family.seed = f.at("seed").get<std::uint64_t>();
                if (f.contains("condition")) family.condition = f.at("condition").get<double>();
                if (f.contains("rank")) family.rank = f.at("rank").get<std::size_t>();
                families.push_back(std::move(family));
            }
            for (const json& s : j.at("schedules")) {
                BenchSchedule schedule;
                schedule.name = s.at("name").get<std::string>();
                schedule.coefficients =
                    s.at("coefficients").get<std::vector<std::vector<double>>>();
                schedule.max_steps = s.at("max_steps").get<int>();
                schedule.normalization = s.at("normalization").get<std::string>();
                schedule.tolerance = s.at("tolerance").get<double>();
                schedules.push_back(std::move(schedule));
            }
        } catch (const json::exception& e) {
            return report_error(err, "parse", std::string("config: ") + e.what(), kExitUsage);
        }

        // Every schedule must pass coefficient validation before any run.
        std::vector<IterationSchedule> compiled;
        for (const BenchSchedule& s : schedules) {
            try {
                compiled.push_back(schedule_from_config(s.coefficients, s.max_steps,
                                                        s.normalization, s.tolerance));
            } catch (const DimensionError& e) {
                return report_error(err, "config",
                                    "schedule '" + s.name + "' rejected: " + e.what(), kExitUsage);
            }
        }

        std::ostringstream csv;
        csv << "family,rows,cols,index,schedule,steps,converged,residual\n";
        for (const BenchFamily& family : families) {
            std::mt19937_64 rng(family.seed);
            std::vector<Matrix> matrices;
            for (int i = 0; i < family.count; ++i) matrices.push_back(make_family_matrix(family, rng));
            for (std::size_t s = 0; s < schedules.size(); ++s) {
                const auto start = std::chrono::steady_clock::now();
                for (int i = 0; i < family.count; ++i) {
                    auto [x, report] = orthogonalize(matrices[static_cast<std::size_t>(i)],
                                                     compiled[s]);
                    csv << family.name << ',' << family.rows << ',' << family.cols << ',' << i
                        << ',' << schedules[s].name << ',' << report.steps << ','
                        << (report.converged ? 1 : 0) << ',' << format_g17(report.residual)
                        << "\n";
                }
                const auto stop = std::chrono::steady_clock::now();
                const double ms =
                    std::chrono::duration<double, std::milli>(stop - start).count();
                out << "bench " << family.name << " x " << schedules[s].name << ": " << ms
                    << " ms over " << family.count << " matrices\n";
            }
        }

        std::ofstream report(opts.out_path, std::ios::binary);
        if (!report)
            return report_error(err, "usage", "cannot open '" + opts.out_path + "' for writing",
                                kExitUsage);
        report << csv.str();
        return kExitOk;
    } catch (const std::exception& e) {
        return report_error(err, "internal", e.what(), kExitFailure);
    }
}

// ----------------------------------------------------------------- check

int cmd_check(std::ostream& out, std::ostream& err) {
    try {
        const std::vector<CheckResult> results = run_invariant_suite(CheckOptions{});
        bool all_pass = true;
        for (const CheckResult& r : results) {
            out << (r.pass ? "[PASS] " : "[FAIL] ") << r.name << ": " << r.detail << "\n";
            all_pass = all_pass && r.pass;
        }
        if (!all_pass)
            return report_error(err, "check", "one or more invariant checks failed", kExitFailure);
        out << "all " << results.size() << " checks passed\n";
        return kExitOk;
    } catch (const std::exception& e) {
        return report_error(err, "internal", e.what(), kExitFailure);
    }
}

}  // namespace dualkit::cli
