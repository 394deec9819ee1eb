#include <iostream>

#include <CLI11.hpp>

#include "commands.hpp"

int main(int argc, char** argv) {
    CLI::App app{"duality maps, module-tree norms and dualized steepest descent"};
    app.require_subcommand(1);

    dualkit::cli::DualizeOptions dualize_opts;
    CLI::App* dualize = app.add_subcommand("dualize", "dualize a matrix fixture");
    dualize->add_option("--input", dualize_opts.input_path, "matrix fixture to read")->required();
    dualize->add_option("--out", dualize_opts.out_path, "output fixture path")->required();
    dualize->add_option("--atom", dualize_opts.atom, "atom kind: linear | embed");
    dualize->add_option("--method", dualize_opts.method,
                        "newton_schulz | inverse_root | svd_oracle");
    dualize->add_option("--tolerance", dualize_opts.tolerance, "iteration stopping tolerance");
    dualize->add_option("--max-steps", dualize_opts.max_steps, "iteration step budget");

    dualkit::cli::BenchOptions bench_opts;
    CLI::App* bench = app.add_subcommand("bench-ns", "benchmark orthogonalization schedules");
    bench->add_option("--config", bench_opts.config_path, "bench config (JSON)")->required();
    bench->add_option("--out", bench_opts.out_path, "CSV report path")->required();

    dualkit::cli::TrainOptions train_opts;
    std::uint64_t seed_flag = 0;
    CLI::App* train = app.add_subcommand("train", "run dualized steepest descent");
    train->add_option("--config", train_opts.config_path, "experiment config (JSON)")->required();
    train->add_option("--out", train_opts.out_override, "metrics path (overrides the config)");
    CLI::Option* seed_opt = train->add_option("--seed", seed_flag, "seed (overrides the config)");

    CLI::App* check = app.add_subcommand("check", "run the invariant suite");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help and friends
        std::cerr << "error: usage: " << e.what() << "\n";
        return dualkit::cli::kExitUsage;
    }

    if (dualize->parsed()) return dualkit::cli::cmd_dualize(dualize_opts, std::cout, std::cerr);
    if (bench->parsed()) return dualkit::cli::cmd_bench_ns(bench_opts, std::cout, std::cerr);
    if (train->parsed()) {
        if (seed_opt->count() > 0) train_opts.seed_override = seed_flag;
        return dualkit::cli::cmd_train(train_opts, std::cout, std::cerr);
    }
    if (check->parsed()) return dualkit::cli::cmd_check(std::cout, std::cerr);
    return dualkit::cli::kExitUsage;
}
