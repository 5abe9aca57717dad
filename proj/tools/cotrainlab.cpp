#include <cstdio>
#include <iostream>
#include <thread>

#include <CLI11.hpp>

#include "cotrainlab/error.hpp"
#include "cotrainlab/harness.hpp"

namespace harness = cotrainlab::harness;

int main(int argc, char** argv) {
    CLI::App app{"cotrainlab: feature-prior self-training and co-training experiments"};
    app.require_subcommand(1);

    std::string config, out, grid_path, run_dir, format = "csv";
    int threads = 1;

    auto* run = app.add_subcommand("run", "run an experiment config");
    run->add_option("--config", config, "experiment config (JSON)")->required();
    run->add_option("--out", out, "output directory (default: the config's output)");
    run->add_option("--threads", threads, "worker threads (0: hardware concurrency)")->check(CLI::NonNegativeNumber);

    auto* grid = app.add_subcommand("gridsearch", "grid-search lr, K and gamma per prior on the validation split");
    grid->add_option("--config", config, "experiment config (JSON)")->required();
    grid->add_option("--grid", grid_path, "grid file with lr, K and gamma lists")->required();
    grid->add_option("--out", out, "output directory (default: <config output>/grid)");
    grid->add_option("--threads", threads, "worker threads (0: hardware concurrency)")->check(CLI::NonNegativeNumber);

    auto* rep = app.add_subcommand("report", "print the final-era rows of a run");
    rep->add_option("--run", run_dir, "run directory")->required();
    rep->add_option("--format", format, "csv or json")->check(CLI::IsMember({"csv", "json"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }
    if (threads == 0) threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));

    try {
        if (*run) {
            auto cfg = harness::load_config(config);
            harness::apply_env_overrides(cfg);
            const auto dir = out.empty() ? cfg.output : std::filesystem::path(out);
            const auto result = harness::run(cfg, dir, threads);
            std::cerr << "wrote " << result.rows.size() << " metric rows to " << (dir / "metrics.csv").string() << "\n";
        } else if (*grid) {
            auto cfg = harness::load_config(config);
            harness::apply_env_overrides(cfg);
            const auto g = harness::load_grid(grid_path);
            const auto dir = out.empty() ? cfg.output / "grid" : std::filesystem::path(out);
            const auto result = harness::grid_search(cfg, g, threads);
            harness::write_grid_result(result, cfg, dir);
            for (std::size_t m = 0; m < result.best.size(); ++m) {
                const auto& b = result.best[m];
                std::printf("m%zu %s lr=%g K=%d gamma=%g validation_accuracy=%.4f\n", m,
                            cotrainlab::priors::to_string(cfg.members[m].prior).c_str(), b.lr, b.lr_drop_every,
                            b.lr_drop_factor, b.validation_accuracy);
            }
        } else if (*rep) {
            std::cout << harness::report(run_dir, format);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return harness::exit_code_for(e);
    }
    return 0;
}
