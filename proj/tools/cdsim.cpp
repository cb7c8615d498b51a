// cdsim: run configured scattering experiments and write result tables.
//
//   cdsim <experiment> --config run.yaml [--seed S] [--configs N] [--out DIR]
//                      [--workers N] [--checkpoint FILE] [--emit f6,f4]
//   cdsim run --config run.yaml ...          (experiment taken from the file)
//   cdsim emit --from DIR --figure f6 [--out DIR]
//
// Exit status: 0 ok, 1 partial results, 2 failure.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "cdsim/config.hpp"
#include "cdsim/experiments.hpp"
#include "cdsim/results.hpp"

namespace {

struct RunFlags {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::uint64_t> configs;
    std::optional<std::string> out;
    std::optional<unsigned> workers;
    std::optional<std::string> checkpoint;
    std::vector<std::string> emit;
    bool quiet = false;
};

void add_run_flags(CLI::App* cmd, RunFlags& f)
{
    cmd->add_option("--config", f.config, "YAML run configuration, or a metadata.json to rerun")
        ->required()
        ->check(CLI::ExistingFile);
    cmd->add_option("--seed", f.seed, "master seed (overrides ensemble.seed)");
    cmd->add_option("--configs", f.configs, "number of configurations (overrides ensemble.configs)")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--out", f.out, "output directory (overrides CDSIM_OUT_DIR and output.dir)");
    cmd->add_option("--workers", f.workers, "worker threads; results do not depend on it")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--checkpoint", f.checkpoint, "checkpoint file, resumed when it exists");
    cmd->add_option("--emit", f.emit, "figure plot data to write (f1 f2 f4 f5 f6 f7 f8 f9)")
        ->delimiter(',');
    cmd->add_flag("--quiet,-q", f.quiet, "no progress messages");
}

int report_config_error(const cdsim::ConfigError& e)
{
    std::cerr << "cdsim: configuration error";
    if (e.line() > 0) {
        std::cerr << " (line " << e.line() << ")";
    }
    std::cerr << ": " << e.what() << '\n';
    return 2;
}

int run(const RunFlags& f, std::optional<cdsim::Experiment> experiment)
{
    cdsim::RunConfig config;
    try {
        std::filesystem::path path(f.config);
        if (path.extension() == ".json") {
            config = cdsim::load_config_file(path);
            if (experiment && config.experiment != *experiment) {
                throw cdsim::ConfigError("metadata describes a '"
                                         + std::string(cdsim::to_string(config.experiment))
                                         + "' run", "experiment");
            }
        } else {
            std::ifstream in(path);
            std::stringstream text;
            text << in.rdbuf();
            config = cdsim::parse_config(text.str(), experiment);
        }
    } catch (const cdsim::ConfigError& e) {
        return report_config_error(e);
    }

    if (f.seed) config.ensemble.seed = *f.seed;
    if (f.configs) config.ensemble.configs = *f.configs;
    if (f.workers) config.ensemble.workers = *f.workers;
    if (f.out) {
        config.output.dir = *f.out;
    } else if (const char* env = std::getenv("CDSIM_OUT_DIR"); env && *env) {
        config.output.dir = env;
    }
    std::vector<std::string> figures = config.output.figures;
    figures.insert(figures.end(), f.emit.begin(), f.emit.end());
    for (const auto& id : figures) {
        if (!cdsim::parse_figure(id)) {
            std::cerr << "cdsim: unknown figure '" << id << "'\n";
            return 2;
        }
    }

    cdsim::RunOptions options;
    if (f.checkpoint) {
        options.checkpoint = *f.checkpoint;
    }
    if (!f.quiet) {
        options.progress = [](std::size_t series, std::uint64_t done, std::uint64_t target) {
            std::cerr << "\rseries " << series << ": " << done << "/" << target << std::flush;
            if (done == target) {
                std::cerr << '\n';
            }
        };
    }

    const cdsim::ResultBundle bundle = cdsim::run_experiment(config, options);
    try {
        cdsim::write_bundle(bundle, config.output.dir);
    } catch (const std::exception& e) {
        std::cerr << "cdsim: " << e.what() << '\n';
        return 2;
    }
    for (const auto& failure : bundle.failures) {
        std::cerr << "cdsim: series " << failure.series;
        if (failure.index >= 0) {
            std::cerr << " config " << failure.index << " (seed " << failure.seed << ")";
        }
        std::cerr << ": " << failure.message << '\n';
    }
    int code = cdsim::exit_code(bundle.status);
    if (bundle.status != cdsim::RunStatus::Failed) {
        for (const auto& id : figures) {
            try {
                const auto path = cdsim::emit_plot_data(bundle, *cdsim::parse_figure(id), config.output.dir);
                if (!f.quiet) {
                    std::cerr << "wrote " << path.string() << '\n';
                }
            } catch (const cdsim::Error& e) {
                std::cerr << "cdsim: " << e.what() << '\n';
                code = std::max(code, 1);
            }
        }
    }
    std::cout << "status: " << cdsim::to_string(bundle.status) << ", results in "
              << config.output.dir << " (" << bundle.wall_seconds << " s)\n";
    return code;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Coupled-dipole light scattering by random atomic clouds"};
    app.set_version_flag("--version", std::string(CDSIM_VERSION));
    app.require_subcommand(1);

    RunFlags flags;
    std::optional<cdsim::Experiment> chosen;
    bool generic = false;

    for (const auto e : {cdsim::Experiment::Spectrum, cdsim::Experiment::Angular, cdsim::Experiment::Cbs,
                         cdsim::Experiment::Fresnel, cdsim::Experiment::Eigenmodes,
                         cdsim::Experiment::SingleShot}) {
        auto* cmd = app.add_subcommand(std::string(cdsim::to_string(e)),
                                       "run the " + std::string(cdsim::to_string(e)) + " experiment");
        add_run_flags(cmd, flags);
        cmd->callback([&chosen, e] { chosen = e; });
    }
    auto* run_cmd = app.add_subcommand("run", "run the experiment named in the configuration");
    add_run_flags(run_cmd, flags);
    run_cmd->callback([&generic] { generic = true; });

    std::string from;
    std::vector<std::string> figure_ids;
    std::string emit_out;
    auto* emit_cmd = app.add_subcommand("emit", "write figure plot data from a results directory");
    emit_cmd->add_option("--from", from, "results directory written by a run")
        ->required()
        ->check(CLI::ExistingDirectory);
    emit_cmd->add_option("--figure", figure_ids, "figure ids")->required()->delimiter(',');
    emit_cmd->add_option("--out", emit_out, "output directory (default: the results directory)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    if (emit_cmd->parsed()) {
        try {
            const cdsim::ResultBundle bundle = cdsim::load_bundle(from);
            for (const auto& id : figure_ids) {
                const auto figure = cdsim::parse_figure(id);
                if (!figure) {
                    std::cerr << "cdsim: unknown figure '" << id << "'\n";
                    return 2;
                }
                std::cout << cdsim::emit_plot_data(bundle, *figure, emit_out.empty() ? from : emit_out)
                                 .string()
                          << '\n';
            }
        } catch (const cdsim::ConfigError& e) {
            return report_config_error(e);
        } catch (const std::exception& e) {
            std::cerr << "cdsim: " << e.what() << '\n';
            return 2;
        }
        return 0;
    }

    try {
        return run(flags, generic ? std::nullopt : chosen);
    } catch (const std::exception& e) {
        std::cerr << "cdsim: " << e.what() << '\n';
        return 2;
    }
}
