// Command-line front end: train, aggregate, plot, validate-config.
//
// Exit codes: 0 success, 1 configuration error, 2 runtime failure.

#include <CLI11.hpp>

#include <cstdint>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "cavdn/experiment.hpp"

namespace {

using namespace cavdn;

constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;

// "0,1,2" or "0-9" or a mix ("0-3,7").
std::vector<std::uint64_t> parse_seed_list(const std::string &text) {
    std::vector<std::uint64_t> seeds;
    for (auto part : experiment::split(text, ',')) {
        if (part.empty()) throw ConfigError("--seeds: empty entry");
        const auto dash = part.find('-');
        if (dash == std::string_view::npos) {
            seeds.push_back(experiment::parse_integer<std::uint64_t>(part, "--seeds"));
        } else {
            const auto lo = experiment::parse_integer<std::uint64_t>(part.substr(0, dash), "--seeds");
            const auto hi = experiment::parse_integer<std::uint64_t>(part.substr(dash + 1), "--seeds");
            if (hi < lo) throw ConfigError("--seeds: descending range");
            for (auto s = lo; s <= hi; ++s)
                seeds.push_back(s);
        }
    }
    return seeds;
}

void print_summary(const experiment::Aggregate &agg) {
    std::cout << std::fixed << std::setprecision(2);
    for (const auto &r : agg.summary) {
        std::cout << std::left << std::setw(20) << r.phase << std::setw(18)
                  << experiment::agent_label(r.agent) << std::right << std::setw(9) << r.stats.mean
                  << " +- " << r.stats.ci95 << "  (n=" << r.stats.count << ")\n";
    }
    std::cout.unsetf(std::ios::fixed);
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"VDN / CA-VDN multi-agent grid-world experiments"};
    app.require_subcommand(1);

    std::string config_path, seeds_text, algorithm, out_dir;
    long episodes = 0;
    unsigned jobs = 0;
    bool quiet = false;
    auto *train = app.add_subcommand("train", "train one run per seed and aggregate them");
    train->add_option("--config", config_path, "experiment config (JSON); defaults if omitted");
    train->add_option("--seeds", seeds_text, "seed list, e.g. 0-9 or 1,4,7");
    train->add_option("--algorithm", algorithm, "vdn or ca_vdn")->check(CLI::IsMember({"vdn", "ca_vdn"}));
    train->add_option("--out", out_dir, "output directory");
    train->add_option("--episodes", episodes, "total training episodes")->check(CLI::PositiveNumber);
    train->add_option("--jobs", jobs, "parallel runs (default: hardware threads)");
    train->add_flag("--quiet", quiet, "suppress per-seed progress");

    std::string runs_dir, aggregate_out;
    auto *agg = app.add_subcommand("aggregate", "aggregate run CSVs into curves and a summary table");
    agg->add_option("--runs", runs_dir, "directory holding run_seed*.csv")->required();
    agg->add_option("--out", aggregate_out, "aggregate CSV to write")->required();

    std::string plot_in, plot_out, band = "ci";
    auto *plot = app.add_subcommand("plot", "render SVG reward charts from an aggregate CSV");
    plot->add_option("--aggregate", plot_in, "aggregate CSV")->required();
    plot->add_option("--out", plot_out, "output directory for SVG files")->required();
    plot->add_option("--band", band, "shaded band: ci or minmax")->check(CLI::IsMember({"ci", "minmax"}));

    std::string validate_path;
    auto *validate = app.add_subcommand("validate-config", "check a config file and print it resolved");
    validate->add_option("--config", validate_path, "experiment config (JSON)")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        return app.exit(e) == 0 ? 0 : kExitConfig;
    }

    try {
        if (*validate) {
            const auto cfg = experiment::load_config(validate_path);
            std::cout << experiment::to_json(cfg).dump(2) << '\n';
            return 0;
        }
        if (*train) {
            auto cfg = config_path.empty() ? experiment::parse_config(experiment::json::object())
                                           : experiment::load_config(config_path);
            if (!seeds_text.empty()) cfg.seeds = parse_seed_list(seeds_text);
            if (!algorithm.empty()) cfg.trainer.algorithm = learn::parse_algorithm(algorithm);
            if (!out_dir.empty()) cfg.output_dir = out_dir;
            if (episodes > 0) cfg.total_episodes = episodes;
            cfg.validate();
            const auto outcome = experiment::run_experiment(cfg, jobs, quiet ? nullptr : &std::cerr);
            if (outcome.aggregate) print_summary(outcome.aggregate->data);
            return outcome.failed.empty() ? 0 : kExitRuntime;
        }
        if (*agg) {
            const auto files = experiment::aggregate_directory(runs_dir, aggregate_out);
            print_summary(files.data);
            return 0;
        }
        if (*plot) {
            experiment::ChartOptions opt;
            opt.band = band == "minmax" ? experiment::BandKind::MinMax : experiment::BandKind::ConfidenceInterval;
            for (const auto &p : experiment::render_charts(plot_in, plot_out, opt))
                std::cout << p.string() << '\n';
            return 0;
        }
    } catch (const ConfigError &e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const std::exception &e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
    return 0;
}
