#pragma once

// Multi-seed experiment driver. Each seed is an independent, shared-nothing run; seeds are
// spread over worker threads and each run writes only its own files.

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "cavdn/experiment/config.hpp"
#include "cavdn/experiment/metrics.hpp"
#include "cavdn/learner.hpp"
#include "cavdn/malfunction.hpp"
#include "cavdn/nn.hpp"

namespace cavdn::experiment {

struct RunResult {
    std::uint64_t seed = 0;
    std::vector<RunRow> rows;
    std::vector<DetectionEvent> detections;
};

inline constexpr char kCheckpointMagic[8] = {'C', 'A', 'V', 'D', 'N', 'C', 'K', 'P'};

// Prediction and target networks of every agent, after `episode` training episodes.
inline void write_checkpoint(const std::filesystem::path &path, const learn::Trainer &trainer) {
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw std::runtime_error("cannot write checkpoint " + tmp.string());
        os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
        nn::detail::write_pod(os, nn::kSnapshotVersion);
        nn::detail::write_pod(os, static_cast<std::int64_t>(trainer.episode()));
        nn::detail::write_pod(os, static_cast<std::uint32_t>(trainer.brains().size()));
        for (const auto &b : trainer.brains()) {
            nn::save(os, b.prediction);
            nn::save(os, b.target);
        }
    }
    std::filesystem::rename(tmp, path);
}

struct Checkpoint {
    long episode = 0;
    std::vector<nn::Mlp> prediction;
    std::vector<nn::Mlp> target;
};

inline Checkpoint read_checkpoint(const std::filesystem::path &path) {
    std::ifstream is(path, std::ios::binary);
    char magic[8];
    if (!is || !is.read(magic, 8) || !std::equal(magic, magic + 8, kCheckpointMagic))
        throw ConfigError("not a checkpoint: " + path.string());
    if (nn::detail::read_pod<std::uint32_t>(is) != nn::kSnapshotVersion)
        throw ConfigError("unsupported checkpoint version");
    Checkpoint c;
    c.episode = static_cast<long>(nn::detail::read_pod<std::int64_t>(is));
    const auto n = nn::detail::read_pod<std::uint32_t>(is);
    for (std::uint32_t i = 0; i < n; ++i) {
        c.prediction.push_back(nn::load(is));
        c.target.push_back(nn::load(is));
    }
    return c;
}

struct RunOptions {
    // Directory for the run's checkpoint file; no checkpoints when empty.
    std::filesystem::path checkpoint_dir;
    // Called after every training episode, e.g. for progress output.
    std::function<void(const learn::EpisodeRecord &)> on_episode;
};

// Full training loop for one seed: episodes, periodic greedy evaluation, malfunction
// injection, trigger observation and the detection-time adaptation.
inline RunResult run_seed(const ExperimentConfig &cfg, std::uint64_t seed, const RunOptions &opts = {}) {
    const int n = cfg.n_agents;
    learn::Trainer trainer(cfg.trainer, cfg.layout, cfg.env, seed, cfg.pre_network.build(n),
                           cfg.malfunction);
    malfunction::MalfunctionTrigger trigger(n, cfg.trigger);
    const auto adaptation = cfg.adaptation();

    RunResult result;
    result.seed = seed;
    result.rows.reserve(static_cast<std::size_t>(cfg.total_episodes + cfg.total_episodes / cfg.eval_interval));

    std::filesystem::path checkpoint;
    if (!opts.checkpoint_dir.empty()) {
        std::filesystem::create_directories(opts.checkpoint_dir);
        checkpoint = opts.checkpoint_dir / ("seed" + std::to_string(seed) + ".bin");
    }

    for (long e = 0; e < cfg.total_episodes; ++e) {
        const auto rec = trainer.train_episode();
        result.rows.push_back({seed, e, Phase::Train, rec.rewards, rec.team_reward, rec.epsilon,
                               rec.mean_loss, false});
        if (rec.target_synced && !checkpoint.empty()) write_checkpoint(checkpoint, trainer);
        if (opts.on_episode) opts.on_episode(rec);

        if ((e + 1) % cfg.eval_interval != 0) continue;
        const auto eval = trainer.evaluate_greedy();
        RunRow row{seed, e, Phase::Eval, eval, trainer.mix(eval), 0.0, rec.mean_loss, false};
        if (cfg.trigger_enabled && e >= cfg.trigger.arm_episode) {
            if (auto detected = trigger.observe(eval, e)) {
                auto adapted = malfunction::on_detection(*detected, trainer.schedule(), e + 1,
                                                         trainer.network(), adaptation);
                trainer.set_network(std::move(adapted.network));
                trainer.set_schedule(adapted.schedule);
                row.detected = true;
                result.detections.push_back({seed, e, *detected});
            }
        }
        result.rows.push_back(std::move(row));
    }
    return result;
}

inline void write_run_files(const std::filesystem::path &dir, const ExperimentConfig &cfg,
                            const RunResult &run) {
    std::filesystem::create_directories(dir);
    {
        std::ofstream os(dir / run_file_name(run.seed), std::ios::trunc);
        write_run_csv(os, cfg.n_agents, run.rows);
        if (!os) throw std::runtime_error("failed writing " + run_file_name(run.seed));
    }
    std::ofstream os(dir / detections_file_name(run.seed), std::ios::trunc);
    write_detections_csv(os, run.detections);
}

// Configuration echo next to the run files. Seeds are listed sorted so that reordering the
// seed list leaves every output file unchanged.
inline void write_run_meta(const std::filesystem::path &dir, const ExperimentConfig &cfg) {
    auto j = to_json(cfg);
    auto seeds = cfg.seeds;
    std::sort(seeds.begin(), seeds.end());
    j["seeds"] = seeds;
    j.erase("output_dir");
    std::ofstream os(dir / "run_meta.json", std::ios::trunc);
    os << j.dump(2) << '\n';
}

inline std::optional<long> read_onset_from_meta(const std::filesystem::path &runs_dir) {
    const auto meta = runs_dir / "run_meta.json";
    if (!std::filesystem::exists(meta)) return std::nullopt;
    std::ifstream is(meta);
    json j;
    try {
        j = json::parse(is);
    } catch (const json::exception &e) {
        throw ConfigError("run_meta.json: " + std::string(e.what()));
    }
    if (!j.contains("malfunction") || !j["malfunction"].value("enabled", false)) return std::nullopt;
    return j["malfunction"].value("onset_episode", 0L);
}

struct AggregateFiles {
    std::filesystem::path curves;
    std::filesystem::path summary;
    Aggregate data;
};

inline AggregateFiles aggregate_directory(const std::filesystem::path &runs_dir,
                                          const std::filesystem::path &out_file) {
    const auto files = find_run_files(runs_dir);
    if (files.size() < 2)
        throw ConfigError("aggregate needs at least two run_seed*.csv files in " + runs_dir.string());
    std::vector<std::vector<RunRow>> runs;
    int n_agents = -1;
    for (const auto &f : files) {
        int n = 0;
        runs.push_back(read_run_csv(f, &n));
        if (n_agents >= 0 && n != n_agents) throw ConfigError("run CSVs have mismatched schemas");
        n_agents = n;
    }
    AggregateFiles out;
    out.data = aggregate(runs, n_agents, read_onset_from_meta(runs_dir));
    out.curves = out_file;
    out.summary = summary_path_for(out_file);
    if (out_file.has_parent_path()) std::filesystem::create_directories(out_file.parent_path());
    {
        std::ofstream os(out.curves, std::ios::trunc);
        write_aggregate_csv(os, out.data);
    }
    std::ofstream os(out.summary, std::ios::trunc);
    write_summary_csv(os, out.data);
    return out;
}

struct ExperimentOutcome {
    std::vector<std::uint64_t> completed;
    std::vector<std::pair<std::uint64_t, std::string>> failed;
    std::optional<AggregateFiles> aggregate;
};

// Runs every configured seed (up to `jobs` at once), writes the per-run files and, with at
// least two completed runs, aggregate.csv and aggregate_summary.csv.
inline ExperimentOutcome run_experiment(const ExperimentConfig &cfg, unsigned jobs = 0,
                                        std::ostream *log = nullptr) {
    cfg.validate();
    const std::filesystem::path dir = cfg.output_dir;
    std::filesystem::create_directories(dir);
    write_run_meta(dir, cfg);

    if (jobs == 0) jobs = std::max(1u, std::thread::hardware_concurrency());
    jobs = std::min<unsigned>(jobs, static_cast<unsigned>(cfg.seeds.size()));

    ExperimentOutcome outcome;
    std::mutex mu;
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < cfg.seeds.size(); i = next++) {
            const auto seed = cfg.seeds[i];
            try {
                RunOptions opts;
                if (cfg.checkpoints) opts.checkpoint_dir = dir / "checkpoints";
                const auto run = run_seed(cfg, seed, opts);
                write_run_files(dir, cfg, run);
                std::lock_guard lock(mu);
                outcome.completed.push_back(seed);
                if (log) *log << "seed " << seed << ": done (" << run.detections.size() << " detection(s))\n";
            } catch (const std::exception &e) {
                std::lock_guard lock(mu);
                outcome.failed.emplace_back(seed, e.what());
                if (log) *log << "seed " << seed << ": FAILED: " << e.what() << '\n';
            }
        }
    };
    std::vector<std::thread> pool;
    for (unsigned t = 1; t < jobs; ++t)
        pool.emplace_back(worker);
    worker();
    for (auto &t : pool)
        t.join();
    std::sort(outcome.completed.begin(), outcome.completed.end());

    if (outcome.completed.size() >= 2) outcome.aggregate = aggregate_directory(dir, dir / "aggregate.csv");
    return outcome;
}

} // namespace cavdn::experiment
