#pragma once

// Malfunction injection, reward-drop detection, and the adaptation applied on detection.

#include <algorithm>
#include <deque>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "cavdn/environment.hpp"
#include "cavdn/errors.hpp"
#include "cavdn/relational.hpp"
#include "cavdn/schedule.hpp"

namespace cavdn::malfunction {

enum class MalfunctionKind {
    Immobilized, // every chosen action becomes Idle; the agent can still be pushed
};

struct MalfunctionSpec {
    int agent_index = 3;
    long onset_episode = 5000;
    MalfunctionKind kind = MalfunctionKind::Immobilized;

    void validate(int n_agents) const {
        if (agent_index < 0 || agent_index >= n_agents)
            throw ConfigError("malfunction.agent must be in [0, " + std::to_string(n_agents) + ")");
        if (onset_episode < 0) throw ConfigError("malfunction.onset_episode must be >= 0");
    }
};

// The action the environment actually executes for `agent` in `episode`.
inline env::Action apply_malfunction(const MalfunctionSpec &spec, long episode, int agent,
                                     env::Action chosen) {
    if (agent != spec.agent_index || episode < spec.onset_episode) return chosen;
    switch (spec.kind) {
    case MalfunctionKind::Immobilized: return env::Action::Idle;
    }
    return chosen;
}

inline env::Action apply_malfunction(const std::optional<MalfunctionSpec> &spec, long episode,
                                     int agent, env::Action chosen) {
    return spec ? apply_malfunction(*spec, episode, agent, chosen) : chosen;
}

struct TriggerConfig {
    int window = 5;            // consecutive evaluations that must all sit below the baseline
    int baseline_evals = 10;   // evaluations preceding the window that form the baseline
    double drop_threshold = 10.0;
    long arm_episode = 2000;   // evaluations before this episode are not observed

    void validate() const {
        if (window <= 0) throw ConfigError("trigger.window must be positive");
        if (baseline_evals <= 0) throw ConfigError("trigger.baseline_evals must be positive");
        if (!(drop_threshold >= 0.0)) throw ConfigError("trigger.drop_threshold must be >= 0");
        if (arm_episode < 0) throw ConfigError("trigger.arm_episode must be >= 0");
    }
};

// Watches per-agent greedy-evaluation rewards. Fires once, when for some agent each of the
// last `window` evaluations is below (baseline - drop_threshold), the baseline being the mean
// of the `baseline_evals` evaluations right before that window.
class MalfunctionTrigger {
public:
    MalfunctionTrigger() = default;

    MalfunctionTrigger(int n_agents, TriggerConfig config)
        : config_(config), history_(static_cast<std::size_t>(n_agents)) {
        config_.validate();
    }

    std::optional<std::set<int>> observe(std::span<const double> rewards, long episode = -1) {
        if (rewards.size() != history_.size())
            throw ShapeError("trigger: reward vector length does not match agent count");
        const std::size_t keep =
            static_cast<std::size_t>(config_.baseline_evals + config_.window);
        for (std::size_t a = 0; a < history_.size(); ++a) {
            history_[a].push_back(rewards[a]);
            if (history_[a].size() > keep) history_[a].pop_front();
        }
        if (fired_) return std::nullopt;

        std::set<int> detected;
        for (std::size_t a = 0; a < history_.size(); ++a) {
            const auto &h = history_[a];
            if (h.size() < keep) continue;
            const auto split = h.begin() + config_.baseline_evals;
            const double baseline =
                std::accumulate(h.begin(), split, 0.0) / config_.baseline_evals;
            const double limit = baseline - config_.drop_threshold;
            if (std::all_of(split, h.end(), [&](double r) { return r < limit; }))
                detected.insert(static_cast<int>(a));
        }
        if (detected.empty()) return std::nullopt;
        fired_ = true;
        fire_episode_ = episode;
        return detected;
    }

    bool fired() const { return fired_; }
    std::optional<long> fire_episode() const {
        return fired_ ? std::optional<long>(fire_episode_) : std::nullopt;
    }
    const TriggerConfig &config() const { return config_; }

private:
    TriggerConfig config_;
    std::vector<std::deque<double>> history_;
    bool fired_ = false;
    long fire_episode_ = -1;
};

struct AdaptationConfig {
    // Off for plain VDN: detection only restarts exploration.
    bool swap_network = true;
    double assist_weight = 1.0;
    bool keep_self_edge = true;
    // Used verbatim instead of the assistance network when set.
    std::optional<relational::RelationalNetwork> explicit_network;
};

struct Adaptation {
    relational::RelationalNetwork network;
    learn::EpsilonSchedule schedule;
};

inline Adaptation on_detection(const std::set<int> &detected, const learn::EpsilonSchedule &schedule,
                               long episode, const relational::RelationalNetwork &current,
                               const AdaptationConfig &config) {
    if (detected.empty()) throw UsageError("on_detection called with no detected agents");
    Adaptation out{current, schedule};
    out.schedule.reset(episode);
    if (!config.swap_network) return out;
    if (config.explicit_network) {
        if (config.explicit_network->size() != current.size())
            throw ConfigError("post-detection relational network has the wrong size");
        out.network = *config.explicit_network;
    } else {
        out.network = relational::assistance_network(current.size(), detected, config.assist_weight,
                                                     config.keep_self_edge);
    }
    return out;
}

} // namespace cavdn::malfunction
