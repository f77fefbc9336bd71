#pragma once

// VDN / CA-VDN trainer.
//
// Every agent owns a prediction and a target Q-network. The joint value is the sum of the
// agents' individual Q-values, so the greedy joint action decomposes into per-agent argmaxes
// and the bootstrap target is a per-agent max followed by a sum. The only difference
// between VDN and CA-VDN is how per-agent rewards are mixed into the team reward.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "cavdn/environment.hpp"
#include "cavdn/errors.hpp"
#include "cavdn/malfunction.hpp"
#include "cavdn/nn.hpp"
#include "cavdn/relational.hpp"
#include "cavdn/schedule.hpp"

namespace cavdn::learn {

using Rng = std::mt19937_64;
using nn::Matrix;
using nn::Vector;

enum class Algorithm { Vdn, CaVdn };

inline std::string algorithm_name(Algorithm a) { return a == Algorithm::Vdn ? "vdn" : "ca_vdn"; }

inline Algorithm parse_algorithm(const std::string &s) {
    if (s == "vdn") return Algorithm::Vdn;
    if (s == "ca_vdn" || s == "ca-vdn") return Algorithm::CaVdn;
    throw ConfigError("algorithm must be \"vdn\" or \"ca_vdn\", got \"" + s + "\"");
}

enum class LossReduction { Mean, Sum };

struct Transition {
    std::vector<double> state;
    std::vector<int> actions;
    std::vector<double> rewards; // raw per-agent rewards, mixed at training time
    std::vector<double> next_state;
    bool done = false;
};

// Column-major batch: one sample per column.
struct Batch {
    Matrix states;
    Matrix next_states;
    Eigen::MatrixXi actions; // agents x samples
    Matrix rewards;          // agents x samples
    std::vector<std::uint8_t> done;

    Eigen::Index size() const { return states.cols(); }
    int agents() const { return static_cast<int>(actions.rows()); }
};

// Fixed-capacity ring buffer; the oldest transition is overwritten once full.
class ReplayMemory {
public:
    ReplayMemory() = default;

    ReplayMemory(std::size_t capacity, int state_dim, int n_agents)
        : capacity_(capacity), state_dim_(state_dim), n_agents_(n_agents),
          states_(state_dim, static_cast<Eigen::Index>(capacity)),
          next_states_(state_dim, static_cast<Eigen::Index>(capacity)),
          actions_(n_agents, static_cast<Eigen::Index>(capacity)),
          rewards_(n_agents, static_cast<Eigen::Index>(capacity)), done_(capacity, 0) {
        if (capacity == 0) throw ConfigError("memory_capacity must be positive");
    }

    std::size_t size() const { return size_; }
    std::size_t capacity() const { return capacity_; }
    std::size_t cursor() const { return cursor_; }

    void push(const Transition &t) {
        if (static_cast<int>(t.state.size()) != state_dim_ ||
            static_cast<int>(t.next_state.size()) != state_dim_ ||
            static_cast<int>(t.actions.size()) != n_agents_ ||
            static_cast<int>(t.rewards.size()) != n_agents_)
            throw ShapeError("transition does not match replay memory layout");
        for (int a : t.actions)
            if (a < 0 || a >= env::kActionCount) throw ShapeError("transition action out of range");
        const auto c = static_cast<Eigen::Index>(cursor_);
        states_.col(c) = Eigen::Map<const Vector>(t.state.data(), state_dim_);
        next_states_.col(c) = Eigen::Map<const Vector>(t.next_state.data(), state_dim_);
        actions_.col(c) = Eigen::Map<const Eigen::VectorXi>(t.actions.data(), n_agents_);
        rewards_.col(c) = Eigen::Map<const Vector>(t.rewards.data(), n_agents_);
        done_[cursor_] = t.done ? 1 : 0;
        cursor_ = (cursor_ + 1) % capacity_;
        if (size_ < capacity_) ++size_;
    }

    Transition at(std::size_t i) const {
        if (i >= size_) throw UsageError("replay memory index out of range");
        const auto c = static_cast<Eigen::Index>(i);
        Transition t;
        t.state.assign(states_.col(c).data(), states_.col(c).data() + state_dim_);
        t.next_state.assign(next_states_.col(c).data(), next_states_.col(c).data() + state_dim_);
        t.actions.assign(actions_.col(c).data(), actions_.col(c).data() + n_agents_);
        t.rewards.assign(rewards_.col(c).data(), rewards_.col(c).data() + n_agents_);
        t.done = done_[i] != 0;
        return t;
    }

    // b distinct slot indices, uniformly at random.
    std::vector<std::size_t> sample_indices(std::size_t b, Rng &rng) const {
        if (b > size_) throw UsageError("cannot sample more distinct transitions than stored");
        std::uniform_int_distribution<std::size_t> pick(0, size_ - 1);
        std::vector<std::size_t> out;
        out.reserve(b);
        while (out.size() < b) {
            const std::size_t i = pick(rng);
            if (std::find(out.begin(), out.end(), i) == out.end()) out.push_back(i);
        }
        return out;
    }

    Batch gather(std::span<const std::size_t> indices) const {
        const auto b = static_cast<Eigen::Index>(indices.size());
        Batch batch{Matrix(state_dim_, b), Matrix(state_dim_, b), Eigen::MatrixXi(n_agents_, b),
                    Matrix(n_agents_, b), std::vector<std::uint8_t>(indices.size())};
        for (Eigen::Index s = 0; s < b; ++s) {
            const auto c = static_cast<Eigen::Index>(indices[static_cast<std::size_t>(s)]);
            if (static_cast<std::size_t>(c) >= size_) throw UsageError("gather index out of range");
            batch.states.col(s) = states_.col(c);
            batch.next_states.col(s) = next_states_.col(c);
            batch.actions.col(s) = actions_.col(c);
            batch.rewards.col(s) = rewards_.col(c);
            batch.done[static_cast<std::size_t>(s)] = done_[static_cast<std::size_t>(c)];
        }
        return batch;
    }

private:
    std::size_t capacity_ = 0;
    int state_dim_ = 0;
    int n_agents_ = 0;
    Matrix states_;
    Matrix next_states_;
    Eigen::MatrixXi actions_;
    Matrix rewards_;
    std::vector<std::uint8_t> done_;
    std::size_t cursor_ = 0;
    std::size_t size_ = 0;
};

inline Batch make_batch(std::span<const Transition> transitions) {
    if (transitions.empty()) throw UsageError("empty batch");
    const auto &first = transitions.front();
    ReplayMemory tmp(transitions.size(), static_cast<int>(first.state.size()),
                     static_cast<int>(first.actions.size()));
    std::vector<std::size_t> idx;
    for (const auto &t : transitions) {
        idx.push_back(tmp.size());
        tmp.push(t);
    }
    return tmp.gather(idx);
}

struct AgentBrain {
    nn::Mlp prediction;
    nn::Mlp target;
    nn::AdamState optimizer;
};

inline std::vector<int> q_network_dims(int input_dim, const std::vector<int> &hidden) {
    std::vector<int> dims{input_dim};
    dims.insert(dims.end(), hidden.begin(), hidden.end());
    dims.push_back(env::kActionCount);
    return dims;
}

inline std::vector<AgentBrain> make_brains(int n_agents, int input_dim, const std::vector<int> &hidden,
                                           double learning_rate, Rng &rng) {
    std::vector<AgentBrain> brains;
    for (int i = 0; i < n_agents; ++i) {
        AgentBrain b;
        b.prediction = nn::Mlp::uniform_fan_in(q_network_dims(input_dim, hidden), rng);
        b.target = b.prediction;
        b.optimizer = nn::AdamState(b.prediction, learning_rate);
        brains.push_back(std::move(b));
    }
    return brains;
}

inline int argmax(const Vector &q) {
    Eigen::Index best = 0;
    q.maxCoeff(&best); // first maximum on ties
    return static_cast<int>(best);
}

inline std::vector<int> greedy_actions(const std::vector<AgentBrain> &brains,
                                       std::span<const double> state) {
    const Vector s = Eigen::Map<const Vector>(state.data(), static_cast<Eigen::Index>(state.size()));
    std::vector<int> actions;
    actions.reserve(brains.size());
    for (const auto &b : brains)
        actions.push_back(argmax(nn::forward(b.prediction, s)));
    return actions;
}

// Independent epsilon-greedy choice per agent. Consumes one uniform draw per agent, plus one
// action draw for every exploring agent.
inline std::vector<int> select_actions(const std::vector<AgentBrain> &brains,
                                       std::span<const double> state, double epsilon, Rng &rng) {
    if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw UsageError("epsilon must lie in [0, 1]");
    const Vector s = Eigen::Map<const Vector>(state.data(), static_cast<Eigen::Index>(state.size()));
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    std::uniform_int_distribution<int> random_action(0, env::kActionCount - 1);
    std::vector<int> actions;
    actions.reserve(brains.size());
    for (const auto &b : brains) {
        if (coin(rng) < epsilon)
            actions.push_back(random_action(rng));
        else
            actions.push_back(argmax(nn::forward(b.prediction, s)));
    }
    return actions;
}

inline void check_batch(const std::vector<AgentBrain> &brains, const Matrix &states,
                        Eigen::Index samples) {
    if (brains.empty()) throw ShapeError("no agents");
    if (states.cols() != samples) throw ShapeError("batch sample counts disagree");
}

inline Vector q_total_prediction(const std::vector<AgentBrain> &brains, const Matrix &states,
                                 const Eigen::MatrixXi &actions) {
    check_batch(brains, states, actions.cols());
    if (actions.rows() != static_cast<Eigen::Index>(brains.size()))
        throw ShapeError("joint actions have the wrong number of agents");
    Vector total = Vector::Zero(states.cols());
    for (std::size_t i = 0; i < brains.size(); ++i) {
        const Matrix q = nn::forward_batch(brains[i].prediction, states);
        for (Eigen::Index s = 0; s < states.cols(); ++s)
            total(s) += q(actions(static_cast<Eigen::Index>(i), s), s);
    }
    return total;
}

inline Vector q_total_target(const std::vector<AgentBrain> &brains, const Matrix &next_states) {
    check_batch(brains, next_states, next_states.cols());
    Vector total = Vector::Zero(next_states.cols());
    for (const auto &b : brains)
        total += nn::forward_batch(b.target, next_states).colwise().maxCoeff().transpose();
    return total;
}

inline Vector team_rewards(const Batch &batch, const relational::RelationalNetwork &g) {
    Vector out(batch.size());
    for (Eigen::Index s = 0; s < batch.size(); ++s)
        out(s) = relational::team_reward(
            g, std::span<const double>(batch.rewards.col(s).data(), batch.rewards.rows()));
    return out;
}

inline Vector plain_team_rewards(const Batch &batch) {
    Vector out(batch.size());
    for (Eigen::Index s = 0; s < batch.size(); ++s)
        out(s) = relational::plain_team_reward(
            std::span<const double>(batch.rewards.col(s).data(), batch.rewards.rows()));
    return out;
}

struct TdLoss {
    double loss = 0.0;
    Vector td_errors; // target - prediction, per sample
    std::vector<nn::Gradients> gradients; // one per agent, prediction nets only
};

// Squared TD error of the summed Q-value against r_team + gamma * max Q_total(s'), with the
// bootstrap masked on terminal transitions. The target side is a constant.
inline TdLoss td_loss(const std::vector<AgentBrain> &brains, const Batch &batch,
                      const Vector &team_reward, double gamma,
                      LossReduction reduction = LossReduction::Mean) {
    if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("gamma must lie in [0, 1)");
    const Eigen::Index b = batch.size();
    if (b == 0) throw UsageError("td_loss on an empty batch");
    if (team_reward.size() != b) throw ShapeError("team reward count does not match batch");
    if (batch.actions.rows() != static_cast<Eigen::Index>(brains.size()))
        throw ShapeError("batch agent count does not match brains");

    std::vector<nn::ForwardCache> caches;
    caches.reserve(brains.size());
    Vector predicted = Vector::Zero(b);
    for (std::size_t i = 0; i < brains.size(); ++i) {
        caches.push_back(nn::forward_cached(brains[i].prediction, batch.states));
        const Matrix &q = caches.back().output();
        for (Eigen::Index s = 0; s < b; ++s)
            predicted(s) += q(batch.actions(static_cast<Eigen::Index>(i), s), s);
    }

    const Vector bootstrap = q_total_target(brains, batch.next_states);
    Vector target = team_reward;
    for (Eigen::Index s = 0; s < b; ++s)
        if (!batch.done[static_cast<std::size_t>(s)]) target(s) += gamma * bootstrap(s);

    TdLoss out;
    out.td_errors = target - predicted;
    const double scale = reduction == LossReduction::Mean ? 1.0 / static_cast<double>(b) : 1.0;
    out.loss = out.td_errors.squaredNorm() * scale;
    if (!std::isfinite(out.loss)) {
        throw NumericError("non-finite TD loss (max |prediction| = " +
                           std::to_string(predicted.cwiseAbs().maxCoeff()) +
                           ", max |target| = " + std::to_string(target.cwiseAbs().maxCoeff()) + ")");
    }

    // dLoss/dQ_total for each sample, routed to the taken action of every agent.
    const Vector dq = -2.0 * scale * out.td_errors;
    out.gradients.reserve(brains.size());
    for (std::size_t i = 0; i < brains.size(); ++i) {
        Matrix out_grad = Matrix::Zero(env::kActionCount, b);
        for (Eigen::Index s = 0; s < b; ++s)
            out_grad(batch.actions(static_cast<Eigen::Index>(i), s), s) = dq(s);
        out.gradients.push_back(nn::backward(brains[i].prediction, caches[i], out_grad));
    }
    return out;
}

inline TdLoss td_loss(const std::vector<AgentBrain> &brains, const Batch &batch,
                      const relational::RelationalNetwork &g, double gamma,
                      LossReduction reduction = LossReduction::Mean) {
    return td_loss(brains, batch, team_rewards(batch, g), gamma, reduction);
}

struct TrainerConfig {
    Algorithm algorithm = Algorithm::CaVdn;
    double gamma = 0.99;
    double learning_rate = 0.001;
    int batch_size = 32;
    int updates_per_episode = 10;
    int target_update_k = 200;
    std::size_t memory_capacity = 50000;
    std::vector<int> hidden{128, 128};
    LossReduction loss_reduction = LossReduction::Mean;
    double epsilon_start = 1.0;
    double epsilon_end = 0.05;
    int epsilon_decay_episodes = 2000;

    void validate() const {
        if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("gamma must lie in [0, 1)");
        if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
        if (batch_size <= 0) throw ConfigError("batch_size must be positive");
        if (updates_per_episode < 0) throw ConfigError("updates_per_episode must be >= 0");
        if (target_update_k <= 0) throw ConfigError("target_update_k must be positive");
        if (memory_capacity == 0) throw ConfigError("memory_capacity must be positive");
        for (int h : hidden)
            if (h <= 0) throw ConfigError("hidden layer widths must be positive");
        EpsilonSchedule(epsilon_start, epsilon_end, epsilon_decay_episodes);
    }
};

struct EpisodeRecord {
    long episode = 0;
    std::vector<double> rewards; // per-agent sums over the episode
    double team_reward = 0.0;    // mixed with the network in force during the episode
    double epsilon = 0.0;
    double mean_loss = std::numeric_limits<double>::quiet_NaN(); // NaN when no update ran
    int steps = 0;
    bool target_synced = false;
};

// One training run: environment, per-agent brains, replay memory and exploration schedule.
class Trainer {
public:
    Trainer(TrainerConfig config, env::Layout layout, env::EnvOptions env_options,
            std::uint64_t seed, relational::RelationalNetwork network,
            std::optional<malfunction::MalfunctionSpec> malfunction = std::nullopt)
        : config_(std::move(config)), layout_(std::move(layout)), env_options_(env_options),
          seed_(seed), rng_(seed), network_(std::move(network)), malfunction_(malfunction) {
        config_.validate();
        const auto world = env::GridWorld::reset(layout_, env_options_, seed_);
        n_agents_ = world.agent_count();
        state_dim_ = world.encoding_size();
        if (network_.size() != n_agents_)
            throw ConfigError("relational network size does not match the number of agents");
        if (malfunction_) malfunction_->validate(n_agents_);
        schedule_ = EpsilonSchedule(config_.epsilon_start, config_.epsilon_end,
                                    config_.epsilon_decay_episodes);
        brains_ = make_brains(n_agents_, state_dim_, config_.hidden, config_.learning_rate, rng_);
        memory_ = ReplayMemory(config_.memory_capacity, state_dim_, n_agents_);
    }

    double mix(std::span<const double> rewards) const {
        return config_.algorithm == Algorithm::Vdn ? relational::plain_team_reward(rewards)
                                                   : relational::team_reward(network_, rewards);
    }

    Vector mix(const Batch &batch) const {
        return config_.algorithm == Algorithm::Vdn ? plain_team_rewards(batch)
                                                   : team_rewards(batch, network_);
    }

    // Plays one episode with epsilon-greedy actions, stores every transition, then runs the
    // update iterations and, on every k-th episode, syncs the target networks.
    EpisodeRecord train_episode() {
        EpisodeRecord rec;
        rec.episode = episode_;
        rec.epsilon = schedule_.value(episode_);
        rec.rewards.assign(static_cast<std::size_t>(n_agents_), 0.0);

        auto world = env::GridWorld::reset(layout_, env_options_, seed_);
        Transition t;
        t.state = world.encode_state();
        std::vector<env::Action> joint(static_cast<std::size_t>(n_agents_));
        while (!world.is_terminal()) {
            const auto chosen = select_actions(brains_, t.state, rec.epsilon, rng_);
            t.actions.resize(chosen.size());
            for (int i = 0; i < n_agents_; ++i) {
                joint[i] = malfunction::apply_malfunction(malfunction_, episode_, i,
                                                          env::action_from_index(chosen[i]));
                t.actions[i] = static_cast<int>(joint[i]);
            }
            auto outcome = world.step(joint);
            t.rewards = outcome.rewards;
            t.next_state = std::move(outcome.next_state);
            t.done = outcome.done;
            memory_.push(t);
            for (int i = 0; i < n_agents_; ++i)
                rec.rewards[i] += t.rewards[i];
            t.state = t.next_state;
            ++rec.steps;
        }
        rec.team_reward = mix(rec.rewards);

        if (memory_.size() >= static_cast<std::size_t>(config_.batch_size) &&
            config_.updates_per_episode > 0) {
            double loss_sum = 0.0;
            for (int u = 0; u < config_.updates_per_episode; ++u)
                loss_sum += update_once();
            rec.mean_loss = loss_sum / config_.updates_per_episode;
        }

        if ((episode_ + 1) % config_.target_update_k == 0) {
            sync_targets();
            rec.target_synced = true;
        }
        ++episode_;
        return rec;
    }

    // One sampled batch, one Adam step per prediction network. Returns the batch loss.
    double update_once() {
        const auto idx = memory_.sample_indices(static_cast<std::size_t>(config_.batch_size), rng_);
        const Batch batch = memory_.gather(idx);
        const TdLoss l = td_loss(brains_, batch, mix(batch), config_.gamma, config_.loss_reduction);
        for (std::size_t i = 0; i < brains_.size(); ++i)
            nn::adam_step(brains_[i].prediction, l.gradients[i], brains_[i].optimizer);
        return l.loss;
    }

    void sync_targets() {
        for (auto &b : brains_)
            nn::copy_parameters(b.prediction, b.target);
    }

    // Greedy rollout of the current prediction networks from the initial layout. Uses the
    // malfunction status of the most recently trained episode and touches no training state.
    std::vector<double> evaluate_greedy() const {
        const long status_episode = episode_ > 0 ? episode_ - 1 : 0;
        auto world = env::GridWorld::reset(layout_, env_options_, seed_);
        std::vector<double> totals(static_cast<std::size_t>(n_agents_), 0.0);
        std::vector<double> state = world.encode_state();
        std::vector<env::Action> joint(static_cast<std::size_t>(n_agents_));
        while (!world.is_terminal()) {
            const auto chosen = greedy_actions(brains_, state);
            for (int i = 0; i < n_agents_; ++i)
                joint[i] = malfunction::apply_malfunction(malfunction_, status_episode, i,
                                                          env::action_from_index(chosen[i]));
            auto outcome = world.step(joint);
            for (int i = 0; i < n_agents_; ++i)
                totals[i] += outcome.rewards[i];
            state = std::move(outcome.next_state);
        }
        return totals;
    }

    long episode() const { return episode_; }
    int agent_count() const { return n_agents_; }
    int state_dim() const { return state_dim_; }
    const TrainerConfig &config() const { return config_; }
    const std::vector<AgentBrain> &brains() const { return brains_; }
    std::vector<AgentBrain> &brains() { return brains_; }
    const ReplayMemory &memory() const { return memory_; }
    const EpsilonSchedule &schedule() const { return schedule_; }
    void set_schedule(const EpsilonSchedule &s) { schedule_ = s; }
    const relational::RelationalNetwork &network() const { return network_; }
    void set_network(relational::RelationalNetwork g) {
        if (g.size() != n_agents_) throw ConfigError("relational network size mismatch");
        network_ = std::move(g);
    }
    const std::optional<malfunction::MalfunctionSpec> &malfunction() const { return malfunction_; }
    const env::Layout &layout() const { return layout_; }
    const env::EnvOptions &env_options() const { return env_options_; }

private:
    TrainerConfig config_;
    env::Layout layout_;
    env::EnvOptions env_options_;
    std::uint64_t seed_;
    Rng rng_;
    relational::RelationalNetwork network_;
    std::optional<malfunction::MalfunctionSpec> malfunction_;
    int n_agents_ = 0;
    int state_dim_ = 0;
    EpsilonSchedule schedule_;
    std::vector<AgentBrain> brains_;
    ReplayMemory memory_;
    long episode_ = 0;
};

} // namespace cavdn::learn
