#pragma once

// Experiment configuration: JSON file <-> ExperimentConfig, with defaults for every omitted
// field and validation errors that name the offending key.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cavdn/environment.hpp"
#include "cavdn/errors.hpp"
#include "cavdn/learner.hpp"
#include "cavdn/malfunction.hpp"
#include "cavdn/relational.hpp"

namespace cavdn::experiment {

using json = nlohmann::json;

// How a relational network is built: a named constructor or an explicit matrix.
struct NetworkSpec {
    enum class Kind { SelfInterested, Assistance, Matrix };
    Kind kind = Kind::SelfInterested;
    double self_weight = 1.0;
    double assist_weight = 1.0;
    bool keep_self_edge = true;
    std::vector<std::vector<double>> matrix;

    relational::RelationalNetwork build(int n, const std::set<int> &malfunctioning = {}) const {
        switch (kind) {
        case Kind::SelfInterested: return relational::self_interested_network(n, self_weight);
        case Kind::Assistance:
            return relational::assistance_network(n, malfunctioning, assist_weight, keep_self_edge,
                                                  self_weight);
        case Kind::Matrix: {
            auto g = relational::RelationalNetwork::from_matrix(matrix);
            if (g.size() != n) throw ConfigError("relational matrix must be " + std::to_string(n) + "x" + std::to_string(n));
            return g;
        }
        }
        return relational::self_interested_network(n);
    }
};

struct ExperimentConfig {
    learn::TrainerConfig trainer;
    int n_agents = 4;
    env::Layout layout = env::default_layout();
    env::EnvOptions env;
    int eval_interval = 50;
    long total_episodes = 25000;
    std::optional<malfunction::MalfunctionSpec> malfunction = malfunction::MalfunctionSpec{};
    NetworkSpec pre_network{};
    NetworkSpec post_network{NetworkSpec::Kind::Assistance};
    bool trigger_enabled = true;
    malfunction::TriggerConfig trigger;
    std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
    std::string output_dir = "runs";
    bool checkpoints = true;

    learn::Algorithm algorithm() const { return trainer.algorithm; }

    void validate() const {
        trainer.validate();
        layout.validate();
        if (n_agents <= 0) throw ConfigError("n_agents must be positive");
        if (static_cast<int>(layout.agents.size()) != n_agents)
            throw ConfigError("n_agents (" + std::to_string(n_agents) +
                              ") does not match environment.agents (" +
                              std::to_string(layout.agents.size()) + ")");
        if (env.max_steps <= 0) throw ConfigError("environment.max_steps must be positive");
        if (eval_interval <= 0) throw ConfigError("eval_interval must be positive");
        if (total_episodes <= 0) throw ConfigError("total_episodes must be positive");
        if (malfunction) malfunction->validate(n_agents);
        trigger.validate();
        pre_network.build(n_agents);
        post_network.build(n_agents, malfunction ? std::set<int>{malfunction->agent_index} : std::set<int>{});
        if (seeds.empty()) throw ConfigError("seeds must not be empty");
        std::set<std::uint64_t> unique(seeds.begin(), seeds.end());
        if (unique.size() != seeds.size()) throw ConfigError("seeds must be distinct");
    }

    malfunction::AdaptationConfig adaptation() const {
        malfunction::AdaptationConfig a;
        a.swap_network = trainer.algorithm == learn::Algorithm::CaVdn;
        a.assist_weight = post_network.assist_weight;
        a.keep_self_edge = post_network.keep_self_edge;
        if (post_network.kind == NetworkSpec::Kind::Matrix)
            a.explicit_network = post_network.build(n_agents);
        else if (post_network.kind == NetworkSpec::Kind::SelfInterested)
            a.explicit_network = relational::self_interested_network(n_agents, post_network.self_weight);
        return a;
    }
};

namespace detail {

// Walks a JSON object, hands out typed fields and rejects keys nobody asked for.
class Section {
public:
    Section(const json &j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(name("") + " must be an object");
    }

    template <class T>
    void read(const char *key, T &out) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const json::exception &) {
            throw ConfigError(name(key) + " has the wrong type");
        }
    }

    bool has(const char *key) const { return j_.contains(key); }

    const json &child(const char *key) {
        seen_.insert(key);
        return j_.at(key);
    }

    std::string name(const std::string &key) const {
        if (path_.empty()) return key;
        return key.empty() ? path_ : path_ + "." + key;
    }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!seen_.contains(it.key())) throw ConfigError("unknown config key \"" + name(it.key()) + "\"");
    }

private:
    const json &j_;
    std::string path_;
    std::set<std::string> seen_;
};

inline std::vector<env::Cell> read_cells(const json &j, const std::string &field) {
    std::vector<env::Cell> cells;
    if (!j.is_array()) throw ConfigError(field + " must be a list of [row, col] pairs");
    for (const auto &c : j) {
        if (!c.is_array() || c.size() != 2 || !c[0].is_number_integer() || !c[1].is_number_integer())
            throw ConfigError(field + " must be a list of [row, col] integer pairs");
        cells.push_back({c[0].get<int>(), c[1].get<int>()});
    }
    return cells;
}

inline json write_cells(const std::vector<env::Cell> &cells) {
    json out = json::array();
    for (auto c : cells)
        out.push_back({c.row, c.col});
    return out;
}

inline NetworkSpec read_network(const json &j, const std::string &path) {
    Section s(j, path);
    NetworkSpec spec;
    std::string type = "self_interested";
    s.read("type", type);
    s.read("self_weight", spec.self_weight);
    s.read("assist_weight", spec.assist_weight);
    s.read("keep_self_edge", spec.keep_self_edge);
    if (type == "self_interested") {
        spec.kind = NetworkSpec::Kind::SelfInterested;
    } else if (type == "assistance") {
        spec.kind = NetworkSpec::Kind::Assistance;
    } else if (type == "matrix") {
        spec.kind = NetworkSpec::Kind::Matrix;
        if (!s.has("matrix")) throw ConfigError(s.name("matrix") + " is required for type \"matrix\"");
        s.read("matrix", spec.matrix);
    } else {
        throw ConfigError(s.name("type") + " must be self_interested, assistance or matrix");
    }
    if (spec.kind != NetworkSpec::Kind::Matrix && s.has("matrix"))
        throw ConfigError(s.name("matrix") + " is only valid with type \"matrix\"");
    for (const char *w : {"self_weight", "assist_weight"}) {
        const double v = std::string(w) == "self_weight" ? spec.self_weight : spec.assist_weight;
        if (!(v >= 0.0 && v <= 1.0)) throw ConfigError(s.name(w) + " must lie in [0, 1]");
    }
    s.finish();
    return spec;
}

inline json write_network(const NetworkSpec &n) {
    json j;
    switch (n.kind) {
    case NetworkSpec::Kind::SelfInterested: j["type"] = "self_interested"; break;
    case NetworkSpec::Kind::Assistance: j["type"] = "assistance"; break;
    case NetworkSpec::Kind::Matrix:
        j["type"] = "matrix";
        j["matrix"] = n.matrix;
        break;
    }
    j["self_weight"] = n.self_weight;
    j["assist_weight"] = n.assist_weight;
    j["keep_self_edge"] = n.keep_self_edge;
    return j;
}

template <class T, class Check>
void require(const T &v, Check ok, const std::string &field, const char *rule) {
    if (!ok(v)) {
        std::ostringstream os;
        os << field << " = " << v << " is invalid: " << rule;
        throw ConfigError(os.str());
    }
}

} // namespace detail

inline ExperimentConfig parse_config(const json &root) {
    using detail::require;
    ExperimentConfig cfg;
    detail::Section top(root, "");

    std::string algorithm = learn::algorithm_name(cfg.trainer.algorithm);
    top.read("algorithm", algorithm);
    cfg.trainer.algorithm = learn::parse_algorithm(algorithm);
    top.read("n_agents", cfg.n_agents);
    top.read("eval_interval", cfg.eval_interval);
    top.read("total_episodes", cfg.total_episodes);
    top.read("seeds", cfg.seeds);
    top.read("output_dir", cfg.output_dir);
    top.read("checkpoints", cfg.checkpoints);

    if (top.has("environment")) {
        detail::Section s(top.child("environment"), "environment");
        s.read("height", cfg.layout.height);
        s.read("width", cfg.layout.width);
        s.read("max_steps", cfg.env.max_steps);
        s.read("consumed_cells_safe", cfg.env.consumed_cells_safe);
        if (s.has("agents")) cfg.layout.agents = detail::read_cells(s.child("agents"), "environment.agents");
        if (s.has("resources"))
            cfg.layout.resources = detail::read_cells(s.child("resources"), "environment.resources");
        s.finish();
    } else {
        cfg.layout = env::default_layout();
    }

    if (top.has("learner")) {
        detail::Section s(top.child("learner"), "learner");
        auto &t = cfg.trainer;
        s.read("gamma", t.gamma);
        require(t.gamma, [](double g) { return g >= 0.0 && g < 1.0; }, "learner.gamma", "must lie in [0, 1)");
        s.read("learning_rate", t.learning_rate);
        require(t.learning_rate, [](double v) { return v > 0.0; }, "learner.learning_rate", "must be positive");
        s.read("batch_size", t.batch_size);
        require(t.batch_size, [](int v) { return v > 0; }, "learner.batch_size", "must be positive");
        s.read("updates_per_episode", t.updates_per_episode);
        require(t.updates_per_episode, [](int v) { return v >= 0; }, "learner.updates_per_episode", "must be >= 0");
        s.read("target_update_k", t.target_update_k);
        require(t.target_update_k, [](int v) { return v > 0; }, "learner.target_update_k", "must be positive");
        s.read("memory_capacity", t.memory_capacity);
        require(t.memory_capacity, [](std::size_t v) { return v > 0; }, "learner.memory_capacity", "must be positive");
        s.read("hidden_layers", t.hidden);
        std::string reduction = t.loss_reduction == learn::LossReduction::Mean ? "mean" : "sum";
        s.read("loss_reduction", reduction);
        if (reduction == "mean")
            t.loss_reduction = learn::LossReduction::Mean;
        else if (reduction == "sum")
            t.loss_reduction = learn::LossReduction::Sum;
        else
            throw ConfigError("learner.loss_reduction must be \"mean\" or \"sum\"");
        s.finish();
    }

    if (top.has("epsilon")) {
        detail::Section s(top.child("epsilon"), "epsilon");
        s.read("start", cfg.trainer.epsilon_start);
        s.read("end", cfg.trainer.epsilon_end);
        s.read("decay_episodes", cfg.trainer.epsilon_decay_episodes);
        s.finish();
        try {
            learn::EpsilonSchedule(cfg.trainer.epsilon_start, cfg.trainer.epsilon_end,
                                   cfg.trainer.epsilon_decay_episodes);
        } catch (const ConfigError &e) {
            throw ConfigError(std::string("epsilon: ") + e.what());
        }
    }

    if (top.has("malfunction")) {
        detail::Section s(top.child("malfunction"), "malfunction");
        bool enabled = true;
        malfunction::MalfunctionSpec spec;
        std::string kind = "immobilized";
        s.read("enabled", enabled);
        s.read("agent", spec.agent_index);
        s.read("onset_episode", spec.onset_episode);
        s.read("kind", kind);
        if (kind != "immobilized") throw ConfigError("malfunction.kind must be \"immobilized\"");
        s.finish();
        cfg.malfunction = enabled ? std::optional(spec) : std::nullopt;
    }

    if (top.has("relational")) {
        detail::Section s(top.child("relational"), "relational");
        if (s.has("pre")) cfg.pre_network = detail::read_network(s.child("pre"), "relational.pre");
        if (s.has("post")) cfg.post_network = detail::read_network(s.child("post"), "relational.post");
        s.finish();
    }

    if (top.has("trigger")) {
        detail::Section s(top.child("trigger"), "trigger");
        s.read("enabled", cfg.trigger_enabled);
        s.read("window", cfg.trigger.window);
        s.read("baseline_evals", cfg.trigger.baseline_evals);
        s.read("drop_threshold", cfg.trigger.drop_threshold);
        s.read("arm_episode", cfg.trigger.arm_episode);
        s.finish();
    }
    top.finish();

    try {
        cfg.validate();
    } catch (const ConfigError &) {
        throw;
    } catch (const std::exception &e) {
        throw ConfigError(e.what());
    }
    return cfg;
}

inline json to_json(const ExperimentConfig &cfg) {
    const auto &t = cfg.trainer;
    json j;
    j["algorithm"] = learn::algorithm_name(t.algorithm);
    j["n_agents"] = cfg.n_agents;
    j["environment"] = {{"height", cfg.layout.height},
                        {"width", cfg.layout.width},
                        {"max_steps", cfg.env.max_steps},
                        {"consumed_cells_safe", cfg.env.consumed_cells_safe},
                        {"agents", detail::write_cells(cfg.layout.agents)},
                        {"resources", detail::write_cells(cfg.layout.resources)}};
    j["learner"] = {{"gamma", t.gamma},
                    {"learning_rate", t.learning_rate},
                    {"batch_size", t.batch_size},
                    {"updates_per_episode", t.updates_per_episode},
                    {"target_update_k", t.target_update_k},
                    {"memory_capacity", t.memory_capacity},
                    {"hidden_layers", t.hidden},
                    {"loss_reduction", t.loss_reduction == learn::LossReduction::Mean ? "mean" : "sum"}};
    j["epsilon"] = {{"start", t.epsilon_start},
                    {"end", t.epsilon_end},
                    {"decay_episodes", t.epsilon_decay_episodes}};
    j["eval_interval"] = cfg.eval_interval;
    j["total_episodes"] = cfg.total_episodes;
    if (cfg.malfunction) {
        j["malfunction"] = {{"enabled", true},
                            {"agent", cfg.malfunction->agent_index},
                            {"onset_episode", cfg.malfunction->onset_episode},
                            {"kind", "immobilized"}};
    } else {
        j["malfunction"] = {{"enabled", false}};
    }
    j["relational"] = {{"pre", detail::write_network(cfg.pre_network)},
                       {"post", detail::write_network(cfg.post_network)}};
    j["trigger"] = {{"enabled", cfg.trigger_enabled},
                    {"window", cfg.trigger.window},
                    {"baseline_evals", cfg.trigger.baseline_evals},
                    {"drop_threshold", cfg.trigger.drop_threshold},
                    {"arm_episode", cfg.trigger.arm_episode}};
    j["seeds"] = cfg.seeds;
    j["output_dir"] = cfg.output_dir;
    j["checkpoints"] = cfg.checkpoints;
    return j;
}

inline ExperimentConfig parse_config_text(const std::string &text) {
    if (text.find_first_not_of(" \t\r\n") == std::string::npos) return parse_config(json::object());
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error &e) {
        throw ConfigError(std::string("config parse error: ") + e.what());
    }
    return parse_config(j);
}

inline ExperimentConfig load_config(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str());
}

} // namespace cavdn::experiment
