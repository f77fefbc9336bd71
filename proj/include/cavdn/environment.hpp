#pragma once

// Cooperative resource-collection grid world.
//
// Agents move on a grid, consume each resource once (+10 to the consumer) and pay 1 per
// unconsumed resource per step unless they stand on a resource cell. A moving agent that
// walks into an idle agent pushes it one cell further while staying in place itself.

#include <algorithm>
#include <array>
#include <compare>
#include <cstdint>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "cavdn/errors.hpp"

namespace cavdn::env {

enum class Action : int { Up = 0, Down = 1, Left = 2, Right = 3, Idle = 4 };

inline constexpr int kActionCount = 5;

inline constexpr std::string_view action_name(Action a) {
    constexpr std::array<std::string_view, kActionCount> names{"up", "down", "left", "right",
                                                                "idle"};
    return names[static_cast<int>(a)];
}

inline Action action_from_index(int i) {
    if (i < 0 || i >= kActionCount) throw UsageError("action index out of range");
    return static_cast<Action>(i);
}

struct Cell {
    int row = 0;
    int col = 0;

    auto operator<=>(const Cell &) const = default;
};

inline std::ostream &operator<<(std::ostream &os, Cell c) {
    return os << '(' << c.row << ',' << c.col << ')';
}

inline constexpr Cell offset(Action a) {
    switch (a) {
    case Action::Up: return {-1, 0};
    case Action::Down: return {1, 0};
    case Action::Left: return {0, -1};
    case Action::Right: return {0, 1};
    case Action::Idle: break;
    }
    return {0, 0};
}

inline constexpr Cell shifted(Cell c, Action a) {
    const Cell d = offset(a);
    return {c.row + d.row, c.col + d.col};
}

struct Layout {
    int height = 4;
    int width = 4;
    std::vector<Cell> agents;
    std::vector<Cell> resources;

    bool contains(Cell c) const { return c.row >= 0 && c.row < height && c.col >= 0 && c.col < width; }
    int cell_count() const { return height * width; }
    int cell_index(Cell c) const { return c.row * width + c.col; }

    // Throws ConfigError on out-of-bounds or overlapping placements.
    void validate() const {
        if (height <= 0 || width <= 0) throw ConfigError("layout: grid dimensions must be positive");
        if (agents.empty()) throw ConfigError("layout: at least one agent is required");
        if (resources.empty()) throw ConfigError("layout: at least one resource is required");
        std::vector<Cell> agent_cells = agents;
        std::vector<Cell> resource_cells = resources;
        for (const auto *cells : {&agent_cells, &resource_cells}) {
            for (Cell c : *cells) {
                if (!contains(c)) {
                    std::ostringstream os;
                    os << "layout: cell " << c << " is outside the " << height << "x" << width
                       << " grid";
                    throw ConfigError(os.str());
                }
            }
        }
        auto has_dup = [](std::vector<Cell> v) {
            std::sort(v.begin(), v.end());
            return std::adjacent_find(v.begin(), v.end()) != v.end();
        };
        if (has_dup(agent_cells)) throw ConfigError("layout: two agents share a cell");
        if (has_dup(resource_cells)) throw ConfigError("layout: two resources share a cell");
        for (Cell a : agent_cells)
            if (std::find(resource_cells.begin(), resource_cells.end(), a) != resource_cells.end())
                throw ConfigError("layout: an agent starts on a resource cell");
    }
};

// Four agents around the centre of a 4x4 grid, one resource in each corner.
// Agent order is blue, red, orange, green; each starts two moves from its nearest
// corner, and every start cell can be pushed along a row or column.
inline Layout default_layout() {
    Layout l;
    l.agents = {{1, 1}, {1, 2}, {2, 1}, {2, 2}};
    l.resources = {{0, 0}, {0, 3}, {3, 0}, {3, 3}};
    return l;
}

struct EnvOptions {
    int max_steps = 20;
    // Consumed resource cells remain penalty-free spots.
    bool consumed_cells_safe = true;
    double consume_reward = 10.0;
    double penalty_per_resource = 1.0;
    // Append step_count / max_steps to the state encoding. Episodes are cut off at
    // max_steps, so without it the same cell configuration has step-dependent value.
    bool encode_time = true;
};

struct StepEvent {
    enum class Kind { Consumed, Pushed, Blocked };
    Kind kind;
    int agent;      // consumer, pusher or blocked agent
    int other = -1; // pushed agent for Kind::Pushed
    Cell cell;      // consumed cell, pushed agent's destination, or blocked target

    bool operator==(const StepEvent &) const = default;
};

inline std::ostream &operator<<(std::ostream &os, const StepEvent &e) {
    switch (e.kind) {
    case StepEvent::Kind::Consumed: return os << "consume agent=" << e.agent << " cell=" << e.cell;
    case StepEvent::Kind::Pushed:
        return os << "push agent=" << e.agent << " pushed=" << e.other << " to=" << e.cell;
    case StepEvent::Kind::Blocked: return os << "blocked agent=" << e.agent << " target=" << e.cell;
    }
    return os;
}

struct StepOutcome {
    std::vector<double> rewards;
    std::vector<double> next_state;
    bool done = false;
    std::vector<StepEvent> events;
};

class GridWorld {
public:
    static GridWorld reset(const Layout &layout, const EnvOptions &options, std::uint64_t seed = 0) {
        layout.validate();
        if (options.max_steps <= 0) throw ConfigError("max_steps must be positive");
        GridWorld w;
        w.layout_ = layout;
        w.options_ = options;
        w.agents_ = layout.agents;
        w.consumed_.assign(layout.resources.size(), false);
        w.step_count_ = 0;
        w.seed_ = seed;
        return w;
    }

    int agent_count() const { return static_cast<int>(agents_.size()); }
    int resource_count() const { return static_cast<int>(layout_.resources.size()); }
    const Layout &layout() const { return layout_; }
    const EnvOptions &options() const { return options_; }
    const std::vector<Cell> &agent_positions() const { return agents_; }
    const std::vector<Cell> &resource_positions() const { return layout_.resources; }
    const std::vector<bool> &resource_consumed() const { return consumed_; }
    int step_count() const { return step_count_; }
    int max_steps() const { return options_.max_steps; }
    std::uint64_t seed() const { return seed_; }

    int unconsumed_count() const {
        return static_cast<int>(std::count(consumed_.begin(), consumed_.end(), false));
    }

    bool is_terminal() const { return unconsumed_count() == 0 || step_count_ >= options_.max_steps; }

    int encoding_size() const {
        return agent_count() * layout_.cell_count() + resource_count() + (options_.encode_time ? 1 : 0);
    }

    // One-hot cell per agent, one consumption bit per resource, then the elapsed-step
    // fraction when encode_time is set.
    void encode_state(std::span<double> out) const {
        if (static_cast<int>(out.size()) != encoding_size())
            throw ShapeError("state encoding buffer has the wrong size");
        std::fill(out.begin(), out.end(), 0.0);
        const int cells = layout_.cell_count();
        for (int i = 0; i < agent_count(); ++i)
            out[static_cast<std::size_t>(i * cells + layout_.cell_index(agents_[i]))] = 1.0;
        const int base = agent_count() * cells;
        for (int r = 0; r < resource_count(); ++r)
            out[static_cast<std::size_t>(base + r)] = consumed_[r] ? 1.0 : 0.0;
        if (options_.encode_time)
            out.back() = static_cast<double>(step_count_) / options_.max_steps;
    }

    std::vector<double> encode_state() const {
        std::vector<double> v(static_cast<std::size_t>(encoding_size()));
        encode_state(v);
        return v;
    }

    StepOutcome step(std::span<const Action> joint_action) {
        if (is_terminal()) throw UsageError("step called on a finished episode");
        const int n = agent_count();
        if (static_cast<int>(joint_action.size()) != n)
            throw UsageError("joint action has " + std::to_string(joint_action.size()) +
                             " entries, expected " + std::to_string(n));

        StepOutcome out;
        out.rewards.assign(static_cast<std::size_t>(n), 0.0);
        resolve_movement(joint_action, out.events);

        for (int i = 0; i < n; ++i) {
            const int r = resource_at(agents_[i]);
            if (r >= 0 && !consumed_[r]) {
                consumed_[r] = true;
                out.rewards[i] += options_.consume_reward;
                out.events.push_back({StepEvent::Kind::Consumed, i, -1, agents_[i]});
            }
        }

        const int remaining = unconsumed_count();
        for (int i = 0; i < n; ++i) {
            if (!is_safe(agents_[i]))
                out.rewards[i] -= options_.penalty_per_resource * remaining;
        }

        ++step_count_;
        out.done = is_terminal();
        out.next_state = encode_state();
        return out;
    }

    // Index of the resource placed on c, or -1.
    int resource_at(Cell c) const {
        const auto &res = layout_.resources;
        auto it = std::find(res.begin(), res.end(), c);
        return it == res.end() ? -1 : static_cast<int>(it - res.begin());
    }

    int agent_at(Cell c) const {
        auto it = std::find(agents_.begin(), agents_.end(), c);
        return it == agents_.end() ? -1 : static_cast<int>(it - agents_.begin());
    }

private:
    bool is_safe(Cell c) const {
        const int r = resource_at(c);
        if (r < 0) return false;
        return options_.consumed_cells_safe || !consumed_[r];
    }

    // Pushes are classified and applied first, then ordinary moves. A move is blocked
    // when its target is off-grid, still occupied after pushes, or contested.
    void resolve_movement(std::span<const Action> joint, std::vector<StepEvent> &events) {
        const int n = agent_count();
        std::vector<Cell> start = agents_;
        std::vector<int> push_target(static_cast<std::size_t>(n), -1);
        std::vector<Cell> push_dest(static_cast<std::size_t>(n));
        std::vector<bool> handled(static_cast<std::size_t>(n), false);

        for (int i = 0; i < n; ++i) {
            if (joint[i] == Action::Idle) {
                handled[i] = true;
                continue;
            }
            const Cell target = shifted(start[i], joint[i]);
            const int occupant = agent_at(target);
            if (occupant >= 0 && joint[occupant] == Action::Idle) {
                push_target[i] = occupant;
                push_dest[i] = shifted(target, joint[i]);
                handled[i] = true;
            }
        }

        // A push succeeds when its destination is on the grid, empty at the start of the
        // step, and no other push names the same victim or destination.
        for (int i = 0; i < n; ++i) {
            if (push_target[i] < 0) continue;
            bool ok = layout_.contains(push_dest[i]) && agent_at(push_dest[i]) < 0;
            for (int j = 0; ok && j < n; ++j) {
                if (j == i || push_target[j] < 0) continue;
                if (push_target[j] == push_target[i] || push_dest[j] == push_dest[i]) ok = false;
            }
            if (ok) {
                agents_[push_target[i]] = push_dest[i];
                events.push_back({StepEvent::Kind::Pushed, i, push_target[i], push_dest[i]});
            } else {
                events.push_back({StepEvent::Kind::Blocked, i, -1, shifted(start[i], joint[i])});
            }
        }

        std::vector<Cell> targets(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i)
            if (!handled[i]) targets[i] = shifted(start[i], joint[i]);

        std::vector<Cell> after_push = agents_;
        for (int i = 0; i < n; ++i) {
            if (handled[i]) continue;
            const Cell t = targets[i];
            bool ok = layout_.contains(t) &&
                      std::find(after_push.begin(), after_push.end(), t) == after_push.end();
            for (int j = 0; ok && j < n; ++j)
                if (j != i && !handled[j] && targets[j] == t) ok = false;
            if (ok)
                agents_[i] = t;
            else
                events.push_back({StepEvent::Kind::Blocked, i, -1, t});
        }
    }

    Layout layout_;
    EnvOptions options_;
    std::vector<Cell> agents_;
    std::vector<bool> consumed_;
    int step_count_ = 0;
    std::uint64_t seed_ = 0;
};

inline bool is_terminal(const GridWorld &w) { return w.is_terminal(); }

inline std::vector<double> encode_state(const GridWorld &w) { return w.encode_state(); }

} // namespace cavdn::env
