#pragma once

// Directed, weighted relational network between agents and the team reward it induces.
//
// Entry (i, j) is the importance agent i places on agent j's reward. The team reward sums,
// over every agent i and every edge i -> j, the weighted reward w_ij * r_j. With unit
// self-loops only, it reduces to the plain sum of individual rewards.

#include <cmath>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "cavdn/errors.hpp"

namespace cavdn::relational {

class RelationalNetwork {
public:
    RelationalNetwork() = default;

    // All-zero (edgeless) network over n agents.
    explicit RelationalNetwork(int n) : n_(n), weights_(static_cast<std::size_t>(n) * n, 0.0) {
        if (n < 1) throw ConfigError("relational network needs at least one agent");
    }

    static RelationalNetwork from_matrix(const std::vector<std::vector<double>> &rows) {
        const int n = static_cast<int>(rows.size());
        RelationalNetwork g(n);
        for (int i = 0; i < n; ++i) {
            if (static_cast<int>(rows[i].size()) != n)
                throw ConfigError("relational network matrix must be square");
            for (int j = 0; j < n; ++j)
                g.set_weight(i, j, rows[i][j]);
        }
        return g;
    }

    int size() const { return n_; }

    double weight(int i, int j) const { return weights_[index(i, j)]; }

    void set_weight(int i, int j, double w) {
        if (!(w >= 0.0 && w <= 1.0)) {
            std::ostringstream os;
            os << "relational weight w[" << i << "][" << j << "] = " << w << " is outside [0, 1]";
            throw ConfigError(os.str());
        }
        weights_[index(i, j)] = w;
    }

    bool has_edge(int i, int j) const { return weight(i, j) != 0.0; }

    std::vector<std::vector<double>> matrix() const {
        std::vector<std::vector<double>> m(static_cast<std::size_t>(n_));
        for (int i = 0; i < n_; ++i)
            for (int j = 0; j < n_; ++j)
                m[i].push_back(weight(i, j));
        return m;
    }

    bool operator==(const RelationalNetwork &) const = default;

private:
    std::size_t index(int i, int j) const {
        if (i < 0 || j < 0 || i >= n_ || j >= n_)
            throw ShapeError("relational network index out of range");
        return static_cast<std::size_t>(i) * n_ + j;
    }

    int n_ = 0;
    std::vector<double> weights_;
};

inline double team_reward(const RelationalNetwork &g, std::span<const double> rewards) {
    const int n = g.size();
    if (static_cast<int>(rewards.size()) != n)
        throw ShapeError("team_reward: got " + std::to_string(rewards.size()) +
                         " rewards for a network of " + std::to_string(n) + " agents");
    double total = 0.0;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            if (g.has_edge(i, j)) total += g.weight(i, j) * rewards[j];
    return total;
}

// Equal-weight team reward used by plain VDN. Accumulates in the same order as
// team_reward on a unit-diagonal network, so both agree to the last bit.
inline double plain_team_reward(std::span<const double> rewards) {
    double total = 0.0;
    for (double r : rewards)
        total += r;
    return total;
}

inline RelationalNetwork self_interested_network(int n, double self_weight = 1.0) {
    RelationalNetwork g(n);
    for (int i = 0; i < n; ++i)
        g.set_weight(i, i, self_weight);
    return g;
}

// Self-interested network plus an edge of assist_weight from every healthy agent to every
// malfunctioning one. Malfunctioning agents keep their self-loop unless keep_self_edge is off.
inline RelationalNetwork assistance_network(int n, const std::set<int> &malfunctioning,
                                            double assist_weight, bool keep_self_edge = true,
                                            double self_weight = 1.0) {
    if (!(assist_weight >= 0.0 && assist_weight <= 1.0))
        throw ConfigError("assist_weight must lie in [0, 1]");
    for (int g : malfunctioning)
        if (g < 0 || g >= n) throw ConfigError("malfunctioning agent index out of range");
    RelationalNetwork net = self_interested_network(n, self_weight);
    for (int g : malfunctioning) {
        if (!keep_self_edge) net.set_weight(g, g, 0.0);
        for (int i = 0; i < n; ++i)
            if (!malfunctioning.contains(i)) net.set_weight(i, g, assist_weight);
    }
    return net;
}

} // namespace cavdn::relational
