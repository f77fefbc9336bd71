#pragma once

#include <algorithm>

#include "cavdn/errors.hpp"

namespace cavdn::learn {

// Linear epsilon decay from start to end over decay_episodes, measured from the last reset.
class EpsilonSchedule {
public:
    EpsilonSchedule() = default;

    EpsilonSchedule(double start, double end, int decay_episodes)
        : start_(start), end_(end), decay_episodes_(decay_episodes) {
        if (!(start >= 0.0 && start <= 1.0) || !(end >= 0.0 && end <= 1.0) || end > start)
            throw ConfigError("epsilon schedule requires 0 <= end <= start <= 1");
        if (decay_episodes <= 0) throw ConfigError("epsilon decay_episodes must be positive");
    }

    double value(long episode) const {
        const long since = std::max(0L, episode - offset_);
        if (since >= decay_episodes_) return end_;
        const double frac = static_cast<double>(since) / decay_episodes_;
        return std::max(end_, start_ - (start_ - end_) * frac);
    }

    // Restart the decay so that value(episode) == start.
    void reset(long episode) { offset_ = episode; }

    double start() const { return start_; }
    double end() const { return end_; }
    int decay_episodes() const { return decay_episodes_; }
    long offset() const { return offset_; }

private:
    double start_ = 1.0;
    double end_ = 0.05;
    int decay_episodes_ = 2000;
    long offset_ = 0;
};

} // namespace cavdn::learn
