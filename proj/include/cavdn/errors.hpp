#pragma once

#include <stdexcept>
#include <string>

namespace cavdn {

// Invalid or inconsistent configuration (bad layout, out-of-range weight, malformed config file).
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string &what) : std::runtime_error(what) {}
};

// API misuse at run time, e.g. stepping an episode that already ended.
class UsageError : public std::logic_error {
public:
    explicit UsageError(const std::string &what) : std::logic_error(what) {}
};

// Shape mismatches between networks, gradients and batches.
class ShapeError : public std::logic_error {
public:
    explicit ShapeError(const std::string &what) : std::logic_error(what) {}
};

// NaN/inf encountered in losses or gradients.
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string &what) : std::runtime_error(what) {}
};

} // namespace cavdn
