#pragma once

#include <stdexcept>
#include <string>

namespace hope {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// beta(a|o) = 0 at a step where the target policy puts mass on a.
class SupportViolation : public Error {
public:
    SupportViolation(int observation, int action)
        : Error("support violation: behavior probability is zero at (o=" + std::to_string(observation) +
                ", a=" + std::to_string(action) + ") while the target probability is positive"),
          observation_(observation), action_(action) {}

    int observation() const noexcept { return observation_; }
    int action() const noexcept { return action_; }

private:
    int observation_;
    int action_;
};

/// All importance weights vanished, so a self-normalized estimate is undefined.
class DegenerateWeights : public Error {
public:
    using Error::Error;
};

/// Least-squares system is rank deficient and no ridge penalty was given.
class UnderdeterminedSystem : public Error {
public:
    using Error::Error;
};

/// Configuration or schema problem; carries the offending field name.
class ConfigError : public Error {
public:
    ConfigError(std::string field, const std::string& message)
        : Error("config error at '" + field + "': " + message), field_(std::move(field)) {}

    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

/// Failure inside one pipeline stage; the message is prefixed with the stage label.
class StageError : public Error {
public:
    StageError(std::string stage, const std::string& message)
        : Error("[" + stage + "] " + message), stage_(std::move(stage)) {}

    const std::string& stage() const noexcept { return stage_; }

private:
    std::string stage_;
};

} // namespace hope
