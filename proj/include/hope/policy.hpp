#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace hope {

/// Stochastic policy over a discrete observation and action space, stored as a dense
/// row-stochastic table pi(a|o).
class Policy {
public:
    Policy() = default;

    /// Uniform policy.
    Policy(std::size_t n_obs, std::size_t n_act);

    static Policy deterministic(const std::vector<int>& actions, std::size_t n_act);

    std::size_t n_obs() const noexcept { return n_obs_; }
    std::size_t n_act() const noexcept { return n_act_; }

    double prob(int observation, int action) const { return probs_[index(observation, action)]; }
    std::span<const double> row(int observation) const;

    /// Replaces row o; the values must be nonnegative and sum to 1 within 1e-9.
    void set_row(int observation, std::span<const double> probs);

    /// Inverse-CDF draw from pi(.|o) given u in [0, 1).
    int sample(int observation, double u) const;

    /// Most probable action, lowest id on ties.
    int greedy(int observation) const;

    const std::vector<double>& table() const noexcept { return probs_; }

private:
    std::size_t index(int observation, int action) const {
        return static_cast<std::size_t>(observation) * n_act_ + static_cast<std::size_t>(action);
    }

    std::size_t n_obs_ = 0;
    std::size_t n_act_ = 0;
    std::vector<double> probs_;
};

} // namespace hope
