#pragma once

// Tabular fitted Q-evaluation and critical-observation detection.

#include "hope/policy.hpp"
#include "hope/trajectory.hpp"

#include <cstddef>
#include <span>
#include <vector>

#include <json.hpp>

namespace hope {

class QTable {
public:
    QTable() = default;
    QTable(std::size_t n_obs, std::size_t n_act);

    std::size_t n_obs() const noexcept { return n_obs_; }
    std::size_t n_act() const noexcept { return n_act_; }

    double operator()(int observation, int action) const { return values_[index(observation, action)]; }
    void set(int observation, int action, double value) { values_[index(observation, action)] = value; }

    bool visited(int observation, int action) const { return visited_[index(observation, action)] != 0; }
    bool visited(int observation) const;
    void mark_visited(int observation, int action) { visited_[index(observation, action)] = 1; }

    /// sum_a pi(a|o) Q(o,a)
    double state_value(int observation, const Policy& policy) const;

    std::size_t sweeps = 0;
    double residual = 0.0;
    // Max-norm change of every sweep, in order.
    std::vector<double> sweep_deltas;

    nlohmann::json to_json() const;

private:
    std::size_t index(int o, int a) const {
        return static_cast<std::size_t>(o) * n_act_ + static_cast<std::size_t>(a);
    }

    std::size_t n_obs_ = 0;
    std::size_t n_act_ = 0;
    std::vector<double> values_;
    std::vector<unsigned char> visited_;
};

enum class Backup {
    // Continuation sum_a' pi(a'|o') Q(o',a').
    policy,
    // Continuation max_a' Q(o',a') over visited a'.
    batch_optimal,
};

struct QFitOptions {
    std::size_t max_sweeps = 1000;
    double tolerance = 1e-8;
    Backup backup = Backup::policy;
    // Smoothing of the behavior clone used by fit_q.
    double behavior_smoothing = 0.0;
};

/// Q(o,a) <- mean over matching transitions of r + gamma * continuation(o'), with Jacobi
/// sweeps until the max change drops below the tolerance. The last step of every
/// trajectory has no continuation.
QTable fit_q_policy(const Dataset& dataset, const EventRewards& rewards, double gamma, const Policy& policy,
                    const QFitOptions& options = {});
/// Same, over the trajectories listed in `rows` (repeats count with multiplicity).
QTable fit_q_policy(const Dataset& dataset, const EventRewards& rewards, double gamma, const Policy& policy,
                    const QFitOptions& options, std::span<const std::size_t> rows);

/// Behavior Q: fit_q_policy under the behavior policy cloned from the data.
QTable fit_q(const Dataset& dataset, const EventRewards& rewards, double gamma, const QFitOptions& options = {});

/// max_a Q(o,a) - min_a Q(o,a) over the visited actions of o; 0 if o is unvisited.
double q_gap(const QTable& q, int observation);

/// Gaps of every visited observation, sorted non-increasing.
std::vector<double> sorted_gaps(const QTable& q);

struct ElbowResult {
    double threshold = 0.0;
    // Too few points or no curvature; threshold fell back to 0.
    bool degenerate = false;
    std::size_t knee_index = 0;
};

/// Knee of a non-increasing gap curve: the point farthest (perpendicular) from the
/// chord joining the first and last points.
ElbowResult select_threshold_elbow(std::span<const double> gaps);

class CriticalSet {
public:
    CriticalSet() = default;
    CriticalSet(std::size_t n_obs, double threshold);

    /// Every observation, visited or not.
    static CriticalSet all(std::size_t n_obs);
    static CriticalSet none(std::size_t n_obs);

    bool contains(int observation) const { return members_.at(static_cast<std::size_t>(observation)) != 0; }
    void insert(int observation) { members_.at(static_cast<std::size_t>(observation)) = 1; }
    std::size_t size() const;
    std::size_t n_obs() const noexcept { return members_.size(); }
    double threshold() const noexcept { return threshold_; }
    std::vector<int> members() const;

    nlohmann::json to_json() const;

private:
    std::vector<unsigned char> members_;
    double threshold_ = 0.0;
};

/// {o : q_gap(o) > h}, restricted to visited observations.
CriticalSet critical_set(const QTable& q, double h);

} // namespace hope
