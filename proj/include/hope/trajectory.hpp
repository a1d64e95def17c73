#pragma once

#include "hope/policy.hpp"

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace hope {

struct Transition {
    int observation = 0;
    int action = 0;
    std::optional<double> reward;
    // Absent on the final step of a trajectory.
    std::optional<int> next_observation;
};

/// One episode. Per-step data is kept in parallel columns.
///
/// `rewards` is the observable per-step channel and is empty whenever immediate
/// rewards are unobservable. `ground_truth_rewards` is a simulator-only sidecar that
/// must never reach an estimator except in explicit ground-truth ablations.
struct Trajectory {
    std::vector<int> observations;
    std::vector<int> actions;
    std::optional<std::vector<double>> rewards;
    double aggregated_reward = 0.0;
    std::optional<std::vector<double>> ground_truth_rewards;
    std::optional<std::vector<double>> behavior_probs;

    std::size_t length() const noexcept { return actions.size(); }
    Transition transition(std::size_t t) const;

    bool operator==(const Trajectory&) const = default;
};

struct Dataset {
    std::vector<Trajectory> trajectories;
    std::size_t n_obs = 0;
    std::size_t n_act = 0;
    double gamma = 1.0;

    std::size_t size() const noexcept { return trajectories.size(); }

    /// Throws std::invalid_argument on an empty dataset, out-of-range ids,
    /// ragged columns or a ground-truth sidecar that disagrees with the aggregate.
    void validate() const;

    bool operator==(const Dataset&) const = default;
};

/// Per-(trajectory, step) reward table, the common currency of every reward channel.
using EventRewards = std::vector<std::vector<double>>;

/// Sum over t of gamma^(t-1) * rewards[t].
double discounted_return(std::span<const double> rewards, double gamma);

/// One aggregate per window of `window` steps, discounted by offset from the window
/// start. The trailing partial window is closed by the end of the episode. Without a
/// window the whole episode is one window.
std::vector<double> aggregate_rewards(const Trajectory& trajectory, double gamma,
                                      std::optional<std::size_t> window = std::nullopt);

/// Per-step channels removed by strip_rewards, kept for evaluation only.
struct RewardSidecar {
    std::vector<std::optional<std::vector<double>>> rewards;
    std::vector<std::optional<std::vector<double>>> ground_truth;

    bool operator==(const RewardSidecar&) const = default;
};

struct StrippedDataset {
    Dataset observable;
    RewardSidecar sidecar;
};

StrippedDataset strip_rewards(Dataset dataset);
Dataset attach_rewards(Dataset observable, const RewardSidecar& sidecar);

/// Tabular behavior cloning:
/// beta(a|o) = (count(o,a) + smoothing) / (count(o) + smoothing * |A|), uniform on unseen o.
Policy estimate_behavior_policy(const Dataset& dataset, double smoothing);

/// Sparse probability vector sorted by id.
using SparseDistribution = std::vector<std::pair<int, double>>;

struct Visitation {
    SparseDistribution observations;
    SparseDistribution actions;
};

Visitation visitation_distribution(const Trajectory& trajectory);

std::vector<double> densify(const SparseDistribution& dist, std::size_t size);

// Reward channels.

/// Aggregated reward on the final step, zero elsewhere. The final entry is scaled by
/// gamma^-(T-1) so that the row's discounted return equals the aggregate.
EventRewards sparse_rewards(const Dataset& dataset);
/// Ground-truth sidecar; throws if any trajectory lacks it.
EventRewards ground_truth_rewards(const Dataset& dataset);

// JSON-Lines persistence. The first line is a header
// {"n_obs":..,"n_act":..,"gamma":..}; each further line is one trajectory
// {"obs":[..],"act":[..],"rew":[..]|null,"agg":x,"beta":[..]|null}.

void write_dataset(std::ostream& out, const Dataset& dataset);
Dataset read_dataset(std::istream& in);
void save_dataset(const std::string& path, const Dataset& dataset);
Dataset load_dataset(const std::string& path);

// Ground-truth sidecar file: header {"kind":"ground_truth","n_traj":N} followed by
// one {"rew":[..]|null} line per trajectory.

void write_ground_truth(std::ostream& out, const Dataset& dataset);
/// Reads a sidecar file and fills ground_truth_rewards of `dataset` in place.
void read_ground_truth(std::istream& in, Dataset& dataset);
void save_ground_truth(const std::string& path, const Dataset& dataset);
void load_ground_truth(const std::string& path, Dataset& dataset);

} // namespace hope
