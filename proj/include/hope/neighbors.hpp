#pragma once

// Trajectory similarity, nearest-neighbor events and neighbor-averaged rewards.

#include "hope/critical.hpp"
#include "hope/reward_model.hpp"
#include "hope/trajectory.hpp"

#include <cstddef>
#include <cstdint>
#include <vector>

#include <json.hpp>

namespace hope {

inline constexpr double kKlSmoothing = 1e-6;

/// KL(p || q) over the union of both supports. Each side is smoothed as
/// (x + eps) / (1 + eps * |union|) and terms are summed in ascending id order.
double smoothed_kl(const SparseDistribution& p, const SparseDistribution& q, double eps = kKlSmoothing);

/// d(a, b) = KL(obs visitation of b || of a) + KL(action visitation of b || of a).
/// Asymmetric.
double trajectory_distance(const Trajectory& a, const Trajectory& b);
double trajectory_distance(const Visitation& a, const Visitation& b);

/// Per-observation feature vectors; observation distance is Euclidean between rows.
using FeatureTable = std::vector<std::vector<double>>;

/// One feature per observation: the id itself.
FeatureTable identity_features(std::size_t n_obs);

struct NeighborEvent {
    std::size_t trajectory = 0;
    std::size_t step = 0;
    bool operator==(const NeighborEvent&) const = default;
};

class NeighborIndex {
public:
    NeighborIndex() = default;
    explicit NeighborIndex(const Dataset& dataset, std::size_t k);

    std::size_t k() const noexcept { return k_; }
    std::size_t n_trajectories() const noexcept { return entries_.size(); }
    std::size_t length(std::size_t i) const { return entries_.at(i).size(); }

    bool has(std::size_t i, std::size_t t) const { return !entries_.at(i).at(t).empty(); }
    const std::vector<NeighborEvent>& at(std::size_t i, std::size_t t) const { return entries_.at(i).at(t); }
    void set(std::size_t i, std::size_t t, std::vector<NeighborEvent> events);

    nlohmann::ordered_json to_json() const;

    bool operator==(const NeighborIndex&) const = default;

private:
    std::size_t k_ = 0;
    std::vector<std::vector<std::vector<NeighborEvent>>> entries_;
};

/// The K trajectories other than i closest to i, ordered by (distance, index).
/// Throws std::invalid_argument when K >= N or K == 0.
std::vector<std::size_t> nearest_trajectories(const std::vector<Visitation>& visitations, std::size_t i,
                                              std::size_t k);

/// On each listed trajectory, the earliest step whose observation is closest to
/// `observation`.
std::vector<NeighborEvent> match_events(const Dataset& dataset, const FeatureTable& features, int observation,
                                        const std::vector<std::size_t>& trajectories);

/// Neighbors of the single event (i, t).
std::vector<NeighborEvent> find_k_nearest(const Dataset& dataset, const FeatureTable& features, std::size_t i,
                                          std::size_t t, std::size_t k);

/// Neighbors of every event whose observation is in `critical` (every event when null).
NeighborIndex find_k_nearest(const Dataset& dataset, const FeatureTable& features, std::size_t k,
                             const CriticalSet* critical, std::size_t threads);

/// Like find_k_nearest, but the K trajectories of each i are drawn uniformly without
/// replacement from the other N-1, using stream derive_stream(seed, i).
NeighborIndex random_neighbors(const Dataset& dataset, const FeatureTable& features, std::size_t k,
                               const CriticalSet* critical, std::uint64_t seed, std::size_t threads);

/// Mean of `values` over the events.
double averaged_reward(const EventRewards& values, const std::vector<NeighborEvent>& events);
/// Mean of the reward model over the (o,a) pairs at the events.
double averaged_reward(const RewardModel& model, const Dataset& dataset, const std::vector<NeighborEvent>& events);

/// Flat numbering of (i, t) events, trajectory-major.
class EventLayout {
public:
    explicit EventLayout(const Dataset& dataset);
    std::size_t size() const noexcept { return total_; }
    std::size_t flat(std::size_t i, std::size_t t) const { return start_.at(i) + t; }

    std::vector<double> flatten(const EventRewards& values) const;
    EventRewards unflatten(const std::vector<double>& flat) const;

private:
    std::vector<std::size_t> start_;
    std::vector<std::size_t> length_;
    std::size_t total_ = 0;
};

/// Sparse row-compressed averaging matrix. Row r belongs to event row_event[r]; its
/// entries are 1/K at the neighbor events.
struct AveragingMatrix {
    std::size_t n_cols = 0;
    std::vector<std::size_t> row_event;
    std::vector<std::size_t> row_ptr{0};
    std::vector<std::size_t> cols;
    std::vector<double> values;

    std::size_t n_rows() const noexcept { return row_event.size(); }
    std::vector<double> apply(const std::vector<double>& u) const;
};

/// One row per indexed event, in flat event order.
AveragingMatrix build_matrix(const NeighborIndex& index, const EventLayout& layout);

/// r^ = neighbor average where the observation is critical, r~ elsewhere.
/// Throws hope::Error when a critical event has no index entry.
EventRewards reconstruct(const Dataset& dataset, const EventRewards& preliminary, const CriticalSet& critical,
                         const NeighborIndex& index);

} // namespace hope
