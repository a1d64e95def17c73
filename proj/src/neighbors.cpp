#include "hope/neighbors.hpp"

#include "hope/errors.hpp"
#include "hope/parallel.hpp"
#include "hope/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace hope {

double smoothed_kl(const SparseDistribution& p, const SparseDistribution& q, double eps) {
    // Union size first, then one merged pass in ascending id order.
    std::size_t union_size = 0;
    {
        std::size_t a = 0;
        std::size_t b = 0;
        while (a < p.size() || b < q.size()) {
            if (b == q.size() || (a < p.size() && p[a].first < q[b].first)) {
                ++a;
            } else if (a == p.size() || q[b].first < p[a].first) {
                ++b;
            } else {
                ++a;
                ++b;
            }
            ++union_size;
        }
    }
    const double norm = 1.0 + eps * static_cast<double>(union_size);
    double total = 0.0;
    std::size_t a = 0;
    std::size_t b = 0;
    while (a < p.size() || b < q.size()) {
        double pv = 0.0;
        double qv = 0.0;
        if (b == q.size() || (a < p.size() && p[a].first < q[b].first)) {
            pv = p[a++].second;
        } else if (a == p.size() || q[b].first < p[a].first) {
            qv = q[b++].second;
        } else {
            pv = p[a++].second;
            qv = q[b++].second;
        }
        const double ps = (pv + eps) / norm;
        const double qs = (qv + eps) / norm;
        total += ps * std::log(ps / qs);
    }
    return total;
}

double trajectory_distance(const Visitation& a, const Visitation& b) {
    return smoothed_kl(b.observations, a.observations) + smoothed_kl(b.actions, a.actions);
}

double trajectory_distance(const Trajectory& a, const Trajectory& b) {
    return trajectory_distance(visitation_distribution(a), visitation_distribution(b));
}

FeatureTable identity_features(std::size_t n_obs) {
    FeatureTable table(n_obs);
    for (std::size_t o = 0; o < n_obs; ++o) table[o] = {static_cast<double>(o)};
    return table;
}

NeighborIndex::NeighborIndex(const Dataset& dataset, std::size_t k) : k_(k), entries_(dataset.size()) {
    for (std::size_t i = 0; i < dataset.size(); ++i) entries_[i].resize(dataset.trajectories[i].length());
}

void NeighborIndex::set(std::size_t i, std::size_t t, std::vector<NeighborEvent> events) {
    if (events.size() != k_) throw std::invalid_argument("neighbor entry must hold exactly K events");
    for (const auto& e : events) {
        if (e.trajectory == i) throw std::invalid_argument("a trajectory cannot be its own neighbor");
    }
    entries_.at(i).at(t) = std::move(events);
}

nlohmann::ordered_json NeighborIndex::to_json() const {
    nlohmann::ordered_json entries = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        for (std::size_t t = 0; t < entries_[i].size(); ++t) {
            if (entries_[i][t].empty()) continue;
            nlohmann::ordered_json events = nlohmann::ordered_json::array();
            for (const auto& e : entries_[i][t]) events.push_back({e.trajectory, e.step});
            entries.push_back({i, t, std::move(events)});
        }
    }
    nlohmann::ordered_json j;
    j["k"] = k_;
    j["entries"] = std::move(entries);
    return j;
}

namespace {

void check_k(std::size_t n, std::size_t k) {
    if (k == 0) throw std::invalid_argument("K must be >= 1");
    if (k >= n) {
        throw std::invalid_argument("K (" + std::to_string(k) + ") must be smaller than the number of trajectories (" +
                                    std::to_string(n) + ")");
    }
}

double squared_distance(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) {
        const double d = a[j] - b[j];
        s += d * d;
    }
    return s;
}

std::vector<Visitation> all_visitations(const Dataset& dataset, std::size_t threads) {
    std::vector<Visitation> out(dataset.size());
    parallel_for(dataset.size(), threads,
                 [&](std::size_t i) { out[i] = visitation_distribution(dataset.trajectories[i]); });
    return out;
}

bool needs_entry(const Trajectory& traj, const CriticalSet* critical) {
    if (critical == nullptr) return true;
    for (int o : traj.observations) {
        if (critical->contains(o)) return true;
    }
    return false;
}

void fill_entries(NeighborIndex& index, const Dataset& dataset, const FeatureTable& features, std::size_t i,
                  const std::vector<std::size_t>& trajectories, const CriticalSet* critical) {
    const auto& traj = dataset.trajectories[i];
    for (std::size_t t = 0; t < traj.length(); ++t) {
        if (critical != nullptr && !critical->contains(traj.observations[t])) continue;
        index.set(i, t, match_events(dataset, features, traj.observations[t], trajectories));
    }
}

} // namespace

std::vector<std::size_t> nearest_trajectories(const std::vector<Visitation>& visitations, std::size_t i,
                                              std::size_t k) {
    const std::size_t n = visitations.size();
    check_k(n, k);
    std::vector<std::pair<double, std::size_t>> keyed;
    keyed.reserve(n - 1);
    for (std::size_t j = 0; j < n; ++j) {
        if (j == i) continue;
        keyed.emplace_back(trajectory_distance(visitations[i], visitations[j]), j);
    }
    std::partial_sort(keyed.begin(), keyed.begin() + static_cast<std::ptrdiff_t>(k), keyed.end());
    std::vector<std::size_t> out(k);
    for (std::size_t j = 0; j < k; ++j) out[j] = keyed[j].second;
    return out;
}

std::vector<NeighborEvent> match_events(const Dataset& dataset, const FeatureTable& features, int observation,
                                        const std::vector<std::size_t>& trajectories) {
    const auto& target = features.at(static_cast<std::size_t>(observation));
    std::vector<NeighborEvent> events;
    events.reserve(trajectories.size());
    for (std::size_t k : trajectories) {
        const auto& traj = dataset.trajectories.at(k);
        double best = std::numeric_limits<double>::infinity();
        std::size_t best_t = 0;
        for (std::size_t t = 0; t < traj.length(); ++t) {
            const double d = squared_distance(target, features.at(static_cast<std::size_t>(traj.observations[t])));
            if (d < best) {
                best = d;
                best_t = t;
            }
        }
        events.push_back({k, best_t});
    }
    return events;
}

std::vector<NeighborEvent> find_k_nearest(const Dataset& dataset, const FeatureTable& features, std::size_t i,
                                          std::size_t t, std::size_t k) {
    check_k(dataset.size(), k);
    std::vector<Visitation> visitations(dataset.size());
    for (std::size_t j = 0; j < dataset.size(); ++j) visitations[j] = visitation_distribution(dataset.trajectories[j]);
    const auto nearest = nearest_trajectories(visitations, i, k);
    return match_events(dataset, features, dataset.trajectories.at(i).observations.at(t), nearest);
}

NeighborIndex find_k_nearest(const Dataset& dataset, const FeatureTable& features, std::size_t k,
                             const CriticalSet* critical, std::size_t threads) {
    check_k(dataset.size(), k);
    const auto visitations = all_visitations(dataset, threads);
    NeighborIndex index(dataset, k);
    parallel_for(dataset.size(), threads, [&](std::size_t i) {
        if (!needs_entry(dataset.trajectories[i], critical)) return;
        fill_entries(index, dataset, features, i, nearest_trajectories(visitations, i, k), critical);
    });
    return index;
}

NeighborIndex random_neighbors(const Dataset& dataset, const FeatureTable& features, std::size_t k,
                               const CriticalSet* critical, std::uint64_t seed, std::size_t threads) {
    const std::size_t n = dataset.size();
    check_k(n, k);
    NeighborIndex index(dataset, k);
    parallel_for(n, threads, [&](std::size_t i) {
        if (!needs_entry(dataset.trajectories[i], critical)) return;
        Rng rng(derive_stream(seed, i));
        // Floyd's sampling of k distinct candidates from the n-1 other trajectories.
        const std::size_t pool = n - 1;
        std::vector<std::size_t> chosen;
        chosen.reserve(k);
        for (std::size_t j = pool - k; j < pool; ++j) {
            const std::size_t c = rng.below(j + 1);
            if (std::find(chosen.begin(), chosen.end(), c) == chosen.end()) {
                chosen.push_back(c);
            } else {
                chosen.push_back(j);
            }
        }
        std::sort(chosen.begin(), chosen.end());
        for (auto& c : chosen) {
            if (c >= i) ++c;
        }
        fill_entries(index, dataset, features, i, chosen, critical);
    });
    return index;
}

double averaged_reward(const EventRewards& values, const std::vector<NeighborEvent>& events) {
    if (events.empty()) throw std::invalid_argument("cannot average over an empty neighbor set");
    double total = 0.0;
    for (const auto& e : events) total += values.at(e.trajectory).at(e.step);
    return total / static_cast<double>(events.size());
}

double averaged_reward(const RewardModel& model, const Dataset& dataset, const std::vector<NeighborEvent>& events) {
    if (events.empty()) throw std::invalid_argument("cannot average over an empty neighbor set");
    double total = 0.0;
    for (const auto& e : events) {
        const auto& traj = dataset.trajectories.at(e.trajectory);
        total += model.predict(traj.observations.at(e.step), traj.actions.at(e.step));
    }
    return total / static_cast<double>(events.size());
}

EventLayout::EventLayout(const Dataset& dataset) {
    start_.reserve(dataset.size());
    for (const auto& traj : dataset.trajectories) {
        start_.push_back(total_);
        length_.push_back(traj.length());
        total_ += traj.length();
    }
}

std::vector<double> EventLayout::flatten(const EventRewards& values) const {
    if (values.size() != start_.size()) throw std::invalid_argument("reward table does not match the layout");
    std::vector<double> flat(total_);
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (values[i].size() != length_[i]) throw std::invalid_argument("reward row does not match the layout");
        std::copy(values[i].begin(), values[i].end(), flat.begin() + static_cast<std::ptrdiff_t>(start_[i]));
    }
    return flat;
}

EventRewards EventLayout::unflatten(const std::vector<double>& flat) const {
    if (flat.size() != total_) throw std::invalid_argument("flat vector does not match the layout");
    EventRewards out(start_.size());
    for (std::size_t i = 0; i < start_.size(); ++i) {
        const auto begin = flat.begin() + static_cast<std::ptrdiff_t>(start_[i]);
        out[i].assign(begin, begin + static_cast<std::ptrdiff_t>(length_[i]));
    }
    return out;
}

std::vector<double> AveragingMatrix::apply(const std::vector<double>& u) const {
    if (u.size() != n_cols) throw std::invalid_argument("vector does not match the matrix width");
    std::vector<double> out(n_rows(), 0.0);
    for (std::size_t r = 0; r < n_rows(); ++r) {
        double s = 0.0;
        for (std::size_t p = row_ptr[r]; p < row_ptr[r + 1]; ++p) s += values[p] * u[cols[p]];
        out[r] = s;
    }
    return out;
}

AveragingMatrix build_matrix(const NeighborIndex& index, const EventLayout& layout) {
    AveragingMatrix m;
    m.n_cols = layout.size();
    const double weight = 1.0 / static_cast<double>(index.k());
    for (std::size_t i = 0; i < index.n_trajectories(); ++i) {
        for (std::size_t t = 0; t < index.length(i); ++t) {
            if (!index.has(i, t)) continue;
            m.row_event.push_back(layout.flat(i, t));
            for (const auto& e : index.at(i, t)) {
                m.cols.push_back(layout.flat(e.trajectory, e.step));
                m.values.push_back(weight);
            }
            m.row_ptr.push_back(m.cols.size());
        }
    }
    return m;
}

EventRewards reconstruct(const Dataset& dataset, const EventRewards& preliminary, const CriticalSet& critical,
                         const NeighborIndex& index) {
    if (preliminary.size() != dataset.size()) throw std::invalid_argument("reward table does not match the dataset");
    EventRewards out = preliminary;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        const auto& traj = dataset.trajectories[i];
        for (std::size_t t = 0; t < traj.length(); ++t) {
            if (!critical.contains(traj.observations[t])) continue;
            if (i >= index.n_trajectories() || !index.has(i, t)) {
                throw Error("no neighbor entry for critical event (trajectory " + std::to_string(i) + ", step " +
                            std::to_string(t) + ")");
            }
            out[i][t] = averaged_reward(preliminary, index.at(i, t));
        }
    }
    return out;
}

} // namespace hope
