#include "hope/critical.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>

namespace hope {

QTable::QTable(std::size_t n_obs, std::size_t n_act)
    : n_obs_(n_obs), n_act_(n_act), values_(n_obs * n_act, 0.0), visited_(n_obs * n_act, 0) {}

bool QTable::visited(int observation) const {
    for (std::size_t a = 0; a < n_act_; ++a) {
        if (visited(observation, static_cast<int>(a))) return true;
    }
    return false;
}

double QTable::state_value(int observation, const Policy& policy) const {
    double v = 0.0;
    for (std::size_t a = 0; a < n_act_; ++a) {
        const double p = policy.prob(observation, static_cast<int>(a));
        if (p != 0.0) v += p * (*this)(observation, static_cast<int>(a));
    }
    return v;
}

nlohmann::json QTable::to_json() const {
    nlohmann::json table = nlohmann::json::object();
    for (std::size_t o = 0; o < n_obs_; ++o) {
        for (std::size_t a = 0; a < n_act_; ++a) {
            if (!visited_[o * n_act_ + a]) continue;
            table["(" + std::to_string(o) + "," + std::to_string(a) + ")"] = values_[o * n_act_ + a];
        }
    }
    nlohmann::json j;
    j["n_obs"] = n_obs_;
    j["n_act"] = n_act_;
    j["sweeps"] = sweeps;
    j["residual"] = residual;
    j["table"] = std::move(table);
    return j;
}

namespace {

// Sufficient statistics of the transitions leaving one (o,a) pair.
struct PairStats {
    double count = 0.0;
    double reward_sum = 0.0;
    double terminal_count = 0.0;
    // next observation -> count, ascending ids
    std::vector<std::pair<int, double>> next;
};

std::vector<PairStats> collect(const Dataset& dataset, const EventRewards& rewards,
                               std::span<const std::size_t> rows) {
    if (dataset.trajectories.empty() || rows.empty()) throw std::invalid_argument("cannot fit Q on an empty dataset");
    if (rewards.size() != dataset.size()) throw std::invalid_argument("reward table does not match the dataset");
    std::vector<std::map<int, double>> next(dataset.n_obs * dataset.n_act);
    std::vector<PairStats> stats(dataset.n_obs * dataset.n_act);
    for (std::size_t i : rows) {
        const auto& traj = dataset.trajectories.at(i);
        if (rewards[i].size() != traj.length()) {
            throw std::invalid_argument("reward row " + std::to_string(i) + " does not match its trajectory");
        }
        for (std::size_t t = 0; t < traj.length(); ++t) {
            const auto k = static_cast<std::size_t>(traj.observations[t]) * dataset.n_act +
                           static_cast<std::size_t>(traj.actions[t]);
            stats[k].count += 1.0;
            stats[k].reward_sum += rewards[i][t];
            if (t + 1 < traj.length()) {
                next[k][traj.observations[t + 1]] += 1.0;
            } else {
                stats[k].terminal_count += 1.0;
            }
        }
    }
    for (std::size_t k = 0; k < stats.size(); ++k) stats[k].next.assign(next[k].begin(), next[k].end());
    return stats;
}

std::vector<std::size_t> all_rows(const Dataset& dataset) {
    std::vector<std::size_t> rows(dataset.size());
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
    return rows;
}

QTable run_sweeps(const Dataset& dataset, const std::vector<PairStats>& stats, double gamma, const Policy& policy,
                  const QFitOptions& options) {
    const std::size_t n_act = dataset.n_act;
    QTable q(dataset.n_obs, n_act);
    for (std::size_t k = 0; k < stats.size(); ++k) {
        if (stats[k].count > 0.0) q.mark_visited(static_cast<int>(k / n_act), static_cast<int>(k % n_act));
    }

    std::vector<double> continuation(dataset.n_obs, 0.0);
    std::vector<double> fresh(stats.size(), 0.0);
    for (std::size_t sweep = 0; sweep < options.max_sweeps; ++sweep) {
        for (std::size_t o = 0; o < dataset.n_obs; ++o) {
            const int oi = static_cast<int>(o);
            if (options.backup == Backup::policy) {
                continuation[o] = q.state_value(oi, policy);
            } else {
                double best = -std::numeric_limits<double>::infinity();
                for (std::size_t a = 0; a < n_act; ++a) {
                    if (q.visited(oi, static_cast<int>(a))) best = std::max(best, q(oi, static_cast<int>(a)));
                }
                continuation[o] = std::isfinite(best) ? best : 0.0;
            }
        }
        double delta = 0.0;
        for (std::size_t k = 0; k < stats.size(); ++k) {
            const auto& s = stats[k];
            if (s.count == 0.0) continue;
            double future = 0.0;
            for (const auto& [next, c] : s.next) future += c * continuation[static_cast<std::size_t>(next)];
            fresh[k] = (s.reward_sum + gamma * future) / s.count;
            const int o = static_cast<int>(k / n_act);
            const int a = static_cast<int>(k % n_act);
            delta = std::max(delta, std::abs(fresh[k] - q(o, a)));
        }
        for (std::size_t k = 0; k < stats.size(); ++k) {
            if (stats[k].count > 0.0) q.set(static_cast<int>(k / n_act), static_cast<int>(k % n_act), fresh[k]);
        }
        q.sweeps = sweep + 1;
        q.residual = delta;
        q.sweep_deltas.push_back(delta);
        if (delta < options.tolerance) break;
    }
    return q;
}

} // namespace

QTable fit_q_policy(const Dataset& dataset, const EventRewards& rewards, double gamma, const Policy& policy,
                    const QFitOptions& options) {
    return fit_q_policy(dataset, rewards, gamma, policy, options, all_rows(dataset));
}

QTable fit_q_policy(const Dataset& dataset, const EventRewards& rewards, double gamma, const Policy& policy,
                    const QFitOptions& options, std::span<const std::size_t> rows) {
    const auto stats = collect(dataset, rewards, rows);
    return run_sweeps(dataset, stats, gamma, policy, options);
}

QTable fit_q(const Dataset& dataset, const EventRewards& rewards, double gamma, const QFitOptions& options) {
    const auto stats = collect(dataset, rewards, all_rows(dataset));
    const Policy behavior = estimate_behavior_policy(dataset, options.behavior_smoothing);
    return run_sweeps(dataset, stats, gamma, behavior, options);
}

double q_gap(const QTable& q, int observation) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < q.n_act(); ++a) {
        if (!q.visited(observation, static_cast<int>(a))) continue;
        lo = std::min(lo, q(observation, static_cast<int>(a)));
        hi = std::max(hi, q(observation, static_cast<int>(a)));
    }
    return hi >= lo ? hi - lo : 0.0;
}

std::vector<double> sorted_gaps(const QTable& q) {
    std::vector<double> gaps;
    for (std::size_t o = 0; o < q.n_obs(); ++o) {
        if (q.visited(static_cast<int>(o))) gaps.push_back(q_gap(q, static_cast<int>(o)));
    }
    std::sort(gaps.begin(), gaps.end(), std::greater<>());
    return gaps;
}

ElbowResult select_threshold_elbow(std::span<const double> gaps) {
    ElbowResult result;
    const std::size_t n = gaps.size();
    if (n < 3) {
        result.degenerate = true;
        return result;
    }
    const double x1 = 0.0;
    const double y1 = gaps.front();
    const double x2 = static_cast<double>(n - 1);
    const double y2 = gaps.back();
    const double chord = std::hypot(x2 - x1, y2 - y1);
    double best = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double x = static_cast<double>(i);
        const double d = std::abs((x2 - x1) * (y1 - gaps[i]) - (x1 - x) * (y2 - y1)) / chord;
        if (d > best) {
            best = d;
            result.knee_index = i;
        }
    }
    const double scale = std::max({std::abs(y1), std::abs(y2), 1.0});
    if (best <= 1e-12 * scale) {
        result.degenerate = true;
        result.knee_index = 0;
        return result;
    }
    result.threshold = gaps[result.knee_index];
    return result;
}

CriticalSet::CriticalSet(std::size_t n_obs, double threshold) : members_(n_obs, 0), threshold_(threshold) {}

CriticalSet CriticalSet::all(std::size_t n_obs) {
    CriticalSet s(n_obs, -std::numeric_limits<double>::infinity());
    std::fill(s.members_.begin(), s.members_.end(), 1);
    return s;
}

CriticalSet CriticalSet::none(std::size_t n_obs) {
    return CriticalSet(n_obs, std::numeric_limits<double>::infinity());
}

std::size_t CriticalSet::size() const {
    return static_cast<std::size_t>(std::count(members_.begin(), members_.end(), 1));
}

std::vector<int> CriticalSet::members() const {
    std::vector<int> out;
    for (std::size_t o = 0; o < members_.size(); ++o) {
        if (members_[o]) out.push_back(static_cast<int>(o));
    }
    return out;
}

nlohmann::json CriticalSet::to_json() const {
    nlohmann::json j;
    j["n_obs"] = members_.size();
    if (std::isfinite(threshold_)) {
        j["threshold"] = threshold_;
    } else {
        j["threshold"] = threshold_ > 0 ? "inf" : "-inf";
    }
    j["members"] = members();
    return j;
}

CriticalSet critical_set(const QTable& q, double h) {
    CriticalSet s(q.n_obs(), h);
    for (std::size_t o = 0; o < q.n_obs(); ++o) {
        const int oi = static_cast<int>(o);
        if (q.visited(oi) && q_gap(q, oi) > h) s.insert(oi);
    }
    return s;
}

} // namespace hope
