#pragma once

// Shared fixtures and independent oracles for the test binaries.

#include "hope/neighbors.hpp"
#include "hope/policy.hpp"
#include "hope/rng.hpp"
#include "hope/trajectory.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <set>
#include <stdexcept>
#include <utility>
#include <vector>

namespace hope::testing {

/// Small episodic MDP, fully observed. Entering `terminal` ends the episode.
struct FixtureMdp {
    int n_states = 5;
    int n_actions = 2;
    int horizon = 4;
    int terminal = 4;
    double gamma = 0.9;
    std::vector<double> initial;                           // [s]
    std::vector<std::vector<std::vector<double>>> next;    // [s][a][s']
    std::vector<std::vector<double>> reward;               // [s][a]
};

/// Five states (state 4 absorbing), two actions.
inline FixtureMdp five_state_mdp() {
    FixtureMdp m;
    m.initial = {0.4, 0.3, 0.2, 0.1, 0.0};
    m.next = {
        {{0.5, 0.3, 0.1, 0.0, 0.1}, {0.1, 0.2, 0.4, 0.2, 0.1}},
        {{0.2, 0.5, 0.1, 0.1, 0.1}, {0.0, 0.1, 0.3, 0.4, 0.2}},
        {{0.3, 0.0, 0.4, 0.2, 0.1}, {0.1, 0.1, 0.1, 0.4, 0.3}},
        {{0.1, 0.1, 0.2, 0.4, 0.2}, {0.0, 0.2, 0.2, 0.2, 0.4}},
        {{0.0, 0.0, 0.0, 0.0, 1.0}, {0.0, 0.0, 0.0, 0.0, 1.0}},
    };
    m.reward = {{0.0, 0.5}, {-0.2, 0.3}, {0.4, -0.1}, {1.0, 0.2}, {0.0, 0.0}};
    return m;
}

inline Policy make_policy(const std::vector<std::vector<double>>& rows) {
    Policy p(rows.size(), rows.front().size());
    for (std::size_t o = 0; o < rows.size(); ++o) p.set_row(static_cast<int>(o), rows[o]);
    return p;
}

inline int draw(const std::vector<double>& probs, double u) {
    double c = 0.0;
    for (std::size_t k = 0; k < probs.size(); ++k) {
        c += probs[k];
        if (u < c) return static_cast<int>(k);
    }
    for (std::size_t k = probs.size(); k-- > 0;) {
        if (probs[k] > 0.0) return static_cast<int>(k);
    }
    return 0;
}

/// Rollouts under `behavior` with stored behavior probabilities, ground-truth rewards
/// and their discounted aggregate.
inline Dataset simulate_fixture(const FixtureMdp& m, const Policy& behavior, std::size_t n, std::uint64_t seed) {
    Dataset d;
    d.n_obs = static_cast<std::size_t>(m.n_states);
    d.n_act = static_cast<std::size_t>(m.n_actions);
    d.gamma = m.gamma;
    Rng rng(seed);
    for (std::size_t i = 0; i < n; ++i) {
        Trajectory traj;
        std::vector<double> rewards;
        std::vector<double> probs;
        int s = draw(m.initial, rng.uniform());
        for (int t = 0; t < m.horizon; ++t) {
            const auto row = behavior.row(s);
            const int a = draw({row.begin(), row.end()}, rng.uniform());
            traj.observations.push_back(s);
            traj.actions.push_back(a);
            probs.push_back(behavior.prob(s, a));
            rewards.push_back(m.reward[s][a]);
            s = draw(m.next[s][a], rng.uniform());
            if (s == m.terminal) break;
        }
        traj.aggregated_reward = discounted_return(rewards, m.gamma);
        traj.ground_truth_rewards = rewards;
        traj.behavior_probs = probs;
        d.trajectories.push_back(std::move(traj));
    }
    return d;
}

/// Expected discounted return by backward induction.
inline double fixture_value(const FixtureMdp& m, const Policy& pi) {
    std::vector<double> v(static_cast<std::size_t>(m.n_states), 0.0);
    for (int t = m.horizon - 1; t >= 0; --t) {
        std::vector<double> nv(v.size(), 0.0);
        for (int s = 0; s < m.n_states; ++s) {
            if (s == m.terminal) continue;
            for (int a = 0; a < m.n_actions; ++a) {
                double cont = 0.0;
                for (int s2 = 0; s2 < m.n_states; ++s2) {
                    if (s2 != m.terminal) cont += m.next[s][a][s2] * v[s2];
                }
                nv[s] += pi.prob(s, a) * (m.reward[s][a] + m.gamma * cont);
            }
        }
        v = nv;
    }
    double total = 0.0;
    for (int s = 0; s < m.n_states; ++s) total += m.initial[s] * v[s];
    return total;
}

/// Random dataset with ids in small spaces; no rewards attached.
inline Dataset random_dataset(Rng& rng, std::size_t n, std::size_t max_len, std::size_t n_obs, std::size_t n_act,
                              double gamma = 0.9) {
    Dataset d;
    d.n_obs = n_obs;
    d.n_act = n_act;
    d.gamma = gamma;
    for (std::size_t i = 0; i < n; ++i) {
        Trajectory traj;
        const std::size_t len = 1 + rng.below(max_len);
        for (std::size_t t = 0; t < len; ++t) {
            traj.observations.push_back(static_cast<int>(rng.below(n_obs)));
            traj.actions.push_back(static_cast<int>(rng.below(n_act)));
        }
        d.trajectories.push_back(std::move(traj));
    }
    return d;
}

inline EventRewards random_events(Rng& rng, const Dataset& d, double lo = -1.0, double hi = 1.0) {
    EventRewards out(d.size());
    for (std::size_t i = 0; i < d.size(); ++i) {
        for (std::size_t t = 0; t < d.trajectories[i].length(); ++t) out[i].push_back(lo + (hi - lo) * rng.uniform());
    }
    return out;
}

/// Dense Gaussian elimination with partial pivoting. Throws on a singular system.
inline std::vector<double> gauss_solve(std::vector<std::vector<double>> a, std::vector<double> b) {
    const std::size_t n = b.size();
    for (std::size_t c = 0; c < n; ++c) {
        std::size_t p = c;
        for (std::size_t r = c + 1; r < n; ++r) {
            if (std::abs(a[r][c]) > std::abs(a[p][c])) p = r;
        }
        if (std::abs(a[p][c]) < 1e-300) throw std::runtime_error("singular system");
        std::swap(a[p], a[c]);
        std::swap(b[p], b[c]);
        for (std::size_t r = c + 1; r < n; ++r) {
            const double f = a[r][c] / a[c][c];
            for (std::size_t k = c; k < n; ++k) a[r][k] -= f * a[c][k];
            b[r] -= f * b[c];
        }
    }
    std::vector<double> x(n, 0.0);
    for (std::size_t r = n; r-- > 0;) {
        double s = b[r];
        for (std::size_t k = r + 1; k < n; ++k) s -= a[r][k] * x[k];
        x[r] = s / a[r][r];
    }
    return x;
}

/// Random trajectories whose aggregates are generated exactly by `theta` over
/// (o,a) = o * n_act + a. Every pair appears, so long enough data identify theta.
inline Dataset identifiable_dataset(Rng& rng, std::size_t n_obs, std::size_t n_act, std::size_t n,
                                    std::size_t max_len, double gamma, std::vector<double>& theta) {
    theta.resize(n_obs * n_act);
    for (double& x : theta) x = -1.0 + 2.0 * rng.uniform();
    Dataset d = random_dataset(rng, n, max_len, n_obs, n_act, gamma);
    for (std::size_t k = 0; k < n_obs * n_act; ++k) {
        d.trajectories[k % n].observations.push_back(static_cast<int>(k / n_act));
        d.trajectories[k % n].actions.push_back(static_cast<int>(k % n_act));
    }
    for (auto& traj : d.trajectories) {
        std::vector<double> r;
        for (std::size_t t = 0; t < traj.length(); ++t) {
            r.push_back(theta[static_cast<std::size_t>(traj.observations[t]) * n_act +
                              static_cast<std::size_t>(traj.actions[t])]);
        }
        traj.aggregated_reward = discounted_return(r, gamma);
        traj.ground_truth_rewards = r;
    }
    return d;
}

/// Ridge least squares over the seen (o,a) pairs by dense normal equations.
/// Returns a value per o * n_act + a (0 for unseen pairs).
inline std::vector<double> dense_least_squares(const Dataset& d, double ridge) {
    const std::size_t width = d.n_obs * d.n_act;
    std::vector<int> col(width, -1);
    int n_cols = 0;
    for (const auto& traj : d.trajectories) {
        for (std::size_t t = 0; t < traj.length(); ++t) {
            col[static_cast<std::size_t>(traj.observations[t]) * d.n_act + static_cast<std::size_t>(traj.actions[t])] = 0;
        }
    }
    for (auto& c : col) {
        if (c == 0) c = n_cols++;
    }
    const std::size_t m = static_cast<std::size_t>(n_cols);
    std::vector<std::vector<double>> x(d.size(), std::vector<double>(m, 0.0));
    for (std::size_t i = 0; i < d.size(); ++i) {
        const auto& traj = d.trajectories[i];
        for (std::size_t t = 0; t < traj.length(); ++t) {
            const auto c = static_cast<std::size_t>(
                col[static_cast<std::size_t>(traj.observations[t]) * d.n_act + static_cast<std::size_t>(traj.actions[t])]);
            x[i][c] += std::pow(d.gamma, static_cast<double>(t));
        }
    }
    const double n = static_cast<double>(d.size());
    std::vector<std::vector<double>> a(m, std::vector<double>(m, 0.0));
    std::vector<double> b(m, 0.0);
    for (std::size_t i = 0; i < d.size(); ++i) {
        for (std::size_t p = 0; p < m; ++p) {
            b[p] += x[i][p] * d.trajectories[i].aggregated_reward / n;
            for (std::size_t q = 0; q < m; ++q) a[p][q] += x[i][p] * x[i][q] / n;
        }
    }
    for (std::size_t p = 0; p < m; ++p) a[p][p] += ridge;
    const auto sol = gauss_solve(a, b);
    std::vector<double> out(width, 0.0);
    for (std::size_t k = 0; k < width; ++k) {
        if (col[k] >= 0) out[k] = sol[static_cast<std::size_t>(col[k])];
    }
    return out;
}

/// Dense KL with smoothing over the union support, from raw id lists.
inline double dense_kl(const std::vector<int>& p_ids, const std::vector<int>& q_ids, double eps) {
    std::map<int, double> p;
    std::map<int, double> q;
    for (int id : p_ids) p[id] += 1.0 / static_cast<double>(p_ids.size());
    for (int id : q_ids) q[id] += 1.0 / static_cast<double>(q_ids.size());
    std::set<int> support;
    for (const auto& [id, v] : p) support.insert(id);
    for (const auto& [id, v] : q) support.insert(id);
    const double norm = 1.0 + eps * static_cast<double>(support.size());
    double total = 0.0;
    for (int id : support) {
        const double ps = ((p.count(id) ? p[id] : 0.0) + eps) / norm;
        const double qs = ((q.count(id) ? q[id] : 0.0) + eps) / norm;
        total += ps * std::log(ps / qs);
    }
    return total;
}

/// Exhaustive neighbor search for event (i, t): every other trajectory is scored with
/// dense_kl, the K best by (distance, index) are kept, and on each the earliest step
/// with the smallest squared feature distance is chosen.
inline std::vector<NeighborEvent> brute_force_neighbors(const Dataset& d, const FeatureTable& features, std::size_t i,
                                                        std::size_t t, std::size_t k) {
    const auto& ti = d.trajectories[i];
    std::vector<std::pair<double, std::size_t>> all;
    for (std::size_t j = 0; j < d.size(); ++j) {
        if (j == i) continue;
        const auto& tj = d.trajectories[j];
        all.emplace_back(dense_kl(tj.observations, ti.observations, 1e-6) + dense_kl(tj.actions, ti.actions, 1e-6), j);
    }
    std::sort(all.begin(), all.end());
    const auto& target = features[static_cast<std::size_t>(ti.observations[t])];
    std::vector<NeighborEvent> out;
    for (std::size_t n = 0; n < k; ++n) {
        const auto& tj = d.trajectories[all[n].second];
        std::vector<double> dist;
        for (int o : tj.observations) {
            const auto& f = features[static_cast<std::size_t>(o)];
            double s = 0.0;
            for (std::size_t c = 0; c < f.size(); ++c) s += (f[c] - target[c]) * (f[c] - target[c]);
            dist.push_back(s);
        }
        const auto best = static_cast<std::size_t>(std::min_element(dist.begin(), dist.end()) - dist.begin());
        out.push_back({all[n].second, best});
    }
    return out;
}

/// Ranks by counting: 1 + #{smaller} + (#{equal} - 1) / 2.
inline std::vector<double> counting_ranks(const std::vector<double>& x) {
    std::vector<double> r(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        double less = 0.0;
        double equal = 0.0;
        for (double y : x) {
            if (y < x[i]) less += 1.0;
            if (y == x[i]) equal += 1.0;
        }
        r[i] = 1.0 + less + (equal - 1.0) / 2.0;
    }
    return r;
}

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    const double n = static_cast<double>(a.size());
    double ma = 0.0;
    double mb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += a[i] / n;
        mb += b[i] / n;
    }
    double sab = 0.0;
    double saa = 0.0;
    double sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    return sab / std::sqrt(saa * sbb);
}

} // namespace hope::testing
