#include "hope/estimators.hpp"

#include "hope/errors.hpp"
#include "hope/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace hope {

namespace {

template <typename BehaviorProb>
ImportanceRatios ratios_impl(const Dataset& dataset, const Policy& target, BehaviorProb behavior_prob) {
    ImportanceRatios w;
    w.step.resize(dataset.size());
    w.cumulative.resize(dataset.size());
    w.weight.resize(dataset.size());
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        const auto& traj = dataset.trajectories[i];
        auto& step = w.step[i];
        auto& cumulative = w.cumulative[i];
        step.resize(traj.length());
        cumulative.resize(traj.length());
        double log_sum = 0.0;
        for (std::size_t t = 0; t < traj.length(); ++t) {
            const int o = traj.observations[t];
            const int a = traj.actions[t];
            const double pi = target.prob(o, a);
            const double beta = behavior_prob(i, t);
            if (pi == 0.0) {
                step[t] = 0.0;
                log_sum = -std::numeric_limits<double>::infinity();
            } else {
                if (!(beta > 0.0)) throw SupportViolation(o, a);
                step[t] = pi / beta;
                log_sum += std::log(pi) - std::log(beta);
            }
            cumulative[t] = std::exp(log_sum);
        }
        w.weight[i] = cumulative.empty() ? 1.0 : cumulative.back();
    }
    return w;
}

double return_of(const EventRewards& rewards, std::size_t i, double gamma) {
    return discounted_return(rewards.at(i), gamma);
}

void check_rows(std::span<const std::size_t> rows) {
    if (rows.empty()) throw std::invalid_argument("estimator needs at least one trajectory");
}

double wis_over(const ImportanceRatios& w, const EventRewards& rewards, double gamma,
                std::span<const std::size_t> rows) {
    double num = 0.0;
    double den = 0.0;
    for (std::size_t i : rows) {
        num += w.weight[i] * return_of(rewards, i, gamma);
        den += w.weight[i];
    }
    if (den == 0.0) throw DegenerateWeights("importance weights sum to zero");
    return num / den;
}

} // namespace

ImportanceRatios compute_ratios(const Dataset& dataset, const Policy& target, const Policy& behavior) {
    return ratios_impl(dataset, target, [&](std::size_t i, std::size_t t) {
        const auto& traj = dataset.trajectories[i];
        return behavior.prob(traj.observations[t], traj.actions[t]);
    });
}

ImportanceRatios compute_ratios_stored(const Dataset& dataset, const Policy& target) {
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        if (!dataset.trajectories[i].behavior_probs) {
            throw std::invalid_argument("trajectory " + std::to_string(i) + " has no stored behavior probabilities");
        }
    }
    return ratios_impl(dataset, target,
                       [&](std::size_t i, std::size_t t) { return (*dataset.trajectories[i].behavior_probs)[t]; });
}

double importance_weight(const Trajectory& trajectory, const Policy& target, const Policy& behavior) {
    Dataset one{{trajectory}, target.n_obs(), target.n_act(), 1.0};
    return compute_ratios(one, target, behavior).weight[0];
}

std::vector<std::size_t> all_rows(std::size_t n) {
    std::vector<std::size_t> rows(n);
    for (std::size_t i = 0; i < n; ++i) rows[i] = i;
    return rows;
}

double is_estimate(const ImportanceRatios& w, const EventRewards& rewards, double gamma,
                   std::span<const std::size_t> rows) {
    check_rows(rows);
    double total = 0.0;
    for (std::size_t i : rows) total += w.weight[i] * return_of(rewards, i, gamma);
    return total / static_cast<double>(rows.size());
}

double wis_estimate(const ImportanceRatios& w, const EventRewards& rewards, double gamma,
                    std::span<const std::size_t> rows) {
    check_rows(rows);
    return wis_over(w, rewards, gamma, rows);
}

double pdis_estimate(const ImportanceRatios& w, const EventRewards& rewards, double gamma,
                     std::span<const std::size_t> rows) {
    check_rows(rows);
    double total = 0.0;
    for (std::size_t i : rows) {
        const auto& r = rewards.at(i);
        double sum = 0.0;
        double discount = 1.0;
        for (std::size_t t = 0; t < r.size(); ++t) {
            sum += w.cumulative[i][t] * (discount * r[t]);
            discount *= gamma;
        }
        total += sum;
    }
    return total / static_cast<double>(rows.size());
}

double phwis_estimate(const ImportanceRatios& w, const EventRewards& rewards, double gamma,
                      std::span<const std::size_t> rows) {
    check_rows(rows);
    std::map<std::size_t, std::vector<std::size_t>> groups;
    for (std::size_t i : rows) groups[rewards.at(i).size()].push_back(i);
    double blended = 0.0;
    double share_total = 0.0;
    for (const auto& [length, members] : groups) {
        double den = 0.0;
        for (std::size_t i : members) den += w.weight[i];
        if (den == 0.0) continue;
        const double share = static_cast<double>(members.size()) / static_cast<double>(rows.size());
        blended += share * wis_over(w, rewards, gamma, members);
        share_total += share;
    }
    if (share_total == 0.0) throw DegenerateWeights("importance weights sum to zero in every length group");
    return share_total == 1.0 ? blended : blended / share_total;
}

double fqe_estimate(const Dataset& dataset, const Policy& target, const QTable& qhat,
                    std::span<const std::size_t> rows) {
    check_rows(rows);
    double total = 0.0;
    for (std::size_t i : rows) total += qhat.state_value(dataset.trajectories.at(i).observations.front(), target);
    return total / static_cast<double>(rows.size());
}

double dr_estimate(const Dataset& dataset, const ImportanceRatios& w, const EventRewards& rewards, double gamma,
                   const Policy& target, const QTable& qhat, std::span<const std::size_t> rows) {
    check_rows(rows);
    double total = 0.0;
    for (std::size_t i : rows) {
        const auto& traj = dataset.trajectories.at(i);
        const auto& r = rewards.at(i);
        double sum = qhat.state_value(traj.observations.front(), target);
        double discount = 1.0;
        for (std::size_t t = 0; t < traj.length(); ++t) {
            const double next = t + 1 < traj.length() ? qhat.state_value(traj.observations[t + 1], target) : 0.0;
            const double correction = r[t] - qhat(traj.observations[t], traj.actions[t]) + gamma * next;
            sum += w.cumulative[i][t] * (discount * correction);
            discount *= gamma;
        }
        total += sum;
    }
    return total / static_cast<double>(rows.size());
}

double wdr_estimate(const Dataset& dataset, const ImportanceRatios& w, const EventRewards& rewards, double gamma,
                    const Policy& target, const QTable& qhat, std::span<const std::size_t> rows) {
    check_rows(rows);
    std::size_t horizon = 0;
    for (std::size_t i : rows) horizon = std::max(horizon, dataset.trajectories.at(i).length());
    const double n = static_cast<double>(rows.size());

    // Cumulative ratio of row i at step t, carried past the end of the trajectory.
    auto rho = [&](std::size_t i, std::size_t t) {
        const auto& c = w.cumulative[i];
        return c[std::min(t, c.size() - 1)];
    };

    double total = 0.0;
    double discount = 1.0;
    double previous_den = 0.0;
    for (std::size_t t = 0; t < horizon; ++t) {
        double den = 0.0;
        for (std::size_t i : rows) den += rho(i, t);
        double step_sum = 0.0;
        for (std::size_t i : rows) {
            const auto& traj = dataset.trajectories[i];
            if (t >= traj.length()) continue;
            const double weight = den > 0.0 ? rho(i, t) / den : 0.0;
            double previous = 1.0 / n;
            if (t > 0) previous = previous_den > 0.0 ? rho(i, t - 1) / previous_den : 0.0;
            const int o = traj.observations[t];
            step_sum += weight * (rewards[i][t] - qhat(o, traj.actions[t])) + previous * qhat.state_value(o, target);
        }
        total += discount * step_sum;
        discount *= gamma;
        previous_den = den;
    }
    return total;
}

double is_estimate(const Dataset& dataset, const Policy& target, const Policy& behavior, const EventRewards& rewards,
                   double gamma) {
    return is_estimate(compute_ratios(dataset, target, behavior), rewards, gamma, all_rows(dataset.size()));
}

double wis_estimate(const Dataset& dataset, const Policy& target, const Policy& behavior, const EventRewards& rewards,
                    double gamma) {
    return wis_estimate(compute_ratios(dataset, target, behavior), rewards, gamma, all_rows(dataset.size()));
}

double pdis_estimate(const Dataset& dataset, const Policy& target, const Policy& behavior,
                     const EventRewards& rewards, double gamma) {
    return pdis_estimate(compute_ratios(dataset, target, behavior), rewards, gamma, all_rows(dataset.size()));
}

double phwis_estimate(const Dataset& dataset, const Policy& target, const Policy& behavior,
                      const EventRewards& rewards, double gamma) {
    return phwis_estimate(compute_ratios(dataset, target, behavior), rewards, gamma, all_rows(dataset.size()));
}

double fqe_estimate(const Dataset& dataset, const Policy& target, const EventRewards& rewards, double gamma,
                    const QFitOptions& options) {
    const QTable q = fit_q_policy(dataset, rewards, gamma, target, options);
    return fqe_estimate(dataset, target, q, all_rows(dataset.size()));
}

double dr_estimate(const Dataset& dataset, const Policy& target, const Policy& behavior, const EventRewards& rewards,
                   double gamma, const QTable& qhat) {
    return dr_estimate(dataset, compute_ratios(dataset, target, behavior), rewards, gamma, target, qhat,
                       all_rows(dataset.size()));
}

double wdr_estimate(const Dataset& dataset, const Policy& target, const Policy& behavior,
                    const EventRewards& rewards, double gamma, const QTable& qhat) {
    return wdr_estimate(dataset, compute_ratios(dataset, target, behavior), rewards, gamma, target, qhat,
                        all_rows(dataset.size()));
}

double hope_estimate(const Dataset& dataset, const Policy& target, const Policy& behavior, const EventRewards& rhat,
                     double gamma) {
    return wis_estimate(dataset, target, behavior, rhat, gamma);
}

EventRewards soft_rewards(const Dataset& dataset, const EventRewards& preliminary, const NeighborIndex& index) {
    return reconstruct(dataset, preliminary, CriticalSet::all(dataset.n_obs), index);
}

EventRewards rand_hope_rewards(const Dataset& dataset, const EventRewards& preliminary, const FeatureTable& features,
                               const CriticalSet& critical, const RandHopeOptions& options, std::size_t repetition) {
    const std::uint64_t seed = mix64(derive_stream(options.seed ^ kRandomNeighborSalt, repetition));
    const NeighborIndex index = random_neighbors(dataset, features, options.k, &critical, seed, options.threads);
    return reconstruct(dataset, preliminary, critical, index);
}

EventRewards rand_hope_mean_rewards(const Dataset& dataset, const EventRewards& preliminary,
                                    const FeatureTable& features, const CriticalSet& critical,
                                    const RandHopeOptions& options) {
    if (options.repetitions == 0) throw std::invalid_argument("Rand-HOPE needs at least one repetition");
    EventRewards mean = preliminary;
    for (auto& row : mean) std::fill(row.begin(), row.end(), 0.0);
    for (std::size_t r = 0; r < options.repetitions; ++r) {
        const auto rep = rand_hope_rewards(dataset, preliminary, features, critical, options, r);
        for (std::size_t i = 0; i < mean.size(); ++i) {
            for (std::size_t t = 0; t < mean[i].size(); ++t) mean[i][t] += rep[i][t];
        }
    }
    const double scale = static_cast<double>(options.repetitions);
    for (auto& row : mean) {
        for (double& x : row) x /= scale;
    }
    return mean;
}

double rand_hope_estimate(const Dataset& dataset, const Policy& target, const Policy& behavior,
                          const EventRewards& preliminary, const FeatureTable& features, const CriticalSet& critical,
                          double gamma, const RandHopeOptions& options) {
    if (options.repetitions == 0) throw std::invalid_argument("Rand-HOPE needs at least one repetition");
    const auto w = compute_ratios(dataset, target, behavior);
    const auto rows = all_rows(dataset.size());
    double total = 0.0;
    for (std::size_t r = 0; r < options.repetitions; ++r) {
        total += wis_estimate(w, rand_hope_rewards(dataset, preliminary, features, critical, options, r), gamma, rows);
    }
    return total / static_cast<double>(options.repetitions);
}

double normalized_return(std::span<const double> rewards, double gamma, double g_lb, double g_ub) {
    if (!(g_ub > g_lb)) throw std::range_error("normalized return needs g_ub > g_lb");
    const double raw = discounted_return(rewards, gamma);
    if (raw < g_lb || raw > g_ub) throw std::range_error("return outside [g_lb, g_ub]");
    return (raw - g_lb) / (g_ub - g_lb);
}

std::pair<double, double> return_bounds(double r_min, double r_max, double gamma, std::size_t horizon) {
    double scale = 0.0;
    double discount = 1.0;
    for (std::size_t t = 0; t < horizon; ++t) {
        scale += discount;
        discount *= gamma;
    }
    return {r_min * scale, r_max * scale};
}

const std::vector<std::string>& registered_estimators() {
    static const std::vector<std::string> names{"is",   "wis",  "pdis",        "phwis",     "fqe",      "dr",
                                                "wdr",  "hope", "sparse_hope", "soft_hope", "rand_hope"};
    return names;
}

std::string default_channel(const std::string& name) { return estimator_spec(name).channel; }

EstimatorSpec estimator_spec(const std::string& name) {
    static const std::map<std::string, EstimatorKind> kinds{
        {"is", EstimatorKind::is},          {"wis", EstimatorKind::wis},        {"pdis", EstimatorKind::pdis},
        {"phwis", EstimatorKind::phwis},    {"fqe", EstimatorKind::fqe},        {"dr", EstimatorKind::dr},
        {"wdr", EstimatorKind::wdr},        {"hope", EstimatorKind::wis},       {"sparse_hope", EstimatorKind::wis},
        {"soft_hope", EstimatorKind::wis},  {"rand_hope", EstimatorKind::wis},
    };
    const auto it = kinds.find(name);
    if (it == kinds.end()) throw std::invalid_argument("unknown estimator: " + name);
    EstimatorSpec spec;
    spec.name = name;
    spec.kind = it->second;
    spec.channel = (name == "hope" || name == "sparse_hope" || name == "soft_hope" || name == "rand_hope") ? name
                                                                                                           : "sparse";
    return spec;
}

std::vector<std::optional<double>> run_estimators(const std::vector<EstimatorSpec>& specs,
                                                  const EvaluationContext& context, const Policy& target,
                                                  const ImportanceRatios& ratios, std::span<const std::size_t> rows) {
    const Dataset& dataset = *context.dataset;
    std::map<std::string, QTable> q_cache;
    auto channel = [&](const std::string& name) -> const EventRewards& {
        const auto it = context.channels->find(name);
        if (it == context.channels->end()) throw std::invalid_argument("reward channel not available: " + name);
        return it->second;
    };
    auto qhat = [&](const std::string& name) -> const QTable& {
        auto it = q_cache.find(name);
        if (it == q_cache.end()) {
            it = q_cache
                     .emplace(name, fit_q_policy(dataset, channel(name), context.gamma, target, context.fqe_options,
                                                 rows))
                     .first;
        }
        return it->second;
    };

    std::vector<std::optional<double>> out(specs.size());
    for (std::size_t s = 0; s < specs.size(); ++s) {
        const auto& spec = specs[s];
        const EventRewards& r = channel(spec.channel);
        try {
            switch (spec.kind) {
                case EstimatorKind::is: out[s] = is_estimate(ratios, r, context.gamma, rows); break;
                case EstimatorKind::wis: out[s] = wis_estimate(ratios, r, context.gamma, rows); break;
                case EstimatorKind::pdis: out[s] = pdis_estimate(ratios, r, context.gamma, rows); break;
                case EstimatorKind::phwis: out[s] = phwis_estimate(ratios, r, context.gamma, rows); break;
                case EstimatorKind::fqe: out[s] = fqe_estimate(dataset, target, qhat(spec.channel), rows); break;
                case EstimatorKind::dr:
                    out[s] = dr_estimate(dataset, ratios, r, context.gamma, target, qhat(spec.channel), rows);
                    break;
                case EstimatorKind::wdr:
                    out[s] = wdr_estimate(dataset, ratios, r, context.gamma, target, qhat(spec.channel), rows);
                    break;
            }
        } catch (const Error&) {
            out[s] = std::nullopt;
        }
    }
    return out;
}

nlohmann::ordered_json EstimateResult::to_json() const {
    nlohmann::ordered_json j;
    j["estimator"] = estimator;
    j["reward_source"] = reward_source;
    j["point_estimate"] = point_estimate ? nlohmann::ordered_json(*point_estimate) : nlohmann::ordered_json(nullptr);
    if (bootstrap_samples) {
        j["bootstrap_samples"] = *bootstrap_samples;
        j["bootstrap_failures"] = bootstrap_failures;
    }
    return j;
}

} // namespace hope
