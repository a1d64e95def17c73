#include "hope/sepsis.hpp"

#include "hope/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <stdexcept>

namespace hope::sepsis {

namespace {

// Distribution over the levels of one vital; unused tail entries stay zero.
using LevelDist = std::array<double, 5>;

LevelDist point_mass(int level) {
    LevelDist d{};
    d[static_cast<std::size_t>(level)] = 1.0;
    return d;
}

// Each kernel moves a level with probability p; the sampler consumes exactly one
// uniform per kernel so exact and sampled dynamics stay in lockstep.
enum class Move { toward_normal, up, down, fluctuate };

int moved_level(int level, int n_levels, int normal, Move move, bool upward) {
    switch (move) {
    case Move::toward_normal:
        if (level < normal) return level + 1;
        if (level > normal) return level - 1;
        return level;
    case Move::up:
        return std::min(level + 1, n_levels - 1);
    case Move::down:
        return std::max(level - 1, 0);
    case Move::fluctuate:
        return upward ? std::min(level + 1, n_levels - 1) : std::max(level - 1, 0);
    }
    return level;
}

LevelDist apply_kernel(const LevelDist& in, int n_levels, int normal, Move move, double p) {
    LevelDist out{};
    for (int l = 0; l < n_levels; ++l) {
        const double mass = in[static_cast<std::size_t>(l)];
        if (mass == 0.0) continue;
        if (move == Move::fluctuate) {
            out[static_cast<std::size_t>(moved_level(l, n_levels, normal, move, true))] += mass * p * 0.5;
            out[static_cast<std::size_t>(moved_level(l, n_levels, normal, move, false))] += mass * p * 0.5;
        } else {
            out[static_cast<std::size_t>(moved_level(l, n_levels, normal, move, true))] += mass * p;
        }
        out[static_cast<std::size_t>(l)] += mass * (1.0 - p);
    }
    return out;
}

int sample_kernel(int level, int n_levels, int normal, Move move, double p, Rng& rng) {
    const double u = rng.uniform();
    if (move == Move::fluctuate) {
        if (u < 0.5 * p) return moved_level(level, n_levels, normal, move, true);
        if (u < p) return moved_level(level, n_levels, normal, move, false);
        return level;
    }
    return u < p ? moved_level(level, n_levels, normal, move, true) : level;
}

struct Kernel {
    Move move;
    double p;
};

struct VitalPlan {
    std::vector<Kernel> heart_rate;
    std::vector<Kernel> blood_pressure;
    std::vector<Kernel> oxygen;
    std::vector<Kernel> glucose;
};

// Ordered kernels applied to each vital for a (state, action) pair.
VitalPlan plan_for(const PatientState& s, int action, const TransitionParams& p) {
    const bool abx = (action & kAntibiotics) != 0;
    const bool vaso = (action & kVasopressors) != 0;
    const bool vent = (action & kVentilation) != 0;
    const bool abx_withdrawn = s.antibiotics && !abx;
    const bool vaso_withdrawn = s.vasopressors && !vaso;
    const bool vent_withdrawn = s.ventilation && !vent;

    VitalPlan plan;
    if (abx) {
        plan.heart_rate.push_back({Move::toward_normal, p.antibiotic_normalize});
    } else {
        plan.heart_rate.push_back({Move::fluctuate, p.fluctuation});
    }
    if (abx_withdrawn) plan.heart_rate.push_back({Move::up, p.withdrawal_revert});

    if (abx) plan.blood_pressure.push_back({Move::toward_normal, p.antibiotic_normalize});
    if (vaso) plan.blood_pressure.push_back({Move::up, p.vasopressor_bp_raise});
    if (!abx && !vaso) plan.blood_pressure.push_back({Move::fluctuate, p.fluctuation});
    if (abx_withdrawn) plan.blood_pressure.push_back({Move::up, p.withdrawal_revert});
    if (vaso_withdrawn) plan.blood_pressure.push_back({Move::down, p.withdrawal_revert});

    if (vent) {
        plan.oxygen.push_back({Move::up, p.ventilation_normalize});
    } else {
        plan.oxygen.push_back({Move::fluctuate, p.fluctuation});
    }
    if (vent_withdrawn) plan.oxygen.push_back({Move::down, p.withdrawal_revert});

    plan.glucose.push_back({Move::fluctuate, s.diabetic ? p.diabetic_glucose_fluctuation : p.fluctuation});
    if (vaso) {
        plan.glucose.push_back(
            {Move::up, s.diabetic ? p.vasopressor_glucose_raise_diabetic : p.vasopressor_glucose_raise});
    }
    return plan;
}

LevelDist run_exact(int level, int n_levels, int normal, const std::vector<Kernel>& kernels) {
    LevelDist d = point_mass(level);
    for (const auto& k : kernels) d = apply_kernel(d, n_levels, normal, k.move, k.p);
    return d;
}

int run_sampled(int level, int n_levels, int normal, const std::vector<Kernel>& kernels, Rng& rng) {
    for (const auto& k : kernels) level = sample_kernel(level, n_levels, normal, k.move, k.p, rng);
    return level;
}

void check_probability(double p, const char* name) {
    if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument(std::string("probability out of [0,1]: ") + name);
}

template <std::size_t N>
void check_distribution(const std::array<double, N>& d, const char* name) {
    double total = 0.0;
    for (double p : d) {
        check_probability(p, name);
        total += p;
    }
    if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument(std::string("distribution does not sum to 1: ") + name);
}

// Dense cache of next-state distributions for every (state, action).
struct TransitionModel {
    std::vector<std::vector<std::pair<int, double>>> rows;  // index s * 8 + a

    explicit TransitionModel(const TransitionParams& params) : rows(kNumStates * kNumActions) {
        for (int s = 0; s < kNumStates; ++s) {
            const PatientState state = decode_state(s);
            for (int a = 0; a < kNumActions; ++a) {
                rows[static_cast<std::size_t>(s * kNumActions + a)] = next_state_distribution(state, a, params);
            }
        }
    }

    const std::vector<std::pair<int, double>>& at(int s, int a) const {
        return rows[static_cast<std::size_t>(s * kNumActions + a)];
    }
};

struct TerminalInfo {
    std::vector<double> reward;
    std::vector<unsigned char> terminal;

    TerminalInfo() : reward(kNumStates, 0.0), terminal(kNumStates, 0) {
        for (int s = 0; s < kNumStates; ++s) {
            const Outcome o = terminal_check(decode_state(s));
            terminal[static_cast<std::size_t>(s)] = o != Outcome::none;
            reward[static_cast<std::size_t>(s)] = o == Outcome::discharge ? 1.0 : (o == Outcome::death ? -1.0 : 0.0);
        }
    }
};

const TerminalInfo& terminal_info() {
    static const TerminalInfo info;
    return info;
}

} // namespace

void SimConfig::validate() const {
    if (horizon < 1) throw std::invalid_argument("horizon must be >= 1");
    if (!(gamma > 0.0 && gamma <= 1.0)) throw std::invalid_argument("gamma must lie in (0, 1]");
    const auto& t = transition;
    check_probability(t.fluctuation, "fluctuation");
    check_probability(t.diabetic_glucose_fluctuation, "diabetic_glucose_fluctuation");
    check_probability(t.antibiotic_normalize, "antibiotic_normalize");
    check_probability(t.ventilation_normalize, "ventilation_normalize");
    check_probability(t.vasopressor_bp_raise, "vasopressor_bp_raise");
    check_probability(t.vasopressor_glucose_raise, "vasopressor_glucose_raise");
    check_probability(t.vasopressor_glucose_raise_diabetic, "vasopressor_glucose_raise_diabetic");
    check_probability(t.withdrawal_revert, "withdrawal_revert");
    check_probability(initial.diabetic_rate, "diabetic_rate");
    check_distribution(initial.heart_rate, "initial.heart_rate");
    check_distribution(initial.blood_pressure, "initial.blood_pressure");
    check_distribution(initial.oxygen, "initial.oxygen");
    check_distribution(initial.glucose, "initial.glucose");
}

std::string to_string(Outcome outcome) {
    switch (outcome) {
    case Outcome::discharge: return "discharge";
    case Outcome::death: return "death";
    case Outcome::none: break;
    }
    return "none";
}

int encode_state(const PatientState& s) {
    int id = s.diabetic ? 1 : 0;
    id = id * kHeartRateLevels + s.heart_rate;
    id = id * kBloodPressureLevels + s.blood_pressure;
    id = id * kOxygenLevels + s.oxygen;
    id = id * kGlucoseLevels + s.glucose;
    id = id * 8 + s.treatments();
    return id;
}

PatientState decode_state(int id) {
    if (id < 0 || id >= kNumStates) throw std::out_of_range("state id out of range: " + std::to_string(id));
    PatientState s;
    const int treatments = id % 8;
    id /= 8;
    s.glucose = id % kGlucoseLevels;
    id /= kGlucoseLevels;
    s.oxygen = id % kOxygenLevels;
    id /= kOxygenLevels;
    s.blood_pressure = id % kBloodPressureLevels;
    id /= kBloodPressureLevels;
    s.heart_rate = id % kHeartRateLevels;
    id /= kHeartRateLevels;
    s.diabetic = id == 1;
    s.antibiotics = (treatments & kAntibiotics) != 0;
    s.vasopressors = (treatments & kVasopressors) != 0;
    s.ventilation = (treatments & kVentilation) != 0;
    return s;
}

PatientState apply_mask(PatientState s, const ObservationMask& mask) {
    if (mask.diabetic) s.diabetic = false;
    if (mask.heart_rate) s.heart_rate = 1;
    if (mask.blood_pressure) s.blood_pressure = 1;
    if (mask.oxygen) s.oxygen = 1;
    if (mask.glucose) s.glucose = 2;
    if (mask.treatments) {
        s.antibiotics = false;
        s.vasopressors = false;
        s.ventilation = false;
    }
    return s;
}

int observe(const PatientState& state, const ObservationMask& mask) { return encode_state(apply_mask(state, mask)); }

int abnormal_vitals(const PatientState& s) {
    return (s.heart_rate != 1) + (s.blood_pressure != 1) + (s.oxygen != 1) + (s.glucose != 2);
}

Outcome terminal_check(const PatientState& s) {
    const int abnormal = abnormal_vitals(s);
    if (abnormal >= 3) return Outcome::death;
    if (abnormal == 0 && s.treatments() == 0) return Outcome::discharge;
    return Outcome::none;
}

StepResult step(const PatientState& state, int action, const SimConfig& config, Rng& rng, int step_index) {
    if (terminal_check(state) != Outcome::none) throw std::logic_error("cannot step a terminal state");
    if (action < 0 || action >= kNumActions) throw std::out_of_range("action out of range");

    const VitalPlan plan = plan_for(state, action, config.transition);
    StepResult result;
    PatientState& next = result.next;
    next.diabetic = state.diabetic;
    next.heart_rate = run_sampled(state.heart_rate, kHeartRateLevels, 1, plan.heart_rate, rng);
    next.blood_pressure = run_sampled(state.blood_pressure, kBloodPressureLevels, 1, plan.blood_pressure, rng);
    next.oxygen = run_sampled(state.oxygen, kOxygenLevels, 1, plan.oxygen, rng);
    next.glucose = run_sampled(state.glucose, kGlucoseLevels, 2, plan.glucose, rng);
    next.antibiotics = (action & kAntibiotics) != 0;
    next.vasopressors = (action & kVasopressors) != 0;
    next.ventilation = (action & kVentilation) != 0;

    result.outcome = terminal_check(next);
    result.reward = result.outcome == Outcome::discharge ? 1.0 : (result.outcome == Outcome::death ? -1.0 : 0.0);
    result.done = result.outcome != Outcome::none || step_index + 1 >= config.horizon;
    return result;
}

std::vector<std::pair<int, double>> next_state_distribution(const PatientState& state, int action,
                                                            const TransitionParams& params) {
    const VitalPlan plan = plan_for(state, action, params);
    const LevelDist hr = run_exact(state.heart_rate, kHeartRateLevels, 1, plan.heart_rate);
    const LevelDist bp = run_exact(state.blood_pressure, kBloodPressureLevels, 1, plan.blood_pressure);
    const LevelDist ox = run_exact(state.oxygen, kOxygenLevels, 1, plan.oxygen);
    const LevelDist gl = run_exact(state.glucose, kGlucoseLevels, 2, plan.glucose);

    std::vector<std::pair<int, double>> out;
    PatientState next = state;
    next.antibiotics = (action & kAntibiotics) != 0;
    next.vasopressors = (action & kVasopressors) != 0;
    next.ventilation = (action & kVentilation) != 0;
    for (int h = 0; h < kHeartRateLevels; ++h) {
        if (hr[h] == 0.0) continue;
        for (int b = 0; b < kBloodPressureLevels; ++b) {
            if (bp[b] == 0.0) continue;
            for (int o = 0; o < kOxygenLevels; ++o) {
                if (ox[o] == 0.0) continue;
                for (int g = 0; g < kGlucoseLevels; ++g) {
                    if (gl[g] == 0.0) continue;
                    next.heart_rate = h;
                    next.blood_pressure = b;
                    next.oxygen = o;
                    next.glucose = g;
                    out.emplace_back(encode_state(next), hr[h] * bp[b] * ox[o] * gl[g]);
                }
            }
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<double> initial_distribution(const InitialParams& p) {
    std::vector<double> dist(kNumStates, 0.0);
    double total = 0.0;
    for (int s = 0; s < kNumStates; ++s) {
        const PatientState st = decode_state(s);
        if (st.treatments() != 0 || terminal_check(st) != Outcome::none) continue;
        const double mass = (st.diabetic ? p.diabetic_rate : 1.0 - p.diabetic_rate) *
                            p.heart_rate[st.heart_rate] * p.blood_pressure[st.blood_pressure] *
                            p.oxygen[st.oxygen] * p.glucose[st.glucose];
        dist[static_cast<std::size_t>(s)] = mass;
        total += mass;
    }
    if (total <= 0.0) throw std::invalid_argument("initial distribution puts no mass on non-terminal states");
    for (double& d : dist) d /= total;
    return dist;
}

std::array<double, 8> observation_features(int observation) {
    const PatientState s = decode_state(observation);
    return {s.diabetic ? 1.0 : 0.0,
            static_cast<double>(s.heart_rate),
            static_cast<double>(s.blood_pressure),
            static_cast<double>(s.oxygen),
            static_cast<double>(s.glucose),
            s.antibiotics ? 1.0 : 0.0,
            s.vasopressors ? 1.0 : 0.0,
            s.ventilation ? 1.0 : 0.0};
}

double observation_distance(int a, int b) {
    const auto fa = observation_features(a);
    const auto fb = observation_features(b);
    double sq = 0.0;
    for (std::size_t k = 0; k < fa.size(); ++k) sq += (fa[k] - fb[k]) * (fa[k] - fb[k]);
    return std::sqrt(sq);
}

std::vector<std::vector<double>> feature_table() {
    std::vector<std::vector<double>> table(kNumStates);
    for (int o = 0; o < kNumStates; ++o) {
        const auto f = observation_features(o);
        table[static_cast<std::size_t>(o)].assign(f.begin(), f.end());
    }
    return table;
}

namespace {

int sample_initial_state(const std::vector<double>& cdf, Rng& rng) {
    const double u = rng.uniform() * cdf.back();
    auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    if (it == cdf.end()) --it;
    // Skip zero-mass ids that share the cumulative value.
    auto idx = static_cast<std::size_t>(it - cdf.begin());
    while (idx > 0 && cdf[idx] == cdf[idx - 1]) --idx;
    return static_cast<int>(idx);
}

std::vector<double> cumulative(const std::vector<double>& dist) {
    std::vector<double> cdf(dist.size());
    std::partial_sum(dist.begin(), dist.end(), cdf.begin());
    return cdf;
}

Trajectory rollout(const Policy& policy, const SimConfig& config, const std::vector<double>& cdf, Rng& rng) {
    PatientState state = decode_state(sample_initial_state(cdf, rng));
    Trajectory traj;
    std::vector<double> truth;
    std::vector<double> beta;
    for (int t = 0; t < config.horizon; ++t) {
        const int obs = observe(state, config.mask);
        const int action = policy.sample(obs, rng.uniform());
        const StepResult res = step(state, action, config, rng, t);
        traj.observations.push_back(obs);
        traj.actions.push_back(action);
        truth.push_back(res.reward);
        beta.push_back(policy.prob(obs, action));
        state = res.next;
        if (res.done) break;
    }
    traj.aggregated_reward = discounted_return(truth, config.gamma);
    traj.ground_truth_rewards = std::move(truth);
    traj.behavior_probs = std::move(beta);
    return traj;
}

} // namespace

Trajectory simulate_trajectory(const Policy& policy, const SimConfig& config, Rng& rng) {
    const auto cdf = cumulative(initial_distribution(config.initial));
    return rollout(policy, config, cdf, rng);
}

Dataset simulate_dataset(const Policy& policy, const SimConfig& config, std::size_t n, std::size_t threads) {
    config.validate();
    if (policy.n_obs() != kNumStates || policy.n_act() != kNumActions) {
        throw std::invalid_argument("policy does not match the sepsis observation/action space");
    }
    const auto cdf = cumulative(initial_distribution(config.initial));
    Dataset data;
    data.n_obs = kNumStates;
    data.n_act = kNumActions;
    data.gamma = config.gamma;
    data.trajectories.resize(n);
    parallel_for(n, threads, [&](std::size_t i) {
        Rng rng(derive_stream(config.seed, i));
        data.trajectories[i] = rollout(policy, config, cdf, rng);
    });
    return data;
}

double true_policy_value(const Policy& policy, const SimConfig& config) {
    config.validate();
    const TransitionModel model(config.transition);
    const TerminalInfo& term = terminal_info();
    std::vector<int> obs_of(kNumStates);
    for (int s = 0; s < kNumStates; ++s) obs_of[static_cast<std::size_t>(s)] = observe(decode_state(s), config.mask);

    // value[s] with h steps to go; terminal successors contribute no continuation.
    std::vector<double> value(kNumStates, 0.0);
    std::vector<double> next_value(kNumStates, 0.0);
    for (int h = 1; h <= config.horizon; ++h) {
        for (int s = 0; s < kNumStates; ++s) {
            double v = 0.0;
            const int o = obs_of[static_cast<std::size_t>(s)];
            for (int a = 0; a < kNumActions; ++a) {
                const double pa = policy.prob(o, a);
                if (pa == 0.0) continue;
                double q = 0.0;
                for (const auto& [sn, p] : model.at(s, a)) {
                    const auto sn_idx = static_cast<std::size_t>(sn);
                    q += p * (term.reward[sn_idx] + (term.terminal[sn_idx] ? 0.0 : config.gamma * value[sn_idx]));
                }
                v += pa * q;
            }
            next_value[static_cast<std::size_t>(s)] = v;
        }
        std::swap(value, next_value);
    }
    const auto mu = initial_distribution(config.initial);
    double total = 0.0;
    for (int s = 0; s < kNumStates; ++s) total += mu[static_cast<std::size_t>(s)] * value[static_cast<std::size_t>(s)];
    return total;
}

Policy solve_optimal_policy(const SimConfig& config) {
    config.validate();
    const TransitionModel model(config.transition);
    const TerminalInfo& term = terminal_info();

    std::vector<double> value(kNumStates, 0.0);
    std::vector<double> q(static_cast<std::size_t>(kNumStates * kNumActions), 0.0);
    for (int h = 1; h <= config.horizon; ++h) {
        for (int s = 0; s < kNumStates; ++s) {
            for (int a = 0; a < kNumActions; ++a) {
                double acc = 0.0;
                for (const auto& [sn, p] : model.at(s, a)) {
                    const auto sn_idx = static_cast<std::size_t>(sn);
                    acc += p * (term.reward[sn_idx] + (term.terminal[sn_idx] ? 0.0 : config.gamma * value[sn_idx]));
                }
                q[static_cast<std::size_t>(s * kNumActions + a)] = acc;
            }
        }
        for (int s = 0; s < kNumStates; ++s) {
            const auto first = q.begin() + s * kNumActions;
            value[static_cast<std::size_t>(s)] = *std::max_element(first, first + kNumActions);
        }
    }

    // Average the full-horizon Q over hidden components, weighted by their marginals.
    const InitialParams& ip = config.initial;
    const ObservationMask& m = config.mask;
    std::vector<double> score(static_cast<std::size_t>(kNumStates * kNumActions), 0.0);
    for (int s = 0; s < kNumStates; ++s) {
        const PatientState st = decode_state(s);
        double w = 1.0;
        if (m.diabetic) w *= st.diabetic ? ip.diabetic_rate : 1.0 - ip.diabetic_rate;
        if (m.heart_rate) w *= ip.heart_rate[st.heart_rate];
        if (m.blood_pressure) w *= ip.blood_pressure[st.blood_pressure];
        if (m.oxygen) w *= ip.oxygen[st.oxygen];
        if (m.glucose) w *= ip.glucose[st.glucose];
        if (m.treatments) w *= 1.0 / 8.0;
        const int o = observe(st, m);
        for (int a = 0; a < kNumActions; ++a) {
            score[static_cast<std::size_t>(o * kNumActions + a)] += w * q[static_cast<std::size_t>(s * kNumActions + a)];
        }
    }
    std::vector<int> actions(kNumStates, 0);
    for (int o = 0; o < kNumStates; ++o) {
        const auto first = score.begin() + o * kNumActions;
        actions[static_cast<std::size_t>(o)] = static_cast<int>(std::max_element(first, first + kNumActions) - first);
    }
    return Policy::deterministic(actions, kNumActions);
}

namespace {

Policy force_antibiotics(const Policy& optimal, bool on) {
    std::vector<int> actions(optimal.n_obs());
    for (std::size_t o = 0; o < optimal.n_obs(); ++o) {
        const int a = optimal.greedy(static_cast<int>(o));
        actions[o] = on ? (a | kAntibiotics) : (a & ~kAntibiotics);
    }
    return Policy::deterministic(actions, optimal.n_act());
}

} // namespace

Policy with_antibiotics(const Policy& optimal) { return force_antibiotics(optimal, true); }
Policy without_antibiotics(const Policy& optimal) { return force_antibiotics(optimal, false); }

Policy epsilon_soft(const Policy& base, double epsilon) {
    if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw std::invalid_argument("epsilon must lie in [0, 1]");
    Policy out(base.n_obs(), base.n_act());
    std::vector<double> row(base.n_act());
    for (std::size_t o = 0; o < base.n_obs(); ++o) {
        const int best = base.greedy(static_cast<int>(o));
        for (std::size_t a = 0; a < base.n_act(); ++a) {
            row[a] = epsilon / static_cast<double>(base.n_act()) + (static_cast<int>(a) == best ? 1.0 - epsilon : 0.0);
        }
        out.set_row(static_cast<int>(o), row);
    }
    return out;
}

EvaluationPolicies evaluation_policies(const SimConfig& config) {
    Policy optimal = solve_optimal_policy(config);
    Policy with = with_antibiotics(optimal);
    Policy without = without_antibiotics(optimal);
    return {std::move(optimal), std::move(with), std::move(without)};
}

OutcomeSummary summarize_outcomes(const Dataset& dataset) {
    OutcomeSummary summary;
    double total = 0.0;
    for (const auto& traj : dataset.trajectories) {
        total += traj.aggregated_reward;
        if (!traj.ground_truth_rewards || traj.ground_truth_rewards->empty()) {
            ++summary.timed_out;
            continue;
        }
        const double last = traj.ground_truth_rewards->back();
        if (last > 0.0) {
            ++summary.discharged;
        } else if (last < 0.0) {
            ++summary.died;
        } else {
            ++summary.timed_out;
        }
    }
    if (!dataset.trajectories.empty()) summary.mean_return = total / static_cast<double>(dataset.size());
    return summary;
}

} // namespace hope::sepsis
