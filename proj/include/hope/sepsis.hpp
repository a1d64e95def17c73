#pragma once

// Synthetic sepsis treatment simulator.
//
// A patient has a diabetes flag, four discretized vitals and the three treatments that
// were active after the previous decision. Actions set the three treatment bits
// (bit 0 antibiotics, bit 1 vasopressors, bit 2 mechanical ventilation). Episodes end on
// discharge (+1), death (-1) or after `horizon` steps (0).

#include "hope/policy.hpp"
#include "hope/rng.hpp"
#include "hope/trajectory.hpp"

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace hope::sepsis {

inline constexpr int kNumStates = 1440;
inline constexpr int kNumActions = 8;

inline constexpr int kAntibiotics = 1;
inline constexpr int kVasopressors = 2;
inline constexpr int kVentilation = 4;

// Level conventions: heart rate and blood pressure 0 low, 1 normal, 2 high;
// oxygen 0 low, 1 normal; glucose 0 very low .. 2 normal .. 4 very high.
inline constexpr int kHeartRateLevels = 3;
inline constexpr int kBloodPressureLevels = 3;
inline constexpr int kOxygenLevels = 2;
inline constexpr int kGlucoseLevels = 5;

struct PatientState {
    bool diabetic = false;
    int heart_rate = 1;
    int blood_pressure = 1;
    int oxygen = 1;
    int glucose = 2;
    bool antibiotics = false;
    bool vasopressors = false;
    bool ventilation = false;

    int treatments() const noexcept {
        return (antibiotics ? kAntibiotics : 0) | (vasopressors ? kVasopressors : 0) |
               (ventilation ? kVentilation : 0);
    }
    bool operator==(const PatientState&) const = default;
};

/// State components hidden from emitted observations. Hidden components are collapsed
/// to a canonical value (not diabetic, normal vitals, treatments off) before encoding.
struct ObservationMask {
    bool diabetic = true;
    bool heart_rate = false;
    bool blood_pressure = false;
    bool oxygen = false;
    bool glucose = false;
    bool treatments = false;

    static ObservationMask none() { return ObservationMask{false, false, false, false, false, false}; }
    bool operator==(const ObservationMask&) const = default;
};

/// Per-step dynamics probabilities. Every vital moves by at most one level per kernel.
struct TransitionParams {
    // Untreated vitals move one level up or down (half each) with this probability.
    double fluctuation = 0.1;
    // Glucose fluctuation for diabetic patients.
    double diabetic_glucose_fluctuation = 0.3;
    // Antibiotics move heart rate and blood pressure one level toward normal.
    double antibiotic_normalize = 0.5;
    // Ventilation moves low oxygen to normal.
    double ventilation_normalize = 0.7;
    // Vasopressors raise blood pressure one level.
    double vasopressor_bp_raise = 0.7;
    // Vasopressors raise glucose one level; the diabetic branch is stronger.
    double vasopressor_glucose_raise = 0.5;
    double vasopressor_glucose_raise_diabetic = 0.9;
    // Withdrawing a treatment reverts its effect by one level.
    double withdrawal_revert = 0.1;

    bool operator==(const TransitionParams&) const = default;
};

/// Independent per-component distribution of the first state; terminal draws are
/// rejected (equivalently, the product distribution is conditioned on non-terminal).
struct InitialParams {
    double diabetic_rate = 0.2;
    std::array<double, 3> heart_rate{0.25, 0.5, 0.25};
    std::array<double, 3> blood_pressure{0.25, 0.5, 0.25};
    std::array<double, 2> oxygen{0.3, 0.7};
    std::array<double, 5> glucose{0.05, 0.15, 0.6, 0.15, 0.05};

    bool operator==(const InitialParams&) const = default;
};

struct SimConfig {
    int horizon = 5;
    double gamma = 0.99;
    TransitionParams transition;
    InitialParams initial;
    ObservationMask mask;
    std::uint64_t seed = 0;

    /// Throws std::invalid_argument when a probability is outside [0,1], a
    /// distribution does not sum to 1, horizon < 1 or gamma is outside (0,1].
    void validate() const;
    bool operator==(const SimConfig&) const = default;
};

enum class Outcome { none, discharge, death };

std::string to_string(Outcome outcome);

int encode_state(const PatientState& state);
/// Throws std::out_of_range for ids outside [0, 1440).
PatientState decode_state(int id);

PatientState apply_mask(PatientState state, const ObservationMask& mask);
int observe(const PatientState& state, const ObservationMask& mask);

/// Number of vitals outside the normal range, in [0, 4].
int abnormal_vitals(const PatientState& state);
Outcome terminal_check(const PatientState& state);

struct StepResult {
    PatientState next;
    double reward = 0.0;
    Outcome outcome = Outcome::none;
    bool done = false;
};

/// One transition. `step_index` is zero-based; the episode is done on a terminal
/// outcome or when step_index + 1 reaches the horizon. Stepping a terminal state
/// throws std::logic_error.
StepResult step(const PatientState& state, int action, const SimConfig& config, Rng& rng, int step_index = 0);

/// Exact next-state distribution for (state, action), as (state id, probability)
/// pairs with distinct ids sorted ascending.
std::vector<std::pair<int, double>> next_state_distribution(const PatientState& state, int action,
                                                            const TransitionParams& params);

/// Initial-state distribution over all 1440 ids.
std::vector<double> initial_distribution(const InitialParams& params);

/// Observation features for distance computations: diabetic flag, the four vital
/// levels and the three treatment flags.
std::array<double, 8> observation_features(int observation);
/// Euclidean distance between decoded feature vectors.
double observation_distance(int a, int b);
/// Feature table for every observation id.
std::vector<std::vector<double>> feature_table();

/// Rollout under `policy`, which acts on (masked) observation ids. The observable
/// channel carries no per-step rewards; true rewards go to the ground-truth sidecar
/// and the aggregated reward is their discounted sum. Behavior probabilities of the
/// chosen actions are recorded.
Trajectory simulate_trajectory(const Policy& policy, const SimConfig& config, Rng& rng);

/// n trajectories; trajectory i uses the stream derive_stream(config.seed, i).
Dataset simulate_dataset(const Policy& policy, const SimConfig& config, std::size_t n, std::size_t threads);

/// Expected discounted return of an observation-level policy, by exact finite-horizon
/// dynamic programming over the full state space.
double true_policy_value(const Policy& policy, const SimConfig& config);

/// Deterministic observation-level policy from finite-horizon value iteration on the
/// true MDP. Hidden components are averaged out with their initial-distribution
/// marginals (exact when the mask is empty).
Policy solve_optimal_policy(const SimConfig& config);

/// Optimal policy with the antibiotics bit forced on or off.
Policy with_antibiotics(const Policy& optimal);
Policy without_antibiotics(const Policy& optimal);

/// epsilon-soft perturbation of a deterministic policy.
Policy epsilon_soft(const Policy& base, double epsilon);

struct EvaluationPolicies {
    Policy optimal;
    Policy with_antibiotics;
    Policy without_antibiotics;
};

EvaluationPolicies evaluation_policies(const SimConfig& config);

/// Outcome tallies and mean aggregated reward of a simulated dataset.
struct OutcomeSummary {
    std::size_t discharged = 0;
    std::size_t died = 0;
    std::size_t timed_out = 0;
    double mean_return = 0.0;
};

OutcomeSummary summarize_outcomes(const Dataset& dataset);

} // namespace hope::sepsis
