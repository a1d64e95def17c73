#pragma once

// Off-policy value estimators sharing one importance-ratio engine.
//
// Every estimator reads a per-step reward channel (EventRewards). The sparse channel
// puts the aggregated reward on the final step; the HOPE family reads reconstructed
// rewards. Each estimator can run on a subset of trajectories given as row indices,
// which is how bootstrap replicas are evaluated without copying data.

#include "hope/critical.hpp"
#include "hope/neighbors.hpp"
#include "hope/policy.hpp"
#include "hope/trajectory.hpp"

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace hope {

/// Per-step likelihood ratios pi/beta and their running products.
struct ImportanceRatios {
    std::vector<std::vector<double>> step;
    std::vector<std::vector<double>> cumulative;
    // Full-trajectory weight w_i (the last cumulative ratio).
    std::vector<double> weight;
};

/// Ratios against a behavior policy table. A zero target probability gives ratio 0;
/// a zero behavior probability under a positive target probability throws
/// SupportViolation. Products are formed in log space.
ImportanceRatios compute_ratios(const Dataset& dataset, const Policy& target, const Policy& behavior);

/// Ratios against the behavior probabilities stored with each trajectory.
ImportanceRatios compute_ratios_stored(const Dataset& dataset, const Policy& target);

double importance_weight(const Trajectory& trajectory, const Policy& target, const Policy& behavior);

std::vector<std::size_t> all_rows(std::size_t n);

// Estimators over the trajectories in `rows`.

double is_estimate(const ImportanceRatios& w, const EventRewards& rewards, double gamma,
                   std::span<const std::size_t> rows);
/// Throws DegenerateWeights when the weights sum to 0.
double wis_estimate(const ImportanceRatios& w, const EventRewards& rewards, double gamma,
                    std::span<const std::size_t> rows);
double pdis_estimate(const ImportanceRatios& w, const EventRewards& rewards, double gamma,
                     std::span<const std::size_t> rows);
/// WIS within each trajectory-length group, blended by the group's share of the rows.
/// Groups whose weights sum to 0 are dropped and the remaining shares renormalized.
double phwis_estimate(const ImportanceRatios& w, const EventRewards& rewards, double gamma,
                      std::span<const std::size_t> rows);
/// Mean over rows of V^(o_1) = sum_a pi(a|o_1) Q^(o_1, a).
double fqe_estimate(const Dataset& dataset, const Policy& target, const QTable& qhat,
                    std::span<const std::size_t> rows);
/// Per trajectory V^(o_1) + sum_t gamma^(t-1) rho_t (r_t - Q^(o_t,a_t) + gamma V^(o_{t+1})),
/// averaged over rows. The final step has no successor.
double dr_estimate(const Dataset& dataset, const ImportanceRatios& w, const EventRewards& rewards, double gamma,
                   const Policy& target, const QTable& qhat, std::span<const std::size_t> rows);
/// Weighted DR: step-t ratios normalized across rows, with finished trajectories
/// carrying their last cumulative ratio.
double wdr_estimate(const Dataset& dataset, const ImportanceRatios& w, const EventRewards& rewards, double gamma,
                    const Policy& target, const QTable& qhat, std::span<const std::size_t> rows);

// Whole-dataset forms.

double is_estimate(const Dataset& dataset, const Policy& target, const Policy& behavior, const EventRewards& rewards,
                   double gamma);
double wis_estimate(const Dataset& dataset, const Policy& target, const Policy& behavior, const EventRewards& rewards,
                    double gamma);
double pdis_estimate(const Dataset& dataset, const Policy& target, const Policy& behavior,
                     const EventRewards& rewards, double gamma);
double phwis_estimate(const Dataset& dataset, const Policy& target, const Policy& behavior,
                      const EventRewards& rewards, double gamma);
/// Fits Q under the target policy on the dataset, then averages V^ over first steps.
double fqe_estimate(const Dataset& dataset, const Policy& target, const EventRewards& rewards, double gamma,
                    const QFitOptions& options = {});
double dr_estimate(const Dataset& dataset, const Policy& target, const Policy& behavior, const EventRewards& rewards,
                   double gamma, const QTable& qhat);
double wdr_estimate(const Dataset& dataset, const Policy& target, const Policy& behavior,
                    const EventRewards& rewards, double gamma, const QTable& qhat);

/// Weighted importance sampling on the reconstructed channel.
double hope_estimate(const Dataset& dataset, const Policy& target, const Policy& behavior, const EventRewards& rhat,
                     double gamma);

// HOPE ablations.

/// Reconstruction with neighbor averaging at every step.
EventRewards soft_rewards(const Dataset& dataset, const EventRewards& preliminary, const NeighborIndex& index);

struct RandHopeOptions {
    std::size_t k = 5;
    std::size_t repetitions = 100;
    std::uint64_t seed = 0;
    std::size_t threads = 1;
};

/// Reconstructed channel of repetition r, with random neighbor sets drawn from
/// stream mix64(derive_stream(seed ^ kRandomNeighborSalt, r)).
EventRewards rand_hope_rewards(const Dataset& dataset, const EventRewards& preliminary, const FeatureTable& features,
                               const CriticalSet& critical, const RandHopeOptions& options, std::size_t repetition);

/// Mean over repetitions of the reconstructed channel. WIS is linear in the rewards
/// for fixed weights, so WIS of this mean equals the mean of the per-repetition WIS.
EventRewards rand_hope_mean_rewards(const Dataset& dataset, const EventRewards& preliminary,
                                    const FeatureTable& features, const CriticalSet& critical,
                                    const RandHopeOptions& options);

/// Mean of per-repetition HOPE estimates.
double rand_hope_estimate(const Dataset& dataset, const Policy& target, const Policy& behavior,
                          const EventRewards& preliminary, const FeatureTable& features, const CriticalSet& critical,
                          double gamma, const RandHopeOptions& options);

/// (sum_t gamma^(t-1) r_t - g_lb) / (g_ub - g_lb). Throws std::range_error when
/// g_ub <= g_lb or the raw return is outside [g_lb, g_ub].
double normalized_return(std::span<const double> rewards, double gamma, double g_lb, double g_ub);

/// Return bounds for per-step rewards in [r_min, r_max] over `horizon` steps.
std::pair<double, double> return_bounds(double r_min, double r_max, double gamma, std::size_t horizon);

// Registry.

enum class EstimatorKind { is, wis, pdis, phwis, fqe, dr, wdr };

struct EstimatorSpec {
    std::string name;
    EstimatorKind kind = EstimatorKind::wis;
    // Reward channel read by the estimator.
    std::string channel;
};

/// Names in report order: is, wis, pdis, phwis, fqe, dr, wdr, hope, sparse_hope,
/// soft_hope, rand_hope.
const std::vector<std::string>& registered_estimators();
/// Throws std::invalid_argument for an unknown name.
EstimatorSpec estimator_spec(const std::string& name);
/// Default channel of an estimator: "sparse" for the baselines, the HOPE name itself
/// for the HOPE family.
std::string default_channel(const std::string& name);

/// Inputs shared by every estimator evaluated on one dataset.
struct EvaluationContext {
    const Dataset* dataset = nullptr;
    double gamma = 1.0;
    // channel name -> per-step rewards
    const std::map<std::string, EventRewards>* channels = nullptr;
    QFitOptions fqe_options;
};

/// Evaluates every spec on the rows. Q^ is fitted once per channel under the target
/// policy on the same rows. An estimator that throws hope::Error yields nullopt.
std::vector<std::optional<double>> run_estimators(const std::vector<EstimatorSpec>& specs,
                                                  const EvaluationContext& context, const Policy& target,
                                                  const ImportanceRatios& ratios, std::span<const std::size_t> rows);

struct EstimateResult {
    std::string estimator;
    std::string reward_source;
    std::optional<double> point_estimate;
    std::optional<std::vector<double>> bootstrap_samples;
    std::size_t bootstrap_failures = 0;

    nlohmann::ordered_json to_json() const;
};

} // namespace hope
