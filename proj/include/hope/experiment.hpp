#pragma once

// End-to-end benchmark pipeline: simulate, reconstruct, evaluate, report.
//
// Every stage is a file-to-file transform inside an output directory, and every
// artifact depends only on (config, seed), never on the worker count.

#include "hope/critical.hpp"
#include "hope/estimators.hpp"
#include "hope/metrics.hpp"
#include "hope/neighbors.hpp"
#include "hope/reward_model.hpp"
#include "hope/sepsis.hpp"
#include "hope/trajectory.hpp"

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace hope {

inline constexpr int kSchemaVersion = 1;

enum class HMode { all_critical, elbow, fixed, none };
enum class BehaviorSource { stored, cloned };

std::string to_string(HMode mode);
std::string to_string(BehaviorSource source);

struct ExperimentConfig {
    sepsis::SimConfig sim;
    std::size_t n_trajectories = 10000;
    // Behavior policy: epsilon-soft version of the optimal policy.
    double behavior_epsilon = 0.15;
    // Evaluation policies by name: optimal, with_antibiotics, without_antibiotics,
    // behavior, uniform.
    std::vector<std::string> policies{"optimal", "with_antibiotics", "without_antibiotics"};
    std::vector<std::string> estimators = registered_estimators();
    // estimator -> reward channel override
    std::map<std::string, std::string> reward_channels;
    std::size_t k = 5;
    HMode h_mode = HMode::all_critical;
    // Threshold for HMode::fixed.
    double h = 0.0;
    Backup q_backup = Backup::policy;
    std::size_t q_sweeps = 1000;
    FitOptions reward_fit;
    BehaviorSource behavior = BehaviorSource::stored;
    double behavior_smoothing = 0.0;
    std::size_t bootstrap_b = 500;
    std::size_t rand_repetitions = 100;
    std::uint64_t seed = 0;

    /// Throws ConfigError naming the offending field.
    void validate() const;

    nlohmann::ordered_json to_json() const;
    /// Requires "schema_version"; every other field defaults. Unknown keys are rejected.
    static ExperimentConfig from_json(const nlohmann::json& j);
};

ExperimentConfig load_config(const std::string& path);

std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const std::string& path);

/// Named evaluation policies plus the behavior policy, all from the simulator config.
struct PolicySet {
    Policy behavior;
    std::vector<std::string> names;
    std::vector<Policy> targets;
};

PolicySet build_policies(const ExperimentConfig& config);

// In-memory stages.

Dataset simulate(const ExperimentConfig& config, const PolicySet& policies, std::size_t threads);

struct Reconstruction {
    RewardModel model;
    QTable q;
    std::vector<double> gaps;
    std::optional<ElbowResult> elbow;
    CriticalSet critical;
    NeighborIndex index;
    // rtilde, hope, sparse_hope, soft_hope, rand_hope
    std::map<std::string, EventRewards> channels;
};

inline const std::vector<std::string>& reconstructed_channels() {
    static const std::vector<std::string> names{"rtilde", "hope", "sparse_hope", "soft_hope", "rand_hope"};
    return names;
}

Reconstruction reconstruct_rewards(const Dataset& dataset, const ExperimentConfig& config, std::size_t threads,
                                   std::ostream& log);

struct EstimatorSummary {
    std::string estimator;
    std::string channel;
    // Mean over policies of the bootstrap mean |V - V^_b|.
    std::optional<double> aae;
    std::optional<double> regret_at_1;
    bool regret_normalized = true;
    std::optional<double> spearman;
    std::optional<std::string> best_policy;
};

struct PairwiseTest {
    std::string estimator;
    SignificanceReport report;
};

struct EvaluationReport {
    std::vector<PolicyEvaluation> policies;
    std::vector<EstimatorSummary> summaries;
    std::vector<PairwiseTest> significance;

    const EstimatorSummary* summary(const std::string& estimator) const;
};

/// `channels` must hold every channel the configured estimators read; "sparse" is
/// added from the dataset when absent.
EvaluationReport evaluate(const Dataset& dataset, std::map<std::string, EventRewards> channels,
                          const ExperimentConfig& config, const PolicySet& policies, bool with_truth,
                          std::size_t threads);

// File stages. Each writes into out_dir, which must exist or be creatable.

void cmd_simulate(const ExperimentConfig& config, const std::string& out_dir, std::ostream& log);
void cmd_reconstruct(const ExperimentConfig& config, const std::string& dataset_path, const std::string& out_dir,
                     std::ostream& log);
EvaluationReport cmd_evaluate(const ExperimentConfig& config, const std::string& dataset_path,
                              const std::string& rhat_path, const std::optional<std::string>& ground_truth_path,
                              const std::string& out_dir, std::ostream& log);

struct CheckResult {
    std::string name;
    bool passed = false;
    std::string detail;
};

struct BenchmarkOutcome {
    EvaluationReport report;
    std::vector<CheckResult> checks;
    bool all_passed() const;
};

/// Correct HOPE ranking of the policies and HOPE AAE below sparse-channel WIS AAE.
std::vector<CheckResult> acceptance_checks(const EvaluationReport& report);

BenchmarkOutcome cmd_benchmark(const ExperimentConfig& config, const std::string& out_dir, std::ostream& log);

/// Markdown summary of an evaluated run directory (reads metrics.json).
void cmd_report(const std::string& out_dir, std::ostream& out);

// r^ sidecar: header {"kind":"rhat","n_traj":N,"channels":[..]} and one object per
// trajectory mapping channel name to per-step rewards.

void save_rhat(const std::string& path, const std::map<std::string, EventRewards>& channels, std::size_t n);
std::map<std::string, EventRewards> load_rhat(const std::string& path);

} // namespace hope
