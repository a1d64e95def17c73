#pragma once

// Accuracy metrics, bootstrap by episodes and two-sample significance tests.

#include "hope/estimators.hpp"

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace hope {

double absolute_error(double true_value, double estimate);

struct Regret {
    double value = 0.0;
    // False when the best true value is 0 and the gap is reported unnormalized.
    bool normalized = true;
    // Index of the policy ranked first by the estimates (lowest index on ties).
    std::size_t chosen = 0;
};

/// (max_i V_i - V_j) / max_i V_i with j = argmax of the estimates.
/// Throws std::invalid_argument for fewer than 2 policies or mismatched lengths.
Regret regret_at_1(std::span<const double> true_values, std::span<const double> estimates);

struct PolicyEvaluation {
    std::string policy;
    std::optional<double> true_value;
    std::map<std::string, EstimateResult> estimates;
};

/// Regret of one estimator across policies; nullopt when a true value or a point
/// estimate is missing.
std::optional<Regret> regret_at_1(const std::vector<PolicyEvaluation>& evaluations, const std::string& estimator);

/// 1-based ranks; tied values share the mean of their positions.
std::vector<double> average_ranks(std::span<const double> values);

/// Pearson correlation of the average ranks. nullopt when either rank vector is
/// constant. Throws std::invalid_argument for mismatched lengths or fewer than 2 values.
std::optional<double> spearman_rank(std::span<const double> a, std::span<const double> b);

/// Row indices of bootstrap replica b: n draws with replacement from stream
/// derive_stream(seed ^ kBootstrapSalt, b).
std::vector<std::size_t> bootstrap_rows(std::size_t n, std::uint64_t seed, std::size_t replica);

struct BootstrapResult {
    // samples[k] holds the successful replicas of output k, in replica order.
    std::vector<std::vector<double>> samples;
    std::vector<std::size_t> failures;
};

using MultiEstimator = std::function<std::vector<std::optional<double>>(std::span<const std::size_t>)>;

/// B replicas of an estimator with `outputs` results. A nullopt result or a thrown
/// hope::Error counts as a failure of that output and is left out.
BootstrapResult bootstrap(std::size_t n, std::size_t replicas, std::size_t outputs, std::uint64_t seed,
                          std::size_t threads, const MultiEstimator& estimator);

/// Single-output convenience form.
BootstrapResult bootstrap(std::size_t n, std::size_t replicas, std::uint64_t seed, std::size_t threads,
                          const std::function<double(std::span<const std::size_t>)>& estimator);

double mean(std::span<const double> x);
/// Sample standard deviation (n - 1 denominator); 0 for fewer than 2 values.
double sample_sd(std::span<const double> x);

/// Regularized incomplete beta I_x(a, b) by continued fraction.
double incomplete_beta(double a, double b, double x);
/// Two-sided tail probability of Student's t with df degrees of freedom.
double student_t_two_sided(double t, double df);

struct SignificanceReport {
    std::string first;
    std::string second;
    double t_statistic = 0.0;
    double degrees_of_freedom = 0.0;
    double p_value = 1.0;
    bool significant = false;
    // Both samples constant: means compared exactly.
    bool degenerate = false;
};

/// Welch's unequal-variance t-test, two-sided, significant at p < alpha.
/// Throws std::invalid_argument when a sample has fewer than 2 values.
SignificanceReport welch_t_test(std::span<const double> a, std::span<const double> b, double alpha = 0.05);

} // namespace hope
