#pragma once

// Preliminary per-step rewards inferred from aggregated rewards.
//
// The reward table r~(o,a) minimizes
//   (1/N) sum_i (agg_i - sum_t gamma^(t-1) r~(o_t, a_t))^2 + ridge * ||r~||^2
// over the (o,a) pairs seen in the data. With a tabular parameterization this is a
// linear least-squares problem: trajectory i is a design row whose (o,a) column holds
// sum_t gamma^(t-1) * 1[(o_t,a_t) = (o,a)].

#include "hope/trajectory.hpp"

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

namespace hope {

enum class Solver { closed_form, iterative };

std::string to_string(Solver solver);
Solver solver_from_string(const std::string& name);

struct FitOptions {
    Solver solver = Solver::closed_form;
    double ridge = 1e-6;
    // Iterative solver: stop when the relative objective change drops below this.
    double tolerance = 1e-8;
    std::size_t max_iterations = 10000;
};

struct FitMeta {
    Solver solver = Solver::closed_form;
    double ridge = 0.0;
    // Unregularized objective at the solution.
    double loss = 0.0;
    std::size_t iterations = 0;
};

class RewardModel {
public:
    RewardModel() = default;
    RewardModel(std::size_t n_obs, std::size_t n_act);

    std::size_t n_obs() const noexcept { return n_obs_; }
    std::size_t n_act() const noexcept { return n_act_; }

    /// Fitted value; 0 for pairs never seen in training.
    double predict(int observation, int action) const;
    bool seen(int observation, int action) const;
    void set(int observation, int action, double value);

    FitMeta meta;

    nlohmann::json to_json() const;
    static RewardModel from_json(const nlohmann::json& j);

private:
    std::size_t index(int o, int a) const;

    std::size_t n_obs_ = 0;
    std::size_t n_act_ = 0;
    std::vector<double> table_;
    std::vector<unsigned char> seen_;
};

/// Sparse least-squares design built from a dataset.
struct LeastSquaresProblem {
    // Column -> (observation, action).
    std::vector<std::pair<int, int>> columns;
    // Row i -> (column, coefficient) with distinct columns.
    std::vector<std::vector<std::pair<std::size_t, double>>> rows;
    std::vector<double> targets;
    double ridge = 0.0;

    std::size_t n_params() const noexcept { return columns.size(); }

    /// (1/N) sum_i (y_i - x_i . theta)^2 + ridge * ||theta||^2
    double objective(const std::vector<double>& theta) const;
    /// Objective without the ridge term.
    double data_loss(const std::vector<double>& theta) const;
    /// Analytic gradient of objective().
    std::vector<double> gradient(const std::vector<double>& theta) const;
};

LeastSquaresProblem build_problem(const Dataset& dataset, double gamma, double ridge);

/// Throws UnderdeterminedSystem when ridge = 0 and the design is rank deficient.
RewardModel fit_preliminary(const Dataset& dataset, double gamma, const FitOptions& options = {});

double loss(const RewardModel& model, const Dataset& dataset, double gamma);

/// r~ evaluated at every (trajectory, step).
EventRewards predict_events(const RewardModel& model, const Dataset& dataset);

} // namespace hope
