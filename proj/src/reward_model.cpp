#include "hope/reward_model.hpp"

#include "hope/errors.hpp"

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace hope {

std::string to_string(Solver solver) { return solver == Solver::closed_form ? "closed_form" : "iterative"; }

Solver solver_from_string(const std::string& name) {
    if (name == "closed_form") return Solver::closed_form;
    if (name == "iterative") return Solver::iterative;
    throw std::invalid_argument("unknown solver: " + name);
}

RewardModel::RewardModel(std::size_t n_obs, std::size_t n_act)
    : n_obs_(n_obs), n_act_(n_act), table_(n_obs * n_act, 0.0), seen_(n_obs * n_act, 0) {}

std::size_t RewardModel::index(int o, int a) const {
    if (o < 0 || a < 0 || static_cast<std::size_t>(o) >= n_obs_ || static_cast<std::size_t>(a) >= n_act_) {
        throw std::out_of_range("(o,a) outside the reward model");
    }
    return static_cast<std::size_t>(o) * n_act_ + static_cast<std::size_t>(a);
}

double RewardModel::predict(int observation, int action) const { return table_[index(observation, action)]; }

bool RewardModel::seen(int observation, int action) const { return seen_[index(observation, action)] != 0; }

void RewardModel::set(int observation, int action, double value) {
    const auto k = index(observation, action);
    table_[k] = value;
    seen_[k] = 1;
}

nlohmann::json RewardModel::to_json() const {
    nlohmann::json table = nlohmann::json::object();
    for (std::size_t o = 0; o < n_obs_; ++o) {
        for (std::size_t a = 0; a < n_act_; ++a) {
            if (!seen_[o * n_act_ + a]) continue;
            table["(" + std::to_string(o) + "," + std::to_string(a) + ")"] = table_[o * n_act_ + a];
        }
    }
    nlohmann::json j;
    j["n_obs"] = n_obs_;
    j["n_act"] = n_act_;
    j["solver"] = to_string(meta.solver);
    j["ridge"] = meta.ridge;
    j["loss"] = meta.loss;
    j["iterations"] = meta.iterations;
    j["table"] = std::move(table);
    return j;
}

RewardModel RewardModel::from_json(const nlohmann::json& j) {
    RewardModel m(j.at("n_obs").get<std::size_t>(), j.at("n_act").get<std::size_t>());
    m.meta.solver = solver_from_string(j.at("solver").get<std::string>());
    m.meta.ridge = j.at("ridge").get<double>();
    m.meta.loss = j.at("loss").get<double>();
    m.meta.iterations = j.at("iterations").get<std::size_t>();
    for (const auto& [key, value] : j.at("table").items()) {
        int o = 0;
        int a = 0;
        if (std::sscanf(key.c_str(), "(%d,%d)", &o, &a) != 2) throw std::invalid_argument("bad reward table key: " + key);
        m.set(o, a, value.get<double>());
    }
    return m;
}

// ---------------------------------------------------------------------------

double LeastSquaresProblem::data_loss(const std::vector<double>& theta) const {
    double total = 0.0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        double pred = 0.0;
        for (const auto& [c, v] : rows[i]) pred += v * theta[c];
        const double r = targets[i] - pred;
        total += r * r;
    }
    return rows.empty() ? 0.0 : total / static_cast<double>(rows.size());
}

double LeastSquaresProblem::objective(const std::vector<double>& theta) const {
    double penalty = 0.0;
    for (double x : theta) penalty += x * x;
    return data_loss(theta) + ridge * penalty;
}

std::vector<double> LeastSquaresProblem::gradient(const std::vector<double>& theta) const {
    std::vector<double> g(theta.size(), 0.0);
    const double scale = rows.empty() ? 0.0 : 2.0 / static_cast<double>(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        double pred = 0.0;
        for (const auto& [c, v] : rows[i]) pred += v * theta[c];
        const double residual = pred - targets[i];
        for (const auto& [c, v] : rows[i]) g[c] += scale * residual * v;
    }
    for (std::size_t c = 0; c < theta.size(); ++c) g[c] += 2.0 * ridge * theta[c];
    return g;
}

LeastSquaresProblem build_problem(const Dataset& dataset, double gamma, double ridge) {
    if (!(ridge >= 0.0)) throw std::invalid_argument("ridge must be >= 0");
    const std::size_t width = dataset.n_act;
    std::vector<std::ptrdiff_t> column_of(dataset.n_obs * width, -1);
    for (const auto& traj : dataset.trajectories) {
        for (std::size_t t = 0; t < traj.length(); ++t) {
            column_of[static_cast<std::size_t>(traj.observations[t]) * width + static_cast<std::size_t>(traj.actions[t])] = 0;
        }
    }
    LeastSquaresProblem p;
    p.ridge = ridge;
    for (std::size_t k = 0; k < column_of.size(); ++k) {
        if (column_of[k] < 0) continue;
        column_of[k] = static_cast<std::ptrdiff_t>(p.columns.size());
        p.columns.emplace_back(static_cast<int>(k / width), static_cast<int>(k % width));
    }
    p.rows.resize(dataset.size());
    p.targets.resize(dataset.size());
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        const auto& traj = dataset.trajectories[i];
        auto& row = p.rows[i];
        double discount = 1.0;
        for (std::size_t t = 0; t < traj.length(); ++t) {
            const auto c = static_cast<std::size_t>(
                column_of[static_cast<std::size_t>(traj.observations[t]) * width + static_cast<std::size_t>(traj.actions[t])]);
            auto it = std::find_if(row.begin(), row.end(), [c](const auto& e) { return e.first == c; });
            if (it == row.end()) {
                row.emplace_back(c, discount);
            } else {
                it->second += discount;
            }
            discount *= gamma;
        }
        std::sort(row.begin(), row.end());
        p.targets[i] = traj.aggregated_reward;
    }
    return p;
}

namespace {

std::vector<double> solve_closed_form(const LeastSquaresProblem& p) {
    const auto n = static_cast<Eigen::Index>(p.n_params());
    const double inv_n = 1.0 / static_cast<double>(p.rows.size());
    std::vector<Eigen::Triplet<double>> triplets;
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n);
    for (std::size_t i = 0; i < p.rows.size(); ++i) {
        for (const auto& [c1, v1] : p.rows[i]) {
            rhs[static_cast<Eigen::Index>(c1)] += inv_n * v1 * p.targets[i];
            for (const auto& [c2, v2] : p.rows[i]) {
                triplets.emplace_back(static_cast<Eigen::Index>(c1), static_cast<Eigen::Index>(c2), inv_n * v1 * v2);
            }
        }
    }
    for (Eigen::Index c = 0; c < n; ++c) triplets.emplace_back(c, c, p.ridge);
    Eigen::SparseMatrix<double> normal(n, n);
    normal.setFromTriplets(triplets.begin(), triplets.end());

    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt;
    ldlt.compute(normal);
    if (ldlt.info() != Eigen::Success) {
        throw UnderdeterminedSystem("normal equations could not be factorized; raise the ridge penalty");
    }
    const Eigen::VectorXd d = ldlt.vectorD();
    const double dmax = n > 0 ? d.cwiseAbs().maxCoeff() : 0.0;
    if (p.ridge == 0.0 && n > 0 && (d.minCoeff() <= 1e-10 * dmax)) {
        throw UnderdeterminedSystem("design is rank deficient (" + std::to_string(p.rows.size()) + " trajectories, " +
                                    std::to_string(n) + " (o,a) parameters); raise the ridge penalty");
    }
    const Eigen::VectorXd theta = ldlt.solve(rhs);
    return {theta.data(), theta.data() + n};
}

// Largest eigenvalue of (1/N) X^T X + ridge I by power iteration.
double largest_eigenvalue(const LeastSquaresProblem& p) {
    const std::size_t n = p.n_params();
    if (n == 0) return 0.0;
    std::vector<double> v(n, 1.0 / std::sqrt(static_cast<double>(n)));
    std::vector<double> w(n);
    double lambda = 0.0;
    const double inv_n = 1.0 / static_cast<double>(p.rows.size());
    for (int iter = 0; iter < 200; ++iter) {
        std::fill(w.begin(), w.end(), 0.0);
        for (const auto& row : p.rows) {
            double dot = 0.0;
            for (const auto& [c, x] : row) dot += x * v[c];
            for (const auto& [c, x] : row) w[c] += inv_n * x * dot;
        }
        for (std::size_t c = 0; c < n; ++c) w[c] += p.ridge * v[c];
        const double norm = std::sqrt(std::inner_product(w.begin(), w.end(), w.begin(), 0.0));
        if (norm == 0.0) return p.ridge;
        for (std::size_t c = 0; c < n; ++c) v[c] = w[c] / norm;
        if (std::abs(norm - lambda) <= 1e-12 * norm) {
            lambda = norm;
            break;
        }
        lambda = norm;
    }
    return lambda;
}

std::vector<double> solve_gradient_descent(const LeastSquaresProblem& p, const FitOptions& options,
                                           std::size_t& iterations) {
    std::vector<double> theta(p.n_params(), 0.0);
    // Hessian is 2 * ((1/N) X^T X + ridge I); the margin covers power-iteration underestimates.
    const double lipschitz = 2.0 * largest_eigenvalue(p) * 1.05;
    iterations = 0;
    if (lipschitz <= 0.0) return theta;
    const double step = 1.0 / lipschitz;
    double previous = p.objective(theta);
    while (iterations < options.max_iterations) {
        const auto g = p.gradient(theta);
        for (std::size_t c = 0; c < theta.size(); ++c) theta[c] -= step * g[c];
        ++iterations;
        const double current = p.objective(theta);
        if (current == 0.0) break;
        const double change = std::abs(previous - current) / std::max(std::abs(previous), std::numeric_limits<double>::min());
        previous = current;
        if (change < options.tolerance) break;
    }
    return theta;
}

} // namespace

RewardModel fit_preliminary(const Dataset& dataset, double gamma, const FitOptions& options) {
    if (dataset.trajectories.empty()) throw std::invalid_argument("cannot fit rewards on an empty dataset");
    const LeastSquaresProblem problem = build_problem(dataset, gamma, options.ridge);

    std::vector<double> theta;
    std::size_t iterations = 0;
    if (options.solver == Solver::closed_form) {
        theta = solve_closed_form(problem);
    } else {
        theta = solve_gradient_descent(problem, options, iterations);
    }

    RewardModel model(dataset.n_obs, dataset.n_act);
    for (std::size_t c = 0; c < problem.columns.size(); ++c) {
        model.set(problem.columns[c].first, problem.columns[c].second, theta[c]);
    }
    model.meta.solver = options.solver;
    model.meta.ridge = options.ridge;
    model.meta.iterations = iterations;
    model.meta.loss = loss(model, dataset, gamma);
    return model;
}

double loss(const RewardModel& model, const Dataset& dataset, double gamma) {
    if (dataset.trajectories.empty()) return 0.0;
    double total = 0.0;
    for (const auto& traj : dataset.trajectories) {
        double pred = 0.0;
        double discount = 1.0;
        for (std::size_t t = 0; t < traj.length(); ++t) {
            pred += discount * model.predict(traj.observations[t], traj.actions[t]);
            discount *= gamma;
        }
        const double r = traj.aggregated_reward - pred;
        total += r * r;
    }
    return total / static_cast<double>(dataset.size());
}

EventRewards predict_events(const RewardModel& model, const Dataset& dataset) {
    EventRewards out(dataset.size());
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        const auto& traj = dataset.trajectories[i];
        out[i].resize(traj.length());
        for (std::size_t t = 0; t < traj.length(); ++t) out[i][t] = model.predict(traj.observations[t], traj.actions[t]);
    }
    return out;
}

} // namespace hope
