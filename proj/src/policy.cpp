#include "hope/policy.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace hope {

Policy::Policy(std::size_t n_obs, std::size_t n_act)
    : n_obs_(n_obs), n_act_(n_act), probs_(n_obs * n_act, n_act == 0 ? 0.0 : 1.0 / static_cast<double>(n_act)) {}

Policy Policy::deterministic(const std::vector<int>& actions, std::size_t n_act) {
    Policy p(actions.size(), n_act);
    std::fill(p.probs_.begin(), p.probs_.end(), 0.0);
    for (std::size_t o = 0; o < actions.size(); ++o) {
        if (actions[o] < 0 || static_cast<std::size_t>(actions[o]) >= n_act) {
            throw std::out_of_range("action id out of range in deterministic policy");
        }
        p.probs_[o * n_act + static_cast<std::size_t>(actions[o])] = 1.0;
    }
    return p;
}

std::span<const double> Policy::row(int observation) const {
    if (observation < 0 || static_cast<std::size_t>(observation) >= n_obs_) {
        throw std::out_of_range("observation id out of range: " + std::to_string(observation));
    }
    return {probs_.data() + static_cast<std::size_t>(observation) * n_act_, n_act_};
}

void Policy::set_row(int observation, std::span<const double> probs) {
    if (observation < 0 || static_cast<std::size_t>(observation) >= n_obs_) {
        throw std::out_of_range("observation id out of range: " + std::to_string(observation));
    }
    if (probs.size() != n_act_) throw std::invalid_argument("policy row has the wrong width");
    double total = 0.0;
    for (double p : probs) {
        if (!(p >= 0.0)) throw std::invalid_argument("policy probabilities must be nonnegative");
        total += p;
    }
    if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("policy row does not sum to 1");
    std::copy(probs.begin(), probs.end(), probs_.begin() + static_cast<std::ptrdiff_t>(observation * n_act_));
}

int Policy::sample(int observation, double u) const {
    const auto r = row(observation);
    double acc = 0.0;
    int last_positive = 0;
    for (std::size_t a = 0; a < r.size(); ++a) {
        if (r[a] <= 0.0) continue;
        acc += r[a];
        last_positive = static_cast<int>(a);
        if (u < acc) return static_cast<int>(a);
    }
    return last_positive;
}

int Policy::greedy(int observation) const {
    const auto r = row(observation);
    return static_cast<int>(std::max_element(r.begin(), r.end()) - r.begin());
}

} // namespace hope
