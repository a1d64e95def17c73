#include "hope/trajectory.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>

namespace hope {

using nlohmann::json;
using ordered = nlohmann::ordered_json;

Transition Trajectory::transition(std::size_t t) const {
    if (t >= length()) throw std::out_of_range("transition index out of range");
    Transition tr;
    tr.observation = observations[t];
    tr.action = actions[t];
    if (rewards) tr.reward = (*rewards)[t];
    if (t + 1 < length()) tr.next_observation = observations[t + 1];
    return tr;
}

void Dataset::validate() const {
    if (trajectories.empty()) throw std::invalid_argument("dataset must contain at least one trajectory");
    for (std::size_t i = 0; i < trajectories.size(); ++i) {
        const auto& traj = trajectories[i];
        const std::string where = "trajectory " + std::to_string(i) + ": ";
        if (traj.actions.empty()) throw std::invalid_argument(where + "empty trajectory");
        if (traj.observations.size() != traj.actions.size()) throw std::invalid_argument(where + "ragged columns");
        for (int o : traj.observations) {
            if (o < 0 || static_cast<std::size_t>(o) >= n_obs) throw std::invalid_argument(where + "observation id out of range");
        }
        for (int a : traj.actions) {
            if (a < 0 || static_cast<std::size_t>(a) >= n_act) throw std::invalid_argument(where + "action id out of range");
        }
        if (traj.rewards && traj.rewards->size() != traj.length()) throw std::invalid_argument(where + "reward column length");
        if (traj.behavior_probs && traj.behavior_probs->size() != traj.length()) {
            throw std::invalid_argument(where + "behavior column length");
        }
        if (traj.ground_truth_rewards) {
            if (traj.ground_truth_rewards->size() != traj.length()) throw std::invalid_argument(where + "ground-truth length");
            const double agg = discounted_return(*traj.ground_truth_rewards, gamma);
            if (std::abs(agg - traj.aggregated_reward) > 1e-9) {
                throw std::invalid_argument(where + "aggregated reward disagrees with ground-truth rewards");
            }
        }
    }
}

double discounted_return(std::span<const double> rewards, double gamma) {
    double total = 0.0;
    double discount = 1.0;
    for (double r : rewards) {
        total += discount * r;
        discount *= gamma;
    }
    return total;
}

std::vector<double> aggregate_rewards(const Trajectory& trajectory, double gamma, std::optional<std::size_t> window) {
    if (!trajectory.ground_truth_rewards) throw std::invalid_argument("aggregate_rewards needs ground-truth rewards");
    const auto& r = *trajectory.ground_truth_rewards;
    const std::size_t w = window.value_or(std::max<std::size_t>(r.size(), 1));
    if (w == 0) throw std::invalid_argument("window must be >= 1");
    std::vector<double> out;
    for (std::size_t start = 0; start < r.size(); start += w) {
        const std::size_t end = std::min(r.size(), start + w);
        out.push_back(discounted_return(std::span<const double>(r.data() + start, end - start), gamma));
    }
    return out;
}

StrippedDataset strip_rewards(Dataset dataset) {
    StrippedDataset out;
    out.sidecar.rewards.reserve(dataset.size());
    out.sidecar.ground_truth.reserve(dataset.size());
    for (auto& traj : dataset.trajectories) {
        out.sidecar.rewards.push_back(std::move(traj.rewards));
        out.sidecar.ground_truth.push_back(std::move(traj.ground_truth_rewards));
        traj.rewards.reset();
        traj.ground_truth_rewards.reset();
    }
    out.observable = std::move(dataset);
    return out;
}

Dataset attach_rewards(Dataset observable, const RewardSidecar& sidecar) {
    if (sidecar.rewards.size() != observable.size() || sidecar.ground_truth.size() != observable.size()) {
        throw std::invalid_argument("sidecar does not match the dataset size");
    }
    for (std::size_t i = 0; i < observable.size(); ++i) {
        observable.trajectories[i].rewards = sidecar.rewards[i];
        observable.trajectories[i].ground_truth_rewards = sidecar.ground_truth[i];
    }
    return observable;
}

Policy estimate_behavior_policy(const Dataset& dataset, double smoothing) {
    if (dataset.trajectories.empty()) throw std::invalid_argument("behavior cloning needs a nonempty dataset");
    if (!(smoothing >= 0.0)) throw std::invalid_argument("smoothing must be >= 0");
    std::vector<double> counts(dataset.n_obs * dataset.n_act, 0.0);
    std::vector<double> totals(dataset.n_obs, 0.0);
    for (const auto& traj : dataset.trajectories) {
        for (std::size_t t = 0; t < traj.length(); ++t) {
            const auto o = static_cast<std::size_t>(traj.observations[t]);
            counts[o * dataset.n_act + static_cast<std::size_t>(traj.actions[t])] += 1.0;
            totals[o] += 1.0;
        }
    }
    Policy policy(dataset.n_obs, dataset.n_act);
    std::vector<double> row(dataset.n_act);
    const double width = static_cast<double>(dataset.n_act);
    for (std::size_t o = 0; o < dataset.n_obs; ++o) {
        if (totals[o] == 0.0) continue;  // stays uniform
        const double denom = totals[o] + smoothing * width;
        for (std::size_t a = 0; a < dataset.n_act; ++a) row[a] = (counts[o * dataset.n_act + a] + smoothing) / denom;
        policy.set_row(static_cast<int>(o), row);
    }
    return policy;
}

namespace {

SparseDistribution frequencies(const std::vector<int>& ids) {
    std::map<int, std::size_t> counts;
    for (int id : ids) ++counts[id];
    SparseDistribution dist;
    dist.reserve(counts.size());
    const double n = static_cast<double>(ids.size());
    for (const auto& [id, c] : counts) dist.emplace_back(id, static_cast<double>(c) / n);
    return dist;
}

} // namespace

Visitation visitation_distribution(const Trajectory& trajectory) {
    if (trajectory.length() == 0) throw std::invalid_argument("visitation of an empty trajectory");
    return {frequencies(trajectory.observations), frequencies(trajectory.actions)};
}

std::vector<double> densify(const SparseDistribution& dist, std::size_t size) {
    std::vector<double> out(size, 0.0);
    for (const auto& [id, p] : dist) out.at(static_cast<std::size_t>(id)) = p;
    return out;
}

EventRewards sparse_rewards(const Dataset& dataset) {
    EventRewards out(dataset.size());
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        const auto& traj = dataset.trajectories[i];
        out[i].assign(traj.length(), 0.0);
        if (out[i].empty()) continue;
        // Same product as discounted_return, so the row's return is the aggregate.
        double discount = 1.0;
        for (std::size_t t = 1; t < traj.length(); ++t) discount *= dataset.gamma;
        if (discount == 0.0) throw std::invalid_argument("discount underflows over trajectory " + std::to_string(i));
        out[i].back() = traj.aggregated_reward / discount;
    }
    return out;
}

EventRewards ground_truth_rewards(const Dataset& dataset) {
    EventRewards out(dataset.size());
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        const auto& gt = dataset.trajectories[i].ground_truth_rewards;
        if (!gt) throw std::invalid_argument("trajectory " + std::to_string(i) + " has no ground-truth rewards");
        out[i] = *gt;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

namespace {

template <typename T>
ordered optional_array(const std::optional<std::vector<T>>& v) {
    return v ? ordered(*v) : ordered(nullptr);
}

template <typename T>
std::optional<std::vector<T>> read_optional_array(const json& line, const char* key) {
    if (!line.contains(key) || line.at(key).is_null()) return std::nullopt;
    return line.at(key).get<std::vector<T>>();
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    return out;
}

std::ifstream open_in(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open for reading: " + path);
    return in;
}

} // namespace

void write_dataset(std::ostream& out, const Dataset& dataset) {
    ordered header;
    header["n_obs"] = dataset.n_obs;
    header["n_act"] = dataset.n_act;
    header["gamma"] = dataset.gamma;
    out << header.dump() << '\n';
    for (const auto& traj : dataset.trajectories) {
        ordered line;
        line["obs"] = traj.observations;
        line["act"] = traj.actions;
        line["rew"] = optional_array(traj.rewards);
        line["agg"] = traj.aggregated_reward;
        line["beta"] = optional_array(traj.behavior_probs);
        out << line.dump() << '\n';
    }
}

Dataset read_dataset(std::istream& in) {
    std::string text;
    if (!std::getline(in, text)) throw std::runtime_error("dataset file is empty");
    const json header = json::parse(text);
    Dataset data;
    data.n_obs = header.at("n_obs").get<std::size_t>();
    data.n_act = header.at("n_act").get<std::size_t>();
    data.gamma = header.at("gamma").get<double>();
    while (std::getline(in, text)) {
        if (text.empty()) continue;
        const json line = json::parse(text);
        Trajectory traj;
        traj.observations = line.at("obs").get<std::vector<int>>();
        traj.actions = line.at("act").get<std::vector<int>>();
        traj.rewards = read_optional_array<double>(line, "rew");
        traj.aggregated_reward = line.at("agg").get<double>();
        traj.behavior_probs = read_optional_array<double>(line, "beta");
        data.trajectories.push_back(std::move(traj));
    }
    data.validate();
    return data;
}

void save_dataset(const std::string& path, const Dataset& dataset) {
    auto out = open_out(path);
    write_dataset(out, dataset);
}

Dataset load_dataset(const std::string& path) {
    auto in = open_in(path);
    return read_dataset(in);
}

void write_ground_truth(std::ostream& out, const Dataset& dataset) {
    ordered header;
    header["kind"] = "ground_truth";
    header["n_traj"] = dataset.size();
    out << header.dump() << '\n';
    for (const auto& traj : dataset.trajectories) {
        ordered line;
        line["rew"] = optional_array(traj.ground_truth_rewards);
        out << line.dump() << '\n';
    }
}

void read_ground_truth(std::istream& in, Dataset& dataset) {
    std::string text;
    if (!std::getline(in, text)) throw std::runtime_error("ground-truth file is empty");
    const json header = json::parse(text);
    if (header.value("kind", "") != "ground_truth") throw std::runtime_error("not a ground-truth sidecar file");
    if (header.at("n_traj").get<std::size_t>() != dataset.size()) {
        throw std::runtime_error("ground-truth sidecar does not match the dataset size");
    }
    std::size_t i = 0;
    while (std::getline(in, text)) {
        if (text.empty()) continue;
        if (i >= dataset.size()) throw std::runtime_error("ground-truth sidecar has extra lines");
        dataset.trajectories[i].ground_truth_rewards = read_optional_array<double>(json::parse(text), "rew");
        ++i;
    }
    if (i != dataset.size()) throw std::runtime_error("ground-truth sidecar is truncated");
}

void save_ground_truth(const std::string& path, const Dataset& dataset) {
    auto out = open_out(path);
    write_ground_truth(out, dataset);
}

void load_ground_truth(const std::string& path, Dataset& dataset) {
    auto in = open_in(path);
    read_ground_truth(in, dataset);
}

} // namespace hope
