#include "hope/experiment.hpp"

#include "hope/errors.hpp"
#include "hope/parallel.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace hope {

namespace fs = std::filesystem;
using nlohmann::json;
using ordered = nlohmann::ordered_json;

std::string to_string(HMode mode) {
    switch (mode) {
        case HMode::all_critical: return "all_critical";
        case HMode::elbow: return "elbow";
        case HMode::fixed: return "fixed";
        case HMode::none: return "none";
    }
    return "?";
}

std::string to_string(BehaviorSource source) { return source == BehaviorSource::stored ? "stored" : "cloned"; }

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

namespace {

const std::set<std::string>& known_policies() {
    static const std::set<std::string> names{"optimal", "with_antibiotics", "without_antibiotics", "behavior",
                                             "uniform"};
    return names;
}

const std::set<std::string>& known_channels() {
    static const std::set<std::string> names{"sparse",      "ground_truth", "rtilde",   "hope",
                                             "sparse_hope", "soft_hope",    "rand_hope"};
    return names;
}

std::string join(const std::string& prefix, const std::string& key) { return prefix.empty() ? key : prefix + "." + key; }

class ObjectReader {
public:
    ObjectReader(const json& j, std::string prefix) : j_(j), prefix_(std::move(prefix)) {
        if (!j_.is_object()) throw ConfigError(prefix_.empty() ? "<root>" : prefix_, "expected an object");
    }

    void allow(std::initializer_list<const char*> keys) {
        for (const auto& [key, value] : j_.items()) {
            const bool ok = std::any_of(keys.begin(), keys.end(), [&](const char* k) { return key == k; });
            if (!ok) throw ConfigError(join(prefix_, key), "unknown key");
        }
    }

    static bool nonnegative_integer(const json& v) {
        return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
    }

    bool has(const char* key) const { return j_.contains(key); }
    const json& at(const char* key) const { return j_.at(key); }
    std::string field(const char* key) const { return join(prefix_, key); }

    void read(const char* key, double& out) const {
        if (!has(key)) return;
        if (!at(key).is_number()) throw ConfigError(field(key), "expected a number");
        out = at(key).get<double>();
    }
    void read(const char* key, std::size_t& out) const {
        if (!has(key)) return;
        if (!nonnegative_integer(at(key))) throw ConfigError(field(key), "expected a nonnegative integer");
        out = at(key).get<std::size_t>();
    }
    void read(const char* key, std::uint64_t& out, int) const {
        if (!has(key)) return;
        if (!nonnegative_integer(at(key))) throw ConfigError(field(key), "expected a nonnegative integer");
        out = at(key).get<std::uint64_t>();
    }
    void read(const char* key, int& out) const {
        if (!has(key)) return;
        if (!at(key).is_number_integer()) throw ConfigError(field(key), "expected an integer");
        out = at(key).get<int>();
    }
    void read(const char* key, bool& out) const {
        if (!has(key)) return;
        if (!at(key).is_boolean()) throw ConfigError(field(key), "expected true or false");
        out = at(key).get<bool>();
    }
    void read(const char* key, std::string& out) const {
        if (!has(key)) return;
        if (!at(key).is_string()) throw ConfigError(field(key), "expected a string");
        out = at(key).get<std::string>();
    }
    void read(const char* key, std::vector<std::string>& out) const {
        if (!has(key)) return;
        if (!at(key).is_array()) throw ConfigError(field(key), "expected an array of strings");
        out.clear();
        for (const auto& v : at(key)) {
            if (!v.is_string()) throw ConfigError(field(key), "expected an array of strings");
            out.push_back(v.get<std::string>());
        }
    }
    template <std::size_t N>
    void read(const char* key, std::array<double, N>& out) const {
        if (!has(key)) return;
        const auto& v = at(key);
        if (!v.is_array() || v.size() != N) {
            throw ConfigError(field(key), "expected an array of " + std::to_string(N) + " numbers");
        }
        for (std::size_t i = 0; i < N; ++i) {
            if (!v[i].is_number()) throw ConfigError(field(key), "expected numbers");
            out[i] = v[i].get<double>();
        }
    }

private:
    const json& j_;
    std::string prefix_;
};

void read_sim(const json& j, sepsis::SimConfig& sim) {
    ObjectReader r(j, "sim");
    r.allow({"horizon", "gamma", "transition", "initial", "mask"});
    r.read("horizon", sim.horizon);
    r.read("gamma", sim.gamma);
    if (r.has("transition")) {
        ObjectReader t(r.at("transition"), "sim.transition");
        t.allow({"fluctuation", "diabetic_glucose_fluctuation", "antibiotic_normalize", "ventilation_normalize",
                 "vasopressor_bp_raise", "vasopressor_glucose_raise", "vasopressor_glucose_raise_diabetic",
                 "withdrawal_revert"});
        auto& p = sim.transition;
        t.read("fluctuation", p.fluctuation);
        t.read("diabetic_glucose_fluctuation", p.diabetic_glucose_fluctuation);
        t.read("antibiotic_normalize", p.antibiotic_normalize);
        t.read("ventilation_normalize", p.ventilation_normalize);
        t.read("vasopressor_bp_raise", p.vasopressor_bp_raise);
        t.read("vasopressor_glucose_raise", p.vasopressor_glucose_raise);
        t.read("vasopressor_glucose_raise_diabetic", p.vasopressor_glucose_raise_diabetic);
        t.read("withdrawal_revert", p.withdrawal_revert);
    }
    if (r.has("initial")) {
        ObjectReader t(r.at("initial"), "sim.initial");
        t.allow({"diabetic_rate", "heart_rate", "blood_pressure", "oxygen", "glucose"});
        auto& p = sim.initial;
        t.read("diabetic_rate", p.diabetic_rate);
        t.read("heart_rate", p.heart_rate);
        t.read("blood_pressure", p.blood_pressure);
        t.read("oxygen", p.oxygen);
        t.read("glucose", p.glucose);
    }
    if (r.has("mask")) {
        ObjectReader t(r.at("mask"), "sim.mask");
        t.allow({"diabetic", "heart_rate", "blood_pressure", "oxygen", "glucose", "treatments"});
        auto& m = sim.mask;
        t.read("diabetic", m.diabetic);
        t.read("heart_rate", m.heart_rate);
        t.read("blood_pressure", m.blood_pressure);
        t.read("oxygen", m.oxygen);
        t.read("glucose", m.glucose);
        t.read("treatments", m.treatments);
    }
}

ordered sim_to_json(const sepsis::SimConfig& sim) {
    ordered j;
    j["horizon"] = sim.horizon;
    j["gamma"] = sim.gamma;
    const auto& p = sim.transition;
    j["transition"] = ordered{{"fluctuation", p.fluctuation},
                              {"diabetic_glucose_fluctuation", p.diabetic_glucose_fluctuation},
                              {"antibiotic_normalize", p.antibiotic_normalize},
                              {"ventilation_normalize", p.ventilation_normalize},
                              {"vasopressor_bp_raise", p.vasopressor_bp_raise},
                              {"vasopressor_glucose_raise", p.vasopressor_glucose_raise},
                              {"vasopressor_glucose_raise_diabetic", p.vasopressor_glucose_raise_diabetic},
                              {"withdrawal_revert", p.withdrawal_revert}};
    const auto& ip = sim.initial;
    j["initial"] = ordered{{"diabetic_rate", ip.diabetic_rate},
                           {"heart_rate", ip.heart_rate},
                           {"blood_pressure", ip.blood_pressure},
                           {"oxygen", ip.oxygen},
                           {"glucose", ip.glucose}};
    const auto& m = sim.mask;
    j["mask"] = ordered{{"diabetic", m.diabetic},   {"heart_rate", m.heart_rate}, {"blood_pressure", m.blood_pressure},
                        {"oxygen", m.oxygen},       {"glucose", m.glucose},       {"treatments", m.treatments}};
    return j;
}

} // namespace

void ExperimentConfig::validate() const {
    try {
        sim.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError("sim", e.what());
    }
    if (n_trajectories < 2) throw ConfigError("n_trajectories", "must be >= 2");
    if (!(behavior_epsilon > 0.0 && behavior_epsilon <= 1.0)) {
        throw ConfigError("behavior_epsilon", "must lie in (0, 1] so the behavior policy covers every action");
    }
    if (policies.empty()) throw ConfigError("policies", "must name at least one policy");
    for (const auto& p : policies) {
        if (!known_policies().count(p)) throw ConfigError("policies", "unknown policy '" + p + "'");
    }
    if (std::set<std::string>(policies.begin(), policies.end()).size() != policies.size()) {
        throw ConfigError("policies", "duplicate policy name");
    }
    if (estimators.empty()) throw ConfigError("estimators", "must name at least one estimator");
    for (const auto& e : estimators) {
        try {
            estimator_spec(e);
        } catch (const std::invalid_argument&) {
            throw ConfigError("estimators", "unknown estimator '" + e + "'");
        }
    }
    if (std::set<std::string>(estimators.begin(), estimators.end()).size() != estimators.size()) {
        throw ConfigError("estimators", "duplicate estimator name");
    }
    for (const auto& [e, c] : reward_channels) {
        if (std::find(estimators.begin(), estimators.end(), e) == estimators.end()) {
            throw ConfigError("reward_channels." + e, "estimator is not selected");
        }
        if (!known_channels().count(c)) throw ConfigError("reward_channels." + e, "unknown channel '" + c + "'");
    }
    if (k == 0) throw ConfigError("k", "must be >= 1");
    if (k >= n_trajectories) throw ConfigError("k", "must be smaller than n_trajectories");
    if (h_mode == HMode::fixed && !std::isfinite(h)) throw ConfigError("h", "must be finite");
    if (q_sweeps == 0) throw ConfigError("q_sweeps", "must be >= 1");
    if (!(reward_fit.ridge >= 0.0)) throw ConfigError("reward_fit.ridge", "must be >= 0");
    if (!(reward_fit.tolerance > 0.0)) throw ConfigError("reward_fit.tolerance", "must be > 0");
    if (reward_fit.max_iterations == 0) throw ConfigError("reward_fit.max_iterations", "must be >= 1");
    if (!(behavior_smoothing >= 0.0)) throw ConfigError("behavior_smoothing", "must be >= 0");
    if (bootstrap_b == 0) throw ConfigError("bootstrap_b", "must be >= 1");
    if (rand_repetitions == 0) throw ConfigError("rand_repetitions", "must be >= 1");
}

ordered ExperimentConfig::to_json() const {
    ordered j;
    j["schema_version"] = kSchemaVersion;
    j["seed"] = seed;
    j["sim"] = sim_to_json(sim);
    j["n_trajectories"] = n_trajectories;
    j["behavior_epsilon"] = behavior_epsilon;
    j["policies"] = policies;
    j["estimators"] = estimators;
    ordered channels = ordered::object();
    for (const auto& [e, c] : reward_channels) channels[e] = c;
    j["reward_channels"] = std::move(channels);
    j["k"] = k;
    j["h_mode"] = to_string(h_mode);
    j["h"] = h;
    j["q_backup"] = q_backup == Backup::policy ? "policy" : "batch_optimal";
    j["q_sweeps"] = q_sweeps;
    j["reward_fit"] = ordered{{"solver", to_string(reward_fit.solver)},
                              {"ridge", reward_fit.ridge},
                              {"tolerance", reward_fit.tolerance},
                              {"max_iterations", reward_fit.max_iterations}};
    j["behavior"] = to_string(behavior);
    j["behavior_smoothing"] = behavior_smoothing;
    j["bootstrap_b"] = bootstrap_b;
    j["rand_repetitions"] = rand_repetitions;
    return j;
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
    ObjectReader r(j, "");
    r.allow({"schema_version", "seed", "sim", "n_trajectories", "behavior_epsilon", "policies", "estimators",
             "reward_channels", "k", "h_mode", "h", "q_backup", "q_sweeps", "reward_fit", "behavior",
             "behavior_smoothing", "bootstrap_b", "rand_repetitions"});
    if (!r.has("schema_version")) throw ConfigError("schema_version", "missing required field");
    int version = 0;
    r.read("schema_version", version);
    if (version != kSchemaVersion) {
        throw ConfigError("schema_version", "unsupported version " + std::to_string(version) + " (expected " +
                                                std::to_string(kSchemaVersion) + ")");
    }
    ExperimentConfig c;
    r.read("seed", c.seed, 0);
    if (r.has("sim")) read_sim(r.at("sim"), c.sim);
    r.read("n_trajectories", c.n_trajectories);
    r.read("behavior_epsilon", c.behavior_epsilon);
    r.read("policies", c.policies);
    r.read("estimators", c.estimators);
    if (r.has("reward_channels")) {
        const auto& rc = r.at("reward_channels");
        if (!rc.is_object()) throw ConfigError("reward_channels", "expected an object");
        for (const auto& [e, ch] : rc.items()) {
            if (!ch.is_string()) throw ConfigError("reward_channels." + e, "expected a string");
            c.reward_channels[e] = ch.get<std::string>();
        }
    }
    r.read("k", c.k);
    std::string mode = to_string(c.h_mode);
    r.read("h_mode", mode);
    if (mode == "all_critical") {
        c.h_mode = HMode::all_critical;
    } else if (mode == "elbow") {
        c.h_mode = HMode::elbow;
    } else if (mode == "fixed") {
        c.h_mode = HMode::fixed;
        if (!r.has("h")) throw ConfigError("h", "required when h_mode is fixed");
    } else if (mode == "none") {
        c.h_mode = HMode::none;
    } else {
        throw ConfigError("h_mode", "expected all_critical, elbow, fixed or none");
    }
    r.read("h", c.h);
    std::string backup = "policy";
    r.read("q_backup", backup);
    if (backup == "policy") {
        c.q_backup = Backup::policy;
    } else if (backup == "batch_optimal") {
        c.q_backup = Backup::batch_optimal;
    } else {
        throw ConfigError("q_backup", "expected policy or batch_optimal");
    }
    r.read("q_sweeps", c.q_sweeps);
    if (r.has("reward_fit")) {
        ObjectReader f(r.at("reward_fit"), "reward_fit");
        f.allow({"solver", "ridge", "tolerance", "max_iterations"});
        std::string solver = to_string(c.reward_fit.solver);
        f.read("solver", solver);
        try {
            c.reward_fit.solver = solver_from_string(solver);
        } catch (const std::invalid_argument&) {
            throw ConfigError("reward_fit.solver", "expected closed_form or iterative");
        }
        f.read("ridge", c.reward_fit.ridge);
        f.read("tolerance", c.reward_fit.tolerance);
        f.read("max_iterations", c.reward_fit.max_iterations);
    }
    std::string behavior = to_string(c.behavior);
    r.read("behavior", behavior);
    if (behavior == "stored") {
        c.behavior = BehaviorSource::stored;
    } else if (behavior == "cloned") {
        c.behavior = BehaviorSource::cloned;
    } else {
        throw ConfigError("behavior", "expected stored or cloned");
    }
    r.read("behavior_smoothing", c.behavior_smoothing);
    r.read("bootstrap_b", c.bootstrap_b);
    r.read("rand_repetitions", c.rand_repetitions);
    c.validate();
    return c;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("<file>", "cannot open config file " + path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("<file>", std::string("invalid JSON: ") + e.what());
    }
    return ExperimentConfig::from_json(j);
}

// ---------------------------------------------------------------------------
// Hashing and I/O helpers
// ---------------------------------------------------------------------------

std::string sha256_hex(const std::string& bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int length = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &length, EVP_sha256(), nullptr) != 1) {
        throw std::runtime_error("SHA-256 computation failed");
    }
    std::ostringstream out;
    for (unsigned int i = 0; i < length; ++i) out << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
    return out.str();
}

namespace {

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open for reading: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << text;
    if (!out) throw std::runtime_error("write failed: " + path);
}

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw std::runtime_error("cannot create output directory " + dir);
}

std::string path_in(const std::string& dir, const std::string& name) { return (fs::path(dir) / name).string(); }

std::string num(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

std::string num(const std::optional<double>& x) { return x ? num(*x) : std::string(); }

ordered opt_json(const std::optional<double>& x) { return x ? ordered(*x) : ordered(nullptr); }

template <typename F>
auto in_stage(const char* stage, F&& fn) -> decltype(fn()) {
    try {
        return fn();
    } catch (const StageError&) {
        throw;
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError(stage, e.what());
    }
}

} // namespace

std::string sha256_file(const std::string& path) { return sha256_hex(read_file(path)); }

void save_rhat(const std::string& path, const std::map<std::string, EventRewards>& channels, std::size_t n) {
    std::vector<std::string> names;
    for (const auto& name : reconstructed_channels()) {
        if (channels.count(name)) names.push_back(name);
    }
    for (const auto& [name, values] : channels) {
        if (std::find(names.begin(), names.end(), name) == names.end()) names.push_back(name);
        if (values.size() != n) throw std::invalid_argument("channel " + name + " does not match the dataset size");
    }
    std::ostringstream out;
    ordered header;
    header["kind"] = "rhat";
    header["n_traj"] = n;
    header["channels"] = names;
    out << header.dump() << '\n';
    for (std::size_t i = 0; i < n; ++i) {
        ordered line;
        for (const auto& name : names) line[name] = channels.at(name)[i];
        out << line.dump() << '\n';
    }
    write_file(path, out.str());
}

std::map<std::string, EventRewards> load_rhat(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open for reading: " + path);
    std::string text;
    if (!std::getline(in, text)) throw std::runtime_error("reward file is empty: " + path);
    const json header = json::parse(text);
    if (header.value("kind", "") != "rhat") throw std::runtime_error("not a reconstructed-reward file: " + path);
    const auto n = header.at("n_traj").get<std::size_t>();
    const auto names = header.at("channels").get<std::vector<std::string>>();
    std::map<std::string, EventRewards> channels;
    for (const auto& name : names) channels[name].reserve(n);
    std::size_t count = 0;
    while (std::getline(in, text)) {
        if (text.empty()) continue;
        const json line = json::parse(text);
        for (const auto& name : names) channels[name].push_back(line.at(name).get<std::vector<double>>());
        ++count;
    }
    if (count != n) throw std::runtime_error("reward file has " + std::to_string(count) + " rows, expected " +
                                             std::to_string(n));
    return channels;
}

// ---------------------------------------------------------------------------
// In-memory stages
// ---------------------------------------------------------------------------

PolicySet build_policies(const ExperimentConfig& config) {
    PolicySet set;
    const Policy optimal = sepsis::solve_optimal_policy(config.sim);
    set.behavior = sepsis::epsilon_soft(optimal, config.behavior_epsilon);
    for (const auto& name : config.policies) {
        set.names.push_back(name);
        if (name == "optimal") {
            set.targets.push_back(optimal);
        } else if (name == "with_antibiotics") {
            set.targets.push_back(sepsis::with_antibiotics(optimal));
        } else if (name == "without_antibiotics") {
            set.targets.push_back(sepsis::without_antibiotics(optimal));
        } else if (name == "behavior") {
            set.targets.push_back(set.behavior);
        } else if (name == "uniform") {
            set.targets.emplace_back(static_cast<std::size_t>(sepsis::kNumStates),
                                     static_cast<std::size_t>(sepsis::kNumActions));
        } else {
            throw ConfigError("policies", "unknown policy '" + name + "'");
        }
    }
    return set;
}

Dataset simulate(const ExperimentConfig& config, const PolicySet& policies, std::size_t threads) {
    sepsis::SimConfig sim = config.sim;
    sim.seed = config.seed;
    return sepsis::simulate_dataset(policies.behavior, sim, config.n_trajectories, threads);
}

Reconstruction reconstruct_rewards(const Dataset& dataset, const ExperimentConfig& config, std::size_t threads,
                                   std::ostream& log) {
    Reconstruction rec;
    const double gamma = dataset.gamma;
    rec.model = fit_preliminary(dataset, gamma, config.reward_fit);
    const EventRewards rtilde = predict_events(rec.model, dataset);

    QFitOptions qopt;
    qopt.max_sweeps = config.q_sweeps;
    qopt.backup = config.q_backup;
    qopt.behavior_smoothing = config.behavior_smoothing;
    rec.q = fit_q(dataset, rtilde, gamma, qopt);
    rec.gaps = sorted_gaps(rec.q);

    switch (config.h_mode) {
        case HMode::all_critical: rec.critical = CriticalSet::all(dataset.n_obs); break;
        case HMode::none: rec.critical = CriticalSet::none(dataset.n_obs); break;
        case HMode::fixed: rec.critical = critical_set(rec.q, config.h); break;
        case HMode::elbow: {
            rec.elbow = select_threshold_elbow(rec.gaps);
            if (rec.elbow->degenerate) {
                log << "warning: Q-gap curve has no elbow; using h = 0\n";
            }
            rec.critical = critical_set(rec.q, rec.elbow->threshold);
            break;
        }
    }

    const FeatureTable features = dataset.n_obs == static_cast<std::size_t>(sepsis::kNumStates)
                                      ? sepsis::feature_table()
                                      : identity_features(dataset.n_obs);
    rec.index = find_k_nearest(dataset, features, config.k, nullptr, threads);

    rec.channels["rtilde"] = rtilde;
    rec.channels["hope"] = reconstruct(dataset, rtilde, rec.critical, rec.index);
    rec.channels["sparse_hope"] = reconstruct(dataset, sparse_rewards(dataset), rec.critical, rec.index);
    rec.channels["soft_hope"] = soft_rewards(dataset, rtilde, rec.index);
    RandHopeOptions ropt;
    ropt.k = config.k;
    ropt.repetitions = config.rand_repetitions;
    ropt.seed = config.seed;
    ropt.threads = threads;
    rec.channels["rand_hope"] = rand_hope_mean_rewards(dataset, rtilde, features, rec.critical, ropt);
    return rec;
}

const EstimatorSummary* EvaluationReport::summary(const std::string& estimator) const {
    for (const auto& s : summaries) {
        if (s.estimator == estimator) return &s;
    }
    return nullptr;
}

namespace {

std::string reward_source(const std::string& channel) {
    if (channel == "sparse") return "sparse";
    if (channel == "ground_truth") return "ground_truth";
    return "reconstructed";
}

} // namespace

EvaluationReport evaluate(const Dataset& dataset, std::map<std::string, EventRewards> channels,
                          const ExperimentConfig& config, const PolicySet& policies, bool with_truth,
                          std::size_t threads) {
    if (!channels.count("sparse")) channels["sparse"] = sparse_rewards(dataset);

    std::vector<EstimatorSpec> specs;
    for (const auto& name : config.estimators) {
        EstimatorSpec spec = estimator_spec(name);
        const auto it = config.reward_channels.find(name);
        if (it != config.reward_channels.end()) spec.channel = it->second;
        if (!channels.count(spec.channel)) {
            throw std::invalid_argument("estimator " + name + " reads channel '" + spec.channel +
                                        "', which is not available");
        }
        specs.push_back(spec);
    }

    EvaluationContext context;
    context.dataset = &dataset;
    context.gamma = dataset.gamma;
    context.channels = &channels;
    context.fqe_options.max_sweeps = config.q_sweeps;

    std::optional<Policy> cloned;
    if (config.behavior == BehaviorSource::cloned) cloned = estimate_behavior_policy(dataset, config.behavior_smoothing);

    EvaluationReport report;
    const auto rows = all_rows(dataset.size());
    for (std::size_t p = 0; p < policies.targets.size(); ++p) {
        const Policy& target = policies.targets[p];
        const ImportanceRatios ratios =
            cloned ? compute_ratios(dataset, target, *cloned) : compute_ratios_stored(dataset, target);
        const auto point = run_estimators(specs, context, target, ratios, rows);
        const auto boot = bootstrap(
            dataset.size(), config.bootstrap_b, specs.size(), config.seed, threads,
            [&](std::span<const std::size_t> sample) { return run_estimators(specs, context, target, ratios, sample); });

        PolicyEvaluation eval;
        eval.policy = policies.names[p];
        if (with_truth) {
            sepsis::SimConfig sim = config.sim;
            eval.true_value = sepsis::true_policy_value(target, sim);
        }
        for (std::size_t s = 0; s < specs.size(); ++s) {
            EstimateResult r;
            r.estimator = specs[s].name;
            r.reward_source = reward_source(specs[s].channel);
            r.point_estimate = point[s];
            r.bootstrap_samples = boot.samples[s];
            r.bootstrap_failures = boot.failures[s];
            eval.estimates[specs[s].name] = std::move(r);
        }
        report.policies.push_back(std::move(eval));
    }

    for (const auto& spec : specs) {
        EstimatorSummary s;
        s.estimator = spec.name;
        s.channel = spec.channel;
        std::vector<double> truths;
        std::vector<double> points;
        bool complete = true;
        double aae_total = 0.0;
        bool aae_ok = with_truth;
        for (const auto& eval : report.policies) {
            const auto& r = eval.estimates.at(spec.name);
            if (!r.point_estimate || !eval.true_value) {
                complete = false;
            } else {
                truths.push_back(*eval.true_value);
                points.push_back(*r.point_estimate);
            }
            if (aae_ok) {
                if (!eval.true_value || r.bootstrap_samples->empty()) {
                    aae_ok = false;
                } else {
                    double err = 0.0;
                    for (double v : *r.bootstrap_samples) err += absolute_error(*eval.true_value, v);
                    aae_total += err / static_cast<double>(r.bootstrap_samples->size());
                }
            }
        }
        if (aae_ok) s.aae = aae_total / static_cast<double>(report.policies.size());
        std::optional<std::size_t> best;
        for (std::size_t p = 0; p < report.policies.size(); ++p) {
            const auto& pe = report.policies[p].estimates.at(spec.name).point_estimate;
            if (!pe) continue;
            if (!best || *pe > *report.policies[*best].estimates.at(spec.name).point_estimate) best = p;
        }
        if (best) s.best_policy = report.policies[*best].policy;
        if (complete && report.policies.size() >= 2) {
            const Regret regret = regret_at_1(truths, points);
            s.regret_at_1 = regret.value;
            s.regret_normalized = regret.normalized;
            s.spearman = spearman_rank(truths, points);
        }
        report.summaries.push_back(std::move(s));

        for (std::size_t a = 0; a < report.policies.size(); ++a) {
            for (std::size_t b = a + 1; b < report.policies.size(); ++b) {
                const auto& sa = *report.policies[a].estimates.at(spec.name).bootstrap_samples;
                const auto& sb = *report.policies[b].estimates.at(spec.name).bootstrap_samples;
                if (sa.size() < 2 || sb.size() < 2) continue;
                PairwiseTest test;
                test.estimator = spec.name;
                test.report = welch_t_test(sa, sb);
                test.report.first = report.policies[a].policy;
                test.report.second = report.policies[b].policy;
                report.significance.push_back(std::move(test));
            }
        }
    }
    return report;
}

// ---------------------------------------------------------------------------
// File stages
// ---------------------------------------------------------------------------

namespace {

void write_evaluation(const EvaluationReport& report, const std::string& out_dir) {
    std::ostringstream csv;
    csv << "estimator,channel,policy,true_value,estimate,abs_error,aae,bootstrap_mean,bootstrap_se,"
           "bootstrap_failures,best_policy,regret_at_1,spearman\n";
    std::ostringstream boot;
    boot << "estimator,policy,replica,value\n";
    ordered metrics;
    ordered policies_json = ordered::array();
    for (const auto& eval : report.policies) {
        ordered pj;
        pj["policy"] = eval.policy;
        pj["true_value"] = opt_json(eval.true_value);
        ordered estimates = ordered::array();
        for (const auto& s : report.summaries) {
            const auto& r = eval.estimates.at(s.estimator);
            estimates.push_back(r.to_json());
        }
        pj["estimates"] = std::move(estimates);
        policies_json.push_back(std::move(pj));
    }
    ordered summaries = ordered::array();
    for (const auto& s : report.summaries) {
        ordered sj;
        sj["estimator"] = s.estimator;
        sj["channel"] = s.channel;
        sj["aae"] = opt_json(s.aae);
        sj["regret_at_1"] = opt_json(s.regret_at_1);
        sj["regret_normalized"] = s.regret_normalized;
        sj["spearman"] = opt_json(s.spearman);
        sj["best_policy"] = s.best_policy ? ordered(*s.best_policy) : ordered(nullptr);
        summaries.push_back(std::move(sj));

        for (const auto& eval : report.policies) {
            const auto& r = eval.estimates.at(s.estimator);
            std::optional<double> abs_err;
            if (eval.true_value && r.point_estimate) abs_err = absolute_error(*eval.true_value, *r.point_estimate);
            std::optional<double> boot_mean;
            std::optional<double> boot_se;
            std::optional<double> aae;
            const auto& samples = *r.bootstrap_samples;
            if (!samples.empty()) {
                boot_mean = mean(samples);
                boot_se = sample_sd(samples);
                if (eval.true_value) {
                    double err = 0.0;
                    for (double v : samples) err += absolute_error(*eval.true_value, v);
                    aae = err / static_cast<double>(samples.size());
                }
            }
            csv << s.estimator << ',' << s.channel << ',' << eval.policy << ',' << num(eval.true_value) << ','
                << num(r.point_estimate) << ',' << num(abs_err) << ',' << num(aae) << ',' << num(boot_mean) << ','
                << num(boot_se) << ',' << r.bootstrap_failures << ',' << s.best_policy.value_or("") << ','
                << num(s.regret_at_1) << ',' << num(s.spearman) << '\n';
            for (std::size_t b = 0; b < samples.size(); ++b) {
                boot << s.estimator << ',' << eval.policy << ',' << b << ',' << num(samples[b]) << '\n';
            }
        }
    }
    metrics["estimators"] = std::move(summaries);
    metrics["policies"] = std::move(policies_json);

    std::ostringstream sig;
    sig << "estimator,policy_a,policy_b,t_statistic,df,p_value,significant,degenerate\n";
    ordered sig_json = ordered::array();
    for (const auto& test : report.significance) {
        const auto& r = test.report;
        sig << test.estimator << ',' << r.first << ',' << r.second << ',' << num(r.t_statistic) << ','
            << num(r.degrees_of_freedom) << ',' << num(r.p_value) << ',' << (r.significant ? 1 : 0) << ','
            << (r.degenerate ? 1 : 0) << '\n';
        const bool finite_t = std::isfinite(r.t_statistic);
        sig_json.push_back(ordered{{"estimator", test.estimator},
                                   {"policy_a", r.first},
                                   {"policy_b", r.second},
                                   {"t_statistic", finite_t ? ordered(r.t_statistic) : ordered(num(r.t_statistic))},
                                   {"df", r.degrees_of_freedom},
                                   {"p_value", r.p_value},
                                   {"significant", r.significant},
                                   {"degenerate", r.degenerate}});
    }
    metrics["significance"] = std::move(sig_json);
    metrics["not_implemented"] = {"dualdice", "magic"};

    write_file(path_in(out_dir, "metrics.csv"), csv.str());
    write_file(path_in(out_dir, "metrics.json"), metrics.dump(2) + "\n");
    write_file(path_in(out_dir, "significance.csv"), sig.str());
    write_file(path_in(out_dir, "bootstrap.csv"), boot.str());
}

} // namespace

void cmd_simulate(const ExperimentConfig& config, const std::string& out_dir, std::ostream& log) {
    in_stage("simulate", [&] {
        ensure_dir(out_dir);
        const PolicySet policies = build_policies(config);
        const Dataset data = simulate(config, policies, thread_count());
        save_dataset(path_in(out_dir, "dataset.jsonl"), data);
        save_ground_truth(path_in(out_dir, "ground_truth.jsonl"), data);
        const auto summary = sepsis::summarize_outcomes(data);
        ordered j;
        j["n_trajectories"] = data.size();
        j["discharged"] = summary.discharged;
        j["died"] = summary.died;
        j["timed_out"] = summary.timed_out;
        j["mean_return"] = summary.mean_return;
        write_file(path_in(out_dir, "summary.json"), j.dump(2) + "\n");
        log << "simulated " << data.size() << " trajectories: " << summary.discharged << " discharged, "
            << summary.died << " died, " << summary.timed_out << " timed out; mean return " << summary.mean_return
            << '\n';
    });
}

void cmd_reconstruct(const ExperimentConfig& config, const std::string& dataset_path, const std::string& out_dir,
                     std::ostream& log) {
    const Dataset data = in_stage("reconstruct", [&] {
        ensure_dir(out_dir);
        return load_dataset(dataset_path);
    });
    const Reconstruction rec = in_stage("reconstruct", [&] { return reconstruct_rewards(data, config, thread_count(), log); });
    in_stage("reconstruct", [&] {
        write_file(path_in(out_dir, "reward_model.json"), rec.model.to_json().dump(2) + "\n");
        write_file(path_in(out_dir, "qtable.json"), rec.q.to_json().dump(2) + "\n");
        ordered cj = rec.critical.to_json();
        cj["h_mode"] = to_string(config.h_mode);
        cj["gaps"] = rec.gaps;
        if (rec.elbow) cj["elbow"] = ordered{{"knee_index", rec.elbow->knee_index}, {"degenerate", rec.elbow->degenerate}};
        write_file(path_in(out_dir, "critical_set.json"), cj.dump(2) + "\n");
        write_file(path_in(out_dir, "neighbors.json"), rec.index.to_json().dump() + "\n");
        save_rhat(path_in(out_dir, "rhat.jsonl"), rec.channels, data.size());
        log << "reconstructed rewards: " << rec.critical.size() << " critical observations, K = " << config.k
            << ", reward-fit loss " << rec.model.meta.loss << '\n';
    });
}

EvaluationReport cmd_evaluate(const ExperimentConfig& config, const std::string& dataset_path,
                              const std::string& rhat_path, const std::optional<std::string>& ground_truth_path,
                              const std::string& out_dir, std::ostream& log) {
    return in_stage("evaluate", [&] {
        ensure_dir(out_dir);
        Dataset data = load_dataset(dataset_path);
        auto channels = load_rhat(rhat_path);
        if (ground_truth_path) {
            load_ground_truth(*ground_truth_path, data);
            channels["ground_truth"] = ground_truth_rewards(data);
        }
        const bool with_truth = data.n_obs == static_cast<std::size_t>(sepsis::kNumStates) &&
                                data.n_act == static_cast<std::size_t>(sepsis::kNumActions);
        if (!with_truth) log << "warning: no oracle for this dataset; reporting estimates only\n";
        const PolicySet policies = build_policies(config);
        EvaluationReport report = evaluate(data, std::move(channels), config, policies, with_truth, thread_count());
        write_evaluation(report, out_dir);
        for (const auto& s : report.summaries) {
            log << std::left << std::setw(12) << s.estimator << " AAE " << num(s.aae) << "  spearman "
                << num(s.spearman) << "  best " << s.best_policy.value_or("-") << '\n';
        }
        return report;
    });
}

bool BenchmarkOutcome::all_passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.passed; });
}

std::vector<CheckResult> acceptance_checks(const EvaluationReport& report) {
    std::vector<CheckResult> checks;
    const auto* hope = report.summary("hope");
    const auto* wis = report.summary("wis");

    CheckResult ranking{"hope_ranks_policies", false, ""};
    if (hope == nullptr) {
        ranking.detail = "hope was not evaluated";
    } else if (!hope->spearman) {
        ranking.detail = "spearman undefined";
    } else {
        ranking.passed = *hope->spearman == 1.0;
        ranking.detail = "spearman = " + num(hope->spearman);
    }
    checks.push_back(ranking);

    CheckResult error{"hope_aae_below_sparse_wis", false, ""};
    if (hope == nullptr || wis == nullptr) {
        error.detail = "hope and wis must both be evaluated";
    } else if (wis->channel != "sparse") {
        error.detail = "wis does not read the sparse channel";
    } else if (!hope->aae || !wis->aae) {
        error.detail = "AAE unavailable";
    } else {
        error.passed = *hope->aae < *wis->aae;
        error.detail = "hope " + num(hope->aae) + " vs wis " + num(wis->aae);
    }
    checks.push_back(error);
    return checks;
}

BenchmarkOutcome cmd_benchmark(const ExperimentConfig& config, const std::string& out_dir, std::ostream& log) {
    cmd_simulate(config, out_dir, log);
    const std::string dataset = path_in(out_dir, "dataset.jsonl");
    const std::string truth = path_in(out_dir, "ground_truth.jsonl");
    cmd_reconstruct(config, dataset, out_dir, log);
    BenchmarkOutcome outcome;
    outcome.report = cmd_evaluate(config, dataset, path_in(out_dir, "rhat.jsonl"), truth, out_dir, log);
    outcome.checks = acceptance_checks(outcome.report);

    in_stage("benchmark", [&] {
        ordered artifacts;
        for (const char* name : {"dataset.jsonl", "ground_truth.jsonl", "summary.json", "reward_model.json",
                                 "qtable.json", "critical_set.json", "neighbors.json", "rhat.jsonl", "metrics.csv",
                                 "metrics.json", "significance.csv", "bootstrap.csv"}) {
            artifacts[name] = sha256_file(path_in(out_dir, name));
        }
        const ordered config_json = config.to_json();
        ordered report;
        report["schema_version"] = kSchemaVersion;
        report["provenance"] = ordered{{"config_sha256", sha256_hex(config_json.dump())},
                                       {"seed", config.seed},
                                       {"artifacts", std::move(artifacts)}};
        report["config"] = config_json;
        ordered checks = ordered::array();
        for (const auto& c : outcome.checks) {
            checks.push_back(ordered{{"name", c.name}, {"passed", c.passed}, {"detail", c.detail}});
        }
        report["checks"] = std::move(checks);
        write_file(path_in(out_dir, "report.json"), report.dump(2) + "\n");
        for (const auto& c : outcome.checks) {
            log << (c.passed ? "PASS " : "FAIL ") << c.name << ": " << c.detail << '\n';
        }
    });
    return outcome;
}

void cmd_report(const std::string& out_dir, std::ostream& out) {
    in_stage("report", [&] {
        const json metrics = json::parse(read_file(path_in(out_dir, "metrics.json")));
        auto cell = [](const json& v) {
            if (v.is_null()) return std::string("-");
            if (v.is_number()) {
                char buf[32];
                std::snprintf(buf, sizeof buf, "%.4f", v.get<double>());
                return std::string(buf);
            }
            return v.get<std::string>();
        };
        out << "| estimator | channel | AAE | regret@1 | spearman | best policy |\n";
        out << "|---|---|---|---|---|---|\n";
        for (const auto& s : metrics.at("estimators")) {
            out << "| " << cell(s.at("estimator")) << " | " << cell(s.at("channel")) << " | " << cell(s.at("aae"))
                << " | " << cell(s.at("regret_at_1")) << " | " << cell(s.at("spearman")) << " | "
                << cell(s.at("best_policy")) << " |\n";
        }
        out << "\n| policy | true value |";
        for (const auto& s : metrics.at("estimators")) out << ' ' << cell(s.at("estimator")) << " |";
        out << "\n|---|---|";
        for (std::size_t i = 0; i < metrics.at("estimators").size(); ++i) out << "---|";
        out << '\n';
        for (const auto& p : metrics.at("policies")) {
            out << "| " << cell(p.at("policy")) << " | " << cell(p.at("true_value")) << " |";
            for (const auto& e : p.at("estimates")) out << ' ' << cell(e.at("point_estimate")) << " |";
            out << '\n';
        }
        const std::string path = path_in(out_dir, "report.json");
        if (fs::exists(path)) {
            const json report = json::parse(read_file(path));
            out << '\n';
            for (const auto& c : report.at("checks")) {
                out << "- " << (c.at("passed").get<bool>() ? "PASS" : "FAIL") << ' ' << c.at("name").get<std::string>()
                    << ": " << c.at("detail").get<std::string>() << '\n';
            }
        }
    });
}

} // namespace hope
