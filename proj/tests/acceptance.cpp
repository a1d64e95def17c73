// Acceptance suite: one PASS/FAIL line per criterion.
//
// Usage: acceptance [criterion ...]   (default: all eight)

#include "hope/errors.hpp"
#include "hope/estimators.hpp"
#include "hope/experiment.hpp"
#include "hope/metrics.hpp"
#include "hope/neighbors.hpp"
#include "hope/parallel.hpp"
#include "hope/reward_model.hpp"
#include "support.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

using namespace hope;
using namespace hope::testing;
namespace fs = std::filesystem;

namespace {

struct Verdict {
    bool passed = false;
    std::string detail;
};

std::string fmt(const char* f, double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, x);
    return buf;
}

fs::path scratch(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("hope_acceptance_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

const Policy& fixture_behavior() {
    static const Policy p = make_policy({{0.6, 0.4}, {0.3, 0.7}, {0.5, 0.5}, {0.7, 0.3}, {0.5, 0.5}});
    return p;
}

const Policy& fixture_target() {
    static const Policy p = make_policy({{0.2, 0.8}, {0.6, 0.4}, {0.3, 0.7}, {0.4, 0.6}, {0.5, 0.5}});
    return p;
}

// HOPE through the estimator registry, with the true per-step rewards as the
// reconstructed channel and the stored behavior probabilities.
double hope_known_channel(const Dataset& d, const Policy& target, std::span<const std::size_t> rows,
                          const ImportanceRatios& w, const std::map<std::string, EventRewards>& channels) {
    EvaluationContext ctx;
    ctx.dataset = &d;
    ctx.gamma = d.gamma;
    ctx.channels = &channels;
    const auto out = run_estimators({estimator_spec("hope")}, ctx, target, w, rows);
    if (!out[0]) throw Error("HOPE estimate failed");
    return *out[0];
}

Verdict criterion1() {
    const ExperimentConfig config;
    const fs::path dir = scratch("benchmark");
    std::ostringstream log;
    const auto start = std::chrono::steady_clock::now();
    const auto outcome = cmd_benchmark(config, dir.string(), log);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const auto* hope = outcome.report.summary("hope");
    const auto* wis = outcome.report.summary("wis");
    if (hope == nullptr || wis == nullptr || !hope->spearman || !hope->aae || !wis->aae) {
        return {false, "HOPE or WIS summary missing"};
    }
    const bool ranking = *hope->spearman == 1.0;
    const bool accuracy = *hope->aae < *wis->aae;
    const bool fast = seconds <= 600.0;
    std::string detail = "spearman(hope)=" + fmt("%.4g", *hope->spearman) + ", AAE hope=" + fmt("%.4f", *hope->aae) +
                         " vs wis=" + fmt("%.4f", *wis->aae) + ", runtime " + fmt("%.1f", seconds) + " s";
    for (const auto& p : outcome.report.policies) {
        detail += "; " + p.policy + ": V=" + fmt("%.4f", p.true_value.value_or(NAN));
        const auto h = p.estimates.find("hope");
        const auto w = p.estimates.find("wis");
        if (h != p.estimates.end() && h->second.point_estimate) detail += " hope=" + fmt("%.4f", *h->second.point_estimate);
        if (w != p.estimates.end() && w->second.point_estimate) detail += " wis=" + fmt("%.4f", *w->second.point_estimate);
    }
    return {ranking && accuracy && fast, detail};
}

Verdict criterion2() {
    const auto m = five_state_mdp();
    const double truth = fixture_value(m, fixture_target());
    std::size_t improved = 0;
    std::size_t within = 0;
    bool first_within = false;
    double first_se = 0.0;
    double first_err = 0.0;
    for (std::uint64_t s = 0; s < 50; ++s) {
        const auto small = simulate_fixture(m, fixture_behavior(), 200, 2 * s);
        const auto large = simulate_fixture(m, fixture_behavior(), 5000, 2 * s + 1);
        const std::map<std::string, EventRewards> cs{{"hope", ground_truth_rewards(small)}};
        const std::map<std::string, EventRewards> cl{{"hope", ground_truth_rewards(large)}};
        const auto ws = compute_ratios_stored(small, fixture_target());
        const auto wl = compute_ratios_stored(large, fixture_target());
        const double es = hope_known_channel(small, fixture_target(), all_rows(small.size()), ws, cs);
        const double el = hope_known_channel(large, fixture_target(), all_rows(large.size()), wl, cl);
        if (std::abs(el - truth) < std::abs(es - truth)) ++improved;

        const auto boot = bootstrap(large.size(), 500, 1000 + s, thread_count(), [&](std::span<const std::size_t> rows) {
            return hope_known_channel(large, fixture_target(), rows, wl, cl);
        });
        const double se = sample_sd(boot.samples[0]);
        const bool ok = std::abs(el - truth) <= 3.0 * se;
        within += ok ? 1 : 0;
        if (s == 0) {
            first_within = ok;
            first_se = se;
            first_err = el - truth;
        }
    }
    const std::string detail = "error shrank from N=200 to N=5000 in " + std::to_string(improved) +
                               "/50 seeds (need >= 45); seed 0 at N=5000: error " + fmt("%.3g", first_err) +
                               ", bootstrap SE " + fmt("%.5f", first_se) + "; within 3 SE in " +
                               std::to_string(within) + "/50 seeds";
    return {improved >= 45 && first_within, detail};
}

Verdict criterion3() {
    const auto m = five_state_mdp();
    const std::vector<std::pair<Policy, Policy>> pairs{
        {fixture_target(), fixture_behavior()},
        {make_policy({{0.9, 0.1}, {0.1, 0.9}, {0.9, 0.1}, {0.1, 0.9}, {0.5, 0.5}}), Policy(5, 2)},
        {make_policy({{0.5, 0.5}, {0.5, 0.5}, {0.5, 0.5}, {0.5, 0.5}, {0.5, 0.5}}),
         make_policy({{0.8, 0.2}, {0.25, 0.75}, {0.6, 0.4}, {0.35, 0.65}, {0.5, 0.5}})},
    };
    bool ok = true;
    std::string detail;
    for (std::size_t p = 0; p < pairs.size(); ++p) {
        const auto d = simulate_fixture(m, pairs[p].second, 10000, 77 + p);
        const auto w = compute_ratios(d, pairs[p].first, pairs[p].second).weight;
        const double mu = mean(w);
        const double se = sample_sd(w) / std::sqrt(static_cast<double>(w.size()));
        const bool pass = std::abs(mu - 1.0) <= 3.0 * se;
        ok = ok && pass;
        detail += (p ? "; " : "") + std::string("pair ") + std::to_string(p + 1) + ": mean w=" + fmt("%.4f", mu) +
                  " (SE " + fmt("%.4f", se) + ")";
    }
    return {ok, detail};
}

Verdict criterion4() {
    Rng rng(404);
    double worst = 0.0;
    for (int rep = 0; rep < 100; ++rep) {
        const std::size_t n = 2 + rng.below(29);
        const std::size_t n_obs = 2 + rng.below(8);
        const auto d = random_dataset(rng, n, 10, n_obs, 3);
        const std::size_t k = 1 + rng.below(std::min<std::size_t>(5, n - 1));
        CriticalSet critical(n_obs, 0.0);
        for (std::size_t o = 0; o < n_obs; ++o) {
            if (rng.uniform() < 0.6) critical.insert(static_cast<int>(o));
        }
        const auto features = identity_features(n_obs);
        const auto index = find_k_nearest(d, features, k, &critical, 1);
        const auto rt = random_events(rng, d, -3.0, 3.0);

        const EventLayout layout(d);
        const auto m = build_matrix(index, layout);
        const auto mu = m.apply(layout.flatten(rt));
        auto matrix_form = layout.flatten(rt);
        for (std::size_t r = 0; r < m.n_rows(); ++r) matrix_form[m.row_event[r]] = mu[r];

        const auto loop_form = layout.flatten(reconstruct(d, rt, critical, index));
        for (std::size_t i = 0; i < d.size(); ++i) {
            for (std::size_t t = 0; t < d.trajectories[i].length(); ++t) {
                double expected = rt[i][t];
                if (critical.contains(d.trajectories[i].observations[t])) {
                    expected = 0.0;
                    for (const auto& e : index.at(i, t)) expected += rt[e.trajectory][e.step];
                    expected /= static_cast<double>(k);
                }
                const std::size_t f = layout.flat(i, t);
                worst = std::max({worst, std::abs(matrix_form[f] - loop_form[f]), std::abs(matrix_form[f] - expected)});
            }
        }
    }
    return {worst <= 1e-12, "max |M r~ - loop| over 100 instances = " + fmt("%.3g", worst)};
}

Verdict criterion5() {
    Rng rng(505);
    double worst_cf = 0.0;
    double worst_it = 0.0;
    for (int rep = 0; rep < 10; ++rep) {
        std::vector<double> theta;
        const auto d = identifiable_dataset(rng, 4, 2, 60, 6, 0.9, theta);
        const auto oracle = dense_least_squares(d, 0.0);
        FitOptions cf{Solver::closed_form, 0.0};
        FitOptions it{Solver::iterative, 0.0};
        const auto a = fit_preliminary(d, 0.9, cf);
        const auto b = fit_preliminary(d, 0.9, it);
        for (std::size_t c = 0; c < oracle.size(); ++c) {
            const int o = static_cast<int>(c / 2);
            const int act = static_cast<int>(c % 2);
            worst_cf = std::max(worst_cf, std::abs(a.predict(o, act) - oracle[c]));
            worst_it = std::max(worst_it, std::abs(b.predict(o, act) - oracle[c]));
        }
    }
    double worst_grad = 0.0;
    for (int rep = 0; rep < 20; ++rep) {
        auto d = random_dataset(rng, 15, 6, 4, 2, 0.9);
        for (auto& t : d.trajectories) t.aggregated_reward = rng.uniform() * 2 - 1;
        const auto p = build_problem(d, 0.9, rep % 2 ? 1e-3 : 0.0);
        std::vector<double> theta(p.n_params());
        for (double& x : theta) x = rng.uniform() * 2 - 1;
        const auto g = p.gradient(theta);
        for (std::size_t c = 0; c < theta.size(); ++c) {
            auto up = theta;
            auto down = theta;
            up[c] += 1e-5;
            down[c] -= 1e-5;
            const double fd = (p.objective(up) - p.objective(down)) / 2e-5;
            worst_grad = std::max(worst_grad, std::abs(fd - g[c]) / std::max(std::abs(g[c]), 1e-8));
        }
    }
    const bool ok = worst_cf <= 1e-6 && worst_it <= 1e-6 && worst_grad <= 1e-4;
    return {ok, "max entry error closed-form " + fmt("%.3g", worst_cf) + ", iterative " + fmt("%.3g", worst_it) +
                    "; max gradient relative error " + fmt("%.3g", worst_grad)};
}

// Short binary fractions everywhere, group sizes powers of two.
Dataset dyadic_fixture(Rng& rng, const Policy& beta) {
    Dataset d;
    d.n_obs = 3;
    d.n_act = 2;
    d.gamma = 0.5;
    const std::vector<std::size_t> group_sizes{1, 1, 2, 4};
    for (std::size_t len = 1; len <= group_sizes.size(); ++len) {
        for (std::size_t g = 0; g < group_sizes[len - 1]; ++g) {
            Trajectory t;
            std::vector<double> r;
            std::vector<double> probs;
            for (std::size_t s = 0; s < len; ++s) {
                const int o = static_cast<int>(rng.below(3));
                const int a = beta.sample(o, rng.uniform());
                t.observations.push_back(o);
                t.actions.push_back(a);
                probs.push_back(beta.prob(o, a));
                r.push_back(static_cast<double>(static_cast<int>(rng.below(17)) - 8) / 4.0);
            }
            t.aggregated_reward = discounted_return(r, d.gamma);
            t.ground_truth_rewards = r;
            t.behavior_probs = probs;
            d.trajectories.push_back(std::move(t));
        }
    }
    std::shuffle(d.trajectories.begin(), d.trajectories.end(), rng.engine());
    return d;
}

Verdict criterion6() {
    Rng rng(606);
    std::size_t self_fail = 0;
    std::size_t pdis_fail = 0;
    std::size_t dr_fail = 0;
    const auto m = five_state_mdp();
    for (int rep = 0; rep < 50; ++rep) {
        const Policy beta = make_policy({{0.5, 0.5}, {0.25, 0.75}, {0.75, 0.25}});
        const auto d = dyadic_fixture(rng, beta);
        const auto sparse = sparse_rewards(d);
        double mean_return = 0.0;
        for (const auto& t : d.trajectories) mean_return += t.aggregated_reward;
        mean_return /= static_cast<double>(d.size());

        // Reconstructed channel from the real pipeline, with its own mean return.
        const auto model = fit_preliminary(d, d.gamma);
        const auto index = find_k_nearest(d, identity_features(3), 3, nullptr, 1);
        const auto rhat = reconstruct(d, predict_events(model, d), CriticalSet::all(3), index);
        double mean_rhat = 0.0;
        for (const auto& row : rhat) mean_rhat += discounted_return(row, d.gamma);
        mean_rhat /= static_cast<double>(d.size());

        const auto w = compute_ratios_stored(d, beta);
        const auto rows = all_rows(d.size());
        const bool same = is_estimate(w, sparse, d.gamma, rows) == mean_return &&
                          wis_estimate(w, sparse, d.gamma, rows) == mean_return &&
                          phwis_estimate(w, sparse, d.gamma, rows) == mean_return &&
                          hope_estimate(d, beta, beta, rhat, d.gamma) == mean_rhat;
        self_fail += same ? 0 : 1;

        std::vector<std::vector<double>> rows_b(5, std::vector<double>(2));
        std::vector<std::vector<double>> rows_p(5, std::vector<double>(2));
        for (int o = 0; o < 5; ++o) {
            const double b0 = 0.1 + 0.8 * rng.uniform();
            const double p0 = rng.uniform();
            rows_b[o] = {b0, 1.0 - b0};
            rows_p[o] = {p0, 1.0 - p0};
        }
        const auto b = make_policy(rows_b);
        const auto pi = make_policy(rows_p);
        const auto sim = simulate_fixture(m, b, 200, 6000 + rep);
        const auto ssp = sparse_rewards(sim);
        if (pdis_estimate(sim, pi, b, ssp, m.gamma) != is_estimate(sim, pi, b, ssp, m.gamma)) ++pdis_fail;
        const auto g = ground_truth_rewards(sim);
        if (dr_estimate(sim, pi, b, g, m.gamma, QTable(5, 2)) != pdis_estimate(sim, pi, b, g, m.gamma)) ++dr_fail;
    }
    const std::string detail = "mismatches over 50 fixtures: self-evaluation " + std::to_string(self_fail) +
                               ", PDIS vs IS " + std::to_string(pdis_fail) + ", DR vs PDIS " + std::to_string(dr_fail);
    return {self_fail == 0 && pdis_fail == 0 && dr_fail == 0, detail};
}

Verdict criterion7() {
    Rng rng(707);
    double worst_rho = 0.0;
    std::size_t undefined = 0;
    for (int rep = 0; rep < 1000; ++rep) {
        const std::size_t n = 3 + rng.below(20);
        const std::size_t levels = 1 + rng.below(n);
        std::vector<double> a(n);
        std::vector<double> b(n);
        for (std::size_t i = 0; i < n; ++i) {
            a[i] = static_cast<double>(i % levels);
            b[i] = static_cast<double>(rng.below(levels + 1));
        }
        std::shuffle(a.begin(), a.end(), rng.engine());
        const auto ra = counting_ranks(a);
        const auto rb = counting_ranks(b);
        const auto s = spearman_rank(a, b);
        const bool a_flat = std::set<double>(a.begin(), a.end()).size() == 1;
        const bool b_flat = std::set<double>(b.begin(), b.end()).size() == 1;
        if (a_flat || b_flat) {
            undefined += s ? 1 : 0;
            continue;
        }
        if (!s) {
            ++undefined;
            continue;
        }
        worst_rho = std::max(worst_rho, std::abs(*s - pearson(ra, rb)));
    }

    bool welch_ok = true;
    for (int rep = 0; rep < 100; ++rep) {
        std::vector<double> x(2 + rng.below(50));
        for (double& v : x) v = rng.uniform() * 10 - 5;
        const auto r = welch_t_test(x, x);
        welch_ok = welch_ok && r.t_statistic == 0.0 && r.p_value == 1.0;
    }

    std::size_t knn_mismatch = 0;
    for (int rep = 0; rep < 100; ++rep) {
        const std::size_t n_obs = 3 + rng.below(8);
        const auto d = random_dataset(rng, 20, 8, n_obs, 1 + rng.below(4));
        const std::size_t k = 1 + rng.below(5);
        FeatureTable features(n_obs);
        for (auto& f : features) f = {static_cast<double>(rng.below(4)), static_cast<double>(rng.below(3))};
        const auto index = find_k_nearest(d, features, k, nullptr, 1 + rep % 3);
        for (std::size_t i = 0; i < d.size(); ++i) {
            for (std::size_t t = 0; t < d.trajectories[i].length(); ++t) {
                if (index.at(i, t) != brute_force_neighbors(d, features, i, t, k)) ++knn_mismatch;
            }
        }
    }
    const bool ok = worst_rho <= 1e-12 && undefined == 0 && welch_ok && knn_mismatch == 0;
    return {ok, "spearman max deviation " + fmt("%.3g", worst_rho) + " (" + std::to_string(undefined) +
                    " definedness mismatches); welch identical samples " + (welch_ok ? "t=0, p=1" : "FAILED") +
                    "; KNN mismatched events " + std::to_string(knn_mismatch)};
}

Verdict criterion8() {
    ExperimentConfig config;
    config.n_trajectories = 1500;
    config.bootstrap_b = 40;
    config.rand_repetitions = 5;
    config.seed = 8;
    std::vector<fs::path> dirs;
    for (const char* threads : {"1", "4"}) {
        setenv("HOPE_THREADS", threads, 1);
        dirs.push_back(scratch(std::string("determinism_") + threads));
        std::ostringstream log;
        cmd_benchmark(config, dirs.back().string(), log);
    }
    unsetenv("HOPE_THREADS");
    std::set<std::string> names;
    for (const auto& dir : dirs) {
        for (const auto& entry : fs::directory_iterator(dir)) names.insert(entry.path().filename().string());
    }
    std::size_t differing = 0;
    std::string which;
    for (const auto& name : names) {
        if (!fs::exists(dirs[0] / name) || !fs::exists(dirs[1] / name) ||
            slurp(dirs[0] / name) != slurp(dirs[1] / name)) {
            ++differing;
            which += " " + name;
        }
    }
    return {differing == 0 && !names.empty(),
            std::to_string(names.size()) + " artifacts compared across HOPE_THREADS=1 and 4, " +
                std::to_string(differing) + " differ" + which};
}

} // namespace

int main(int argc, char** argv) {
    const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
        {"synthetic sepsis benchmark: HOPE ranks policies and beats sparse WIS", criterion1},
        {"consistency on a 5-state fixture MDP", criterion2},
        {"importance weights average to one", criterion3},
        {"matrix-form reconstruction equals loop form", criterion4},
        {"preliminary reward fit matches the least-squares oracle", criterion5},
        {"exact estimator identities", criterion6},
        {"metric and neighbor-search oracles", criterion7},
        {"byte-identical artifacts across runs and thread counts", criterion8},
    };
    std::set<int> selected;
    for (int a = 1; a < argc; ++a) selected.insert(std::atoi(argv[a]));
    bool all = true;
    for (std::size_t c = 0; c < criteria.size(); ++c) {
        const int number = static_cast<int>(c + 1);
        if (!selected.empty() && !selected.count(number)) continue;
        Verdict v;
        try {
            v = criteria[c].second();
        } catch (const std::exception& e) {
            v = {false, std::string("exception: ") + e.what()};
        }
        all = all && v.passed;
        std::printf("[%s] criterion %d: %s | %s\n", v.passed ? "PASS" : "FAIL", number, criteria[c].first.c_str(),
                    v.detail.c_str());
        std::fflush(stdout);
    }
    return all ? 0 : 1;
}
