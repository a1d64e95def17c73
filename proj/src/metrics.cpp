#include "hope/metrics.hpp"

#include "hope/errors.hpp"
#include "hope/parallel.hpp"
#include "hope/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace hope {

double absolute_error(double true_value, double estimate) { return std::abs(true_value - estimate); }

Regret regret_at_1(std::span<const double> true_values, std::span<const double> estimates) {
    if (true_values.size() != estimates.size()) throw std::invalid_argument("regret@1 needs one estimate per policy");
    if (true_values.size() < 2) throw std::invalid_argument("regret@1 needs at least two policies");
    Regret r;
    r.chosen = static_cast<std::size_t>(std::max_element(estimates.begin(), estimates.end()) - estimates.begin());
    const double best = *std::max_element(true_values.begin(), true_values.end());
    const double gap = best - true_values[r.chosen];
    if (best == 0.0) {
        r.value = gap;
        r.normalized = false;
    } else {
        r.value = gap / best;
    }
    return r;
}

std::optional<Regret> regret_at_1(const std::vector<PolicyEvaluation>& evaluations, const std::string& estimator) {
    std::vector<double> truth;
    std::vector<double> estimates;
    for (const auto& e : evaluations) {
        const auto it = e.estimates.find(estimator);
        if (!e.true_value || it == e.estimates.end() || !it->second.point_estimate) return std::nullopt;
        truth.push_back(*e.true_value);
        estimates.push_back(*it->second.point_estimate);
    }
    return regret_at_1(truth, estimates);
}

std::vector<double> average_ranks(std::span<const double> values) {
    const std::size_t n = values.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    std::vector<double> ranks(n);
    std::size_t start = 0;
    while (start < n) {
        std::size_t end = start + 1;
        while (end < n && values[order[end]] == values[order[start]]) ++end;
        // positions start+1 .. end share their mean
        const double rank = 0.5 * static_cast<double>(start + 1 + end);
        for (std::size_t j = start; j < end; ++j) ranks[order[j]] = rank;
        start = end;
    }
    return ranks;
}

std::optional<double> spearman_rank(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw std::invalid_argument("spearman_rank needs equal lengths");
    if (a.size() < 2) throw std::invalid_argument("spearman_rank needs at least two values");
    const auto ra = average_ranks(a);
    const auto rb = average_ranks(b);
    const double ma = mean(ra);
    const double mb = mean(rb);
    double sab = 0.0;
    double saa = 0.0;
    double sbb = 0.0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        const double da = ra[i] - ma;
        const double db = rb[i] - mb;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if (saa == 0.0 || sbb == 0.0) return std::nullopt;
    return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

std::vector<std::size_t> bootstrap_rows(std::size_t n, std::uint64_t seed, std::size_t replica) {
    if (n == 0) throw std::invalid_argument("cannot resample an empty dataset");
    Rng rng(derive_stream(seed ^ kBootstrapSalt, replica));
    std::vector<std::size_t> rows(n);
    for (auto& r : rows) r = rng.below(n);
    return rows;
}

BootstrapResult bootstrap(std::size_t n, std::size_t replicas, std::size_t outputs, std::uint64_t seed,
                          std::size_t threads, const MultiEstimator& estimator) {
    if (replicas == 0) throw std::invalid_argument("bootstrap needs B >= 1");
    std::vector<std::vector<std::optional<double>>> results(replicas);
    parallel_for(replicas, threads, [&](std::size_t b) {
        const auto rows = bootstrap_rows(n, seed, b);
        try {
            results[b] = estimator(rows);
        } catch (const Error&) {
            results[b].assign(outputs, std::nullopt);
        }
        if (results[b].size() != outputs) throw std::logic_error("bootstrap estimator returned the wrong arity");
    });
    BootstrapResult out;
    out.samples.resize(outputs);
    out.failures.assign(outputs, 0);
    for (std::size_t b = 0; b < replicas; ++b) {
        for (std::size_t k = 0; k < outputs; ++k) {
            if (results[b][k] && std::isfinite(*results[b][k])) {
                out.samples[k].push_back(*results[b][k]);
            } else {
                ++out.failures[k];
            }
        }
    }
    return out;
}

BootstrapResult bootstrap(std::size_t n, std::size_t replicas, std::uint64_t seed, std::size_t threads,
                          const std::function<double(std::span<const std::size_t>)>& estimator) {
    return bootstrap(n, replicas, 1, seed, threads, [&](std::span<const std::size_t> rows) {
        return std::vector<std::optional<double>>{estimator(rows)};
    });
}

double mean(std::span<const double> x) {
    if (x.empty()) throw std::invalid_argument("mean of an empty sample");
    double s = 0.0;
    for (double v : x) s += v;
    return s / static_cast<double>(x.size());
}

double sample_sd(std::span<const double> x) {
    if (x.size() < 2) return 0.0;
    const double m = mean(x);
    double ss = 0.0;
    for (double v : x) ss += (v - m) * (v - m);
    return std::sqrt(ss / static_cast<double>(x.size() - 1));
}

namespace {

// Modified Lentz evaluation of the continued fraction for I_x(a, b).
double beta_continued_fraction(double a, double b, double x) {
    constexpr double tiny = 1e-300;
    constexpr double eps = 1e-16;
    const double qab = a + b;
    const double qap = a + 1.0;
    const double qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::abs(d) < tiny) d = tiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= 100000; ++m) {
        const double m2 = 2.0 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < eps) return h;
    }
    throw std::runtime_error("incomplete beta continued fraction did not converge");
}

} // namespace

double incomplete_beta(double a, double b, double x) {
    if (!(a > 0.0) || !(b > 0.0)) throw std::invalid_argument("incomplete beta needs a, b > 0");
    if (std::isnan(x)) throw std::invalid_argument("incomplete beta of NaN");
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double log_front =
        std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
    const double front = std::exp(log_front);
    if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_continued_fraction(a, b, x) / a;
    return 1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b;
}

double student_t_two_sided(double t, double df) {
    if (!(df > 0.0)) throw std::invalid_argument("t distribution needs df > 0");
    if (std::isnan(t)) throw std::invalid_argument("t statistic is NaN");
    if (std::isinf(t)) return 0.0;
    return std::clamp(incomplete_beta(0.5 * df, 0.5, df / (df + t * t)), 0.0, 1.0);
}

SignificanceReport welch_t_test(std::span<const double> a, std::span<const double> b, double alpha) {
    if (a.size() < 2 || b.size() < 2) throw std::invalid_argument("welch_t_test needs at least two values per sample");
    const double na = static_cast<double>(a.size());
    const double nb = static_cast<double>(b.size());
    const double ma = mean(a);
    const double mb = mean(b);
    const double sa = sample_sd(a);
    const double sb = sample_sd(b);
    const double va = sa * sa / na;
    const double vb = sb * sb / nb;
    SignificanceReport r;
    if (va + vb == 0.0) {
        r.degenerate = true;
        r.t_statistic = ma == mb ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), ma - mb);
        r.degrees_of_freedom = na + nb - 2.0;
        r.p_value = ma == mb ? 1.0 : 0.0;
    } else {
        r.t_statistic = (ma - mb) / std::sqrt(va + vb);
        r.degrees_of_freedom = (va + vb) * (va + vb) / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
        r.p_value = student_t_two_sided(r.t_statistic, r.degrees_of_freedom);
    }
    r.significant = r.p_value < alpha;
    return r;
}

} // namespace hope
