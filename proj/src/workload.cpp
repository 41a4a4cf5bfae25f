/* Copyright 2026 The kvrail Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "kvrail/workload.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

namespace kvrail {

namespace {

double uniform01(std::mt19937_64 &rng) {
    // 53-bit mantissa draw; avoids distribution objects for portability.
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

uint64_t poisson(std::mt19937_64 &rng, double lambda) {
    // Knuth's method; lambdas here stay small.
    double l = std::exp(-lambda);
    uint64_t k = 0;
    double p = 1.0;
    do {
        ++k;
        p *= uniform01(rng);
    } while (p > l);
    return k - 1;
}

// Inverse standard normal CDF (Acklam's rational approximation).
double inv_norm_cdf(double p) {
    static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                               -2.759285104469687e+02, 1.383577518672690e+02,
                               -3.066479806614716e+01, 2.506628277459239e+00};
    static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                               -1.556989798598866e+02, 6.680131188771972e+01,
                               -1.328068155288572e+01};
    static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                               -2.400758277161838e+00, -2.549732539343734e+00,
                               4.374664141464968e+00,  2.938163982698783e+00};
    static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                               2.445134137142996e+00, 3.754408661907416e+00};
    const double plow = 0.02425, phigh = 1 - plow;
    double q, r;
    if (p < plow) {
        q = std::sqrt(-2 * std::log(p));
        return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
               ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
    }
    if (p <= phigh) {
        q = p - 0.5;
        r = q * q;
        return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
               (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1);
    }
    q = std::sqrt(-2 * std::log(1 - p));
    return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
}

// Truncated geometric on [lo, hi]: quantile of u in [0,1).
uint32_t trunc_geometric(double u, uint32_t lo, uint32_t hi, double rate) {
    double span = static_cast<double>(hi - lo + 1);
    double decay = 1.0 - rate;
    double total = 1.0 - std::pow(decay, span);
    double k = std::log(1.0 - u * total) / std::log(decay);
    uint32_t off = static_cast<uint32_t>(k);
    if (off >= span)
        off = static_cast<uint32_t>(span) - 1;
    return lo + off;
}

/// Three-piece generated-length law. Mass 0.5 on [1, p50], 0.4 on (p50, p90],
/// 0.1 on the lognormal tail above p90 with its conditional 90th percentile
/// pinned at p99, so F(p50)=0.5, F(p90)=0.9 and F(p99)=0.99 hold exactly.
struct LengthLaw {
    uint32_t p50, p90, p99;
    double tail_mu, tail_sigma;

    explicit LengthLaw(const WorkloadSpec &spec) {
        p50 = static_cast<uint32_t>(spec.p50);
        p90 = static_cast<uint32_t>(spec.p90);
        p99 = static_cast<uint32_t>(spec.p99);
        tail_mu = std::log(static_cast<double>(p90));
        // P(X <= p99 | tail) = 0.9 with the tail truncated at its median.
        tail_sigma = std::log(static_cast<double>(p99) / p90) / inv_norm_cdf(0.95);
    }

    uint32_t sample(double u) const {
        if (p50 == p90 && p90 == p99)
            return p50; // point mass
        if (u < 0.5) {
            double v = u / 0.5;
            return trunc_geometric(v, 1, p50, 2.0 / p50);
        }
        if (u < 0.9 || p99 == p90) {
            if (p90 == p50)
                return p90;
            double v = u < 0.9 ? (u - 0.5) / 0.4 : (u - 0.5) / 0.5;
            return trunc_geometric(v, p50 + 1, p90, 2.0 / (p90 - p50));
        }
        // Lognormal conditioned above its median: z in (0, inf).
        double v = (u - 0.9) / 0.1;
        double z = inv_norm_cdf(0.5 + 0.5 * std::min(v, 1.0 - 1e-12));
        double x = std::exp(tail_mu + tail_sigma * z);
        return static_cast<uint32_t>(std::max(1.0, std::ceil(x)));
    }
};

} // namespace

void WorkloadSpec::validate() const {
    if (!(p50 <= p90 && p90 <= p99))
        raise(Errc::infeasible_spec, "percentile targets must be monotone");
    if (p50 < 1)
        raise(Errc::infeasible_spec, "p50 must be >= 1 token");
    if (requests == 0)
        raise(Errc::infeasible_spec, "requests must be positive");
    if (hot_window_prob <= 0.0 || hot_window_prob >= 1.0)
        raise(Errc::infeasible_spec, "hot_window_prob must be in (0,1)");
    if (top_decile_share <= hot_window_prob || top_decile_share >= 1.0)
        raise(Errc::infeasible_spec, "top_decile_share out of range");
    if (prompt_min < 1 || prompt_max < prompt_min)
        raise(Errc::infeasible_spec, "prompt length bounds invalid");
}

std::vector<TraceEvent> generate(const WorkloadSpec &spec) {
    spec.validate();
    LengthLaw law(spec);
    std::mt19937_64 rng(spec.seed);

    // Hot windows carry `ratio` times the cold arrival rate so the expected
    // top-decile share matches the target.
    const double h = spec.hot_window_prob;
    const double s = spec.top_decile_share;
    const double ratio = s * (1.0 - h) / ((1.0 - s) * h);
    const double lam_cold = spec.arrivals_per_window / (1.0 - h + h * ratio);
    const double lam_hot = lam_cold * ratio;

    std::vector<TraceEvent> events;
    events.reserve(spec.requests);
    uint64_t window = 0;
    while (events.size() < spec.requests) {
        bool hot = uniform01(rng) < h;
        uint64_t n = poisson(rng, hot ? lam_hot : lam_cold);
        double base_u = uniform01(rng);
        std::vector<uint64_t> offsets;
        for (uint64_t i = 0; i < n && events.size() + offsets.size() < spec.requests; ++i)
            offsets.push_back(static_cast<uint64_t>(uniform01(rng) * spec.window_ms));
        std::sort(offsets.begin(), offsets.end());
        for (uint64_t off : offsets) {
            TraceEvent e;
            e.arrival_ms = window * spec.window_ms + off;
            e.request_id = events.size();
            // Correlated quantile draw: mod-1 keeps the marginal uniform while
            // clustering lengths inside a window, which bursts completions.
            double u;
            if (uniform01(rng) < spec.cluster_correlation) {
                u = base_u + 0.08 * uniform01(rng);
                u -= std::floor(u);
            } else {
                u = uniform01(rng);
            }
            e.generate_tokens = law.sample(u);
            // Log-uniform prompt mixture.
            double lp = std::log(static_cast<double>(spec.prompt_min)) +
                        uniform01(rng) * (std::log(static_cast<double>(spec.prompt_max)) -
                                          std::log(static_cast<double>(spec.prompt_min)));
            e.prompt_tokens = static_cast<uint32_t>(std::max(1.0, std::round(std::exp(lp))));
            events.push_back(e);
        }
        ++window;
    }
    return events;
}

namespace {
double nearest_rank(const std::vector<double> &sorted, double q) {
    size_t n = sorted.size();
    size_t rank = static_cast<size_t>(std::floor(q * static_cast<double>(n))) + 1;
    if (rank > n)
        rank = n;
    return sorted[rank - 1];
}
} // namespace

WorkloadAudit audit_workload(const std::vector<TraceEvent> &events, const WorkloadSpec &spec) {
    WorkloadAudit a;
    if (events.empty())
        raise(Errc::empty_stream, "cannot audit an empty workload");

    std::vector<double> lens;
    lens.reserve(events.size());
    for (const TraceEvent &e : events)
        lens.push_back(static_cast<double>(e.generate_tokens));
    std::sort(lens.begin(), lens.end());
    a.p50 = nearest_rank(lens, 0.50);
    a.p90 = nearest_rank(lens, 0.90);
    a.p99 = nearest_rank(lens, 0.99);

    auto rel_ok = [](double got, double want) { return std::abs(got - want) <= 0.10 * want; };
    a.percentiles_ok = rel_ok(a.p50, spec.p50) && rel_ok(a.p90, spec.p90) && rel_ok(a.p99, spec.p99);

    // Arrival concentration over fixed windows.
    uint64_t last = events.back().arrival_ms;
    uint64_t windows = last / spec.window_ms + 1;
    std::vector<uint64_t> counts(windows, 0);
    for (const TraceEvent &e : events)
        ++counts[e.arrival_ms / spec.window_ms];
    std::sort(counts.begin(), counts.end(), std::greater<>());
    uint64_t top = (windows + 9) / 10;
    uint64_t in_top = 0;
    for (uint64_t i = 0; i < top; ++i)
        in_top += counts[i];
    a.top_decile_share = static_cast<double>(in_top) / static_cast<double>(events.size());
    a.concentration_ok = std::abs(a.top_decile_share - spec.top_decile_share) <= 0.05;

    // EOS burstiness estimate: completions assumed one nominal step per token.
    const double nominal_step_ms = 20.0;
    std::vector<uint64_t> eos_ms;
    eos_ms.reserve(events.size());
    for (const TraceEvent &e : events)
        eos_ms.push_back(e.arrival_ms +
                         static_cast<uint64_t>(e.generate_tokens * nominal_step_ms));
    uint64_t eos_last = *std::max_element(eos_ms.begin(), eos_ms.end());
    std::vector<double> eos_counts(eos_last / spec.window_ms + 1, 0.0);
    for (uint64_t t : eos_ms)
        eos_counts[t / spec.window_ms] += 1.0;
    std::sort(eos_counts.begin(), eos_counts.end());
    a.eos_window_p50 = nearest_rank(eos_counts, 0.50);
    a.eos_window_p90 = nearest_rank(eos_counts, 0.90);
    a.eos_window_p99 = nearest_rank(eos_counts, 0.99);
    return a;
}

std::vector<TraceEvent> load_trace(const std::string &path) {
    std::ifstream in(path);
    if (!in)
        raise(Errc::io_error, "cannot open trace file " + path);
    std::string line;
    if (!std::getline(in, line))
        return {};
    if (line != "arrival_ms,prompt_tokens,generate_tokens")
        raise(Errc::parse_error, path + ":1: bad header '" + line + "'");
    std::vector<TraceEvent> events;
    uint64_t lineno = 1;
    uint64_t prev_ms = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty())
            continue;
        TraceEvent e;
        unsigned long long ms = 0, pt = 0, gt = 0;
        if (std::sscanf(line.c_str(), "%llu,%llu,%llu", &ms, &pt, &gt) != 3)
            raise(Errc::parse_error, path + ":" + std::to_string(lineno) + ": bad row '" + line + "'");
        if (pt < 1 || gt < 1)
            raise(Errc::parse_error,
                  path + ":" + std::to_string(lineno) + ": token counts must be >= 1");
        if (!events.empty() && ms < prev_ms)
            raise(Errc::non_monotone_time,
                  path + ":" + std::to_string(lineno) + ": arrival time decreases");
        prev_ms = ms;
        e.arrival_ms = ms;
        e.prompt_tokens = static_cast<uint32_t>(pt);
        e.generate_tokens = static_cast<uint32_t>(gt);
        e.request_id = events.size();
        events.push_back(e);
    }
    return events;
}

void save_trace(const std::string &path, const std::vector<TraceEvent> &events) {
    std::ofstream out(path);
    if (!out)
        raise(Errc::io_error, "cannot write trace file " + path);
    out << "arrival_ms,prompt_tokens,generate_tokens\n";
    for (const TraceEvent &e : events)
        out << e.arrival_ms << ',' << e.prompt_tokens << ',' << e.generate_tokens << '\n';
}

std::vector<TraceEvent> select_window(const std::vector<TraceEvent> &events, double seconds) {
    if (events.empty())
        raise(Errc::empty_stream, "select_window on empty stream");
    if (seconds <= 0)
        raise(Errc::bad_config, "window must be positive");
    const uint64_t dur = static_cast<uint64_t>(seconds * 1000.0);
    size_t best_i = 0, best_j = 0;
    size_t j = 0;
    for (size_t i = 0; i < events.size(); ++i) {
        if (j < i)
            j = i;
        while (j < events.size() && events[j].arrival_ms < events[i].arrival_ms + dur)
            ++j;
        if (j - i > best_j - best_i) { // strict: earliest window wins ties
            best_i = i;
            best_j = j;
        }
    }
    std::vector<TraceEvent> out(events.begin() + best_i, events.begin() + best_j);
    for (size_t k = 0; k < out.size(); ++k)
        out[k].request_id = k;
    return out;
}

FragRegime parse_regime(const std::string &name) {
    if (name == "contiguous")
        return FragRegime::contiguous;
    if (name == "mild")
        return FragRegime::mild;
    if (name == "strong")
        return FragRegime::strong;
    if (name == "adversarial-random" || name == "adversarial")
        return FragRegime::adversarial_random;
    raise(Errc::unknown_regime, "'" + name + "'");
}

const char *regime_name(FragRegime r) {
    switch (r) {
    case FragRegime::contiguous: return "contiguous";
    case FragRegime::mild: return "mild";
    case FragRegime::strong: return "strong";
    case FragRegime::adversarial_random: return "adversarial-random";
    }
    return "?";
}

double regime_free_fraction(FragRegime r) {
    switch (r) {
    case FragRegime::contiguous: return 1.0;
    case FragRegime::mild: return 0.25;
    case FragRegime::strong: return 0.5;
    case FragRegime::adversarial_random: return 0.5;
    }
    return 1.0;
}

std::vector<uint32_t> fragmentation_preset(FragRegime regime, uint32_t arena_pages,
                                           uint64_t seed) {
    std::vector<uint32_t> occupied;
    switch (regime) {
    case FragRegime::contiguous:
        break;
    case FragRegime::mild:
        for (uint32_t b = 0; b < arena_pages; ++b)
            if (b % 4 != 3)
                occupied.push_back(b);
        break;
    case FragRegime::strong:
        for (uint32_t b = 0; b < arena_pages; b += 2)
            occupied.push_back(b);
        break;
    case FragRegime::adversarial_random: {
        std::mt19937_64 rng(seed);
        std::vector<uint32_t> all(arena_pages);
        for (uint32_t b = 0; b < arena_pages; ++b)
            all[b] = b;
        // Fisher-Yates; keep the first half occupied.
        for (uint32_t i = arena_pages - 1; i > 0; --i) {
            uint32_t k = static_cast<uint32_t>(rng() % (i + 1));
            std::swap(all[i], all[k]);
        }
        occupied.assign(all.begin(), all.begin() + arena_pages / 2);
        std::sort(occupied.begin(), occupied.end());
        break;
    }
    }
    return occupied;
}

uint64_t stream_hash(const std::vector<TraceEvent> &events) {
    uint64_t h = 1469598103934665603ull; // FNV-1a
    auto mix = [&h](uint64_t v) {
        for (int i = 0; i < 8; ++i) {
            h ^= (v >> (8 * i)) & 0xff;
            h *= 1099511628211ull;
        }
    };
    for (const TraceEvent &e : events) {
        mix(e.arrival_ms);
        mix(e.prompt_tokens);
        mix(e.generate_tokens);
    }
    return h;
}

} // namespace kvrail
