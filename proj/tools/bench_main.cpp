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

// Compares the OpenMP view-construction kernels against single-threaded runs
// of the same code and a straightforward serial re-implementation.

#include <cmath>
#include <cstdio>
#include <random>
#include <vector>

#include <omp.h>

#include "kvrail/far_view.hpp"

using namespace kvrail;

namespace {

constexpr uint32_t kDim = 64;
constexpr uint32_t kLanes = 2 * kDim;

// Serial reference: same math, plain loops, no pragmas.
std::vector<float> attend_serial(const SummarizedView &view, const std::vector<float> &q) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(kDim));
    double m = -1e300, denom = 0.0;
    std::vector<double> logits;
    std::vector<const float *> values;
    for (const ViewSlot &s : view.slots) {
        if (s.padded)
            continue;
        double dot = 0.0;
        for (uint32_t d = 0; d < kDim; ++d)
            dot += static_cast<double>(q[d]) * s.image[d];
        logits.push_back(dot * scale);
        values.push_back(s.image.data() + kDim);
        m = std::max(m, logits.back());
    }
    std::vector<double> acc(kDim, 0.0);
    for (size_t i = 0; i < logits.size(); ++i) {
        double w = std::exp(logits[i] - m);
        denom += w;
        for (uint32_t d = 0; d < kDim; ++d)
            acc[d] += w * values[i][d];
    }
    std::vector<float> out(kDim);
    for (uint32_t d = 0; d < kDim; ++d)
        out[d] = static_cast<float>(acc[d] / denom);
    return out;
}

double run_build(const std::vector<std::vector<float>> &history, const FarViewConfig &cfg,
                 int reps) {
    TokenReader read = [&history](uint64_t t, float *out) {
        std::copy(history[t].begin(), history[t].end(), out);
    };
    double best = 1e300;
    for (int r = 0; r < reps; ++r) {
        double t0 = omp_get_wtime();
        auto view = build_view(read, history.size(), {}, kLanes, cfg);
        double dt = omp_get_wtime() - t0;
        best = std::min(best, dt);
        if (view.visible_width == 0)
            std::abort();
    }
    return best;
}

} // namespace

int main(int argc, char **argv) {
    uint64_t history_tokens = argc > 1 ? std::strtoull(argv[1], nullptr, 10) : 200000;
    int reps = argc > 2 ? std::atoi(argv[2]) : 5;

    std::mt19937_64 rng(1);
    std::vector<std::vector<float>> history(history_tokens, std::vector<float>(kLanes));
    for (auto &img : history)
        for (float &v : img)
            v = static_cast<float>(static_cast<int64_t>(rng() % 2001) - 1000) / 512.0f;

    FarViewConfig cfg;
    cfg.enabled = true;
    cfg.near_window = 4096;
    cfg.cap = 512;
    cfg.chunk_tokens = 128;

    int max_threads = omp_get_max_threads();
    omp_set_num_threads(1);
    double serial = run_build(history, cfg, reps);
    omp_set_num_threads(max_threads);
    double parallel = run_build(history, cfg, reps);

    std::printf("view construction over %llu tokens (W*=%u, cap=%u, sv_chunk=%u)\n",
                (unsigned long long)history_tokens, cfg.near_window, cfg.cap,
                cfg.chunk_tokens);
    std::printf("  1 thread  : %8.3f ms\n", serial * 1e3);
    std::printf("  %d threads : %8.3f ms (x%.2f)\n", max_threads, parallel * 1e3,
                serial / parallel);

    // Output equivalence against the serial re-implementation.
    TokenReader read = [&history](uint64_t t, float *out) {
        std::copy(history[t].begin(), history[t].end(), out);
    };
    auto view = build_view(read, history.size(), {}, kLanes, cfg);
    std::vector<float> q(kDim, 0.125f);
    auto a = attend(view, q, 0, kDim);
    auto b = attend_serial(view, q);
    double max_rel = 0.0;
    for (uint32_t d = 0; d < kDim; ++d)
        max_rel = std::max(max_rel, std::abs((double)a[d] - b[d]) /
                                        std::max(1e-12, std::abs((double)b[d])));
    std::printf("  attend vs serial reference: max rel err %.2e\n", max_rel);
    return max_rel < 1e-6 ? 0 : 1;
}
