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

#include "kvrail/far_view.hpp"

#include <algorithm>
#include <cmath>

namespace kvrail {

void FarViewConfig::validate() const {
    if (near_window < 1)
        raise(Errc::bad_config, "near_window must be >= 1");
    if (chunk_tokens < 1)
        raise(Errc::bad_config, "chunk_tokens must be >= 1");
}

std::vector<float> summarize_chunk(std::span<const float> tokens, uint32_t lanes,
                                   uint64_t count) {
    if (count == 0)
        raise(Errc::empty_chunk, "summarize_chunk on zero tokens");
    if (tokens.size() != static_cast<size_t>(lanes) * count)
        raise(Errc::dimension_mismatch, "chunk payload size mismatch");
    std::vector<double> acc(lanes, 0.0);
    for (uint64_t t = 0; t < count; ++t) {
        const float *img = tokens.data() + t * lanes;
        for (uint32_t l = 0; l < lanes; ++l)
            acc[l] += img[l];
    }
    std::vector<float> mean(lanes);
    const double inv = 1.0 / static_cast<double>(count);
    for (uint32_t l = 0; l < lanes; ++l)
        mean[l] = static_cast<float>(acc[l] * inv);
    return mean;
}

std::vector<uint64_t> select_chunks(const std::vector<double> &chunk_scores, uint32_t cap) {
    std::vector<uint64_t> ids(chunk_scores.size());
    for (uint64_t i = 0; i < ids.size(); ++i)
        ids[i] = i;
    std::stable_sort(ids.begin(), ids.end(), [&](uint64_t a, uint64_t b) {
        if (chunk_scores[a] != chunk_scores[b])
            return chunk_scores[a] > chunk_scores[b];
        return a < b;
    });
    if (ids.size() > cap)
        ids.resize(cap);
    std::sort(ids.begin(), ids.end()); // keep history order in the view
    return ids;
}

SummarizedView build_view(const TokenReader &read, uint64_t history_tokens,
                          const std::vector<double> &chunk_scores, uint32_t lanes,
                          const FarViewConfig &cfg) {
    cfg.validate();
    SummarizedView v;
    v.visible_width = cfg.near_window + cfg.cap;
    v.lanes = lanes;
    v.slots.resize(v.visible_width);

    const uint64_t t = history_tokens;
    const uint64_t near_begin = t > cfg.near_window ? t - cfg.near_window : 0;
    const uint64_t far_tokens = near_begin;
    const uint64_t total_chunks = (far_tokens + cfg.chunk_tokens - 1) / cfg.chunk_tokens;

    std::vector<double> scores = chunk_scores;
    scores.resize(total_chunks, 0.0);
    std::vector<uint64_t> picked = select_chunks(scores, cfg.cap);
    v.far_count = static_cast<uint32_t>(picked.size());

    // Far summaries occupy the leading slots in chunk order.
    #pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < static_cast<int64_t>(picked.size()); ++i) {
        uint64_t chunk = picked[i];
        uint64_t begin = chunk * cfg.chunk_tokens;
        uint64_t end = std::min<uint64_t>(begin + cfg.chunk_tokens, far_tokens);
        uint64_t n = end - begin;
        std::vector<float> buf(n * lanes);
        for (uint64_t k = 0; k < n; ++k)
            read(begin + k, buf.data() + k * lanes);
        ViewSlot &slot = v.slots[i];
        slot.padded = false;
        slot.origin = chunk;
        slot.image = summarize_chunk(buf, lanes, n);
    }

    // Exact near window, oldest first.
    const uint64_t near_count = t - near_begin;
    v.near_count = static_cast<uint32_t>(near_count);
    #pragma omp parallel for schedule(static)
    for (int64_t k = 0; k < static_cast<int64_t>(near_count); ++k) {
        ViewSlot &slot = v.slots[v.far_count + k];
        slot.padded = false;
        slot.origin = near_begin + k;
        slot.image.resize(lanes);
        read(near_begin + k, slot.image.data());
    }
    return v;
}

std::vector<float> attend(const SummarizedView &view, std::span<const float> query,
                          uint32_t layer, uint32_t kv_head_dim) {
    if (query.size() != kv_head_dim)
        raise(Errc::dimension_mismatch, "query dimension != d_kv");
    const uint32_t k_off = 2 * layer * kv_head_dim;
    const uint32_t v_off = k_off + kv_head_dim;
    if (view.lanes < v_off + kv_head_dim)
        raise(Errc::dimension_mismatch, "layer lanes out of range");

    const double scale = 1.0 / std::sqrt(static_cast<double>(kv_head_dim));
    std::vector<double> logits;
    std::vector<const float *> values;
    logits.reserve(view.slots.size());
    for (const ViewSlot &s : view.slots) {
        if (s.padded)
            continue;
        const float *k = s.image.data() + k_off;
        double dot = 0.0;
        for (uint32_t d = 0; d < kv_head_dim; ++d)
            dot += static_cast<double>(query[d]) * static_cast<double>(k[d]);
        logits.push_back(dot * scale);
        values.push_back(s.image.data() + v_off);
    }
    std::vector<float> out(kv_head_dim, 0.0f);
    if (logits.empty())
        return out;

    double m = logits[0];
    for (double l : logits)
        m = std::max(m, l);
    std::vector<double> acc(kv_head_dim, 0.0);
    double denom = 0.0;
    for (size_t i = 0; i < logits.size(); ++i) {
        double w = std::exp(logits[i] - m);
        denom += w;
        const float *val = values[i];
        for (uint32_t d = 0; d < kv_head_dim; ++d)
            acc[d] += w * static_cast<double>(val[d]);
    }
    for (uint32_t d = 0; d < kv_head_dim; ++d)
        out[d] = static_cast<float>(acc[d] / denom);
    return out;
}

} // namespace kvrail
