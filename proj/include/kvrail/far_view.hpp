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

#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "kvrail/types.hpp"

namespace kvrail {

struct FarViewConfig {
    bool enabled = false;
    uint32_t near_window = 512; // W*, tokens kept exact
    uint32_t cap = 64;          // max far representatives
    uint32_t chunk_tokens = 128; // sv_chunk
    void validate() const;
};

/// Token images are flat float vectors of 2*L*d_kv lanes laid out per layer as
/// [K_0 | V_0 | K_1 | V_1 | ...]; a chunk summary is one synthetic token image.

/// Elementwise mean over `count` token images of `lanes` floats each.
/// The final partial chunk of a history is summarized with its true length.
std::vector<float> summarize_chunk(std::span<const float> tokens, uint32_t lanes,
                                   uint64_t count);

struct ViewSlot {
    bool padded = true;
    uint64_t origin = 0;               // token index (near) or chunk id (far)
    std::vector<float> image;          // token image, 2*L*d_kv lanes
};

struct SummarizedView {
    uint32_t visible_width = 0; // constant W* + cap once configured
    uint32_t lanes = 0;
    uint32_t near_count = 0; // non-padded near slots
    uint32_t far_count = 0;  // non-padded far slots
    std::vector<ViewSlot> slots; // [far summaries..., near tokens...] logical order
};

/// Reads token `t`'s image into `out` (lanes floats).
using TokenReader = std::function<void(uint64_t token, float *out)>;

/// Build the fixed-width view for a history of `history_tokens` tokens:
/// the exact near window of the last min(t, W*) tokens plus up to `cap`
/// chunk summaries of the older history, selected by descending chunk score
/// (ties to the lower chunk id). Unused slots are padding-masked.
SummarizedView build_view(const TokenReader &read, uint64_t history_tokens,
                          const std::vector<double> &chunk_scores, uint32_t lanes,
                          const FarViewConfig &cfg);

/// Scaled dot-product attention over the view's non-padded slots for one
/// layer's K/V lanes. Query must have d_kv elements.
std::vector<float> attend(const SummarizedView &view, std::span<const float> query,
                          uint32_t layer, uint32_t kv_head_dim);

/// Chunk ids selected for a given cap (exposed for the selection property
/// tests; build_view uses the same rule).
std::vector<uint64_t> select_chunks(const std::vector<double> &chunk_scores, uint32_t cap);

} // namespace kvrail
