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

// Serial reference implementations used as test oracles. Everything here
// favors obviousness over speed: list scans, full recomputation, high
// precision accumulation. None of it shares code with the library paths it
// checks.

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <unordered_map>
#include <vector>

#include "kvrail/pager.hpp"
#include "kvrail/transport.hpp"
#include "kvrail/workload.hpp"

namespace kvrail::reference {

/// Naive mirror of the pager semantics: per-token ownership maps, a flat tape
/// of every write, linear scans everywhere. Drives the same verb sequence as
/// the real pager and predicts its observable outputs.
class TapeOracle {
public:
    TapeOracle(uint32_t arena_pages, uint32_t tokens_per_page, uint64_t token_bytes);

    void create_session(SessionId id);

    // Returns the number of fresh blocks the real reserve must allocate.
    uint32_t reserve(SessionId s, uint64_t count);
    // Returns the expected shared-block count.
    uint64_t alias(SessionId dst, SessionId src, uint64_t prefix);
    void write(SessionId s, uint64_t token_begin, std::span<const std::byte> payload);
    // Returns the expected released-page count.
    uint64_t trim(SessionId s, const std::vector<TokenRange> &ranges);
    uint64_t trim_eos(SessionId s);
    void commit(SessionId s);

    uint64_t free_pages() const;
    uint64_t unique_live_blocks() const;

    /// Expected reconstruction of the committed view: mapped tokens in order,
    /// unwritten slots zero-filled. The mask marks tokens whose bytes the tape
    /// defines (written directly or aliased from written source tokens);
    /// reserved-but-unwritten slots are physically unspecified.
    std::vector<std::byte> reconstruct(SessionId s) const;
    std::vector<bool> reconstruct_defined(SessionId s) const;

    bool session_eos(SessionId s) const;
    uint64_t committed_tokens(SessionId s) const;

private:
    struct Mapping {
        uint64_t block = 0; // oracle block id
        uint32_t slot = 0;
    };
    struct Sess {
        std::map<uint64_t, Mapping> staged;    // token -> placement
        std::map<uint64_t, Mapping> committed; // token -> placement
        std::vector<std::byte> tape;
        std::vector<bool> tape_written;
        uint64_t cursor = 0;
        bool staged_eos = false;
        bool committed_eos = false;
        std::set<uint64_t> pending; // oracle blocks to free at this session's commit
    };

    uint32_t arena_pages_;
    uint32_t tpp_;
    uint64_t token_bytes_;
    uint64_t next_oblock_ = 0;
    uint64_t allocated_ = 0; // live oracle blocks (referenced or pending)
    std::map<SessionId, Sess> sessions_;

    uint32_t sessions_referencing(uint64_t oblock) const;
    bool anyone_pending(uint64_t oblock) const;
    void drop_lost_references(Sess &self, const std::set<uint64_t> &candidates);
};

/// From-scratch EMA: replays the full observation history each call.
double ema_from_scratch(double alpha, const std::vector<std::pair<uint64_t, double>> &history,
                        uint64_t now);

/// Dense scaled-dot-product attention in long double over raw token images.
std::vector<float> attend_dense(const std::vector<std::vector<float>> &images,
                                std::span<const float> query, uint32_t layer,
                                uint32_t kv_head_dim);

/// Two-pass high-precision elementwise mean.
std::vector<double> mean_two_pass(std::span<const float> tokens, uint32_t lanes, uint64_t count);

/// Expected train partition: enumerate maximal physically adjacent runs per
/// kind, then split each run at every threshold crossing.
std::vector<std::vector<size_t>> train_partition(const std::vector<Descriptor> &descs,
                                                 uint64_t tau);

/// O(n^2) densest-window search.
std::pair<size_t, size_t> max_arrival_window(const std::vector<TraceEvent> &events,
                                             uint64_t duration_ms);

/// Nearest-rank percentile by explicit counting.
double percentile_by_counting(const std::vector<double> &values, double q);

} // namespace kvrail::reference
