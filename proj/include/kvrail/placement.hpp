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
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "kvrail/types.hpp"

namespace kvrail {

struct PlacementConfig {
    double alpha = 0.3;           // EMA decay factor, in (0,1)
    uint32_t lookahead_budget = 8; // max |S_{t+1}|
    uint32_t cold_budget = 64;     // max cold blocks per step beyond EOS reclaim
    void validate() const;
};

/// Per-block EMA of observed utility. A step without an observation decays a
/// block's score by (1-alpha); the decay is applied lazily on access.
class UtilityTracker {
public:
    explicit UtilityTracker(double alpha);

    void observe(BlockId block, double utility, Step now);
    double score(BlockId block, Step now) const;
    void forget(BlockId block);
    size_t tracked() const { return cells_.size(); }
    double alpha() const { return alpha_; }

private:
    struct Cell {
        double score = 0.0;
        Step last = 0;
    };
    double alpha_;
    std::unordered_map<BlockId, Cell> cells_;
};

struct ScoredBlock {
    BlockId block = kInvalidBlock;
    double score = 0.0;
};

struct PlacementPlan {
    Step step = 0;
    std::vector<BlockId> lookahead; // S_{t+1}, score-descending
    std::vector<BlockId> cold;      // C_t, block ids ascending
};

/// Apply this step's observations and rank the candidates by updated score,
/// ties broken by lower block id.
std::vector<ScoredBlock> score_candidates(UtilityTracker &tracker,
                                          const std::vector<BlockId> &candidates,
                                          const std::vector<std::pair<BlockId, double>> &observations,
                                          Step now);

struct SessionBlockState {
    std::vector<BlockId> live_blocks;   // all blocks mapped by the session
    std::vector<BlockId> near_blocks;   // blocks inside the last-W* token window
    bool eos = false;
};

/// Select the bounded lookahead set and the cold set for one step.
///
/// S_{t+1} is the top-budget slice of the ranked candidates. C_t collects the
/// lowest-scored live blocks that sit outside every session's near window,
/// capped by cold_budget, plus every block of a session that reached EOS.
/// Blocks inside any near window never go cold, and S and C stay disjoint.
PlacementPlan plan_step(UtilityTracker &tracker, const PlacementConfig &cfg,
                        const std::vector<BlockId> &candidates,
                        const std::vector<std::pair<BlockId, double>> &observations,
                        const std::vector<SessionBlockState> &sessions, Step now);

/// Expand token ranges to whole page-block boundaries.
std::vector<TokenRange> block_align(const std::vector<TokenRange> &ranges,
                                    uint32_t tokens_per_page);

} // namespace kvrail
