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

#include "kvrail/placement.hpp"

#include <algorithm>
#include <cmath>

namespace kvrail {

void PlacementConfig::validate() const {
    if (!(alpha > 0.0 && alpha < 1.0))
        raise(Errc::bad_config, "placement alpha must be in (0,1)");
}

UtilityTracker::UtilityTracker(double alpha) : alpha_(alpha) {
    if (!(alpha > 0.0 && alpha < 1.0))
        raise(Errc::bad_config, "EMA alpha must be in (0,1)");
}

void UtilityTracker::observe(BlockId block, double utility, Step now) {
    Cell &c = cells_[block];
    if (now > c.last)
        c.score *= std::pow(1.0 - alpha_, static_cast<double>(now - c.last));
    c.score = alpha_ * utility + (1.0 - alpha_) * c.score;
    c.last = now;
}

double UtilityTracker::score(BlockId block, Step now) const {
    auto it = cells_.find(block);
    if (it == cells_.end())
        return 0.0;
    const Cell &c = it->second;
    if (now <= c.last)
        return c.score;
    return c.score * std::pow(1.0 - alpha_, static_cast<double>(now - c.last));
}

void UtilityTracker::forget(BlockId block) { cells_.erase(block); }

std::vector<ScoredBlock> score_candidates(
    UtilityTracker &tracker, const std::vector<BlockId> &candidates,
    const std::vector<std::pair<BlockId, double>> &observations, Step now) {
    for (auto [b, u] : observations)
        tracker.observe(b, u, now);
    std::vector<ScoredBlock> ranked;
    ranked.reserve(candidates.size());
    for (BlockId b : candidates)
        ranked.push_back({b, tracker.score(b, now)});
    std::sort(ranked.begin(), ranked.end(), [](const ScoredBlock &a, const ScoredBlock &b) {
        if (a.score != b.score)
            return a.score > b.score;
        return a.block < b.block;
    });
    return ranked;
}

PlacementPlan plan_step(UtilityTracker &tracker, const PlacementConfig &cfg,
                        const std::vector<BlockId> &candidates,
                        const std::vector<std::pair<BlockId, double>> &observations,
                        const std::vector<SessionBlockState> &sessions, Step now) {
    PlacementPlan plan;
    plan.step = now;

    auto ranked = score_candidates(tracker, candidates, observations, now);
    uint32_t take = std::min<uint32_t>(cfg.lookahead_budget,
                                       static_cast<uint32_t>(ranked.size()));
    std::unordered_set<BlockId> in_lookahead;
    for (uint32_t i = 0; i < take; ++i) {
        plan.lookahead.push_back(ranked[i].block);
        in_lookahead.insert(ranked[i].block);
    }

    std::unordered_set<BlockId> protected_blocks; // near-window blocks never go cold
    std::unordered_set<BlockId> cold_set;
    for (const SessionBlockState &s : sessions) {
        if (s.eos)
            continue;
        for (BlockId b : s.near_blocks)
            protected_blocks.insert(b);
    }
    std::vector<ScoredBlock> cold_candidates;
    for (const SessionBlockState &s : sessions) {
        if (s.eos) {
            for (BlockId b : s.live_blocks)
                if (!protected_blocks.count(b) && !in_lookahead.count(b))
                    cold_set.insert(b);
            continue;
        }
        for (BlockId b : s.live_blocks) {
            if (protected_blocks.count(b) || in_lookahead.count(b))
                continue;
            cold_candidates.push_back({b, tracker.score(b, now)});
        }
    }
    // Lowest score first; ties by lower block id.
    std::sort(cold_candidates.begin(), cold_candidates.end(),
              [](const ScoredBlock &a, const ScoredBlock &b) {
                  if (a.score != b.score)
                      return a.score < b.score;
                  return a.block < b.block;
              });
    uint32_t budget_used = 0;
    for (const ScoredBlock &c : cold_candidates) {
        if (budget_used >= cfg.cold_budget)
            break;
        if (cold_set.insert(c.block).second)
            ++budget_used;
    }
    plan.cold.assign(cold_set.begin(), cold_set.end());
    std::sort(plan.cold.begin(), plan.cold.end());
    return plan;
}

std::vector<TokenRange> block_align(const std::vector<TokenRange> &ranges,
                                    uint32_t tokens_per_page) {
    std::vector<TokenRange> aligned;
    aligned.reserve(ranges.size());
    for (const TokenRange &r : ranges) {
        if (r.empty())
            continue;
        uint64_t b = (r.begin / tokens_per_page) * tokens_per_page;
        uint64_t e = ((r.end + tokens_per_page - 1) / tokens_per_page) * tokens_per_page;
        if (!aligned.empty() && aligned.back().end > b)
            aligned.back().end = std::max(aligned.back().end, e);
        else
            aligned.push_back({b, e});
    }
    return aligned;
}

} // namespace kvrail
