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

#include "kvrail/transport.hpp"

#include <algorithm>

namespace kvrail {

void TransportConfig::validate() const {
    if (merge_threshold == 0)
        raise(Errc::bad_config, "merge_threshold must be positive");
    if (max_hold < 0.0)
        raise(Errc::bad_config, "max_hold must be non-negative");
}

std::vector<Descriptor> stage(const std::vector<StageNeed> &needs, uint64_t page_bytes,
                              uint64_t token_bytes, double now) {
    std::vector<Descriptor> out;
    for (const StageNeed &need : needs) {
        // Byte ranges of the need's spans, fused where physically contiguous.
        std::vector<std::pair<uint64_t, uint64_t>> ranges;
        ranges.reserve(need.spans.size());
        for (const StagedSpan &sp : need.spans) {
            if (sp.slot_count == 0)
                continue;
            uint64_t begin = sp.block * page_bytes + sp.slot_begin * token_bytes;
            uint64_t len = static_cast<uint64_t>(sp.slot_count) * token_bytes;
            ranges.emplace_back(begin, len);
        }
        std::sort(ranges.begin(), ranges.end());
        for (size_t i = 0; i < ranges.size(); ++i) {
            auto [begin, len] = ranges[i];
            while (i + 1 < ranges.size() && ranges[i + 1].first == begin + len) {
                len += ranges[i + 1].second;
                ++i;
            }
            Descriptor d;
            d.phys_offset = begin;
            d.length = len;
            d.kind = need.kind;
            d.stage_time = now;
            d.block = static_cast<BlockId>(begin / page_bytes);
            d.session = need.session;
            out.push_back(d);
        }
    }
    return out;
}

std::vector<DmaTrain> reduce(std::vector<Descriptor> descriptors,
                             const TransportConfig &cfg, double now) {
    cfg.validate();
    std::vector<DmaTrain> trains;
    if (descriptors.empty())
        return trains;

    if (!cfg.merge) {
        trains.reserve(descriptors.size());
        for (Descriptor &d : descriptors) {
            DmaTrain t;
            t.kind = d.kind;
            t.total_bytes = d.length;
            t.oldest_stage_time = d.stage_time;
            t.issue_time = now;
            t.reason = IssueReason::flush;
            t.descriptors.push_back(std::move(d));
            trains.push_back(std::move(t));
        }
        return trains;
    }

    std::sort(descriptors.begin(), descriptors.end(), [](const Descriptor &a, const Descriptor &b) {
        if (a.kind != b.kind)
            return a.kind < b.kind;
        return a.phys_offset < b.phys_offset;
    });

    DmaTrain cur;
    bool open = false;
    auto close = [&](IssueReason reason) {
        cur.reason = reason;
        cur.issue_time = now;
        trains.push_back(std::move(cur));
        cur = DmaTrain{};
        open = false;
    };
    for (Descriptor &d : descriptors) {
        if (open) {
            const Descriptor &prev = cur.descriptors.back();
            bool adjacent = prev.kind == d.kind && prev.phys_offset + prev.length == d.phys_offset;
            if (cur.total_bytes >= cfg.merge_threshold)
                close(IssueReason::threshold);
            else if (now - cur.oldest_stage_time >= cfg.max_hold)
                close(IssueReason::age);
            else if (!adjacent)
                close(IssueReason::flush);
        }
        if (!open) {
            cur.kind = d.kind;
            cur.total_bytes = 0;
            cur.oldest_stage_time = d.stage_time;
            open = true;
        }
        cur.total_bytes += d.length;
        cur.oldest_stage_time = std::min(cur.oldest_stage_time, d.stage_time);
        cur.descriptors.push_back(std::move(d));
    }
    if (open) {
        // Step residue.
        close(cur.total_bytes >= cfg.merge_threshold ? IssueReason::threshold
                                                     : IssueReason::flush);
    }
    return trains;
}

TransportStepStats summarize_trains(const std::vector<DmaTrain> &trains, double now) {
    TransportStepStats st;
    for (const DmaTrain &t : trains) {
        ++st.trains;
        if (t.kind == TrainKind::near_window)
            ++st.near_trains;
        else
            ++st.far_trains;
        st.bytes += t.total_bytes;
        st.max_hold_observed = std::max(st.max_hold_observed, now - t.oldest_stage_time);
    }
    if (st.trains > 0)
        st.mean_train_bytes = static_cast<double>(st.bytes) / st.trains;
    return st;
}

} // namespace kvrail
