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

#include <doctest.h>

#include <random>

#include "kvrail/transport.hpp"
#include "reference/reference.hpp"

using namespace kvrail;

namespace {

constexpr uint64_t kPage = 16 * 1024;
constexpr uint64_t kTok = 1024;

Descriptor desc(uint64_t offset, uint64_t len, TrainKind kind = TrainKind::near_window,
                double staged = 0.0) {
    Descriptor d;
    d.phys_offset = offset;
    d.length = len;
    d.kind = kind;
    d.stage_time = staged;
    d.block = static_cast<BlockId>(offset / kPage);
    return d;
}

TransportConfig config(uint64_t tau = 131072, double hold = 10.0, bool merge = true) {
    TransportConfig c;
    c.merge_threshold = tau;
    c.max_hold = hold;
    c.merge = merge;
    return c;
}

uint64_t total_bytes(const std::vector<DmaTrain> &trains) {
    uint64_t b = 0;
    for (const auto &t : trains)
        b += t.total_bytes;
    return b;
}

} // namespace

TEST_CASE("stage: a fully contiguous window is one descriptor") {
    StageNeed need;
    need.session = 1;
    need.kind = TrainKind::near_window;
    for (BlockId b = 4; b < 12; ++b)
        need.spans.push_back({b, 0, 16});
    auto descs = stage({need}, kPage, kTok, 0.0);
    REQUIRE(descs.size() == 1);
    CHECK(descs[0].phys_offset == 4 * kPage);
    CHECK(descs[0].length == 8 * kPage);
}

TEST_CASE("stage: alternating blocks produce one descriptor each") {
    StageNeed need;
    need.session = 1;
    need.kind = TrainKind::near_window;
    for (BlockId b = 0; b < 16; b += 2)
        need.spans.push_back({b, 0, 16});
    auto descs = stage({need}, kPage, kTok, 0.0);
    CHECK(descs.size() == 8);
    for (const auto &d : descs)
        CHECK(d.length == kPage);
}

TEST_CASE("stage: run decomposition matches a linear scan of sorted extents") {
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 60; ++trial) {
        StageNeed need;
        need.session = 2;
        need.kind = TrainKind::near_window;
        std::set<BlockId> used;
        for (int i = 0; i < 20; ++i) {
            BlockId b = static_cast<BlockId>(rng() % 40);
            if (!used.insert(b).second)
                continue;
            need.spans.push_back({b, 0, 16});
        }
        auto descs = stage({need}, kPage, kTok, 0.0);
        // Oracle: sorted blocks, count maximal consecutive runs.
        std::vector<BlockId> blocks(used.begin(), used.end());
        size_t runs = blocks.empty() ? 0 : 1;
        uint64_t bytes = blocks.size() * kPage;
        for (size_t i = 1; i < blocks.size(); ++i)
            if (blocks[i] != blocks[i - 1] + 1)
                ++runs;
        CHECK(descs.size() == runs);
        uint64_t got_bytes = 0;
        for (const auto &d : descs)
            got_bytes += d.length;
        CHECK(got_bytes == bytes);
    }
}

TEST_CASE("stage: partial slots make sub-page descriptors that can abut") {
    StageNeed need;
    need.session = 1;
    need.kind = TrainKind::near_window;
    need.spans.push_back({3, 8, 8});  // tail of block 3
    need.spans.push_back({4, 0, 16}); // all of block 4
    auto descs = stage({need}, kPage, kTok, 0.0);
    REQUIRE(descs.size() == 1);
    CHECK(descs[0].phys_offset == 3 * kPage + 8 * kTok);
    CHECK(descs[0].length == 8 * kTok + kPage);
}

TEST_CASE("reduce: a lone small descriptor is flushed as the final train") {
    auto trains = reduce({desc(0, 4096)}, config(), 0.0);
    REQUIRE(trains.size() == 1);
    CHECK(trains[0].total_bytes == 4096);
    CHECK(trains[0].reason == IssueReason::flush);
}

TEST_CASE("reduce: 32 adjacent 4 KiB descriptors at tau=128 KiB form one train") {
    std::vector<Descriptor> descs;
    for (int i = 0; i < 32; ++i)
        descs.push_back(desc(i * 4096ull, 4096));
    auto trains = reduce(descs, config(), 0.0);
    REQUIRE(trains.size() == 1);
    CHECK(trains[0].total_bytes == 131072);
    CHECK(trains[0].descriptors.size() == 32);
    CHECK(trains[0].reason == IssueReason::threshold);
}

TEST_CASE("reduce: trains never mix kinds even when physically adjacent") {
    std::vector<Descriptor> descs{desc(0, kPage, TrainKind::near_window),
                                  desc(kPage, kPage, TrainKind::far_view)};
    auto trains = reduce(descs, config(), 0.0);
    REQUIRE(trains.size() == 2);
    CHECK(trains[0].kind == TrainKind::near_window);
    CHECK(trains[1].kind == TrainKind::far_view);
}

TEST_CASE("reduce: the age guard issues a stale train") {
    std::vector<Descriptor> descs{desc(0, kPage, TrainKind::near_window, 0.0),
                                  desc(kPage, kPage, TrainKind::near_window, 9.5)};
    TransportConfig cfg = config(1 << 20, 5.0);
    auto trains = reduce(descs, cfg, 10.0); // first descriptor is 10 units old
    REQUIRE(trains.size() == 2);
    CHECK(trains[0].reason == IssueReason::age);
}

TEST_CASE("reduce: a descriptor larger than tau travels alone") {
    std::vector<Descriptor> descs{desc(0, 256 * 1024), desc(256 * 1024, kPage)};
    auto trains = reduce(descs, config(), 0.0);
    REQUIRE(trains.size() == 2);
    CHECK(trains[0].total_bytes == 256 * 1024);
    CHECK(trains[0].reason == IssueReason::threshold);
}

TEST_CASE("reduce: merge disabled issues one train per descriptor in order") {
    std::vector<Descriptor> descs{desc(3 * kPage, kPage), desc(0, kPage), desc(kPage, kPage)};
    auto trains = reduce(descs, config(131072, 10.0, false), 0.0);
    REQUIRE(trains.size() == 3);
    CHECK(trains[0].descriptors[0].phys_offset == 3 * kPage);
    CHECK(trains[1].descriptors[0].phys_offset == 0);
}

TEST_CASE("reduce: random adjacency matches the run-enumeration oracle") {
    std::mt19937_64 rng(29);
    for (int trial = 0; trial < 80; ++trial) {
        std::vector<Descriptor> descs;
        std::set<BlockId> used;
        int n = 1 + rng() % 30;
        for (int i = 0; i < n; ++i) {
            BlockId b = static_cast<BlockId>(rng() % 48);
            if (!used.insert(b).second)
                continue;
            TrainKind k = rng() % 4 == 0 ? TrainKind::far_view : TrainKind::near_window;
            descs.push_back(desc(b * kPage, kPage, k));
        }
        auto trains = reduce(descs, config(), 0.0);
        auto want = reference::train_partition(descs, 131072);
        REQUIRE(trains.size() == want.size());
        for (size_t i = 0; i < trains.size(); ++i) {
            CHECK(trains[i].descriptors.size() == want[i].size());
            uint64_t want_bytes = 0;
            for (size_t k : want[i])
                want_bytes += descs[k].length;
            CHECK(trains[i].total_bytes == want_bytes);
        }
    }
}

TEST_CASE("reduce invariants on random streams") {
    std::mt19937_64 rng(31);
    for (int trial = 0; trial < 80; ++trial) {
        std::vector<Descriptor> descs;
        std::set<uint64_t> used;
        int n = 1 + rng() % 40;
        double now = 100.0;
        for (int i = 0; i < n; ++i) {
            uint64_t b = rng() % 64;
            if (!used.insert(b).second)
                continue;
            Descriptor d = desc(b * kPage, kPage);
            d.stage_time = now - static_cast<double>(rng() % 8);
            descs.push_back(d);
        }
        TransportConfig cfg = config(131072, 6.0);
        auto merged = reduce(descs, cfg, now);
        auto unmerged = reduce(descs, config(131072, 6.0, false), now);

        // Completeness: no loss, no duplication.
        CHECK(total_bytes(merged) == total_bytes(unmerged));
        size_t count = 0;
        for (const auto &t : merged)
            count += t.descriptors.size();
        CHECK(count == descs.size());

        // Threshold discipline: every non-flush train met tau or the age guard.
        for (const auto &t : merged) {
            if (t.reason == IssueReason::threshold)
                CHECK(t.total_bytes >= cfg.merge_threshold);
            if (t.reason == IssueReason::age)
                CHECK(now - t.oldest_stage_time >= cfg.max_hold);
            // Adjacency within the train.
            for (size_t i = 1; i < t.descriptors.size(); ++i)
                CHECK(t.descriptors[i - 1].phys_offset + t.descriptors[i - 1].length ==
                      t.descriptors[i].phys_offset);
        }

        // Merge monotonicity.
        CHECK(merged.size() <= unmerged.size());
        if (!merged.empty()) {
            double mean_m = static_cast<double>(total_bytes(merged)) / merged.size();
            double mean_u = static_cast<double>(total_bytes(unmerged)) / unmerged.size();
            CHECK(mean_m >= mean_u);
        }
    }
}

TEST_CASE("summarize_trains reports counts, bytes and the observed hold") {
    std::vector<Descriptor> descs{desc(0, kPage, TrainKind::near_window, 1.0),
                                  desc(4 * kPage, kPage, TrainKind::far_view, 3.0)};
    auto trains = reduce(descs, config(), 5.0);
    auto st = summarize_trains(trains, 5.0);
    CHECK(st.trains == 2);
    CHECK(st.near_trains == 1);
    CHECK(st.far_trains == 1);
    CHECK(st.bytes == 2 * kPage);
    CHECK(st.max_hold_observed == doctest::Approx(4.0));
}
