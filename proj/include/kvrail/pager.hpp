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

#include <array>
#include <cstddef>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <span>
#include <unordered_map>
#include <vector>

#include "kvrail/types.hpp"

namespace kvrail {

struct PagerConfig {
    uint64_t page_bytes = 16 * 1024; // KV payload bytes per page block, power of two
    uint32_t arena_pages = 4096;
    uint32_t layers = 4;      // L
    uint32_t kv_head_dim = 64; // d_kv
    uint32_t elem_bytes = 2;  // b

    // One token's K+V footprint across all layers.
    uint64_t token_bytes() const { return 2ull * layers * kv_head_dim * elem_bytes; }
    uint32_t tokens_per_page() const {
        uint64_t t = page_bytes / token_bytes();
        return t < 1 ? 1u : static_cast<uint32_t>(t);
    }
    void validate() const;
};

/// One logical->physical mapping: tokens [tokens.begin, tokens.end) live in
/// `block` starting at token slot `slot_begin`.
struct ViewEntry {
    TokenRange tokens;
    BlockId block = kInvalidBlock;
    uint32_t slot_begin = 0;
};

/// Committed snapshot of a session's logical view.
struct ViewDescriptor {
    SessionId session = 0;
    uint64_t epoch = 0;
    std::vector<ViewEntry> entries; // sorted by tokens.begin, disjoint
    uint64_t live_tokens = 0;       // total mapped tokens
    uint64_t extent = 0;            // logical end (append cursor at commit)
    bool eos = false;

    const ViewEntry *find(uint64_t token) const;
};

/// Batched edit set for one step, applied exactly once per (session, step).
struct FrameDelta {
    SessionId session = 0;
    Step step = 0;
    std::vector<uint64_t> reserves; // token counts
    struct AliasReq {
        SessionId src = 0;
        uint64_t prefix_tokens = 0;
    };
    std::vector<AliasReq> aliases;
    std::vector<TokenRange> trims;
    bool trim_eos = false;
};

struct ArenaStats {
    uint64_t free_pages = 0;
    uint64_t live_pages = 0;   // refcount >= 1 (includes blocks queued for release)
    uint64_t shared_pages = 0; // refcount >= 2
    uint64_t reserved_bytes = 0;
    uint64_t active_bytes = 0; // mapped tokens in committed views * token_bytes
};

/// Instrumentation used by the bounded-work audits. All values are cumulative.
struct WorkCounters {
    uint64_t commits = 0;
    uint64_t commit_entries_touched = 0; // journal replay + deferred frees
    uint64_t reserve_calls = 0;
    uint64_t reserve_blocks = 0;
    uint64_t reserve_alloc_steps = 0; // free-list pops/carves/relinks
    uint64_t trim_calls = 0;
    uint64_t trim_blocks = 0;   // blocks whose last reference was dropped
    uint64_t free_list_steps = 0; // coalesce/link work when blocks return
};

struct ReservedBlock {
    BlockId block = kInvalidBlock;
    uint32_t token_capacity = 0;
};

/// Page-level KV virtualization with per-session double-buffered view
/// descriptors.
///
/// Each session stages edits (reserve/alias/trim/write remaps) into a shadow
/// descriptor; frame_commit atomically swaps shadow and active and replays the
/// step's edit journal onto the new shadow, so both buffers converge while the
/// commit touches only the edited entries. Blocks whose last reference drops
/// during a step are returned to the free lists when that step commits, which
/// makes them visible to other sessions from the next step.
///
/// Free pages are kept in run-length size-class free lists (1, 2-3, 4-7, 8+)
/// with LIFO discipline and O(1) boundary coalescing.
class Pager {
public:
    explicit Pager(PagerConfig cfg);
    ~Pager();

    Pager(const Pager &) = delete;
    Pager &operator=(const Pager &) = delete;

    const PagerConfig &config() const { return cfg_; }

    void create_session(SessionId id);
    bool has_session(SessionId id) const;

    /// Allocate page-aligned space for `token_count` upcoming tokens at the
    /// session's append cursor. Returns newly allocated blocks; tail spare
    /// capacity of the current boundary block is used first and does not
    /// appear in the result.
    std::vector<ReservedBlock> reserve(SessionId session, uint64_t token_count);

    /// Map an explicit unmapped logical range onto fresh blocks without moving
    /// the append cursor (used for summary slots living outside token space).
    std::vector<ReservedBlock> reserve_range(SessionId session, TokenRange range);

    /// Map src's committed prefix [0, prefix_tokens) into dst copy-on-write.
    /// Returns the number of blocks that became shared.
    uint64_t alias(SessionId dst, SessionId src, uint64_t prefix_tokens);

    /// Write token payloads into the session's shadow mapping. Shared blocks
    /// are copied first and the writer's mapping repointed.
    void write_tokens(SessionId session, TokenRange range, std::span<const std::byte> payload);

    /// Drop mappings for the given ranges. Returns the number of pages whose
    /// last reference was dropped (physically freed at this step's commit).
    uint64_t trim(SessionId session, std::span<const TokenRange> ranges);
    uint64_t trim_eos(SessionId session);

    /// Atomically publish the step's staged edits. Returns the new epoch.
    /// Re-committing an already-committed step is a no-op success.
    uint64_t frame_commit(SessionId session, Step step);

    /// Apply a batched delta (aliases, reserves, trims, optional EOS) and
    /// commit it. Idempotent under retry of the same (session, step).
    uint64_t apply_frame(const FrameDelta &delta);

    /// Epoch-consistent snapshot of the committed view.
    ViewDescriptor active_view(SessionId session) const;

    bool session_eos(SessionId session) const;        // committed EOS flag
    uint64_t session_cursor(SessionId session) const; // staged append cursor
    Step next_step(SessionId session) const;

    ArenaStats stats() const;
    WorkCounters counters() const;
    uint64_t touched_in_last_commit(SessionId session) const;

    /// Raw payload access for a block's token slots.
    void read_slots(BlockId block, uint32_t slot_begin, uint32_t slot_count,
                    std::byte *out) const;

    /// Lengths of all free runs, ascending by physical offset (diagnostics).
    std::vector<std::pair<BlockId, uint32_t>> free_runs() const;

    uint32_t block_refcount(BlockId block) const;

private:
    struct BlockMeta;
    struct ViewBuffer;
    struct EditOp;
    struct Session;

    PagerConfig cfg_;
    uint32_t tokens_per_page_ = 0;

    mutable std::mutex arena_mu_;
    std::vector<BlockMeta> blocks_;
    std::array<BlockId, 4> free_head_{};
    uint64_t free_pages_ = 0;
    uint64_t shared_pages_ = 0;
    uint64_t live_pages_ = 0;
    std::vector<std::unique_ptr<std::byte[]>> page_mem_; // materialized on write
    uint64_t active_tokens_ = 0; // across committed views

    mutable std::mutex counters_mu_;
    WorkCounters counters_;

    mutable std::shared_mutex sessions_mu_;
    std::unordered_map<SessionId, std::unique_ptr<Session>> sessions_;

    Session &session_ref(SessionId id);
    const Session &session_ref(SessionId id) const;

    // Arena internals; all require arena_mu_.
    static int size_class(uint32_t run_len);
    void push_run(BlockId head, uint32_t len);
    void unlink_run(BlockId head);
    std::vector<std::pair<BlockId, uint32_t>> alloc_blocks(uint32_t count);
    void release_to_free_list(BlockId b);
    bool drop_ref(BlockId b); // true: caller owns the final reference, defer free
    void add_ref_locked(BlockId b);

    std::byte *block_payload(BlockId b, bool materialize);

    // Session internals; require the session's lock. When `accum` is given,
    // block reference deltas are collected there instead of being settled per
    // edit, so a replayed add/repoint pair nets out without ever touching a
    // block the step already released.
    void apply_edit(Session &s, int buf_index, const EditOp &op, uint64_t &touched,
                    std::map<BlockId, int> *accum = nullptr);
    void settle_delta(Session &s, const std::map<BlockId, int> &delta);
    void note_block_added(Session &s, BlockId b);
    void note_block_removed(Session &s, BlockId b);
    void cow_block(Session &s, BlockId shared_block);
    uint64_t do_trim(Session &s, std::span<const TokenRange> ranges);
    uint64_t do_trim_eos(Session &s);
    uint64_t count_released(Session &s, const std::set<BlockId> &candidates);
    std::vector<ReservedBlock> do_reserve(Session &s, uint64_t token_count);
    void do_write(Session &s, TokenRange range, std::span<const std::byte> payload);
    uint64_t do_commit(Session &s, Step step);
};

} // namespace kvrail
