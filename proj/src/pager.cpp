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

#include "kvrail/pager.hpp"

#include <algorithm>
#include <cassert>
#include <cstring>
#include <set>

namespace kvrail {

namespace {
bool is_pow2(uint64_t v) { return v != 0 && (v & (v - 1)) == 0; }
} // namespace

void PagerConfig::validate() const {
    if (!is_pow2(page_bytes))
        raise(Errc::bad_config, "page_bytes must be a power of two");
    if (layers == 0 || kv_head_dim == 0 || elem_bytes == 0)
        raise(Errc::bad_config, "layers, kv_head_dim and elem_bytes must be positive");
    if (page_bytes < token_bytes())
        raise(Errc::bad_config, "page_bytes smaller than one token's K+V footprint");
    if (arena_pages == 0)
        raise(Errc::bad_config, "arena_pages must be positive");
}

const ViewEntry *ViewDescriptor::find(uint64_t token) const {
    auto it = std::upper_bound(entries.begin(), entries.end(), token,
                               [](uint64_t t, const ViewEntry &e) { return t < e.tokens.begin; });
    if (it == entries.begin())
        return nullptr;
    --it;
    return it->tokens.contains(token) ? &*it : nullptr;
}

// ---------------------------------------------------------------------------
// Internal state
// ---------------------------------------------------------------------------

struct Pager::BlockMeta {
    uint32_t refcount = 0;
    bool free_listed = false;
    uint8_t cls = 0;              // size class, valid at run head
    BlockId run_head = kInvalidBlock; // valid at run endpoints
    BlockId run_tail = kInvalidBlock;
    BlockId prev_run = kInvalidBlock; // intrusive class list, valid at run head
    BlockId next_run = kInvalidBlock;
};

struct Pager::EditOp {
    enum class Kind : uint8_t { add, remove_range, repoint, resize_tail, set_eos };
    Kind kind = Kind::add;
    ViewEntry entry;           // add
    TokenRange range;          // remove_range / repoint
    BlockId block = kInvalidBlock; // repoint target
    uint32_t slot = 0;             // slot of range.begin in target
    uint64_t tail_begin = 0;       // resize_tail: entry key
    uint64_t new_end = 0;          // resize_tail
};

struct Pager::ViewBuffer {
    std::map<uint64_t, ViewEntry> entries;
    std::unordered_map<BlockId, std::set<uint64_t>> by_block;
    uint64_t mapped_tokens = 0;
    uint64_t extent = 0;
    bool eos = false;
};

struct Pager::Session {
    SessionId id = 0;
    std::array<ViewBuffer, 2> buf;
    int active = 0;
    uint64_t epoch = 0;
    Step next_step = 0;
    uint64_t cursor = 0;
    uint64_t committed_tokens = 0;
    std::vector<EditOp> journal;
    std::unordered_map<BlockId, uint32_t> uses; // entry refs across both buffers
    std::vector<BlockId> pending_free;
    uint64_t last_commit_touched = 0;
    mutable std::shared_mutex mu;
};

// ---------------------------------------------------------------------------
// Construction
// ---------------------------------------------------------------------------

Pager::Pager(PagerConfig cfg) : cfg_(cfg) {
    cfg_.validate();
    tokens_per_page_ = cfg_.tokens_per_page();
    blocks_.resize(cfg_.arena_pages);
    page_mem_.resize(cfg_.arena_pages);
    free_head_.fill(kInvalidBlock);
    free_pages_ = cfg_.arena_pages;
    for (auto &b : blocks_)
        b.free_listed = true;
    push_run(0, cfg_.arena_pages);
}

Pager::~Pager() = default;

// ---------------------------------------------------------------------------
// Free-list machinery (arena_mu_ held)
// ---------------------------------------------------------------------------

int Pager::size_class(uint32_t run_len) {
    if (run_len >= 8) return 3;
    if (run_len >= 4) return 2;
    if (run_len >= 2) return 1;
    return 0;
}

void Pager::push_run(BlockId head, uint32_t len) {
    BlockId tail = head + len - 1;
    int c = size_class(len);
    BlockMeta &h = blocks_[head];
    h.run_head = head;
    h.run_tail = tail;
    h.cls = static_cast<uint8_t>(c);
    h.prev_run = kInvalidBlock;
    h.next_run = free_head_[c];
    if (free_head_[c] != kInvalidBlock)
        blocks_[free_head_[c]].prev_run = head;
    free_head_[c] = head;
    BlockMeta &t = blocks_[tail];
    t.run_head = head;
    t.run_tail = tail;
}

void Pager::unlink_run(BlockId head) {
    BlockMeta &h = blocks_[head];
    int c = h.cls;
    if (h.prev_run != kInvalidBlock)
        blocks_[h.prev_run].next_run = h.next_run;
    else
        free_head_[c] = h.next_run;
    if (h.next_run != kInvalidBlock)
        blocks_[h.next_run].prev_run = h.prev_run;
    h.prev_run = h.next_run = kInvalidBlock;
}

std::vector<std::pair<BlockId, uint32_t>> Pager::alloc_blocks(uint32_t count) {
    if (count == 0)
        return {};
    if (free_pages_ < count)
        raise(Errc::out_of_pages,
              "need " + std::to_string(count) + " pages, " + std::to_string(free_pages_) +
                  " free");
    std::vector<std::pair<BlockId, uint32_t>> runs;
    uint32_t need = count;
    uint64_t steps = 0;
    while (need > 0) {
        int want = size_class(std::min<uint32_t>(need, 8));
        int c = -1;
        for (int k = want; k < 4 && c < 0; ++k)
            if (free_head_[k] != kInvalidBlock)
                c = k;
        for (int k = want - 1; k >= 0 && c < 0; --k)
            if (free_head_[k] != kInvalidBlock)
                c = k;
        assert(c >= 0);
        BlockId head = free_head_[c];
        uint32_t run_len = blocks_[head].run_tail - head + 1;
        unlink_run(head);
        uint32_t take = std::min(run_len, need);
        for (uint32_t i = 0; i < take; ++i) {
            blocks_[head + i].free_listed = false;
            // Recycled pages come back zeroed so stale bytes never leak into a
            // new owner's unwritten slots.
            if (page_mem_[head + i])
                std::memset(page_mem_[head + i].get(), 0, cfg_.page_bytes);
        }
        if (run_len > take)
            push_run(head + take, run_len - take);
        runs.emplace_back(head, take);
        free_pages_ -= take;
        need -= take;
        steps += 2; // pop + carve/relink
    }
    {
        std::lock_guard lk(counters_mu_);
        counters_.reserve_alloc_steps += steps;
        counters_.reserve_blocks += count;
    }
    return runs;
}

void Pager::release_to_free_list(BlockId b) {
    BlockMeta &m = blocks_[b];
    assert(!m.free_listed && m.refcount == 0);
    m.free_listed = true;
    BlockId head = b, tail = b;
    uint64_t steps = 1;
    if (b > 0 && blocks_[b - 1].free_listed) {
        head = blocks_[b - 1].run_head; // b-1 is a run tail
        unlink_run(head);
        ++steps;
    }
    if (b + 1 < blocks_.size() && blocks_[b + 1].free_listed) {
        BlockId rhead = b + 1; // b+1 is a run head
        tail = blocks_[rhead].run_tail;
        unlink_run(rhead);
        ++steps;
    }
    push_run(head, tail - head + 1);
    ++free_pages_;
    {
        std::lock_guard lk(counters_mu_);
        counters_.free_list_steps += steps;
    }
}

void Pager::add_ref_locked(BlockId b) {
    BlockMeta &m = blocks_[b];
    assert(!m.free_listed);
    ++m.refcount;
    if (m.refcount == 1)
        ++live_pages_;
    else if (m.refcount == 2)
        ++shared_pages_;
}

bool Pager::drop_ref(BlockId b) {
    BlockMeta &m = blocks_[b];
    assert(m.refcount >= 1);
    if (m.refcount == 1)
        return true; // final reference: caller defers the physical free
    --m.refcount;
    if (m.refcount == 1)
        --shared_pages_;
    return false;
}

std::byte *Pager::block_payload(BlockId b, bool materialize) {
    auto &slot = page_mem_[b];
    if (!slot && materialize) {
        slot = std::make_unique<std::byte[]>(cfg_.page_bytes);
        std::memset(slot.get(), 0, cfg_.page_bytes);
    }
    return slot.get();
}

// ---------------------------------------------------------------------------
// Session edit application
// ---------------------------------------------------------------------------

void Pager::note_block_added(Session &s, BlockId b) {
    uint32_t &u = s.uses[b];
    if (u++ == 0) {
        std::lock_guard lk(arena_mu_);
        add_ref_locked(b);
    }
}

void Pager::note_block_removed(Session &s, BlockId b) {
    auto it = s.uses.find(b);
    assert(it != s.uses.end() && it->second > 0);
    if (--it->second == 0) {
        s.uses.erase(it);
        bool defer;
        {
            std::lock_guard lk(arena_mu_);
            defer = drop_ref(b);
        }
        if (defer)
            s.pending_free.push_back(b);
    }
}

void Pager::settle_delta(Session &s, const std::map<BlockId, int> &delta) {
    for (auto [b, d] : delta) {
        for (; d > 0; --d)
            note_block_added(s, b);
        for (; d < 0; ++d)
            note_block_removed(s, b);
    }
}

void Pager::apply_edit(Session &s, int buf_index, const EditOp &op, uint64_t &touched,
                       std::map<BlockId, int> *accum) {
    ViewBuffer &vb = s.buf[buf_index];
    // Block reference deltas are settled at the end (or by the caller) so
    // entry splits never transiently drop a block's use count to zero.
    std::map<BlockId, int> local;
    std::map<BlockId, int> &delta = accum ? *accum : local;

    auto insert_entry = [&](const ViewEntry &e) {
        vb.entries[e.tokens.begin] = e;
        vb.by_block[e.block].insert(e.tokens.begin);
        vb.mapped_tokens += e.tokens.size();
        vb.extent = std::max(vb.extent, e.tokens.end);
        delta[e.block] += 1;
        ++touched;
    };
    auto erase_entry = [&](std::map<uint64_t, ViewEntry>::iterator it) {
        const ViewEntry &e = it->second;
        auto bit = vb.by_block.find(e.block);
        bit->second.erase(e.tokens.begin);
        if (bit->second.empty())
            vb.by_block.erase(bit);
        vb.mapped_tokens -= e.tokens.size();
        delta[e.block] -= 1;
        ++touched;
        return vb.entries.erase(it);
    };
    // Entries overlapping [range.begin, range.end), visited left to right.
    auto for_overlaps = [&](TokenRange range, auto &&fn) {
        auto it = vb.entries.lower_bound(range.begin);
        if (it != vb.entries.begin()) {
            auto prev = std::prev(it);
            if (prev->second.tokens.end > range.begin)
                it = prev;
        }
        while (it != vb.entries.end() && it->second.tokens.begin < range.end)
            it = fn(it);
    };

    switch (op.kind) {
    case EditOp::Kind::add:
        insert_entry(op.entry);
        break;
    case EditOp::Kind::remove_range:
        for_overlaps(op.range, [&](auto it) {
            ViewEntry e = it->second;
            auto next = erase_entry(it);
            if (e.tokens.begin < op.range.begin) {
                ViewEntry left = e;
                left.tokens.end = op.range.begin;
                insert_entry(left);
            }
            if (e.tokens.end > op.range.end) {
                ViewEntry right = e;
                right.tokens.begin = op.range.end;
                right.slot_begin = e.slot_begin + static_cast<uint32_t>(op.range.end - e.tokens.begin);
                insert_entry(right);
                next = vb.entries.find(right.tokens.begin);
                ++next;
            }
            return next;
        });
        break;
    case EditOp::Kind::repoint:
        for_overlaps(op.range, [&](auto it) {
            ViewEntry e = it->second;
            auto next = erase_entry(it);
            if (e.tokens.begin < op.range.begin) {
                ViewEntry left = e;
                left.tokens.end = op.range.begin;
                insert_entry(left);
            }
            TokenRange cov{std::max(e.tokens.begin, op.range.begin),
                           std::min(e.tokens.end, op.range.end)};
            ViewEntry mid;
            mid.tokens = cov;
            mid.block = op.block;
            mid.slot_begin = op.slot + static_cast<uint32_t>(cov.begin - op.range.begin);
            insert_entry(mid);
            if (e.tokens.end > op.range.end) {
                ViewEntry right = e;
                right.tokens.begin = op.range.end;
                right.slot_begin = e.slot_begin + static_cast<uint32_t>(op.range.end - e.tokens.begin);
                insert_entry(right);
            }
            next = vb.entries.upper_bound(std::min(e.tokens.end, op.range.end) - 1);
            return next;
        });
        break;
    case EditOp::Kind::resize_tail: {
        auto it = vb.entries.find(op.tail_begin);
        if (it != vb.entries.end()) {
            vb.mapped_tokens += op.new_end - it->second.tokens.end;
            it->second.tokens.end = op.new_end;
            vb.extent = std::max(vb.extent, op.new_end);
            ++touched;
        }
        break;
    }
    case EditOp::Kind::set_eos:
        vb.eos = true;
        ++touched;
        break;
    }

    if (!accum)
        settle_delta(s, local);
}

// ---------------------------------------------------------------------------
// Session lookup
// ---------------------------------------------------------------------------

void Pager::create_session(SessionId id) {
    std::unique_lock lk(sessions_mu_);
    auto [it, inserted] = sessions_.try_emplace(id);
    if (!inserted)
        raise(Errc::bad_config, "session " + std::to_string(id) + " already exists");
    it->second = std::make_unique<Session>();
    it->second->id = id;
}

bool Pager::has_session(SessionId id) const {
    std::shared_lock lk(sessions_mu_);
    return sessions_.count(id) != 0;
}

Pager::Session &Pager::session_ref(SessionId id) {
    std::shared_lock lk(sessions_mu_);
    auto it = sessions_.find(id);
    if (it == sessions_.end())
        raise(Errc::unknown_session, "session " + std::to_string(id));
    return *it->second;
}

const Pager::Session &Pager::session_ref(SessionId id) const {
    return const_cast<Pager *>(this)->session_ref(id);
}

// ---------------------------------------------------------------------------
// Verbs
// ---------------------------------------------------------------------------

std::vector<ReservedBlock> Pager::reserve(SessionId session, uint64_t token_count) {
    Session &s = session_ref(session);
    std::unique_lock lk(s.mu);
    return do_reserve(s, token_count);
}

std::vector<ReservedBlock> Pager::do_reserve(Session &s, uint64_t token_count) {
    ViewBuffer &shadow = s.buf[s.active ^ 1];
    if (shadow.eos)
        raise(Errc::session_closed, "reserve on EOS session " + std::to_string(s.id));
    {
        std::lock_guard lk(counters_mu_);
        ++counters_.reserve_calls;
    }
    std::vector<ReservedBlock> result;
    if (token_count == 0)
        return result;

    uint64_t remaining = token_count;
    uint64_t touched = 0;

    // Use spare slots of the current tail block first.
    if (s.cursor > 0) {
        auto it = shadow.entries.lower_bound(s.cursor);
        if (it != shadow.entries.begin()) {
            auto tail = std::prev(it);
            const ViewEntry &e = tail->second;
            if (e.tokens.end == s.cursor) {
                uint32_t used = e.slot_begin + static_cast<uint32_t>(e.tokens.size());
                if (used < tokens_per_page_) {
                    uint64_t extend = std::min<uint64_t>(tokens_per_page_ - used, remaining);
                    EditOp op;
                    op.kind = EditOp::Kind::resize_tail;
                    op.tail_begin = e.tokens.begin;
                    op.new_end = e.tokens.end + extend;
                    apply_edit(s, s.active ^ 1, op, touched);
                    s.journal.push_back(op);
                    s.cursor += extend;
                    remaining -= extend;
                }
            }
        }
    }

    if (remaining > 0) {
        uint32_t pages =
            static_cast<uint32_t>((remaining + tokens_per_page_ - 1) / tokens_per_page_);
        std::vector<std::pair<BlockId, uint32_t>> runs;
        {
            std::lock_guard lk(arena_mu_);
            runs = alloc_blocks(pages);
        }
        for (auto [head, len] : runs) {
            for (uint32_t i = 0; i < len; ++i) {
                uint64_t take = std::min<uint64_t>(remaining, tokens_per_page_);
                EditOp op;
                op.kind = EditOp::Kind::add;
                op.entry.tokens = {s.cursor, s.cursor + take};
                op.entry.block = head + i;
                op.entry.slot_begin = 0;
                apply_edit(s, s.active ^ 1, op, touched);
                s.journal.push_back(op);
                s.cursor += take;
                remaining -= take;
                result.push_back({head + i, tokens_per_page_});
            }
        }
    }
    return result;
}

std::vector<ReservedBlock> Pager::reserve_range(SessionId session, TokenRange range) {
    Session &s = session_ref(session);
    std::unique_lock lk(s.mu);
    ViewBuffer &shadow = s.buf[s.active ^ 1];
    if (shadow.eos)
        raise(Errc::session_closed, "reserve on EOS session " + std::to_string(s.id));
    std::vector<ReservedBlock> result;
    if (range.empty())
        return result;
    // Must be unmapped.
    auto it = shadow.entries.lower_bound(range.begin);
    if (it != shadow.entries.begin() && std::prev(it)->second.tokens.end > range.begin)
        raise(Errc::alias_overlap, "range already mapped");
    if (it != shadow.entries.end() && it->second.tokens.begin < range.end)
        raise(Errc::alias_overlap, "range already mapped");
    {
        std::lock_guard lk2(counters_mu_);
        ++counters_.reserve_calls;
    }
    uint32_t pages =
        static_cast<uint32_t>((range.size() + tokens_per_page_ - 1) / tokens_per_page_);
    std::vector<std::pair<BlockId, uint32_t>> runs;
    {
        std::lock_guard lk2(arena_mu_);
        runs = alloc_blocks(pages);
    }
    uint64_t pos = range.begin;
    uint64_t touched = 0;
    for (auto [head, len] : runs) {
        for (uint32_t i = 0; i < len; ++i) {
            uint64_t take = std::min<uint64_t>(range.end - pos, tokens_per_page_);
            EditOp op;
            op.kind = EditOp::Kind::add;
            op.entry.tokens = {pos, pos + take};
            op.entry.block = head + i;
            op.entry.slot_begin = 0;
            apply_edit(s, s.active ^ 1, op, touched);
            s.journal.push_back(op);
            pos += take;
            result.push_back({head + i, tokens_per_page_});
        }
    }
    return result;
}

uint64_t Pager::alias(SessionId dst, SessionId src, uint64_t prefix_tokens) {
    if (dst == src)
        raise(Errc::bad_config, "alias onto the same session");
    Session &d = session_ref(dst);
    Session &srcs = session_ref(src);
    // Lock both sessions in id order to keep cross-alias callers deadlock-free.
    Session *first = d.id < srcs.id ? &d : &srcs;
    Session *second = d.id < srcs.id ? &srcs : &d;
    std::unique_lock lk1(first->mu);
    std::unique_lock lk2(second->mu);

    const ViewBuffer &src_active = srcs.buf[srcs.active];
    ViewBuffer &dst_shadow = d.buf[d.active ^ 1];
    if (dst_shadow.eos)
        raise(Errc::session_closed, "alias into EOS session");
    if (prefix_tokens == 0)
        return 0;

    // Source must cover [0, prefix_tokens) gap-free in its committed view.
    uint64_t covered = 0;
    std::vector<ViewEntry> pieces;
    for (auto &[beg, e] : src_active.entries) {
        if (beg != covered)
            break;
        if (covered >= prefix_tokens)
            break;
        ViewEntry p = e;
        p.tokens.end = std::min(p.tokens.end, prefix_tokens);
        pieces.push_back(p);
        covered = p.tokens.end;
        if (covered >= prefix_tokens)
            break;
    }
    if (covered < prefix_tokens)
        raise(Errc::prefix_out_of_range,
              "source maps " + std::to_string(covered) + " of " +
                  std::to_string(prefix_tokens) + " prefix tokens");

    // Destination must map nothing below the prefix.
    auto it = dst_shadow.entries.lower_bound(0);
    if (it != dst_shadow.entries.end() && it->second.tokens.begin < prefix_tokens)
        raise(Errc::alias_overlap, "destination already maps part of the prefix");

    std::set<BlockId> shared;
    uint64_t touched = 0;
    for (const ViewEntry &p : pieces) {
        EditOp op;
        op.kind = EditOp::Kind::add;
        op.entry = p;
        apply_edit(d, d.active ^ 1, op, touched);
        d.journal.push_back(op);
        shared.insert(p.block);
    }
    d.cursor = std::max(d.cursor, prefix_tokens);
    return shared.size();
}

void Pager::write_tokens(SessionId session, TokenRange range,
                         std::span<const std::byte> payload) {
    Session &s = session_ref(session);
    std::unique_lock lk(s.mu);
    do_write(s, range, payload);
}

void Pager::cow_block(Session &s, BlockId shared_block) {
    std::vector<std::pair<BlockId, uint32_t>> runs;
    {
        std::lock_guard lk(arena_mu_);
        runs = alloc_blocks(1);
    }
    BlockId copy = runs[0].first;
    {
        std::lock_guard lk(arena_mu_);
        const std::byte *src = block_payload(shared_block, false);
        if (src) {
            std::byte *dst = block_payload(copy, true);
            std::memcpy(dst, src, cfg_.page_bytes);
        }
    }
    // Repoint every shadow entry on the shared block; slots are preserved by
    // the whole-block copy.
    ViewBuffer &shadow = s.buf[s.active ^ 1];
    auto bit = shadow.by_block.find(shared_block);
    assert(bit != shadow.by_block.end());
    std::vector<uint64_t> keys(bit->second.begin(), bit->second.end());
    uint64_t touched = 0;
    for (uint64_t k : keys) {
        const ViewEntry e = shadow.entries.at(k);
        EditOp op;
        op.kind = EditOp::Kind::repoint;
        op.range = e.tokens;
        op.block = copy;
        op.slot = e.slot_begin;
        apply_edit(s, s.active ^ 1, op, touched);
        s.journal.push_back(op);
    }
}

void Pager::do_write(Session &s, TokenRange range, std::span<const std::byte> payload) {
    if (range.empty())
        return;
    const uint64_t tb = cfg_.token_bytes();
    if (payload.size() != range.size() * tb)
        raise(Errc::dimension_mismatch, "payload bytes do not match token range");

    ViewBuffer &shadow = s.buf[s.active ^ 1];

    // Validate coverage before any side effect.
    {
        uint64_t pos = range.begin;
        while (pos < range.end) {
            auto it = shadow.entries.upper_bound(pos);
            if (it == shadow.entries.begin() || !std::prev(it)->second.tokens.contains(pos))
                raise(Errc::unmapped_range, "token " + std::to_string(pos) + " unmapped");
            pos = std::prev(it)->second.tokens.end;
        }
    }

    // Copy-on-write any shared block the range touches, then re-resolve.
    for (;;) {
        BlockId to_copy = kInvalidBlock;
        uint64_t pos = range.begin;
        while (pos < range.end) {
            auto it = shadow.entries.upper_bound(pos);
            --it;
            const ViewEntry &e = it->second;
            uint32_t rc;
            {
                std::lock_guard lk(arena_mu_);
                rc = blocks_[e.block].refcount;
            }
            if (rc >= 2) {
                to_copy = e.block;
                break;
            }
            pos = e.tokens.end;
        }
        if (to_copy == kInvalidBlock)
            break;
        cow_block(s, to_copy);
    }

    uint64_t pos = range.begin;
    while (pos < range.end) {
        auto it = shadow.entries.upper_bound(pos);
        --it;
        const ViewEntry &e = it->second;
        uint64_t n = std::min(range.end, e.tokens.end) - pos;
        uint32_t slot = e.slot_begin + static_cast<uint32_t>(pos - e.tokens.begin);
        std::byte *mem;
        {
            std::lock_guard lk(arena_mu_);
            mem = block_payload(e.block, true);
        }
        std::memcpy(mem + static_cast<uint64_t>(slot) * tb,
                    payload.data() + (pos - range.begin) * tb, n * tb);
        pos += n;
    }
}

uint64_t Pager::trim(SessionId session, std::span<const TokenRange> ranges) {
    Session &s = session_ref(session);
    std::unique_lock lk(s.mu);
    return do_trim(s, ranges);
}

uint64_t Pager::do_trim(Session &s, std::span<const TokenRange> ranges) {
    ViewBuffer &shadow = s.buf[s.active ^ 1];
    // Validate coverage and collect touched blocks before journaling anything.
    std::set<BlockId> candidates;
    for (const TokenRange &r : ranges) {
        if (r.empty())
            continue;
        uint64_t pos = r.begin;
        while (pos < r.end) {
            auto it = shadow.entries.upper_bound(pos);
            if (it == shadow.entries.begin())
                raise(Errc::unmapped_range, "trim range not mapped");
            --it;
            if (!it->second.tokens.contains(pos))
                raise(Errc::unmapped_range, "trim range not mapped");
            candidates.insert(it->second.block);
            pos = it->second.tokens.end;
        }
    }
    uint64_t touched = 0;
    for (const TokenRange &r : ranges) {
        if (r.empty())
            continue;
        EditOp op;
        op.kind = EditOp::Kind::remove_range;
        op.range = r;
        apply_edit(s, s.active ^ 1, op, touched);
        s.journal.push_back(op);
    }
    uint64_t freed = count_released(s, candidates);
    {
        std::lock_guard lk(counters_mu_);
        ++counters_.trim_calls;
        counters_.trim_blocks += freed;
    }
    return freed;
}

// Blocks the trim dropped from the shadow whose only remaining holder is this
// session; they return to the free pool when the step commits.
uint64_t Pager::count_released(Session &s, const std::set<BlockId> &candidates) {
    const ViewBuffer &shadow = s.buf[s.active ^ 1];
    std::set<BlockId> pend(s.pending_free.begin(), s.pending_free.end());
    uint64_t freed = 0;
    for (BlockId b : candidates) {
        if (shadow.by_block.count(b))
            continue; // still partially mapped
        if (pend.count(b)) {
            ++freed; // we already hold the final reference
            continue;
        }
        if (s.uses.count(b)) { // our active buffer still maps it
            std::lock_guard lk(arena_mu_);
            if (blocks_[b].refcount == 1)
                ++freed;
        }
    }
    return freed;
}

uint64_t Pager::trim_eos(SessionId session) {
    Session &s = session_ref(session);
    std::unique_lock lk(s.mu);
    return do_trim_eos(s);
}

uint64_t Pager::do_trim_eos(Session &s) {
    ViewBuffer &shadow = s.buf[s.active ^ 1];
    std::set<BlockId> candidates;
    for (const auto &[b, keys] : shadow.by_block)
        candidates.insert(b);
    uint64_t touched = 0;
    if (!shadow.entries.empty()) {
        EditOp op;
        op.kind = EditOp::Kind::remove_range;
        op.range = {0, shadow.extent};
        apply_edit(s, s.active ^ 1, op, touched);
        s.journal.push_back(op);
    }
    EditOp eos;
    eos.kind = EditOp::Kind::set_eos;
    apply_edit(s, s.active ^ 1, eos, touched);
    s.journal.push_back(eos);
    uint64_t freed = count_released(s, candidates);
    {
        std::lock_guard lk(counters_mu_);
        ++counters_.trim_calls;
        counters_.trim_blocks += freed;
    }
    return freed;
}

uint64_t Pager::frame_commit(SessionId session, Step step) {
    Session &s = session_ref(session);
    std::unique_lock lk(s.mu);
    return do_commit(s, step);
}

uint64_t Pager::do_commit(Session &s, Step step) {
    if (step < s.next_step)
        return s.epoch; // stale retry: no-op success
    if (step > s.next_step)
        raise(Errc::future_delta, "step " + std::to_string(step) + " skips ahead of " +
                                      std::to_string(s.next_step));

    uint64_t touched = 0;
    s.active ^= 1;
    ++s.epoch;

    // Bring the new shadow (previous active) up to date with this step's
    // edits. Reference deltas settle once over the whole journal: an add that
    // a later repoint undoes must never resurrect a block released earlier in
    // the step.
    std::map<BlockId, int> delta;
    for (const EditOp &op : s.journal)
        apply_edit(s, s.active ^ 1, op, touched, &delta);
    s.journal.clear();
    settle_delta(s, delta);

    // Blocks whose last reference dropped this step go back to the free lists
    // now, so other sessions see them from the next step.
    for (BlockId b : s.pending_free) {
        std::lock_guard lk(arena_mu_);
        BlockMeta &m = blocks_[b];
        assert(m.refcount == 1);
        m.refcount = 0;
        --live_pages_;
        release_to_free_list(b);
        ++touched;
    }
    s.pending_free.clear();

    uint64_t now_mapped = s.buf[s.active].mapped_tokens;
    {
        std::lock_guard lk(arena_mu_);
        active_tokens_ += now_mapped - s.committed_tokens;
    }
    s.committed_tokens = now_mapped;

    s.next_step = step + 1;
    s.last_commit_touched = touched;
    {
        std::lock_guard lk(counters_mu_);
        ++counters_.commits;
        counters_.commit_entries_touched += touched;
    }
    return s.epoch;
}

uint64_t Pager::apply_frame(const FrameDelta &delta) {
    {
        const Session &s = session_ref(delta.session);
        std::shared_lock lk(s.mu);
        if (delta.step < s.next_step)
            return s.epoch; // already applied: retry is a no-op
        if (delta.step > s.next_step)
            raise(Errc::future_delta, "frame " + std::to_string(delta.step) + " skips ahead");
    }
    for (const auto &a : delta.aliases)
        alias(delta.session, a.src, a.prefix_tokens);
    for (uint64_t n : delta.reserves)
        reserve(delta.session, n);
    if (!delta.trims.empty())
        trim(delta.session, delta.trims);
    if (delta.trim_eos)
        trim_eos(delta.session);
    return frame_commit(delta.session, delta.step);
}

ViewDescriptor Pager::active_view(SessionId session) const {
    const Session &s = session_ref(session);
    std::shared_lock lk(s.mu);
    const ViewBuffer &vb = s.buf[s.active];
    ViewDescriptor d;
    d.session = s.id;
    d.epoch = s.epoch;
    d.live_tokens = vb.mapped_tokens;
    d.extent = vb.extent;
    d.eos = vb.eos;
    d.entries.reserve(vb.entries.size());
    for (const auto &[beg, e] : vb.entries)
        d.entries.push_back(e);
    return d;
}

bool Pager::session_eos(SessionId session) const {
    const Session &s = session_ref(session);
    std::shared_lock lk(s.mu);
    return s.buf[s.active].eos;
}

uint64_t Pager::session_cursor(SessionId session) const {
    const Session &s = session_ref(session);
    std::shared_lock lk(s.mu);
    return s.cursor;
}

Step Pager::next_step(SessionId session) const {
    const Session &s = session_ref(session);
    std::shared_lock lk(s.mu);
    return s.next_step;
}

uint64_t Pager::touched_in_last_commit(SessionId session) const {
    const Session &s = session_ref(session);
    std::shared_lock lk(s.mu);
    return s.last_commit_touched;
}

// ---------------------------------------------------------------------------
// Introspection
// ---------------------------------------------------------------------------

ArenaStats Pager::stats() const {
    std::lock_guard lk(arena_mu_);
    ArenaStats st;
    st.free_pages = free_pages_;
    st.live_pages = live_pages_;
    st.shared_pages = shared_pages_;
    st.reserved_bytes = (cfg_.arena_pages - free_pages_) * cfg_.page_bytes;
    st.active_bytes = active_tokens_ * cfg_.token_bytes();
    return st;
}

WorkCounters Pager::counters() const {
    std::lock_guard lk(counters_mu_);
    return counters_;
}

void Pager::read_slots(BlockId block, uint32_t slot_begin, uint32_t slot_count,
                       std::byte *out) const {
    const uint64_t tb = cfg_.token_bytes();
    const std::byte *mem;
    {
        std::lock_guard lk(arena_mu_);
        mem = page_mem_[block].get();
    }
    if (!mem) {
        std::memset(out, 0, slot_count * tb);
        return;
    }
    std::memcpy(out, mem + static_cast<uint64_t>(slot_begin) * tb, slot_count * tb);
}

std::vector<std::pair<BlockId, uint32_t>> Pager::free_runs() const {
    std::lock_guard lk(arena_mu_);
    std::vector<std::pair<BlockId, uint32_t>> runs;
    uint32_t n = cfg_.arena_pages;
    for (uint32_t b = 0; b < n;) {
        if (blocks_[b].free_listed) {
            uint32_t e = b;
            while (e < n && blocks_[e].free_listed)
                ++e;
            runs.emplace_back(b, e - b);
            b = e;
        } else {
            ++b;
        }
    }
    return runs;
}

uint32_t Pager::block_refcount(BlockId block) const {
    std::lock_guard lk(arena_mu_);
    return blocks_[block].refcount;
}

} // namespace kvrail
