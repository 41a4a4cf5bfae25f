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

#include "kvrail/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <deque>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace kvrail {

using ordered_json = nlohmann::ordered_json;

namespace {

uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

constexpr uint64_t kSummaryBase = 1ull << 40;

} // namespace

void ScenarioConfig::validate() const {
    pager.validate();
    placement.validate();
    transport.validate();
    far_view.validate();
    cost.validate();
    if (workload.has_value() == trace_path.has_value())
        raise(Errc::bad_config, "exactly one of workload spec or trace path must be set");
    if (steps == 0)
        raise(Errc::bad_config, "steps must be positive");
    if (span_blocks == 0 || staged_refresh_period == 0 || demand_refresh_period == 0)
        raise(Errc::bad_config, "transport shaping parameters must be positive");
    if (far_view.enabled) {
        if (!pager_enabled)
            raise(Errc::bad_config, "far view requires the pager");
        if (pager.elem_bytes != 4)
            raise(Errc::bad_config, "far view requires float32 KV elements");
        if (far_view.chunk_tokens % pager.tokens_per_page() != 0)
            raise(Errc::bad_config, "chunk_tokens must be a multiple of tokens_per_page");
    }
    if (shared_prefix_tokens % pager.tokens_per_page() != 0)
        raise(Errc::bad_config, "shared_prefix_tokens must be block aligned");
    if (eos_burst_fraction < 0.0 || eos_burst_fraction > 1.0)
        raise(Errc::bad_config, "eos_burst_fraction must be in [0,1]");
}

std::vector<TraceEvent> resolve_events(const ScenarioConfig &cfg) {
    if (cfg.workload) {
        std::vector<TraceEvent> events = generate(*cfg.workload);
        WorkloadAudit audit = audit_workload(events, *cfg.workload);
        if (!audit.pass())
            raise(Errc::workload_audit_failed,
                  "generated workload missed its targets (p50/p90/p99 = " +
                      std::to_string(audit.p50) + "/" + std::to_string(audit.p90) + "/" +
                      std::to_string(audit.p99) +
                      ", top-decile share = " + std::to_string(audit.top_decile_share) + ")");
        return events;
    }
    std::vector<TraceEvent> events = load_trace(*cfg.trace_path);
    if (cfg.replay_window_seconds > 0.0)
        events = select_window(events, cfg.replay_window_seconds);
    if (!events.empty()) {
        uint64_t base = events.front().arrival_ms;
        for (TraceEvent &e : events)
            e.arrival_ms -= base;
    }
    return events;
}

// ---------------------------------------------------------------------------
// Simulation driver
// ---------------------------------------------------------------------------

namespace {

struct Sess {
    SessionId id = 0;
    uint32_t slot = 0;
    uint32_t prompt = 0;
    uint32_t target = 0;     // generated tokens to emit
    uint64_t written = 0;    // appended tokens, prompt included
    uint64_t reserved_end = 0;
    std::vector<BlockId> cur_span;
    uint64_t cur_span_begin = 0; // first token of cur_span
    std::vector<BlockId> next_span;
    uint64_t next_span_end = 0;
    bool eos = false;
    Step local_step = 0;

    // far-view state
    uint64_t summarized_until = 0;
    uint32_t summary_count = 0;
    uint32_t summary_capacity = 0;
    std::vector<BlockId> summary_blocks; // one per tokens_per_page summaries
    std::vector<double> chunk_scores;
    // (token_begin, block) of every block holding sequence tokens, in order.
    std::deque<std::pair<uint64_t, BlockId>> ledger;
};

class Driver {
public:
    Driver(const ScenarioConfig &cfg, const std::vector<TraceEvent> &events)
        : cfg_(cfg), events_(events), tpp_(cfg.pager.tokens_per_page()),
          engine_(cfg.cost, cfg.compiled_width()) {
        concurrency_ = cfg_.workload ? cfg_.workload->concurrency : 64;
        span_tokens_ = cfg_.span_blocks * tpp_;
        if (cfg_.pager_enabled)
            setup_paged();
        else
            setup_static();
        slots_.assign(concurrency_, -1);
        for (uint32_t i = 0; i < concurrency_; ++i)
            free_slots_.insert(i);
    }

    RunResult run() {
        RunResult result;
        result.config = cfg_;
        result.records.reserve(cfg_.steps);
        for (Step t = 0; t < cfg_.steps; ++t)
            result.records.push_back(step(t));
        if (pager_)
            result.pager_counters = pager_->counters();
        result.report = aggregate(result.records, cfg_.warmup_steps);
        result.report.label = cfg_.label;
        result.report.seed = cfg_.seed;
        result.report.workload_hash = stream_hash(events_);
        return result;
    }

private:
    const ScenarioConfig &cfg_;
    const std::vector<TraceEvent> &events_;
    uint32_t tpp_;
    SimEngine engine_;
    uint32_t concurrency_ = 64;
    uint32_t span_tokens_ = 0;

    std::unique_ptr<Pager> pager_;
    std::unique_ptr<UtilityTracker> tracker_;
    SessionId template_id_ = 0;
    std::vector<BlockId> template_blocks_;
    SessionId holder_id_ = 0x7fffffff;
    bool holder_active_ = false;
    SessionId next_id_ = 1;

    std::vector<Sess> live_;
    std::vector<int> slots_; // slot -> index into live_, -1 when empty
    std::set<uint32_t> free_slots_;
    size_t next_event_ = 0;
    bool admission_halted_ = false;
    uint64_t commits_before_ = 0;

    // Static baseline bookkeeping.
    uint32_t static_slot_blocks_ = 0;
    uint64_t static_arena_pages_ = 0;

    // Cold candidates: block -> (owning session, token range).
    struct ColdSource {
        SessionId sid;
        TokenRange range;
    };
    std::unordered_map<BlockId, ColdSource> cold_pool_;

    uint64_t payload_pattern(SessionId id, uint64_t token, uint64_t lane) const {
        return splitmix64(cfg_.seed ^ (static_cast<uint64_t>(id) << 32) ^ (token << 8) ^ lane);
    }

    void fill_token_payload(SessionId id, uint64_t token, std::byte *out) const {
        const uint64_t tb = cfg_.pager.token_bytes();
        if (cfg_.pager.elem_bytes == 4) {
            uint32_t lanes = static_cast<uint32_t>(tb / 4);
            float *f = reinterpret_cast<float *>(out);
            for (uint32_t l = 0; l < lanes; ++l) {
                uint64_t h = payload_pattern(id, token, l);
                f[l] = static_cast<float>(static_cast<int64_t>(h % 2001) - 1000) / 1000.0f;
            }
        } else {
            for (uint64_t i = 0; i < tb; ++i)
                out[i] = static_cast<std::byte>(payload_pattern(id, token, i) & 0xff);
        }
    }

    uint32_t arena_pages() const {
        if (cfg_.arena_pages_override)
            return *cfg_.arena_pages_override;
        uint64_t per_sess_tokens;
        if (cfg_.far_view.enabled)
            per_sess_tokens = cfg_.far_view.near_window + 2ull * cfg_.far_view.chunk_tokens +
                              cfg_.far_view.cap;
        else
            per_sess_tokens = 384 + 1024; // mixed-length steady state plus tail slack
        uint64_t per_sess_blocks = (per_sess_tokens + tpp_ - 1) / tpp_ + 2ull * cfg_.span_blocks;
        uint64_t avail = concurrency_ * per_sess_blocks + cfg_.arena_headroom_pages;
        double frac = regime_free_fraction(cfg_.regime);
        return static_cast<uint32_t>(std::ceil(static_cast<double>(avail) / frac));
    }

    void setup_paged() {
        PagerConfig pc = cfg_.pager;
        pc.arena_pages = arena_pages();
        pager_ = std::make_unique<Pager>(pc);
        tracker_ = std::make_unique<UtilityTracker>(cfg_.placement.alpha);

        // Pre-populate the fragmentation regime: a holder session occupies the
        // regime's blocks for the whole run.
        std::vector<uint32_t> occupied =
            fragmentation_preset(cfg_.regime, pc.arena_pages, cfg_.seed);
        if (!occupied.empty()) {
            SessionId holder = holder_id_;
            holder_active_ = true;
            pager_->create_session(holder);
            pager_->reserve(holder, static_cast<uint64_t>(pc.arena_pages) * tpp_);
            std::vector<TokenRange> frees;
            // Free the complement of `occupied`: block b holds tokens
            // [b*tpp, (b+1)*tpp) of the holder's view.
            std::vector<bool> keep(pc.arena_pages, false);
            for (uint32_t b : occupied)
                keep[b] = true;
            for (uint32_t b = 0; b < pc.arena_pages; ++b) {
                if (keep[b])
                    continue;
                if (!frees.empty() && frees.back().end == static_cast<uint64_t>(b) * tpp_)
                    frees.back().end += tpp_;
                else
                    frees.push_back({static_cast<uint64_t>(b) * tpp_,
                                     static_cast<uint64_t>(b + 1) * tpp_});
            }
            pager_->trim(holder, frees);
            pager_->frame_commit(holder, 0);
        }

        // Shared-prefix template.
        template_id_ = 0;
        pager_->create_session(template_id_);
        auto blocks = pager_->reserve(template_id_, cfg_.shared_prefix_tokens);
        for (const auto &b : blocks)
            template_blocks_.push_back(b.block);
        std::vector<std::byte> buf(cfg_.pager.token_bytes());
        for (uint64_t tok = 0; tok < cfg_.shared_prefix_tokens; ++tok) {
            fill_token_payload(template_id_, tok, buf.data());
            pager_->write_tokens(template_id_, {tok, tok + 1}, buf);
        }
        pager_->frame_commit(template_id_, 0);
        commits_before_ = pager_->counters().commits;
    }

    void setup_static() {
        static_slot_blocks_ = (cfg_.static_slot_tokens + tpp_ - 1) / tpp_;
        static_arena_pages_ = static_cast<uint64_t>(concurrency_) * static_slot_blocks_;
    }

    // ---- admission ----

    bool admit_one(const TraceEvent &e, Step t) {
        if (free_slots_.empty())
            return false;
        uint32_t slot = *free_slots_.begin();
        Sess s;
        s.id = next_id_++;
        s.slot = slot;
        s.prompt = e.prompt_tokens;
        s.target = e.generate_tokens;
        if (!cfg_.pager_enabled) {
            uint32_t cap = static_slot_blocks_ * tpp_;
            if (s.prompt >= cap)
                s.prompt = cap - 1;
            if (s.prompt + s.target > cap)
                s.target = cap - s.prompt;
            s.written = s.prompt;
            s.reserved_end = cap;
        } else {
            pager_->create_session(s.id);
            uint64_t rng = splitmix64(cfg_.seed ^ (0xabcdull << 32) ^ s.id);
            bool share = (rng % 1000) < static_cast<uint64_t>(cfg_.share_probability * 1000) &&
                         s.prompt > cfg_.shared_prefix_tokens;
            uint64_t start = 0;
            if (share) {
                pager_->alias(s.id, template_id_, cfg_.shared_prefix_tokens);
                start = cfg_.shared_prefix_tokens;
                for (size_t i = 0; i < template_blocks_.size(); ++i)
                    s.ledger.emplace_back(static_cast<uint64_t>(i) * tpp_, template_blocks_[i]);
            }
            // Reserve the prompt plus the first decode span, rounded to spans.
            uint64_t need = s.prompt + 1 - start;
            uint64_t rounded = (need + span_tokens_ - 1) / span_tokens_ * span_tokens_;
            std::vector<ReservedBlock> rb;
            try {
                rb = pager_->reserve(s.id, rounded);
            } catch (const Error &err) {
                if (err.code() == Errc::out_of_pages) {
                    // Reject the admission: free anything the alias mapped and
                    // retry the event on a later step.
                    pager_->trim_eos(s.id);
                    pager_->frame_commit(s.id, 0);
                    return false;
                }
                throw;
            }
            uint64_t pos = start;
            for (const auto &b : rb) {
                s.ledger.emplace_back(pos, b.block);
                pos += b.token_capacity;
            }
            s.reserved_end = start + rounded;
            // The newest span_blocks blocks form the current span.
            size_t nspan = std::min<size_t>(cfg_.span_blocks, rb.size());
            for (size_t i = rb.size() - nspan; i < rb.size(); ++i)
                s.cur_span.push_back(rb[i].block);
            s.cur_span_begin = s.reserved_end - nspan * tpp_;
            // Prompt payload.
            std::vector<std::byte> buf(cfg_.pager.token_bytes());
            for (uint64_t tok = start; tok < s.prompt; ++tok) {
                fill_token_payload(s.id, tok, buf.data());
                pager_->write_tokens(s.id, {tok, tok + 1}, buf);
            }
            s.written = s.prompt;
        }
        (void)t;
        slots_[slot] = static_cast<int>(live_.size());
        free_slots_.erase(free_slots_.begin());
        live_.push_back(std::move(s));
        return true;
    }

    void admissions(Step t) {
        if (admission_halted_)
            return;
        double now_ms = static_cast<double>(t + 1) * cfg_.step_ms;
        while (next_event_ < events_.size() && live_.size() < concurrency_ &&
               static_cast<double>(events_[next_event_].arrival_ms) <= now_ms) {
            if (!admit_one(events_[next_event_], t))
                break;
            ++next_event_;
        }
    }

    // ---- span management ----

    void reserve_next_span(Sess &s) {
        auto rb = pager_->reserve(s.id, span_tokens_);
        s.next_span.clear();
        uint64_t pos = s.reserved_end;
        for (const auto &b : rb) {
            s.next_span.push_back(b.block);
            s.ledger.emplace_back(pos, b.block);
            pos += b.token_capacity;
        }
        s.next_span_end = s.reserved_end + span_tokens_;
    }

    void promote_span(Sess &s) {
        s.cur_span = s.next_span;
        s.cur_span_begin = s.reserved_end;
        s.next_span.clear();
        s.reserved_end = s.next_span_end;
    }

    // ---- far view ----

    void advance_summaries(Sess &s, Step t, std::vector<StageNeed> &far_needs) {
        const FarViewConfig &fv = cfg_.far_view;
        if (!fv.enabled)
            return;
        if (s.local_step == 0)
            return; // prompt not committed yet; summaries catch up next step
        uint64_t near_begin = s.written > fv.near_window ? s.written - fv.near_window : 0;
        while (near_begin >= s.summarized_until + fv.chunk_tokens) {
            uint64_t begin = s.summarized_until;
            uint64_t end = begin + fv.chunk_tokens;
            // Chunk score from the member blocks' utility.
            double score = 0.0;
            ViewDescriptor view = pager_->active_view(s.id);
            const uint32_t lanes = static_cast<uint32_t>(cfg_.pager.token_bytes() / 4);
            std::vector<float> chunk(static_cast<size_t>(fv.chunk_tokens) * lanes);
            for (uint64_t tok = begin; tok < end; ++tok) {
                const ViewEntry *e = view.find(tok);
                if (!e)
                    raise(Errc::unmapped_range, "chunk source token unmapped");
                pager_->read_slots(e->block,
                                   e->slot_begin + static_cast<uint32_t>(tok - e->tokens.begin), 1,
                                   reinterpret_cast<std::byte *>(chunk.data() +
                                                                 (tok - begin) * lanes));
                score += tracker_->score(e->block, t);
            }
            std::vector<float> summary = summarize_chunk(chunk, lanes, fv.chunk_tokens);
            s.chunk_scores.push_back(score);

            // One reservation per summary batch; slots pack tokens_per_page
            // summaries into each block.
            if (s.summary_count == s.summary_capacity) {
                auto rb = pager_->reserve_range(s.id,
                                                {kSummaryBase + s.summary_capacity,
                                                 kSummaryBase + s.summary_capacity + tpp_});
                s.summary_capacity += tpp_;
                for (const auto &b : rb)
                    s.summary_blocks.push_back(b.block);
            }
            uint64_t slot_tok = kSummaryBase + s.summary_count;
            pager_->write_tokens(s.id, {slot_tok, slot_tok + 1},
                                 std::as_bytes(std::span<const float>(summary)));

            StageNeed need;
            need.session = s.id;
            need.kind = TrainKind::far_view;
            need.spans.push_back({s.summary_blocks[s.summary_count / tpp_],
                                  s.summary_count % tpp_, 1});
            far_needs.push_back(std::move(need));

            ++s.summary_count;
            s.summarized_until = end;

            // Source blocks fully behind the summarized boundary become cold.
            while (!s.ledger.empty()) {
                auto [tok0, blk] = s.ledger.front();
                if (tok0 + tpp_ > s.summarized_until)
                    break;
                cold_pool_[blk] = ColdSource{s.id, {tok0, tok0 + tpp_}};
                s.ledger.pop_front();
            }
        }
    }

    // ---- one step ----

    StepRecord step(Step t) {
        // Shift: retire sessions that reached EOS last step.
        for (size_t i = 0; i < live_.size();) {
            if (live_[i].eos) {
                SessionId dead = live_[i].id;
                for (auto it = cold_pool_.begin(); it != cold_pool_.end();) {
                    if (it->second.sid == dead)
                        it = cold_pool_.erase(it);
                    else
                        ++it;
                }
                free_slots_.insert(live_[i].slot);
                slots_[live_[i].slot] = -1;
                if (i + 1 != live_.size()) {
                    live_[i] = std::move(live_.back());
                    slots_[live_[i].slot] = static_cast<int>(i);
                }
                live_.pop_back();
            } else {
                ++i;
            }
        }
        // The pre-population holder shapes where warmup-era allocations land;
        // it retires when the measured window starts and the fragmentation it
        // seeded persists through the scattered live sessions.
        if (holder_active_ && t == cfg_.warmup_steps) {
            pager_->trim_eos(holder_id_);
            pager_->frame_commit(holder_id_, 1);
            commits_before_ = pager_->counters().commits;
            holder_active_ = false;
        }
        if (cfg_.eos_burst_step > 0 && t == cfg_.eos_burst_step) {
            uint64_t to_retire =
                static_cast<uint64_t>(std::llround(live_.size() * cfg_.eos_burst_fraction));
            for (size_t i = 0; i < live_.size() && to_retire > 0; i += 2, --to_retire)
                live_[i].target = static_cast<uint32_t>(live_[i].written - live_[i].prompt) + 1;
            admission_halted_ = true;
        }
        admissions(t);

        std::vector<StageNeed> far_needs;
        std::vector<std::pair<BlockId, double>> observations;
        uint64_t emitted = 0;

        // Process sessions in slot order for determinism.
        std::vector<size_t> order;
        order.reserve(live_.size());
        for (uint32_t slot = 0; slot < concurrency_; ++slot)
            if (slots_[slot] >= 0)
                order.push_back(static_cast<size_t>(slots_[slot]));

        for (size_t idx : order) {
            Sess &s = live_[idx];
            if (cfg_.pager_enabled) {
                while (s.written == s.reserved_end) {
                    if (!s.next_span.empty())
                        promote_span(s);
                    else {
                        auto rb = pager_->reserve(s.id, span_tokens_);
                        s.cur_span.clear();
                        s.cur_span_begin = s.reserved_end;
                        uint64_t pos = s.reserved_end;
                        for (const auto &b : rb) {
                            s.cur_span.push_back(b.block);
                            s.ledger.emplace_back(pos, b.block);
                            pos += b.token_capacity;
                        }
                        s.reserved_end += span_tokens_;
                    }
                }
                std::vector<std::byte> buf(cfg_.pager.token_bytes());
                fill_token_payload(s.id, s.written, buf.data());
                pager_->write_tokens(s.id, {s.written, s.written + 1}, buf);
            }
            s.written += 1;
            emitted += 1;
            if (!s.cur_span.empty())
                observations.emplace_back(
                    s.cur_span.back(),
                    1.0 + static_cast<double>(payload_pattern(s.id, s.written, 7) % 997) / 4000.0);

            if (s.written - s.prompt >= s.target) {
                if (cfg_.pager_enabled)
                    pager_->trim_eos(s.id);
                s.eos = true;
            } else if (cfg_.pager_enabled) {
                advance_summaries(s, t, far_needs);
                // Prefetch the next span one step before it is needed.
                if (s.reserved_end - s.written <= 1 && s.next_span.empty())
                    reserve_next_span(s);
            }
        }

        // Placement plan: rank this step's staging candidates and pick the
        // cold set; trims ride the same frames.
        std::vector<size_t> refresh;
        uint32_t period =
            cfg_.pager_enabled ? cfg_.staged_refresh_period : cfg_.demand_refresh_period;
        for (uint32_t slot = 0; slot < concurrency_; ++slot) {
            if (slots_[slot] < 0)
                continue;
            if ((slot + t) % period == 0 && !live_[slots_[slot]].eos)
                refresh.push_back(static_cast<size_t>(slots_[slot]));
        }

        if (cfg_.pager_enabled) {
            std::vector<BlockId> candidates;
            for (size_t idx : refresh)
                for (BlockId b : live_[idx].cur_span)
                    candidates.push_back(b);
            std::vector<SessionBlockState> states;
            if (cfg_.far_view.enabled && !cold_pool_.empty()) {
                SessionBlockState st;
                for (const auto &[b, src] : cold_pool_)
                    st.live_blocks.push_back(b);
                std::sort(st.live_blocks.begin(), st.live_blocks.end());
                states.push_back(std::move(st));
            }
            PlacementPlan plan = plan_step(*tracker_, cfg_.placement, candidates, observations,
                                           states, t);
            // Execute cold trims per owning session.
            std::unordered_map<SessionId, bool> alive;
            for (const Sess &s : live_)
                alive[s.id] = !s.eos;
            std::unordered_map<SessionId, std::vector<TokenRange>> trims;
            for (BlockId b : plan.cold) {
                auto it = cold_pool_.find(b);
                if (it == cold_pool_.end())
                    continue;
                auto la = alive.find(it->second.sid);
                if (la != alive.end() && la->second)
                    trims[it->second.sid].push_back(it->second.range);
                cold_pool_.erase(it);
            }
            for (auto &[sid, ranges] : trims)
                pager_->trim(sid, ranges);
        }

        // Single frame commit per live session.
        uint64_t commits_delta = 0;
        if (cfg_.pager_enabled) {
            for (size_t idx : order) {
                Sess &s = live_[idx];
                pager_->frame_commit(s.id, s.local_step);
                ++s.local_step;
            }
            uint64_t now_commits = pager_->counters().commits;
            commits_delta = now_commits - commits_before_;
            commits_before_ = now_commits;
        } else {
            commits_delta = order.size();
        }

        // Stage + reduce + issue.
        std::vector<StageNeed> needs;
        for (size_t idx : refresh) {
            Sess &s = live_[idx];
            if (s.eos)
                continue;
            StageNeed need;
            need.session = s.id;
            need.kind = TrainKind::near_window;
            if (cfg_.pager_enabled) {
                // Staged path: the session's current span, block aligned, as
                // its three logical pieces (window re-pack head, the blocks
                // written since the last refresh, the reserve-ahead tail).
                // They are usually physically adjacent; coalescing them back
                // into one train is the reduce stage's job.
                size_t nspan = s.cur_span.size();
                size_t frontier = 0;
                if (s.written > s.cur_span_begin)
                    frontier = std::min(
                        nspan - 1,
                        static_cast<size_t>((s.written - 1 - s.cur_span_begin) / tpp_));
                size_t delta_lo = frontier >= 1 ? frontier - 1 : 0;
                StageNeed delta = need, tail = need;
                for (size_t i = 0; i < nspan; ++i) {
                    // Shift already retired content behind the summarized
                    // boundary; it never reaches staging.
                    uint64_t block_end = s.cur_span_begin + (i + 1) * tpp_;
                    if (cfg_.far_view.enabled && block_end <= s.summarized_until)
                        continue;
                    BlockId b = s.cur_span[i];
                    if (cold_pool_.count(b))
                        raise(Errc::unmapped_block, "staged block was trimmed in this frame");
                    StageNeed &piece = i < delta_lo ? need : (i <= frontier ? delta : tail);
                    piece.spans.push_back({b, 0, tpp_});
                }
                if (!delta.spans.empty())
                    needs.push_back(std::move(delta));
                if (!tail.spans.empty())
                    needs.push_back(std::move(tail));
            } else {
                // Static slots: the trailing segment is contiguous by layout.
                uint64_t gt = std::min<uint64_t>(cfg_.demand_gather_tokens, s.written);
                uint64_t slot_base = static_cast<uint64_t>(s.slot) * static_slot_blocks_;
                uint64_t from = s.written - gt;
                while (from < s.written) {
                    BlockId b = static_cast<BlockId>(slot_base + from / tpp_);
                    uint32_t sb = static_cast<uint32_t>(from % tpp_);
                    uint32_t n = static_cast<uint32_t>(
                        std::min<uint64_t>(s.written - from, tpp_ - sb));
                    need.spans.push_back({b, sb, n});
                    from += n;
                }
            }
            needs.push_back(std::move(need));
        }
        for (StageNeed &fn : far_needs)
            needs.push_back(std::move(fn));

        double now = engine_.clock();
        std::vector<Descriptor> descs =
            stage(needs, cfg_.pager.page_bytes, cfg_.pager.token_bytes(), now);
        std::vector<DmaTrain> trains = reduce(std::move(descs), cfg_.transport, now);

        ArenaStats arena;
        if (cfg_.pager_enabled) {
            arena = pager_->stats();
        } else {
            arena.reserved_bytes = static_arena_pages_ * cfg_.pager.page_bytes;
            uint64_t mapped = 0;
            for (const Sess &s : live_)
                mapped += s.eos ? 0 : s.written;
            arena.active_bytes = mapped * cfg_.pager.token_bytes();
            arena.free_pages = 0;
            arena.live_pages = static_arena_pages_;
        }

        return engine_.execute_step(t, trains, cfg_.compiled_width(),
                                    static_cast<uint32_t>(order.size()), commits_delta, emitted,
                                    arena);
    }
};

} // namespace

RunResult run_scenario_on(const ScenarioConfig &cfg, const std::vector<TraceEvent> &events) {
    cfg.validate();
    Driver driver(cfg, events);
    RunResult result = driver.run();
    if (cfg.workload)
        result.workload_audit = audit_workload(events, *cfg.workload);
    return result;
}

RunResult run_scenario(const ScenarioConfig &cfg) {
    cfg.validate();
    std::vector<TraceEvent> events = resolve_events(cfg);
    return run_scenario_on(cfg, events);
}

// ---------------------------------------------------------------------------
// Report and config I/O
// ---------------------------------------------------------------------------

std::string steps_to_csv(const std::vector<StepRecord> &records) {
    std::ostringstream out;
    out << "step,live_sessions,trains,near_trains,far_trains,dma_bytes,mean_train_bytes,"
           "max_hold,submit_time,commit_time,step_latency,reserved_bytes,active_bytes,"
           "commits,emitted_tokens\n";
    char buf[512];
    for (const StepRecord &r : records) {
        std::snprintf(buf, sizeof(buf),
                      "%llu,%u,%u,%u,%u,%llu,%.3f,%.6f,%.6f,%.6f,%.6f,%llu,%llu,%u,%llu\n",
                      static_cast<unsigned long long>(r.step), r.live_sessions, r.trains,
                      r.near_trains, r.far_trains,
                      static_cast<unsigned long long>(r.dma_bytes), r.mean_train_bytes,
                      r.max_hold, r.submit_time, r.commit_time, r.step_latency,
                      static_cast<unsigned long long>(r.reserved_bytes),
                      static_cast<unsigned long long>(r.active_bytes), r.commits,
                      static_cast<unsigned long long>(r.emitted_tokens));
        out << buf;
    }
    return out.str();
}

static ordered_json report_json(const RunResult &result) {
    const RunReport &r = result.report;
    ordered_json j;
    j["label"] = r.label;
    j["seed"] = r.seed;
    j["workload_hash"] = r.workload_hash;
    j["post_warmup_steps"] = r.steps;
    j["throughput_tokens_per_unit"] = r.throughput;
    j["latency"] = {{"p50", r.latency_p50}, {"p99", r.latency_p99}, {"p999", r.latency_p999}};
    j["submit_share"] = r.submit_share;
    j["transport"] = {{"trains_per_step", r.trains_per_step},
                      {"mean_train_bytes", r.mean_train_bytes},
                      {"max_hold_observed", r.max_hold_observed}};
    j["memory"] = {{"mean_reserved_bytes", r.mean_reserved_bytes},
                   {"mean_active_bytes", r.mean_active_bytes},
                   {"final_reserved_bytes", r.final_reserved_bytes},
                   {"final_active_bytes", r.final_active_bytes},
                   {"reserved_to_active", r.reserved_to_active}};
    j["live_width"] = {{"mean", r.live_width_mean},
                       {"cv", r.live_width_cv},
                       {"max_to_mean", r.live_width_max_to_mean}};
    j["invariant_audit"] = {{"commit_steps", r.total_commit_steps},
                            {"multi_commit_steps", r.multi_commit_steps},
                            {"shape_violations", r.shape_violations},
                            {"recompiles", r.recompiles}};
    if (result.config.workload) {
        const WorkloadAudit &a = result.workload_audit;
        j["workload_audit"] = {{"p50", a.p50},
                               {"p90", a.p90},
                               {"p99", a.p99},
                               {"top_decile_share", a.top_decile_share},
                               {"eos_window_p50", a.eos_window_p50},
                               {"eos_window_p90", a.eos_window_p90},
                               {"eos_window_p99", a.eos_window_p99},
                               {"pass", a.pass()}};
    }
    return j;
}

std::string report_to_json(const RunResult &result) { return report_json(result).dump(2) + "\n"; }

std::string report_to_text(const RunResult &result) {
    const RunReport &r = result.report;
    char buf[256];
    std::ostringstream out;
    out << "run " << r.label << " (seed " << r.seed << ", " << r.steps << " steady steps)\n";
    auto row = [&](const char *name, double v, const char *unit) {
        std::snprintf(buf, sizeof(buf), "  %-24s %14.4f %s\n", name, v, unit);
        out << buf;
    };
    row("throughput", r.throughput, "tok/unit");
    row("latency p50", r.latency_p50, "units");
    row("latency p99", r.latency_p99, "units");
    row("latency p99.9", r.latency_p999, "units");
    row("submit share", r.submit_share * 100.0, "%");
    row("trains per step", r.trains_per_step, "");
    row("mean train size", r.mean_train_bytes / 1024.0, "KiB");
    row("reserved (mean)", r.mean_reserved_bytes / (1024.0 * 1024.0), "MiB");
    row("active (mean)", r.mean_active_bytes / (1024.0 * 1024.0), "MiB");
    row("reserved/active", r.reserved_to_active, "");
    row("live width mean", r.live_width_mean, "");
    row("live width cv", r.live_width_cv, "");
    std::snprintf(buf, sizeof(buf),
                  "  audit: %llu commit steps, %llu multi-commit, %llu shape violations, "
                  "%llu recompiles\n",
                  static_cast<unsigned long long>(r.total_commit_steps),
                  static_cast<unsigned long long>(r.multi_commit_steps),
                  static_cast<unsigned long long>(r.shape_violations),
                  static_cast<unsigned long long>(r.recompiles));
    out << buf;
    return out.str();
}

std::string delta_to_text(const DeltaReport &d) {
    std::ostringstream out;
    out << "compare " << d.label_a << " -> " << d.label_b << "\n";
    char buf[256];
    for (const MetricDelta &m : d.deltas) {
        std::snprintf(buf, sizeof(buf), "  %-24s %14.4f -> %14.4f   (x%.4f)\n", m.name.c_str(),
                      m.a, m.b, m.ratio);
        out << buf;
    }
    return out.str();
}

void write_file(const std::string &path, const std::string &content) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        raise(Errc::io_error, "cannot write " + path);
    out << content;
}

// ---- config JSON ----

static void pager_from_json(const ordered_json &j, PagerConfig &c) {
    c.page_bytes = j.value("page_bytes", c.page_bytes);
    c.arena_pages = j.value("arena_pages", c.arena_pages);
    c.layers = j.value("layers", c.layers);
    c.kv_head_dim = j.value("kv_head_dim", c.kv_head_dim);
    c.elem_bytes = j.value("elem_bytes", c.elem_bytes);
}

ScenarioConfig config_from_json_file(const std::string &path) {
    std::ifstream in(path);
    if (!in)
        raise(Errc::io_error, "cannot open config " + path);
    ordered_json j;
    try {
        in >> j;
    } catch (const std::exception &e) {
        raise(Errc::parse_error, path + ": " + e.what());
    }
    ScenarioConfig c = default_audit_config();
    c.label = j.value("label", c.label);
    c.seed = j.value("seed", c.seed);
    c.steps = j.value("steps", c.steps);
    c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
    c.step_ms = j.value("step_ms", c.step_ms);
    if (j.contains("pager"))
        pager_from_json(j["pager"], c.pager);
    if (j.contains("placement")) {
        const auto &p = j["placement"];
        c.placement.alpha = p.value("alpha", c.placement.alpha);
        c.placement.lookahead_budget = p.value("lookahead_budget", c.placement.lookahead_budget);
        c.placement.cold_budget = p.value("cold_budget", c.placement.cold_budget);
    }
    if (j.contains("transport")) {
        const auto &tj = j["transport"];
        c.transport.merge_threshold = tj.value("tau_bytes", c.transport.merge_threshold);
        c.transport.max_hold = tj.value("delta_hold", c.transport.max_hold);
        c.transport.max_trains_per_step =
            tj.value("max_trains_per_step", c.transport.max_trains_per_step);
        c.transport.merge = tj.value("merge", c.transport.merge);
    }
    if (j.contains("far_view")) {
        const auto &f = j["far_view"];
        c.far_view.enabled = f.value("enabled", c.far_view.enabled);
        c.far_view.near_window = f.value("w_star", c.far_view.near_window);
        c.far_view.cap = f.value("cap", c.far_view.cap);
        c.far_view.chunk_tokens = f.value("sv_chunk", c.far_view.chunk_tokens);
    }
    if (j.contains("cost_model")) {
        const auto &m = j["cost_model"];
        c.cost.dma_fixed_overhead = m.value("dma_fixed_overhead", c.cost.dma_fixed_overhead);
        c.cost.dma_bandwidth = m.value("dma_bandwidth", c.cost.dma_bandwidth);
        c.cost.kernel_base = m.value("kernel_base", c.cost.kernel_base);
        c.cost.kernel_per_slot = m.value("kernel_per_slot", c.cost.kernel_per_slot);
        c.cost.submit_cost = m.value("submit_cost", c.cost.submit_cost);
        c.cost.commit_cost = m.value("commit_cost", c.cost.commit_cost);
        c.cost.overlap = m.value("overlap", c.cost.overlap);
    }
    if (j.contains("trace_path")) {
        c.workload.reset();
        c.trace_path = j["trace_path"].get<std::string>();
        c.replay_window_seconds = j.value("replay_window_seconds", c.replay_window_seconds);
    } else if (j.contains("workload")) {
        const auto &w = j["workload"];
        WorkloadSpec spec = c.workload.value_or(WorkloadSpec{});
        spec.requests = w.value("requests", spec.requests);
        spec.concurrency = w.value("concurrency", spec.concurrency);
        spec.p50 = w.value("p50", spec.p50);
        spec.p90 = w.value("p90", spec.p90);
        spec.p99 = w.value("p99", spec.p99);
        spec.top_decile_share = w.value("top_decile_share", spec.top_decile_share);
        spec.arrivals_per_window = w.value("arrivals_per_window", spec.arrivals_per_window);
        spec.cluster_correlation = w.value("cluster_correlation", spec.cluster_correlation);
        spec.prompt_min = w.value("prompt_min", spec.prompt_min);
        spec.prompt_max = w.value("prompt_max", spec.prompt_max);
        spec.seed = w.value("seed", spec.seed);
        c.workload = spec;
        c.trace_path.reset();
    }
    if (j.contains("mode")) {
        const auto &m = j["mode"];
        c.pager_enabled = m.value("pager_enabled", c.pager_enabled);
        if (m.contains("regime"))
            c.regime = parse_regime(m["regime"].get<std::string>());
    }
    if (j.contains("shaping")) {
        const auto &s = j["shaping"];
        c.span_blocks = s.value("span_blocks", c.span_blocks);
        c.staged_refresh_period = s.value("staged_refresh_period", c.staged_refresh_period);
        c.demand_refresh_period = s.value("demand_refresh_period", c.demand_refresh_period);
        c.demand_gather_tokens = s.value("demand_gather_tokens", c.demand_gather_tokens);
        c.share_probability = s.value("share_probability", c.share_probability);
        c.shared_prefix_tokens = s.value("shared_prefix_tokens", c.shared_prefix_tokens);
        c.static_slot_tokens = s.value("static_slot_tokens", c.static_slot_tokens);
        c.arena_headroom_pages = s.value("arena_headroom_pages", c.arena_headroom_pages);
        if (s.contains("arena_pages"))
            c.arena_pages_override = s["arena_pages"].get<uint32_t>();
    }
    if (j.contains("eos_burst")) {
        const auto &e = j["eos_burst"];
        c.eos_burst_step = e.value("step", c.eos_burst_step);
        c.eos_burst_fraction = e.value("fraction", c.eos_burst_fraction);
    }
    return c;
}

std::string config_to_json(const ScenarioConfig &c) {
    ordered_json j;
    j["label"] = c.label;
    j["seed"] = c.seed;
    j["steps"] = c.steps;
    j["warmup_steps"] = c.warmup_steps;
    j["step_ms"] = c.step_ms;
    j["pager"] = {{"page_bytes", c.pager.page_bytes},
                  {"arena_pages", c.pager.arena_pages},
                  {"layers", c.pager.layers},
                  {"kv_head_dim", c.pager.kv_head_dim},
                  {"elem_bytes", c.pager.elem_bytes}};
    j["placement"] = {{"alpha", c.placement.alpha},
                      {"lookahead_budget", c.placement.lookahead_budget},
                      {"cold_budget", c.placement.cold_budget}};
    j["transport"] = {{"tau_bytes", c.transport.merge_threshold},
                      {"delta_hold", c.transport.max_hold},
                      {"max_trains_per_step", c.transport.max_trains_per_step},
                      {"merge", c.transport.merge}};
    j["far_view"] = {{"enabled", c.far_view.enabled},
                     {"w_star", c.far_view.near_window},
                     {"cap", c.far_view.cap},
                     {"sv_chunk", c.far_view.chunk_tokens}};
    j["cost_model"] = {{"dma_fixed_overhead", c.cost.dma_fixed_overhead},
                       {"dma_bandwidth", c.cost.dma_bandwidth},
                       {"kernel_base", c.cost.kernel_base},
                       {"kernel_per_slot", c.cost.kernel_per_slot},
                       {"submit_cost", c.cost.submit_cost},
                       {"commit_cost", c.cost.commit_cost},
                       {"overlap", c.cost.overlap}};
    if (c.workload) {
        const WorkloadSpec &w = *c.workload;
        j["workload"] = {{"requests", w.requests},
                         {"concurrency", w.concurrency},
                         {"p50", w.p50},
                         {"p90", w.p90},
                         {"p99", w.p99},
                         {"top_decile_share", w.top_decile_share},
                         {"arrivals_per_window", w.arrivals_per_window},
                         {"cluster_correlation", w.cluster_correlation},
                         {"prompt_min", w.prompt_min},
                         {"prompt_max", w.prompt_max},
                         {"seed", w.seed}};
    } else if (c.trace_path) {
        j["trace_path"] = *c.trace_path;
        j["replay_window_seconds"] = c.replay_window_seconds;
    }
    j["mode"] = {{"pager_enabled", c.pager_enabled}, {"regime", regime_name(c.regime)}};
    j["shaping"] = {{"span_blocks", c.span_blocks},
                    {"staged_refresh_period", c.staged_refresh_period},
                    {"demand_refresh_period", c.demand_refresh_period},
                    {"demand_gather_tokens", c.demand_gather_tokens},
                    {"share_probability", c.share_probability},
                    {"shared_prefix_tokens", c.shared_prefix_tokens},
                    {"static_slot_tokens", c.static_slot_tokens},
                    {"arena_headroom_pages", c.arena_headroom_pages}};
    if (c.arena_pages_override)
        j["shaping"]["arena_pages"] = *c.arena_pages_override;
    if (c.eos_burst_step > 0)
        j["eos_burst"] = {{"step", c.eos_burst_step}, {"fraction", c.eos_burst_fraction}};
    return j.dump(2) + "\n";
}

ScenarioConfig default_audit_config() {
    ScenarioConfig c;
    c.label = "audit";
    c.pager.page_bytes = 16 * 1024;
    c.pager.layers = 4;
    c.pager.kv_head_dim = 64;
    c.pager.elem_bytes = 2; // 1 KiB per token, 16 tokens per page
    c.placement.alpha = 0.3;
    c.placement.lookahead_budget = 32;
    c.placement.cold_budget = 96;
    c.transport.merge_threshold = 131072;
    c.transport.max_trains_per_step = 2;
    c.transport.merge = true;
    c.far_view.enabled = false;
    c.far_view.near_window = 512;
    c.far_view.cap = 64;
    c.far_view.chunk_tokens = 128;
    c.cost.dma_fixed_overhead = 1.0;
    c.cost.dma_bandwidth = 131072.0;
    c.cost.kernel_base = 2.0;
    c.cost.kernel_per_slot = 0.002;
    c.cost.submit_cost = 0.04;
    c.cost.commit_cost = 0.04;
    c.cost.overlap = true;
    // Hold guard sized within the per-step compute slack.
    c.transport.max_hold = 0.25 * c.cost.kernel_cost(c.far_view.near_window);
    WorkloadSpec w;
    w.requests = 10000;
    w.concurrency = 64;
    w.arrivals_per_window = 1.85;
    w.seed = 1;
    c.workload = w;
    c.steps = 2000;
    c.warmup_steps = 100;
    c.seed = 1;
    c.span_blocks = 9;
    c.staged_refresh_period = 32;
    c.demand_refresh_period = 16;
    c.demand_gather_tokens = 46;
    return c;
}

} // namespace kvrail
