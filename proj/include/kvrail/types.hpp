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
#include <limits>
#include <stdexcept>
#include <string>

namespace kvrail {

using BlockId = uint32_t;
using SessionId = uint32_t;
using Step = uint64_t;

inline constexpr BlockId kInvalidBlock = std::numeric_limits<BlockId>::max();

/// Half-open logical token range [begin, end).
struct TokenRange {
    uint64_t begin = 0;
    uint64_t end = 0;

    uint64_t size() const { return end - begin; }
    bool empty() const { return end <= begin; }
    bool contains(uint64_t tok) const { return tok >= begin && tok < end; }
    bool overlaps(const TokenRange &o) const { return begin < o.end && o.begin < end; }
    friend bool operator==(const TokenRange &a, const TokenRange &b) {
        return a.begin == b.begin && a.end == b.end;
    }
};

enum class Errc {
    out_of_pages,
    prefix_out_of_range,
    alias_overlap,
    unmapped_range,
    future_delta,
    unknown_session,
    session_closed,
    empty_chunk,
    dimension_mismatch,
    shape_violation,
    multi_commit,
    unmapped_block,
    parse_error,
    non_monotone_time,
    empty_stream,
    unknown_regime,
    infeasible_spec,
    workload_audit_failed,
    empty_run,
    workload_mismatch,
    bad_config,
    io_error,
};

const char *errc_name(Errc c);

class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string &msg)
        : std::runtime_error(std::string(errc_name(code)) + ": " + msg), code_(code) {}

    Errc code() const { return code_; }

private:
    Errc code_;
};

[[noreturn]] inline void raise(Errc code, const std::string &msg) { throw Error(code, msg); }

} // namespace kvrail
