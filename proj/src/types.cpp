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

#include "kvrail/types.hpp"

namespace kvrail {

const char *errc_name(Errc c) {
    switch (c) {
    case Errc::out_of_pages: return "OutOfPages";
    case Errc::prefix_out_of_range: return "PrefixOutOfRange";
    case Errc::alias_overlap: return "AliasOverlap";
    case Errc::unmapped_range: return "UnmappedRange";
    case Errc::future_delta: return "FutureDelta";
    case Errc::unknown_session: return "UnknownSession";
    case Errc::session_closed: return "SessionClosed";
    case Errc::empty_chunk: return "EmptyChunk";
    case Errc::dimension_mismatch: return "DimensionMismatch";
    case Errc::shape_violation: return "ShapeViolation";
    case Errc::multi_commit: return "MultiCommit";
    case Errc::unmapped_block: return "UnmappedBlock";
    case Errc::parse_error: return "ParseError";
    case Errc::non_monotone_time: return "NonMonotoneTime";
    case Errc::empty_stream: return "EmptyStream";
    case Errc::unknown_regime: return "UnknownRegime";
    case Errc::infeasible_spec: return "InfeasibleSpec";
    case Errc::workload_audit_failed: return "WorkloadAuditFailed";
    case Errc::empty_run: return "EmptyRun";
    case Errc::workload_mismatch: return "WorkloadMismatch";
    case Errc::bad_config: return "BadConfig";
    case Errc::io_error: return "IoError";
    }
    return "UnknownError";
}

} // namespace kvrail
