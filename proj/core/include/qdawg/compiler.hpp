#pragma once

#include <string>
#include <vector>

#include "qdawg/isa.hpp"
#include "qdawg/pulse_program.hpp"

namespace qdawg {

enum class ViolationKind { Overlap, EpochOverflow, NegativeTiming };

struct TimingViolation {
    ViolationKind kind = ViolationKind::Overlap;
    ChannelId channel = 0;
    std::size_t first = 0;   // event index
    std::size_t second = 0;  // event index (== first for single-event violations)
    Cycles overlap_cycles = 0;
    std::size_t sweep_index = 0;  // point with the worst violation

    std::string describe(const PulseProgram& program) const;
    bool operator==(const TimingViolation&) const = default;
};

/// Report-style legality check over every sweep point. Intervals are half-open;
/// swept events whose length evaluates to 0 at a point are absent there.
std::vector<TimingViolation> check_timing(const PulseProgram& program);

/// Lowers a program to the virtual ISA. Throws OverlapError, BandError,
/// EpochOverflowError, or std::invalid_argument for channel/payload mismatches.
InstructionStream compile(const PulseProgram& program);

/// All loops unrolled, one entry per played event per shot, in execution order.
std::vector<ExpandedEvent> decompile(const InstructionStream& stream);

}  // namespace qdawg
