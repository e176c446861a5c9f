#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "qdawg/pulse_program.hpp"
#include "qdawg/units.hpp"

namespace qdawg {

// Virtual timed instruction set. Every timed operand is affine in the single
// sweep register r, which starts at 0 and is advanced by SWEEP_STEP. Times are
// relative to the start of the current shot; SYNC closes a shot and moves the
// shot origin to the next sync-epoch boundary.

enum class Opcode : std::uint8_t {
    SetParam = 1,
    Play = 2,
    Trigger = 3,
    Sync = 4,
    LoopBegin = 5,
    LoopEnd = 6,
    SweepStep = 7,
    Halt = 8,
};

enum class ParamField : std::uint8_t { Frequency = 0, Gain = 1, Phase = 2, Envelope = 3 };
enum class LoopRole : std::uint8_t { Sweep = 0, Repeat = 1 };

std::string_view to_string(Opcode op);

struct Instruction {
    Opcode op = Opcode::Halt;
    ChannelId channel = 0;  // SET_PARAM / PLAY channel, TRIGGER port
    Affine time;            // SET_PARAM, PLAY, TRIGGER stamp; SYNC shot length
    Affine length;          // PLAY, TRIGGER
    ParamField field = ParamField::Frequency;
    double value = 0.0;     // SET_PARAM: value + slope * r
    double slope = 0.0;
    std::int64_t count = 0; // LOOP_BEGIN iterations, SWEEP_STEP increment
    LoopRole role = LoopRole::Repeat;
    std::string tag;        // TRIGGER

    static Instruction set_param(ChannelId ch, Affine t, ParamField f, double value, double slope = 0.0);
    static Instruction play(ChannelId ch, Affine t, Affine len);
    static Instruction trigger(ChannelId port, Affine t, Affine len, std::string tag);
    static Instruction sync(Affine shot_length);
    static Instruction loop_begin(std::int64_t count, LoopRole role);
    static Instruction loop_end();
    static Instruction sweep_step(std::int64_t increment);
    static Instruction halt();

    bool operator==(const Instruction&) const = default;
};

struct StreamMeta {
    Cycles total_cycles = 0;
    std::size_t n_sweep_points = 1;
    std::int64_t inner_reps = 1;
    ClockSpec clock;
    std::vector<Channel> channels;  // PLAY payload kind follows the channel kind

    const Channel* channel(ChannelId id) const;
    bool operator==(const StreamMeta&) const = default;
};

struct InstructionStream {
    std::vector<Instruction> instructions;
    StreamMeta meta;

    bool operator==(const InstructionStream&) const = default;
};

/// Line-oriented assembly, e.g. `PLAY ch=2 t=0 len=400`. Lossless.
std::string to_text(const InstructionStream& stream);
InstructionStream parse_text(std::string_view text);

/// Length-prefixed little-endian binary form. Lossless.
std::vector<std::uint8_t> to_binary(const InstructionStream& stream);
InstructionStream parse_binary(std::span<const std::uint8_t> bytes);

/// One executed shot: its events with shot-relative starts, plus where the
/// shot sits on the absolute generator clock.
struct Shot {
    std::size_t sweep_index = 0;
    std::size_t rep_index = 0;
    Cycles start_cycle = 0;     // absolute
    Cycles length_cycles = 0;   // SYNC operand, or remaining cycles when unsynced
    std::int64_t register_value = 0;
    std::vector<ExpandedEvent> events;
};

/// Structural check: matched loops, depth <= 2, at most one sweep loop,
/// positive loop counts, a single trailing HALT. Throws MalformedStreamError.
void verify_structure(const InstructionStream& stream);

/// Interprets the stream and hands each shot to `on_shot` in execution order.
/// Returns the final cycle clock. Throws MalformedStreamError.
Cycles walk(const InstructionStream& stream, const std::function<void(const Shot&)>& on_shot);

}  // namespace qdawg
