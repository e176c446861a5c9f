#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "qdawg/units.hpp"

namespace qdawg {

/// Cycle quantity that may track the sweep value v: `base + per_sweep * v`.
struct Affine {
    Cycles base = 0;
    Cycles per_sweep = 0;

    constexpr Cycles at(std::int64_t v) const noexcept { return base + per_sweep * v; }
    constexpr bool swept() const noexcept { return per_sweep != 0; }
    bool operator==(const Affine&) const = default;
};

enum class Envelope : std::uint8_t { Constant = 0, GaussianEdge = 1 };

struct MicrowavePayload {
    double freq_hz = 0.0;
    double freq_per_sweep = 0.0;  // frequency = freq_hz + freq_per_sweep * v
    double gain = 0.0;
    double phase_deg = 0.0;
    Envelope envelope = Envelope::Constant;

    double frequency_at(std::int64_t v) const noexcept { return freq_hz + freq_per_sweep * static_cast<double>(v); }
    bool operator==(const MicrowavePayload&) const = default;
};

struct LaserPayload {
    double gain = 1.0;  // AOM drive level in [0, 1]
    bool operator==(const LaserPayload&) const = default;
};

struct TriggerPayload {
    std::string tag;  // readout-window tag, [A-Za-z0-9_-]+
    bool operator==(const TriggerPayload&) const = default;
};

using Payload = std::variant<MicrowavePayload, LaserPayload, TriggerPayload>;

struct PulseEvent {
    ChannelId channel = 0;
    Affine start;
    Affine length;
    Payload payload;
    std::string label;        // config key naming the duration, for diagrams
    std::string value_label;  // rendered duration/frequency, for diagrams

    bool operator==(const PulseEvent&) const = default;
};

enum class SweepUnit : std::uint8_t { Cycles, Hertz };

/// One swept register. `values` are absolute sweep values (cycles or integer Hz).
struct Sweep {
    std::string key;
    SweepUnit unit = SweepUnit::Cycles;
    std::vector<std::int64_t> values;

    bool uniform() const;
    bool operator==(const Sweep&) const = default;
};

/// Channel-resolved description of one shot, its sweep, and its repetition count.
/// Shots of sweep point i run for `epoch.at(v_i)` cycles before the next sync.
struct PulseProgram {
    std::vector<Channel> channels;
    std::vector<PulseEvent> events;
    std::optional<Sweep> sweep;
    std::int64_t inner_reps = 1;
    ClockSpec clock;
    std::optional<Affine> epoch;  // unset: tightest affine bound over all event ends

    std::size_t n_sweep_points() const { return sweep ? sweep->values.size() : 1; }
    /// Absolute sweep value of point i (0 when there is no sweep).
    std::int64_t sweep_value(std::size_t i) const { return sweep ? sweep->values.at(i) : 0; }
    const Channel* channel(ChannelId id) const;
    Affine effective_epoch() const;
};

/// Concrete, fully resolved event of one shot. `start` is relative to the shot.
struct ExpandedEvent {
    std::size_t sweep_index = 0;
    std::size_t rep_index = 0;
    ChannelId channel = 0;
    Cycles start = 0;
    Cycles length = 0;
    Payload payload;  // microwave payloads carry the resolved frequency, freq_per_sweep == 0

    bool operator==(const ExpandedEvent&) const = default;
};

/// Strict total order used to compare event multisets.
bool canonical_less(const ExpandedEvent& a, const ExpandedEvent& b);

/// Resolve a payload at sweep value v.
Payload resolve_payload(const Payload& p, std::int64_t v);

}  // namespace qdawg
