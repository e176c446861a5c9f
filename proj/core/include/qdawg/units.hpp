#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace qdawg {

using Cycles = std::int64_t;

/// Clock domains of the virtual board. The generator clock stamps every
/// instruction; the readout clock sets the analog sample rate. Shots are
/// re-aligned to multiples of `cycles_per_sync_epoch` generator cycles.
class ClockSpec {
  public:
    static constexpr double kDefaultGeneratorHz = 400e6;
    static constexpr double kDefaultReadoutHz = 1e9;

    ClockSpec() = default;
    ClockSpec(double generator_clock_hz, double readout_clock_hz, Cycles cycles_per_sync_epoch = 1);

    double generator_clock_hz() const noexcept { return generator_hz_; }
    double readout_clock_hz() const noexcept { return readout_hz_; }
    Cycles cycles_per_sync_epoch() const noexcept { return sync_epoch_; }

    /// Readout samples per generator cycle.
    double readout_ratio() const noexcept { return readout_hz_ / generator_hz_; }

    bool operator==(const ClockSpec&) const = default;

  private:
    double generator_hz_ = kDefaultGeneratorHz;
    double readout_hz_ = kDefaultReadoutHz;
    Cycles sync_epoch_ = 1;
};

/// Rounds to the nearest cycle, ties away from zero. Throws std::invalid_argument
/// on non-finite or negative duration, or non-positive clock.
Cycles ns_to_cycles(double duration_ns, double clock_hz);

/// Exact scale back to nanoseconds. Throws std::invalid_argument on negative cycles.
double cycles_to_ns(Cycles cycles, double clock_hz);

/// Smallest multiple of `epoch` that is >= t.
Cycles align_up(Cycles t, Cycles epoch);

/// Human-readable labels: "100 ns", "3 us", "2.845 GHz".
std::string format_duration(double ns);
std::string format_frequency(double hz);

using ChannelId = std::uint8_t;

enum class ChannelKind : std::uint8_t { MicrowaveGenerator, LaserGate, ReadoutTrigger, Digitizer };

std::string_view to_string(ChannelKind kind);

struct Band {
    double low_hz = 0.0;
    double high_hz = 0.0;

    bool contains(double f) const noexcept { return f >= low_hz && f <= high_hz; }
    bool operator==(const Band&) const = default;
};

class Channel {
  public:
    static constexpr Band kGeneratorBand{6e9, 10e9};
    static constexpr Band kDigitizerBand{0.0, 1e9};

    /// Band defaults by kind. Throws std::invalid_argument if low >= high.
    Channel(ChannelId id, ChannelKind kind);
    Channel(ChannelId id, ChannelKind kind, Band band);

    ChannelId id() const noexcept { return id_; }
    ChannelKind kind() const noexcept { return kind_; }
    const Band& band() const noexcept { return band_; }

    bool operator==(const Channel&) const = default;

  private:
    ChannelId id_;
    ChannelKind kind_;
    Band band_;
};

}  // namespace qdawg
