#include "qdawg/units.hpp"

#include "qdawg/text.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace qdawg {

ClockSpec::ClockSpec(double generator_clock_hz, double readout_clock_hz, Cycles cycles_per_sync_epoch)
    : generator_hz_(generator_clock_hz), readout_hz_(readout_clock_hz), sync_epoch_(cycles_per_sync_epoch) {
    if (!(std::isfinite(generator_hz_) && generator_hz_ > 0.0) || !(std::isfinite(readout_hz_) && readout_hz_ > 0.0))
        throw std::invalid_argument("clock frequencies must be finite and positive");
    if (sync_epoch_ < 1) throw std::invalid_argument("cycles_per_sync_epoch must be >= 1");
}

Cycles ns_to_cycles(double duration_ns, double clock_hz) {
    if (!std::isfinite(duration_ns) || !std::isfinite(clock_hz))
        throw std::invalid_argument("ns_to_cycles: non-finite input");
    if (duration_ns < 0.0) throw std::invalid_argument("ns_to_cycles: negative duration");
    if (clock_hz <= 0.0) throw std::invalid_argument("ns_to_cycles: clock must be positive");
    // std::llround rounds half away from zero.
    return static_cast<Cycles>(std::llround(duration_ns * clock_hz / 1e9));
}

double cycles_to_ns(Cycles cycles, double clock_hz) {
    if (cycles < 0) throw std::invalid_argument("cycles_to_ns: negative cycles");
    if (!(std::isfinite(clock_hz) && clock_hz > 0.0)) throw std::invalid_argument("cycles_to_ns: clock must be positive");
    return static_cast<double>(cycles) * 1e9 / clock_hz;
}

Cycles align_up(Cycles t, Cycles epoch) {
    if (epoch <= 1) return t;
    const Cycles r = t % epoch;
    return r == 0 ? t : t + (epoch - r);
}

std::string_view to_string(ChannelKind kind) {
    switch (kind) {
        case ChannelKind::MicrowaveGenerator: return "microwave-generator";
        case ChannelKind::LaserGate: return "laser-gate";
        case ChannelKind::ReadoutTrigger: return "readout-trigger";
        case ChannelKind::Digitizer: return "digitizer";
    }
    return "unknown";
}

namespace {
Band default_band(ChannelKind kind) {
    switch (kind) {
        case ChannelKind::MicrowaveGenerator: return Channel::kGeneratorBand;
        case ChannelKind::Digitizer: return Channel::kDigitizerBand;
        // Gates and triggers carry no RF; give them the full DC band.
        case ChannelKind::LaserGate:
        case ChannelKind::ReadoutTrigger: return Band{0.0, 1e9};
    }
    return Band{0.0, 1e9};
}
}  // namespace

Channel::Channel(ChannelId id, ChannelKind kind) : Channel(id, kind, default_band(kind)) {}

Channel::Channel(ChannelId id, ChannelKind kind, Band band) : id_(id), kind_(kind), band_(band) {
    if (!(band_.low_hz < band_.high_hz))
        throw std::invalid_argument("channel " + std::to_string(id) + ": band_low must be below band_high");
}

std::string format_duration(double ns) {
    const double a = std::abs(ns);
    if (a >= 1e6) return text::format_double(ns / 1e6) + " ms";
    if (a >= 1e3) return text::format_double(ns / 1e3) + " us";
    return text::format_double(ns) + " ns";
}

std::string format_frequency(double hz) {
    const double a = std::abs(hz);
    if (a >= 1e9) return text::format_double(hz / 1e9) + " GHz";
    if (a >= 1e6) return text::format_double(hz / 1e6) + " MHz";
    if (a >= 1e3) return text::format_double(hz / 1e3) + " kHz";
    return text::format_double(hz) + " Hz";
}

}  // namespace qdawg
