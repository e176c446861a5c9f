#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "qdawg/isa.hpp"
#include "qdawg/nv_physics.hpp"
#include "qdawg/rng.hpp"

namespace qdawg {

enum class ReadoutMode : std::uint8_t { Photon = 0, Analog = 1 };

std::string_view to_string(ReadoutMode m);
std::optional<ReadoutMode> parse_readout_mode(std::string_view s);

struct InstrumentSettings {
    ReadoutMode mode = ReadoutMode::Photon;
    double dark_count_rate_hz = 200.0;
    double detection_efficiency = 1.0;
    double analog_noise_sigma = 0.02;    // arbitrary units
    double analog_level_per_hz = 1e-6;   // level of 1.0 at 1 MHz detected rate

    void validate() const;  // throws std::invalid_argument
    bool operator==(const InstrumentSettings&) const = default;
};

struct AcquisitionRecord {
    std::size_t sweep_index = 0;
    std::size_t rep_index = 0;
    std::string window_tag;
    Cycles start_cycle = 0;  // absolute generator cycle
    Cycles length_cycles = 0;
    ReadoutMode mode = ReadoutMode::Photon;
    std::int64_t photon_count = 0;
    std::vector<double> analog_samples;

    bool operator==(const AcquisitionRecord&) const = default;
};

/// Poisson(rate * window * 1e-9 * efficiency).
std::int64_t count_photons(double rate_hz, double window_ns, double efficiency, CounterRng& rng);

/// One sample per readout-clock cycle: rate * level_per_hz + N(0, noise_sigma).
std::vector<double> sample_analog(double rate_hz, double window_ns, double noise_sigma, CounterRng& rng,
                                  double readout_clock_hz = 1e9, double level_per_hz = 1e-6);

/// Registers as last seen on the wire.
struct ChannelRegisterState {
    double freq_hz = 0.0;
    double gain = 0.0;
    double phase_deg = 0.0;
    bool operator==(const ChannelRegisterState&) const = default;
};

struct InstrumentState {
    Cycles cycle_clock = 0;
    std::vector<std::pair<ChannelId, ChannelRegisterState>> registers;
    bool laser_on = false;
    std::uint64_t rng_seed = 0;
};

/// Discrete-event executor. Each shot is split at laser/microwave edges; the
/// spin ensemble is advanced piecewise and every readout window integrates the
/// resulting PL analytically before photon or analog sampling.
class VirtualInstrument {
  public:
    VirtualInstrument(NvEnsembleParams physics, std::uint64_t seed, InstrumentSettings settings = {});

    using Sink = std::function<void(AcquisitionRecord&&)>;
    /// Executes the stream, handing records to `sink` in (sweep, rep, start) order.
    /// Returns the final cycle clock, equal to the stream's total_cycles.
    Cycles execute(const InstructionStream& stream, const Sink& sink);

    const InstrumentState& state() const noexcept { return state_; }
    const NvEnsembleParams& physics() const noexcept { return physics_; }

  private:
    NvEnsembleParams physics_;
    InstrumentSettings settings_;
    InstrumentState state_;
};

std::vector<AcquisitionRecord> execute(const InstructionStream& stream, const NvEnsembleParams& physics,
                                       std::uint64_t seed, const InstrumentSettings& settings = {});

/// Columnar text: a `#` header line, a tab-separated column-name row, one record per line.
std::string records_to_text(std::span<const AcquisitionRecord> records);
std::vector<AcquisitionRecord> records_from_text(std::string_view text);

/// Binary: magic "QDWGREC1", u64 count, then fixed little-endian records.
std::vector<std::uint8_t> records_to_binary(std::span<const AcquisitionRecord> records);
std::vector<AcquisitionRecord> records_from_binary(std::span<const std::uint8_t> bytes);

}  // namespace qdawg
