#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "qdawg/analysis.hpp"
#include "qdawg/config.hpp"
#include "qdawg/instrument.hpp"
#include "qdawg/nv_physics.hpp"
#include "qdawg/pulse_program.hpp"

namespace qdawg {

/// Required and optional keys of one measurement program, shared keys included.
ConfigSchema schema(MeasurementKind kind);

/// Tab-separated table: key, type, required, description (header row first).
std::string schema_table(const ConfigSchema& schema);

/// Validates `config` against schema(kind) and lays out the shot.
/// Throws ConfigError (with the report) when validation fails or the sweep is degenerate.
/// Timing collisions that follow from the config surface later as OverlapError from compile().
PulseProgram build(MeasurementKind kind, const ExperimentConfig& config);

struct SweepAxis {
    std::string name;
    std::string unit;  // "Hz", "ns" or "" for a single point
    std::vector<double> values;

    bool operator==(const SweepAxis&) const = default;
};

/// Axis the result is reported on. For readout-window this is the slice start
/// relative to the readout laser edge.
SweepAxis sweep_axis(MeasurementKind kind, const ExperimentConfig& config);

/// Tags of the readout windows written by the builders.
inline constexpr std::string_view kSignalTag = "sig";
inline constexpr std::string_view kReferenceTag = "ref";

/// Whether the protocol records a reference window.
bool has_reference(MeasurementKind kind);

struct MeasurementResult {
    MeasurementKind kind = MeasurementKind::PLIntensity;
    SweepAxis axis;
    std::vector<double> signal;
    std::vector<double> reference;                       // empty unless has_reference(kind)
    std::map<std::string, std::vector<double>> columns;  // extra per-point data, e.g. readout-window "dark"
    std::vector<AcquisitionRecord> raw;
    std::optional<FitResult> fit;
    std::optional<ReadoutWindowChoice> readout_window;
    ExperimentConfig config;
    KvDocument physics;
    std::uint64_t seed = 0;
    ReadoutMode mode = ReadoutMode::Photon;

    std::size_t n_points() const { return axis.values.size(); }

    /// Self-describing text document: header, [config], [physics], [fit],
    /// [readout_window], [data] columns, [raw] records. Round-trips exactly.
    std::string to_text() const;
    static MeasurementResult parse(std::string_view text);

    bool operator==(const MeasurementResult&) const = default;
};

struct PointUpdate {
    std::size_t index = 0;
    std::size_t n_points = 0;
    double axis_value = 0.0;
    double signal = 0.0;
    std::optional<double> reference;
};

struct RunOptions {
    std::uint64_t seed = 0;
    InstrumentSettings instrument;  // config keys readout_mode / dark_count_rate / detection_efficiency override
    bool analyze = true;
    /// Drop per-shot records after aggregation; `raw` stays empty.
    bool keep_raw = true;
    /// Called once per completed sweep point, in order, from the calling thread.
    std::function<void(const PointUpdate&)> on_point;
};

/// Instrument settings after applying the config's optional readout keys.
InstrumentSettings instrument_settings(const ExperimentConfig& config, InstrumentSettings base = {});

/// validate, build, compile, execute, analyze.
MeasurementResult run(MeasurementKind kind, const ExperimentConfig& config, const NvEnsembleParams& physics,
                      const RunOptions& options);
MeasurementResult run(MeasurementKind kind, const ExperimentConfig& config, const NvEnsembleParams& physics,
                      std::uint64_t seed);

/// The kind's default analysis on the aggregated data; never touches `raw`.
/// Analysis failures leave `fit` empty.
void analyze(MeasurementResult& result);

/// Representative config for each kind, as shipped in configs/.
ExperimentConfig demo_config(MeasurementKind kind);
/// Demo ensemble: D = 2.87 GHz, 50 MHz dip splitting, 5 MHz Rabi rate, T2 = 100 us, T1 = 5 ms,
/// 20 MHz bright PL.
NvEnsembleParams demo_physics();

}  // namespace qdawg
