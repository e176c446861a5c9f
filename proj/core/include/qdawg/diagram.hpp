#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "qdawg/pulse_program.hpp"

namespace qdawg {

enum class LabelMode : std::uint8_t { Names, Values };

std::string_view to_string(LabelMode m);
std::optional<LabelMode> parse_label_mode(std::string_view s);

struct DiagramBox {
    Cycles start = 0;   // shot-relative, at the drawn sweep value
    Cycles length = 0;
    double x = 0.0;     // drawing units
    double width = 0.0;
    std::string label;
    bool break_mark = false;  // swept duration

    bool operator==(const DiagramBox&) const = default;
};

/// Swept dark interval ahead of a box whose start tracks the sweep.
struct GapMark {
    double x = 0.0;
    std::string label;
    bool operator==(const GapMark&) const = default;
};

struct DiagramLane {
    ChannelId channel = 0;
    ChannelKind kind = ChannelKind::LaserGate;
    std::string name;
    std::vector<DiagramBox> boxes;  // time order
    std::vector<GapMark> gaps;

    bool operator==(const DiagramLane&) const = default;
};

struct SequenceDiagram {
    std::vector<DiagramLane> lanes;  // microwave, laser, readout trigger, digitizer
    LabelMode label_mode = LabelMode::Names;
    std::string caption;
    double width = 0.0;  // time-axis extent in drawing units

    bool operator==(const SequenceDiagram&) const = default;
};

/// One lane per used channel. Swept quantities are drawn at their largest sweep
/// value on a compressed (logarithmic per interval) time axis, so short pulses
/// stay visible next to long delays. Geometry never depends on `mode`.
SequenceDiagram render_diagram(const PulseProgram& program, LabelMode mode);

/// Standalone SVG document; see docs/diagram.md for the element vocabulary.
std::string serialize_diagram(const SequenceDiagram& diagram);

}  // namespace qdawg
