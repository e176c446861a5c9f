#include "qdawg/diagram.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>

namespace qdawg {

std::string_view to_string(LabelMode m) { return m == LabelMode::Names ? "names" : "values"; }

std::optional<LabelMode> parse_label_mode(std::string_view s) {
    if (s == "names") return LabelMode::Names;
    if (s == "values") return LabelMode::Values;
    return std::nullopt;
}

namespace {

int lane_rank(ChannelKind k) {
    switch (k) {
        case ChannelKind::MicrowaveGenerator: return 0;
        case ChannelKind::LaserGate: return 1;
        case ChannelKind::ReadoutTrigger: return 2;
        case ChannelKind::Digitizer: return 3;
    }
    return 4;
}

std::string lane_name(ChannelKind k, ChannelId id) {
    const char* base = "channel";
    switch (k) {
        case ChannelKind::MicrowaveGenerator: base = "microwave"; break;
        case ChannelKind::LaserGate: base = "laser"; break;
        case ChannelKind::ReadoutTrigger: base = "readout"; break;
        case ChannelKind::Digitizer: base = "digitizer"; break;
    }
    return std::string(base) + " (ch " + std::to_string(id) + ")";
}

ChannelKind kind_of(const PulseProgram& p, const PulseEvent& e) {
    if (const auto* ch = p.channel(e.channel)) return ch->kind();
    if (std::holds_alternative<MicrowavePayload>(e.payload)) return ChannelKind::MicrowaveGenerator;
    if (std::holds_alternative<LaserPayload>(e.payload)) return ChannelKind::LaserGate;
    return ChannelKind::ReadoutTrigger;
}

// Interval of d cycles drawn 12 + 28 log2(1 + d/8) units wide.
double interval_width(Cycles d) {
    return d <= 0 ? 0.0 : 12.0 + 28.0 * std::log2(1.0 + static_cast<double>(d) / 8.0);
}

std::string sweep_range(const PulseProgram& p) {
    if (!p.sweep || p.sweep->values.empty()) return {};
    const auto [lo, hi] = std::minmax_element(p.sweep->values.begin(), p.sweep->values.end());
    const double hz = p.clock.generator_clock_hz();
    if (p.sweep->unit == SweepUnit::Hertz)
        return format_frequency(static_cast<double>(*lo)) + ".." + format_frequency(static_cast<double>(*hi));
    return format_duration(cycles_to_ns(*lo, hz)) + ".." + format_duration(cycles_to_ns(*hi, hz));
}

}  // namespace

SequenceDiagram render_diagram(const PulseProgram& program, LabelMode mode) {
    SequenceDiagram d;
    d.label_mode = mode;
    if (program.events.empty()) return d;

    std::int64_t v = 0;
    if (program.sweep && !program.sweep->values.empty())
        v = *std::max_element(program.sweep->values.begin(), program.sweep->values.end());

    std::vector<Cycles> edges{0};
    for (const auto& e : program.events) {
        edges.push_back(e.start.at(v));
        edges.push_back(e.start.at(v) + e.length.at(v));
    }
    std::sort(edges.begin(), edges.end());
    edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
    std::map<Cycles, double> x_of;
    double x = 0.0;
    for (std::size_t i = 0; i < edges.size(); ++i) {
        if (i) x += interval_width(edges[i] - edges[i - 1]);
        x_of[edges[i]] = x;
    }
    d.width = x;

    const std::string range = sweep_range(program);
    const std::string sweep_text = mode == LabelMode::Names && program.sweep ? program.sweep->key : range;

    std::map<std::pair<int, ChannelId>, DiagramLane> lanes;
    std::map<std::pair<int, ChannelId>, std::vector<const PulseEvent*>> members;
    for (const auto& e : program.events) {
        const auto k = kind_of(program, e);
        const auto key = std::make_pair(lane_rank(k), e.channel);
        auto& lane = lanes[key];
        lane.channel = e.channel;
        lane.kind = k;
        lane.name = lane_name(k, e.channel);
        members[key].push_back(&e);
    }
    for (auto& [key, lane] : lanes) {
        auto& evs = members[key];
        std::stable_sort(evs.begin(), evs.end(), [&](const PulseEvent* a, const PulseEvent* b) {
            const auto sa = a->start.at(v), sb = b->start.at(v);
            return sa != sb ? sa < sb : a->length.at(v) < b->length.at(v);
        });
        Cycles prev_end = 0;
        for (const auto* e : evs) {
            DiagramBox b;
            b.start = e->start.at(v);
            b.length = e->length.at(v);
            b.x = x_of.at(b.start);
            b.width = x_of.at(b.start + b.length) - b.x;
            b.label = mode == LabelMode::Names ? e->label : e->value_label;
            b.break_mark = e->length.swept();
            if (e->start.swept() && !e->length.swept() && b.start > prev_end)
                lane.gaps.push_back({0.5 * (x_of.at(prev_end) + b.x), sweep_text});
            prev_end = std::max(prev_end, b.start + b.length);
            lane.boxes.push_back(std::move(b));
        }
        d.lanes.push_back(std::move(lane));
    }

    const double mhz = program.clock.generator_clock_hz() / 1e6;
    char clock[64];
    std::snprintf(clock, sizeof clock, "%g MHz", mhz);
    if (program.sweep)
        d.caption = program.sweep->key + " swept over " + std::to_string(program.sweep->values.size()) +
                    " points (" + range + "), ";
    d.caption += std::to_string(program.inner_reps) + " reps per point, " + clock + " generator clock";
    return d;
}

namespace {

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

std::string escape(std::string_view s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

std::string_view kind_class(ChannelKind k) {
    switch (k) {
        case ChannelKind::MicrowaveGenerator: return "microwave";
        case ChannelKind::LaserGate: return "laser";
        case ChannelKind::ReadoutTrigger: return "readout";
        case ChannelKind::Digitizer: return "digitizer";
    }
    return "channel";
}

constexpr double kLeft = 130.0, kTop = 30.0, kLaneH = 60.0, kBoxH = 26.0, kRight = 20.0, kBottom = 40.0;

// Two slanted strokes across a box or gap centred at (cx, cy).
std::string break_path(double cx, double cy) {
    return "M" + num(cx - 6) + " " + num(cy + 9) + " L" + num(cx - 1) + " " + num(cy - 9) + " M" + num(cx + 1) + " " +
           num(cy + 9) + " L" + num(cx + 6) + " " + num(cy - 9);
}

}  // namespace

std::string serialize_diagram(const SequenceDiagram& d) {
    const double w = kLeft + d.width + kRight;
    const double h = kTop + kLaneH * static_cast<double>(d.lanes.size()) + kBottom;
    std::string s;
    s += "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
    s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(w) + "\" height=\"" + num(h) + "\" viewBox=\"0 0 " +
         num(w) + " " + num(h) + "\" data-label-mode=\"" + std::string(to_string(d.label_mode)) + "\">\n";
    s += "<style>.box{fill:#cfe3f7;stroke:#1f4e79}.baseline{stroke:#777}.break-mark{stroke:#b00;fill:none;"
         "stroke-width:2}text{font-family:sans-serif;font-size:11px}.lane-name{font-weight:bold}</style>\n";
    for (std::size_t i = 0; i < d.lanes.size(); ++i) {
        const auto& lane = d.lanes[i];
        const double base = kTop + kLaneH * static_cast<double>(i) + kLaneH - 12.0;
        s += "<g class=\"lane " + std::string(kind_class(lane.kind)) + "\" data-channel=\"" +
             std::to_string(lane.channel) + "\">\n";
        s += "<text class=\"lane-name\" x=\"8.00\" y=\"" + num(base - 4) + "\">" + escape(lane.name) + "</text>\n";
        s += "<line class=\"baseline\" x1=\"" + num(kLeft) + "\" y1=\"" + num(base) + "\" x2=\"" + num(kLeft + d.width) +
             "\" y2=\"" + num(base) + "\"/>\n";
        for (const auto& b : lane.boxes) {
            const double x = kLeft + b.x;
            s += "<rect class=\"box\" x=\"" + num(x) + "\" y=\"" + num(base - kBoxH) + "\" width=\"" + num(b.width) +
                 "\" height=\"" + num(kBoxH) + "\" data-start=\"" + std::to_string(b.start) + "\" data-length=\"" +
                 std::to_string(b.length) + "\"/>\n";
            if (b.break_mark)
                s += "<path class=\"break-mark\" d=\"" + break_path(x + b.width / 2, base - kBoxH / 2) + "\"/>\n";
            s += "<text class=\"label\" x=\"" + num(x + b.width / 2) + "\" y=\"" + num(base - kBoxH - 4) +
                 "\" text-anchor=\"middle\">" + escape(b.label) + "</text>\n";
        }
        for (const auto& g : lane.gaps) {
            const double x = kLeft + g.x;
            s += "<path class=\"break-mark gap\" d=\"" + break_path(x, base) + "\"/>\n";
            s += "<text class=\"sweep-label\" x=\"" + num(x) + "\" y=\"" + num(base + 12) +
                 "\" text-anchor=\"middle\">" + escape(g.label) + "</text>\n";
        }
        s += "</g>\n";
    }
    s += "<text class=\"caption\" x=\"8.00\" y=\"" + num(h - 12) + "\">" + escape(d.caption) + "</text>\n";
    s += "</svg>\n";
    return s;
}

}  // namespace qdawg
