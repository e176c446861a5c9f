#include "qdawg/sequences.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>

#include "qdawg/compiler.hpp"
#include "qdawg/errors.hpp"
#include "qdawg/text.hpp"

namespace qdawg {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

KeySpec key(std::string name, ValueType type, bool required, std::string description) {
    KeySpec k;
    k.key = std::move(name);
    k.type = type;
    k.required = required;
    k.description = std::move(description);
    return k;
}

KeySpec mw_freq_key(std::string name, bool required, std::string description) {
    auto k = key(std::move(name), ValueType::Frequency, required, std::move(description));
    k.band_channel = ChannelKind::MicrowaveGenerator;
    return k;
}

KeySpec choice_key(std::string name, std::vector<std::string> choices, std::string description) {
    auto k = key(std::move(name), ValueType::Choice, false, std::move(description));
    k.choices = std::move(choices);
    return k;
}

void add_common(std::vector<KeySpec>& keys) {
    keys.push_back(key("inner_reps", ValueType::Count, true, "repetitions averaged per sweep point"));
    keys.push_back(key("laser_gain", ValueType::Gain, false, "AOM drive level of every laser pulse (default 1)"));
    keys.push_back(choice_key("readout_mode", {"photon", "analog"}, "photon counting or analog readout (default photon)"));
    keys.push_back(key("dark_count_rate", ValueType::Frequency, false, "detector dark-count rate (default 200 Hz)"));
    auto eff = key("detection_efficiency", ValueType::Real, false, "photon detection efficiency (default 1)");
    eff.range = Band{0.0, 1.0};
    keys.push_back(eff);
    keys.push_back(key("mw_band_low", ValueType::Frequency, false, "microwave generator band lower edge (default 6 GHz)"));
    keys.push_back(key("mw_band_high", ValueType::Frequency, false, "microwave generator band upper edge (default 10 GHz)"));
    auto gen = key("generator_clock", ValueType::Frequency, false, "generator clock (default 400 MHz)");
    gen.range = Band{1e6, 10e9};
    keys.push_back(gen);
    auto rd = key("readout_clock", ValueType::Frequency, false, "readout clock (default 1 GHz)");
    rd.range = Band{1e6, 10e9};
    keys.push_back(rd);
    keys.push_back(key("sync_epoch", ValueType::Count, false, "shot alignment in generator cycles (default 1)"));
}

void add_sweep(std::vector<KeySpec>& keys, const std::string& name, ValueType type, const std::string& what) {
    if (type == ValueType::Frequency) {
        keys.push_back(mw_freq_key(name + "_start", true, what + " sweep start"));
        keys.push_back(mw_freq_key(name + "_stop", true, what + " sweep stop"));
    } else {
        keys.push_back(key(name + "_start", type, true, what + " sweep start"));
        keys.push_back(key(name + "_stop", type, true, what + " sweep stop"));
    }
    keys.push_back(key(name + "_n_points", ValueType::Count, true, what + " sweep point count"));
}

void add_readout(std::vector<KeySpec>& keys) {
    keys.push_back(key("laser_readout_time", ValueType::Duration, true, "readout laser pulse length"));
    keys.push_back(key("readout_time", ValueType::Duration, true, "readout window length"));
    keys.push_back(key("readout_delay", ValueType::Duration, false, "readout window offset from the laser edge (default 0)"));
}

void add_drive(std::vector<KeySpec>& keys, bool required) {
    keys.push_back(mw_freq_key("mw_freq", required, "microwave drive frequency"));
    keys.push_back(key("mw_gain", ValueType::Gain, required, "microwave drive amplitude"));
    keys.push_back(key("mw_phase", ValueType::Phase, false, "phase of the first microwave pulse (default 0 deg)"));
}

void add_coherent(std::vector<KeySpec>& keys) {
    keys.push_back(key("laser_init_time", ValueType::Duration, false,
                       "initialisation laser length (default laser_readout_time)"));
    keys.push_back(key("wait_time", ValueType::Duration, false, "dark gap around the microwave block (default 1 us)"));
}

// ---------------------------------------------------------------------------

[[noreturn]] void semantic_error(const std::string& key, double value, Band band, const std::string& why) {
    ValidationReport r;
    r.ok = false;
    r.out_of_band.push_back({key, value, band, why});
    throw ConfigError(std::move(r));
}

ClockSpec clock_of(const ExperimentConfig& c) {
    const double gen = c.frequency_hz_or("generator_clock", ClockSpec::kDefaultGeneratorHz);
    const double rd = c.frequency_hz_or("readout_clock", ClockSpec::kDefaultReadoutHz);
    const auto epoch = static_cast<Cycles>(c.number_or("sync_epoch", 1.0));
    return ClockSpec(gen, rd, epoch);
}

// Shot layout helper: converts config durations into generator cycles and
// records the config key behind each event for diagram labels.
class Builder {
  public:
    explicit Builder(const ExperimentConfig& c) : c_(c), map_(channel_map(c)) {
        p_.clock = clock_of(c);
        p_.channels = {map_.laser, map_.microwave, map_.trigger};
        p_.inner_reps = static_cast<std::int64_t>(c.number("inner_reps"));
        laser_gain_ = c.number_or("laser_gain", 1.0);
    }

    double clk() const { return p_.clock.generator_clock_hz(); }
    Cycles cyc(double ns) const { return ns_to_cycles(ns, clk()); }
    Cycles dur(const std::string& k) const { return cyc(c_.duration_ns(k)); }
    Cycles dur_or(const std::string& k, double fallback_ns) const { return cyc(c_.duration_ns_or(k, fallback_ns)); }
    const ExperimentConfig& config() const { return c_; }

    void laser(Affine start, Affine len, std::string label, std::string value) {
        p_.events.push_back({map_.laser.id(), start, len, LaserPayload{laser_gain_}, std::move(label), std::move(value)});
    }
    void trigger(Affine start, Affine len, std::string tag, std::string label, std::string value) {
        p_.events.push_back(
            {map_.trigger.id(), start, len, TriggerPayload{std::move(tag)}, std::move(label), std::move(value)});
    }
    void microwave(Affine start, Affine len, MicrowavePayload mw, std::string label, std::string value) {
        p_.events.push_back({map_.microwave.id(), start, len, mw, std::move(label), std::move(value)});
    }

    MicrowavePayload drive(double phase_offset_deg = 0.0) const {
        MicrowavePayload mw;
        mw.freq_hz = c_.frequency_hz("mw_freq");
        mw.gain = c_.number("mw_gain");
        mw.phase_deg = phase_or("mw_phase", 0.0) + phase_offset_deg;
        return mw;
    }

    double phase_or(const std::string& k, double fallback) const {
        return c_.find(k) ? c_.phase_deg(k) : fallback;
    }

    std::string dur_label(const std::string& k) const { return format_duration(cycles_to_ns(dur(k), clk())); }

    /// Duration sweep `<name>_start/_stop/_n_points` in cycles; log spacing when asked.
    const Sweep& duration_sweep(const std::string& name, bool log) {
        const double a = c_.duration_ns(name + "_start"), b = c_.duration_ns(name + "_stop");
        const auto n = static_cast<std::size_t>(c_.number(name + "_n_points"));
        if (log && !(a > 0.0)) semantic_error(name + "_start", a, {0.0, kInf}, "log spacing needs a positive start");
        if (log && !(b > 0.0)) semantic_error(name + "_stop", b, {0.0, kInf}, "log spacing needs a positive stop");
        Sweep s;
        s.key = name;
        s.unit = SweepUnit::Cycles;
        for (std::size_t i = 0; i < n; ++i) {
            const double f = n == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(n - 1);
            const double ns = log ? a * std::pow(b / a, f) : a + (b - a) * f;
            s.values.push_back(cyc(ns));
        }
        p_.sweep = std::move(s);
        return *p_.sweep;
    }

    const Sweep& frequency_sweep(const std::string& name) {
        const double a = c_.frequency_hz(name + "_start"), b = c_.frequency_hz(name + "_stop");
        const auto n = static_cast<std::size_t>(c_.number(name + "_n_points"));
        Sweep s;
        s.key = name;
        s.unit = SweepUnit::Hertz;
        for (std::size_t i = 0; i < n; ++i) {
            const double f = n == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(n - 1);
            s.values.push_back(static_cast<std::int64_t>(std::llround(a + (b - a) * f)));
        }
        p_.sweep = std::move(s);
        return *p_.sweep;
    }

    std::string sweep_label() const {
        if (!p_.sweep || p_.sweep->values.empty()) return {};
        const auto [lo, hi] = std::minmax_element(p_.sweep->values.begin(), p_.sweep->values.end());
        if (p_.sweep->unit == SweepUnit::Hertz)
            return format_frequency(static_cast<double>(*lo)) + ".." + format_frequency(static_cast<double>(*hi));
        return format_duration(cycles_to_ns(*lo, clk())) + ".." + format_duration(cycles_to_ns(*hi, clk()));
    }

    Cycles sweep_max() const {
        return p_.sweep ? *std::max_element(p_.sweep->values.begin(), p_.sweep->values.end()) : 0;
    }

    PulseProgram take() { return std::move(p_); }

  private:
    const ExperimentConfig& c_;
    ChannelMap map_;
    PulseProgram p_;
    double laser_gain_ = 1.0;
};

struct ReadoutTimes {
    Cycles laser = 0, window = 0, delay = 0;
};

ReadoutTimes readout_times(const Builder& b) {
    ReadoutTimes t{b.dur("laser_readout_time"), b.dur("readout_time"), b.dur_or("readout_delay", 0.0)};
    const auto& c = b.config();
    if (t.window < 1)
        semantic_error("readout_time", c.duration_ns("readout_time"), {cycles_to_ns(1, b.clk()), kInf},
                       "readout window shorter than one generator cycle");
    if (t.delay + t.window > t.laser)
        semantic_error("readout_time", c.duration_ns("readout_time"),
                       {0.0, cycles_to_ns(std::max<Cycles>(t.laser - t.delay, 0), b.clk())},
                       "readout window extends past the readout laser pulse");
    return t;
}

void readout(Builder& b, Affine start, const ReadoutTimes& t) {
    b.laser(start, {t.laser, 0}, "laser_readout_time", b.dur_label("laser_readout_time"));
    b.trigger({start.base + t.delay, start.per_sweep}, {t.window, 0}, std::string(kSignalTag), "readout_time",
              b.dur_label("readout_time"));
}

// Initialisation laser with the reference window in its last `readout_time`.
Cycles init_with_reference(Builder& b, const ReadoutTimes& t) {
    const bool own = b.config().find("laser_init_time") != nullptr;
    const std::string k = own ? "laser_init_time" : "laser_readout_time";
    const Cycles li = own ? b.dur(k) : t.laser;
    if (t.window > li)
        semantic_error(k, b.config().duration_ns(k), {cycles_to_ns(t.window, b.clk()), kInf},
                       "initialisation laser shorter than the reference window");
    b.laser({0, 0}, {li, 0}, k, b.dur_label(k));
    b.trigger({li - t.window, 0}, {t.window, 0}, std::string(kReferenceTag), "readout_time",
              b.dur_label("readout_time"));
    return li;
}

Cycles floor_half(Cycles x) { return x >= 0 ? x / 2 : -((-x + 1) / 2); }

constexpr double kDefaultWaitNs = 1000.0;
constexpr double kDefaultSliceNs = 64.0;

void build_pl(Builder& b) { readout(b, {0, 0}, readout_times(b)); }

void build_odmr(Builder& b) {
    const auto t = readout_times(b);
    b.frequency_sweep("mw_freq");
    MicrowavePayload mw;
    mw.freq_hz = 0.0;
    mw.freq_per_sweep = 1.0;
    mw.gain = b.config().number("mw_gain");
    mw.phase_deg = b.phase_or("mw_phase", 0.0);
    b.microwave({0, 0}, {t.laser, 0}, mw, "mw_freq", b.sweep_label());
    readout(b, {0, 0}, t);
}

void build_readout_window(Builder& b) {
    const auto& c = b.config();
    const Cycles lr = b.dur("laser_readout_time");
    const bool own = c.find("laser_init_time") != nullptr;
    const std::string init_key = own ? "laser_init_time" : "laser_readout_time";
    const Cycles li = own ? b.dur(init_key) : lr;
    const Cycles pi = b.dur("pi_time");
    const Cycles w = b.dur_or("wait_time", kDefaultWaitNs);
    const Cycles slice = b.dur_or("slice_time", kDefaultSliceNs);
    if (slice < 1)
        semantic_error("slice_time", c.duration_ns_or("slice_time", kDefaultSliceNs), {cycles_to_ns(1, b.clk()), kInf},
                       "slice shorter than one generator cycle");
    const Cycles n = lr / slice;
    if (n < 2)
        semantic_error("slice_time", c.duration_ns_or("slice_time", kDefaultSliceNs),
                       {0.0, cycles_to_ns(lr / 2, b.clk())}, "readout laser must hold at least two slices");
    const auto slice_label = format_duration(cycles_to_ns(slice, b.clk()));

    b.laser({0, 0}, {li, 0}, init_key, b.dur_label(init_key));
    const Cycles a = li + w;
    b.microwave({a, 0}, {pi, 0}, b.drive(), "pi_time", b.dur_label("pi_time"));
    const Cycles t1 = a + pi + w;
    b.laser({t1, 0}, {lr, 0}, "laser_readout_time", b.dur_label("laser_readout_time"));
    for (Cycles i = 0; i < n; ++i)
        b.trigger({t1 + i * slice, 0}, {slice, 0}, "pi_" + std::to_string(i), "slice_time", slice_label);
    const Cycles t2 = t1 + lr + w;
    b.laser({t2, 0}, {lr, 0}, "laser_readout_time", b.dur_label("laser_readout_time"));
    for (Cycles i = 0; i < n; ++i)
        b.trigger({t2 + i * slice, 0}, {slice, 0}, std::string(kSignalTag) + "_" + std::to_string(i), "slice_time",
                  slice_label);
}

void build_rabi(Builder& b) {
    const auto t = readout_times(b);
    const Cycles li = init_with_reference(b, t);
    const Cycles w = b.dur_or("wait_time", kDefaultWaitNs);
    b.duration_sweep("mw_time", false);
    const Cycles a = li + w;
    b.microwave({a, 0}, {0, 1}, b.drive(), "mw_time", b.sweep_label());
    readout(b, {a + b.sweep_max() + w, 0}, t);
}

std::string half_pi_label(const Builder& b, Cycles h) { return format_duration(cycles_to_ns(h, b.clk())); }

void build_ramsey(Builder& b) {
    const auto t = readout_times(b);
    const Cycles li = init_with_reference(b, t);
    const Cycles w = b.dur_or("wait_time", kDefaultWaitNs);
    const Cycles h = b.cyc(b.config().duration_ns("pi_time") / 2.0);
    b.duration_sweep("tau", false);
    const Cycles a = li + w;
    // tau runs centre to centre between the two pi/2 pulses.
    b.microwave({a, 0}, {h, 0}, b.drive(), "pi_time/2", half_pi_label(b, h));
    b.microwave({a, 1}, {h, 0}, b.drive(b.phase_or("ramsey_phase", 180.0)), "pi_time/2", half_pi_label(b, h));
    readout(b, {a + h + w, 1}, t);
}

void build_hahn(Builder& b) {
    const auto t = readout_times(b);
    const Cycles li = init_with_reference(b, t);
    const Cycles w = b.dur_or("wait_time", kDefaultWaitNs);
    const Cycles h = b.cyc(b.config().duration_ns("pi_time") / 2.0);
    const Cycles pi = b.dur("pi_time");
    b.duration_sweep("tau", false);
    const Cycles a = li + w;
    // Pulse centres at a + h/2, a + h/2 + tau, a + h/2 + 2 tau.
    b.microwave({a, 0}, {h, 0}, b.drive(), "pi_time/2", half_pi_label(b, h));
    b.microwave({a + floor_half(h - pi), 1}, {pi, 0}, b.drive(), "pi_time", b.dur_label("pi_time"));
    b.microwave({a, 2}, {h, 0}, b.drive(), "pi_time/2", half_pi_label(b, h));
    readout(b, {a + h + w, 2}, t);
}

void build_t1(Builder& b) {
    const auto& c = b.config();
    const auto t = readout_times(b);
    const Cycles li = init_with_reference(b, t);
    const bool log = c.word_or("tau_spacing", "linear") == "log";
    const bool with_pi = c.word_or("t1_pi_pulse", "no") == "yes";
    b.duration_sweep("tau", log);
    Cycles base = li;
    if (with_pi) {
        const Cycles w = b.dur_or("wait_time", kDefaultWaitNs);
        const Cycles pi = b.dur("pi_time");
        b.microwave({li + w, 0}, {pi, 0}, b.drive(), "pi_time", b.dur_label("pi_time"));
        base = li + w + pi;
    }
    readout(b, {base, 1}, t);
}

SweepAxis axis_for(MeasurementKind kind, const PulseProgram& p) {
    SweepAxis axis;
    const double clk = p.clock.generator_clock_hz();
    if (kind == MeasurementKind::ReadoutWindow) {
        axis.name = "window_start";
        axis.unit = "ns";
        Cycles first = -1;
        for (const auto& e : p.events) {
            const auto* tp = std::get_if<TriggerPayload>(&e.payload);
            if (!tp || !text::starts_with(tp->tag, std::string(kSignalTag) + "_")) continue;
            if (first < 0) first = e.start.base;
            axis.values.push_back(cycles_to_ns(e.start.base - first, clk));
        }
        return axis;
    }
    if (!p.sweep) {
        axis.name = "point";
        axis.values = {0.0};
        return axis;
    }
    axis.name = p.sweep->key;
    if (p.sweep->unit == SweepUnit::Hertz) {
        axis.unit = "Hz";
        for (auto v : p.sweep->values) axis.values.push_back(static_cast<double>(v));
    } else {
        axis.unit = "ns";
        for (auto v : p.sweep->values) axis.values.push_back(cycles_to_ns(v, clk));
    }
    return axis;
}

// Point index and column of a record, or false for records the layout does not know.
bool locate(MeasurementKind kind, const AcquisitionRecord& r, std::size_t& index, int& column) {
    if (kind == MeasurementKind::ReadoutWindow) {
        const auto& tag = r.window_tag;
        const auto us = tag.rfind('_');
        if (us == std::string::npos) return false;
        const auto head = std::string_view(tag).substr(0, us);
        const auto v = text::parse_int(std::string_view(tag).substr(us + 1));
        if (!v || *v < 0) return false;
        index = static_cast<std::size_t>(*v);
        if (head == kSignalTag) column = 0;
        else if (head == "pi") column = 2;
        else return false;
        return true;
    }
    index = r.sweep_index;
    if (r.window_tag == kSignalTag) column = 0;
    else if (r.window_tag == kReferenceTag) column = 1;
    else return false;
    return true;
}

double record_value(const AcquisitionRecord& r) {
    if (r.mode == ReadoutMode::Photon) return static_cast<double>(r.photon_count);
    if (r.analog_samples.empty()) return 0.0;
    double s = 0.0;
    for (double v : r.analog_samples) s += v;
    return s / static_cast<double>(r.analog_samples.size());
}

}  // namespace

bool has_reference(MeasurementKind kind) {
    switch (kind) {
        case MeasurementKind::Rabi:
        case MeasurementKind::Ramsey:
        case MeasurementKind::HahnEcho:
        case MeasurementKind::T1: return true;
        default: return false;
    }
}

ConfigSchema schema(MeasurementKind kind) {
    ConfigSchema s;
    s.kind = kind;
    auto& k = s.keys;
    add_common(k);
    switch (kind) {
        case MeasurementKind::PLIntensity: add_readout(k); break;
        case MeasurementKind::ODMR:
            add_readout(k);
            add_sweep(k, "mw_freq", ValueType::Frequency, "microwave frequency");
            k.push_back(key("mw_gain", ValueType::Gain, true, "microwave drive amplitude"));
            k.push_back(key("mw_phase", ValueType::Phase, false, "microwave phase (default 0 deg)"));
            break;
        case MeasurementKind::ReadoutWindow:
            k.push_back(key("laser_readout_time", ValueType::Duration, true, "readout laser pulse length"));
            add_coherent(k);
            add_drive(k, true);
            k.push_back(key("pi_time", ValueType::Duration, true, "calibrated pi pulse length"));
            k.push_back(key("slice_time", ValueType::Duration, false, "width of each readout slice (default 64 ns)"));
            break;
        case MeasurementKind::Rabi:
            add_readout(k);
            add_coherent(k);
            add_drive(k, true);
            add_sweep(k, "mw_time", ValueType::Duration, "microwave pulse length");
            break;
        case MeasurementKind::Ramsey:
            add_readout(k);
            add_coherent(k);
            add_drive(k, true);
            k.push_back(key("pi_time", ValueType::Duration, true, "calibrated pi pulse length"));
            k.push_back(key("ramsey_phase", ValueType::Phase, false, "phase of the second pi/2 pulse (default 180 deg)"));
            add_sweep(k, "tau", ValueType::Duration, "pulse separation");
            break;
        case MeasurementKind::HahnEcho:
            add_readout(k);
            add_coherent(k);
            add_drive(k, true);
            k.push_back(key("pi_time", ValueType::Duration, true, "calibrated pi pulse length"));
            add_sweep(k, "tau", ValueType::Duration, "echo half separation");
            k.push_back(choice_key("fit_stretched", {"yes", "no"}, "fit a stretched exponential (default no)"));
            break;
        case MeasurementKind::T1: {
            add_readout(k);
            add_coherent(k);
            add_sweep(k, "tau", ValueType::Duration, "dark delay");
            k.push_back(choice_key("tau_spacing", {"linear", "log"}, "delay spacing (default linear)"));
            k.push_back(choice_key("t1_pi_pulse", {"yes", "no"}, "start from ms=1 with a pi pulse (default no)"));
            auto gated = [&](KeySpec spec) {
                spec.required = false;
                spec.required_when = std::pair<std::string, std::string>{"t1_pi_pulse", "yes"};
                k.push_back(std::move(spec));
            };
            gated(mw_freq_key("mw_freq", false, "microwave drive frequency"));
            gated(key("mw_gain", ValueType::Gain, false, "microwave drive amplitude"));
            gated(key("pi_time", ValueType::Duration, false, "calibrated pi pulse length"));
            k.push_back(key("mw_phase", ValueType::Phase, false, "microwave phase (default 0 deg)"));
            break;
        }
    }
    return s;
}

std::string schema_table(const ConfigSchema& schema) {
    std::string out = "key\ttype\trequired\tdescription\n";
    for (const auto& k : schema.keys) {
        std::string type(to_string(k.type));
        if (!k.choices.empty()) {
            type += " (";
            for (std::size_t i = 0; i < k.choices.size(); ++i) type += (i ? "|" : "") + k.choices[i];
            type += ")";
        }
        std::string req = k.required ? "yes" : "no";
        if (k.required_when) req = "when " + k.required_when->first + "=" + k.required_when->second;
        out += k.key + "\t" + type + "\t" + req + "\t" + k.description + "\n";
    }
    return out;
}

PulseProgram build(MeasurementKind kind, const ExperimentConfig& config) {
    const auto report = validate_config(config, schema(kind));
    if (!report.ok) throw ConfigError(report);
    Builder b(config);
    switch (kind) {
        case MeasurementKind::PLIntensity: build_pl(b); break;
        case MeasurementKind::ODMR: build_odmr(b); break;
        case MeasurementKind::ReadoutWindow: build_readout_window(b); break;
        case MeasurementKind::Rabi: build_rabi(b); break;
        case MeasurementKind::Ramsey: build_ramsey(b); break;
        case MeasurementKind::HahnEcho: build_hahn(b); break;
        case MeasurementKind::T1: build_t1(b); break;
    }
    return b.take();
}

SweepAxis sweep_axis(MeasurementKind kind, const ExperimentConfig& config) { return axis_for(kind, build(kind, config)); }

InstrumentSettings instrument_settings(const ExperimentConfig& config, InstrumentSettings base) {
    if (const auto* v = config.find("readout_mode"); v && v->quantity == Quantity::Word) {
        if (const auto m = parse_readout_mode(v->word)) base.mode = *m;
    }
    base.dark_count_rate_hz = config.frequency_hz_or("dark_count_rate", base.dark_count_rate_hz);
    base.detection_efficiency = config.number_or("detection_efficiency", base.detection_efficiency);
    return base;
}

MeasurementResult run(MeasurementKind kind, const ExperimentConfig& config, const NvEnsembleParams& physics,
                      std::uint64_t seed) {
    RunOptions o;
    o.seed = seed;
    return run(kind, config, physics, o);
}

MeasurementResult run(MeasurementKind kind, const ExperimentConfig& config, const NvEnsembleParams& physics,
                      const RunOptions& options) {
    physics.validate();
    const auto program = build(kind, config);
    const auto stream = compile(program);
    const auto settings = instrument_settings(config, options.instrument);

    MeasurementResult res;
    res.kind = kind;
    res.config = config;
    res.physics = physics.to_kv();
    res.seed = options.seed;
    res.mode = settings.mode;
    res.axis = axis_for(kind, program);
    const std::size_t n = res.axis.values.size();

    // Columns: 0 signal, 1 reference, 2 pi (readout window).
    std::vector<double> sum[3];
    std::vector<std::size_t> cnt[3];
    for (int c = 0; c < 3; ++c) {
        sum[c].assign(n, 0.0);
        cnt[c].assign(n, 0);
    }
    auto mean = [&](int c, std::size_t i) { return cnt[c][i] ? sum[c][i] / static_cast<double>(cnt[c][i]) : 0.0; };
    const bool with_ref = has_reference(kind);

    std::size_t flushed = 0;
    auto flush_until = [&](std::size_t upto) {
        for (; flushed < std::min(upto, n); ++flushed) {
            if (!options.on_point) continue;
            PointUpdate u;
            u.index = flushed;
            u.n_points = n;
            u.axis_value = res.axis.values[flushed];
            u.signal = mean(0, flushed);
            if (with_ref) u.reference = mean(1, flushed);
            options.on_point(u);
        }
    };

    VirtualInstrument vi(physics, options.seed, settings);
    vi.execute(stream, [&](AcquisitionRecord&& r) {
        std::size_t idx = 0;
        int col = 0;
        if (kind != MeasurementKind::ReadoutWindow) flush_until(r.sweep_index);
        if (locate(kind, r, idx, col) && idx < n) {
            sum[col][idx] += record_value(r);
            ++cnt[col][idx];
        }
        if (options.keep_raw) res.raw.push_back(std::move(r));
    });

    res.signal.resize(n);
    for (std::size_t i = 0; i < n; ++i) res.signal[i] = mean(0, i);
    if (with_ref) {
        res.reference.resize(n);
        for (std::size_t i = 0; i < n; ++i) res.reference[i] = mean(1, i);
    }
    if (kind == MeasurementKind::ReadoutWindow) {
        auto& pi = res.columns["pi"];
        pi.resize(n);
        for (std::size_t i = 0; i < n; ++i) pi[i] = mean(2, i);
    }
    flush_until(n);
    if (options.analyze) analyze(res);
    return res;
}

void analyze(MeasurementResult& r) {
    r.fit.reset();
    r.readout_window.reset();
    const auto& x = r.axis.values;
    try {
        switch (r.kind) {
            case MeasurementKind::PLIntensity: break;
            case MeasurementKind::ODMR: r.fit = fit_odmr(x, r.signal); break;
            case MeasurementKind::ReadoutWindow: {
                if (r.mode != ReadoutMode::Photon) break;
                const std::size_t n = x.size();
                std::vector<std::int64_t> bright(n, 0), dark(n, 0);
                if (r.raw.empty()) {
                    // Per-slice means times the shot count recover the integer totals.
                    const double reps = r.config.number("inner_reps");
                    const auto& pi = r.columns.at("pi");
                    for (std::size_t i = 0; i < n; ++i) {
                        bright[i] = std::llround(r.signal[i] * reps);
                        dark[i] = std::llround(pi[i] * reps);
                    }
                }
                for (const auto& rec : r.raw) {
                    std::size_t idx = 0;
                    int col = 0;
                    if (!locate(r.kind, rec, idx, col) || idx >= n) continue;
                    (col == 0 ? bright : dark)[idx] += rec.photon_count;
                }
                r.readout_window = optimize_readout_window(x, bright, dark);
                break;
            }
            case MeasurementKind::Rabi: r.fit = fit_rabi(x, r.signal); break;
            case MeasurementKind::Ramsey: {
                auto f = fit_rabi(x, r.signal);
                f.derived.clear();
                f.derived_errors.clear();
                f.derived["detuning_hz"] = f.params["frequency"] * 1e9;
                f.derived_errors["detuning_hz"] = f.std_errors["frequency"] * 1e9;
                r.fit = std::move(f);
                break;
            }
            case MeasurementKind::HahnEcho: {
                const bool stretched = r.config.word_or("fit_stretched", "no") == "yes";
                auto f = fit_decay(x, r.signal, stretched);
                f.derived["t2"] = 2.0 * f.params["tau"];
                f.derived_errors["t2"] = 2.0 * f.std_errors["tau"];
                r.fit = std::move(f);
                break;
            }
            case MeasurementKind::T1: {
                auto f = fit_decay(x, r.signal, false);
                f.derived["t1"] = f.params["tau"];
                f.derived_errors["t1"] = f.std_errors["tau"];
                r.fit = std::move(f);
                break;
            }
        }
    } catch (const DimensionError&) {
        r.fit.reset();
        r.readout_window.reset();
    }
}

// ---------------------------------------------------------------------------
// Result document

namespace {

constexpr std::string_view kResultMagic = "# qdawg-result v1";

std::string join_doubles(const std::vector<double>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ',';
        out += text::format_double(v[i]);
    }
    return out;
}

std::vector<double> split_doubles(std::string_view s, int line) {
    std::vector<double> out;
    if (text::trim(s).empty()) return out;
    for (auto tok : text::split(s, ',')) {
        const auto v = text::parse_double(text::trim(tok));
        if (!v) throw ParseError("bad number in list", line);
        out.push_back(*v);
    }
    return out;
}

std::pair<std::string_view, std::string_view> kv_line(std::string_view ln, int line) {
    const auto eq = ln.find('=');
    if (eq == std::string_view::npos) throw ParseError("expected key = value", line);
    return {text::trim(ln.substr(0, eq)), text::trim(ln.substr(eq + 1))};
}

}  // namespace

std::string MeasurementResult::to_text() const {
    std::string out(kResultMagic);
    out += "\nkind = " + std::string(qdawg::to_string(kind)) + "\n";
    out += "seed = " + std::to_string(seed) + "\n";
    out += "mode = " + std::string(qdawg::to_string(mode)) + "\n";
    out += "axis = " + axis.name + (axis.unit.empty() ? "" : " " + axis.unit) + "\n";
    out += "[config]\n" + config.to_text();
    out += "[physics]\n" + physics.to_text();
    if (fit) out += "[fit]\n" + fit_to_text(*fit);
    if (readout_window) {
        const auto& w = *readout_window;
        out += "[readout_window]\n";
        out += "best_start = " + std::to_string(w.best_start) + "\n";
        out += "best_length = " + std::to_string(w.best_length) + "\n";
        out += "best_start_value = " + text::format_double(w.best_start_value) + "\n";
        out += "best_snr = " + text::format_double(w.best_snr) + "\n";
        out += "snr_curve = " + join_doubles(w.snr_curve) + "\n";
    }
    out += "[data]\naxis\tsignal";
    const bool ref = !reference.empty();
    if (ref) out += "\treference";
    for (const auto& [name, _] : columns) out += "\t" + name;
    out += "\n";
    for (std::size_t i = 0; i < axis.values.size(); ++i) {
        out += text::format_double(axis.values[i]);
        out += "\t" + text::format_double(i < signal.size() ? signal[i] : 0.0);
        if (ref) out += "\t" + text::format_double(reference.at(i));
        for (const auto& [name, col] : columns) out += "\t" + text::format_double(col.at(i));
        out += "\n";
    }
    out += "[raw]\n" + records_to_text(raw);
    return out;
}

MeasurementResult MeasurementResult::parse(std::string_view doc) {
    const auto lines = text::split(doc, '\n');
    if (lines.empty() || text::trim(lines[0]) != kResultMagic) throw ParseError("not a qdawg result document", 1);

    // Split into sections keyed by their [name] header line.
    std::map<std::string, std::pair<int, std::string>> sections;
    std::string current = "header";
    int start_line = 2;
    std::string body;
    auto close = [&] {
        if (sections.count(current)) throw ParseError("duplicate section [" + current + "]", start_line);
        sections[current] = {start_line, std::move(body)};
        body.clear();
    };
    for (std::size_t i = 1; i < lines.size(); ++i) {
        const auto ln = lines[i];
        if (current != "raw" && ln.size() >= 2 && ln.front() == '[' && ln.back() == ']') {
            close();
            current = std::string(ln.substr(1, ln.size() - 2));
            start_line = static_cast<int>(i) + 2;
            continue;
        }
        body.append(ln);
        body += '\n';
    }
    close();

    MeasurementResult r;
    bool have_kind = false;
    {
        const auto& [l0, hdr] = sections["header"];
        int line = l0 - 1;
        for (auto raw : text::split(hdr, '\n')) {
            ++line;
            const auto ln = text::trim(raw);
            if (ln.empty() || ln.front() == '#') continue;
            const auto [k, v] = kv_line(ln, line);
            if (k == "kind") {
                const auto kind = parse_measurement_kind(v);
                if (!kind) throw ParseError("unknown measurement kind '" + std::string(v) + "'", line);
                r.kind = *kind;
                have_kind = true;
            } else if (k == "seed") {
                std::uint64_t s = 0;
                const auto res = std::from_chars(v.data(), v.data() + v.size(), s);
                if (res.ec != std::errc{} || res.ptr != v.data() + v.size()) throw ParseError("bad seed", line);
                r.seed = s;
            } else if (k == "mode") {
                const auto m = parse_readout_mode(v);
                if (!m) throw ParseError("bad readout mode", line);
                r.mode = *m;
            } else if (k == "axis") {
                const auto parts = text::split_ws(v);
                if (parts.empty() || parts.size() > 2) throw ParseError("axis needs a name and optional unit", line);
                r.axis.name = std::string(parts[0]);
                r.axis.unit = parts.size() == 2 ? std::string(parts[1]) : std::string();
            } else {
                throw ParseError("unknown header key '" + std::string(k) + "'", line);
            }
        }
    }
    if (!have_kind) throw ParseError("result has no kind");
    for (const char* required : {"config", "physics", "data", "raw"})
        if (!sections.count(required)) throw ParseError(std::string("missing section [") + required + "]");

    r.config = ExperimentConfig(r.kind, KvDocument::parse(sections["config"].second));
    r.physics = KvDocument::parse(sections["physics"].second);
    if (sections.count("fit")) r.fit = fit_from_text(sections["fit"].second);
    if (sections.count("readout_window")) {
        ReadoutWindowChoice w;
        const auto& [l0, b] = sections["readout_window"];
        int line = l0 - 1;
        for (auto raw : text::split(b, '\n')) {
            ++line;
            const auto ln = text::trim(raw);
            if (ln.empty()) continue;
            const auto [k, v] = kv_line(ln, line);
            auto num = [&, v = v] {
                const auto d = text::parse_double(v);
                if (!d) throw ParseError("bad number", line);
                return *d;
            };
            auto index = [&, v = v] {
                const auto d = text::parse_int(v);
                if (!d || *d < 0) throw ParseError("bad index", line);
                return static_cast<std::size_t>(*d);
            };
            if (k == "best_start") w.best_start = index();
            else if (k == "best_length") w.best_length = index();
            else if (k == "best_start_value") w.best_start_value = num();
            else if (k == "best_snr") w.best_snr = num();
            else if (k == "snr_curve") w.snr_curve = split_doubles(v, line);
            else throw ParseError("unknown readout_window key '" + std::string(k) + "'", line);
        }
        r.readout_window = std::move(w);
    }
    {
        const auto& [l0, b] = sections["data"];
        const auto rows = text::split(b, '\n');
        std::vector<std::string> names;
        int line = l0 - 1;
        bool have_header = false;
        std::vector<std::vector<double>> cols;
        for (auto raw : rows) {
            ++line;
            if (text::trim(raw).empty()) continue;
            const auto cells = text::split(raw, '\t');
            if (!have_header) {
                for (auto c : cells) names.emplace_back(text::trim(c));
                if (names.size() < 2 || names[0] != "axis" || names[1] != "signal")
                    throw ParseError("data header must start with axis, signal", line);
                cols.resize(names.size());
                have_header = true;
                continue;
            }
            if (cells.size() != names.size()) throw ParseError("data row has the wrong number of cells", line);
            for (std::size_t c = 0; c < cells.size(); ++c) {
                const auto v = text::parse_double(text::trim(cells[c]));
                if (!v) throw ParseError("bad number in data row", line);
                cols[c].push_back(*v);
            }
        }
        if (!have_header) throw ParseError("data section has no header", l0);
        r.axis.values = std::move(cols[0]);
        r.signal = std::move(cols[1]);
        for (std::size_t c = 2; c < names.size(); ++c) {
            if (names[c] == "reference") r.reference = std::move(cols[c]);
            else r.columns[names[c]] = std::move(cols[c]);
        }
    }
    r.raw = records_from_text(sections["raw"].second);
    return r;
}

// ---------------------------------------------------------------------------
// Demo configs

ExperimentConfig demo_config(MeasurementKind kind) {
    std::string t =
        "mw_band_low = 2 GHz\n"
        "mw_band_high = 4 GHz\n";
    switch (kind) {
        case MeasurementKind::PLIntensity:
            t += "inner_reps = 100\n"
                 "laser_readout_time = 10 us\n"
                 "readout_time = 5 us\n"
                 "readout_delay = 2 us\n";
            break;
        case MeasurementKind::ODMR:
            t += "inner_reps = 200\n"
                 "mw_freq_start = 2.8 GHz\n"
                 "mw_freq_stop = 2.94 GHz\n"
                 "mw_freq_n_points = 71\n"
                 "mw_gain = 0.5\n"
                 "laser_readout_time = 10 us\n"
                 "readout_time = 8 us\n"
                 "readout_delay = 1 us\n";
            break;
        case MeasurementKind::ReadoutWindow:
            t += "inner_reps = 2000\n"
                 "laser_readout_time = 3 us\n"
                 "wait_time = 1 us\n"
                 "mw_freq = 2.845 GHz\n"
                 "mw_gain = 1\n"
                 "pi_time = 100 ns\n"
                 "slice_time = 64 ns\n";
            break;
        case MeasurementKind::Rabi:
            t += "inner_reps = 1000\n"
                 "laser_readout_time = 3 us\n"
                 "readout_time = 300 ns\n"
                 "wait_time = 1 us\n"
                 "mw_freq = 2.845 GHz\n"
                 "mw_gain = 1\n"
                 "mw_time_start = 0 ns\n"
                 "mw_time_stop = 500 ns\n"
                 "mw_time_n_points = 51\n";
            break;
        case MeasurementKind::Ramsey:
            t += "inner_reps = 1000\n"
                 "laser_readout_time = 3 us\n"
                 "readout_time = 300 ns\n"
                 "wait_time = 1 us\n"
                 "mw_freq = 2.847 GHz\n"
                 "mw_gain = 1\n"
                 "pi_time = 100 ns\n"
                 "tau_start = 100 ns\n"
                 "tau_stop = 2.1 us\n"
                 "tau_n_points = 51\n";
            break;
        case MeasurementKind::HahnEcho:
            t += "inner_reps = 1000\n"
                 "laser_readout_time = 3 us\n"
                 "readout_time = 300 ns\n"
                 "wait_time = 1 us\n"
                 "mw_freq = 2.845 GHz\n"
                 "mw_gain = 1\n"
                 "pi_time = 100 ns\n"
                 "tau_start = 1 us\n"
                 "tau_stop = 150 us\n"
                 "tau_n_points = 31\n";
            break;
        case MeasurementKind::T1:
            t += "inner_reps = 1000\n"
                 "laser_readout_time = 3 us\n"
                 "readout_time = 300 ns\n"
                 "tau_start = 1 us\n"
                 "tau_stop = 15 ms\n"
                 "tau_n_points = 25\n"
                 "tau_spacing = linear\n";
            break;
    }
    return ExperimentConfig::parse(kind, t);
}

NvEnsembleParams demo_physics() {
    NvEnsembleParams p;
    p.zero_field_splitting_hz = 2.87e9;
    p.bias_field_t = 25e6 / p.gyromagnetic_ratio_hz_per_t;
    p.rabi_rate_hz = 5e6;
    p.t2_s = 100e-6;
    p.t1_s = 5e-3;
    p.pl_rate_bright_hz = 20e6;
    return p;
}

}  // namespace qdawg
