#include "qdawg/instrument.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <stdexcept>

#include "byte_io.hpp"
#include "qdawg/errors.hpp"
#include "qdawg/text.hpp"

namespace qdawg {

std::string_view to_string(ReadoutMode m) { return m == ReadoutMode::Photon ? "photon" : "analog"; }

std::optional<ReadoutMode> parse_readout_mode(std::string_view s) {
    if (s == "photon") return ReadoutMode::Photon;
    if (s == "analog") return ReadoutMode::Analog;
    return std::nullopt;
}

void InstrumentSettings::validate() const {
    if (!(dark_count_rate_hz >= 0.0) || !std::isfinite(dark_count_rate_hz))
        throw std::invalid_argument("dark count rate must be >= 0");
    if (!(detection_efficiency >= 0.0 && detection_efficiency <= 1.0))
        throw std::invalid_argument("detection efficiency must lie in [0, 1]");
    if (!(analog_noise_sigma >= 0.0) || !std::isfinite(analog_noise_sigma))
        throw std::invalid_argument("analog noise sigma must be >= 0");
    if (!std::isfinite(analog_level_per_hz)) throw std::invalid_argument("analog scale must be finite");
}

std::int64_t count_photons(double rate_hz, double window_ns, double efficiency, CounterRng& rng) {
    if (!(rate_hz >= 0.0) || !(window_ns >= 0.0)) throw std::invalid_argument("rate and window must be >= 0");
    if (!(efficiency >= 0.0 && efficiency <= 1.0)) throw std::invalid_argument("efficiency must lie in [0, 1]");
    return rng.poisson(rate_hz * window_ns * 1e-9 * efficiency);
}

std::vector<double> sample_analog(double rate_hz, double window_ns, double noise_sigma, CounterRng& rng,
                                  double readout_clock_hz, double level_per_hz) {
    if (!(rate_hz >= 0.0) || !(window_ns >= 0.0)) throw std::invalid_argument("rate and window must be >= 0");
    if (!(noise_sigma >= 0.0)) throw std::invalid_argument("noise sigma must be >= 0");
    const auto n = static_cast<std::size_t>(ns_to_cycles(window_ns, readout_clock_hz));
    std::vector<double> out(n, rate_hz * level_per_hz);
    if (noise_sigma > 0.0)
        for (auto& v : out) v += noise_sigma * rng.normal();
    return out;
}

namespace {

// PL over one stretch of a shot with constant stimulus.
struct Piece {
    enum Kind { Dark, Pump, Steady } kind = Dark;
    double t0 = 0.0, t1 = 0.0;  // ns from shot start
    double gain = 0.0;          // laser drive
    double p0 = 1.0;            // Pump: population at piece start
    double rate = 0.0;          // Steady: constant PL rate

    double integral(double a, double b, const NvEnsembleParams& p) const {
        a = std::max(a, t0);
        b = std::min(b, t1);
        if (b <= a) return 0.0;
        switch (kind) {
            case Dark: return 0.0;
            case Pump: return readout_integral(p0, a - t0, b - t0, gain, p);
            case Steady: return rate * (b - a) * 1e-9;
        }
        return 0.0;
    }
};

struct Window {
    std::string tag;
    Cycles start = 0, length = 0;
    double expected = 0.0;             // photon mode: Poisson mean including dark counts
    std::vector<double> sample_means;  // analog mode: noiseless levels
};

struct ShotPlan {
    SpinEnsemble end_state;
    double end_detuning = 0.0;
    std::vector<Window> windows;
};

bool same_events(const std::vector<ExpandedEvent>& a, const std::vector<ExpandedEvent>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i].channel != b[i].channel || a[i].start != b[i].start || a[i].length != b[i].length ||
            a[i].payload != b[i].payload)
            return false;
    return true;
}

}  // namespace

VirtualInstrument::VirtualInstrument(NvEnsembleParams physics, std::uint64_t seed, InstrumentSettings settings)
    : physics_(physics), settings_(settings) {
    physics_.validate();
    settings_.validate();
    state_.rng_seed = seed;
}

Cycles VirtualInstrument::execute(const InstructionStream& stream, const Sink& sink) {
    const auto& p = physics_;
    const auto& meta = stream.meta;
    const double ns_per_cycle = 1e9 / meta.clock.generator_clock_hz();
    const double samples_per_cycle = meta.clock.readout_ratio();
    CounterRng rng(state_.rng_seed);
    SpinEnsemble spins(p);
    std::map<ChannelId, ChannelRegisterState> regs;
    double mw_detuning = 0.0;
    Cycles prev_end = 0;

    struct CacheEntry {
        SpinEnsemble start;
        double start_detuning;
        std::vector<ExpandedEvent> events;
        ShotPlan plan;
    };
    std::optional<CacheEntry> cache;

    const auto plan_shot = [&](const Shot& shot) {
        const double shot_ns = static_cast<double>(shot.length_cycles) * ns_per_cycle;
        std::vector<double> cuts{0.0, shot_ns};
        std::vector<const ExpandedEvent*> lasers, mws, triggers;
        for (const auto& e : shot.events) {
            if (std::holds_alternative<TriggerPayload>(e.payload)) {
                triggers.push_back(&e);
                continue;
            }
            (std::holds_alternative<LaserPayload>(e.payload) ? lasers : mws).push_back(&e);
            cuts.push_back(static_cast<double>(e.start) * ns_per_cycle);
            cuts.push_back(static_cast<double>(e.start + e.length) * ns_per_cycle);
        }
        std::sort(cuts.begin(), cuts.end());
        cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());

        const auto active = [&](const std::vector<const ExpandedEvent*>& evs, double t) -> const ExpandedEvent* {
            for (const auto* e : evs) {
                const double a = static_cast<double>(e->start) * ns_per_cycle;
                const double b = static_cast<double>(e->start + e->length) * ns_per_cycle;
                if (a <= t && t < b) return e;
            }
            return nullptr;
        };

        std::vector<Piece> pieces;
        for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
            const double a = cuts[i], b = cuts[i + 1];
            if (b <= a || a >= shot_ns) continue;
            const double mid = 0.5 * (a + b);
            const auto* laser = active(lasers, mid);
            const auto* mw = active(mws, mid);
            const double lg = laser ? std::get<LaserPayload>(laser->payload).gain : 0.0;
            const MicrowavePayload* mp = mw ? &std::get<MicrowavePayload>(mw->payload) : nullptr;
            if (mp) mw_detuning = detuning_hz(mp->freq_hz, p);
            const bool driving = mp && mp->gain > 0.0;
            Piece piece;
            piece.t0 = a;
            piece.t1 = b;
            if (lg > 0.0 && driving) {
                // CW ODMR: pumping and driving balance; dip depth follows the Lorentzians.
                piece.kind = Piece::Steady;
                piece.rate = lg * odmr_pl_rate(mp->freq_hz, p);
                const double dips = lorentzian(mp->freq_hz, p.lower_resonance_hz(), p.linewidth_hz) +
                                    lorentzian(mp->freq_hz, p.upper_resonance_hz(), p.linewidth_hz);
                spins.set_steady_state(std::clamp(1.0 - dips, 0.0, 1.0));
            } else if (lg > 0.0) {
                piece.kind = Piece::Pump;
                piece.gain = lg;
                piece.p0 = spins.mean_p0();
                spins.pump(b - a, lg);
            } else if (driving) {
                spins.pulse(b - a, p.rabi_rate_hz * mp->gain, mw_detuning, mp->phase_deg);
            } else {
                spins.free_evolve(b - a, mw_detuning);
            }
            pieces.push_back(piece);
        }

        std::sort(triggers.begin(), triggers.end(), [](const ExpandedEvent* x, const ExpandedEvent* y) {
            if (x->start != y->start) return x->start < y->start;
            return std::get<TriggerPayload>(x->payload).tag < std::get<TriggerPayload>(y->payload).tag;
        });
        const auto integrate = [&](double a, double b) {
            double s = 0.0;
            for (const auto& pc : pieces)
                if (pc.t1 > a && pc.t0 < b) s += pc.integral(a, b, p);
            return s;
        };
        ShotPlan plan{spins, 0.0, {}};
        for (const auto* e : triggers) {
            Window w;
            w.tag = std::get<TriggerPayload>(e->payload).tag;
            w.start = e->start;
            w.length = e->length;
            const double a = static_cast<double>(e->start) * ns_per_cycle;
            const double b = static_cast<double>(e->start + e->length) * ns_per_cycle;
            if (settings_.mode == ReadoutMode::Photon) {
                w.expected = settings_.detection_efficiency * integrate(a, b) + settings_.dark_count_rate_hz * (b - a) * 1e-9;
            } else {
                const auto n = static_cast<std::size_t>(std::llround(static_cast<double>(e->length) * samples_per_cycle));
                const double dt = n ? (b - a) / static_cast<double>(n) : 0.0;
                w.sample_means.resize(n);
                for (std::size_t j = 0; j < n; ++j) {
                    const double s0 = a + dt * static_cast<double>(j);
                    const double rate = settings_.detection_efficiency * integrate(s0, s0 + dt) / (dt * 1e-9) +
                                        settings_.dark_count_rate_hz;
                    w.sample_means[j] = rate * settings_.analog_level_per_hz;
                }
            }
            plan.windows.push_back(std::move(w));
        }
        plan.end_state = spins;
        plan.end_detuning = mw_detuning;
        return plan;
    };

    const auto on_shot = [&](const Shot& shot) {
        if (shot.start_cycle > prev_end)
            spins.free_evolve(static_cast<double>(shot.start_cycle - prev_end) * ns_per_cycle, mw_detuning);
        prev_end = shot.start_cycle + shot.length_cycles;
        state_.cycle_clock = shot.start_cycle;

        for (const auto& e : shot.events) {
            if (const auto* mp = std::get_if<MicrowavePayload>(&e.payload))
                regs[e.channel] = {mp->freq_hz, mp->gain, mp->phase_deg};
            else if (const auto* lp = std::get_if<LaserPayload>(&e.payload))
                regs[e.channel].gain = lp->gain;
        }

        const ShotPlan* plan = nullptr;
        if (cache && cache->start == spins && cache->start_detuning == mw_detuning && same_events(cache->events, shot.events)) {
            spins = cache->plan.end_state;
            plan = &cache->plan;
        } else {
            SpinEnsemble start = spins;
            const double start_detuning = mw_detuning;
            auto fresh = plan_shot(shot);
            cache = CacheEntry{std::move(start), start_detuning, shot.events, std::move(fresh)};
            plan = &cache->plan;
        }
        mw_detuning = plan->end_detuning;

        for (const auto& w : plan->windows) {
            AcquisitionRecord r;
            r.sweep_index = shot.sweep_index;
            r.rep_index = shot.rep_index;
            r.window_tag = w.tag;
            r.start_cycle = shot.start_cycle + w.start;
            r.length_cycles = w.length;
            r.mode = settings_.mode;
            if (settings_.mode == ReadoutMode::Photon) {
                r.photon_count = rng.poisson(w.expected);
            } else {
                r.analog_samples = w.sample_means;
                if (settings_.analog_noise_sigma > 0.0)
                    for (auto& v : r.analog_samples) v += settings_.analog_noise_sigma * rng.normal();
            }
            sink(std::move(r));
        }
    };

    state_.cycle_clock = walk(stream, on_shot);
    state_.laser_on = false;
    state_.registers.assign(regs.begin(), regs.end());
    return state_.cycle_clock;
}

std::vector<AcquisitionRecord> execute(const InstructionStream& stream, const NvEnsembleParams& physics,
                                       std::uint64_t seed, const InstrumentSettings& settings) {
    std::vector<AcquisitionRecord> out;
    VirtualInstrument(physics, seed, settings).execute(stream, [&](AcquisitionRecord&& r) { out.push_back(std::move(r)); });
    return out;
}

// ---------------------------------------------------------------------------
// Record formats

namespace {

constexpr std::string_view kTextHeader = "# qdawg-records v1";
constexpr std::string_view kColumns =
    "sweep_index\trep_index\twindow_tag\tstart_cycle\tlength_cycles\tmode\tphoton_count\tanalog_samples";
constexpr char kRecMagic[8] = {'Q', 'D', 'W', 'G', 'R', 'E', 'C', '1'};

}  // namespace

std::string records_to_text(std::span<const AcquisitionRecord> records) {
    std::string out;
    out += kTextHeader;
    out += '\n';
    out += kColumns;
    out += '\n';
    for (const auto& r : records) {
        out += std::to_string(r.sweep_index) + '\t' + std::to_string(r.rep_index) + '\t' + r.window_tag + '\t' +
               std::to_string(r.start_cycle) + '\t' + std::to_string(r.length_cycles) + '\t' +
               std::string(to_string(r.mode)) + '\t' + std::to_string(r.photon_count) + '\t';
        for (std::size_t i = 0; i < r.analog_samples.size(); ++i) {
            if (i) out += ',';
            out += text::format_double(r.analog_samples[i]);
        }
        out += '\n';
    }
    return out;
}

std::vector<AcquisitionRecord> records_from_text(std::string_view input) {
    std::vector<AcquisitionRecord> out;
    int line_no = 0;
    bool seen_columns = false;
    for (auto line : text::split(input, '\n')) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line.empty() || line.front() == '#') continue;
        if (!seen_columns) {
            if (line != kColumns) throw ParseError("unexpected record columns", line_no);
            seen_columns = true;
            continue;
        }
        const auto f = text::split(line, '\t');
        if (f.size() != 8) throw ParseError("expected 8 tab-separated fields", line_no);
        const auto num = [&](std::string_view s) {
            const auto v = text::parse_int(s);
            if (!v) throw ParseError("bad integer '" + std::string(s) + "'", line_no);
            return *v;
        };
        AcquisitionRecord r;
        const auto sweep = num(f[0]), rep = num(f[1]);
        if (sweep < 0 || rep < 0) throw ParseError("negative index", line_no);
        r.sweep_index = static_cast<std::size_t>(sweep);
        r.rep_index = static_cast<std::size_t>(rep);
        r.window_tag = std::string(f[2]);
        r.start_cycle = num(f[3]);
        r.length_cycles = num(f[4]);
        const auto mode = parse_readout_mode(f[5]);
        if (!mode) throw ParseError("bad readout mode '" + std::string(f[5]) + "'", line_no);
        r.mode = *mode;
        r.photon_count = num(f[6]);
        if (!f[7].empty())
            for (auto s : text::split(f[7], ',')) {
                const auto v = text::parse_double(s);
                if (!v) throw ParseError("bad sample '" + std::string(s) + "'", line_no);
                r.analog_samples.push_back(*v);
            }
        out.push_back(std::move(r));
    }
    if (!seen_columns) throw ParseError("missing record column header");
    return out;
}

std::vector<std::uint8_t> records_to_binary(std::span<const AcquisitionRecord> records) {
    detail::Writer w;
    w.bytes({kRecMagic, sizeof kRecMagic});
    w.put<std::uint64_t>(records.size());
    for (const auto& r : records) {
        w.put<std::uint64_t>(r.sweep_index);
        w.put<std::uint64_t>(r.rep_index);
        w.put<std::uint16_t>(static_cast<std::uint16_t>(r.window_tag.size()));
        w.bytes(r.window_tag);
        w.put<std::int64_t>(r.start_cycle);
        w.put<std::int64_t>(r.length_cycles);
        w.put<std::uint8_t>(static_cast<std::uint8_t>(r.mode));
        w.put<std::int64_t>(r.photon_count);
        w.put<std::uint32_t>(static_cast<std::uint32_t>(r.analog_samples.size()));
        for (double v : r.analog_samples) w.put<double>(v);
    }
    return std::move(w.out);
}

std::vector<AcquisitionRecord> records_from_binary(std::span<const std::uint8_t> bytes) {
    detail::Reader<ParseError> in(bytes);
    if (in.bytes(sizeof kRecMagic) != std::string_view(kRecMagic, sizeof kRecMagic))
        throw ParseError("not a record file (bad magic)");
    const auto n = in.get<std::uint64_t>();
    std::vector<AcquisitionRecord> out;
    for (std::uint64_t i = 0; i < n; ++i) {
        AcquisitionRecord r;
        r.sweep_index = in.get<std::uint64_t>();
        r.rep_index = in.get<std::uint64_t>();
        r.window_tag = in.bytes(in.get<std::uint16_t>());
        r.start_cycle = in.get<std::int64_t>();
        r.length_cycles = in.get<std::int64_t>();
        const auto mode = in.get<std::uint8_t>();
        if (mode > 1) throw ParseError("bad readout mode byte");
        r.mode = static_cast<ReadoutMode>(mode);
        r.photon_count = in.get<std::int64_t>();
        const auto ns = in.get<std::uint32_t>();
        in.need(static_cast<std::size_t>(ns) * 8);
        r.analog_samples.resize(ns);
        for (auto& v : r.analog_samples) v = in.get<double>();
        out.push_back(std::move(r));
    }
    if (!in.done()) throw ParseError("trailing bytes after records");
    return out;
}

}  // namespace qdawg
