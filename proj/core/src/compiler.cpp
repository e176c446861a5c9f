#include "qdawg/compiler.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "qdawg/config.hpp"
#include "qdawg/errors.hpp"
#include "qdawg/text.hpp"

namespace qdawg {

std::string TimingViolation::describe(const PulseProgram& program) const {
    auto name = [&](std::size_t idx) {
        const auto& ev = program.events.at(idx);
        std::string s = "event #" + std::to_string(idx);
        if (!ev.label.empty()) s += " (" + ev.label + ")";
        return s;
    };
    std::ostringstream os;
    switch (kind) {
        case ViolationKind::Overlap:
            os << "channel " << int(channel) << ": " << name(first) << " overlaps " << name(second) << " by " << overlap_cycles
               << " cycles at sweep point " << sweep_index;
            break;
        case ViolationKind::EpochOverflow:
            os << "channel " << int(channel) << ": " << name(first) << " ends " << overlap_cycles
               << " cycles past the shot epoch at sweep point " << sweep_index;
            break;
        case ViolationKind::NegativeTiming:
            os << "channel " << int(channel) << ": " << name(first) << " has negative start or length at sweep point "
               << sweep_index;
            break;
    }
    return os.str();
}

std::vector<TimingViolation> check_timing(const PulseProgram& program) {
    std::vector<TimingViolation> out;
    const auto& evs = program.events;
    const auto epoch = program.effective_epoch();
    const auto n_points = program.n_sweep_points();

    for (std::size_t a = 0; a < evs.size(); ++a) {
        std::optional<TimingViolation> negative, overflow;
        for (std::size_t p = 0; p < n_points; ++p) {
            const auto v = program.sweep_value(p);
            const auto s = evs[a].start.at(v);
            const auto l = evs[a].length.at(v);
            if (s < 0 || l < 0) {
                if (!negative) negative = TimingViolation{ViolationKind::NegativeTiming, evs[a].channel, a, a, 0, p};
                continue;
            }
            if (l == 0) continue;
            const auto over = s + l - epoch.at(v);
            if (over > 0 && (!overflow || over > overflow->overlap_cycles))
                overflow = TimingViolation{ViolationKind::EpochOverflow, evs[a].channel, a, a, over, p};
        }
        if (negative) out.push_back(*negative);
        if (overflow) out.push_back(*overflow);
    }

    for (std::size_t a = 0; a < evs.size(); ++a) {
        for (std::size_t b = a + 1; b < evs.size(); ++b) {
            if (evs[a].channel != evs[b].channel) continue;
            std::optional<TimingViolation> worst;
            for (std::size_t p = 0; p < n_points; ++p) {
                const auto v = program.sweep_value(p);
                const auto sa = evs[a].start.at(v), la = evs[a].length.at(v);
                const auto sb = evs[b].start.at(v), lb = evs[b].length.at(v);
                if (la <= 0 || lb <= 0) continue;
                const auto overlap = std::min(sa + la, sb + lb) - std::max(sa, sb);
                if (overlap > 0 && (!worst || overlap > worst->overlap_cycles))
                    worst = TimingViolation{ViolationKind::Overlap, evs[a].channel, a, b, overlap, p};
            }
            if (worst) out.push_back(*worst);
        }
    }
    return out;
}

namespace {

bool payload_fits(const Payload& p, ChannelKind kind) {
    if (std::holds_alternative<MicrowavePayload>(p)) return kind == ChannelKind::MicrowaveGenerator;
    if (std::holds_alternative<LaserPayload>(p)) return kind == ChannelKind::LaserGate;
    return kind == ChannelKind::ReadoutTrigger || kind == ChannelKind::Digitizer;
}

int payload_rank(const Payload& p) {
    if (std::holds_alternative<TriggerPayload>(p)) return 1;
    return 0;
}

Affine relative(const Affine& a, std::int64_t v0) { return {a.base + a.per_sweep * v0, a.per_sweep}; }

bool valid_tag(const std::string& tag) {
    return !tag.empty() && tag.size() < 65536 && std::all_of(tag.begin(), tag.end(), [](char c) {
        return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-';
    });
}

void verify_program(const PulseProgram& program) {
    if (program.inner_reps < 1) throw std::invalid_argument("inner_reps must be >= 1");
    if (program.sweep && program.sweep->values.empty()) throw std::invalid_argument("sweep has no points");

    for (std::size_t k = 0; k < program.events.size(); ++k) {
        const auto& ev = program.events[k];
        const auto* ch = program.channel(ev.channel);
        if (!ch) throw std::invalid_argument("event #" + std::to_string(k) + " uses undeclared channel " + std::to_string(ev.channel));
        if (!payload_fits(ev.payload, ch->kind()))
            throw std::invalid_argument("event #" + std::to_string(k) + ": payload does not match channel kind " +
                                        std::string(to_string(ch->kind())));
        if (const auto* t = std::get_if<TriggerPayload>(&ev.payload); t && !valid_tag(t->tag))
            throw std::invalid_argument("event #" + std::to_string(k) + ": invalid trigger tag '" + t->tag + "'");
        if (const auto* l = std::get_if<LaserPayload>(&ev.payload); l && !(l->gain >= 0.0 && l->gain <= 1.0))
            throw std::invalid_argument("event #" + std::to_string(k) + ": laser gain outside [0, 1]");
        if (const auto* mw = std::get_if<MicrowavePayload>(&ev.payload)) {
            if (!(mw->gain >= 0.0 && mw->gain <= 1.0))
                throw std::invalid_argument("event #" + std::to_string(k) + ": microwave gain outside [0, 1]");
            for (std::size_t p = 0; p < program.n_sweep_points(); ++p) {
                const auto f = mw->frequency_at(program.sweep_value(p));
                if (!ch->band().contains(f))
                    throw BandError("event #" + std::to_string(k) + (ev.label.empty() ? "" : " (" + ev.label + ")") +
                                    ": frequency " + text::format_double(f) + " Hz outside generator band [" +
                                    text::format_double(ch->band().low_hz) + ", " + text::format_double(ch->band().high_hz) + "]");
            }
        }
    }
}

}  // namespace

InstructionStream compile(const PulseProgram& input) {
    PulseProgram program = input;
    if (program.channels.empty()) program.channels = ChannelMap{}.all();
    verify_program(program);

    const auto violations = check_timing(program);
    for (const auto& v : violations)
        if (v.kind == ViolationKind::Overlap) throw OverlapError(v.describe(program));
    for (const auto& v : violations)
        if (v.kind == ViolationKind::NegativeTiming) throw std::invalid_argument(v.describe(program));
    for (const auto& v : violations)
        if (v.kind == ViolationKind::EpochOverflow) throw EpochOverflowError(v.describe(program));

    InstructionStream out;
    out.meta.clock = program.clock;
    out.meta.channels = program.channels;
    out.meta.n_sweep_points = program.n_sweep_points();
    out.meta.inner_reps = program.inner_reps;

    const auto epoch = program.effective_epoch();
    const auto v0 = program.sweep_value(0);
    const auto n_points = program.n_sweep_points();
    const auto shots = static_cast<std::int64_t>(n_points) * program.inner_reps;

    bool epoch_nonzero = false;
    for (std::size_t p = 0; p < n_points; ++p) epoch_nonzero |= epoch.at(program.sweep_value(p)) > 0;
    if (program.events.empty() && !epoch_nonzero) {
        out.instructions.push_back(Instruction::halt());
        return out;
    }
    const bool sync = shots > 1;

    // Body of one shot, ordered by start at the first sweep point, channel, then declaration.
    std::vector<std::size_t> order(program.events.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const auto& ea = program.events[a];
        const auto& eb = program.events[b];
        return std::make_tuple(ea.start.at(v0), ea.channel, payload_rank(ea.payload)) <
               std::make_tuple(eb.start.at(v0), eb.channel, payload_rank(eb.payload));
    });

    struct Known {
        bool set = false;
        double freq = 0, slope = 0, gain = 0, phase = 0, env = 0;
    };
    std::array<Known, 256> known{};
    // A laser channel driven only at full gain relies on the power-on register value.
    for (const auto& ch : program.channels) {
        if (ch.kind() != ChannelKind::LaserGate) continue;
        const bool all_full = std::all_of(program.events.begin(), program.events.end(), [&](const PulseEvent& ev) {
            const auto* l = std::get_if<LaserPayload>(&ev.payload);
            return ev.channel != ch.id() || (l && l->gain == 1.0);
        });
        if (all_full) known[ch.id()] = Known{true, 0, 0, 1.0, 0, 0};
    }

    std::vector<Instruction> body;
    for (auto idx : order) {
        const auto& ev = program.events[idx];
        const auto t = relative(ev.start, v0);
        const auto len = relative(ev.length, v0);
        auto& k = known[ev.channel];
        std::visit(
            [&](const auto& p) {
                using T = std::decay_t<decltype(p)>;
                if constexpr (std::is_same_v<T, MicrowavePayload>) {
                    const double f0 = p.frequency_at(v0);
                    const double env = static_cast<double>(p.envelope);
                    if (!k.set || k.freq != f0 || k.slope != p.freq_per_sweep)
                        body.push_back(Instruction::set_param(ev.channel, t, ParamField::Frequency, f0, p.freq_per_sweep));
                    if (!k.set || k.gain != p.gain) body.push_back(Instruction::set_param(ev.channel, t, ParamField::Gain, p.gain));
                    if (!k.set || k.phase != p.phase_deg)
                        body.push_back(Instruction::set_param(ev.channel, t, ParamField::Phase, p.phase_deg));
                    if (!k.set || k.env != env) body.push_back(Instruction::set_param(ev.channel, t, ParamField::Envelope, env));
                    k = {true, f0, p.freq_per_sweep, p.gain, p.phase_deg, env};
                    body.push_back(Instruction::play(ev.channel, t, len));
                } else if constexpr (std::is_same_v<T, LaserPayload>) {
                    if (!k.set || k.gain != p.gain) body.push_back(Instruction::set_param(ev.channel, t, ParamField::Gain, p.gain));
                    k.set = true;
                    k.gain = p.gain;
                    body.push_back(Instruction::play(ev.channel, t, len));
                } else {
                    body.push_back(Instruction::trigger(ev.channel, t, len, p.tag));
                }
            },
            ev.payload);
    }
    if (sync) body.push_back(Instruction::sync(relative(epoch, v0)));

    auto& ins = out.instructions;
    auto emit_reps = [&] {
        if (program.inner_reps > 1) ins.push_back(Instruction::loop_begin(program.inner_reps, LoopRole::Repeat));
        ins.insert(ins.end(), body.begin(), body.end());
        if (program.inner_reps > 1) ins.push_back(Instruction::loop_end());
    };

    if (n_points == 1) {
        emit_reps();
    } else if (program.sweep->uniform()) {
        ins.push_back(Instruction::loop_begin(static_cast<std::int64_t>(n_points), LoopRole::Sweep));
        emit_reps();
        ins.push_back(Instruction::sweep_step(program.sweep->values[1] - program.sweep->values[0]));
        ins.push_back(Instruction::loop_end());
    } else {
        // Non-uniform axes (log-spaced) are unrolled: one block per point.
        for (std::size_t p = 0; p < n_points; ++p) {
            emit_reps();
            if (p + 1 < n_points) ins.push_back(Instruction::sweep_step(program.sweep->values[p + 1] - program.sweep->values[p]));
        }
    }
    ins.push_back(Instruction::halt());

    Cycles clock = 0;
    const auto sync_epoch = program.clock.cycles_per_sync_epoch();
    for (std::size_t p = 0; p < n_points; ++p) {
        const auto len = epoch.at(program.sweep_value(p));
        for (std::int64_t r = 0; r < program.inner_reps; ++r) clock = sync ? align_up(clock + len, sync_epoch) : clock + len;
    }
    out.meta.total_cycles = clock;
    return out;
}

std::vector<ExpandedEvent> decompile(const InstructionStream& stream) {
    std::vector<ExpandedEvent> out;
    walk(stream, [&](const Shot& shot) { out.insert(out.end(), shot.events.begin(), shot.events.end()); });
    return out;
}

}  // namespace qdawg
