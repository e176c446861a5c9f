#include "qdawg/pulse_program.hpp"

#include <algorithm>
#include <tuple>

namespace qdawg {

bool Sweep::uniform() const {
    if (values.size() < 3) return true;
    const auto step = values[1] - values[0];
    for (std::size_t i = 2; i < values.size(); ++i)
        if (values[i] - values[i - 1] != step) return false;
    return true;
}

const Channel* PulseProgram::channel(ChannelId id) const {
    for (const auto& c : channels)
        if (c.id() == id) return &c;
    return nullptr;
}

Affine PulseProgram::effective_epoch() const {
    if (epoch) return *epoch;
    if (events.empty()) return {};
    Cycles slope = 0;
    for (const auto& e : events) slope = std::max(slope, e.start.per_sweep + e.length.per_sweep);
    Cycles base = 0;
    for (std::size_t i = 0; i < n_sweep_points(); ++i) {
        const auto v = sweep_value(i);
        for (const auto& e : events) {
            if (e.length.at(v) <= 0) continue;
            base = std::max(base, e.start.at(v) + e.length.at(v) - slope * v);
        }
    }
    return {base, slope};
}

Payload resolve_payload(const Payload& p, std::int64_t v) {
    if (const auto* mw = std::get_if<MicrowavePayload>(&p)) {
        auto r = *mw;
        r.freq_hz = mw->frequency_at(v);
        r.freq_per_sweep = 0.0;
        return r;
    }
    return p;
}

namespace {
auto payload_key(const Payload& p) {
    struct Key {
        std::size_t index;
        double a, b, c;
        int d;
        std::string tag;
    };
    return std::visit(
        [&](const auto& x) -> Key {
            using T = std::decay_t<decltype(x)>;
            if constexpr (std::is_same_v<T, MicrowavePayload>)
                return {p.index(), x.freq_hz, x.gain, x.phase_deg, static_cast<int>(x.envelope), {}};
            else if constexpr (std::is_same_v<T, LaserPayload>)
                return {p.index(), x.gain, 0, 0, 0, {}};
            else
                return {p.index(), 0, 0, 0, 0, x.tag};
        },
        p);
}
}  // namespace

bool canonical_less(const ExpandedEvent& a, const ExpandedEvent& b) {
    const auto ta = std::tie(a.sweep_index, a.rep_index, a.channel, a.start, a.length);
    const auto tb = std::tie(b.sweep_index, b.rep_index, b.channel, b.start, b.length);
    if (ta != tb) return ta < tb;
    const auto ka = payload_key(a.payload);
    const auto kb = payload_key(b.payload);
    return std::tie(ka.index, ka.a, ka.b, ka.c, ka.d, ka.tag) < std::tie(kb.index, kb.a, kb.b, kb.c, kb.d, kb.tag);
}

}  // namespace qdawg
