#pragma once

// Independent reference implementations used by the unit and acceptance tests.
// Nothing here calls into the compiler, the walker or the analysis engine.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "qdawg/pulse_program.hpp"

namespace oracle {

/// Unrolls sweep (outer) and repetitions (inner) directly from the program.
inline std::vector<qdawg::ExpandedEvent> naive_expand(const qdawg::PulseProgram& p) {
    std::vector<qdawg::ExpandedEvent> out;
    const std::size_t points = p.sweep ? p.sweep->values.size() : 1;
    for (std::size_t i = 0; i < points; ++i) {
        const std::int64_t v = p.sweep ? p.sweep->values[i] : 0;
        for (std::int64_t r = 0; r < p.inner_reps; ++r) {
            for (const auto& e : p.events) {
                const auto len = e.length.base + e.length.per_sweep * v;
                if (len <= 0) continue;
                qdawg::ExpandedEvent x;
                x.sweep_index = i;
                x.rep_index = static_cast<std::size_t>(r);
                x.channel = e.channel;
                x.start = e.start.base + e.start.per_sweep * v;
                x.length = len;
                x.payload = e.payload;
                if (auto* mw = std::get_if<qdawg::MicrowavePayload>(&x.payload)) {
                    mw->freq_hz = mw->freq_hz + mw->freq_per_sweep * static_cast<double>(v);
                    mw->freq_per_sweep = 0.0;
                }
                out.push_back(std::move(x));
            }
        }
    }
    return out;
}

inline bool same_multiset(std::vector<qdawg::ExpandedEvent> a, std::vector<qdawg::ExpandedEvent> b) {
    std::sort(a.begin(), a.end(), qdawg::canonical_less);
    std::sort(b.begin(), b.end(), qdawg::canonical_less);
    return a == b;
}

/// Random program that satisfies every compile precondition: per-channel events
/// are laid end to end with non-negative gaps, all slopes are non-negative and
/// sweep values are non-negative, so no pair can overlap at any point.
inline qdawg::PulseProgram random_program(std::mt19937_64& rng) {
    using namespace qdawg;
    auto uni = [&](std::int64_t lo, std::int64_t hi) { return std::uniform_int_distribution<std::int64_t>(lo, hi)(rng); };
    auto real = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };

    PulseProgram p;
    const Cycles epochs[] = {1, 1, 4, 16};
    p.clock = ClockSpec(400e6, 1e9, epochs[uni(0, 3)]);
    p.channels = {Channel{0, ChannelKind::LaserGate}, Channel{1, ChannelKind::MicrowaveGenerator},
                  Channel{2, ChannelKind::ReadoutTrigger}, Channel{4, ChannelKind::LaserGate}};
    p.inner_reps = uni(1, 3);

    const int sweep_kind = static_cast<int>(uni(0, 3));  // none, uniform cycles, log cycles, hertz
    if (sweep_kind == 1) {
        Sweep s{"t", SweepUnit::Cycles, {}};
        const auto start = uni(0, 20), step = uni(1, 10), n = uni(1, 5);
        for (std::int64_t k = 0; k < n; ++k) s.values.push_back(start + k * step);
        p.sweep = s;
    } else if (sweep_kind == 2) {
        Sweep s{"t", SweepUnit::Cycles, {}};
        std::int64_t v = uni(0, 3);
        for (std::int64_t k = uni(2, 5); k > 0; --k) {
            s.values.push_back(v);
            v = v * 2 + uni(1, 4);
        }
        p.sweep = s;
    } else if (sweep_kind == 3) {
        Sweep s{"f", SweepUnit::Hertz, {}};
        const auto start = 7'000'000'000 + uni(0, 1000) * 1000, step = uni(1, 5000) * 1000;
        const bool jitter = uni(0, 1);
        for (std::int64_t k = 0, n = uni(1, 5); k < n; ++k)
            s.values.push_back(start + k * step + (jitter ? uni(0, 999) : 0));
        p.sweep = s;
    }
    const bool cycle_sweep = sweep_kind == 1 || sweep_kind == 2;

    const ChannelId ids[] = {0, 1, 2, 4};
    for (auto ch : ids) {
        Affine t{uni(0, 30), cycle_sweep ? uni(0, 2) : 0};
        for (auto n = uni(0, 4); n > 0; --n) {
            Affine len{uni(0, 40), cycle_sweep ? uni(0, 3) : 0};
            if (len.base == 0 && len.per_sweep == 0) len.base = 1;
            PulseEvent e;
            e.channel = ch;
            e.start = t;
            e.length = len;
            if (ch == 1) {
                MicrowavePayload mw;
                if (sweep_kind == 3 && uni(0, 1)) {
                    mw.freq_hz = 0.0;
                    mw.freq_per_sweep = 1.0;
                } else {
                    mw.freq_hz = static_cast<double>(6'500'000'000 + uni(0, 3000) * 1'000'000);
                }
                mw.gain = real(0.0, 1.0);
                mw.phase_deg = static_cast<double>(uni(0, 3) * 90);
                mw.envelope = uni(0, 1) ? Envelope::Constant : Envelope::GaussianEdge;
                e.payload = mw;
            } else if (ch == 2) {
                e.payload = TriggerPayload{uni(0, 1) ? "sig" : "ref_" + std::to_string(uni(0, 9))};
            } else {
                e.payload = LaserPayload{uni(0, 2) ? 1.0 : real(0.0, 1.0)};
            }
            p.events.push_back(e);
            t = Affine{t.base + len.base + uni(0, 20), t.per_sweep + len.per_sweep + (cycle_sweep ? uni(0, 1) : 0)};
        }
    }
    std::shuffle(p.events.begin(), p.events.end(), rng);
    return p;
}


/// Central finite-difference gradient of a scalar function of the parameters.
template <class F>
std::vector<double> fd_gradient(F&& f, std::vector<double> p) {
    std::vector<double> g(p.size());
    for (std::size_t k = 0; k < p.size(); ++k) {
        const double h = 1e-6 * std::max(std::abs(p[k]), 1e-2);
        const double keep = p[k];
        p[k] = keep + h;
        const double up = f(p);
        p[k] = keep - h;
        const double down = f(p);
        p[k] = keep;
        g[k] = (up - down) / (2.0 * h);
    }
    return g;
}

struct WindowPick {
    std::size_t start = 0, length = 0;
    double snr = 0.0;
};

/// Plain double loop over every (start, length), summing each window from scratch.
inline WindowPick brute_force_window(const std::vector<std::int64_t>& sig, const std::vector<std::int64_t>& ref) {
    WindowPick best;
    bool have = false;
    for (std::size_t s = 0; s < sig.size(); ++s)
        for (std::size_t e = s + 1; e <= sig.size(); ++e) {
            std::int64_t a = 0, b = 0;
            for (std::size_t i = s; i < e; ++i) {
                a += sig[i];
                b += ref[i];
            }
            const double snr = a + b == 0 ? 0.0 : static_cast<double>(a - b) / std::sqrt(static_cast<double>(a + b));
            const std::size_t len = e - s;
            const bool better = !have || snr > best.snr ||
                                (snr == best.snr && (len < best.length || (len == best.length && s < best.start)));
            if (better) {
                best = {s, len, snr};
                have = true;
            }
        }
    return best;
}

}  // namespace oracle
