#include <doctest.h>

#include <cmath>
#include <numbers>
#include <numeric>

#include "oracles.hpp"
#include "qdawg/compiler.hpp"
#include "qdawg/instrument.hpp"

using namespace qdawg;

namespace {

// init laser with reference window at its end, microwave of swept length, readout laser with signal window
PulseProgram rabi_program(std::vector<std::int64_t> mw_cycles, std::int64_t reps, double freq) {
    PulseProgram p;
    p.channels = {Channel{0, ChannelKind::LaserGate}, Channel{1, ChannelKind::MicrowaveGenerator, Band{2e9, 4e9}},
                  Channel{2, ChannelKind::ReadoutTrigger}};
    p.sweep = Sweep{"mw_time", SweepUnit::Cycles, std::move(mw_cycles)};
    p.inner_reps = reps;
    p.events.push_back({0, {0, 0}, {2000, 0}, LaserPayload{}, {}, {}});
    p.events.push_back({2, {1880, 0}, {120, 0}, TriggerPayload{"ref"}, {}, {}});
    p.events.push_back({1, {2040, 0}, {0, 1}, MicrowavePayload{freq, 0, 1.0, 0, Envelope::Constant}, {}, {}});
    p.events.push_back({0, {2080, 1}, {1200, 0}, LaserPayload{}, {}, {}});
    p.events.push_back({2, {2080, 1}, {120, 0}, TriggerPayload{"sig"}, {}, {}});
    return p;
}

}  // namespace

TEST_SUITE("instrument") {
    TEST_CASE("no trigger gives no records") {
        PulseProgram p;
        p.channels = ChannelMap{}.all();
        p.events.push_back({0, {0, 0}, {400, 0}, LaserPayload{}, {}, {}});
        CHECK(execute(compile(p), NvEnsembleParams{}, 1).empty());
    }

    TEST_CASE("record count, order and clock") {
        const auto p = rabi_program({4, 12, 20}, 2, 2.87e9);
        const auto s = compile(p);
        const auto recs = execute(s, NvEnsembleParams{}, 5);
        std::size_t triggers = 0;
        for (const auto& e : oracle::naive_expand(p)) triggers += std::holds_alternative<TriggerPayload>(e.payload);
        CHECK(recs.size() == 12);
        CHECK(recs.size() == triggers);
        for (std::size_t i = 1; i < recs.size(); ++i) {
            const auto& a = recs[i - 1];
            const auto& b = recs[i];
            CHECK(std::tie(a.sweep_index, a.rep_index, a.start_cycle) < std::tie(b.sweep_index, b.rep_index, b.start_cycle));
        }
        VirtualInstrument vi(NvEnsembleParams{}, 5);
        vi.execute(s, [](AcquisitionRecord&&) {});
        CHECK(vi.state().cycle_clock == s.meta.total_cycles);
    }

    TEST_CASE("determinism") {
        const auto s = compile(rabi_program({4, 40, 80}, 50, 2.87e9));
        const auto a = execute(s, NvEnsembleParams{}, 77);
        CHECK(records_to_binary(a) == records_to_binary(execute(s, NvEnsembleParams{}, 77)));
        CHECK(a != execute(s, NvEnsembleParams{}, 78));
    }

    TEST_CASE("invalid physics propagates") {
        NvEnsembleParams bad;
        bad.contrast = 2.0;
        CHECK_THROWS_AS(execute(compile(rabi_program({4}, 1, 2.87e9)), bad, 1), PhysicsError);
    }

    TEST_CASE("noiseless analog integrates the physics exactly") {
        NvEnsembleParams phys;
        InstrumentSettings st;
        st.mode = ReadoutMode::Analog;
        st.analog_noise_sigma = 0;
        st.dark_count_rate_hz = 0;
        const std::vector<std::int64_t> lens{0, 10, 20, 30, 40};  // 0..100 ns at 400 MHz
        const auto recs = execute(compile(rabi_program(lens, 1, phys.zero_field_splitting_hz)), phys, 3, st);
        REQUIRE(recs.size() == 10);
        for (const auto& r : recs) {
            CHECK(r.analog_samples.size() == static_cast<std::size_t>(std::llround(r.length_cycles * 2.5)));
            const double photons = std::accumulate(r.analog_samples.begin(), r.analog_samples.end(), 0.0) /
                                   st.analog_level_per_hz * 1e-9;  // 1 ns per sample
            const double tau_ns = lens[r.sweep_index] * 2.5;
            if (r.window_tag == "sig") {
                // 100 ns dark gaps on both sides of the pulse let T1 pull z toward -1/3
                const double e1 = std::exp(-100e-9 / phys.t1_s);
                const double z_gap = -1.0 / 3 + (1 + 1.0 / 3) * e1;
                const double z_pulse = z_gap * std::cos(2 * std::numbers::pi * phys.rabi_rate_hz * tau_ns * 1e-9);
                const double z_read = -1.0 / 3 + (z_pulse + 1.0 / 3) * e1;
                CHECK(photons == doctest::Approx(readout_integral((1 + z_read) / 2, 0, 300, 1.0, phys)).epsilon(1e-6));
            } else {
                CHECK(photons == doctest::Approx(readout_integral(1.0, 4700, 5000, 1.0, phys)).epsilon(1e-6));
            }
        }
    }

    TEST_CASE("count_photons") {
        CounterRng rng(9);
        for (int i = 0; i < 100; ++i) CHECK(count_photons(0.0, 1000, 1.0, rng) == 0);
        for (int i = 0; i < 100; ++i) CHECK(count_photons(1e6, 1000, 0.0, rng) == 0);
        CHECK_THROWS(count_photons(-1, 10, 1, rng));
        CHECK_THROWS(count_photons(1, -10, 1, rng));
        const int n = 100000;
        double sum = 0;
        for (int i = 0; i < n; ++i) sum += static_cast<double>(count_photons(1e6, 1000, 1.0, rng));
        CHECK(std::abs(sum / n - 1.0) < 3.0 / std::sqrt(n));
    }

    TEST_CASE("poisson fano factor") {
        for (double mean : {0.3, 3.0, 10.0, 25.0, 400.0}) {
            CounterRng rng(static_cast<std::uint64_t>(mean * 1000));
            const int n = 20000;
            double s = 0, s2 = 0;
            for (int i = 0; i < n; ++i) {
                const auto k = static_cast<double>(rng.poisson(mean));
                s += k;
                s2 += k * k;
            }
            const double m = s / n, var = (s2 - n * m * m) / (n - 1);
            CHECK(std::abs(m - mean) < 5 * std::sqrt(mean / n));
            CHECK(var / m > 0.9);
            CHECK(var / m < 1.1);
        }
    }

    TEST_CASE("sample_analog") {
        CounterRng rng(4);
        const auto flat = sample_analog(2e6, 1000, 0.0, rng);
        CHECK(flat.size() == 1000);
        for (double v : flat) CHECK(v == 2.0);
        CHECK_THROWS(sample_analog(1e6, 100, -1, rng));
        const auto noisy = sample_analog(1e6, 100000, 0.1, rng);
        double s = 0, s2 = 0;
        for (double v : noisy) {
            s += v;
            s2 += v * v;
        }
        const double n = static_cast<double>(noisy.size());
        const double var = (s2 - s * s / n) / (n - 1);
        CHECK(std::abs(var / 0.01 - 1.0) < 0.05);
    }

    TEST_CASE("record formats round trip") {
        InstrumentSettings analog;
        analog.mode = ReadoutMode::Analog;
        for (const auto& st : {InstrumentSettings{}, analog}) {
            const auto recs = execute(compile(rabi_program({4, 8}, 2, 2.87e9)), NvEnsembleParams{}, 12, st);
            CHECK(records_from_text(records_to_text(recs)) == recs);
            CHECK(records_from_binary(records_to_binary(recs)) == recs);
        }
        CHECK(records_to_text({}).find("sweep_index\trep_index") != std::string::npos);
        CHECK_THROWS_AS(records_from_text("nope\n"), ParseError);
        auto bin = records_to_binary({});
        bin.push_back(0);
        CHECK_THROWS_AS(records_from_binary(bin), ParseError);
    }

    TEST_CASE("counter rng is reproducible and seed dependent") {
        CounterRng a(1), b(1), c(2);
        for (int i = 0; i < 100; ++i) {
            const auto x = a.next_u64();
            CHECK(x == b.next_u64());
            CHECK(x != c.next_u64());
        }
        CounterRng z(0);
        CHECK(z.next_u64() == 0xE220A8397B1DCDAFULL);  // SplitMix64 reference output for seed 0
    }
}
