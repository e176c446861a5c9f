#include <doctest.h>

#include <random>

#include "oracles.hpp"
#include "qdawg/compiler.hpp"
#include "qdawg/config.hpp"
#include "qdawg/errors.hpp"

using namespace qdawg;

namespace {

PulseProgram base_program() {
    PulseProgram p;
    p.channels = ChannelMap{}.all();
    return p;
}

PulseEvent laser(Cycles start, Cycles len) { return {0, {start, 0}, {len, 0}, LaserPayload{}, {}, {}}; }

PulseProgram rabi_like(std::size_t n_points, std::int64_t reps) {
    auto p = base_program();
    Sweep s{"mw_time", SweepUnit::Cycles, {}};
    for (std::size_t i = 0; i < n_points; ++i) s.values.push_back(static_cast<std::int64_t>(4 + 8 * i));
    p.sweep = s;
    p.inner_reps = reps;
    p.events.push_back(laser(0, 400));
    p.events.push_back({2, {300, 0}, {100, 0}, TriggerPayload{"ref"}, {}, {}});
    p.events.push_back({1, {440, 0}, {0, 1}, MicrowavePayload{7e9, 0, 0.5, 0, Envelope::Constant}, "mw_time", {}});
    p.events.push_back({0, {480, 1}, {400, 0}, LaserPayload{}, {}, {}});
    p.events.push_back({2, {480, 1}, {100, 0}, TriggerPayload{"sig"}, {}, {}});
    return p;
}

}  // namespace

TEST_SUITE("compiler") {
    TEST_CASE("empty program") {
        const auto s = compile(base_program());
        REQUIRE(s.instructions.size() == 1);
        CHECK(s.instructions[0].op == Opcode::Halt);
        CHECK(s.meta.total_cycles == 0);
        CHECK(decompile(s).empty());
    }

    TEST_CASE("single laser pulse") {
        auto p = base_program();
        p.events.push_back(laser(0, ns_to_cycles(1000, 400e6)));
        const auto s = compile(p);
        REQUIRE(s.instructions.size() == 2);
        CHECK(s.instructions[0] == Instruction::play(0, {0, 0}, {400, 0}));
        CHECK(s.instructions[1].op == Opcode::Halt);
        CHECK(s.meta.total_cycles == 400);
    }

    TEST_CASE("rabi sweep matches naive expansion") {
        const auto p = rabi_like(3, 2);
        const auto s = compile(p);
        const auto got = decompile(s);
        CHECK(got.size() == 3 * 2 * 5);
        CHECK(oracle::same_multiset(got, oracle::naive_expand(p)));
        CHECK(s.meta.n_sweep_points == 3);
        CHECK(s.meta.inner_reps == 2);
    }

    TEST_CASE("sync at every repetition boundary") {
        auto p = rabi_like(3, 2);
        p.clock = ClockSpec(400e6, 1e9, 16);
        const auto s = compile(p);
        Cycles last_end = 0;
        std::size_t shots = 0;
        walk(s, [&](const Shot& shot) {
            CHECK(shot.start_cycle % 16 == 0);
            CHECK(shot.start_cycle >= last_end);
            last_end = shot.start_cycle + shot.length_cycles;
            ++shots;
        });
        CHECK(shots == 6);
        CHECK(s.meta.total_cycles == align_up(last_end, 16));
    }

    TEST_CASE("randomized round trip") {
        std::mt19937_64 rng(20240611);
        for (int i = 0; i < 200; ++i) {
            const auto p = oracle::random_program(rng);
            REQUIRE(check_timing(p).empty());
            const auto s = compile(p);
            CHECK(oracle::same_multiset(decompile(s), oracle::naive_expand(p)));
            CHECK(to_binary(compile(p)) == to_binary(s));
        }
    }

    TEST_CASE("total cycles equals summed aligned shot lengths") {
        std::mt19937_64 rng(99);
        for (int i = 0; i < 100; ++i) {
            const auto p = oracle::random_program(rng);
            const auto s = compile(p);
            const auto epoch = p.effective_epoch();
            const auto E = p.clock.cycles_per_sync_epoch();
            const auto shots = static_cast<std::int64_t>(p.n_sweep_points()) * p.inner_reps;
            Cycles t = 0;
            if (p.events.empty()) {
                CHECK(s.meta.total_cycles == 0);
                continue;
            }
            for (std::size_t k = 0; k < p.n_sweep_points(); ++k)
                for (std::int64_t r = 0; r < p.inner_reps; ++r) {
                    const auto len = epoch.at(p.sweep_value(k));
                    t = shots > 1 ? align_up(t + len, E) : t + len;
                }
            CHECK(s.meta.total_cycles == t);
        }
    }

    TEST_CASE("check_timing examples") {
        auto p = base_program();
        p.events = {laser(0, 100), laser(50, 100)};
        auto v = check_timing(p);
        REQUIRE(v.size() == 1);
        CHECK(v[0].kind == ViolationKind::Overlap);
        CHECK(v[0].overlap_cycles == 50);
        CHECK(v[0].first == 0);
        CHECK(v[0].second == 1);
        CHECK(v[0].describe(p).find("overlaps") != std::string::npos);
        CHECK_THROWS_AS(compile(p), OverlapError);

        p.events = {laser(0, 100), laser(100, 100)};
        CHECK(check_timing(p).empty());

        p.events = {laser(0, 100), {2, {0, 0}, {100, 0}, TriggerPayload{"x"}, {}, {}}};
        CHECK(check_timing(p).empty());
    }

    TEST_CASE("swept overlap reported at worst point") {
        auto p = base_program();
        p.sweep = Sweep{"t", SweepUnit::Cycles, {0, 10, 20}};
        p.events = {{0, {0, 0}, {100, 1}, LaserPayload{}, {}, {}}, laser(105, 50)};
        const auto v = check_timing(p);
        REQUIRE(v.size() == 1);
        CHECK(v[0].sweep_index == 2);
        CHECK(v[0].overlap_cycles == 15);
    }

    TEST_CASE("epoch overflow") {
        auto p = base_program();
        p.events = {laser(0, 100)};
        p.epoch = Affine{80, 0};
        const auto v = check_timing(p);
        REQUIRE(v.size() == 1);
        CHECK(v[0].kind == ViolationKind::EpochOverflow);
        CHECK_THROWS_AS(compile(p), EpochOverflowError);
    }

    TEST_CASE("band and payload errors") {
        auto p = base_program();
        p.events = {{1, {0, 0}, {10, 0}, MicrowavePayload{12e9, 0, 0.5, 0, Envelope::Constant}, {}, {}}};
        CHECK_THROWS_AS(compile(p), BandError);
        p.events = {{1, {0, 0}, {10, 0}, LaserPayload{}, {}, {}}};
        CHECK_THROWS_AS(compile(p), std::invalid_argument);
        p.sweep = Sweep{"f", SweepUnit::Hertz, {9'000'000'000, 11'000'000'000}};
        p.events = {{1, {0, 0}, {10, 0}, MicrowavePayload{0, 1.0, 0.5, 0, Envelope::Constant}, {}, {}}};
        CHECK_THROWS_AS(compile(p), BandError);
    }

    TEST_CASE("compile succeeds iff no overlap") {
        std::mt19937_64 rng(7);
        std::uniform_int_distribution<Cycles> t(0, 60), l(1, 30);
        for (int i = 0; i < 300; ++i) {
            auto p = base_program();
            for (int k = 0; k < 3; ++k) p.events.push_back(laser(t(rng), l(rng)));
            bool overlap = false;
            for (const auto& v : check_timing(p)) overlap |= v.kind == ViolationKind::Overlap;
            bool threw = false;
            try {
                compile(p);
            } catch (const OverlapError&) {
                threw = true;
            }
            CHECK(threw == overlap);
        }
    }
}
