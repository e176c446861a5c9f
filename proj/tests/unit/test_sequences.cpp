#include <doctest.h>

#include <cmath>
#include <random>
#include <set>

#include "config_gen.hpp"
#include "oracles.hpp"
#include "qdawg/compiler.hpp"
#include "qdawg/errors.hpp"
#include "qdawg/sequences.hpp"

using namespace qdawg;

namespace {

ExperimentConfig with(ExperimentConfig c, const std::string& k, const std::string& v) {
    c.set(k, parse_value(v));
    return c;
}

bool schema_has(const ConfigSchema& s, const std::string& k) { return s.find(k) != nullptr; }

std::size_t count_channel(const PulseProgram& p, ChannelId ch) {
    std::size_t n = 0;
    for (const auto& e : p.events) n += e.channel == ch;
    return n;
}

double mean_of(const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

// Standard error of the per-point signal mean, from the raw records.
double mean_point_stderr(const MeasurementResult& r) {
    std::vector<std::vector<double>> per(r.n_points());
    for (const auto& rec : r.raw)
        if (rec.window_tag == kSignalTag) per[rec.sweep_index].push_back(static_cast<double>(rec.photon_count));
    double acc = 0;
    for (const auto& v : per) {
        const double m = mean_of(v);
        double ss = 0;
        for (double x : v) ss += (x - m) * (x - m);
        acc += std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
    }
    return acc / static_cast<double>(per.size());
}

}  // namespace

TEST_SUITE("sequences") {
    TEST_CASE("schemas name the documented keys") {
        const auto odmr = schema(MeasurementKind::ODMR);
        for (const char* k : {"mw_freq_start", "mw_freq_stop", "mw_freq_n_points", "mw_gain"}) CHECK(schema_has(odmr, k));
        CHECK(odmr.find("mw_freq_stop")->band_channel == ChannelKind::MicrowaveGenerator);
        const auto t1 = schema(MeasurementKind::T1);
        for (const char* k : {"tau_start", "tau_stop", "tau_n_points", "laser_init_time", "laser_readout_time"})
            CHECK(schema_has(t1, k));
        for (auto kind : {MeasurementKind::Ramsey, MeasurementKind::HahnEcho, MeasurementKind::ReadoutWindow})
            CHECK(schema_has(schema(kind), "pi_time"));
        for (auto kind : kAllMeasurementKinds) CHECK(schema(kind).kind == kind);
    }

    TEST_CASE("demo configs are valid and fully described by their schema") {
        for (auto kind : kAllMeasurementKinds) {
            const auto c = demo_config(kind);
            const auto s = schema(kind);
            const auto report = validate_config(c, s);
            CHECK_MESSAGE(report.ok, to_string(kind));
            CHECK(report.warnings.empty());
            for (const auto& [k, _] : c.entries().entries()) CHECK_MESSAGE(schema_has(s, k), k);
        }
    }

    TEST_CASE("missing key raises ConfigError with the report") {
        auto c = demo_config(MeasurementKind::ODMR);
        c.erase("mw_gain");
        try {
            (void)build(MeasurementKind::ODMR, c);
            FAIL("expected ConfigError");
        } catch (const ConfigError& e) {
            CHECK(e.report().missing_keys == std::vector<std::string>{"mw_gain"});
        }
        auto bad = with(demo_config(MeasurementKind::ODMR), "mw_freq_stop", "12 GHz");
        CHECK_THROWS_AS((void)build(MeasurementKind::ODMR, bad), ConfigError);
        auto long_window = with(demo_config(MeasurementKind::Rabi), "readout_time", "5 us");
        CHECK_THROWS_AS((void)build(MeasurementKind::Rabi, long_window), ConfigError);
        auto t1 = with(demo_config(MeasurementKind::T1), "t1_pi_pulse", "yes");
        try {
            (void)build(MeasurementKind::T1, t1);
            FAIL("expected ConfigError");
        } catch (const ConfigError& e) {
            CHECK(e.report().missing_keys.size() == 3);
        }
    }

    TEST_CASE("rabi sweeps only the microwave pulse length") {
        const auto p = build(MeasurementKind::Rabi, demo_config(MeasurementKind::Rabi));
        int swept = 0;
        for (const auto& e : p.events) {
            if (e.start.swept() || e.length.swept()) {
                ++swept;
                CHECK(e.channel == 1);
                CHECK_FALSE(e.start.swept());
                CHECK(e.length == Affine{0, 1});
                CHECK(e.label == "mw_time");
            }
            if (const auto* mw = std::get_if<MicrowavePayload>(&e.payload)) CHECK(mw->freq_per_sweep == 0.0);
        }
        CHECK(swept == 1);
        REQUIRE(p.sweep.has_value());
        CHECK(p.sweep->key == "mw_time");
        CHECK(p.sweep->values.size() == 51);
    }

    TEST_CASE("pl intensity has no microwave events") {
        const auto p = build(MeasurementKind::PLIntensity, demo_config(MeasurementKind::PLIntensity));
        CHECK(count_channel(p, 1) == 0);
        CHECK_FALSE(p.sweep.has_value());
    }

    TEST_CASE("hahn echo microwave count matches the decompile oracle") {
        auto c = with(demo_config(MeasurementKind::HahnEcho), "tau_n_points", "3");
        c = with(c, "inner_reps", "4");
        const auto p = build(MeasurementKind::HahnEcho, c);
        CHECK(count_channel(p, 1) == 3);
        std::size_t mw = 0;
        for (const auto& e : decompile(compile(p))) mw += e.channel == 1;
        CHECK(mw == 3 * 3 * 4);
        std::size_t naive = 0;
        for (const auto& e : oracle::naive_expand(p)) naive += e.channel == 1;
        CHECK(naive == mw);
    }

    TEST_CASE("random valid configs build timing-clean programs") {
        std::mt19937_64 rng(2024);
        for (auto kind : kAllMeasurementKinds) {
            for (int i = 0; i < 40; ++i) {
                const auto c = gen::random_config(kind, rng);
                const auto p = build(kind, c);
                const auto v = check_timing(p);
                CHECK_MESSAGE(v.empty(), to_string(kind), "\n", c.to_text());
                CHECK_NOTHROW((void)compile(p));
            }
        }
    }

    TEST_CASE("too-short pulse spacing is rejected as an overlap") {
        std::mt19937_64 rng(99);
        for (auto kind : {MeasurementKind::Ramsey, MeasurementKind::HahnEcho})
            for (int i = 0; i < 20; ++i) {
                const auto c = gen::overlapping_config(kind, rng);
                REQUIRE(c.has_value());
                const auto p = build(kind, *c);
                CHECK_FALSE(check_timing(p).empty());
                CHECK_THROWS_AS((void)compile(p), OverlapError);
            }
        CHECK_FALSE(gen::overlapping_config(MeasurementKind::Rabi, rng).has_value());
    }

    TEST_CASE("laser off reads the dark-count floor") {
        auto c = with(demo_config(MeasurementKind::PLIntensity), "laser_gain", "0");
        const auto r = run(MeasurementKind::PLIntensity, c, demo_physics(), 3);
        REQUIRE(r.signal.size() == 1);
        // 200 Hz over 5 us is 1e-3 expected counts per window.
        CHECK(r.signal[0] < 0.02);
        const auto on = run(MeasurementKind::PLIntensity, demo_config(MeasurementKind::PLIntensity), demo_physics(), 3);
        CHECK(on.signal[0] == doctest::Approx(100.0).epsilon(0.05));
        CHECK_FALSE(on.fit.has_value());
        CHECK(on.reference.empty());
    }

    TEST_CASE("odmr recovers the physics resonances") {
        const auto phys = demo_physics();
        const auto r = run(MeasurementKind::ODMR, demo_config(MeasurementKind::ODMR), phys, 11);
        REQUIRE(r.fit.has_value());
        REQUIRE(r.fit->n_dips() == 2);
        CHECK(std::abs(r.fit->param("center_0") - phys.lower_resonance_hz()) < 1e6);
        CHECK(std::abs(r.fit->param("center_1") - phys.upper_resonance_hz()) < 1e6);
        CHECK(r.signal.size() == 71);
        CHECK(r.reference.empty());
    }

    TEST_CASE("rabi fits with no visible damping still converge") {
        // These seeds put the best-fit decay on its lower bound of zero.
        for (std::uint64_t seed : {5001, 5016, 5040, 5073}) {
            RunOptions opt;
            opt.seed = seed;
            opt.keep_raw = false;
            const auto r = run(MeasurementKind::Rabi, demo_config(MeasurementKind::Rabi), demo_physics(), opt);
            REQUIRE(r.fit);
            CHECK(r.fit->converged);
            CHECK(r.fit->derived.at("pi_time") == doctest::Approx(100.0).epsilon(0.02));
        }
    }

    TEST_CASE("rabi period follows rabi rate times gain") {
        const auto phys = demo_physics();
        for (double gain : {1.0, 0.5}) {
            auto c = with(demo_config(MeasurementKind::Rabi), "mw_gain", std::to_string(gain));
            if (gain < 1.0) c = with(c, "mw_time_stop", "900 ns");
            const auto r = run(MeasurementKind::Rabi, c, phys, 5);
            REQUIRE(r.fit.has_value());
            const double period = 1.0 / r.fit->param("frequency");
            const double want = 1e9 / (phys.rabi_rate_hz * gain);
            CHECK(std::abs(period - want) < 0.03 * want);
            CHECK(r.reference.size() == r.signal.size());
        }
    }

    TEST_CASE("decay protocols fit their time constants") {
        const auto phys = demo_physics();
        auto hahn = with(demo_config(MeasurementKind::HahnEcho), "inner_reps", "20000");
        const auto h = run(MeasurementKind::HahnEcho, hahn, phys, 8);
        REQUIRE(h.fit.has_value());
        CHECK(h.fit->derived.at("t2") == doctest::Approx(phys.t2_s * 1e9).epsilon(0.15));

        auto t1 = with(demo_config(MeasurementKind::T1), "inner_reps", "20000");
        const auto t = run(MeasurementKind::T1, t1, phys, 8);
        REQUIRE(t.fit.has_value());
        CHECK(t.fit->derived.at("t1") == doctest::Approx(phys.t1_s * 1e9).epsilon(0.15));

        const auto ram = run(MeasurementKind::Ramsey, demo_config(MeasurementKind::Ramsey), phys, 8);
        REQUIRE(ram.fit.has_value());
        CHECK(ram.fit->derived.at("detuning_hz") == doctest::Approx(2e6).epsilon(0.05));
    }

    TEST_CASE("readout window finds the spin-contrast transient") {
        const auto r = run(MeasurementKind::ReadoutWindow, demo_config(MeasurementKind::ReadoutWindow), demo_physics(), 4);
        REQUIRE(r.readout_window.has_value());
        CHECK(r.reference.empty());
        REQUIRE(r.columns.count("pi") == 1);
        CHECK(r.signal.size() == r.n_points());
        CHECK(r.n_points() == 46);  // 3 us / 65 ns slices at 400 MHz
        const auto& w = *r.readout_window;
        CHECK(w.best_start == 0);
        CHECK(w.best_length >= 3);
        CHECK(w.best_length <= 20);
        // Brute force over the same integer traces.
        std::vector<std::int64_t> bright(r.n_points()), dark(r.n_points());
        for (const auto& rec : r.raw) {
            const auto us = rec.window_tag.rfind('_');
            const auto idx = std::stoul(rec.window_tag.substr(us + 1));
            (rec.window_tag.starts_with("sig") ? bright : dark)[idx] += rec.photon_count;
        }
        const auto bf = oracle::brute_force_window(bright, dark);
        CHECK(bf.start == w.best_start);
        CHECK(bf.length == w.best_length);
    }

    TEST_CASE("vanishing contrast leaves signal minus reference at zero") {
        auto phys = demo_physics();
        phys.contrast = 1e-12;
        auto c = with(demo_config(MeasurementKind::Rabi), "inner_reps", "10000");
        c = with(c, "mw_time_n_points", "5");
        const auto r = run(MeasurementKind::Rabi, c, phys, 21);
        std::vector<double> diff;
        // Per-shot differences pooled across points.
        std::vector<double> sig, ref;
        for (const auto& rec : r.raw) (rec.window_tag == kSignalTag ? sig : ref).push_back(double(rec.photon_count));
        REQUIRE(sig.size() == ref.size());
        for (std::size_t i = 0; i < sig.size(); ++i) diff.push_back(sig[i] - ref[i]);
        const double m = mean_of(diff);
        double ss = 0;
        for (double d : diff) ss += (d - m) * (d - m);
        const double se = std::sqrt(ss / double(diff.size() - 1) / double(diff.size()));
        CHECK(std::abs(m) < 4 * se);
    }

    TEST_CASE("four times the repetitions halves the standard error") {
        auto c = with(demo_config(MeasurementKind::Rabi), "mw_time_n_points", "6");
        const auto a = run(MeasurementKind::Rabi, with(c, "inner_reps", "400"), demo_physics(), 1);
        const auto b = run(MeasurementKind::Rabi, with(c, "inner_reps", "1600"), demo_physics(), 2);
        const double ratio = mean_point_stderr(a) / mean_point_stderr(b);
        CHECK(ratio == doctest::Approx(2.0).epsilon(0.2));
    }

    TEST_CASE("runs are deterministic in the seed and stream every point") {
        auto c = with(demo_config(MeasurementKind::Rabi), "inner_reps", "50");
        std::vector<PointUpdate> seen;
        RunOptions o;
        o.seed = 77;
        o.on_point = [&](const PointUpdate& u) { seen.push_back(u); };
        const auto a = run(MeasurementKind::Rabi, c, demo_physics(), o);
        const auto b = run(MeasurementKind::Rabi, c, demo_physics(), 77);
        CHECK(a.to_text() == b.to_text());
        CHECK(run(MeasurementKind::Rabi, c, demo_physics(), 78).to_text() != a.to_text());
        REQUIRE(seen.size() == a.n_points());
        for (std::size_t i = 0; i < seen.size(); ++i) {
            CHECK(seen[i].index == i);
            CHECK(seen[i].signal == a.signal[i]);
            CHECK(seen[i].reference.value() == a.reference[i]);
        }
    }

    TEST_CASE("analysis leaves raw records untouched") {
        auto r = run(MeasurementKind::Rabi, with(demo_config(MeasurementKind::Rabi), "inner_reps", "30"), demo_physics(), 3);
        const auto raw = r.raw;
        const auto signal = r.signal;
        analyze(r);
        CHECK(r.raw == raw);
        CHECK(r.signal == signal);
    }

    TEST_CASE("result documents round trip for every kind and mode") {
        for (auto kind : kAllMeasurementKinds) {
            for (const char* mode : {"photon", "analog"}) {
                auto c = with(demo_config(kind), "inner_reps", "3");
                c = with(c, "readout_mode", mode);
                const auto r = run(kind, c, demo_physics(), 9);
                const auto text = r.to_text();
                const auto back = MeasurementResult::parse(text);
                CHECK_MESSAGE(back == r, to_string(kind), " ", mode);
                CHECK(back.to_text() == text);
            }
        }
        CHECK_THROWS_AS(MeasurementResult::parse("nope\n"), ParseError);
        CHECK_THROWS_AS(MeasurementResult::parse("# qdawg-result v1\nkind = rabi\n"), ParseError);
    }

    TEST_CASE("physics errors propagate") {
        auto phys = demo_physics();
        phys.t2_s = -1;
        CHECK_THROWS_AS(run(MeasurementKind::Rabi, demo_config(MeasurementKind::Rabi), phys, 1), PhysicsError);
    }
}
