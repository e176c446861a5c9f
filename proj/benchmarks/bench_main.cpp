#include <benchmark/benchmark.h>

#include <random>

#include "qdawg/analysis.hpp"
#include "qdawg/compiler.hpp"
#include "qdawg/diagram.hpp"
#include "qdawg/instrument.hpp"
#include "qdawg/sequences.hpp"
#include "qdawg/stream.hpp"

using namespace qdawg;

namespace {

void BM_BuildAndCompile(benchmark::State& state) {
    const auto kind = static_cast<MeasurementKind>(state.range(0));
    const auto cfg = demo_config(kind);
    for (auto _ : state) benchmark::DoNotOptimize(compile(build(kind, cfg)));
    state.SetLabel(std::string(to_string(kind)));
}
BENCHMARK(BM_BuildAndCompile)->DenseRange(0, 6);

// Shots per second of the virtual instrument on the demo Rabi schedule.
void BM_ExecuteRabi(benchmark::State& state) {
    auto cfg = demo_config(MeasurementKind::Rabi);
    cfg.set("inner_reps", ConfigValue::scalar(static_cast<double>(state.range(0))));
    const auto schedule = compile(build(MeasurementKind::Rabi, cfg));
    std::uint64_t seed = 0;
    std::size_t records = 0;
    for (auto _ : state) {
        VirtualInstrument vi(demo_physics(), ++seed);
        vi.execute(schedule, [&](AcquisitionRecord&&) { ++records; });
    }
    state.SetItemsProcessed(static_cast<std::int64_t>(records));
}
BENCHMARK(BM_ExecuteRabi)->Arg(10)->Arg(100)->Unit(benchmark::kMillisecond);

void BM_RunEndToEnd(benchmark::State& state) {
    const auto kind = static_cast<MeasurementKind>(state.range(0));
    const auto cfg = demo_config(kind);
    RunOptions opt;
    opt.keep_raw = false;
    for (auto _ : state) {
        ++opt.seed;
        benchmark::DoNotOptimize(run(kind, cfg, demo_physics(), opt));
    }
    state.SetLabel(std::string(to_string(kind)));
}
BENCHMARK(BM_RunEndToEnd)->Arg(static_cast<int>(MeasurementKind::ODMR))->Arg(static_cast<int>(MeasurementKind::Rabi))
    ->Unit(benchmark::kMillisecond);

void BM_FitOdmr(benchmark::State& state) {
    RunOptions opt;
    opt.seed = 1;
    opt.analyze = false;
    opt.keep_raw = false;
    const auto r = run(MeasurementKind::ODMR, demo_config(MeasurementKind::ODMR), demo_physics(), opt);
    for (auto _ : state) benchmark::DoNotOptimize(fit_odmr(r.axis.values, r.signal));
}
BENCHMARK(BM_FitOdmr)->Unit(benchmark::kMicrosecond);

void BM_ReadoutWindow(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    std::mt19937_64 rng(3);
    std::poisson_distribution<std::int64_t> bright(120), dark(100);
    std::vector<double> starts(n);
    std::vector<std::int64_t> sig(n), ref(n);
    for (std::size_t i = 0; i < n; ++i) {
        starts[i] = 64.0 * static_cast<double>(i);
        sig[i] = bright(rng);
        ref[i] = dark(rng);
    }
    for (auto _ : state) benchmark::DoNotOptimize(optimize_readout_window(starts, sig, ref));
    state.SetComplexityN(static_cast<std::int64_t>(n));
}
BENCHMARK(BM_ReadoutWindow)->RangeMultiplier(4)->Range(16, 1024)->Complexity();

void BM_FrameCodec(benchmark::State& state) {
    StreamFrame f;
    f.kind = FrameKind::SweepPoint;
    f.run_id = "01J0000000000000000000000Z";
    f.time = "2026-01-01T00:00:00.000Z";
    f.n_points = 51;
    f.axis_value = 120.0;
    f.signal = 5.3125;
    f.reference = 5.5;
    for (auto _ : state) {
        ++f.seq;
        FrameDecoder dec;
        benchmark::DoNotOptimize(dec.feed(encode_frame(f)));
    }
}
BENCHMARK(BM_FrameCodec);

void BM_Diagram(benchmark::State& state) {
    const auto program = build(MeasurementKind::HahnEcho, demo_config(MeasurementKind::HahnEcho));
    for (auto _ : state) benchmark::DoNotOptimize(serialize_diagram(render_diagram(program, LabelMode::Values)));
}
BENCHMARK(BM_Diagram);

}  // namespace

BENCHMARK_MAIN();
