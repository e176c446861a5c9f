#include <doctest.h>
#include <httplib.h>

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <unistd.h>
#include <random>
#include <sstream>
#include <thread>

#include "qdawg/alignment.hpp"
#include "qdawg/diagram.hpp"
#include "qdawg/run_store.hpp"
#include "qdawg/service.hpp"
#include "qdawg/stream.hpp"

using namespace qdawg;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        static std::atomic<int> n{0};
        path = fs::temp_directory_path() /
               ("qdawg-test-" + std::to_string(::getpid()) + "-" + std::to_string(n++));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

StreamFrame point(const std::string& run, std::uint64_t seq) {
    StreamFrame f;
    f.kind = FrameKind::SweepPoint;
    f.run_id = run;
    f.seq = seq;
    f.index = seq;
    f.n_points = 100;
    f.time = "2026-01-01T00:00:00.000Z";
    f.axis_value = 1.5 * static_cast<double>(seq);
    f.signal = 0.1 + static_cast<double>(seq);
    return f;
}

RunManifest sample_manifest(const std::string& id) {
    RunManifest m;
    m.run_id = id;
    m.kind = MeasurementKind::Rabi;
    m.config = demo_config(MeasurementKind::Rabi);
    m.physics = demo_physics().to_kv();
    m.seed = 18446744073709551615ULL;
    m.output_path = "/tmp/some where/result";
    return m;
}

// Demo config with the entries of `overrides` replaced.
std::string config_text(MeasurementKind kind, const std::string& overrides = {}) {
    auto cfg = demo_config(kind);
    const auto doc = KvDocument::parse(overrides);
    for (const auto& [key, v] : doc.entries()) cfg.set(key, v);
    return cfg.to_text();
}

// Reads wire frames from a live endpoint until `done` says stop.
std::vector<StreamFrame> read_stream(httplib::Client& cli, const std::string& path,
                                     const std::function<bool(const StreamFrame&)>& done) {
    std::vector<StreamFrame> frames;
    FrameDecoder dec;
    bool stop = false;
    cli.Get(path, [&](const char* data, std::size_t n) {
        for (auto& f : dec.feed(std::string_view(data, n))) {
            frames.push_back(f);
            if (done(f)) stop = true;
        }
        return !stop;
    });
    return frames;
}

// Value of `key = value` in a reply body.
std::string reply_value(const std::string& body, const std::string& key) {
    std::istringstream in(body);
    for (std::string line; std::getline(in, line);)
        if (line.rfind(key + " = ", 0) == 0) return line.substr(key.size() + 3);
    return {};
}

bool terminal_for(const StreamFrame& f, const std::string& id) {
    return f.kind == FrameKind::RunStatus && f.run_id == id;
}

}  // namespace

TEST_SUITE("store") {
    TEST_CASE("run ids are sortable, unique and carry their timestamp") {
        std::uint64_t now = 1'700'000'000'000ULL;
        UlidGenerator gen(42, [&] { return now; });
        std::vector<std::string> ids;
        for (int i = 0; i < 5000; ++i) {
            if (i % 1000 == 999) ++now;
            ids.push_back(gen.next());
        }
        for (std::size_t i = 0; i < ids.size(); ++i) {
            CHECK(UlidGenerator::valid(ids[i]));
            if (i) CHECK(ids[i - 1] < ids[i]);
        }
        CHECK(UlidGenerator::timestamp_ms(ids.front()) == 1'700'000'000'000ULL);
        CHECK(UlidGenerator::timestamp_ms(ids.back()) == now);
        now -= 10;  // a clock step backwards still yields increasing ids
        const auto later = gen.next();
        CHECK(ids.back() < later);
        CHECK_FALSE(UlidGenerator::valid("not-an-id"));
        CHECK_FALSE(UlidGenerator::valid("8ZZZZZZZZZZZZZZZZZZZZZZZZZ"));
        CHECK_FALSE(UlidGenerator::valid("01ARZ3NDEKTSV4RRFFQ69G5FAI"));
    }

    TEST_CASE("timestamps are UTC ISO-8601 with milliseconds") {
        using namespace std::chrono;
        const system_clock::time_point t{milliseconds(1'700'000'000'123LL)};
        CHECK(utc_timestamp(t) == "2023-11-14T22:13:20.123Z");
    }

    TEST_CASE("manifests round trip and only move forward") {
        auto m = sample_manifest("01HZZZZZZZZZZZZZZZZZZZZZZZ");
        m.error = "multi\nline";
        const auto back = RunManifest::parse(m.to_text());
        CHECK(back.error == "multi line");
        m.error = "multi line";
        CHECK(back == m);
        m.advance(RunStatus::Running);
        CHECK_THROWS_AS(m.advance(RunStatus::Pending), std::logic_error);
        CHECK_THROWS_AS(m.advance(RunStatus::Running), std::logic_error);
        m.advance(RunStatus::Done);
        CHECK_THROWS_AS(m.advance(RunStatus::Failed), std::logic_error);
        CHECK_THROWS_AS(RunManifest::parse("run_id = x\n"), ParseError);
        CHECK_THROWS_AS(RunManifest::parse("run_id = x\nkind = rabi\nstatus = weird\n"), ParseError);
    }

    TEST_CASE("data store writes once and recovers interrupted runs") {
        TempDir dir;
        DataStore store(dir.path);
        UlidGenerator gen(1);
        const auto a = gen.next(), b = gen.next(), c = gen.next();
        auto ma = sample_manifest(a), mb = sample_manifest(b), mc = sample_manifest(c);
        store.create(ma);
        CHECK_THROWS(store.create(ma));
        mb.advance(RunStatus::Running);
        store.create(mb);
        mc.advance(RunStatus::Running);
        mc.advance(RunStatus::Done);
        store.create(mc);
        CHECK(store.list() == std::vector<std::string>{a, b, c});

        auto r = run(MeasurementKind::PLIntensity, demo_config(MeasurementKind::PLIntensity), demo_physics(), 3);
        store.save_result(c, r);
        CHECK_THROWS(store.save_result(c, r));
        CHECK(MeasurementResult::parse(*store.result_text(c)) == r);
        CHECK_FALSE(store.result_text(a).has_value());
        CHECK_FALSE(store.manifest("../../etc").has_value());

        // A half-written temp file from a crashed writer.
        std::ofstream(store.run_dir(b) / "result.tmp-999") << "partial";
        const auto failed = store.recover();
        CHECK(failed == std::vector<std::string>{a, b});
        CHECK(store.manifest(a)->status == RunStatus::Failed);
        CHECK(store.manifest(b)->status == RunStatus::Failed);
        CHECK_FALSE(store.manifest(b)->finished.empty());
        CHECK(store.manifest(c)->status == RunStatus::Done);
        CHECK_FALSE(fs::exists(store.run_dir(b) / "result.tmp-999"));
        CHECK_FALSE(fs::exists(store.run_dir(b) / "result"));
        CHECK(store.recover().empty());
    }

    TEST_CASE("atomic writes replace whole files") {
        TempDir dir;
        const auto p = dir.path / "f";
        write_file_atomic(p, "one");
        write_file_atomic(p, "two");
        CHECK(read_file(p) == "two");
        std::size_t n = 0;
        for ([[maybe_unused]] const auto& e : fs::directory_iterator(dir.path)) ++n;
        CHECK(n == 1);
    }
}

TEST_SUITE("stream") {
    TEST_CASE("frames round trip through the wire encoding") {
        std::vector<StreamFrame> frames;
        auto p = point("R1", 0);
        frames.push_back(p);
        p.kind = FrameKind::SpectrumPartial;
        p.seq = 1;
        p.reference = -0.25;
        frames.push_back(p);
        p.kind = FrameKind::PlPoint;
        p.reference.reset();
        p.seq = 2;
        p.axis_value = 1e-300;
        frames.push_back(p);
        StreamFrame s;
        s.kind = FrameKind::RunStatus;
        s.run_id = "R1";
        s.seq = 3;
        s.status = "failed";
        s.message = "physics rejected";
        frames.push_back(s);
        StreamFrame g;
        g.kind = FrameKind::Gap;
        g.run_id = "R1";
        g.seq = 1;
        g.dropped = 7;
        frames.push_back(g);

        std::string wire;
        for (const auto& f : frames) {
            CHECK(parse_frame_body(frame_body(f)) == f);
            wire += encode_frame(f);
        }
        FrameDecoder byte_at_a_time;
        std::vector<StreamFrame> got;
        for (char c : wire)
            for (auto& f : byte_at_a_time.feed(std::string_view(&c, 1))) got.push_back(f);
        CHECK(got == frames);
        CHECK(byte_at_a_time.idle());
        FrameDecoder whole;
        CHECK(whole.feed(wire) == frames);
    }

    TEST_CASE("malformed wire data is rejected") {
        FrameDecoder d;
        CHECK_THROWS_AS(d.feed("abc\nxyz"), ParseError);
        FrameDecoder e;
        CHECK_THROWS_AS(e.feed("9\nframe = x"), ParseError);
        CHECK_THROWS_AS(parse_frame_body("frame = sweep-point\n"), ParseError);
        CHECK_THROWS_AS(parse_frame_body("frame = sweep-point\nrun_id = a\nseq = 1\nbogus = 2\n"), ParseError);
    }

    TEST_CASE("hub delivers in order, filters by run and resumes from a sequence number") {
        FrameHub hub;
        auto all = hub.subscribe();
        auto only_b = hub.subscribe(std::string("B"));
        for (std::uint64_t i = 0; i < 5; ++i) {
            hub.publish(point("A", i));
            hub.publish(point("B", i));
        }
        for (std::uint64_t i = 0; i < 10; ++i) {
            auto f = all->next(std::chrono::milliseconds(10));
            REQUIRE(f);
            CHECK(f->seq == i / 2);
        }
        for (std::uint64_t i = 0; i < 5; ++i) CHECK(only_b->next(std::chrono::milliseconds(10))->run_id == "B");
        CHECK_FALSE(only_b->next(std::chrono::milliseconds(1)));

        auto resumed = hub.subscribe(std::string("A"), 3);
        CHECK(resumed->next(std::chrono::milliseconds(1))->seq == 3);
        CHECK(resumed->next(std::chrono::milliseconds(1))->seq == 4);
        hub.publish(point("A", 5));
        CHECK(resumed->next(std::chrono::milliseconds(1))->seq == 5);
        CHECK(hub.history("A").size() == 6);

        hub.unsubscribe(all);
        CHECK(hub.subscriber_count() == 2);
        hub.close_all();
        CHECK(resumed->closed());
        CHECK_FALSE(resumed->next(std::chrono::milliseconds(50)));
    }

    TEST_CASE("slow subscribers lose the oldest frames behind a gap notice") {
        FrameHub hub(4);
        auto slow = hub.subscribe();
        for (std::uint64_t i = 0; i < 10; ++i) hub.publish(point("R", i));
        auto gap = slow->next(std::chrono::milliseconds(1));
        REQUIRE(gap);
        CHECK(gap->kind == FrameKind::Gap);
        CHECK(gap->seq == 0);
        CHECK(gap->dropped == 6);
        for (std::uint64_t i = 6; i < 10; ++i) CHECK(slow->next(std::chrono::milliseconds(1))->seq == i);
        CHECK(slow->dropped_total() == 6);
        // The history is untouched, so a reconnect can fill the gap.
        auto again = hub.subscribe(std::string("R"), 0);
        for (std::uint64_t i = 0; i < 10; ++i) CHECK(again->next(std::chrono::milliseconds(1))->seq == i);
    }
}

TEST_SUITE("alignment") {
    TEST_CASE("misalignment factors follow their closed forms") {
        AlignmentModel model;
        model.beam_waist_um = 2.5;
        const auto base = demo_physics();
        AlignmentKnobs k;
        CHECK(model.apply(base, k) == base);
        k.stage_x_um = 2.5;
        CHECK(std::abs(model.apply(base, k).pl_rate_bright_hz / base.pl_rate_bright_hz - std::exp(-1.0)) < 1e-12);
        k.stage_x_um = 1.5;
        k.stage_y_um = 2.0;  // |r| = 2.5 as well
        CHECK(std::abs(model.pl_factor(k) - std::exp(-1.0)) < 1e-12);
        k = {};
        k.magnet_angle_deg = 60;
        CHECK(std::abs(model.apply(base, k).bias_field_t - 0.5 * base.bias_field_t) < 1e-15);
        k = {};
        k.antenna_coupling = 0.3;
        CHECK(model.apply(base, k).rabi_rate_hz == doctest::Approx(0.3 * base.rabi_rate_hz).epsilon(1e-15));
        k.antenna_coupling = 0.0;
        CHECK_NOTHROW(model.apply(base, k).validate());
        k.stage_x_um = 1e6;
        CHECK_NOTHROW(model.apply(base, k).validate());
        k.antenna_coupling = 1.5;
        CHECK_THROWS_AS(model.apply(base, k), std::invalid_argument);
    }

    TEST_CASE("modulation is a pure function of the knobs") {
        AlignmentModel model;
        std::mt19937_64 rng(3);
        std::uniform_real_distribution<double> u(-5, 5);
        for (int i = 0; i < 50; ++i) {
            AlignmentKnobs k{u(rng), u(rng), u(rng), 30 * u(rng), std::abs(u(rng)) / 5};
            CHECK(model.apply(demo_physics(), k) == model.apply(demo_physics(), k));
            CHECK(AlignmentKnobs::from_kv(k.to_kv()) == k);
        }
    }

    TEST_CASE("knob documents update only the keys they name") {
        AlignmentKnobs base{1, 2, 3, 4, 0.5};
        const auto k = AlignmentKnobs::from_kv(KvDocument::parse("stage_y_um = -7\n"), base);
        CHECK(k.stage_y_um == -7);
        CHECK(k.stage_x_um == 1);
        CHECK(k.antenna_coupling == 0.5);
        CHECK_THROWS_AS(AlignmentKnobs::from_kv(KvDocument::parse("focus = 1\n")), ParseError);
    }
}

TEST_SUITE("service") {
    TEST_CASE("runs stream one frame per point plus a terminal status") {
        TempDir dir;
        ServiceOptions opt;
        opt.data_dir = dir.path;
        Service svc(opt);
        const int port = svc.listen("127.0.0.1", 0);
        httplib::Client cli("127.0.0.1", port);
        REQUIRE(cli.Get("/health")->status == 200);

        std::string run_id;
        std::atomic<bool> subscribed{false};
        std::vector<StreamFrame> frames;
        std::thread reader([&] {
            httplib::Client sc("127.0.0.1", port);
            sc.set_read_timeout(30, 0);
            FrameDecoder dec;
            bool stop = false;
            sc.Get("/stream", [&](const char* data, std::size_t n) {
                subscribed = true;
                for (auto& f : dec.feed(std::string_view(data, n))) {
                    frames.push_back(f);
                    if (f.kind == FrameKind::RunStatus) stop = true;
                }
                return !stop;
            });
        });
        // The subscription is registered before any frame arrives; wait for it.
        for (int i = 0; i < 200 && svc.hub().subscriber_count() == 0; ++i)
            std::this_thread::sleep_for(std::chrono::milliseconds(5));
        REQUIRE(svc.hub().subscriber_count() == 1);

        const auto cfg = config_text(MeasurementKind::Rabi, "mw_time_n_points = 50\ninner_reps = 100\n");
        auto res = cli.Post("/runs?kind=rabi&seed=7", cfg, "text/plain");
        if (!res || res->status != 202) {
            svc.stop();
            reader.join();
            FAIL("run rejected: " << (res ? res->body : std::string("no reply")));
        }
        run_id = reply_value(res->body, "run_id");
        CHECK(reply_value(res->body, "seed") == "7");
        CHECK(UlidGenerator::valid(run_id));
        reader.join();
        svc.wait_idle();

        REQUIRE(frames.size() == 51);
        for (std::size_t i = 0; i < 50; ++i) {
            CHECK(frames[i].kind == FrameKind::SweepPoint);
            CHECK(frames[i].seq == i);
            CHECK(frames[i].index == i);
            CHECK(frames[i].n_points == 50);
            CHECK(frames[i].reference.has_value());
            CHECK(frames[i].run_id == run_id);
        }
        CHECK(frames[50].kind == FrameKind::RunStatus);
        CHECK(frames[50].status == "done");
        CHECK(frames[50].seq == 50);

        // Persisted result matches the streamed points and a direct run.
        auto man = cli.Get("/runs/" + run_id);
        REQUIRE(man->status == 200);
        const auto m = RunManifest::parse(man->body);
        CHECK(m.status == RunStatus::Done);
        CHECK(m.seed == 7);
        CHECK_FALSE(m.started.empty());
        CHECK_FALSE(m.finished.empty());
        auto body = cli.Get("/runs/" + run_id + "/result");
        REQUIRE(body->status == 200);
        const auto result = MeasurementResult::parse(body->body);
        for (std::size_t i = 0; i < 50; ++i) CHECK(result.signal[i] == frames[i].signal);
        const auto direct = run(MeasurementKind::Rabi, ExperimentConfig::parse(MeasurementKind::Rabi, cfg),
                                NvEnsembleParams::from_kv(m.physics), 7);
        CHECK(direct.to_text() == body->body);

        // Resuming a finished run replays from the requested sequence number and closes.
        const auto tail = read_stream(cli, "/stream?run=" + run_id + "&from=45",
                                      [&](const StreamFrame& f) { return terminal_for(f, run_id); });
        REQUIRE(tail.size() == 6);
        CHECK(tail.front().seq == 45);
        CHECK(tail.back().kind == FrameKind::RunStatus);

        const auto list = cli.Get("/runs");
        CHECK(list->body.find(run_id + "\trabi\tdone") != std::string::npos);
        CHECK(cli.Get("/runs/01ARZ3NDEKTSV4RRFFQ69G5FAV")->status == 404);
        CHECK(cli.Get("/stream?from=x")->status == 400);
        svc.stop();
    }

    TEST_CASE("invalid requests are rejected with the validation report") {
        TempDir dir;
        ServiceOptions opt;
        opt.data_dir = dir.path;
        Service svc(opt);
        const int port = svc.listen("127.0.0.1", 0);
        httplib::Client cli("127.0.0.1", port);

        auto cfg = demo_config(MeasurementKind::ODMR);
        cfg.erase("mw_gain");
        auto res = cli.Post("/runs?kind=odmr", cfg.to_text(), "text/plain");
        REQUIRE(res);
        CHECK(res->status == 400);
        CHECK(res->body.find("missing: mw_gain") != std::string::npos);
        CHECK(cli.Post("/runs?kind=nonsense", "", "text/plain")->status == 400);
        CHECK(cli.Post("/runs?kind=rabi&seed=-1", "", "text/plain")->status == 400);
        auto band = cli.Post("/runs?kind=odmr", config_text(MeasurementKind::ODMR, "mw_freq_stop = 5 GHz\n"), "text/plain");
        CHECK(band->status == 400);
        CHECK(band->body.find("out_of_band: mw_freq_stop") != std::string::npos);
        auto overlap = demo_config(MeasurementKind::Ramsey);
        overlap.set("tau_start", ConfigValue::duration(10));
        CHECK(cli.Post("/runs?kind=ramsey", overlap.to_text(), "text/plain")->status == 400);
        CHECK(svc.store().list().empty());
    }

    TEST_CASE("one job at a time") {
        TempDir dir;
        ServiceOptions opt;
        opt.data_dir = dir.path;
        Service svc(opt);
        const auto slow = config_text(MeasurementKind::HahnEcho, "inner_reps = 20000\n");
        const auto first = svc.start_run("hahn", slow, 1);
        REQUIRE(first.status == 202);
        const auto second = svc.start_run("pl", config_text(MeasurementKind::PLIntensity), 1);
        CHECK(second.status == 409);
        CHECK(svc.start_alignment_session("").status == 409);
        svc.wait_idle();
        CHECK(svc.start_run("pl", config_text(MeasurementKind::PLIntensity), 1).status == 202);
        svc.wait_idle();
        CHECK(svc.store().list().size() == 2);
    }

    TEST_CASE("alignment session responds to the knobs") {
        TempDir dir;
        ServiceOptions opt;
        opt.data_dir = dir.path;
        opt.alignment_period = std::chrono::milliseconds(5);
        opt.alignment.beam_waist_um = 3.0;
        Service svc(opt);
        const int port = svc.listen("127.0.0.1", 0);
        httplib::Client cli("127.0.0.1", port);

        auto start = cli.Post("/alignment/session/start", "", "text/plain");
        REQUIRE(start->status == 202);
        const auto session = reply_value(start->body, "session_id");
        CHECK(cli.Post("/runs?kind=pl", config_text(MeasurementKind::PLIntensity), "text/plain")->status == 409);

        const auto mean_pl = [&](std::uint64_t from) {
            std::vector<double> v;
            read_stream(cli, "/stream?run=" + session + "&from=" + std::to_string(from), [&](const StreamFrame& f) {
                if (f.kind == FrameKind::PlPoint) v.push_back(f.signal);
                return v.size() >= 10;
            });
            double s = 0;
            for (double x : v) s += x;
            return s / static_cast<double>(v.size());
        };
        const double aligned = mean_pl(0);
        // 20 MHz bright PL over a 5 us window.
        CHECK(aligned == doctest::Approx(100.0).epsilon(0.05));

        auto set = cli.Post("/alignment", "stage_x_um = 3\n", "text/plain");
        REQUIRE(set->status == 200);
        const auto after = svc.hub().history(session).size();
        const double off = mean_pl(after + 2);
        CHECK(off / aligned == doctest::Approx(std::exp(-1.0)).epsilon(0.05));
        CHECK(std::abs(svc.current_physics().pl_rate_bright_hz - 20e6 * std::exp(-1.0)) < 1e-3);

        const auto got = cli.Get("/alignment");
        CHECK(got->body.find("stage_x_um = 3") != std::string::npos);
        CHECK(got->body.find("[physics]") != std::string::npos);
        CHECK(cli.Post("/alignment", "antenna_coupling = 2\n", "text/plain")->status == 400);

        REQUIRE(cli.Post("/alignment/session/stop", "", "text/plain")->status == 200);
        svc.wait_idle();
        const auto h = svc.hub().history(session);
        REQUIRE_FALSE(h.empty());
        CHECK(h.back().kind == FrameKind::RunStatus);
        CHECK(h.back().status == "stopped");
        for (std::size_t i = 0; i < h.size(); ++i) CHECK(h[i].seq == i);
    }

    TEST_CASE("restart after a crash marks the run failed without a result") {
        TempDir dir;
        UlidGenerator gen(9);
        const auto id = gen.next();
        {
            DataStore store(dir.path);
            auto m = sample_manifest(id);
            m.advance(RunStatus::Running);
            store.create(m);
            std::ofstream(store.run_dir(id) / "result.tmp-1") << "# qdawg-result v1\nkind = ra";
        }
        ServiceOptions opt;
        opt.data_dir = dir.path;
        Service svc(opt);
        CHECK(svc.recovered() == std::vector<std::string>{id});
        const auto m = svc.manifest(id);
        CHECK(RunManifest::parse(m.body).status == RunStatus::Failed);
        CHECK(svc.result(id).status == 404);
        CHECK_FALSE(fs::exists(dir.path / "runs" / id / "result.tmp-1"));
    }

    TEST_CASE("schema and diagram endpoints") {
        TempDir dir;
        ServiceOptions opt;
        opt.data_dir = dir.path;
        Service svc(opt);
        const int port = svc.listen("127.0.0.1", 0);
        httplib::Client cli("127.0.0.1", port);
        const auto s = cli.Get("/schema/rabi");
        REQUIRE(s->status == 200);
        CHECK(s->body == schema_table(schema(MeasurementKind::Rabi)));
        CHECK(cli.Get("/schema/bogus")->status == 404);

        const auto cfg = config_text(MeasurementKind::Rabi);
        const auto d = cli.Post("/diagram?kind=rabi&labels=values", cfg, "text/plain");
        REQUIRE(d->status == 200);
        CHECK(d->get_header_value("Content-Type") == "image/svg+xml");
        CHECK(d->body == serialize_diagram(render_diagram(build(MeasurementKind::Rabi, demo_config(MeasurementKind::Rabi)),
                                                          LabelMode::Values)));
        CHECK(cli.Post("/diagram?kind=rabi&labels=fancy", cfg, "text/plain")->status == 400);
        CHECK(cli.Post("/diagram?kind=rabi", "inner_reps = 1\n", "text/plain")->status == 400);
    }
}
