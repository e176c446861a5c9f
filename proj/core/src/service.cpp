#include "qdawg/service.hpp"

#include <httplib.h>

#include <charconv>

#include "qdawg/compiler.hpp"
#include "qdawg/diagram.hpp"
#include "qdawg/text.hpp"

namespace qdawg {

namespace {

constexpr const char* kFrameContentType = "application/x-qdawg-frames";

ServiceReply reply(int status, std::string body) { return {status, std::move(body), "text/plain; charset=utf-8"}; }

ServiceReply error_reply(int status, const std::string& what) { return reply(status, "error = " + what + "\n"); }

std::optional<std::uint64_t> parse_u64(std::string_view s) {
    std::uint64_t v = 0;
    const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || end != s.data() + s.size()) return std::nullopt;
    return v;
}

FrameKind point_kind(MeasurementKind k) {
    if (k == MeasurementKind::ODMR) return FrameKind::SpectrumPartial;
    if (k == MeasurementKind::PLIntensity) return FrameKind::PlPoint;
    return FrameKind::SweepPoint;
}

std::string one_line(std::string s) {
    for (auto& c : s)
        if (c == '\n' || c == '\r') c = ' ';
    return s;
}

}  // namespace

struct Service::Http {
    httplib::Server server;
};

Service::Service(ServiceOptions options)
    : options_(std::move(options)),
      store_(options_.data_dir),
      hub_(options_.subscriber_capacity),
      http_(std::make_unique<Http>()) {
    options_.physics.validate();
    options_.instrument.validate();
    recovered_ = store_.recover();
    executor_ = std::thread([this] { executor_loop(); });

    auto& svr = http_->server;
    const std::size_t threads = options_.http_threads;
    svr.new_task_queue = [threads] { return new httplib::ThreadPool(threads); };
    const auto send = [](httplib::Response& res, const ServiceReply& r) {
        res.status = r.status;
        res.set_content(r.body, r.content_type);
    };

    svr.Get("/health", [](const httplib::Request&, httplib::Response& res) { res.set_content("status = ok\n", "text/plain"); });
    svr.Get("/runs", [this, send](const httplib::Request&, httplib::Response& res) { send(res, list_runs()); });
    svr.Get(R"(/runs/([0-9A-Z]+))", [this, send](const httplib::Request& req, httplib::Response& res) {
        send(res, manifest(req.matches[1]));
    });
    svr.Get(R"(/runs/([0-9A-Z]+)/result)", [this, send](const httplib::Request& req, httplib::Response& res) {
        send(res, result(req.matches[1]));
    });
    svr.Post("/runs", [this, send](const httplib::Request& req, httplib::Response& res) {
        std::optional<std::uint64_t> seed;
        if (req.has_param("seed")) {
            seed = parse_u64(req.get_param_value("seed"));
            if (!seed) return send(res, error_reply(400, "seed must be a non-negative integer"));
        }
        send(res, start_run(req.get_param_value("kind"), req.body, seed));
    });
    svr.Get("/alignment", [this, send](const httplib::Request&, httplib::Response& res) { send(res, alignment()); });
    svr.Post("/alignment", [this, send](const httplib::Request& req, httplib::Response& res) {
        send(res, set_alignment(req.body));
    });
    svr.Post("/alignment/session/start", [this, send](const httplib::Request& req, httplib::Response& res) {
        send(res, start_alignment_session(req.body));
    });
    svr.Post("/alignment/session/stop", [this, send](const httplib::Request&, httplib::Response& res) {
        send(res, stop_alignment_session());
    });
    svr.Get(R"(/schema/([a-z0-9-]+))", [this, send](const httplib::Request& req, httplib::Response& res) {
        send(res, schema(std::string(req.matches[1])));
    });
    svr.Post("/diagram", [this, send](const httplib::Request& req, httplib::Response& res) {
        const auto labels = req.has_param("labels") ? req.get_param_value("labels") : std::string("names");
        send(res, diagram(req.get_param_value("kind"), labels, req.body));
    });
    svr.Get("/stream", [this](const httplib::Request& req, httplib::Response& res) {
        std::optional<std::string> run;
        std::uint64_t from = 0;
        if (req.has_param("run")) run = req.get_param_value("run");
        if (req.has_param("from")) {
            const auto v = parse_u64(req.get_param_value("from"));
            if (!v) {
                res.status = 400;
                res.set_content("error = from must be a non-negative integer\n", "text/plain");
                return;
            }
            from = *v;
        }
        auto sub = hub_.subscribe(run, from);
        res.set_header("Cache-Control", "no-store");
        res.set_chunked_content_provider(
            kFrameContentType,
            [sub, run](std::size_t, httplib::DataSink& sink) {
                if (!sink.is_writable()) return false;
                auto f = sub->next(std::chrono::milliseconds(200));
                if (!f) {
                    if (sub->closed()) sink.done();
                    return true;
                }
                const auto bytes = encode_frame(*f);
                if (!sink.write(bytes.data(), bytes.size())) return false;
                // A run-scoped subscription ends with the run's terminal status frame.
                if (run && f->kind == FrameKind::RunStatus && f->run_id == *run &&
                    (f->status == "done" || f->status == "failed" || f->status == "stopped"))
                    sink.done();
                return true;
            },
            [this, sub](bool) { hub_.unsubscribe(sub); });
    });
}

Service::~Service() {
    stop();
    {
        std::lock_guard lock(job_mutex_);
        shutting_down_ = true;
    }
    stop_alignment_ = true;
    job_cv_.notify_all();
    if (executor_.joinable()) executor_.join();
}

int Service::listen(const std::string& host, int port) {
    auto& svr = http_->server;
    int bound = port;
    if (port == 0) {
        bound = svr.bind_to_any_port(host);
        if (bound < 0) throw std::runtime_error("cannot bind " + host);
    } else if (!svr.bind_to_port(host, port)) {
        throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
    }
    http_thread_ = std::thread([this] { http_->server.listen_after_bind(); });
    http_->server.wait_until_ready();
    return bound;
}

void Service::wait() {
    std::unique_lock lock(stop_mutex_);
    stop_cv_.wait(lock, [&] { return stopped_; });
}

void Service::stop() {
    {
        std::lock_guard lock(stop_mutex_);
        if (stopped_) return;
        stopped_ = true;
    }
    stop_alignment_ = true;
    hub_.close_all();
    http_->server.stop();
    if (http_thread_.joinable()) http_thread_.join();
    stop_cv_.notify_all();
}

// ---------------------------------------------------------------------------
// Executor

bool Service::try_claim() {
    bool expected = false;
    return busy_.compare_exchange_strong(expected, true);
}

void Service::submit(std::function<void()> job) {
    {
        std::lock_guard lock(job_mutex_);
        jobs_.push_back(std::move(job));
    }
    job_cv_.notify_one();
}

void Service::executor_loop() {
    while (true) {
        std::function<void()> job;
        {
            std::unique_lock lock(job_mutex_);
            job_cv_.wait(lock, [&] { return shutting_down_ || !jobs_.empty(); });
            if (jobs_.empty()) return;
            job = std::move(jobs_.front());
            jobs_.pop_front();
        }
        job();
        {
            std::lock_guard lock(job_mutex_);
            busy_ = false;
        }
        idle_cv_.notify_all();
    }
}

void Service::wait_idle() {
    std::unique_lock lock(job_mutex_);
    idle_cv_.wait(lock, [&] { return !busy_.load() && jobs_.empty(); });
}

void Service::publish_status(const std::string& id, std::uint64_t seq, const std::string& status,
                             const std::string& msg) {
    StreamFrame f;
    f.kind = FrameKind::RunStatus;
    f.run_id = id;
    f.seq = seq;
    f.time = utc_timestamp();
    f.status = status;
    f.message = one_line(msg);
    hub_.publish(f);
}

void Service::execute_run(RunManifest m, NvEnsembleParams physics) {
    const std::string id = m.run_id;
    std::uint64_t seq = 0;
    try {
        m.advance(RunStatus::Running);
        m.started = utc_timestamp();
        store_.save_manifest(m);

        RunOptions o;
        o.seed = m.seed;
        o.instrument = options_.instrument;
        const auto kind = point_kind(m.kind);
        o.on_point = [&](const PointUpdate& u) {
            StreamFrame f;
            f.kind = kind;
            f.run_id = id;
            f.seq = seq++;
            f.time = utc_timestamp();
            f.index = u.index;
            f.n_points = u.n_points;
            f.axis_value = u.axis_value;
            f.signal = u.signal;
            f.reference = u.reference;
            hub_.publish(f);
        };
        const auto res = run(m.kind, m.config, physics, o);
        store_.save_result(id, res);
        m.advance(RunStatus::Done);
        m.finished = utc_timestamp();
        store_.save_manifest(m);
        publish_status(id, seq, "done", {});
    } catch (const std::exception& e) {
        try {
            if (m.status != RunStatus::Failed && m.status != RunStatus::Done) m.advance(RunStatus::Failed);
            m.finished = utc_timestamp();
            m.error = e.what();
            store_.save_manifest(m);
        } catch (...) {
        }
        publish_status(id, seq, "failed", e.what());
    }
}

void Service::alignment_loop(const std::string& session_id, ExperimentConfig config) {
    const auto t0 = std::chrono::steady_clock::now();
    std::uint64_t seq = 0;
    std::string error;
    try {
        while (!stop_alignment_) {
            const auto tick = std::chrono::steady_clock::now();
            RunOptions o;
            o.seed = seed_counter_++;
            o.instrument = options_.instrument;
            o.analyze = false;
            o.keep_raw = false;
            const auto r = run(MeasurementKind::PLIntensity, config, current_physics(), o);
            StreamFrame f;
            f.kind = FrameKind::PlPoint;
            f.run_id = session_id;
            f.seq = seq;
            f.index = seq;
            f.time = utc_timestamp();
            f.axis_value = std::chrono::duration<double>(tick - t0).count();
            f.signal = r.signal.empty() ? 0.0 : r.signal[0];
            hub_.publish(f);
            ++seq;
            std::unique_lock lock(job_mutex_);
            job_cv_.wait_until(lock, tick + options_.alignment_period,
                               [&] { return stop_alignment_.load() || shutting_down_; });
        }
    } catch (const std::exception& e) {
        error = e.what();
    }
    publish_status(session_id, seq, error.empty() ? "stopped" : "failed", error);
}

// ---------------------------------------------------------------------------
// Operations

ServiceReply Service::start_run(std::string_view kind_name, std::string_view config_text,
                                std::optional<std::uint64_t> seed) {
    const auto kind = parse_measurement_kind(kind_name);
    if (!kind) return error_reply(400, "unknown measurement kind '" + std::string(kind_name) + "'");
    ExperimentConfig config;
    try {
        config = ExperimentConfig::parse(*kind, config_text);
        (void)compile(build(*kind, config));
    } catch (const ConfigError& e) {
        auto body = e.report().to_text();
        if (e.report().ok) body = "error = " + one_line(e.what()) + "\n" + body;
        return reply(400, body);
    } catch (const std::exception& e) {
        return error_reply(400, one_line(e.what()));
    }
    if (!try_claim()) return error_reply(409, "busy: the instrument is executing another job");

    RunManifest m;
    try {
        m.run_id = ids_.next();
        m.kind = *kind;
        m.config = config;
        const auto physics = current_physics();
        m.physics = physics.to_kv();
        m.seed = seed ? *seed : seed_counter_++;
        m.output_path = store_.result_path(m.run_id).string();
        store_.create(m);
        submit([this, m, physics] { execute_run(m, physics); });
    } catch (const std::exception& e) {
        busy_ = false;
        idle_cv_.notify_all();
        return error_reply(500, one_line(e.what()));
    }
    return reply(202, "run_id = " + m.run_id + "\nseed = " + std::to_string(m.seed) + "\n");
}

ServiceReply Service::list_runs() const {
    std::string body = "# qdawg-runs v1\n";
    for (const auto& id : store_.list()) {
        const auto m = store_.manifest(id);
        if (!m) continue;
        body += id + "\t" + std::string(to_string(m->kind)) + "\t" + std::string(to_string(m->status)) + "\n";
    }
    return reply(200, body);
}

ServiceReply Service::manifest(const std::string& id) const {
    try {
        if (const auto m = store_.manifest(id)) return reply(200, m->to_text());
    } catch (const std::exception& e) {
        return error_reply(500, one_line(e.what()));
    }
    return error_reply(404, "no run " + id);
}

ServiceReply Service::result(const std::string& id) const {
    if (const auto r = store_.result_text(id)) return reply(200, *r);
    return error_reply(404, "no result for run " + id);
}

AlignmentKnobs Service::knobs() const {
    std::lock_guard lock(knobs_mutex_);
    return knobs_;
}

NvEnsembleParams Service::current_physics() const { return options_.alignment.apply(options_.physics, knobs()); }

ServiceReply Service::alignment() const {
    const auto k = knobs();
    std::string body = k.to_kv().to_text();
    body += "[physics]\n" + options_.alignment.apply(options_.physics, k).to_kv().to_text();
    return reply(200, body);
}

ServiceReply Service::set_alignment(std::string_view knob_text) {
    try {
        std::lock_guard lock(knobs_mutex_);
        auto k = AlignmentKnobs::from_kv(KvDocument::parse(knob_text), knobs_);
        k.validate();
        knobs_ = k;
    } catch (const std::exception& e) {
        return error_reply(400, one_line(e.what()));
    }
    return alignment();
}

ServiceReply Service::start_alignment_session(std::string_view pl_config_text) {
    ExperimentConfig config;
    try {
        if (text::trim(pl_config_text).empty()) {
            config = demo_config(MeasurementKind::PLIntensity);
            config.set("inner_reps", ConfigValue::scalar(20));
        } else {
            config = ExperimentConfig::parse(MeasurementKind::PLIntensity, pl_config_text);
        }
        (void)compile(build(MeasurementKind::PLIntensity, config));
    } catch (const ConfigError& e) {
        return reply(400, e.report().ok ? "error = " + one_line(e.what()) + "\n" : e.report().to_text());
    } catch (const std::exception& e) {
        return error_reply(400, one_line(e.what()));
    }
    if (!try_claim()) return error_reply(409, "busy: the instrument is executing another job");
    stop_alignment_ = false;
    const auto id = ids_.next();
    submit([this, id, config] { alignment_loop(id, config); });
    return reply(202, "session_id = " + id + "\n");
}

ServiceReply Service::stop_alignment_session() {
    stop_alignment_ = true;
    job_cv_.notify_all();
    return reply(200, "status = stopping\n");
}

ServiceReply Service::schema(std::string_view kind_name) const {
    const auto kind = parse_measurement_kind(kind_name);
    if (!kind) return error_reply(404, "unknown measurement kind '" + std::string(kind_name) + "'");
    return reply(200, schema_table(qdawg::schema(*kind)));
}

ServiceReply Service::diagram(std::string_view kind_name, std::string_view labels, std::string_view config_text) const {
    const auto kind = parse_measurement_kind(kind_name);
    if (!kind) return error_reply(400, "unknown measurement kind '" + std::string(kind_name) + "'");
    const auto mode = parse_label_mode(labels);
    if (!mode) return error_reply(400, "labels must be names or values");
    try {
        const auto program = build(*kind, ExperimentConfig::parse(*kind, config_text));
        return {200, serialize_diagram(render_diagram(program, *mode)), "image/svg+xml"};
    } catch (const ConfigError& e) {
        return reply(400, e.report().ok ? "error = " + one_line(e.what()) + "\n" : e.report().to_text());
    } catch (const std::exception& e) {
        return error_reply(400, one_line(e.what()));
    }
}

}  // namespace qdawg
