#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

#include "qdawg/alignment.hpp"
#include "qdawg/run_store.hpp"
#include "qdawg/sequences.hpp"
#include "qdawg/stream.hpp"

namespace qdawg {

struct ServiceOptions {
    std::filesystem::path data_dir = default_data_dir();
    NvEnsembleParams physics = demo_physics();  // perfectly aligned apparatus
    AlignmentModel alignment;
    InstrumentSettings instrument;
    std::size_t subscriber_capacity = 1024;
    std::chrono::milliseconds alignment_period{100};
    std::size_t http_threads = 32;
};

/// Reply of a service operation, shared by the HTTP layer and in-process callers.
struct ServiceReply {
    int status = 200;
    std::string body;  // key-value text unless noted
    std::string content_type = "text/plain; charset=utf-8";
};

/// The control service. One executor thread owns the virtual instrument and
/// runs at most one job (a measurement run or the alignment loop); requests that
/// arrive while it is busy are rejected with 409. The executor hands immutable
/// StreamFrames to the FrameHub; the HTTP front end only reads the hub and the
/// data store.
class Service {
  public:
    explicit Service(ServiceOptions options);
    ~Service();
    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    /// Binds and serves on a background thread. Port 0 picks a free port.
    /// Returns the bound port; throws std::runtime_error when binding fails.
    int listen(const std::string& host, int port);
    /// Blocks until stop() is called (from another thread or a signal handler path).
    void wait();
    void stop();

    // Operations behind the endpoints.
    ServiceReply start_run(std::string_view kind, std::string_view config_text, std::optional<std::uint64_t> seed);
    ServiceReply list_runs() const;
    ServiceReply manifest(const std::string& id) const;
    ServiceReply result(const std::string& id) const;
    ServiceReply alignment() const;
    ServiceReply set_alignment(std::string_view knob_text);
    ServiceReply start_alignment_session(std::string_view pl_config_text);
    ServiceReply stop_alignment_session();
    ServiceReply schema(std::string_view kind) const;
    ServiceReply diagram(std::string_view kind, std::string_view labels, std::string_view config_text) const;

    /// Blocks until the executor has no job.
    void wait_idle();
    bool busy() const { return busy_.load(); }

    FrameHub& hub() noexcept { return hub_; }
    const DataStore& store() const noexcept { return store_; }
    AlignmentKnobs knobs() const;
    /// Physics the next run or alignment step would use.
    NvEnsembleParams current_physics() const;
    /// Ids that recovery marked failed when the service started.
    const std::vector<std::string>& recovered() const noexcept { return recovered_; }

  private:
    bool try_claim();
    void submit(std::function<void()> job);
    void executor_loop();
    void publish_status(const std::string& id, std::uint64_t seq, const std::string& status, const std::string& msg);
    void execute_run(RunManifest manifest, NvEnsembleParams physics);
    void alignment_loop(const std::string& session_id, ExperimentConfig config);

    ServiceOptions options_;
    DataStore store_;
    FrameHub hub_;
    UlidGenerator ids_;
    std::vector<std::string> recovered_;

    mutable std::mutex knobs_mutex_;
    AlignmentKnobs knobs_;

    std::atomic<bool> busy_{false};
    std::atomic<bool> stop_alignment_{false};
    std::atomic<std::uint64_t> seed_counter_{1};
    std::mutex job_mutex_;
    std::condition_variable job_cv_;
    std::condition_variable idle_cv_;
    std::deque<std::function<void()>> jobs_;
    bool shutting_down_ = false;
    std::thread executor_;

    struct Http;
    std::unique_ptr<Http> http_;
    std::thread http_thread_;
    std::mutex stop_mutex_;
    std::condition_variable stop_cv_;
    bool stopped_ = false;
};

}  // namespace qdawg
