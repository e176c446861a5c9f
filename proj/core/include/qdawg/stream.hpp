#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace qdawg {

/// `gap` is not part of any run's numbered sequence; it tells one subscriber
/// that frames were dropped because it fell behind.
enum class FrameKind : std::uint8_t { PlPoint, SpectrumPartial, SweepPoint, RunStatus, Gap };

std::string_view to_string(FrameKind k);
std::optional<FrameKind> parse_frame_kind(std::string_view s);

struct StreamFrame {
    FrameKind kind = FrameKind::SweepPoint;
    std::string run_id;
    std::uint64_t seq = 0;
    std::string time;  // UTC wall clock

    // Point frames.
    std::uint64_t index = 0;
    std::uint64_t n_points = 0;
    double axis_value = 0.0;
    double signal = 0.0;
    std::optional<double> reference;

    // run-status frames: status word and an optional message.
    // gap frames: `dropped` frames starting at `seq` of `run_id` were skipped.
    std::string status;
    std::string message;
    std::uint64_t dropped = 0;

    bool operator==(const StreamFrame&) const = default;
};

/// Body: `key = value` lines. Wire message: decimal byte length of the body,
/// a newline, then the body. See docs/protocol.md.
std::string frame_body(const StreamFrame& f);
StreamFrame parse_frame_body(std::string_view body);
std::string encode_frame(const StreamFrame& f);

/// Incremental decoder for a byte stream of wire messages.
class FrameDecoder {
  public:
    /// Appends bytes; returns every frame completed by them.
    /// Throws ParseError on a malformed length prefix or body.
    std::vector<StreamFrame> feed(std::string_view bytes);
    bool idle() const noexcept { return buffer_.empty(); }

  private:
    std::string buffer_;
};

class FrameHub;

/// One subscriber's bounded queue. When full, the oldest frame is dropped and
/// a gap frame is delivered ahead of the next surviving one.
class Subscription {
  public:
    /// Waits up to `timeout`; returns nullopt on timeout or after close().
    std::optional<StreamFrame> next(std::chrono::milliseconds timeout);
    void close();
    bool closed() const;
    std::uint64_t dropped_total() const;

  private:
    friend class FrameHub;
    Subscription(std::optional<std::string> run_filter, std::size_t capacity)
        : filter_(std::move(run_filter)), capacity_(capacity) {}
    void push(const StreamFrame& f);

    std::optional<std::string> filter_;
    std::size_t capacity_;
    mutable std::mutex mutex_;
    std::condition_variable cv_;
    std::deque<StreamFrame> queue_;
    std::optional<StreamFrame> pending_gap_;
    std::uint64_t dropped_total_ = 0;
    bool closed_ = false;
};

/// Fan-out of frames from the executor to subscribers. Publishing never blocks
/// on a subscriber. Each run's frames are kept so a reconnecting subscriber can
/// resume from any sequence number.
class FrameHub {
  public:
    explicit FrameHub(std::size_t subscriber_capacity = 1024, std::size_t history_per_stream = 65536,
                      std::size_t max_streams = 256);

    /// Frames must arrive with dense per-run sequence numbers starting at 0.
    void publish(const StreamFrame& f);

    /// All runs (live only) when `run_id` is empty; otherwise that run's
    /// retained frames with seq >= from_seq, then its live frames.
    std::shared_ptr<Subscription> subscribe(const std::optional<std::string>& run_id = std::nullopt,
                                            std::uint64_t from_seq = 0);
    void unsubscribe(const std::shared_ptr<Subscription>& s);
    void close_all();

    std::vector<StreamFrame> history(const std::string& run_id) const;
    std::size_t subscriber_count() const;

  private:
    std::size_t capacity_;
    std::size_t history_limit_;
    std::size_t max_streams_;
    mutable std::mutex mutex_;
    std::map<std::string, std::deque<StreamFrame>> history_;
    std::deque<std::string> stream_order_;
    std::vector<std::shared_ptr<Subscription>> subs_;
};

}  // namespace qdawg
