#include "qdawg/stream.hpp"

#include <algorithm>
#include <charconv>

#include "qdawg/errors.hpp"
#include "qdawg/text.hpp"

namespace qdawg {

std::string_view to_string(FrameKind k) {
    switch (k) {
        case FrameKind::PlPoint: return "pl-point";
        case FrameKind::SpectrumPartial: return "spectrum-partial";
        case FrameKind::SweepPoint: return "sweep-point";
        case FrameKind::RunStatus: return "run-status";
        case FrameKind::Gap: return "gap";
    }
    return "?";
}

std::optional<FrameKind> parse_frame_kind(std::string_view s) {
    for (auto k : {FrameKind::PlPoint, FrameKind::SpectrumPartial, FrameKind::SweepPoint, FrameKind::RunStatus,
                   FrameKind::Gap})
        if (to_string(k) == s) return k;
    return std::nullopt;
}

namespace {

bool is_point(FrameKind k) {
    return k == FrameKind::PlPoint || k == FrameKind::SpectrumPartial || k == FrameKind::SweepPoint;
}

std::string single_line(std::string s) {
    std::replace(s.begin(), s.end(), '\n', ' ');
    std::replace(s.begin(), s.end(), '\r', ' ');
    return s;
}

std::uint64_t parse_u64(std::string_view s, std::string_view key) {
    std::uint64_t v = 0;
    const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || end != s.data() + s.size()) throw ParseError("bad " + std::string(key) + " '" + std::string(s) + "'");
    return v;
}

double parse_real(std::string_view s, std::string_view key) {
    const auto v = text::parse_double(s);
    if (!v) throw ParseError("bad " + std::string(key) + " '" + std::string(s) + "'");
    return *v;
}

}  // namespace

std::string frame_body(const StreamFrame& f) {
    std::string s;
    s += "frame = " + std::string(to_string(f.kind)) + "\n";
    s += "run_id = " + f.run_id + "\n";
    s += "seq = " + std::to_string(f.seq) + "\n";
    s += "time = " + f.time + "\n";
    if (is_point(f.kind)) {
        s += "index = " + std::to_string(f.index) + "\n";
        s += "n_points = " + std::to_string(f.n_points) + "\n";
        s += "axis = " + text::format_double(f.axis_value) + "\n";
        s += "signal = " + text::format_double(f.signal) + "\n";
        if (f.reference) s += "reference = " + text::format_double(*f.reference) + "\n";
    } else if (f.kind == FrameKind::RunStatus) {
        s += "status = " + single_line(f.status) + "\n";
        if (!f.message.empty()) s += "message = " + single_line(f.message) + "\n";
    } else {
        s += "dropped = " + std::to_string(f.dropped) + "\n";
    }
    return s;
}

StreamFrame parse_frame_body(std::string_view body) {
    StreamFrame f;
    bool have_kind = false, have_id = false, have_seq = false;
    for (auto line : text::split(body, '\n')) {
        line = text::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) throw ParseError("frame line without '=': " + std::string(line));
        const auto k = text::trim(line.substr(0, eq));
        const auto v = text::trim(line.substr(eq + 1));
        if (k == "frame") {
            const auto kind = parse_frame_kind(v);
            if (!kind) throw ParseError("unknown frame kind '" + std::string(v) + "'");
            f.kind = *kind;
            have_kind = true;
        } else if (k == "run_id") {
            f.run_id = std::string(v);
            have_id = true;
        } else if (k == "seq") {
            f.seq = parse_u64(v, k);
            have_seq = true;
        } else if (k == "time") {
            f.time = std::string(v);
        } else if (k == "index") {
            f.index = parse_u64(v, k);
        } else if (k == "n_points") {
            f.n_points = parse_u64(v, k);
        } else if (k == "axis") {
            f.axis_value = parse_real(v, k);
        } else if (k == "signal") {
            f.signal = parse_real(v, k);
        } else if (k == "reference") {
            f.reference = parse_real(v, k);
        } else if (k == "status") {
            f.status = std::string(v);
        } else if (k == "message") {
            f.message = std::string(v);
        } else if (k == "dropped") {
            f.dropped = parse_u64(v, k);
        } else {
            throw ParseError("unknown frame key '" + std::string(k) + "'");
        }
    }
    if (!have_kind || !have_id || !have_seq) throw ParseError("frame lacks frame, run_id or seq");
    return f;
}

std::string encode_frame(const StreamFrame& f) {
    const auto body = frame_body(f);
    return std::to_string(body.size()) + "\n" + body;
}

std::vector<StreamFrame> FrameDecoder::feed(std::string_view bytes) {
    buffer_.append(bytes);
    std::vector<StreamFrame> out;
    std::size_t pos = 0;
    while (true) {
        const auto nl = buffer_.find('\n', pos);
        if (nl == std::string::npos) {
            if (buffer_.size() - pos > 20) throw ParseError("frame length prefix too long");
            break;
        }
        const std::string_view prefix(buffer_.data() + pos, nl - pos);
        if (prefix.empty() || prefix.size() > 20) throw ParseError("bad frame length prefix");
        const auto len = parse_u64(prefix, "frame length");
        if (buffer_.size() - (nl + 1) < len) break;
        out.push_back(parse_frame_body(std::string_view(buffer_.data() + nl + 1, len)));
        pos = nl + 1 + len;
    }
    buffer_.erase(0, pos);
    return out;
}

// ---------------------------------------------------------------------------

void Subscription::push(const StreamFrame& f) {
    {
        std::lock_guard lock(mutex_);
        if (closed_) return;
        if (queue_.size() >= capacity_) {
            const auto& lost = queue_.front();
            if (!pending_gap_) {
                StreamFrame gap;
                gap.kind = FrameKind::Gap;
                gap.run_id = lost.run_id;
                gap.seq = lost.seq;
                gap.time = lost.time;
                pending_gap_ = gap;
            }
            ++pending_gap_->dropped;
            ++dropped_total_;
            queue_.pop_front();
        }
        queue_.push_back(f);
    }
    cv_.notify_one();
}

std::optional<StreamFrame> Subscription::next(std::chrono::milliseconds timeout) {
    std::unique_lock lock(mutex_);
    cv_.wait_for(lock, timeout, [&] { return closed_ || pending_gap_ || !queue_.empty(); });
    if (pending_gap_) {
        auto g = std::move(*pending_gap_);
        pending_gap_.reset();
        return g;
    }
    if (queue_.empty()) return std::nullopt;
    auto f = std::move(queue_.front());
    queue_.pop_front();
    return f;
}

void Subscription::close() {
    {
        std::lock_guard lock(mutex_);
        closed_ = true;
    }
    cv_.notify_all();
}

bool Subscription::closed() const {
    std::lock_guard lock(mutex_);
    return closed_;
}

std::uint64_t Subscription::dropped_total() const {
    std::lock_guard lock(mutex_);
    return dropped_total_;
}

FrameHub::FrameHub(std::size_t subscriber_capacity, std::size_t history_per_stream, std::size_t max_streams)
    : capacity_(std::max<std::size_t>(subscriber_capacity, 1)),
      history_limit_(std::max<std::size_t>(history_per_stream, 1)),
      max_streams_(std::max<std::size_t>(max_streams, 1)) {}

void FrameHub::publish(const StreamFrame& f) {
    {
        std::lock_guard lock(mutex_);
        auto it = history_.find(f.run_id);
        if (it == history_.end()) {
            if (stream_order_.size() >= max_streams_) {
                history_.erase(stream_order_.front());
                stream_order_.pop_front();
            }
            it = history_.emplace(f.run_id, std::deque<StreamFrame>{}).first;
            stream_order_.push_back(f.run_id);
        }
        it->second.push_back(f);
        if (it->second.size() > history_limit_) it->second.pop_front();
        // Pushing under the hub lock keeps a concurrent subscribe() from seeing a frame twice or missing it.
        for (const auto& s : subs_)
            if (!s->filter_ || *s->filter_ == f.run_id) s->push(f);
    }
}

std::shared_ptr<Subscription> FrameHub::subscribe(const std::optional<std::string>& run_id, std::uint64_t from_seq) {
    std::lock_guard lock(mutex_);
    std::vector<const StreamFrame*> replay;
    if (run_id)
        if (auto it = history_.find(*run_id); it != history_.end())
            for (const auto& f : it->second)
                if (f.seq >= from_seq) replay.push_back(&f);
    // The replay itself never overflows the queue.
    std::shared_ptr<Subscription> s(new Subscription(run_id, capacity_ + replay.size()));
    for (const auto* f : replay) s->push(*f);
    subs_.push_back(s);
    return s;
}

void FrameHub::unsubscribe(const std::shared_ptr<Subscription>& s) {
    s->close();
    std::lock_guard lock(mutex_);
    subs_.erase(std::remove(subs_.begin(), subs_.end(), s), subs_.end());
}

void FrameHub::close_all() {
    std::lock_guard lock(mutex_);
    for (const auto& s : subs_) s->close();
    subs_.clear();
}

std::vector<StreamFrame> FrameHub::history(const std::string& run_id) const {
    std::lock_guard lock(mutex_);
    auto it = history_.find(run_id);
    if (it == history_.end()) return {};
    return {it->second.begin(), it->second.end()};
}

std::size_t FrameHub::subscriber_count() const {
    std::lock_guard lock(mutex_);
    return subs_.size();
}

}  // namespace qdawg
