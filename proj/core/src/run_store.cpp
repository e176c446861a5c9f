#include "qdawg/run_store.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <unistd.h>

#include "qdawg/text.hpp"

namespace qdawg {

namespace fs = std::filesystem;

namespace {

constexpr std::string_view kCrockford = "0123456789ABCDEFGHJKMNPQRSTVWXYZ";

std::uint64_t splitmix(std::uint64_t& s) {
    std::uint64_t z = (s += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

std::uint64_t now_ms() {
    return static_cast<std::uint64_t>(
        std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
            .count());
}

}  // namespace

UlidGenerator::UlidGenerator(std::uint64_t seed, Clock clock) : clock_(std::move(clock)), state_(seed) {
    if (!clock_) clock_ = now_ms;
    if (state_ == 0) state_ = (static_cast<std::uint64_t>(std::random_device{}()) << 32) ^ std::random_device{}();
}

std::string UlidGenerator::next() {
    std::lock_guard lock(mutex_);
    std::uint64_t ms = clock_();
    if (ms <= last_ms_ && (hi_ | lo_) != 0) {
        // Same (or earlier) millisecond: bump the random part so ids stay ordered.
        ms = last_ms_;
        if (++lo_ == 0) {
            hi_ = (hi_ + 1) & 0xFFFF;
            if (hi_ == 0) ++ms;
        }
    } else {
        hi_ = splitmix(state_) & 0xFFFF;
        lo_ = splitmix(state_);
    }
    last_ms_ = ms;

    // 128 bits: 48 time, 80 random; 26 base-32 digits cover 130 bits, the top 2 are zero.
    const std::uint64_t top = ((ms & 0xFFFFFFFFFFFFULL) << 16) | hi_;
    const auto bits5 = [&](int o) -> std::uint64_t {
        if (o >= 64) return (top >> (o - 64)) & 31;
        if (o + 5 <= 64) return (lo_ >> o) & 31;
        return ((lo_ >> o) | (top << (64 - o))) & 31;
    };
    std::string out(26, '0');
    for (int i = 0; i < 26; ++i) out[static_cast<std::size_t>(i)] = kCrockford[bits5(5 * (25 - i))];
    return out;
}

bool UlidGenerator::valid(std::string_view id) {
    if (id.size() != 26 || id[0] > '7') return false;
    return std::all_of(id.begin(), id.end(), [](char c) { return kCrockford.find(c) != std::string_view::npos; });
}

std::uint64_t UlidGenerator::timestamp_ms(std::string_view id) {
    if (!valid(id)) throw std::invalid_argument("not a run id: " + std::string(id));
    std::uint64_t ms = 0;
    for (std::size_t i = 0; i < 10; ++i) ms = (ms << 5) | kCrockford.find(id[i]);
    return ms;
}

std::string utc_timestamp(std::chrono::system_clock::time_point t) {
    const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(t.time_since_epoch()).count();
    const std::time_t secs = static_cast<std::time_t>(ms / 1000);
    std::tm tm{};
    gmtime_r(&secs, &tm);
    char buf[64];
    std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900, tm.tm_mon + 1, tm.tm_mday,
                  tm.tm_hour, tm.tm_min, tm.tm_sec, static_cast<int>(ms % 1000));
    return buf;
}

std::string_view to_string(RunStatus s) {
    switch (s) {
        case RunStatus::Pending: return "pending";
        case RunStatus::Running: return "running";
        case RunStatus::Done: return "done";
        case RunStatus::Failed: return "failed";
    }
    return "?";
}

std::optional<RunStatus> parse_run_status(std::string_view s) {
    for (auto st : {RunStatus::Pending, RunStatus::Running, RunStatus::Done, RunStatus::Failed})
        if (to_string(st) == s) return st;
    return std::nullopt;
}

void RunManifest::advance(RunStatus next) {
    const bool terminal = status == RunStatus::Done || status == RunStatus::Failed;
    if (terminal || static_cast<int>(next) <= static_cast<int>(status))
        throw std::logic_error("run status cannot move from " + std::string(to_string(status)) + " to " +
                               std::string(to_string(next)));
    status = next;
}

namespace {

constexpr std::string_view kManifestHeader = "# qdawg-manifest v1";

std::string one_line(std::string s) {
    std::replace(s.begin(), s.end(), '\n', ' ');
    std::replace(s.begin(), s.end(), '\r', ' ');
    return s;
}

}  // namespace

std::string RunManifest::to_text() const {
    std::string s;
    s += kManifestHeader;
    s += '\n';
    s += "run_id = " + run_id + "\n";
    s += "kind = " + std::string(qdawg::to_string(kind)) + "\n";
    s += "seed = " + std::to_string(seed) + "\n";
    s += "status = " + std::string(qdawg::to_string(status)) + "\n";
    s += "started = " + started + "\n";
    s += "finished = " + finished + "\n";
    s += "output_path = " + one_line(output_path) + "\n";
    s += "error = " + one_line(error) + "\n";
    s += "[config]\n" + config.to_text();
    s += "[physics]\n" + physics.to_text();
    return s;
}

RunManifest RunManifest::parse(std::string_view input) {
    RunManifest m;
    std::string section;
    std::string config_text, physics_text;
    bool have_kind = false, have_id = false, have_status = false;
    int line_no = 0;
    for (auto raw : text::split(input, '\n')) {
        ++line_no;
        auto line = raw;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line == "[config]" || line == "[physics]") {
            section = std::string(line.substr(1, line.size() - 2));
            continue;
        }
        if (!section.empty()) {
            (section == "config" ? config_text : physics_text).append(line).append("\n");
            continue;
        }
        const auto t = text::trim(line);
        if (t.empty() || t.front() == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string_view::npos) throw ParseError("expected 'key = value'", line_no);
        const auto key = text::trim(t.substr(0, eq));
        const auto value = std::string(text::trim(t.substr(eq + 1)));
        if (key == "run_id") {
            m.run_id = value;
            have_id = true;
        } else if (key == "kind") {
            const auto k = parse_measurement_kind(value);
            if (!k) throw ParseError("unknown kind '" + value + "'", line_no);
            m.kind = *k;
            have_kind = true;
        } else if (key == "seed") {
            const auto [end, ec] = std::from_chars(value.data(), value.data() + value.size(), m.seed);
            if (ec != std::errc{} || end != value.data() + value.size()) throw ParseError("bad seed", line_no);
        } else if (key == "status") {
            const auto s = parse_run_status(value);
            if (!s) throw ParseError("unknown status '" + value + "'", line_no);
            m.status = *s;
            have_status = true;
        } else if (key == "started") {
            m.started = value;
        } else if (key == "finished") {
            m.finished = value;
        } else if (key == "output_path") {
            m.output_path = value;
        } else if (key == "error") {
            m.error = value;
        } else {
            throw ParseError("unknown manifest key '" + std::string(key) + "'", line_no);
        }
    }
    if (!have_id || !have_kind || !have_status) throw ParseError("manifest lacks run_id, kind or status");
    m.config = ExperimentConfig::parse(m.kind, config_text);
    m.physics = KvDocument::parse(physics_text);
    return m;
}

void write_file_atomic(const fs::path& path, std::string_view bytes) {
    fs::path tmp = path;
    tmp += ".tmp-" + std::to_string(::getpid());
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        out.flush();
        if (!out) throw std::runtime_error("write failed for " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp);
        throw std::runtime_error("cannot rename into " + path.string() + ": " + ec.message());
    }
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

DataStore::DataStore(fs::path root) : root_(std::move(root)) { fs::create_directories(root_ / "runs"); }

fs::path DataStore::run_dir(const std::string& id) const {
    if (!UlidGenerator::valid(id)) throw std::invalid_argument("not a run id: " + id);
    return root_ / "runs" / id;
}

fs::path DataStore::result_path(const std::string& id) const { return run_dir(id) / "result"; }

void DataStore::create(const RunManifest& manifest) {
    std::lock_guard lock(mutex_);
    const auto dir = run_dir(manifest.run_id);
    if (!fs::create_directory(dir)) throw std::runtime_error("run " + manifest.run_id + " already exists");
    write_file_atomic(dir / "manifest", manifest.to_text());
}

void DataStore::save_manifest(const RunManifest& manifest) {
    std::lock_guard lock(mutex_);
    const auto dir = run_dir(manifest.run_id);
    if (!fs::is_directory(dir)) throw std::runtime_error("unknown run " + manifest.run_id);
    write_file_atomic(dir / "manifest", manifest.to_text());
}

void DataStore::save_result(const std::string& id, const MeasurementResult& result) {
    std::lock_guard lock(mutex_);
    const auto path = result_path(id);
    if (fs::exists(path)) throw std::runtime_error("result for run " + id + " already written");
    write_file_atomic(path, result.to_text());
}

std::vector<std::string> DataStore::list() const {
    std::lock_guard lock(mutex_);
    std::vector<std::string> ids;
    for (const auto& e : fs::directory_iterator(root_ / "runs")) {
        const auto name = e.path().filename().string();
        if (e.is_directory() && UlidGenerator::valid(name)) ids.push_back(name);
    }
    std::sort(ids.begin(), ids.end());
    return ids;
}

std::optional<RunManifest> DataStore::manifest(const std::string& id) const {
    if (!UlidGenerator::valid(id)) return std::nullopt;
    std::lock_guard lock(mutex_);
    const auto path = root_ / "runs" / id / "manifest";
    if (!fs::exists(path)) return std::nullopt;
    return RunManifest::parse(read_file(path));
}

std::optional<std::string> DataStore::result_text(const std::string& id) const {
    if (!UlidGenerator::valid(id)) return std::nullopt;
    std::lock_guard lock(mutex_);
    const auto path = root_ / "runs" / id / "result";
    if (!fs::exists(path)) return std::nullopt;
    return read_file(path);
}

std::vector<std::string> DataStore::recover() {
    std::vector<std::string> failed;
    for (const auto& id : list()) {
        auto m = manifest(id);
        if (!m || (m->status != RunStatus::Pending && m->status != RunStatus::Running)) continue;
        m->advance(RunStatus::Failed);
        m->finished = utc_timestamp();
        m->error = "interrupted: service stopped before the run finished";
        save_manifest(*m);
        failed.push_back(id);
    }
    // Temp files from an interrupted atomic write are never valid results.
    std::lock_guard lock(mutex_);
    std::vector<fs::path> stale;
    for (const auto& e : fs::recursive_directory_iterator(root_ / "runs"))
        if (e.is_regular_file() && e.path().filename().string().find(".tmp-") != std::string::npos)
            stale.push_back(e.path());
    for (const auto& p : stale) fs::remove(p);
    return failed;
}

fs::path default_data_dir() {
    if (const char* env = std::getenv("QDAWG_DATA_DIR"); env && *env) return env;
    return "qdawg-data";
}

}  // namespace qdawg
