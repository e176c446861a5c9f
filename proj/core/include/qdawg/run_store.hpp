#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "qdawg/config.hpp"
#include "qdawg/sequences.hpp"

namespace qdawg {

/// 26-character Crockford base-32 id: 48-bit millisecond timestamp, 80 random bits.
/// Ids from one generator sort strictly by creation order, even within a millisecond.
class UlidGenerator {
  public:
    using Clock = std::function<std::uint64_t()>;  // ms since the Unix epoch

    explicit UlidGenerator(std::uint64_t seed = 0, Clock clock = {});
    std::string next();

    static bool valid(std::string_view id);
    static std::uint64_t timestamp_ms(std::string_view id);

  private:
    Clock clock_;
    std::uint64_t state_;
    std::uint64_t last_ms_ = 0;
    std::uint64_t hi_ = 0;  // upper 16 random bits
    std::uint64_t lo_ = 0;  // lower 64 random bits
    std::mutex mutex_;
};

/// "2026-10-16T08:30:00.123Z"
std::string utc_timestamp(std::chrono::system_clock::time_point t = std::chrono::system_clock::now());

enum class RunStatus : std::uint8_t { Pending = 0, Running = 1, Done = 2, Failed = 3 };

std::string_view to_string(RunStatus s);
std::optional<RunStatus> parse_run_status(std::string_view s);

struct RunManifest {
    std::string run_id;
    MeasurementKind kind = MeasurementKind::PLIntensity;
    ExperimentConfig config;
    KvDocument physics;
    std::uint64_t seed = 0;
    std::string started;   // UTC, empty until running
    std::string finished;  // UTC, empty until done or failed
    std::string output_path;
    RunStatus status = RunStatus::Pending;
    std::string error;     // failure reason

    /// Moves the status forward; throws std::logic_error on a backward or repeated transition.
    void advance(RunStatus next);

    /// Header lines, then [config] and [physics] sections.
    std::string to_text() const;
    static RunManifest parse(std::string_view text);

    bool operator==(const RunManifest&) const = default;
};

/// Writes `bytes` to a sibling temp file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);
std::string read_file(const std::filesystem::path& path);

/// Append-only run directory: `<root>/runs/<run_id>/manifest` and `.../result`.
/// Results are written once; a run id can never be reused.
class DataStore {
  public:
    explicit DataStore(std::filesystem::path root);

    const std::filesystem::path& root() const noexcept { return root_; }
    std::filesystem::path run_dir(const std::string& id) const;
    std::filesystem::path result_path(const std::string& id) const;

    /// Creates the run directory and its first manifest; throws std::runtime_error if it exists.
    void create(const RunManifest& manifest);
    void save_manifest(const RunManifest& manifest);
    /// Throws std::runtime_error if a result already exists.
    void save_result(const std::string& id, const MeasurementResult& result);

    std::vector<std::string> list() const;  // sorted, oldest first
    std::optional<RunManifest> manifest(const std::string& id) const;
    std::optional<std::string> result_text(const std::string& id) const;

    /// Marks runs left pending or running by a previous process as failed.
    /// Returns their ids.
    std::vector<std::string> recover();

  private:
    std::filesystem::path root_;
    mutable std::mutex mutex_;
};

/// Default data directory: $QDAWG_DATA_DIR, else ./qdawg-data.
std::filesystem::path default_data_dir();

}  // namespace qdawg
