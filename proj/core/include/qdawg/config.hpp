#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "qdawg/errors.hpp"
#include "qdawg/units.hpp"

namespace qdawg {

enum class MeasurementKind { PLIntensity, ODMR, ReadoutWindow, Rabi, Ramsey, HahnEcho, T1 };

inline constexpr std::array<MeasurementKind, 7> kAllMeasurementKinds{
    MeasurementKind::PLIntensity, MeasurementKind::ODMR,     MeasurementKind::ReadoutWindow, MeasurementKind::Rabi,
    MeasurementKind::Ramsey,      MeasurementKind::HahnEcho, MeasurementKind::T1};

std::string_view to_string(MeasurementKind kind);
/// Accepts the canonical names plus the short aliases `pl` and `hahn`.
std::optional<MeasurementKind> parse_measurement_kind(std::string_view name);

/// Physical quantity implied by a value's unit suffix.
enum class Quantity { Frequency, Duration, Phase, Field, GyroRatio, Number, Word };

std::string_view to_string(Quantity q);

/// One typed entry of a key-value document. Numbers are stored in base units:
/// Hz, ns, degrees, tesla, Hz/T. `unit` remembers the suffix used on input so
/// a document is written back the way the operator typed it.
struct ConfigValue {
    Quantity quantity = Quantity::Number;
    double number = 0.0;
    std::string word;
    std::string unit;

    static ConfigValue frequency(double hz, std::string unit = "Hz") { return {Quantity::Frequency, hz, {}, std::move(unit)}; }
    static ConfigValue duration(double ns, std::string unit = "ns") { return {Quantity::Duration, ns, {}, std::move(unit)}; }
    static ConfigValue phase(double deg) { return {Quantity::Phase, deg, {}, "deg"}; }
    static ConfigValue field(double tesla, std::string unit = "T") { return {Quantity::Field, tesla, {}, std::move(unit)}; }
    static ConfigValue gyro(double hz_per_t, std::string unit = "Hz/T") { return {Quantity::GyroRatio, hz_per_t, {}, std::move(unit)}; }
    static ConfigValue scalar(double v) { return {Quantity::Number, v, {}, {}}; }
    static ConfigValue choice(std::string w) { return {Quantity::Word, 0.0, std::move(w), {}}; }

    /// Value as it appears right of the `=` sign.
    std::string to_text() const;

    /// Equality ignores the display unit.
    bool operator==(const ConfigValue& o) const {
        return quantity == o.quantity && (quantity == Quantity::Word ? word == o.word : number == o.number);
    }
};

/// Parses `2.87 GHz`, `100ns`, `0.5`, `5 ms`, `28.024 GHz/T`, `180 deg`, or a bare word.
ConfigValue parse_value(std::string_view text);

/// Ordered key-value document: one `key = value` per line, `#` comments.
class KvDocument {
  public:
    static KvDocument parse(std::string_view text);
    std::string to_text() const;

    void set(std::string key, ConfigValue value);
    bool erase(const std::string& key) { return entries_.erase(key) > 0; }
    const ConfigValue* find(const std::string& key) const;
    bool contains(const std::string& key) const { return find(key) != nullptr; }

    const std::map<std::string, ConfigValue>& entries() const noexcept { return entries_; }
    std::size_t size() const noexcept { return entries_.size(); }

    bool operator==(const KvDocument&) const = default;

  private:
    std::map<std::string, ConfigValue> entries_;
};

struct ValidationReport;

/// Keyed parameter set for one measurement program.
class ExperimentConfig {
  public:
    ExperimentConfig() = default;
    ExperimentConfig(MeasurementKind kind, KvDocument entries) : kind_(kind), entries_(std::move(entries)) {}

    static ExperimentConfig parse(MeasurementKind kind, std::string_view text) { return {kind, KvDocument::parse(text)}; }
    std::string to_text() const { return entries_.to_text(); }

    MeasurementKind measurement_kind() const noexcept { return kind_; }
    const KvDocument& entries() const noexcept { return entries_; }

    ExperimentConfig& set(std::string key, ConfigValue v) {
        entries_.set(std::move(key), std::move(v));
        return *this;
    }
    ExperimentConfig& erase(const std::string& key) {
        entries_.erase(key);
        return *this;
    }
    const ConfigValue* find(const std::string& key) const { return entries_.find(key); }

    // Typed accessors; throw ConfigError naming the key when it is absent or mistyped.
    double frequency_hz(const std::string& key) const;
    double duration_ns(const std::string& key) const;
    double number(const std::string& key) const;
    double phase_deg(const std::string& key) const;
    const std::string& word(const std::string& key) const;

    double frequency_hz_or(const std::string& key, double fallback) const;
    double duration_ns_or(const std::string& key, double fallback) const;
    double number_or(const std::string& key, double fallback) const;
    std::string word_or(const std::string& key, std::string fallback) const;

    bool operator==(const ExperimentConfig&) const = default;

  private:
    MeasurementKind kind_ = MeasurementKind::PLIntensity;
    KvDocument entries_;
};

/// Expected type of a schema key. Gain and Count accept bare numbers; Choice accepts words.
enum class ValueType { Frequency, Duration, Gain, Phase, Count, Choice, Real, Field, GyroRatio };

std::string_view to_string(ValueType t);

struct KeySpec {
    std::string key;
    ValueType type = ValueType::Real;
    bool required = true;
    std::string description;
    std::vector<std::string> choices;            // Choice only
    std::optional<ChannelKind> band_channel;     // Frequency keys checked against this channel's band
    std::optional<Band> range;                   // extra numeric bound, inclusive
    std::optional<std::pair<std::string, std::string>> required_when;  // required iff key == word
};

struct ConfigSchema {
    MeasurementKind kind = MeasurementKind::PLIntensity;
    std::vector<KeySpec> keys;

    const KeySpec* find(std::string_view key) const;
};

struct BandViolation {
    std::string key;
    double value = 0.0;
    Band band;
    std::string reason;

    bool operator==(const BandViolation&) const = default;
};

struct ValidationReport {
    bool ok = true;
    std::vector<std::string> missing_keys;
    std::vector<BandViolation> out_of_band;
    std::vector<std::string> warnings;

    std::string to_text() const;
    bool operator==(const ValidationReport&) const = default;
};

class ConfigError : public Error {
  public:
    explicit ConfigError(ValidationReport report);
    ConfigError(const std::string& what, ValidationReport report = {});
    const ValidationReport& report() const noexcept { return report_; }

  private:
    ValidationReport report_;
};

/// Channel table of the virtual board. Fixed ids: laser gate 0, microwave
/// generator 1, readout trigger 2, digitizer 3. The generator band may be
/// overridden by the optional config keys `mw_band_low` / `mw_band_high`.
struct ChannelMap {
    Channel laser{0, ChannelKind::LaserGate};
    Channel microwave{1, ChannelKind::MicrowaveGenerator};
    Channel trigger{2, ChannelKind::ReadoutTrigger};
    Channel digitizer{3, ChannelKind::Digitizer};

    const Channel& by_kind(ChannelKind kind) const;
    std::vector<Channel> all() const { return {laser, microwave, trigger, digitizer}; }
};

ChannelMap channel_map(const ExperimentConfig& config);

/// Never throws on bad configs; every problem is listed in the report.
/// Unknown keys become warnings.
ValidationReport validate_config(const ExperimentConfig& config, const ConfigSchema& schema);

}  // namespace qdawg
