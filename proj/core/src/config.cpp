#include "qdawg/config.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <sstream>

#include "qdawg/text.hpp"

namespace qdawg {

namespace {

struct UnitDef {
    std::string_view name;
    Quantity quantity;
    double scale;  // multiply by this to reach base units
};

constexpr UnitDef kUnits[] = {
    {"Hz", Quantity::Frequency, 1.0},       {"kHz", Quantity::Frequency, 1e3},
    {"MHz", Quantity::Frequency, 1e6},      {"GHz", Quantity::Frequency, 1e9},
    {"ns", Quantity::Duration, 1.0},        {"us", Quantity::Duration, 1e3},
    {"ms", Quantity::Duration, 1e6},        {"s", Quantity::Duration, 1e9},
    {"deg", Quantity::Phase, 1.0},          {"T", Quantity::Field, 1.0},
    {"mT", Quantity::Field, 1e-3},          {"uT", Quantity::Field, 1e-6},
    {"Hz/T", Quantity::GyroRatio, 1.0},     {"kHz/T", Quantity::GyroRatio, 1e3},
    {"MHz/T", Quantity::GyroRatio, 1e6},    {"GHz/T", Quantity::GyroRatio, 1e9},
};

const UnitDef* find_unit(std::string_view name) {
    for (const auto& u : kUnits)
        if (u.name == name) return &u;
    return nullptr;
}

std::string_view base_unit(Quantity q) {
    switch (q) {
        case Quantity::Frequency: return "Hz";
        case Quantity::Duration: return "ns";
        case Quantity::Phase: return "deg";
        case Quantity::Field: return "T";
        case Quantity::GyroRatio: return "Hz/T";
        default: return "";
    }
}

bool is_word(std::string_view s) {
    if (s.empty() || !(std::isalpha(static_cast<unsigned char>(s[0])) || s[0] == '_')) return false;
    return std::all_of(s.begin(), s.end(), [](char c) {
        return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-';
    });
}

bool is_key(std::string_view s) {
    return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) {
        return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.';
    });
}

}  // namespace

std::string_view to_string(MeasurementKind kind) {
    switch (kind) {
        case MeasurementKind::PLIntensity: return "pl-intensity";
        case MeasurementKind::ODMR: return "odmr";
        case MeasurementKind::ReadoutWindow: return "readout-window";
        case MeasurementKind::Rabi: return "rabi";
        case MeasurementKind::Ramsey: return "ramsey";
        case MeasurementKind::HahnEcho: return "hahn-echo";
        case MeasurementKind::T1: return "t1";
    }
    return "unknown";
}

std::optional<MeasurementKind> parse_measurement_kind(std::string_view name) {
    for (auto k : kAllMeasurementKinds)
        if (to_string(k) == name) return k;
    if (name == "pl") return MeasurementKind::PLIntensity;
    if (name == "hahn") return MeasurementKind::HahnEcho;
    return std::nullopt;
}

std::string_view to_string(Quantity q) {
    switch (q) {
        case Quantity::Frequency: return "frequency";
        case Quantity::Duration: return "duration";
        case Quantity::Phase: return "phase";
        case Quantity::Field: return "field";
        case Quantity::GyroRatio: return "gyromagnetic ratio";
        case Quantity::Number: return "number";
        case Quantity::Word: return "word";
    }
    return "unknown";
}

std::string_view to_string(ValueType t) {
    switch (t) {
        case ValueType::Frequency: return "frequency";
        case ValueType::Duration: return "duration";
        case ValueType::Gain: return "gain";
        case ValueType::Phase: return "phase";
        case ValueType::Count: return "count";
        case ValueType::Choice: return "choice";
        case ValueType::Real: return "real";
        case ValueType::Field: return "field";
        case ValueType::GyroRatio: return "gyromagnetic ratio";
    }
    return "unknown";
}

std::string ConfigValue::to_text() const {
    if (quantity == Quantity::Word) return word;
    if (quantity == Quantity::Number) return text::format_double(number);
    // Use the remembered unit only when the scaled value reads back bit-identically.
    if (const auto* u = find_unit(unit); u && u->quantity == quantity) {
        const double shown = number / u->scale;
        if (shown * u->scale == number) return text::format_double(shown) + " " + std::string(u->name);
    }
    return text::format_double(number) + " " + std::string(base_unit(quantity));
}

ConfigValue parse_value(std::string_view raw) {
    const auto s = text::trim(raw);
    if (s.empty()) throw ParseError("empty value");
    if (is_word(s) && s != "inf" && s != "nan") return ConfigValue::choice(std::string(s));

    // Split numeric prefix from unit suffix.
    std::size_t i = 0;
    while (i < s.size() && (std::isdigit(static_cast<unsigned char>(s[i])) || s[i] == '.' || s[i] == '-' || s[i] == '+' ||
                            s[i] == 'e' || s[i] == 'E')) {
        // an 'e' only belongs to the number when followed by a digit or sign
        if ((s[i] == 'e' || s[i] == 'E') &&
            !(i + 1 < s.size() && (std::isdigit(static_cast<unsigned char>(s[i + 1])) || s[i + 1] == '-' || s[i + 1] == '+')))
            break;
        ++i;
    }
    const auto num_text = s.substr(0, i);
    const auto unit_text = text::trim(s.substr(i));
    const auto num = text::parse_double(num_text);
    if (!num || !std::isfinite(*num)) throw ParseError("malformed number '" + std::string(s) + "'");
    if (unit_text.empty()) return ConfigValue::scalar(*num);
    const auto* u = find_unit(unit_text);
    if (!u) throw ParseError("unknown unit '" + std::string(unit_text) + "'");
    return ConfigValue{u->quantity, *num * u->scale, {}, std::string(u->name)};
}

KvDocument KvDocument::parse(std::string_view body) {
    KvDocument doc;
    int line_no = 0;
    for (auto line : text::split(body, '\n')) {
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = text::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) throw ParseError("expected 'key = value'", line_no);
        const auto key = text::trim(line.substr(0, eq));
        if (!is_key(key)) throw ParseError("invalid key '" + std::string(key) + "'", line_no);
        if (doc.contains(std::string(key))) throw ParseError("duplicate key '" + std::string(key) + "'", line_no);
        try {
            doc.set(std::string(key), parse_value(line.substr(eq + 1)));
        } catch (const ParseError& e) {
            throw ParseError(std::string(key) + ": " + e.what(), line_no);
        }
    }
    return doc;
}

std::string KvDocument::to_text() const {
    std::string out;
    for (const auto& [k, v] : entries_) out += k + " = " + v.to_text() + "\n";
    return out;
}

void KvDocument::set(std::string key, ConfigValue value) { entries_.insert_or_assign(std::move(key), std::move(value)); }

const ConfigValue* KvDocument::find(const std::string& key) const {
    const auto it = entries_.find(key);
    return it == entries_.end() ? nullptr : &it->second;
}

namespace {
const ConfigValue& require(const ExperimentConfig& c, const std::string& key, Quantity q) {
    const auto* v = c.find(key);
    if (!v) {
        ValidationReport r;
        r.ok = false;
        r.missing_keys.push_back(key);
        throw ConfigError("missing key '" + key + "'", r);
    }
    if (v->quantity != q) throw ConfigError("key '" + key + "' must be a " + std::string(to_string(q)));
    return *v;
}
}  // namespace

double ExperimentConfig::frequency_hz(const std::string& key) const { return require(*this, key, Quantity::Frequency).number; }
double ExperimentConfig::duration_ns(const std::string& key) const { return require(*this, key, Quantity::Duration).number; }
double ExperimentConfig::number(const std::string& key) const { return require(*this, key, Quantity::Number).number; }
const std::string& ExperimentConfig::word(const std::string& key) const { return require(*this, key, Quantity::Word).word; }

double ExperimentConfig::phase_deg(const std::string& key) const {
    const auto* v = find(key);
    if (v && v->quantity == Quantity::Number) return v->number;
    return require(*this, key, Quantity::Phase).number;
}

double ExperimentConfig::frequency_hz_or(const std::string& key, double fallback) const {
    return find(key) ? frequency_hz(key) : fallback;
}
double ExperimentConfig::duration_ns_or(const std::string& key, double fallback) const {
    return find(key) ? duration_ns(key) : fallback;
}
double ExperimentConfig::number_or(const std::string& key, double fallback) const {
    return find(key) ? number(key) : fallback;
}
std::string ExperimentConfig::word_or(const std::string& key, std::string fallback) const {
    return find(key) ? word(key) : fallback;
}

const KeySpec* ConfigSchema::find(std::string_view key) const {
    for (const auto& k : keys)
        if (k.key == key) return &k;
    return nullptr;
}

std::string ValidationReport::to_text() const {
    std::ostringstream os;
    os << "ok = " << (ok ? "true" : "false") << "\n";
    for (const auto& k : missing_keys) os << "missing: " << k << "\n";
    for (const auto& b : out_of_band) {
        os << "out_of_band: " << b.key << " = " << text::format_double(b.value) << " not in [" << text::format_double(b.band.low_hz)
           << ", " << text::format_double(b.band.high_hz) << "]";
        if (!b.reason.empty()) os << " (" << b.reason << ")";
        os << "\n";
    }
    for (const auto& w : warnings) os << "warning: " << w << "\n";
    return os.str();
}

ConfigError::ConfigError(ValidationReport report)
    : Error("invalid configuration:\n" + report.to_text()), report_(std::move(report)) {}

ConfigError::ConfigError(const std::string& what, ValidationReport report) : Error(what), report_(std::move(report)) {}

const Channel& ChannelMap::by_kind(ChannelKind kind) const {
    switch (kind) {
        case ChannelKind::LaserGate: return laser;
        case ChannelKind::MicrowaveGenerator: return microwave;
        case ChannelKind::ReadoutTrigger: return trigger;
        case ChannelKind::Digitizer: return digitizer;
    }
    return laser;
}

ChannelMap channel_map(const ExperimentConfig& config) {
    ChannelMap map;
    auto band = Channel::kGeneratorBand;
    if (const auto* v = config.find("mw_band_low"); v && v->quantity == Quantity::Frequency) band.low_hz = v->number;
    if (const auto* v = config.find("mw_band_high"); v && v->quantity == Quantity::Frequency) band.high_hz = v->number;
    if (band.low_hz < band.high_hz) map.microwave = Channel(1, ChannelKind::MicrowaveGenerator, band);
    return map;
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

bool accepts(ValueType t, Quantity q) {
    switch (t) {
        case ValueType::Frequency: return q == Quantity::Frequency;
        case ValueType::Duration: return q == Quantity::Duration;
        case ValueType::Gain:
        case ValueType::Count:
        case ValueType::Real: return q == Quantity::Number;
        case ValueType::Phase: return q == Quantity::Phase || q == Quantity::Number;
        case ValueType::Choice: return q == Quantity::Word;
        case ValueType::Field: return q == Quantity::Field;
        case ValueType::GyroRatio: return q == Quantity::GyroRatio;
    }
    return false;
}

}  // namespace

ValidationReport validate_config(const ExperimentConfig& config, const ConfigSchema& schema) {
    ValidationReport report;
    const auto channels = channel_map(config);

    if (config.measurement_kind() != schema.kind)
        report.warnings.push_back("schema is for '" + std::string(to_string(schema.kind)) + "' but config is '" +
                                  std::string(to_string(config.measurement_kind())) + "'");

    // Bands must be sane before any frequency is checked against them.
    const auto* lo = config.find("mw_band_low");
    const auto* hi = config.find("mw_band_high");
    if (lo && hi && lo->quantity == Quantity::Frequency && hi->quantity == Quantity::Frequency && !(lo->number < hi->number))
        report.out_of_band.push_back({"mw_band_high", hi->number, {lo->number, kInf}, "band high must exceed band low"});

    for (const auto& spec : schema.keys) {
        const auto* v = config.find(spec.key);
        if (!v) {
            bool needed = spec.required;
            if (spec.required_when) {
                const auto* gate = config.find(spec.required_when->first);
                needed = gate && gate->quantity == Quantity::Word && gate->word == spec.required_when->second;
            }
            if (needed) report.missing_keys.push_back(spec.key);
            continue;
        }
        if (!accepts(spec.type, v->quantity)) {
            report.out_of_band.push_back({spec.key, v->number, {}, "expected " + std::string(to_string(spec.type)) +
                                                                        ", got " + std::string(to_string(v->quantity))});
            continue;
        }
        const double x = v->number;
        auto flag = [&](Band b, std::string why) {
            if (!b.contains(x)) report.out_of_band.push_back({spec.key, x, b, std::move(why)});
        };
        switch (spec.type) {
            case ValueType::Frequency:
                if (spec.band_channel)
                    flag(channels.by_kind(*spec.band_channel).band(),
                         std::string(to_string(*spec.band_channel)) + " band");
                else
                    flag({0.0, kInf}, "frequency must be non-negative");
                break;
            case ValueType::Duration: flag({0.0, kInf}, "duration must be non-negative"); break;
            case ValueType::Gain: flag({0.0, 1.0}, "gain must lie in [0, 1]"); break;
            case ValueType::Count:
                if (x != std::floor(x)) report.out_of_band.push_back({spec.key, x, {1.0, kInf}, "count must be an integer"});
                else flag({1.0, kInf}, "count must be >= 1");
                break;
            case ValueType::Choice:
                if (!spec.choices.empty() &&
                    std::find(spec.choices.begin(), spec.choices.end(), v->word) == spec.choices.end()) {
                    std::string allowed;
                    for (const auto& c : spec.choices) allowed += (allowed.empty() ? "" : "|") + c;
                    report.out_of_band.push_back({spec.key, 0.0, {}, "'" + v->word + "' not one of " + allowed});
                }
                break;
            default: break;
        }
        if (spec.range && spec.type != ValueType::Choice) flag(*spec.range, "outside allowed range");
    }

    for (const auto& [key, _] : config.entries().entries())
        if (!schema.find(key)) report.warnings.push_back("unknown key '" + key + "' ignored");

    report.ok = report.missing_keys.empty() && report.out_of_band.empty();
    return report;
}

}  // namespace qdawg
