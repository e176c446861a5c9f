#include <doctest.h>

#include <algorithm>
#include <random>

#include "qdawg/config.hpp"

using namespace qdawg;

namespace {

ConfigSchema toy_schema() {
    ConfigSchema s;
    s.kind = MeasurementKind::ODMR;
    s.keys = {
        {"mw_freq_start", ValueType::Frequency, true, "", {}, ChannelKind::MicrowaveGenerator, {}, {}},
        {"mw_freq_stop", ValueType::Frequency, true, "", {}, ChannelKind::MicrowaveGenerator, {}, {}},
        {"mw_gain", ValueType::Gain, true, "", {}, {}, {}, {}},
        {"n_points", ValueType::Count, true, "", {}, {}, {}, {}},
        {"laser_readout_time", ValueType::Duration, true, "", {}, {}, {}, {}},
        {"readout_mode", ValueType::Choice, false, "", {"photon", "analog"}, {}, {}, {}},
        {"t1_pi_pulse", ValueType::Choice, false, "", {"on", "off"}, {}, {}, {}},
        {"pi_time", ValueType::Duration, false, "", {}, {}, {}, std::pair<std::string, std::string>{"t1_pi_pulse", "on"}},
    };
    return s;
}

const char* kGood = R"(
# toy ODMR
mw_freq_start = 7 GHz
mw_freq_stop = 8 GHz
mw_gain = 0.5
n_points = 11
laser_readout_time = 2 us
)";

}  // namespace

TEST_SUITE("config") {
    TEST_CASE("value parsing with units") {
        CHECK(parse_value("2.87 GHz").number == 2.87e9);
        CHECK(parse_value("2.87GHz").quantity == Quantity::Frequency);
        CHECK(parse_value("100ns").number == 100.0);
        CHECK(parse_value("5 ms").number == 5e6);
        CHECK(parse_value("1.5 us").number == 1500.0);
        CHECK(parse_value("28.024 GHz/T").quantity == Quantity::GyroRatio);
        CHECK(parse_value("180 deg").quantity == Quantity::Phase);
        CHECK(parse_value("0.5").quantity == Quantity::Number);
        CHECK(parse_value("1e-3").number == 1e-3);
        CHECK(parse_value("photon").word == "photon");
        CHECK_THROWS_AS(parse_value("3 furlongs"), ParseError);
        CHECK_THROWS_AS(parse_value(""), ParseError);
    }

    TEST_CASE("document parse and round trip") {
        const auto doc = KvDocument::parse(kGood);
        CHECK(doc.size() == 5);
        CHECK(doc.find("mw_freq_start")->number == 7e9);
        CHECK(KvDocument::parse(doc.to_text()) == doc);
        CHECK(doc.to_text().find("mw_freq_start = 7 GHz") != std::string::npos);
    }

    TEST_CASE("document errors carry line numbers") {
        try {
            KvDocument::parse("a = 1\nb 2\n");
            FAIL("expected ParseError");
        } catch (const ParseError& e) {
            CHECK(e.line() == 2);
        }
        CHECK_THROWS_AS(KvDocument::parse("a = 1\na = 2\n"), ParseError);
        CHECK_THROWS_AS(KvDocument::parse("bad key = 1\n"), ParseError);
    }

    TEST_CASE("typed accessors") {
        const auto cfg = ExperimentConfig::parse(MeasurementKind::ODMR, kGood);
        CHECK(cfg.frequency_hz("mw_freq_stop") == 8e9);
        CHECK(cfg.duration_ns("laser_readout_time") == 2000.0);
        CHECK(cfg.number("n_points") == 11.0);
        CHECK(cfg.number_or("inner_reps", 7.0) == 7.0);
        CHECK_THROWS_AS(cfg.duration_ns("mw_gain"), ConfigError);
        try {
            (void)cfg.frequency_hz("missing_key");
            FAIL("expected ConfigError");
        } catch (const ConfigError& e) {
            CHECK(std::string(e.what()).find("missing_key") != std::string::npos);
        }
    }

    TEST_CASE("complete config validates") {
        const auto r = validate_config(ExperimentConfig::parse(MeasurementKind::ODMR, kGood), toy_schema());
        CHECK(r.ok);
        CHECK(r.missing_keys.empty());
        CHECK(r.out_of_band.empty());
        CHECK(r.warnings.empty());
    }

    TEST_CASE("missing key is reported, not thrown") {
        auto cfg = ExperimentConfig::parse(MeasurementKind::ODMR, kGood);
        cfg.erase("mw_gain");
        const auto r = validate_config(cfg, toy_schema());
        CHECK_FALSE(r.ok);
        CHECK(r.missing_keys == std::vector<std::string>{"mw_gain"});
    }

    TEST_CASE("out of band frequency") {
        auto cfg = ExperimentConfig::parse(MeasurementKind::ODMR, kGood);
        cfg.set("mw_freq_stop", ConfigValue::frequency(12e9, "GHz"));
        const auto r = validate_config(cfg, toy_schema());
        CHECK_FALSE(r.ok);
        REQUIRE(r.out_of_band.size() == 1);
        CHECK(r.out_of_band[0].key == "mw_freq_stop");
        CHECK(r.out_of_band[0].value == 12e9);
        CHECK(r.out_of_band[0].band == Band{6e9, 10e9});
    }

    TEST_CASE("band override keys move the generator band") {
        auto cfg = ExperimentConfig::parse(MeasurementKind::ODMR, kGood);
        cfg.set("mw_freq_start", ConfigValue::frequency(2.8e9, "GHz"));
        cfg.set("mw_freq_stop", ConfigValue::frequency(2.9e9, "GHz"));
        CHECK_FALSE(validate_config(cfg, toy_schema()).ok);
        cfg.set("mw_band_low", ConfigValue::frequency(2e9, "GHz"));
        cfg.set("mw_band_high", ConfigValue::frequency(4e9, "GHz"));
        auto schema = toy_schema();
        schema.keys.push_back({"mw_band_low", ValueType::Frequency, false, "", {}, {}, {}, {}});
        schema.keys.push_back({"mw_band_high", ValueType::Frequency, false, "", {}, {}, {}, {}});
        CHECK(validate_config(cfg, schema).ok);
    }

    TEST_CASE("range and type violations") {
        auto cfg = ExperimentConfig::parse(MeasurementKind::ODMR, kGood);
        cfg.set("mw_gain", ConfigValue::scalar(1.5));
        cfg.set("n_points", ConfigValue::scalar(2.5));
        cfg.set("laser_readout_time", ConfigValue::frequency(1e6));
        cfg.set("readout_mode", ConfigValue::choice("telepathy"));
        const auto r = validate_config(cfg, toy_schema());
        CHECK_FALSE(r.ok);
        CHECK(r.out_of_band.size() == 4);
    }

    TEST_CASE("unknown keys warn only") {
        auto cfg = ExperimentConfig::parse(MeasurementKind::ODMR, kGood);
        cfg.set("colour", ConfigValue::choice("blue"));
        const auto r = validate_config(cfg, toy_schema());
        CHECK(r.ok);
        CHECK(r.warnings.size() == 1);
    }

    TEST_CASE("conditional requirement") {
        auto cfg = ExperimentConfig::parse(MeasurementKind::ODMR, kGood);
        cfg.set("t1_pi_pulse", ConfigValue::choice("on"));
        auto r = validate_config(cfg, toy_schema());
        CHECK(r.missing_keys == std::vector<std::string>{"pi_time"});
        cfg.set("t1_pi_pulse", ConfigValue::choice("off"));
        CHECK(validate_config(cfg, toy_schema()).ok);
    }

    TEST_CASE("validation is idempotent and order independent") {
        auto cfg = ExperimentConfig::parse(MeasurementKind::ODMR, kGood);
        cfg.erase("mw_gain").set("mw_freq_start", ConfigValue::frequency(1e9)).set("extra", ConfigValue::scalar(1));
        const auto first = validate_config(cfg, toy_schema());
        CHECK(validate_config(cfg, toy_schema()) == first);

        std::vector<std::pair<std::string, ConfigValue>> items(cfg.entries().entries().begin(), cfg.entries().entries().end());
        std::mt19937 rng(3);
        for (int i = 0; i < 20; ++i) {
            std::shuffle(items.begin(), items.end(), rng);
            KvDocument doc;
            for (const auto& [k, v] : items) doc.set(k, v);
            CHECK(validate_config(ExperimentConfig(MeasurementKind::ODMR, doc), toy_schema()) == first);
        }
    }
}
