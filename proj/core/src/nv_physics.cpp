#include "qdawg/nv_physics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <string>

namespace qdawg {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kEquilibriumZ = -1.0 / 3.0;  // p0 = 1/3

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

void require(bool ok, const char* what) {
    if (!ok) throw PhysicsError(what);
}

struct KeyInfo {
    const char* key;
    Quantity quantity;
    double NvEnsembleParams::*field;
    double per_unit;  // config base units per stored unit (1e9 ns per s)
    const char* unit;
};

// Durations in configs are ns; the struct keeps relaxation times in seconds.
const std::array<KeyInfo, 12> kKeys{{
    {"zero_field_splitting", Quantity::Frequency, &NvEnsembleParams::zero_field_splitting_hz, 1.0, "GHz"},
    {"gyromagnetic_ratio", Quantity::GyroRatio, &NvEnsembleParams::gyromagnetic_ratio_hz_per_t, 1.0, "GHz/T"},
    {"bias_field", Quantity::Field, &NvEnsembleParams::bias_field_t, 1.0, "mT"},
    {"linewidth", Quantity::Frequency, &NvEnsembleParams::linewidth_hz, 1.0, "MHz"},
    {"contrast", Quantity::Number, &NvEnsembleParams::contrast, 1.0, ""},
    {"pl_rate_bright", Quantity::Frequency, &NvEnsembleParams::pl_rate_bright_hz, 1.0, "MHz"},
    {"rabi_rate", Quantity::Frequency, &NvEnsembleParams::rabi_rate_hz, 1.0, "MHz"},
    {"t1", Quantity::Duration, &NvEnsembleParams::t1_s, 1e9, "ms"},
    {"t2", Quantity::Duration, &NvEnsembleParams::t2_s, 1e9, "us"},
    {"t2_star", Quantity::Duration, &NvEnsembleParams::t2_star_s, 1e9, "us"},
    {"stretch_t2", Quantity::Number, &NvEnsembleParams::stretch_t2, 1.0, ""},
    {"readout_settle", Quantity::Duration, &NvEnsembleParams::readout_settle_ns, 1.0, "ns"},
}};

}  // namespace

void NvEnsembleParams::validate() const {
    const auto positive = [](double v) { return std::isfinite(v) && v > 0.0; };
    require(positive(zero_field_splitting_hz), "zero_field_splitting must be positive");
    require(positive(gyromagnetic_ratio_hz_per_t), "gyromagnetic_ratio must be positive");
    require(std::isfinite(bias_field_t), "bias_field must be finite");
    require(positive(linewidth_hz), "linewidth must be positive");
    require(std::isfinite(contrast) && contrast > 0.0 && contrast <= 1.0, "contrast must lie in (0, 1]");
    require(positive(pl_rate_bright_hz), "pl_rate_bright must be positive");
    require(positive(rabi_rate_hz), "rabi_rate must be positive");
    require(positive(t1_s) && positive(t2_s) && positive(t2_star_s), "relaxation times must be positive");
    require(std::isfinite(stretch_t2) && stretch_t2 >= 1.0, "stretch_t2 must be >= 1");
    require(positive(readout_settle_ns), "readout_settle must be positive");
    require(t2_star_s <= t2_s, "t2_star must not exceed t2");
    require(t2_s <= 2.0 * t1_s, "t2 must not exceed 2 t1");
}

NvEnsembleParams NvEnsembleParams::from_kv(const KvDocument& doc) {
    NvEnsembleParams p;
    for (const auto& [key, value] : doc.entries()) {
        const auto it = std::find_if(kKeys.begin(), kKeys.end(), [&](const KeyInfo& k) { return key == k.key; });
        if (it == kKeys.end()) throw PhysicsError("unknown physics key '" + key + "'");
        if (value.quantity != it->quantity)
            throw PhysicsError("physics key '" + key + "' expects " + std::string(to_string(it->quantity)) + ", got " +
                               std::string(to_string(value.quantity)));
        p.*(it->field) = value.number / it->per_unit;
    }
    return p;
}

KvDocument NvEnsembleParams::to_kv() const {
    KvDocument doc;
    for (const auto& k : kKeys) {
        const double x = this->*(k.field);
        // Prefer a nearby value that divides back to exactly x. Not every x has one,
        // so only documents (not arbitrary parameter sets) round-trip bit-exactly.
        const double v0 = x * k.per_unit;
        double v = v0, up = v0, down = v0;
        for (int i = 0; i < 8 && v / k.per_unit != x; ++i) {
            up = std::nextafter(up, HUGE_VAL);
            down = std::nextafter(down, -HUGE_VAL);
            if (up / k.per_unit == x) v = up;
            else if (down / k.per_unit == x) v = down;
        }
        doc.set(k.key, ConfigValue{k.quantity, v, {}, k.unit});
    }
    return doc;
}

double lorentzian(double x, double center, double fwhm) {
    const double u = 2.0 * (x - center) / fwhm;
    return 1.0 / (1.0 + u * u);
}

double odmr_pl_rate(double drive_freq_hz, const NvEnsembleParams& p) {
    if (!(drive_freq_hz > 0.0) || !std::isfinite(drive_freq_hz))
        throw PhysicsError("drive frequency must be positive");
    const double dips = lorentzian(drive_freq_hz, p.lower_resonance_hz(), p.linewidth_hz) +
                        lorentzian(drive_freq_hz, p.upper_resonance_hz(), p.linewidth_hz);
    return std::max(p.pl_rate_bright_hz * (1.0 - p.contrast * dips), 1e-9 * p.pl_rate_bright_hz);
}

double rabi_p0(double pulse_ns, double rabi_rate_hz, double detuning_hz) {
    const double w2 = rabi_rate_hz * rabi_rate_hz + detuning_hz * detuning_hz;
    if (w2 == 0.0) return 1.0;
    const double s = std::sin(std::numbers::pi * std::sqrt(w2) * pulse_ns * 1e-9);
    return clamp01(1.0 - rabi_rate_hz * rabi_rate_hz / w2 * s * s);
}

double ramsey_p0(double tau_ns, double detuning_hz, const NvEnsembleParams& p) {
    const double tau_s = tau_ns * 1e-9;
    const double env = std::exp(-(tau_s / p.t2_star_s) * (tau_s / p.t2_star_s));
    return clamp01(0.5 * (1.0 + std::cos(kTwoPi * detuning_hz * tau_s) * env));
}

double hahn_p0(double tau_ns, const NvEnsembleParams& p) {
    const double x = 2.0 * tau_ns * 1e-9 / p.t2_s;
    return clamp01(0.5 * (1.0 + std::exp(-std::pow(x, p.stretch_t2))));
}

double t1_p0(double tau_ns, double initial_p0, const NvEnsembleParams& p) {
    constexpr double eq = 1.0 / 3.0;
    return clamp01(eq + (initial_p0 - eq) * std::exp(-tau_ns * 1e-9 / p.t1_s));
}

double readout_rate(double p0, double t_since_laser_on_ns, const NvEnsembleParams& p) {
    return p.pl_rate_bright_hz * (1.0 - p.contrast * (1.0 - p0) * std::exp(-t_since_laser_on_ns / p.readout_settle_ns));
}

double readout_integral(double p0_at_on, double t0_ns, double t1_ns, double laser_gain, const NvEnsembleParams& p) {
    if (laser_gain <= 0.0 || t1_ns <= t0_ns) return 0.0;
    const double s = p.readout_settle_ns / laser_gain;
    const double dark = p.contrast * (1.0 - p0_at_on) * s * (std::exp(-t0_ns / s) - std::exp(-t1_ns / s));
    return laser_gain * p.pl_rate_bright_hz * ((t1_ns - t0_ns) - dark) * 1e-9;
}

double detuning_hz(double drive_freq_hz, const NvEnsembleParams& p) {
    const double lo = drive_freq_hz - p.lower_resonance_hz();
    const double hi = drive_freq_hz - p.upper_resonance_hz();
    return std::abs(lo) <= std::abs(hi) ? lo : hi;
}

SpinState::SpinState(double p0) : p0_(p0) {
    if (!(p0 >= 0.0 && p0 <= 1.0)) throw PhysicsError("population must lie in [0, 1]");
}

SpinEnsemble::SpinEnsemble(const NvEnsembleParams& params, double p0) : params_(&params) {
    SpinState checked(p0);
    comps_[0] = {0.0, 2.0 * checked.p0() - 1.0};
}

double SpinEnsemble::mean_p0() const {
    const double t2s_ps = params_->t2_star_s * 1e12;
    double z = 0.0;
    for (const auto& [k, c] : comps_) {
        const double u = static_cast<double>(k) / t2s_ps;
        z += c.z.real() * std::exp(-u * u);
    }
    return clamp01(0.5 * (1.0 + z));
}

void SpinEnsemble::pulse(double duration_ns, double rabi_hz, double detuning, double phase_deg) {
    const double w = std::hypot(rabi_hz, detuning);
    if (w == 0.0 || duration_ns <= 0.0) return;
    const double phi = phase_deg * std::numbers::pi / 180.0;
    const double n[3] = {rabi_hz * std::cos(phi) / w, rabi_hz * std::sin(phi) / w, detuning / w};
    const double theta = kTwoPi * w * duration_ns * 1e-9;
    const double c = std::cos(theta), s = std::sin(theta);
    double R[3][3];
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) R[i][j] = (i == j ? c : 0.0) + (1.0 - c) * n[i] * n[j];
    R[0][1] -= s * n[2];
    R[0][2] += s * n[1];
    R[1][0] += s * n[2];
    R[1][2] -= s * n[0];
    R[2][0] -= s * n[1];
    R[2][1] += s * n[0];

    using C = std::complex<double>;
    const C I(0.0, 1.0);
    const C a = C(R[0][0], R[1][0]), b = C(R[0][1], R[1][1]);
    const C alpha = (a - I * b) / 2.0, beta = (a + I * b) / 2.0;
    const C gamma(R[0][2], R[1][2]);
    const C mu = C(R[2][0], -R[2][1]) / 2.0;
    const double r22 = R[2][2];

    std::map<Key, Component> out;
    const auto at = [this](Key k) {
        const auto it = comps_.find(k);
        return it == comps_.end() ? Component{} : it->second;
    };
    auto keys = comps_;
    for (const auto& [k, cmp] : comps_) keys.try_emplace(-k, Component{});
    for (const auto& [k, unused] : keys) {
        const Component here = at(k);
        const C mirror = std::conj(at(-k).m);
        out[k] = {alpha * here.m + beta * mirror + gamma * here.z, mu * here.m + std::conj(mu) * mirror + r22 * here.z};
    }
    comps_ = std::move(out);
    prune();
}

void SpinEnsemble::free_evolve(double duration_ns, double detuning) {
    if (duration_ns <= 0.0) return;
    const auto& p = *params_;
    const double t2_ns = p.t2_s * 1e9;
    const double before = std::pow(free_time_ns_ / t2_ns, p.stretch_t2);
    const double after = std::pow((free_time_ns_ + duration_ns) / t2_ns, p.stretch_t2);
    const auto phase = std::polar(std::exp(before - after), kTwoPi * detuning * duration_ns * 1e-9);
    const double e1 = std::exp(-duration_ns * 1e-9 / p.t1_s);
    const Key shift = std::llround(duration_ns * 1000.0);

    std::map<Key, Component> out;
    for (const auto& [k, c] : comps_) {
        if (c.m != 0.0) out[k + shift].m += c.m * phase;
        auto& z = out[k].z;
        z += k == 0 ? kEquilibriumZ + (c.z - kEquilibriumZ) * e1 : c.z * e1;
    }
    comps_ = std::move(out);
    free_time_ns_ += duration_ns;
    prune();
}

void SpinEnsemble::pump(double duration_ns, double laser_gain) {
    if (duration_ns <= 0.0 || laser_gain <= 0.0) return;
    const double e = std::exp(-laser_gain * duration_ns / params_->readout_settle_ns);
    for (auto& [k, c] : comps_) {
        c.m *= e;
        c.z = k == 0 ? 1.0 - (1.0 - c.z) * e : c.z * e;
    }
    free_time_ns_ = 0.0;
    prune();
}

void SpinEnsemble::set_steady_state(double p0) {
    SpinState checked(p0);
    comps_.clear();
    comps_[0] = {0.0, 2.0 * checked.p0() - 1.0};
    free_time_ns_ = 0.0;
}

void SpinEnsemble::prune() {
    for (auto it = comps_.begin(); it != comps_.end();) {
        if (it->first != 0 && std::abs(it->second.m) < 1e-14 && std::abs(it->second.z) < 1e-14)
            it = comps_.erase(it);
        else
            ++it;
    }
    comps_.try_emplace(0, Component{});
}

}  // namespace qdawg
