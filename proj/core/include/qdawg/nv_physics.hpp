#pragma once

#include <complex>
#include <cstdint>
#include <map>

#include "qdawg/config.hpp"

namespace qdawg {

/// NV ensemble model parameters. Rates in Hz, relaxation times in seconds.
/// Defaults are representative room-temperature ensemble values.
struct NvEnsembleParams {
    double zero_field_splitting_hz = 2.87e9;
    double gyromagnetic_ratio_hz_per_t = 28.024e9;
    double bias_field_t = 0.0;
    double linewidth_hz = 8e6;       // ODMR FWHM
    double contrast = 0.30;
    double pl_rate_bright_hz = 1e6;
    double rabi_rate_hz = 10e6;      // at unit microwave gain
    double t1_s = 5e-3;
    double t2_s = 100e-6;
    double t2_star_s = 1e-6;
    double stretch_t2 = 1.0;
    double readout_settle_ns = 500.0;

    /// Throws PhysicsError unless rates/times are positive, contrast is in (0, 1],
    /// stretch >= 1 and T2* <= T2 <= 2 T1.
    void validate() const;

    double zeeman_shift_hz() const noexcept { return gyromagnetic_ratio_hz_per_t * bias_field_t; }
    double lower_resonance_hz() const noexcept { return zero_field_splitting_hz - zeeman_shift_hz(); }
    double upper_resonance_hz() const noexcept { return zero_field_splitting_hz + zeeman_shift_hz(); }

    /// Same key-value format as experiment configs. Absent keys keep their defaults.
    static NvEnsembleParams from_kv(const KvDocument& doc);
    static NvEnsembleParams parse(std::string_view text) { return from_kv(KvDocument::parse(text)); }
    KvDocument to_kv() const;

    bool operator==(const NvEnsembleParams&) const = default;
};

/// Unit-peak Lorentzian with full width at half maximum `fwhm`.
double lorentzian(double x, double center, double fwhm);

/// CW ODMR photoluminescence: bright * [1 - C (L(f; f-) + L(f; f+))].
/// Floored at 1e-9 * bright when contrast > 0.5 makes the overlapping dips exceed unity.
double odmr_pl_rate(double drive_freq_hz, const NvEnsembleParams& p);

/// ms=0 population after a square pulse starting from p0 = 1.
double rabi_p0(double pulse_ns, double rabi_rate_hz, double detuning_hz);

/// pi/2 - tau - pi/2 (second pulse phase-inverted) Ramsey signal.
double ramsey_p0(double tau_ns, double detuning_hz, const NvEnsembleParams& p);

/// pi/2 - tau - pi - tau - pi/2 echo after total free evolution 2 tau.
double hahn_p0(double tau_ns, const NvEnsembleParams& p);

/// Dark relaxation toward the thermal mixture p0 = 1/3.
double t1_p0(double tau_ns, double initial_p0, const NvEnsembleParams& p);

/// PL while the laser repolarizes a population that started at p0 when the laser turned on.
double readout_rate(double p0, double t_since_laser_on_ns, const NvEnsembleParams& p);

/// Integral of the repolarizing PL over [t0, t1] ns after laser turn-on, in photons
/// (rate in Hz times seconds). `laser_gain` scales both brightness and pumping rate.
double readout_integral(double p0_at_on, double t0_ns, double t1_ns, double laser_gain, const NvEnsembleParams& p);

/// Drive detuning from the nearer of the two spin transitions.
double detuning_hz(double drive_freq_hz, const NvEnsembleParams& p);

/// Two-level population state. Construction throws PhysicsError outside [0, 1].
class SpinState {
  public:
    explicit SpinState(double p0 = 1.0);
    double p0() const noexcept { return p0_; }

  private:
    double p0_;
};

/// Ensemble of two-level spins with a gaussian distribution of quasi-static
/// detunings. The magnetization is kept as Fourier components in that detuning
/// (one component per net unrefocused free-evolution time), so free precession,
/// refocusing pulses and the ensemble average are all exact:
///   m(D) = sum_k A_k exp(i 2 pi D k),  z(D) = sum_k B_k exp(i 2 pi D k)
/// with <exp(i 2 pi D k)> = exp(-(k / T2*)^2). Homogeneous decay follows the
/// stretched exponential in accumulated free time; populations relax to 1/3 with T1.
class SpinEnsemble {
  public:
    explicit SpinEnsemble(const NvEnsembleParams& params, double p0 = 1.0);

    double mean_p0() const;

    /// Square microwave pulse: rotation about (Omega cos phi, Omega sin phi, delta).
    void pulse(double duration_ns, double rabi_hz, double detuning_hz, double phase_deg);

    /// Dark evolution: precession at `detuning_hz` in the generator frame.
    void free_evolve(double duration_ns, double detuning_hz);

    /// Optical repolarization toward p0 = 1 at rate laser_gain / settle time.
    void pump(double duration_ns, double laser_gain);

    /// Laser and microwave on together: steady state with population p0.
    void set_steady_state(double p0);

    bool operator==(const SpinEnsemble& o) const { return comps_ == o.comps_ && free_time_ns_ == o.free_time_ns_; }

  private:
    struct Component {
        std::complex<double> m;
        std::complex<double> z;
        bool operator==(const Component&) const = default;
    };
    using Key = std::int64_t;  // free-evolution time in picoseconds
    void prune();

    const NvEnsembleParams* params_;
    std::map<Key, Component> comps_;
    double free_time_ns_ = 0.0;
};

}  // namespace qdawg
