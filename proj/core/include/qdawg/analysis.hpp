#pragma once

#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace qdawg {

enum class FitModel { LorentzianDips, DampedCosine, DecayingExponential, StretchedExponential };

std::string_view to_string(FitModel m);
std::optional<FitModel> parse_fit_model(std::string_view name);

/// Parameter names, in vector order.
///   lorentzian-dips:       baseline, center_<i>, fwhm_<i>, depth_<i> for each dip i
///   damped-cosine:         offset, amplitude, frequency, phase, decay
///   decaying-exponential:  offset, amplitude, tau
///   stretched-exponential: offset, amplitude, tau, stretch
/// Frequencies are in cycles per x unit, phase in radians, decay in 1 / x unit.
std::vector<std::string> parameter_names(FitModel m, int n_dips = 1);

/// y(x) and dy/dp for one sample.
double model_value(FitModel m, double x, std::span<const double> p);
void model_gradient(FitModel m, double x, std::span<const double> p, std::span<double> grad);

struct FitResult {
    FitModel model = FitModel::DecayingExponential;
    std::map<std::string, double> params;
    std::map<std::string, double> std_errors;
    std::map<std::string, double> derived;         // e.g. pi_time, t2, t1
    std::map<std::string, double> derived_errors;
    double reduced_chi_sq = 0.0;
    bool converged = false;
    int n_iterations = 0;
    std::vector<double> residuals;
    std::string diagnostic;

    double param(const std::string& name) const { return params.at(name); }
    /// Parameter vector in parameter_names order.
    std::vector<double> vector() const;
    int n_dips() const;
    bool operator==(const FitResult&) const = default;
};

struct ParamBounds {
    double low = -std::numeric_limits<double>::infinity();
    double high = std::numeric_limits<double>::infinity();
};

/// Levenberg-Marquardt: damped Gauss-Newton with Marquardt diagonal scaling,
/// lambda starting at 1e-3, x10 on a rejected step and /10 on an accepted one.
/// Stops on relative cost change < 1e-10, step norm < 1e-12 (relative), zero
/// cost, or 500 iterations. Parameters are projected into `bounds` after every
/// step. Uncertainties come from the pseudo-inverse of J^T J scaled by the
/// reduced chi-square; a rank-deficient Jacobian gives converged = false.
/// Throws DimensionError when sizes disagree or there are fewer than n_params + 1 points.
FitResult fit_least_squares(std::span<const double> x, std::span<const double> y, FitModel model,
                            std::span<const double> initial_guess, std::span<const ParamBounds> bounds = {},
                            int n_dips = 1);

/// One or two Lorentzian dips; the count follows the smoothed-minima heuristic.
FitResult fit_odmr(std::span<const double> freqs_hz, std::span<const double> signal);

/// Damped cosine seeded from the discrete-Fourier peak; adds derived pi_time = 1 / (2 frequency).
FitResult fit_rabi(std::span<const double> times, std::span<const double> signal);

/// Exponential (or stretched) decay seeded from the 1/e crossing.
FitResult fit_decay(std::span<const double> taus, std::span<const double> signal, bool stretched);

struct ReadoutWindowChoice {
    std::size_t best_start = 0;   // slice index
    std::size_t best_length = 0;  // slices
    double best_start_value = 0.0;
    double best_snr = 0.0;
    std::vector<double> snr_curve;  // best SNR for each window length 1..n

    bool operator==(const ReadoutWindowChoice&) const = default;
};

/// Exhaustive search over contiguous slice windows for the largest
/// (S - R) / sqrt(S + R), with S and R the summed counts (0 when S + R = 0).
/// Ties go to the shorter window, then to the earlier start.
ReadoutWindowChoice optimize_readout_window(std::span<const double> window_starts,
                                            std::span<const std::int64_t> signal_trace,
                                            std::span<const std::int64_t> reference_trace);

/// Canonical text block (`key = value` lines) used inside result documents.
std::string fit_to_text(const FitResult& fit);
FitResult fit_from_text(std::string_view text);

}  // namespace qdawg
