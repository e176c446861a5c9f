#include "qdawg/analysis.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <numbers>
#include <numeric>

#include "qdawg/errors.hpp"
#include "qdawg/text.hpp"

namespace qdawg {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kInf = std::numeric_limits<double>::infinity();

int dips_for(std::size_t n_params) { return static_cast<int>((n_params - 1) / 3); }

std::size_t param_count(FitModel m, int n_dips) {
    switch (m) {
        case FitModel::LorentzianDips: return 1 + 3 * static_cast<std::size_t>(n_dips);
        case FitModel::DampedCosine: return 5;
        case FitModel::DecayingExponential: return 3;
        case FitModel::StretchedExponential: return 4;
    }
    return 0;
}

}  // namespace

std::string_view to_string(FitModel m) {
    switch (m) {
        case FitModel::LorentzianDips: return "lorentzian-dips";
        case FitModel::DampedCosine: return "damped-cosine";
        case FitModel::DecayingExponential: return "decaying-exponential";
        case FitModel::StretchedExponential: return "stretched-exponential";
    }
    return "?";
}

std::optional<FitModel> parse_fit_model(std::string_view name) {
    for (auto m : {FitModel::LorentzianDips, FitModel::DampedCosine, FitModel::DecayingExponential,
                   FitModel::StretchedExponential})
        if (to_string(m) == name) return m;
    return std::nullopt;
}

std::vector<std::string> parameter_names(FitModel m, int n_dips) {
    switch (m) {
        case FitModel::LorentzianDips: {
            if (n_dips < 1) throw DimensionError("lorentzian-dips needs at least one dip");
            std::vector<std::string> out{"baseline"};
            for (int i = 0; i < n_dips; ++i) {
                const auto k = std::to_string(i);
                out.push_back("center_" + k);
                out.push_back("fwhm_" + k);
                out.push_back("depth_" + k);
            }
            return out;
        }
        case FitModel::DampedCosine: return {"offset", "amplitude", "frequency", "phase", "decay"};
        case FitModel::DecayingExponential: return {"offset", "amplitude", "tau"};
        case FitModel::StretchedExponential: return {"offset", "amplitude", "tau", "stretch"};
    }
    return {};
}

double model_value(FitModel m, double x, std::span<const double> p) {
    switch (m) {
        case FitModel::LorentzianDips: {
            double y = p[0];
            for (std::size_t i = 1; i + 2 < p.size(); i += 3) {
                const double u = 2.0 * (x - p[i]) / p[i + 1];
                y -= p[i + 2] / (1.0 + u * u);
            }
            return y;
        }
        case FitModel::DampedCosine:
            return p[0] + p[1] * std::exp(-p[4] * x) * std::cos(kTwoPi * p[2] * x + p[3]);
        case FitModel::DecayingExponential: return p[0] + p[1] * std::exp(-x / p[2]);
        case FitModel::StretchedExponential: return p[0] + p[1] * std::exp(-std::pow(x / p[2], p[3]));
    }
    return 0.0;
}

void model_gradient(FitModel m, double x, std::span<const double> p, std::span<double> g) {
    switch (m) {
        case FitModel::LorentzianDips: {
            g[0] = 1.0;
            for (std::size_t i = 1; i + 2 < p.size(); i += 3) {
                const double w = p[i + 1], d = p[i + 2];
                const double u = 2.0 * (x - p[i]) / w;
                const double l = 1.0 / (1.0 + u * u);
                g[i] = -4.0 * d * u * l * l / w;
                g[i + 1] = -2.0 * d * u * u * l * l / w;
                g[i + 2] = -l;
            }
            return;
        }
        case FitModel::DampedCosine: {
            const double e = std::exp(-p[4] * x);
            const double arg = kTwoPi * p[2] * x + p[3];
            const double c = std::cos(arg), s = std::sin(arg);
            g[0] = 1.0;
            g[1] = e * c;
            g[2] = -p[1] * e * s * kTwoPi * x;
            g[3] = -p[1] * e * s;
            g[4] = -x * p[1] * e * c;
            return;
        }
        case FitModel::DecayingExponential: {
            const double e = std::exp(-x / p[2]);
            g[0] = 1.0;
            g[1] = e;
            g[2] = p[1] * e * x / (p[2] * p[2]);
            return;
        }
        case FitModel::StretchedExponential: {
            const double r = x / p[2];
            const double q = r > 0.0 ? std::pow(r, p[3]) : 0.0;
            const double e = std::exp(-q);
            g[0] = 1.0;
            g[1] = e;
            g[2] = p[1] * e * p[3] * q / p[2];
            g[3] = r > 0.0 ? -p[1] * e * q * std::log(r) : 0.0;
            return;
        }
    }
}

std::vector<double> FitResult::vector() const {
    std::vector<double> out;
    for (const auto& n : parameter_names(model, model == FitModel::LorentzianDips ? n_dips() : 1))
        out.push_back(params.at(n));
    return out;
}

int FitResult::n_dips() const {
    if (model != FitModel::LorentzianDips) return 0;
    return dips_for(params.size());
}

// ---------------------------------------------------------------------------
// Levenberg-Marquardt

namespace {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

struct Problem {
    std::span<const double> x, y;
    FitModel model;
    std::size_t m;

    double residuals(const Vec& p, Vec& r) const {
        r.resize(static_cast<Eigen::Index>(x.size()));
        double cost = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double v = y[i] - model_value(model, x[i], {p.data(), m});
            r[static_cast<Eigen::Index>(i)] = v;
            cost += v * v;
        }
        return 0.5 * cost;
    }

    void jacobian(const Vec& p, Mat& j) const {
        j.resize(static_cast<Eigen::Index>(x.size()), static_cast<Eigen::Index>(m));
        std::vector<double> g(m);
        for (std::size_t i = 0; i < x.size(); ++i) {
            model_gradient(model, x[i], {p.data(), m}, g);
            for (std::size_t k = 0; k < m; ++k) j(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = g[k];
        }
    }
};

void clamp_into(Vec& p, std::span<const ParamBounds> b) {
    for (Eigen::Index k = 0; k < p.size(); ++k) {
        const auto& bk = b[static_cast<std::size_t>(k)];
        p[k] = std::clamp(p[k], bk.low, bk.high);
    }
}

bool all_finite(const Vec& v) { return v.allFinite(); }

}  // namespace

FitResult fit_least_squares(std::span<const double> x, std::span<const double> y, FitModel model,
                            std::span<const double> initial_guess, std::span<const ParamBounds> bounds_in,
                            int n_dips) {
    if (model != FitModel::LorentzianDips) n_dips = 1;
    const std::size_t m = param_count(model, n_dips);
    if (n_dips < 1) throw DimensionError("lorentzian-dips needs at least one dip");
    if (x.size() != y.size()) throw DimensionError("x and y lengths differ");
    if (initial_guess.size() != m)
        throw DimensionError("initial guess has " + std::to_string(initial_guess.size()) + " entries, model needs " +
                             std::to_string(m));
    if (x.size() < m + 1) throw DimensionError("need at least n_params + 1 data points");
    std::vector<ParamBounds> bounds(m);
    if (!bounds_in.empty()) {
        if (bounds_in.size() != m) throw DimensionError("bounds length does not match parameter count");
        for (std::size_t k = 0; k < m; ++k) {
            if (!(bounds_in[k].low <= bounds_in[k].high)) throw DimensionError("inconsistent bounds");
            bounds[k] = bounds_in[k];
        }
    }
    for (std::size_t i = 0; i < x.size(); ++i)
        if (!std::isfinite(x[i]) || !std::isfinite(y[i])) throw DimensionError("data contains non-finite values");

    const Problem prob{x, y, model, m};
    Vec p(static_cast<Eigen::Index>(m));
    for (std::size_t k = 0; k < m; ++k) p[static_cast<Eigen::Index>(k)] = initial_guess[k];
    clamp_into(p, bounds);

    FitResult out;
    out.model = model;

    Vec r, r_new;
    Mat j;
    double cost = prob.residuals(p, r);
    bool converged = false;
    std::string diagnostic;
    if (!std::isfinite(cost)) {
        diagnostic = "non-finite model value at initial guess";
    } else {
        double lambda = 1e-3;
        double y_scale = 0.0;
        for (double v : y) y_scale += v * v;
        int it = 0;
        while (it < 500) {
            if (cost <= 1e-32 * std::max(y_scale, 1e-300)) {
                converged = true;
                break;
            }
            ++it;
            prob.jacobian(p, j);
            const Mat a = j.transpose() * j;
            const Vec g = j.transpose() * r;
            Vec d = a.diagonal();
            for (Eigen::Index k = 0; k < d.size(); ++k)
                if (!(d[k] > 0.0)) d[k] = 1.0;
            // Parameters on a bound whose descent direction leaves the box are held
            // fixed; solving the coupled system and clamping afterwards stalls.
            std::vector<Eigen::Index> active;
            for (Eigen::Index k = 0; k < p.size(); ++k) {
                const auto& b = bounds[static_cast<std::size_t>(k)];
                if ((p[k] <= b.low && g[k] < 0.0) || (p[k] >= b.high && g[k] > 0.0)) active.push_back(k);
            }

            bool accepted = false;
            bool stop = false;
            while (!accepted) {
                Mat damped = a;
                damped.diagonal() += lambda * d;
                Vec rhs = g;
                for (auto k : active) {
                    damped.row(k).setZero();
                    damped.col(k).setZero();
                    damped(k, k) = 1.0;
                    rhs[k] = 0.0;
                }
                const Vec step = damped.ldlt().solve(rhs);
                if (!all_finite(step)) {
                    lambda *= 10.0;
                    if (lambda > 1e20) { stop = true; break; }
                    continue;
                }
                Vec p_new = p + step;
                clamp_into(p_new, bounds);
                const Vec applied = p_new - p;
                const double cost_new = prob.residuals(p_new, r_new);
                if (std::isfinite(cost_new) && cost_new < cost) {
                    const double rel = (cost - cost_new) / cost;
                    const double step_norm = applied.norm();
                    p = p_new;
                    r.swap(r_new);
                    cost = cost_new;
                    lambda = std::max(lambda / 10.0, 1e-15);
                    accepted = true;
                    if (rel < 1e-10 || step_norm < 1e-12 * (p.norm() + 1e-12)) stop = true;
                    converged = stop;
                } else {
                    if (applied.norm() < 1e-12 * (p.norm() + 1e-12)) {
                        // No representable descent left: stationary point.
                        converged = true;
                        stop = true;
                        break;
                    }
                    lambda *= 10.0;
                    if (lambda > 1e20) {
                        converged = true;
                        stop = true;
                        break;
                    }
                }
            }
            if (stop) break;
        }
        out.n_iterations = it;
        if (!converged) diagnostic = "iteration limit reached";
    }

    const std::size_t n = x.size();
    const double ssr = 2.0 * cost;
    out.reduced_chi_sq = ssr / static_cast<double>(n - m);

    // Covariance on column-normalised Jacobian, so the rank test is unit free.
    prob.jacobian(p, j);
    Vec norms(static_cast<Eigen::Index>(m));
    bool singular = false;
    for (Eigen::Index k = 0; k < j.cols(); ++k) {
        norms[k] = j.col(k).norm();
        if (!(norms[k] > 0.0) || !std::isfinite(norms[k])) {
            singular = true;
            norms[k] = 1.0;
        }
    }
    Vec errs = Vec::Zero(static_cast<Eigen::Index>(m));
    if (j.allFinite()) {
        const Mat jn = j * norms.cwiseInverse().asDiagonal();
        Eigen::CompleteOrthogonalDecomposition<Mat> cod(jn.transpose() * jn);
        cod.setThreshold(1e-12);
        if (cod.rank() < static_cast<Eigen::Index>(m)) singular = true;
        const Mat cov_n = cod.pseudoInverse();
        for (Eigen::Index k = 0; k < static_cast<Eigen::Index>(m); ++k) {
            const double v = cov_n(k, k) * out.reduced_chi_sq;
            errs[k] = std::sqrt(std::max(v, 0.0)) / norms[k];
        }
    } else {
        singular = true;
    }
    if (singular) {
        converged = false;
        diagnostic = "singular Jacobian: parameters not identifiable";
    }
    if (!std::isfinite(out.reduced_chi_sq) || !all_finite(errs) || !all_finite(p)) {
        converged = false;
        if (diagnostic.empty()) diagnostic = "non-finite result";
        for (Eigen::Index k = 0; k < errs.size(); ++k)
            if (!std::isfinite(errs[k])) errs[k] = 0.0;
        if (!std::isfinite(out.reduced_chi_sq)) out.reduced_chi_sq = 0.0;
    }

    const auto names = parameter_names(model, n_dips);
    for (std::size_t k = 0; k < m; ++k) {
        out.params[names[k]] = p[static_cast<Eigen::Index>(k)];
        out.std_errors[names[k]] = errs[static_cast<Eigen::Index>(k)];
    }
    out.residuals.assign(r.data(), r.data() + r.size());
    out.converged = converged;
    out.diagnostic = diagnostic;
    return out;
}

// ---------------------------------------------------------------------------
// Model-specific entry points

namespace {

void check_xy(std::span<const double> x, std::span<const double> y, std::size_t min_n, const char* what) {
    if (x.size() != y.size()) throw DimensionError(std::string(what) + ": x and y lengths differ");
    if (x.size() < min_n)
        throw DimensionError(std::string(what) + ": need at least " + std::to_string(min_n) + " points");
}

std::vector<std::size_t> order_by_x(std::span<const double> x) {
    std::vector<std::size_t> idx(x.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    return idx;
}

std::vector<double> smooth5(const std::vector<double>& v) {
    std::vector<double> out(v.size());
    const auto n = static_cast<std::ptrdiff_t>(v.size());
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        const auto lo = std::max<std::ptrdiff_t>(0, i - 2), hi = std::min<std::ptrdiff_t>(n - 1, i + 2);
        double s = 0.0;
        for (auto k = lo; k <= hi; ++k) s += v[static_cast<std::size_t>(k)];
        out[static_cast<std::size_t>(i)] = s / static_cast<double>(hi - lo + 1);
    }
    return out;
}

double quantile(std::vector<double> v, double q) {
    std::sort(v.begin(), v.end());
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

// Rewrites parameters fitted against x' = (x - shift) / scale back to x units.
void unscale_odmr(FitResult& f, double shift, double scale) {
    for (int i = 0; i < f.n_dips(); ++i) {
        const auto k = std::to_string(i);
        f.params["center_" + k] = shift + f.params["center_" + k] * scale;
        f.std_errors["center_" + k] *= scale;
        f.params["fwhm_" + k] *= scale;
        f.std_errors["fwhm_" + k] *= scale;
    }
}

FitResult fit_dips(const std::vector<double>& xs, std::span<const double> y, double baseline,
                   const std::vector<double>& centers, const std::vector<double>& fwhms,
                   const std::vector<double>& depths) {
    const int n = static_cast<int>(centers.size());
    std::vector<double> guess{baseline};
    std::vector<ParamBounds> bounds{ParamBounds{}};
    double dx_min = kInf;
    for (std::size_t i = 1; i < xs.size(); ++i) dx_min = std::min(dx_min, std::abs(xs[i] - xs[i - 1]));
    if (!std::isfinite(dx_min) || dx_min <= 0.0) dx_min = 1e-6;
    for (int i = 0; i < n; ++i) {
        guess.insert(guess.end(), {centers[static_cast<std::size_t>(i)], fwhms[static_cast<std::size_t>(i)],
                                   depths[static_cast<std::size_t>(i)]});
        bounds.push_back({-0.5, 0.5});
        bounds.push_back({dx_min * 1e-3, 4.0});
        bounds.push_back({0.0, kInf});
    }
    return fit_least_squares(xs, y, FitModel::LorentzianDips, guess, bounds, n);
}

// Reorders dips by ascending center.
void sort_dips(FitResult& f) {
    const int n = f.n_dips();
    struct Dip { double c, w, d, ec, ew, ed; };
    std::vector<Dip> dips;
    for (int i = 0; i < n; ++i) {
        const auto k = std::to_string(i);
        dips.push_back({f.params["center_" + k], f.params["fwhm_" + k], f.params["depth_" + k],
                        f.std_errors["center_" + k], f.std_errors["fwhm_" + k], f.std_errors["depth_" + k]});
    }
    std::stable_sort(dips.begin(), dips.end(), [](const Dip& a, const Dip& b) { return a.c < b.c; });
    for (int i = 0; i < n; ++i) {
        const auto k = std::to_string(i);
        const auto& d = dips[static_cast<std::size_t>(i)];
        f.params["center_" + k] = d.c;
        f.params["fwhm_" + k] = d.w;
        f.params["depth_" + k] = d.d;
        f.std_errors["center_" + k] = d.ec;
        f.std_errors["fwhm_" + k] = d.ew;
        f.std_errors["depth_" + k] = d.ed;
    }
}

}  // namespace

FitResult fit_odmr(std::span<const double> freqs, std::span<const double> signal) {
    check_xy(freqs, signal, 8, "fit_odmr");
    const auto idx = order_by_x(freqs);
    const double lo = freqs[idx.front()], hi = freqs[idx.back()];
    if (!(hi > lo)) throw DimensionError("fit_odmr: frequencies must span a range");
    const double shift = 0.5 * (lo + hi), scale = hi - lo;

    std::vector<double> xs(freqs.size()), ys(freqs.size());
    for (std::size_t i = 0; i < freqs.size(); ++i) xs[i] = (freqs[i] - shift) / scale;
    std::vector<double> sx(idx.size()), sy(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        sx[i] = xs[idx[i]];
        sy[i] = signal[idx[i]];
    }
    const auto sm = smooth5(sy);
    const double baseline = quantile(sm, 0.9);

    std::vector<std::size_t> minima;
    for (std::size_t i = 1; i + 1 < sm.size(); ++i)
        if (sm[i] < sm[i - 1] && sm[i] <= sm[i + 1]) minima.push_back(i);
    if (minima.empty())
        minima.push_back(static_cast<std::size_t>(std::min_element(sm.begin(), sm.end()) - sm.begin()));
    std::stable_sort(minima.begin(), minima.end(), [&](std::size_t a, std::size_t b) { return sm[a] < sm[b]; });

    auto width_at = [&](std::size_t i) {
        const double half = baseline - 0.5 * (baseline - sm[i]);
        std::size_t l = i, r = i;
        while (l > 0 && sm[l] < half) --l;
        while (r + 1 < sm.size() && sm[r] < half) ++r;
        return std::max(sx[r] - sx[l], 2.0 * (sx.size() > 1 ? (sx[1] - sx[0]) : 0.01));
    };

    const std::size_t m0 = minima[0];
    FitResult single = fit_dips(xs, signal, baseline, {sx[m0]}, {width_at(m0)}, {std::max(baseline - sm[m0], 0.0)});
    FitResult chosen = single;

    if (minima.size() >= 2) {
        const std::size_t m1 = minima[1];
        FitResult pair = fit_dips(xs, signal, baseline, {sx[m0], sx[m1]}, {width_at(m0), width_at(m1)},
                                  {std::max(baseline - sm[m0], 0.0), std::max(baseline - sm[m1], 0.0)});
        if (pair.converged) {
            const double noise = std::sqrt(pair.reduced_chi_sq);
            const double sep = std::abs(pair.param("center_0") - pair.param("center_1"));
            const double w = std::max(pair.param("fwhm_0"), pair.param("fwhm_1"));
            if (sep > w && pair.param("depth_0") > 3.0 * noise && pair.param("depth_1") > 3.0 * noise) chosen = pair;
        }
    }
    sort_dips(chosen);
    unscale_odmr(chosen, shift, scale);
    return chosen;
}

FitResult fit_rabi(std::span<const double> times, std::span<const double> signal) {
    check_xy(times, signal, 6, "fit_rabi");
    const auto idx = order_by_x(times);
    const double t_max = std::max(std::abs(times[idx.front()]), std::abs(times[idx.back()]));
    const double span_x = times[idx.back()] - times[idx.front()];
    if (!(span_x > 0.0)) throw DimensionError("fit_rabi: times must span a range");
    const double scale = t_max;
    const std::size_t n = times.size();

    std::vector<double> xs(n);
    for (std::size_t i = 0; i < n; ++i) xs[i] = times[i] / scale;
    const double mean = std::accumulate(signal.begin(), signal.end(), 0.0) / static_cast<double>(n);

    // Zero-padded DFT of the mean-subtracted signal on a 4x finer grid up to Nyquist.
    const double span_s = span_x / scale;
    const double df = 1.0 / (4.0 * span_s);
    const double f_max = 0.5 * static_cast<double>(n - 1) / span_s;
    double best_f = 1.0 / span_s, best_mag = -1.0;
    std::complex<double> best_sum{};
    for (double f = df; f <= f_max + 1e-12; f += df) {
        std::complex<double> s{};
        for (std::size_t i = 0; i < n; ++i) s += (signal[i] - mean) * std::polar(1.0, -kTwoPi * f * xs[i]);
        if (std::abs(s) > best_mag) {
            best_mag = std::abs(s);
            best_f = f;
            best_sum = s;
        }
    }
    const double amp = 2.0 * best_mag / static_cast<double>(n);
    const double phase = best_mag > 0.0 ? std::arg(best_sum) : 0.0;

    const std::vector<double> guess{mean, amp, best_f, phase, 0.0};
    const std::vector<ParamBounds> bounds{{}, {}, {1e-9 * best_f, kInf}, {}, {0.0, kInf}};
    FitResult f = fit_least_squares(xs, signal, FitModel::DampedCosine, guess, bounds);

    f.params["frequency"] /= scale;
    f.std_errors["frequency"] /= scale;
    f.params["decay"] /= scale;
    f.std_errors["decay"] /= scale;

    const double fr = f.params["frequency"];
    f.derived["pi_time"] = 1.0 / (2.0 * fr);
    f.derived_errors["pi_time"] = f.std_errors["frequency"] / (2.0 * fr * fr);
    return f;
}

FitResult fit_decay(std::span<const double> taus, std::span<const double> signal, bool stretched) {
    check_xy(taus, signal, 5, "fit_decay");
    const auto idx = order_by_x(taus);
    const double x_max = std::max(std::abs(taus[idx.front()]), std::abs(taus[idx.back()]));
    if (!(taus[idx.back()] > taus[idx.front()]) || !(x_max > 0.0))
        throw DimensionError("fit_decay: taus must span a range");
    const double scale = x_max;
    const std::size_t n = taus.size();

    std::vector<double> xs(n);
    for (std::size_t i = 0; i < n; ++i) xs[i] = taus[i] / scale;

    const std::size_t tail = std::max<std::size_t>(1, n / 5);
    double offset = 0.0;
    for (std::size_t i = n - tail; i < n; ++i) offset += signal[idx[i]];
    offset /= static_cast<double>(tail);
    const double amp = signal[idx.front()] - offset;

    const double x0 = xs[idx.front()], x1 = xs[idx.back()];
    double tau = 0.5 * (x1 - x0);
    if (amp != 0.0) {
        const double target = offset + amp / std::numbers::e;
        for (std::size_t i = 1; i < n; ++i) {
            const double ya = signal[idx[i - 1]] - target, yb = signal[idx[i]] - target;
            if ((ya > 0.0) != (yb > 0.0) || yb == 0.0) {
                const double xa = xs[idx[i - 1]], xb = xs[idx[i]];
                const double xc = ya == yb ? xb : xa + (xb - xa) * ya / (ya - yb);
                tau = xc - x0;
                break;
            }
        }
    }
    const double tau_floor = 1e-9 * (x1 - x0);
    tau = std::max(tau, 1e-3 * (x1 - x0));

    FitResult f;
    if (stretched) {
        const std::vector<double> guess{offset, amp, tau, 1.0};
        const std::vector<ParamBounds> bounds{{}, {}, {tau_floor, kInf}, {0.5, 3.0}};
        f = fit_least_squares(xs, signal, FitModel::StretchedExponential, guess, bounds);
    } else {
        const std::vector<double> guess{offset, amp, tau};
        const std::vector<ParamBounds> bounds{{}, {}, {tau_floor, kInf}};
        f = fit_least_squares(xs, signal, FitModel::DecayingExponential, guess, bounds);
    }
    f.params["tau"] *= scale;
    f.std_errors["tau"] *= scale;

    const double a = f.params["amplitude"], ea = f.std_errors["amplitude"];
    if (f.converged && !(std::abs(a) > 3.0 * ea)) {
        f.converged = false;
        f.diagnostic = "amplitude not significant: time constant unidentifiable";
    }
    return f;
}

ReadoutWindowChoice optimize_readout_window(std::span<const double> window_starts,
                                            std::span<const std::int64_t> signal,
                                            std::span<const std::int64_t> reference) {
    const std::size_t n = signal.size();
    if (reference.size() != n || window_starts.size() != n)
        throw DimensionError("readout window: traces and starts must have equal length");
    if (n < 2) throw DimensionError("readout window: need at least two slices");
    for (std::size_t i = 0; i < n; ++i)
        if (signal[i] < 0 || reference[i] < 0) throw DimensionError("readout window: negative counts");

    std::vector<std::int64_t> ps(n + 1, 0), pr(n + 1, 0);
    for (std::size_t i = 0; i < n; ++i) {
        ps[i + 1] = ps[i] + signal[i];
        pr[i + 1] = pr[i] + reference[i];
    }
    ReadoutWindowChoice out;
    out.snr_curve.assign(n, -kInf);
    bool have = false;
    for (std::size_t len = 1; len <= n; ++len) {
        for (std::size_t s = 0; s + len <= n; ++s) {
            const std::int64_t a = ps[s + len] - ps[s], b = pr[s + len] - pr[s];
            const double snr = a + b == 0 ? 0.0 : static_cast<double>(a - b) / std::sqrt(static_cast<double>(a + b));
            out.snr_curve[len - 1] = std::max(out.snr_curve[len - 1], snr);
            if (!have || snr > out.best_snr) {
                have = true;
                out.best_snr = snr;
                out.best_start = s;
                out.best_length = len;
            }
        }
    }
    out.best_start_value = window_starts[out.best_start];
    return out;
}

// ---------------------------------------------------------------------------
// Text form

std::string fit_to_text(const FitResult& f) {
    std::string out;
    auto line = [&](const std::string& k, const std::string& v) { out += k + " = " + v + "\n"; };
    line("model", std::string(to_string(f.model)));
    line("converged", f.converged ? "true" : "false");
    line("n_iterations", std::to_string(f.n_iterations));
    line("reduced_chi_sq", text::format_double(f.reduced_chi_sq));
    if (!f.diagnostic.empty()) line("diagnostic", f.diagnostic);
    for (const auto& [k, v] : f.params) line("param." + k, text::format_double(v));
    for (const auto& [k, v] : f.std_errors) line("error." + k, text::format_double(v));
    for (const auto& [k, v] : f.derived) line("derived." + k, text::format_double(v));
    for (const auto& [k, v] : f.derived_errors) line("derived_error." + k, text::format_double(v));
    std::string res;
    for (std::size_t i = 0; i < f.residuals.size(); ++i) {
        if (i) res += ',';
        res += text::format_double(f.residuals[i]);
    }
    line("residuals", res);
    return out;
}

FitResult fit_from_text(std::string_view body) {
    FitResult f;
    bool have_model = false;
    int line_no = 0;
    for (auto raw : text::split(body, '\n')) {
        ++line_no;
        const auto ln = text::trim(raw);
        if (ln.empty() || ln.front() == '#') continue;
        const auto eq = ln.find('=');
        if (eq == std::string_view::npos) throw ParseError("expected key = value", line_no);
        const auto key = std::string(text::trim(ln.substr(0, eq)));
        const auto val = text::trim(ln.substr(eq + 1));
        auto num = [&]() {
            const auto v = text::parse_double(val);
            if (!v) throw ParseError("bad number for " + key, line_no);
            return *v;
        };
        if (key == "model") {
            const auto m = parse_fit_model(val);
            if (!m) throw ParseError("unknown fit model '" + std::string(val) + "'", line_no);
            f.model = *m;
            have_model = true;
        } else if (key == "converged") {
            if (val != "true" && val != "false") throw ParseError("converged must be true or false", line_no);
            f.converged = val == "true";
        } else if (key == "n_iterations") {
            const auto v = text::parse_int(val);
            if (!v) throw ParseError("bad n_iterations", line_no);
            f.n_iterations = static_cast<int>(*v);
        } else if (key == "reduced_chi_sq") {
            f.reduced_chi_sq = num();
        } else if (key == "diagnostic") {
            f.diagnostic = std::string(val);
        } else if (key.starts_with("param.")) {
            f.params[key.substr(6)] = num();
        } else if (key.starts_with("error.")) {
            f.std_errors[key.substr(6)] = num();
        } else if (key.starts_with("derived_error.")) {
            f.derived_errors[key.substr(14)] = num();
        } else if (key.starts_with("derived.")) {
            f.derived[key.substr(8)] = num();
        } else if (key == "residuals") {
            f.residuals.clear();
            if (!val.empty())
                for (auto tok : text::split(val, ',')) {
                    const auto v = text::parse_double(text::trim(tok));
                    if (!v) throw ParseError("bad residual", line_no);
                    f.residuals.push_back(*v);
                }
        } else {
            throw ParseError("unknown fit key '" + key + "'", line_no);
        }
    }
    if (!have_model) throw ParseError("fit block has no model");
    const int dips = f.model == FitModel::LorentzianDips ? dips_for(std::max<std::size_t>(f.params.size(), 1)) : 1;
    auto names = parameter_names(f.model, std::max(dips, 1));
    std::sort(names.begin(), names.end());
    std::vector<std::string> have;
    for (const auto& [k, v] : f.params) have.push_back(k);
    if (have != names) throw ParseError("fit parameters do not match model " + std::string(to_string(f.model)));
    return f;
}

}  // namespace qdawg
