#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <utility>

#include "qr/basis.hpp"
#include "qr/errors.hpp"
#include "qr/filter.hpp"

namespace qr {

enum class SourceKind {
    zero,
    pure_source,         // F(x,t;u) = g(x,t)
    sine,                // F = sin u
    fisher,              // F = B u (1 - u)
    sine_plus_source,    // sin u + g(x,t)
    fisher_plus_source,  // B u (1 - u) + g(x,t)
    custom               // user scalar f(u), Lipschitz data sampled
};

inline std::string to_string(SourceKind k) {
    switch (k) {
        case SourceKind::zero: return "zero";
        case SourceKind::pure_source: return "pure_source";
        case SourceKind::sine: return "sine";
        case SourceKind::fisher: return "fisher";
        case SourceKind::sine_plus_source: return "sine_plus_source";
        case SourceKind::fisher_plus_source: return "fisher_plus_source";
        case SourceKind::custom: return "custom";
    }
    return "?";
}

using SpaceTimeFn = std::function<double(std::span<const double>, double)>;

/// Reaction term F(x,t;u). `cutoff_level` clamps the u argument to
/// [-level, level] before evaluation; the additive source g is not affected.
struct SourceSpec {
    SourceKind kind = SourceKind::zero;
    double fisher_B = 1.0;
    SpaceTimeFn g;                      // additive source, empty = 0
    std::function<double(double)> custom_f;
    double cutoff_level = std::numeric_limits<double>::infinity();
    std::string name = "zero";
};

inline bool has_u_dependence(SourceKind k) {
    return k == SourceKind::sine || k == SourceKind::fisher ||
           k == SourceKind::sine_plus_source || k == SourceKind::fisher_plus_source ||
           k == SourceKind::custom;
}

inline double eval_F(const SourceSpec& spec, std::span<const double> x, double t, double u) {
    if (!std::isfinite(u)) throw precondition_error("eval_F: u must be finite");
    const double uc = std::clamp(u, -spec.cutoff_level, spec.cutoff_level);
    double f = 0.0;
    switch (spec.kind) {
        case SourceKind::zero: return 0.0;
        case SourceKind::pure_source: f = 0.0; break;
        case SourceKind::sine:
        case SourceKind::sine_plus_source: f = std::sin(uc); break;
        case SourceKind::fisher:
        case SourceKind::fisher_plus_source: f = spec.fisher_B * uc * (1.0 - uc); break;
        case SourceKind::custom: f = spec.custom_f ? spec.custom_f(uc) : 0.0; break;
    }
    const bool with_g = spec.kind == SourceKind::pure_source ||
                        spec.kind == SourceKind::sine_plus_source ||
                        spec.kind == SourceKind::fisher_plus_source;
    if (with_g && spec.g) f += spec.g(x, t);
    return f;
}

/// F with its u argument clamped to [-level, level].
inline SourceSpec cutoff_F(const SourceSpec& spec, double level) {
    if (!(level > 0.0)) throw precondition_error("cutoff_F: level must be positive");
    SourceSpec out = spec;
    out.cutoff_level = level;
    return out;
}

/// Lipschitz constant of u -> F(x,t;u) on |u| <= level.
struct LipschitzEstimate {
    double value = 0.0;
    bool exact = true;        // closed form vs sampled difference quotients
    double resolution = 0.0;  // sampling step when not exact (lower bound)
};

inline double sampled_lipschitz(const std::function<double(double)>& f, double level,
                                int samples = 4096) {
    if (!(level > 0.0) || !std::isfinite(level))
        throw precondition_error("sampled_lipschitz: level must be positive finite");
    const double h = 2.0 * level / samples;
    double best = 0.0;
    double prev = f(-level);
    for (int i = 1; i <= samples; ++i) {
        const double u = -level + i * h;
        const double cur = f(u);
        best = std::max(best, std::abs(cur - prev) / h);
        prev = cur;
    }
    return best;
}

inline LipschitzEstimate lipschitz_estimate(const SourceSpec& spec, double level) {
    if (!(level > 0.0)) throw precondition_error("lipschitz_estimate: level must be positive");
    LipschitzEstimate e;
    switch (spec.kind) {
        case SourceKind::zero:
        case SourceKind::pure_source:
            e.value = 0.0;
            break;
        case SourceKind::sine:
        case SourceKind::sine_plus_source:
            e.value = 1.0;  // |cos| <= 1, attained
            break;
        case SourceKind::fisher:
        case SourceKind::fisher_plus_source:
            // max of |B(1-2u)| over [-level, level]
            e.value = spec.fisher_B * (1.0 + 2.0 * level);
            break;
        case SourceKind::custom: {
            const int samples = 8192;
            e.value = spec.custom_f ? sampled_lipschitz(spec.custom_f,
                                                        std::min(level, 1e6), samples)
                                    : 0.0;
            e.exact = false;
            e.resolution = 2.0 * std::min(level, 1e6) / samples;
            break;
        }
    }
    return e;
}

/// Global Lipschitz constant of u -> F(x,t;u) over all of R, accounting for
/// any cut-off already applied. Throws for sources that are only locally
/// Lipschitz and not cut off.
inline double global_lipschitz(const SourceSpec& spec) {
    switch (spec.kind) {
        case SourceKind::zero:
        case SourceKind::pure_source:
            return 0.0;
        case SourceKind::sine:
        case SourceKind::sine_plus_source:
            return 1.0;
        default:
            if (!std::isfinite(spec.cutoff_level))
                throw precondition_error(
                    "global_lipschitz: locally Lipschitz source without a cut-off");
            return lipschitz_estimate(spec, spec.cutoff_level).value;
    }
}

/// Cut-off configuration: clamp level, kappa exponent, lower ellipticity.
struct CutoffSpec {
    double level = std::numeric_limits<double>::infinity();
    double kappa = 0.5;      // min(C1*t, 1/2) when auto-selected
    double M_lower = 1.0;
    double rho_budget = 0.0; // Lipschitz budget the level was solved against
};

/// Largest cut-off level whose Lipschitz constant stays within the budget
/// rho(beta) = sqrt((M_lower/T) log(log^kappa gamma)), with kappa =
/// min(C1*t, 1/2). Infeasible schedules (gamma too small for the requested
/// kappa, or a budget below the reaction's Lipschitz floor) are reported as
/// errors, never clamped. When a reference solution is supplied the level
/// must also cover its W^{1,inf} magnitude.
inline CutoffSpec cutoff_schedule(const FilterParams& params, const SourceSpec& spec,
                                  double M_lower, double t,
                                  const SpectralField* reference = nullptr) {
    if (!(M_lower > 0.0)) throw precondition_error("cutoff_schedule: M_lower must be positive");
    if (!(t > 0.0)) throw precondition_error("cutoff_schedule: t must be positive");
    const double kappa = std::min(params.C1 * t, 0.5);
    const double loglog = kappa * std::log(params.log_gamma());
    if (!(loglog > 0.0))
        throw precondition_error("cutoff_schedule: infeasible, gamma too small (log gamma <= 1)");
    const double rho = std::sqrt(M_lower / params.T * loglog);

    CutoffSpec out;
    out.kappa = kappa;
    out.M_lower = M_lower;
    out.rho_budget = rho;

    switch (spec.kind) {
        case SourceKind::zero:
        case SourceKind::pure_source:
            out.level = std::numeric_limits<double>::infinity();
            break;
        case SourceKind::sine:
        case SourceKind::sine_plus_source:
            if (rho < 1.0)
                throw precondition_error(
                    "cutoff_schedule: infeasible, budget below the global Lipschitz constant 1");
            out.level = std::numeric_limits<double>::infinity();
            break;
        case SourceKind::fisher:
        case SourceKind::fisher_plus_source: {
            const double B = spec.fisher_B;
            if (!(rho > B))
                throw precondition_error("cutoff_schedule: infeasible, budget " +
                                         std::to_string(rho) + " <= B");
            out.level = (rho / B - 1.0) / 2.0;
            break;
        }
        case SourceKind::custom: {
            // invert the (running-max, hence nondecreasing) sampled constant
            auto fits = [&](double lvl) {
                return lipschitz_estimate(spec, lvl).value <= rho;
            };
            double lo = 1e-9;
            if (!fits(lo))
                throw precondition_error("cutoff_schedule: infeasible for sampled source");
            double hi = 1.0;
            while (fits(hi) && hi < 1e9) {
                lo = hi;
                hi *= 2.0;
            }
            if (hi >= 1e9) {
                out.level = std::numeric_limits<double>::infinity();
                break;
            }
            for (int it = 0; it < 60; ++it) {
                const double mid = 0.5 * (lo + hi);
                (fits(mid) ? lo : hi) = mid;
            }
            out.level = lo;
            break;
        }
    }

    if (std::isfinite(out.level)) {
        const double L = lipschitz_estimate(spec, out.level).value;
        if (L > rho * (1.0 + 1e-9))
            throw numeric_error("cutoff_schedule: solved level exceeds budget");
    }
    if (reference) {
        const double need = w1inf_estimate(*reference);
        if (out.level < need)
            throw precondition_error("cutoff_schedule: infeasible, level " +
                                     std::to_string(out.level) +
                                     " below reference magnitude " + std::to_string(need));
    }
    return out;
}

}  // namespace qr
