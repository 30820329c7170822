#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "qr/backward.hpp"
#include "qr/basis.hpp"
#include "qr/errors.hpp"
#include "qr/filter.hpp"

namespace qr {

/// One measured (eps, t) cell of a convergence experiment.
struct ErrorRecord {
    double eps = 0.0;
    double gamma = 0.0;
    double t = 0.0;
    double err_l2 = 0.0;
    double err_h1_tail = 0.0;  // int_t^T ||grad(u^eps - u)||^2 ds
    double r = 0.0;
    double err_lr = 0.0;       // sqrt(int_t^T ||u^eps - u||_{L^r}^2 ds)
    double bound_rhs = 0.0;    // a-priori error bound at (t, eps)
    double t_eps = 0.0;        // root of t = gamma^{-C1 t}
};

/// (L2, H1-seminorm) of the difference, by Parseval.
inline std::pair<double, double> error_norms(const SpectralField& u_num,
                                             const SpectralField& u_ref) {
    require_same_basis(u_num, u_ref, "error_norms");
    double l2 = 0.0, h1 = 0.0;
    for (std::size_t m = 0; m < u_num.size(); ++m) {
        const double d = u_num[m] - u_ref[m];
        l2 += d * d;
        h1 += u_num.basis()->eigenvalue(m) * d * d;
    }
    return {std::sqrt(l2), std::sqrt(h1)};
}

/// A-priori L2 error bound of the regularized reconstruction at time t:
///   gamma^{-C1 t} (K + sqrt(2T) C0 gamma^{C1 T - 1} ||u||_W) e^{T C2},
/// with C0 = 1/T and C2 = 1/2 + 2 L_F^2. K is the coupling constant
/// gamma^{C1 T} eps.
inline double error_bound(double t, const FilterParams& params, double gevrey_norm_u,
                          double L_F) {
    if (!(t >= 0.0) || t > params.T + 1e-12)
        throw precondition_error("error_bound: t must lie in [0, T]");
    if (params.C1 * params.T > 1.0 + 1e-12)
        throw precondition_error("error_bound: requires C1*T <= 1");
    const double C0 = 1.0 / params.T;
    const double C2 = 0.5 + 2.0 * L_F * L_F;
    return std::pow(params.gamma, -params.C1 * t) *
           (params.K +
            std::sqrt(2.0 * params.T) * C0 * std::pow(params.gamma, params.C1 * params.T - 1.0) *
                gevrey_norm_u) *
           std::exp(params.T * C2);
}

/// Root of t = gamma^{-C1 t} in (0,1), by bisection; the choice of time at
/// which the regularized solution approximates u(.,0). The returned root is
/// always below 1/sqrt(C1 log gamma).
inline double tstar_solve(double gamma, double C1, double tol = 1e-12) {
    if (!(gamma > 1.0)) throw precondition_error("tstar_solve: gamma must exceed 1");
    if (!(C1 > 0.0)) throw precondition_error("tstar_solve: C1 must be positive");
    if (!(tol > 0.0)) throw precondition_error("tstar_solve: tol must be positive");
    const double clg = C1 * std::log(gamma);
    auto g = [&](double t) { return t - std::exp(-clg * t); };
    double lo = 0.0, hi = 1.0;
    double mid = 0.5;
    for (int it = 0; it < 200 && (hi - lo) > tol * 0.5; ++it) {
        mid = 0.5 * (lo + hi);
        (g(mid) < 0.0 ? lo : hi) = mid;
    }
    mid = 0.5 * (lo + hi);
    if (std::abs(g(mid)) > 10.0 * tol + 1e-15)
        throw numeric_error("tstar_solve: residual above tolerance");
    if (!(mid < 1.0 / std::sqrt(clg) + tol))
        throw numeric_error("tstar_solve: root violates the 1/sqrt(C1 log gamma) cap");
    return mid;
}

/// Interpolation exponent: 1/r = alpha/2 + (1-alpha)(d-2)/(2d), i.e.
/// alpha = d/r - (d-2)/2, admissible when r > 2 and 1/r > (d-2)/(2d).
inline double gn_alpha(int d, double r) {
    if (d < 1 || d > 3) throw precondition_error("gn_alpha: d must be 1..3");
    if (!(r > 2.0)) throw precondition_error("gn_alpha: requires r > 2");
    if (!(1.0 / r > (d - 2.0) / (2.0 * d)))
        throw precondition_error("gn_alpha: inadmissible (r,d) pair");
    return d / r - (d - 2.0) / 2.0;
}

/// Trajectory on a shared uniform time grid.
struct SpaceTimeField {
    BasisHandle basis;
    std::vector<double> times;
    std::vector<SpectralField> fields;

    static SpaceTimeField from_run(const BackwardRun& run) {
        return {run.basis, run.times, run.fields};
    }
    std::size_t index_at_or_after(double t) const {
        for (std::size_t i = 0; i < times.size(); ++i)
            if (times[i] >= t - 1e-12) return i;
        return times.size() - 1;
    }
};

inline void require_aligned(const SpaceTimeField& a, const SpaceTimeField& b, const char* who) {
    if (a.basis.get() != b.basis.get() && !a.basis->compatible(*b.basis))
        throw precondition_error(std::string(who) + ": basis mismatch");
    if (a.times.size() != b.times.size())
        throw precondition_error(std::string(who) + ": time grids differ");
    for (std::size_t i = 0; i < a.times.size(); ++i)
        if (std::abs(a.times[i] - b.times[i]) > 1e-12)
            throw precondition_error(std::string(who) + ": time grids differ");
}

namespace detail {
inline double trapezoid(std::span<const double> t, std::span<const double> f, std::size_t i0) {
    double s = 0.0;
    for (std::size_t i = i0; i + 1 < t.size(); ++i)
        s += 0.5 * (t[i + 1] - t[i]) * (f[i] + f[i + 1]);
    return s;
}
}  // namespace detail

/// int_t^T ||grad(u_num - u_ref)||^2 ds, trapezoid over the stored times.
inline double h1_tail_integral(const SpaceTimeField& num, const SpaceTimeField& ref, double t) {
    require_aligned(num, ref, "h1_tail_integral");
    std::vector<double> g2(num.times.size());
    for (std::size_t i = 0; i < num.times.size(); ++i) {
        const double h1 = error_norms(num.fields[i], ref.fields[i]).second;
        g2[i] = h1 * h1;
    }
    return detail::trapezoid(num.times, g2, num.index_at_or_after(t));
}

/// sqrt(int_t^T ||u_num - u_ref||_{L^r}^2 ds); nodal L^r norms by quadrature.
inline double lr_tail_error(const SpaceTimeField& num, const SpaceTimeField& ref, double r,
                            double t) {
    require_aligned(num, ref, "lr_tail_error");
    std::vector<double> f(num.times.size());
    for (std::size_t i = 0; i < num.times.size(); ++i) {
        auto diff = num.fields[i];
        for (std::size_t m = 0; m < diff.size(); ++m) diff[m] -= ref.fields[i][m];
        const double n = to_grid(diff).lr_norm(r);
        f[i] = n * n;
    }
    return std::sqrt(detail::trapezoid(num.times, f, num.index_at_or_after(t)));
}

/// Both sides of the interpolation inequality
///   int_t^T ||w||_{L^r}^2 ds <= C^2 (T-t)^alpha sup_{[t,T]}||w||^{2 alpha} (int_t^T ||grad w||^2)^{1-alpha}
/// for w = u_num - u_ref, plus the smallest constant that makes it hold.
struct GNCheck {
    double alpha = 0.0;
    double lhs = 0.0;       // L^r error integral
    double rhs_unit = 0.0;  // right side with C = 1
    double c_omega = 0.0;   // fitted constant: lhs <= c_omega^2 * rhs_unit
};

inline GNCheck gn_check(const SpaceTimeField& num, const SpaceTimeField& ref, double r, double t) {
    require_aligned(num, ref, "gn_check");
    GNCheck out;
    out.alpha = gn_alpha(num.basis->dim(), r);
    const double lr = lr_tail_error(num, ref, r, t);
    out.lhs = lr * lr;
    double sup = 0.0;
    for (std::size_t i = num.index_at_or_after(t); i < num.times.size(); ++i)
        sup = std::max(sup, error_norms(num.fields[i], ref.fields[i]).first);
    const double grad = h1_tail_integral(num, ref, t);
    const double span = num.times.back() - t;
    out.rhs_unit = std::pow(span, out.alpha) * std::pow(sup, 2.0 * out.alpha) *
                   std::pow(grad, 1.0 - out.alpha);
    if (out.rhs_unit == 0.0) {
        if (out.lhs > 1e-28) throw numeric_error("gn_check: degenerate right side");
        out.c_omega = 0.0;
    } else {
        out.c_omega = std::sqrt(out.lhs / out.rhs_unit);
    }
    return out;
}

/// Least-squares line on (log eps, log err).
struct RateFit {
    double slope = 0.0;
    double intercept = 0.0;
    double residual = 0.0;  // RMS residual in log space
};

inline RateFit fit_rate(std::span<const double> eps, std::span<const double> err) {
    if (eps.size() != err.size() || eps.size() < 3)
        throw precondition_error("fit_rate: need at least 3 aligned points");
    for (std::size_t i = 0; i < eps.size(); ++i)
        if (!(eps[i] > 0.0) || !(err[i] > 0.0))
            throw precondition_error("fit_rate: entries must be positive");
    const double n = static_cast<double>(eps.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < eps.size(); ++i) {
        const double x = std::log(eps[i]), y = std::log(err[i]);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    RateFit fit;
    fit.slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    fit.intercept = (sy - fit.slope * sx) / n;
    double r2 = 0.0;
    for (std::size_t i = 0; i < eps.size(); ++i) {
        const double d = std::log(err[i]) - (fit.intercept + fit.slope * std::log(eps[i]));
        r2 += d * d;
    }
    fit.residual = std::sqrt(r2 / n);
    return fit;
}

/// Weighted norms for the backward-uniqueness inequality with weight
/// |lambda(t)|^{-m/k}, lambda(t) = t - T - eta (negative on [0,T]).
struct CarlemanConfig {
    double eta = 0.05;
    double m = 1.0;
    double k = 1.0;
    double T = 0.1;
};

struct CarlemanSides {
    double lhs = 0.0;        // ||w (a Lap v - v_t)||^2
    double term_v = 0.0;     // ||w/|lambda| * v||^2
    double term_grad = 0.0;  // ||w grad v||^2
    double rhs_lower = 0.0;  // term_v + 0.5 term_grad
};

/// Space-time quadrature of the weighted norms entering the Carleman-type
/// inequality; v must vanish at t in {0,T} (checked to 1e-10) and on the
/// boundary (Dirichlet basis). v_t is formed by second-order differences on
/// the stored grid.
inline CarlemanSides carleman_check(const SpaceTimeField& v, double a,
                                    const CarlemanConfig& cfg) {
    if (v.basis->kind() != DomainKind::interval_dirichlet)
        throw precondition_error("carleman_check: needs a Dirichlet basis (zero trace)");
    if (v.times.size() < 3) throw precondition_error("carleman_check: needs >= 3 time samples");
    if (!(cfg.eta > 0.0) || !(cfg.m > 0.0) || !(cfg.k > 0.0))
        throw precondition_error("carleman_check: eta, m, k must be positive");
    const double T = v.times.back();
    if (std::abs(T - cfg.T) > 1e-9)
        throw precondition_error("carleman_check: trajectory horizon differs from cfg.T");
    const double p = cfg.m / cfg.k;
    if (p * std::log(1.0 / cfg.eta) > 350.0)
        throw std::range_error("carleman_check: weight eta^{-m/k} overflows; shrink m/k or raise eta");

    double scale = 0.0;
    for (const auto& f : v.fields) scale = std::max(scale, f.l2_norm());
    const double tol0 = 1e-10 * std::max(1.0, scale);
    if (v.fields.front().l2_norm() > tol0 || v.fields.back().l2_norm() > tol0)
        throw precondition_error("carleman_check: v must vanish at t=0 and t=T");

    const std::size_t n = v.times.size();
    const double dt = v.times[1] - v.times[0];
    std::vector<double> f_lhs(n), f_v(n), f_grad(n);
    const Basis& b = *v.basis;
    for (std::size_t i = 0; i < n; ++i) {
        // second-order time derivative stencils
        SpectralField vt = SpectralField::zero(v.basis);
        if (i == 0)
            for (std::size_t m = 0; m < vt.size(); ++m)
                vt[m] = (-3.0 * v.fields[0][m] + 4.0 * v.fields[1][m] - v.fields[2][m]) / (2.0 * dt);
        else if (i == n - 1)
            for (std::size_t m = 0; m < vt.size(); ++m)
                vt[m] = (3.0 * v.fields[n - 1][m] - 4.0 * v.fields[n - 2][m] + v.fields[n - 3][m]) /
                        (2.0 * dt);
        else
            for (std::size_t m = 0; m < vt.size(); ++m)
                vt[m] = (v.fields[i + 1][m] - v.fields[i - 1][m]) / (2.0 * dt);

        double op2 = 0.0, v2 = 0.0, g2 = 0.0;
        for (std::size_t m = 0; m < vt.size(); ++m) {
            const double lap = -b.eigenvalue(m) * v.fields[i][m];
            const double d = a * lap - vt[m];
            op2 += d * d;
            v2 += v.fields[i][m] * v.fields[i][m];
            g2 += b.eigenvalue(m) * v.fields[i][m] * v.fields[i][m];
        }
        const double absl = (T + cfg.eta) - v.times[i];  // |lambda| on [eta, T+eta]
        const double w2 = std::pow(absl, -2.0 * p);
        f_lhs[i] = w2 * op2;
        f_v[i] = w2 / (absl * absl) * v2;
        f_grad[i] = w2 * g2;
    }
    CarlemanSides sides;
    sides.lhs = detail::trapezoid(v.times, f_lhs, 0);
    sides.term_v = detail::trapezoid(v.times, f_v, 0);
    sides.term_grad = detail::trapezoid(v.times, f_grad, 0);
    sides.rhs_lower = sides.term_v + 0.5 * sides.term_grad;
    return sides;
}

/// Sweep over m: smallest tested m* such that K*lhs >= rhs_lower for every
/// tested m in [m*, 4 m*], plus the smallest D with
/// lhs >= (m/k) term_v - D term_grad across the sweep.
struct CarlemanSweep {
    std::vector<double> m_values;
    std::vector<CarlemanSides> sides;
    double m_star = std::numeric_limits<double>::quiet_NaN();
    double min_margin = std::numeric_limits<double>::quiet_NaN();
    double D_fit = 0.0;
};

inline CarlemanSweep carleman_m_sweep(const SpaceTimeField& v, double a, double eta, double k,
                                      double T, double K, std::span<const double> m_values) {
    CarlemanSweep sweep;
    for (double m : m_values) {
        CarlemanConfig cfg{eta, m, k, T};
        sweep.m_values.push_back(m);
        sweep.sides.push_back(carleman_check(v, a, cfg));
    }
    auto holds = [&](std::size_t i) {
        return K * sweep.sides[i].lhs >= sweep.sides[i].rhs_lower;
    };
    for (std::size_t i = 0; i < sweep.m_values.size(); ++i) {
        const double m = sweep.m_values[i];
        const double window_end = 4.0 * m;
        if (window_end > sweep.m_values.back() + 1e-12) break;  // window not covered
        bool ok = true;
        double margin = std::numeric_limits<double>::infinity();
        for (std::size_t j = i; j < sweep.m_values.size(); ++j) {
            if (sweep.m_values[j] > window_end + 1e-12) break;
            if (!holds(j)) {
                ok = false;
                break;
            }
            margin = std::min(margin, K * sweep.sides[j].lhs - sweep.sides[j].rhs_lower);
        }
        if (ok) {
            sweep.m_star = m;
            sweep.min_margin = margin;
            break;
        }
    }
    for (std::size_t i = 0; i < sweep.m_values.size(); ++i) {
        const double need = (sweep.m_values[i] / k) * sweep.sides[i].term_v - sweep.sides[i].lhs;
        if (sweep.sides[i].term_grad > 0.0)
            sweep.D_fit = std::max(sweep.D_fit, need / sweep.sides[i].term_grad);
    }
    sweep.D_fit = std::max(sweep.D_fit, 0.0);
    return sweep;
}

}  // namespace qr
