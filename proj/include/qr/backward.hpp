#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "qr/basis.hpp"
#include "qr/errors.hpp"
#include "qr/filter.hpp"
#include "qr/forward.hpp"
#include "qr/nonlinearity.hpp"

namespace qr {

/// Auxiliary scaling exponent rho, one formula per use of the energy
/// argument it comes from.
enum class RhoMode { existence, convergence, positivity, convergence_cutoff };

inline double rho_select(RhoMode mode, double L_F, double C1, double gamma,
                         double M_lower = 1.0) {
    if (!(C1 > 0.0) || !(gamma >= 1.0))
        throw precondition_error("rho_select: need C1 > 0 and gamma >= 1");
    if (!(L_F >= 0.0)) throw precondition_error("rho_select: L_F must be >= 0");
    const double lg = std::log(gamma);
    switch (mode) {
        case RhoMode::existence:
            return 0.5 * (L_F + C1 * C1 * lg * lg + 2.0);
        case RhoMode::convergence:
            return C1 * lg + 0.5 + 2.0 * L_F * L_F;
        case RhoMode::positivity:
            return L_F + C1 * lg + 1.0;
        case RhoMode::convergence_cutoff:
            if (!(M_lower > 0.0))
                throw precondition_error("rho_select: M_lower must be positive");
            return C1 * lg + (M_lower + 1.0) / 4.0 + L_F * L_F / M_lower;
    }
    return 0.0;
}

/// The terminal-value problem after regularization: u_t = a Laplace u + Qu + F,
/// equivalently u_t + A Laplace u = F + Pu with A = M_bar - a. The linear part
/// is diagonal with modal coefficient lambda_p = -a mu_p + q_p, whose backward
/// growth is capped by log(gamma)/T.
struct RegularizedProblem {
    ProblemSpec problem;
    BasisHandle basis;
    ModalFilter filter;
    double rho = 0.0;            // >= 0; scaling device for the Volterra path
    std::vector<double> lambda;  // per sorted mode

    double A() const { return problem.M_bar - problem.a; }
    double growth_cap() const { return filter.params.log_gamma() / problem.T; }
};

inline RegularizedProblem assemble(const ProblemSpec& problem, const BasisHandle& basis,
                                   const ModalFilter& filter, double rho = 0.0) {
    validate_problem(problem);
    if (!(rho >= 0.0)) throw precondition_error("assemble: rho must be >= 0");
    if (std::abs(filter.params.M_bar - problem.M_bar) > 1e-12 ||
        std::abs(filter.params.T - problem.T) > 1e-12)
        throw precondition_error("assemble: filter was built with different M_bar or T");
    if (filter.basis.get() != basis.get() && !filter.basis->compatible(*basis))
        throw precondition_error("assemble: filter basis mismatch");

    RegularizedProblem rp;
    rp.problem = problem;
    rp.basis = basis;
    rp.filter = filter;
    rp.rho = rho;
    rp.lambda.resize(basis->mode_count());
    const double cap = rp.growth_cap();
    for (std::size_t m = 0; m < rp.lambda.size(); ++m) {
        rp.lambda[m] = -problem.a * basis->eigenvalue(m) + filter.q[m];
        if (-rp.lambda[m] > cap * (1.0 + 1e-12) + 1e-12)
            throw numeric_error("assemble: growth exponent exceeds log(gamma)/T at mode " +
                                std::to_string(m));
    }
    return rp;
}

struct BackwardRun {
    BasisHandle basis;
    double dt = 0.0;
    double T = 0.0;
    std::vector<double> times;          // stored, ascending, times[0] = 0
    std::vector<SpectralField> fields;  // u^eps at stored times

    // amplification audit
    double growth_cap = 0.0;           // log(gamma)/T
    double max_growth_exponent = 0.0;  // max_p(-lambda_p)
    int amplification_violations = 0;  // stored-time per-mode ratio checks (F = 0 runs)
    bool amplification_ok = true;

    // fixed-point path diagnostics
    int iterations = 0;
    std::vector<double> residual_history;

    const SpectralField& at_time0() const { return fields.front(); }
    const SpectralField& terminal() const { return fields.back(); }

    std::size_t index_of_time(double t) const {
        std::size_t best = 0;
        double bd = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < times.size(); ++i) {
            const double d = std::abs(times[i] - t);
            if (d < bd) {
                bd = d;
                best = i;
            }
        }
        return best;
    }
};

namespace detail {

inline void audit_amplification(BackwardRun& run, const RegularizedProblem& rp,
                                const SpectralField& uf) {
    run.growth_cap = rp.growth_cap();
    run.max_growth_exponent = 0.0;
    for (double l : rp.lambda) run.max_growth_exponent = std::max(run.max_growth_exponent, -l);
    run.amplification_ok = run.max_growth_exponent <= run.growth_cap * (1.0 + 1e-12) + 1e-12;
    // realized per-mode ratios are only meaningful without a source term
    if (rp.problem.source.kind == SourceKind::zero) {
        const double T = rp.problem.T;
        const double gamma = rp.filter.params.gamma;
        for (std::size_t i = 0; i < run.times.size(); ++i) {
            const double bound = std::pow(gamma, (T - run.times[i]) / T) * (1.0 + 1e-9);
            for (std::size_t m = 0; m < uf.size(); ++m) {
                if (uf[m] == 0.0) continue;
                const double ratio = std::abs(run.fields[i][m] / uf[m]);
                if (ratio > bound) ++run.amplification_violations;
            }
        }
        if (run.amplification_violations > 0) run.amplification_ok = false;
    }
}

inline void throw_nonfinite(const SpectralField& u, double t, const char* who) {
    for (std::size_t m = 0; m < u.size(); ++m)
        if (!std::isfinite(u[m]))
            throw numeric_error(std::string(who) + ": non-finite mode " + std::to_string(m) +
                                " at t=" + std::to_string(t));
    throw numeric_error(std::string(who) + ": non-finite state at t=" + std::to_string(t));
}

}  // namespace detail

/// Direct modal integrator from T down to 0:
///   u_p(t-dt) = e^{-lambda_p dt} (u_p(t) - dt F_p(t)).
/// Exact per mode when F = 0.
inline BackwardRun solve_backward(const RegularizedProblem& rp, const SpectralField& uf_eps,
                                  double dt, int store_stride = 1) {
    require_same_basis(uf_eps, SpectralField::zero(rp.basis), "solve_backward");
    const std::int64_t n = step_count(rp.problem.T, dt);
    if (store_stride < 1 || n % store_stride != 0)
        throw precondition_error("solve_backward: store_stride must divide the step count");
    if (!uf_eps.finite())
        throw precondition_error("solve_backward: terminal data must be finite");

    std::vector<double> decay(rp.lambda.size());
    for (std::size_t m = 0; m < rp.lambda.size(); ++m) decay[m] = std::exp(-rp.lambda[m] * dt);

    BackwardRun run;
    run.basis = rp.basis;
    run.dt = dt;
    run.T = rp.problem.T;
    const auto stored = static_cast<std::size_t>(n / store_stride) + 1;
    run.times.resize(stored);
    run.fields.assign(stored, SpectralField::zero(rp.basis));

    SpectralField u = uf_eps;
    run.times.back() = rp.problem.T;
    run.fields.back() = u;
    const bool has_source = rp.problem.source.kind != SourceKind::zero;
    for (std::int64_t i = n; i > 0; --i) {
        const double t = static_cast<double>(i) * dt;
        if (has_source) {
            auto f = source_spectral(rp.problem.source, u, t);
            for (std::size_t m = 0; m < u.size(); ++m) u[m] = decay[m] * (u[m] - dt * f[m]);
        } else {
            for (std::size_t m = 0; m < u.size(); ++m) u[m] *= decay[m];
        }
        double sum = 0.0;
        for (std::size_t m = 0; m < u.size(); ++m) sum += u[m];
        if (!std::isfinite(sum)) detail::throw_nonfinite(u, t - dt, "solve_backward");
        if ((i - 1) % store_stride == 0) {
            const auto slot = static_cast<std::size_t>((i - 1) / store_stride);
            run.times[slot] = static_cast<double>(i - 1) * dt;
            run.fields[slot] = u;
        }
    }
    detail::audit_amplification(run, rp, uf_eps);
    return run;
}

/// Picard iteration on the time-discretized integral form of the Galerkin
/// system for the scaled coefficients V_j = e^{rho (t-T)} u_j:
///   V_j(t) = V_j(T) - int_t^T [ (A mu_j + rho + s_j) V_j + e^{rho(s-T)} F_j(s) ] ds,
/// trapezoid in time, sup-in-time L2 stopping rule. Cross-validation path;
/// the modal integrator above is the performance path.
inline BackwardRun volterra_iterate(const RegularizedProblem& rp, const SpectralField& uf_eps,
                                    double dt, double tol, int max_iter, int store_stride = 1) {
    require_same_basis(uf_eps, SpectralField::zero(rp.basis), "volterra_iterate");
    if (!(tol > 0.0)) throw precondition_error("volterra_iterate: tol must be positive");
    if (max_iter < 1) throw precondition_error("volterra_iterate: max_iter must be >= 1");
    const std::int64_t n = step_count(rp.problem.T, dt);
    if (store_stride < 1 || n % store_stride != 0)
        throw precondition_error("volterra_iterate: store_stride must divide the step count");
    const std::size_t modes = rp.basis->mode_count();
    const std::size_t grid = static_cast<std::size_t>(n) + 1;
    if (grid * modes > 40'000'000)
        throw precondition_error("volterra_iterate: time grid x modes exceeds the memory budget");

    const double T = rp.problem.T;
    const double rho = rp.rho;
    const double A = rp.A();
    std::vector<double> c(modes);
    for (std::size_t m = 0; m < modes; ++m)
        c[m] = A * rp.basis->eigenvalue(m) + rho + rp.filter.s[m];

    std::vector<double> V(grid * modes), K(grid * modes), Vnew(grid * modes);
    for (std::size_t i = 0; i < grid; ++i)
        for (std::size_t m = 0; m < modes; ++m) V[i * modes + m] = uf_eps[m];

    const bool has_source = rp.problem.source.kind != SourceKind::zero;
    BackwardRun run;
    run.basis = rp.basis;
    run.dt = dt;
    run.T = T;

    SpectralField work = SpectralField::zero(rp.basis);
    for (int iter = 1; iter <= max_iter; ++iter) {
        // kernel on the current iterate
        for (std::size_t i = 0; i < grid; ++i) {
            const double t = static_cast<double>(i) * dt;
            double* k = &K[i * modes];
            const double* v = &V[i * modes];
            if (has_source) {
                const double up = std::exp(rho * (T - t));    // unscale factor
                const double down = std::exp(rho * (t - T));  // rescale factor
                for (std::size_t m = 0; m < modes; ++m) work[m] = up * v[m];
                auto f = source_spectral(rp.problem.source, work, t);
                for (std::size_t m = 0; m < modes; ++m) k[m] = c[m] * v[m] + down * f[m];
            } else {
                for (std::size_t m = 0; m < modes; ++m) k[m] = c[m] * v[m];
            }
        }
        // Vnew(t_i) = V(T) - trapezoid_{t_i}^{T} K
        for (std::size_t m = 0; m < modes; ++m) Vnew[(grid - 1) * modes + m] = uf_eps[m];
        for (std::size_t i = grid - 1; i > 0; --i) {
            const double* kh = &K[i * modes];
            const double* kl = &K[(i - 1) * modes];
            const double* above = &Vnew[i * modes];
            double* below = &Vnew[(i - 1) * modes];
            for (std::size_t m = 0; m < modes; ++m)
                below[m] = above[m] - 0.5 * dt * (kh[m] + kl[m]);
        }
        // sup over time of the modal L2 difference
        double residual = 0.0;
        for (std::size_t i = 0; i < grid; ++i) {
            double s2 = 0.0;
            for (std::size_t m = 0; m < modes; ++m) {
                const double d = Vnew[i * modes + m] - V[i * modes + m];
                s2 += d * d;
            }
            residual = std::max(residual, std::sqrt(s2));
        }
        if (!std::isfinite(residual))
            throw numeric_error("volterra_iterate: divergence at iteration " +
                                std::to_string(iter));
        run.residual_history.push_back(residual);
        run.iterations = iter;
        V.swap(Vnew);
        if (residual < tol) break;
        if (iter == max_iter) {
            std::string hist;
            const std::size_t tail = std::min<std::size_t>(run.residual_history.size(), 6);
            for (std::size_t h = run.residual_history.size() - tail;
                 h < run.residual_history.size(); ++h)
                hist += " " + std::to_string(run.residual_history[h]);
            throw numeric_error("volterra_iterate: no convergence after " +
                                std::to_string(max_iter) + " iterations; last residuals:" + hist);
        }
    }

    const auto stored = static_cast<std::size_t>(n / store_stride) + 1;
    run.times.resize(stored);
    run.fields.assign(stored, SpectralField::zero(rp.basis));
    for (std::size_t s = 0; s < stored; ++s) {
        const std::size_t i = s * static_cast<std::size_t>(store_stride);
        const double t = static_cast<double>(i) * dt;
        run.times[s] = t;
        const double up = std::exp(rho * (T - t));
        for (std::size_t m = 0; m < modes; ++m) run.fields[s][m] = up * V[i * modes + m];
    }
    detail::audit_amplification(run, rp, uf_eps);
    return run;
}

/// Worst-case magnitude the regularized backward solution can reach:
/// gamma * e^{L_F T} (||u_f|| + T max_t ||F(.,t;0)||).
inline double stability_envelope(const RegularizedProblem& rp, const SpectralField& uf_eps,
                                 int time_samples = 16) {
    const double L = global_lipschitz(rp.problem.source);
    double f0 = 0.0;
    if (rp.problem.source.kind != SourceKind::zero) {
        auto zero = SpectralField::zero(rp.basis);
        for (int i = 0; i <= time_samples; ++i) {
            const double t = rp.problem.T * i / time_samples;
            f0 = std::max(f0, source_spectral(rp.problem.source, zero, t).l2_norm());
        }
    }
    return rp.filter.params.gamma * std::exp(L * rp.problem.T) *
           (uf_eps.l2_norm() + rp.problem.T * f0);
}

struct PositivityReport {
    bool precondition_ok = false;
    std::string message;
    double min_scaled = 0.0;
    double max_scaled = 0.0;
    double sup_bound = 0.0;   // nodal max of the terminal data
    double tolerance = 0.0;   // 1e-6 * sup_bound
    bool within_bounds = false;
};

/// Nodal range of the scaled trajectory v = e^{rho (t-T)} u against
/// [0, max u_f^eps]. Report-only: positivity holds under the hypotheses that
/// constants are representable (Neumann/torus), F(.,.;0) = 0 and u_f^eps >= 0.
inline PositivityReport positivity_check(const BackwardRun& run, const SpectralField& uf_eps,
                                         const SourceSpec& source, double rho) {
    PositivityReport rep;
    const Basis& b = *run.basis;
    if (b.kind() == DomainKind::interval_dirichlet) {
        rep.message = "precondition violated: constants are not representable in a Dirichlet basis";
        return rep;
    }
    std::vector<double> xs(static_cast<std::size_t>(b.dim()));
    b.node_coords(0, xs);
    for (double t : {0.0, run.T / 2, run.T})
        if (std::abs(eval_F(source, xs, t, 0.0)) > 0.0) {
            rep.message = "precondition violated: F(x,t;0) is not identically zero";
            return rep;
        }
    auto gf = to_grid(uf_eps);
    double fmin = gf[0], fmax = gf[0];
    for (std::size_t i = 0; i < gf.size(); ++i) {
        fmin = std::min(fmin, gf[i]);
        fmax = std::max(fmax, gf[i]);
    }
    if (fmin < 0.0) {
        rep.message = "precondition violated: terminal data has a negative node, check skipped";
        return rep;
    }
    rep.precondition_ok = true;
    rep.sup_bound = fmax;
    rep.tolerance = 1e-6 * fmax;
    rep.min_scaled = std::numeric_limits<double>::infinity();
    rep.max_scaled = -std::numeric_limits<double>::infinity();
    for (std::size_t s = 0; s < run.times.size(); ++s) {
        const double scale = std::exp(rho * (run.times[s] - run.T));
        auto g = to_grid(run.fields[s]);
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double v = scale * g[i];
            rep.min_scaled = std::min(rep.min_scaled, v);
            rep.max_scaled = std::max(rep.max_scaled, v);
        }
    }
    rep.within_bounds =
        rep.min_scaled >= -rep.tolerance && rep.max_scaled <= rep.sup_bound + rep.tolerance;
    rep.message = rep.within_bounds ? "scaled trajectory within [0, max u_f]"
                                    : "scaled trajectory leaves [0, max u_f]";
    return rep;
}

}  // namespace qr
