#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "qr/basis.hpp"
#include "qr/errors.hpp"
#include "qr/nonlinearity.hpp"

namespace qr {

/// Scalar semilinear heat problem u_t = a Laplace u + F(x,t;u) on the basis
/// domain; a must stay strictly below the diffusion bound M_bar.
struct ProblemSpec {
    double a = 1.0;
    double M_bar = 2.0;
    double M_lower = 0.0;  // 0 -> M_bar - a
    double T = 1.0;
    SourceSpec source;

    double ellipticity_lower() const { return M_lower > 0.0 ? M_lower : M_bar - a; }
};

inline void validate_problem(const ProblemSpec& p) {
    if (!(p.a > 0.0)) throw precondition_error("problem: a must be positive");
    if (!(p.a < p.M_bar)) throw precondition_error("problem: requires a < M_bar");
    if (!(p.T > 0.0)) throw precondition_error("problem: T must be positive");
    if (p.M_lower > p.M_bar - p.a + 1e-12)
        throw precondition_error("problem: M_lower must not exceed M_bar - a");
}

inline std::int64_t step_count(double T, double dt) {
    if (!(dt > 0.0)) throw precondition_error("time stepping: dt must be positive");
    const double steps = T / dt;
    if (steps > 5e7) throw precondition_error("time stepping: step count overflow");
    const auto n = static_cast<std::int64_t>(std::llround(steps));
    if (n < 1 || std::abs(n * dt - T) > 1e-9 * std::max(1.0, T))
        throw precondition_error("time stepping: dt must divide T");
    return n;
}

/// Spectral coefficients of x -> F(x, t; u(x)).
inline SpectralField source_spectral(const SourceSpec& spec, const SpectralField& u, double t) {
    const Basis& b = *u.basis();
    if (spec.kind == SourceKind::zero) return SpectralField::zero(u.basis());
    std::vector<double> fv(b.node_count());
    std::vector<double> xs(static_cast<std::size_t>(b.dim()));
    const bool needs_u = has_u_dependence(spec.kind);
    GridField ug = needs_u ? to_grid(u) : GridField(u.basis(), std::vector<double>(b.node_count(), 0.0));
    for (std::size_t i = 0; i < b.node_count(); ++i) {
        b.node_coords(i, xs);
        fv[i] = eval_F(spec, xs, t, ug[i]);
    }
    return to_spectral(GridField(u.basis(), std::move(fv)));
}

struct ForwardRun {
    ProblemSpec problem;
    double dt = 0.0;
    std::vector<double> times;          // uniform stored grid covering [0,T]
    std::vector<SpectralField> fields;  // one per stored time

    const SpectralField& terminal() const { return fields.back(); }
    const SpectralField& initial() const { return fields.front(); }
};

/// Forward exponential-Euler integration in the eigenbasis:
///   u_p(t+dt) = e^{-a mu_p dt} (u_p(t) + dt * F_p(t)).
/// Exact per mode when F = 0.
inline ForwardRun solve_forward(const ProblemSpec& problem, const SpectralField& u0, double dt,
                                int store_stride = 1) {
    validate_problem(problem);
    if (!u0.finite()) throw precondition_error("solve_forward: u0 must be finite");
    const std::int64_t n = step_count(problem.T, dt);
    if (store_stride < 1 || n % store_stride != 0)
        throw precondition_error("solve_forward: store_stride must divide the step count");

    const Basis& b = *u0.basis();
    std::vector<double> decay(b.mode_count());
    for (std::size_t m = 0; m < b.mode_count(); ++m)
        decay[m] = std::exp(-problem.a * b.eigenvalue(m) * dt);

    ForwardRun run;
    run.problem = problem;
    run.dt = dt;
    run.times.reserve(static_cast<std::size_t>(n / store_stride) + 1);
    run.fields.reserve(static_cast<std::size_t>(n / store_stride) + 1);

    SpectralField u = u0;
    run.times.push_back(0.0);
    run.fields.push_back(u);
    const bool has_source = problem.source.kind != SourceKind::zero;
    for (std::int64_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) * dt;
        if (has_source) {
            auto f = source_spectral(problem.source, u, t);
            for (std::size_t m = 0; m < u.size(); ++m) u[m] = decay[m] * (u[m] + dt * f[m]);
        } else {
            for (std::size_t m = 0; m < u.size(); ++m) u[m] *= decay[m];
        }
        double sum = 0.0;
        for (std::size_t m = 0; m < u.size(); ++m) sum += u[m];
        if (!std::isfinite(sum)) {
            for (std::size_t m = 0; m < u.size(); ++m)
                if (!std::isfinite(u[m]))
                    throw numeric_error("solve_forward: non-finite mode " + std::to_string(m) +
                                        " at t=" + std::to_string(t + dt));
            throw numeric_error("solve_forward: non-finite state at t=" + std::to_string(t + dt));
        }
        if ((i + 1) % store_stride == 0) {
            run.times.push_back(static_cast<double>(i + 1) * dt);
            run.fields.push_back(u);
        }
    }
    return run;
}

struct NoisySample {
    SpectralField field;   // u_f + scaled spectral white noise
    double eps = 0.0;
    std::uint64_t seed = 0;
    double achieved_distance = 0.0;  // = 0.99 * eps by construction
};

namespace detail {
// Deterministic N(0,1) stream: mt19937_64 bits -> uniform ->
// Box-Muller. Avoids std::normal_distribution, whose output is
// implementation-defined, so files stay byte-identical for a given seed.
class GaussianStream {
public:
    explicit GaussianStream(std::uint64_t seed) : rng_(seed) {}
    double operator()() {
        if (have_) {
            have_ = false;
            return spare_;
        }
        double u1 = uniform(), u2 = uniform();
        while (u1 <= 1e-300) u1 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(a);
        have_ = true;
        return r * std::cos(a);
    }

private:
    double uniform() { return static_cast<double>(rng_() >> 11) * 0x1.0p-53; }
    std::mt19937_64 rng_;
    bool have_ = false;
    double spare_ = 0.0;
};
}  // namespace detail

/// Reproducible spectral white perturbation rescaled to L2 norm 0.99*eps.
inline NoisySample add_noise(const SpectralField& u_f, double eps, std::uint64_t seed) {
    if (!(eps >= 0.0)) throw precondition_error("add_noise: eps must be >= 0");
    NoisySample out{u_f, eps, seed, 0.0};
    if (eps == 0.0) return out;
    detail::GaussianStream gauss(seed);
    std::vector<double> xi(u_f.size());
    double norm2 = 0.0;
    for (auto& x : xi) {
        x = gauss();
        norm2 += x * x;
    }
    const double scale = 0.99 * eps / std::sqrt(norm2);
    double dist2 = 0.0;
    for (std::size_t m = 0; m < xi.size(); ++m) {
        const double d = scale * xi[m];
        out.field[m] += d;
        dist2 += d * d;
    }
    out.achieved_distance = std::sqrt(dist2);
    return out;
}

}  // namespace qr
