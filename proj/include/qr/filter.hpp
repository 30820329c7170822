#pragma once

#include <cmath>
#include <vector>

#include "qr/basis.hpp"
#include "qr/errors.hpp"

namespace qr {

/// Regularization parameters tying the filter magnitude gamma to the noise
/// level through gamma^{C1 T} * eps = K. gamma = 1/beta; gamma >= 1 always;
/// gamma = 1 (eps = K) carries no filtering and is flagged degenerate.
struct FilterParams {
    double eps = 0.0;     // noise level (0 when gamma was chosen directly)
    double K = 1.0;       // coupling constant
    double C1 = 1.0;      // stabilization constant, C1*T <= 1
    double T = 1.0;       // horizon
    double M_bar = 1.0;   // diffusion upper bound
    double gamma = 1.0;   // filter magnitude >= 1
    double beta = 1.0;    // regularization parameter = 1/gamma
    bool degenerate = false;

    double log_gamma() const { return std::log(gamma); }
};

inline FilterParams gamma_from_epsilon(double eps, double K, double C1, double T,
                                       double M_bar = 1.0) {
    if (!(eps > 0.0) || !(K > 0.0) || !(C1 > 0.0) || !(T > 0.0))
        throw precondition_error("gamma_from_epsilon: eps, K, C1, T must be positive");
    if (C1 * T > 1.0 + 1e-12)
        throw precondition_error("gamma_from_epsilon: C1*T must be <= 1");
    if (eps > K)
        throw precondition_error("gamma_from_epsilon: eps > K would give gamma < 1");
    FilterParams p;
    p.eps = eps;
    p.K = K;
    p.C1 = C1;
    p.T = T;
    p.M_bar = M_bar;
    p.gamma = std::pow(K / eps, 1.0 / (C1 * T));
    p.beta = 1.0 / p.gamma;
    p.degenerate = (eps == K);  // gamma = 1, beta = 1: no filtering
    return p;
}

/// FilterParams with gamma given directly (no noise coupling).
inline FilterParams params_from_gamma(double gamma, double C1, double T, double M_bar) {
    if (!(gamma >= 1.0)) throw precondition_error("params_from_gamma: gamma must be >= 1");
    if (!(C1 > 0.0) || !(T > 0.0) || !(M_bar > 0.0))
        throw precondition_error("params_from_gamma: C1, T, M_bar must be positive");
    if (C1 * T > 1.0 + 1e-12) throw precondition_error("params_from_gamma: C1*T must be <= 1");
    FilterParams p;
    p.C1 = C1;
    p.T = T;
    p.M_bar = M_bar;
    p.gamma = gamma;
    p.beta = 1.0 / gamma;
    p.degenerate = (gamma == 1.0);
    return p;
}

/// Stabilized multiplier s(mu) = q(mu) - M_bar*mu. Evaluated directly as
/// (1/T) log(e^{-z} + e^{-log gamma}) with z = M_bar*T*mu, which avoids both
/// overflow at large mu and the cancellation that computing q first and
/// subtracting would cause.
inline double filter_coefficient_s(double mu, double gamma, double M_bar, double T) {
    const double z = M_bar * T * mu;
    const double lg = std::log(gamma);
    const double w = z - lg;
    const double logsum = (w >= 0.0) ? -lg + std::log1p(std::exp(-w))
                                     : -z + std::log1p(std::exp(w));
    return logsum / T;
}

/// Perturbing multiplier q(mu) = (1/T) log(1 + e^{M T mu} / gamma), via the
/// overflow-safe s(mu) + M_bar*mu.
inline double filter_coefficient_q(double mu, double gamma, double M_bar, double T) {
    return filter_coefficient_s(mu, gamma, M_bar, T) + M_bar * mu;
}

/// Diagonal modal multipliers of the perturbing operator Q (q_p) and the
/// stabilized operator P = M_bar * Laplace + Q (s_p = q_p - M_bar * mu_p).
struct ModalFilter {
    BasisHandle basis;
    FilterParams params;
    std::vector<double> q;  // per sorted mode, all > 0
    std::vector<double> s;  // q_p - M_bar * mu_p, |s_p| <= log(gamma)/T for gamma >= 2
};

inline ModalFilter build_modal_filter(const BasisHandle& basis, const FilterParams& params) {
    ModalFilter f;
    f.basis = basis;
    f.params = params;
    const std::size_t n = basis->mode_count();
    f.q.resize(n);
    f.s.resize(n);
    const double cap = std::log1p(1.0 / params.gamma) / params.T;
    for (std::size_t m = 0; m < n; ++m) {
        const double mu = basis->eigenvalue(m);
        f.s[m] = filter_coefficient_s(mu, params.gamma, params.M_bar, params.T);
        f.q[m] = f.s[m] + params.M_bar * mu;
        if (!(f.q[m] > 0.0) || f.s[m] > cap * (1.0 + 1e-12) + 1e-300)
            throw numeric_error("build_modal_filter: multiplier bound violated at mode " +
                                std::to_string(m));
    }
    return f;
}

inline SpectralField apply_Q(const SpectralField& u, const ModalFilter& f) {
    if (u.basis().get() != f.basis.get() && !u.basis()->compatible(*f.basis))
        throw precondition_error("apply_Q: basis mismatch");
    auto out = u;
    for (std::size_t m = 0; m < out.size(); ++m) out[m] *= f.q[m];
    return out;
}

inline SpectralField apply_P(const SpectralField& u, const ModalFilter& f) {
    if (u.basis().get() != f.basis.get() && !u.basis()->compatible(*f.basis))
        throw precondition_error("apply_P: basis mismatch");
    auto out = u;
    for (std::size_t m = 0; m < out.size(); ++m) out[m] *= f.s[m];
    return out;
}

}  // namespace qr
