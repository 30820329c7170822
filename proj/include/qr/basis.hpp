#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <memory>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "qr/errors.hpp"

namespace qr {

enum class DomainKind { interval_dirichlet, interval_neumann, torus };

inline std::string to_string(DomainKind k) {
    switch (k) {
        case DomainKind::interval_dirichlet: return "interval_dirichlet";
        case DomainKind::interval_neumann: return "interval_neumann";
        case DomainKind::torus: return "torus";
    }
    return "?";
}

/// Description of a tensor-product Laplacian eigenbasis.
/// `modes_per_axis` is the per-axis mode count P; the basis holds P^dim
/// global modes sorted by eigenvalue. `quad_points_per_axis` defaults to 2P,
/// the minimum for which the discrete transforms are orthonormal to rounding.
struct BasisSpec {
    DomainKind domain = DomainKind::interval_dirichlet;
    std::vector<double> lengths = {std::numbers::pi};
    int dim = 1;
    int modes_per_axis = 8;
    int quad_points_per_axis = 0;  // 0 -> 2 * modes_per_axis
};

class Basis;
using BasisHandle = std::shared_ptr<const Basis>;

/// Immutable eigenbasis of -Laplace on an interval (Dirichlet/Neumann) or a
/// d-torus, with the quadrature rule used for nodal<->spectral conversion.
///
/// Per-axis systems:
///   Dirichlet:  sqrt(2/L) sin((j+1) pi x / L),     mu = ((j+1) pi / L)^2
///   Neumann:    sqrt(1/L), sqrt(2/L) cos(j pi x/L), mu = (j pi / L)^2
///   torus:      sqrt(1/L), sqrt(2/L) cos/sin(2 pi k x / L), mu = (2 pi k / L)^2
/// Interval kinds sample at midpoints (i+1/2)h; the torus at i*h (periodic
/// trapezoid). Both make the Gram matrix of the first P modes exactly the
/// identity up to rounding for n >= 2P nodes per axis.
class Basis {
public:
    explicit Basis(const BasisSpec& spec) : spec_(spec) {
        validate(spec_);
        if (spec_.quad_points_per_axis == 0)
            spec_.quad_points_per_axis = 2 * spec_.modes_per_axis;
        if (spec_.quad_points_per_axis < 2 * spec_.modes_per_axis)
            throw precondition_error("basis: quadrature_points per axis must be >= 2P");
        build_axes();
        build_global_modes();
    }

    const BasisSpec& spec() const { return spec_; }
    DomainKind kind() const { return spec_.domain; }
    int dim() const { return spec_.dim; }
    int modes_per_axis() const { return spec_.modes_per_axis; }
    int nodes_per_axis() const { return spec_.quad_points_per_axis; }

    std::size_t mode_count() const { return mode_count_; }
    std::size_t node_count() const { return node_count_; }

    /// Eigenvalues sorted nondecreasing, one per global mode.
    std::span<const double> eigenvalues() const { return {mu_.data(), mu_.size()}; }
    double eigenvalue(std::size_t m) const { return mu_[m]; }

    /// Global mode index of the per-axis multi-index (lexicographic order in
    /// the file format); inverse of `lex_index`.
    std::size_t sorted_index(std::size_t lex) const { return lex_to_sorted_[lex]; }
    std::size_t lex_index(std::size_t sorted) const { return sorted_to_lex_[sorted]; }

    double quad_weight() const { return quad_weight_; }

    /// Coordinates of flattened node i (row-major, axis 0 slowest).
    void node_coords(std::size_t i, std::span<double> out) const {
        for (int a = dim() - 1; a >= 0; --a) {
            out[static_cast<std::size_t>(a)] = axis_nodes_[static_cast<std::size_t>(a)]
                [i % static_cast<std::size_t>(nodes_per_axis())];
            i /= static_cast<std::size_t>(nodes_per_axis());
        }
    }

    /// Value of global mode m at flattened node i.
    double mode_value(std::size_t m, std::size_t i) const {
        return tensor_eval(sorted_to_lex_[m], i, -1);
    }

    /// Derivative along `axis` of global mode m at flattened node i.
    double mode_derivative(std::size_t m, std::size_t i, int axis) const {
        return tensor_eval(sorted_to_lex_[m], i, axis);
    }

    bool compatible(const Basis& other) const {
        return spec_.domain == other.spec_.domain && spec_.dim == other.spec_.dim &&
               spec_.modes_per_axis == other.spec_.modes_per_axis &&
               spec_.quad_points_per_axis == other.spec_.quad_points_per_axis &&
               spec_.lengths == other.spec_.lengths;
    }

private:
    static void validate(const BasisSpec& s) {
        if (s.dim < 1 || s.dim > 3) throw precondition_error("basis: dim must be 1..3");
        if (s.modes_per_axis < 1) throw precondition_error("basis: P must be >= 1");
        if (s.lengths.size() != static_cast<std::size_t>(s.dim))
            throw precondition_error("basis: need one length per axis");
        for (double L : s.lengths)
            if (!(L > 0.0)) throw precondition_error("basis: lengths must be positive");
    }

    void build_axes() {
        const int P = spec_.modes_per_axis;
        const int n = spec_.quad_points_per_axis;
        const int d = spec_.dim;
        axis_nodes_.resize(static_cast<std::size_t>(d));
        axis_mu_.resize(static_cast<std::size_t>(d));
        axis_val_.resize(static_cast<std::size_t>(d));
        axis_der_.resize(static_cast<std::size_t>(d));
        quad_weight_ = 1.0;
        for (int a = 0; a < d; ++a) {
            const double L = spec_.lengths[static_cast<std::size_t>(a)];
            const double h = L / n;
            quad_weight_ *= h;
            auto& nodes = axis_nodes_[static_cast<std::size_t>(a)];
            nodes.resize(static_cast<std::size_t>(n));
            const bool periodic = spec_.domain == DomainKind::torus;
            for (int i = 0; i < n; ++i)
                nodes[static_cast<std::size_t>(i)] = periodic ? i * h : (i + 0.5) * h;

            auto& mu = axis_mu_[static_cast<std::size_t>(a)];
            auto& val = axis_val_[static_cast<std::size_t>(a)];
            auto& der = axis_der_[static_cast<std::size_t>(a)];
            mu.resize(static_cast<std::size_t>(P));
            val.assign(static_cast<std::size_t>(P) * n, 0.0);
            der.assign(static_cast<std::size_t>(P) * n, 0.0);
            const double c1 = std::sqrt(1.0 / L);
            const double c2 = std::sqrt(2.0 / L);
            for (int j = 0; j < P; ++j) {
                double omega = 0.0;  // spatial frequency of the mode
                enum { kConst, kSin, kCos } shape = kConst;
                switch (spec_.domain) {
                    case DomainKind::interval_dirichlet:
                        omega = (j + 1) * std::numbers::pi / L;
                        shape = kSin;
                        break;
                    case DomainKind::interval_neumann:
                        omega = j * std::numbers::pi / L;
                        shape = (j == 0) ? kConst : kCos;
                        break;
                    case DomainKind::torus: {
                        const int k = (j + 1) / 2;
                        omega = 2.0 * std::numbers::pi * k / L;
                        shape = (j == 0) ? kConst : ((j % 2 == 1) ? kCos : kSin);
                        break;
                    }
                }
                mu[static_cast<std::size_t>(j)] = omega * omega;
                for (int i = 0; i < n; ++i) {
                    const double x = nodes[static_cast<std::size_t>(i)];
                    double v = 0.0, dv = 0.0;
                    switch (shape) {
                        case kConst: v = c1; dv = 0.0; break;
                        case kSin:   v = c2 * std::sin(omega * x); dv = c2 * omega * std::cos(omega * x); break;
                        case kCos:   v = c2 * std::cos(omega * x); dv = -c2 * omega * std::sin(omega * x); break;
                    }
                    val[static_cast<std::size_t>(j) * n + i] = v;
                    der[static_cast<std::size_t>(j) * n + i] = dv;
                }
            }
        }
    }

    void build_global_modes() {
        const int P = spec_.modes_per_axis;
        const int d = spec_.dim;
        mode_count_ = 1;
        node_count_ = 1;
        for (int a = 0; a < d; ++a) {
            mode_count_ *= static_cast<std::size_t>(P);
            node_count_ *= static_cast<std::size_t>(spec_.quad_points_per_axis);
        }
        std::vector<double> lex_mu(mode_count_);
        for (std::size_t lex = 0; lex < mode_count_; ++lex) {
            std::size_t rest = lex;
            double m = 0.0;
            for (int a = d - 1; a >= 0; --a) {
                m += axis_mu_[static_cast<std::size_t>(a)][rest % static_cast<std::size_t>(P)];
                rest /= static_cast<std::size_t>(P);
            }
            lex_mu[lex] = m;
        }
        sorted_to_lex_.resize(mode_count_);
        for (std::size_t i = 0; i < mode_count_; ++i) sorted_to_lex_[i] = i;
        std::stable_sort(sorted_to_lex_.begin(), sorted_to_lex_.end(),
                         [&](std::size_t a, std::size_t b) { return lex_mu[a] < lex_mu[b]; });
        mu_.resize(mode_count_);
        lex_to_sorted_.resize(mode_count_);
        for (std::size_t i = 0; i < mode_count_; ++i) {
            mu_[i] = lex_mu[sorted_to_lex_[i]];
            lex_to_sorted_[sorted_to_lex_[i]] = i;
        }
    }

    double tensor_eval(std::size_t lex, std::size_t node, int deriv_axis) const {
        const int d = spec_.dim;
        const auto P = static_cast<std::size_t>(spec_.modes_per_axis);
        const auto n = static_cast<std::size_t>(spec_.quad_points_per_axis);
        double v = 1.0;
        for (int a = d - 1; a >= 0; --a) {
            const std::size_t j = lex % P;
            const std::size_t i = node % n;
            const auto& table = (a == deriv_axis) ? axis_der_[static_cast<std::size_t>(a)]
                                                  : axis_val_[static_cast<std::size_t>(a)];
            v *= table[j * n + i];
            lex /= P;
            node /= n;
        }
        return v;
    }

    BasisSpec spec_;
    std::size_t mode_count_ = 0;
    std::size_t node_count_ = 0;
    double quad_weight_ = 1.0;
    std::vector<std::vector<double>> axis_nodes_;
    std::vector<std::vector<double>> axis_mu_;
    std::vector<std::vector<double>> axis_val_;  // per axis: P x n, row-major
    std::vector<std::vector<double>> axis_der_;
    std::vector<double> mu_;                    // sorted nondecreasing
    std::vector<std::size_t> sorted_to_lex_;
    std::vector<std::size_t> lex_to_sorted_;
};

inline BasisHandle build_basis(const BasisSpec& spec) {
    return std::make_shared<const Basis>(spec);
}

/// Coefficient vector in the (eigenvalue-sorted) global mode order.
class SpectralField {
public:
    SpectralField(BasisHandle basis, std::vector<double> coefficients)
        : basis_(std::move(basis)), coef_(std::move(coefficients)) {
        if (!basis_) throw precondition_error("SpectralField: null basis");
        if (coef_.size() != basis_->mode_count())
            throw precondition_error("SpectralField: coefficient count does not match basis");
    }
    static SpectralField zero(BasisHandle basis) {
        std::vector<double> c(basis->mode_count(), 0.0);
        return SpectralField(std::move(basis), std::move(c));
    }

    const BasisHandle& basis() const { return basis_; }
    std::size_t size() const { return coef_.size(); }
    double operator[](std::size_t m) const { return coef_[m]; }
    double& operator[](std::size_t m) { return coef_[m]; }
    std::span<const double> coefficients() const { return {coef_.data(), coef_.size()}; }
    std::vector<double>& mutable_coefficients() { return coef_; }

    double l2_norm() const {
        double s = 0.0;
        for (double c : coef_) s += c * c;
        return std::sqrt(s);
    }
    double h1_seminorm() const {
        double s = 0.0;
        for (std::size_t m = 0; m < coef_.size(); ++m)
            s += basis_->eigenvalue(m) * coef_[m] * coef_[m];
        return std::sqrt(s);
    }
    bool finite() const {
        for (double c : coef_)
            if (!std::isfinite(c)) return false;
        return true;
    }

private:
    BasisHandle basis_;
    std::vector<double> coef_;
};

inline void require_same_basis(const SpectralField& a, const SpectralField& b, const char* where) {
    if (a.basis().get() != b.basis().get() && !a.basis()->compatible(*b.basis()))
        throw precondition_error(std::string(where) + ": basis mismatch");
}

/// Nodal values on the tensor-product quadrature grid. Rejects NaN/Inf.
class GridField {
public:
    GridField(BasisHandle basis, std::vector<double> values)
        : basis_(std::move(basis)), values_(std::move(values)) {
        if (!basis_) throw precondition_error("GridField: null basis");
        if (values_.size() != basis_->node_count())
            throw precondition_error("GridField: node count does not match basis");
        for (double v : values_)
            if (!std::isfinite(v)) throw precondition_error("GridField: non-finite nodal value");
    }

    const BasisHandle& basis() const { return basis_; }
    std::size_t size() const { return values_.size(); }
    double operator[](std::size_t i) const { return values_[i]; }
    std::span<const double> values() const { return {values_.data(), values_.size()}; }

    double l2_norm() const {
        double s = 0.0;
        for (double v : values_) s += v * v;
        return std::sqrt(s * basis_->quad_weight());
    }
    double lr_norm(double r) const {
        double s = 0.0;
        for (double v : values_) s += std::pow(std::abs(v), r);
        return std::pow(s * basis_->quad_weight(), 1.0 / r);
    }
    double max_abs() const {
        double m = 0.0;
        for (double v : values_) m = std::max(m, std::abs(v));
        return m;
    }

private:
    BasisHandle basis_;
    std::vector<double> values_;
};

inline GridField to_grid(const SpectralField& u) {
    const Basis& b = *u.basis();
    std::vector<double> vals(b.node_count(), 0.0);
    for (std::size_t m = 0; m < b.mode_count(); ++m) {
        const double c = u[m];
        if (c == 0.0) continue;
        for (std::size_t i = 0; i < b.node_count(); ++i)
            vals[i] += c * b.mode_value(m, i);
    }
    return GridField(u.basis(), std::move(vals));
}

inline SpectralField to_spectral(const GridField& g) {
    const Basis& b = *g.basis();
    std::vector<double> coef(b.mode_count(), 0.0);
    const double w = b.quad_weight();
    for (std::size_t m = 0; m < b.mode_count(); ++m) {
        double s = 0.0;
        for (std::size_t i = 0; i < b.node_count(); ++i)
            s += g[i] * b.mode_value(m, i);
        coef[m] = s * w;
    }
    return SpectralField(g.basis(), std::move(coef));
}

/// sqrt(sum_p e^{2 alpha mu_p} u_p^2). Equals the L2 norm at alpha = 0.
/// Throws std::range_error instead of returning Inf when a weighted term
/// cannot be represented (alpha*mu_p > 700 with a nonzero coefficient).
inline double gevrey_norm(const SpectralField& u, double alpha) {
    if (!(alpha >= 0.0)) throw precondition_error("gevrey_norm: alpha must be >= 0");
    const Basis& b = *u.basis();
    double scale = 0.0, sumsq = 1.0;  // scaled accumulation of sqrt(sum t_p^2)
    bool any = false;
    for (std::size_t m = 0; m < b.mode_count(); ++m) {
        const double c = u[m];
        if (c == 0.0) continue;
        const double z = alpha * b.eigenvalue(m);
        if (z > 700.0)
            throw std::range_error("gevrey_norm: exponent alpha*mu exceeds 700 on a nonzero mode");
        const double t = std::exp(z) * std::abs(c);
        if (!std::isfinite(t))
            throw std::range_error("gevrey_norm: weighted coefficient overflows");
        if (!any) {
            scale = t;
            sumsq = 1.0;
            any = true;
        } else if (t > scale) {
            const double r = scale / t;
            sumsq = sumsq * r * r + 1.0;
            scale = t;
        } else if (t > 0.0) {
            const double r = t / scale;
            sumsq += r * r;
        }
    }
    if (!any) return 0.0;
    const double out = scale * std::sqrt(sumsq);
    if (!std::isfinite(out)) throw std::range_error("gevrey_norm: norm overflows");
    return out;
}

/// Grid estimate of the W^{1,inf} norm: max over nodes of |u| and |du/dx_a|
/// (spectral differentiation).
inline double w1inf_estimate(const SpectralField& u) {
    const Basis& b = *u.basis();
    double m = 0.0;
    for (std::size_t i = 0; i < b.node_count(); ++i) {
        double v = 0.0;
        for (std::size_t p = 0; p < b.mode_count(); ++p)
            if (u[p] != 0.0) v += u[p] * b.mode_value(p, i);
        m = std::max(m, std::abs(v));
        for (int a = 0; a < b.dim(); ++a) {
            double dv = 0.0;
            for (std::size_t p = 0; p < b.mode_count(); ++p)
                if (u[p] != 0.0) dv += u[p] * b.mode_derivative(p, i, a);
            m = std::max(m, std::abs(dv));
        }
    }
    return m;
}

/// n-th largest values of exp(-alpha * ||k||_2^q) over the integer lattice
/// Z^d, nonincreasing; a_1 = 1 (k = 0). The enumeration box grows until every
/// lattice point outside it provably carries a smaller weight than the
/// n_max-th value found.
inline std::vector<double> approximation_numbers(double alpha, double q_exp, int d, int n_max,
                                                 int box_radius_hint = 0,
                                                 std::size_t budget = 20'000'000) {
    if (!(alpha > 0.0) || !(q_exp > 0.0)) throw precondition_error("approximation_numbers: alpha, q must be > 0");
    if (d < 1 || d > 3) throw precondition_error("approximation_numbers: d must be 1..3");
    if (n_max < 1) throw precondition_error("approximation_numbers: n_max must be >= 1");

    int radius = std::max(box_radius_hint, 2);
    for (;;) {
        const double side = 2.0 * radius + 1.0;
        double count = 1.0;
        for (int a = 0; a < d; ++a) count *= side;
        if (count > static_cast<double>(budget))
            throw precondition_error("approximation_numbers: enumeration budget exceeded");
        if (count < static_cast<double>(n_max)) {
            radius *= 2;
            continue;
        }
        std::vector<double> values;
        values.reserve(static_cast<std::size_t>(count));
        std::vector<int> k(static_cast<std::size_t>(d), -radius);
        for (;;) {
            double nrm2 = 0.0;
            for (int a = 0; a < d; ++a) nrm2 += static_cast<double>(k[static_cast<std::size_t>(a)]) * k[static_cast<std::size_t>(a)];
            values.push_back(std::exp(-alpha * std::pow(std::sqrt(nrm2), q_exp)));
            int a = d - 1;
            while (a >= 0 && ++k[static_cast<std::size_t>(a)] > radius) {
                k[static_cast<std::size_t>(a)] = -radius;
                --a;
            }
            if (a < 0) break;
        }
        std::sort(values.begin(), values.end(), std::greater<double>());
        values.resize(static_cast<std::size_t>(n_max));
        // Every point outside the box has ||k||_2 > radius, so its weight is
        // below the bound; once that bound cannot displace the n_max-th value
        // the result is final.
        const double outside = std::exp(-alpha * std::pow(static_cast<double>(radius), q_exp));
        if (outside < values.back() || outside < std::numeric_limits<double>::denorm_min())
            return values;
        radius *= 2;
    }
}

}  // namespace qr
