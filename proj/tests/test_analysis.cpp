#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numbers>
#include <random>

#include "qr/analysis.hpp"

using namespace qr;
using Catch::Approx;

namespace {
BasisHandle dirichlet_pi(int P) {
    BasisSpec s;
    s.domain = DomainKind::interval_dirichlet;
    s.lengths = {std::numbers::pi};
    s.modes_per_axis = P;
    return build_basis(s);
}
}  // namespace

TEST_CASE("error_norms") {
    auto b = dirichlet_pi(4);
    auto u = SpectralField::zero(b);
    u[0] = 0.3;
    u[2] = -0.1;

    SECTION("identical fields") {
        auto [l2, h1] = error_norms(u, u);
        CHECK(l2 == 0.0);
        CHECK(h1 == 0.0);
    }
    SECTION("difference phi_1, mu=1") {
        auto v = u;
        v[0] += 1.0;
        auto [l2, h1] = error_norms(v, u);
        CHECK(l2 == Approx(1.0).epsilon(1e-14));
        CHECK(h1 == Approx(1.0).epsilon(1e-14));
    }
    SECTION("difference phi_2, mu=4") {
        auto v = u;
        v[1] += 1.0;
        auto [l2, h1] = error_norms(v, u);
        CHECK(l2 == Approx(1.0).epsilon(1e-14));
        CHECK(h1 == Approx(2.0).epsilon(1e-14));
    }
}

TEST_CASE("error_bound formula") {
    SECTION("L_F = 0, T = 1 carries the factor e^{1/2}") {
        auto p = gamma_from_epsilon(1e-2, 1.0, 1.0, 1.0);
        // independent reimplementation through logs
        const double lg = std::log(p.gamma);
        const double t = 0.5, W = 2.0;
        const double direct = error_bound(t, p, W, 0.0);
        const double via_logs =
            std::exp(-p.C1 * t * lg) *
            (p.K + std::sqrt(2.0) * std::exp((p.C1 * 1.0 - 1.0) * lg) * W) * std::exp(0.5);
        CHECK(direct == Approx(via_logs).epsilon(1e-12));
    }
    SECTION("at t = T the leading term is eps * e^{T C2}") {
        auto p = gamma_from_epsilon(1e-3, 1.0, 1.0, 1.0);
        const double W = 1.0;
        const double b = error_bound(1.0, p, W, 0.0);
        // K gamma^{-C1 T} = eps under the coupling
        const double lead = p.eps * std::exp(0.5);
        const double second = std::pow(p.gamma, -1.0) * std::sqrt(2.0) *
                              std::pow(p.gamma, 0.0) * W * std::exp(0.5);
        CHECK(b == Approx(lead + second).epsilon(1e-12));
    }
    SECTION("numeric value pinned by direct evaluation") {
        auto p = gamma_from_epsilon(1e-3, 1.0, 1.0, 1.0);  // gamma = 1000, C1T = 1
        // formula: gamma^{-0.5} (1 + sqrt(2) * 1 * gamma^{0} * 1) e^{0.5}
        const double expected = (1.0 + std::sqrt(2.0)) * std::exp(0.5) / std::sqrt(1000.0);
        CHECK(error_bound(0.5, p, 1.0, 0.0) == Approx(expected).epsilon(1e-12));
    }
}

TEST_CASE("tstar_solve") {
    SECTION("omega constant at C1 log gamma = 1") {
        const double t = tstar_solve(std::numbers::e, 1.0, 1e-12);
        CHECK(t == Approx(0.5671432904).margin(1e-9));
        CHECK(t == Approx(0.56714329040978387).margin(1e-11));
    }
    SECTION("monotone decreasing in gamma") {
        double prev = 1.0;
        for (double g : {5.0, 50.0, 500.0, 5e4}) {
            const double t = tstar_solve(g, 1.0);
            CHECK(t < prev);
            prev = t;
        }
    }
    SECTION("root satisfies its defining equation and the cap") {
        for (double g : {2.0, 10.0, 1e4, 1e8}) {
            const double t = tstar_solve(g, 1.0);
            CHECK(t == Approx(std::pow(g, -t)).margin(1e-10));
            CHECK(t < 1.0 / std::sqrt(std::log(g)));
        }
    }
    SECTION("gamma <= 1 rejected") {
        CHECK_THROWS_AS(tstar_solve(1.0, 1.0), precondition_error);
        CHECK_THROWS_AS(tstar_solve(0.5, 1.0), precondition_error);
    }
}

TEST_CASE("gn_alpha") {
    CHECK(gn_alpha(1, 4.0) == Approx(0.75).epsilon(1e-15));
    CHECK(gn_alpha(3, 4.0) == Approx(0.25).epsilon(1e-15));
    CHECK(gn_alpha(2, 4.0) == Approx(0.5).epsilon(1e-15));
    CHECK_THROWS_AS(gn_alpha(1, 2.0), precondition_error);   // r > 2 required
    CHECK_THROWS_AS(gn_alpha(3, 7.0), precondition_error);   // 1/7 < 1/6
}

TEST_CASE("fit_rate") {
    SECTION("exact power laws") {
        std::vector<double> eps = {1e-1, 1e-2, 1e-3, 1e-4, 1e-5};
        std::vector<double> e1(eps), e05(eps.size());
        for (std::size_t i = 0; i < eps.size(); ++i) e05[i] = std::sqrt(eps[i]);
        auto f1 = fit_rate(eps, e1);
        CHECK(f1.slope == Approx(1.0).margin(1e-12));
        CHECK(f1.residual <= 1e-12);
        auto f05 = fit_rate(eps, e05);
        CHECK(f05.slope == Approx(0.5).margin(1e-12));
    }
    SECTION("synthetic noisy regression") {
        std::vector<double> eps = {1e-1, 1e-2, 1e-3, 1e-4, 1e-5};
        // fixed ~1% perturbation pattern
        std::vector<double> wiggle = {1.01, 0.99, 1.008, 0.995, 1.002};
        std::vector<double> err(eps.size());
        for (std::size_t i = 0; i < eps.size(); ++i)
            err[i] = 3.0 * std::pow(eps[i], 0.7) * wiggle[i];
        auto f = fit_rate(eps, err);
        CHECK(f.slope == Approx(0.7).margin(0.02));
        CHECK(f.intercept == Approx(std::log(3.0)).margin(0.05));
    }
    SECTION("rejections") {
        std::vector<double> two = {1.0, 2.0};
        CHECK_THROWS_AS(fit_rate(two, two), precondition_error);
        std::vector<double> eps = {1e-1, 1e-2, 1e-3};
        std::vector<double> bad = {1.0, -1.0, 1.0};
        CHECK_THROWS_AS(fit_rate(eps, bad), precondition_error);
    }
}

namespace {
// v(x,t) = sin(x) t^2 (T-t)^2 on [0,pi], as a spectral trajectory
SpaceTimeField pulse_trajectory(const BasisHandle& b, double T, std::size_t steps) {
    SpaceTimeField v;
    v.basis = b;
    const double amp = std::sqrt(std::numbers::pi / 2.0);  // <sin x, phi_1>
    for (std::size_t i = 0; i <= steps; ++i) {
        const double t = T * static_cast<double>(i) / static_cast<double>(steps);
        auto f = SpectralField::zero(b);
        f[0] = amp * t * t * (T - t) * (T - t);
        v.times.push_back(t);
        v.fields.push_back(f);
    }
    return v;
}
}  // namespace

TEST_CASE("carleman_check") {
    auto b = dirichlet_pi(4);
    const double T = 0.1, eta = 0.05, k = 1.0, a = 1.0;

    SECTION("zero trajectory gives zero on both sides") {
        SpaceTimeField v;
        v.basis = b;
        for (int i = 0; i <= 10; ++i) {
            v.times.push_back(T * i / 10.0);
            v.fields.push_back(SpectralField::zero(b));
        }
        auto sides = carleman_check(v, a, CarlemanConfig{eta, 1.0, k, T});
        CHECK(sides.lhs == 0.0);
        CHECK(sides.rhs_lower == 0.0);
    }
    SECTION("quadrature matches a dense independent evaluation") {
        auto v = pulse_trajectory(b, T, 2000);
        auto sides = carleman_check(v, a, CarlemanConfig{eta, 1.0, k, T});
        // independent oracle: exact time integrands for the single mode,
        // amp^2 normalization; Riemann sum at 20001 points
        const double amp2 = std::numbers::pi / 2.0;
        double lhs = 0.0, tv = 0.0, tg = 0.0;
        const std::size_t N = 20000;
        for (std::size_t i = 0; i <= N; ++i) {
            const double t = T * static_cast<double>(i) / static_cast<double>(N);
            const double poly = t * t * (T - t) * (T - t);
            const double dpoly = 2.0 * t * (T - t) * (T - t) - 2.0 * t * t * (T - t);
            const double w = (i == 0 || i == N) ? 0.5 : 1.0;
            const double absl = T + eta - t;
            const double wt2 = std::pow(absl, -2.0);
            lhs += w * wt2 * amp2 * (-poly - dpoly) * (-poly - dpoly);
            tv += w * wt2 / (absl * absl) * amp2 * poly * poly;
            tg += w * wt2 * amp2 * poly * poly;  // mu_1 = 1
        }
        const double h = T / N;
        lhs *= h; tv *= h; tg *= h;
        CHECK(sides.lhs == Approx(lhs).epsilon(1e-5));
        CHECK(sides.term_v == Approx(tv).epsilon(1e-5));
        CHECK(sides.term_grad == Approx(tg).epsilon(1e-5));
    }
    SECTION("preconditions") {
        auto v = pulse_trajectory(b, T, 100);
        v.fields.front()[0] = 1.0;  // breaks v(0) = 0
        CHECK_THROWS_AS(carleman_check(v, a, CarlemanConfig{eta, 1.0, k, T}), precondition_error);
        auto ok = pulse_trajectory(b, T, 100);
        CHECK_THROWS_AS(carleman_check(ok, a, CarlemanConfig{eta, 200.0, k, T}), std::range_error);
        BasisSpec ns;
        ns.domain = DomainKind::interval_neumann;
        ns.lengths = {std::numbers::pi};
        ns.modes_per_axis = 4;
        auto vb = pulse_trajectory(build_basis(ns), T, 100);
        CHECK_THROWS_AS(carleman_check(vb, a, CarlemanConfig{eta, 1.0, k, T}), precondition_error);
    }
}

TEST_CASE("carleman m-sweep finds a stable window") {
    auto b = dirichlet_pi(4);
    const double T = 0.1, eta = 0.05, k = 1.0, a = 1.0, K = 10.0;
    auto v = pulse_trajectory(b, T, 4000);
    std::vector<double> ms;
    for (double m = 0.25; m <= 64.0; m *= 2.0) ms.push_back(m);
    auto sweep = carleman_m_sweep(v, a, eta, k, T, K, ms);
    INFO("m_star = " << sweep.m_star << ", margin = " << sweep.min_margin
                     << ", D = " << sweep.D_fit);
    REQUIRE(std::isfinite(sweep.m_star));
    CHECK(sweep.min_margin >= 0.0);
    // first inequality holds with the fitted D for every tested m
    for (std::size_t i = 0; i < sweep.m_values.size(); ++i)
        CHECK(sweep.sides[i].lhs >=
              (sweep.m_values[i] / k) * sweep.sides[i].term_v -
                  sweep.D_fit * sweep.sides[i].term_grad - 1e-12);
}

TEST_CASE("gn_check on a synthetic trajectory") {
    auto b = dirichlet_pi(8);
    const double T = 1.0;
    // difference field: two decaying modes
    SpaceTimeField num, ref;
    num.basis = ref.basis = b;
    for (int i = 0; i <= 50; ++i) {
        const double t = T * i / 50.0;
        auto f = SpectralField::zero(b);
        f[0] = 0.3 * std::exp(-t);
        f[1] = 0.1 * std::exp(-2.0 * t);
        num.times.push_back(t);
        num.fields.push_back(f);
        ref.times.push_back(t);
        ref.fields.push_back(SpectralField::zero(b));
    }
    auto chk = gn_check(num, ref, 4.0, 0.25);
    CHECK(chk.alpha == Approx(0.75).epsilon(1e-15));
    CHECK(chk.lhs > 0.0);
    CHECK(chk.rhs_unit > 0.0);
    // fitted constant makes the inequality an equality by construction
    CHECK(chk.lhs == Approx(chk.c_omega * chk.c_omega * chk.rhs_unit).epsilon(1e-12));
    // identical trajectories: all zero
    auto z = gn_check(ref, ref, 4.0, 0.25);
    CHECK(z.lhs == 0.0);
    CHECK(z.c_omega == 0.0);
}

TEST_CASE("error_norms rejects mismatched bases") {
    auto b1 = dirichlet_pi(4);
    auto b2 = dirichlet_pi(8);
    CHECK_THROWS_AS(error_norms(SpectralField::zero(b1), SpectralField::zero(b2)),
                    precondition_error);
}
