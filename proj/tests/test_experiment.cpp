#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

#include "qr/experiment.hpp"

using namespace qr;
using Catch::Approx;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
    auto p = fs::temp_directory_path() / ("qr_test_" + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string read_file(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    REQUIRE(is.good());
    return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

const char* kHeatConfig = R"({
  "problem": {"domain": "interval_dirichlet", "lengths": [3.141592653589793],
              "modes": 8, "a": 1.0, "M_bar": 1.5, "T": 1.0,
              "source": {"kind": "zero"}},
  "regularization": {"K": 1.0, "C1": 1.0, "eps": [0.001]},
  "solver": {"dt": 0.0005, "store_stride": 100},
  "outputs": {"times": [0.25, 0.5, 0.75], "r": 4.0, "seed": 7},
  "initial": {"modes": [{"index": 1, "amplitude": 1.0}]},
  "reference": {"kind": "heat_modes", "modes": [{"index": 1, "amplitude": 1.0}]}
})";

}  // namespace

TEST_CASE("config parsing") {
    SECTION("valid config round-trips its fields") {
        auto c = parse_config_text(kHeatConfig);
        CHECK(c.basis_spec.modes_per_axis == 8);
        CHECK(c.a == 1.0);
        CHECK(c.eps.size() == 1);
        CHECK(c.effective_C1() == 1.0);
        CHECK(c.hash != 0);
    }
    SECTION("missing key is named") {
        const char* bad = R"({"problem": {"modes": 8, "a": 1.0, "M_bar": 1.5}})";
        try {
            parse_config_text(bad);
            FAIL("expected config_error");
        } catch (const config_error& e) {
            CHECK(std::string(e.what()).find("\"T\"") != std::string::npos);
        }
    }
    SECTION("syntax error reports the line") {
        const char* bad = "{\n  \"problem\": {\n  \"modes\": oops\n}}";
        try {
            parse_config_text(bad);
            FAIL("expected config_error");
        } catch (const config_error& e) {
            CHECK(std::string(e.what()).find("line 3") != std::string::npos);
        }
    }
    SECTION("eps list must strictly decrease") {
        std::string bad(kHeatConfig);
        auto pos = bad.find("[0.001]");
        bad.replace(pos, 7, "[0.001, 0.01]");
        CHECK_THROWS_AS(parse_config_text(bad), config_error);
    }
    SECTION("C1*T > 1 rejected") {
        std::string bad(kHeatConfig);
        auto pos = bad.find("\"C1\": 1.0");
        bad.replace(pos, 9, "\"C1\": 2.0");
        CHECK_THROWS_AS(parse_config_text(bad), config_error);
    }
}

TEST_CASE("field file round trip") {
    auto dir = temp_dir("fieldio");
    BasisSpec bs;
    bs.domain = DomainKind::interval_dirichlet;
    bs.lengths = {std::numbers::pi};
    bs.modes_per_axis = 16;
    auto b = build_basis(bs);
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    auto u = SpectralField::zero(b);
    for (std::size_t m = 0; m < u.size(); ++m) u[m] = dist(rng);
    write_field_file(dir / "f.qrf", u);
    auto back = read_field_file(dir / "f.qrf", b);
    for (std::size_t m = 0; m < u.size(); ++m) CHECK(back[m] == u[m]);
    CHECK(fs::exists(dir / "f.qrf.txt"));

    BasisSpec other = bs;
    other.modes_per_axis = 8;
    CHECK_THROWS_AS(read_field_file(dir / "f.qrf", build_basis(other)), config_error);
}

TEST_CASE("run_forward writes the exact heat terminal data") {
    auto dir = temp_dir("forward");
    auto c = parse_config_text(kHeatConfig);
    auto path = run_forward(c, dir);
    auto b = build_basis(c.basis_spec);
    auto uf = read_field_file(path, b);
    CHECK(uf[0] == Approx(std::exp(-1.0)).epsilon(1e-12));
    for (std::size_t m = 1; m < uf.size(); ++m) CHECK(uf[m] == 0.0);
    CHECK(fs::exists(dir / "forward_meta.json"));
}

TEST_CASE("run_invert matches the closed-form error") {
    auto dir = temp_dir("invert");
    auto c = parse_config_text(kHeatConfig);
    auto data = run_forward(c, dir / "fwd");
    auto out = run_invert(c, data, dir / "inv");
    REQUIRE(out.rows.size() == 3);

    // independent closed-form oracle, modal problem with a single mode
    auto b = build_basis(c.basis_spec);
    auto uf = read_field_file(data, b);
    auto noisy = add_noise(uf, c.eps[0], c.seed);
    auto params = gamma_from_epsilon(c.eps[0], c.K, 1.0, c.T, c.M_bar);
    for (const auto& rec : out.rows) {
        double e2 = 0.0;
        for (std::size_t m = 0; m < uf.size(); ++m) {
            const double mu = b->eigenvalue(m);
            const double q = filter_coefficient_q(mu, params.gamma, c.M_bar, c.T);
            const double lambda = -c.a * mu + q;
            const double numv = std::exp(lambda * (rec.t - c.T)) * noisy.field[m];
            const double refv = (m == 0) ? std::exp(-c.a * mu * rec.t) : 0.0;  // u = e^{-t} sin x
            const double d = numv - refv;
            e2 += d * d;
        }
        CHECK(rec.err_l2 == Approx(std::sqrt(e2)).margin(1e-10));
        CHECK(rec.err_l2 <= rec.bound_rhs);
        CHECK(std::isfinite(rec.t_eps));
    }
    CHECK(out.trajectory_files.size() == 3);
    for (const auto& p : out.trajectory_files) CHECK(fs::exists(p));
}

TEST_CASE("run_invert refuses eps = 0") {
    auto dir = temp_dir("invert_eps0");
    auto c = parse_config_text(kHeatConfig);
    auto data = run_forward(c, dir / "fwd");
    std::string txt(kHeatConfig);
    auto pos = txt.find("[0.001]");
    txt.replace(pos, 7, "[0.0]");
    auto c0 = parse_config_text(txt);
    CHECK_THROWS_AS(run_invert(c0, data, dir / "inv"), precondition_error);
}

TEST_CASE("run_sweep emits rows, rates and tzero tables") {
    auto dir = temp_dir("sweep");
    std::string txt(kHeatConfig);
    auto pos = txt.find("[0.001]");
    txt.replace(pos, 7, "[0.1, 0.01, 0.001, 0.0001, 0.00001]");
    auto c = parse_config_text(txt);
    auto out = run_sweep(c, std::nullopt, dir, 2);
    CHECK(out.rows.size() == 5 * 3);
    CHECK(out.rates.size() == 3);
    CHECK(out.tzero.size() == 5);
    CHECK(out.amplification_violations == 0);

    // slopes recomputed from the emitted rows
    for (std::size_t ti = 0; ti < 3; ++ti) {
        std::vector<double> es, errs;
        for (std::size_t ei = 0; ei < 5; ++ei) {
            es.push_back(out.rows[ei * 3 + ti].eps);
            errs.push_back(out.rows[ei * 3 + ti].err_l2);
        }
        auto fit = fit_rate(es, errs);
        CHECK(out.rates[ti][1] == Approx(fit.slope).margin(1e-12));
    }
    // every measured error sits below its bound
    for (const auto& r : out.rows) CHECK(r.err_l2 <= r.bound_rhs);
    CHECK(fs::exists(out.results_csv));
    CHECK(fs::exists(out.rates_csv));
    CHECK(fs::exists(out.tzero_csv));

    // results.csv has the fixed header and one line per row
    auto text = read_file(out.results_csv);
    CHECK(text.rfind("eps,gamma,t,err_l2,err_h1tail,err_lr,bound,t_eps\n", 0) == 0);
    CHECK(std::count(text.begin(), text.end(), '\n') == 16);
}

TEST_CASE("reruns with the same seed are byte-identical") {
    auto dir1 = temp_dir("det1");
    auto dir2 = temp_dir("det2");
    auto c = parse_config_text(kHeatConfig);
    auto d1 = run_forward(c, dir1 / "fwd");
    auto d2 = run_forward(c, dir2 / "fwd");
    CHECK(read_file(d1) == read_file(d2));
    auto i1 = run_invert(c, d1, dir1 / "inv");
    auto i2 = run_invert(c, d2, dir2 / "inv");
    CHECK(read_file(i1.results_csv) == read_file(i2.results_csv));
    REQUIRE(i1.trajectory_files.size() == i2.trajectory_files.size());
    for (std::size_t k = 0; k < i1.trajectory_files.size(); ++k)
        CHECK(read_file(i1.trajectory_files[k]) == read_file(i2.trajectory_files[k]));
    // a different seed changes the bytes
    std::string txt(kHeatConfig);
    auto pos = txt.find("\"seed\": 7");
    txt.replace(pos, 9, "\"seed\": 8");
    auto c8 = parse_config_text(txt);
    auto i3 = run_invert(c8, d1, dir1 / "inv8");
    CHECK(read_file(i1.results_csv) != read_file(i3.results_csv));
}

TEST_CASE("sweep is deterministic across thread counts") {
    std::string txt(kHeatConfig);
    auto pos = txt.find("[0.001]");
    txt.replace(pos, 7, "[0.1, 0.01, 0.001]");
    auto c = parse_config_text(txt);
    auto dir1 = temp_dir("thr1");
    auto dir4 = temp_dir("thr4");
    auto o1 = run_sweep(c, std::nullopt, dir1, 1);
    auto o4 = run_sweep(c, std::nullopt, dir4, 4);
    CHECK(read_file(o1.results_csv) == read_file(o4.results_csv));
    CHECK(read_file(o1.tzero_csv) == read_file(o4.tzero_csv));
}

TEST_CASE("run_tstar pins the omega constant") {
    auto dir = temp_dir("tstar");
    std::string txt(kHeatConfig);
    txt.insert(txt.rfind('}'), ", \"tstar\": {\"gammas\": [2.718281828459045]}");
    auto c = parse_config_text(txt);
    auto path = run_tstar(c, dir);
    auto text = read_file(path);
    CHECK(text.find("0.5671432904") != std::string::npos);
}

TEST_CASE("run_approx emits a_1 = 1 first") {
    auto dir = temp_dir("approx");
    std::string txt(kHeatConfig);
    txt.insert(txt.rfind('}'), ", \"approx\": {\"alpha\": 1.0, \"q\": 2.0, \"d\": 1, \"n_max\": 5}");
    auto c = parse_config_text(txt);
    auto path = run_approx(c, dir);
    auto text = read_file(path);
    CHECK(text.rfind("n,a_n\n1,1\n", 0) == 0);
}

TEST_CASE("run_carleman records the sweep summary") {
    auto dir = temp_dir("carleman");
    std::string txt(kHeatConfig);
    txt.insert(txt.rfind('}'),
               ", \"carleman\": {\"eta\": 0.05, \"k\": 1.0, \"K\": 10.0, \"T\": 0.1,"
               " \"steps\": 1000, \"mode\": 1, \"amplitude\": 1.0,"
               " \"m_values\": [0.25, 0.5, 1, 2, 4, 8]}");
    auto c = parse_config_text(txt);
    auto out = run_carleman(c, dir);
    CHECK(std::isfinite(out.sweep.m_star));
    CHECK(out.sweep.min_margin >= 0.0);
    auto text = read_file(out.csv);
    CHECK(text.rfind("m,lhs,", 0) == 0);
}

TEST_CASE("eps = K runs but is flagged degenerate") {
    auto dir = temp_dir("degenerate");
    std::string txt(kHeatConfig);
    auto pos = txt.find("[0.001]");
    txt.replace(pos, 7, "[1.0]");  // eps = K = 1 -> gamma = 1
    auto c = parse_config_text(txt);
    auto data = run_forward(c, dir / "fwd");
    auto out = run_invert(c, data, dir / "inv");
    CHECK(out.detail.params.degenerate);
    CHECK(out.detail.params.gamma == 1.0);
    CHECK_FALSE(std::isfinite(out.detail.t_eps));  // no tstar without filtering
    auto meta = read_file(dir / "inv" / "invert_meta.json");
    CHECK(meta.find("\"degenerate\": true") != std::string::npos);
}

TEST_CASE("run metadata embeds the resolved config and its hash") {
    auto dir = temp_dir("meta");
    auto c = parse_config_text(kHeatConfig);
    run_forward(c, dir);
    auto meta = nlohmann::json::parse(read_file(dir / "forward_meta.json"));
    REQUIRE(meta.contains("config"));
    CHECK(meta["config"] == c.resolved);
    char hex[20];
    std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(c.hash));
    CHECK(meta["config_hash"].get<std::string>() == hex);
    CHECK(meta.contains("wall_ms"));
    CHECK(meta["version"].get<std::string>() == std::string(kVersion));
}
