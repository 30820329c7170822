#pragma once

#include <array>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "qr/analysis.hpp"
#include "qr/backward.hpp"
#include "qr/basis.hpp"
#include "qr/errors.hpp"
#include "qr/filter.hpp"
#include "qr/forward.hpp"
#include "qr/io.hpp"
#include "qr/nonlinearity.hpp"

namespace qr {

inline constexpr const char* kVersion = "0.1.0";

struct ModeAmp {
    int index = 1;  // 1-based position in the eigenvalue-sorted mode list
    double amplitude = 1.0;
};

struct ExperimentConfig {
    BasisSpec basis_spec;
    double a = 1.0;
    double M_bar = 2.0;
    double M_lower = 0.0;  // 0 -> M_bar - a
    double T = 1.0;

    std::string source_kind = "zero";
    double fisher_B = 1.0;
    std::string source_g = "none";
    std::string cutoff = "none";  // "none" | "auto" | numeric literal
    double cutoff_level = std::numeric_limits<double>::infinity();

    double K = 1.0;
    double C1 = 0.0;  // 0 -> 1/T
    std::vector<double> eps;

    double dt = 0.0;  // 0 -> T/2000
    std::string solver_path = "modal";
    double tol = 1e-10;
    int max_iter = 200;
    int store_stride = 10;

    std::vector<double> times;
    double lr_exponent = 4.0;
    std::uint64_t seed = 1;
    int seeds = 1;
    std::string out_dir;

    std::vector<ModeAmp> initial;
    std::string reference_kind = "none";  // "none" | "heat_modes"
    std::vector<ModeAmp> reference_modes;

    std::vector<double> tstar_gammas;

    struct Carleman {
        double eta = 0.05, k = 1.0, K = 10.0, T = 0.1, amplitude = 1.0;
        int mode = 1, steps = 4000;
        std::vector<double> m_values;
    } carleman;

    struct Approx {
        double alpha = 1.0, q = 2.0;
        int d = 1, n_max = 100, box_radius = 0;
    } approx;

    nlohmann::json resolved;  // canonical form, embedded in run metadata
    std::string canonical;
    std::uint64_t hash = 0;

    double effective_C1() const { return C1 > 0.0 ? C1 : 1.0 / T; }
    double effective_dt() const { return dt > 0.0 ? dt : T / 2000.0; }
};

namespace cfg_detail {

using nlohmann::json;

inline const json& require(const json& j, const char* key, const char* block) {
    auto it = j.find(key);
    if (it == j.end())
        throw config_error(std::string("config: missing key \"") + key + "\" in " + block);
    return *it;
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
    auto it = j.find(key);
    if (it == j.end()) return fallback;
    return it->get<T>();
}

inline int line_of_byte(const std::string& text, std::size_t byte) {
    int line = 1;
    for (std::size_t i = 0; i < byte && i < text.size(); ++i)
        if (text[i] == '\n') ++line;
    return line;
}

inline std::vector<ModeAmp> parse_modes(const json& j, const char* block) {
    std::vector<ModeAmp> out;
    for (const auto& e : j) {
        ModeAmp m;
        m.index = require(e, "index", block).get<int>();
        m.amplitude = require(e, "amplitude", block).get<double>();
        if (m.index < 1) throw config_error(std::string("config: mode index must be >= 1 in ") + block);
        out.push_back(m);
    }
    return out;
}

}  // namespace cfg_detail

inline ExperimentConfig parse_config_text(const std::string& text) {
    using nlohmann::json;
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw config_error("config: parse error at line " +
                           std::to_string(cfg_detail::line_of_byte(text, e.byte)) + ": " +
                           e.what());
    }
    ExperimentConfig c;
    try {
        const json& prob = cfg_detail::require(j, "problem", "config root");
        const std::string dom =
            cfg_detail::get_or<std::string>(prob, "domain", "interval_dirichlet");
        if (dom == "interval_dirichlet")
            c.basis_spec.domain = DomainKind::interval_dirichlet;
        else if (dom == "interval_neumann")
            c.basis_spec.domain = DomainKind::interval_neumann;
        else if (dom == "torus")
            c.basis_spec.domain = DomainKind::torus;
        else
            throw config_error("config: unknown domain \"" + dom + "\"");
        c.basis_spec.dim = cfg_detail::get_or<int>(prob, "dim", 1);
        c.basis_spec.lengths =
            cfg_detail::get_or<std::vector<double>>(prob, "lengths", {std::numbers::pi});
        c.basis_spec.modes_per_axis = cfg_detail::require(prob, "modes", "problem").get<int>();
        c.basis_spec.quad_points_per_axis = cfg_detail::get_or<int>(prob, "quad_points", 0);
        c.a = cfg_detail::require(prob, "a", "problem").get<double>();
        c.M_bar = cfg_detail::require(prob, "M_bar", "problem").get<double>();
        c.M_lower = cfg_detail::get_or<double>(prob, "M_lower", 0.0);
        c.T = cfg_detail::require(prob, "T", "problem").get<double>();
        if (prob.contains("source")) {
            const json& src = prob["source"];
            c.source_kind = cfg_detail::get_or<std::string>(src, "kind", "zero");
            c.fisher_B = cfg_detail::get_or<double>(src, "B", 1.0);
            c.source_g = cfg_detail::get_or<std::string>(src, "g", "none");
        }
        if (prob.contains("cutoff")) {
            const json& cut = prob["cutoff"];
            if (cut.is_number()) {
                c.cutoff = "level";
                c.cutoff_level = cut.get<double>();
            } else {
                c.cutoff = cut.get<std::string>();
                if (c.cutoff != "none" && c.cutoff != "auto")
                    throw config_error("config: cutoff must be \"none\", \"auto\" or a number");
            }
        }

        if (j.contains("regularization")) {
            const json& reg = j["regularization"];
            c.K = cfg_detail::get_or<double>(reg, "K", 1.0);
            c.C1 = cfg_detail::get_or<double>(reg, "C1", 0.0);
            c.eps = cfg_detail::get_or<std::vector<double>>(reg, "eps", {});
            for (std::size_t i = 1; i < c.eps.size(); ++i)
                if (!(c.eps[i] < c.eps[i - 1]))
                    throw config_error("config: eps list must be strictly decreasing");
        }

        if (j.contains("solver")) {
            const json& sol = j["solver"];
            c.dt = cfg_detail::get_or<double>(sol, "dt", 0.0);
            c.solver_path = cfg_detail::get_or<std::string>(sol, "path", "modal");
            if (c.solver_path != "modal" && c.solver_path != "volterra")
                throw config_error("config: solver path must be \"modal\" or \"volterra\"");
            c.tol = cfg_detail::get_or<double>(sol, "tol", 1e-10);
            c.max_iter = cfg_detail::get_or<int>(sol, "max_iter", 200);
            c.store_stride = cfg_detail::get_or<int>(sol, "store_stride", 10);
        }

        if (j.contains("outputs")) {
            const json& out = j["outputs"];
            c.times = cfg_detail::get_or<std::vector<double>>(out, "times", {});
            c.lr_exponent = cfg_detail::get_or<double>(out, "r", 4.0);
            c.seed = cfg_detail::get_or<std::uint64_t>(out, "seed", 1);
            c.seeds = cfg_detail::get_or<int>(out, "seeds", 1);
            c.out_dir = cfg_detail::get_or<std::string>(out, "dir", "");
        }

        if (j.contains("initial"))
            c.initial = cfg_detail::parse_modes(
                cfg_detail::require(j["initial"], "modes", "initial"), "initial.modes");
        if (j.contains("reference")) {
            const json& ref = j["reference"];
            c.reference_kind = cfg_detail::get_or<std::string>(ref, "kind", "none");
            if (c.reference_kind != "none" && c.reference_kind != "heat_modes")
                throw config_error("config: unknown reference kind \"" + c.reference_kind + "\"");
            if (ref.contains("modes"))
                c.reference_modes = cfg_detail::parse_modes(ref["modes"], "reference.modes");
        }
        if (j.contains("tstar"))
            c.tstar_gammas =
                cfg_detail::get_or<std::vector<double>>(j["tstar"], "gammas", {});
        if (j.contains("carleman")) {
            const json& cl = j["carleman"];
            c.carleman.eta = cfg_detail::get_or<double>(cl, "eta", 0.05);
            c.carleman.k = cfg_detail::get_or<double>(cl, "k", 1.0);
            c.carleman.K = cfg_detail::get_or<double>(cl, "K", 10.0);
            c.carleman.T = cfg_detail::get_or<double>(cl, "T", 0.1);
            c.carleman.amplitude = cfg_detail::get_or<double>(cl, "amplitude", 1.0);
            c.carleman.mode = cfg_detail::get_or<int>(cl, "mode", 1);
            c.carleman.steps = cfg_detail::get_or<int>(cl, "steps", 4000);
            c.carleman.m_values = cfg_detail::get_or<std::vector<double>>(cl, "m_values", {});
        }
        if (j.contains("approx")) {
            const json& ap = j["approx"];
            c.approx.alpha = cfg_detail::get_or<double>(ap, "alpha", 1.0);
            c.approx.q = cfg_detail::get_or<double>(ap, "q", 2.0);
            c.approx.d = cfg_detail::get_or<int>(ap, "d", 1);
            c.approx.n_max = cfg_detail::get_or<int>(ap, "n_max", 100);
            c.approx.box_radius = cfg_detail::get_or<int>(ap, "box_radius", 0);
        }
    } catch (const nlohmann::json::exception& e) {
        throw config_error(std::string("config: ") + e.what());
    }

    if (c.effective_C1() * c.T > 1.0 + 1e-12)
        throw config_error("config: C1 * T must be <= 1");

    c.resolved = j;  // nlohmann::json orders keys, so dump() is canonical
    c.canonical = j.dump();
    c.hash = fnv1a_hash(c.canonical);
    return c;
}

inline ExperimentConfig parse_config_file(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw config_error("config: cannot open " + path.string());
    std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return parse_config_text(text);
}

namespace run_detail {

inline SpaceTimeFn named_g(const std::string& name) {
    if (name == "none") return {};
    if (name == "constant_one")
        return [](std::span<const double>, double) { return 1.0; };
    if (name == "decaying_mode")
        return [](std::span<const double> x, double t) { return std::exp(-t) * std::sin(x[0]); };
    throw config_error("config: unknown source g \"" + name + "\"");
}

inline SourceSpec make_source(const ExperimentConfig& c) {
    SourceSpec s;
    s.name = c.source_kind;
    if (c.source_kind == "zero")
        s.kind = SourceKind::zero;
    else if (c.source_kind == "pure_source")
        s.kind = SourceKind::pure_source;
    else if (c.source_kind == "sine")
        s.kind = SourceKind::sine;
    else if (c.source_kind == "fisher")
        s.kind = SourceKind::fisher;
    else if (c.source_kind == "sine_plus_source")
        s.kind = SourceKind::sine_plus_source;
    else if (c.source_kind == "fisher_plus_source")
        s.kind = SourceKind::fisher_plus_source;
    else
        throw config_error("config: unknown source kind \"" + c.source_kind + "\"");
    s.fisher_B = c.fisher_B;
    s.g = named_g(c.source_g);
    if (c.cutoff == "level") s.cutoff_level = c.cutoff_level;
    return s;
}

inline ProblemSpec make_problem(const ExperimentConfig& c) {
    ProblemSpec p;
    p.a = c.a;
    p.M_bar = c.M_bar;
    p.M_lower = c.M_lower;
    p.T = c.T;
    p.source = make_source(c);
    return p;
}

inline SpectralField field_from_modes(const BasisHandle& b, const std::vector<ModeAmp>& modes) {
    auto u = SpectralField::zero(b);
    for (const auto& m : modes) {
        if (static_cast<std::size_t>(m.index) > b->mode_count())
            throw config_error("config: mode index " + std::to_string(m.index) +
                               " exceeds the mode count");
        u[static_cast<std::size_t>(m.index - 1)] += m.amplitude;
    }
    return u;
}

/// Reference trajectory u(x,t) = sum_k A_k e^{-a mu_k t} phi_k, the exact
/// solution of the linear heat equation (source kind must be zero).
struct Reference {
    BasisHandle basis;
    double a = 1.0;
    std::vector<ModeAmp> modes;

    SpectralField at(double t) const {
        auto u = SpectralField::zero(basis);
        for (const auto& m : modes)
            u[static_cast<std::size_t>(m.index - 1)] +=
                m.amplitude * std::exp(-a * basis->eigenvalue(static_cast<std::size_t>(m.index - 1)) * t);
        return u;
    }
    SpaceTimeField sample(std::span<const double> times) const {
        SpaceTimeField f;
        f.basis = basis;
        for (double t : times) {
            f.times.push_back(t);
            f.fields.push_back(at(t));
        }
        return f;
    }
    double time_derivative_sup() const {  // max_t ||u_t||_{L2} = value at t = 0
        double s = 0.0;
        for (const auto& m : modes) {
            const double c = a * basis->eigenvalue(static_cast<std::size_t>(m.index - 1)) * m.amplitude;
            s += c * c;
        }
        return std::sqrt(s);
    }
};

inline std::optional<Reference> make_reference(const ExperimentConfig& c, const BasisHandle& b) {
    if (c.reference_kind == "none") return std::nullopt;
    if (c.reference_modes.empty())
        throw config_error("config: reference.modes must be nonempty for kind heat_modes");
    if (c.source_kind != "zero")
        throw config_error("config: heat_modes reference is exact only for source kind zero");
    return Reference{b, c.a, c.reference_modes};
}

inline void write_meta(const std::filesystem::path& path, const ExperimentConfig& c,
                       double wall_ms, const nlohmann::json& extra = {}) {
    nlohmann::json meta;
    meta["version"] = kVersion;
    meta["config"] = c.resolved;
    char hex[20];
    std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(c.hash));
    meta["config_hash"] = hex;
    meta["wall_ms"] = wall_ms;
    if (!extra.is_null()) meta["run"] = extra;
    std::ofstream os(path, std::ios::trunc);
    os << meta.dump(2) << "\n";
}

class Stopwatch {
public:
    double ms() const {
        return std::chrono::duration<double, std::milli>(
                   std::chrono::steady_clock::now() - start_)
            .count();
    }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

}  // namespace run_detail

/// forward: manufacture terminal data and write it as a field file.
inline std::filesystem::path run_forward(const ExperimentConfig& c,
                                         const std::filesystem::path& out_dir) {
    run_detail::Stopwatch clock;
    auto basis = build_basis(c.basis_spec);
    auto problem = run_detail::make_problem(c);
    if (c.initial.empty()) throw config_error("config: forward needs an initial block");
    auto u0 = run_detail::field_from_modes(basis, c.initial);
    const double dt = c.effective_dt();
    const auto n = step_count(problem.T, dt);
    auto run = solve_forward(problem, u0, dt, static_cast<int>(n));  // store 0 and T only
    std::filesystem::create_directories(out_dir);
    const auto path = out_dir / "terminal.qrf";
    write_field_file(path, run.terminal());
    run_detail::write_meta(out_dir / "forward_meta.json", c, clock.ms(),
                           {{"terminal_file", "terminal.qrf"},
                            {"steps", n},
                            {"terminal_l2", run.terminal().l2_norm()}});
    return path;
}

/// Everything one (eps, seed) reconstruction produces.
struct SingleRun {
    FilterParams params;
    BackwardRun run;
    std::vector<ErrorRecord> records;  // one per requested output time
    double t_eps = std::numeric_limits<double>::quiet_NaN();
    double t_snap = std::numeric_limits<double>::quiet_NaN();
    double err_t0 = std::numeric_limits<double>::quiet_NaN();  // vs reference at t = 0
};

namespace run_detail {

inline SingleRun invert_single(const ExperimentConfig& c, const BasisHandle& basis,
                               const SpectralField& u_f, double eps, std::uint64_t seed,
                               const std::optional<Reference>& ref) {
    if (!(eps > 0.0))
        throw precondition_error(
            "invert: eps = 0 makes gamma degenerate (infinite); the run is refused");
    SingleRun out;
    out.params = gamma_from_epsilon(eps, c.K, c.effective_C1(), c.T, c.M_bar);
    auto problem = make_problem(c);

    if (c.cutoff == "auto") {
        SpectralField ref0 = ref ? ref->at(0.0) : SpectralField::zero(basis);
        auto cs = cutoff_schedule(out.params, problem.source, problem.ellipticity_lower(), c.T,
                                  ref ? &ref0 : nullptr);
        if (std::isfinite(cs.level)) problem.source = cutoff_F(problem.source, cs.level);
    }

    auto filter = build_modal_filter(basis, out.params);
    double L_F = 0.0;
    if (has_u_dependence(problem.source.kind)) L_F = global_lipschitz(problem.source);
    const double rho =
        rho_select(RhoMode::existence, L_F, out.params.C1, out.params.gamma);
    auto rp = assemble(problem, basis, filter, rho);

    auto noisy = add_noise(u_f, eps, seed);
    const double dt = c.effective_dt();
    if (c.solver_path == "volterra")
        out.run = volterra_iterate(rp, noisy.field, dt, c.tol, c.max_iter, c.store_stride);
    else
        out.run = solve_backward(rp, noisy.field, dt, c.store_stride);

    if (out.params.gamma > 1.0) {
        out.t_eps = tstar_solve(out.params.gamma, out.params.C1);
        out.t_snap = out.run.times[out.run.index_of_time(out.t_eps)];
    }

    if (ref) {
        auto ref_traj = ref->sample(out.run.times);
        auto num_traj = SpaceTimeField::from_run(out.run);
        double W = 0.0;
        for (const auto& f : ref_traj.fields)
            W = std::max(W, gevrey_norm(f, c.M_bar * c.T));
        for (double t : c.times) {
            const std::size_t i = out.run.index_of_time(t);
            ErrorRecord rec;
            rec.eps = eps;
            rec.gamma = out.params.gamma;
            rec.t = out.run.times[i];
            auto [l2, h1] = error_norms(out.run.fields[i], ref_traj.fields[i]);
            (void)h1;
            rec.err_l2 = l2;
            rec.err_h1_tail = h1_tail_integral(num_traj, ref_traj, rec.t);
            rec.r = c.lr_exponent;
            rec.err_lr = lr_tail_error(num_traj, ref_traj, c.lr_exponent, rec.t);
            rec.bound_rhs = error_bound(rec.t, out.params, W, L_F);
            rec.t_eps = out.t_eps;
            out.records.push_back(rec);
        }
        if (std::isfinite(out.t_snap)) {
            auto [l2, h1] = error_norms(out.run.fields[out.run.index_of_time(out.t_snap)],
                                        ref->at(0.0));
            (void)h1;
            out.err_t0 = l2;
        }
    }
    return out;
}

}  // namespace run_detail

struct InvertOutput {
    std::vector<ErrorRecord> rows;
    std::filesystem::path results_csv;
    std::vector<std::filesystem::path> trajectory_files;
    SingleRun detail;
};

/// invert: one eps, one seed; writes trajectory fields at the output times
/// plus results.csv.
inline InvertOutput run_invert(const ExperimentConfig& c, const std::filesystem::path& data_file,
                               const std::filesystem::path& out_dir) {
    run_detail::Stopwatch clock;
    if (c.eps.size() != 1)
        throw config_error("config: invert needs exactly one eps (use sweep for ladders)");
    auto basis = build_basis(c.basis_spec);
    auto u_f = read_field_file(data_file, basis);
    auto ref = run_detail::make_reference(c, basis);
    auto single = run_detail::invert_single(c, basis, u_f, c.eps[0], c.seed, ref);

    InvertOutput out;
    out.rows = single.records;
    std::filesystem::create_directories(out_dir);
    for (std::size_t k = 0; k < c.times.size(); ++k) {
        const std::size_t i = single.run.index_of_time(c.times[k]);
        auto path = out_dir / ("traj_t" + std::to_string(k) + ".qrf");
        write_field_file(path, single.run.fields[i]);
        out.trajectory_files.push_back(path);
    }
    out.results_csv = out_dir / "results.csv";
    write_results_table(out.results_csv, out.rows);
    nlohmann::json extra = {{"gamma", single.params.gamma},
                            {"degenerate", single.params.degenerate},
                            {"t_eps", single.t_eps},
                            {"iterations", single.run.iterations},
                            {"amplification_ok", single.run.amplification_ok}};
    run_detail::write_meta(out_dir / "invert_meta.json", c, clock.ms(), extra);
    out.detail = std::move(single);
    return out;
}

struct SweepOutput {
    std::vector<ErrorRecord> rows;           // seed-averaged, one per (eps, t)
    std::vector<std::array<double, 4>> rates;  // t, slope, intercept, residual
    std::vector<std::array<double, 7>> tzero;  // eps, gamma, t_eps, t_snap, err, scale, ratio
    std::filesystem::path results_csv, rates_csv, tzero_csv;
    int amplification_violations = 0;
};

/// sweep: every (eps, seed) pair, optionally in parallel; emits the
/// seed-averaged results table, fitted rates per output time, and the
/// reconstruction-at-t-eps table. Terminal data comes from a field file or,
/// when absent, exactly from the reference at t = T.
inline SweepOutput run_sweep(const ExperimentConfig& c,
                             const std::optional<std::filesystem::path>& data_file,
                             const std::filesystem::path& out_dir, int threads = 1) {
    run_detail::Stopwatch clock;
    if (c.eps.empty()) throw config_error("config: sweep needs a nonempty eps list");
    if (c.times.empty()) throw config_error("config: sweep needs outputs.times");
    auto basis = build_basis(c.basis_spec);
    auto ref = run_detail::make_reference(c, basis);
    if (!ref) throw config_error("config: sweep needs a reference to measure errors against");
    SpectralField u_f = data_file ? read_field_file(*data_file, basis) : ref->at(c.T);

    const std::size_t n_runs = c.eps.size() * static_cast<std::size_t>(c.seeds);
    std::vector<SingleRun> runs(n_runs);
    std::atomic<std::size_t> next{0};
    std::exception_ptr first_error;
    std::mutex error_mutex;
    auto worker = [&]() {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= n_runs) return;
            try {
                const std::size_t ei = i / static_cast<std::size_t>(c.seeds);
                const std::size_t si = i % static_cast<std::size_t>(c.seeds);
                runs[i] = run_detail::invert_single(c, basis, u_f, c.eps[ei], c.seed + si, ref);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!first_error) first_error = std::current_exception();
                return;
            }
        }
    };
    if (threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    if (first_error) std::rethrow_exception(first_error);

    SweepOutput out;
    for (std::size_t ei = 0; ei < c.eps.size(); ++ei) {
        for (std::size_t ti = 0; ti < c.times.size(); ++ti) {
            ErrorRecord mean;
            for (int si = 0; si < c.seeds; ++si) {
                const auto& rec =
                    runs[ei * static_cast<std::size_t>(c.seeds) + static_cast<std::size_t>(si)]
                        .records[ti];
                if (si == 0) {
                    mean = rec;
                    mean.err_l2 = 0.0;
                    mean.err_h1_tail = 0.0;
                    mean.err_lr = 0.0;
                }
                mean.err_l2 += rec.err_l2;
                mean.err_h1_tail += rec.err_h1_tail;
                mean.err_lr += rec.err_lr;
            }
            mean.err_l2 /= c.seeds;
            mean.err_h1_tail /= c.seeds;
            mean.err_lr /= c.seeds;
            out.rows.push_back(mean);
        }
        const auto& first = runs[ei * static_cast<std::size_t>(c.seeds)];
        double err_t0 = 0.0;
        for (int si = 0; si < c.seeds; ++si)
            err_t0 +=
                runs[ei * static_cast<std::size_t>(c.seeds) + static_cast<std::size_t>(si)].err_t0;
        err_t0 /= c.seeds;
        const double clg = first.params.C1 * first.params.log_gamma();
        const double scale = 1.0 / std::sqrt(clg);
        out.tzero.push_back({c.eps[ei], first.params.gamma, first.t_eps, first.t_snap, err_t0,
                             scale, err_t0 / scale});
    }
    for (std::size_t ti = 0; ti < c.times.size(); ++ti) {
        if (c.eps.size() < 3) break;
        std::vector<double> es, errs;
        for (std::size_t ei = 0; ei < c.eps.size(); ++ei) {
            es.push_back(c.eps[ei]);
            errs.push_back(out.rows[ei * c.times.size() + ti].err_l2);
        }
        auto fit = fit_rate(es, errs);
        out.rates.push_back({out.rows[ti].t, fit.slope, fit.intercept, fit.residual});
    }
    for (const auto& r : runs) out.amplification_violations += r.run.amplification_violations;

    std::filesystem::create_directories(out_dir);
    out.results_csv = out_dir / "results.csv";
    write_results_table(out.results_csv, out.rows);
    {
        std::ofstream os(out_dir / "rates.csv", std::ios::trunc);
        os << "t,slope,intercept,residual\n";
        for (const auto& r : out.rates)
            os << detail::format_g17(r[0]) << "," << detail::format_g17(r[1]) << ","
               << detail::format_g17(r[2]) << "," << detail::format_g17(r[3]) << "\n";
        out.rates_csv = out_dir / "rates.csv";
    }
    {
        std::ofstream os(out_dir / "tzero.csv", std::ios::trunc);
        os << "eps,gamma,t_eps,t_snap,err_l2_u0,scale,ratio\n";
        for (const auto& r : out.tzero) {
            for (std::size_t i = 0; i < r.size(); ++i)
                os << (i ? "," : "") << detail::format_g17(r[i]);
            os << "\n";
        }
        out.tzero_csv = out_dir / "tzero.csv";
    }
    run_detail::write_meta(out_dir / "sweep_meta.json", c, clock.ms(),
                           {{"runs", n_runs},
                            {"amplification_violations", out.amplification_violations},
                            {"threads", threads}});
    return out;
}

/// tstar: root of t = gamma^{-C1 t} for each configured gamma.
inline std::filesystem::path run_tstar(const ExperimentConfig& c,
                                       const std::filesystem::path& out_dir) {
    run_detail::Stopwatch clock;
    if (c.tstar_gammas.empty()) throw config_error("config: tstar needs a gammas list");
    std::filesystem::create_directories(out_dir);
    const auto path = out_dir / "tstar.csv";
    std::ofstream os(path, std::ios::trunc);
    os << "gamma,c1,t_eps,cap\n";
    const double C1 = c.effective_C1();
    for (double g : c.tstar_gammas) {
        const double t = tstar_solve(g, C1);
        os << detail::format_g17(g) << "," << detail::format_g17(C1) << ","
           << detail::format_g17(t) << ","
           << detail::format_g17(1.0 / std::sqrt(C1 * std::log(g))) << "\n";
    }
    os.close();
    run_detail::write_meta(out_dir / "tstar_meta.json", c, clock.ms());
    return path;
}

struct CarlemanOutput {
    CarlemanSweep sweep;
    std::filesystem::path csv;
};

/// carleman: weighted-inequality sweep over m for the polynomial pulse
/// v = amplitude * phi_mode * t^2 (T-t)^2.
inline CarlemanOutput run_carleman(const ExperimentConfig& c,
                                   const std::filesystem::path& out_dir) {
    run_detail::Stopwatch clock;
    auto basis = build_basis(c.basis_spec);
    const auto& cl = c.carleman;
    if (cl.m_values.empty()) throw config_error("config: carleman needs m_values");
    if (static_cast<std::size_t>(cl.mode) > basis->mode_count())
        throw config_error("config: carleman mode index exceeds the mode count");

    SpaceTimeField v;
    v.basis = basis;
    for (int i = 0; i <= cl.steps; ++i) {
        const double t = cl.T * static_cast<double>(i) / static_cast<double>(cl.steps);
        auto f = SpectralField::zero(basis);
        f[static_cast<std::size_t>(cl.mode - 1)] = cl.amplitude * t * t * (cl.T - t) * (cl.T - t);
        v.times.push_back(t);
        v.fields.push_back(f);
    }
    CarlemanOutput out;
    out.sweep = carleman_m_sweep(v, c.a, cl.eta, cl.k, cl.T, cl.K, cl.m_values);

    std::filesystem::create_directories(out_dir);
    out.csv = out_dir / "carleman.csv";
    std::ofstream os(out.csv, std::ios::trunc);
    os << "m,lhs,term_v,term_grad,rhs_lower,margin\n";
    for (std::size_t i = 0; i < out.sweep.m_values.size(); ++i) {
        const auto& s = out.sweep.sides[i];
        os << detail::format_g17(out.sweep.m_values[i]) << "," << detail::format_g17(s.lhs) << ","
           << detail::format_g17(s.term_v) << "," << detail::format_g17(s.term_grad) << ","
           << detail::format_g17(s.rhs_lower) << ","
           << detail::format_g17(cl.K * s.lhs - s.rhs_lower) << "\n";
    }
    os.close();
    run_detail::write_meta(out_dir / "carleman_meta.json", c, clock.ms(),
                           {{"m_star", out.sweep.m_star},
                            {"min_margin", out.sweep.min_margin},
                            {"D_fit", out.sweep.D_fit}});
    return out;
}

/// approx-numbers: the nonincreasing weight sequence over the integer lattice.
inline std::filesystem::path run_approx(const ExperimentConfig& c,
                                        const std::filesystem::path& out_dir) {
    run_detail::Stopwatch clock;
    auto a = approximation_numbers(c.approx.alpha, c.approx.q, c.approx.d, c.approx.n_max,
                                   c.approx.box_radius);
    std::filesystem::create_directories(out_dir);
    const auto path = out_dir / "approx.csv";
    std::ofstream os(path, std::ios::trunc);
    os << "n,a_n\n";
    for (std::size_t n = 0; n < a.size(); ++n)
        os << (n + 1) << "," << detail::format_g17(a[n]) << "\n";
    os.close();
    run_detail::write_meta(out_dir / "approx_meta.json", c, clock.ms());
    return path;
}

}  // namespace qr
