#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "qr/experiment.hpp"

namespace fs = std::filesystem;

namespace {

struct CommonOpts {
    std::string config_path;
    std::string out_dir;
    std::optional<std::uint64_t> seed;
    int threads = 1;
};

void add_common(CLI::App* cmd, CommonOpts& o, bool with_threads = false) {
    cmd->add_option("--config", o.config_path, "experiment config (JSON)")->required();
    cmd->add_option("--out", o.out_dir, "output directory");
    cmd->add_option("--seed", o.seed, "override the config seed");
    if (with_threads) cmd->add_option("--threads", o.threads, "parallel runs")->default_val(1);
}

fs::path resolve_out(const qr::ExperimentConfig& c, const CommonOpts& o) {
    if (!o.out_dir.empty()) return o.out_dir;
    if (!c.out_dir.empty()) return c.out_dir;
    if (const char* env = std::getenv("QR_OUT_DIR")) return env;
    return ".";
}

qr::ExperimentConfig load(const CommonOpts& o) {
    auto c = qr::parse_config_file(o.config_path);
    if (o.seed) c.seed = *o.seed;
    return c;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"spectral quasi-reversibility solver for backward semilinear heat problems"};
    app.require_subcommand(1);

    CommonOpts fwd_o, inv_o, swp_o, tst_o, car_o, apx_o;
    std::string inv_data, swp_data;

    auto* fwd = app.add_subcommand("forward", "manufacture terminal data");
    add_common(fwd, fwd_o);
    auto* inv = app.add_subcommand("invert", "reconstruct u(.,0) from one noisy sample");
    add_common(inv, inv_o);
    inv->add_option("--data", inv_data, "terminal field file")->required();
    auto* swp = app.add_subcommand("sweep", "eps/seed ladder with rate fits");
    add_common(swp, swp_o, true);
    swp->add_option("--data", swp_data, "terminal field file (default: exact reference at T)");
    auto* tst = app.add_subcommand("tstar", "solve t = gamma^{-C1 t} per gamma");
    add_common(tst, tst_o);
    auto* car = app.add_subcommand("carleman", "weighted-inequality m-sweep");
    add_common(car, car_o);
    auto* apx = app.add_subcommand("approx-numbers", "lattice weight sequence");
    add_common(apx, apx_o);

    CLI11_PARSE(app, argc, argv);

    try {
        if (fwd->parsed()) {
            auto c = load(fwd_o);
            auto path = qr::run_forward(c, resolve_out(c, fwd_o));
            std::printf("forward: wrote %s\n", path.string().c_str());
        } else if (inv->parsed()) {
            auto c = load(inv_o);
            auto out = qr::run_invert(c, inv_data, resolve_out(c, inv_o));
            std::printf("invert: gamma=%.6g, %zu rows -> %s\n", out.detail.params.gamma,
                        out.rows.size(), out.results_csv.string().c_str());
        } else if (swp->parsed()) {
            auto c = load(swp_o);
            std::optional<fs::path> data;
            if (!swp_data.empty()) data = swp_data;
            auto out = qr::run_sweep(c, data, resolve_out(c, swp_o), swp_o.threads);
            std::printf("sweep: %zu rows -> %s\n", out.rows.size(),
                        out.results_csv.string().c_str());
            for (const auto& r : out.rates)
                std::printf("  t=%.6g slope=%.4f residual=%.3g\n", r[0], r[1], r[3]);
            if (out.amplification_violations > 0)
                std::printf("  WARNING: %d amplification violations\n",
                            out.amplification_violations);
        } else if (tst->parsed()) {
            auto c = load(tst_o);
            auto path = qr::run_tstar(c, resolve_out(c, tst_o));
            std::printf("tstar: wrote %s\n", path.string().c_str());
        } else if (car->parsed()) {
            auto c = load(car_o);
            auto out = qr::run_carleman(c, resolve_out(c, car_o));
            std::printf("carleman: m_star=%.6g margin=%.6g D=%.6g -> %s\n", out.sweep.m_star,
                        out.sweep.min_margin, out.sweep.D_fit, out.csv.string().c_str());
        } else if (apx->parsed()) {
            auto c = load(apx_o);
            auto path = qr::run_approx(c, resolve_out(c, apx_o));
            std::printf("approx-numbers: wrote %s\n", path.string().c_str());
        }
    } catch (const qr::config_error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const qr::precondition_error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 4;
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 4;
    } catch (const std::exception& e) {  // numeric_error, range_error, IO failures
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    }
    return 0;
}
