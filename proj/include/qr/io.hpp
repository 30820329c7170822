#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "qr/analysis.hpp"
#include "qr/basis.hpp"
#include "qr/errors.hpp"

namespace qr {

// Field file layout: magic "QRF1", then little-endian u32 dim, u32 mode count
// per axis (dim entries), f64 coefficients in lexicographic per-axis order
// (axis 0 slowest). A text sidecar at <path>.txt describes the basis.

namespace detail {

inline void put_u32(std::ofstream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::ifstream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void put_f64(std::ofstream& os, double v) {
    std::uint64_t u;
    std::memcpy(&u, &v, 8);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((u >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 8);
}

inline double get_f64(std::ifstream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    std::uint64_t u = 0;
    for (int i = 0; i < 8; ++i) u |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    double v;
    std::memcpy(&v, &u, 8);
    return v;
}

inline std::string format_g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace detail

inline void write_field_file(const std::filesystem::path& path, const SpectralField& u) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw numeric_error("write_field_file: cannot open " + path.string());
    const Basis& b = *u.basis();
    os.write("QRF1", 4);
    detail::put_u32(os, static_cast<std::uint32_t>(b.dim()));
    for (int a = 0; a < b.dim(); ++a)
        detail::put_u32(os, static_cast<std::uint32_t>(b.modes_per_axis()));
    for (std::size_t lex = 0; lex < b.mode_count(); ++lex)
        detail::put_f64(os, u[b.sorted_index(lex)]);
    if (!os) throw numeric_error("write_field_file: write failed for " + path.string());

    std::ofstream side(path.string() + ".txt", std::ios::trunc);
    side << "format: QRF1\n"
         << "domain: " << to_string(b.kind()) << "\n"
         << "dim: " << b.dim() << "\n"
         << "lengths:";
    for (double L : b.spec().lengths) side << " " << detail::format_g17(L);
    side << "\nmodes_per_axis: " << b.modes_per_axis() << "\n"
         << "quad_points_per_axis: " << b.nodes_per_axis() << "\n"
         << "coefficient_order: lexicographic per-axis indices, axis 0 slowest\n";
}

inline SpectralField read_field_file(const std::filesystem::path& path, const BasisHandle& basis) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw config_error("read_field_file: cannot open " + path.string());
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "QRF1", 4) != 0)
        throw config_error("read_field_file: bad magic in " + path.string());
    const std::uint32_t dim = detail::get_u32(is);
    if (dim != static_cast<std::uint32_t>(basis->dim()))
        throw config_error("read_field_file: dimension mismatch in " + path.string());
    for (std::uint32_t a = 0; a < dim; ++a) {
        const std::uint32_t p = detail::get_u32(is);
        if (p != static_cast<std::uint32_t>(basis->modes_per_axis()))
            throw config_error("read_field_file: per-axis mode count mismatch in " + path.string());
    }
    auto u = SpectralField::zero(basis);
    for (std::size_t lex = 0; lex < basis->mode_count(); ++lex)
        u[basis->sorted_index(lex)] = detail::get_f64(is);
    if (!is) throw config_error("read_field_file: truncated file " + path.string());
    return u;
}

inline constexpr const char* kResultsHeader = "eps,gamma,t,err_l2,err_h1tail,err_lr,bound,t_eps";

inline void write_results_table(const std::filesystem::path& path,
                                const std::vector<ErrorRecord>& rows) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw numeric_error("write_results_table: cannot open " + path.string());
    os << kResultsHeader << "\n";
    for (const auto& r : rows)
        os << detail::format_g17(r.eps) << "," << detail::format_g17(r.gamma) << ","
           << detail::format_g17(r.t) << "," << detail::format_g17(r.err_l2) << ","
           << detail::format_g17(r.err_h1_tail) << "," << detail::format_g17(r.err_lr) << ","
           << detail::format_g17(r.bound_rhs) << "," << detail::format_g17(r.t_eps) << "\n";
}

/// FNV-1a over the canonical config text; embedded in run metadata.
inline std::uint64_t fnv1a_hash(const std::string& text) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace qr
