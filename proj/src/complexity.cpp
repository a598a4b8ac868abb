#include "ammu/complexity.hpp"

#include <bit>
#include <limits>
#include <stdexcept>
#include <string>

namespace ammu {

namespace {

using u128 = unsigned __int128;

std::uint64_t narrow(u128 v, const char* what) {
    if (v > std::numeric_limits<std::uint64_t>::max()) {
        throw std::overflow_error(std::string(what) + ": result exceeds 64 bits");
    }
    return static_cast<std::uint64_t>(v);
}

}  // namespace

void validate(const ComplexityParams& p) {
    if (p.h < 1 || p.w < 1 || p.c < 1 || p.m < 1 || p.h0 < 1 || p.w0 < 1) {
        throw std::invalid_argument("complexity params must all be positive");
    }
    const std::int64_t hw = p.h * p.w;
    const std::int64_t base = p.h0 * p.w0;
    if (hw < base || hw % base != 0) {
        throw std::invalid_argument("token count " + std::to_string(hw) +
                                    " must be a multiple of the deepest grid " + std::to_string(base));
    }
    const std::uint64_t ratio = static_cast<std::uint64_t>(hw / base);
    const bool pow4 = std::has_single_bit(ratio) && std::countr_zero(ratio) % 2 == 0;
    if (!pow4) {
        throw std::invalid_argument("grid ratio " + std::to_string(ratio) + " must be a power of four");
    }
}

std::uint64_t omega_msa(const ComplexityParams& p) {
    validate(p);
    const u128 hw = static_cast<u128>(p.h) * static_cast<u128>(p.w);
    const u128 c = static_cast<u128>(p.c);
    return narrow(4 * hw * c * c + 2 * hw * hw * c, "omega_msa");
}

std::uint64_t omega_wmsa(const ComplexityParams& p) {
    validate(p);
    const u128 hw = static_cast<u128>(p.h) * static_cast<u128>(p.w);
    const u128 c = static_cast<u128>(p.c);
    const u128 m = static_cast<u128>(p.m);
    return narrow(4 * hw * c * c + 2 * m * m * hw * c, "omega_wmsa");
}

std::uint64_t omega_gmsa(const ComplexityParams& p) {
    validate(p);
    const u128 hw = static_cast<u128>(p.h) * static_cast<u128>(p.w);
    const u128 base = static_cast<u128>(p.h0) * static_cast<u128>(p.w0);
    const u128 c = static_cast<u128>(p.c);
    // the validated power-of-four ratio makes the log2 term an exact integer
    const std::uint64_t ratio = static_cast<std::uint64_t>(hw / base);
    const u128 log2_ratio = static_cast<u128>(std::countr_zero(ratio));
    return narrow(4 * hw * c * c + base * base * c + 16 * log2_ratio * c, "omega_gmsa");
}

std::vector<ComplexityRow> sweep(const std::vector<ComplexityParams>& params) {
    std::vector<ComplexityRow> rows;
    rows.reserve(params.size());
    for (const ComplexityParams& p : params) {
        ComplexityRow row;
        row.params = p;
        row.msa = omega_msa(p);
        row.wmsa = omega_wmsa(p);
        row.gmsa = omega_gmsa(p);
        row.gmsa_over_msa = static_cast<double>(row.gmsa) / static_cast<double>(row.msa);
        row.gmsa_over_wmsa = static_cast<double>(row.gmsa) / static_cast<double>(row.wmsa);
        rows.push_back(row);
    }
    return rows;
}

}  // namespace ammu
