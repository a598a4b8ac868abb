#pragma once

#include <cstdint>
#include <vector>

namespace ammu {

/// Inputs of the attention cost formulas. The token grid is h x w with C
/// channels; M is the window edge for windowed attention; h0 x w0 is the
/// deepest-level grid the granular scheme attends over globally.
struct ComplexityParams {
    std::int64_t h = 0;
    std::int64_t w = 0;
    std::int64_t c = 0;
    std::int64_t m = 0;
    std::int64_t h0 = 0;
    std::int64_t w0 = 0;
};

/// Throws std::invalid_argument unless every extent is positive, h*w >= h0*w0,
/// and the ratio (h*w)/(h0*w0) is a power of four.
void validate(const ComplexityParams& p);

/// Exact integer cost of one global MSA block: 4hwC^2 + 2(hw)^2 C.
std::uint64_t omega_msa(const ComplexityParams& p);

/// Exact integer cost of one windowed MSA block: 4hwC^2 + 2 M^2 hw C.
std::uint64_t omega_wmsa(const ComplexityParams& p);

/// Exact integer cost of the granular scheme:
/// 4hwC^2 + (h0 w0)^2 C + 16 log2(hw / h0 w0) C.
std::uint64_t omega_gmsa(const ComplexityParams& p);

struct ComplexityRow {
    ComplexityParams params;
    std::uint64_t msa = 0;
    std::uint64_t wmsa = 0;
    std::uint64_t gmsa = 0;
    double gmsa_over_msa = 0.0;
    double gmsa_over_wmsa = 0.0;
};

std::vector<ComplexityRow> sweep(const std::vector<ComplexityParams>& params);

}  // namespace ammu
