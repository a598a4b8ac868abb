#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdint>

#include "ammu/complexity.hpp"
#include "ammu/rng.hpp"

using namespace ammu;

namespace {

// recomputation in 128-bit arithmetic, exact for every admissible input
unsigned __int128 wide_msa(const ComplexityParams& p) {
    using u = unsigned __int128;
    u hw = static_cast<u>(p.h) * p.w, c = p.c;
    return 4 * hw * c * c + 2 * hw * hw * c;
}

unsigned __int128 wide_wmsa(const ComplexityParams& p) {
    using u = unsigned __int128;
    u hw = static_cast<u>(p.h) * p.w, c = p.c, m = p.m;
    return 4 * hw * c * c + 2 * m * m * hw * c;
}

unsigned __int128 wide_gmsa(const ComplexityParams& p) {
    using u = unsigned __int128;
    u hw = static_cast<u>(p.h) * p.w, base = static_cast<u>(p.h0) * p.w0, c = p.c;
    std::int64_t ratio = (p.h * p.w) / (p.h0 * p.w0);
    u log2r = 0;
    while (ratio > 1) {
        ratio /= 2;
        ++log2r;
    }
    return 4 * hw * c * c + base * base * c + 16 * log2r * c;
}

}  // namespace

TEST_CASE("worked integer examples") {
    ComplexityParams p{16, 16, 64, 4, 4, 4};
    CHECK(omega_msa(p) == 12582912ull);
    CHECK(omega_wmsa(p) == 4718592ull);
    CHECK(omega_gmsa(p) == 4214784ull);
    // term decomposition of the granular cost
    CHECK(omega_gmsa(p) == 4194304ull + 16384ull + 4096ull);
}

TEST_CASE("degenerate grid: log term vanishes") {
    ComplexityParams p{4, 4, 8, 2, 4, 4};
    CHECK(omega_gmsa(p) == 4ull * 16 * 64 + 256ull * 8);
}

TEST_CASE("validation rejects bad parameter sets") {
    CHECK_THROWS_AS(omega_msa({0, 4, 8, 2, 2, 2}), std::invalid_argument);
    CHECK_THROWS_AS(omega_msa({4, 4, -1, 2, 2, 2}), std::invalid_argument);
    // token count below the deepest grid
    CHECK_THROWS_AS(omega_gmsa({2, 2, 8, 2, 4, 4}), std::invalid_argument);
    // ratio 4x: 8x8 over 4x4 is 4 (ok); 8x4 over 4x4 is 2 (not a power of 4)
    CHECK_NOTHROW(omega_gmsa({8, 8, 8, 2, 4, 4}));
    CHECK_THROWS_AS(omega_gmsa({8, 4, 8, 2, 4, 4}), std::invalid_argument);
    // non-divisible
    CHECK_THROWS_AS(omega_gmsa({6, 6, 8, 2, 4, 4}), std::invalid_argument);
}

TEST_CASE("matches 128-bit recomputation on random admissible params") {
    Rng rng(2024);
    for (int trial = 0; trial < 200; ++trial) {
        ComplexityParams p;
        p.h0 = std::int64_t{1} << rng.integer(0, 4);
        p.w0 = std::int64_t{1} << rng.integer(0, 4);
        const int lift = static_cast<int>(rng.integer(0, 4));
        p.h = p.h0 << lift;
        p.w = p.w0 << lift;
        p.c = rng.integer(1, 256);
        p.m = rng.integer(1, 16);
        CHECK(omega_msa(p) == static_cast<std::uint64_t>(wide_msa(p)));
        CHECK(omega_wmsa(p) == static_cast<std::uint64_t>(wide_wmsa(p)));
        CHECK(omega_gmsa(p) == static_cast<std::uint64_t>(wide_gmsa(p)));
    }
}

TEST_CASE("sweep: granular cost wins at every scale and its share shrinks") {
    std::vector<ComplexityParams> params;
    for (std::int64_t s : {32, 64, 128, 256}) {
        params.push_back({s, s, 64, 8, 16, 16});
    }
    auto rows = sweep(params);
    REQUIRE(rows.size() == 4);
    double prev_ratio = 2.0;
    for (const auto& row : rows) {
        CHECK(row.gmsa < row.wmsa);
        CHECK(row.wmsa < row.msa);
        CHECK(row.gmsa_over_msa < prev_ratio);
        prev_ratio = row.gmsa_over_msa;
    }
}
