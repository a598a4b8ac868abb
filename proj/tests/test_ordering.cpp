#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <numeric>
#include <vector>

#include "ammu/oracles.hpp"
#include "ammu/ordering.hpp"

using namespace ammu;

TEST_CASE("depth 0 is the identity") {
    auto spec = make_ordering(3, 5, 0);
    for (std::int64_t i = 0; i < 15; ++i) {
        CHECK(spec.nested_to_raster[static_cast<std::size_t>(i)] == i);
        CHECK(spec.raster_to_nested[static_cast<std::size_t>(i)] == i);
    }
}

TEST_CASE("single 2x2 window is already raster") {
    auto spec = make_ordering(2, 2, 1);
    for (std::int64_t i = 0; i < 4; ++i) CHECK(spec.nested_to_raster[static_cast<std::size_t>(i)] == i);
}

TEST_CASE("frozen 4x4 depth-1 correspondence") {
    auto spec = make_ordering(4, 4, 1);
    const std::vector<std::int64_t> expected = {0, 1, 4, 5, 2, 3, 6, 7, 8, 9, 12, 13, 10, 11, 14, 15};
    CHECK(spec.nested_to_raster == expected);
}

TEST_CASE("matches coordinate-enumeration oracle for all supported grids") {
    for (std::int64_t h : {2, 4, 8}) {
        for (std::int64_t w : {2, 4, 8}) {
            int max_depth = 0;
            while ((h % (1 << (max_depth + 1))) == 0 && (w % (1 << (max_depth + 1))) == 0) ++max_depth;
            for (int d = 0; d <= max_depth; ++d) {
                CAPTURE(h);
                CAPTURE(w);
                CAPTURE(d);
                auto spec = make_ordering(h, w, d);
                auto oracle = oracle::nested_of_raster(h, w, d);
                CHECK(spec.raster_to_nested == oracle);

                // bijectivity: every raster index hit exactly once
                std::vector<bool> seen(static_cast<std::size_t>(h * w), false);
                for (std::int64_t r : spec.nested_to_raster) {
                    CHECK(!seen[static_cast<std::size_t>(r)]);
                    seen[static_cast<std::size_t>(r)] = true;
                }
                // inverse consistency
                for (std::int64_t i = 0; i < h * w; ++i) {
                    CHECK(spec.raster_to_nested[static_cast<std::size_t>(
                              spec.nested_to_raster[static_cast<std::size_t>(i)])] == i);
                }
            }
        }
    }
}

TEST_CASE("sibling groups of four tile the grid as 2x2 blocks") {
    for (std::int64_t size : {4, 8, 16}) {
        for (int d = 1; (std::int64_t{1} << d) <= size / 2; ++d) {
            auto spec = make_ordering(size, size, d);
            for (std::int64_t group = 0; group < size * size / 4; ++group) {
                std::int64_t min_r = size, min_c = size;
                for (int j = 0; j < 4; ++j) {
                    const std::int64_t flat = spec.nested_to_raster[static_cast<std::size_t>(4 * group + j)];
                    min_r = std::min(min_r, flat / size);
                    min_c = std::min(min_c, flat % size);
                }
                // members are exactly the 2x2 block at (min_r, min_c), in raster order
                for (int j = 0; j < 4; ++j) {
                    const std::int64_t flat = spec.nested_to_raster[static_cast<std::size_t>(4 * group + j)];
                    CHECK(flat == (min_r + j / 2) * size + (min_c + j % 2));
                }
            }
        }
    }
}

TEST_CASE("rejects grids that do not divide into cells") {
    CHECK_THROWS_AS(make_ordering(6, 4, 2), std::invalid_argument);
    CHECK_THROWS_AS(make_ordering(0, 4, 0), std::invalid_argument);
    CHECK_THROWS_AS(make_ordering(4, 4, -1), std::invalid_argument);
}

TEST_CASE("permutation expansion helpers") {
    const std::vector<std::int64_t> perm = {2, 0, 1};
    auto rows = expand_perm_rows(perm, 2, 2);
    // destination (g, i, c) reads source (g, perm[i], c)
    REQUIRE(rows.size() == 12);
    CHECK(rows[0] == 4);
    CHECK(rows[1] == 5);
    CHECK(rows[2] == 0);
    CHECK(rows[6] == 10);

    auto pairs = expand_perm_pairs(perm, 1);
    REQUIRE(pairs.size() == 9);
    // destination (p, q) reads source (perm[p], perm[q])
    CHECK(pairs[0] == 2 * 3 + 2);
    CHECK(pairs[1] == 2 * 3 + 0);
    CHECK(pairs[3 * 1 + 2] == 0 * 3 + 1);

    CHECK_THROWS_AS(invert_permutation({0, 0}), std::invalid_argument);
    CHECK_THROWS_AS(invert_permutation({1, 2}), std::invalid_argument);
}
