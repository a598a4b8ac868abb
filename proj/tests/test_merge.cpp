#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "ammu/merge.hpp"
#include "ammu/oracles.hpp"
#include "ammu/rng.hpp"

using namespace ammu;

namespace {

Tensor64 random_tensor(Rng& rng, Shape shape, double lo = 0.0, double hi = 1.0) {
    return random_uniform<double>(std::move(shape), rng, lo, hi);
}

// rows normalized to sum 1; entries stay positive
Tensor64 random_stochastic(Rng& rng, Shape shape) {
    Tensor64 x = random_tensor(rng, std::move(shape), 0.05, 1.0);
    const std::int64_t n = x.dim(x.rank() - 1);
    const std::int64_t rows = x.numel() / n;
    for (std::int64_t r = 0; r < rows; ++r) {
        double sum = 0;
        for (std::int64_t j = 0; j < n; ++j) sum += x[r * n + j];
        for (std::int64_t j = 0; j < n; ++j) x[r * n + j] /= sum;
    }
    return x;
}

std::vector<double> to_vec(const Tensor64& t) {
    return std::vector<double>(t.data(), t.data() + t.numel());
}

}  // namespace

TEST_CASE("build_mask shapes and entries") {
    auto elem = build_mask<double>(4, MaskGranularity::element);
    CHECK(elem.matrix.shape() == Shape{4, 4});
    for (std::int64_t p = 0; p < 4; ++p) {
        for (std::int64_t q = 0; q < 4; ++q) {
            CHECK(elem.matrix.at({p, q}) == (p == q ? 1.0 : 0.0));
        }
    }

    auto blk4 = build_mask<double>(4, MaskGranularity::block4);
    for (std::int64_t i = 0; i < 16; ++i) CHECK(blk4.matrix[i] == 1.0);

    auto blk8 = build_mask<double>(8, MaskGranularity::block4);
    for (std::int64_t p = 0; p < 8; ++p) {
        for (std::int64_t q = 0; q < 8; ++q) {
            CHECK(blk8.matrix.at({p, q}) == (p / 4 == q / 4 ? 1.0 : 0.0));
        }
    }

    CHECK_THROWS_AS(build_mask<double>(6, MaskGranularity::block4), std::invalid_argument);
    CHECK_THROWS_AS(build_mask<double>(0, MaskGranularity::element), std::invalid_argument);

    // masks are idempotent under elementwise product
    for (auto g : {MaskGranularity::element, MaskGranularity::block4}) {
        auto m = build_mask<double>(8, g);
        Tensor64 mm = mul(m.matrix, m.matrix);
        for (std::int64_t i = 0; i < mm.numel(); ++i) CHECK(mm[i] == m.matrix[i]);
    }
}

TEST_CASE("kron_upsample4 spreads each entry over a 4x4 block") {
    Tensor64 one(Shape{1, 1, 1}, {1.0});
    Tensor64 up1 = kron_upsample4(one);
    CHECK(up1.shape() == Shape{1, 4, 4});
    for (std::int64_t i = 0; i < 16; ++i) CHECK(up1[i] == 0.25);

    Tensor64 small(Shape{1, 2, 2}, {1.0, 2.0, 3.0, 4.0});
    Tensor64 up = kron_upsample4(small);
    CHECK(up.shape() == Shape{1, 8, 8});
    for (std::int64_t p = 0; p < 8; ++p) {
        for (std::int64_t q = 0; q < 8; ++q) {
            CHECK(up.at({0, p, q}) == small.at({0, p / 4, q / 4}) / 4.0);
        }
    }

    // child row mass equals parent row mass
    Rng rng(11);
    Tensor64 am = random_stochastic(rng, {3, 5, 5});
    Tensor64 upr = kron_upsample4(am);
    for (std::int64_t g = 0; g < 3; ++g) {
        for (std::int64_t p = 0; p < 20; ++p) {
            double sum = 0;
            for (std::int64_t q = 0; q < 20; ++q) sum += upr.at({g, p, q});
            CHECK(std::abs(sum - 1.0) < 1e-12);
        }
    }

    CHECK_THROWS_AS(kron_upsample4(Tensor64(Shape{1, 2, 3})), std::invalid_argument);
}

TEST_CASE("kron_upsample4_grad is the adjoint") {
    Rng rng(13);
    Tensor64 x = random_tensor(rng, {2, 3, 3}, -1, 1);
    Tensor64 y = random_tensor(rng, {2, 12, 12}, -1, 1);
    Tensor64 ax = kron_upsample4(x);
    Tensor64 aty = kron_upsample4_grad(y);
    double lhs = 0, rhs = 0;
    for (std::int64_t i = 0; i < ax.numel(); ++i) lhs += ax[i] * y[i];
    for (std::int64_t i = 0; i < x.numel(); ++i) rhs += x[i] * aty[i];
    CHECK(std::abs(lhs - rhs) < 1e-10);
}

TEST_CASE("upsample_attention advances the nesting tag") {
    Rng rng(17);
    AttentionMap<double> raster{random_stochastic(rng, {2, 4, 4}), OrderingTag::raster(), 3};
    auto up = upsample_attention(raster);
    CHECK(up.ordering == OrderingTag::nested(1));
    CHECK(up.scale_id == 3);

    AttentionMap<double> deep{random_stochastic(rng, {2, 4, 4}), OrderingTag::nested(2), 1};
    CHECK(upsample_attention(deep).ordering == OrderingTag::nested(3));
}

TEST_CASE("renorm_rows") {
    Tensor64 x(Shape{2, 3}, {1, 1, 2, -1, 3, 0});
    Tensor64 y = renorm_rows(x);
    CHECK(y.at({0, 0}) == 0.25);
    CHECK(y.at({0, 2}) == 0.5);
    CHECK(y.at({1, 0}) == -0.5);
    CHECK(y.at({1, 1}) == 1.5);

    Tensor64 zero_row(Shape{2, 2}, {1, 1, 1, -1});
    CHECK_THROWS_AS(renorm_rows(zero_row), std::domain_error);
    Tensor64 tiny(Shape{1, 2}, {5e-13, 5e-13});
    CHECK_THROWS_AS(renorm_rows(tiny), std::domain_error);
}

TEST_CASE("merge_maps degenerate masks") {
    Rng rng(23);
    const std::int64_t heads = 2, nd = 4, nf = 16;
    AttentionMap<double> deep{random_stochastic(rng, {heads, nd, nd}), OrderingTag::raster(), 0};
    AttentionMap<double> fine{random_stochastic(rng, {heads, nf, nf}), OrderingTag::nested(1), 1};

    MaskTemplate<double> ones{MaskGranularity::element, nf, Tensor64::full(Shape{nf, nf}, 1.0)};
    auto keep_fine = merge_maps(deep, fine, ones, false);
    for (std::int64_t i = 0; i < fine.values.numel(); ++i) {
        CHECK(keep_fine.map.values[i] == fine.values[i]);
    }
    CHECK(keep_fine.map.ordering == OrderingTag::nested(1));
    CHECK(keep_fine.map.scale_id == 1);
    REQUIRE(keep_fine.source_scales.size() == 2);
    CHECK(keep_fine.source_scales[0] == 0);
    CHECK(keep_fine.source_scales[1] == 1);

    MaskTemplate<double> zeros{MaskGranularity::element, nf, Tensor64(Shape{nf, nf})};
    auto keep_deep = merge_maps(deep, fine, zeros, false);
    Tensor64 up = kron_upsample4(deep.values);
    for (std::int64_t i = 0; i < up.numel(); ++i) {
        CHECK(keep_deep.map.values[i] == up[i]);
    }

    // a single subregion: the block mask covers everything, fine wins
    AttentionMap<double> d1{random_stochastic(rng, {heads, 1, 1}), OrderingTag::raster(), 0};
    AttentionMap<double> f1{random_stochastic(rng, {heads, 4, 4}), OrderingTag::nested(1), 1};
    auto m1 = merge_maps(d1, f1, build_mask<double>(4, MaskGranularity::block4), false);
    for (std::int64_t i = 0; i < f1.values.numel(); ++i) CHECK(m1.map.values[i] == f1.values[i]);
}

TEST_CASE("merge_maps pinned off-block value") {
    // uniform deep map over 4 tokens: every upsampled entry is 1/16, kept
    // wherever the block mask is 0
    const std::int64_t heads = 1, nd = 4, nf = 16;
    Rng rng(29);
    AttentionMap<double> deep{Tensor64::full(Shape{heads, nd, nd}, 0.25), OrderingTag::raster(), 0};
    AttentionMap<double> fine{random_stochastic(rng, {heads, nf, nf}), OrderingTag::nested(1), 1};
    auto merged = merge_maps(deep, fine, build_mask<double>(nf, MaskGranularity::block4), false);
    for (std::int64_t p = 0; p < nf; ++p) {
        for (std::int64_t q = 0; q < nf; ++q) {
            if (p / 4 == q / 4) {
                CHECK(merged.map.values.at({0, p, q}) == fine.values.at({0, p, q}));
            } else {
                CHECK(merged.map.values.at({0, p, q}) == 1.0 / 16.0);
            }
        }
    }
}

TEST_CASE("merge_maps matches the literal oracle") {
    Rng rng(31);
    for (int trial = 0; trial < 40; ++trial) {
        const std::int64_t heads = rng.integer(1, 3);
        const std::int64_t nd = 4 * rng.integer(1, 3);
        const std::int64_t nf = 4 * nd;
        const bool renorm = trial % 2 == 0;
        const auto gran = trial % 4 < 2 ? MaskGranularity::block4 : MaskGranularity::element;
        AttentionMap<double> deep{random_stochastic(rng, {heads, nd, nd}), OrderingTag::raster(), 0};
        AttentionMap<double> fine{random_stochastic(rng, {heads, nf, nf}), OrderingTag::nested(1), 1};
        auto mask = build_mask<double>(nf, gran);

        auto merged = merge_maps(deep, fine, mask, renorm);
        auto expect = oracle::merge_eval(to_vec(deep.values), to_vec(fine.values),
                                         to_vec(mask.matrix), heads, nd, renorm);
        REQUIRE(merged.map.values.numel() == static_cast<std::int64_t>(expect.size()));
        for (std::int64_t i = 0; i < merged.map.values.numel(); ++i) {
            CHECK(merged.map.values[i] == expect[static_cast<std::size_t>(i)]);
        }

        if (renorm) {
            for (std::int64_t g = 0; g < heads; ++g) {
                for (std::int64_t p = 0; p < nf; ++p) {
                    double sum = 0;
                    for (std::int64_t q = 0; q < nf; ++q) sum += merged.map.values.at({g, p, q});
                    CHECK(std::abs(sum - 1.0) < 1e-12);
                }
            }
        }
    }
}

TEST_CASE("merge keeps exactly the masked region") {
    Rng rng(37);
    const std::int64_t heads = 2, nd = 8, nf = 32;
    AttentionMap<double> deep{random_stochastic(rng, {heads, nd, nd}), OrderingTag::raster(), 0};
    AttentionMap<double> fine{random_stochastic(rng, {heads, nf, nf}), OrderingTag::nested(1), 1};
    auto mask = build_mask<double>(nf, MaskGranularity::block4);
    auto merged = merge_maps(deep, fine, mask, false);
    Tensor64 up = kron_upsample4(deep.values);
    for (std::int64_t g = 0; g < heads; ++g) {
        for (std::int64_t p = 0; p < nf; ++p) {
            for (std::int64_t q = 0; q < nf; ++q) {
                const double want = mask.matrix.at({p, q}) == 1.0 ? fine.values.at({g, p, q})
                                                                  : up.at({g, p, q});
                CHECK(merged.map.values.at({g, p, q}) == want);
            }
        }
    }

    // merging a map with itself is the identity for any binary mask
    Tensor64 self = merge_core(fine.values, fine.values, mask.matrix);
    for (std::int64_t i = 0; i < self.numel(); ++i) CHECK(self[i] == fine.values[i]);
}

TEST_CASE("merge_maps validates its inputs") {
    Rng rng(41);
    AttentionMap<double> deep{random_stochastic(rng, {2, 4, 4}), OrderingTag::raster(), 0};
    AttentionMap<double> fine{random_stochastic(rng, {2, 16, 16}), OrderingTag::nested(1), 1};
    auto mask = build_mask<double>(16, MaskGranularity::block4);

    AttentionMap<double> wrong_heads{random_stochastic(rng, {3, 16, 16}), OrderingTag::nested(1), 1};
    CHECK_THROWS_AS(merge_maps(deep, wrong_heads, mask, false), std::invalid_argument);

    AttentionMap<double> wrong_tokens{random_stochastic(rng, {2, 8, 8}), OrderingTag::nested(1), 1};
    CHECK_THROWS_AS(merge_maps(deep, wrong_tokens, mask, false), std::invalid_argument);

    auto small_mask = build_mask<double>(8, MaskGranularity::block4);
    CHECK_THROWS_AS(merge_maps(deep, fine, small_mask, false), std::invalid_argument);

    AttentionMap<double> wrong_order{fine.values, OrderingTag::raster(), 1};
    CHECK_THROWS_AS(merge_maps(deep, wrong_order, mask, false), std::invalid_argument);

    // all-zero rows cannot be renormalized
    AttentionMap<double> zdeep{Tensor64(Shape{2, 4, 4}), OrderingTag::raster(), 0};
    AttentionMap<double> zfine{Tensor64(Shape{2, 16, 16}), OrderingTag::nested(1), 1};
    CHECK_THROWS_AS(merge_maps(zdeep, zfine, mask, true), std::domain_error);
}

TEST_CASE("dcm_features reorders nested tokens onto the raster grid") {
    Rng rng(43);
    for (const auto& [h, w, depth] : {std::tuple<std::int64_t, std::int64_t, int>{4, 4, 1},
                                     {8, 8, 2},
                                     {8, 8, 3},
                                     {4, 8, 2},
                                     {2, 2, 1}}) {
        OrderingSpec spec = make_ordering(h, w, depth);
        const std::int64_t b = 2, c = 3;
        Tensor64 nested = random_tensor(rng, {b, h * w, c}, -1, 1);
        Tensor64 raster = dcm_features(nested, spec);
        CHECK(raster.shape() == Shape{b, h, w, c});

        // agreement with the permutation built independently over token ids
        for (std::int64_t bi = 0; bi < b; ++bi) {
            for (std::int64_t r = 0; r < h * w; ++r) {
                for (std::int64_t ch = 0; ch < c; ++ch) {
                    CHECK(raster.at({bi, r / w, r % w, ch}) ==
                          nested.at({bi, spec.raster_to_nested[static_cast<std::size_t>(r)], ch}));
                }
            }
        }

        // bit-exact round trips both ways
        Tensor64 back = nest_features(raster, spec);
        for (std::int64_t i = 0; i < nested.numel(); ++i) CHECK(back[i] == nested[i]);
        Tensor64 again = dcm_features(back, spec);
        for (std::int64_t i = 0; i < raster.numel(); ++i) CHECK(again[i] == raster[i]);
    }

    OrderingSpec spec = make_ordering(4, 4, 1);
    CHECK_THROWS_AS(dcm_features(Tensor64(Shape{1, 8, 2}), spec), std::invalid_argument);
    CHECK_THROWS_AS(nest_features(Tensor64(Shape{1, 4, 2, 2}), spec), std::invalid_argument);
}

TEST_CASE("dcm_attention remaps both token axes") {
    Rng rng(47);
    OrderingSpec flat = make_ordering(4, 4, 0);
    AttentionMap<double> am0{random_stochastic(rng, {2, 16, 16}), OrderingTag::raster(), 0};
    auto out0 = dcm_attention(am0, flat);
    for (std::int64_t i = 0; i < am0.values.numel(); ++i) CHECK(out0.values[i] == am0.values[i]);

    OrderingSpec spec = make_ordering(4, 4, 1);
    AttentionMap<double> am{random_stochastic(rng, {2, 16, 16}), OrderingTag::nested(1), 0};
    auto out = dcm_attention(am, spec);
    CHECK(out.ordering == OrderingTag::raster());
    for (std::int64_t h = 0; h < 2; ++h) {
        for (std::int64_t p = 0; p < 16; ++p) {
            for (std::int64_t q = 0; q < 16; ++q) {
                const std::int64_t pn = spec.raster_to_nested[static_cast<std::size_t>(p)];
                const std::int64_t qn = spec.raster_to_nested[static_cast<std::size_t>(q)];
                CHECK(out.values.at({h, p, q}) == am.values.at({h, pn, qn}));
            }
        }
    }

    // permuting token identities preserves each row's distribution
    for (std::int64_t h = 0; h < 2; ++h) {
        for (std::int64_t p = 0; p < 16; ++p) {
            double sum = 0;
            for (std::int64_t q = 0; q < 16; ++q) sum += out.values.at({h, p, q});
            CHECK(std::abs(sum - 1.0) < 1e-12);
        }
    }

    AttentionMap<double> wrong_depth{am.values, OrderingTag::nested(2), 0};
    CHECK_THROWS_AS(dcm_attention(wrong_depth, spec), std::invalid_argument);
    AttentionMap<double> wrong_n{random_stochastic(rng, {2, 4, 4}), OrderingTag::nested(1), 0};
    CHECK_THROWS_AS(dcm_attention(wrong_n, spec), std::invalid_argument);
}
