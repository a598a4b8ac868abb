#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "ammu/fixture.hpp"
#include "ammu/kernels.hpp"
#include "ammu/mac_counter.hpp"
#include "ammu/rng.hpp"
#include "ammu/tensor.hpp"

using namespace ammu;

TEST_CASE("tensor shape bookkeeping") {
    Tensor64 t(Shape{2, 3, 4});
    CHECK(t.rank() == 3);
    CHECK(t.numel() == 24);
    CHECK(t.at({0, 0, 0}) == 0.0);
    t.at({1, 2, 3}) = 7.0;
    CHECK(t[23] == 7.0);

    CHECK(row_major_strides({2, 3, 4}) == Shape{12, 4, 1});
    CHECK_THROWS_AS(Tensor64(Shape{2, 0}), std::invalid_argument);
    CHECK_THROWS_AS(Tensor64(Shape{2}, {1.0, 2.0, 3.0}), std::invalid_argument);
    CHECK_THROWS_AS(t.at({0, 0, 4}), std::out_of_range);
    CHECK_THROWS_AS(t.at({0, 0}), std::invalid_argument);
}

TEST_CASE("matmul reference values") {
    // identity times X returns X
    Tensor64 eye(Shape{3, 3});
    for (int i = 0; i < 3; ++i) eye.at({i, i}) = 1.0;
    Rng rng(11);
    Tensor64 x = random_uniform<double>(Shape{3, 5}, rng, -1.0, 1.0);
    Tensor64 ix = matmul(eye, x);
    for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(ix[i] == x[i]);

    Tensor64 z(Shape{2, 3});
    Tensor64 ones = Tensor64::full(Shape{3, 4}, 1.0);
    Tensor64 zo = matmul(z, ones);
    for (std::int64_t i = 0; i < zo.numel(); ++i) CHECK(zo[i] == 0.0);

    Tensor64 a(Shape{2, 2}, {1, 2, 3, 4});
    Tensor64 b(Shape{2, 1}, {5, 6});
    Tensor64 c = matmul(a, b);
    CHECK(c.shape() == Shape{2, 1});
    CHECK(c[0] == 17.0);
    CHECK(c[1] == 39.0);

    CHECK_THROWS_WITH_AS(matmul(a, Tensor64(Shape{3, 2})),
                         doctest::Contains("[2, 2]"), std::invalid_argument);
}

TEST_CASE("matmul transposed variants agree with explicit transposes") {
    Rng rng(17);
    Tensor64 a = random_uniform<double>(Shape{4, 6}, rng, -1.0, 1.0);
    Tensor64 b = random_uniform<double>(Shape{6, 5}, rng, -1.0, 1.0);
    Tensor64 ref = matmul(a, b);

    Tensor64 bt = transpose(b, {1, 0});
    Tensor64 at = transpose(a, {1, 0});
    Tensor64 via_nt = matmul_nt(a, bt);
    Tensor64 via_tn = matmul_tn(at, b);
    for (std::int64_t i = 0; i < ref.numel(); ++i) {
        CHECK(via_nt[i] == doctest::Approx(ref[i]).epsilon(1e-12));
        CHECK(via_tn[i] == doctest::Approx(ref[i]).epsilon(1e-12));
    }
}

TEST_CASE("batched matmul equals per-slice matmul") {
    Rng rng(23);
    Tensor64 a = random_uniform<double>(Shape{3, 4, 2}, rng, -1.0, 1.0);
    Tensor64 b = random_uniform<double>(Shape{3, 2, 5}, rng, -1.0, 1.0);
    Tensor64 c = bmm(a, b);
    for (int g = 0; g < 3; ++g) {
        Tensor64 as(Shape{4, 2}, std::vector<double>(a.data() + g * 8, a.data() + (g + 1) * 8));
        Tensor64 bs(Shape{2, 5}, std::vector<double>(b.data() + g * 10, b.data() + (g + 1) * 10));
        Tensor64 cs = matmul(as, bs);
        for (std::int64_t i = 0; i < 20; ++i) CHECK(c[g * 20 + i] == cs[i]);
    }

    Tensor64 bt = transpose(b, {0, 2, 1});
    Tensor64 at = transpose(a, {0, 2, 1});
    Tensor64 via_nt = bmm_nt(a, bt);
    Tensor64 via_tn = bmm_tn(at, b);
    for (std::int64_t i = 0; i < c.numel(); ++i) {
        CHECK(via_nt[i] == doctest::Approx(c[i]).epsilon(1e-12));
        CHECK(via_tn[i] == doctest::Approx(c[i]).epsilon(1e-12));
    }
}

TEST_CASE("matmul associativity on well-conditioned inputs") {
    Rng rng(31);
    Tensor64 a = random_uniform<double>(Shape{8, 8}, rng, -1.0, 1.0);
    Tensor64 b = random_uniform<double>(Shape{8, 8}, rng, -1.0, 1.0);
    Tensor64 c = random_uniform<double>(Shape{8, 8}, rng, -1.0, 1.0);
    Tensor64 left = matmul(matmul(a, b), c);
    Tensor64 right = matmul(a, matmul(b, c));
    for (std::int64_t i = 0; i < left.numel(); ++i) {
        CHECK(std::abs(left[i] - right[i]) <= 1e-10 * std::max(1.0, std::abs(left[i])));
    }
}

TEST_CASE("softmax_rows reference values and properties") {
    Tensor64 flat(Shape{4}, {0, 0, 0, 0});
    Tensor64 sf = softmax_rows(flat);
    for (int i = 0; i < 4; ++i) CHECK(sf[i] == doctest::Approx(0.25).epsilon(1e-12));

    Tensor64 big(Shape{2}, {1000, 0});
    Tensor64 sb = softmax_rows(big);
    CHECK(sb[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(sb[1] < 1e-300);
    CHECK(std::isfinite(sb[0]));

    Tensor64 ref(Shape{3}, {1, 2, 3});
    Tensor64 sr = softmax_rows(ref);
    CHECK(std::abs(sr[0] - 0.09003057317038046) < 1e-7);
    CHECK(std::abs(sr[1] - 0.24472847105479767) < 1e-7);
    CHECK(std::abs(sr[2] - 0.66524095577482190) < 1e-7);

    Tensor64 bad(Shape{2}, {1.0, std::nan("")});
    CHECK_THROWS_AS(softmax_rows(bad), std::domain_error);
    Tensor64 inf_in(Shape{2}, {1.0, HUGE_VAL});
    CHECK_THROWS_AS(softmax_rows(inf_in), std::domain_error);

    // rows sum to 1 for random tensors of several ranks
    Rng rng(41);
    for (int trial = 0; trial < 20; ++trial) {
        Shape shape;
        int rank = 1 + static_cast<int>(rng.integer(0, 2));
        for (int i = 0; i < rank; ++i) shape.push_back(rng.integer(1, 6));
        Tensor64 x = random_uniform<double>(shape, rng, -50.0, 50.0);
        Tensor64 y = softmax_rows(x);
        const std::int64_t n = shape.back();
        for (std::int64_t r = 0; r < y.numel() / n; ++r) {
            double sum = 0;
            for (std::int64_t j = 0; j < n; ++j) {
                CHECK(y[r * n + j] >= 0.0);
                sum += y[r * n + j];
            }
            CHECK(std::abs(sum - 1.0) < 1e-6);
        }
    }
}

TEST_CASE("reshape_permute basics and invertibility") {
    Tensor64 x(Shape{6}, {0, 1, 2, 3, 4, 5});
    Tensor64 same = reshape_permute(x, {2, 3}, {0, 1});
    CHECK(same.shape() == Shape{2, 3});
    for (int i = 0; i < 6; ++i) CHECK(same[i] == x[i]);

    Tensor64 t = reshape_permute(x, {2, 3}, {1, 0});
    CHECK(t.shape() == Shape{3, 2});
    CHECK(t.at({0, 0}) == 0);
    CHECK(t.at({0, 1}) == 3);
    CHECK(t.at({2, 1}) == 5);

    CHECK_THROWS_AS(reshape(x, {4, 2}), std::invalid_argument);
    CHECK_THROWS_AS(transpose(same, {0, 0}), std::invalid_argument);
    CHECK_THROWS_AS(transpose(same, {0, 2}), std::invalid_argument);

    Rng rng(59);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor64 v = random_uniform<double>(Shape{2, 3, 4, 5}, rng, -1.0, 1.0);
        std::vector<int> axes = {0, 1, 2, 3};
        for (int i = 3; i > 0; --i) std::swap(axes[i], axes[rng.integer(0, i)]);
        Tensor64 p = transpose(v, axes);
        std::vector<int> inverse(4);
        for (int i = 0; i < 4; ++i) inverse[axes[i]] = i;
        Tensor64 back = transpose(p, inverse);
        CHECK(back.shape() == v.shape());
        for (std::int64_t i = 0; i < v.numel(); ++i) CHECK(back[i] == v[i]);
    }
}

TEST_CASE("conv2d matches direct dense evaluation") {
    Rng rng(61);
    const int b = 2, h = 5, w = 4, ci = 3, co = 2, kh = 3, kw = 3, stride = 2, pad = 1;
    Tensor64 x = random_uniform<double>(Shape{b, h, w, ci}, rng, -1.0, 1.0);
    Tensor64 wt = random_uniform<double>(Shape{kh, kw, ci, co}, rng, -1.0, 1.0);
    Tensor64 bias = random_uniform<double>(Shape{co}, rng, -1.0, 1.0);
    Tensor64 y = conv2d(x, wt, &bias, stride, pad);
    const int oh = (h + 2 * pad - kh) / stride + 1;
    const int ow = (w + 2 * pad - kw) / stride + 1;
    CHECK(y.shape() == Shape{b, oh, ow, co});
    for (int bi = 0; bi < b; ++bi) {
        for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
                for (int c = 0; c < co; ++c) {
                    double acc = bias[c];
                    for (int u = 0; u < kh; ++u) {
                        for (int v = 0; v < kw; ++v) {
                            int iy = oy * stride - pad + u;
                            int ix = ox * stride - pad + v;
                            if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                            for (int cc = 0; cc < ci; ++cc) {
                                acc += x.at({bi, iy, ix, cc}) * wt.at({u, v, cc, c});
                            }
                        }
                    }
                    CHECK(y.at({bi, oy, ox, c}) == doctest::Approx(acc).epsilon(1e-12));
                }
            }
        }
    }
}

TEST_CASE("elementwise ops and reductions") {
    Tensor64 a(Shape{2, 2}, {1, 2, 3, 4});
    Tensor64 b(Shape{2, 2}, {10, 20, 30, 40});
    CHECK(add(a, b)[3] == 44.0);
    CHECK(sub(b, a)[0] == 9.0);
    CHECK(mul(a, b)[2] == 90.0);
    CHECK(scale(a, 0.5)[1] == 1.0);
    CHECK(map_tanh(a)[0] == doctest::Approx(std::tanh(1.0)));
    CHECK(sum_all(a) == 10.0);
    Tensor64 v(Shape{2}, {100, 200});
    Tensor64 av = add_rowvec(a, v);
    CHECK(av[0] == 101.0);
    CHECK(av[3] == 204.0);
    Tensor64 cs = colsum_last(a);
    CHECK(cs[0] == 4.0);
    CHECK(cs[1] == 6.0);
    CHECK_THROWS_AS(add(a, Tensor64(Shape{4})), std::invalid_argument);

    Tensor64 ab = concat_last(a, b);
    CHECK(ab.shape() == Shape{2, 4});
    CHECK(ab[2] == 10.0);
    CHECK(ab[5] == 4.0);

    Tensor<int32_t> am = argmax_last(Tensor64(Shape{2, 3}, {1, 5, 2, 7, 0, 7}));
    CHECK(am[0] == 1);
    CHECK(am[1] == 0);  // first index wins ties
}

TEST_CASE("gather and scatter round-trip") {
    Tensor64 x(Shape{4}, {10, 11, 12, 13});
    std::vector<std::int64_t> perm = {2, 0, 3, 1};
    Tensor64 g = take_flat(x, perm, Shape{4});
    CHECK(g[0] == 12.0);
    std::vector<std::int64_t> inverse(4);
    for (int i = 0; i < 4; ++i) inverse[perm[i]] = i;
    Tensor64 back = take_flat(g, inverse, Shape{4});
    for (int i = 0; i < 4; ++i) CHECK(back[i] == x[i]);

    Tensor64 s = scatter_add_flat(g, perm, Shape{4});
    for (int i = 0; i < 4; ++i) CHECK(s[i] == x[i]);
    std::vector<std::int64_t> dup = {0, 0, 1, 1};
    Tensor64 d = scatter_add_flat(x, dup, Shape{2});
    CHECK(d[0] == 21.0);
    CHECK(d[1] == 25.0);
    CHECK_THROWS_AS(take_flat(x, {4}, Shape{1}), std::out_of_range);
}

TEST_CASE("upsampling kernels and their adjoints") {
    Rng rng(71);
    Tensor64 x = random_uniform<double>(Shape{2, 2, 3, 2}, rng, -1.0, 1.0);
    Tensor64 y = upsample2x_nhwc(x);
    CHECK(y.shape() == Shape{2, 4, 6, 2});
    for (int bi = 0; bi < 2; ++bi) {
        for (int oy = 0; oy < 4; ++oy) {
            for (int ox = 0; ox < 6; ++ox) {
                for (int c = 0; c < 2; ++c) {
                    CHECK(y.at({bi, oy, ox, c}) == x.at({bi, oy / 2, ox / 2, c}));
                }
            }
        }
    }

    Tensor64 r = random_uniform<double>(Shape{1, 3, 2}, rng, -1.0, 1.0);
    Tensor64 rr = repeat_rows4(r);
    CHECK(rr.shape() == Shape{1, 12, 2});
    for (int i = 0; i < 3; ++i) {
        for (int k = 0; k < 4; ++k) {
            CHECK(rr.at({0, 4 * i + k, 0}) == r.at({0, i, 0}));
            CHECK(rr.at({0, 4 * i + k, 1}) == r.at({0, i, 1}));
        }
    }

    // adjoint identity <A x, y> == <x, A* y> for both upsamplers
    Tensor64 gy = random_uniform<double>(Shape{2, 4, 6, 2}, rng, -1.0, 1.0);
    double lhs = sum_all(mul(y, gy));
    double rhs = sum_all(mul(x, upsample2x_nhwc_grad(gy)));
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));

    Tensor64 gr = random_uniform<double>(Shape{1, 12, 2}, rng, -1.0, 1.0);
    double lhs2 = sum_all(mul(rr, gr));
    double rhs2 = sum_all(mul(r, repeat_rows4_grad(gr)));
    CHECK(lhs2 == doctest::Approx(rhs2).epsilon(1e-12));
}

TEST_CASE("mac counter records matmul and conv work") {
    CHECK_FALSE(mac_scope_active());
    Rng rng(83);
    Tensor64 a = random_uniform<double>(Shape{3, 4}, rng, -1.0, 1.0);
    Tensor64 b = random_uniform<double>(Shape{4, 5}, rng, -1.0, 1.0);
    {
        MacScope outer("outer");
        matmul(a, b);
        CHECK(outer.macs() == 3 * 4 * 5);
        {
            MacScope inner("inner");
            matmul(a, b);
            CHECK(inner.macs() == 3 * 4 * 5);
            CHECK_THROWS_AS(MacScope("outer"), std::logic_error);
        }
        // two sequential products accumulate
        CHECK(outer.macs() == 2 * 3 * 4 * 5);
    }
    CHECK_FALSE(mac_scope_active());

    // conv2d counts executed taps only: 1x1 input, 3x3 kernel, pad 1 has a
    // single valid tap per (ci, co) pair
    Tensor64 x(Shape{1, 1, 1, 2}, {1.0, 2.0});
    Tensor64 w(Shape{3, 3, 2, 3});
    MacScope scope("conv");
    conv2d<double>(x, w, nullptr, 1, 1);
    CHECK(scope.macs() == 2 * 3);
}

TEST_CASE("mac counts are additive and repeatable") {
    Rng rng(89);
    Tensor64 a = random_uniform<double>(Shape{6, 7}, rng, -1.0, 1.0);
    Tensor64 b = random_uniform<double>(Shape{7, 8}, rng, -1.0, 1.0);
    std::uint64_t first, second;
    {
        MacScope s("run");
        matmul(a, b);
        softmax_rows(a);  // not counted
        matmul_nt(a, transpose(b, {1, 0}));
        first = s.macs();
    }
    {
        MacScope s("run");
        matmul(a, b);
        matmul_nt(a, transpose(b, {1, 0}));
        second = s.macs();
    }
    CHECK(first == second);
    CHECK(first == 2ull * 6 * 7 * 8);
}

TEST_CASE("fixture round-trips f64 bit-exactly and f32 exactly") {
    Rng rng(97);
    Tensor64 a = random_uniform<double>(Shape{3, 5}, rng, -10.0, 10.0);
    a[0] = 0.1;  // not exactly representable
    a[1] = -1.0 / 3.0;
    a[2] = 1e-300;
    a[3] = 12345678901234567.0;
    Tensor32 b(Shape{2, 2}, {0.1f, -2.5f, 3.14159274f, 1e-30f});

    std::ostringstream os;
    fixture::write_records(os, {fixture::record_of("alpha", a), fixture::record_of("beta", b)});

    std::istringstream is(os.str());
    auto records = fixture::read_records(is);
    REQUIRE(records.size() == 2);
    CHECK(records[0].name == "alpha");
    CHECK(records[0].dtype == "f64");
    Tensor64 a2 = records[0].as_f64();
    REQUIRE(a2.shape() == a.shape());
    for (std::int64_t i = 0; i < a.numel(); ++i) CHECK(a2[i] == a[i]);

    CHECK(records[1].dtype == "f32");
    Tensor32 b2 = records[1].as_f32();
    for (std::int64_t i = 0; i < b.numel(); ++i) CHECK(b2[i] == b[i]);

    // a second write of the parsed records reproduces the document byte for byte
    std::ostringstream os2;
    fixture::write_records(os2, records);
    CHECK(os.str() == os2.str());

    std::istringstream junk("wrong.header\n");
    CHECK_THROWS_AS(fixture::read_records(junk), std::runtime_error);
}
