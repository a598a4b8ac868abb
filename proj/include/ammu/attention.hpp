#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "ammu/kernels.hpp"
#include "ammu/ordering.hpp"
#include "ammu/tensor.hpp"

namespace ammu {

/// Per-head token features feeding one attention block, each [heads, n, d_k].
template <typename T>
struct AttentionInputs {
    Tensor<T> q, k, v;

    std::int64_t heads() const { return q.dim(0); }
    std::int64_t tokens() const { return q.dim(1); }
    std::int64_t head_dim() const { return q.dim(2); }

    void validate() const {
        detail::require_rank("attention inputs", q.shape(), 3);
        if (!q.same_shape(k) || !q.same_shape(v)) {
            throw std::invalid_argument("attention inputs must share one shape, got q " +
                                        shape_str(q.shape()) + ", k " + shape_str(k.shape()) +
                                        ", v " + shape_str(v.shape()));
        }
    }
};

/// Relative position bias over a wh x ww window, one row of
/// (2wh-1)(2ww-1) entries per head, shared by every subregion of a module.
template <typename T>
struct RPBTable {
    std::int64_t wh = 0, ww = 0;
    Tensor<T> values;  // [heads, (2wh-1)(2ww-1)]

    std::int64_t cols() const { return (2 * wh - 1) * (2 * ww - 1); }

    void validate() const {
        if (wh < 1 || ww < 1) throw std::invalid_argument("rpb window extents must be positive");
        detail::require_rank("rpb table", values.shape(), 2);
        if (values.dim(1) != cols()) {
            throw std::invalid_argument("rpb table for " + std::to_string(wh) + "x" + std::to_string(ww) +
                                        " window needs " + std::to_string(cols()) + " columns, got " +
                                        std::to_string(values.dim(1)));
        }
    }
};

/// Table column for the offset between window positions p and q, both in
/// window raster order: (drow + wh - 1) * (2ww - 1) + (dcol + ww - 1).
std::vector<std::int64_t> rpb_pair_columns(std::int64_t wh, std::int64_t ww);

/// Per-head square mixing weights over tokens at one scale.
template <typename T>
struct AttentionMap {
    Tensor<T> values;  // [heads, n, n]
    OrderingTag ordering;
    int scale_id = 0;

    std::int64_t heads() const { return values.dim(0); }
    std::int64_t tokens() const { return values.dim(1); }
};

/// Gathers the table into a dense [heads, n, n] bias for an n = wh*ww window.
template <typename T>
Tensor<T> rpb_expand(const RPBTable<T>& rpb) {
    rpb.validate();
    const std::int64_t heads = rpb.values.dim(0);
    const std::int64_t n = rpb.wh * rpb.ww;
    const std::vector<std::int64_t> cols = rpb_pair_columns(rpb.wh, rpb.ww);
    std::vector<std::int64_t> idx(static_cast<std::size_t>(heads * n * n));
    std::size_t out = 0;
    for (std::int64_t h = 0; h < heads; ++h) {
        for (std::int64_t pq = 0; pq < n * n; ++pq) {
            idx[out++] = h * rpb.cols() + cols[static_cast<std::size_t>(pq)];
        }
    }
    return take_flat(rpb.values, idx, Shape{heads, n, n});
}

/// softmax(Q Kᵀ / sqrt(d_k) + bias) per head. A table is optional; when given,
/// its window must cover the token count exactly.
template <typename T>
AttentionMap<T> attention_map(const AttentionInputs<T>& in, const RPBTable<T>* rpb,
                              OrderingTag ordering = OrderingTag::raster(), int scale_id = 0) {
    in.validate();
    Tensor<T> scores = bmm_nt(in.q, in.k);
    scores = scale(scores, static_cast<T>(1.0 / std::sqrt(static_cast<double>(in.head_dim()))));
    if (rpb) {
        rpb->validate();
        if (rpb->wh * rpb->ww != in.tokens() || rpb->values.dim(0) != in.heads()) {
            throw std::invalid_argument("rpb window " + std::to_string(rpb->wh) + "x" +
                                        std::to_string(rpb->ww) + " does not cover " +
                                        std::to_string(in.tokens()) + " tokens / " +
                                        std::to_string(in.heads()) + " heads");
        }
        scores = add(scores, rpb_expand(*rpb));
    }
    return AttentionMap<T>{softmax_rows(scores), ordering, scale_id};
}

/// AM · V per head; rows of a stochastic map make this a convex mixer.
template <typename T>
Tensor<T> attention_output(const AttentionMap<T>& am, const Tensor<T>& v) {
    detail::require_rank("attention_output", v.shape(), 3);
    if (am.values.dim(0) != v.dim(0) || am.values.dim(1) != v.dim(1)) {
        detail::shape_fail("attention_output", am.values.shape(), v.shape());
    }
    return bmm(am.values, v);
}

/// Splits a raster feature map into 2x2 subregions, raster order over
/// subregions and inside each one. The result axis 1 enumerates tokens in
/// nested(1) order.
template <typename T>
Tensor<T> partition_2x2(const Tensor<T>& x) {
    detail::require_rank("partition_2x2", x.shape(), 4);
    const std::int64_t b = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
    if (h % 2 != 0 || w % 2 != 0) {
        throw std::invalid_argument("partition_2x2: extents must be even, got " + shape_str(x.shape()));
    }
    Tensor<T> y = reshape_permute(x, Shape{b, h / 2, 2, w / 2, 2, c}, {0, 1, 3, 2, 4, 5});
    return reshape(y, Shape{b, (h / 2) * (w / 2), 4, c});
}

template <typename T>
Tensor<T> unpartition_2x2(const Tensor<T>& x, std::int64_t h, std::int64_t w) {
    detail::require_rank("unpartition_2x2", x.shape(), 4);
    const std::int64_t b = x.dim(0), c = x.dim(3);
    if (x.dim(1) * x.dim(2) != h * w || x.dim(2) != 4) {
        throw std::invalid_argument("unpartition_2x2: shape " + shape_str(x.shape()) +
                                    " does not cover a " + std::to_string(h) + "x" + std::to_string(w) +
                                    " grid");
    }
    Tensor<T> y = reshape_permute(x, Shape{b, h / 2, w / 2, 2, 2, c}, {0, 1, 3, 2, 4, 5});
    return reshape(y, Shape{b, h, w, c});
}

/// Bias-free projection weights shared by every subregion of a module.
template <typename T>
struct QkvWeights {
    Tensor<T> wq, wk, wv;  // each [C, C_inner], C_inner divisible by heads
};

/// Splits [n, heads*dk] features into [heads, n, dk].
template <typename T>
Tensor<T> split_heads(const Tensor<T>& x, std::int64_t heads) {
    detail::require_rank("split_heads", x.shape(), 2);
    if (x.dim(1) % heads != 0) {
        throw std::invalid_argument("split_heads: " + std::to_string(x.dim(1)) +
                                    " channels do not divide into " + std::to_string(heads) + " heads");
    }
    return reshape_permute(x, Shape{x.dim(0), heads, x.dim(1) / heads}, {1, 0, 2});
}

template <typename T>
Tensor<T> merge_heads(const Tensor<T>& x) {
    detail::require_rank("merge_heads", x.shape(), 3);
    Tensor<T> y = transpose(x, {1, 0, 2});
    return reshape(y, Shape{x.dim(1), x.dim(0) * x.dim(2)});
}

/// Q/K/V per head for one token block in row order.
template <typename T>
AttentionInputs<T> project_qkv(const Tensor<T>& tokens, const QkvWeights<T>& w, std::int64_t heads) {
    detail::require_rank("project_qkv", tokens.shape(), 2);
    return AttentionInputs<T>{split_heads(matmul(tokens, w.wq), heads),
                              split_heads(matmul(tokens, w.wk), heads),
                              split_heads(matmul(tokens, w.wv), heads)};
}

/// Attention restricted to each 2x2 subregion of a raster feature map, with
/// projections and the 9-entry table shared across subregions. Maps come back
/// in subregion raster order.
template <typename T>
std::vector<AttentionMap<T>> gmsa_subregion_maps(const Tensor<T>& x /* [H, W, C] */,
                                                 const QkvWeights<T>& w, std::int64_t heads,
                                                 const RPBTable<T>& rpb, int scale_id = 0) {
    detail::require_rank("gmsa_subregion_maps", x.shape(), 3);
    rpb.validate();
    if (rpb.wh != 2 || rpb.ww != 2) {
        throw std::invalid_argument("gmsa table must cover a 2x2 window");
    }
    const std::int64_t h = x.dim(0), wdt = x.dim(1), c = x.dim(2);
    Tensor<T> windows = partition_2x2(reshape(x, Shape{1, h, wdt, c}));  // [1, N, 4, C]
    const std::int64_t n_sub = windows.dim(1);
    std::vector<AttentionMap<T>> maps;
    maps.reserve(static_cast<std::size_t>(n_sub));
    for (std::int64_t s = 0; s < n_sub; ++s) {
        std::vector<T> block(windows.data() + s * 4 * c, windows.data() + (s + 1) * 4 * c);
        Tensor<T> tokens(Shape{4, c}, std::move(block));
        AttentionInputs<T> qkv = project_qkv(tokens, w, heads);
        maps.push_back(attention_map(qkv, &rpb, OrderingTag::raster(), scale_id));
    }
    return maps;
}

/// Block-diagonal assembly: token p attends to q only within its subregion.
template <typename T>
AttentionMap<T> gmsa_assemble(const std::vector<AttentionMap<T>>& blocks, OrderingTag ordering,
                              int scale_id = 0) {
    if (blocks.empty()) throw std::invalid_argument("gmsa_assemble: no blocks");
    const Shape& bs = blocks.front().values.shape();
    for (const auto& b : blocks) {
        if (b.values.shape() != bs) {
            detail::shape_fail("gmsa_assemble", bs, b.values.shape());
        }
    }
    const std::int64_t heads = bs[0], nb = bs[1];
    const std::int64_t n = nb * static_cast<std::int64_t>(blocks.size());
    Tensor<T> out(Shape{heads, n, n});
    for (std::size_t s = 0; s < blocks.size(); ++s) {
        const Tensor<T>& v = blocks[s].values;
        const std::int64_t off = static_cast<std::int64_t>(s) * nb;
        for (std::int64_t h = 0; h < heads; ++h) {
            for (std::int64_t p = 0; p < nb; ++p) {
                for (std::int64_t q = 0; q < nb; ++q) {
                    out.at({h, off + p, off + q}) = v.at({h, p, q});
                }
            }
        }
    }
    return AttentionMap<T>{std::move(out), ordering, scale_id};
}

}  // namespace ammu
