#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "ammu/attention.hpp"
#include "ammu/kernels.hpp"
#include "ammu/ordering.hpp"
#include "ammu/tensor.hpp"

namespace ammu {

enum class MaskGranularity { element, block4 };

inline const char* mask_granularity_name(MaskGranularity g) {
    return g == MaskGranularity::element ? "element" : "block4";
}

/// Binary square template selecting the region the current-scale map keeps
/// during a merge. Element granularity is the identity; block4 places 4x4
/// all-ones blocks on the diagonal, aligned to the 2x2 subregions.
template <typename T>
struct MaskTemplate {
    MaskGranularity granularity = MaskGranularity::block4;
    std::int64_t n = 0;
    Tensor<T> matrix;  // [n, n], entries in {0, 1}
};

template <typename T>
MaskTemplate<T> build_mask(std::int64_t n, MaskGranularity granularity) {
    if (n < 1) throw std::invalid_argument("build_mask: token count must be positive");
    MaskTemplate<T> m;
    m.granularity = granularity;
    m.n = n;
    m.matrix = Tensor<T>(Shape{n, n});
    if (granularity == MaskGranularity::element) {
        for (std::int64_t i = 0; i < n; ++i) m.matrix.at({i, i}) = T(1);
    } else {
        if (n % 4 != 0) {
            throw std::invalid_argument("build_mask: block granularity needs a multiple of 4, got " +
                                        std::to_string(n));
        }
        for (std::int64_t b = 0; b < n / 4; ++b) {
            for (std::int64_t p = 0; p < 4; ++p) {
                for (std::int64_t q = 0; q < 4; ++q) {
                    m.matrix.at({4 * b + p, 4 * b + q}) = T(1);
                }
            }
        }
    }
    return m;
}

// ---------------------------------------------------------------------------
// Raw map kernels, shared with the differentiable path.
// ---------------------------------------------------------------------------

/// Kronecker expansion with J4 scaled by 1/4: every entry of a [g, n, n] map
/// spreads over a 4x4 block of the [g, 4n, 4n] result. Mass-preserving, so
/// row-stochastic maps stay row-stochastic.
template <typename T>
Tensor<T> kron_upsample4(const Tensor<T>& am) {
    detail::require_rank("kron_upsample4", am.shape(), 3);
    if (am.dim(1) != am.dim(2)) {
        throw std::invalid_argument("kron_upsample4: map must be square, got " + shape_str(am.shape()));
    }
    const std::int64_t g = am.dim(0), n = am.dim(1);
    Tensor<T> y(Shape{g, 4 * n, 4 * n});
    for (std::int64_t gi = 0; gi < g; ++gi) {
        for (std::int64_t p = 0; p < n; ++p) {
            for (std::int64_t q = 0; q < n; ++q) {
                const T v = am.at({gi, p, q}) / T(4);
                for (std::int64_t dp = 0; dp < 4; ++dp) {
                    for (std::int64_t dq = 0; dq < 4; ++dq) {
                        y.at({gi, 4 * p + dp, 4 * q + dq}) = v;
                    }
                }
            }
        }
    }
    return y;
}

template <typename T>
Tensor<T> kron_upsample4_grad(const Tensor<T>& gy) {
    detail::require_rank("kron_upsample4_grad", gy.shape(), 3);
    if (gy.dim(1) != gy.dim(2) || gy.dim(1) % 4 != 0) {
        throw std::invalid_argument("kron_upsample4_grad: bad shape " + shape_str(gy.shape()));
    }
    const std::int64_t g = gy.dim(0), n = gy.dim(1) / 4;
    Tensor<T> gx(Shape{g, n, n});
    for (std::int64_t gi = 0; gi < g; ++gi) {
        for (std::int64_t p = 0; p < n; ++p) {
            for (std::int64_t q = 0; q < n; ++q) {
                T acc = T(0);
                for (std::int64_t dp = 0; dp < 4; ++dp) {
                    for (std::int64_t dq = 0; dq < 4; ++dq) {
                        acc += gy.at({gi, 4 * p + dp, 4 * q + dq});
                    }
                }
                gx.at({gi, p, q}) = acc / T(4);
            }
        }
    }
    return gx;
}

/// (1 - E) ∘ up + E ∘ fine with the [n, n] mask applied across the leading
/// group axis of two [g, n, n] maps.
template <typename T>
Tensor<T> merge_core(const Tensor<T>& up, const Tensor<T>& fine, const Tensor<T>& mask) {
    require_same_shape("merge_core", up, fine);
    detail::require_rank("merge_core", up.shape(), 3);
    if (mask.rank() != 2 || mask.dim(0) != up.dim(1) || mask.dim(1) != up.dim(2)) {
        detail::shape_fail("merge_core mask", mask.shape(), up.shape());
    }
    const std::int64_t g = up.dim(0), nn = up.dim(1) * up.dim(2);
    Tensor<T> y(up.shape());
    for (std::int64_t gi = 0; gi < g; ++gi) {
        for (std::int64_t i = 0; i < nn; ++i) {
            const T e = mask[i];
            y[gi * nn + i] = (T(1) - e) * up[gi * nn + i] + e * fine[gi * nn + i];
        }
    }
    return y;
}

/// Divides each row by its sum. Rows with |sum| <= 1e-12 are rejected.
template <typename T>
Tensor<T> renorm_rows(const Tensor<T>& x) {
    if (x.rank() < 1) throw std::invalid_argument("renorm_rows: rank must be >= 1");
    const std::int64_t n = x.dim(x.rank() - 1);
    const std::int64_t rows = x.numel() / n;
    Tensor<T> y(x.shape());
    for (std::int64_t r = 0; r < rows; ++r) {
        T sum = T(0);
        for (std::int64_t j = 0; j < n; ++j) sum += x[r * n + j];
        if (std::abs(static_cast<double>(sum)) <= 1e-12) {
            throw std::domain_error("renorm_rows: row " + std::to_string(r) + " sums to zero");
        }
        for (std::int64_t j = 0; j < n; ++j) y[r * n + j] = x[r * n + j] / sum;
    }
    return y;
}

// ---------------------------------------------------------------------------
// Tagged map operations.
// ---------------------------------------------------------------------------

/// Merged map plus the decoder levels that fed it.
template <typename T>
struct MergedAttention {
    AttentionMap<T> map;
    std::vector<int> source_scales;
};

/// Spreads a deeper map over its children. Requires a nesting-anchored
/// ordering (the deepest grid counts as depth 0); result depth grows by one.
template <typename T>
AttentionMap<T> upsample_attention(const AttentionMap<T>& am) {
    const int depth = am.ordering.kind == OrderingTag::Kind::nested ? am.ordering.depth : 0;
    return AttentionMap<T>{kron_upsample4(am.values), OrderingTag::nested(depth + 1), am.scale_id};
}

/// AM_i = (1 - E) ∘ upsample(AM_{i-1}) + E ∘ AM, optionally row-renormalized.
template <typename T>
MergedAttention<T> merge_maps(const AttentionMap<T>& deep, const AttentionMap<T>& fine,
                              const MaskTemplate<T>& mask, bool renormalize) {
    if (deep.heads() != fine.heads()) {
        throw std::invalid_argument("merge_maps: head counts differ, " + std::to_string(deep.heads()) +
                                    " vs " + std::to_string(fine.heads()));
    }
    if (fine.tokens() != 4 * deep.tokens() || mask.n != fine.tokens()) {
        throw std::invalid_argument("merge_maps: token counts " + std::to_string(deep.tokens()) + " -> " +
                                    std::to_string(fine.tokens()) + " with mask " + std::to_string(mask.n) +
                                    " do not line up");
    }
    AttentionMap<T> up = upsample_attention(deep);
    if (fine.ordering != up.ordering) {
        throw std::invalid_argument("merge_maps: fine map ordering " + fine.ordering.str() +
                                    " does not match " + up.ordering.str());
    }
    Tensor<T> merged = merge_core(up.values, fine.values, mask.matrix);
    if (renormalize) merged = renorm_rows(merged);
    MergedAttention<T> out;
    out.map = AttentionMap<T>{std::move(merged), up.ordering, fine.scale_id};
    out.source_scales = {deep.scale_id, fine.scale_id};
    return out;
}

// ---------------------------------------------------------------------------
// Dimension correspondence: nested token order <-> raster feature maps.
// ---------------------------------------------------------------------------

/// Converts [B, H*W, C] nested-order tokens to a [B, H, W, C] raster map by
/// one reshape-permute per nesting level, coarsest first.
template <typename T>
Tensor<T> dcm_features(const Tensor<T>& x, const OrderingSpec& spec) {
    detail::require_rank("dcm_features", x.shape(), 3);
    if (x.dim(1) != spec.tokens()) {
        throw std::invalid_argument("dcm_features: " + std::to_string(x.dim(1)) +
                                    " tokens do not cover a " + std::to_string(spec.height) + "x" +
                                    std::to_string(spec.width) + " grid");
    }
    const std::int64_t b = x.dim(0), c = x.dim(2), n = spec.tokens();
    Tensor<T> cur = x;
    for (int k = 1; k <= spec.depth; ++k) {
        const std::int64_t h = spec.height >> (spec.depth - k + 1);
        const std::int64_t w = spec.width >> (spec.depth - k + 1);
        const std::int64_t payload = (n / (4 * h * w)) * c;
        cur = reshape_permute(cur, Shape{b, h, w, 2, 2, payload}, {0, 1, 3, 2, 4, 5});
        cur = reshape(cur, Shape{b, n, c});
    }
    return reshape(cur, Shape{b, spec.height, spec.width, c});
}

/// Inverse of dcm_features: raster map to nested-order tokens.
template <typename T>
Tensor<T> nest_features(const Tensor<T>& x, const OrderingSpec& spec) {
    detail::require_rank("nest_features", x.shape(), 4);
    if (x.dim(1) != spec.height || x.dim(2) != spec.width) {
        throw std::invalid_argument("nest_features: map " + shape_str(x.shape()) +
                                    " does not match the " + std::to_string(spec.height) + "x" +
                                    std::to_string(spec.width) + " spec");
    }
    const std::int64_t b = x.dim(0), c = x.dim(3), n = spec.tokens();
    Tensor<T> cur = reshape(x, Shape{b, n, c});
    for (int k = spec.depth; k >= 1; --k) {
        const std::int64_t h = spec.height >> (spec.depth - k + 1);
        const std::int64_t w = spec.width >> (spec.depth - k + 1);
        const std::int64_t payload = (n / (4 * h * w)) * c;
        cur = reshape_permute(cur, Shape{b, h, 2, w, 2, payload}, {0, 1, 3, 2, 4, 5});
        cur = reshape(cur, Shape{b, n, c});
    }
    return cur;
}

/// Applies the nested-to-raster permutation to both token axes of a map:
/// out[p, q] = am[pi_inv(p), pi_inv(q)].
template <typename T>
AttentionMap<T> dcm_attention(const AttentionMap<T>& am, const OrderingSpec& spec) {
    if (am.tokens() != spec.tokens()) {
        throw std::invalid_argument("dcm_attention: map over " + std::to_string(am.tokens()) +
                                    " tokens does not match grid " + std::to_string(spec.tokens()));
    }
    const int depth = am.ordering.kind == OrderingTag::Kind::nested ? am.ordering.depth : 0;
    if (depth != spec.depth) {
        throw std::invalid_argument("dcm_attention: map ordering " + am.ordering.str() +
                                    " does not match spec depth " + std::to_string(spec.depth));
    }
    const std::vector<std::int64_t> idx = expand_perm_pairs(spec.raster_to_nested, am.heads());
    Tensor<T> out = take_flat(am.values, idx, am.values.shape());
    return AttentionMap<T>{std::move(out), OrderingTag::raster(), am.scale_id};
}

}  // namespace ammu
