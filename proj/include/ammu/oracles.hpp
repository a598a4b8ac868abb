#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace ammu::oracle {

// Reference implementations for verification, written as direct loops over
// flat buffers with no shared code with the kernels they check.

/// Dense attention with token pairs outside a diagonal block of `block`
/// tokens excluded from the softmax. block <= 0 disables masking.
/// q, k: [heads, n, dk]; bias (optional): [heads, n, n]; result [heads, n, n].
inline std::vector<double> dense_block_attention(const std::vector<double>& q,
                                                 const std::vector<double>& k,
                                                 const std::vector<double>* bias,
                                                 std::int64_t heads, std::int64_t n,
                                                 std::int64_t dk, std::int64_t block) {
    std::vector<double> out(static_cast<std::size_t>(heads * n * n), 0.0);
    const double inv = 1.0 / std::sqrt(static_cast<double>(dk));
    for (std::int64_t h = 0; h < heads; ++h) {
        for (std::int64_t p = 0; p < n; ++p) {
            std::vector<double> logits(static_cast<std::size_t>(n));
            std::vector<bool> allowed(static_cast<std::size_t>(n));
            double mx = 0.0;
            bool any = false;
            for (std::int64_t c = 0; c < n; ++c) {
                const bool ok = block <= 0 || p / block == c / block;
                allowed[static_cast<std::size_t>(c)] = ok;
                if (!ok) continue;
                double dot = 0.0;
                for (std::int64_t d = 0; d < dk; ++d) {
                    dot += q[(h * n + p) * dk + d] * k[(h * n + c) * dk + d];
                }
                double logit = dot * inv;
                if (bias) logit += (*bias)[static_cast<std::size_t>((h * n + p) * n + c)];
                logits[static_cast<std::size_t>(c)] = logit;
                mx = any ? std::max(mx, logit) : logit;
                any = true;
            }
            double sum = 0.0;
            for (std::int64_t c = 0; c < n; ++c) {
                if (allowed[static_cast<std::size_t>(c)]) {
                    sum += std::exp(logits[static_cast<std::size_t>(c)] - mx);
                }
            }
            for (std::int64_t c = 0; c < n; ++c) {
                if (allowed[static_cast<std::size_t>(c)]) {
                    out[static_cast<std::size_t>((h * n + p) * n + c)] =
                        std::exp(logits[static_cast<std::size_t>(c)] - mx) / sum;
                }
            }
        }
    }
    return out;
}

/// Literal elementwise evaluation of the merge rule on one [n, n] mask and
/// [g, 4n, 4n] maps: out = (1-E) ∘ kron_up(deep) + E ∘ fine, where
/// kron_up(deep)[p, q] = deep[p/4, q/4] / 4.
inline std::vector<double> merge_eval(const std::vector<double>& deep,
                                      const std::vector<double>& fine,
                                      const std::vector<double>& mask, std::int64_t g,
                                      std::int64_t n_deep, bool renormalize) {
    const std::int64_t n = 4 * n_deep;
    std::vector<double> out(static_cast<std::size_t>(g * n * n));
    for (std::int64_t gi = 0; gi < g; ++gi) {
        for (std::int64_t p = 0; p < n; ++p) {
            for (std::int64_t q = 0; q < n; ++q) {
                const double e = mask[static_cast<std::size_t>(p * n + q)];
                const double up =
                    deep[static_cast<std::size_t>((gi * n_deep + p / 4) * n_deep + q / 4)] / 4.0;
                const double f = fine[static_cast<std::size_t>((gi * n + p) * n + q)];
                out[static_cast<std::size_t>((gi * n + p) * n + q)] = (1.0 - e) * up + e * f;
            }
        }
        if (renormalize) {
            for (std::int64_t p = 0; p < n; ++p) {
                double sum = 0.0;
                for (std::int64_t q = 0; q < n; ++q) sum += out[static_cast<std::size_t>((gi * n + p) * n + q)];
                for (std::int64_t q = 0; q < n; ++q) out[static_cast<std::size_t>((gi * n + p) * n + q)] /= sum;
            }
        }
    }
    return out;
}

/// Nested index of every raster position, by direct digit extraction: the
/// coarse cell in raster order, then one 2x2 child digit per level.
inline std::vector<std::int64_t> nested_of_raster(std::int64_t height, std::int64_t width,
                                                  int depth) {
    std::vector<std::int64_t> out(static_cast<std::size_t>(height * width));
    const std::int64_t w0 = width >> depth;
    for (std::int64_t r = 0; r < height; ++r) {
        for (std::int64_t c = 0; c < width; ++c) {
            std::int64_t n = (r >> depth) * w0 + (c >> depth);
            for (int k = 1; k <= depth; ++k) {
                const std::int64_t rbit = (r >> (depth - k)) & 1;
                const std::int64_t cbit = (c >> (depth - k)) & 1;
                n = n * 4 + rbit * 2 + cbit;
            }
            out[static_cast<std::size_t>(r * width + c)] = n;
        }
    }
    return out;
}

}  // namespace ammu::oracle
