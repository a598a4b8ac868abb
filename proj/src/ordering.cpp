#include "ammu/ordering.hpp"

#include <numeric>
#include <stdexcept>

#include "ammu/kernels.hpp"

namespace ammu {

std::string OrderingTag::str() const {
    if (kind == Kind::raster) return "raster";
    return "nested(" + std::to_string(depth) + ")";
}

OrderingSpec make_ordering(std::int64_t height, std::int64_t width, int depth) {
    if (height < 1 || width < 1 || depth < 0) {
        throw std::invalid_argument("ordering: extents must be positive and depth nonnegative");
    }
    const std::int64_t cell = std::int64_t{1} << depth;
    if (height % cell != 0 || width % cell != 0) {
        throw std::invalid_argument("ordering: grid " + std::to_string(height) + "x" +
                                    std::to_string(width) + " does not divide into 2^" +
                                    std::to_string(depth) + " cells");
    }

    OrderingSpec spec;
    spec.height = height;
    spec.width = width;
    spec.depth = depth;

    const std::int64_t n = height * width;
    Tensor<std::int64_t> cur(Shape{n});
    for (std::int64_t i = 0; i < n; ++i) cur[i] = i;

    // Unwind coarsest-first. Before step k the buffer is a raster grid of
    // h x w cells, each carrying its subtree of `payload` nested values; the
    // step splits every cell into its 2x2 children.
    for (int k = 1; k <= depth; ++k) {
        const std::int64_t h = height >> (depth - k + 1);
        const std::int64_t w = width >> (depth - k + 1);
        const std::int64_t payload = n / (4 * h * w);
        cur = reshape_permute(cur, Shape{h, w, 2, 2, payload}, {0, 2, 1, 3, 4});
        cur = reshape(cur, Shape{n});
    }

    spec.raster_to_nested.assign(cur.data(), cur.data() + n);
    spec.nested_to_raster = invert_permutation(spec.raster_to_nested);
    return spec;
}

std::vector<std::int64_t> invert_permutation(const std::vector<std::int64_t>& p) {
    std::vector<std::int64_t> inv(p.size(), -1);
    for (std::size_t i = 0; i < p.size(); ++i) {
        const std::int64_t v = p[i];
        if (v < 0 || v >= static_cast<std::int64_t>(p.size()) || inv[static_cast<std::size_t>(v)] != -1) {
            throw std::invalid_argument("invert_permutation: input is not a permutation");
        }
        inv[static_cast<std::size_t>(v)] = static_cast<std::int64_t>(i);
    }
    return inv;
}

std::vector<std::int64_t> expand_perm_rows(const std::vector<std::int64_t>& src_of_dst,
                                           std::int64_t groups, std::int64_t c) {
    const std::int64_t n = static_cast<std::int64_t>(src_of_dst.size());
    std::vector<std::int64_t> idx(static_cast<std::size_t>(groups * n * c));
    std::size_t out = 0;
    for (std::int64_t g = 0; g < groups; ++g) {
        for (std::int64_t i = 0; i < n; ++i) {
            const std::int64_t base = (g * n + src_of_dst[static_cast<std::size_t>(i)]) * c;
            for (std::int64_t ci = 0; ci < c; ++ci) idx[out++] = base + ci;
        }
    }
    return idx;
}

std::vector<std::int64_t> expand_perm_pairs(const std::vector<std::int64_t>& src_of_dst,
                                            std::int64_t groups) {
    const std::int64_t n = static_cast<std::int64_t>(src_of_dst.size());
    std::vector<std::int64_t> idx(static_cast<std::size_t>(groups * n * n));
    std::size_t out = 0;
    for (std::int64_t g = 0; g < groups; ++g) {
        for (std::int64_t p = 0; p < n; ++p) {
            const std::int64_t row = (g * n + src_of_dst[static_cast<std::size_t>(p)]) * n;
            for (std::int64_t q = 0; q < n; ++q) {
                idx[out++] = row + src_of_dst[static_cast<std::size_t>(q)];
            }
        }
    }
    return idx;
}

}  // namespace ammu
