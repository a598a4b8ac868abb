#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace ammu {

/// Token-order tag carried by attention maps. Nested order lists the four
/// children of every coarser-level parent contiguously, recursively, with
/// raster order at the coarsest grid and inside each 2x2 sibling group.
struct OrderingTag {
    enum class Kind { raster, nested };
    Kind kind = Kind::raster;
    int depth = 0;  // nesting levels; 0 only for raster

    static OrderingTag raster() { return {Kind::raster, 0}; }
    static OrderingTag nested(int depth) { return {Kind::nested, depth}; }
    bool operator==(const OrderingTag&) const = default;
    std::string str() const;
};

/// Bijection between nested order and raster order over a height x width
/// token grid with `depth` nesting levels.
struct OrderingSpec {
    std::int64_t height = 0;
    std::int64_t width = 0;
    int depth = 0;
    std::vector<std::int64_t> nested_to_raster;  // pi
    std::vector<std::int64_t> raster_to_nested;  // pi inverse

    std::int64_t tokens() const { return height * width; }
};

/// Builds pi by composing one reshape-permute step per nesting level. The grid
/// must divide evenly into 2^depth x 2^depth cells.
OrderingSpec make_ordering(std::int64_t height, std::int64_t width, int depth);

std::vector<std::int64_t> invert_permutation(const std::vector<std::int64_t>& p);

/// Expands a token permutation to flat gather indices. src_of_dst[i] names the
/// source token that lands at destination slot i.
/// Rows variant reorders axis 1 of a [groups, n, c] tensor; pairs variant
/// reorders both token axes of a [groups, n, n] map.
std::vector<std::int64_t> expand_perm_rows(const std::vector<std::int64_t>& src_of_dst,
                                           std::int64_t groups, std::int64_t c);
std::vector<std::int64_t> expand_perm_pairs(const std::vector<std::int64_t>& src_of_dst,
                                            std::int64_t groups);

}  // namespace ammu
