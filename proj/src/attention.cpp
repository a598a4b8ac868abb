#include "ammu/attention.hpp"

namespace ammu {

std::vector<std::int64_t> rpb_pair_columns(std::int64_t wh, std::int64_t ww) {
    const std::int64_t n = wh * ww;
    std::vector<std::int64_t> cols(static_cast<std::size_t>(n * n));
    for (std::int64_t p = 0; p < n; ++p) {
        for (std::int64_t q = 0; q < n; ++q) {
            const std::int64_t drow = p / ww - q / ww;
            const std::int64_t dcol = p % ww - q % ww;
            cols[static_cast<std::size_t>(p * n + q)] =
                (drow + wh - 1) * (2 * ww - 1) + (dcol + ww - 1);
        }
    }
    return cols;
}

}  // namespace ammu
