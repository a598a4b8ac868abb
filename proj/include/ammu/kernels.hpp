#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "ammu/mac_counter.hpp"
#include "ammu/tensor.hpp"

namespace ammu {

namespace detail {

// Work thresholds below which the OpenMP kernels stay on the calling thread.
constexpr std::int64_t kMatGrain = 1 << 15;
constexpr std::int64_t kRowGrain = 1 << 12;

[[noreturn]] inline void shape_fail(const std::string& op, const Shape& a, const Shape& b) {
    throw std::invalid_argument(op + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

inline void require_rank(const std::string& op, const Shape& s, int rank) {
    if (static_cast<int>(s.size()) != rank) {
        throw std::invalid_argument(op + ": expected rank " + std::to_string(rank) + ", got shape " + shape_str(s));
    }
}

template <typename T>
void require_finite(const std::string& op, const Tensor<T>& x) {
    for (std::int64_t i = 0; i < x.numel(); ++i) {
        if (!std::isfinite(x[i])) {
            throw std::domain_error(op + ": non-finite input at flat index " + std::to_string(i));
        }
    }
}

template <typename T>
void check_mm(const std::string& op, const Tensor<T>& a, const Tensor<T>& b, int rank,
              int ka, int kb) {
    require_rank(op, a.shape(), rank);
    require_rank(op, b.shape(), rank);
    bool batch_ok = true;
    for (int i = 0; i + 2 < rank; ++i) batch_ok = batch_ok && a.dim(i) == b.dim(i);
    if (!batch_ok || a.dim(ka) != b.dim(kb)) shape_fail(op, a.shape(), b.shape());
}

// Inner-product row kernels shared by the 2-d and batched variants.
// c[i,:] accumulates over k in ascending order regardless of schedule, so
// parallel and serial runs produce identical bits.
template <typename T>
inline void mm_row(const T* a, const T* b, T* c, std::int64_t i, std::int64_t k, std::int64_t n) {
    T* ci = c + i * n;
    for (std::int64_t j = 0; j < n; ++j) ci[j] = T(0);
    const T* ai = a + i * k;
    for (std::int64_t p = 0; p < k; ++p) {
        const T aip = ai[p];
        const T* bp = b + p * n;
        for (std::int64_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
}

template <typename T>
inline void mm_nt_row(const T* a, const T* b, T* c, std::int64_t i, std::int64_t k, std::int64_t n) {
    T* ci = c + i * n;
    const T* ai = a + i * k;
    for (std::int64_t j = 0; j < n; ++j) {
        const T* bj = b + j * k;
        T acc = T(0);
        for (std::int64_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
        ci[j] = acc;
    }
}

template <typename T>
inline void mm_tn_row(const T* a, const T* b, T* c, std::int64_t i, std::int64_t m, std::int64_t k,
                      std::int64_t n) {
    T* ci = c + i * n;
    for (std::int64_t j = 0; j < n; ++j) ci[j] = T(0);
    for (std::int64_t p = 0; p < k; ++p) {
        const T api = a[p * m + i];
        const T* bp = b + p * n;
        for (std::int64_t j = 0; j < n; ++j) ci[j] += api * bp[j];
    }
}

template <typename T>
inline void softmax_row(const T* x, T* y, std::int64_t n) {
    T mx = x[0];
    for (std::int64_t j = 1; j < n; ++j) mx = std::max(mx, x[j]);
    T sum = T(0);
    for (std::int64_t j = 0; j < n; ++j) {
        y[j] = std::exp(x[j] - mx);
        sum += y[j];
    }
    for (std::int64_t j = 0; j < n; ++j) y[j] /= sum;
}

struct ConvGeom {
    std::int64_t batch, in_h, in_w, in_c, k_h, k_w, out_c, out_h, out_w;
    int stride, pad;
};

template <typename T>
ConvGeom conv_geom(const std::string& op, const Tensor<T>& x, const Shape& w_shape, int stride, int pad) {
    require_rank(op, x.shape(), 4);
    if (w_shape.size() != 4) {
        throw std::invalid_argument(op + ": weight must be [kh, kw, Cin, Cout], got " + shape_str(w_shape));
    }
    if (stride < 1 || pad < 0) {
        throw std::invalid_argument(op + ": stride must be >= 1 and pad >= 0");
    }
    ConvGeom g;
    g.batch = x.dim(0);
    g.in_h = x.dim(1);
    g.in_w = x.dim(2);
    g.in_c = x.dim(3);
    g.k_h = w_shape[0];
    g.k_w = w_shape[1];
    g.out_c = w_shape[3];
    g.stride = stride;
    g.pad = pad;
    if (w_shape[2] != g.in_c) shape_fail(op, x.shape(), w_shape);
    g.out_h = (g.in_h + 2 * pad - g.k_h) / stride + 1;
    g.out_w = (g.in_w + 2 * pad - g.k_w) / stride + 1;
    if (g.out_h < 1 || g.out_w < 1) {
        throw std::invalid_argument(op + ": kernel does not fit input " + shape_str(x.shape()));
    }
    return g;
}

// Valid (in-bounds) tap pairs factor over rows and columns, which gives the
// executed-MAC count in closed form.
inline std::int64_t conv_valid_taps(std::int64_t out_n, std::int64_t k_n, std::int64_t in_n,
                                    int stride, int pad) {
    std::int64_t valid = 0;
    for (std::int64_t o = 0; o < out_n; ++o) {
        for (std::int64_t t = 0; t < k_n; ++t) {
            std::int64_t p = o * stride - pad + t;
            if (p >= 0 && p < in_n) ++valid;
        }
    }
    return valid;
}

template <typename T>
inline void conv_out_pixel(const ConvGeom& g, const T* x, const T* w, const T* bias, T* out,
                           std::int64_t b, std::int64_t oy, std::int64_t ox) {
    T* o = out + ((b * g.out_h + oy) * g.out_w + ox) * g.out_c;
    for (std::int64_t c = 0; c < g.out_c; ++c) o[c] = bias ? bias[c] : T(0);
    for (std::int64_t kh = 0; kh < g.k_h; ++kh) {
        std::int64_t iy = oy * g.stride - g.pad + kh;
        if (iy < 0 || iy >= g.in_h) continue;
        for (std::int64_t kw = 0; kw < g.k_w; ++kw) {
            std::int64_t ix = ox * g.stride - g.pad + kw;
            if (ix < 0 || ix >= g.in_w) continue;
            const T* xp = x + ((b * g.in_h + iy) * g.in_w + ix) * g.in_c;
            const T* wp = w + (kh * g.k_w + kw) * g.in_c * g.out_c;
            for (std::int64_t ci = 0; ci < g.in_c; ++ci) {
                const T xv = xp[ci];
                const T* wc = wp + ci * g.out_c;
                for (std::int64_t c = 0; c < g.out_c; ++c) o[c] += xv * wc[c];
            }
        }
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Matmul family. a:[m,k] b:[k,n] -> [m,n]; _nt takes b:[n,k], _tn takes
// a:[k,m]. Batched versions prepend one batch axis to every operand.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_mm("matmul", a, b, 2, 1, 0);
    const std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor<T> c(Shape{m, n});
    mac_record(static_cast<std::uint64_t>(m * k * n));
#pragma omp parallel for if (m * k * n > detail::kMatGrain)
    for (std::int64_t i = 0; i < m; ++i) detail::mm_row(a.data(), b.data(), c.data(), i, k, n);
    return c;
}

template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_mm("matmul_nt", a, b, 2, 1, 1);
    const std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
    Tensor<T> c(Shape{m, n});
    mac_record(static_cast<std::uint64_t>(m * k * n));
#pragma omp parallel for if (m * k * n > detail::kMatGrain)
    for (std::int64_t i = 0; i < m; ++i) detail::mm_nt_row(a.data(), b.data(), c.data(), i, k, n);
    return c;
}

template <typename T>
Tensor<T> matmul_tn(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_mm("matmul_tn", a, b, 2, 0, 0);
    const std::int64_t k = a.dim(0), m = a.dim(1), n = b.dim(1);
    Tensor<T> c(Shape{m, n});
    mac_record(static_cast<std::uint64_t>(m * k * n));
#pragma omp parallel for if (m * k * n > detail::kMatGrain)
    for (std::int64_t i = 0; i < m; ++i) detail::mm_tn_row(a.data(), b.data(), c.data(), i, m, k, n);
    return c;
}

template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_mm("bmm", a, b, 3, 2, 1);
    const std::int64_t g = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
    Tensor<T> c(Shape{g, m, n});
    mac_record(static_cast<std::uint64_t>(g * m * k * n));
#pragma omp parallel for collapse(2) if (g * m * k * n > detail::kMatGrain)
    for (std::int64_t bi = 0; bi < g; ++bi) {
        for (std::int64_t i = 0; i < m; ++i) {
            detail::mm_row(a.data() + bi * m * k, b.data() + bi * k * n, c.data() + bi * m * n, i, k, n);
        }
    }
    return c;
}

template <typename T>
Tensor<T> bmm_nt(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_mm("bmm_nt", a, b, 3, 2, 2);
    const std::int64_t g = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(1);
    Tensor<T> c(Shape{g, m, n});
    mac_record(static_cast<std::uint64_t>(g * m * k * n));
#pragma omp parallel for collapse(2) if (g * m * k * n > detail::kMatGrain)
    for (std::int64_t bi = 0; bi < g; ++bi) {
        for (std::int64_t i = 0; i < m; ++i) {
            detail::mm_nt_row(a.data() + bi * m * k, b.data() + bi * n * k, c.data() + bi * m * n, i, k, n);
        }
    }
    return c;
}

template <typename T>
Tensor<T> bmm_tn(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_mm("bmm_tn", a, b, 3, 1, 1);
    const std::int64_t g = a.dim(0), k = a.dim(1), m = a.dim(2), n = b.dim(2);
    Tensor<T> c(Shape{g, m, n});
    mac_record(static_cast<std::uint64_t>(g * m * k * n));
#pragma omp parallel for collapse(2) if (g * m * k * n > detail::kMatGrain)
    for (std::int64_t bi = 0; bi < g; ++bi) {
        for (std::int64_t i = 0; i < m; ++i) {
            detail::mm_tn_row(a.data() + bi * k * m, b.data() + bi * k * n, c.data() + bi * m * n, i, m, k, n);
        }
    }
    return c;
}

// ---------------------------------------------------------------------------
// softmax_rows: softmax over the last axis, stabilized by per-row max.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
    if (x.rank() < 1) throw std::invalid_argument("softmax_rows: rank must be >= 1");
    detail::require_finite("softmax_rows", x);
    const std::int64_t n = x.dim(x.rank() - 1);
    const std::int64_t rows = x.numel() / n;
    Tensor<T> y(x.shape());
#pragma omp parallel for if (rows * n > detail::kRowGrain)
    for (std::int64_t r = 0; r < rows; ++r) detail::softmax_row(x.data() + r * n, y.data() + r * n, n);
    return y;
}

// ---------------------------------------------------------------------------
// conv2d over NHWC input with [kh, kw, Cin, Cout] weights and zero padding.
// Out-of-bounds taps are skipped; only executed taps are MAC-counted.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias, int stride, int pad) {
    detail::ConvGeom g = detail::conv_geom("conv2d", x, w.shape(), stride, pad);
    if (bias && (bias->rank() != 1 || bias->dim(0) != g.out_c)) {
        detail::shape_fail("conv2d bias", w.shape(), bias->shape());
    }
    Tensor<T> out(Shape{g.batch, g.out_h, g.out_w, g.out_c});
    const std::int64_t taps =
        detail::conv_valid_taps(g.out_h, g.k_h, g.in_h, stride, pad) *
        detail::conv_valid_taps(g.out_w, g.k_w, g.in_w, stride, pad);
    mac_record(static_cast<std::uint64_t>(g.batch * taps * g.in_c * g.out_c));
#pragma omp parallel for collapse(2) if (g.batch * taps * g.in_c * g.out_c > detail::kMatGrain)
    for (std::int64_t b = 0; b < g.batch; ++b) {
        for (std::int64_t oy = 0; oy < g.out_h; ++oy) {
            for (std::int64_t ox = 0; ox < g.out_w; ++ox) {
                detail::conv_out_pixel(g, x.data(), w.data(), bias ? bias->data() : nullptr,
                                       out.data(), b, oy, ox);
            }
        }
    }
    return out;
}

// grad wrt input: each input pixel gathers from the output pixels whose
// receptive field covers it, in fixed (kh, kw, co) order.
template <typename T>
Tensor<T> conv2d_grad_input(const Shape& x_shape, const Tensor<T>& w, const Tensor<T>& gy,
                            int stride, int pad) {
    Tensor<T> probe(x_shape);
    detail::ConvGeom g = detail::conv_geom("conv2d_grad_input", probe, w.shape(), stride, pad);
    if (gy.shape() != Shape{g.batch, g.out_h, g.out_w, g.out_c}) {
        detail::shape_fail("conv2d_grad_input", gy.shape(), Shape{g.batch, g.out_h, g.out_w, g.out_c});
    }
    Tensor<T> gx(x_shape);
    mac_record(static_cast<std::uint64_t>(
        g.batch * detail::conv_valid_taps(g.out_h, g.k_h, g.in_h, stride, pad) *
        detail::conv_valid_taps(g.out_w, g.k_w, g.in_w, stride, pad) * g.in_c * g.out_c));
#pragma omp parallel for collapse(2) if (gx.numel() * g.k_h * g.k_w * g.out_c > detail::kMatGrain)
    for (std::int64_t b = 0; b < g.batch; ++b) {
        for (std::int64_t iy = 0; iy < g.in_h; ++iy) {
            for (std::int64_t ix = 0; ix < g.in_w; ++ix) {
                T* gp = gx.data() + ((b * g.in_h + iy) * g.in_w + ix) * g.in_c;
                for (std::int64_t kh = 0; kh < g.k_h; ++kh) {
                    std::int64_t num_y = iy + g.pad - kh;
                    if (num_y < 0 || num_y % g.stride != 0) continue;
                    std::int64_t oy = num_y / g.stride;
                    if (oy >= g.out_h) continue;
                    for (std::int64_t kw = 0; kw < g.k_w; ++kw) {
                        std::int64_t num_x = ix + g.pad - kw;
                        if (num_x < 0 || num_x % g.stride != 0) continue;
                        std::int64_t ox = num_x / g.stride;
                        if (ox >= g.out_w) continue;
                        const T* gyp = gy.data() + ((b * g.out_h + oy) * g.out_w + ox) * g.out_c;
                        const T* wp = w.data() + (kh * g.k_w + kw) * g.in_c * g.out_c;
                        for (std::int64_t ci = 0; ci < g.in_c; ++ci) {
                            T acc = T(0);
                            const T* wc = wp + ci * g.out_c;
                            for (std::int64_t c = 0; c < g.out_c; ++c) acc += wc[c] * gyp[c];
                            gp[ci] += acc;
                        }
                    }
                }
            }
        }
    }
    return gx;
}

template <typename T>
Tensor<T> conv2d_grad_weight(const Tensor<T>& x, const Shape& w_shape, const Tensor<T>& gy,
                             int stride, int pad) {
    detail::ConvGeom g = detail::conv_geom("conv2d_grad_weight", x, w_shape, stride, pad);
    if (gy.shape() != Shape{g.batch, g.out_h, g.out_w, g.out_c}) {
        detail::shape_fail("conv2d_grad_weight", gy.shape(), Shape{g.batch, g.out_h, g.out_w, g.out_c});
    }
    Tensor<T> gw(w_shape);
    mac_record(static_cast<std::uint64_t>(
        g.batch * detail::conv_valid_taps(g.out_h, g.k_h, g.in_h, stride, pad) *
        detail::conv_valid_taps(g.out_w, g.k_w, g.in_w, stride, pad) * g.in_c * g.out_c));
    const std::int64_t kelems = g.k_h * g.k_w * g.in_c;
#pragma omp parallel for if (gw.numel() * g.batch * g.out_h * g.out_w > detail::kMatGrain)
    for (std::int64_t ke = 0; ke < kelems; ++ke) {
        const std::int64_t kh = ke / (g.k_w * g.in_c);
        const std::int64_t kw = (ke / g.in_c) % g.k_w;
        const std::int64_t ci = ke % g.in_c;
        T* gwp = gw.data() + ke * g.out_c;
        for (std::int64_t b = 0; b < g.batch; ++b) {
            for (std::int64_t oy = 0; oy < g.out_h; ++oy) {
                std::int64_t iy = oy * g.stride - g.pad + kh;
                if (iy < 0 || iy >= g.in_h) continue;
                for (std::int64_t ox = 0; ox < g.out_w; ++ox) {
                    std::int64_t ix = ox * g.stride - g.pad + kw;
                    if (ix < 0 || ix >= g.in_w) continue;
                    const T xv = x.data()[((b * g.in_h + iy) * g.in_w + ix) * g.in_c + ci];
                    const T* gyp = gy.data() + ((b * g.out_h + oy) * g.out_w + ox) * g.out_c;
                    for (std::int64_t c = 0; c < g.out_c; ++c) gwp[c] += xv * gyp[c];
                }
            }
        }
    }
    return gw;
}

template <typename T>
Tensor<T> conv2d_grad_bias(const Tensor<T>& gy) {
    detail::require_rank("conv2d_grad_bias", gy.shape(), 4);
    const std::int64_t c = gy.dim(3);
    Tensor<T> gb(Shape{c});
    for (std::int64_t i = 0; i < gy.numel(); ++i) gb[i % c] += gy[i];
    return gb;
}

// ---------------------------------------------------------------------------
// Shape algebra.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape new_shape) {
    if (shape_numel(new_shape) != x.numel()) {
        throw std::invalid_argument("reshape: extent product of " + shape_str(new_shape) +
                                    " does not match " + shape_str(x.shape()));
    }
    return Tensor<T>(std::move(new_shape), x.vec());
}

inline void check_axis_order(const std::string& op, const std::vector<int>& axes, int rank) {
    if (static_cast<int>(axes.size()) != rank) {
        throw std::invalid_argument(op + ": axis order size " + std::to_string(axes.size()) +
                                    " does not match rank " + std::to_string(rank));
    }
    std::vector<bool> seen(static_cast<std::size_t>(rank), false);
    for (int a : axes) {
        if (a < 0 || a >= rank || seen[static_cast<std::size_t>(a)]) {
            throw std::invalid_argument(op + ": axis order is not a permutation of 0.." +
                                        std::to_string(rank - 1));
        }
        seen[static_cast<std::size_t>(a)] = true;
    }
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x, const std::vector<int>& axes) {
    check_axis_order("transpose", axes, x.rank());
    const int rank = x.rank();
    Shape out_shape(static_cast<std::size_t>(rank));
    for (int i = 0; i < rank; ++i) out_shape[i] = x.dim(axes[i]);
    Tensor<T> y(out_shape);
    if (rank == 0 || x.numel() == 0) return y;

    Shape in_strides = row_major_strides(x.shape());
    // stride of output axis i measured in the input buffer
    Shape walk(static_cast<std::size_t>(rank));
    for (int i = 0; i < rank; ++i) walk[i] = in_strides[axes[i]];

    std::vector<std::int64_t> coord(static_cast<std::size_t>(rank), 0);
    std::int64_t src = 0;
    for (std::int64_t dst = 0; dst < y.numel(); ++dst) {
        y[dst] = x[src];
        for (int ax = rank - 1; ax >= 0; --ax) {
            src += walk[ax];
            if (++coord[ax] < out_shape[ax]) break;
            src -= walk[ax] * out_shape[ax];
            coord[ax] = 0;
        }
    }
    return y;
}

template <typename T>
Tensor<T> reshape_permute(const Tensor<T>& x, Shape new_shape, const std::vector<int>& axes) {
    return transpose(reshape(x, std::move(new_shape)), axes);
}

template <typename T>
Tensor<T> concat_last(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != b.rank() || a.rank() < 1) detail::shape_fail("concat_last", a.shape(), b.shape());
    for (int i = 0; i + 1 < a.rank(); ++i) {
        if (a.dim(i) != b.dim(i)) detail::shape_fail("concat_last", a.shape(), b.shape());
    }
    const std::int64_t ca = a.dim(a.rank() - 1), cb = b.dim(b.rank() - 1);
    Shape out_shape = a.shape();
    out_shape.back() = ca + cb;
    Tensor<T> y(out_shape);
    const std::int64_t rows = a.numel() / ca;
    for (std::int64_t r = 0; r < rows; ++r) {
        std::copy_n(a.data() + r * ca, ca, y.data() + r * (ca + cb));
        std::copy_n(b.data() + r * cb, cb, y.data() + r * (ca + cb) + ca);
    }
    return y;
}

// ---------------------------------------------------------------------------
// Elementwise and reductions.
// ---------------------------------------------------------------------------

template <typename T>
void require_same_shape(const std::string& op, const Tensor<T>& a, const Tensor<T>& b) {
    if (!a.same_shape(b)) detail::shape_fail(op, a.shape(), b.shape());
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape("add", a, b);
    Tensor<T> y(a.shape());
    for (std::int64_t i = 0; i < y.numel(); ++i) y[i] = a[i] + b[i];
    return y;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape("sub", a, b);
    Tensor<T> y(a.shape());
    for (std::int64_t i = 0; i < y.numel(); ++i) y[i] = a[i] - b[i];
    return y;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape("mul", a, b);
    Tensor<T> y(a.shape());
    for (std::int64_t i = 0; i < y.numel(); ++i) y[i] = a[i] * b[i];
    return y;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
    Tensor<T> y(a.shape());
    for (std::int64_t i = 0; i < y.numel(); ++i) y[i] = a[i] * s;
    return y;
}

template <typename T>
Tensor<T> map_tanh(const Tensor<T>& a) {
    Tensor<T> y(a.shape());
    for (std::int64_t i = 0; i < y.numel(); ++i) y[i] = std::tanh(a[i]);
    return y;
}

template <typename T>
Tensor<T> add_rowvec(const Tensor<T>& x, const Tensor<T>& v) {
    if (v.rank() != 1 || x.rank() < 1 || x.dim(x.rank() - 1) != v.dim(0)) {
        detail::shape_fail("add_rowvec", x.shape(), v.shape());
    }
    const std::int64_t c = v.dim(0);
    Tensor<T> y(x.shape());
    for (std::int64_t i = 0; i < x.numel(); ++i) y[i] = x[i] + v[i % c];
    return y;
}

template <typename T>
T sum_all(const Tensor<T>& x) {
    T acc = T(0);
    for (std::int64_t i = 0; i < x.numel(); ++i) acc += x[i];
    return acc;
}

// Collapses every axis except the last: used for bias gradients.
template <typename T>
Tensor<T> colsum_last(const Tensor<T>& x) {
    if (x.rank() < 1) throw std::invalid_argument("colsum_last: rank must be >= 1");
    const std::int64_t c = x.dim(x.rank() - 1);
    Tensor<T> y(Shape{c});
    for (std::int64_t i = 0; i < x.numel(); ++i) y[i % c] += x[i];
    return y;
}

// ---------------------------------------------------------------------------
// Gather / scatter over flat indices. take_flat is the carrier of every
// logical reordering; its adjoint over a bijection is take_flat with the
// inverse permutation, and over a general map it is scatter_add_flat.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> take_flat(const Tensor<T>& x, const std::vector<std::int64_t>& idx, Shape out_shape) {
    if (shape_numel(out_shape) != static_cast<std::int64_t>(idx.size())) {
        throw std::invalid_argument("take_flat: index count " + std::to_string(idx.size()) +
                                    " does not match out shape " + shape_str(out_shape));
    }
    Tensor<T> y(std::move(out_shape));
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const std::int64_t j = idx[i];
        if (j < 0 || j >= x.numel()) {
            throw std::out_of_range("take_flat: index " + std::to_string(j) + " out of range for " +
                                    std::to_string(x.numel()) + " elements");
        }
        y[static_cast<std::int64_t>(i)] = x[j];
    }
    return y;
}

template <typename T>
Tensor<T> scatter_add_flat(const Tensor<T>& g, const std::vector<std::int64_t>& idx, Shape out_shape) {
    if (g.numel() != static_cast<std::int64_t>(idx.size())) {
        throw std::invalid_argument("scatter_add_flat: index count does not match source");
    }
    Tensor<T> y(std::move(out_shape));
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const std::int64_t j = idx[i];
        if (j < 0 || j >= y.numel()) {
            throw std::out_of_range("scatter_add_flat: index " + std::to_string(j) + " out of range");
        }
        y[j] += g[static_cast<std::int64_t>(i)];
    }
    return y;
}

// ---------------------------------------------------------------------------
// Upsampling.
// ---------------------------------------------------------------------------

// Nearest-neighbour 2x over NHWC.
template <typename T>
Tensor<T> upsample2x_nhwc(const Tensor<T>& x) {
    detail::require_rank("upsample2x_nhwc", x.shape(), 4);
    const std::int64_t b = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
    Tensor<T> y(Shape{b, 2 * h, 2 * w, c});
    for (std::int64_t bi = 0; bi < b; ++bi) {
        for (std::int64_t oy = 0; oy < 2 * h; ++oy) {
            for (std::int64_t ox = 0; ox < 2 * w; ++ox) {
                const T* src = x.data() + ((bi * h + oy / 2) * w + ox / 2) * c;
                T* dst = y.data() + ((bi * 2 * h + oy) * 2 * w + ox) * c;
                std::copy_n(src, c, dst);
            }
        }
    }
    return y;
}

template <typename T>
Tensor<T> upsample2x_nhwc_grad(const Tensor<T>& gy) {
    detail::require_rank("upsample2x_nhwc_grad", gy.shape(), 4);
    if (gy.dim(1) % 2 != 0 || gy.dim(2) % 2 != 0) {
        throw std::invalid_argument("upsample2x_nhwc_grad: odd spatial extents " + shape_str(gy.shape()));
    }
    const std::int64_t b = gy.dim(0), h = gy.dim(1) / 2, w = gy.dim(2) / 2, c = gy.dim(3);
    Tensor<T> gx(Shape{b, h, w, c});
    for (std::int64_t bi = 0; bi < b; ++bi) {
        for (std::int64_t oy = 0; oy < 2 * h; ++oy) {
            for (std::int64_t ox = 0; ox < 2 * w; ++ox) {
                const T* src = gy.data() + ((bi * 2 * h + oy) * 2 * w + ox) * c;
                T* dst = gx.data() + ((bi * h + oy / 2) * w + ox / 2) * c;
                for (std::int64_t ci = 0; ci < c; ++ci) dst[ci] += src[ci];
            }
        }
    }
    return gx;
}

// Token upsampling in nested order: each parent token expands to its four
// children, which sit consecutively, so row i is copied to rows 4i..4i+3.
template <typename T>
Tensor<T> repeat_rows4(const Tensor<T>& x) {
    detail::require_rank("repeat_rows4", x.shape(), 3);
    const std::int64_t b = x.dim(0), n = x.dim(1), c = x.dim(2);
    Tensor<T> y(Shape{b, 4 * n, c});
    for (std::int64_t bi = 0; bi < b; ++bi) {
        for (std::int64_t i = 0; i < n; ++i) {
            const T* src = x.data() + (bi * n + i) * c;
            for (std::int64_t r = 0; r < 4; ++r) {
                std::copy_n(src, c, y.data() + (bi * 4 * n + 4 * i + r) * c);
            }
        }
    }
    return y;
}

template <typename T>
Tensor<T> repeat_rows4_grad(const Tensor<T>& gy) {
    detail::require_rank("repeat_rows4_grad", gy.shape(), 3);
    if (gy.dim(1) % 4 != 0) {
        throw std::invalid_argument("repeat_rows4_grad: row count not divisible by 4");
    }
    const std::int64_t b = gy.dim(0), n = gy.dim(1) / 4, c = gy.dim(2);
    Tensor<T> gx(Shape{b, n, c});
    for (std::int64_t bi = 0; bi < b; ++bi) {
        for (std::int64_t i = 0; i < n; ++i) {
            T* dst = gx.data() + (bi * n + i) * c;
            for (std::int64_t r = 0; r < 4; ++r) {
                const T* src = gy.data() + (bi * 4 * n + 4 * i + r) * c;
                for (std::int64_t ci = 0; ci < c; ++ci) dst[ci] += src[ci];
            }
        }
    }
    return gx;
}

template <typename T>
Tensor<int32_t> argmax_last(const Tensor<T>& x) {
    if (x.rank() < 2) throw std::invalid_argument("argmax_last: rank must be >= 2");
    const std::int64_t c = x.dim(x.rank() - 1);
    Shape out_shape(x.shape().begin(), x.shape().end() - 1);
    Tensor<int32_t> y(out_shape);
    const std::int64_t rows = x.numel() / c;
    for (std::int64_t r = 0; r < rows; ++r) {
        const T* row = x.data() + r * c;
        std::int64_t best = 0;
        for (std::int64_t j = 1; j < c; ++j) {
            if (row[j] > row[best]) best = j;
        }
        y[r] = static_cast<int32_t>(best);
    }
    return y;
}

// ---------------------------------------------------------------------------
// Serial reference kernels: identical loop bodies without OpenMP scheduling,
// kept as the comparison baseline for correctness and benchmarks.
// ---------------------------------------------------------------------------

namespace serial {

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_mm("matmul", a, b, 2, 1, 0);
    const std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor<T> c(Shape{m, n});
    mac_record(static_cast<std::uint64_t>(m * k * n));
    for (std::int64_t i = 0; i < m; ++i) detail::mm_row(a.data(), b.data(), c.data(), i, k, n);
    return c;
}

template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_mm("matmul_nt", a, b, 2, 1, 1);
    const std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
    Tensor<T> c(Shape{m, n});
    mac_record(static_cast<std::uint64_t>(m * k * n));
    for (std::int64_t i = 0; i < m; ++i) detail::mm_nt_row(a.data(), b.data(), c.data(), i, k, n);
    return c;
}

template <typename T>
Tensor<T> matmul_tn(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_mm("matmul_tn", a, b, 2, 0, 0);
    const std::int64_t k = a.dim(0), m = a.dim(1), n = b.dim(1);
    Tensor<T> c(Shape{m, n});
    mac_record(static_cast<std::uint64_t>(m * k * n));
    for (std::int64_t i = 0; i < m; ++i) detail::mm_tn_row(a.data(), b.data(), c.data(), i, m, k, n);
    return c;
}

template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_mm("bmm", a, b, 3, 2, 1);
    const std::int64_t g = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
    Tensor<T> c(Shape{g, m, n});
    mac_record(static_cast<std::uint64_t>(g * m * k * n));
    for (std::int64_t bi = 0; bi < g; ++bi) {
        for (std::int64_t i = 0; i < m; ++i) {
            detail::mm_row(a.data() + bi * m * k, b.data() + bi * k * n, c.data() + bi * m * n, i, k, n);
        }
    }
    return c;
}

template <typename T>
Tensor<T> bmm_nt(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_mm("bmm_nt", a, b, 3, 2, 2);
    const std::int64_t g = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(1);
    Tensor<T> c(Shape{g, m, n});
    mac_record(static_cast<std::uint64_t>(g * m * k * n));
    for (std::int64_t bi = 0; bi < g; ++bi) {
        for (std::int64_t i = 0; i < m; ++i) {
            detail::mm_nt_row(a.data() + bi * m * k, b.data() + bi * n * k, c.data() + bi * m * n, i, k, n);
        }
    }
    return c;
}

template <typename T>
Tensor<T> bmm_tn(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_mm("bmm_tn", a, b, 3, 1, 1);
    const std::int64_t g = a.dim(0), k = a.dim(1), m = a.dim(2), n = b.dim(2);
    Tensor<T> c(Shape{g, m, n});
    mac_record(static_cast<std::uint64_t>(g * m * k * n));
    for (std::int64_t bi = 0; bi < g; ++bi) {
        for (std::int64_t i = 0; i < m; ++i) {
            detail::mm_tn_row(a.data() + bi * k * m, b.data() + bi * k * n, c.data() + bi * m * n, i, m, k, n);
        }
    }
    return c;
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
    if (x.rank() < 1) throw std::invalid_argument("softmax_rows: rank must be >= 1");
    detail::require_finite("softmax_rows", x);
    const std::int64_t n = x.dim(x.rank() - 1);
    const std::int64_t rows = x.numel() / n;
    Tensor<T> y(x.shape());
    for (std::int64_t r = 0; r < rows; ++r) detail::softmax_row(x.data() + r * n, y.data() + r * n, n);
    return y;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias, int stride, int pad) {
    detail::ConvGeom g = detail::conv_geom("conv2d", x, w.shape(), stride, pad);
    if (bias && (bias->rank() != 1 || bias->dim(0) != g.out_c)) {
        detail::shape_fail("conv2d bias", w.shape(), bias->shape());
    }
    Tensor<T> out(Shape{g.batch, g.out_h, g.out_w, g.out_c});
    mac_record(static_cast<std::uint64_t>(
        g.batch * detail::conv_valid_taps(g.out_h, g.k_h, g.in_h, stride, pad) *
        detail::conv_valid_taps(g.out_w, g.k_w, g.in_w, stride, pad) * g.in_c * g.out_c));
    for (std::int64_t b = 0; b < g.batch; ++b) {
        for (std::int64_t oy = 0; oy < g.out_h; ++oy) {
            for (std::int64_t ox = 0; ox < g.out_w; ++ox) {
                detail::conv_out_pixel(g, x.data(), w.data(), bias ? bias->data() : nullptr,
                                       out.data(), b, oy, ox);
            }
        }
    }
    return out;
}

}  // namespace serial

}  // namespace ammu
