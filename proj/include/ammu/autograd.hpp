#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ammu/kernels.hpp"
#include "ammu/merge.hpp"
#include "ammu/tensor.hpp"

namespace ammu {

template <typename T>
class Tape;

/// Value handle used by the differentiable ops. A Var either references a
/// tape node (tracked) or is a free constant. Ops accept a nullable tape:
/// with nullptr they run forward-only and return constants, so inference and
/// training share one code path.
template <typename T>
struct Var {
    std::shared_ptr<const Tensor<T>> value;
    int node = -1;
    std::uint64_t epoch = 0;

    const Tensor<T>& val() const {
        if (!value) throw std::logic_error("empty Var");
        return *value;
    }
    bool tracked() const { return node >= 0; }
};

template <typename T>
Var<T> constant(Tensor<T> v) {
    return Var<T>{std::make_shared<const Tensor<T>>(std::move(v)), -1, 0};
}

/// Reverse-mode tape. Nodes are appended in execution order, so walking them
/// backward visits every operation after all of its consumers.
template <typename T>
class Tape {
  public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var<T> leaf(Tensor<T> value) {
        auto holder = std::make_shared<const Tensor<T>>(std::move(value));
        nodes_.push_back(Node{holder, {}, nullptr});
        return Var<T>{holder, static_cast<int>(nodes_.size()) - 1, epoch_};
    }

    Var<T> record(Tensor<T> value, std::function<void(const Tensor<T>&)> vjp) {
        auto holder = std::make_shared<const Tensor<T>>(std::move(value));
        nodes_.push_back(Node{holder, {}, std::move(vjp)});
        return Var<T>{holder, static_cast<int>(nodes_.size()) - 1, epoch_};
    }

    void check(const Var<T>& v) const {
        if (!v.tracked()) return;
        if (v.epoch != epoch_ || v.node >= static_cast<int>(nodes_.size())) {
            throw std::logic_error("tensor used after tape reset");
        }
    }

    /// Adds g into the accumulator of node id.
    void accumulate(int id, const Tensor<T>& g) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (!n.value->same_shape(g)) {
            throw std::logic_error("gradient shape " + shape_str(g.shape()) +
                                   " does not match value shape " + shape_str(n.value->shape()));
        }
        if (!n.grad) {
            n.grad = std::make_unique<Tensor<T>>(g);
        } else {
            for (std::int64_t i = 0; i < g.numel(); ++i) (*n.grad)[i] += g[i];
        }
    }

    /// Seeds d(loss)/d(loss) = 1 and replays recorded operations in reverse.
    void backward(const Var<T>& loss) {
        check(loss);
        if (loss.val().numel() != 1) {
            throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                        shape_str(loss.val().shape()));
        }
        if (!loss.tracked()) return;
        accumulate(loss.node, Tensor<T>::full(loss.val().shape(), T(1)));
        for (int id = loss.node; id >= 0; --id) {
            Node& n = nodes_[static_cast<std::size_t>(id)];
            if (n.grad && n.vjp) n.vjp(*n.grad);
        }
    }

    /// Accumulated gradient of v; zeros when nothing flowed into it.
    Tensor<T> grad(const Var<T>& v) const {
        check(v);
        if (!v.tracked()) throw std::invalid_argument("grad: variable is not tracked");
        const Node& n = nodes_[static_cast<std::size_t>(v.node)];
        return n.grad ? *n.grad : Tensor<T>(v.val().shape());
    }

    /// Drops all nodes and invalidates outstanding Vars.
    void reset() {
        nodes_.clear();
        ++epoch_;
    }

    std::uint64_t epoch() const { return epoch_; }
    std::size_t size() const { return nodes_.size(); }

  private:
    struct Node {
        std::shared_ptr<const Tensor<T>> value;
        std::unique_ptr<Tensor<T>> grad;
        std::function<void(const Tensor<T>&)> vjp;

        Node(std::shared_ptr<const Tensor<T>> v, std::unique_ptr<Tensor<T>> g,
             std::function<void(const Tensor<T>&)> f)
            : value(std::move(v)), grad(std::move(g)), vjp(std::move(f)) {}
    };

    std::vector<Node> nodes_;
    std::uint64_t epoch_ = 0;
};

namespace ag_detail {

template <typename T>
bool tracked(Tape<T>* t, const Var<T>& a) {
    if (t) t->check(a);
    return t && a.tracked();
}

template <typename T>
bool tracked(Tape<T>* t, const Var<T>& a, const Var<T>& b) {
    if (t) {
        t->check(a);
        t->check(b);
    }
    return t && (a.tracked() || b.tracked());
}

}  // namespace ag_detail

// ---------------------------------------------------------------------------
// Differentiable ops. Each forwards to the plain kernel, then records a
// closure that pushes the output gradient back to its tracked inputs.
// ---------------------------------------------------------------------------

template <typename T>
Var<T> matmul(Tape<T>* t, const Var<T>& a, const Var<T>& b) {
    Tensor<T> out = matmul(a.val(), b.val());
    if (!ag_detail::tracked(t, a, b)) return constant(std::move(out));
    return t->record(std::move(out), [t, a, b](const Tensor<T>& g) {
        if (a.tracked()) t->accumulate(a.node, matmul_nt(g, b.val()));
        if (b.tracked()) t->accumulate(b.node, matmul_tn(a.val(), g));
    });
}

template <typename T>
Var<T> bmm(Tape<T>* t, const Var<T>& a, const Var<T>& b) {
    Tensor<T> out = bmm(a.val(), b.val());
    if (!ag_detail::tracked(t, a, b)) return constant(std::move(out));
    return t->record(std::move(out), [t, a, b](const Tensor<T>& g) {
        if (a.tracked()) t->accumulate(a.node, bmm_nt(g, b.val()));
        if (b.tracked()) t->accumulate(b.node, bmm_tn(a.val(), g));
    });
}

template <typename T>
Var<T> bmm_nt(Tape<T>* t, const Var<T>& a, const Var<T>& b) {
    Tensor<T> out = bmm_nt(a.val(), b.val());
    if (!ag_detail::tracked(t, a, b)) return constant(std::move(out));
    return t->record(std::move(out), [t, a, b](const Tensor<T>& g) {
        if (a.tracked()) t->accumulate(a.node, bmm(g, b.val()));
        if (b.tracked()) t->accumulate(b.node, bmm_tn(g, a.val()));
    });
}

template <typename T>
Var<T> add(Tape<T>* t, const Var<T>& a, const Var<T>& b) {
    Tensor<T> out = add(a.val(), b.val());
    if (!ag_detail::tracked(t, a, b)) return constant(std::move(out));
    return t->record(std::move(out), [t, a, b](const Tensor<T>& g) {
        if (a.tracked()) t->accumulate(a.node, g);
        if (b.tracked()) t->accumulate(b.node, g);
    });
}

template <typename T>
Var<T> mul(Tape<T>* t, const Var<T>& a, const Var<T>& b) {
    Tensor<T> out = mul(a.val(), b.val());
    if (!ag_detail::tracked(t, a, b)) return constant(std::move(out));
    return t->record(std::move(out), [t, a, b](const Tensor<T>& g) {
        if (a.tracked()) t->accumulate(a.node, mul(g, b.val()));
        if (b.tracked()) t->accumulate(b.node, mul(g, a.val()));
    });
}

template <typename T>
Var<T> scale(Tape<T>* t, const Var<T>& a, T s) {
    Tensor<T> out = scale(a.val(), s);
    if (!ag_detail::tracked(t, a)) return constant(std::move(out));
    return t->record(std::move(out), [t, a, s](const Tensor<T>& g) {
        t->accumulate(a.node, scale(g, s));
    });
}

template <typename T>
Var<T> add_rowvec(Tape<T>* t, const Var<T>& x, const Var<T>& v) {
    Tensor<T> out = add_rowvec(x.val(), v.val());
    if (!ag_detail::tracked(t, x, v)) return constant(std::move(out));
    return t->record(std::move(out), [t, x, v](const Tensor<T>& g) {
        if (x.tracked()) t->accumulate(x.node, g);
        if (v.tracked()) t->accumulate(v.node, colsum_last(g));
    });
}

template <typename T>
Var<T> map_tanh(Tape<T>* t, const Var<T>& x) {
    Tensor<T> out = map_tanh(x.val());
    if (!ag_detail::tracked(t, x)) return constant(std::move(out));
    auto saved = std::make_shared<Tensor<T>>(out);
    return t->record(std::move(out), [t, x, saved](const Tensor<T>& g) {
        Tensor<T> gx(g.shape());
        for (std::int64_t i = 0; i < g.numel(); ++i) {
            gx[i] = g[i] * (T(1) - (*saved)[i] * (*saved)[i]);
        }
        t->accumulate(x.node, gx);
    });
}

template <typename T>
Var<T> softmax_rows(Tape<T>* t, const Var<T>& x) {
    Tensor<T> out = softmax_rows(x.val());
    if (!ag_detail::tracked(t, x)) return constant(std::move(out));
    auto saved = std::make_shared<Tensor<T>>(out);
    return t->record(std::move(out), [t, x, saved](const Tensor<T>& g) {
        const Tensor<T>& y = *saved;
        const std::int64_t n = y.dim(y.rank() - 1);
        const std::int64_t rows = y.numel() / n;
        Tensor<T> gx(y.shape());
        for (std::int64_t r = 0; r < rows; ++r) {
            T dot = T(0);
            for (std::int64_t j = 0; j < n; ++j) dot += g[r * n + j] * y[r * n + j];
            for (std::int64_t j = 0; j < n; ++j) {
                gx[r * n + j] = y[r * n + j] * (g[r * n + j] - dot);
            }
        }
        t->accumulate(x.node, gx);
    });
}

template <typename T>
Var<T> reshape(Tape<T>* t, const Var<T>& x, Shape shape) {
    Tensor<T> out = reshape(x.val(), std::move(shape));
    if (!ag_detail::tracked(t, x)) return constant(std::move(out));
    Shape in_shape = x.val().shape();
    return t->record(std::move(out), [t, x, in_shape](const Tensor<T>& g) {
        t->accumulate(x.node, reshape(g, in_shape));
    });
}

template <typename T>
Var<T> transpose(Tape<T>* t, const Var<T>& x, std::vector<int> axes) {
    Tensor<T> out = transpose(x.val(), axes);
    if (!ag_detail::tracked(t, x)) return constant(std::move(out));
    std::vector<int> inverse(axes.size());
    for (std::size_t i = 0; i < axes.size(); ++i) inverse[static_cast<std::size_t>(axes[i])] = static_cast<int>(i);
    return t->record(std::move(out), [t, x, inverse](const Tensor<T>& g) {
        t->accumulate(x.node, transpose(g, inverse));
    });
}

template <typename T>
Var<T> reshape_permute(Tape<T>* t, const Var<T>& x, Shape shape, std::vector<int> axes) {
    return transpose(t, reshape(t, x, std::move(shape)), std::move(axes));
}

template <typename T>
Var<T> concat_last(Tape<T>* t, const Var<T>& a, const Var<T>& b) {
    Tensor<T> out = concat_last(a.val(), b.val());
    if (!ag_detail::tracked(t, a, b)) return constant(std::move(out));
    return t->record(std::move(out), [t, a, b](const Tensor<T>& g) {
        const std::int64_t ca = a.val().dim(a.val().rank() - 1);
        const std::int64_t cb = b.val().dim(b.val().rank() - 1);
        const std::int64_t rows = g.numel() / (ca + cb);
        if (a.tracked()) {
            Tensor<T> ga(a.val().shape());
            for (std::int64_t r = 0; r < rows; ++r) {
                for (std::int64_t j = 0; j < ca; ++j) ga[r * ca + j] = g[r * (ca + cb) + j];
            }
            t->accumulate(a.node, ga);
        }
        if (b.tracked()) {
            Tensor<T> gb(b.val().shape());
            for (std::int64_t r = 0; r < rows; ++r) {
                for (std::int64_t j = 0; j < cb; ++j) gb[r * cb + j] = g[r * (ca + cb) + ca + j];
            }
            t->accumulate(b.node, gb);
        }
    });
}

/// Gather by flat indices; adjoint is scatter-add over the same indices.
template <typename T>
Var<T> gather(Tape<T>* t, const Var<T>& x, std::shared_ptr<const std::vector<std::int64_t>> idx,
              Shape out_shape) {
    Tensor<T> out = take_flat(x.val(), *idx, std::move(out_shape));
    if (!ag_detail::tracked(t, x)) return constant(std::move(out));
    Shape in_shape = x.val().shape();
    return t->record(std::move(out), [t, x, idx, in_shape](const Tensor<T>& g) {
        t->accumulate(x.node, scatter_add_flat(g, *idx, in_shape));
    });
}

template <typename T>
Var<T> conv2d(Tape<T>* t, const Var<T>& x, const Var<T>& w, int stride, int pad) {
    Tensor<T> out = conv2d<T>(x.val(), w.val(), nullptr, stride, pad);
    if (!ag_detail::tracked(t, x, w)) return constant(std::move(out));
    return t->record(std::move(out), [t, x, w, stride, pad](const Tensor<T>& g) {
        if (x.tracked()) t->accumulate(x.node, conv2d_grad_input(x.val().shape(), w.val(), g, stride, pad));
        if (w.tracked()) t->accumulate(w.node, conv2d_grad_weight(x.val(), w.val().shape(), g, stride, pad));
    });
}

template <typename T>
Var<T> upsample2x_nhwc(Tape<T>* t, const Var<T>& x) {
    Tensor<T> out = upsample2x_nhwc(x.val());
    if (!ag_detail::tracked(t, x)) return constant(std::move(out));
    return t->record(std::move(out), [t, x](const Tensor<T>& g) {
        t->accumulate(x.node, upsample2x_nhwc_grad(g));
    });
}

template <typename T>
Var<T> repeat_rows4(Tape<T>* t, const Var<T>& x) {
    Tensor<T> out = repeat_rows4(x.val());
    if (!ag_detail::tracked(t, x)) return constant(std::move(out));
    return t->record(std::move(out), [t, x](const Tensor<T>& g) {
        t->accumulate(x.node, repeat_rows4_grad(g));
    });
}

template <typename T>
Var<T> kron_upsample4(Tape<T>* t, const Var<T>& x) {
    Tensor<T> out = kron_upsample4(x.val());
    if (!ag_detail::tracked(t, x)) return constant(std::move(out));
    return t->record(std::move(out), [t, x](const Tensor<T>& g) {
        t->accumulate(x.node, kron_upsample4_grad(g));
    });
}

/// (1 - E) ∘ up + E ∘ fine with a constant mask.
template <typename T>
Var<T> merge_core(Tape<T>* t, const Var<T>& up, const Var<T>& fine, const Tensor<T>& mask) {
    Tensor<T> out = merge_core(up.val(), fine.val(), mask);
    if (!ag_detail::tracked(t, up, fine)) return constant(std::move(out));
    auto mask_ptr = std::make_shared<Tensor<T>>(mask);
    return t->record(std::move(out), [t, up, fine, mask_ptr](const Tensor<T>& g) {
        const Tensor<T>& e = *mask_ptr;
        const std::int64_t nn = e.numel();
        const std::int64_t groups = g.numel() / nn;
        if (up.tracked()) {
            Tensor<T> gu(g.shape());
            for (std::int64_t gi = 0; gi < groups; ++gi) {
                for (std::int64_t i = 0; i < nn; ++i) {
                    gu[gi * nn + i] = (T(1) - e[i]) * g[gi * nn + i];
                }
            }
            t->accumulate(up.node, gu);
        }
        if (fine.tracked()) {
            Tensor<T> gf(g.shape());
            for (std::int64_t gi = 0; gi < groups; ++gi) {
                for (std::int64_t i = 0; i < nn; ++i) {
                    gf[gi * nn + i] = e[i] * g[gi * nn + i];
                }
            }
            t->accumulate(fine.node, gf);
        }
    });
}

template <typename T>
Var<T> renorm_rows(Tape<T>* t, const Var<T>& x) {
    Tensor<T> out = renorm_rows(x.val());
    if (!ag_detail::tracked(t, x)) return constant(std::move(out));
    auto saved = std::make_shared<Tensor<T>>(out);
    return t->record(std::move(out), [t, x, saved](const Tensor<T>& g) {
        const Tensor<T>& y = *saved;
        const Tensor<T>& in = x.val();
        const std::int64_t n = y.dim(y.rank() - 1);
        const std::int64_t rows = y.numel() / n;
        Tensor<T> gx(y.shape());
        for (std::int64_t r = 0; r < rows; ++r) {
            T sum = T(0), dot = T(0);
            for (std::int64_t j = 0; j < n; ++j) {
                sum += in[r * n + j];
                dot += g[r * n + j] * y[r * n + j];
            }
            for (std::int64_t j = 0; j < n; ++j) {
                gx[r * n + j] = (g[r * n + j] - dot) / sum;
            }
        }
        t->accumulate(x.node, gx);
    });
}

/// Places [G, Nw, 4, 4] window maps on the diagonal of a [G, 4Nw, 4Nw] map.
template <typename T>
Var<T> assemble_diag4(Tape<T>* t, const Var<T>& blocks) {
    detail::require_rank("assemble_diag4", blocks.val().shape(), 4);
    if (blocks.val().dim(2) != 4 || blocks.val().dim(3) != 4) {
        throw std::invalid_argument("assemble_diag4: blocks must be 4x4, got " +
                                    shape_str(blocks.val().shape()));
    }
    const std::int64_t g = blocks.val().dim(0), nw = blocks.val().dim(1), n = 4 * nw;
    Tensor<T> out(Shape{g, n, n});
    for (std::int64_t gi = 0; gi < g; ++gi) {
        for (std::int64_t wi = 0; wi < nw; ++wi) {
            for (std::int64_t p = 0; p < 4; ++p) {
                for (std::int64_t q = 0; q < 4; ++q) {
                    out.at({gi, 4 * wi + p, 4 * wi + q}) = blocks.val().at({gi, wi, p, q});
                }
            }
        }
    }
    if (!ag_detail::tracked(t, blocks)) return constant(std::move(out));
    return t->record(std::move(out), [t, blocks, g, nw](const Tensor<T>& gr) {
        Tensor<T> gb(Shape{g, nw, 4, 4});
        for (std::int64_t gi = 0; gi < g; ++gi) {
            for (std::int64_t wi = 0; wi < nw; ++wi) {
                for (std::int64_t p = 0; p < 4; ++p) {
                    for (std::int64_t q = 0; q < 4; ++q) {
                        gb.at({gi, wi, p, q}) = gr.at({gi, 4 * wi + p, 4 * wi + q});
                    }
                }
            }
        }
        t->accumulate(blocks.node, gb);
    });
}

/// Means consecutive groups along axis 0: [G, n, m] -> [G/factor, n, m].
/// Carries a deeper map across a head-count drop while keeping rows
/// stochastic (a convex combination of stochastic rows stays stochastic).
template <typename T>
Var<T> group_mean_rows3(Tape<T>* t, const Var<T>& x, std::int64_t factor) {
    detail::require_rank("group_mean_rows3", x.val().shape(), 3);
    const std::int64_t g = x.val().dim(0), n = x.val().dim(1), m = x.val().dim(2);
    if (factor < 1 || g % factor != 0) {
        throw std::invalid_argument("group_mean_rows3: " + std::to_string(g) +
                                    " groups do not divide by " + std::to_string(factor));
    }
    Tensor<T> out(Shape{g / factor, n, m});
    const std::int64_t slab = n * m;
    for (std::int64_t o = 0; o < g / factor; ++o) {
        for (std::int64_t i = 0; i < slab; ++i) {
            T acc = T(0);
            for (std::int64_t j = 0; j < factor; ++j) acc += x.val()[(o * factor + j) * slab + i];
            out[o * slab + i] = acc / static_cast<T>(factor);
        }
    }
    if (!ag_detail::tracked(t, x)) return constant(std::move(out));
    return t->record(std::move(out), [t, x, factor, slab](const Tensor<T>& gr) {
        Tensor<T> gx(x.val().shape());
        const std::int64_t groups_out = gr.numel() / slab;
        for (std::int64_t o = 0; o < groups_out; ++o) {
            for (std::int64_t i = 0; i < slab; ++i) {
                const T v = gr[o * slab + i] / static_cast<T>(factor);
                for (std::int64_t j = 0; j < factor; ++j) gx[(o * factor + j) * slab + i] = v;
            }
        }
        t->accumulate(x.node, gx);
    });
}

template <typename T>
Var<T> sum_all(Tape<T>* t, const Var<T>& x) {
    Tensor<T> out = Tensor<T>::scalar(sum_all(x.val()));
    if (!ag_detail::tracked(t, x)) return constant(std::move(out));
    return t->record(std::move(out), [t, x](const Tensor<T>& g) {
        t->accumulate(x.node, Tensor<T>::full(x.val().shape(), g[0]));
    });
}

/// Mean cross-entropy of [N, C] logits against integer labels, stabilized by
/// per-row max subtraction.
template <typename T>
Var<T> softmax_cross_entropy_mean(Tape<T>* t, const Var<T>& logits,
                                  std::shared_ptr<const std::vector<std::int32_t>> labels) {
    detail::require_rank("softmax_cross_entropy_mean", logits.val().shape(), 2);
    const std::int64_t n = logits.val().dim(0), c = logits.val().dim(1);
    if (static_cast<std::int64_t>(labels->size()) != n) {
        throw std::invalid_argument("softmax_cross_entropy_mean: " + std::to_string(labels->size()) +
                                    " labels for " + std::to_string(n) + " rows");
    }
    detail::require_finite("softmax_cross_entropy_mean", logits.val());
    auto probs = std::make_shared<Tensor<T>>(Shape{n, c});
    T loss = T(0);
    for (std::int64_t i = 0; i < n; ++i) {
        const std::int32_t label = (*labels)[static_cast<std::size_t>(i)];
        if (label < 0 || label >= c) {
            throw std::out_of_range("softmax_cross_entropy_mean: label " + std::to_string(label) +
                                    " out of range for " + std::to_string(c) + " classes");
        }
        const T* row = logits.val().data() + i * c;
        T mx = row[0];
        for (std::int64_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        T sum = T(0);
        for (std::int64_t j = 0; j < c; ++j) {
            const T e = std::exp(row[j] - mx);
            (*probs)[i * c + j] = e;
            sum += e;
        }
        for (std::int64_t j = 0; j < c; ++j) (*probs)[i * c + j] /= sum;
        loss += std::log(sum) + mx - row[label];
    }
    loss /= static_cast<T>(n);
    Tensor<T> out = Tensor<T>::scalar(loss);
    if (!ag_detail::tracked(t, logits)) return constant(std::move(out));
    return t->record(std::move(out), [t, logits, labels, probs, n, c](const Tensor<T>& g) {
        Tensor<T> gx(Shape{n, c});
        const T s = g[0] / static_cast<T>(n);
        for (std::int64_t i = 0; i < n; ++i) {
            const std::int32_t label = (*labels)[static_cast<std::size_t>(i)];
            for (std::int64_t j = 0; j < c; ++j) {
                gx[i * c + j] = s * ((*probs)[i * c + j] - (j == label ? T(1) : T(0)));
            }
        }
        t->accumulate(logits.node, gx);
    });
}

// ---------------------------------------------------------------------------
// Independent gradient oracle.
// ---------------------------------------------------------------------------

/// Central finite differences of a scalar function, one coordinate at a time.
/// The step is scaled per coordinate: eps_i = eps * max(1, |p_i|). Non-finite
/// function values are reported with the offending coordinate.
template <typename T>
Tensor<double> finite_difference_grad(const std::function<double(const Tensor<T>&)>& f,
                                      const Tensor<T>& p, double eps) {
    if (eps <= 0) throw std::invalid_argument("finite_difference_grad: eps must be positive");
    Tensor<double> g(p.shape());
    Tensor<T> probe = p;
    for (std::int64_t i = 0; i < p.numel(); ++i) {
        const double step = eps * std::max(1.0, std::abs(static_cast<double>(p[i])));
        probe[i] = static_cast<T>(static_cast<double>(p[i]) + step);
        const double up = f(probe);
        probe[i] = static_cast<T>(static_cast<double>(p[i]) - step);
        const double down = f(probe);
        probe[i] = p[i];
        if (!std::isfinite(up) || !std::isfinite(down)) {
            throw std::domain_error("finite_difference_grad: non-finite value at coordinate " +
                                    std::to_string(i));
        }
        g[i] = (up - down) / (2.0 * step);
    }
    return g;
}

}  // namespace ammu
