#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ammu/attention.hpp"
#include "ammu/autograd.hpp"
#include "ammu/merge.hpp"
#include "ammu/ordering.hpp"
#include "ammu/rng.hpp"
#include "ammu/tensor.hpp"

namespace ammu {

/// Desk-scale segmentation network: a 4-stage strided-conv encoder feeding a
/// decoder that runs global attention at the deepest grid, two granular
/// attention levels whose maps are merged across scales, a convolutional
/// fusion of the shallowest skip, and a pointwise MLP head.
struct ModelConfig {
    std::int64_t input_h = 64, input_w = 64;             // divisible by 32
    std::array<std::int64_t, 4> encoder_channels{16, 32, 64, 128};
    std::array<std::int64_t, 2> level_channels{64, 32};  // granular levels, deep to shallow
    std::int64_t fusion_channels = 32;
    std::int64_t head_hidden = 768;
    std::int64_t classes = 3;
    std::array<std::int64_t, 3> heads{4, 2, 2};          // deepest, then per granular level
    MaskGranularity granularity = MaskGranularity::block4;
    bool renormalize = true;

    // stage i of 4 downsamples the input by 4 * 2^(i-1)
    std::int64_t stage_h(int i) const { return input_h >> (i + 1); }
    std::int64_t stage_w(int i) const { return input_w >> (i + 1); }

    void validate() const {
        if (input_h < 32 || input_w < 32 || input_h % 32 != 0 || input_w % 32 != 0) {
            throw std::invalid_argument("config: input extents must be positive multiples of 32, got " +
                                        std::to_string(input_h) + "x" + std::to_string(input_w));
        }
        if (classes < 2) {
            throw std::invalid_argument("config: need at least 2 classes, got " + std::to_string(classes));
        }
        for (std::int64_t c : encoder_channels) {
            if (c < 1) throw std::invalid_argument("config: encoder channels must be positive");
        }
        if (level_channels[0] < 1 || level_channels[1] < 1 || fusion_channels < 1 || head_hidden < 1) {
            throw std::invalid_argument("config: decoder channels must be positive");
        }
        for (std::int64_t h : heads) {
            if (h < 1) throw std::invalid_argument("config: head counts must be positive");
        }
        if (encoder_channels[3] % heads[0] != 0) {
            throw std::invalid_argument("config: deepest channels " + std::to_string(encoder_channels[3]) +
                                        " not divisible by " + std::to_string(heads[0]) + " heads");
        }
        for (int l = 0; l < 2; ++l) {
            if (level_channels[static_cast<std::size_t>(l)] % heads[static_cast<std::size_t>(l + 1)] != 0) {
                throw std::invalid_argument("config: level " + std::to_string(l + 1) + " channels not divisible by its heads");
            }
        }
        // merged maps ride across levels by head-group averaging
        if (heads[0] % heads[1] != 0 || heads[1] % heads[2] != 0) {
            throw std::invalid_argument("config: head counts must divide level to level, got " +
                                        std::to_string(heads[0]) + "/" + std::to_string(heads[1]) + "/" +
                                        std::to_string(heads[2]));
        }
    }
};

/// Named parameter storage; ordering is fixed by the model schema.
template <typename T>
struct ParamSet {
    std::vector<std::string> names;
    std::vector<Tensor<T>> values;

    std::size_t add(std::string name, Tensor<T> v) {
        names.push_back(std::move(name));
        values.push_back(std::move(v));
        return values.size() - 1;
    }

    std::size_t index_of(const std::string& name) const {
        for (std::size_t i = 0; i < names.size(); ++i) {
            if (names[i] == name) return i;
        }
        throw std::out_of_range("params: no tensor named " + name);
    }

    std::int64_t total_count() const {
        std::int64_t n = 0;
        for (const auto& v : values) n += v.numel();
        return n;
    }
};

template <typename T>
struct LevelTrace {
    Var<T> fine;      // assembled block-diagonal map [B*heads, n, n]
    Var<T> merged;    // cross-scale merged map, same shape
    Var<T> v_heads;   // [B*heads, n, dv]
    Var<T> attn_out;  // [B, n, C] after head merge
    OrderingTag ordering;
    std::int64_t grid_h = 0, grid_w = 0;
};

template <typename T>
struct ForwardTrace {
    std::array<Var<T>, 4> pyramid;
    Var<T> deep_am;   // [B*heads0, n0, n0]
    Var<T> deep_out;  // [B, n0, C4]
    std::array<LevelTrace<T>, 2> levels;
    Var<T> fused;     // [B, H/4, W/4, Cf]
    Var<T> logits;    // [B, H, W, classes]
};

namespace model_detail {

/// Pointwise linear over the channel axis of [B, n, cin] tokens.
template <typename T>
Var<T> linear_tokens(Tape<T>* t, const Var<T>& x, const Var<T>& w, const Var<T>* b) {
    const Shape& s = x.val().shape();
    Var<T> y = matmul(t, reshape(t, x, Shape{s[0] * s[1], s[2]}), w);
    if (b) y = add_rowvec(t, y, *b);
    return reshape(t, y, Shape{s[0], s[1], w.val().dim(1)});
}

/// [B, n, heads*dk] -> [B*heads, n, dk], batch-major groups.
template <typename T>
Var<T> split_heads_b(Tape<T>* t, const Var<T>& x, std::int64_t heads) {
    const Shape& s = x.val().shape();
    Var<T> y = reshape_permute(t, x, Shape{s[0], s[1], heads, s[2] / heads}, {0, 2, 1, 3});
    return reshape(t, y, Shape{s[0] * heads, s[1], s[2] / heads});
}

/// Inverse of split_heads_b.
template <typename T>
Var<T> merge_heads_b(Tape<T>* t, const Var<T>& x, std::int64_t heads) {
    const Shape& s = x.val().shape();
    Var<T> y = reshape_permute(t, x, Shape{s[0] / heads, heads, s[1], s[2]}, {0, 2, 1, 3});
    return reshape(t, y, Shape{s[0] / heads, s[1], heads * s[2]});
}

/// Flat gather indices expanding a bias table [heads, cols] to
/// [outer*heads, n, n] score biases, head index cycling fastest.
inline std::vector<std::int64_t> bias_gather_indices(std::int64_t outer, std::int64_t heads,
                                                     std::int64_t cols,
                                                     const std::vector<std::int64_t>& colmap) {
    std::vector<std::int64_t> idx(static_cast<std::size_t>(outer * heads) * colmap.size());
    std::size_t at = 0;
    for (std::int64_t o = 0; o < outer; ++o) {
        for (std::int64_t h = 0; h < heads; ++h) {
            for (std::size_t pq = 0; pq < colmap.size(); ++pq) {
                idx[at++] = h * cols + colmap[pq];
            }
        }
    }
    return idx;
}

/// Raster [B, H, W, C] to nested-order [B, H*W, C] tokens, one
/// reshape-permute per nesting level, finest first.
template <typename T>
Var<T> nest_features_var(Tape<T>* t, const Var<T>& x, const OrderingSpec& spec) {
    const std::int64_t b = x.val().dim(0), c = x.val().dim(3), n = spec.tokens();
    Var<T> cur = reshape(t, x, Shape{b, n, c});
    for (int k = spec.depth; k >= 1; --k) {
        const std::int64_t h = spec.height >> (spec.depth - k + 1);
        const std::int64_t w = spec.width >> (spec.depth - k + 1);
        const std::int64_t payload = (n / (4 * h * w)) * c;
        cur = reshape_permute(t, cur, Shape{b, h, 2, w, 2, payload}, {0, 1, 3, 2, 4, 5});
        cur = reshape(t, cur, Shape{b, n, c});
    }
    return cur;
}

/// Nested-order [B, H*W, C] tokens back to the raster map, coarsest first.
template <typename T>
Var<T> dcm_features_var(Tape<T>* t, const Var<T>& x, const OrderingSpec& spec) {
    const std::int64_t b = x.val().dim(0), c = x.val().dim(2), n = spec.tokens();
    Var<T> cur = x;
    for (int k = 1; k <= spec.depth; ++k) {
        const std::int64_t h = spec.height >> (spec.depth - k + 1);
        const std::int64_t w = spec.width >> (spec.depth - k + 1);
        const std::int64_t payload = (n / (4 * h * w)) * c;
        cur = reshape_permute(t, cur, Shape{b, h, w, 2, 2, payload}, {0, 1, 3, 2, 4, 5});
        cur = reshape(t, cur, Shape{b, n, c});
    }
    return reshape(t, cur, Shape{b, spec.height, spec.width, c});
}

}  // namespace model_detail

template <typename T>
class Model {
  public:
    explicit Model(ModelConfig cfg) : cfg_(std::move(cfg)) {
        cfg_.validate();
        const auto& ec = cfg_.encoder_channels;
        std::int64_t cin = 3;
        static constexpr const char* enc_names[4] = {"enc1", "enc2", "enc3", "enc4"};
        for (int i = 0; i < 4; ++i) {
            ids_.enc_w[i] = add_spec(std::string(enc_names[i]) + ".w", Shape{3, 3, cin, ec[static_cast<std::size_t>(i)]},
                                     9 * cin);
            ids_.enc_b[i] = add_spec(std::string(enc_names[i]) + ".b", Shape{ec[static_cast<std::size_t>(i)]}, 0);
            cin = ec[static_cast<std::size_t>(i)];
        }
        const std::int64_t c4 = ec[3];
        const std::int64_t h0 = cfg_.stage_h(4), w0 = cfg_.stage_w(4);
        ids_.deep_wq = add_spec("deep.wq", Shape{c4, c4}, c4);
        ids_.deep_wk = add_spec("deep.wk", Shape{c4, c4}, c4);
        ids_.deep_wv = add_spec("deep.wv", Shape{c4, c4}, c4);
        ids_.deep_rpb = add_spec("deep.rpb", Shape{cfg_.heads[0], (2 * h0 - 1) * (2 * w0 - 1)}, 0);
        std::int64_t cprev = c4;
        for (int l = 0; l < 2; ++l) {
            const std::string base = "lvl" + std::to_string(l + 1);
            const std::int64_t cskip = ec[static_cast<std::size_t>(2 - l)];
            const std::int64_t cl = cfg_.level_channels[static_cast<std::size_t>(l)];
            auto& ii = ids_.lvl[l];
            ii.proj_w = add_spec(base + ".proj.w", Shape{cprev + cskip, cl}, cprev + cskip);
            ii.proj_b = add_spec(base + ".proj.b", Shape{cl}, 0);
            ii.wq = add_spec(base + ".wq", Shape{cl, cl}, cl);
            ii.wk = add_spec(base + ".wk", Shape{cl, cl}, cl);
            ii.wv = add_spec(base + ".wv", Shape{cl, cl}, cl);
            ii.rpb = add_spec(base + ".rpb", Shape{cfg_.heads[static_cast<std::size_t>(l + 1)], 9}, 0);
            cprev = cl;
        }
        ids_.fuse_w = add_spec("fuse.w", Shape{3, 3, cprev + ec[0], cfg_.fusion_channels}, 9 * (cprev + ec[0]));
        ids_.fuse_b = add_spec("fuse.b", Shape{cfg_.fusion_channels}, 0);
        ids_.head_w1 = add_spec("head.w1", Shape{cfg_.fusion_channels, cfg_.head_hidden}, cfg_.fusion_channels);
        ids_.head_b1 = add_spec("head.b1", Shape{cfg_.head_hidden}, 0);
        ids_.head_w2 = add_spec("head.w2", Shape{cfg_.head_hidden, cfg_.classes}, cfg_.head_hidden);
        ids_.head_b2 = add_spec("head.b2", Shape{cfg_.classes}, 0);
    }

    const ModelConfig& config() const { return cfg_; }
    std::size_t param_count() const { return schema_.size(); }

    /// Weights uniform in +-1/sqrt(fan_in); biases and bias tables zero. With
    /// uniform_logit_head the final head layer starts at zero, so the first
    /// loss is exactly ln(classes).
    ParamSet<T> init_params(Rng& rng, bool uniform_logit_head = true) const {
        ParamSet<T> ps;
        for (std::size_t i = 0; i < schema_.size(); ++i) {
            const ParamSpec& sp = schema_[i];
            Tensor<T> v(sp.shape);
            const bool zero = sp.fan_in == 0 || (uniform_logit_head && static_cast<int>(i) == ids_.head_w2);
            if (!zero) {
                const double bound = 1.0 / std::sqrt(static_cast<double>(sp.fan_in));
                fill_uniform(v, rng, -bound, bound);
            }
            ps.add(sp.name, std::move(v));
        }
        return ps;
    }

    void check_params(const ParamSet<T>& ps) const {
        if (ps.values.size() != schema_.size()) {
            throw std::invalid_argument("params: expected " + std::to_string(schema_.size()) +
                                        " tensors, got " + std::to_string(ps.values.size()));
        }
        for (std::size_t i = 0; i < schema_.size(); ++i) {
            if (ps.names[i] != schema_[i].name || ps.values[i].shape() != schema_[i].shape) {
                throw std::invalid_argument("params: tensor " + std::to_string(i) + " should be " +
                                            schema_[i].name + " " + shape_str(schema_[i].shape) + ", got " +
                                            ps.names[i] + " " + shape_str(ps.values[i].shape()));
            }
        }
    }

    /// Tape leaves in schema order; nullptr tape yields frozen constants.
    std::vector<Var<T>> bind(Tape<T>* t, const ParamSet<T>& ps) const {
        check_params(ps);
        std::vector<Var<T>> vars;
        vars.reserve(ps.values.size());
        for (const auto& v : ps.values) {
            vars.push_back(t ? t->leaf(v) : constant(v));
        }
        return vars;
    }

    ForwardTrace<T> forward(Tape<T>* t, const std::vector<Var<T>>& p, const Tensor<T>& image) const {
        using namespace model_detail;
        if (p.size() != schema_.size()) {
            throw std::invalid_argument("forward: expected " + std::to_string(schema_.size()) +
                                        " parameters, got " + std::to_string(p.size()));
        }
        detail::require_rank("forward image", image.shape(), 4);
        if (image.dim(1) != cfg_.input_h || image.dim(2) != cfg_.input_w || image.dim(3) != 3) {
            throw std::invalid_argument("forward: image " + shape_str(image.shape()) + " does not match " +
                                        std::to_string(cfg_.input_h) + "x" + std::to_string(cfg_.input_w) + "x3");
        }
        const std::int64_t b = image.dim(0);
        ForwardTrace<T> tr;

        static constexpr int strides[4] = {4, 2, 2, 2};
        Var<T> x = constant(image);
        for (int i = 0; i < 4; ++i) {
            x = conv2d(t, x, p[static_cast<std::size_t>(ids_.enc_w[i])], strides[i], 1);
            x = map_tanh(t, add_rowvec(t, x, p[static_cast<std::size_t>(ids_.enc_b[i])]));
            tr.pyramid[static_cast<std::size_t>(i)] = x;
        }

        // global attention at the deepest grid; raster doubles as nesting depth 0
        const std::int64_t h0 = cfg_.stage_h(4), w0 = cfg_.stage_w(4), n0 = h0 * w0;
        const std::int64_t c4 = cfg_.encoder_channels[3];
        const std::int64_t hd0 = cfg_.heads[0], dk0 = c4 / hd0;
        Var<T> tokens0 = reshape(t, tr.pyramid[3], Shape{b, n0, c4});
        Var<T> q0 = split_heads_b(t, linear_tokens<T>(t, tokens0, p[static_cast<std::size_t>(ids_.deep_wq)], nullptr), hd0);
        Var<T> k0 = split_heads_b(t, linear_tokens<T>(t, tokens0, p[static_cast<std::size_t>(ids_.deep_wk)], nullptr), hd0);
        Var<T> v0 = split_heads_b(t, linear_tokens<T>(t, tokens0, p[static_cast<std::size_t>(ids_.deep_wv)], nullptr), hd0);
        Var<T> scores0 = scale(t, bmm_nt(t, q0, k0), static_cast<T>(1.0 / std::sqrt(static_cast<double>(dk0))));
        auto idx0 = std::make_shared<const std::vector<std::int64_t>>(bias_gather_indices(
            b, hd0, (2 * h0 - 1) * (2 * w0 - 1), rpb_pair_columns(h0, w0)));
        scores0 = add(t, scores0, gather(t, p[static_cast<std::size_t>(ids_.deep_rpb)], idx0, Shape{b * hd0, n0, n0}));
        Var<T> am0 = softmax_rows(t, scores0);
        tr.deep_am = am0;
        Var<T> feat = merge_heads_b(t, bmm(t, am0, v0), hd0);  // [B, n0, C4]
        tr.deep_out = feat;

        const std::vector<std::int64_t> colmap22 = rpb_pair_columns(2, 2);
        Var<T> prev_am = am0;
        std::int64_t prev_heads = hd0;
        for (int l = 0; l < 2; ++l) {
            const std::int64_t gh = h0 << (l + 1), gw = w0 << (l + 1), n = gh * gw, nsub = n / 4;
            const std::int64_t cl = cfg_.level_channels[static_cast<std::size_t>(l)];
            const std::int64_t hd = cfg_.heads[static_cast<std::size_t>(l + 1)], dk = cl / hd;
            const auto& ii = ids_.lvl[l];
            const OrderingSpec spec = make_ordering(gh, gw, l + 1);

            // children inherit the parent feature; skip arrives in nested order
            Var<T> up_feat = repeat_rows4(t, feat);
            Var<T> skip_n = nest_features_var(t, tr.pyramid[static_cast<std::size_t>(2 - l)], spec);
            Var<T> xl = linear_tokens(t, concat_last(t, up_feat, skip_n),
                                      p[static_cast<std::size_t>(ii.proj_w)],
                                      &p[static_cast<std::size_t>(ii.proj_b)]);
            xl = map_tanh(t, xl);

            // granular attention: nested order keeps each subregion contiguous
            auto win_split = [&](const Var<T>& tok) {
                Var<T> y = reshape_permute(t, tok, Shape{b, nsub, 4, hd, dk}, {0, 1, 3, 2, 4});
                return reshape(t, y, Shape{b * nsub * hd, 4, dk});
            };
            Var<T> q = win_split(linear_tokens<T>(t, xl, p[static_cast<std::size_t>(ii.wq)], nullptr));
            Var<T> k = win_split(linear_tokens<T>(t, xl, p[static_cast<std::size_t>(ii.wk)], nullptr));
            Var<T> scores = scale(t, bmm_nt(t, q, k), static_cast<T>(1.0 / std::sqrt(static_cast<double>(dk))));
            auto idx = std::make_shared<const std::vector<std::int64_t>>(
                bias_gather_indices(b * nsub, hd, 9, colmap22));
            scores = add(t, scores, gather(t, p[static_cast<std::size_t>(ii.rpb)], idx, Shape{b * nsub * hd, 4, 4}));
            Var<T> win_maps = softmax_rows(t, scores);
            Var<T> blocks = reshape_permute(t, win_maps, Shape{b, nsub, hd, 4, 4}, {0, 2, 1, 3, 4});
            Var<T> fine = assemble_diag4(t, reshape(t, blocks, Shape{b * hd, nsub, 4, 4}));

            // deeper map: average head groups if the count drops, then spread
            Var<T> adapted = prev_heads == hd ? prev_am : group_mean_rows3(t, prev_am, prev_heads / hd);
            Var<T> up_am = kron_upsample4(t, adapted);
            const Tensor<T> mask = build_mask<T>(n, cfg_.granularity).matrix;
            Var<T> merged = merge_core(t, up_am, fine, mask);
            if (cfg_.renormalize) merged = renorm_rows(t, merged);

            Var<T> v = split_heads_b(t, linear_tokens<T>(t, xl, p[static_cast<std::size_t>(ii.wv)], nullptr), hd);
            Var<T> attn = bmm(t, merged, v);
            feat = merge_heads_b(t, attn, hd);
            tr.levels[static_cast<std::size_t>(l)] =
                LevelTrace<T>{fine, merged, v, feat, OrderingTag::nested(l + 1), gh, gw};
            prev_am = merged;
            prev_heads = hd;
        }

        // back to raster, fuse the shallowest skip, then the pointwise head
        const OrderingSpec spec2 = make_ordering(h0 << 2, w0 << 2, 2);
        Var<T> raster = dcm_features_var(t, feat, spec2);
        Var<T> up = upsample2x_nhwc(t, raster);
        Var<T> fused = conv2d(t, concat_last(t, up, tr.pyramid[0]),
                              p[static_cast<std::size_t>(ids_.fuse_w)], 1, 1);
        fused = map_tanh(t, add_rowvec(t, fused, p[static_cast<std::size_t>(ids_.fuse_b)]));
        tr.fused = fused;

        const std::int64_t hq = cfg_.input_h / 4, wq = cfg_.input_w / 4;
        Var<T> flat = reshape(t, fused, Shape{b * hq * wq, cfg_.fusion_channels});
        Var<T> hidden = map_tanh(t, add_rowvec(t, matmul(t, flat, p[static_cast<std::size_t>(ids_.head_w1)]),
                                               p[static_cast<std::size_t>(ids_.head_b1)]));
        Var<T> logits = add_rowvec(t, matmul(t, hidden, p[static_cast<std::size_t>(ids_.head_w2)]),
                                   p[static_cast<std::size_t>(ids_.head_b2)]);
        logits = reshape(t, logits, Shape{b, hq, wq, cfg_.classes});
        tr.logits = upsample2x_nhwc(t, upsample2x_nhwc(t, logits));
        return tr;
    }

  private:
    struct ParamSpec {
        std::string name;
        Shape shape;
        std::int64_t fan_in;  // 0: initialize to zero
    };
    struct LevelIds {
        int proj_w, proj_b, wq, wk, wv, rpb;
    };
    struct Ids {
        int enc_w[4], enc_b[4];
        int deep_wq, deep_wk, deep_wv, deep_rpb;
        LevelIds lvl[2];
        int fuse_w, fuse_b;
        int head_w1, head_b1, head_w2, head_b2;
    };

    int add_spec(std::string name, Shape shape, std::int64_t fan_in) {
        schema_.push_back(ParamSpec{std::move(name), std::move(shape), fan_in});
        return static_cast<int>(schema_.size()) - 1;
    }

    ModelConfig cfg_;
    std::vector<ParamSpec> schema_;
    Ids ids_{};
};

}  // namespace ammu
