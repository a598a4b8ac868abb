#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "ammu/attention.hpp"
#include "ammu/complexity.hpp"
#include "ammu/config.hpp"
#include "ammu/mac_counter.hpp"
#include "ammu/merge.hpp"
#include "ammu/metrics.hpp"
#include "ammu/model.hpp"
#include "ammu/oracles.hpp"
#include "ammu/ordering.hpp"
#include "ammu/rng.hpp"
#include "ammu/train.hpp"

namespace ammu {

/// Outcome of one randomized or enumerated library-versus-reference check.
struct CheckResult {
    std::string name;
    std::string invariant;
    std::int64_t cases = 0;
    double max_err = 0.0;
    bool pass = false;
};

/// Assembled subregion attention against dense attention restricted to
/// diagonal 2x2 blocks, tokens taken subregion-major.
template <typename T>
CheckResult gmsa_dense_check(Rng& rng, std::int64_t trials, double tol) {
    CheckResult r{"gmsa_dense",
                  "assembled subregion maps equal dense attention masked to 2x2 blocks", trials,
                  0.0, false};
    static constexpr std::int64_t grid_opts[] = {2, 4, 6, 8};
    static constexpr std::int64_t head_opts[] = {1, 2, 4};
    for (std::int64_t trial = 0; trial < trials; ++trial) {
        const std::int64_t g = grid_opts[rng.integer(0, 3)];
        const std::int64_t heads = head_opts[rng.integer(0, 2)];
        const std::int64_t dk = rng.integer(2, 4);
        const std::int64_t c = heads * dk;
        Tensor<T> x = random_uniform<T>(Shape{g, g, c}, rng, -1.0, 1.0);
        QkvWeights<T> w{random_uniform<T>(Shape{c, c}, rng, -0.7, 0.7),
                        random_uniform<T>(Shape{c, c}, rng, -0.7, 0.7),
                        random_uniform<T>(Shape{c, c}, rng, -0.7, 0.7)};
        RPBTable<T> rpb{2, 2, random_uniform<T>(Shape{heads, 9}, rng, -0.8, 0.8)};
        AttentionMap<T> am =
            gmsa_assemble(gmsa_subregion_maps(x, w, heads, rpb, 1), OrderingTag::nested(1), 1);

        const std::int64_t n = g * g, half = g / 2;
        std::vector<double> q(static_cast<std::size_t>(heads * n * dk));
        std::vector<double> k(static_cast<std::size_t>(heads * n * dk));
        for (std::int64_t s = 0; s < n / 4; ++s) {
            for (std::int64_t t = 0; t < 4; ++t) {
                const std::int64_t rr = 2 * (s / half) + t / 2;
                const std::int64_t cc = 2 * (s % half) + t % 2;
                const std::int64_t p = s * 4 + t;
                for (std::int64_t h = 0; h < heads; ++h) {
                    for (std::int64_t d = 0; d < dk; ++d) {
                        double aq = 0.0, ak = 0.0;
                        for (std::int64_t e = 0; e < c; ++e) {
                            const double f = static_cast<double>(x.at({rr, cc, e}));
                            aq += f * static_cast<double>(w.wq.at({e, h * dk + d}));
                            ak += f * static_cast<double>(w.wk.at({e, h * dk + d}));
                        }
                        q[static_cast<std::size_t>((h * n + p) * dk + d)] = aq;
                        k[static_cast<std::size_t>((h * n + p) * dk + d)] = ak;
                    }
                }
            }
        }
        std::vector<double> bias(static_cast<std::size_t>(heads * n * n), 0.0);
        for (std::int64_t h = 0; h < heads; ++h) {
            for (std::int64_t p = 0; p < n; ++p) {
                for (std::int64_t qq = 0; qq < n; ++qq) {
                    if (p / 4 != qq / 4) continue;
                    const std::int64_t drow = p % 4 / 2 - qq % 4 / 2;
                    const std::int64_t dcol = p % 2 - qq % 2;
                    const std::int64_t col = (drow + 1) * 3 + (dcol + 1);
                    bias[static_cast<std::size_t>((h * n + p) * n + qq)] =
                        static_cast<double>(rpb.values.at({h, col}));
                }
            }
        }
        const std::vector<double> dense = oracle::dense_block_attention(q, k, &bias, heads, n, dk, 4);
        for (std::int64_t i = 0; i < am.values.numel(); ++i) {
            r.max_err = std::max(r.max_err, std::abs(static_cast<double>(am.values[i]) -
                                                     dense[static_cast<std::size_t>(i)]));
        }
    }
    r.pass = r.max_err <= tol;
    return r;
}

/// Cross-scale merge against the literal elementwise rule, plus row masses
/// under renormalization. corrupt_mask flips one mask entry on the library
/// side only, so a run with it set must fail.
template <typename T>
CheckResult merge_bruteforce_check(Rng& rng, std::int64_t trials, double tol, double row_tol,
                                   bool corrupt_mask = false) {
    CheckResult r{"merge_bruteforce",
                  "merged map equals the elementwise rule and renormalized rows sum to one", trials,
                  0.0, false};
    static constexpr std::int64_t token_opts[] = {16, 64, 256};
    double max_row_err = 0.0;
    for (std::int64_t trial = 0; trial < trials; ++trial) {
        const std::int64_t n = token_opts[trial % 3];
        const std::int64_t g = 1 + trial % 2;
        const MaskGranularity gran =
            (trial / 2) % 2 == 0 ? MaskGranularity::block4 : MaskGranularity::element;
        const bool renorm = trial % 2 == 0;

        auto stochastic = [&](std::int64_t groups, std::int64_t rows) {
            Tensor<T> m = random_uniform<T>(Shape{groups, rows, rows}, rng, 0.05, 1.0);
            for (std::int64_t gi = 0; gi < groups; ++gi) {
                for (std::int64_t p = 0; p < rows; ++p) {
                    T sum = T(0);
                    for (std::int64_t qq = 0; qq < rows; ++qq) sum += m.at({gi, p, qq});
                    for (std::int64_t qq = 0; qq < rows; ++qq) m.at({gi, p, qq}) /= sum;
                }
            }
            return m;
        };
        Tensor<T> deep = stochastic(g, n / 4);
        Tensor<T> fine = stochastic(g, n);
        MaskTemplate<T> mask = build_mask<T>(n, gran);
        std::vector<double> mask_ref(static_cast<std::size_t>(n * n));
        for (std::int64_t i = 0; i < n * n; ++i) mask_ref[static_cast<std::size_t>(i)] =
            static_cast<double>(mask.matrix[i]);
        if (corrupt_mask) {
            mask.matrix.at({0, n - 1}) = T(1) - mask.matrix.at({0, n - 1});
        }

        MergedAttention<T> merged =
            merge_maps(AttentionMap<T>{deep, OrderingTag::raster(), 0},
                       AttentionMap<T>{fine, OrderingTag::nested(1), 1}, mask, renorm);
        const std::vector<double> deep_ref(deep.data(), deep.data() + deep.numel());
        const std::vector<double> fine_ref(fine.data(), fine.data() + fine.numel());
        const std::vector<double> want = oracle::merge_eval(deep_ref, fine_ref, mask_ref, g, n / 4, renorm);
        for (std::int64_t i = 0; i < merged.map.values.numel(); ++i) {
            r.max_err = std::max(r.max_err, std::abs(static_cast<double>(merged.map.values[i]) -
                                                     want[static_cast<std::size_t>(i)]));
        }
        if (renorm) {
            for (std::int64_t gi = 0; gi < g; ++gi) {
                for (std::int64_t p = 0; p < n; ++p) {
                    double sum = 0.0;
                    for (std::int64_t qq = 0; qq < n; ++qq) {
                        sum += static_cast<double>(merged.map.values.at({gi, p, qq}));
                    }
                    max_row_err = std::max(max_row_err, std::abs(sum - 1.0));
                }
            }
        }
    }
    r.pass = r.max_err <= tol && max_row_err <= row_tol;
    r.max_err = std::max(r.max_err, max_row_err);
    return r;
}

/// Nesting permutations against direct digit extraction, with the frozen
/// depth-1 order of a 4x4 grid as an anchor.
inline CheckResult dcm_enumeration_check() {
    CheckResult r{"dcm_enumeration",
                  "nesting permutations match digit extraction and the frozen 4x4 depth-1 order", 0,
                  0.0, false};
    bool ok = true;
    for (std::int64_t h : {2, 4, 8}) {
        for (std::int64_t w : {2, 4, 8}) {
            for (int depth = 1; depth <= 3; ++depth) {
                const std::int64_t cell = std::int64_t(1) << depth;
                if (h % cell != 0 || w % cell != 0) continue;
                ++r.cases;
                const OrderingSpec spec = make_ordering(h, w, depth);
                const std::vector<std::int64_t> ref = oracle::nested_of_raster(h, w, depth);
                for (std::int64_t t = 0; t < h * w; ++t) {
                    ok = ok && spec.raster_to_nested[static_cast<std::size_t>(t)] ==
                                   ref[static_cast<std::size_t>(t)];
                    ok = ok && spec.nested_to_raster[static_cast<std::size_t>(
                                   ref[static_cast<std::size_t>(t)])] == t;
                }
            }
        }
    }
    const std::vector<std::int64_t> frozen{0, 1, 4, 5, 2, 3, 6, 7, 8, 9, 12, 13, 10, 11, 14, 15};
    ++r.cases;
    ok = ok && make_ordering(4, 4, 1).nested_to_raster == frozen;
    r.pass = ok;
    r.max_err = ok ? 0.0 : 1.0;
    return r;
}

/// Closed-form attention costs: worked integer values and the asymptotic
/// ordering over a doubling sweep.
inline CheckResult complexity_check() {
    CheckResult r{"complexity",
                  "worked cost values hold exactly and the granular cost wins asymptotically", 0,
                  0.0, false};
    bool ok = true;
    const ComplexityParams worked{16, 16, 64, 4, 4, 4};
    ++r.cases;
    ok = ok && omega_msa(worked) == 12582912ull;
    ok = ok && omega_wmsa(worked) == 4718592ull;
    ok = ok && omega_gmsa(worked) == 4214784ull;

    std::vector<ComplexityParams> ps;
    for (std::int64_t s : {32, 64, 128, 256}) ps.push_back(ComplexityParams{s, s, 64, 8, 16, 16});
    const std::vector<ComplexityRow> rows = sweep(ps);
    double prev_ratio = 2.0;
    for (const ComplexityRow& row : rows) {
        ++r.cases;
        ok = ok && row.gmsa < row.wmsa && row.wmsa < row.msa;
        ok = ok && row.gmsa_over_msa < prev_ratio;
        prev_ratio = row.gmsa_over_msa;
    }
    r.pass = ok;
    r.max_err = ok ? 0.0 : 1.0;
    return r;
}

/// Counted multiply-accumulates of a plain attention forward against the
/// closed-form 3nC^2 + 2n^2 C.
template <typename T>
CheckResult attention_mac_check(Rng& rng) {
    const std::int64_t n = 8, heads = 2, dk = 4, c = heads * dk;
    Tensor<T> tokens = random_uniform<T>(Shape{n, c}, rng, -1.0, 1.0);
    QkvWeights<T> w{random_uniform<T>(Shape{c, c}, rng, -0.5, 0.5),
                    random_uniform<T>(Shape{c, c}, rng, -0.5, 0.5),
                    random_uniform<T>(Shape{c, c}, rng, -0.5, 0.5)};
    std::uint64_t counted = 0;
    {
        MacScope scope("attention_forward");
        AttentionInputs<T> qkv = project_qkv(tokens, w, heads);
        AttentionMap<T> am = attention_map<T>(qkv, nullptr);
        Tensor<T> out = attention_output(am, qkv.v);
        counted = scope.macs();
    }
    const std::uint64_t expected = static_cast<std::uint64_t>(3 * n * c * c + 2 * n * n * c);
    CheckResult r{"attention_macs",
                  "counted multiply-accumulates equal the closed-form attention count", 1, 0.0,
                  counted == expected};
    r.max_err = std::abs(static_cast<double>(counted) - static_cast<double>(expected));
    return r;
}

/// Confusion-derived segmentation scores against direct per-class counting,
/// plus exact ones for perfect agreement.
inline CheckResult metrics_bruteforce_check(Rng& rng, std::int64_t pairs) {
    CheckResult r{"metrics_bruteforce",
                  "scores match direct per-class counting and perfect agreement scores one", pairs,
                  0.0, false};
    bool ok = true;
    for (std::int64_t i = 0; i < pairs; ++i) {
        const std::int64_t classes = rng.integer(2, 6);
        const std::int64_t h = rng.integer(3, 24), w = rng.integer(3, 24);
        Tensor<int32_t> pred(Shape{h, w});
        Tensor<int32_t> truth(Shape{h, w});
        for (std::int64_t e = 0; e < h * w; ++e) {
            pred[e] = static_cast<int32_t>(rng.integer(0, classes - 1));
            truth[e] = static_cast<int32_t>(rng.integer(0, classes - 1));
        }
        const ConfusionMatrix cm = confusion(pred, truth, classes);

        double iou_sum = 0.0, acc_sum = 0.0;
        std::uint64_t agree = 0;
        for (std::int64_t cls = 0; cls < classes; ++cls) {
            std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
            for (std::int64_t e = 0; e < h * w; ++e) {
                const bool p = pred[e] == cls, t = truth[e] == cls;
                tp += p && t;
                fp += p && !t;
                fn += !p && t;
                tn += !p && !t;
            }
            const ClassStats got = class_stats(cm, cls);
            ok = ok && got.tp == tp && got.fp == fp && got.fn == fn && got.tn == tn;
            const double iou =
                tp + fp + fn == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
            const double acc = static_cast<double>(tp + tn) / static_cast<double>(h * w);
            ok = ok && class_iou(got) == iou && class_acc(got) == acc;
            iou_sum += iou;
            acc_sum += acc;
        }
        for (std::int64_t e = 0; e < h * w; ++e) agree += pred[e] == truth[e];
        ok = ok && miou(cm) == iou_sum / static_cast<double>(classes);
        ok = ok && macc(cm) == acc_sum / static_cast<double>(classes);
        std::uint64_t diag = 0;
        for (std::int64_t cls = 0; cls < classes; ++cls) diag += cm.at(cls, cls);
        ok = ok && diag == agree;

        const ConfusionMatrix same = confusion(truth, truth, classes);
        ok = ok && miou(same) == 1.0 && macc(same) == 1.0;
    }
    r.pass = ok;
    r.max_err = ok ? 0.0 : 1.0;
    return r;
}

/// Reduced widths keep a full gradient coordinate sweep fast; the input
/// grid and the attention structure stay at full size.
inline ModelConfig gradcheck_default_config() {
    ModelConfig cfg;
    cfg.encoder_channels = {2, 2, 4, 4};
    cfg.level_channels = {4, 4};
    cfg.fusion_channels = 4;
    cfg.head_hidden = 6;
    cfg.classes = 3;
    cfg.heads = {2, 1, 1};
    return cfg;
}

struct SmokeOutcome {
    std::vector<double> losses;
    std::vector<double> lrs;
    double ln_classes = 0.0;
    bool initial_ok = false;
    bool monotone_ok = false;
    bool final_ok = false;
    bool pass = false;
};

/// Fixed-batch training run on the synthetic task. The first loss must sit
/// within 1% of ln(classes), the first ten steps must strictly decrease, and
/// runs of >= 500 steps must end below 0.1. Callers may take the trained
/// parameters and the batch for artifact writing.
template <typename T>
SmokeOutcome smoketrain_run(const RunSpec& spec, std::uint64_t seed,
                            ParamSet<T>* final_params = nullptr, Batch<T>* batch_out = nullptr) {
    spec.validate();
    Rng rng(seed);
    Model<T> model(spec.model);
    ParamSet<T> params = model.init_params(rng);
    Batch<T> batch = synthetic_rectangles<T>(rng, spec.batch_size, spec.model.input_h,
                                             spec.model.input_w, spec.model.classes);
    AdamW<T> opt;
    opt.weight_decay = spec.weight_decay;
    const PolySchedule sched{spec.base_lr, spec.train_steps, spec.lr_power};

    SmokeOutcome out;
    out.ln_classes = std::log(static_cast<double>(spec.model.classes));
    for (std::int64_t s = 0; s < spec.train_steps; ++s) {
        const TrainStepResult<T> r = train_step(model, params, opt, sched, batch);
        out.losses.push_back(r.loss);
        out.lrs.push_back(r.lr);
    }
    out.initial_ok = std::abs(out.losses.front() - out.ln_classes) <= 0.01 * out.ln_classes;
    out.monotone_ok = true;
    for (std::size_t s = 1; s < std::min<std::size_t>(out.losses.size(), 10); ++s) {
        out.monotone_ok = out.monotone_ok && out.losses[s] < out.losses[s - 1];
    }
    out.final_ok = spec.train_steps < 500 || out.losses.back() < 0.1;
    out.pass = out.initial_ok && out.monotone_ok && out.final_ok;
    if (final_params) *final_params = std::move(params);
    if (batch_out) *batch_out = std::move(batch);
    return out;
}

struct BenchRow {
    std::int64_t h = 0, w = 0, c = 0, heads = 0, window = 0, anchor = 0;
    std::int64_t attn_params = 0;
    std::uint64_t omega_msa = 0, omega_wmsa = 0, omega_gmsa = 0;
    std::uint64_t expected_macs = 0, measured_macs = 0;
    std::vector<std::int64_t> rep_ns;
    std::int64_t best_ns = 0;
    double gmacs_per_s = 0.0;
};

/// Times the granular attention stage (qkv projection, per-window biased
/// softmax, window mixing) over a size x size token grid. Multiply-accumulate
/// counts come from one instrumented run; timing fields vary run to run.
template <typename T>
BenchRow bench_granular_stage(std::int64_t size, std::int64_t c, std::int64_t heads,
                              std::int64_t window, std::int64_t anchor, std::int64_t reps,
                              Rng& rng) {
    if (reps < 1) throw std::invalid_argument("bench: reps must be positive");
    if (c % heads != 0) throw std::invalid_argument("bench: channels must divide into heads");
    const ComplexityParams cp{size, size, c, window, anchor, anchor};
    validate(cp);

    const std::int64_t n = size * size, dk = c / heads, groups = heads * (n / 4);
    Tensor<T> tokens = random_uniform<T>(Shape{n, c}, rng, -1.0, 1.0);
    QkvWeights<T> w{random_uniform<T>(Shape{c, c}, rng, -0.5, 0.5),
                    random_uniform<T>(Shape{c, c}, rng, -0.5, 0.5),
                    random_uniform<T>(Shape{c, c}, rng, -0.5, 0.5)};
    Tensor<T> rpb = random_uniform<T>(Shape{heads, 9}, rng, -0.5, 0.5);
    const std::vector<std::int64_t> colmap = rpb_pair_columns(2, 2);
    std::vector<std::int64_t> idx(static_cast<std::size_t>(groups * 16));
    std::size_t at = 0;
    for (std::int64_t hh = 0; hh < heads; ++hh) {
        for (std::int64_t s = 0; s < n / 4; ++s) {
            for (std::int64_t pq = 0; pq < 16; ++pq) {
                idx[at++] = hh * 9 + colmap[static_cast<std::size_t>(pq)];
            }
        }
    }

    volatile double sink = 0.0;
    auto stage = [&]() {
        AttentionInputs<T> qkv = project_qkv(tokens, w, heads);
        Tensor<T> q4 = reshape(qkv.q, Shape{groups, 4, dk});
        Tensor<T> k4 = reshape(qkv.k, Shape{groups, 4, dk});
        Tensor<T> v4 = reshape(qkv.v, Shape{groups, 4, dk});
        Tensor<T> scores = scale(bmm_nt(q4, k4), static_cast<T>(1.0 / std::sqrt(static_cast<double>(dk))));
        scores = add(scores, take_flat(rpb, idx, Shape{groups, 4, 4}));
        Tensor<T> out = bmm(softmax_rows(scores), v4);
        sink = sink + static_cast<double>(out[0]);
    };

    BenchRow row;
    row.h = row.w = size;
    row.c = c;
    row.heads = heads;
    row.window = window;
    row.anchor = anchor;
    row.attn_params = 3 * c * c + heads * 9;
    row.omega_msa = omega_msa(cp);
    row.omega_wmsa = omega_wmsa(cp);
    row.omega_gmsa = omega_gmsa(cp);
    row.expected_macs = static_cast<std::uint64_t>(3 * n * c * c + 8 * n * c);
    {
        MacScope scope("granular_stage");
        stage();
        row.measured_macs = scope.macs();
    }
    row.rep_ns.resize(static_cast<std::size_t>(reps));
#pragma omp parallel for schedule(static) if (reps > 1)
    for (std::int64_t rep = 0; rep < reps; ++rep) {
        const auto t0 = std::chrono::steady_clock::now();
        stage();
        const auto t1 = std::chrono::steady_clock::now();
        row.rep_ns[static_cast<std::size_t>(rep)] =
            std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count();
    }
    row.best_ns = *std::min_element(row.rep_ns.begin(), row.rep_ns.end());
    row.gmacs_per_s = static_cast<double>(row.measured_macs) / static_cast<double>(row.best_ns);
    return row;
}

}  // namespace ammu
