#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "ammu/model.hpp"
#include "ammu/rng.hpp"
#include "ammu/tensor.hpp"

namespace ammu {

/// Decoupled weight decay: p -= lr * (mhat / (sqrt(vhat) + eps) + wd * p).
template <typename T>
struct AdamW {
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8, weight_decay = 0.01;
    std::int64_t step_count = 0;
    std::vector<Tensor<T>> m, v;

    void step(ParamSet<T>& params, const std::vector<Tensor<T>>& grads, double lr) {
        if (grads.size() != params.values.size()) {
            throw std::invalid_argument("adamw: " + std::to_string(grads.size()) + " gradients for " +
                                        std::to_string(params.values.size()) + " parameters");
        }
        if (m.empty()) {
            for (const auto& p : params.values) {
                m.emplace_back(p.shape());
                v.emplace_back(p.shape());
            }
        }
        ++step_count;
        const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
        const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
        for (std::size_t i = 0; i < params.values.size(); ++i) {
            Tensor<T>& p = params.values[i];
            const Tensor<T>& g = grads[i];
            if (!p.same_shape(g)) {
                throw std::invalid_argument("adamw: gradient shape " + shape_str(g.shape()) +
                                            " for parameter " + params.names[i]);
            }
            for (std::int64_t e = 0; e < p.numel(); ++e) {
                const double ge = static_cast<double>(g[e]);
                const double me = beta1 * static_cast<double>(m[i][e]) + (1.0 - beta1) * ge;
                const double ve = beta2 * static_cast<double>(v[i][e]) + (1.0 - beta2) * ge * ge;
                m[i][e] = static_cast<T>(me);
                v[i][e] = static_cast<T>(ve);
                const double update = (me / c1) / (std::sqrt(ve / c2) + eps) +
                                      weight_decay * static_cast<double>(p[e]);
                p[e] = static_cast<T>(static_cast<double>(p[e]) - lr * update);
            }
        }
    }
};

/// lr(s) = base * (1 - s/total)^power for steps s in [0, total).
struct PolySchedule {
    double base_lr = 1e-4;
    std::int64_t total_steps = 500;
    double power = 0.9;

    double lr_at(std::int64_t s) const {
        if (total_steps < 1) throw std::invalid_argument("schedule: total_steps must be positive");
        if (s < 0 || s >= total_steps) {
            throw std::out_of_range("schedule: step " + std::to_string(s) + " outside [0, " +
                                    std::to_string(total_steps) + ")");
        }
        return base_lr * std::pow(1.0 - static_cast<double>(s) / static_cast<double>(total_steps), power);
    }
};

template <typename T>
struct Batch {
    Tensor<T> images;  // [B, H, W, 3]
    std::shared_ptr<const std::vector<std::int32_t>> labels;  // row-major [B*H*W]
};

/// Axis-aligned rectangles of random class over a background, pixel color a
/// per-class base plus small noise; trivially separable by color. Rectangle
/// edges sit on 4-pixel block boundaries, so labels are constant within
/// every 4x4 block.
template <typename T>
Batch<T> synthetic_rectangles(Rng& rng, std::int64_t b, std::int64_t h, std::int64_t w,
                              std::int64_t classes) {
    if (classes < 2) throw std::invalid_argument("synthetic_rectangles: need at least 2 classes");
    if (h % 4 != 0 || w % 4 != 0) {
        throw std::invalid_argument("synthetic_rectangles: sides must be multiples of 4");
    }
    Tensor<T> images(Shape{b, h, w, 3});
    auto labels = std::make_shared<std::vector<std::int32_t>>(static_cast<std::size_t>(b * h * w), 0);
    // fixed palette on cube corners, shrinking shells past eight classes
    auto base = [](std::int64_t cls, std::int64_t ch) {
        const double mag = 0.8 / static_cast<double>(1 + cls / 8);
        return ((cls >> ch) & 1) ? -mag : mag;
    };
    for (std::int64_t bi = 0; bi < b; ++bi) {
        std::vector<std::int32_t> grid(static_cast<std::size_t>(h * w), 0);
        const std::int64_t rects = rng.integer(2, 4);
        const std::int64_t bh = h / 4, bw = w / 4;
        for (std::int64_t r = 0; r < rects; ++r) {
            const std::int32_t cls = static_cast<std::int32_t>(rng.integer(1, classes - 1));
            const std::int64_t rh = 4 * rng.integer(std::max<std::int64_t>(1, bh / 8),
                                                    std::max<std::int64_t>(1, bh / 2));
            const std::int64_t rw = 4 * rng.integer(std::max<std::int64_t>(1, bw / 8),
                                                    std::max<std::int64_t>(1, bw / 2));
            const std::int64_t r0 = 4 * rng.integer(0, bh - rh / 4);
            const std::int64_t c0 = 4 * rng.integer(0, bw - rw / 4);
            for (std::int64_t i = r0; i < r0 + rh; ++i) {
                for (std::int64_t j = c0; j < c0 + rw; ++j) {
                    grid[static_cast<std::size_t>(i * w + j)] = cls;
                }
            }
        }
        for (std::int64_t i = 0; i < h; ++i) {
            for (std::int64_t j = 0; j < w; ++j) {
                const std::int32_t cls = grid[static_cast<std::size_t>(i * w + j)];
                (*labels)[static_cast<std::size_t>((bi * h + i) * w + j)] = cls;
                for (std::int64_t ch = 0; ch < 3; ++ch) {
                    images.at({bi, i, j, ch}) =
                        static_cast<T>(base(cls, ch) + rng.uniform(-0.05, 0.05));
                }
            }
        }
    }
    return Batch<T>{std::move(images), std::move(labels)};
}

/// Mean pixel cross-entropy of a forward pass, differentiable when taped.
template <typename T>
Var<T> batch_loss(Tape<T>* t, const Model<T>& model, const std::vector<Var<T>>& params,
                  const Batch<T>& batch) {
    ForwardTrace<T> tr = model.forward(t, params, batch.images);
    const Shape& s = tr.logits.val().shape();
    Var<T> flat = reshape(t, tr.logits, Shape{s[0] * s[1] * s[2], s[3]});
    return softmax_cross_entropy_mean(t, flat, batch.labels);
}

/// Forward-only loss for a frozen parameter set.
template <typename T>
double model_loss(const Model<T>& model, const ParamSet<T>& params, const Batch<T>& batch) {
    std::vector<Var<T>> vars = model.bind(static_cast<Tape<T>*>(nullptr), params);
    return static_cast<double>(batch_loss(static_cast<Tape<T>*>(nullptr), model, vars, batch).val()[0]);
}

template <typename T>
struct TrainStepResult {
    double loss = 0;
    double lr = 0;
};

/// One taped forward/backward and an optimizer update at the scheduled rate.
template <typename T>
TrainStepResult<T> train_step(const Model<T>& model, ParamSet<T>& params, AdamW<T>& opt,
                              const PolySchedule& sched, const Batch<T>& batch) {
    Tape<T> tape;
    std::vector<Var<T>> vars = model.bind(&tape, params);
    Var<T> loss = batch_loss(&tape, model, vars, batch);
    tape.backward(loss);
    std::vector<Tensor<T>> grads;
    grads.reserve(vars.size());
    for (const auto& v : vars) grads.push_back(tape.grad(v));
    const double lr = sched.lr_at(opt.step_count);
    opt.step(params, grads, lr);
    return TrainStepResult<T>{static_cast<double>(loss.val()[0]), lr};
}

}  // namespace ammu
