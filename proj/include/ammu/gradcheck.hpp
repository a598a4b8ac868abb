#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

#include "ammu/autograd.hpp"
#include "ammu/model.hpp"
#include "ammu/train.hpp"

namespace ammu {

struct GradCheckReport {
    std::int64_t params = 0;
    std::int64_t coords = 0;
    std::string worst_param;
    std::int64_t worst_coord = -1;
    double analytic = 0.0;
    double numeric = 0.0;
    double abs_err = 0.0;
    double ratio = 0.0;  // abs_err over the abs_tol + rel_tol * magnitude envelope
    bool pass = false;
};

/// Central-difference check of every parameter coordinate of the mean batch
/// loss. The reported ratio is the worst error relative to its tolerance
/// envelope; at most 1 passes. The default step balances truncation against
/// the ~1e-14 evaluation noise of a full forward pass.
template <typename T>
GradCheckReport gradcheck_params(const Model<T>& model, const ParamSet<T>& params,
                                 const Batch<T>& batch, double abs_tol = 1e-8,
                                 double rel_tol = 1e-5, double eps = 5e-5) {
    model.check_params(params);
    const std::int64_t total = params.total_count();
    if (total == 0) throw std::invalid_argument("gradcheck: model has no parameters");

    Tape<T> tape;
    std::vector<Var<T>> vars = model.bind(&tape, params);
    Var<T> loss = batch_loss(&tape, model, vars, batch);
    tape.backward(loss);
    std::vector<Tensor<T>> analytic;
    analytic.reserve(vars.size());
    for (const auto& v : vars) analytic.push_back(tape.grad(v));

    Tensor<T> flat(Shape{total});
    std::int64_t off = 0;
    for (const auto& v : params.values) {
        for (std::int64_t e = 0; e < v.numel(); ++e) flat[off++] = v[e];
    }
    auto f = [&](const Tensor<T>& probe) {
        ParamSet<T> ps = params;
        std::int64_t at = 0;
        for (auto& v : ps.values) {
            for (std::int64_t e = 0; e < v.numel(); ++e) v[e] = probe[at++];
        }
        return model_loss(model, ps, batch);
    };
    Tensor<double> numeric = finite_difference_grad<T>(f, flat, eps);

    GradCheckReport rep;
    rep.params = static_cast<std::int64_t>(params.values.size());
    rep.coords = total;
    off = 0;
    for (std::size_t i = 0; i < params.values.size(); ++i) {
        for (std::int64_t e = 0; e < params.values[i].numel(); ++e, ++off) {
            const double a = static_cast<double>(analytic[i][e]);
            const double n = numeric[off];
            const double err = std::abs(a - n);
            const double envelope = abs_tol + rel_tol * std::max(std::abs(a), std::abs(n));
            const double ratio = err / envelope;
            if (rep.worst_coord < 0 || ratio > rep.ratio) {
                rep.worst_param = params.names[i];
                rep.worst_coord = e;
                rep.analytic = a;
                rep.numeric = n;
                rep.abs_err = err;
                rep.ratio = ratio;
            }
        }
    }
    rep.pass = rep.ratio <= 1.0;
    return rep;
}

}  // namespace ammu
