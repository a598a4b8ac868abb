#pragma once

#include <cstdint>
#include <vector>

#include "ammu/tensor.hpp"

namespace ammu {

/// Pixel-level confusion counts. counts[truth * classes + pred]. Accumulation
/// is single-writer; parallel use merges per-worker matrices with add().
struct ConfusionMatrix {
    std::int64_t classes = 0;
    std::vector<std::uint64_t> counts;

    explicit ConfusionMatrix(std::int64_t classes_);

    std::uint64_t& at(std::int64_t truth, std::int64_t pred);
    std::uint64_t at(std::int64_t truth, std::int64_t pred) const;
    std::uint64_t total() const;
    void add(const ConfusionMatrix& other);
};

/// Binary counts for one class against the rest.
struct ClassStats {
    std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
};

ConfusionMatrix confusion(const Tensor<int32_t>& pred, const Tensor<int32_t>& truth,
                          std::int64_t classes);

ClassStats class_stats(const ConfusionMatrix& cm, std::int64_t cls);

/// Intersection over union for one class. A class absent from both prediction
/// and truth scores 1.
double class_iou(const ClassStats& s);

/// Binary accuracy for one class: (tp + tn) / all.
double class_acc(const ClassStats& s);

/// Means over classes. Throw on an empty matrix.
double miou(const ConfusionMatrix& cm);
double macc(const ConfusionMatrix& cm);

}  // namespace ammu
