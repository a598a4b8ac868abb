#include "ammu/metrics.hpp"

#include <numeric>
#include <stdexcept>
#include <string>

namespace ammu {

ConfusionMatrix::ConfusionMatrix(std::int64_t classes_) : classes(classes_) {
    if (classes < 1) throw std::invalid_argument("confusion matrix needs at least one class");
    counts.assign(static_cast<std::size_t>(classes * classes), 0);
}

std::uint64_t& ConfusionMatrix::at(std::int64_t truth, std::int64_t pred) {
    return counts[static_cast<std::size_t>(truth * classes + pred)];
}

std::uint64_t ConfusionMatrix::at(std::int64_t truth, std::int64_t pred) const {
    return counts[static_cast<std::size_t>(truth * classes + pred)];
}

std::uint64_t ConfusionMatrix::total() const {
    return std::accumulate(counts.begin(), counts.end(), std::uint64_t{0});
}

void ConfusionMatrix::add(const ConfusionMatrix& other) {
    if (other.classes != classes) {
        throw std::invalid_argument("cannot merge confusion matrices of different class counts");
    }
    for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
}

ConfusionMatrix confusion(const Tensor<int32_t>& pred, const Tensor<int32_t>& truth,
                          std::int64_t classes) {
    if (!pred.same_shape(truth)) {
        throw std::invalid_argument("confusion: prediction shape " + shape_str(pred.shape()) +
                                    " does not match truth shape " + shape_str(truth.shape()));
    }
    ConfusionMatrix cm(classes);
    for (std::int64_t i = 0; i < pred.numel(); ++i) {
        const std::int64_t t = truth[i], p = pred[i];
        if (t < 0 || t >= classes || p < 0 || p >= classes) {
            throw std::out_of_range("confusion: label (" + std::to_string(t) + ", " + std::to_string(p) +
                                    ") out of range for " + std::to_string(classes) + " classes");
        }
        ++cm.at(t, p);
    }
    return cm;
}

ClassStats class_stats(const ConfusionMatrix& cm, std::int64_t cls) {
    if (cls < 0 || cls >= cm.classes) throw std::out_of_range("class_stats: class out of range");
    ClassStats s;
    for (std::int64_t t = 0; t < cm.classes; ++t) {
        for (std::int64_t p = 0; p < cm.classes; ++p) {
            const std::uint64_t n = cm.at(t, p);
            if (t == cls && p == cls) s.tp += n;
            else if (p == cls) s.fp += n;
            else if (t == cls) s.fn += n;
            else s.tn += n;
        }
    }
    return s;
}

double class_iou(const ClassStats& s) {
    const std::uint64_t uni = s.tp + s.fp + s.fn;
    if (uni == 0) return 1.0;  // absent and never predicted
    return static_cast<double>(s.tp) / static_cast<double>(uni);
}

double class_acc(const ClassStats& s) {
    const std::uint64_t all = s.tp + s.fp + s.fn + s.tn;
    if (all == 0) throw std::invalid_argument("class_acc: empty confusion matrix");
    return static_cast<double>(s.tp + s.tn) / static_cast<double>(all);
}

namespace {

double mean_over_classes(const ConfusionMatrix& cm, double (*f)(const ClassStats&)) {
    if (cm.total() == 0) throw std::invalid_argument("metrics: empty confusion matrix");
    double sum = 0.0;
    for (std::int64_t c = 0; c < cm.classes; ++c) sum += f(class_stats(cm, c));
    return sum / static_cast<double>(cm.classes);
}

}  // namespace

double miou(const ConfusionMatrix& cm) { return mean_over_classes(cm, class_iou); }
double macc(const ConfusionMatrix& cm) { return mean_over_classes(cm, class_acc); }

}  // namespace ammu
