#include "pointcra/metrics.hpp"

#include <stdexcept>

namespace pointcra {

void ConfusionMatrix::add(int truth, int pred) {
    if (truth < 0 || truth >= classes_ || pred < 0 || pred >= classes_)
        throw std::invalid_argument("ConfusionMatrix: class out of range");
    ++cm_[std::size_t(truth) * classes_ + pred];
}

std::int64_t ConfusionMatrix::total() const {
    std::int64_t t = 0;
    for (auto v : cm_) t += v;
    return t;
}

Metrics ConfusionMatrix::metrics() const {
    const std::int64_t n = total();
    if (n == 0) throw std::invalid_argument("ConfusionMatrix: empty");
    Metrics m;
    std::int64_t correct = 0;
    double acc_sum = 0.0, iou_sum = 0.0;
    int acc_classes = 0, iou_classes = 0;
    for (int c = 0; c < classes_; ++c) {
        correct += at(c, c);
        std::int64_t truth_c = 0, pred_c = 0;
        for (int j = 0; j < classes_; ++j) {
            truth_c += at(c, j);
            pred_c += at(j, c);
        }
        if (truth_c > 0) {
            acc_sum += double(at(c, c)) / double(truth_c);
            ++acc_classes;
        }
        std::int64_t uni = truth_c + pred_c - at(c, c);
        if (uni > 0) {
            iou_sum += double(at(c, c)) / double(uni);
            ++iou_classes;
        }
    }
    m.oa = double(correct) / double(n);
    m.macc = acc_classes > 0 ? acc_sum / acc_classes : 0.0;
    m.miou = iou_classes > 0 ? iou_sum / iou_classes : 0.0;
    return m;
}

}  // namespace pointcra
