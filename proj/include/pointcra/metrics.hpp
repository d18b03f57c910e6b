#pragma once

#include <cstdint>
#include <vector>

namespace pointcra {

struct Metrics {
    double oa = 0.0;
    double macc = 0.0;
    double miou = 0.0;
};

// Rows are ground truth, columns are predictions.
class ConfusionMatrix {
public:
    explicit ConfusionMatrix(int classes) : classes_(classes), cm_(std::size_t(classes) * classes, 0) {}
    void add(int truth, int pred);
    std::int64_t at(int truth, int pred) const { return cm_[std::size_t(truth) * classes_ + pred]; }
    std::int64_t total() const;
    int classes() const { return classes_; }

    // OA, mean per-class accuracy and mean IoU. Classes absent from both the
    // predictions and the truth are excluded from the means.
    Metrics metrics() const;

private:
    int classes_;
    std::vector<std::int64_t> cm_;
};

}  // namespace pointcra
