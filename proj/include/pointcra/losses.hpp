#pragma once

#include <vector>

#include "pointcra/tensor.hpp"

namespace pointcra {

// Scalar pieces of one training objective. total = task + l1*reg + l2*orth.
struct LossBreakdown {
    double task = 0.0;
    double reg = 0.0;
    double orth = 0.0;
    double total = 0.0;
    double lambda1 = 0.0;
    double lambda2 = 0.0;
};

// Mean over ordered channel pairs of |cos(w_d1, w_d2)|, channels flattened
// over all rows. Zero-norm channels contribute zero to their pairs. The
// centered flag subtracts per-channel means first (Pearson-style variant).
Tensor orth_loss(const Tensor& w_rows_by_channels, bool centered = false);

// softplus(b) + softplus(1 - a) + softplus(phi_l - c) + softplus(c - phi_h),
// each term averaged over the group entries of every stage.
Tensor reg_loss(const std::vector<Tensor>& a, const std::vector<Tensor>& b,
                const std::vector<Tensor>& c, double phi_l, double phi_h);

// task + lambda1*reg + lambda2*orth as one graph node; the breakdown records
// the scalar values.
Tensor total_loss(const Tensor& task, const Tensor& reg, const Tensor& orth, double lambda1,
                  double lambda2, LossBreakdown* breakdown);

}  // namespace pointcra
