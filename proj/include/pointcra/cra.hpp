#pragma once

#include <vector>

#include "pointcra/geom.hpp"
#include "pointcra/tensor.hpp"

namespace pointcra {

// Tunables of the calibration pipeline. a, b and c live per channel group and
// are owned by the model as learnable tensors.
struct CraSettings {
    int group_size = 4;
    double zeta = 0.7;       // homogeneity threshold
    double alpha_n = 1.0;    // scaling strength
    double eps = 1e-6;       // stability constant
    double phi_l = 0.2;      // lower bound on c
    double phi_h = 0.8;      // upper bound on c
    bool full_grad = false;  // differentiate through the trend statistics
    bool scalar_sign = false;  // per-channel sign agreement instead of group cosine
};

// Which pieces of the pipeline are active. Ablation stages toggle these.
struct CraVariant {
    bool use_pd = true;         // multiply point-level weight into w
    bool calibrate_pd = true;   // homogeneity-guided power scaling of pd
    bool learnable_scale = true;  // a,b,c mapping on pc
};

// Per-step transition values, neighborhood mean removed. trans keeps the raw
// per-point transitions before normalization.
struct TrendDeltas {
    Tensor trans;   // [m, steps*c]
    Tensor center;  // [m, steps*c]
    Tensor nbr;     // [m, k, steps*c]
    int steps = 0;
    int channels = 0;
};

int group_count(int channels, int group_size);

// t(l) = f(l+1) - f(l) per point, gathered per neighborhood and normalized by
// the neighborhood mean. seq entries are [m, c] at one resolution; index rows
// address those same m rows.
TrendDeltas trend_deltas(const std::vector<Tensor>& seq, const NeighborhoodIndex& index);

// Step-averaged cosine between center and neighbor group sub-vectors of the
// deltas. Output [m, k, group_count]. No softmax. Sub-vectors with norm below
// 1e-12 contribute zero for that step.
Tensor trend_similarity(const TrendDeltas& deltas, int group_size, bool scalar_sign);

// Channel mean of the group similarities remapped to [0,1] via (s+1)/2.
Tensor pd_aggregate(const Tensor& pc_groups, int channels, int group_size);

// pn_i = 1 - exp(-var_i / 0.25), population variance of the k pd values.
Tensor homogeneity(const Tensor& pd);

// pd' = (pd + eps)^gamma(pn), gamma = exp(alpha_n * (zeta - pn))
Tensor calibrate_pd(const Tensor& pd, const Tensor& pn, double zeta, double alpha_n, double eps);
double gamma_exponent(double pn, double zeta, double alpha_n);

// pc' = c * (sigmoid(a*(pc-b)) - sigmoid(-a*b)) per group; a,b,c are [groups]
Tensor scale_pc(const Tensor& pc_groups, const Tensor& a, const Tensor& b, const Tensor& c);

// [m,k,groups] -> [m,k,channels], group value shared by member channels
Tensor broadcast_groups(const Tensor& pc_groups, int channels, int group_size);

// w = pd_cal (broadcast over channels) * pc_scaled
Tensor final_weights(const Tensor& pd_cal, const Tensor& pc_scaled);

// Per-channel mean over k of w * feats. Products are summed in ascending
// value order, which makes the result invariant to neighbor permutations at
// the bit level.
Tensor weighted_aggregate(const Tensor& w, const Tensor& feats);

// Value snapshots of every intermediate, for statistics and dumps.
struct CraIntermediates {
    std::vector<double> pc;       // [m, k, groups]
    std::vector<double> pc_scaled;  // [m, k, groups] after a,b,c mapping
    std::vector<double> pd;       // [m, k]
    std::vector<double> pd_cal;   // [m, k]
    std::vector<double> pn;       // [m]
    std::vector<double> w;        // [m, k, channels]
    std::int64_t m = 0;
    int k = 0;
    int channels = 0;
    int groups = 0;
};

struct CraParams {
    Tensor a, b, c;  // [groups] each
};

// The full pipeline up to the weighted aggregate. The caller applies the
// stage embedding on the result. With full_grad off, trend statistics are
// computed from detached sequence values and gradients reach only a, b, c and
// the gathered features.
Tensor cra_aggregate(const std::vector<Tensor>& seq, const NeighborhoodIndex& index,
                     const Tensor& grouped_feats, const CraParams& params,
                     const CraSettings& settings, const CraVariant& variant,
                     CraIntermediates* inter, Tensor* w_out = nullptr);

}  // namespace pointcra
