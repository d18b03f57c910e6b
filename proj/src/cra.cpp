#include "pointcra/cra.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "pointcra/parallel.hpp"

namespace pointcra {

namespace {

using NodePtr = std::shared_ptr<TensorNode>;

NodePtr make_node(Shape shape, const char* op) {
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(shape);
    n->value.resize(std::size_t(shape_numel(n->shape)));
    n->op = op;
    return n;
}

bool wire(const NodePtr& out, std::vector<NodePtr> parents,
          std::function<void(TensorNode&)> bw) {
    bool any = false;
    for (const auto& p : parents) any = any || p->requires_grad;
    if (any) {
        out->requires_grad = true;
        out->parents = std::move(parents);
        out->backward = std::move(bw);
    }
    return any;
}

constexpr double kNormGuard = 1e-12;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

int group_count(int channels, int group_size) {
    if (group_size < 1) throw std::invalid_argument("group_count: group_size must be >= 1");
    return (channels + group_size - 1) / group_size;
}

double gamma_exponent(double pn, double zeta, double alpha_n) {
    return std::exp(alpha_n * (zeta - pn));
}

TrendDeltas trend_deltas(const std::vector<Tensor>& seq, const NeighborhoodIndex& index) {
    if (seq.size() < 2)
        throw std::invalid_argument("trend_deltas: sequence needs at least two stages");
    const std::int64_t m = row_count(seq[0]);
    const int c = int(last_dim(seq[0]));
    for (const auto& t : seq)
        if (row_count(t) != m || last_dim(t) != c)
            throw std::invalid_argument("trend_deltas: sequence shape mismatch");
    const int steps = int(seq.size()) - 1;
    const int k = index.k;
    const std::int64_t centers = index.m();

    // transitions stacked along the last axis: [points, steps*c]
    Tensor trans;
    for (int l = 0; l < steps; ++l) {
        Tensor t = sub(seq[std::size_t(l) + 1], seq[std::size_t(l)]);
        trans = l == 0 ? t : concat_cols(trans, t);
    }
    (void)m;

    std::vector<int> nbr_idx(index.neighbors.begin(), index.neighbors.end());
    Tensor gathered = gather_rows(trans, nbr_idx, centers, k);  // [centers, k, steps*c]
    Tensor nbr_mean = reduce_mean_k(gathered);                  // [centers, steps*c]
    TrendDeltas out;
    out.trans = trans;
    out.nbr = broadcast_sub_k(gathered, nbr_mean);
    std::vector<int> center_idx(index.centers.begin(), index.centers.end());
    Tensor center_rows = gather_rows(trans, center_idx, centers, 1);
    center_rows.node->shape = {centers, std::int64_t(steps) * c};
    out.center = sub(center_rows, nbr_mean);
    out.steps = steps;
    out.channels = c;
    return out;
}

Tensor trend_similarity(const TrendDeltas& deltas, int group_size, bool scalar_sign) {
    const std::int64_t m = deltas.nbr.dim(0);
    const std::int64_t k = deltas.nbr.dim(1);
    const int steps = deltas.steps;
    const int c = deltas.channels;
    const int gn = group_count(c, group_size);

    auto out = make_node({m, k, gn}, "trend_similarity");
    const double* CD = deltas.center.node->value.data();  // [m, steps*c]
    const double* ND = deltas.nbr.node->value.data();     // [m, k, steps*c]
    double* O = out->value.data();

    parallel_for(m, [&](std::int64_t i) {
        const double* cd = CD + i * steps * c;
        for (std::int64_t j = 0; j < k; ++j) {
            const double* nd = ND + (i * k + j) * steps * c;
            double* orow = O + (i * k + j) * gn;
            for (int g = 0; g < gn; ++g) {
                const int d0 = g * group_size;
                const int d1 = std::min(c, d0 + group_size);
                double acc = 0.0;
                for (int l = 0; l < steps; ++l) {
                    const double* u = cd + std::size_t(l) * c;
                    const double* v = nd + std::size_t(l) * c;
                    if (scalar_sign) {
                        // per-channel sign agreement averaged over the group
                        double s = 0.0;
                        for (int d = d0; d < d1; ++d) {
                            if (std::fabs(u[d]) < kNormGuard || std::fabs(v[d]) < kNormGuard) continue;
                            s += (u[d] > 0) == (v[d] > 0) ? 1.0 : -1.0;
                        }
                        acc += s / double(d1 - d0);
                    } else {
                        double dot = 0.0, nu = 0.0, nv = 0.0;
                        for (int d = d0; d < d1; ++d) {
                            dot += u[d] * v[d];
                            nu += u[d] * u[d];
                            nv += v[d] * v[d];
                        }
                        nu = std::sqrt(nu);
                        nv = std::sqrt(nv);
                        if (nu >= kNormGuard && nv >= kNormGuard) acc += dot / (nu * nv);
                    }
                }
                orow[g] = acc / double(steps);
            }
        }
    });

    if (branch_tracking_enabled()) {
        // norm-guard decisions are kinks for the finite-difference harness
        std::vector<int> bits;
        bits.reserve(std::size_t(m * k * gn * steps));
        for (std::int64_t i = 0; i < m; ++i) {
            const double* cd = CD + i * steps * c;
            for (std::int64_t j = 0; j < k; ++j) {
                const double* nd = ND + (i * k + j) * steps * c;
                for (int g = 0; g < gn; ++g) {
                    const int d0 = g * group_size;
                    const int d1 = std::min(c, d0 + group_size);
                    for (int l = 0; l < steps; ++l) {
                        double nu = 0.0, nv = 0.0;
                        for (int d = d0; d < d1; ++d) {
                            nu += cd[std::size_t(l) * c + d] * cd[std::size_t(l) * c + d];
                            nv += nd[std::size_t(l) * c + d] * nd[std::size_t(l) * c + d];
                        }
                        bits.push_back(std::sqrt(nu) < kNormGuard || std::sqrt(nv) < kNormGuard);
                    }
                }
            }
        }
        note_branch_bits(bits.data(), bits.size());
    }

    out->iaux = {int(m), int(k), steps, c, group_size, gn, scalar_sign ? 1 : 0};
    wire(out, {deltas.center.node, deltas.nbr.node}, [](TensorNode& node) {
        const std::int64_t m = node.iaux[0], k = node.iaux[1];
        const int steps = node.iaux[2], c = node.iaux[3];
        const int gs = node.iaux[4], gn = node.iaux[5];
        const bool scalar_sign = node.iaux[6] != 0;
        if (scalar_sign) return;  // piecewise constant, no gradient
        auto& pc = *node.parents[0];
        auto& pn = *node.parents[1];
        const double* CD = pc.value.data();
        const double* ND = pn.value.data();
        const double* G = node.grad.data();
        if (pc.requires_grad) pc.ensure_grad();
        if (pn.requires_grad) pn.ensure_grad();
        double* dC = pc.requires_grad ? pc.grad.data() : nullptr;
        double* dN = pn.requires_grad ? pn.grad.data() : nullptr;
        parallel_for(m, [&](std::int64_t i) {
            const double* cd = CD + i * steps * c;
            double* dcd = dC ? dC + i * steps * c : nullptr;
            for (std::int64_t j = 0; j < k; ++j) {
                const double* nd = ND + (i * k + j) * steps * c;
                double* dnd = dN ? dN + (i * k + j) * steps * c : nullptr;
                const double* grow = G + (i * k + j) * gn;
                for (int g = 0; g < gn; ++g) {
                    double go = grow[g] / double(steps);
                    if (go == 0.0) continue;
                    const int d0 = g * gs;
                    const int d1 = std::min(c, d0 + gs);
                    for (int l = 0; l < steps; ++l) {
                        const double* u = cd + std::size_t(l) * c;
                        const double* v = nd + std::size_t(l) * c;
                        double dot = 0.0, nu2 = 0.0, nv2 = 0.0;
                        for (int d = d0; d < d1; ++d) {
                            dot += u[d] * v[d];
                            nu2 += u[d] * u[d];
                            nv2 += v[d] * v[d];
                        }
                        double nu = std::sqrt(nu2), nv = std::sqrt(nv2);
                        if (nu < kNormGuard || nv < kNormGuard) continue;
                        double inv = 1.0 / (nu * nv);
                        double cosv = dot * inv;
                        for (int d = d0; d < d1; ++d) {
                            if (dcd) dcd[std::size_t(l) * c + d] += go * (v[d] * inv - cosv * u[d] / nu2);
                            if (dnd) dnd[std::size_t(l) * c + d] += go * (u[d] * inv - cosv * v[d] / nv2);
                        }
                    }
                }
            }
        });
    });
    return Tensor(out);
}

Tensor pd_aggregate(const Tensor& pc_groups, int channels, int group_size) {
    const std::int64_t m = pc_groups.dim(0);
    const std::int64_t k = pc_groups.dim(1);
    const int gn = int(pc_groups.dim(2));
    auto out = make_node({m, k}, "pd_aggregate");
    const double* PC = pc_groups.node->value.data();
    double* O = out->value.data();
    // channel mean = group values weighted by member counts, then (s+1)/2
    std::vector<double> weight(static_cast<std::size_t>(gn), 0.0);
    for (int g = 0; g < gn; ++g) {
        int d0 = g * group_size;
        int d1 = std::min(channels, d0 + group_size);
        weight[std::size_t(g)] = double(d1 - d0) / double(channels);
    }
    parallel_for(m * k, [&](std::int64_t r) {
        double acc = 0.0;
        for (int g = 0; g < gn; ++g) acc += PC[r * gn + g] * weight[std::size_t(g)];
        O[r] = 0.5 * (acc + 1.0);
    });
    auto wcopy = weight;
    out->iaux = {gn};
    out->daux = std::move(wcopy);
    wire(out, {pc_groups.node}, [](TensorNode& node) {
        auto& p = *node.parents[0];
        p.ensure_grad();
        const int gn = node.iaux[0];
        const double* G = node.grad.data();
        double* dP = p.grad.data();
        const double* weight = node.daux.data();
        const std::int64_t rows = std::int64_t(node.value.size());
        parallel_for(rows, [&](std::int64_t r) {
            for (int g = 0; g < gn; ++g) dP[r * gn + g] += 0.5 * weight[g] * G[r];
        });
    });
    return Tensor(out);
}

Tensor homogeneity(const Tensor& pd) {
    const std::int64_t m = pd.dim(0);
    const std::int64_t k = pd.dim(1);
    constexpr double kVmax = 0.25;  // max population variance of [0,1] samples
    auto out = make_node({m}, "homogeneity");
    const double* PD = pd.node->value.data();
    double* O = out->value.data();
    parallel_for(m, [&](std::int64_t i) {
        // sorted sums make pn bit-identical under neighbor permutations
        double buf[64];
        std::vector<double> heap;
        double* b = buf;
        if (k > 64) {
            heap.resize(std::size_t(k));
            b = heap.data();
        }
        for (std::int64_t j = 0; j < k; ++j) b[j] = PD[i * k + j];
        std::sort(b, b + k);
        double mean = 0.0;
        for (std::int64_t j = 0; j < k; ++j) mean += b[j];
        mean /= double(k);
        double var = 0.0;
        for (std::int64_t j = 0; j < k; ++j) {
            double d = b[j] - mean;
            var += d * d;
        }
        var /= double(k);
        O[i] = 1.0 - std::exp(-var / kVmax);
    });
    wire(out, {pd.node}, [](TensorNode& node) {
        auto& p = *node.parents[0];
        p.ensure_grad();
        const std::int64_t m = node.shape[0];
        const std::int64_t k = p.shape[1];
        const double* PD = p.value.data();
        const double* G = node.grad.data();
        double* dP = p.grad.data();
        parallel_for(m, [&](std::int64_t i) {
            double mean = 0.0;
            for (std::int64_t j = 0; j < k; ++j) mean += PD[i * k + j];
            mean /= double(k);
            // d pn / d pd_j = exp(-v/vmax)/vmax * 2 (pd_j - mean) / k
            double escale = (1.0 - node.value[std::size_t(i)]) / kVmax;
            for (std::int64_t j = 0; j < k; ++j)
                dP[i * k + j] += G[i] * escale * 2.0 * (PD[i * k + j] - mean) / double(k);
        });
    });
    return Tensor(out);
}

Tensor calibrate_pd(const Tensor& pd, const Tensor& pn, double zeta, double alpha_n, double eps) {
    const std::int64_t m = pd.dim(0);
    const std::int64_t k = pd.dim(1);
    if (pn.numel() != m) throw std::invalid_argument("calibrate_pd: pn size mismatch");
    auto out = make_node({m, k}, "calibrate_pd");
    const double* PD = pd.node->value.data();
    const double* PN = pn.node->value.data();
    double* O = out->value.data();
    parallel_for(m, [&](std::int64_t i) {
        double gamma = gamma_exponent(PN[i], zeta, alpha_n);
        for (std::int64_t j = 0; j < k; ++j)
            O[i * k + j] = std::pow(PD[i * k + j] + eps, gamma);
    });
    out->daux = {zeta, alpha_n, eps};
    wire(out, {pd.node, pn.node}, [](TensorNode& node) {
        const std::int64_t m = node.shape[0], k = node.shape[1];
        const double zeta = node.daux[0], alpha_n = node.daux[1], eps = node.daux[2];
        auto& ppd = *node.parents[0];
        auto& ppn = *node.parents[1];
        const double* PD = ppd.value.data();
        const double* PN = ppn.value.data();
        const double* G = node.grad.data();
        if (ppd.requires_grad) ppd.ensure_grad();
        if (ppn.requires_grad) ppn.ensure_grad();
        double* dPD = ppd.requires_grad ? ppd.grad.data() : nullptr;
        double* dPN = ppn.requires_grad ? ppn.grad.data() : nullptr;
        parallel_for(m, [&](std::int64_t i) {
            double gamma = gamma_exponent(PN[i], zeta, alpha_n);
            double dpn_acc = 0.0;
            for (std::int64_t j = 0; j < k; ++j) {
                double base = PD[i * k + j] + eps;
                double val = node.value[std::size_t(i * k + j)];
                if (dPD) dPD[i * k + j] += G[i * k + j] * gamma * std::pow(base, gamma - 1.0);
                // d/d pn = val * ln(base) * d gamma/d pn, d gamma/d pn = -alpha_n*gamma
                dpn_acc += G[i * k + j] * val * std::log(base) * (-alpha_n * gamma);
            }
            if (dPN) dPN[i] += dpn_acc;
        });
    });
    return Tensor(out);
}

Tensor scale_pc(const Tensor& pc_groups, const Tensor& a, const Tensor& b, const Tensor& c) {
    const std::int64_t m = pc_groups.dim(0);
    const std::int64_t k = pc_groups.dim(1);
    const int gn = int(pc_groups.dim(2));
    if (a.numel() != gn || b.numel() != gn || c.numel() != gn)
        throw std::invalid_argument("scale_pc: parameter size mismatch");
    auto out = make_node({m, k, gn}, "scale_pc");
    const double* PC = pc_groups.node->value.data();
    const double* A = a.node->value.data();
    const double* B = b.node->value.data();
    const double* CP = c.node->value.data();
    double* O = out->value.data();
    parallel_for(m * k, [&](std::int64_t r) {
        for (int g = 0; g < gn; ++g) {
            double s0 = sigmoid(-A[g] * B[g]);
            O[r * gn + g] = CP[g] * (sigmoid(A[g] * (PC[r * gn + g] - B[g])) - s0);
        }
    });
    out->iaux = {gn};
    wire(out, {pc_groups.node, a.node, b.node, c.node}, [](TensorNode& node) {
        const int gn = node.iaux[0];
        const std::int64_t rows = std::int64_t(node.value.size()) / gn;
        auto& ppc = *node.parents[0];
        auto& pa = *node.parents[1];
        auto& pb = *node.parents[2];
        auto& pcp = *node.parents[3];
        const double* PC = ppc.value.data();
        const double* A = pa.value.data();
        const double* B = pb.value.data();
        const double* CP = pcp.value.data();
        const double* G = node.grad.data();
        if (ppc.requires_grad) ppc.ensure_grad();
        if (pa.requires_grad) pa.ensure_grad();
        if (pb.requires_grad) pb.ensure_grad();
        if (pcp.requires_grad) pcp.ensure_grad();
        // per-group accumulation, parallel over groups
        parallel_for(gn, [&](std::int64_t g) {
            const double ag = A[g], bg = B[g], cg = CP[g];
            const double s0 = sigmoid(-ag * bg);
            const double ds0 = s0 * (1.0 - s0);
            double da = 0.0, db = 0.0, dc = 0.0;
            for (std::int64_t r = 0; r < rows; ++r) {
                double x = PC[r * gn + g];
                double go = G[r * gn + g];
                if (go == 0.0) continue;
                double z = ag * (x - bg);
                double sz = sigmoid(z);
                double dsz = sz * (1.0 - sz);
                if (ppc.requires_grad) ppc.grad[std::size_t(r * gn + g)] += go * cg * dsz * ag;
                da += go * cg * (dsz * (x - bg) + ds0 * bg);
                db += go * cg * ag * (ds0 - dsz);
                dc += go * (sz - s0);
            }
            if (pa.requires_grad) pa.grad[std::size_t(g)] += da;
            if (pb.requires_grad) pb.grad[std::size_t(g)] += db;
            if (pcp.requires_grad) pcp.grad[std::size_t(g)] += dc;
        });
    });
    return Tensor(out);
}

Tensor broadcast_groups(const Tensor& pc_groups, int channels, int group_size) {
    const std::int64_t m = pc_groups.dim(0);
    const std::int64_t k = pc_groups.dim(1);
    const int gn = int(pc_groups.dim(2));
    if (gn != group_count(channels, group_size))
        throw std::invalid_argument("broadcast_groups: group count mismatch");
    auto out = make_node({m, k, channels}, "broadcast_groups");
    const double* PC = pc_groups.node->value.data();
    double* O = out->value.data();
    parallel_for(m * k, [&](std::int64_t r) {
        for (int d = 0; d < channels; ++d) O[r * channels + d] = PC[r * gn + d / group_size];
    });
    out->iaux = {gn, channels, group_size};
    wire(out, {pc_groups.node}, [](TensorNode& node) {
        auto& p = *node.parents[0];
        p.ensure_grad();
        const int gn = node.iaux[0], channels = node.iaux[1], gs = node.iaux[2];
        const std::int64_t rows = std::int64_t(node.value.size()) / channels;
        const double* G = node.grad.data();
        double* dP = p.grad.data();
        parallel_for(rows, [&](std::int64_t r) {
            for (int d = 0; d < channels; ++d) dP[r * gn + d / gs] += G[r * channels + d];
        });
    });
    return Tensor(out);
}

Tensor final_weights(const Tensor& pd_cal, const Tensor& pc_scaled) {
    return row_scale(pc_scaled, pd_cal);
}

Tensor weighted_aggregate(const Tensor& w, const Tensor& feats) {
    if (w.shape() != feats.shape() || w.shape().size() != 3)
        throw std::invalid_argument("weighted_aggregate: shape mismatch");
    const std::int64_t m = w.dim(0), k = w.dim(1), c = w.dim(2);
    auto out = make_node({m, c}, "weighted_aggregate");
    const double* W = w.node->value.data();
    const double* F = feats.node->value.data();
    double* O = out->value.data();
    parallel_for(m, [&](std::int64_t i) {
        double prod[64];
        std::vector<double> heap;
        double* buf = prod;
        if (k > 64) {
            heap.resize(std::size_t(k));
            buf = heap.data();
        }
        for (std::int64_t d = 0; d < c; ++d) {
            for (std::int64_t j = 0; j < k; ++j)
                buf[j] = W[(i * k + j) * c + d] * F[(i * k + j) * c + d];
            // ascending-order sum: identical for any neighbor permutation
            std::sort(buf, buf + k);
            double acc = 0.0;
            for (std::int64_t j = 0; j < k; ++j) acc += buf[j];
            O[i * c + d] = acc / double(k);
        }
    });
    wire(out, {w.node, feats.node}, [](TensorNode& node) {
        const std::int64_t m = node.shape[0], c = node.shape[1];
        auto& pw = *node.parents[0];
        auto& pf = *node.parents[1];
        const std::int64_t k = pw.shape[1];
        const double* G = node.grad.data();
        if (pw.requires_grad) pw.ensure_grad();
        if (pf.requires_grad) pf.ensure_grad();
        double* dW = pw.requires_grad ? pw.grad.data() : nullptr;
        double* dF = pf.requires_grad ? pf.grad.data() : nullptr;
        const double* W = pw.value.data();
        const double* F = pf.value.data();
        parallel_for(m, [&](std::int64_t i) {
            for (std::int64_t j = 0; j < k; ++j)
                for (std::int64_t d = 0; d < c; ++d) {
                    double g = G[i * c + d] / double(k);
                    if (dW) dW[(i * k + j) * c + d] += g * F[(i * k + j) * c + d];
                    if (dF) dF[(i * k + j) * c + d] += g * W[(i * k + j) * c + d];
                }
        });
    });
    return Tensor(out);
}

Tensor cra_aggregate(const std::vector<Tensor>& seq, const NeighborhoodIndex& index,
                     const Tensor& grouped_feats, const CraParams& params,
                     const CraSettings& settings, const CraVariant& variant,
                     CraIntermediates* inter, Tensor* w_out) {
    const int c = int(last_dim(seq.front()));
    const std::int64_t m = row_count(seq.front());
    const int gn = group_count(c, settings.group_size);

    std::vector<Tensor> seq_used;
    seq_used.reserve(seq.size());
    for (const auto& t : seq) seq_used.push_back(settings.full_grad ? t : t.detach());

    TrendDeltas deltas = trend_deltas(seq_used, index);
    Tensor pc = trend_similarity(deltas, settings.group_size, settings.scalar_sign);

    Tensor pd, pn, pd_cal;
    if (variant.use_pd) {
        pd = pd_aggregate(pc, c, settings.group_size);
        pn = homogeneity(pd);
        pd_cal = variant.calibrate_pd
                     ? calibrate_pd(pd, pn, settings.zeta, settings.alpha_n, settings.eps)
                     : pd;
    }

    Tensor pc_scaled_groups =
        variant.learnable_scale ? scale_pc(pc, params.a, params.b, params.c) : pc;
    Tensor pc_scaled = broadcast_groups(pc_scaled_groups, c, settings.group_size);
    Tensor w = variant.use_pd ? final_weights(pd_cal, pc_scaled) : pc_scaled;
    Tensor agg = weighted_aggregate(w, grouped_feats);
    if (w_out) *w_out = w;

    if (inter) {
        inter->m = m;
        inter->k = index.k;
        inter->channels = c;
        inter->groups = gn;
        inter->pc = pc.value();
        inter->pc_scaled = pc_scaled_groups.value();
        inter->w = w.value();
        if (variant.use_pd) {
            inter->pd = pd.value();
            inter->pd_cal = pd_cal.value();
            inter->pn = pn.value();
        } else {
            inter->pd.clear();
            inter->pd_cal.clear();
            inter->pn.clear();
        }
    }
    return agg;
}

}  // namespace pointcra
