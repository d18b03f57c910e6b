#include "pointcra/losses.hpp"

#include <cmath>
#include <memory>
#include <stdexcept>

#include "pointcra/parallel.hpp"

namespace pointcra {

namespace {

using NodePtr = std::shared_ptr<TensorNode>;

constexpr double kNormGuard = 1e-12;

}  // namespace

Tensor orth_loss(const Tensor& w, bool centered) {
    const std::int64_t c = last_dim(w);
    const std::int64_t rows = row_count(w);
    if (c < 2) throw std::invalid_argument("orth_loss: needs at least two channels");

    auto out = std::make_shared<TensorNode>();
    out->shape = {1};
    out->value.resize(1);
    out->op = "orth_loss";

    const double* W = w.node->value.data();
    // column means (zero when not centered), norms, unit columns, gram
    std::vector<double> mean(std::size_t(c), 0.0);
    if (centered) {
        for (std::int64_t i = 0; i < rows; ++i)
            for (std::int64_t d = 0; d < c; ++d) mean[std::size_t(d)] += W[i * c + d];
        for (std::int64_t d = 0; d < c; ++d) mean[std::size_t(d)] /= double(rows);
    }
    std::vector<double> gram(std::size_t(c * c), 0.0);
    parallel_for(c, [&](std::int64_t d1) {
        for (std::int64_t d2 = d1; d2 < c; ++d2) {
            double acc = 0.0;
            for (std::int64_t i = 0; i < rows; ++i)
                acc += (W[i * c + d1] - mean[std::size_t(d1)]) * (W[i * c + d2] - mean[std::size_t(d2)]);
            gram[std::size_t(d1 * c + d2)] = acc;
            gram[std::size_t(d2 * c + d1)] = acc;
        }
    });
    std::vector<double> norm(std::size_t(c), 0.0);
    for (std::int64_t d = 0; d < c; ++d) norm[std::size_t(d)] = std::sqrt(gram[std::size_t(d * c + d)]);

    double acc = 0.0;
    for (std::int64_t d1 = 0; d1 < c; ++d1)
        for (std::int64_t d2 = 0; d2 < c; ++d2) {
            if (d1 == d2) continue;
            double nn = norm[std::size_t(d1)] * norm[std::size_t(d2)];
            if (norm[std::size_t(d1)] < kNormGuard || norm[std::size_t(d2)] < kNormGuard) continue;
            acc += std::fabs(gram[std::size_t(d1 * c + d2)] / nn);
        }
    out->value[0] = acc / double(c * (c - 1));

    // saved: means then norms; cosine matrix recomputed in backward
    out->daux = mean;
    out->daux.insert(out->daux.end(), norm.begin(), norm.end());
    out->iaux = {int(rows), int(c), centered ? 1 : 0};

    if (w.node->requires_grad) {
        out->requires_grad = true;
        out->parents = {w.node};
        out->backward = [](TensorNode& node) {
            const std::int64_t rows = node.iaux[0], c = node.iaux[1];
            const bool centered = node.iaux[2] != 0;
            auto& p = *node.parents[0];
            p.ensure_grad();
            const double* W = p.value.data();
            const double* mean = node.daux.data();
            const double* norm = node.daux.data() + c;
            const double g = node.grad[0] / double(c * (c - 1));

            // unit columns u_d = (w_d - mean_d) / norm_d
            // dL/du_{d1} = sum_{d2 != d1} 2 sign(rho) (u_{d2} - rho u_{d1})
            // dL/dw = (dL/du - u * <dL/du, u>) ... norms already divide inside
            std::vector<double> u(std::size_t(rows * c));
            parallel_for(c, [&](std::int64_t d) {
                if (norm[d] < kNormGuard) {
                    for (std::int64_t i = 0; i < rows; ++i) u[std::size_t(i * c + d)] = 0.0;
                } else {
                    for (std::int64_t i = 0; i < rows; ++i)
                        u[std::size_t(i * c + d)] = (W[i * c + d] - mean[d]) / norm[d];
                }
            });
            std::vector<double> rho(std::size_t(c * c), 0.0);
            parallel_for(c, [&](std::int64_t d1) {
                for (std::int64_t d2 = 0; d2 < c; ++d2) {
                    double acc = 0.0;
                    for (std::int64_t i = 0; i < rows; ++i)
                        acc += u[std::size_t(i * c + d1)] * u[std::size_t(i * c + d2)];
                    rho[std::size_t(d1 * c + d2)] = acc;
                }
            });
            // dW column by column
            parallel_for(c, [&](std::int64_t d1) {
                if (norm[d1] < kNormGuard) return;
                std::vector<double> du(std::size_t(rows), 0.0);
                for (std::int64_t d2 = 0; d2 < c; ++d2) {
                    if (d2 == d1 || norm[d2] < kNormGuard) continue;
                    double r = rho[std::size_t(d1 * c + d2)];
                    double sgn = r > 0.0 ? 1.0 : (r < 0.0 ? -1.0 : 0.0);
                    // ordered pairs count each unordered pair twice
                    for (std::int64_t i = 0; i < rows; ++i)
                        du[std::size_t(i)] += 2.0 * sgn * (u[std::size_t(i * c + d2)] - r * u[std::size_t(i * c + d1)]);
                }
                double proj = 0.0;
                for (std::int64_t i = 0; i < rows; ++i) proj += du[std::size_t(i)] * u[std::size_t(i * c + d1)];
                double msub = 0.0;
                if (centered) {
                    for (std::int64_t i = 0; i < rows; ++i) msub += du[std::size_t(i)] - proj * u[std::size_t(i * c + d1)];
                    msub /= double(rows);
                }
                for (std::int64_t i = 0; i < rows; ++i)
                    p.grad[std::size_t(i * c + d1)] +=
                        g * ((du[std::size_t(i)] - proj * u[std::size_t(i * c + d1)]) / norm[d1] - msub / norm[d1]);
            });
        };
    }
    return Tensor(out);
}

Tensor reg_loss(const std::vector<Tensor>& a, const std::vector<Tensor>& b,
                const std::vector<Tensor>& c, double phi_l, double phi_h) {
    if (a.empty() || a.size() != b.size() || a.size() != c.size())
        throw std::invalid_argument("reg_loss: stage parameter lists mismatch");
    Tensor acc;
    for (std::size_t s = 0; s < a.size(); ++s) {
        Tensor term_b = mean_all(softplus(b[s]));
        Tensor term_a = mean_all(softplus(affine(a[s], -1.0, 1.0)));            // softplus(1 - a)
        Tensor bound = add(softplus(affine(c[s], -1.0, phi_l)),                 // softplus(phi_l - c)
                           softplus(affine(c[s], 1.0, -phi_h)));                // softplus(c - phi_h)
        Tensor stage = add(add(term_b, term_a), mean_all(bound));
        acc = s == 0 ? stage : add(acc, stage);
    }
    return affine(acc, 1.0 / double(a.size()), 0.0);
}

Tensor total_loss(const Tensor& task, const Tensor& reg, const Tensor& orth, double lambda1,
                  double lambda2, LossBreakdown* breakdown) {
    if (lambda1 < 0.0 || lambda2 < 0.0)
        throw std::invalid_argument("total_loss: weights must be nonnegative");
    Tensor total = add(task, add(affine(reg, lambda1, 0.0), affine(orth, lambda2, 0.0)));
    if (breakdown) {
        breakdown->task = task.item();
        breakdown->reg = reg.item();
        breakdown->orth = orth.item();
        breakdown->total = total.item();
        breakdown->lambda1 = lambda1;
        breakdown->lambda2 = lambda2;
    }
    return total;
}

}  // namespace pointcra
