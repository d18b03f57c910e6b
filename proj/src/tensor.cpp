#include "pointcra/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <unordered_set>

#include "pointcra/parallel.hpp"

namespace pointcra {

std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

std::int64_t last_dim(const Tensor& t) { return t.shape().empty() ? 1 : t.shape().back(); }

std::int64_t row_count(const Tensor& t) {
    std::int64_t d = last_dim(t);
    return d == 0 ? 0 : t.numel() / d;
}

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

void check(bool cond, const char* msg) {
    if (!cond) throw std::invalid_argument(msg);
}

}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    auto n = make_node(std::move(shape), "leaf");
    n->requires_grad = requires_grad;
    return Tensor(n);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(shape);
    check(std::int64_t(values.size()) == shape_numel(n->shape), "Tensor::from: size mismatch");
    n->value = std::move(values);
    n->requires_grad = requires_grad;
    return Tensor(n);
}

Tensor Tensor::scalar(double v) { return from({1}, {v}); }

Tensor Tensor::detach() const {
    auto n = std::make_shared<TensorNode>();
    n->shape = node->shape;
    n->value = node->value;
    return Tensor(n);
}

void backward(const Tensor& root) {
    check(root.numel() == 1, "backward: root must be scalar");
    // iterative post-order topo sort
    std::vector<TensorNode*> order;
    std::unordered_set<TensorNode*> seen;
    std::vector<std::pair<TensorNode*, std::size_t>> stack;
    stack.push_back({root.node.get(), 0});
    seen.insert(root.node.get());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            TensorNode* p = n->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }
    root.node->ensure_grad();
    root.node->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorNode* n = *it;
        if (n->backward) {
            n->ensure_grad();
            n->backward(*n);
        }
    }
}

// ---- elementwise ------------------------------------------------------------

Tensor relu(const Tensor& x) {
    auto out = make_node(x.shape(), "relu");
    const auto& xv = x.node->value;
    auto& ov = out->value;
    parallel_for(std::int64_t(xv.size()), [&](std::int64_t i) { ov[i] = xv[i] > 0.0 ? xv[i] : 0.0; });
    if (branch_tracking_enabled()) {
        std::vector<int> bits(xv.size());
        for (std::size_t i = 0; i < xv.size(); ++i) bits[i] = xv[i] > 0.0;
        note_branch_bits(bits.data(), bits.size());
    }
    wire(out, {x.node}, [](TensorNode& n) {
        auto& p = *n.parents[0];
        p.ensure_grad();
        for (std::size_t i = 0; i < n.value.size(); ++i)
            if (p.value[i] > 0.0) p.grad[i] += n.grad[i];
    });
    return Tensor(out);
}

Tensor add(const Tensor& a, const Tensor& b) {
    check(a.numel() == b.numel(), "add: size mismatch");
    auto out = make_node(a.shape(), "add");
    const auto& av = a.node->value;
    const auto& bv = b.node->value;
    auto& ov = out->value;
    parallel_for(std::int64_t(av.size()), [&](std::int64_t i) { ov[i] = av[i] + bv[i]; });
    wire(out, {a.node, b.node}, [](TensorNode& n) {
        for (int s = 0; s < 2; ++s) {
            auto& p = *n.parents[s];
            if (!p.requires_grad) continue;
            p.ensure_grad();
            for (std::size_t i = 0; i < n.value.size(); ++i) p.grad[i] += n.grad[i];
        }
    });
    return Tensor(out);
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check(a.numel() == b.numel(), "sub: size mismatch");
    auto out = make_node(a.shape(), "sub");
    const auto& av = a.node->value;
    const auto& bv = b.node->value;
    auto& ov = out->value;
    parallel_for(std::int64_t(av.size()), [&](std::int64_t i) { ov[i] = av[i] - bv[i]; });
    wire(out, {a.node, b.node}, [](TensorNode& n) {
        auto& pa = *n.parents[0];
        auto& pb = *n.parents[1];
        if (pa.requires_grad) {
            pa.ensure_grad();
            for (std::size_t i = 0; i < n.value.size(); ++i) pa.grad[i] += n.grad[i];
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            for (std::size_t i = 0; i < n.value.size(); ++i) pb.grad[i] -= n.grad[i];
        }
    });
    return Tensor(out);
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check(a.numel() == b.numel(), "mul: size mismatch");
    auto out = make_node(a.shape(), "mul");
    const auto& av = a.node->value;
    const auto& bv = b.node->value;
    auto& ov = out->value;
    parallel_for(std::int64_t(av.size()), [&](std::int64_t i) { ov[i] = av[i] * bv[i]; });
    wire(out, {a.node, b.node}, [](TensorNode& n) {
        auto& pa = *n.parents[0];
        auto& pb = *n.parents[1];
        if (pa.requires_grad) {
            pa.ensure_grad();
            for (std::size_t i = 0; i < n.value.size(); ++i) pa.grad[i] += n.grad[i] * pb.value[i];
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            for (std::size_t i = 0; i < n.value.size(); ++i) pb.grad[i] += n.grad[i] * pa.value[i];
        }
    });
    return Tensor(out);
}

Tensor affine(const Tensor& x, double scale, double shift) {
    auto out = make_node(x.shape(), "affine");
    const auto& xv = x.node->value;
    auto& ov = out->value;
    parallel_for(std::int64_t(xv.size()), [&](std::int64_t i) { ov[i] = scale * xv[i] + shift; });
    out->daux = {scale};
    wire(out, {x.node}, [](TensorNode& n) {
        auto& p = *n.parents[0];
        p.ensure_grad();
        double s = n.daux[0];
        for (std::size_t i = 0; i < n.value.size(); ++i) p.grad[i] += s * n.grad[i];
    });
    return Tensor(out);
}

Tensor softplus(const Tensor& x) {
    auto out = make_node(x.shape(), "softplus");
    const auto& xv = x.node->value;
    auto& ov = out->value;
    parallel_for(std::int64_t(xv.size()), [&](std::int64_t i) {
        double v = xv[i];
        ov[i] = v > 30.0 ? v : std::log1p(std::exp(v));
    });
    wire(out, {x.node}, [](TensorNode& n) {
        auto& p = *n.parents[0];
        p.ensure_grad();
        for (std::size_t i = 0; i < n.value.size(); ++i) {
            double sig = 1.0 / (1.0 + std::exp(-p.value[i]));
            p.grad[i] += sig * n.grad[i];
        }
    });
    return Tensor(out);
}

// ---- linear algebra ---------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& w) {
    check(w.shape().size() == 2, "matmul: weight must be 2-d");
    const std::int64_t k = w.dim(0), n = w.dim(1);
    check(last_dim(a) == k, "matmul: inner dimension mismatch");
    const std::int64_t r = row_count(a);

    Shape out_shape = a.shape();
    out_shape.back() = n;
    auto out = make_node(std::move(out_shape), "matmul");
    const double* A = a.node->value.data();
    const double* W = w.node->value.data();
    double* C = out->value.data();
    parallel_for(r, [&](std::int64_t i) {
        double* crow = C + i * n;
        std::fill(crow, crow + n, 0.0);
        const double* arow = A + i * k;
        for (std::int64_t t = 0; t < k; ++t) {
            double av = arow[t];
            const double* wrow = W + t * n;
            for (std::int64_t j = 0; j < n; ++j) crow[j] += av * wrow[j];
        }
    });
    out->iaux = {int(r), int(k), int(n)};
    wire(out, {a.node, w.node}, [](TensorNode& node) {
        const std::int64_t r = node.iaux[0], k = node.iaux[1], n = node.iaux[2];
        auto& pa = *node.parents[0];
        auto& pw = *node.parents[1];
        const double* G = node.grad.data();
        if (pa.requires_grad) {
            pa.ensure_grad();
            const double* W = pw.value.data();
            double* dA = pa.grad.data();
            parallel_for(r, [&](std::int64_t i) {
                const double* grow = G + i * n;
                double* darow = dA + i * k;
                for (std::int64_t t = 0; t < k; ++t) {
                    const double* wrow = W + t * n;
                    double acc = 0.0;
                    for (std::int64_t j = 0; j < n; ++j) acc += grow[j] * wrow[j];
                    darow[t] += acc;
                }
            });
        }
        if (pw.requires_grad) {
            pw.ensure_grad();
            const double* A = pa.value.data();
            double* dW = pw.grad.data();
            parallel_for(k, [&](std::int64_t t) {
                double* dwrow = dW + t * n;
                for (std::int64_t i = 0; i < r; ++i) {
                    double av = A[i * k + t];
                    const double* grow = G + i * n;
                    for (std::int64_t j = 0; j < n; ++j) dwrow[j] += av * grow[j];
                }
            });
        }
    });
    return Tensor(out);
}

Tensor bias_add(const Tensor& x, const Tensor& b) {
    const std::int64_t n = last_dim(x);
    check(b.numel() == n, "bias_add: bias size mismatch");
    const std::int64_t r = row_count(x);
    auto out = make_node(x.shape(), "bias_add");
    const double* X = x.node->value.data();
    const double* B = b.node->value.data();
    double* O = out->value.data();
    parallel_for(r, [&](std::int64_t i) {
        for (std::int64_t j = 0; j < n; ++j) O[i * n + j] = X[i * n + j] + B[j];
    });
    out->iaux = {int(r), int(n)};
    wire(out, {x.node, b.node}, [](TensorNode& node) {
        const std::int64_t r = node.iaux[0], n = node.iaux[1];
        auto& px = *node.parents[0];
        auto& pb = *node.parents[1];
        const double* G = node.grad.data();
        if (px.requires_grad) {
            px.ensure_grad();
            double* dX = px.grad.data();
            parallel_for(r * n, [&](std::int64_t i) { dX[i] += G[i]; });
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            double* dB = pb.grad.data();
            parallel_for(n, [&](std::int64_t j) {
                double acc = 0.0;
                for (std::int64_t i = 0; i < r; ++i) acc += G[i * n + j];
                dB[j] += acc;
            });
        }
    });
    return Tensor(out);
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
    const std::int64_t ca = last_dim(a), cb = last_dim(b);
    const std::int64_t r = row_count(a);
    check(row_count(b) == r, "concat_cols: row count mismatch");
    Shape shape = a.shape();
    shape.back() = ca + cb;
    auto out = make_node(std::move(shape), "concat_cols");
    const double* A = a.node->value.data();
    const double* B = b.node->value.data();
    double* O = out->value.data();
    const std::int64_t n = ca + cb;
    parallel_for(r, [&](std::int64_t i) {
        for (std::int64_t j = 0; j < ca; ++j) O[i * n + j] = A[i * ca + j];
        for (std::int64_t j = 0; j < cb; ++j) O[i * n + ca + j] = B[i * cb + j];
    });
    out->iaux = {int(r), int(ca), int(cb)};
    wire(out, {a.node, b.node}, [](TensorNode& node) {
        const std::int64_t r = node.iaux[0], ca = node.iaux[1], cb = node.iaux[2];
        const std::int64_t n = ca + cb;
        auto& pa = *node.parents[0];
        auto& pb = *node.parents[1];
        const double* G = node.grad.data();
        if (pa.requires_grad) {
            pa.ensure_grad();
            double* dA = pa.grad.data();
            parallel_for(r, [&](std::int64_t i) {
                for (std::int64_t j = 0; j < ca; ++j) dA[i * ca + j] += G[i * n + j];
            });
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            double* dB = pb.grad.data();
            parallel_for(r, [&](std::int64_t i) {
                for (std::int64_t j = 0; j < cb; ++j) dB[i * cb + j] += G[i * n + ca + j];
            });
        }
    });
    return Tensor(out);
}

Tensor gather_rows(const Tensor& x, const std::vector<int>& idx, std::int64_t m, std::int64_t k) {
    const std::int64_t d = last_dim(x);
    const std::int64_t nrows = row_count(x);
    check(std::int64_t(idx.size()) == m * k, "gather_rows: index size mismatch");
    for (int i : idx) check(i >= 0 && i < nrows, "gather_rows: index out of range");
    auto out = make_node({m, k, d}, "gather_rows");
    const double* X = x.node->value.data();
    double* O = out->value.data();
    parallel_for(m * k, [&](std::int64_t r) {
        const double* src = X + std::int64_t(idx[std::size_t(r)]) * d;
        double* dst = O + r * d;
        for (std::int64_t j = 0; j < d; ++j) dst[j] = src[j];
    });
    out->iaux.assign(idx.begin(), idx.end());
    wire(out, {x.node}, [](TensorNode& node) {
        auto& p = *node.parents[0];
        p.ensure_grad();
        const std::int64_t d = node.shape.back();
        const std::int64_t rows = std::int64_t(node.iaux.size());
        const double* G = node.grad.data();
        double* dX = p.grad.data();
        // serial scatter keeps accumulation order fixed
        for (std::int64_t r = 0; r < rows; ++r) {
            double* dst = dX + std::int64_t(node.iaux[std::size_t(r)]) * d;
            const double* g = G + r * d;
            for (std::int64_t j = 0; j < d; ++j) dst[j] += g[j];
        }
    });
    return Tensor(out);
}

Tensor reduce_max_k(const Tensor& x) {
    check(x.shape().size() == 3, "reduce_max_k: expects [m,k,d]");
    const std::int64_t m = x.dim(0), k = x.dim(1), d = x.dim(2);
    auto out = make_node({m, d}, "reduce_max_k");
    const double* X = x.node->value.data();
    double* O = out->value.data();
    out->iaux.resize(std::size_t(m * d));
    int* amax = out->iaux.data();
    parallel_for(m, [&](std::int64_t i) {
        for (std::int64_t c = 0; c < d; ++c) {
            double best = X[(i * k) * d + c];
            int bj = 0;
            for (std::int64_t j = 1; j < k; ++j) {
                double v = X[(i * k + j) * d + c];
                if (v > best) {
                    best = v;
                    bj = int(j);
                }
            }
            O[i * d + c] = best;
            amax[i * d + c] = bj;
        }
    });
    note_branch_bits(out->iaux.data(), out->iaux.size());
    wire(out, {x.node}, [](TensorNode& node) {
        auto& p = *node.parents[0];
        p.ensure_grad();
        const std::int64_t m = node.shape[0], d = node.shape[1];
        const std::int64_t k = p.shape[1];
        const double* G = node.grad.data();
        double* dX = p.grad.data();
        const int* amax = node.iaux.data();
        parallel_for(m, [&](std::int64_t i) {
            for (std::int64_t c = 0; c < d; ++c)
                dX[(i * k + amax[i * d + c]) * d + c] += G[i * d + c];
        });
    });
    return Tensor(out);
}

Tensor reduce_mean_k(const Tensor& x) {
    check(x.shape().size() == 3, "reduce_mean_k: expects [m,k,d]");
    const std::int64_t m = x.dim(0), k = x.dim(1), d = x.dim(2);
    auto out = make_node({m, d}, "reduce_mean_k");
    const double* X = x.node->value.data();
    double* O = out->value.data();
    parallel_for(m, [&](std::int64_t i) {
        // ascending-order sum keeps the mean bit-identical under any
        // permutation of the k entries
        double buf[64];
        std::vector<double> heap;
        double* b = buf;
        if (k > 64) {
            heap.resize(std::size_t(k));
            b = heap.data();
        }
        for (std::int64_t c = 0; c < d; ++c) {
            for (std::int64_t j = 0; j < k; ++j) b[j] = X[(i * k + j) * d + c];
            std::sort(b, b + k);
            double acc = 0.0;
            for (std::int64_t j = 0; j < k; ++j) acc += b[j];
            O[i * d + c] = acc / double(k);
        }
    });
    wire(out, {x.node}, [](TensorNode& node) {
        auto& p = *node.parents[0];
        p.ensure_grad();
        const std::int64_t m = node.shape[0], d = node.shape[1];
        const std::int64_t k = p.shape[1];
        const double* G = node.grad.data();
        double* dX = p.grad.data();
        parallel_for(m, [&](std::int64_t i) {
            for (std::int64_t j = 0; j < k; ++j)
                for (std::int64_t c = 0; c < d; ++c)
                    dX[(i * k + j) * d + c] += G[i * d + c] / double(k);
        });
    });
    return Tensor(out);
}

Tensor broadcast_sub_k(const Tensor& x, const Tensor& b) {
    check(x.shape().size() == 3, "broadcast_sub_k: expects [m,k,d]");
    const std::int64_t m = x.dim(0), k = x.dim(1), d = x.dim(2);
    check(b.numel() == m * d, "broadcast_sub_k: broadcast size mismatch");
    auto out = make_node({m, k, d}, "broadcast_sub_k");
    const double* X = x.node->value.data();
    const double* B = b.node->value.data();
    double* O = out->value.data();
    parallel_for(m, [&](std::int64_t i) {
        for (std::int64_t j = 0; j < k; ++j)
            for (std::int64_t c = 0; c < d; ++c)
                O[(i * k + j) * d + c] = X[(i * k + j) * d + c] - B[i * d + c];
    });
    wire(out, {x.node, b.node}, [](TensorNode& node) {
        const std::int64_t m = node.shape[0], k = node.shape[1], d = node.shape[2];
        auto& px = *node.parents[0];
        auto& pb = *node.parents[1];
        const double* G = node.grad.data();
        if (px.requires_grad) {
            px.ensure_grad();
            double* dX = px.grad.data();
            parallel_for(m * k * d, [&](std::int64_t i) { dX[i] += G[i]; });
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            double* dB = pb.grad.data();
            parallel_for(m, [&](std::int64_t i) {
                for (std::int64_t j = 0; j < k; ++j)
                    for (std::int64_t c = 0; c < d; ++c) dB[i * d + c] -= G[(i * k + j) * d + c];
            });
        }
    });
    return Tensor(out);
}

Tensor row_scale(const Tensor& x, const Tensor& s) {
    const std::int64_t rows = s.numel();
    check(x.numel() % rows == 0, "row_scale: rows must divide x");
    const std::int64_t d = x.numel() / rows;
    auto out = make_node(x.shape(), "row_scale");
    const double* X = x.node->value.data();
    const double* S = s.node->value.data();
    double* O = out->value.data();
    parallel_for(rows, [&](std::int64_t i) {
        for (std::int64_t j = 0; j < d; ++j) O[i * d + j] = X[i * d + j] * S[i];
    });
    out->iaux = {int(rows), int(d)};
    wire(out, {x.node, s.node}, [](TensorNode& node) {
        const std::int64_t rows = node.iaux[0], d = node.iaux[1];
        auto& px = *node.parents[0];
        auto& ps = *node.parents[1];
        const double* G = node.grad.data();
        if (px.requires_grad) {
            px.ensure_grad();
            double* dX = px.grad.data();
            const double* S = ps.value.data();
            parallel_for(rows, [&](std::int64_t i) {
                for (std::int64_t j = 0; j < d; ++j) dX[i * d + j] += G[i * d + j] * S[i];
            });
        }
        if (ps.requires_grad) {
            ps.ensure_grad();
            double* dS = ps.grad.data();
            const double* X = px.value.data();
            parallel_for(rows, [&](std::int64_t i) {
                double acc = 0.0;
                for (std::int64_t j = 0; j < d; ++j) acc += G[i * d + j] * X[i * d + j];
                dS[i] += acc;
            });
        }
    });
    return Tensor(out);
}

Tensor segment_max(const Tensor& x, std::int64_t segments) {
    const std::int64_t d = last_dim(x);
    const std::int64_t rows = row_count(x);
    check(segments >= 1 && rows % segments == 0, "segment_max: rows must split evenly");
    const std::int64_t len = rows / segments;
    auto out = make_node({segments, d}, "segment_max");
    const double* X = x.node->value.data();
    double* O = out->value.data();
    out->iaux.resize(std::size_t(segments * d));
    int* amax = out->iaux.data();
    parallel_for(segments, [&](std::int64_t s) {
        for (std::int64_t c = 0; c < d; ++c) {
            double best = X[(s * len) * d + c];
            int bi = 0;
            for (std::int64_t i = 1; i < len; ++i) {
                double v = X[(s * len + i) * d + c];
                if (v > best) {
                    best = v;
                    bi = int(i);
                }
            }
            O[s * d + c] = best;
            amax[s * d + c] = bi;
        }
    });
    note_branch_bits(out->iaux.data(), out->iaux.size());
    wire(out, {x.node}, [](TensorNode& node) {
        auto& p = *node.parents[0];
        p.ensure_grad();
        const std::int64_t segments = node.shape[0], d = node.shape[1];
        const std::int64_t len = (std::int64_t(p.value.size()) / d) / segments;
        const double* G = node.grad.data();
        double* dX = p.grad.data();
        const int* amax = node.iaux.data();
        parallel_for(segments, [&](std::int64_t s) {
            for (std::int64_t c = 0; c < d; ++c)
                dX[(s * len + amax[s * d + c]) * d + c] += G[s * d + c];
        });
    });
    return Tensor(out);
}

Tensor segment_mean(const Tensor& x, std::int64_t segments) {
    const std::int64_t d = last_dim(x);
    const std::int64_t rows = row_count(x);
    check(segments >= 1 && rows % segments == 0, "segment_mean: rows must split evenly");
    const std::int64_t len = rows / segments;
    auto out = make_node({segments, d}, "segment_mean");
    const double* X = x.node->value.data();
    double* O = out->value.data();
    parallel_for(segments, [&](std::int64_t s) {
        for (std::int64_t c = 0; c < d; ++c) {
            double acc = 0.0;
            for (std::int64_t i = 0; i < len; ++i) acc += X[(s * len + i) * d + c];
            O[s * d + c] = acc / double(len);
        }
    });
    wire(out, {x.node}, [](TensorNode& node) {
        auto& p = *node.parents[0];
        p.ensure_grad();
        const std::int64_t segments = node.shape[0], d = node.shape[1];
        const std::int64_t len = (std::int64_t(p.value.size()) / d) / segments;
        const double* G = node.grad.data();
        double* dX = p.grad.data();
        parallel_for(segments, [&](std::int64_t s) {
            for (std::int64_t i = 0; i < len; ++i)
                for (std::int64_t c = 0; c < d; ++c)
                    dX[(s * len + i) * d + c] += G[s * d + c] / double(len);
        });
    });
    return Tensor(out);
}

Tensor mean_all(const Tensor& x) {
    const std::int64_t n = x.numel();
    check(n > 0, "mean_all: empty tensor");
    auto out = make_node({1}, "mean_all");
    const double* X = x.node->value.data();
    double acc = 0.0;
    for (std::int64_t i = 0; i < n; ++i) acc += X[i];
    out->value[0] = acc / double(n);
    wire(out, {x.node}, [](TensorNode& node) {
        auto& p = *node.parents[0];
        p.ensure_grad();
        double g = node.grad[0] / double(p.value.size());
        for (std::size_t i = 0; i < p.value.size(); ++i) p.grad[i] += g;
    });
    return Tensor(out);
}

Tensor interp_rows(const Tensor& x, const std::vector<int>& idx, const std::vector<double>& w,
                   std::int64_t m, int taps) {
    const std::int64_t d = last_dim(x);
    check(std::int64_t(idx.size()) == m * taps && idx.size() == w.size(),
          "interp_rows: index/weight size mismatch");
    auto out = make_node({m, d}, "interp_rows");
    const double* X = x.node->value.data();
    double* O = out->value.data();
    parallel_for(m, [&](std::int64_t i) {
        double* dst = O + i * d;
        std::fill(dst, dst + d, 0.0);
        for (int t = 0; t < taps; ++t) {
            double wt = w[std::size_t(i) * taps + t];
            const double* src = X + std::int64_t(idx[std::size_t(i) * taps + t]) * d;
            for (std::int64_t c = 0; c < d; ++c) dst[c] += wt * src[c];
        }
    });
    out->iaux.assign(idx.begin(), idx.end());
    out->daux = w;
    out->iaux.push_back(taps);
    wire(out, {x.node}, [](TensorNode& node) {
        auto& p = *node.parents[0];
        p.ensure_grad();
        const std::int64_t d = node.shape[1];
        const std::int64_t m = node.shape[0];
        const int taps = node.iaux.back();
        const double* G = node.grad.data();
        double* dX = p.grad.data();
        for (std::int64_t i = 0; i < m; ++i) {
            for (int t = 0; t < taps; ++t) {
                double wt = node.daux[std::size_t(i) * taps + t];
                double* dst = dX + std::int64_t(node.iaux[std::size_t(i) * taps + t]) * d;
                const double* g = G + i * d;
                for (std::int64_t c = 0; c < d; ++c) dst[c] += wt * g[c];
            }
        }
    });
    return Tensor(out);
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  std::vector<double>& running_mean, std::vector<double>& running_var,
                  bool training, double momentum, double eps) {
    const std::int64_t d = last_dim(x);
    const std::int64_t r = row_count(x);
    check(gamma.numel() == d && beta.numel() == d, "batch_norm: parameter size mismatch");
    check(std::int64_t(running_mean.size()) == d && std::int64_t(running_var.size()) == d,
          "batch_norm: running buffer size mismatch");
    check(r >= 1, "batch_norm: empty input");

    auto out = make_node(x.shape(), "batch_norm");
    const double* X = x.node->value.data();
    const double* Gm = gamma.node->value.data();
    const double* Bt = beta.node->value.data();
    double* O = out->value.data();

    // daux layout: [xhat (r*d)] [inv_std (d)] ; iaux: {r, d, training}
    out->daux.resize(std::size_t(r * d + d));
    double* xhat = out->daux.data();
    double* inv_std = out->daux.data() + r * d;

    if (training) {
        std::vector<double> mean(std::size_t(d), 0.0), var(std::size_t(d), 0.0);
        parallel_for(d, [&](std::int64_t c) {
            double acc = 0.0;
            for (std::int64_t i = 0; i < r; ++i) acc += X[i * d + c];
            double mu = acc / double(r);
            double vacc = 0.0;
            for (std::int64_t i = 0; i < r; ++i) {
                double dv = X[i * d + c] - mu;
                vacc += dv * dv;
            }
            double v = vacc / double(r);
            mean[c] = mu;
            var[c] = v;
            double is = 1.0 / std::sqrt(v + eps);
            inv_std[c] = is;
            for (std::int64_t i = 0; i < r; ++i) {
                double h = (X[i * d + c] - mu) * is;
                xhat[i * d + c] = h;
                O[i * d + c] = Gm[c] * h + Bt[c];
            }
        });
        for (std::int64_t c = 0; c < d; ++c) {
            running_mean[c] = momentum * running_mean[c] + (1.0 - momentum) * mean[c];
            running_var[c] = momentum * running_var[c] + (1.0 - momentum) * var[c];
        }
    } else {
        parallel_for(d, [&](std::int64_t c) {
            double is = 1.0 / std::sqrt(running_var[c] + eps);
            inv_std[c] = is;
            double mu = running_mean[c];
            for (std::int64_t i = 0; i < r; ++i) {
                double h = (X[i * d + c] - mu) * is;
                xhat[i * d + c] = h;
                O[i * d + c] = Gm[c] * h + Bt[c];
            }
        });
    }

    out->iaux = {int(r), int(d), training ? 1 : 0};
    wire(out, {x.node, gamma.node, beta.node}, [](TensorNode& node) {
        const std::int64_t r = node.iaux[0], d = node.iaux[1];
        const bool training = node.iaux[2] != 0;
        auto& px = *node.parents[0];
        auto& pg = *node.parents[1];
        auto& pb = *node.parents[2];
        const double* G = node.grad.data();
        const double* xhat = node.daux.data();
        const double* inv_std = node.daux.data() + r * d;
        const double* Gm = pg.value.data();

        if (pg.requires_grad) {
            pg.ensure_grad();
            double* dG = pg.grad.data();
            parallel_for(d, [&](std::int64_t c) {
                double acc = 0.0;
                for (std::int64_t i = 0; i < r; ++i) acc += G[i * d + c] * xhat[i * d + c];
                dG[c] += acc;
            });
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            double* dB = pb.grad.data();
            parallel_for(d, [&](std::int64_t c) {
                double acc = 0.0;
                for (std::int64_t i = 0; i < r; ++i) acc += G[i * d + c];
                dB[c] += acc;
            });
        }
        if (px.requires_grad) {
            px.ensure_grad();
            double* dX = px.grad.data();
            if (training) {
                parallel_for(d, [&](std::int64_t c) {
                    double sum_dy = 0.0, sum_dyh = 0.0;
                    for (std::int64_t i = 0; i < r; ++i) {
                        double dy = G[i * d + c] * Gm[c];
                        sum_dy += dy;
                        sum_dyh += dy * xhat[i * d + c];
                    }
                    for (std::int64_t i = 0; i < r; ++i) {
                        double dy = G[i * d + c] * Gm[c];
                        dX[i * d + c] += inv_std[c] *
                            (dy - sum_dy / double(r) - xhat[i * d + c] * sum_dyh / double(r));
                    }
                });
            } else {
                parallel_for(d, [&](std::int64_t c) {
                    for (std::int64_t i = 0; i < r; ++i)
                        dX[i * d + c] += G[i * d + c] * Gm[c] * inv_std[c];
                });
            }
        }
    });
    return Tensor(out);
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels, double smoothing) {
    check(logits.shape().size() == 2, "cross_entropy: logits must be [n, classes]");
    const std::int64_t n = logits.dim(0), k = logits.dim(1);
    check(std::int64_t(labels.size()) == n, "cross_entropy: label count mismatch");
    check(smoothing >= 0.0 && smoothing < 1.0, "cross_entropy: smoothing out of range");
    for (int y : labels)
        check(y >= 0 && y < k, "cross_entropy: label out of range");

    auto out = make_node({1}, "cross_entropy");
    const double* X = logits.node->value.data();
    // save softmax probabilities for the backward pass
    out->daux.resize(std::size_t(n * k));
    double* P = out->daux.data();
    std::vector<double> row_loss(std::size_t(n), 0.0);
    parallel_for(n, [&](std::int64_t i) {
        const double* lr = X + i * k;
        double mx = lr[0];
        for (std::int64_t c = 1; c < k; ++c) mx = std::max(mx, lr[c]);
        double z = 0.0;
        for (std::int64_t c = 0; c < k; ++c) z += std::exp(lr[c] - mx);
        double lse = mx + std::log(z);
        double loss = 0.0;
        const double uni = smoothing / double(k);
        for (std::int64_t c = 0; c < k; ++c) {
            double q = uni + (c == labels[std::size_t(i)] ? 1.0 - smoothing : 0.0);
            loss += q * (lse - lr[c]);
            P[i * k + c] = std::exp(lr[c] - lse) - q;  // softmax minus target
        }
        row_loss[std::size_t(i)] = loss;
    });
    double acc = 0.0;
    for (std::int64_t i = 0; i < n; ++i) acc += row_loss[std::size_t(i)];
    out->value[0] = acc / double(n);
    out->iaux = {int(n), int(k)};
    wire(out, {logits.node}, [](TensorNode& node) {
        const std::int64_t n = node.iaux[0], k = node.iaux[1];
        auto& p = *node.parents[0];
        p.ensure_grad();
        double g = node.grad[0] / double(n);
        double* dX = p.grad.data();
        const double* P = node.daux.data();
        parallel_for(n * k, [&](std::int64_t i) { dX[i] += g * P[i]; });
    });
    return Tensor(out);
}

bool all_finite(const Tensor& t) {
    for (double v : t.node->value)
        if (!std::isfinite(v)) return false;
    return true;
}

namespace {
bool g_track_branches = false;
std::uint64_t g_branch_sig = 1469598103934665603ULL;
}  // namespace

void set_branch_tracking(bool on) { g_track_branches = on; }
bool branch_tracking_enabled() { return g_track_branches; }
void reset_branch_signature() { g_branch_sig = 1469598103934665603ULL; }
std::uint64_t branch_signature() { return g_branch_sig; }

void note_branch_bits(const int* data, std::size_t n) {
    if (!g_track_branches) return;
    for (std::size_t i = 0; i < n; ++i)
        g_branch_sig = (g_branch_sig ^ (std::uint64_t(data[i]) + 0x9e3779b9ULL)) * 1099511628211ULL;
}

}  // namespace pointcra
