#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace pointcra {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& s);

// One node of the reverse-mode tape. Ops whose inputs all have
// requires_grad == false produce plain leaves, so detached subgraphs cost no
// tape at all.
struct TensorNode {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // allocated on first use during backward
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backward;
    std::vector<int> iaux;     // argmax routes and the like
    std::vector<double> daux;  // saved activations

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
};

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<TensorNode> n) : node(std::move(n)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double v);

    bool defined() const { return node != nullptr; }
    const Shape& shape() const { return node->shape; }
    std::int64_t numel() const { return std::int64_t(node->value.size()); }
    std::int64_t dim(int i) const { return node->shape[std::size_t(i)]; }
    const std::vector<double>& value() const { return node->value; }
    std::vector<double>& value() { return node->value; }
    const std::vector<double>& grad() const { return node->grad; }
    bool requires_grad() const { return node->requires_grad; }
    double item() const { return node->value.at(0); }

    // Value copy with no graph attached.
    Tensor detach() const;

    std::shared_ptr<TensorNode> node;
};

// Reverse pass from a scalar root. Accumulates into leaf grads; leaves that
// already carry gradients keep accumulating (parameters across a batch).
void backward(const Tensor& root);

// rows(x) treats every tensor as [rows x last_dim].
std::int64_t last_dim(const Tensor& t);
std::int64_t row_count(const Tensor& t);

// ---- primitives -----------------------------------------------------------

// a [.. x k] * w [k x n] -> [.. x n]
Tensor matmul(const Tensor& a, const Tensor& w);
// x [.. x n] + b [n]
Tensor bias_add(const Tensor& x, const Tensor& b);
Tensor relu(const Tensor& x);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
// scale * x + shift, elementwise
Tensor affine(const Tensor& x, double scale, double shift);
Tensor softplus(const Tensor& x);
// along the last axis: [.. x a], [.. x b] -> [.. x (a+b)]
Tensor concat_cols(const Tensor& a, const Tensor& b);
// x [n x d], idx of m*k row indices -> [m x k x d]
Tensor gather_rows(const Tensor& x, const std::vector<int>& idx, std::int64_t m, std::int64_t k);
// [m x k x d] -> [m x d]
Tensor reduce_max_k(const Tensor& x);
Tensor reduce_mean_k(const Tensor& x);
// [m x k x d] op broadcast [m x d]
Tensor broadcast_sub_k(const Tensor& x, const Tensor& b);
// rows of x scaled by s (numel(s) == rows(x))
Tensor row_scale(const Tensor& x, const Tensor& s);
// [segments*m x d] -> [segments x d], uniform segment length
Tensor segment_max(const Tensor& x, std::int64_t segments);
Tensor segment_mean(const Tensor& x, std::int64_t segments);
Tensor mean_all(const Tensor& x);
// out_i = sum_t w[i,t] * x[idx[i,t]]; idx and w are fixed geometry
Tensor interp_rows(const Tensor& x, const std::vector<int>& idx, const std::vector<double>& w,
                   std::int64_t m, int taps);

// Batch normalization over rows, per last-dim column. Training mode uses
// batch statistics (population variance) and updates the running buffers with
// the given momentum; eval mode reads the running buffers.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  std::vector<double>& running_mean, std::vector<double>& running_var,
                  bool training, double momentum, double eps);

// Mean over rows of the label-smoothed negative log likelihood.
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels, double smoothing);

bool all_finite(const Tensor& t);

// Branch tracking for the finite-difference harness. Central differences are
// only valid where the active set (argmax routes, relu signs, norm guards)
// does not change across the probe interval; ops append their branch choices
// to a signature while tracking is on, and the harness skips elements whose
// signature moves.
void set_branch_tracking(bool on);
bool branch_tracking_enabled();
void reset_branch_signature();
std::uint64_t branch_signature();
void note_branch_bits(const int* data, std::size_t n);

}  // namespace pointcra
