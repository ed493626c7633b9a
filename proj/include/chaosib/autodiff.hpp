#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace chaosib::ad {

/// Dense row-major float64 matrix. Scalars are 1x1, row vectors 1xN.
struct Tensor {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> v;

    Tensor() = default;
    Tensor(std::size_t r, std::size_t c) : rows(r), cols(c), v(r * c, 0.0) {}
    Tensor(std::size_t r, std::size_t c, std::vector<double> data);

    static Tensor scalar(double x);
    static Tensor row(std::vector<double> data);

    std::size_t size() const { return rows * cols; }
    double& at(std::size_t i, std::size_t j) { return v[i * cols + j]; }
    double at(std::size_t i, std::size_t j) const { return v[i * cols + j]; }
    bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }
    std::string shape_str() const;

    bool operator==(const Tensor&) const = default;
};

/**
 * Define-by-run reverse-mode tape over Tensors.
 *
 * A Graph records one forward pass; backward() traverses the tape in reverse,
 * accumulating gradients additively into every leaf created with
 * requires_grad. The graph is rebuilt each training step.
 */
class Graph {
public:
    using Ref = std::int32_t;

    /// Leaf node. Gradients are tracked only when requires_grad is set.
    Ref input(Tensor t, bool requires_grad = false);

    // --- forward ops ---
    /// op(a, b) = a * b, with optional transposition of either operand.
    Ref matmul(Ref a, Ref b, bool trans_a = false, bool trans_b = false);
    /// Broadcast-add a 1xC bias row to every row of an RxC matrix.
    Ref add_bias(Ref x, Ref bias);
    Ref add(Ref a, Ref b);
    Ref sub(Ref a, Ref b);
    Ref scale(Ref x, double c);
    Ref add_scalar(Ref x, double c);
    Ref leaky_relu(Ref x, double alpha = 0.2);
    Ref exp(Ref x);
    Ref log(Ref x);
    Ref square(Ref x);
    /// Column-wise concatenation of matrices with equal row counts.
    Ref concat_cols(const std::vector<Ref>& xs);
    /// Column slice [start, start+len) of an RxC matrix.
    Ref slice_cols(Ref x, std::size_t start, std::size_t len);
    /// Row-wise sum: RxC -> Rx1.
    Ref row_sum(Ref x);
    Ref sum(Ref x);
    Ref mean(Ref x);
    /// Per-row cross entropy of softmax(logits) against integer labels: NxK -> Nx1.
    Ref softmax_cross_entropy_with_logits(Ref logits, const std::vector<std::size_t>& labels);
    /// s_ij = -|u_i - v_j|^2 for U: NxD, V: MxD -> NxM.
    Ref pairwise_neg_sqdist(Ref u, Ref v);
    /// mean + exp(0.5 * log_var) * noise, with externally supplied noise.
    Ref gaussian_reparameterize(Ref mean, Ref log_var, const Tensor& noise);

    /// Reverse pass from a scalar loss. Throws on non-scalar loss.
    void backward(Ref loss);

    const Tensor& value(Ref r) const { return nodes_[static_cast<std::size_t>(r)].value; }
    /// Accumulated gradient of the last backward() w.r.t. node r.
    const Tensor& grad(Ref r) const;
    bool requires_grad(Ref r) const { return nodes_[static_cast<std::size_t>(r)].requires_grad; }

    std::size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool requires_grad = false;
        std::function<void(Graph&)> backprop;  // empty for leaves
    };

    Ref emplace(Tensor value, bool requires_grad, std::function<void(Graph&)> backprop);
    Node& node(Ref r) { return nodes_[static_cast<std::size_t>(r)]; }
    Tensor& grad_buf(Ref r);
    /// Gradient of the node whose backprop closure is currently running.
    const Tensor& node_grad_() const;

    std::vector<Node> nodes_;
    Ref current_ = -1;
};

/// Raw dgemm wrapper used by the matmul op (also handy in oracles).
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          double alpha, const double* a, std::size_t lda, const double* b, std::size_t ldb,
          double beta, double* c, std::size_t ldc);

struct AdamConfig {
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Adam optimizer with bias correction over a fixed list of parameter tensors.
class Adam {
public:
    using Config = AdamConfig;

    explicit Adam(Config cfg = Config()) : cfg_(cfg) {}

    /// Apply one update. The params/grads lists must keep a stable order and
    /// stable shapes across calls.
    void step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads);

    std::int64_t step_count() const { return t_; }
    const Config& config() const { return cfg_; }

private:
    Config cfg_;
    std::int64_t t_ = 0;
    std::vector<Tensor> m_;
    std::vector<Tensor> v_;
};

}  // namespace chaosib::ad
