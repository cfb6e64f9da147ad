#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace dnsgt {

struct ShapeMismatch : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NonFiniteDetected : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NotScalar : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Rng = std::mt19937_64;

/// Dense double-precision array acting as a node in a reverse-mode
/// autodiff graph. Copies share the underlying node (value semantics on
/// the handle, reference semantics on the storage).
class Tensor {
 public:
  struct Node {
    std::vector<int> shape;
    std::vector<double> data;
    std::vector<double> grad;  // sized on demand, same length as data
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;  // pushes node.grad into parents

    int64_t size() const {
      int64_t n = 1;
      for (int d : shape) n *= d;
      return n;
    }
    std::vector<double>& ensure_grad() {
      if (grad.empty()) grad.assign(data.size(), 0.0);
      return grad;
    }
  };

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor full(std::vector<int> shape, double value);
  static Tensor from(std::vector<int> shape, std::vector<double> data,
                     bool requires_grad = false);
  static Tensor scalar(double v);

  bool defined() const { return node_ != nullptr; }
  const std::vector<int>& shape() const { return node_->shape; }
  int dim(int i) const { return node_->shape[i]; }
  int ndim() const { return (int)node_->shape.size(); }
  int64_t size() const { return node_->size(); }
  std::vector<double>& data() { return node_->data; }
  const std::vector<double>& data() const { return node_->data; }
  std::vector<double>& grad() { return node_->ensure_grad(); }
  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool b) { node_->requires_grad = b; }
  double item() const;
  void zero_grad() {
    node_->grad.assign(node_->data.size(), 0.0);
  }
  std::shared_ptr<Node> node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// --- graph construction ops -------------------------------------------------

// Matrix product over the last two axes. Supports (m,k)x(k,n),
// (B,m,k)x(k,n), (B,m,k)x(B,k,n); transpose_b treats b's last two axes
// as transposed.
Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_b = false);

// Elementwise sum; b may have trailing shape broadcast over a's leading
// axes (e.g. (B,L,N) + (N)).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise, same shape
Tensor scale(const Tensor& a, double s);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor softmax_rows(const Tensor& a);

// Row-wise softmax over the last axis restricted to positions where the
// binary mask is nonzero. mask shape equals a's shape or a's trailing
// 2 axes (shared across the batch). Fully masked rows yield zero rows.
Tensor masked_softmax_rows(const Tensor& a, const Tensor& mask);

Tensor layer_norm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias,
                       double eps = 1e-5);

struct BatchNormState {
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double momentum = 0.9;
  bool initialized = false;
};

// Normalizes each feature of (B,L,N) over the batch x position axis,
// counting only positions where valid (B,L) is nonzero. PAD positions
// are transformed with the same statistics but contribute none.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  const std::vector<uint8_t>& valid, BatchNormState& state,
                  bool train, double eps = 1e-5);

Tensor dropout(const Tensor& x, double rate, Rng& rng, bool train);

// table (V,N), ids flattened with given shape -> shape + {N}
Tensor embedding_gather(const Tensor& table, const std::vector<int>& ids,
                        const std::vector<int>& ids_shape);

Tensor concat_last_axis(const std::vector<Tensor>& parts);

// logits (...,V), targets/weights flattened over leading axes; loss =
// sum(w_i * CE_i) / max(1, sum w_i). Gradient w.r.t. logits is
// w*(softmax - onehot)/norm.
Tensor cross_entropy_masked(const Tensor& logits, const std::vector<int>& targets,
                            const std::vector<double>& weights);

// Cross entropy against a dense per-row target distribution; rows with
// weight 0 are skipped, loss is the weighted mean. Gradient w.r.t.
// logits is w*(softmax - target)/norm.
Tensor cross_entropy_soft(const Tensor& logits,
                          const std::vector<double>& target_probs,
                          const std::vector<double>& row_weights);

// Numerically fused sigmoid + BCE; labels/weights flattened over the
// logits' elements. Returns mean over weighted positions.
Tensor binary_cross_entropy_logits(const Tensor& logits,
                                   const std::vector<double>& labels,
                                   const std::vector<double>& weights);

// x (B,L,N), valid (B,L) -> (B,N) mean over valid positions per batch row.
Tensor mean_pool_rows(const Tensor& x, const std::vector<uint8_t>& valid);

Tensor sum_all(const Tensor& a);

// --- execution --------------------------------------------------------------

// Reverse-topological gradient accumulation from a scalar loss.
void backward(const Tensor& loss);

struct GradCheckReport {
  double max_rel_err = 0.0;
  int64_t checked = 0;
  bool pass(double tol) const { return max_rel_err < tol; }
};

// Central-difference check of d f / d x against the analytic gradient.
GradCheckReport grad_check(const std::function<Tensor()>& f, Tensor x,
                           double h = 1e-5);

// --- initializers -----------------------------------------------------------

Tensor randn(std::vector<int> shape, double stddev, Rng& rng,
             bool requires_grad = true);
Tensor xavier_uniform(int fan_in, int fan_out, Rng& rng,
                      bool requires_grad = true);

}  // namespace dnsgt
