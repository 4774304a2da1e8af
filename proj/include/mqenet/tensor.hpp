#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "mqenet/error.hpp"

namespace mqenet {

struct Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

// Dense row-major 64-bit float matrix (scalars are 1x1). Tensors are
// immutable once created; gradients live beside the data and are filled
// by Tape::backward.
struct Tensor {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;
  std::vector<double> grad;  // allocated on demand, same size as data
  bool requires_grad = false;
  bool on_tape = false;                 // true if any ancestor requires grad
  std::function<void()> backward_fn;    // accumulates into parents' grads

  std::size_t size() const { return rows * cols; }
  double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  bool is_scalar() const { return rows == 1 && cols == 1; }
  double scalar() const { return data[0]; }

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

TensorPtr make_tensor(std::size_t rows, std::size_t cols, std::vector<double> data,
                      bool requires_grad = false);
TensorPtr make_zeros(std::size_t rows, std::size_t cols, bool requires_grad = false);
TensorPtr make_scalar(double v, bool requires_grad = false);

// Records operations in creation order (a topological order by
// construction); backward() replays in exact reverse and is one-shot.
class Tape {
 public:
  void record(const TensorPtr& t) { nodes_.push_back(t); }

  // Seeds d(loss)/d(loss) = 1 and back-propagates to every requires_grad
  // leaf. Throws NonScalarLoss / TapeConsumed.
  void backward(const TensorPtr& loss);

  bool consumed() const { return consumed_; }
  std::size_t size() const { return nodes_.size(); }

  // Nodes whose neighbor aggregation saw an empty segment (isolated rows).
  std::size_t empty_segment_count = 0;

 private:
  std::vector<TensorPtr> nodes_;
  bool consumed_ = false;
};

// ---- core ops ----
TensorPtr matmul(Tape& tp, const TensorPtr& a, const TensorPtr& b);
TensorPtr add(Tape& tp, const TensorPtr& a, const TensorPtr& b);
TensorPtr sub(Tape& tp, const TensorPtr& a, const TensorPtr& b);
TensorPtr mul(Tape& tp, const TensorPtr& a, const TensorPtr& b);
TensorPtr scale(Tape& tp, const TensorPtr& a, double c);
TensorPtr add_scalar(Tape& tp, const TensorPtr& a, double c);
// Elementwise a^p (a must stay positive along the training path).
TensorPtr power_scalar(Tape& tp, const TensorPtr& a, double p);

// Row-vector (1xF) broadcasts over an NxF matrix.
TensorPtr add_rowvec(Tape& tp, const TensorPtr& a, const TensorPtr& v);
TensorPtr sub_rowvec(Tape& tp, const TensorPtr& a, const TensorPtr& v);
TensorPtr mul_rowvec(Tape& tp, const TensorPtr& a, const TensorPtr& v);
// Column-vector (Nx1) broadcasts over an NxF matrix.
TensorPtr sub_colvec(Tape& tp, const TensorPtr& a, const TensorPtr& v);
TensorPtr mul_colvec(Tape& tp, const TensorPtr& a, const TensorPtr& v);
// Per-row scaling; alias of mul_colvec under its domain name.
inline TensorPtr row_scale(Tape& tp, const TensorPtr& a, const TensorPtr& v) {
  return mul_colvec(tp, a, v);
}

TensorPtr concat_cols(Tape& tp, const TensorPtr& a, const TensorPtr& b);
TensorPtr concat_rows(Tape& tp, const TensorPtr& a, const TensorPtr& b);
TensorPtr transpose(Tape& tp, const TensorPtr& a);
// Columns [c0, c1) of a.
TensorPtr slice_cols(Tape& tp, const TensorPtr& a, std::size_t c0, std::size_t c1);

// ---- activations ----
TensorPtr leaky_relu(Tape& tp, const TensorPtr& a, double slope);
TensorPtr relu(Tape& tp, const TensorPtr& a);
TensorPtr elu(Tape& tp, const TensorPtr& a);
TensorPtr gelu(Tape& tp, const TensorPtr& a);
TensorPtr tanh_op(Tape& tp, const TensorPtr& a);
TensorPtr exp_op(Tape& tp, const TensorPtr& a);
TensorPtr log_op(Tape& tp, const TensorPtr& a);

// ---- reductions / indexing ----
TensorPtr sum_all(Tape& tp, const TensorPtr& a);
TensorPtr mean_rows(Tape& tp, const TensorPtr& a);  // 1xF column means
TensorPtr max_rows(Tape& tp, const TensorPtr& a);   // 1xF column maxima
TensorPtr row_mean(Tape& tp, const TensorPtr& a);   // Nx1 per-row mean
TensorPtr gather_rows(Tape& tp, const TensorPtr& a, const std::vector<std::int32_t>& idx);

// Segment ids must be sorted and non-negative; one id per row of `a`.
TensorPtr segment_mean_rows(Tape& tp, const TensorPtr& a, const std::vector<std::int32_t>& seg,
                            std::int32_t n_segments);
TensorPtr segment_max_rows(Tape& tp, const TensorPtr& a, const std::vector<std::int32_t>& seg,
                           std::int32_t n_segments);

// Numerically stable softmax within each segment of a column vector.
// When n_segments >= 0, every segment in [0, n_segments) must be
// non-empty (EmptySegment otherwise).
TensorPtr softmax_segmented(Tape& tp, const TensorPtr& values,
                            const std::vector<std::int32_t>& seg, std::int32_t n_segments = -1);

// out[i] = sum over edges (i, j) of values[e] * x[j].
TensorPtr spmm(Tape& tp, const std::vector<std::pair<std::int32_t, std::int32_t>>& edges,
               const TensorPtr& values, const TensorPtr& x, std::int32_t n_out);

// Row-wise log-softmax (stable).
TensorPtr log_softmax_rows(Tape& tp, const TensorPtr& a);

// Mean negative log likelihood; checks each row is normalized
// (logsumexp == 0 within 1e-6) and targets are in range.
TensorPtr nll_from_log_probs(Tape& tp, const TensorPtr& log_probs,
                             const std::vector<std::int32_t>& targets);

// ---- verification ----
// Max relative error between the tape gradient of f at x and central
// differences. f must be deterministic (checked by double evaluation).
double grad_check(const std::function<TensorPtr(Tape&, const TensorPtr&)>& f, const TensorPtr& x,
                  double eps);

}  // namespace mqenet
