#include "mqenet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

namespace mqenet {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

bool tracked(const TensorPtr& t) { return t->requires_grad || t->on_tape; }

void check_same_shape(const TensorPtr& a, const TensorPtr& b, const char* op) {
  if (a->rows != b->rows || a->cols != b->cols) {
    throw Error(ErrorCode::ShapeMismatch,
                std::string(op) + ": " + std::to_string(a->rows) + "x" + std::to_string(a->cols) +
                    " vs " + std::to_string(b->rows) + "x" + std::to_string(b->cols));
  }
}

TensorPtr make_result(Tape& tp, std::size_t rows, std::size_t cols, std::vector<double> data,
                      bool track, std::function<void()>&& backward_fn) {
  TensorPtr out = std::make_shared<Tensor>();
  out->rows = rows;
  out->cols = cols;
  out->data = std::move(data);
  if (track) {
    out->on_tape = true;
    out->backward_fn = std::move(backward_fn);
    tp.record(out);
  }
  return out;
}

// Elementwise unary op with pointwise derivative df(x, y).
template <typename F, typename DF>
TensorPtr unary_op(Tape& tp, const TensorPtr& a, F f, DF df) {
  std::vector<double> data(a->size());
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = f(a->data[i]);
  TensorPtr out = make_result(tp, a->rows, a->cols, std::move(data), tracked(a), nullptr);
  if (tracked(a)) {
    Tensor* o = out.get();
    out->backward_fn = [o, a, df]() {
      a->ensure_grad();
      for (std::size_t i = 0; i < o->grad.size(); ++i) {
        a->grad[i] += o->grad[i] * df(a->data[i], o->data[i]);
      }
    };
  }
  return out;
}

void check_segments(const std::vector<std::int32_t>& seg, std::size_t n_rows) {
  if (seg.size() != n_rows) {
    throw Error(ErrorCode::ShapeMismatch, "segment id count != row count");
  }
  for (std::size_t i = 0; i < seg.size(); ++i) {
    if (seg[i] < 0) throw Error(ErrorCode::DomainError, "negative segment id");
    if (i > 0 && seg[i] < seg[i - 1]) {
      throw Error(ErrorCode::DomainError, "segment ids not sorted");
    }
  }
}

}  // namespace

TensorPtr make_tensor(std::size_t rows, std::size_t cols, std::vector<double> data,
                      bool requires_grad) {
  if (data.size() != rows * cols) {
    throw Error(ErrorCode::ShapeMismatch, "data length != rows*cols");
  }
  TensorPtr t = std::make_shared<Tensor>();
  t->rows = rows;
  t->cols = cols;
  t->data = std::move(data);
  t->requires_grad = requires_grad;
  return t;
}

TensorPtr make_zeros(std::size_t rows, std::size_t cols, bool requires_grad) {
  return make_tensor(rows, cols, std::vector<double>(rows * cols, 0.0), requires_grad);
}

TensorPtr make_scalar(double v, bool requires_grad) {
  return make_tensor(1, 1, {v}, requires_grad);
}

void Tape::backward(const TensorPtr& loss) {
  if (consumed_) throw Error(ErrorCode::TapeConsumed, "backward() already ran on this tape");
  if (!loss->is_scalar()) {
    throw Error(ErrorCode::NonScalarLoss,
                std::to_string(loss->rows) + "x" + std::to_string(loss->cols));
  }
  consumed_ = true;
  loss->ensure_grad();
  loss->grad[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Tensor& t = **it;
    if (t.backward_fn && !t.grad.empty()) t.backward_fn();
  }
}

TensorPtr matmul(Tape& tp, const TensorPtr& a, const TensorPtr& b) {
  if (a->cols != b->rows) {
    throw Error(ErrorCode::ShapeMismatch,
                "matmul " + std::to_string(a->rows) + "x" + std::to_string(a->cols) + " * " +
                    std::to_string(b->rows) + "x" + std::to_string(b->cols));
  }
  const std::size_t m = a->rows, k = a->cols, n = b->cols;
  std::vector<double> data(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a->data[i * k + p];
      if (av == 0.0) continue;
      const double* brow = b->data.data() + p * n;
      double* orow = data.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  const bool track = tracked(a) || tracked(b);
  TensorPtr out = make_result(tp, m, n, std::move(data), track, nullptr);
  if (track) {
    Tensor* o = out.get();
    out->backward_fn = [o, a, b, m, k, n]() {
      if (a->requires_grad || a->on_tape) {
        a->ensure_grad();
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t p = 0; p < k; ++p) {
            double acc = 0.0;
            const double* grow = o->grad.data() + i * n;
            const double* brow = b->data.data() + p * n;
            for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
            a->grad[i * k + p] += acc;
          }
        }
      }
      if (b->requires_grad || b->on_tape) {
        b->ensure_grad();
        for (std::size_t p = 0; p < k; ++p) {
          for (std::size_t i = 0; i < m; ++i) {
            const double av = a->data[i * k + p];
            if (av == 0.0) continue;
            const double* grow = o->grad.data() + i * n;
            double* brow = b->grad.data() + p * n;
            for (std::size_t j = 0; j < n; ++j) brow[j] += av * grow[j];
          }
        }
      }
    };
  }
  return out;
}

TensorPtr add(Tape& tp, const TensorPtr& a, const TensorPtr& b) {
  check_same_shape(a, b, "add");
  std::vector<double> data(a->size());
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = a->data[i] + b->data[i];
  const bool track = tracked(a) || tracked(b);
  TensorPtr out = make_result(tp, a->rows, a->cols, std::move(data), track, nullptr);
  if (track) {
    Tensor* o = out.get();
    out->backward_fn = [o, a, b]() {
      if (a->requires_grad || a->on_tape) {
        a->ensure_grad();
        for (std::size_t i = 0; i < o->grad.size(); ++i) a->grad[i] += o->grad[i];
      }
      if (b->requires_grad || b->on_tape) {
        b->ensure_grad();
        for (std::size_t i = 0; i < o->grad.size(); ++i) b->grad[i] += o->grad[i];
      }
    };
  }
  return out;
}

TensorPtr sub(Tape& tp, const TensorPtr& a, const TensorPtr& b) {
  check_same_shape(a, b, "sub");
  std::vector<double> data(a->size());
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = a->data[i] - b->data[i];
  const bool track = tracked(a) || tracked(b);
  TensorPtr out = make_result(tp, a->rows, a->cols, std::move(data), track, nullptr);
  if (track) {
    Tensor* o = out.get();
    out->backward_fn = [o, a, b]() {
      if (a->requires_grad || a->on_tape) {
        a->ensure_grad();
        for (std::size_t i = 0; i < o->grad.size(); ++i) a->grad[i] += o->grad[i];
      }
      if (b->requires_grad || b->on_tape) {
        b->ensure_grad();
        for (std::size_t i = 0; i < o->grad.size(); ++i) b->grad[i] -= o->grad[i];
      }
    };
  }
  return out;
}

TensorPtr mul(Tape& tp, const TensorPtr& a, const TensorPtr& b) {
  check_same_shape(a, b, "mul");
  std::vector<double> data(a->size());
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = a->data[i] * b->data[i];
  const bool track = tracked(a) || tracked(b);
  TensorPtr out = make_result(tp, a->rows, a->cols, std::move(data), track, nullptr);
  if (track) {
    Tensor* o = out.get();
    out->backward_fn = [o, a, b]() {
      if (a->requires_grad || a->on_tape) {
        a->ensure_grad();
        for (std::size_t i = 0; i < o->grad.size(); ++i) a->grad[i] += o->grad[i] * b->data[i];
      }
      if (b->requires_grad || b->on_tape) {
        b->ensure_grad();
        for (std::size_t i = 0; i < o->grad.size(); ++i) b->grad[i] += o->grad[i] * a->data[i];
      }
    };
  }
  return out;
}

TensorPtr scale(Tape& tp, const TensorPtr& a, double c) {
  return unary_op(tp, a, [c](double x) { return x * c; },
                  [c](double, double) { return c; });
}

TensorPtr add_scalar(Tape& tp, const TensorPtr& a, double c) {
  return unary_op(tp, a, [c](double x) { return x + c; },
                  [](double, double) { return 1.0; });
}

TensorPtr power_scalar(Tape& tp, const TensorPtr& a, double p) {
  return unary_op(tp, a, [p](double x) { return std::pow(x, p); },
                  [p](double x, double) { return p * std::pow(x, p - 1.0); });
}

namespace {

enum class BroadcastKind { row, col };
enum class BroadcastOp { add, sub, mul };

TensorPtr broadcast_op(Tape& tp, const TensorPtr& a, const TensorPtr& v, BroadcastKind kind,
                       BroadcastOp op) {
  const bool row = kind == BroadcastKind::row;
  if (row ? (v->rows != 1 || v->cols != a->cols) : (v->cols != 1 || v->rows != a->rows)) {
    throw Error(ErrorCode::ShapeMismatch, "broadcast vector shape");
  }
  std::vector<double> data(a->size());
  for (std::size_t r = 0; r < a->rows; ++r) {
    for (std::size_t c = 0; c < a->cols; ++c) {
      const double x = a->data[r * a->cols + c];
      const double y = row ? v->data[c] : v->data[r];
      double z = 0.0;
      switch (op) {
        case BroadcastOp::add: z = x + y; break;
        case BroadcastOp::sub: z = x - y; break;
        case BroadcastOp::mul: z = x * y; break;
      }
      data[r * a->cols + c] = z;
    }
  }
  const bool track = tracked(a) || tracked(v);
  TensorPtr out = make_result(tp, a->rows, a->cols, std::move(data), track, nullptr);
  if (track) {
    Tensor* o = out.get();
    out->backward_fn = [o, a, v, row, op]() {
      const std::size_t rows = a->rows, cols = a->cols;
      if (a->requires_grad || a->on_tape) {
        a->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < cols; ++c) {
            const double g = o->grad[r * cols + c];
            const double y = row ? v->data[c] : v->data[r];
            a->grad[r * cols + c] += op == BroadcastOp::mul ? g * y : g;
          }
        }
      }
      if (v->requires_grad || v->on_tape) {
        v->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < cols; ++c) {
            const double g = o->grad[r * cols + c];
            const double x = a->data[r * cols + c];
            double gv = 0.0;
            switch (op) {
              case BroadcastOp::add: gv = g; break;
              case BroadcastOp::sub: gv = -g; break;
              case BroadcastOp::mul: gv = g * x; break;
            }
            v->grad[row ? c : r] += gv;
          }
        }
      }
    };
  }
  return out;
}

}  // namespace

TensorPtr add_rowvec(Tape& tp, const TensorPtr& a, const TensorPtr& v) {
  return broadcast_op(tp, a, v, BroadcastKind::row, BroadcastOp::add);
}
TensorPtr sub_rowvec(Tape& tp, const TensorPtr& a, const TensorPtr& v) {
  return broadcast_op(tp, a, v, BroadcastKind::row, BroadcastOp::sub);
}
TensorPtr mul_rowvec(Tape& tp, const TensorPtr& a, const TensorPtr& v) {
  return broadcast_op(tp, a, v, BroadcastKind::row, BroadcastOp::mul);
}
TensorPtr sub_colvec(Tape& tp, const TensorPtr& a, const TensorPtr& v) {
  return broadcast_op(tp, a, v, BroadcastKind::col, BroadcastOp::sub);
}
TensorPtr mul_colvec(Tape& tp, const TensorPtr& a, const TensorPtr& v) {
  return broadcast_op(tp, a, v, BroadcastKind::col, BroadcastOp::mul);
}

TensorPtr concat_cols(Tape& tp, const TensorPtr& a, const TensorPtr& b) {
  if (a->rows != b->rows) throw Error(ErrorCode::ShapeMismatch, "concat_cols row counts differ");
  const std::size_t rows = a->rows, ca = a->cols, cb = b->cols;
  std::vector<double> data(rows * (ca + cb));
  for (std::size_t r = 0; r < rows; ++r) {
    std::memcpy(data.data() + r * (ca + cb), a->data.data() + r * ca, ca * sizeof(double));
    std::memcpy(data.data() + r * (ca + cb) + ca, b->data.data() + r * cb, cb * sizeof(double));
  }
  const bool track = tracked(a) || tracked(b);
  TensorPtr out = make_result(tp, rows, ca + cb, std::move(data), track, nullptr);
  if (track) {
    Tensor* o = out.get();
    out->backward_fn = [o, a, b, rows, ca, cb]() {
      if (a->requires_grad || a->on_tape) {
        a->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < ca; ++c) a->grad[r * ca + c] += o->grad[r * (ca + cb) + c];
        }
      }
      if (b->requires_grad || b->on_tape) {
        b->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < cb; ++c) {
            b->grad[r * cb + c] += o->grad[r * (ca + cb) + ca + c];
          }
        }
      }
    };
  }
  return out;
}

TensorPtr concat_rows(Tape& tp, const TensorPtr& a, const TensorPtr& b) {
  if (a->cols != b->cols) throw Error(ErrorCode::ShapeMismatch, "concat_rows col counts differ");
  std::vector<double> data;
  data.reserve(a->size() + b->size());
  data.insert(data.end(), a->data.begin(), a->data.end());
  data.insert(data.end(), b->data.begin(), b->data.end());
  const bool track = tracked(a) || tracked(b);
  TensorPtr out = make_result(tp, a->rows + b->rows, a->cols, std::move(data), track, nullptr);
  if (track) {
    Tensor* o = out.get();
    out->backward_fn = [o, a, b]() {
      if (a->requires_grad || a->on_tape) {
        a->ensure_grad();
        for (std::size_t i = 0; i < a->size(); ++i) a->grad[i] += o->grad[i];
      }
      if (b->requires_grad || b->on_tape) {
        b->ensure_grad();
        for (std::size_t i = 0; i < b->size(); ++i) b->grad[i] += o->grad[a->size() + i];
      }
    };
  }
  return out;
}

TensorPtr transpose(Tape& tp, const TensorPtr& a) {
  const std::size_t rows = a->rows, cols = a->cols;
  std::vector<double> data(a->size());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) data[c * rows + r] = a->data[r * cols + c];
  }
  TensorPtr out = make_result(tp, cols, rows, std::move(data), tracked(a), nullptr);
  if (tracked(a)) {
    Tensor* o = out.get();
    out->backward_fn = [o, a, rows, cols]() {
      a->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) a->grad[r * cols + c] += o->grad[c * rows + r];
      }
    };
  }
  return out;
}

TensorPtr slice_cols(Tape& tp, const TensorPtr& a, std::size_t c0, std::size_t c1) {
  if (c0 >= c1 || c1 > a->cols) throw Error(ErrorCode::ShapeMismatch, "slice_cols range");
  const std::size_t rows = a->rows, cols = a->cols, w = c1 - c0;
  std::vector<double> data(rows * w);
  for (std::size_t r = 0; r < rows; ++r) {
    std::memcpy(data.data() + r * w, a->data.data() + r * cols + c0, w * sizeof(double));
  }
  TensorPtr out = make_result(tp, rows, w, std::move(data), tracked(a), nullptr);
  if (tracked(a)) {
    Tensor* o = out.get();
    out->backward_fn = [o, a, rows, cols, c0, w]() {
      a->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < w; ++c) a->grad[r * cols + c0 + c] += o->grad[r * w + c];
      }
    };
  }
  return out;
}

TensorPtr leaky_relu(Tape& tp, const TensorPtr& a, double slope) {
  return unary_op(tp, a, [slope](double x) { return x > 0.0 ? x : slope * x; },
                  [slope](double x, double) { return x > 0.0 ? 1.0 : slope; });
}

TensorPtr relu(Tape& tp, const TensorPtr& a) {
  return unary_op(tp, a, [](double x) { return x > 0.0 ? x : 0.0; },
                  [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

TensorPtr elu(Tape& tp, const TensorPtr& a) {
  return unary_op(tp, a, [](double x) { return x > 0.0 ? x : std::expm1(x); },
                  [](double x, double y) { return x > 0.0 ? 1.0 : y + 1.0; });
}

TensorPtr gelu(Tape& tp, const TensorPtr& a) {
  return unary_op(
      tp, a, [](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); },
      [](double x, double) {
        return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
      });
}

TensorPtr tanh_op(Tape& tp, const TensorPtr& a) {
  return unary_op(tp, a, [](double x) { return std::tanh(x); },
                  [](double, double y) { return 1.0 - y * y; });
}

TensorPtr exp_op(Tape& tp, const TensorPtr& a) {
  return unary_op(tp, a, [](double x) { return std::exp(x); },
                  [](double, double y) { return y; });
}

TensorPtr log_op(Tape& tp, const TensorPtr& a) {
  return unary_op(tp, a, [](double x) { return std::log(x); },
                  [](double x, double) { return 1.0 / x; });
}

TensorPtr sum_all(Tape& tp, const TensorPtr& a) {
  double s = 0.0;
  for (double v : a->data) s += v;
  TensorPtr out = make_result(tp, 1, 1, {s}, tracked(a), nullptr);
  if (tracked(a)) {
    Tensor* o = out.get();
    out->backward_fn = [o, a]() {
      a->ensure_grad();
      for (std::size_t i = 0; i < a->size(); ++i) a->grad[i] += o->grad[0];
    };
  }
  return out;
}

TensorPtr mean_rows(Tape& tp, const TensorPtr& a) {
  return segment_mean_rows(tp, a, std::vector<std::int32_t>(a->rows, 0), 1);
}

TensorPtr max_rows(Tape& tp, const TensorPtr& a) {
  return segment_max_rows(tp, a, std::vector<std::int32_t>(a->rows, 0), 1);
}

TensorPtr row_mean(Tape& tp, const TensorPtr& a) {
  const std::size_t rows = a->rows, cols = a->cols;
  if (cols == 0) throw Error(ErrorCode::ShapeMismatch, "row_mean of empty rows");
  std::vector<double> data(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += a->data[r * cols + c];
    data[r] = s / static_cast<double>(cols);
  }
  TensorPtr out = make_result(tp, rows, 1, std::move(data), tracked(a), nullptr);
  if (tracked(a)) {
    Tensor* o = out.get();
    out->backward_fn = [o, a, rows, cols]() {
      a->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        const double g = o->grad[r] / static_cast<double>(cols);
        for (std::size_t c = 0; c < cols; ++c) a->grad[r * cols + c] += g;
      }
    };
  }
  return out;
}

TensorPtr gather_rows(Tape& tp, const TensorPtr& a, const std::vector<std::int32_t>& idx) {
  const std::size_t cols = a->cols;
  std::vector<double> data(idx.size() * cols);
  for (std::size_t k = 0; k < idx.size(); ++k) {
    if (idx[k] < 0 || static_cast<std::size_t>(idx[k]) >= a->rows) {
      throw Error(ErrorCode::IndexOutOfRange, "gather_rows index " + std::to_string(idx[k]));
    }
    std::memcpy(data.data() + k * cols, a->data.data() + static_cast<std::size_t>(idx[k]) * cols,
                cols * sizeof(double));
  }
  TensorPtr out = make_result(tp, idx.size(), cols, std::move(data), tracked(a), nullptr);
  if (tracked(a)) {
    Tensor* o = out.get();
    auto indices = idx;
    out->backward_fn = [o, a, indices, cols]() {
      a->ensure_grad();
      for (std::size_t k = 0; k < indices.size(); ++k) {
        const std::size_t src = static_cast<std::size_t>(indices[k]);
        for (std::size_t c = 0; c < cols; ++c) a->grad[src * cols + c] += o->grad[k * cols + c];
      }
    };
  }
  return out;
}

TensorPtr segment_mean_rows(Tape& tp, const TensorPtr& a, const std::vector<std::int32_t>& seg,
                            std::int32_t n_segments) {
  check_segments(seg, a->rows);
  const std::size_t cols = a->cols;
  std::vector<double> counts(static_cast<std::size_t>(n_segments), 0.0);
  std::vector<double> data(static_cast<std::size_t>(n_segments) * cols, 0.0);
  for (std::size_t r = 0; r < a->rows; ++r) {
    if (seg[r] >= n_segments) throw Error(ErrorCode::IndexOutOfRange, "segment id too large");
    counts[static_cast<std::size_t>(seg[r])] += 1.0;
    for (std::size_t c = 0; c < cols; ++c) {
      data[static_cast<std::size_t>(seg[r]) * cols + c] += a->data[r * cols + c];
    }
  }
  for (std::int32_t s = 0; s < n_segments; ++s) {
    if (counts[static_cast<std::size_t>(s)] == 0.0) {
      throw Error(ErrorCode::EmptyGraph, "segment " + std::to_string(s) + " has no rows");
    }
    for (std::size_t c = 0; c < cols; ++c) {
      data[static_cast<std::size_t>(s) * cols + c] /= counts[static_cast<std::size_t>(s)];
    }
  }
  TensorPtr out = make_result(tp, static_cast<std::size_t>(n_segments), cols, std::move(data),
                              tracked(a), nullptr);
  if (tracked(a)) {
    Tensor* o = out.get();
    auto segments = seg;
    auto cnts = counts;
    out->backward_fn = [o, a, segments, cnts, cols]() {
      a->ensure_grad();
      for (std::size_t r = 0; r < a->rows; ++r) {
        const std::size_t s = static_cast<std::size_t>(segments[r]);
        for (std::size_t c = 0; c < cols; ++c) {
          a->grad[r * cols + c] += o->grad[s * cols + c] / cnts[s];
        }
      }
    };
  }
  return out;
}

TensorPtr segment_max_rows(Tape& tp, const TensorPtr& a, const std::vector<std::int32_t>& seg,
                           std::int32_t n_segments) {
  check_segments(seg, a->rows);
  const std::size_t cols = a->cols;
  std::vector<double> data(static_cast<std::size_t>(n_segments) * cols,
                           -std::numeric_limits<double>::infinity());
  // argmax rows per (segment, column); ties go to the first row seen.
  std::vector<std::int64_t> arg(static_cast<std::size_t>(n_segments) * cols, -1);
  for (std::size_t r = 0; r < a->rows; ++r) {
    if (seg[r] >= n_segments) throw Error(ErrorCode::IndexOutOfRange, "segment id too large");
    const std::size_t s = static_cast<std::size_t>(seg[r]);
    for (std::size_t c = 0; c < cols; ++c) {
      if (a->data[r * cols + c] > data[s * cols + c]) {
        data[s * cols + c] = a->data[r * cols + c];
        arg[s * cols + c] = static_cast<std::int64_t>(r);
      }
    }
  }
  for (std::size_t i = 0; i < arg.size(); ++i) {
    if (arg[i] < 0) throw Error(ErrorCode::EmptyGraph, "segment with no rows in max readout");
  }
  TensorPtr out = make_result(tp, static_cast<std::size_t>(n_segments), cols, std::move(data),
                              tracked(a), nullptr);
  if (tracked(a)) {
    Tensor* o = out.get();
    out->backward_fn = [o, a, arg, cols]() {
      a->ensure_grad();
      for (std::size_t i = 0; i < arg.size(); ++i) {
        a->grad[static_cast<std::size_t>(arg[i]) * cols + (i % cols)] += o->grad[i];
      }
    };
  }
  return out;
}

TensorPtr softmax_segmented(Tape& tp, const TensorPtr& values,
                            const std::vector<std::int32_t>& seg, std::int32_t n_segments) {
  if (values->cols != 1) throw Error(ErrorCode::ShapeMismatch, "softmax_segmented needs Nx1");
  check_segments(seg, values->rows);
  const std::size_t n = values->rows;
  if (n_segments >= 0) {
    std::vector<bool> present(static_cast<std::size_t>(n_segments), false);
    for (std::int32_t s : seg) {
      if (s >= n_segments) throw Error(ErrorCode::IndexOutOfRange, "segment id too large");
      present[static_cast<std::size_t>(s)] = true;
    }
    for (std::int32_t s = 0; s < n_segments; ++s) {
      if (!present[static_cast<std::size_t>(s)]) {
        throw Error(ErrorCode::EmptySegment, "segment " + std::to_string(s));
      }
    }
  }

  std::vector<double> data(n);
  std::size_t start = 0;
  while (start < n) {
    std::size_t end = start;
    while (end < n && seg[end] == seg[start]) ++end;
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t i = start; i < end; ++i) m = std::max(m, values->data[i]);
    double sum = 0.0;
    for (std::size_t i = start; i < end; ++i) {
      data[i] = std::exp(values->data[i] - m);
      sum += data[i];
    }
    for (std::size_t i = start; i < end; ++i) data[i] /= sum;
    start = end;
  }
  TensorPtr out = make_result(tp, n, 1, std::move(data), tracked(values), nullptr);
  if (tracked(values)) {
    Tensor* o = out.get();
    auto segments = seg;
    out->backward_fn = [o, values, segments]() {
      values->ensure_grad();
      const std::size_t n = o->rows;
      std::size_t start = 0;
      while (start < n) {
        std::size_t end = start;
        while (end < n && segments[end] == segments[start]) ++end;
        double dot = 0.0;
        for (std::size_t i = start; i < end; ++i) dot += o->grad[i] * o->data[i];
        for (std::size_t i = start; i < end; ++i) {
          values->grad[i] += o->data[i] * (o->grad[i] - dot);
        }
        start = end;
      }
    };
  }
  return out;
}

TensorPtr spmm(Tape& tp, const std::vector<std::pair<std::int32_t, std::int32_t>>& edges,
               const TensorPtr& values, const TensorPtr& x, std::int32_t n_out) {
  if (values->cols != 1 || values->rows != edges.size()) {
    throw Error(ErrorCode::ShapeMismatch, "spmm values must be one scalar per edge");
  }
  const std::size_t cols = x->cols;
  std::vector<double> data(static_cast<std::size_t>(n_out) * cols, 0.0);
  std::vector<bool> touched(static_cast<std::size_t>(n_out), false);
  for (std::size_t e = 0; e < edges.size(); ++e) {
    const auto [i, j] = edges[e];
    if (i < 0 || j < 0 || i >= n_out || static_cast<std::size_t>(j) >= x->rows) {
      throw Error(ErrorCode::IndexOutOfRange, "spmm edge index");
    }
    touched[static_cast<std::size_t>(i)] = true;
    const double v = values->data[e];
    const double* xrow = x->data.data() + static_cast<std::size_t>(j) * cols;
    double* orow = data.data() + static_cast<std::size_t>(i) * cols;
    for (std::size_t c = 0; c < cols; ++c) orow[c] += v * xrow[c];
  }
  for (bool t : touched) {
    if (!t) ++tp.empty_segment_count;  // isolated row, output stays zero
  }
  const bool track = tracked(values) || tracked(x);
  TensorPtr out =
      make_result(tp, static_cast<std::size_t>(n_out), cols, std::move(data), track, nullptr);
  if (track) {
    Tensor* o = out.get();
    auto edge_list = edges;
    out->backward_fn = [o, values, x, edge_list, cols]() {
      const bool need_v = values->requires_grad || values->on_tape;
      const bool need_x = x->requires_grad || x->on_tape;
      if (need_v) values->ensure_grad();
      if (need_x) x->ensure_grad();
      for (std::size_t e = 0; e < edge_list.size(); ++e) {
        const auto [i, j] = edge_list[e];
        const double* grow = o->grad.data() + static_cast<std::size_t>(i) * cols;
        const double* xrow = x->data.data() + static_cast<std::size_t>(j) * cols;
        if (need_v) {
          double acc = 0.0;
          for (std::size_t c = 0; c < cols; ++c) acc += grow[c] * xrow[c];
          values->grad[e] += acc;
        }
        if (need_x) {
          double* xg = x->grad.data() + static_cast<std::size_t>(j) * cols;
          const double v = values->data[e];
          for (std::size_t c = 0; c < cols; ++c) xg[c] += v * grow[c];
        }
      }
    };
  }
  return out;
}

TensorPtr log_softmax_rows(Tape& tp, const TensorPtr& a) {
  const std::size_t rows = a->rows, cols = a->cols;
  std::vector<double> data(a->size());
  for (std::size_t r = 0; r < rows; ++r) {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < cols; ++c) m = std::max(m, a->data[r * cols + c]);
    double sum = 0.0;
    for (std::size_t c = 0; c < cols; ++c) sum += std::exp(a->data[r * cols + c] - m);
    const double lse = m + std::log(sum);
    for (std::size_t c = 0; c < cols; ++c) data[r * cols + c] = a->data[r * cols + c] - lse;
  }
  TensorPtr out = make_result(tp, rows, cols, std::move(data), tracked(a), nullptr);
  if (tracked(a)) {
    Tensor* o = out.get();
    out->backward_fn = [o, a, rows, cols]() {
      a->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        double gsum = 0.0;
        for (std::size_t c = 0; c < cols; ++c) gsum += o->grad[r * cols + c];
        for (std::size_t c = 0; c < cols; ++c) {
          a->grad[r * cols + c] += o->grad[r * cols + c] - std::exp(o->data[r * cols + c]) * gsum;
        }
      }
    };
  }
  return out;
}

TensorPtr nll_from_log_probs(Tape& tp, const TensorPtr& log_probs,
                             const std::vector<std::int32_t>& targets) {
  const std::size_t rows = log_probs->rows, cols = log_probs->cols;
  if (targets.size() != rows) {
    throw Error(ErrorCode::ShapeMismatch, "one target per log-prob row required");
  }
  for (std::size_t r = 0; r < rows; ++r) {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < cols; ++c) m = std::max(m, log_probs->data[r * cols + c]);
    double sum = 0.0;
    for (std::size_t c = 0; c < cols; ++c) sum += std::exp(log_probs->data[r * cols + c] - m);
    const double lse = m + std::log(sum);
    if (std::fabs(lse) > 1e-6) {
      throw Error(ErrorCode::UnnormalizedInput, "logsumexp = " + std::to_string(lse));
    }
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= cols) {
      throw Error(ErrorCode::InvalidTarget, "target " + std::to_string(targets[r]));
    }
  }
  double loss = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    loss -= log_probs->data[r * cols + static_cast<std::size_t>(targets[r])];
  }
  loss /= static_cast<double>(rows);
  if (!std::isfinite(loss)) throw Error(ErrorCode::NonFiniteLoss, "nll");
  TensorPtr out = make_result(tp, 1, 1, {loss}, tracked(log_probs), nullptr);
  if (tracked(log_probs)) {
    Tensor* o = out.get();
    auto tg = targets;
    out->backward_fn = [o, log_probs, tg, rows, cols]() {
      log_probs->ensure_grad();
      const double g = o->grad[0] / static_cast<double>(rows);
      for (std::size_t r = 0; r < rows; ++r) {
        log_probs->grad[r * cols + static_cast<std::size_t>(tg[r])] -= g;
      }
    };
  }
  return out;
}

double grad_check(const std::function<TensorPtr(Tape&, const TensorPtr&)>& f, const TensorPtr& x,
                  double eps) {
  if (!(eps >= 1e-7 && eps <= 1e-3)) {
    throw Error(ErrorCode::DomainError, "grad_check eps out of [1e-7, 1e-3]");
  }
  const auto eval = [&](const std::vector<double>& xdata) {
    Tape tp;
    TensorPtr xi = make_tensor(x->rows, x->cols, xdata, false);
    TensorPtr y = f(tp, xi);
    if (!y->is_scalar()) throw Error(ErrorCode::NonScalarLoss, "grad_check target");
    return y->scalar();
  };
  const double y1 = eval(x->data);
  const double y2 = eval(x->data);
  if (std::memcmp(&y1, &y2, sizeof(double)) != 0) {
    throw Error(ErrorCode::NondeterministicFunction,
                "two evaluations differ: " + std::to_string(y1) + " vs " + std::to_string(y2));
  }

  Tape tp;
  TensorPtr xi = make_tensor(x->rows, x->cols, x->data, true);
  TensorPtr y = f(tp, xi);
  if (!y->is_scalar()) throw Error(ErrorCode::NonScalarLoss, "grad_check target");
  tp.backward(y);
  xi->ensure_grad();

  double max_err = 0.0;
  std::vector<double> xdata = x->data;
  for (std::size_t i = 0; i < xdata.size(); ++i) {
    const double orig = xdata[i];
    xdata[i] = orig + eps;
    const double yp = eval(xdata);
    xdata[i] = orig - eps;
    const double ym = eval(xdata);
    xdata[i] = orig;
    const double numeric = (yp - ym) / (2.0 * eps);
    const double analytic = xi->grad[i];
    const double denom = std::max({1.0, std::fabs(analytic), std::fabs(numeric)});
    max_err = std::max(max_err, std::fabs(analytic - numeric) / denom);
  }
  return max_err;
}

}  // namespace mqenet
