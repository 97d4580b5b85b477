#pragma once

// Minimal deterministic differentiable numeric core: dense rank<=3 tensors of
// 64-bit floats, a fixed op set, a reverse-mode gradient tape, and a
// finite-difference checking harness. Single-threaded per tape; reduction
// order is fixed so identical inputs give bit-identical outputs.

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "duet/rng.hpp"

namespace duet {

// A tensor op produced a NaN/Inf, or a numeric routine diverged.
class numeric_error : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<int>;

namespace detail {
struct TensorNode {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::uint64_t uid = 0;
};
}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, double value,
                     bool requires_grad = false);
  static Tensor from_data(const Shape& shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor scalar(double value);
  static Tensor randn(const Shape& shape, Rng& rng, double stddev = 1.0,
                      bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  int size() const { return static_cast<int>(node_->data.size()); }
  // Rank-2 accessors.
  int rows() const { return node_->shape[0]; }
  int cols() const { return node_->shape[1]; }

  const std::vector<double>& data() const { return node_->data; }
  // In-place access for parameter updates and finite differencing. Never call
  // on a tensor that a live tape has already recorded.
  std::vector<double>& mutable_data() { return node_->data; }

  double item() const;
  double at(int i) const { return node_->data[i]; }
  double at(int i, int j) const { return node_->data[i * cols() + j]; }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool v) { node_->requires_grad = v; }
  std::uint64_t uid() const { return node_->uid; }

  bool same_shape(const Tensor& other) const {
    return node_->shape == other.node_->shape;
  }

 private:
  std::shared_ptr<detail::TensorNode> node_;
};

// Reverse-mode tape. Ops append records in execution order; backward() replays
// them in reverse, accumulating gradients keyed by tensor uid. One tape may be
// active per thread at a time.
class GradTape {
 public:
  GradTape();
  ~GradTape();
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  static GradTape* active();

  void backward(const Tensor& loss);

  // Gradient of a tensor after backward(); empty span if none flowed.
  std::span<const double> grad(const Tensor& t) const;

  struct Record {
    const char* op;
    std::vector<std::uint64_t> input_uids;
    std::uint64_t output_uid;
    std::function<void(GradTape&)> backward;
  };

  void record(const char* op, std::initializer_list<const Tensor*> inputs,
              const Tensor& output, std::function<void(GradTape&)> fn);
  // Accumulation buffer for a tensor, zero-initialized on first use.
  std::vector<double>& grad_acc(const Tensor& t);
  bool has_grad(std::uint64_t uid) const { return grads_.count(uid) > 0; }
  std::span<const double> grad_by_uid(std::uint64_t uid) const;
  std::size_t num_records() const { return records_.size(); }

 private:
  std::vector<Record> records_;
  std::unordered_map<std::uint64_t, std::vector<double>> grads_;
};

// ---- op set ----------------------------------------------------------------
// Shapes are validated; any non-finite output raises numeric_error.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor scale(const Tensor& a, double c);
Tensor exp(const Tensor& a);
Tensor silu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor softplus(const Tensor& a);

// x: [L x h], v: [h]; broadcast v over rows.
Tensor add_rowvec(const Tensor& x, const Tensor& v);
Tensor mul_rowvec(const Tensor& x, const Tensor& v);

Tensor matmul(const Tensor& a, const Tensor& b);
// x: [L x in], w: [in x out], optional bias [out].
Tensor linear(const Tensor& x, const Tensor& w);
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

// Same element count and order, new shape; gradient passes through.
Tensor reshape(const Tensor& a, const Shape& shape);

Tensor concat_lastdim(const Tensor& a, const Tensor& b);
Tensor concat_rows(const Tensor& a, const Tensor& b);
Tensor slice_rows(const Tensor& x, int start, int count);
Tensor slice_cols(const Tensor& x, int start, int count);

// Per-row normalization without learned gain: zero mean, unit variance.
Tensor layernorm_nogain(const Tensor& x, double eps);

// Channel-wise causal convolution; output frame i depends on frames <= i.
// x: [L x d], kernel: [k x d]: out[i,c] = sum_j kernel[j,c] * x[i-j,c].
Tensor depthwise_conv1d(const Tensor& x, const Tensor& kernel);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
// Fused mean squared error over all elements.
Tensor mse(const Tensor& a, const Tensor& b);

// ---- gradient checking ------------------------------------------------------

// Compares reverse-mode gradients of f() against central finite differences
// (step h) for every element of every leaf. Returns the max relative error
// with denominator max(|g|, 1e-8), where |g| is the max-norm of the full
// gradient across the leaves; near-zero elements are thereby measured against
// the gradient's scale rather than against FD roundoff, which they cannot
// beat in 64-bit. f must be deterministic and must not capture an active
// tape.
double grad_check(const std::function<Tensor()>& f, std::span<Tensor> leaves,
                  double h = 1e-6);

namespace detail {
void require(bool cond, const char* msg);
void check_finite(const std::vector<double>& data, const char* op);
}

}  // namespace duet
