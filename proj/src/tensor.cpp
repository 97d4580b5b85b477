#include "duet/tensor.hpp"

#include <atomic>
#include <cmath>

namespace duet {

namespace detail {

void require(bool cond, const char* msg) {
  if (!cond) throw std::invalid_argument(msg);
}

namespace {

std::atomic<std::uint64_t> g_uid_counter{1};

thread_local GradTape* t_active_tape = nullptr;

int shape_numel(const Shape& shape) {
  detail::require(!shape.empty() && shape.size() <= 3,
                  "tensor rank must be 1..3");
  long long n = 1;
  for (int e : shape) {
    detail::require(e > 0, "tensor extents must be positive");
    n *= e;
  }
  return static_cast<int>(n);
}

}  // namespace

void check_finite(const std::vector<double>& data, const char* op) {
  for (double v : data) {
    if (!std::isfinite(v)) {
      throw numeric_error(std::string("non-finite value produced by op '") +
                          op + "'");
    }
  }
}

}  // namespace detail

using detail::require;

// ---- Tensor -----------------------------------------------------------------

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
  int n = detail::shape_numel(shape);
  return from_data(shape, std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::full(const Shape& shape, double value, bool requires_grad) {
  int n = detail::shape_numel(shape);
  return from_data(shape, std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from_data(const Shape& shape, std::vector<double> data,
                         bool requires_grad) {
  int n = detail::shape_numel(shape);
  require(static_cast<int>(data.size()) == n,
          "data length must equal product of shape extents");
  detail::check_finite(data, "from_data");
  Tensor t;
  t.node_ = std::make_shared<detail::TensorNode>();
  t.node_->shape = shape;
  t.node_->data = std::move(data);
  t.node_->requires_grad = requires_grad;
  t.node_->uid = detail::g_uid_counter.fetch_add(1, std::memory_order_relaxed);
  return t;
}

Tensor Tensor::scalar(double value) { return from_data({1}, {value}); }

Tensor Tensor::randn(const Shape& shape, Rng& rng, double stddev,
                     bool requires_grad) {
  int n = detail::shape_numel(shape);
  std::vector<double> data(n);
  for (double& v : data) v = stddev * rng.gaussian();
  return from_data(shape, std::move(data), requires_grad);
}

double Tensor::item() const {
  require(size() == 1, "item() requires a single-element tensor");
  return node_->data[0];
}

// ---- GradTape ---------------------------------------------------------------

GradTape::GradTape() {
  if (detail::t_active_tape != nullptr) {
    throw std::logic_error("a GradTape is already active on this thread");
  }
  detail::t_active_tape = this;
}

GradTape::~GradTape() { detail::t_active_tape = nullptr; }

GradTape* GradTape::active() { return detail::t_active_tape; }

void GradTape::record(const char* op,
                      std::initializer_list<const Tensor*> inputs,
                      const Tensor& output,
                      std::function<void(GradTape&)> fn) {
  Record r;
  r.op = op;
  for (const Tensor* t : inputs) r.input_uids.push_back(t->uid());
  r.output_uid = output.uid();
  r.backward = std::move(fn);
  records_.push_back(std::move(r));
}

std::vector<double>& GradTape::grad_acc(const Tensor& t) {
  auto it = grads_.find(t.uid());
  if (it == grads_.end()) {
    it = grads_.emplace(t.uid(), std::vector<double>(t.size(), 0.0)).first;
  }
  return it->second;
}

std::span<const double> GradTape::grad(const Tensor& t) const {
  return grad_by_uid(t.uid());
}

std::span<const double> GradTape::grad_by_uid(std::uint64_t uid) const {
  auto it = grads_.find(uid);
  if (it == grads_.end()) return {};
  return {it->second.data(), it->second.size()};
}

void GradTape::backward(const Tensor& loss) {
  require(loss.size() == 1, "backward() requires a scalar loss");
  grads_[loss.uid()] = {1.0};
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    if (!has_grad(it->output_uid)) continue;  // not on the path to the loss
    it->backward(*this);
  }
}

// ---- op helpers -------------------------------------------------------------

namespace {

bool should_record(std::initializer_list<const Tensor*> inputs) {
  if (GradTape::active() == nullptr) return false;
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require(a.same_shape(b), "add: shape mismatch");
  int n = a.size();
  std::vector<double> data(n);
  for (int i = 0; i < n; ++i) data[i] = a.data()[i] + b.data()[i];
  detail::check_finite(data, "add");
  bool rec = should_record({&a, &b});
  Tensor out = Tensor::from_data(a.shape(), std::move(data), rec);
  if (rec) {
    Tensor a_c = a, b_c = b, o = out;
    GradTape::active()->record("add", {&a, &b}, out, [a_c, b_c, o](GradTape& t) {
      auto go = t.grad(o);
      if (a_c.requires_grad()) {
        auto& ga = t.grad_acc(a_c);
        for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
      }
      if (b_c.requires_grad()) {
        auto& gb = t.grad_acc(b_c);
        for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i];
      }
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require(a.same_shape(b), "sub: shape mismatch");
  int n = a.size();
  std::vector<double> data(n);
  for (int i = 0; i < n; ++i) data[i] = a.data()[i] - b.data()[i];
  detail::check_finite(data, "sub");
  bool rec = should_record({&a, &b});
  Tensor out = Tensor::from_data(a.shape(), std::move(data), rec);
  if (rec) {
    Tensor a_c = a, b_c = b, o = out;
    GradTape::active()->record("sub", {&a, &b}, out, [a_c, b_c, o](GradTape& t) {
      auto go = t.grad(o);
      if (a_c.requires_grad()) {
        auto& ga = t.grad_acc(a_c);
        for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
      }
      if (b_c.requires_grad()) {
        auto& gb = t.grad_acc(b_c);
        for (std::size_t i = 0; i < go.size(); ++i) gb[i] -= go[i];
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require(a.same_shape(b), "mul: shape mismatch");
  int n = a.size();
  std::vector<double> data(n);
  for (int i = 0; i < n; ++i) data[i] = a.data()[i] * b.data()[i];
  detail::check_finite(data, "mul");
  bool rec = should_record({&a, &b});
  Tensor out = Tensor::from_data(a.shape(), std::move(data), rec);
  if (rec) {
    Tensor a_c = a, b_c = b, o = out;
    GradTape::active()->record("mul", {&a, &b}, out, [a_c, b_c, o](GradTape& t) {
      auto go = t.grad(o);
      if (a_c.requires_grad()) {
        auto& ga = t.grad_acc(a_c);
        for (std::size_t i = 0; i < go.size(); ++i)
          ga[i] += go[i] * b_c.data()[i];
      }
      if (b_c.requires_grad()) {
        auto& gb = t.grad_acc(b_c);
        for (std::size_t i = 0; i < go.size(); ++i)
          gb[i] += go[i] * a_c.data()[i];
      }
    });
  }
  return out;
}

namespace {

// Elementwise unary with derivative expressed in terms of (x, y).
template <typename F, typename DF>
Tensor ewise_unary(const char* op, const Tensor& a, F f, DF df) {
  int n = a.size();
  std::vector<double> data(n);
  for (int i = 0; i < n; ++i) data[i] = f(a.data()[i]);
  detail::check_finite(data, op);
  bool rec = should_record({&a});
  Tensor out = Tensor::from_data(a.shape(), std::move(data), rec);
  if (rec) {
    Tensor a_c = a, o = out;
    GradTape::active()->record(op, {&a}, out, [a_c, o, df](GradTape& t) {
      auto go = t.grad(o);
      auto& ga = t.grad_acc(a_c);
      for (std::size_t i = 0; i < go.size(); ++i)
        ga[i] += go[i] * df(a_c.data()[i], o.data()[i]);
    });
  }
  return out;
}

double sigmoid_s(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double softplus_s(double x) {
  // log(1 + e^x), overflow-safe
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

}  // namespace

Tensor neg(const Tensor& a) {
  return ewise_unary(
      "neg", a, [](double x) { return -x; },
      [](double, double) { return -1.0; });
}

Tensor scale(const Tensor& a, double c) {
  require(std::isfinite(c), "scale: non-finite factor");
  return ewise_unary(
      "scale", a, [c](double x) { return c * x; },
      [c](double, double) { return c; });
}

Tensor exp(const Tensor& a) {
  return ewise_unary(
      "exp", a, [](double x) { return std::exp(x); },
      [](double, double y) { return y; });
}

Tensor silu(const Tensor& a) {
  return ewise_unary(
      "silu", a, [](double x) { return x * sigmoid_s(x); },
      [](double x, double) {
        double s = sigmoid_s(x);
        return s * (1.0 + x * (1.0 - s));
      });
}

Tensor sigmoid(const Tensor& a) {
  return ewise_unary(
      "sigmoid", a, [](double x) { return sigmoid_s(x); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor softplus(const Tensor& a) {
  return ewise_unary(
      "softplus", a, [](double x) { return softplus_s(x); },
      [](double x, double) { return sigmoid_s(x); });
}

Tensor add_rowvec(const Tensor& x, const Tensor& v) {
  require(x.rank() == 2 && v.rank() == 1 && v.size() == x.cols(),
          "add_rowvec: x must be [L x h], v must be [h]");
  int L = x.rows(), h = x.cols();
  std::vector<double> data(x.data());
  for (int i = 0; i < L; ++i)
    for (int j = 0; j < h; ++j) data[i * h + j] += v.data()[j];
  detail::check_finite(data, "add_rowvec");
  bool rec = should_record({&x, &v});
  Tensor out = Tensor::from_data(x.shape(), std::move(data), rec);
  if (rec) {
    Tensor x_c = x, v_c = v, o = out;
    GradTape::active()->record(
        "add_rowvec", {&x, &v}, out, [x_c, v_c, o, L, h](GradTape& t) {
          auto go = t.grad(o);
          if (x_c.requires_grad()) {
            auto& gx = t.grad_acc(x_c);
            for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
          }
          if (v_c.requires_grad()) {
            auto& gv = t.grad_acc(v_c);
            for (int i = 0; i < L; ++i)
              for (int j = 0; j < h; ++j) gv[j] += go[i * h + j];
          }
        });
  }
  return out;
}

Tensor mul_rowvec(const Tensor& x, const Tensor& v) {
  require(x.rank() == 2 && v.rank() == 1 && v.size() == x.cols(),
          "mul_rowvec: x must be [L x h], v must be [h]");
  int L = x.rows(), h = x.cols();
  std::vector<double> data(x.size());
  for (int i = 0; i < L; ++i)
    for (int j = 0; j < h; ++j) data[i * h + j] = x.data()[i * h + j] * v.data()[j];
  detail::check_finite(data, "mul_rowvec");
  bool rec = should_record({&x, &v});
  Tensor out = Tensor::from_data(x.shape(), std::move(data), rec);
  if (rec) {
    Tensor x_c = x, v_c = v, o = out;
    GradTape::active()->record(
        "mul_rowvec", {&x, &v}, out, [x_c, v_c, o, L, h](GradTape& t) {
          auto go = t.grad(o);
          if (x_c.requires_grad()) {
            auto& gx = t.grad_acc(x_c);
            for (int i = 0; i < L; ++i)
              for (int j = 0; j < h; ++j)
                gx[i * h + j] += go[i * h + j] * v_c.data()[j];
          }
          if (v_c.requires_grad()) {
            auto& gv = t.grad_acc(v_c);
            for (int i = 0; i < L; ++i)
              for (int j = 0; j < h; ++j)
                gv[j] += go[i * h + j] * x_c.data()[i * h + j];
          }
        });
  }
  return out;
}

namespace {

// out[m x n] += a[m x k] . b[k x n]
void gemm_acc(const double* a, const double* b, double* out, int m, int k,
              int n) {
  for (int i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* orow = out + i * n;
    for (int p = 0; p < k; ++p) {
      double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
}

// out[m x k] += go[m x n] . b^T where b is [k x n]
void gemm_nt_acc(const double* go, const double* b, double* out, int m, int n,
                 int k) {
  for (int i = 0; i < m; ++i) {
    const double* grow = go + i * n;
    double* orow = out + i * k;
    for (int p = 0; p < k; ++p) {
      const double* brow = b + p * n;
      double s = 0.0;
      for (int j = 0; j < n; ++j) s += grow[j] * brow[j];
      orow[p] += s;
    }
  }
}

// out[k x n] += a^T . go where a is [m x k], go is [m x n]
void gemm_tn_acc(const double* a, const double* go, double* out, int m, int k,
                 int n) {
  for (int i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* grow = go + i * n;
    for (int p = 0; p < k; ++p) {
      double av = arow[p];
      if (av == 0.0) continue;
      double* orow = out + p * n;
      for (int j = 0; j < n; ++j) orow[j] += av * grow[j];
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && b.rank() == 2, "matmul: operands must be rank 2");
  require(a.cols() == b.rows(), "matmul: inner dimensions must match");
  int m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<double> data(static_cast<std::size_t>(m) * n, 0.0);
  gemm_acc(a.data().data(), b.data().data(), data.data(), m, k, n);
  detail::check_finite(data, "matmul");
  bool rec = should_record({&a, &b});
  Tensor out = Tensor::from_data({m, n}, std::move(data), rec);
  if (rec) {
    Tensor a_c = a, b_c = b, o = out;
    GradTape::active()->record(
        "matmul", {&a, &b}, out, [a_c, b_c, o, m, k, n](GradTape& t) {
          auto go = t.grad(o);
          if (a_c.requires_grad()) {
            auto& ga = t.grad_acc(a_c);
            gemm_nt_acc(go.data(), b_c.data().data(), ga.data(), m, n, k);
          }
          if (b_c.requires_grad()) {
            auto& gb = t.grad_acc(b_c);
            gemm_tn_acc(a_c.data().data(), go.data(), gb.data(), m, k, n);
          }
        });
  }
  return out;
}

Tensor linear(const Tensor& x, const Tensor& w) { return matmul(x, w); }

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  require(x.rank() == 2 && w.rank() == 2, "linear: x and w must be rank 2");
  require(x.cols() == w.rows(), "linear: inner dimensions must match");
  require(b.rank() == 1 && b.size() == w.cols(),
          "linear: bias must be [out]");
  int m = x.rows(), k = x.cols(), n = w.cols();
  std::vector<double> data(static_cast<std::size_t>(m) * n);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) data[i * n + j] = b.data()[j];
  gemm_acc(x.data().data(), w.data().data(), data.data(), m, k, n);
  detail::check_finite(data, "linear");
  bool rec = should_record({&x, &w, &b});
  Tensor out = Tensor::from_data({m, n}, std::move(data), rec);
  if (rec) {
    Tensor x_c = x, w_c = w, b_c = b, o = out;
    GradTape::active()->record(
        "linear", {&x, &w, &b}, out, [x_c, w_c, b_c, o, m, k, n](GradTape& t) {
          auto go = t.grad(o);
          if (x_c.requires_grad()) {
            auto& gx = t.grad_acc(x_c);
            gemm_nt_acc(go.data(), w_c.data().data(), gx.data(), m, n, k);
          }
          if (w_c.requires_grad()) {
            auto& gw = t.grad_acc(w_c);
            gemm_tn_acc(x_c.data().data(), go.data(), gw.data(), m, k, n);
          }
          if (b_c.requires_grad()) {
            auto& gb = t.grad_acc(b_c);
            for (int i = 0; i < m; ++i)
              for (int j = 0; j < n; ++j) gb[j] += go[i * n + j];
          }
        });
  }
  return out;
}

Tensor reshape(const Tensor& a, const Shape& shape) {
  bool rec = should_record({&a});
  Tensor out = Tensor::from_data(shape, a.data(), rec);
  require(out.size() == a.size(), "reshape: element count must be preserved");
  if (rec) {
    Tensor a_c = a, o = out;
    GradTape::active()->record("reshape", {&a}, out, [a_c, o](GradTape& t) {
      auto go = t.grad(o);
      auto& ga = t.grad_acc(a_c);
      for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
    });
  }
  return out;
}

Tensor concat_lastdim(const Tensor& a, const Tensor& b) {
  require(a.rank() == b.rank() && (a.rank() == 1 || a.rank() == 2),
          "concat_lastdim: operands must both be rank 1 or rank 2");
  int rows = a.rank() == 2 ? a.rows() : 1;
  if (a.rank() == 2)
    require(a.rows() == b.rows(), "concat_lastdim: row counts must match");
  int ca = a.rank() == 2 ? a.cols() : a.size();
  int cb = b.rank() == 2 ? b.cols() : b.size();
  std::vector<double> data(static_cast<std::size_t>(rows) * (ca + cb));
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < ca; ++j) data[i * (ca + cb) + j] = a.data()[i * ca + j];
    for (int j = 0; j < cb; ++j)
      data[i * (ca + cb) + ca + j] = b.data()[i * cb + j];
  }
  Shape shape = a.rank() == 2 ? Shape{rows, ca + cb} : Shape{ca + cb};
  bool rec = should_record({&a, &b});
  Tensor out = Tensor::from_data(shape, std::move(data), rec);
  if (rec) {
    Tensor a_c = a, b_c = b, o = out;
    GradTape::active()->record(
        "concat_lastdim", {&a, &b}, out,
        [a_c, b_c, o, rows, ca, cb](GradTape& t) {
          auto go = t.grad(o);
          if (a_c.requires_grad()) {
            auto& ga = t.grad_acc(a_c);
            for (int i = 0; i < rows; ++i)
              for (int j = 0; j < ca; ++j)
                ga[i * ca + j] += go[i * (ca + cb) + j];
          }
          if (b_c.requires_grad()) {
            auto& gb = t.grad_acc(b_c);
            for (int i = 0; i < rows; ++i)
              for (int j = 0; j < cb; ++j)
                gb[i * cb + j] += go[i * (ca + cb) + ca + j];
          }
        });
  }
  return out;
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && b.rank() == 2, "concat_rows: operands must be rank 2");
  require(a.cols() == b.cols(), "concat_rows: column counts must match");
  int ra = a.rows(), rb = b.rows(), h = a.cols();
  std::vector<double> data;
  data.reserve(static_cast<std::size_t>(ra + rb) * h);
  data.insert(data.end(), a.data().begin(), a.data().end());
  data.insert(data.end(), b.data().begin(), b.data().end());
  bool rec = should_record({&a, &b});
  Tensor out = Tensor::from_data({ra + rb, h}, std::move(data), rec);
  if (rec) {
    Tensor a_c = a, b_c = b, o = out;
    GradTape::active()->record(
        "concat_rows", {&a, &b}, out, [a_c, b_c, o, ra, rb, h](GradTape& t) {
          auto go = t.grad(o);
          if (a_c.requires_grad()) {
            auto& ga = t.grad_acc(a_c);
            for (int i = 0; i < ra * h; ++i) ga[i] += go[i];
          }
          if (b_c.requires_grad()) {
            auto& gb = t.grad_acc(b_c);
            for (int i = 0; i < rb * h; ++i) gb[i] += go[ra * h + i];
          }
        });
  }
  return out;
}

Tensor slice_rows(const Tensor& x, int start, int count) {
  require(x.rank() == 2, "slice_rows: rank-2 input required");
  require(start >= 0 && count >= 1 && start + count <= x.rows(),
          "slice_rows: range out of bounds");
  int h = x.cols();
  std::vector<double> data(x.data().begin() + static_cast<std::size_t>(start) * h,
                           x.data().begin() +
                               static_cast<std::size_t>(start + count) * h);
  bool rec = should_record({&x});
  Tensor out = Tensor::from_data({count, h}, std::move(data), rec);
  if (rec) {
    Tensor x_c = x, o = out;
    GradTape::active()->record(
        "slice_rows", {&x}, out, [x_c, o, start, count, h](GradTape& t) {
          auto go = t.grad(o);
          auto& gx = t.grad_acc(x_c);
          for (int i = 0; i < count * h; ++i) gx[start * h + i] += go[i];
        });
  }
  return out;
}

Tensor slice_cols(const Tensor& x, int start, int count) {
  require(x.rank() == 2, "slice_cols: rank-2 input required");
  require(start >= 0 && count >= 1 && start + count <= x.cols(),
          "slice_cols: range out of bounds");
  int L = x.rows(), h = x.cols();
  std::vector<double> data(static_cast<std::size_t>(L) * count);
  for (int i = 0; i < L; ++i)
    for (int j = 0; j < count; ++j)
      data[i * count + j] = x.data()[i * h + start + j];
  bool rec = should_record({&x});
  Tensor out = Tensor::from_data({L, count}, std::move(data), rec);
  if (rec) {
    Tensor x_c = x, o = out;
    GradTape::active()->record(
        "slice_cols", {&x}, out, [x_c, o, start, count, L, h](GradTape& t) {
          auto go = t.grad(o);
          auto& gx = t.grad_acc(x_c);
          for (int i = 0; i < L; ++i)
            for (int j = 0; j < count; ++j)
              gx[i * h + start + j] += go[i * count + j];
        });
  }
  return out;
}

Tensor layernorm_nogain(const Tensor& x, double eps) {
  require(x.rank() == 2, "layernorm_nogain: rank-2 input required");
  require(x.cols() >= 2, "layernorm_nogain: needs at least 2 features");
  require(eps >= 0.0, "layernorm_nogain: eps must be non-negative");
  int L = x.rows(), h = x.cols();
  std::vector<double> data(x.size());
  std::vector<double> inv_std(L);
  for (int i = 0; i < L; ++i) {
    const double* row = x.data().data() + i * h;
    double mean = 0.0;
    for (int j = 0; j < h; ++j) mean += row[j];
    mean /= h;
    double var = 0.0;
    for (int j = 0; j < h; ++j) {
      double d = row[j] - mean;
      var += d * d;
    }
    var /= h;
    double is = 1.0 / std::sqrt(var + eps);
    inv_std[i] = is;
    for (int j = 0; j < h; ++j) data[i * h + j] = (row[j] - mean) * is;
  }
  detail::check_finite(data, "layernorm_nogain");
  bool rec = should_record({&x});
  Tensor out = Tensor::from_data(x.shape(), std::move(data), rec);
  if (rec) {
    Tensor x_c = x, o = out;
    GradTape::active()->record(
        "layernorm_nogain", {&x}, out,
        [x_c, o, L, h, inv_std](GradTape& t) {
          auto go = t.grad(o);
          auto& gx = t.grad_acc(x_c);
          for (int i = 0; i < L; ++i) {
            const double* g = go.data() + i * h;
            const double* y = o.data().data() + i * h;
            double gmean = 0.0, gymean = 0.0;
            for (int j = 0; j < h; ++j) {
              gmean += g[j];
              gymean += g[j] * y[j];
            }
            gmean /= h;
            gymean /= h;
            for (int j = 0; j < h; ++j)
              gx[i * h + j] += inv_std[i] * (g[j] - gmean - y[j] * gymean);
          }
        });
  }
  return out;
}

Tensor depthwise_conv1d(const Tensor& x, const Tensor& kernel) {
  require(x.rank() == 2 && kernel.rank() == 2,
          "depthwise_conv1d: rank-2 operands required");
  require(x.cols() == kernel.cols(),
          "depthwise_conv1d: channel counts must match");
  int L = x.rows(), d = x.cols(), k = kernel.rows();
  require(k >= 1, "depthwise_conv1d: kernel size must be >= 1");
  std::vector<double> data(x.size(), 0.0);
  for (int i = 0; i < L; ++i) {
    int jmax = std::min(k - 1, i);
    for (int j = 0; j <= jmax; ++j) {
      const double* kr = kernel.data().data() + j * d;
      const double* xr = x.data().data() + (i - j) * d;
      double* orow = data.data() + i * d;
      for (int c = 0; c < d; ++c) orow[c] += kr[c] * xr[c];
    }
  }
  detail::check_finite(data, "depthwise_conv1d");
  bool rec = should_record({&x, &kernel});
  Tensor out = Tensor::from_data(x.shape(), std::move(data), rec);
  if (rec) {
    Tensor x_c = x, k_c = kernel, o = out;
    GradTape::active()->record(
        "depthwise_conv1d", {&x, &kernel}, out,
        [x_c, k_c, o, L, d, k](GradTape& t) {
          auto go = t.grad(o);
          if (x_c.requires_grad()) {
            auto& gx = t.grad_acc(x_c);
            for (int i = 0; i < L; ++i) {
              int jmax = std::min(k - 1, i);
              for (int j = 0; j <= jmax; ++j) {
                const double* kr = k_c.data().data() + j * d;
                const double* g = go.data() + i * d;
                double* gxr = gx.data() + (i - j) * d;
                for (int c = 0; c < d; ++c) gxr[c] += kr[c] * g[c];
              }
            }
          }
          if (k_c.requires_grad()) {
            auto& gk = t.grad_acc(k_c);
            for (int i = 0; i < L; ++i) {
              int jmax = std::min(k - 1, i);
              for (int j = 0; j <= jmax; ++j) {
                const double* xr = x_c.data().data() + (i - j) * d;
                const double* g = go.data() + i * d;
                double* gkr = gk.data() + j * d;
                for (int c = 0; c < d; ++c) gkr[c] += xr[c] * g[c];
              }
            }
          }
        });
  }
  return out;
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  std::vector<double> data{s};
  detail::check_finite(data, "sum");
  bool rec = should_record({&a});
  Tensor out = Tensor::from_data({1}, std::move(data), rec);
  if (rec) {
    Tensor a_c = a, o = out;
    GradTape::active()->record("sum", {&a}, out, [a_c, o](GradTape& t) {
      auto go = t.grad(o);
      auto& ga = t.grad_acc(a_c);
      for (auto& g : ga) g += go[0];
    });
  }
  return out;
}

Tensor mean(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  double m = s / a.size();
  std::vector<double> data{m};
  detail::check_finite(data, "mean");
  bool rec = should_record({&a});
  Tensor out = Tensor::from_data({1}, std::move(data), rec);
  if (rec) {
    Tensor a_c = a, o = out;
    double inv_n = 1.0 / a.size();
    GradTape::active()->record("mean", {&a}, out, [a_c, o, inv_n](GradTape& t) {
      auto go = t.grad(o);
      auto& ga = t.grad_acc(a_c);
      for (auto& g : ga) g += go[0] * inv_n;
    });
  }
  return out;
}

Tensor mse(const Tensor& a, const Tensor& b) {
  require(a.same_shape(b), "mse: shape mismatch");
  int n = a.size();
  double s = 0.0;
  for (int i = 0; i < n; ++i) {
    double d = a.data()[i] - b.data()[i];
    s += d * d;
  }
  std::vector<double> data{s / n};
  detail::check_finite(data, "mse");
  bool rec = should_record({&a, &b});
  Tensor out = Tensor::from_data({1}, std::move(data), rec);
  if (rec) {
    Tensor a_c = a, b_c = b, o = out;
    GradTape::active()->record("mse", {&a, &b}, out, [a_c, b_c, o, n](GradTape& t) {
      auto go = t.grad(o);
      double c = 2.0 * go[0] / n;
      if (a_c.requires_grad()) {
        auto& ga = t.grad_acc(a_c);
        for (int i = 0; i < n; ++i)
          ga[i] += c * (a_c.data()[i] - b_c.data()[i]);
      }
      if (b_c.requires_grad()) {
        auto& gb = t.grad_acc(b_c);
        for (int i = 0; i < n; ++i)
          gb[i] -= c * (a_c.data()[i] - b_c.data()[i]);
      }
    });
  }
  return out;
}

// ---- grad_check -------------------------------------------------------------

double grad_check(const std::function<Tensor()>& f, std::span<Tensor> leaves,
                  double h) {
  std::vector<std::vector<double>> analytic;
  {
    GradTape tape;
    Tensor out = f();
    require(out.size() == 1, "grad_check: f must return a scalar");
    tape.backward(out);
    for (Tensor& leaf : leaves) {
      auto g = tape.grad(leaf);
      std::vector<double> gv(leaf.size(), 0.0);
      if (!g.empty()) gv.assign(g.begin(), g.end());
      for (double v : gv) {
        if (!std::isfinite(v)) throw numeric_error("grad_check: non-finite gradient");
      }
      analytic.push_back(std::move(gv));
    }
  }

  std::vector<std::vector<double>> fd(leaves.size());
  double scale = 1e-8;  // |g| floor; avoids 0/0 on all-zero gradients
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    Tensor& leaf = leaves[li];
    auto& vals = leaf.mutable_data();
    fd[li].resize(leaf.size());
    for (int i = 0; i < leaf.size(); ++i) {
      double saved = vals[i];
      vals[i] = saved + h;
      double fp = f().item();
      vals[i] = saved - h;
      double fm = f().item();
      vals[i] = saved;
      fd[li][i] = (fp - fm) / (2.0 * h);
      scale = std::max(
          scale, std::max(std::abs(analytic[li][i]), std::abs(fd[li][i])));
    }
  }
  double max_rel = 0.0;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    for (std::size_t i = 0; i < fd[li].size(); ++i) {
      max_rel = std::max(max_rel, std::abs(analytic[li][i] - fd[li][i]) / scale);
    }
  }
  return max_rel;
}

}  // namespace duet
