#include "scanssc/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "scanssc/parallel.hpp"

namespace scanssc::ad {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

void check_axis(const Tensor& t, int axis, const char* op) {
  if (axis < 0 || axis >= t.rank())
    fail(std::string(op) + ": axis " + std::to_string(axis) + " out of range for shape " +
         shape_str(t.shape()));
}

std::vector<int64_t> row_strides(const Shape& s) {
  std::vector<int64_t> st(s.size(), 1);
  for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i)
    st[static_cast<size_t>(i)] = st[static_cast<size_t>(i) + 1] * s[static_cast<size_t>(i) + 1];
  return st;
}

// Strides for reading an input at positions of a broadcast output: axes
// where the input has extent 1 but the output does not read with stride 0.
std::vector<int64_t> broadcast_strides(const Shape& in, const Shape& out) {
  auto st = row_strides(in);
  for (size_t i = 0; i < in.size(); ++i)
    if (in[i] == 1 && out[i] != 1) st[i] = 0;
  return st;
}

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  if (a.size() != b.size())
    fail(std::string(op) + ": rank mismatch between " + shape_str(a) + " and " + shape_str(b));
  Shape out(a.size());
  for (size_t i = 0; i < a.size(); ++i) {
    if (a[i] == b[i] || b[i] == 1)
      out[i] = a[i];
    else if (a[i] == 1)
      out[i] = b[i];
    else
      fail(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
  }
  return out;
}

// Odometer over `out` tracking flat offsets into two strided views.
template <typename Fn>
void for_each_pair(const Shape& out, const std::vector<int64_t>& sa,
                   const std::vector<int64_t>& sb, Fn&& fn) {
  const int64_t n = shape_numel(out);
  const int rank = static_cast<int>(out.size());
  if (rank == 0) {
    if (n == 1) fn(int64_t{0}, int64_t{0}, int64_t{0});
    return;
  }
  std::vector<int64_t> idx(out.size(), 0);
  int64_t ia = 0, ib = 0;
  for (int64_t flat = 0; flat < n; ++flat) {
    fn(flat, ia, ib);
    for (int d = rank - 1; d >= 0; --d) {
      const auto ud = static_cast<size_t>(d);
      idx[ud]++;
      ia += sa[ud];
      ib += sb[ud];
      if (idx[ud] < out[ud]) break;
      ia -= sa[ud] * out[ud];
      ib -= sb[ud] * out[ud];
      idx[ud] = 0;
    }
  }
}

Tape* common_tape(std::initializer_list<const Tensor*> ts) {
  Tape* tape = nullptr;
  for (const Tensor* t : ts) {
    if (!t->defined() || !t->on_tape()) continue;
    if (tape == nullptr)
      tape = t->tape();
    else if (tape != t->tape())
      fail("operands live on different gradient tapes");
  }
  return tape;
}

using Buffer = std::shared_ptr<const std::vector<double>>;

struct BinaryGrads {
  double da;
  double db;
};

// fwd: value at (a,b); grads: partials at (a,b).
Tensor binary_op(const Tensor& a, const Tensor& b, const char* name,
                 double (*fwd)(double, double), BinaryGrads (*grads)(double, double)) {
  const Shape out_shape = broadcast_shape(a.shape(), b.shape(), name);
  const auto sa = broadcast_strides(a.shape(), out_shape);
  const auto sb = broadcast_strides(b.shape(), out_shape);
  const auto& da = a.data();
  const auto& db = b.data();
  std::vector<double> out(static_cast<size_t>(shape_numel(out_shape)));
  for_each_pair(out_shape, sa, sb, [&](int64_t flat, int64_t ia, int64_t ib) {
    out[static_cast<size_t>(flat)] = fwd(da[static_cast<size_t>(ia)], db[static_cast<size_t>(ib)]);
  });

  Tape* tape = common_tape({&a, &b});
  if (tape == nullptr) return Tensor::constant(out_shape, std::move(out));

  const int na = a.on_tape() ? a.node() : -1;
  const int nb = b.on_tape() ? b.node() : -1;
  Buffer pa = a.shared_data();
  Buffer pb = b.shared_data();
  return tape->record(
      out_shape, std::move(out),
      [out_shape, sa, sb, na, nb, pa, pb, grads](Tape& t, const std::vector<double>& g) {
        const auto& va = *pa;
        const auto& vb = *pb;
        for_each_pair(out_shape, sa, sb, [&](int64_t flat, int64_t ia, int64_t ib) {
          const BinaryGrads d = grads(va[static_cast<size_t>(ia)], vb[static_cast<size_t>(ib)]);
          const double gv = g[static_cast<size_t>(flat)];
          if (na >= 0) t.accumulate(na, ia, d.da * gv);
          if (nb >= 0) t.accumulate(nb, ib, d.db * gv);
        });
      });
}

Tensor unary_op(const Tensor& a, double (*fwd)(double), double (*dda)(double)) {
  const auto& da = a.data();
  std::vector<double> out(da.size());
  for (size_t i = 0; i < da.size(); ++i) out[i] = fwd(da[i]);
  if (!a.on_tape()) return Tensor::constant(a.shape(), std::move(out));
  const int na = a.node();
  Buffer pa = a.shared_data();
  return a.tape()->record(a.shape(), std::move(out),
                          [na, pa, dda](Tape& t, const std::vector<double>& g) {
                            const auto& va = *pa;
                            for (size_t i = 0; i < g.size(); ++i)
                              t.accumulate(na, static_cast<int64_t>(i), dda(va[i]) * g[i]);
                          });
}

// Iterates lines along `axis`: calls fn(base_offset, stride, length) for
// every 1-D line of the tensor.
template <typename Fn>
void for_each_line(const Shape& shape, int axis, Fn&& fn) {
  const auto st = row_strides(shape);
  const int64_t len = shape[static_cast<size_t>(axis)];
  const int64_t stride = st[static_cast<size_t>(axis)];
  const int64_t total = shape_numel(shape);
  const int64_t lines = len == 0 ? 0 : total / len;
  // outer = product of extents before axis, inner = product after.
  int64_t inner = 1;
  for (size_t i = static_cast<size_t>(axis) + 1; i < shape.size(); ++i) inner *= shape[i];
  for (int64_t line = 0; line < lines; ++line) {
    const int64_t outer_idx = line / inner;
    const int64_t inner_idx = line % inner;
    fn(outer_idx * len * inner + inner_idx, stride, len);
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Shape / Tensor / Tape
// ---------------------------------------------------------------------------

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t e : s) n *= e;
  return n;
}

std::string shape_str(const Shape& s) {
  std::string r = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) r += ",";
    r += std::to_string(s[i]);
  }
  return r + "]";
}

Tensor Tensor::constant(Shape shape, std::vector<double> data) {
  for (int64_t e : shape)
    if (e <= 0) fail("tensor extents must be positive, got " + shape_str(shape));
  if (shape_numel(shape) != static_cast<int64_t>(data.size()))
    fail("shape " + shape_str(shape) + " does not match data length " +
         std::to_string(data.size()));
  Tensor t;
  t.shape_ = std::move(shape);
  t.data_ = std::make_shared<std::vector<double>>(std::move(data));
  return t;
}

Tensor Tensor::zeros(Shape shape) {
  const auto n = static_cast<size_t>(shape_numel(shape));
  return constant(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::full(Shape shape, double value) {
  const auto n = static_cast<size_t>(shape_numel(shape));
  return constant(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return constant({1}, {value}); }

int64_t Tensor::numel() const { return data_ ? static_cast<int64_t>(data_->size()) : 0; }

double Tensor::value() const {
  if (!defined() || data_->size() != 1)
    fail("value() requires a single-element tensor, got " + shape_str(shape_));
  return (*data_)[0];
}

Tensor Tensor::detached() const {
  Tensor t;
  t.shape_ = shape_;
  t.data_ = data_;
  return t;
}

Tensor Tape::leaf(Shape shape, std::vector<double> data) {
  Tensor t = Tensor::constant(std::move(shape), std::move(data));
  t.tape_ = this;
  t.node_ = static_cast<int>(nodes_.size());
  nodes_.push_back(Node{t.numel(), {}, false, nullptr});
  return t;
}

Tensor Tape::leaf(const Tensor& values) {
  return leaf(values.shape(), values.data());
}

Tensor Tape::record(Shape shape, std::vector<double> data, BackwardFn backward) {
  Tensor t = Tensor::constant(std::move(shape), std::move(data));
  t.tape_ = this;
  t.node_ = static_cast<int>(nodes_.size());
  nodes_.push_back(Node{t.numel(), {}, false, std::move(backward)});
  return t;
}

void Tape::accumulate(int node, int64_t index, double v) {
  if (node < 0) return;
  Node& n = nodes_[static_cast<size_t>(node)];
  if (!n.grad_alive) {
    n.grad.assign(static_cast<size_t>(n.size), 0.0);
    n.grad_alive = true;
  }
  n.grad[static_cast<size_t>(index)] += v;
}

double* Tape::grad_buffer(int node) {
  Node& n = nodes_[static_cast<size_t>(node)];
  if (!n.grad_alive) {
    n.grad.assign(static_cast<size_t>(n.size), 0.0);
    n.grad_alive = true;
  }
  return n.grad.data();
}

void Tape::backward(const Tensor& root) {
  if (root.tape() != this) fail("backward root does not belong to this tape");
  if (root.numel() != 1) fail("backward requires a scalar root, got " + shape_str(root.shape()));
  for (Node& n : nodes_) {
    n.grad_alive = false;
    n.grad.clear();
  }
  accumulate(root.node(), 0, 1.0);
  for (int i = root.node(); i >= 0; --i) {
    Node& n = nodes_[static_cast<size_t>(i)];
    if (n.grad_alive && n.backward) n.backward(*this, n.grad);
  }
}

std::vector<double> Tape::grad(const Tensor& t) const {
  if (t.tape() != this) fail("tensor does not belong to this tape");
  const Node& n = nodes_[static_cast<size_t>(t.node())];
  if (!n.grad_alive) return std::vector<double>(static_cast<size_t>(n.size), 0.0);
  return n.grad;
}

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double, double) { return BinaryGrads{1.0, 1.0}; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double, double) { return BinaryGrads{1.0, -1.0}; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double x, double y) { return BinaryGrads{y, x}; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "div", [](double x, double y) { return x / y; },
      [](double x, double y) { return BinaryGrads{1.0 / y, -x / (y * y)}; });
}

Tensor neg(const Tensor& a) {
  return unary_op(a, [](double x) { return -x; }, [](double) { return -1.0; });
}

Tensor scale(const Tensor& a, double s) {
  const auto& da = a.data();
  std::vector<double> out(da.size());
  for (size_t i = 0; i < da.size(); ++i) out[i] = da[i] * s;
  if (!a.on_tape()) return Tensor::constant(a.shape(), std::move(out));
  const int na = a.node();
  return a.tape()->record(a.shape(), std::move(out),
                          [na, s](Tape& t, const std::vector<double>& g) {
                            for (size_t i = 0; i < g.size(); ++i)
                              t.accumulate(na, static_cast<int64_t>(i), s * g[i]);
                          });
}

Tensor add_scalar(const Tensor& a, double s) {
  const auto& da = a.data();
  std::vector<double> out(da.size());
  for (size_t i = 0; i < da.size(); ++i) out[i] = da[i] + s;
  if (!a.on_tape()) return Tensor::constant(a.shape(), std::move(out));
  const int na = a.node();
  return a.tape()->record(a.shape(), std::move(out),
                          [na](Tape& t, const std::vector<double>& g) {
                            for (size_t i = 0; i < g.size(); ++i)
                              t.accumulate(na, static_cast<int64_t>(i), g[i]);
                          });
}

Tensor relu(const Tensor& a) {
  return unary_op(a, [](double x) { return x > 0.0 ? x : 0.0; },
                  [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor log(const Tensor& a) {
  return unary_op(a, [](double x) { return std::log(x); }, [](double x) { return 1.0 / x; });
}

// ---------------------------------------------------------------------------
// Matrix product / linear
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2)
    fail("matmul: operands must have rank >= 2, got " + shape_str(a.shape()) + " and " +
         shape_str(b.shape()));
  const int64_t m = a.dim(a.rank() - 2);
  const int64_t k = a.dim(a.rank() - 1);
  const int64_t k2 = b.dim(b.rank() - 2);
  const int64_t n = b.dim(b.rank() - 1);
  if (k != k2)
    fail("matmul: inner extents disagree between " + shape_str(a.shape()) + " and " +
         shape_str(b.shape()));
  Shape batch_a(a.shape().begin(), a.shape().end() - 2);
  Shape batch_b(b.shape().begin(), b.shape().end() - 2);
  Shape batch;
  if (batch_a == batch_b)
    batch = batch_a;
  else if (batch_a.empty())
    batch = batch_b;
  else if (batch_b.empty())
    batch = batch_a;
  else
    fail("matmul: batch extents disagree between " + shape_str(a.shape()) + " and " +
         shape_str(b.shape()));

  const int64_t batches = shape_numel(batch);
  const bool a_batched = !batch_a.empty();
  const bool b_batched = !batch_b.empty();
  Shape out_shape = batch;
  out_shape.push_back(m);
  out_shape.push_back(n);

  const auto& da = a.data();
  const auto& db = b.data();
  std::vector<double> out(static_cast<size_t>(batches * m * n), 0.0);
  for (int64_t bi = 0; bi < batches; ++bi) {
    const double* pa = da.data() + (a_batched ? bi * m * k : 0);
    const double* pb = db.data() + (b_batched ? bi * k * n : 0);
    double* po = out.data() + bi * m * n;
    for (int64_t i = 0; i < m; ++i)
      for (int64_t kk = 0; kk < k; ++kk) {
        const double av = pa[i * k + kk];
        if (av == 0.0) continue;
        for (int64_t j = 0; j < n; ++j) po[i * n + j] += av * pb[kk * n + j];
      }
  }

  Tape* tape = common_tape({&a, &b});
  if (tape == nullptr) return Tensor::constant(std::move(out_shape), std::move(out));
  const int na = a.on_tape() ? a.node() : -1;
  const int nb = b.on_tape() ? b.node() : -1;
  Buffer pa_buf = a.shared_data();
  Buffer pb_buf = b.shared_data();
  return tape->record(
      std::move(out_shape), std::move(out),
      [=](Tape& t, const std::vector<double>& g) {
        const auto& va = *pa_buf;
        const auto& vb = *pb_buf;
        for (int64_t bi = 0; bi < batches; ++bi) {
          const double* pg = g.data() + bi * m * n;
          const double* pa = va.data() + (a_batched ? bi * m * k : 0);
          const double* pb = vb.data() + (b_batched ? bi * k * n : 0);
          const int64_t base_a = a_batched ? bi * m * k : 0;
          const int64_t base_b = b_batched ? bi * k * n : 0;
          if (na >= 0) {
            // dA = dC * B^T
            for (int64_t i = 0; i < m; ++i)
              for (int64_t kk = 0; kk < k; ++kk) {
                double acc = 0.0;
                for (int64_t j = 0; j < n; ++j) acc += pg[i * n + j] * pb[kk * n + j];
                t.accumulate(na, base_a + i * k + kk, acc);
              }
          }
          if (nb >= 0) {
            // dB = A^T * dC
            for (int64_t kk = 0; kk < k; ++kk)
              for (int64_t j = 0; j < n; ++j) {
                double acc = 0.0;
                for (int64_t i = 0; i < m; ++i) acc += pa[i * k + kk] * pg[i * n + j];
                t.accumulate(nb, base_b + kk * n + j, acc);
              }
          }
        }
      });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.rank() < 1 || w.rank() != 2)
    fail("linear: expected x[..., in] and w[in, out], got " + shape_str(x.shape()) + " and " +
         shape_str(w.shape()));
  const int64_t in = x.dim(x.rank() - 1);
  if (w.dim(0) != in)
    fail("linear: input extent " + shape_str(x.shape()) + " does not match weight " +
         shape_str(w.shape()));
  const int64_t out_c = w.dim(1);
  if (b.defined() && (b.rank() != 1 || b.dim(0) != out_c))
    fail("linear: bias shape " + shape_str(b.shape()) + " does not match weight " +
         shape_str(w.shape()));
  const int64_t rows = x.numel() / in;
  Shape out_shape = x.shape();
  out_shape.back() = out_c;

  const auto& dx = x.data();
  const auto& dw = w.data();
  std::vector<double> out(static_cast<size_t>(rows * out_c), 0.0);
  for (int64_t r = 0; r < rows; ++r) {
    double* po = out.data() + r * out_c;
    if (b.defined()) {
      const auto& dbv = b.data();
      for (int64_t o = 0; o < out_c; ++o) po[o] = dbv[static_cast<size_t>(o)];
    }
    for (int64_t i = 0; i < in; ++i) {
      const double xv = dx[static_cast<size_t>(r * in + i)];
      if (xv == 0.0) continue;
      const double* pw = dw.data() + i * out_c;
      for (int64_t o = 0; o < out_c; ++o) po[o] += xv * pw[o];
    }
  }

  Tape* tape = b.defined() ? common_tape({&x, &w, &b}) : common_tape({&x, &w});
  if (tape == nullptr) return Tensor::constant(std::move(out_shape), std::move(out));
  const int nx = x.on_tape() ? x.node() : -1;
  const int nw = w.on_tape() ? w.node() : -1;
  const int nb = (b.defined() && b.on_tape()) ? b.node() : -1;
  Buffer px = x.shared_data();
  Buffer pw = w.shared_data();
  return tape->record(
      std::move(out_shape), std::move(out),
      [=](Tape& t, const std::vector<double>& g) {
        const auto& vx = *px;
        const auto& vw = *pw;
        for (int64_t r = 0; r < rows; ++r) {
          const double* pg = g.data() + r * out_c;
          for (int64_t o = 0; o < out_c; ++o) {
            const double gv = pg[o];
            if (gv == 0.0) continue;
            if (nb >= 0) t.accumulate(nb, o, gv);
            for (int64_t i = 0; i < in; ++i) {
              if (nx >= 0) t.accumulate(nx, r * in + i, vw[static_cast<size_t>(i * out_c + o)] * gv);
              if (nw >= 0) t.accumulate(nw, i * out_c + o, vx[static_cast<size_t>(r * in + i)] * gv);
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Softmax family / layer norm
// ---------------------------------------------------------------------------

Tensor softmax(const Tensor& x, int axis) {
  check_axis(x, axis, "softmax");
  const auto& dx = x.data();
  std::vector<double> out(dx.size());
  for_each_line(x.shape(), axis, [&](int64_t base, int64_t stride, int64_t len) {
    double mx = kNegInf;
    for (int64_t i = 0; i < len; ++i) mx = std::max(mx, dx[static_cast<size_t>(base + i * stride)]);
    if (mx == kNegInf)
      fail("softmax: all entries along the axis are -inf (every attention row needs >=1 allowed key)");
    double sum = 0.0;
    for (int64_t i = 0; i < len; ++i) {
      const double v = dx[static_cast<size_t>(base + i * stride)];
      const double e = v == kNegInf ? 0.0 : std::exp(v - mx);
      out[static_cast<size_t>(base + i * stride)] = e;
      sum += e;
    }
    for (int64_t i = 0; i < len; ++i) out[static_cast<size_t>(base + i * stride)] /= sum;
  });

  if (!x.on_tape()) return Tensor::constant(x.shape(), std::move(out));
  const int nx = x.node();
  const Shape shape = x.shape();
  auto ps = std::make_shared<std::vector<double>>(out);  // saved softmax values
  return x.tape()->record(shape, std::move(out),
                          [nx, shape, axis, ps](Tape& t, const std::vector<double>& g) {
                            const auto& s = *ps;
                            for_each_line(shape, axis, [&](int64_t base, int64_t stride, int64_t len) {
                              double dot = 0.0;
                              for (int64_t i = 0; i < len; ++i) {
                                const auto k = static_cast<size_t>(base + i * stride);
                                dot += g[k] * s[k];
                              }
                              for (int64_t i = 0; i < len; ++i) {
                                const auto k = static_cast<size_t>(base + i * stride);
                                t.accumulate(nx, static_cast<int64_t>(k), s[k] * (g[k] - dot));
                              }
                            });
                          });
}

Tensor log_softmax(const Tensor& x, int axis) {
  check_axis(x, axis, "log_softmax");
  const auto& dx = x.data();
  std::vector<double> out(dx.size());
  for_each_line(x.shape(), axis, [&](int64_t base, int64_t stride, int64_t len) {
    double mx = kNegInf;
    for (int64_t i = 0; i < len; ++i) mx = std::max(mx, dx[static_cast<size_t>(base + i * stride)]);
    if (mx == kNegInf) fail("log_softmax: all entries along the axis are -inf");
    double sum = 0.0;
    for (int64_t i = 0; i < len; ++i) {
      const double v = dx[static_cast<size_t>(base + i * stride)];
      sum += v == kNegInf ? 0.0 : std::exp(v - mx);
    }
    const double lse = mx + std::log(sum);
    for (int64_t i = 0; i < len; ++i) {
      const auto k = static_cast<size_t>(base + i * stride);
      out[k] = dx[k] - lse;
    }
  });

  if (!x.on_tape()) return Tensor::constant(x.shape(), std::move(out));
  const int nx = x.node();
  const Shape shape = x.shape();
  auto po = std::make_shared<std::vector<double>>(out);
  return x.tape()->record(shape, std::move(out),
                          [nx, shape, axis, po](Tape& t, const std::vector<double>& g) {
                            const auto& lsm = *po;
                            for_each_line(shape, axis, [&](int64_t base, int64_t stride, int64_t len) {
                              double gsum = 0.0;
                              for (int64_t i = 0; i < len; ++i)
                                gsum += g[static_cast<size_t>(base + i * stride)];
                              for (int64_t i = 0; i < len; ++i) {
                                const auto k = static_cast<size_t>(base + i * stride);
                                t.accumulate(nx, static_cast<int64_t>(k),
                                             g[k] - std::exp(lsm[k]) * gsum);
                              }
                            });
                          });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double epsilon) {
  if (x.rank() < 1) fail("layer_norm: rank-0 input");
  const int64_t c = x.dim(x.rank() - 1);
  if (gamma.rank() != 1 || gamma.dim(0) != c || beta.rank() != 1 || beta.dim(0) != c)
    fail("layer_norm: affine shapes " + shape_str(gamma.shape()) + "/" + shape_str(beta.shape()) +
         " do not match channel extent " + std::to_string(c));
  if (epsilon <= 0.0) fail("layer_norm: epsilon must be positive");
  const int64_t rows = x.numel() / c;

  const auto& dx = x.data();
  const auto& dg = gamma.data();
  const auto& db = beta.data();
  std::vector<double> out(dx.size());
  std::vector<double> xhat(dx.size());
  std::vector<double> inv_sigma(static_cast<size_t>(rows));
  for (int64_t r = 0; r < rows; ++r) {
    const double* px = dx.data() + r * c;
    double mu = 0.0;
    for (int64_t i = 0; i < c; ++i) mu += px[i];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (int64_t i = 0; i < c; ++i) var += (px[i] - mu) * (px[i] - mu);
    var /= static_cast<double>(c);
    const double inv = 1.0 / std::sqrt(var + epsilon);
    inv_sigma[static_cast<size_t>(r)] = inv;
    for (int64_t i = 0; i < c; ++i) {
      const double xh = (px[i] - mu) * inv;
      xhat[static_cast<size_t>(r * c + i)] = xh;
      out[static_cast<size_t>(r * c + i)] = dg[static_cast<size_t>(i)] * xh + db[static_cast<size_t>(i)];
    }
  }

  Tape* tape = common_tape({&x, &gamma, &beta});
  if (tape == nullptr) return Tensor::constant(x.shape(), std::move(out));
  const int nx = x.on_tape() ? x.node() : -1;
  const int ng = gamma.on_tape() ? gamma.node() : -1;
  const int nb = beta.on_tape() ? beta.node() : -1;
  auto pxh = std::make_shared<std::vector<double>>(std::move(xhat));
  auto pis = std::make_shared<std::vector<double>>(std::move(inv_sigma));
  Buffer pg = gamma.shared_data();
  return tape->record(
      x.shape(), std::move(out),
      [=](Tape& t, const std::vector<double>& g) {
        const auto& xh = *pxh;
        const auto& is = *pis;
        const auto& gv = *pg;
        for (int64_t r = 0; r < rows; ++r) {
          const double* pgr = g.data() + r * c;
          const double* pxr = xh.data() + r * c;
          double mean_gy = 0.0, mean_gyx = 0.0;
          for (int64_t i = 0; i < c; ++i) {
            const double gy = pgr[i] * gv[static_cast<size_t>(i)];
            mean_gy += gy;
            mean_gyx += gy * pxr[i];
          }
          mean_gy /= static_cast<double>(c);
          mean_gyx /= static_cast<double>(c);
          for (int64_t i = 0; i < c; ++i) {
            if (nb >= 0) t.accumulate(nb, i, pgr[i]);
            if (ng >= 0) t.accumulate(ng, i, pgr[i] * pxr[i]);
            if (nx >= 0) {
              const double gy = pgr[i] * gv[static_cast<size_t>(i)];
              t.accumulate(nx, r * c + i,
                           is[static_cast<size_t>(r)] * (gy - mean_gy - pxr[i] * mean_gyx));
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

Tensor sum(const Tensor& x, int axis, bool keepdim) {
  check_axis(x, axis, "sum");
  Shape out_shape = x.shape();
  if (keepdim)
    out_shape[static_cast<size_t>(axis)] = 1;
  else
    out_shape.erase(out_shape.begin() + axis);
  if (out_shape.empty()) out_shape = {1};

  const auto& dx = x.data();
  std::vector<double> out(static_cast<size_t>(shape_numel(out_shape)), 0.0);
  int64_t line_no = 0;
  for_each_line(x.shape(), axis, [&](int64_t base, int64_t stride, int64_t len) {
    double acc = 0.0;
    for (int64_t i = 0; i < len; ++i) acc += dx[static_cast<size_t>(base + i * stride)];
    out[static_cast<size_t>(line_no++)] = acc;
  });

  if (!x.on_tape()) return Tensor::constant(std::move(out_shape), std::move(out));
  const int nx = x.node();
  const Shape in_shape = x.shape();
  return x.tape()->record(std::move(out_shape), std::move(out),
                          [nx, in_shape, axis](Tape& t, const std::vector<double>& g) {
                            int64_t line = 0;
                            for_each_line(in_shape, axis,
                                          [&](int64_t base, int64_t stride, int64_t len) {
                                            const double gv = g[static_cast<size_t>(line++)];
                                            for (int64_t i = 0; i < len; ++i)
                                              t.accumulate(nx, base + i * stride, gv);
                                          });
                          });
}

Tensor mean(const Tensor& x, int axis, bool keepdim) {
  check_axis(x, axis, "mean");
  const double inv = 1.0 / static_cast<double>(x.dim(axis));
  return scale(sum(x, axis, keepdim), inv);
}

Tensor sum_all(const Tensor& x) {
  const auto& dx = x.data();
  double acc = 0.0;
  for (double v : dx) acc += v;
  if (!x.on_tape()) return Tensor::scalar(acc);
  const int nx = x.node();
  const int64_t n = x.numel();
  return x.tape()->record({1}, {acc}, [nx, n](Tape& t, const std::vector<double>& g) {
    for (int64_t i = 0; i < n; ++i) t.accumulate(nx, i, g[0]);
  });
}

Tensor mean_all(const Tensor& x) { return scale(sum_all(x), 1.0 / static_cast<double>(x.numel())); }

// ---------------------------------------------------------------------------
// Layout ops
// ---------------------------------------------------------------------------

Tensor concat(const std::vector<Tensor>& xs, int axis) {
  if (xs.empty()) fail("concat: no inputs");
  const int rank = xs[0].rank();
  check_axis(xs[0], axis, "concat");
  Shape out_shape = xs[0].shape();
  int64_t total_axis = 0;
  for (const Tensor& x : xs) {
    if (x.rank() != rank) fail("concat: rank mismatch");
    for (int d = 0; d < rank; ++d)
      if (d != axis && x.dim(d) != out_shape[static_cast<size_t>(d)])
        fail("concat: shape " + shape_str(x.shape()) + " incompatible with " +
             shape_str(out_shape) + " along non-concat axes");
    total_axis += x.dim(axis);
  }
  out_shape[static_cast<size_t>(axis)] = total_axis;

  int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= out_shape[static_cast<size_t>(d)];
  for (int d = axis + 1; d < rank; ++d) inner *= out_shape[static_cast<size_t>(d)];

  std::vector<double> out(static_cast<size_t>(shape_numel(out_shape)));
  int64_t offset = 0;
  for (const Tensor& x : xs) {
    const int64_t ext = x.dim(axis);
    const auto& dx = x.data();
    for (int64_t o = 0; o < outer; ++o)
      std::copy(dx.begin() + o * ext * inner, dx.begin() + (o + 1) * ext * inner,
                out.begin() + (o * total_axis + offset) * inner);
    offset += ext;
  }

  std::vector<const Tensor*> ptrs;
  for (const Tensor& x : xs) ptrs.push_back(&x);
  Tape* tape = nullptr;
  for (const Tensor* p : ptrs)
    if (p->on_tape()) {
      if (tape && tape != p->tape()) fail("concat: operands live on different tapes");
      tape = p->tape();
    }
  if (tape == nullptr) return Tensor::constant(std::move(out_shape), std::move(out));

  struct Piece {
    int node;
    int64_t extent;
    int64_t offset;
  };
  std::vector<Piece> pieces;
  int64_t off = 0;
  for (const Tensor& x : xs) {
    pieces.push_back({x.on_tape() ? x.node() : -1, x.dim(axis), off});
    off += x.dim(axis);
  }
  return tape->record(std::move(out_shape), std::move(out),
                      [pieces, outer, inner, total_axis](Tape& t, const std::vector<double>& g) {
                        for (const Piece& p : pieces) {
                          if (p.node < 0) continue;
                          for (int64_t o = 0; o < outer; ++o)
                            for (int64_t e = 0; e < p.extent; ++e)
                              for (int64_t i = 0; i < inner; ++i)
                                t.accumulate(p.node, (o * p.extent + e) * inner + i,
                                             g[static_cast<size_t>(
                                                 (o * total_axis + p.offset + e) * inner + i)]);
                        }
                      });
}

Tensor narrow(const Tensor& x, int axis, int64_t start, int64_t length) {
  check_axis(x, axis, "narrow");
  const int64_t ext = x.dim(axis);
  if (start < 0 || length < 1 || start + length > ext)
    fail("narrow: range [" + std::to_string(start) + "," + std::to_string(start + length) +
         ") out of bounds for extent " + std::to_string(ext));
  Shape out_shape = x.shape();
  out_shape[static_cast<size_t>(axis)] = length;

  int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= x.dim(d);
  for (int d = axis + 1; d < x.rank(); ++d) inner *= x.dim(d);

  const auto& dx = x.data();
  std::vector<double> out(static_cast<size_t>(shape_numel(out_shape)));
  for (int64_t o = 0; o < outer; ++o)
    std::copy(dx.begin() + (o * ext + start) * inner, dx.begin() + (o * ext + start + length) * inner,
              out.begin() + o * length * inner);

  if (!x.on_tape()) return Tensor::constant(std::move(out_shape), std::move(out));
  const int nx = x.node();
  return x.tape()->record(std::move(out_shape), std::move(out),
                          [nx, outer, inner, ext, start, length](Tape& t,
                                                                 const std::vector<double>& g) {
                            for (int64_t o = 0; o < outer; ++o)
                              for (int64_t e = 0; e < length; ++e)
                                for (int64_t i = 0; i < inner; ++i)
                                  t.accumulate(nx, (o * ext + start + e) * inner + i,
                                               g[static_cast<size_t>((o * length + e) * inner + i)]);
                          });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    fail("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  if (!x.on_tape()) return Tensor::constant(std::move(shape), x.data());
  const int nx = x.node();
  return x.tape()->record(std::move(shape), x.data(),
                          [nx](Tape& t, const std::vector<double>& g) {
                            for (size_t i = 0; i < g.size(); ++i)
                              t.accumulate(nx, static_cast<int64_t>(i), g[i]);
                          });
}

Tensor permute(const Tensor& x, const std::vector<int>& perm) {
  const int rank = x.rank();
  if (static_cast<int>(perm.size()) != rank) fail("permute: permutation length mismatch");
  std::vector<bool> seen(perm.size(), false);
  for (int p : perm) {
    if (p < 0 || p >= rank || seen[static_cast<size_t>(p)]) fail("permute: invalid permutation");
    seen[static_cast<size_t>(p)] = true;
  }
  Shape out_shape(perm.size());
  for (size_t i = 0; i < perm.size(); ++i) out_shape[i] = x.dim(perm[i]);

  const auto in_strides = row_strides(x.shape());
  // stride into the input for each output axis
  std::vector<int64_t> gather(perm.size());
  for (size_t i = 0; i < perm.size(); ++i) gather[i] = in_strides[static_cast<size_t>(perm[i])];

  const auto& dx = x.data();
  const int64_t n = x.numel();
  std::vector<double> out(static_cast<size_t>(n));
  std::vector<int64_t> src_of(static_cast<size_t>(n));
  {
    std::vector<int64_t> idx(out_shape.size(), 0);
    int64_t src = 0;
    for (int64_t flat = 0; flat < n; ++flat) {
      out[static_cast<size_t>(flat)] = dx[static_cast<size_t>(src)];
      src_of[static_cast<size_t>(flat)] = src;
      for (int d = rank - 1; d >= 0; --d) {
        const auto ud = static_cast<size_t>(d);
        idx[ud]++;
        src += gather[ud];
        if (idx[ud] < out_shape[ud]) break;
        src -= gather[ud] * out_shape[ud];
        idx[ud] = 0;
      }
    }
  }

  if (!x.on_tape()) return Tensor::constant(std::move(out_shape), std::move(out));
  const int nx = x.node();
  auto psrc = std::make_shared<std::vector<int64_t>>(std::move(src_of));
  return x.tape()->record(std::move(out_shape), std::move(out),
                          [nx, psrc](Tape& t, const std::vector<double>& g) {
                            const auto& src = *psrc;
                            for (size_t i = 0; i < g.size(); ++i)
                              t.accumulate(nx, src[i], g[i]);
                          });
}

Tensor reverse_axis(const Tensor& x, int axis) {
  check_axis(x, axis, "reverse_axis");
  const int64_t ext = x.dim(axis);
  int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= x.dim(d);
  for (int d = axis + 1; d < x.rank(); ++d) inner *= x.dim(d);

  const auto& dx = x.data();
  std::vector<double> out(dx.size());
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t e = 0; e < ext; ++e)
      std::copy(dx.begin() + (o * ext + e) * inner, dx.begin() + (o * ext + e + 1) * inner,
                out.begin() + (o * ext + (ext - 1 - e)) * inner);

  if (!x.on_tape()) return Tensor::constant(x.shape(), std::move(out));
  const int nx = x.node();
  return x.tape()->record(x.shape(), std::move(out),
                          [nx, outer, inner, ext](Tape& t, const std::vector<double>& g) {
                            for (int64_t o = 0; o < outer; ++o)
                              for (int64_t e = 0; e < ext; ++e)
                                for (int64_t i = 0; i < inner; ++i)
                                  t.accumulate(nx, (o * ext + (ext - 1 - e)) * inner + i,
                                               g[static_cast<size_t>((o * ext + e) * inner + i)]);
                          });
}

Tensor masked_fill_blocked(const Tensor& scores, const std::vector<uint8_t>& blocked, int64_t L) {
  if (scores.rank() < 2 || scores.dim(scores.rank() - 2) != L || scores.dim(scores.rank() - 1) != L)
    fail("masked_fill_blocked: scores " + shape_str(scores.shape()) +
         " do not end in [" + std::to_string(L) + "," + std::to_string(L) + "]");
  if (static_cast<int64_t>(blocked.size()) != L * L)
    fail("masked_fill_blocked: mask size does not match length");
  const auto& dx = scores.data();
  const int64_t batches = scores.numel() / (L * L);
  std::vector<double> out(dx.size());
  for (int64_t b = 0; b < batches; ++b)
    for (int64_t ij = 0; ij < L * L; ++ij)
      out[static_cast<size_t>(b * L * L + ij)] =
          blocked[static_cast<size_t>(ij)] ? kNegInf : dx[static_cast<size_t>(b * L * L + ij)];

  if (!scores.on_tape()) return Tensor::constant(scores.shape(), std::move(out));
  const int nx = scores.node();
  auto pmask = std::make_shared<std::vector<uint8_t>>(blocked);
  return scores.tape()->record(scores.shape(), std::move(out),
                               [nx, pmask, L, batches](Tape& t, const std::vector<double>& g) {
                                 const auto& m = *pmask;
                                 for (int64_t b = 0; b < batches; ++b)
                                   for (int64_t ij = 0; ij < L * L; ++ij)
                                     if (!m[static_cast<size_t>(ij)])
                                       t.accumulate(nx, b * L * L + ij,
                                                    g[static_cast<size_t>(b * L * L + ij)]);
                               });
}

// ---------------------------------------------------------------------------
// Volume ops
// ---------------------------------------------------------------------------

namespace {

int64_t reflect_index(int64_t i, int64_t n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * (n - 1) - i;
  }
  return i;
}

struct VolDims {
  int64_t x, y, z, c;
};

VolDims vol_dims(const Tensor& t, const char* op) {
  if (t.rank() != 4) fail(std::string(op) + ": expected a rank-4 [X,Y,Z,C] tensor, got " +
                          shape_str(t.shape()));
  return {t.dim(0), t.dim(1), t.dim(2), t.dim(3)};
}

}  // namespace

Tensor conv3d(const Tensor& x, const Tensor& w, const Tensor& b, PaddingMode padding) {
  const VolDims d = vol_dims(x, "conv3d");
  if (w.rank() != 5 || w.dim(1) != d.c)
    fail("conv3d: kernel " + shape_str(w.shape()) + " does not match input " +
         shape_str(x.shape()));
  const int64_t co = w.dim(0);
  const int64_t k = w.dim(2);
  if (w.dim(3) != k || w.dim(4) != k || k % 2 == 0) fail("conv3d: kernel must be cubic with odd extent");
  if (b.defined() && (b.rank() != 1 || b.dim(0) != co))
    fail("conv3d: bias shape " + shape_str(b.shape()) + " does not match kernel");
  const int64_t r = k / 2;

  const auto& dx = x.data();
  const auto& dw = w.data();
  const bool zero_pad = padding == PaddingMode::zero;

  auto in_at = [&](int64_t px, int64_t py, int64_t pz) -> const double* {
    return dx.data() + ((px * d.y + py) * d.z + pz) * d.c;
  };

  Shape out_shape{d.x, d.y, d.z, co};
  std::vector<double> out(static_cast<size_t>(shape_numel(out_shape)), 0.0);
  for (int64_t ox = 0; ox < d.x; ++ox)
    for (int64_t oy = 0; oy < d.y; ++oy)
      for (int64_t oz = 0; oz < d.z; ++oz) {
        double* po = out.data() + ((ox * d.y + oy) * d.z + oz) * co;
        if (b.defined()) {
          const auto& dbv = b.data();
          for (int64_t o = 0; o < co; ++o) po[o] = dbv[static_cast<size_t>(o)];
        }
        for (int64_t kx = 0; kx < k; ++kx)
          for (int64_t ky = 0; ky < k; ++ky)
            for (int64_t kz = 0; kz < k; ++kz) {
              int64_t px = ox + kx - r, py = oy + ky - r, pz = oz + kz - r;
              if (zero_pad) {
                if (px < 0 || px >= d.x || py < 0 || py >= d.y || pz < 0 || pz >= d.z) continue;
              } else {
                px = reflect_index(px, d.x);
                py = reflect_index(py, d.y);
                pz = reflect_index(pz, d.z);
              }
              const double* pi = in_at(px, py, pz);
              const int64_t kbase = (kx * k + ky) * k + kz;
              for (int64_t o = 0; o < co; ++o) {
                const double* pw = dw.data() + (o * d.c) * k * k * k + kbase;
                double acc = 0.0;
                for (int64_t ci = 0; ci < d.c; ++ci) acc += pi[ci] * pw[ci * k * k * k];
                po[o] += acc;
              }
            }
      }

  Tape* tape = b.defined() ? common_tape({&x, &w, &b}) : common_tape({&x, &w});
  if (tape == nullptr) return Tensor::constant(std::move(out_shape), std::move(out));
  const int nx = x.on_tape() ? x.node() : -1;
  const int nw = w.on_tape() ? w.node() : -1;
  const int nb = (b.defined() && b.on_tape()) ? b.node() : -1;
  Buffer px_buf = x.shared_data();
  Buffer pw_buf = w.shared_data();
  return tape->record(
      std::move(out_shape), std::move(out),
      [=](Tape& t, const std::vector<double>& g) {
        const auto& vx = *px_buf;
        const auto& vw = *pw_buf;
        for (int64_t ox = 0; ox < d.x; ++ox)
          for (int64_t oy = 0; oy < d.y; ++oy)
            for (int64_t oz = 0; oz < d.z; ++oz) {
              const double* pg = g.data() + ((ox * d.y + oy) * d.z + oz) * co;
              if (nb >= 0)
                for (int64_t o = 0; o < co; ++o) t.accumulate(nb, o, pg[o]);
              for (int64_t kx = 0; kx < k; ++kx)
                for (int64_t ky = 0; ky < k; ++ky)
                  for (int64_t kz = 0; kz < k; ++kz) {
                    int64_t px = ox + kx - r, py = oy + ky - r, pz = oz + kz - r;
                    if (zero_pad) {
                      if (px < 0 || px >= d.x || py < 0 || py >= d.y || pz < 0 || pz >= d.z)
                        continue;
                    } else {
                      px = reflect_index(px, d.x);
                      py = reflect_index(py, d.y);
                      pz = reflect_index(pz, d.z);
                    }
                    const int64_t in_base = ((px * d.y + py) * d.z + pz) * d.c;
                    const int64_t kbase = (kx * k + ky) * k + kz;
                    for (int64_t o = 0; o < co; ++o) {
                      const double gv = pg[o];
                      if (gv == 0.0) continue;
                      for (int64_t ci = 0; ci < d.c; ++ci) {
                        const int64_t widx = (o * d.c + ci) * k * k * k + kbase;
                        if (nx >= 0)
                          t.accumulate(nx, in_base + ci, vw[static_cast<size_t>(widx)] * gv);
                        if (nw >= 0)
                          t.accumulate(nw, widx, vx[static_cast<size_t>(in_base + ci)] * gv);
                      }
                    }
                  }
            }
      });
}

Tensor avgpool_half(const Tensor& x) {
  const VolDims d = vol_dims(x, "avgpool_half");
  const int64_t ox = (d.x + 1) / 2, oy = (d.y + 1) / 2, oz = (d.z + 1) / 2;
  auto lo = [](int64_t i, int64_t n, int64_t o) { return i * n / o; };

  const auto& dx = x.data();
  Shape out_shape{ox, oy, oz, d.c};
  std::vector<double> out(static_cast<size_t>(shape_numel(out_shape)), 0.0);
  for (int64_t ix = 0; ix < ox; ++ix)
    for (int64_t iy = 0; iy < oy; ++iy)
      for (int64_t iz = 0; iz < oz; ++iz) {
        const int64_t x0 = lo(ix, d.x, ox), x1 = lo(ix + 1, d.x, ox);
        const int64_t y0 = lo(iy, d.y, oy), y1 = lo(iy + 1, d.y, oy);
        const int64_t z0 = lo(iz, d.z, oz), z1 = lo(iz + 1, d.z, oz);
        const double inv = 1.0 / static_cast<double>((x1 - x0) * (y1 - y0) * (z1 - z0));
        double* po = out.data() + ((ix * oy + iy) * oz + iz) * d.c;
        for (int64_t px = x0; px < x1; ++px)
          for (int64_t py = y0; py < y1; ++py)
            for (int64_t pz = z0; pz < z1; ++pz) {
              const double* pi = dx.data() + ((px * d.y + py) * d.z + pz) * d.c;
              for (int64_t ci = 0; ci < d.c; ++ci) po[ci] += pi[ci] * inv;
            }
      }

  if (!x.on_tape()) return Tensor::constant(std::move(out_shape), std::move(out));
  const int nx = x.node();
  return x.tape()->record(
      std::move(out_shape), std::move(out),
      [nx, d, ox, oy, oz, lo](Tape& t, const std::vector<double>& g) {
        for (int64_t ix = 0; ix < ox; ++ix)
          for (int64_t iy = 0; iy < oy; ++iy)
            for (int64_t iz = 0; iz < oz; ++iz) {
              const int64_t x0 = lo(ix, d.x, ox), x1 = lo(ix + 1, d.x, ox);
              const int64_t y0 = lo(iy, d.y, oy), y1 = lo(iy + 1, d.y, oy);
              const int64_t z0 = lo(iz, d.z, oz), z1 = lo(iz + 1, d.z, oz);
              const double inv = 1.0 / static_cast<double>((x1 - x0) * (y1 - y0) * (z1 - z0));
              const double* pg = g.data() + ((ix * oy + iy) * oz + iz) * d.c;
              for (int64_t px = x0; px < x1; ++px)
                for (int64_t py = y0; py < y1; ++py)
                  for (int64_t pz = z0; pz < z1; ++pz) {
                    const int64_t base = ((px * d.y + py) * d.z + pz) * d.c;
                    for (int64_t ci = 0; ci < d.c; ++ci)
                      t.accumulate(nx, base + ci, pg[ci] * inv);
                  }
            }
      });
}

namespace {

// Per-axis sample: source cell pair and interpolation weight for each
// output index, align-corners=false with edge clamping.
struct LerpAxis {
  std::vector<int64_t> i0, i1;
  std::vector<double> w1;  // weight of i1; weight of i0 is 1-w1
};

LerpAxis lerp_axis(int64_t in, int64_t out) {
  LerpAxis a;
  a.i0.resize(static_cast<size_t>(out));
  a.i1.resize(static_cast<size_t>(out));
  a.w1.resize(static_cast<size_t>(out));
  const double s = static_cast<double>(in) / static_cast<double>(out);
  for (int64_t i = 0; i < out; ++i) {
    double src = (static_cast<double>(i) + 0.5) * s - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const auto lo = static_cast<int64_t>(std::floor(src));
    const int64_t hi = std::min(lo + 1, in - 1);
    a.i0[static_cast<size_t>(i)] = lo;
    a.i1[static_cast<size_t>(i)] = hi;
    a.w1[static_cast<size_t>(i)] = src - static_cast<double>(lo);
  }
  return a;
}

}  // namespace

Tensor resize_trilinear(const Tensor& x, const std::array<int64_t, 3>& out_dims) {
  const VolDims d = vol_dims(x, "resize_trilinear");
  for (int64_t e : out_dims)
    if (e < 1) fail("resize_trilinear: output extents must be positive");
  const LerpAxis ax = lerp_axis(d.x, out_dims[0]);
  const LerpAxis ay = lerp_axis(d.y, out_dims[1]);
  const LerpAxis az = lerp_axis(d.z, out_dims[2]);

  const auto& dx = x.data();
  Shape out_shape{out_dims[0], out_dims[1], out_dims[2], d.c};
  std::vector<double> out(static_cast<size_t>(shape_numel(out_shape)), 0.0);

  auto run = [&](auto&& emit) {
    for (int64_t ix = 0; ix < out_dims[0]; ++ix)
      for (int64_t iy = 0; iy < out_dims[1]; ++iy)
        for (int64_t iz = 0; iz < out_dims[2]; ++iz) {
          const double wx1 = ax.w1[static_cast<size_t>(ix)];
          const double wy1 = ay.w1[static_cast<size_t>(iy)];
          const double wz1 = az.w1[static_cast<size_t>(iz)];
          const int64_t xs[2] = {ax.i0[static_cast<size_t>(ix)], ax.i1[static_cast<size_t>(ix)]};
          const int64_t ys[2] = {ay.i0[static_cast<size_t>(iy)], ay.i1[static_cast<size_t>(iy)]};
          const int64_t zs[2] = {az.i0[static_cast<size_t>(iz)], az.i1[static_cast<size_t>(iz)]};
          const double wxs[2] = {1.0 - wx1, wx1};
          const double wys[2] = {1.0 - wy1, wy1};
          const double wzs[2] = {1.0 - wz1, wz1};
          const int64_t obase = ((ix * out_dims[1] + iy) * out_dims[2] + iz) * d.c;
          for (int cx = 0; cx < 2; ++cx)
            for (int cy = 0; cy < 2; ++cy)
              for (int cz = 0; cz < 2; ++cz) {
                const double w = wxs[cx] * wys[cy] * wzs[cz];
                if (w == 0.0) continue;
                const int64_t ibase = ((xs[cx] * d.y + ys[cy]) * d.z + zs[cz]) * d.c;
                emit(obase, ibase, w);
              }
        }
  };

  run([&](int64_t obase, int64_t ibase, double w) {
    for (int64_t ci = 0; ci < d.c; ++ci)
      out[static_cast<size_t>(obase + ci)] += w * dx[static_cast<size_t>(ibase + ci)];
  });

  if (!x.on_tape()) return Tensor::constant(std::move(out_shape), std::move(out));
  const int nx = x.node();
  return x.tape()->record(std::move(out_shape), std::move(out),
                          [nx, d, out_dims, ax, ay, az](Tape& t, const std::vector<double>& g) {
                            // same traversal, scattering into the input
                            for (int64_t ix = 0; ix < out_dims[0]; ++ix)
                              for (int64_t iy = 0; iy < out_dims[1]; ++iy)
                                for (int64_t iz = 0; iz < out_dims[2]; ++iz) {
                                  const double wx1 = ax.w1[static_cast<size_t>(ix)];
                                  const double wy1 = ay.w1[static_cast<size_t>(iy)];
                                  const double wz1 = az.w1[static_cast<size_t>(iz)];
                                  const int64_t xs[2] = {ax.i0[static_cast<size_t>(ix)],
                                                         ax.i1[static_cast<size_t>(ix)]};
                                  const int64_t ys[2] = {ay.i0[static_cast<size_t>(iy)],
                                                         ay.i1[static_cast<size_t>(iy)]};
                                  const int64_t zs[2] = {az.i0[static_cast<size_t>(iz)],
                                                         az.i1[static_cast<size_t>(iz)]};
                                  const double wxs[2] = {1.0 - wx1, wx1};
                                  const double wys[2] = {1.0 - wy1, wy1};
                                  const double wzs[2] = {1.0 - wz1, wz1};
                                  const int64_t obase =
                                      ((ix * out_dims[1] + iy) * out_dims[2] + iz) * d.c;
                                  for (int cx = 0; cx < 2; ++cx)
                                    for (int cy = 0; cy < 2; ++cy)
                                      for (int cz = 0; cz < 2; ++cz) {
                                        const double w = wxs[cx] * wys[cy] * wzs[cz];
                                        if (w == 0.0) continue;
                                        const int64_t ibase =
                                            ((xs[cx] * d.y + ys[cy]) * d.z + zs[cz]) * d.c;
                                        for (int64_t ci = 0; ci < d.c; ++ci)
                                          t.accumulate(nx, ibase + ci,
                                                       w * g[static_cast<size_t>(obase + ci)]);
                                      }
                                }
                          });
}

// ---------------------------------------------------------------------------
// Cumulative averaging
// ---------------------------------------------------------------------------

namespace {

// boundary: first index handled by the suffix branch; prefix for i < boundary.
int64_t cum_boundary(int64_t n, CumMode mode) {
  switch (mode) {
    case CumMode::prefix:
      return n;
    case CumMode::suffix:
      return 0;
    case CumMode::width_lo:
      return n / 2;
    case CumMode::width_hi:
      return (n + 1) / 2;
  }
  return n;
}

}  // namespace

Tensor cumavg(const Tensor& x, int axis, CumMode mode) {
  if (x.rank() != 4) fail("cumavg: expected a rank-4 grid, got " + shape_str(x.shape()));
  if (axis < 0 || axis > 2) fail("cumavg: axis must be a spatial axis (0..2)");
  const Shape shape = x.shape();
  const int64_t n = shape[static_cast<size_t>(axis)];
  const int64_t boundary = cum_boundary(n, mode);

  const auto& dx = x.data();
  std::vector<double> out(dx.size());
  for_each_line(shape, axis, [&](int64_t base, int64_t stride, int64_t len) {
    // prefix part: out[i] = mean(in[0..i]) for i < boundary
    double acc = 0.0;
    for (int64_t i = 0; i < boundary; ++i) {
      acc += dx[static_cast<size_t>(base + i * stride)];
      out[static_cast<size_t>(base + i * stride)] = acc / static_cast<double>(i + 1);
    }
    // suffix part: out[i] = mean(in[i..len-1]) for i >= boundary
    acc = 0.0;
    for (int64_t i = len - 1; i >= boundary; --i) {
      acc += dx[static_cast<size_t>(base + i * stride)];
      out[static_cast<size_t>(base + i * stride)] = acc / static_cast<double>(len - i);
    }
  });

  if (!x.on_tape()) return Tensor::constant(shape, std::move(out));
  const int nx = x.node();
  return x.tape()->record(
      shape, std::move(out), [nx, shape, axis, boundary](Tape& t, const std::vector<double>& g) {
        for_each_line(shape, axis, [&](int64_t base, int64_t stride, int64_t len) {
          // d in[i] = sum_{j >= i, j < boundary} g[j]/(j+1)   (prefix windows)
          double acc = 0.0;
          for (int64_t i = boundary - 1; i >= 0; --i) {
            acc += g[static_cast<size_t>(base + i * stride)] / static_cast<double>(i + 1);
            t.accumulate(nx, base + i * stride, acc);
          }
          // d in[i] = sum_{j <= i, j >= boundary} g[j]/(len-j) (suffix windows)
          acc = 0.0;
          for (int64_t i = boundary; i < len; ++i) {
            acc += g[static_cast<size_t>(base + i * stride)] / static_cast<double>(len - i);
            t.accumulate(nx, base + i * stride, acc);
          }
        });
      });
}

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

GradCheckReport grad_check(const ScalarFn& f, const std::vector<Tensor>& params, double h) {
  if (h < 1e-7 || h > 1e-3) fail("grad_check: step size must lie in [1e-7, 1e-3]");

  // analytic gradients
  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    std::vector<Tensor> leaves;
    leaves.reserve(params.size());
    for (const Tensor& p : params) leaves.push_back(tape.leaf(p));
    Tensor root = f(tape, leaves);
    if (!std::isfinite(root.value())) fail("grad_check: objective is non-finite at the base point");
    tape.backward(root);
    for (const Tensor& l : leaves) analytic.push_back(tape.grad(l));
  }

  // flatten (param, index) space
  std::vector<std::pair<int, int64_t>> entries;
  for (size_t p = 0; p < params.size(); ++p)
    for (int64_t i = 0; i < params[p].numel(); ++i)
      entries.emplace_back(static_cast<int>(p), i);

  std::vector<double> numeric(entries.size());
  std::vector<uint8_t> bad(entries.size(), 0);
  parallel_for(static_cast<int64_t>(entries.size()), [&](int64_t e) {
    const auto [p, i] = entries[static_cast<size_t>(e)];
    auto eval = [&](double delta) {
      Tape tape;
      std::vector<Tensor> leaves;
      leaves.reserve(params.size());
      for (size_t q = 0; q < params.size(); ++q) {
        std::vector<double> vals = params[q].data();
        if (static_cast<int>(q) == p) vals[static_cast<size_t>(i)] += delta;
        leaves.push_back(tape.leaf(params[q].shape(), std::move(vals)));
      }
      return f(tape, leaves).value();
    };
    const double fp = eval(h);
    const double fm = eval(-h);
    const double nd = (fp - fm) / (2.0 * h);
    numeric[static_cast<size_t>(e)] = nd;
    if (!std::isfinite(nd)) bad[static_cast<size_t>(e)] = 1;
  });

  GradCheckReport rep;
  for (size_t e = 0; e < entries.size(); ++e) {
    const auto [p, i] = entries[e];
    const double an = analytic[static_cast<size_t>(p)][static_cast<size_t>(i)];
    const double nu = numeric[e];
    if (bad[e] || !std::isfinite(an))
      throw std::runtime_error("grad_check: non-finite gradient for parameter " +
                               std::to_string(p) + " at index " + std::to_string(i));
    const double err = std::abs(an - nu) / std::max(1.0, std::abs(an));
    if (err > rep.max_rel_error) {
      rep.max_rel_error = err;
      rep.worst_param = p;
      rep.worst_index = i;
      rep.analytic = an;
      rep.numeric = nu;
    }
  }
  return rep;
}

}  // namespace scanssc::ad
