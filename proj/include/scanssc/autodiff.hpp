#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <vector>

namespace scanssc::ad {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

class Tape;

// Dense tensor of 64-bit reals. Plain value type; when created through a
// Tape it additionally carries a node handle so gradients can flow to it.
// Data buffers are shared and treated as immutable once the tensor has
// been used as an operation input.
class Tensor {
 public:
  Tensor() = default;

  static Tensor constant(Shape shape, std::vector<double> data);
  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int64_t dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  int64_t numel() const;
  bool defined() const { return data_ != nullptr; }

  const std::vector<double>& data() const { return *data_; }
  // Only valid before the tensor participates in any operation.
  std::vector<double>& mutable_data() { return *data_; }

  // Value of a single-element tensor.
  double value() const;

  Tape* tape() const { return tape_; }
  int node() const { return node_; }
  bool on_tape() const { return tape_ != nullptr; }

  // Shared ownership of the value buffer (used by operation backwards).
  std::shared_ptr<const std::vector<double>> shared_data() const { return data_; }

  // Same values, no tape attachment.
  Tensor detached() const;

 private:
  friend class Tape;
  Shape shape_;
  std::shared_ptr<std::vector<double>> data_;
  Tape* tape_ = nullptr;
  int node_ = -1;
};

// Reverse-mode gradient tape. Operations append nodes in topological
// order (inputs always precede outputs); backward() walks the record once
// in reverse. Single-writer: a tape must not be shared across threads
// while recording.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Registers a differentiable input with the given values.
  Tensor leaf(Shape shape, std::vector<double> data);
  Tensor leaf(const Tensor& values);

  // Runs the reverse pass from a scalar root. Clears previous gradients.
  void backward(const Tensor& root);

  // Gradient of the last backward() root w.r.t. t (zeros if untouched).
  std::vector<double> grad(const Tensor& t) const;

  size_t size() const { return nodes_.size(); }

  // --- used by operation implementations ---
  using BackwardFn = std::function<void(Tape&, const std::vector<double>& out_grad)>;
  Tensor record(Shape shape, std::vector<double> data, BackwardFn backward);
  // Accumulation target for an input node id (< 0 means constant input: no-op).
  void accumulate(int node, int64_t index, double v);
  double* grad_buffer(int node);

 private:
  struct Node {
    int64_t size = 0;
    std::vector<double> grad;
    bool grad_alive = false;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Primitive operations. Inputs may live on a tape or be detached constants;
// any tape-borne inputs must share one tape. If no input is on a tape the
// result is a detached constant, so the same code serves inference.
// ---------------------------------------------------------------------------

// Elementwise with per-axis singleton broadcasting (equal ranks required).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor neg(const Tensor& a);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor relu(const Tensor& a);
Tensor log(const Tensor& a);

// Matrix product over the trailing two axes. Leading (batch) axes must
// match, or one operand may be rank-2 and is applied to every batch.
Tensor matmul(const Tensor& a, const Tensor& b);

// x[..., in] * w[in, out] + b[out]. Pass an undefined Tensor to skip bias.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

Tensor softmax(const Tensor& x, int axis);
Tensor log_softmax(const Tensor& x, int axis);

// Normalizes the trailing axis to zero mean / unit variance, then applies
// the affine pair. gamma/beta extents must equal the trailing extent.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double epsilon);

Tensor sum(const Tensor& x, int axis, bool keepdim = false);
Tensor mean(const Tensor& x, int axis, bool keepdim = false);
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);

Tensor concat(const std::vector<Tensor>& xs, int axis);
Tensor narrow(const Tensor& x, int axis, int64_t start, int64_t length);
Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<int>& perm);
Tensor reverse_axis(const Tensor& x, int axis);

// Writes -inf into blocked score slots. scores: [..., L, L]; blocked is a
// row-major L*L mask (nonzero = blocked). Gradient is zero through
// blocked slots and identity elsewhere.
Tensor masked_fill_blocked(const Tensor& scores, const std::vector<uint8_t>& blocked, int64_t L);

enum class PaddingMode { zero, reflect };

// 3-D convolution over a channels-last volume x:[X,Y,Z,Cin] with kernel
// w:[Cout,Cin,K,K,K] (odd K), stride 1, same-size output.
Tensor conv3d(const Tensor& x, const Tensor& w, const Tensor& b, PaddingMode padding);

// Adaptive average pooling of each spatial axis to ceil(extent/2).
Tensor avgpool_half(const Tensor& x);

// Trilinear resize of x:[X,Y,Z,C] to [dims[0],dims[1],dims[2],C] with
// sample points at cell centers (align-corners=false) and edge clamping.
Tensor resize_trilinear(const Tensor& x, const std::array<int64_t, 3>& out_dims);

// Axis-wise cumulative averaging over x:[d0,d1,d2,P], axis in {0,1,2}.
//   prefix    : out[i] = mean(in[0..i])
//   suffix    : out[i] = mean(in[i..n-1])
//   width_lo  : prefix for i < floor(n/2), suffix otherwise
//   width_hi  : prefix for i < ceil(n/2),  suffix otherwise
enum class CumMode { prefix, suffix, width_lo, width_hi };
Tensor cumavg(const Tensor& x, int axis, CumMode mode);

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

struct GradCheckReport {
  double max_rel_error = 0.0;
  int worst_param = -1;
  int64_t worst_index = -1;
  double analytic = 0.0;
  double numeric = 0.0;
};

// f must build a scalar from the given leaves on the given tape and be a
// deterministic pure function of their values. Central differences with
// step h are compared entry-by-entry against the tape gradient; the error
// metric is |analytic - numeric| / max(1, |analytic|). Throws if any value
// involved is non-finite, naming the parameter.
using ScalarFn = std::function<Tensor(Tape&, const std::vector<Tensor>&)>;
GradCheckReport grad_check(const ScalarFn& f, const std::vector<Tensor>& params, double h = 1e-5);

}  // namespace scanssc::ad
