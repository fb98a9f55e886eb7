#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace leaf {

/// Raised when an operation produces a NaN or infinity. Non-finite values
/// are treated as a hard error state everywhere in the engine.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {
struct TensorData {
  int rows = 0;
  int cols = 0;
  std::vector<double> values;
  std::vector<double> grad;  // same length as values iff requires_grad
  bool requires_grad = false;
  std::int64_t tape_id = -1;  // node index on the current tape; -1 for leaves
};
}  // namespace detail

/// Dense 2-D array of float64 with row-major layout. Copies share storage
/// (shallow handle), which is what lets gradients written during the
/// backward sweep remain visible through every handle to the same data.
class Tensor {
 public:
  Tensor() : d_(std::make_shared<detail::TensorData>()) {}
  Tensor(int rows, int cols, double fill = 0.0);

  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);
  /// 1 x n row vector.
  static Tensor row(std::initializer_list<double> v);

  int rows() const { return d_->rows; }
  int cols() const { return d_->cols; }
  int size() const { return d_->rows * d_->cols; }

  double at(int r, int c) const { return d_->values[static_cast<std::size_t>(r) * d_->cols + c]; }
  double& at(int r, int c) { return d_->values[static_cast<std::size_t>(r) * d_->cols + c]; }

  std::span<double> values() { return d_->values; }
  std::span<const double> values() const { return d_->values; }

  bool requires_grad() const { return d_->requires_grad; }
  /// Enabling allocates a zeroed gradient buffer; disabling frees it.
  void set_requires_grad(bool on);

  std::span<double> grad();
  std::span<const double> grad() const;
  void zero_grad();

  std::int64_t tape_id() const { return d_->tape_id; }

  /// Deep copy of the values; the copy does not require grad.
  Tensor clone() const;

  /// True if both handles alias the same storage.
  bool same_storage(const Tensor& other) const { return d_ == other.d_; }

  const std::shared_ptr<detail::TensorData>& impl() const { return d_; }

 private:
  std::shared_ptr<detail::TensorData> d_;
};

/// Records the operations of one forward pass so they can be replayed in
/// reverse. Exactly one tape may be active per thread; ops record onto it
/// whenever any input requires grad. Construction activates, destruction
/// deactivates. Single-threaded by contract.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active() noexcept;

  std::size_t size() const noexcept { return nodes_.size(); }

  /// Low-level hook used by every op (including fused losses in other
  /// modules): marks `out` as requiring grad and appends a node whose
  /// `pull` accumulates d(loss)/d(parent) from d(loss)/d(out).
  void record(const Tensor& out, std::vector<Tensor> parents, std::function<void()> pull);

  /// Reverse sweep from a scalar loss. Each node is visited exactly once,
  /// in reverse recording order. A second sweep on the same tape throws.
  void run_backward(const Tensor& loss);

 private:
  struct Node {
    Tensor out;
    std::vector<Tensor> parents;
    std::function<void()> pull;
  };
  std::vector<Node> nodes_;
  bool swept_ = false;
};

/// Convenience wrapper over Tape::run_backward on the active tape.
void backward(const Tensor& loss);

// ---- primitive operations -------------------------------------------------
// Every op validates shapes, checks its output for non-finite values, and
// records itself on the active tape when any input requires grad.

Tensor matmul(const Tensor& a, const Tensor& b);

/// Elementwise; shapes must match exactly or one operand may be a 1 x c row
/// vector or r x 1 column vector broadcast against the other.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul_elementwise(const Tensor& a, const Tensor& b);

Tensor scalar_mul(const Tensor& x, double c);

Tensor relu(const Tensor& x);
Tensor exp(const Tensor& x);
/// Requires strictly positive input.
Tensor log(const Tensor& x);
/// log(1 + e^x), evaluated as max(x,0) + log1p(e^-|x|).
Tensor softplus(const Tensor& x);
inline Tensor log1p_exp(const Tensor& x) { return softplus(x); }

/// Row-wise softmax with max-shift; each output row sums to 1.
Tensor softmax_rows(const Tensor& x);

/// Keeps the k largest entries of each row and replaces the rest with the
/// most-negative finite double, so a following softmax maps them to exact
/// zeros. Ties break toward the lower column index. Gradient flows only
/// through the surviving entries.
Tensor topk_mask(const Tensor& x, int k);

Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);

Tensor concat_cols(const Tensor& a, const Tensor& b);
/// Columns [begin, end).
Tensor slice_cols(const Tensor& x, int begin, int end);

/// Max over coordinates of |analytic - central difference| / max(1, |cd|).
/// `f` must be deterministic and return a 1x1 tensor; it is evaluated under
/// a fresh tape for the analytic side and without a tape for the stencil.
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double step);

/// Throws NumericError naming `what` if any entry of `t` is NaN/Inf.
void check_finite(const Tensor& t, const char* what);

}  // namespace leaf
