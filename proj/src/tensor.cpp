#include "leaf/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace leaf {

namespace {

thread_local Tape* g_active_tape = nullptr;

std::string shape_str(const Tensor& t) {
  std::ostringstream os;
  os << t.rows() << "x" << t.cols();
  return os.str();
}

void require_nonempty(const Tensor& t, const char* op) {
  if (t.rows() < 1 || t.cols() < 1) {
    throw std::invalid_argument(std::string(op) + ": empty tensor " + shape_str(t));
  }
}

bool should_record(std::initializer_list<const Tensor*> ins) {
  if (g_active_tape == nullptr) return false;
  for (const Tensor* t : ins) {
    if (t->requires_grad()) return true;
  }
  return false;
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// C (m x n) = A (m x k) * B (k x n); accumulates when acc is true.
void mm_nn(int m, int n, int k, const double* a, const double* b, double* c, bool acc) {
  if (!acc) std::fill(c, c + static_cast<std::size_t>(m) * n, 0.0);
  for (int i = 0; i < m; ++i) {
    for (int p = 0; p < k; ++p) {
      const double av = a[static_cast<std::size_t>(i) * k + p];
      const double* brow = b + static_cast<std::size_t>(p) * n;
      double* crow = c + static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C (m x k) += A (m x n) * B^T, with B stored k x n.
void mm_nt_acc(int m, int k, int n, const double* a, const double* b, double* c) {
  for (int i = 0; i < m; ++i) {
    const double* arow = a + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < k; ++j) {
      const double* brow = b + static_cast<std::size_t>(j) * n;
      double s = 0.0;
      for (int p = 0; p < n; ++p) s += arow[p] * brow[p];
      c[static_cast<std::size_t>(i) * k + j] += s;
    }
  }
}

// C (k x n) += A^T * B, with A stored m x k and B stored m x n.
void mm_tn_acc(int k, int n, int m, const double* a, const double* b, double* c) {
  for (int p = 0; p < m; ++p) {
    const double* arow = a + static_cast<std::size_t>(p) * k;
    const double* brow = b + static_cast<std::size_t>(p) * n;
    for (int i = 0; i < k; ++i) {
      const double av = arow[i];
      double* crow = c + static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

enum class BinKind { add, sub, mul };

const char* bin_name(BinKind k) {
  switch (k) {
    case BinKind::add: return "add";
    case BinKind::sub: return "sub";
    default: return "mul_elementwise";
  }
}

// Shared implementation for add/sub/mul with row- or column-vector
// broadcast. Each operand dimension must equal the output's or be 1.
Tensor binary_op(const Tensor& a, const Tensor& b, BinKind kind) {
  const char* name = bin_name(kind);
  require_nonempty(a, name);
  require_nonempty(b, name);
  const int rows = std::max(a.rows(), b.rows());
  const int cols = std::max(a.cols(), b.cols());
  auto compatible = [](int dim, int out) { return dim == out || dim == 1; };
  if (!compatible(a.rows(), rows) || !compatible(a.cols(), cols) ||
      !compatible(b.rows(), rows) || !compatible(b.cols(), cols)) {
    throw std::invalid_argument(std::string(name) + ": incompatible shapes " + shape_str(a) +
                                " vs " + shape_str(b));
  }

  Tensor out(rows, cols);
  const auto av = a.values();
  const auto bv = b.values();
  auto ov = out.values();
  auto index = [](const Tensor& t, int r, int c) {
    return static_cast<std::size_t>(t.rows() == 1 ? 0 : r) * t.cols() + (t.cols() == 1 ? 0 : c);
  };
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const double x = av[index(a, r, c)];
      const double y = bv[index(b, r, c)];
      double v = 0.0;
      switch (kind) {
        case BinKind::add: v = x + y; break;
        case BinKind::sub: v = x - y; break;
        case BinKind::mul: v = x * y; break;
      }
      ov[static_cast<std::size_t>(r) * cols + c] = v;
    }
  }
  check_finite(out, name);

  if (should_record({&a, &b})) {
    Tensor pa = a, pb = b, po = out;
    g_active_tape->record(out, {a, b}, [pa, pb, po, kind, index]() mutable {
      const auto g = po.grad();
      const int rows = po.rows(), cols = po.cols();
      const bool wa = pa.requires_grad(), wb = pb.requires_grad();
      for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
          const double gv = g[static_cast<std::size_t>(r) * cols + c];
          if (wa) {
            double w = kind == BinKind::mul ? pb.values()[index(pb, r, c)] : 1.0;
            pa.grad()[index(pa, r, c)] += w * gv;
          }
          if (wb) {
            double w = kind == BinKind::mul   ? pa.values()[index(pa, r, c)]
                       : kind == BinKind::sub ? -1.0
                                              : 1.0;
            pb.grad()[index(pb, r, c)] += w * gv;
          }
        }
      }
    });
  }
  return out;
}

// Elementwise unary op with pointwise derivative computed from (x, y).
template <class Fwd, class Dydx>
Tensor unary_op(const Tensor& x, const char* name, Fwd fwd, Dydx dydx) {
  require_nonempty(x, name);
  Tensor out(x.rows(), x.cols());
  const auto xv = x.values();
  auto ov = out.values();
  for (int i = 0; i < x.size(); ++i) ov[i] = fwd(xv[i]);
  check_finite(out, name);

  if (should_record({&x})) {
    Tensor px = x, po = out;
    g_active_tape->record(out, {x}, [px, po, dydx]() mutable {
      const auto g = po.grad();
      auto gx = px.grad();
      const auto xv = px.values();
      const auto yv = po.values();
      for (int i = 0; i < px.size(); ++i) gx[i] += dydx(xv[i], yv[i]) * g[i];
    });
  }
  return out;
}

}  // namespace

// ---- Tensor ----------------------------------------------------------------

Tensor::Tensor(int rows, int cols, double fill) : d_(std::make_shared<detail::TensorData>()) {
  if (rows < 0 || cols < 0) throw std::invalid_argument("Tensor: negative dimension");
  d_->rows = rows;
  d_->cols = cols;
  d_->values.assign(static_cast<std::size_t>(rows) * cols, fill);
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const int r = static_cast<int>(rows.size());
  const int c = r == 0 ? 0 : static_cast<int>(rows.begin()->size());
  Tensor t(r, c);
  int i = 0;
  for (const auto& row : rows) {
    if (static_cast<int>(row.size()) != c) {
      throw std::invalid_argument("Tensor::from_rows: ragged rows");
    }
    int j = 0;
    for (double v : row) t.at(i, j++) = v;
    ++i;
  }
  return t;
}

Tensor Tensor::row(std::initializer_list<double> v) {
  Tensor t(1, static_cast<int>(v.size()));
  int j = 0;
  for (double x : v) t.at(0, j++) = x;
  return t;
}

void Tensor::set_requires_grad(bool on) {
  d_->requires_grad = on;
  if (on) {
    d_->grad.assign(d_->values.size(), 0.0);
  } else {
    d_->grad.clear();
    d_->grad.shrink_to_fit();
  }
}

std::span<double> Tensor::grad() {
  if (!d_->requires_grad) throw std::logic_error("Tensor::grad: tensor does not require grad");
  return d_->grad;
}

std::span<const double> Tensor::grad() const {
  if (!d_->requires_grad) throw std::logic_error("Tensor::grad: tensor does not require grad");
  return d_->grad;
}

void Tensor::zero_grad() {
  std::fill(d_->grad.begin(), d_->grad.end(), 0.0);
}

Tensor Tensor::clone() const {
  Tensor t(rows(), cols());
  std::copy(d_->values.begin(), d_->values.end(), t.d_->values.begin());
  return t;
}

void check_finite(const Tensor& t, const char* what) {
  const auto v = t.values();
  for (int i = 0; i < t.size(); ++i) {
    if (!std::isfinite(v[i])) {
      std::ostringstream os;
      os << what << ": non-finite value at (" << i / t.cols() << "," << i % t.cols() << ")";
      throw NumericError(os.str());
    }
  }
}

// ---- Tape ------------------------------------------------------------------

Tape::Tape() {
  if (g_active_tape != nullptr) {
    throw std::logic_error("Tape: another tape is already active on this thread");
  }
  g_active_tape = this;
}

Tape::~Tape() {
  g_active_tape = nullptr;
}

Tape* Tape::active() noexcept {
  return g_active_tape;
}

void Tape::record(const Tensor& out, std::vector<Tensor> parents, std::function<void()> pull) {
  out.impl()->requires_grad = true;
  out.impl()->grad.assign(out.impl()->values.size(), 0.0);
  out.impl()->tape_id = static_cast<std::int64_t>(nodes_.size());
  nodes_.push_back(Node{out, std::move(parents), std::move(pull)});
}

void Tape::run_backward(const Tensor& loss) {
  if (swept_) throw std::logic_error("backward: tape already swept; build a fresh tape");
  if (loss.size() != 1) {
    throw std::logic_error("backward: loss must be 1x1, got " + shape_str(loss));
  }
  swept_ = true;
  if (!loss.requires_grad()) return;  // loss is constant w.r.t. everything
  loss.impl()->grad[0] = 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    it->pull();
  }
}

void backward(const Tensor& loss) {
  if (g_active_tape == nullptr) throw std::logic_error("backward: no active tape");
  g_active_tape->run_backward(loss);
}

// ---- ops -------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_nonempty(a, "matmul");
  require_nonempty(b, "matmul");
  if (a.cols() != b.rows()) {
    throw std::invalid_argument("matmul: inner dimensions mismatch (" + shape_str(a) + " vs " +
                                shape_str(b) + ")");
  }
  const int m = a.rows(), k = a.cols(), n = b.cols();
  Tensor out(m, n);
  mm_nn(m, n, k, a.values().data(), b.values().data(), out.values().data(), false);
  check_finite(out, "matmul");

  if (should_record({&a, &b})) {
    Tensor pa = a, pb = b, po = out;
    g_active_tape->record(out, {a, b}, [pa, pb, po, m, n, k]() mutable {
      const double* g = po.grad().data();
      if (pa.requires_grad()) mm_nt_acc(m, k, n, g, pb.values().data(), pa.grad().data());
      if (pb.requires_grad()) mm_tn_acc(k, n, m, pa.values().data(), g, pb.grad().data());
    });
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinKind::add); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinKind::sub); }
Tensor mul_elementwise(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinKind::mul); }

Tensor scalar_mul(const Tensor& x, double c) {
  return unary_op(
      x, "scalar_mul", [c](double v) { return c * v; }, [c](double, double) { return c; });
}

Tensor relu(const Tensor& x) {
  return unary_op(
      x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor exp(const Tensor& x) {
  return unary_op(
      x, "exp", [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  require_nonempty(x, "log");
  for (double v : x.values()) {
    if (!(v > 0.0)) throw std::domain_error("log: input must be strictly positive");
  }
  return unary_op(
      x, "log", [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor softplus(const Tensor& x) {
  return unary_op(
      x, "softplus",
      [](double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); },
      [](double v, double) { return sigmoid(v); });
}

Tensor softmax_rows(const Tensor& x) {
  require_nonempty(x, "softmax_rows");
  const int rows = x.rows(), cols = x.cols();
  Tensor out(rows, cols);
  const auto xv = x.values();
  auto ov = out.values();
  for (int r = 0; r < rows; ++r) {
    const std::size_t off = static_cast<std::size_t>(r) * cols;
    double m = xv[off];
    for (int c = 1; c < cols; ++c) m = std::max(m, xv[off + c]);
    double s = 0.0;
    for (int c = 0; c < cols; ++c) {
      const double e = std::exp(xv[off + c] - m);
      ov[off + c] = e;
      s += e;
    }
    for (int c = 0; c < cols; ++c) ov[off + c] /= s;
  }
  check_finite(out, "softmax_rows");

  if (should_record({&x})) {
    Tensor px = x, po = out;
    g_active_tape->record(out, {x}, [px, po]() mutable {
      const auto g = po.grad();
      const auto y = po.values();
      auto gx = px.grad();
      const int rows = po.rows(), cols = po.cols();
      for (int r = 0; r < rows; ++r) {
        const std::size_t off = static_cast<std::size_t>(r) * cols;
        double dot = 0.0;
        for (int c = 0; c < cols; ++c) dot += g[off + c] * y[off + c];
        for (int c = 0; c < cols; ++c) gx[off + c] += y[off + c] * (g[off + c] - dot);
      }
    });
  }
  return out;
}

Tensor topk_mask(const Tensor& x, int k) {
  require_nonempty(x, "topk_mask");
  if (k < 1 || k > x.cols()) {
    throw std::invalid_argument("topk_mask: k=" + std::to_string(k) + " outside [1, " +
                                std::to_string(x.cols()) + "]");
  }
  const int rows = x.rows(), cols = x.cols();
  const double sentinel = std::numeric_limits<double>::lowest();
  Tensor out(rows, cols);
  auto keep = std::make_shared<std::vector<std::uint8_t>>(static_cast<std::size_t>(rows) * cols, 0);
  const auto xv = x.values();
  auto ov = out.values();
  std::vector<int> order(cols);
  for (int r = 0; r < rows; ++r) {
    const std::size_t off = static_cast<std::size_t>(r) * cols;
    std::iota(order.begin(), order.end(), 0);
    // stable sort keeps the lower column index first among equal values
    std::stable_sort(order.begin(), order.end(),
                     [&](int i, int j) { return xv[off + i] > xv[off + j]; });
    for (int c = 0; c < cols; ++c) ov[off + c] = sentinel;
    for (int i = 0; i < k; ++i) {
      const int c = order[i];
      ov[off + c] = xv[off + c];
      (*keep)[off + c] = 1;
    }
  }
  check_finite(out, "topk_mask");

  if (should_record({&x})) {
    Tensor px = x, po = out;
    g_active_tape->record(out, {x}, [px, po, keep]() mutable {
      const auto g = po.grad();
      auto gx = px.grad();
      for (int i = 0; i < px.size(); ++i) {
        if ((*keep)[i]) gx[i] += g[i];
      }
    });
  }
  return out;
}

Tensor sum_all(const Tensor& x) {
  require_nonempty(x, "sum_all");
  Tensor out(1, 1);
  double s = 0.0;
  for (double v : x.values()) s += v;
  out.values()[0] = s;
  check_finite(out, "sum_all");

  if (should_record({&x})) {
    Tensor px = x, po = out;
    g_active_tape->record(out, {x}, [px, po]() mutable {
      const double g = po.grad()[0];
      auto gx = px.grad();
      for (int i = 0; i < px.size(); ++i) gx[i] += g;
    });
  }
  return out;
}

Tensor mean_all(const Tensor& x) {
  require_nonempty(x, "mean_all");
  Tensor out(1, 1);
  double s = 0.0;
  for (double v : x.values()) s += v;
  out.values()[0] = s / x.size();
  check_finite(out, "mean_all");

  if (should_record({&x})) {
    Tensor px = x, po = out;
    g_active_tape->record(out, {x}, [px, po]() mutable {
      const double g = po.grad()[0] / px.size();
      auto gx = px.grad();
      for (int i = 0; i < px.size(); ++i) gx[i] += g;
    });
  }
  return out;
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  require_nonempty(a, "concat_cols");
  require_nonempty(b, "concat_cols");
  if (a.rows() != b.rows()) {
    throw std::invalid_argument("concat_cols: row mismatch (" + shape_str(a) + " vs " +
                                shape_str(b) + ")");
  }
  const int rows = a.rows(), ca = a.cols(), cb = b.cols();
  Tensor out(rows, ca + cb);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < ca; ++c) out.at(r, c) = a.at(r, c);
    for (int c = 0; c < cb; ++c) out.at(r, ca + c) = b.at(r, c);
  }
  check_finite(out, "concat_cols");

  if (should_record({&a, &b})) {
    Tensor pa = a, pb = b, po = out;
    g_active_tape->record(out, {a, b}, [pa, pb, po]() mutable {
      const auto g = po.grad();
      const int rows = po.rows(), ca = pa.cols(), cb = pb.cols();
      for (int r = 0; r < rows; ++r) {
        const std::size_t off = static_cast<std::size_t>(r) * (ca + cb);
        if (pa.requires_grad()) {
          for (int c = 0; c < ca; ++c) pa.grad()[static_cast<std::size_t>(r) * ca + c] += g[off + c];
        }
        if (pb.requires_grad()) {
          for (int c = 0; c < cb; ++c) pb.grad()[static_cast<std::size_t>(r) * cb + c] += g[off + ca + c];
        }
      }
    });
  }
  return out;
}

Tensor slice_cols(const Tensor& x, int begin, int end) {
  require_nonempty(x, "slice_cols");
  if (begin < 0 || end > x.cols() || begin >= end) {
    throw std::invalid_argument("slice_cols: bad range [" + std::to_string(begin) + ", " +
                                std::to_string(end) + ") for " + shape_str(x));
  }
  const int rows = x.rows(), width = end - begin;
  Tensor out(rows, width);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < width; ++c) out.at(r, c) = x.at(r, begin + c);
  }
  check_finite(out, "slice_cols");

  if (should_record({&x})) {
    Tensor px = x, po = out;
    g_active_tape->record(out, {x}, [px, po, begin]() mutable {
      const auto g = po.grad();
      auto gx = px.grad();
      const int rows = po.rows(), width = po.cols(), cols = px.cols();
      for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < width; ++c) {
          gx[static_cast<std::size_t>(r) * cols + begin + c] +=
              g[static_cast<std::size_t>(r) * width + c];
        }
      }
    });
  }
  return out;
}

// ---- grad_check ------------------------------------------------------------

namespace {
double scalar_value(const Tensor& t) {
  if (t.size() != 1) throw std::logic_error("grad_check: f must return a 1x1 tensor");
  return t.values()[0];
}
}  // namespace

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double step) {
  if (!(step > 0.0)) throw std::invalid_argument("grad_check: step must be positive");

  Tensor xg = x.clone();
  xg.set_requires_grad(true);
  {
    Tape tape;
    Tensor loss = f(xg);
    (void)scalar_value(loss);
    tape.run_backward(loss);
  }
  std::vector<double> analytic(xg.grad().begin(), xg.grad().end());

  Tensor xn = x.clone();
  double max_err = 0.0;
  for (int i = 0; i < xn.size(); ++i) {
    const double v = xn.values()[i];
    xn.values()[i] = v + step;
    const double fp = scalar_value(f(xn));
    xn.values()[i] = v - step;
    const double fm = scalar_value(f(xn));
    xn.values()[i] = v;
    const double cd = (fp - fm) / (2.0 * step);
    const double err = std::abs(analytic[i] - cd) / std::max(1.0, std::abs(cd));
    max_err = std::max(max_err, err);
  }
  return max_err;
}

}  // namespace leaf
